use exaq::lut::default_pack_width;
use exaq::{
    gen_gaussian_tensor, load_lut, load_tensor, save_lut, save_tensor, softmax_exaq, Bits, Error,
    LutBundle, QuantMode, QuantSpec, TensorF32,
};
use proptest::prelude::*;

#[test]
fn tensor_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for (rows, cols) in [(1, 7), (3, 1024), (16, 5)] {
        let t = gen_gaussian_tensor(rows, cols, -1.0, 2.0, 9).unwrap();
        let p = dir.path().join(format!("{rows}x{cols}.bin"));
        save_tensor(&t, &p).unwrap();
        assert_eq!(load_tensor(&p).unwrap(), t);
    }
}

#[test]
fn loaded_tables_give_identical_softmax() {
    let dir = tempfile::tempdir().unwrap();
    let t = gen_gaussian_tensor(8, 1023, 0.0, 1.7, 21).unwrap();
    for m in [2u8, 3, 4] {
        let bits = Bits::new(m).unwrap();
        let spec = QuantSpec::new(bits, -4.1, QuantMode::Exaq).unwrap();
        let fresh = LutBundle::build(spec, default_pack_width(bits)).unwrap();
        let p = dir.path().join(format!("m{m}.lut"));
        save_lut(&fresh, &p).unwrap();
        let loaded = load_lut(&p).unwrap();
        assert_eq!(loaded, fresh);
        for row in t.rows() {
            let a = softmax_exaq(row, &fresh.spec, &fresh.exp, &fresh.sum).unwrap();
            let b = softmax_exaq(row, &loaded.spec, &loaded.exp, &loaded.sum).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn damaged_files_are_reported() {
    let t = gen_gaussian_tensor(2, 4, 0.0, 1.0, 1).unwrap();
    let bytes = t.to_bytes();
    assert!(matches!(
        TensorF32::from_bytes(&bytes[..bytes.len() - 1]),
        Err(Error::Truncated { .. })
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        TensorF32::from_bytes(&bad),
        Err(Error::BadMagic { .. })
    ));
    let mut long = bytes.clone();
    long.push(0);
    assert!(TensorF32::from_bytes(&long).is_err());
    let mut nan = bytes;
    let n = nan.len();
    nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(
        TensorF32::from_bytes(&nan),
        Err(Error::NonFinite { .. })
    ));

    let spec = QuantSpec::new(Bits::new(2).unwrap(), -3.0, QuantMode::Naive).unwrap();
    let lut = LutBundle::build(spec, 4).unwrap().to_bytes();
    assert!(LutBundle::from_bytes(&lut[..lut.len() - 4]).is_err());
    assert!(LutBundle::from_bytes(&lut[1..]).is_err());
    assert!(load_lut("/nonexistent/exaq.lut").is_err());
}

proptest! {
    #[test]
    fn arbitrary_tensors_round_trip(
        rows in 1usize..6,
        cols in 1usize..40,
        seed in any::<u64>(),
    ) {
        let t = gen_gaussian_tensor(rows, cols, 0.0, 3.0, seed).unwrap();
        prop_assert_eq!(TensorF32::from_bytes(&t.to_bytes()).unwrap(), t);
    }
}
