use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn exaq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exaq"))
        .args(args)
        .env_remove("EXAQ_SEED")
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn keys(v: &Value) -> Vec<&str> {
    let mut k: Vec<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
    k.sort();
    k
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn make_dir(dir: &Path, n: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for s in 0..n {
        let out = dir.join(format!("t{s}.bin"));
        let o = exaq(&[
            "gen-tensor",
            "--rows",
            "4",
            "--cols",
            "1024",
            "--sigma",
            "1.5",
            "--seed",
            &s.to_string(),
            "--out",
            p(&out),
        ]);
        assert!(o.status.success());
    }
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let data = t.join("data");
    make_dir(&data, 3);

    let stats = json(&exaq(&[
        "calibrate",
        "--input-dir",
        p(&data),
        "--out",
        p(&t.join("stats.json")),
        "--histogram",
        p(&t.join("hist.csv")),
        "--bins",
        "5",
    ]));
    assert_eq!(keys(&stats), ["min_avg", "mu", "n_tensors", "sigma"]);
    assert_eq!(stats["n_tensors"], 3);
    let hist = std::fs::read_to_string(t.join("hist.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some("sigma_lo,sigma_hi,count"));
    assert_eq!(hist.lines().count(), 6);

    let lut = json(&exaq(&[
        "build-lut",
        "--stats",
        p(&t.join("stats.json")),
        "--bits",
        "2",
        "--out",
        p(&t.join("e.lut")),
    ]));
    assert_eq!(
        keys(&lut),
        [
            "bits",
            "clip",
            "delta",
            "exp_entries",
            "levels",
            "mode",
            "pack",
            "sigma",
            "sigma_in_model_range",
            "sum_entries"
        ]
    );
    assert_eq!(lut["exp_entries"], 4);
    assert_eq!(lut["sum_entries"], 256);
    assert_eq!(lut["mode"], "exaq");
    json(&exaq(&[
        "build-lut",
        "--stats",
        p(&t.join("stats.json")),
        "--bits",
        "2",
        "--mode",
        "naive",
        "--out",
        p(&t.join("n.lut")),
    ]));

    let sm = json(&exaq(&[
        "softmax",
        "--input",
        p(&data.join("t0.bin")),
        "--lut",
        p(&t.join("e.lut")),
        "--out",
        p(&t.join("o.bin")),
    ]));
    assert_eq!(sm["accum_iters"], 256);
    assert_eq!(sm["lut_lookups"], 1024 + 256);
    assert_eq!(sm["exp_calls"], 0);
    assert!(sm["max_abs_sum_error"].as_f64().unwrap() <= 1e-6);
    let probs = exaq::load_tensor(t.join("o.bin")).unwrap();
    assert_eq!(probs.dims(), [4, 1024]);

    let naive_as_exaq = exaq(&[
        "softmax",
        "--input",
        p(&data.join("t0.bin")),
        "--lut",
        p(&t.join("n.lut")),
        "--out",
        p(&t.join("x.bin")),
    ]);
    assert_eq!(naive_as_exaq.status.code(), Some(1));

    let report = json(&exaq(&[
        "mse-report",
        "--input-dir",
        p(&data),
        "--exaq-lut",
        p(&t.join("e.lut")),
        "--naive-lut",
        p(&t.join("n.lut")),
        "--csv",
        p(&t.join("mse.csv")),
    ]));
    assert_eq!(report["files"], 3);
    let csv = std::fs::read_to_string(t.join("mse.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("file,rows,cols,exp_mse_exaq,exp_mse_naive,out_mse_exaq,out_mse_naive")
    );
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn reference_and_oracle_kernels_run() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let input = t.join("t.bin");
    exaq(&[
        "gen-tensor",
        "--rows",
        "2",
        "--cols",
        "9",
        "--seed",
        "1",
        "--out",
        p(&input),
    ]);
    let r = json(&exaq(&[
        "softmax",
        "--kernel",
        "reference",
        "--input",
        p(&input),
        "--out",
        p(&t.join("r.bin")),
    ]));
    assert_eq!(r["accum_iters"], 9);
    assert_eq!(r["exp_calls"], 9);
    let missing = exaq(&[
        "softmax",
        "--kernel",
        "scalar-oracle",
        "--input",
        p(&input),
        "--out",
        p(&t.join("s.bin")),
    ]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn solve_and_fit_report() {
    let s = json(&exaq(&["solve", "--sigma", "1", "--bits", "2"]));
    assert_eq!(
        keys(&s),
        [
            "c_star",
            "grid_hi",
            "grid_lo",
            "method",
            "mse_at_min",
            "neighbors",
            "unimodal"
        ]
    );
    assert!(s["c_star"].as_f64().unwrap() < 0.0);
    let checked = json(&exaq(&[
        "solve", "--sigma", "2", "--mu", "-1", "--bits", "3", "--check",
    ]));
    assert!(checked["check"]["codec_quant"].is_number());
    let tmp = tempfile::tempdir().unwrap();
    let model_path = tmp.path().join("m.json");
    let m = json(&exaq(&[
        "fit",
        "--bits",
        "4",
        "--points",
        "8",
        "--out",
        p(&model_path),
    ]));
    assert_eq!(
        keys(&m),
        [
            "bits",
            "intercept",
            "residual_max",
            "sigma_hi",
            "sigma_lo",
            "slope"
        ]
    );
    assert!(model_path.exists());
}

#[test]
fn simulate_is_deterministic_and_honours_env_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("s.csv");
    let args = [
        "simulate",
        "--sigma",
        "1",
        "--bits",
        "2",
        "--paper-parity",
        "--seed",
        "5",
        "--csv",
        p(&csv),
    ];
    let a = exaq(&args);
    let b = exaq(&args);
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    assert_eq!(v["samples"], 1000);
    assert_eq!(
        keys(&v),
        [
            "bits",
            "c_analytic",
            "c_empirical",
            "gap",
            "grid_points",
            "mu",
            "samples",
            "seed",
            "sigma"
        ]
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("c,analytic_mse,empirical_mse"));

    let env = Command::new(env!("CARGO_BIN_EXE_exaq"))
        .args(["simulate", "--sigma", "1", "--bits", "2", "--paper-parity"])
        .env("EXAQ_SEED", "5")
        .output()
        .unwrap();
    assert_eq!(env.stdout, a.stdout);
}

#[test]
fn threads_do_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let input = t.join("t.bin");
    exaq(&[
        "gen-tensor",
        "--rows",
        "32",
        "--cols",
        "257",
        "--seed",
        "3",
        "--out",
        p(&input),
    ]);
    let o1 = t.join("1.bin");
    let o4 = t.join("4.bin");
    exaq(&[
        "softmax",
        "--kernel",
        "reference",
        "--input",
        p(&input),
        "--out",
        p(&o1),
    ]);
    exaq(&[
        "--threads",
        "4",
        "softmax",
        "--kernel",
        "reference",
        "--input",
        p(&input),
        "--out",
        p(&o4),
    ]);
    assert_eq!(std::fs::read(o1).unwrap(), std::fs::read(o4).unwrap());
}

#[test]
fn bad_arguments_fail() {
    assert_eq!(
        exaq(&["fit", "--bits", "2", "--points", "7"]).status.code(),
        Some(2)
    );
    assert_eq!(exaq(&["bench", "--reps", "1"]).status.code(), Some(2));
    assert_eq!(
        exaq(&["simulate", "--sigma", "1", "--bits", "2", "--samples", "0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        exaq(&["solve", "--sigma", "1", "--bits", "5"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        exaq(&["solve", "--sigma", "0", "--bits", "2"])
            .status
            .code(),
        Some(1)
    );
    let empty = tempfile::tempdir().unwrap();
    let out = empty.path().join("s.json");
    assert_eq!(
        exaq(&[
            "calibrate",
            "--input-dir",
            p(empty.path()),
            "--out",
            p(&out)
        ])
        .status
        .code(),
        Some(1)
    );
    let stats = empty.path().join("stats.json");
    std::fs::write(
        &stats,
        r#"{"sigma":1.0,"mu":-3.0,"min_avg":-6.0,"n_tensors":1}"#,
    )
    .unwrap();
    let too_wide = exaq(&[
        "build-lut",
        "--stats",
        p(&stats),
        "--bits",
        "4",
        "--pack",
        "4",
        "--out",
        p(&out),
    ]);
    assert_eq!(too_wide.status.code(), Some(1));
}

#[test]
fn small_bench_reports_summary() {
    let v = json(&exaq(&[
        "bench", "--rows", "8", "--cols", "256", "--reps", "3", "--warmup", "0",
    ]));
    assert_eq!(
        keys(&v),
        [
            "accum_iters_ratio",
            "exaq",
            "reference",
            "reported_accelerator_reduction",
            "runtime_reduction",
            "speedup"
        ]
    );
    assert_eq!(v["accum_iters_ratio"], 4.0);
    assert_eq!(v["exaq"]["accum_iters"], 64);
}
