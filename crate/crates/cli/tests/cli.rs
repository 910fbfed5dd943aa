use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use condscope::io::write_npy;
use condscope::Tensor;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/sparse1152.npy")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condscope")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim_end().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const TINY: &str = r#"{"n_classes": 3, "cond_dim": 8, "hidden_width": 8, "n_blocks": 1, "n_timesteps": 50,
"freq_dim": 16, "train_steps": 30, "batch": 16, "monitor_every": 10, "eval_batch": 32, "seed": 3}"#;

fn train_tiny(dir: &Path, config: &str) -> (PathBuf, PathBuf, Output) {
    let cfg = dir.join("toy.json");
    fs::write(&cfg, config).unwrap();
    let trace = dir.join("trace.csv");
    let ckpt = dir.join("ckpt");
    let o = run(&["train-toy", "--config", p(&cfg), "--trace", p(&trace), "--ckpt", p(&ckpt)]);
    (trace, ckpt, o)
}

#[test]
fn analyze_fixture_tail_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = run(&["analyze", p(&fixture()), "--tau", "0.01,0.02", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 1);
    let r = json(&out);
    let tail = r["tail_fraction"]["0.01"].as_f64().unwrap();
    assert_eq!((tail * 1e4).round() / 1e4, 0.3889);
    assert_eq!(r["head_count"]["0.01"], 704);
    assert_eq!(r["d"], 1152);
}

#[test]
fn analyze_orthonormal_rows_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let eye = dir.path().join("eye.npy");
    let mut data = vec![0.0; 16];
    for i in 0..4 {
        data[i * 5] = 1.0;
    }
    write_npy(&Tensor::from_f64(vec![4, 4], data.clone()).unwrap(), &eye).unwrap();
    let out = dir.path().join("r.json");
    let o = run(&["analyze", p(&eye), "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&out)["cosine"]["mean"].as_f64().unwrap(), 0.0);
    assert!(stdout(&o).contains("cosine_mean=0.0000"));

    data[5] = 0.0;
    let zero = dir.path().join("zero.npy");
    write_npy(&Tensor::from_f64(vec![4, 4], data).unwrap(), &zero).unwrap();
    let o = run(&["analyze", p(&zero), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 1"));
    assert!(stdout(&o).is_empty());

    assert_eq!(code(&run(&["analyze", p(&dir.path().join("missing.npy")), "--out", p(&out)])), 1);
    assert_eq!(code(&run(&["analyze", p(&eye), "--mode", "y+t", "--out", p(&out)])), 1);
    assert_eq!(code(&run(&["analyze", p(&eye), "--out", p(&out), "--bogus"])), 1);
}

#[test]
fn analyze_y_plus_t_broadcasts_timestep_row() {
    let dir = tempfile::tempdir().unwrap();
    let y = dir.path().join("y.npy");
    let t = dir.path().join("t.npy");
    write_npy(&Tensor::from_f64(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap(), &y).unwrap();
    write_npy(&Tensor::from_f64(vec![1, 3], vec![0.0, 0.0, 5.0]).unwrap(), &t).unwrap();
    let out = dir.path().join("r.json");
    let o = run(&["analyze", p(&y), "--timestep-emb", p(&t), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out);
    assert_eq!(r["kind"], "y+t");
    assert!((r["cosine"]["mean"].as_f64().unwrap() - 25.0 / 26.0).abs() < 1e-12);
    let o = run(&["analyze", p(&y), "--timestep-emb", p(&t), "--mode", "y", "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&out)["cosine"]["mean"].as_f64().unwrap(), 0.0);
}

#[test]
fn prune_count_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["prune", p(&fixture()), "--mode", "tail", "--tau", "0.01", "--count-only"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "448/1152 (38.89%)");

    let same = dir.path().join("same.npy");
    let o = run(&["prune", p(&fixture()), "--mode", "keep-top-k", "--k", "1152", "--out", p(&same)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&same).unwrap(), fs::read(fixture()).unwrap());

    let pruned = dir.path().join("pruned.npy");
    let o = run(&["prune", p(&fixture()), "--mode", "zero-top-k", "--k", "24", "--out", p(&pruned)]);
    assert_eq!(stdout(&o), "24/1152 (2.08%)");
    let v = condscope::io::read_npy(&pruned).unwrap().to_f64_vec();
    assert!(v.iter().all(|x| x.abs() < 1.0));

    let both = run(&["prune", p(&fixture()), "--mode", "tail", "--tau", "0.01", "--k", "3", "--count-only"]);
    assert_eq!(code(&both), 1);
    assert_eq!(code(&run(&["prune", p(&fixture()), "--mode", "tail", "--k", "3", "--count-only"])), 1);
    assert_eq!(code(&run(&["prune", p(&fixture()), "--mode", "keep-top-k", "--k", "2000", "--count-only"])), 2);
}

#[test]
fn train_rejects_unsupported_timesteps() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt, o) = train_tiny(dir.path(), r#"{"n_timesteps": 123}"#);
    assert_eq!(code(&o), 1);
    assert!(!ckpt.exists());
    let (_, _, o) = train_tiny(dir.path(), r#"{"n_timesteps": 200, "typo_field": 1}"#);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_and_sample_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (trace, ckpt, o) = train_tiny(dir.path(), TINY);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 1);
    let csv = fs::read_to_string(&trace).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "step,loss,cosine,npr");
    assert_eq!(csv.lines().count(), 1 + 4);

    let again = dir.path().join("again");
    fs::create_dir(&again).unwrap();
    let (trace2, ckpt2, _) = train_tiny(&again, TINY);
    assert_eq!(fs::read(&trace).unwrap(), fs::read(&trace2).unwrap());
    for e in fs::read_dir(&ckpt).unwrap() {
        let name = e.unwrap().file_name();
        assert_eq!(fs::read(ckpt.join(&name)).unwrap(), fs::read(ckpt2.join(&name)).unwrap(), "{name:?}");
    }

    let samples = dir.path().join("s.npy");
    let eval = dir.path().join("e.json");
    let base = run(&["sample", "--ckpt", p(&ckpt), "--per-class", "8", "--out", p(&samples), "--eval", p(&eval)]);
    assert_eq!(code(&base), 0, "{}", String::from_utf8_lossy(&base.stderr));
    let e = json(&eval);
    assert!(e["prune"].is_null());
    assert_eq!(e["eval"]["n_samples"], 24);
    assert_eq!(condscope::io::read_npy(&samples).unwrap().shape(), &[24, 2]);

    let args = |s: &Path, e: &Path| {
        run(&[
            "sample", "--ckpt", p(&ckpt), "--per-class", "8", "--prune", "tail:AUTO40", "--schedule", "lastk:5", "--out", p(s), "--eval", p(e),
        ])
    };
    let o = args(&samples, &eval);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let e = json(&eval);
    assert_eq!(e["auto_fraction"].as_f64().unwrap(), 0.4);
    assert_eq!(e["prune"]["mode"], "tail");
    assert!(e["prune"]["tau"].as_f64().unwrap() > 0.0);
    assert_eq!(e["schedule"]["k_steps"], 5);
    assert_eq!(e["removed_at_first_step"]["removed"], 3);
    assert!(stdout(&o).contains("tau="));

    let (s2, e2) = (dir.path().join("s2.npy"), dir.path().join("e2.json"));
    args(&s2, &e2);
    assert_eq!(fs::read(&samples).unwrap(), fs::read(&s2).unwrap());
    assert_eq!(fs::read(&eval).unwrap(), fs::read(&e2).unwrap());

    let bad = |extra: &[&str]| {
        let mut a = vec!["sample", "--ckpt", p(&ckpt), "--out", p(&s2), "--eval", p(&e2)];
        a.extend_from_slice(extra);
        code(&run(&a))
    };
    assert_eq!(bad(&["--prune", "tail:0.01", "--schedule", "lastk:0"]), 1);
    assert_eq!(bad(&["--schedule", "every"]), 1);
    assert_eq!(bad(&["--prune", "head:AUTO40"]), 1);
    assert_eq!(bad(&["--prune", "keep-top-k:9"]), 2);
}

#[test]
fn sampling_an_untrained_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt, o) = train_tiny(dir.path(), &TINY.replace("\"train_steps\": 30", "\"train_steps\": 0"));
    assert_eq!(code(&o), 0);
    let o = run(&[
        "sample", "--ckpt", p(&ckpt), "--per-class", "4", "--out", p(&dir.path().join("s.npy")), "--eval", p(&dir.path().join("e.json")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("untrained"));
}

#[test]
fn bench_sparse_json_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.json");
    let o = run(&["bench-sparse", "--d", "64", "--iters", "100", "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    let r = json(&out);
    assert_eq!(r["checksum_dense"], r["checksum_sparse"]);
    assert_eq!(r["out_dim"], 128);
    assert_eq!(r["threads"], 1);

    let csv = dir.path().join("sweep.csv");
    let o = run(&["bench-sparse", "--d", "64", "--iters", "100", "--sparsity", "0.5,0.9,0.99", "--out", p(&csv)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1 + 3);

    assert_eq!(code(&run(&["bench-sparse", "--sparsity", "1.0", "--out", p(&out)])), 1);
    assert_eq!(code(&run(&["bench-sparse", "--iters", "10", "--out", p(&out)])), 1);
}
