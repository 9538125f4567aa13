use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tabimpute::data::{correlated_gaussian, read_table, write_csv};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tabimpute"))
}

fn run(args: &[&str]) -> Output {
    bin().arg("-q").args(args).output().expect("spawn")
}

fn ok(args: &[&str]) {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn code(args: &[&str]) -> (i32, String) {
    let o = run(args);
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 300 correlated rows with a regression target.
fn fixture(dir: &Path) -> PathBuf {
    let x = correlated_gaussian(300, 0.9, 5).unwrap();
    let y = tabimpute::Tensor::from_fn(&[300, 3], |i| {
        let (r, c) = (i / 3, i % 3);
        if c < 2 {
            x.at(r, c) * 3.0 + 10.0
        } else {
            x.at(r, 0) - x.at(r, 1)
        }
    });
    let path = dir.join("data.csv");
    write_csv(&path, &[], &["a".into(), "b".into(), "y".into()], &y, None).unwrap();
    path
}

const TINY: [&str; 12] = [
    "--target", "y", "--epochs", "2", "--batch-size", "32", "--T", "40", "--hidden", "8", "--blocks", "1",
];

fn trained(dir: &Path, data: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["train", "--data", s(data), "--out", s(&out)];
    args.extend(TINY);
    if !extra.contains(&"--seed") {
        args.extend(["--seed", "3"]);
    }
    args.extend(extra);
    ok(&args);
    out.join("model.ckpt")
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let (c, err) = code(&["train", "--data", s(&missing), "--out", s(dir.path())]);
    assert_eq!(c, 2);
    assert!(err.contains("nope.csv"), "{err}");
    let (c, _) = code(&["train", "--bogus"]);
    assert_eq!(c, 2);
}

#[test]
fn train_is_reproducible_and_writes_headers() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let a = trained(dir.path(), &data, "a", &["--checkpoint-every", "1"]);
    let b = trained(dir.path(), &data, "b", &["--checkpoint-every", "1"]);
    assert_eq!(read(&a), read(&b));
    for f in ["loss.csv", "epoch-1.ckpt", "epoch-2.ckpt"] {
        assert_eq!(read(&dir.path().join("a").join(f)), read(&dir.path().join("b").join(f)), "{f}");
    }
    // The resolved config records the output directory; the hash leaves it out.
    assert_eq!(lines(&dir.path().join("a/train.conf"))[0], lines(&dir.path().join("b/train.conf"))[0]);
    let loss = String::from_utf8(read(&dir.path().join("a/loss.csv"))).unwrap();
    assert!(loss.starts_with("# tabimpute "), "{loss}");
    assert_eq!(loss.lines().count(), 4);
    let ck = String::from_utf8_lossy(&read(&a)).into_owned();
    assert!(ck.contains("comment = tabimpute "));
    let c = trained(dir.path(), &data, "c", &["--seed", "4"]);
    assert_ne!(read(&a), read(&c));
}

#[test]
fn impute_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let ck = trained(dir.path(), &data, "m", &[]);
    let out1 = dir.path().join("o1.csv");
    let out2 = dir.path().join("sub/o2.csv");
    std::fs::create_dir_all(out2.parent().unwrap()).unwrap();
    let args = |out: &Path| {
        vec![
            "impute".to_string(),
            "--checkpoint".into(),
            s(&ck).into(),
            "--data".into(),
            s(&data).into(),
            "--mcar".into(),
            "0.3".into(),
            "--seed".into(),
            "1".into(),
            "--t-sampling".into(),
            "20".into(),
            "--n-inferences".into(),
            "2".into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let a1 = args(&out1);
    ok(&a1.iter().map(String::as_str).collect::<Vec<_>>());
    let a2 = args(&out2);
    ok(&a2.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(read(&out1), read(&out2));

    let input = read_table(&data).unwrap();
    let output = read_table(&out1).unwrap();
    assert_eq!(output.names, vec!["a", "b"]);
    let mask = tabimpute::Mask::read_csv(&dir.path().join("o1.csv.mask.csv")).unwrap();
    assert!(mask.n_missing() > 0);
    for r in 0..output.rows {
        for c in 0..2 {
            let v = output.cells[r * 2 + c].expect("every cell filled");
            if mask.is_known(r, c) {
                assert_eq!(v, input.cells[r * 3 + c].unwrap());
            }
        }
    }

    let mut bad = a1.clone();
    bad.extend(["--tau".to_string(), "0".to_string()]);
    let (c, err) = code(&bad.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(c, 2, "{err}");
    let mut both = a1.clone();
    both.extend(["--mar".to_string(), "1".to_string()]);
    assert_eq!(code(&both.iter().map(String::as_str).collect::<Vec<_>>()).0, 2);
    let mut fast = a1.clone();
    fast.extend(["--tau".to_string(), "5".to_string()]);
    let o = bin().args(fast.iter().map(String::as_str)).output().unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("ratio"));
}

#[test]
fn impute_rejects_mismatched_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let ck = trained(dir.path(), &data, "m", &[]);
    let other = dir.path().join("other.csv");
    std::fs::write(&other, "a,c\n1,2\n3,\n").unwrap();
    let out = dir.path().join("o.csv");
    let (c, err) = code(&["impute", "--checkpoint", s(&ck), "--data", s(&other), "--out", s(&out)]);
    assert_eq!(c, 2);
    assert!(err.contains("\"b\""), "{err}");
}

fn lines(p: &Path) -> Vec<String> {
    String::from_utf8(read(p)).unwrap().lines().map(String::from).collect()
}

#[test]
fn baseline_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let run_in = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        ok(&[
            "benchmark", "--data", s(&data), "--target", "y", "--grid", "mcar=10..30 mar=1", "--n-mask-seeds", "2",
            "--jobs", jobs, "--out-dir", s(&out),
        ]);
        out
    };
    let a = run_in("a", "1");
    let b = run_in("b", "3");
    for f in ["rows.csv", "mse.csv", "mse.txt", "ranks_mcar.csv", "ranks_mar.csv", "downstream.csv", "benchmark.conf"] {
        if f == "benchmark.conf" {
            assert_eq!(lines(&a.join(f))[0], lines(&b.join(f))[0]);
        } else {
            assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
        }
        assert!(lines(&a.join(f))[0].starts_with("# tabimpute "), "{f}");
    }
    let mse = lines(&a.join("mse.csv"));
    assert_eq!(mse[1], "method,mcar=0.1,mcar=0.2,mcar=0.3,mar=1");
    assert_eq!(mse.len(), 2 + 7);
    let ranks = lines(&a.join("ranks_mcar.csv"));
    assert_eq!(ranks[1], "method,Mean,Std");
    assert_eq!(ranks.len(), 2 + 7);
    assert_eq!(lines(&a.join("rows.csv")).len(), 2 + 7 * 4 * 2 - 2);
    assert!(mse.iter().any(|l| l.starts_with("nocb,") && l.ends_with(",/")), "{mse:?}");
    assert_eq!(lines(&a.join("ranks_mar.csv")).len(), 2 + 6);
    assert_eq!(lines(&a.join("downstream.csv"))[1], "method,rmse");

    let out = dir.path().join("c");
    let (c, err) = code(&["benchmark", "--data", s(&data), "--methods", "mean,mlp", "--out-dir", s(&out)]);
    assert_eq!(c, 2);
    assert!(err.contains("no checkpoint"), "{err}");
}

#[test]
fn benchmark_and_ablate_with_models() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let ck = trained(dir.path(), &data, "m", &[]);
    let plain = trained(dir.path(), &data, "n", &["--no-time-tokenizer"]);
    let out = dir.path().join("bench");
    ok(&[
        "benchmark", "--data", s(&data), "--target", "y", "--grid", "mcar=0.3", "--n-mask-seeds", "1", "--methods",
        "mean,mlp", "--checkpoint", s(&ck), "--t-sampling", "20", "--n-inferences", "1", "--original-scale",
        "--out-dir", s(&out),
    ]);
    let mse = lines(&out.join("mse.csv"));
    assert_eq!(mse.len(), 4);
    assert!(mse[3].starts_with("mlp,"));

    let ablate = |preset: &str, ckpts: &[&Path], name: &str| {
        let out = dir.path().join(name);
        let mut args = vec![
            "ablate", "--preset", preset, "--data", s(&data), "--target", "y", "--t-sampling", "20", "--taus",
            "2,4,5,10,15,20", "--n-mask-seeds", "1", "--n-inferences", "1", "--jump-n-sample", "2", "--out-dir",
        ];
        args.push(s(&out));
        for c in ckpts {
            args.extend(["--checkpoint", s(c)]);
        }
        (code(&args), out)
    };
    let ((c, err), out) = ablate("tau-sweep", &[&ck], "tau");
    assert_eq!(c, 0, "{err}");
    let t = lines(&out.join("tau-sweep.csv"));
    assert_eq!(t[1], "setting,mlp");
    assert_eq!(t.len(), 2 + 6);
    assert!(t[2].starts_with("tau=2,"));
    let ((c, _), _) = ablate("no-tst", &[&ck], "bad");
    assert_eq!(c, 2);
    let mlp_plain = format!("plain={}", s(&plain));
    let ((c, err), out) = ablate("no-tst", &[&ck, Path::new(&mlp_plain)], "notst");
    assert_eq!(c, 0, "{err}");
    let t = lines(&out.join("no-tst.csv"));
    assert_eq!(t[1], "setting,mlp");
    assert_eq!(t.len(), 4);
    assert!(!t[2].contains('/') && !t[3].contains('/'), "{t:?}");
    let ((c, err), out) = ablate("harmonization", &[&ck], "harm");
    assert_eq!(c, 0, "{err}");
    assert_eq!(lines(&out.join("harmonization.csv")).len(), 4);
}

#[test]
fn config_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "[train]\nepochs = 1\nhidden = 4\nblocks = 1\nt_training = 30\ntarget = y\n[impute]\ntau = 3\n").unwrap();
    let out = dir.path().join("t");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--epochs", "2", "--out", s(&out)]);
    let resolved = String::from_utf8(read(&out.join("train.conf"))).unwrap();
    assert!(resolved.contains("\nepochs = 2\n") && resolved.contains("\nhidden = 4\n"), "{resolved}");
    assert_eq!(lines(&out.join("loss.csv")).len(), 4);

    let out2 = dir.path().join("t2");
    ok(&["train", "--config", s(&out.join("train.conf")), "--out", s(&out2)]);
    assert_eq!(read(&out.join("model.ckpt")), read(&out2.join("model.ckpt")));

    std::fs::write(&cfg, "[train]\nepoch = 1\n").unwrap();
    let (c, err) = code(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(c, 2);
    assert!(err.contains("epoch"), "{err}");
}

#[test]
fn divergence_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let out = dir.path().join("d");
    let (c, err) = code(&[
        "train", "--data", s(&data), "--target", "y", "--epochs", "3", "--T", "20", "--lr", "1e30", "--out", s(&out),
    ]);
    assert_eq!(c, 3, "{err}");
}
