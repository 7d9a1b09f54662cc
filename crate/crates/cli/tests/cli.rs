use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rejection_filter::classify::idx::{encode_images, encode_labels, IdxImages};
use tempfile::TempDir;

fn rfilter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfilter")).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

fn manifest(path: &Path) -> serde_json::Value {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    serde_json::from_str(&fs::read_to_string(PathBuf::from(name)).unwrap()).unwrap()
}

#[test]
fn minimal_freq_track() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.csv");
    let res = rfilter(&["freq-track", "--updates", "1", "--attempts", "1", "--seed", "0", "--out", path_str(&out)]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("trial,k,x_minus,t,outcome,n_accepted,mean,trace_cov,truth,loss"));
    assert_eq!(lines.count(), 1);

    let m = manifest(&out);
    assert_eq!(m["subcommand"], "freq-track");
    assert_eq!(m["seed"], 0);
    assert_eq!(m["params"]["updates"], 1);
    assert_eq!(m["params"]["attempts"], 1);
    for key in ["recovery", "kappa", "eta", "step_sigma", "trials", "out"] {
        assert!(m["params"].get(key).is_some(), "manifest lacks {key}");
    }
    assert!(m["version"].is_string());
    assert!(m["duration_seconds"].is_number());
}

#[test]
fn same_seed_same_bytes() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    let args = |out: &Path| {
        vec!["freq-track", "--updates", "30", "--trials", "4", "--seed", "9", "--out"]
            .into_iter()
            .map(str::to_owned)
            .chain([path_str(out).to_owned()])
            .collect::<Vec<_>>()
    };
    for out in [&a, &b] {
        let argv = args(out);
        let res = rfilter(&argv.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(res.status.success());
    }
    let single = Command::new(env!("CARGO_BIN_EXE_rfilter")).args(args(&c)).env("RF_THREADS", "1").output().unwrap();
    assert!(single.status.success());
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert_eq!(bytes, fs::read(&c).unwrap());
    assert_eq!(rows(&a).len(), 120);
}

#[test]
fn argument_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("k.csv");
    let res = rfilter(&["kappa-sweep", "--kappas", "0", "--out", path_str(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("kappa"));
    assert!(!out.exists());

    assert_eq!(rfilter(&["kappa-sweep", "--kappas", "1.5", "--out", path_str(&out)]).status.code(), Some(2));
    assert_eq!(rfilter(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(rfilter(&["freq-track", "--bogus", "--out", path_str(&out)]).status.code(), Some(2));
    assert_eq!(rfilter(&["freq-track"]).status.code(), Some(2));
    assert_eq!(rfilter(&["freq-track", "--updates", "0", "--out", path_str(&out)]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing");
    let pair = format!("{0},{0}", path_str(&missing));
    let out = dir.path().join("c.csv");
    let res = rfilter(&["classify", "--train", &pair, "--test", &pair, "--out", path_str(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));

    let res = Command::new(env!("CARGO_BIN_EXE_rfilter"))
        .args(["model-select", "--updates", "2", "--out", path_str(&out)])
        .env("RF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn kappa_sweep_rows() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("k.csv");
    let res = rfilter(&[
        "kappa-sweep",
        "--kappas",
        "1,0.1",
        "--measurements",
        "20",
        "--trials",
        "10",
        "--out",
        path_str(&out),
    ]);
    assert!(res.status.success());
    let r = rows(&out);
    assert_eq!(r.len(), 2);
    assert_eq!(r[0][0], "1");
    assert_eq!(r[1][0], "0.1");
    for row in &r {
        let initial: f64 = row[1].parse().unwrap();
        let last: f64 = row[2].parse().unwrap();
        let normalized: f64 = row[3].parse().unwrap();
        assert!((normalized - last / initial).abs() <= 1e-12 * normalized.abs().max(1e-300));
    }
    assert_eq!(manifest(&out)["params"]["kappas"], serde_json::json!([1.0, 0.1]));
}

#[test]
fn model_select_rows() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("m.csv");
    assert!(rfilter(&["model-select", "--updates", "25", "--seed", "4", "--out", path_str(&out)]).status.success());
    let r = rows(&out);
    assert_eq!(r.len(), 25);
    for (i, row) in r.iter().enumerate() {
        assert_eq!(row[0], (i + 1).to_string());
        let la: f64 = row[1].parse().unwrap();
        let lb: f64 = row[2].parse().unwrap();
        let k: f64 = row[3].parse().unwrap();
        assert!(la.is_finite() && lb.is_finite());
        assert!((k - (la - lb).exp()).abs() <= 1e-12 * k);
    }
}

#[test]
fn batch_bench_table() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("b.csv");
    let res =
        rfilter(&["batch-bench", "--attempts", "5000", "--n-batch", "1,2,8", "--dim", "3", "--out", path_str(&out)]);
    assert!(res.status.success());
    let r = rows(&out);
    assert_eq!(r.len(), 3);
    let bytes: Vec<u64> = r.iter().map(|row| row[2].parse().unwrap()).collect();
    assert_eq!(bytes[1], 2 * bytes[0]);
    assert_eq!(bytes[2], 8 * bytes[0]);
    assert_eq!(r[0][4].parse::<f64>().unwrap(), 0.0);
    for row in &r {
        assert!(row[4].parse::<f64>().unwrap() <= 1e-9);
    }
}

/// Two 28×28 digit classes: zeros light the left half, ones the right half.
fn write_digits(dir: &Path, name: &str, n: usize) -> String {
    let mut pixels = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = (i % 2) as u8;
        for p in 0..784 {
            let col = p % 28;
            let lit = if digit == 0 { col < 14 } else { col >= 14 };
            let jitter = ((i * 31 + p * 7) % 40) as u8;
            pixels.push(if lit { 200 + jitter } else { jitter });
        }
        labels.push(digit);
    }
    let images = IdxImages { rows: 28, cols: 28, pixels };
    let img = dir.join(format!("{name}-images"));
    let lab = dir.join(format!("{name}-labels"));
    fs::write(&img, encode_images(&images)).unwrap();
    fs::write(&lab, encode_labels(&labels)).unwrap();
    format!("{},{}", path_str(&img), path_str(&lab))
}

#[test]
fn classify_and_feature_select() {
    let dir = TempDir::new().unwrap();
    let train = write_digits(dir.path(), "train", 60);
    let test = write_digits(dir.path(), "test", 10);
    let out = dir.path().join("c.csv");
    let hist = dir.path().join("h.csv");
    let heat = dir.path().join("hm.csv");
    let res = rfilter(&[
        "classify",
        "--train",
        &train,
        "--test",
        &test,
        "--task",
        "zero-one",
        "--stop",
        "0.01",
        "--restarts",
        "3",
        "--budget",
        "30",
        "--capacity",
        "60",
        "--seed",
        "2",
        "--out",
        path_str(&out),
        "--histogram",
        path_str(&hist),
        "--heatmap",
        path_str(&heat),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let r = rows(&out);
    assert_eq!(r.len(), 10);
    for row in &r {
        assert_eq!(row[1], row[2], "misclassified {row:?}");
        assert!(row[3].parse::<usize>().unwrap() <= 30);
    }
    let grid = fs::read_to_string(&heat).unwrap();
    assert_eq!(grid.lines().count(), 28);
    assert!(grid.lines().all(|l| l.split(',').count() == 28));
    for path in [&out, &hist, &heat] {
        assert_eq!(manifest(path)["subcommand"], "classify");
    }

    let kept = dir.path().join("f.csv");
    let res =
        rfilter(&["feature-select", "--histogram", path_str(&hist), "--percentile", "50", "--out", path_str(&kept)]);
    assert!(res.status.success());
    let kept_rows = rows(&kept);
    assert!(!kept_rows.is_empty() && kept_rows.len() < 784);
    assert!(kept_rows.iter().all(|row| row[1].parse::<u64>().unwrap() > 0));

    let res = rfilter(&["feature-select", "--histogram", path_str(&hist), "--percentile", "100"]);
    assert_eq!(res.status.code(), Some(1));
}
