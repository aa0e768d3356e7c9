use std::path::Path;
use std::process::{Command, Output};

fn cscnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cscnet")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = cscnet(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

fn out_arg(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn gen_data_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(&["gen-data", "--out", &out_arg(d.path())]);
    }
    for f in ["embeddings.txt", "features.bin", "labels.txt"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs between runs");
    }
}

#[test]
fn generated_files_round_trip_through_train() {
    let d = tempfile::tempdir().unwrap();
    let out = out_arg(d.path());
    let gen = ok(&["gen-data", "--out", &out]);
    let hash = gen.split("hash=").nth(1).unwrap().trim().to_string();
    let p = |f: &str| format!("{}", d.path().join(f).display());
    let from_files = [
        "--set",
        &format!("embeddings={}", p("embeddings.txt")),
        "--set",
        &format!("features={}", p("features.bin")),
        "--set",
        &format!("labels={}", p("labels.txt")),
    ];
    let mut args = vec!["train", "--out", &out, "--set", "epochs=3"];
    args.extend_from_slice(&from_files);
    ok(&args);
    let mut eval = vec!["eval", "--out", &out];
    eval.extend_from_slice(&from_files);
    let s = ok(&eval);
    assert!(s.contains("auc="), "{s}");
    assert_eq!(hash.len(), 64);
}

#[test]
fn infeasible_split_is_reported() {
    let d = tempfile::tempdir().unwrap();
    let o = cscnet(&[
        "gen-data",
        "--out",
        &out_arg(d.path()),
        "--set",
        "n_attrs=2",
        "--set",
        "n_objs=2",
        "--set",
        "seen_fraction=0.99",
    ]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.starts_with("error: "), "{e}");
    assert!(e.contains("unseen"), "{e}");
}

#[test]
fn alpha_zero_without_composition_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let o = cscnet(&[
        "train",
        "--out",
        &out_arg(d.path()),
        "--set",
        "alpha=0",
        "--set",
        "composition=false",
        "--set",
        "beta=1",
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("alpha"), "{}", stderr(&o));
    assert!(!d.path().join("checkpoint.bin").exists());
}

#[test]
fn grad_check_passes_and_corruption_is_named() {
    let s = ok(&["grad-check"]);
    assert_eq!(s.lines().filter(|l| l.ends_with("PASS")).count(), 8, "{s}");

    let o = cscnet(&["grad-check", "--corrupt", "e_a2o.w1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("e_a2o.w1"), "{}", stderr(&o));
    assert!(stdout(&o).contains("FAIL"));

    let o = cscnet(&["grad-check", "--corrupt", "no_such_block"]);
    assert!(!o.status.success());
}

#[test]
fn usage_errors_are_one_line() {
    for args in [
        &["train", "--bogus"][..],
        &["frobnicate"][..],
        &["train", "--set", "nonsense=1"][..],
        &["train", "--set", "lr"][..],
    ] {
        let o = cscnet(args);
        assert!(!o.status.success(), "{args:?}");
        let e = stderr(&o);
        assert_eq!(e.trim_end().lines().count(), 1, "{args:?}: {e}");
        assert!(e.starts_with("error: "), "{e}");
    }
    assert!(cscnet(&["--help"]).status.success());
}

#[test]
fn eval_and_beta_sweep_agree() {
    let d = tempfile::tempdir().unwrap();
    let out = out_arg(d.path());
    ok(&["train", "--out", &out, "--set", "epochs=15"]);
    let summary = ok(&["eval", "--out", &out]);
    assert!(summary.contains("seen=") && summary.contains("hm="), "{summary}");
    let curve = std::fs::read_to_string(d.path().join("curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("bias,seen_acc,unseen_acc"));
    assert!(curve.lines().count() >= 51);

    let sweep = ok(&["beta-sweep", "--out", &out]);
    let rows: Vec<&str> = sweep.lines().skip(1).collect();
    assert_eq!(rows.len(), 11);
    let file = std::fs::read_to_string(d.path().join("beta_sweep.csv")).unwrap();
    assert_eq!(file, sweep);

    let at_zero = ok(&["eval", "--out", &out, "--set", "beta=0"]);
    let first: Vec<f64> = rows[0].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    let want = format!(
        "seen={:.4} unseen={:.4} hm={:.4} auc={:.4}",
        first[3], first[4], first[2], first[1]
    );
    assert_eq!(at_zero.trim(), want);

    let custom = ok(&["beta-sweep", "--out", &out, "--betas", "0,1"]);
    assert_eq!(custom.lines().count(), 3);
}
