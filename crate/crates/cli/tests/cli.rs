use std::path::Path;
use std::process::{Command, Output};

#[rustfmt::skip]
const TINY: &[&str] = &[
    "--set", "dataset=teacher",
    "--set", "hidden=6",
    "--set", "synth_train=120",
    "--set", "synth_test=30",
    "--set", "clients=4",
    "--set", "kappa=0.5",
    "--set", "rounds=3",
    "--set", "stage_boundary=2",
    "--set", "eta=0.001",
];

fn fedbiad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedbiad"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn run_tiny(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    fedbiad(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn fedavg_smoke_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_tiny(dir.path(), &["--strategy", "fedavg", "--p", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("reports.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("round,"));
    let cfg = std::fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert!(cfg.contains("strategy = fedavg"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("final top1"));
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for format in ["csv", "json"] {
        for d in [&a, &b] {
            let o = run_tiny(d.path(), &["--seed", "5", "--format", format]);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        let name = format!("reports.{format}");
        assert_eq!(
            std::fs::read(a.path().join(&name)).unwrap(),
            std::fs::read(b.path().join(&name)).unwrap()
        );
    }
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.txt");
    std::fs::write(&file, "# tiny\nrounds = 9\nstrategy = random_drop\n").unwrap();
    let out = dir.path().join("out");
    let o = run_tiny(
        &out,
        &["--config", file.to_str().unwrap(), "--set", "rounds=2"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("reports.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let cfg = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(cfg.contains("strategy = random_drop"));
}

#[test]
fn bad_configuration_exits_two_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    for (extra, key) in [
        (&["--strategy", "nope"][..], "strategy"),
        (&["--set", "tau=0"][..], "tau"),
        (&["--set", "stage_boundary=9"][..], "stage_boundary"),
        (&["--set", "no_such_key=1"][..], "no_such_key"),
    ] {
        let o = run_tiny(dir.path(), extra);
        assert_eq!(o.status.code(), Some(2), "{extra:?}: {}", stderr(&o));
        assert!(stderr(&o).contains(key), "{extra:?}: {}", stderr(&o));
    }
    assert_eq!(fedbiad(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn sweep_over_rate_shrinks_uploads() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep",
        "--out",
        dir.path().to_str().unwrap(),
        "--key",
        "p",
        "--values",
        "0.1,0.3,0.5",
    ];
    args.extend_from_slice(TINY);
    let o = fedbiad(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    for p in ["0.1", "0.3", "0.5"] {
        assert!(dir
            .path()
            .join(format!("p={p}"))
            .join("reports.csv")
            .exists());
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let up: Vec<u64> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(5).unwrap().parse().unwrap())
        .collect();
    assert_eq!(up.len(), 3);
    assert!(up[0] > up[1] && up[1] > up[2], "{up:?}");
}

#[test]
fn verify_passes() {
    let o = fedbiad(&["verify", "--cases", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("PASS") && !out.contains("FAIL"), "{out}");
}
