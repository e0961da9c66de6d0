use std::path::Path;
use std::process::Command;

use condmom::report::Report;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_condmom"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    bin()
        .args(["run", "--quiet", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn bound_on_dgp_a_reports_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.toml", "task = \"bound\"\n[law]\nbuiltin = \"DGP-A\"\n[params]\nstop_tol = 0.0\n");
    let out = dir.path().join("a.json");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = Report::read(&out).unwrap();
    assert!((rep.matrices["information"].data[0] - 2.0).abs() < 1e-10);
    assert!(rep.flags["monotone"]);
    assert_eq!(rep.matrices.keys().filter(|k| k.starts_with("I_k")).count(), 17);
}

#[test]
fn unknown_block_family_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "task = \"score\"\n[law]\nbuiltin = \"DGP-A\"\n[model]\ntheta0 = [0.0]\n[[model.blocks]]\nfamily = \"tobit\"\nresponse = 2\nterms = [{ param = 0 }]\ncond = [0]\n",
    );
    let o = run(&cfg, &dir.path().join("x.json"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.blocks[0].family"));
}

#[test]
fn mc_with_zero_replications_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "mc.toml", "task = \"mc\"\n[law]\nbuiltin = \"DGP-A\"\n[params]\nreplications = 0\n");
    assert_eq!(run(&cfg, &dir.path().join("x.json"), &[]).status.code(), Some(2));
}

#[test]
fn degenerate_estimation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "q.toml", "task = \"estimate\"\n[law]\nbuiltin = \"DGP-Q\"\n[params]\nn = 500\n");
    assert_eq!(run(&cfg, &dir.path().join("x.json"), &[]).status.code(), Some(3));
}

#[test]
fn backfit_and_oracle_reports_agree() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.toml", "task = \"score\"\n[law]\nbuiltin = \"DGP-B\"\n");
    let o = write(dir.path(), "o.toml", "task = \"oracle\"\n[law]\nbuiltin = \"DGP-B\"\n");
    let b = write(dir.path(), "b.toml", "task = \"bound\"\n[law]\nbuiltin = \"DGP-B\"\n[params]\nstop_tol = 0.0\n");
    for (c, name) in [(&s, "s.json"), (&o, "o.json"), (&b, "b.csv")] {
        let fmt = if name.ends_with("csv") { "csv" } else { "json" };
        assert!(run(c, &dir.path().join(name), &["--format", fmt]).status.success());
    }
    let cmp = |a: &str, b: &str, tol: &str| {
        bin()
            .args(["compare", "--tol", tol])
            .arg(dir.path().join(a))
            .arg(dir.path().join(b))
            .output()
            .unwrap()
    };
    let out = cmp("s.json", "o.json", "1e-6");
    assert!(out.status.success());
    assert!(!String::from_utf8_lossy(&out.stdout).contains("EXCEEDS"));
    let out = cmp("b.csv", "s.json", "1e-8");
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("information") && !text.contains("EXCEEDS"), "{text}");
}

#[test]
fn reports_are_deterministic_and_self_compare_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "e.toml", "task = \"mc\"\nseed = 5\n[law]\nbuiltin = \"DGP-A\"\n[params]\nn = 300\nreplications = 4\n");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert!(run(&cfg, &a, &[]).status.success());
    assert!(run(&cfg, &b, &[]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let rep = Report::read(&a).unwrap();
    assert!(rep.flags["low_replication_warning"]);
    let s = condmom::compare::compare(&[rep.clone(), rep], 0.0).unwrap();
    assert_eq!(s.max_diff(), 0.0);
    // a different seed changes the draws
    let c = dir.path().join("c.json");
    assert!(run(&cfg, &c, &["--seed", "6"]).status.success());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn law_file_next_to_config() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "law.csv", "p,z0,z1\n1,0,-1\n1,0,1\n1,1,-2\n1,1,2\n");
    let cfg = write(
        dir.path(),
        "f.toml",
        "task = \"score\"\n[law]\nfile = \"law.csv\"\n[model]\ntheta0 = [0.0]\n[[model.blocks]]\nfamily = \"mean\"\nresponse = 1\nterms = [{ param = 0 }]\ncond = [0]\n",
    );
    let out = dir.path().join("f.json");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // weights 1/Var(ε | X): 1 and 1/4, averaged
    let info = Report::read(&out).unwrap().matrices["information"].data[0];
    assert!((info - 0.625).abs() < 1e-12);
}

#[test]
fn missing_task_with_logistic_selection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.toml", "task = \"missing\"\n[law]\nbuiltin = \"DGP-C-regressor\"\nselection = \"logistic\"\n");
    let out = dir.path().join("m.json");
    assert!(run(&cfg, &out, &[]).status.success());
    let rep = Report::read(&out).unwrap();
    assert!(rep.scalars["cross_norm"] < 1e-10);
    assert!(rep.scalars["max_ratio"] <= rep.scalars["beta"]);
}

#[test]
fn list_shows_designs_and_families() {
    let o = bin().arg("list").output().unwrap();
    assert!(o.status.success());
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.contains("DGP-A") && s.contains("logistic") && s.contains("polynomial"));
}

#[test]
fn compare_rejects_mismatched_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.toml", "task = \"oracle\"\n[law]\nbuiltin = \"DGP-A\"\n");
    let b = write(dir.path(), "b.toml", "task = \"oracle\"\n[law]\nbuiltin = \"DGP-B\"\n");
    assert!(run(&a, &dir.path().join("a.json"), &[]).status.success());
    assert!(run(&b, &dir.path().join("b.json"), &[]).status.success());
    let o = bin()
        .arg("compare")
        .arg(dir.path().join("a.json"))
        .arg(dir.path().join("b.json"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
