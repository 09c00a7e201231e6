use std::net::TcpListener;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_dcsmc");

#[test]
fn ising_verb_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[model]\nm = 2\n[method]\nname = \"dc-sir\"\nn = 32\n[run]\nreplicates = 3\n").unwrap();
    let out = dir.path().join("out");
    let status = Command::new(BIN)
        .args(["ising", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let csv = std::fs::read_to_string(out.join("ising_dc-sir.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("ising_dc-sir_summary.json").exists());
}

#[test]
fn mismatched_verb_and_config_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[model]\nkind = \"gsm\"\n").unwrap();
    let status = Command::new(BIN).args(["ising", "--config", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("gsm"));
}

#[test]
fn worker_processes_serve_a_driver() {
    let dir = tempfile::tempdir().unwrap();
    let addrs: Vec<String> = (0..2)
        .map(|_| TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string())
        .collect();
    let mut workers: Vec<_> = addrs
        .iter()
        .map(|a| Command::new(BIN).args(["worker", "--max-jobs", "2"]).env("DCSMC_BIND", a).spawn().unwrap())
        .collect();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[model]\nm = 8\n[method]\nname = \"dc-mix-ann\"\nn = 32\n[run]\nreplicates = 2\n").unwrap();
    let run = |extra: &[&str], sub: &str| {
        let out = dir.path().join(sub);
        let mut args = vec!["ising", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = Command::new(BIN).args(&args).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out.join("ising_dc-mix-ann.csv")).unwrap()
    };
    let roster = addrs.join(",");
    let remote = run(&["--workers", &roster], "remote");
    let local = run(&[], "local");
    for w in &mut workers {
        assert!(w.wait().unwrap().success());
    }
    let strip = |s: &str| s.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
    assert_eq!(strip(&remote), strip(&local));
}
