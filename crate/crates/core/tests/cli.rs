use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finequeue"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("FINEQUEUE_QUEUE__FINE")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn analytic_queries() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(stdout(&run(d.path(), &["analytic", "r"])).trim(), "4");
    assert_eq!(stdout(&run(d.path(), &["analytic", "alpha", "--n", "4"])).trim(), "0.5");
    assert_eq!(stdout(&run(d.path(), &["analytic", "r21"])).trim(), "9");
    let text = stdout(&run(d.path(), &["analytic", "division-compare", "--set", "queue.legal_cost=400"]));
    assert!(text.contains("\"winner\":\"two_round\""), "{text}");
    let bad = run(d.path(), &["analytic", "nonsense"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn certain_fine_payers_pay_fine_each() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        d.path(),
        &["simulate", "--episodes", "3", "--set", "queue.ignorance=0", "--set", "run.strategy=pure:4", "--set", "queue.horizon=8"],
    );
    let text = stdout(&o);
    assert!(text.starts_with("seed 0"));
    let log = fs::read_to_string(d.path().join("episode.jsonl")).unwrap();
    let revenues = finequeue::game::read_jsonl_revenues(&log).unwrap();
    assert_eq!(revenues[0], (1, 32 * 4));
    assert!(revenues.iter().all(|&(_, r)| r == 128));
}

#[test]
fn invalid_config_reports_field() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["simulate", "--set", "queue.legal_cost=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("legal_cost"));
    let o = run(d.path(), &["sweep", "--episodes", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid"));
}

#[test]
fn zero_iterations_emit_the_initial_policy() {
    let d = tempfile::tempdir().unwrap();
    stdout(&run(d.path(), &["train", "--set", "run.iterations=0"]));
    let names: Vec<String> = files(d.path()).into_iter().map(|f| f.0).collect();
    assert!(names.contains(&"seed-0/policy-0.json".to_string()), "{names:?}");
    assert!(!names.iter().any(|n| n.ends_with("policy-1.json")));
}

#[test]
fn reruns_are_byte_identical() {
    let cases: Vec<Vec<&str>> = vec![
        vec!["simulate", "--episodes", "20", "--seed", "3", "--set", "queue.horizon=16"],
        vec!["analytic", "chernoff-scan", "--n-max", "32"],
        vec![
            "train", "--episodes", "50", "--set", "queue.initial=8", "--set", "queue.entrants=8",
            "--set", "queue.horizon=8", "--set", "learner.cycles=2", "--set", "learner.buffer=200",
            "--set", "run.iterations=1", "--set", "run.seeds=[1,2]",
        ],
        vec!["nashconv", "--episodes", "20", "--set", "queue.horizon=8"],
        vec!["sweep", "--mode", "avalanche-p", "--episodes", "5", "--set", "run.grid=[0.3,0.7]", "--set", "queue.horizon=8", "--workers", "2"],
        vec!["coalition", "--episodes", "20", "--set", "queue.horizon=8"],
    ];
    for args in cases {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ta = stdout(&run(a.path(), &args));
        let tb = stdout(&run(b.path(), &args));
        assert_eq!(ta, tb, "{args:?}");
        let fa = files(a.path());
        assert!(fa.iter().any(|(n, _)| n == "run.json"));
        assert_eq!(fa, files(b.path()), "{args:?}");
    }
}
