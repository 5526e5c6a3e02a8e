use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use extractbench::selection::SelectionPlan;
use extractbench::victim::{RepresentationCache, VictimClient};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_extractbench"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--run-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("spawn extractbench")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_corpus(dir: &Path) -> String {
    ok(dir, &["gen-corpus", "--speakers", "2", "--clips-per-speaker", "6"])
}

struct Server {
    child: Child,
    url: String,
}

impl Server {
    fn start(dir: &Path, budget: &str, ledger_log: &Path) -> Self {
        let mut child = bin()
            .arg("--run-dir")
            .arg(dir)
            .args(["serve-victim", "--seed", "0", "--bind", "127.0.0.1:0", "--budget-seconds", budget])
            .arg("--ledger-log")
            .arg(ledger_log)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn server");
        let mut line = String::new();
        BufReader::new(child.stdout.as_mut().unwrap())
            .read_line(&mut line)
            .unwrap();
        let url = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_owned();
        Self { child, url }
    }

    fn client(&self) -> VictimClient {
        VictimClient::new(self.url.clone(), RepresentationCache::in_memory())
    }

    fn terminate(mut self) {
        let status = Command::new("kill")
            .args(["-TERM", &self.child.id().to_string()])
            .status()
            .unwrap();
        assert!(status.success());
        assert!(self.child.wait().unwrap().success());
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn artifacts(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    ["plan.json", "checkpoint.json", "report.json", "loss_trace.csv"]
        .iter()
        .map(|name| {
            let p = dir.join(name);
            let bytes = fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (PathBuf::from(name), bytes)
        })
        .collect()
}

/// gen-corpus, select, extract against a live server, evaluate.
fn pipeline(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    small_corpus(dir);
    ok(dir, &["select", "--method", "random", "--budget-seconds", "20"]);
    let log = dir.join("ledger.jsonl");
    let server = Server::start(dir, "100", &log);
    let client = server.client();
    let info = client.info().unwrap();
    assert_eq!((info.num_layers, info.dim), (12, 64));
    let start = client.budget().unwrap();
    assert_eq!((start.limit_s, start.spent_s, start.request_count), (100.0, 0.0, 0));

    ok(dir, &["extract", "--url", &server.url, "--steps", "20"]);
    let plan = SelectionPlan::load(&dir.join("plan.json")).unwrap();
    let after = client.budget().unwrap();
    assert_eq!(after.spent_s, plan.total_duration_s);
    assert_eq!(after.request_count, plan.len() as u64);

    let stdout = ok(dir, &["extract", "--url", &server.url, "--steps", "20"]);
    assert!(stdout.contains("0 network requests"), "{stdout}");
    assert_eq!(client.budget().unwrap(), after);

    let report = ok(dir, &["evaluate"]);
    assert!(report.contains("agreement"), "{report}");
    assert!(report.contains("held-out loss"), "{report}");
    assert_eq!(client.budget().unwrap(), after);

    server.terminate();
    let lines = fs::read_to_string(&log).unwrap().lines().count();
    assert_eq!(lines as u64, after.request_count);
    artifacts(dir)
}

#[test]
fn pipeline_is_deterministic_and_budget_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let a = pipeline(&tmp.path().join("a"));
    let b = pipeline(&tmp.path().join("b"));
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        assert!(x == y, "{} differs between runs", name.display());
    }
}

#[test]
fn gen_corpus_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let stats = small_corpus(&a);
    small_corpus(&b);
    assert!(stats.contains(" h ("), "{stats}");
    assert!(stats.contains("attack 6 clips"), "{stats}");
    for name in ["attack.jsonl", "eval.jsonl"] {
        assert_eq!(
            fs::read(a.join("corpus").join(name)).unwrap(),
            fs::read(b.join("corpus").join(name)).unwrap()
        );
    }
    let audio = |d: &Path| fs::read_dir(d.join("corpus/audio")).unwrap().count();
    assert_eq!(audio(&a), 12);
    assert_eq!(audio(&b), 12);
}

#[test]
fn unknown_method_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["select", "--method", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn budget_above_victim_limit_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["select", "--budget-seconds", "5000"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds the victim budget"));
}

#[test]
fn missing_checkpoint_is_file_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["evaluate"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint.json"));
}

#[test]
fn content_and_loss_selection_build_their_caches() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["gen-corpus", "--speakers", "2", "--clips-per-speaker", "10", "--eval-fraction", "0.5"]);
    let kmeans = dir.join("cache/kmeans.json");
    assert!(!kmeans.exists());
    let out = ok(dir, &["select", "--method", "loss", "--budget-seconds", "15", "--k", "8"]);
    assert!(out.contains("vs H = 15 s"), "{out}");
    assert!(kmeans.exists());
    let plan = SelectionPlan::load(&dir.join("plan.json")).unwrap();
    assert!(plan.total_duration_s >= 15.0);
    assert!(plan.steps.iter().all(|s| s.value.is_some()));

    ok(dir, &["select", "--method", "content", "--budget-seconds", "15", "--k", "8"]);
    let tokens = fs::read_to_string(dir.join("cache/tokens.jsonl")).unwrap();
    assert_eq!(tokens.lines().count(), 10);
    let plan = SelectionPlan::load(&dir.join("plan.json")).unwrap();
    assert_eq!(plan.method.as_str(), "content");
    let last = plan.steps.last().unwrap();
    assert!(last.running_total_s - fs_duration(dir, &last.clip_id) < 15.0);
}

fn fs_duration(dir: &Path, id: &str) -> f64 {
    let corpus = extractbench::corpus::load_manifest(&dir.join("corpus/attack.jsonl")).unwrap();
    corpus.get(id).unwrap().duration_s()
}

#[test]
fn sweep_produces_method_budget_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    let out = ok(
        dir,
        &["sweep", "--methods", "random,most_speakers", "--budgets", "10,20", "--steps", "5"],
    );
    let table = fs::read_to_string(dir.join("sweep/table.txt")).unwrap();
    assert!(out.ends_with(&table));
    for metric in ["agreement", "held-out loss", "surrogate probe accuracy", "mean layer cosine"] {
        let at = table.find(metric).unwrap_or_else(|| panic!("no {metric} block"));
        let block: Vec<&str> = table[at..].lines().take(4).collect();
        assert!(block[1].contains("H=10s") && block[1].contains("H=20s"), "{block:?}");
        assert!(block[2].starts_with("most_speakers") || block[2].starts_with("random"), "{block:?}");
    }
    let reports = fs::read_to_string(dir.join("sweep/reports.jsonl")).unwrap();
    assert_eq!(reports.lines().count(), 4);
}
