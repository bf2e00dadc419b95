//! Drives the `jagq` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn jagq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jagq"))
        .args(args)
        .current_dir(dir)
        .env("JQ_CACHE_DIR", dir.join("cache"))
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// A temp dir holding `events.jsonl` (seed 7, `n` events) and `registry.toml`.
fn workspace(n: usize) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let n = n.to_string();
    let args = ["generate", "--seed", "7", "--events", &n, "--out", "events.jsonl", "--registry", "registry.toml"];
    stdout(&jagq(dir.path(), &args));
    dir
}

fn run(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--registry", "registry.toml"];
    args.extend_from_slice(extra);
    jagq(dir, &args)
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.jsonl", "b.jsonl"] {
        stdout(&jagq(dir.path(), &["generate", "--seed", "11", "--events", "25", "--out", out]));
    }
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_eq!(read("a.jsonl.matches.csv"), read("b.jsonl.matches.csv"));
    assert_eq!(String::from_utf8(read("a.jsonl")).unwrap().lines().count(), 25);
    assert!(String::from_utf8(read("a.jsonl.matches.csv")).unwrap().starts_with("event,electron,truth\n"));
    stdout(&jagq(dir.path(), &["generate", "--seed", "12", "--events", "25", "--out", "c.jsonl"]));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
}

#[test]
fn electron_pt_histogram() {
    let ws = workspace(300);
    let q = data("electron_pt.jq");
    let q = q.to_str().unwrap();
    let out = stdout(&run(ws.path(), &["--query", q, "--hist", "--bins", "50", "--range", "0,100"]));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("bin_lo,bin_hi,count"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 50);
    assert!(rows[0].starts_with("0.0,2.0,"), "{}", rows[0]);
    assert!(rows[49].starts_with("98.0,100.0,"), "{}", rows[49]);
    let total: u64 = rows.iter().map(|r| r.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    let per_event = stdout(&run(ws.path(), &["--query", q]));
    assert_eq!(per_event.lines().count(), 300);
    let in_range = per_event
        .lines()
        .flat_map(|l| {
            l.trim_matches(['[', ']']).split(", ").filter(|s| !s.is_empty()).map(|s| s.parse::<f64>().unwrap())
        })
        .filter(|x| (0.0..=100.0).contains(x))
        .count();
    assert_eq!(total, in_range as u64);
}

#[test]
fn empty_result_single_bin() {
    let ws = workspace(20);
    let out = stdout(&run(
        ws.path(),
        &[
            "--expr",
            "From(\"mc.zee\") |> Get(\"Jets\") |> Where(j => j.pt > 1e15) |> Select(j => j.pt)",
            "--hist",
            "--bins",
            "1",
        ],
    ));
    assert_eq!(out, "bin_lo,bin_hi,count\n0.0,1.0,0\n");
}

#[test]
fn backends_write_identical_files() {
    let ws = workspace(200);
    for name in ["electron_pt.jq", "association.jq", "resolution.jq", "good_jets.jq", "jet_count.jq"] {
        let q = data(name);
        let q = q.to_str().unwrap();
        let mut files = Vec::new();
        for (i, extra) in
            [&["--backend", "split"][..], &["--backend", "all-local"], &["--cross-reference"]].iter().enumerate()
        {
            let out = format!("{name}.{i}.txt");
            let mut args = vec!["--query", q, "--no-cache", "--out", &out];
            args.extend_from_slice(extra);
            stdout(&run(ws.path(), &args));
            files.push(std::fs::read(ws.path().join(&out)).unwrap());
        }
        assert_eq!(files[0], files[1], "{name}: split vs all-local");
        assert_eq!(files[0], files[2], "{name}: split vs cross-reference");
        assert_eq!(String::from_utf8_lossy(&files[0]).lines().count(), 200, "{name}");
    }
}

#[test]
fn plan_dump_and_cache() {
    let ws = workspace(50);
    let q = data("electron_pt.jq");
    let q = q.to_str().unwrap();
    let out = stdout(&run(ws.path(), &["--query", q, "--plan"]));
    assert!(out.contains("step 0 [stage 0] on remote"), "{out}");
    assert!(out.contains("step 1 [stage 1] on local"), "{out}");
    assert!(out.contains("boundaries: 2"), "{out}");
    let cached = std::fs::read_dir(ws.path().join("cache")).unwrap().count();
    assert_eq!(cached, 2);
    let again = stdout(&run(ws.path(), &["--query", q, "--plan"]));
    assert_eq!(out, again);
    assert_eq!(std::fs::read_dir(ws.path().join("cache")).unwrap().count(), 2);
}

#[test]
fn exit_codes() {
    let ws = workspace(10);
    let code = |args: &[&str]| {
        let o = run(ws.path(), args);
        let err = String::from_utf8_lossy(&o.stderr).to_string();
        (o.status.code(), err)
    };
    let (c, err) = code(&["--expr", "From(\"mc.zee\") |> Get("]);
    assert_eq!(c, Some(2), "{err}");
    assert!(err.starts_with("error [query]"), "{err}");
    let (c, err) = code(&["--expr", "From(\"mc.zee\") |> Get(\"Muons\") |> Count()"]);
    assert_eq!(c, Some(3), "{err}");
    let (c, err) = code(&["--expr", "From(\"mc.zee\") |> Get(\"Jets\") |> Select(j => j.mass)", "--strict"]);
    assert_eq!(c, Some(3), "{err}");
    let (c, err) = code(&["--expr", "From(\"mc.zee\") |> Get(\"Jets\") |> Where(j => j.pt < 0.0) |> First()"]);
    assert_eq!(c, Some(4), "{err}");
    assert!(err.contains("empty-sequence"), "{err}");
    let (c, err) = code(&["--expr", "From(\"mc.other\") |> Get(\"Jets\") |> Count()"]);
    assert_eq!(c, Some(1), "{err}");
    let (c, _) = code(&["--expr", "From(\"mc.zee\") |> Get(\"Jets\") |> Count()", "--range", "5"]);
    assert_eq!(c, Some(1));
}

#[test]
fn lenient_leaves_warn() {
    let ws = workspace(10);
    let o = run(ws.path(), &["--expr", "From(\"mc.zee\") |> Get(\"Jets\") |> Select(j => j.mass)"]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("warning: leaf `Jets.mass` is not in the schema"), "{err}");
    assert_eq!(o.status.code(), Some(4), "{err}");
}
