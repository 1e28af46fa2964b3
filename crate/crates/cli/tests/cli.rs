use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_maia4all"));
    c.env_remove("MAIA4ALL_OUTPUT").env("RUST_LOG", "error");
    c
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/three_games.pgn")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ingest(out: &Path, extra: &[&str]) -> Output {
    let pgn = format!("paths.pgn=[{:?}]", fixture().to_string_lossy());
    let mut args = vec!["ingest", "--set", &pgn, "--output", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn ingest_reports_retention_by_reason() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ingest(tmp.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("games read 3, kept 2"), "{s}");
    assert!(s.contains("rejected (missing clock): 1"), "{s}");
    assert!(s.contains("positions retained 8"), "{s}");
}

#[test]
fn ingest_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(ingest(a.path(), &[]).status.success());
    assert!(ingest(b.path(), &[]).status.success());
    assert_eq!(dir_bytes(&a.path().join("datasets")), dir_bytes(&b.path().join("datasets")));
    let again = ingest(a.path(), &[]);
    assert!(stdout(&again).contains("ingest") && stdout(&again).contains("skipped"));
}

#[test]
fn clock_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ingest(&tmp.path().join("a"), &["--filter.min-clock", "0"]);
    assert!(stdout(&o).contains("kept 2"), "{}", stdout(&o));
    let o = ingest(&tmp.path().join("b"), &["--filter.min-clock=0", "--filter.require-clock", "false"]);
    let s = stdout(&o);
    assert!(s.contains("kept 3") && s.contains("positions retained 10"), "{s}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ingest(tmp.path(), &["--set", "model.widht=3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["ingest", "--set", "paths.pgn=[\"/nonexistent/x.pgn\"]", "--output", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(ingest(tmp.path(), &[]).status.success());
    let o = ingest(tmp.path(), &["--filter.require-clock", "false"]);
    assert_eq!(o.status.code(), Some(5));
    let o = ingest(tmp.path(), &["--filter.require-clock", "false", "--force"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("kept 3"));
}

#[test]
fn synthetic_pipeline_resumes_and_predicts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(run(&["synth", dir.to_str().unwrap(), "--players", "11", "--clones", "2", "--games", "6", "--clone-games", "4"])
        .status
        .success());
    let config = dir.join("config.toml");
    let cfg = config.to_str().unwrap();
    let first = run(&["-c", cfg, "pipeline"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(!stdout(&first).contains("total training steps: 0"));
    let out = stdout(&first);
    let reports: Vec<&str> = out.lines().filter_map(|l| l.strip_prefix("report: ")).collect();
    assert_eq!(reports.len(), 4);
    for r in &reports {
        assert!(Path::new(r).exists(), "{r}");
    }

    let second = run(&["-c", cfg, "pipeline"]);
    assert!(second.status.success());
    assert!(stdout(&second).contains("total training steps: 0"), "{}", stdout(&second));

    let changed = run(&["-c", cfg, "--set", "pretrain.max_steps=7", "pipeline"]);
    assert_eq!(changed.status.code(), Some(5));

    let fen = "rnbqkbnr/pppppppp/8/8/4P3/8/PPPP1PPP/RNBQKBNR b KQkq - 0 1";
    let p = run(&["-c", cfg, "predict", "--fen", fen, "--rating", "1500", "--top", "3"]);
    assert!(p.status.success(), "{}", String::from_utf8_lossy(&p.stderr));
    let lines: Vec<String> = stdout(&p).lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    // black moves are printed unflipped: the mirrored white position gives the same rows with ranks mirrored
    let mirrored = "rnbqkbnr/pppp1ppp/8/4p3/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1";
    let w = run(&["-c", cfg, "predict", "--fen", mirrored, "--rating", "1500", "--top", "3"]);
    let mirror_rank = |m: &str| -> String {
        m.chars().map(|c| if c.is_ascii_digit() { (b'9' - c as u8 + b'0') as char } else { c }).collect()
    };
    let fields = |l: &str| l.split_whitespace().map(String::from).collect::<Vec<_>>();
    for (b, w) in lines.iter().zip(stdout(&w).lines()) {
        let (b, w) = (fields(b), fields(w));
        assert_eq!(mirror_rank(&b[0]), w[0], "{b:?} vs {w:?}");
        assert_eq!(b.last(), w.last());
    }

    let e = run(&["-c", cfg, "export-embeddings", "--which", "prototypes"]);
    assert_eq!(stdout(&e).lines().count(), 11);
}
