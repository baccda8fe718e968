use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use zsdc_core::audio::load_wav;
use zsdc_core::central::{ArchiveManifest, MANIFEST_FILE};
use zsdc_core::experiment::ExperimentReport;

const SMALL: &str = "frame_size=256\nhop=128\nn_subvectors=8\ncodebook_size=16\ncorpus_clips=7\nscale=0.005\nmse_events=3\n";

fn zsdc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zsdc"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn zsdc")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = zsdc(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
    ok(dir.path(), &["--config", "small.cfg", "--seed", "4", "train-codec", "--out", "m.zsdm"]);
    dir
}

struct Central(Child);

impl Drop for Central {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_central(dir: &Path, archive: &str) -> (Central, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_zsdc"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(["run-central", "--listen-addr", "127.0.0.1:0", "--archive-dir", archive, "--codec-model", "m.zsdm"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    (Central(child), addr)
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(zsdc(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(zsdc(dir.path(), &["gen-data"]).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.cfg"), "colour=blue\n").unwrap();
    assert_eq!(zsdc(dir.path(), &["--config", "bad.cfg", "gen-data", "--out-dir", "d"]).status.code(), Some(1));
    assert_eq!(zsdc(dir.path(), &["gen-data", "--scale", "2", "--out-dir", "d"]).status.code(), Some(1));
    assert_eq!(zsdc(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn stage_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = zsdc(dir.path(), &["decode", "--codec-model", "missing.zsdm", "--input", "x", "--output", "y"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.zsdm"));
}

#[test]
fn gen_data_writes_labeled_wavs() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--seed", "2", "gen-data", "--scale", "0.005", "--out-dir", "data"]);
    let labels = std::fs::read_to_string(dir.path().join("data/labels.csv")).unwrap();
    let mut lines = labels.lines();
    assert_eq!(lines.next(), Some("uuid,post,condition,path,captured_at"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // ceil(0.005 * n) per site and weather cell.
    assert_eq!(rows.len(), 2 + 1 + 1 + 5 + 3 + 1 + 6 + 6 + 1 + 1);
    for r in &rows {
        let clip = load_wav(dir.path().join("data").join(r[3])).unwrap();
        assert_eq!((clip.sample_rate(), clip.len()), (44_100, 441_000));
        assert!(r[3].starts_with(&format!("{}/{}/", r[1], r[2])));
    }
    assert!(rows.iter().any(|r| r[2] == "snow"));
    // Same seed, same bytes.
    ok(dir.path(), &["--seed", "2", "gen-data", "--scale", "0.005", "--out-dir", "again"]);
    assert_eq!(std::fs::read(dir.path().join("again/labels.csv")).unwrap(), labels.as_bytes());
}

#[test]
fn encode_decode_plot() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--seed", "1", "gen-data", "--scale", "0.005", "--out-dir", "data"]);
    let labels = std::fs::read_to_string(d.join("data/labels.csv")).unwrap();
    let first = labels.lines().nth(1).unwrap().split(',').nth(3).unwrap().to_string();
    let wav = format!("data/{first}");
    ok(d, &["encode", "--codec-model", "m.zsdm", "--input", &wav, "--output", "z.zsdc", "--post-id", "p7"]);
    let z = std::fs::read(d.join("z.zsdc")).unwrap();
    assert_eq!(&z[..4], b"ZSDC");
    assert!(z.len() < 64 + 10 * 5120);
    ok(d, &["decode", "--codec-model", "m.zsdm", "--input", "z.zsdc", "--output", "y.wav"]);
    assert_eq!(load_wav(d.join("y.wav")).unwrap().len(), 441_000);
    ok(d, &["plot", "--input", &wav, "--output", "x.pgm"]);
    ok(d, &["plot", "--input", &wav, "--output", "y.pgm", "--codec-model", "m.zsdm"]);
    for f in ["x.pgm", "y.pgm"] {
        assert!(std::fs::read(d.join(f)).unwrap().starts_with(b"P5\n860 64\n255\n"));
    }
    assert_eq!(zsdc(d, &["decode", "--codec-model", "m.zsdm", "--input", &wav, "--output", "w.wav"]).status.code(), Some(2));
}

#[test]
fn edge_ships_a_directory_to_central() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["gen-data", "--scale", "0.001", "--out-dir", "data"]);
    let (central, addr) = start_central(d, "archive");
    ok(
        d,
        &[
            "--config", "small.cfg", "run-edge", "--codec-model", "m.zsdm", "--input-dir", "data", "--server-addr", &addr,
            "--capacity-bytes", "100000", "--flush-interval-s", "86400", "--state-log", "edge.zsdl",
        ],
    );
    // A second run over the same labels re-sends the same uuids.
    ok(d, &["run-edge", "--codec-model", "m.zsdm", "--input-dir", "data", "--server-addr", &addr]);
    drop(central);
    let manifest = ArchiveManifest::parse(&std::fs::read_to_string(d.join("archive").join(MANIFEST_FILE)).unwrap()).unwrap();
    let labels = std::fs::read_to_string(d.join("data/labels.csv")).unwrap();
    assert_eq!(manifest.len(), labels.lines().count() - 1);
    for row in labels.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        let e = manifest.entries().iter().find(|e| e.uuid.to_string() == f[0]).expect("archived");
        assert_eq!((e.post_id.as_str(), e.captured_at.to_string()), (f[1], f[4].to_string()));
        assert_eq!(load_wav(d.join("archive").join(&e.wav_path)).unwrap().len(), 441_000);
    }
    // Everything was acknowledged, so the saved log holds no records.
    let (state, _) = zsdc_core::edge::restore(d.join("edge.zsdl")).unwrap();
    assert!(state.is_empty());
}

#[test]
fn edge_without_server_keeps_its_records() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["gen-data", "--scale", "0.001", "--out-dir", "data"]);
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let out = zsdc(
        d,
        &["run-edge", "--codec-model", "m.zsdm", "--input-dir", "data", "--server-addr", &addr, "--state-log", "edge.zsdl"],
    );
    assert_eq!(out.status.code(), Some(2));
    let (state, _) = zsdc_core::edge::restore(d.join("edge.zsdl")).unwrap();
    assert_eq!(state.len(), 12);
    assert!(String::from_utf8_lossy(&out.stderr).contains("12 records left undelivered"));
}

#[test]
fn evaluate_writes_reports() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "small.cfg", "--seed", "4", "evaluate", "--codec-model", "m.zsdm", "--out-dir", "r1"]);
    ok(d, &["--config", "small.cfg", "--seed", "4", "evaluate", "--codec-model", "m.zsdm", "--out-dir", "r2", "--net"]);
    let read = |p: &str| std::fs::read_to_string(d.join(p)).unwrap();
    let a = ExperimentReport::from_json(&read("r1/report.json")).unwrap();
    let b = ExperimentReport::from_json(&read("r2/report.json")).unwrap();
    assert_eq!(ExperimentReport::from_csv(&read("r1/report.csv")).unwrap(), a);
    assert_eq!((a.config.seed, a.config.net, b.config.net), (4, false, true));
    assert_eq!(a.auroc_table, b.auroc_table);
    assert_eq!(a.transmission, b.transmission);
    assert!(read("r1/report.txt").contains("AUROC"));
    assert!(read("r1/auroc.csv").starts_with("row,"));
    assert_eq!(read("r1/size.csv").lines().count(), 5);
    assert_eq!(read("r1/mse.csv").lines().count(), 4);
}
