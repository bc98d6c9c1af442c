use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::thread::sleep;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use serde_json::Value;

use opinion_core::annotation::{Annotation, Round};
use opinion_core::corpus::CorpusStore;
use opinion_core::Polarity;

const SUBCOMMANDS: [&str; 13] = [
    "ingest", "select", "normalize", "serve", "adjudicate", "agreement", "stats", "train", "evaluate", "compare",
    "predict", "export", "synth",
];

fn opinion() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_opinion"));
    c.env_remove("OPINION_TOKEN").env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    opinion().args(args).output().unwrap()
}

fn run_with_stdin(args: &[&str], stdin: &str) -> Output {
    let mut child = opinion()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn ok_json(o: &Output) -> Value {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(o));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic corpus and table under `dir/synth`.
fn synth(dir: &Path, docs: usize) -> (PathBuf, PathBuf) {
    let out = dir.join("synth");
    let docs = docs.to_string();
    ok_json(&run(&["synth", "--docs", &docs, "--out", p(&out)]));
    (out.join("corpus.tsv"), out.join("embeddings.vec"))
}

/// Trace CSV without its wall-clock column.
fn without_seconds(csv: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let skip = header.iter().position(|h| *h == "seconds");
    std::iter::once(header.clone())
        .chain(lines.map(|l| l.split(',').collect()))
        .map(|cols: Vec<&str>| {
            cols.iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != skip)
                .map(|(_, c)| *c)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn every_subcommand_has_help_listing_its_flags_with_defaults() {
    let top = run(&["--help"]);
    assert_eq!(top.status.code(), Some(0));
    for sub in SUBCOMMANDS {
        assert!(stdout(&top).contains(sub), "{sub} missing from top-level help");
        let help = run(&[sub, "--help"]);
        assert_eq!(help.status.code(), Some(0), "{sub} --help");
        assert!(stdout(&help).contains("Usage: opinion"), "{sub}");
    }
    let train = stdout(&run(&["train", "--help"]));
    for flag in [
        "--arch", "--corpus", "--embeddings", "--ngrams", "--seed", "--out", "--epochs", "--batch-size",
        "--learning-rate", "--dropout", "--hidden", "--filters", "--filter-size", "--hyperparameters",
        "--test-fraction", "--val-fraction", "--padded-length",
    ] {
        assert!(train.contains(flag), "train help lacks {flag}");
    }
    for default in ["[default: 0]", "[default: runs]", "[default: 0.06]", "[default: 0.04]", "[default: 3]", "[default: 6]"] {
        assert!(train.contains(default), "train help lacks {default}");
    }
    for row in [
        "cnn      filters=128 filter_size=3 dropout=0.5 learning_rate=0.001 epochs=5 batch_size=8",
        "lstm     hidden=128,64 dropout=0.4,0.4 learning_rate=0.001 epochs=5 batch_size=128",
        "cnn_gru  filters=64 filter_size=3 hidden=64 dropout=0.2,0.3,0.5 learning_rate=0.001 epochs=5 batch_size=256",
        "bigru    hidden=64 dropout=0.3 learning_rate=0.001 epochs=6 batch_size=256",
        "bilstm   hidden=40 dropout=0.4 learning_rate=0.008 epochs=5 batch_size=256",
    ] {
        assert!(train.contains(row), "train help lacks tabled row `{row}`");
        assert!(stdout(&run(&["compare", "--help"])).contains(row));
    }
    let serve = stdout(&run(&["serve", "--help"]));
    for s in ["[default: 127.0.0.1:8080]", "[env: OPINION_TOKEN", "[default: 3]", "[default: 0.05]"] {
        assert!(serve.contains(s), "serve help lacks {s}");
    }
}

#[test]
fn usage_errors_exit_1_with_usage() {
    for args in [
        vec!["train", "--arch", "cnn", "--embeddings", "e.vec"],
        vec!["train", "--arch", "transformer", "--corpus", "c.tsv", "--embeddings", "e.vec"],
        vec!["compare", "--corpus", "c.tsv", "--embeddings", "no-label.vec"],
        vec!["frobnicate"],
        vec![],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).contains("Usage"), "{args:?}: {}", stderr(&o));
    }
    assert!(stderr(&run(&["train", "--arch", "cnn", "--embeddings", "e.vec"])).contains("--corpus"));
}

#[test]
fn data_errors_exit_2_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, table) = synth(dir.path(), 40);

    let bad_table = dir.path().join("bad.vec");
    let mut body = fs::read_to_string(&table).unwrap();
    body.push_str(&format!("broken {} zz\n", vec!["0.1"; 15].join(" ")));
    fs::write(&bad_table, &body).unwrap();
    let line = body.lines().count().to_string();
    let o = run(&["train", "--arch", "cnn", "--corpus", p(&corpus), "--embeddings", p(&bad_table)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.vec") && err.contains(&format!("line {line}")) && err.contains("zz"), "{err}");

    let bad_corpus = dir.path().join("bad.tsv");
    fs::write(&bad_corpus, "a\t1\tfine\nb\t7\tnot a label\n").unwrap();
    let o = run(&["train", "--arch", "cnn", "--corpus", p(&bad_corpus), "--embeddings", p(&table)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let o = run(&["stats", "--corpus", p(&dir.path().join("missing.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn normalize_maps_lines_one_to_one() {
    let input = "خیلی لطف دارید 🌹\n\nسلاااام @ali http://t.co/x ۱۲۳ #خوب\nعالییییی!!! 😂😂\n";
    let o = run_with_stdin(&["normalize"], input);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        "خیلی لطف دارید rose\n\nسلام خوب\nعالی face_with_tears_of_joy face_with_tears_of_joy\n"
    );
    // Normalizing normalized output changes nothing.
    let again = run_with_stdin(&["normalize"], &stdout(&o));
    assert_eq!(stdout(&again), stdout(&o));
}

#[test]
fn train_is_deterministic_and_feeds_evaluate_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, table) = synth(dir.path(), 60);
    let train = |out: &Path| {
        ok_json(&run(&[
            "train", "--arch", "bilstm", "--corpus", p(&corpus), "--embeddings", p(&table), "--seed", "1", "--out",
            p(out), "--epochs", "2", "--hidden", "4", "--batch-size", "16",
        ]))
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let summary = train(&a);
    train(&b);
    assert_eq!(summary["split"], serde_json::json!({"train": 54, "test": 4, "val": 2}));
    for name in ["bilstm.checkpoint.json", "bilstm.metrics.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let trace = |d: &Path| without_seconds(&fs::read_to_string(d.join("bilstm.trace.csv")).unwrap());
    assert_eq!(trace(&a), trace(&b));
    assert_eq!(trace(&a).lines().count(), 3);

    let ckpt = a.join("bilstm.checkpoint.json");
    let eval = ok_json(&run(&["evaluate", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--embeddings", p(&table)]));
    assert_eq!(eval["metrics"]["total"], 60);

    let o = run_with_stdin(&["predict", "--checkpoint", p(&ckpt), "--embeddings", p(&table)], "یک\nدو سه\n");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for l in &lines {
        assert!([-1, 0, 1].contains(&l["label"].as_i64().unwrap()));
        let sum: f64 = l["probabilities"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    // A checkpoint is tied to the table it was trained with.
    let other = dir.path().join("other");
    ok_json(&run(&["synth", "--docs", "30", "--seed", "9", "--out", p(&other)]));
    let o = run(&["evaluate", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--embeddings", p(&other.join("embeddings.vec"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_writes_both_csvs_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, table) = synth(dir.path(), 60);
    let out = dir.path().join("grid");
    let args = [
        "compare", "--corpus", p(&corpus), "--embeddings", &format!("toy={}", p(&table)), "--arch", "cnn", "--arch",
        "lstm", "--out", p(&out), "--epochs", "1", "--filters", "4", "--batch-size", "16",
        "--arch", "bigru", "--width", "3",
    ];
    let first = ok_json(&run(&args));
    assert_eq!(first["cells"], 3);
    assert_eq!(first["failed"], serde_json::json!([]));
    let comparison = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(comparison.lines().next().unwrap(), "architecture,embedding_label,f1_macro,accuracy,mean_epoch_seconds");
    assert_eq!(comparison.lines().count(), 4);
    let timing = fs::read_to_string(out.join("timing.csv")).unwrap();
    assert_eq!(timing.lines().next().unwrap(), "architecture,embedding_label,epoch,seconds");
    assert_eq!(timing.lines().count(), 4);

    let second = ok_json(&run(&args));
    assert_eq!(second["reused"], 3);
    assert_eq!(fs::read_to_string(out.join("comparison.csv")).unwrap(), comparison);
}

fn write_posts(path: &Path) {
    let post = |id: &str, text: &str, comments: u64| {
        serde_json::json!({
            "id": id, "source": "instagram", "text": text, "author_id": "u", "timestamp": "2020-05-01T12:00:00Z",
            "like_count": 5, "comment_count": comments, "domain_tag": "food",
        })
        .to_string()
    };
    let lines = [
        post("p1", "خیلی لطف دارید 🌹", 3),
        post("p2", "ممنون", 3),
        "{not json".to_string(),
        post("p3", "بد بود 😡", 3),
        post("p1", "duplicate id", 3),
        post("p4", "کم", 0),
    ];
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn label_everything(store_path: &Path) {
    let mut store = CorpusStore::open(store_path).unwrap();
    let at = Utc.with_ymd_and_hms(2020, 5, 2, 9, 0, 0).unwrap();
    let plan = [("p1", [1, 1, 1]), ("p2", [0, 0, 1]), ("p3", [-1, 0, 1])];
    for (doc, labels) in plan {
        for (who, l) in ["a", "b", "c"].iter().zip(labels) {
            store
                .append_annotation(Annotation {
                    annotator_id: who.to_string(),
                    doc_id: doc.to_string(),
                    label: Polarity::from_value(l).unwrap(),
                    round: Round::One,
                    submitted_at: at,
                })
                .unwrap();
        }
    }
}

#[test]
fn corpus_pipeline_from_posts_to_gold_tsv() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.jsonl");
    let posts = dir.path().join("posts.jsonl");
    write_posts(&posts);

    let report = ok_json(&run(&["ingest", "--corpus", p(&store), "--input", p(&posts)]));
    assert_eq!(report["accepted"], 4);
    let lines: Vec<i64> = report["diagnostics"].as_array().unwrap().iter().map(|d| d["line"].as_i64().unwrap()).collect();
    assert_eq!(lines, [3, 5]);

    let sel = ok_json(&run(&["select", "--corpus", p(&store), "--min-comments", "1"]));
    assert_eq!(sel["selected_ids"], serde_json::json!(["p1", "p2", "p3"]));
    assert_eq!(sel["admitted"], 3);
    assert_eq!(ok_json(&run(&["select", "--corpus", p(&store), "--min-comments", "1"]))["admitted"], 0);

    let empty = ok_json(&run(&["stats", "--corpus", p(&store)]));
    assert_eq!(empty["class_counts"], serde_json::json!({"-1": 0, "0": 0, "1": 0}));
    assert_eq!(empty["skipped_unlabeled"], 3);

    label_everything(&store);
    let adj = ok_json(&run(&["adjudicate", "--corpus", p(&store)]));
    assert_eq!(adj["counts"], serde_json::json!({"gold": 2, "needs_round2": 1, "open": 0, "removed": 0}));
    assert_eq!(adj["documents"]["p1"]["provenance"], "unanimous_r1");
    assert_eq!(adj["documents"]["p2"]["provenance"], "majority_r1");

    let agreement = ok_json(&run(&["agreement", "--corpus", p(&store)]));
    assert_eq!(agreement["items"], 3);
    assert!(agreement["fleiss_kappa"].as_f64().unwrap() < 1.0);

    let stats = ok_json(&run(&["stats", "--corpus", p(&store)]));
    assert_eq!(stats["class_counts"], serde_json::json!({"-1": 0, "0": 1, "1": 1}));
    assert_eq!(stats["skipped_unlabeled"], 1);

    let gold = dir.path().join("gold.tsv");
    let anns = dir.path().join("annotations.jsonl");
    let ex = ok_json(&run(&["export", "--corpus", p(&store), "--out", p(&gold), "--annotations", p(&anns)]));
    assert_eq!(ex["gold"], 2);
    assert_eq!(fs::read_to_string(&gold).unwrap(), "p1\t1\tخیلی لطف دارید 🌹\np2\t0\tممنون\n");
    assert_eq!(fs::read_to_string(&anns).unwrap().lines().count(), 9);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn http(addr: &str, request: &str) -> Option<(u16, String)> {
    let mut s = TcpStream::connect(addr).ok()?;
    s.write_all(request.as_bytes()).ok()?;
    let mut resp = String::new();
    s.read_to_string(&mut resp).ok()?;
    let code = resp.split_whitespace().nth(1)?.parse().ok()?;
    let body = resp.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    Some((code, body))
}

fn get(addr: &str, path: &str, token: Option<&str>) -> Option<(u16, String)> {
    let auth = token.map(|t| format!("x-annotation-token: {t}\r\n")).unwrap_or_default();
    http(addr, &format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\n{auth}Connection: close\r\n\r\n"))
}

#[test]
fn serve_answers_over_http_with_the_env_token() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.jsonl");
    let posts = dir.path().join("posts.jsonl");
    write_posts(&posts);
    ok_json(&run(&["ingest", "--corpus", p(&store), "--input", p(&posts)]));
    ok_json(&run(&["select", "--corpus", p(&store)]));

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let _server = Server(
        opinion()
            .args(["serve", "--corpus", p(&store), "--bind", &addr, "--annotator", "ana"])
            .env("OPINION_TOKEN", "tok")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let deadline = Instant::now() + Duration::from_secs(20);
    let (code, _) = loop {
        if let Some(r) = get(&addr, "/api/guidelines", None) {
            break r;
        }
        assert!(Instant::now() < deadline, "server did not start");
        sleep(Duration::from_millis(50));
    };
    assert_eq!(code, 401);

    let (code, body) = get(&addr, "/api/task?annotator=ana", Some("tok")).unwrap();
    assert_eq!(code, 200);
    let task: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(task["doc_id"], "p1");
    assert_eq!(task["text"], "خیلی لطف دارید 🌹");

    let label = r#"{"annotator_id":"ana","doc_id":"p1","label":1}"#;
    let (code, _) = http(
        &addr,
        &format!(
            "POST /api/label HTTP/1.1\r\nHost: {addr}\r\nx-annotation-token: tok\r\ncontent-type: application/json\r\ncontent-length: {}\r\nConnection: close\r\n\r\n{label}",
            label.len()
        ),
    )
    .unwrap();
    assert_eq!(code, 201);
    // Acknowledged means on disk: a fresh reader of the log sees the label.
    assert_eq!(CorpusStore::open(&store).unwrap().annotations().len(), 1);
}
