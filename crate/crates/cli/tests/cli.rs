//! End-to-end runs of the `radgraph-eval` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const CONTRAST_GT: &str = "there are increased interstitial markings without evidence of focal airspace disease";
const CONTRAST_GEN: &str = "there are increased interstitial markings with evidence of focal airspace disease";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_radgraph-eval"));
    c.env_remove("RADGRAPH_EVAL_GRAPH");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json_line(id: &str, gt: &str, gen: &str) -> String {
    serde_json::json!({"id": id, "gt": gt, "gen": gen}).to_string()
}

fn json_lines(o: &Output) -> Vec<Value> {
    stdout(o).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn record<'a>(lines: &'a [Value], id: &str) -> &'a Value {
    lines
        .iter()
        .find(|v| v["type"] == "record" && v["id"] == id)
        .unwrap_or_else(|| panic!("no record {id}"))
}

#[test]
fn identical_pair_scores_one() {
    let dir = TempDir::new().unwrap();
    let text = "the heart is enlarged. small left pleural effusion.";
    let corpus = write(&dir, "c.jsonl", &json_line("same", text, text));
    let o = run(&["score", &corpus, "--format", "json-lines"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines = json_lines(&o);
    let r = record(&lines, "same");
    assert_eq!(r["bleu1"].as_f64(), Some(1.0));
    assert_eq!(r["rouge_l"].as_f64(), Some(1.0));
    assert_eq!(r["mirqi_f1"].as_f64(), Some(1.0));
}

#[test]
fn negation_contrast_separates_bleu_and_mirqi() {
    let dir = TempDir::new().unwrap();
    let corpus = write(&dir, "c.tsv", &format!("id\tgt\tgen\ncontrast\t{CONTRAST_GT}\t{CONTRAST_GEN}\n"));
    let o = run(&["score", &corpus, "--format", "json-lines"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines = json_lines(&o);
    let r = record(&lines, "contrast");
    assert!((r["bleu1"].as_f64().unwrap() - 10.0 / 11.0).abs() < 1e-9);
    assert!((r["mirqi_f1"].as_f64().unwrap() - 0.32).abs() < 1e-9);
    assert!((r["mirqi_r"].as_f64().unwrap() - 0.8).abs() < 1e-9);
    assert!((r["mirqi_p"].as_f64().unwrap() - 0.2).abs() < 1e-9);
}

#[test]
fn text_output_is_four_decimal_table() {
    let dir = TempDir::new().unwrap();
    let corpus = write(&dir, "c.jsonl", &json_line("contrast", CONTRAST_GT, CONTRAST_GEN));
    let o = run(&["score", &corpus]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let row = out.lines().find(|l| l.starts_with("contrast\t")).unwrap();
    let cols: Vec<&str> = row.split('\t').collect();
    assert_eq!(cols[1], "0.9091");
    assert_eq!(cols[9], "0.3200");
}

#[test]
fn literal_f1_flag_halves_perfect_agreement() {
    let dir = TempDir::new().unwrap();
    let corpus = write(&dir, "c.jsonl", &json_line("a", "small pleural effusion.", "small pleural effusion."));
    let o = run(&["score", &corpus, "--format", "json-lines", "--f1-literal"]);
    let lines = json_lines(&o);
    assert_eq!(record(&lines, "a")["mirqi_f1"].as_f64(), Some(0.5));
    assert_eq!(lines[0]["f1_mode"], "literal");
}

#[test]
fn empty_corpus_is_input_error() {
    let dir = TempDir::new().unwrap();
    let corpus = write(&dir, "empty.jsonl", "\n\n");
    let o = run(&["score", &corpus]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty corpus"));
    assert!(stdout(&o).is_empty());
}

#[test]
fn missing_field_names_the_line() {
    let dir = TempDir::new().unwrap();
    let text = format!("{}\n\n{{\"id\":\"b\",\"gt\":\"no effusion.\"}}\n", json_line("a", "x", "y"));
    let corpus = write(&dir, "c.jsonl", &text);
    let o = run(&["score", &corpus]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("gen"), "{err}");

    let corpus = write(&dir, "c.tsv", "a\tno effusion.\n");
    let o = run(&["score", &corpus]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"));
}

#[test]
fn unreadable_parse_file_is_named() {
    let dir = TempDir::new().unwrap();
    let line = r#"{"id":"a","gt":"no effusion.","gen":"no effusion.","gt_parse":"missing-a.conllu"}"#;
    let corpus = write(&dir, "c.jsonl", line);
    let o = run(&["score", &corpus]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing-a.conllu"), "{}", stderr(&o));
}

#[test]
fn missing_corpus_file_is_input_error() {
    let o = run(&["score", "/nonexistent/corpus.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/corpus.jsonl"));
}

#[test]
fn bad_weights_are_input_error() {
    let o = run(&["score", fixture("corpus.jsonl").to_str().unwrap(), "--w-pos", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_is_byte_identical_across_runs_and_job_counts() {
    let corpus = fixture("corpus.jsonl");
    let corpus = corpus.to_str().unwrap();
    let serial = run(&["score", corpus, "--format", "json-lines", "--jobs", "1"]);
    let parallel = run(&["score", corpus, "--format", "json-lines", "--jobs", "4"]);
    let again = run(&["score", corpus, "--format", "json-lines", "--jobs", "4"]);
    assert_eq!(serial.status.code(), Some(0));
    assert_eq!(serial.stdout, parallel.stdout);
    assert_eq!(parallel.stdout, again.stdout);
    let ids: Vec<String> = json_lines(&serial)
        .iter()
        .filter(|v| v["type"] == "record")
        .map(|v| v["id"].as_str().unwrap().to_string())
        .collect();
    let expected: Vec<String> = (1..=20).map(|i| format!("cxr-{i:03}")).collect();
    assert_eq!(ids, expected);
}

#[test]
fn config_echo_round_trips_the_flags() {
    let dir = TempDir::new().unwrap();
    let corpus = write(&dir, "c.jsonl", &json_line("a", CONTRAST_GT, CONTRAST_GEN));
    let parses = dir.path().join("parses");
    fs::create_dir(&parses).unwrap();
    let lexicon = write(&dir, "lex.tsv", "effusion\teffusion\nairspace disease\tairspace disease\n");
    let flags = [
        "--w-pos",
        "0.7",
        "--w-attr",
        "0.1",
        "--f1-literal",
        "--uncertain-as",
        "negative",
        "--lexicon",
        &lexicon,
        "--parses",
        parses.to_str().unwrap(),
        "--seed",
        "11",
    ];
    let mut args = vec!["score", &corpus, "--format", "json-lines"];
    args.extend(flags);
    let first = run(&args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let config = json_lines(&first)[0].clone();
    assert_eq!(config["type"], "config");
    assert_eq!(config["w_pos"].as_f64(), Some(0.7));
    assert_eq!(config["w_attr"].as_f64(), Some(0.1));
    assert_eq!(config["f1_mode"], "literal");
    assert_eq!(config["uncertain_as"], "negative");
    assert_eq!(config["seed"].as_u64(), Some(11));
    assert_eq!(config["lexicon"]["source"].as_str(), Some(lexicon.as_str()));
    let lexicon_text = fs::read(&lexicon).unwrap();
    assert_eq!(
        config["lexicon"]["sha256"].as_str().unwrap(),
        radgraph_eval::resources::sha256_hex(&lexicon_text)
    );
    assert_eq!(config["graph"]["source"], "default");

    // rebuild the command line from the echo alone and compare outputs
    let w_pos = config["w_pos"].to_string();
    let w_attr = config["w_attr"].to_string();
    let seed = config["seed"].to_string();
    let mut rebuilt = vec![
        "score".to_string(),
        corpus.clone(),
        "--format".into(),
        "json-lines".into(),
        "--w-pos".into(),
        w_pos,
        "--w-attr".into(),
        w_attr,
        "--uncertain-as".into(),
        config["uncertain_as"].as_str().unwrap().into(),
        "--lexicon".into(),
        config["lexicon"]["source"].as_str().unwrap().into(),
        "--parses".into(),
        config["parses"].as_str().unwrap().into(),
        "--seed".into(),
        seed,
    ];
    if config["f1_mode"] == "literal" {
        rebuilt.push("--f1-literal".into());
    }
    let second = bin().args(&rebuilt).output().unwrap();
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn graph_environment_variable_is_used_and_echoed() {
    let dir = TempDir::new().unwrap();
    let spec = "[[categories]]\nname = \"effusion\"\n\n[[categories]]\nname = \"pneumothorax\"\n";
    let graph = write(&dir, "g.toml", spec);
    let lexicon = write(&dir, "lex.tsv", "effusion\teffusion\npneumothorax\tpneumothorax\n");
    let corpus = write(&dir, "c.jsonl", &json_line("a", "no effusion.", "small effusion."));
    let o = bin()
        .env("RADGRAPH_EVAL_GRAPH", &graph)
        .args(["score", &corpus, "--format", "json-lines", "--lexicon", &lexicon])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json_lines(&o)[0]["graph"]["source"].as_str(), Some(graph.as_str()));

    let stats = bin().env("RADGRAPH_EVAL_GRAPH", &graph).args(["graph", "stats"]).output().unwrap();
    assert!(stdout(&stats).contains("nodes\t3\n"), "{}", stdout(&stats));
    let bad = bin().env("RADGRAPH_EVAL_GRAPH", "/nonexistent.toml").args(["graph", "stats"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn parse_prints_entity_records() {
    let o = run(&["parse", "--text", "No pneumothorax."]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "[\"pneumothorax\",\"pneumothorax\",\"negative\",[]]\n");

    let o = run(&["parse", "--text", ""]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());

    let dir = TempDir::new().unwrap();
    let empty = write(&dir, "empty.txt", "");
    let o = run(&["parse", &empty]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());
}

#[test]
fn parse_with_conllu_fixture() {
    let o = run(&[
        "parse",
        fixture("lingula.txt").to_str().unwrap(),
        "--conllu",
        fixture("lingula.conllu").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v, serde_json::json!(["airspace disease", "airspace disease", "positive", ["lingula", "minimal", "patchy"]]));
}

#[test]
fn parse_errors() {
    let o = run(&["parse", "/nonexistent/report.txt"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["parse", "--text", "no effusion.", "--conllu", "/nonexistent/p.conllu"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/p.conllu"));
    // the parse has a different sentence than the text
    let o = run(&["parse", "--text", "no effusion.", "--conllu", fixture("lingula.conllu").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn parse_directory_convention_is_used() {
    let dir = TempDir::new().unwrap();
    let parses = dir.path().join("parses");
    fs::create_dir(&parses).unwrap();
    fs::copy(fixture("lingula.conllu"), parses.join("f.gt.conllu")).unwrap();
    let text = "there is minimal patchy airspace disease in the lingula";
    let corpus = write(&dir, "c.jsonl", &json_line("f", text, text));
    let o = run(&["score", &corpus, "--format", "json-lines", "--parses", parses.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(record(&json_lines(&o), "f")["mirqi_f1"].as_f64(), Some(1.0));

    fs::write(parses.join("f.gen.conllu"), "1\tbroken\n").unwrap();
    let o = run(&["score", &corpus, "--parses", parses.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("f.gen.conllu"));
}

#[test]
fn graph_dump_formats() {
    let o = run(&["graph", "dump", "--format", "matrix"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 21);
    for row in &rows {
        let values: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(values.len(), 21);
        assert!(values.iter().all(|v| v.split('.').nth(1).map(str::len) == Some(6)), "{row}");
    }
    let o = run(&["graph", "dump", "--format", "edges", "--laplacian"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().count() >= 20);
}

#[test]
fn nn_gradcheck_passes_at_seed_7() {
    let o = run(&["nn", "gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    for component in ["classification", "decoder", "decoder-literal"] {
        let line = out.lines().find(|l| l.starts_with(&format!("{component}\t"))).unwrap();
        let err: f64 = line
            .split('\t')
            .find_map(|f| f.strip_prefix("max_rel_error="))
            .unwrap()
            .parse()
            .unwrap();
        assert!(err < 1e-4, "{line}");
    }
}

#[test]
fn nn_checkpoint_generation_round_trip() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let corpus = fixture("corpus.jsonl");
    let o = run(&["nn", "vocab", corpus.to_str().unwrap(), "--out", &p("v.txt"), "--min-count", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(&[
        "nn", "init", "--out", &p("zero.ck"), "--vocab", &p("v.txt"), "--in-channels", "16", "--hidden", "8", "--zero",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for seed in ["1", "2"] {
        let o = run(&["nn", "synth", "--out", &p(&format!("f{seed}.rgt")), "--channels", "16", "--side", "3", "--seed", seed]);
        assert_eq!(o.status.code(), Some(0));
    }
    let generate = |ck: &str| {
        run(&["nn", "generate", "--checkpoint", ck, "--vocab", &p("v.txt"), "--features", &p("f1.rgt"), "--features", &p("f2.rgt")])
    };
    let a = generate(&p("zero.ck"));
    let b = generate(&p("zero.ck"));
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout(&a).lines().count(), 2);

    let o = run(&[
        "nn", "init", "--out", &p("two.ck"), "--vocab", &p("v.txt"), "--in-channels", "16", "--hidden", "8", "--views", "2",
        "--seed", "5",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let o = generate(&p("two.ck"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn nn_generate_input_errors() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    fs::write(p("v.txt"), "<pad>\n<start>\n<end>\n<unknown>\neffusion\n").unwrap();
    assert_eq!(run(&["nn", "synth", "--out", &p("f.rgt"), "--channels", "4", "--side", "2"]).status.code(), Some(0));
    let o = run(&["nn", "generate", "--checkpoint", &p("none.ck"), "--vocab", &p("v.txt"), "--features", &p("f.rgt")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("none.ck"));

    assert_eq!(
        run(&["nn", "init", "--out", &p("m.ck"), "--vocab", &p("v.txt"), "--in-channels", "4", "--hidden", "4"]).status.code(),
        Some(0)
    );
    let mut bytes = fs::read(p("f.rgt")).unwrap();
    bytes[0] = b'X';
    fs::write(p("bad.rgt"), &bytes).unwrap();
    let o = run(&["nn", "generate", "--checkpoint", &p("m.ck"), "--vocab", &p("v.txt"), "--features", &p("bad.rgt")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.rgt"));

    let o = run(&["nn", "generate", "--checkpoint", &p("v.txt"), "--vocab", &p("v.txt"), "--features", &p("f.rgt")]);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(run(&["nn", "synth", "--out", &p("wide.rgt"), "--channels", "6", "--side", "2"]).status.code(), Some(0));
    let o = run(&["nn", "generate", "--checkpoint", &p("m.ck"), "--vocab", &p("v.txt"), "--features", &p("wide.rgt")]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
