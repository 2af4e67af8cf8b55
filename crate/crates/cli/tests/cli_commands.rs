mod common;

use std::fs;
use std::path::Path;

use common::{pair, run, snapshot, synthetic_documents, synthetic_pairs, write_jsonl};
use langadapt_core::corpus::{Document, Source};
use langadapt_core::metrics::SentencePair;
use langadapt_core::sft::Bucket;
use serde_json::Value;
use tempfile::TempDir;

const NO_TARGETS: &str = "prompt.italian = 0\nprompt.english = 0\nprompt.spanish = 0\nprompt.portuguese = 0\nprompt.french = 0\n";

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn read_lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn stderr_json(out: &std::process::Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().expect("stderr line")).expect("json error report")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn prep_corpus_empty_input_writes_zero_manifest() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("docs.jsonl");
    fs::write(&input, "").unwrap();
    let out = dir.path().join("out");
    let o = run(&["prep-corpus", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["chunks"], 0);
    assert_eq!(m["combined"]["documents"], 0);
    assert_eq!(m["combined"]["tokens"], 0);
    assert_eq!(fs::read_to_string(out.join("chunks.jsonl")).unwrap(), "");
}

#[test]
fn prep_corpus_malformed_line_names_line() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("docs.jsonl");
    let good = serde_json::to_string(&Document::new("a", "su cane", Source::Web)).unwrap();
    fs::write(&input, format!("{good}\n{good}\n{{not json\n")).unwrap();
    let o = run(&["prep-corpus", "--input", s(&input), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "parse");
    assert_eq!(e["line"], 3);
}

#[test]
fn prep_corpus_drops_duplicate() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("docs.jsonl");
    let docs = [
        Document::new("a", "sa domo est manna", Source::Web),
        Document::new("b", "su cane curret in sa bidda", Source::Books),
        Document::new("c", "  sa domo   est manna ", Source::Wikipedia),
    ];
    write_jsonl(&input, &docs);
    let out = dir.path().join("out");
    let o = run(&["prep-corpus", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["combined"]["documents"], 2);
    let drops = read_lines(&out.join("drop_log.jsonl"));
    assert_eq!(drops.len(), 1);
    assert_eq!(drops[0]["id"], "c");
}

#[test]
fn prep_corpus_window_flags_change_chunking() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("docs.jsonl");
    write_jsonl(&input, &synthetic_documents(30, 5));
    let small = dir.path().join("small");
    let o = run(&["prep-corpus", "--input", s(&input), "--window", "64", "--overlap", "8", "--out", s(&small)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for c in read_lines(&small.join("chunks.jsonl")) {
        assert!(c["token_ids"].as_array().unwrap().len() <= 64);
    }
    let bad = run(&["prep-corpus", "--input", s(&input), "--window", "64", "--overlap", "64", "--out", s(&small)]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn assemble_sft_reports_synthesized_additions() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("pairs.jsonl");
    let raw: Vec<_> = (0..422).map(|i| pair(format!("s{i}"), Bucket::Synthesized, format!("synth {i}"), "resposta".into())).collect();
    write_jsonl(&input, &raw);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, NO_TARGETS).unwrap();
    let out = dir.path().join("out");
    let o = run(&["assemble-sft", "--config", s(&cfg), "--input", s(&input), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["upsampled_additions"], 1688);
    assert_eq!(m["final_pairs"], 2110);
    assert_eq!(read_lines(&out.join("examples.jsonl")).len(), 2110);
}

#[test]
fn assemble_sft_unit_factors_keep_deduped_pool() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("pairs.jsonl");
    let mut raw = synthetic_pairs(120, 3);
    raw.push(raw[0].clone());
    write_jsonl(&input, &raw);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, NO_TARGETS).unwrap();
    let out = dir.path().join("out");
    let o = run(&["assemble-sft", "--config", s(&cfg), "--input", s(&input), "--upsample", "synthesized=1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["raw_pairs"], 121);
    assert_eq!(m["upsampled_additions"], 0);
    assert_eq!(m["final_pairs"], m["deduped_pairs"]);
    let hist: u64 = m["system_prompt_histogram"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(Value::from(hist), m["final_pairs"]);
}

#[test]
fn assemble_sft_infeasible_targets_fail() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("pairs.jsonl");
    write_jsonl(&input, &synthetic_pairs(20, 1));
    let o = run(&["assemble-sft", "--input", s(&input), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "validation");
}

#[test]
fn assemble_sft_literal_markers() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("pairs.jsonl");
    write_jsonl(&input, &synthetic_pairs(10, 9));
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, NO_TARGETS).unwrap();
    let (special, literal) = (dir.path().join("special"), dir.path().join("literal"));
    for (out, mode) in [(&special, "special"), (&literal, "literal")] {
        let o = run(&["assemble-sft", "--config", s(&cfg), "--input", s(&input), "--marker-mode", mode, "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let len = |p: &Path| read_lines(&p.join("examples.jsonl"))[0]["token_ids"].as_array().unwrap().len();
    assert!(len(&literal) > len(&special));
    let bad = run(&["assemble-sft", "--config", s(&cfg), "--input", s(&input), "--marker-mode", "fancy", "--out", s(&special)]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn eval_translate_identity_scores_hundred() {
    let dir = TempDir::new().unwrap();
    let text = "su cane curret in sa bidda .\nsa domo est manna , issu puru .\ncun issu in sa domo\n";
    let (hyp, reference) = (dir.path().join("hyp.txt"), dir.path().join("ref.txt"));
    fs::write(&hyp, text).unwrap();
    fs::write(&reference, text).unwrap();
    let out = dir.path().join("out");
    let o = run(&["eval-translate", "--hyp", s(&hyp), "--ref", s(&reference), "--resamples", "50", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_lines(&out.join("scores.jsonl"));
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r["value"], 100.0);
        assert_eq!(r["stderr"], 0.0);
        assert_eq!(r["n_resamples"], 50);
    }
    assert!(out.join("table.txt").exists());
}

#[test]
fn eval_translate_line_mismatch_fails() {
    let dir = TempDir::new().unwrap();
    let (hyp, reference) = (dir.path().join("hyp.txt"), dir.path().join("ref.txt"));
    fs::write(&hyp, "a\nb\n").unwrap();
    fs::write(&reference, "a\nb\nc\n").unwrap();
    let o = run(&["eval-translate", "--hyp", s(&hyp), "--ref", s(&reference), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_translate_groups_directions() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("pairs.jsonl");
    let mut pairs = Vec::new();
    for (i, d) in ["EN-to-SC", "SC-to-IT"].iter().enumerate() {
        for k in 0..5 {
            let mut p = SentencePair::new(format!("sa domo {k}"), format!("sa domo {} {k}", i));
            p.direction = d.to_string();
            pairs.push(p);
        }
    }
    write_jsonl(&input, &pairs);
    let out = dir.path().join("out");
    let o = run(&["eval-translate", "--input", s(&input), "--resamples", "20", "--format", "tsv", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_lines(&out.join("scores.jsonl"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0]["direction"], "EN-to-SC");
    assert_eq!(rows[3]["direction"], "SC-to-IT");
    assert!(out.join("table.tsv").exists());
}

#[test]
fn report_matches_golden_twice() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("rows.jsonl");
    write_jsonl(&input, &common::score_grid_rows());
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/scores_combined.txt")).unwrap();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let o = run(&["report", "--input", s(&input), "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(fs::read_to_string(out.join("table.txt")).unwrap(), golden);
    }
}

#[test]
fn ppl_normalize_single_value() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(&["ppl-normalize", "--ppl", "1.54", "--k", "3", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = &read_lines(&out.join("perplexity.jsonl"))[0];
    assert!((r["ppl_info"].as_f64().unwrap() - 3.652).abs() < 1e-3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("ppl_info 3.6523"));

    let o = run(&["ppl-normalize", "--ppl", "2.5", "--k", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let r = &read_lines(&out.join("perplexity.jsonl"))[0];
    assert_eq!(r["ppl_info"], r["ppl_token"]);

    let o = run(&["ppl-normalize", "--ppl", "0.9", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ppl_normalize_file_inputs() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("ppl.jsonl");
    fs::write(&input, "{\"token_count\": 100, \"total_nll_nats\": 43.2, \"k\": 2}\n{\"mean_nll\": 0.5}\n{\"ppl_token\": 1.54, \"k\": 3}\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["ppl-normalize", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_lines(&out.join("perplexity.jsonl"));
    assert_eq!(rows.len(), 3);
    let expected = (0.432f64 * 2.0).exp();
    assert!((rows[0]["ppl_info"].as_f64().unwrap() - expected).abs() < 1e-12);

    fs::write(&input, "{\"mean_nll\": 0.5}\n{\"mean_nll\": 0.5, \"ppl_token\": 2.0}\n").unwrap();
    let o = run(&["ppl-normalize", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["line"], 2);
}

#[test]
fn adapter_demo_single_cell_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        let o = run(&["adapter-demo", "--methods", "lora", "--ranks", "4", "--steps", "20", "--workers", workers, "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let files: Vec<_> = fs::read_dir(a.join("telemetry")).unwrap().collect();
    assert_eq!(files.len(), 1);
    assert_eq!(read_lines(&a.join("telemetry/lora-r4.jsonl")).len(), 20);
    assert_eq!(snapshot(&a), snapshot(&b));
}

#[test]
fn adapter_demo_summary_has_ratio_checks() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(&["adapter-demo", "--ranks", "4,16", "--steps", "5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(&out.join("summary.json"));
    let checks = summary["ratio_checks"].as_array().unwrap();
    assert_eq!(checks.len(), 2);
    assert!(checks.iter().all(|c| c["pass"] == true));
    assert_eq!(summary["cells"].as_array().unwrap().len(), 4);
}

#[test]
fn missing_input_is_io_error() {
    let dir = TempDir::new().unwrap();
    let o = run(&["prep-corpus", "--input", s(&dir.path().join("nope.jsonl")), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "io");
}

#[test]
fn usage_error_is_validation_exit() {
    let o = run(&["adapter-demo", "--steps", "many"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn flags_override_config_file_and_run_json_records_it() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seed = 7\nppl.k = 2\nppl.ppl_token = 1.5\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["ppl-normalize", "--config", s(&cfg), "--k", "3", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rec = read_json(&out.join("run.json"));
    assert_eq!(rec["command"], "ppl-normalize");
    assert_eq!(rec["config"]["seed"], 7);
    assert_eq!(rec["config"]["ppl"]["k"], 3.0);

    let o = run(&["ppl-normalize", "--config", s(&cfg), "--set", "seed=9", "--seed", "8", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read_json(&out.join("run.json"))["config"]["seed"], 9);

    fs::write(&cfg, "bogus = 1\n").unwrap();
    let o = run(&["ppl-normalize", "--config", s(&cfg), "--ppl", "2", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn output_root_from_environment() {
    let dir = TempDir::new().unwrap();
    let o = common::bin()
        .env("LANGADAPT_OUT", dir.path())
        .args(["ppl-normalize", "--ppl", "2.0"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("ppl-normalize/perplexity.jsonl").exists());
    assert!(dir.path().join("ppl-normalize/run.json").exists());
}
