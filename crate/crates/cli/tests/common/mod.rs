#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use langadapt_core::corpus::{Document, Source};
use langadapt_core::metrics::{Metric, ReportRow};
use langadapt_core::rng::Xoshiro256StarStar;
use langadapt_core::sft::{Bucket, InstructionPair, PromptLang, Role, Turn};
use serde::Serialize;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_langadapt"));
    c.env_remove("LANGADAPT_OUT");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) {
    let mut s = String::new();
    for i in items {
        s.push_str(&serde_json::to_string(i).unwrap());
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

const SC: [&str; 12] = ["sa", "domo", "est", "manna", "su", "cane", "curret", "in", "sa", "bidda", "cun", "issu"];
const IT: [&str; 8] = ["il", "cane", "della", "casa", "che", "sono", "anche", "nel"];
const EN: [&str; 8] = ["the", "dog", "and", "of", "is", "with", "that", "house"];

fn sentence(g: &mut Xoshiro256StarStar, words: &[&str], len: usize) -> String {
    (0..len).map(|_| words[g.next_index(words.len())]).collect::<Vec<_>>().join(" ")
}

/// Mixed-language documents with duplicates, replay text and poetry.
pub fn synthetic_documents(n: usize, seed: u64) -> Vec<Document> {
    let mut g = Xoshiro256StarStar::seed_from_u64(seed);
    let mut docs: Vec<Document> = Vec::with_capacity(n);
    for i in 0..n {
        let kind = g.next_index(10);
        let len = 20 + g.next_index(200);
        let doc = match kind {
            0 if i > 0 => {
                let j = g.next_index(docs.len());
                Document::new(format!("d{i}"), format!("  {}  ", docs[j].text), Source::Web)
            }
            1 => Document::new(format!("d{i}"), sentence(&mut g, &EN, len), Source::Web),
            2 => Document::new(format!("d{i}"), sentence(&mut g, &IT, len), Source::Replay),
            3 => {
                let lines: Vec<String> = (0..4).map(|_| sentence(&mut g, &SC, 6)).collect();
                Document::new(format!("d{i}"), lines.join("\n"), Source::Poetry)
            }
            _ => {
                let src = Source::ALL[g.next_index(4)];
                Document::new(format!("d{i}"), sentence(&mut g, &SC, len), src)
            }
        };
        docs.push(doc);
    }
    docs
}

pub fn pair(id: String, bucket: Bucket, user: String, assistant: String) -> InstructionPair {
    InstructionPair {
        id,
        turns: vec![Turn::new(Role::User, user), Turn::new(Role::Assistant, assistant)],
        bucket,
        system_prompt_lang: PromptLang::None,
    }
}

/// Raw pool with bucket sizes 10517, 2020, 448 and 142. 411 pairs are duplicates:
/// 300 within the first bucket, 85 within translation, and 26 synthesized
/// pairs that repeat first-bucket prompts.
pub fn bucket_pool_fixture() -> Vec<InstructionPair> {
    let mut raw = Vec::with_capacity(13_127);
    for i in 0..10_517 {
        let q = if i < 300 { format!("capybara {}", i + 1000) } else { format!("capybara {i}") };
        raw.push(pair(format!("c{i}"), Bucket::Capybara, q, "resposta".into()));
    }
    for i in 0..2_020 {
        let q = if i < 85 { format!("translate {}", i + 500) } else { format!("translate {i}") };
        raw.push(pair(format!("t{i}"), Bucket::Translation, q, "tradutzione".into()));
    }
    for i in 0..448 {
        let p = if i < 26 {
            pair(format!("s{i}"), Bucket::Synthesized, format!("capybara {}", 5000 + i), "resposta".into())
        } else {
            pair(format!("s{i}"), Bucket::Synthesized, format!("synth {i}"), "resposta".into())
        };
        raw.push(p);
    }
    for i in 0..142 {
        raw.push(pair(format!("g{i}"), Bucket::Song, format!("song {i}"), "cantone".into()));
    }
    raw
}

pub fn synthetic_pairs(n: usize, seed: u64) -> Vec<InstructionPair> {
    let mut g = Xoshiro256StarStar::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let bucket = Bucket::ALL[g.next_index(4)];
            let (ul, al) = (3 + g.next_index(8), 3 + g.next_index(20));
            let user = sentence(&mut g, &SC, ul);
            let answer = sentence(&mut g, &SC, al);
            pair(format!("p{i}"), bucket, user, answer)
        })
        .collect()
}

pub const TABLE_MODELS: [&str; 7] = ["Base", "CPT", "Full FT", "LoRA r64", "rsLoRA r128", "rsLoRA r256", "DoRA r256"];

/// Direction, then per model (BLEU, BLEU stderr, chrF).
pub const SCORE_GRID: [(&str, [(f64, f64, f64); 7]); 6] = [
    ("EN-to-SC", [(2.75, 0.19, 27.41), (17.26, 0.47, 47.81), (21.04, 0.43, 50.20), (23.60, 0.44, 53.09), (25.33, 0.47, 54.57), (28.47, 0.49, 56.80), (23.00, 0.47, 52.40)]),
    ("IT-to-SC", [(2.16, 0.17, 27.52), (12.71, 0.28, 44.83), (16.45, 0.36, 48.01), (18.52, 0.36, 50.13), (19.64, 0.38, 51.00), (21.25, 0.40, 52.08), (17.70, 0.38, 49.19)]),
    ("ES-to-SC", [(1.99, 0.14, 26.39), (11.36, 0.29, 43.35), (14.28, 0.36, 45.92), (16.23, 0.39, 47.66), (17.03, 0.35, 48.40), (18.57, 0.35, 49.41), (15.68, 0.36, 47.19)]),
    ("SC-to-EN", [(11.73, 0.40, 44.55), (33.52, 0.64, 62.78), (38.05, 0.75, 62.67), (39.61, 0.65, 63.59), (40.69, 0.70, 64.23), (41.28, 0.76, 64.64), (38.98, 0.66, 63.10)]),
    ("SC-to-IT", [(2.90, 0.10, 33.38), (16.53, 0.38, 48.83), (18.12, 0.41, 47.81), (16.46, 0.38, 45.80), (16.90, 0.38, 46.24), (17.61, 0.41, 47.25), (16.53, 0.34, 45.79)]),
    ("SC-to-ES", [(5.67, 0.21, 36.98), (19.31, 0.38, 47.76), (19.08, 0.41, 47.05), (18.62, 0.40, 46.35), (18.83, 0.41, 46.62), (18.57, 0.39, 46.27), (18.84, 0.42, 46.54)]),
];

pub fn score_grid_rows() -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for (direction, cells) in SCORE_GRID {
        for (model, (bleu, bleu_se, chrf)) in TABLE_MODELS.iter().zip(cells) {
            let row = |metric, value, stderr| ReportRow {
                model: model.to_string(),
                direction: direction.to_string(),
                metric,
                value,
                stderr,
                n_resamples: None,
                seed: None,
                warning: None,
            };
            rows.push(row(Metric::Bleu, bleu, Some(bleu_se)));
            rows.push(row(Metric::Chrf, chrf, None));
        }
    }
    rows
}
