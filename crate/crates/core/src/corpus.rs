//! Pretraining corpus preparation: normalization, language filtering,
//! exact deduplication, overlapping-window chunking, replay interleaving and
//! the corpus manifest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::normalize::{content_hash, normalize_text};
use crate::rng::{shuffle, Xoshiro256StarStar};
use crate::tokenize::{TokenId, Tokenizer};

pub const DEFAULT_WINDOW: usize = 4096;
pub const DEFAULT_OVERLAP: usize = 128;

/// Order in which the preparation stages run. Recorded in every manifest.
pub const PIPELINE_ORDER: [&str; 6] =
    ["normalize", "filter_language", "dedup", "interleave_replay", "tokenize", "chunk"];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("overlap {overlap} must be smaller than window {window}")]
    OverlapTooLarge { window: usize, overlap: usize },
    #[error("cannot chunk an empty token sequence")]
    EmptyDocument,
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Web,
    Wikipedia,
    Glotcc,
    Books,
    Poetry,
    Bilingual,
    Replay,
}

impl Source {
    pub const ALL: [Source; 7] = [
        Source::Web,
        Source::Wikipedia,
        Source::Glotcc,
        Source::Books,
        Source::Poetry,
        Source::Bilingual,
        Source::Replay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Web => "web",
            Source::Wikipedia => "wikipedia",
            Source::Glotcc => "glotcc",
            Source::Books => "books",
            Source::Poetry => "poetry",
            Source::Bilingual => "bilingual",
            Source::Replay => "replay",
        }
    }

    pub fn is_replay(self) -> bool {
        self == Source::Replay
    }

    /// Poetry keeps its line breaks through normalization.
    pub fn preserves_linebreaks(self) -> bool {
        self == Source::Poetry
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang_hint: Option<String>,
    /// Set at ingestion for dictionary-template pages, which are removed.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub dictionary_template: bool,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, source: Source) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            source,
            lang_hint: None,
            dictionary_template: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Language filtering

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Sardinian,
    Italian,
    Spanish,
    Portuguese,
    Catalan,
    English,
    German,
    French,
    Unknown,
}

impl Language {
    /// Accepts ISO 639-1/639-3 codes and English names, case-insensitively.
    pub fn parse(label: &str) -> Language {
        match label.trim().to_ascii_lowercase().as_str() {
            "sc" | "srd" | "sardinian" => Language::Sardinian,
            "it" | "ita" | "italian" => Language::Italian,
            "es" | "spa" | "spanish" => Language::Spanish,
            "pt" | "por" | "portuguese" => Language::Portuguese,
            "ca" | "cat" | "catalan" => Language::Catalan,
            "en" | "eng" | "english" => Language::English,
            "de" | "deu" | "ger" | "german" => Language::German,
            "fr" | "fra" | "fre" | "french" => Language::French,
            _ => Language::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Language::Sardinian => "sardinian",
            Language::Italian => "italian",
            Language::Spanish => "spanish",
            Language::Portuguese => "portuguese",
            Language::Catalan => "catalan",
            Language::English => "english",
            Language::German => "german",
            Language::French => "french",
            Language::Unknown => "unknown",
        }
    }

    /// Labels whose documents are removed. Sardinian is routinely
    /// misclassified as a neighbouring Romance language, so those are kept.
    pub fn is_rejected(self) -> bool {
        matches!(self, Language::English | Language::German | Language::French)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: Language,
    pub confidence: f64,
}

#[derive(Debug, thiserror::Error)]
#[error("classifier failed: {0}")]
pub struct ClassifierError(pub String);

/// Language identification backend.
pub trait LanguageClassifier: Sync {
    fn classify(&self, text: &str) -> Result<Classification, ClassifierError>;
}

/// Stop-word vote classifier. Picks the language whose marker words occur
/// most often; ties and texts without any marker are [`Language::Unknown`].
#[derive(Debug, Clone)]
pub struct MarkerClassifier {
    markers: Vec<(Language, Vec<&'static str>)>,
}

impl Default for MarkerClassifier {
    fn default() -> Self {
        let markers = vec![
            (Language::Sardinian, vec!["sa", "su", "sos", "sas", "est", "cun", "issu", "custu", "bator", "chi", "fiat", "limba"]),
            (Language::Italian, vec!["il", "della", "che", "sono", "gli", "questo", "essere", "anche", "nel"]),
            (Language::Spanish, vec!["el", "los", "las", "que", "del", "pero", "está", "muy", "también", "es"]),
            (Language::Portuguese, vec!["os", "não", "uma", "também", "muito", "está", "são", "ao", "pelo"]),
            (Language::Catalan, vec!["els", "amb", "però", "molt", "també", "aquest", "és", "dels"]),
            (Language::English, vec!["the", "and", "of", "is", "with", "that", "this", "are", "was", "which"]),
            (Language::German, vec!["der", "die", "und", "das", "nicht", "ist", "mit", "ein", "eine", "auch"]),
            (Language::French, vec!["le", "les", "des", "et", "est", "une", "pas", "dans", "pour", "avec"]),
        ];
        Self { markers }
    }
}

impl LanguageClassifier for MarkerClassifier {
    fn classify(&self, text: &str) -> Result<Classification, ClassifierError> {
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        if words.is_empty() {
            return Ok(Classification { label: Language::Unknown, confidence: 0.0 });
        }
        let mut scores: Vec<(Language, usize)> = self
            .markers
            .iter()
            .map(|(lang, list)| {
                (*lang, words.iter().filter(|w| list.contains(&w.as_str())).count())
            })
            .collect();
        scores.sort_by_key(|s| std::cmp::Reverse(s.1));
        let total: usize = scores.iter().map(|s| s.1).sum();
        let (best, hits) = scores[0];
        if hits == 0 || scores[1].1 == hits {
            return Ok(Classification { label: Language::Unknown, confidence: 0.0 });
        }
        Ok(Classification { label: best, confidence: hits as f64 / total as f64 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOutcome {
    Keep,
    KeepWithWarning,
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDecision {
    pub outcome: FilterOutcome,
    pub label: Language,
    pub confidence: f64,
    pub warning: Option<String>,
}

impl FilterDecision {
    pub fn keeps(&self) -> bool {
        self.outcome != FilterOutcome::Drop
    }
}

/// Keeps Romance and unknown labels, drops English, German and French.
/// A `lang_hint` on the document is treated as a precomputed classification.
/// Classifier failures keep the document with a warning.
pub fn filter_language(doc: &Document, classifier: &dyn LanguageClassifier) -> FilterDecision {
    let classified = match &doc.lang_hint {
        Some(hint) => Ok(Classification { label: Language::parse(hint), confidence: 1.0 }),
        None => classifier.classify(&doc.text),
    };
    match classified {
        Ok(c) if c.label.is_rejected() => FilterDecision {
            outcome: FilterOutcome::Drop,
            label: c.label,
            confidence: c.confidence,
            warning: None,
        },
        Ok(c) if c.label == Language::Unknown => FilterDecision {
            outcome: FilterOutcome::KeepWithWarning,
            label: c.label,
            confidence: c.confidence,
            warning: Some("language unknown or ambiguous".into()),
        },
        Ok(c) => FilterDecision {
            outcome: FilterOutcome::Keep,
            label: c.label,
            confidence: c.confidence,
            warning: None,
        },
        Err(e) => FilterDecision {
            outcome: FilterOutcome::KeepWithWarning,
            label: Language::Unknown,
            confidence: 0.0,
            warning: Some(e.to_string()),
        },
    }
}

// ---------------------------------------------------------------------------
// Deduplication

/// One line of the drop log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub id: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept_id: Option<String>,
}

/// Keeps the first document for each normalized-text hash. Input texts are
/// expected to be normalized already; the hash is taken over them as given.
pub fn dedup_documents(docs: Vec<Document>) -> (Vec<Document>, Vec<DropRecord>) {
    dedup_by_key(docs, |d| content_hash(&d.text), |d| d.id.clone())
}

pub(crate) fn dedup_by_key<T>(
    items: Vec<T>,
    key: impl Fn(&T) -> String + Sync,
    id: impl Fn(&T) -> String,
) -> (Vec<T>, Vec<DropRecord>)
where
    T: Sync,
{
    let keys: Vec<String> = items.par_iter().map(&key).collect();
    let mut first_seen: HashMap<String, String> = HashMap::new();
    let mut kept = Vec::new();
    let mut log = Vec::new();
    for (item, k) in items.into_iter().zip(keys) {
        match first_seen.get(&k) {
            Some(kept_id) => log.push(DropRecord {
                id: id(&item),
                reason: "duplicate".into(),
                kept_id: Some(kept_id.clone()),
            }),
            None => {
                first_seen.insert(k, id(&item));
                kept.push(item);
            }
        }
    }
    (kept, log)
}

// ---------------------------------------------------------------------------
// Chunking

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenChunk {
    pub doc_id: String,
    pub index: usize,
    #[serde(rename = "start")]
    pub start_offset: usize,
    #[serde(rename = "end")]
    pub end_offset: usize,
    pub token_ids: Vec<TokenId>,
}

/// Windows of at most `window` tokens starting at multiples of
/// `window - overlap`. The last window ends exactly at the document end, and
/// no window is emitted whose span is already covered by its predecessor.
pub fn chunk_document(
    doc_id: &str,
    token_ids: &[TokenId],
    window: usize,
    overlap: usize,
) -> Result<Vec<TokenChunk>, CorpusError> {
    if overlap >= window {
        return Err(CorpusError::OverlapTooLarge { window, overlap });
    }
    if token_ids.is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    let stride = window - overlap;
    let len = token_ids.len();
    let mut chunks = Vec::with_capacity(len.div_ceil(stride));
    let mut start = 0;
    loop {
        let end = (start + window).min(len);
        chunks.push(TokenChunk {
            doc_id: doc_id.to_string(),
            index: chunks.len(),
            start_offset: start,
            end_offset: end,
            token_ids: token_ids[start..end].to_vec(),
        });
        if end == len {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

// ---------------------------------------------------------------------------
// Replay interleaving

/// Concatenates Sardinian then replay documents and shuffles the result at
/// document level. Documents are passed through untouched.
pub fn interleave_replay<T>(sardinian: Vec<T>, replay: Vec<T>, seed: u64) -> Vec<T> {
    let mut all = sardinian;
    all.extend(replay);
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    shuffle(&mut all, &mut rng);
    all
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketStats {
    pub documents: usize,
    pub tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    /// Keyed by source label; every source appears, including empty ones.
    pub buckets: BTreeMap<String, BucketStats>,
    pub total_sardinian: BucketStats,
    pub replay: BucketStats,
    pub combined: BucketStats,
    pub chunks: usize,
    /// Documents longer than the window, i.e. split into several chunks.
    pub documents_chunked: usize,
    pub tokenizer: String,
    pub pipeline_order: Vec<String>,
    /// Counts of dropped documents by reason.
    pub dropped: BTreeMap<String, usize>,
}

impl CorpusManifest {
    pub fn check_invariants(&self) -> bool {
        let docs: usize = self.buckets.values().map(|b| b.documents).sum();
        let toks: usize = self.buckets.values().map(|b| b.tokens).sum();
        docs == self.combined.documents
            && toks == self.combined.tokens
            && self.combined.tokens == self.total_sardinian.tokens + self.replay.tokens
            && self.combined.documents == self.total_sardinian.documents + self.replay.documents
    }
}

pub fn corpus_stats(docs: &[Document], chunks: &[TokenChunk], tokenizer: &Tokenizer) -> CorpusManifest {
    let mut buckets: BTreeMap<String, BucketStats> =
        Source::ALL.iter().map(|s| (s.as_str().to_string(), BucketStats::default())).collect();
    let counts: Vec<usize> = docs.par_iter().map(|d| tokenizer.count_tokens(&d.text)).collect();
    let mut sardinian = BucketStats::default();
    let mut replay = BucketStats::default();
    for (doc, tokens) in docs.iter().zip(counts) {
        let b = buckets.get_mut(doc.source.as_str()).expect("all sources present");
        b.documents += 1;
        b.tokens += tokens;
        let agg = if doc.source.is_replay() { &mut replay } else { &mut sardinian };
        agg.documents += 1;
        agg.tokens += tokens;
    }
    let mut per_doc: HashMap<&str, usize> = HashMap::new();
    for c in chunks {
        *per_doc.entry(c.doc_id.as_str()).or_default() += 1;
    }
    CorpusManifest {
        buckets,
        combined: BucketStats {
            documents: sardinian.documents + replay.documents,
            tokens: sardinian.tokens + replay.tokens,
        },
        total_sardinian: sardinian,
        replay,
        chunks: chunks.len(),
        documents_chunked: per_doc.values().filter(|&&n| n > 1).count(),
        tokenizer: tokenizer.name().to_string(),
        pipeline_order: PIPELINE_ORDER.iter().map(|s| s.to_string()).collect(),
        dropped: BTreeMap::new(),
    }
}

// ---------------------------------------------------------------------------
// Whole pipeline

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepOptions {
    pub window: usize,
    pub overlap: usize,
    pub dedup: bool,
    pub seed: u64,
}

impl Default for PrepOptions {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW, overlap: DEFAULT_OVERLAP, dedup: true, seed: crate::rng::DEFAULT_SEED }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    /// Kept documents in final (interleaved) order.
    pub documents: Vec<Document>,
    pub chunks: Vec<TokenChunk>,
    pub drop_log: Vec<DropRecord>,
    pub warnings: Vec<String>,
    pub manifest: CorpusManifest,
}

/// Runs normalize → filter → dedup → interleave → tokenize → chunk.
///
/// Per-document stages run on the current rayon pool; order-sensitive stages
/// run sequentially over input order, so the result does not depend on the
/// number of worker threads.
pub fn prepare_corpus(
    docs: Vec<Document>,
    classifier: &dyn LanguageClassifier,
    tokenizer: &Tokenizer,
    opts: &PrepOptions,
) -> Result<PreparedCorpus, CorpusError> {
    if opts.overlap >= opts.window {
        return Err(CorpusError::OverlapTooLarge { window: opts.window, overlap: opts.overlap });
    }
    let mut seen = HashSet::new();
    for d in &docs {
        if !seen.insert(d.id.as_str()) {
            return Err(CorpusError::DuplicateId(d.id.clone()));
        }
    }

    let staged: Vec<(Document, Result<FilterDecision, &'static str>)> = docs
        .into_par_iter()
        .map(|mut d| {
            if d.dictionary_template {
                return (d, Err("dictionary_template"));
            }
            d.text = normalize_text(&d.text, d.source.preserves_linebreaks());
            if d.text.is_empty() {
                return (d, Err("empty_after_normalization"));
            }
            let decision = filter_language(&d, classifier);
            (d, Ok(decision))
        })
        .collect();

    let mut drop_log = Vec::new();
    let mut warnings = Vec::new();
    let mut survivors = Vec::new();
    for (doc, decision) in staged {
        match decision {
            Err(reason) => drop_log.push(DropRecord { id: doc.id, reason: reason.into(), kept_id: None }),
            Ok(dec) if !dec.keeps() => drop_log.push(DropRecord {
                id: doc.id,
                reason: format!("language:{}", dec.label.as_str()),
                kept_id: None,
            }),
            Ok(dec) => {
                if let Some(w) = dec.warning {
                    warnings.push(format!("{}: {w}", doc.id));
                }
                survivors.push(doc);
            }
        }
    }

    let survivors = if opts.dedup {
        let (kept, log) = dedup_documents(survivors);
        drop_log.extend(log);
        kept
    } else {
        survivors
    };

    let (replay, sardinian): (Vec<Document>, Vec<Document>) =
        survivors.into_iter().partition(|d| d.source.is_replay());
    let documents = interleave_replay(sardinian, replay, opts.seed);

    let per_doc: Vec<Vec<TokenChunk>> = documents
        .par_iter()
        .map(|d| chunk_document(&d.id, &tokenizer.encode(&d.text), opts.window, opts.overlap))
        .collect::<Result<_, _>>()?;
    let chunks: Vec<TokenChunk> = per_doc.into_iter().flatten().collect();

    let mut manifest = corpus_stats(&documents, &chunks, tokenizer);
    for rec in &drop_log {
        let key = rec.reason.clone();
        *manifest.dropped.entry(key).or_default() += 1;
    }
    Ok(PreparedCorpus { documents, chunks, drop_log, warnings, manifest })
}
