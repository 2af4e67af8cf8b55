//! Instruction-pool assembly: deduplication, bucket upsampling, system-prompt
//! assignment, ChatML serialization with completion-only loss masks, and the
//! pool manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{dedup_by_key, DropRecord};
use crate::normalize::{content_hash, normalize_text};
use crate::rng::{shuffle, Xoshiro256StarStar};
use crate::tokenize::{TokenId, Tokenizer};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SftError {
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("pair {id}: {reason}")]
    Malformed { id: String, reason: String },
    #[error("upsample factor must be at least 1")]
    ZeroFactor,
    #[error("prompt targets need {needed} pairs but the pool has {available}")]
    InfeasibleTargets { needed: usize, available: usize },
    #[error("{0} cannot be given an explicit target; it receives the remainder")]
    RemainderLanguageTargeted(PromptLang),
    #[error("no-prompt share {0} must lie in [0, 1]")]
    BadShare(f64),
    #[error("tokenizer {tokenizer} has no special token {marker}")]
    MissingSpecial { tokenizer: String, marker: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl FromStr for Role {
    type Err = SftError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "system" => Ok(Role::System),
            "user" => Ok(Role::User),
            "assistant" => Ok(Role::Assistant),
            other => Err(SftError::UnknownRole(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Capybara,
    Translation,
    Synthesized,
    Song,
}

impl Bucket {
    pub const ALL: [Bucket; 4] = [Bucket::Capybara, Bucket::Translation, Bucket::Synthesized, Bucket::Song];

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Capybara => "capybara",
            Bucket::Translation => "translation",
            Bucket::Synthesized => "synthesized",
            Bucket::Song => "song",
        }
    }
}

impl FromStr for Bucket {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Bucket::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown bucket {s:?}"))
    }
}

/// Language of the system prompt attached to a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PromptLang {
    Sardinian,
    Italian,
    English,
    Spanish,
    Portuguese,
    French,
    #[default]
    None,
}

impl PromptLang {
    pub const ALL: [PromptLang; 7] = [
        PromptLang::Sardinian,
        PromptLang::Italian,
        PromptLang::English,
        PromptLang::Spanish,
        PromptLang::Portuguese,
        PromptLang::French,
        PromptLang::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptLang::Sardinian => "sardinian",
            PromptLang::Italian => "italian",
            PromptLang::English => "english",
            PromptLang::Spanish => "spanish",
            PromptLang::Portuguese => "portuguese",
            PromptLang::French => "french",
            PromptLang::None => "none",
        }
    }
}

impl fmt::Display for PromptLang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptLang {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let alias = match s {
            "sc" => "sardinian",
            "it" => "italian",
            "en" => "english",
            "es" => "spanish",
            "pt" => "portuguese",
            "fr" => "french",
            other => other,
        };
        PromptLang::ALL
            .into_iter()
            .find(|l| l.as_str() == alias)
            .ok_or_else(|| format!("unknown prompt language {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self { role, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub id: String,
    pub turns: Vec<Turn>,
    pub bucket: Bucket,
    #[serde(default)]
    pub system_prompt_lang: PromptLang,
}

impl InstructionPair {
    /// Optional leading system turn, then user/assistant alternation starting
    /// with user, with at least one assistant turn.
    pub fn validate(&self) -> Result<(), SftError> {
        let malformed = |reason: &str| SftError::Malformed { id: self.id.clone(), reason: reason.to_string() };
        let body = match self.turns.first() {
            Some(t) if t.role == Role::System => &self.turns[1..],
            _ => &self.turns[..],
        };
        if body.is_empty() {
            return Err(malformed("no conversation turns"));
        }
        for (i, t) in body.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if t.role != expected {
                return Err(malformed(&format!(
                    "turn {} is {}, expected {}",
                    i + self.turns.len() - body.len(),
                    t.role.as_str(),
                    expected.as_str()
                )));
            }
        }
        if !body.iter().any(|t| t.role == Role::Assistant) {
            return Err(malformed("no assistant turn"));
        }
        Ok(())
    }

    /// Content-only dedup key: hash over normalized turn texts, joined by U+001F.
    pub fn dedup_key(&self) -> String {
        let joined: Vec<String> = self.turns.iter().map(|t| normalize_text(&t.text, false)).collect();
        content_hash(&joined.join("\u{1f}"))
    }

    fn token_count(&self, tokenizer: &Tokenizer) -> usize {
        self.turns.iter().map(|t| tokenizer.count_tokens(&t.text)).sum()
    }
}

// ---------------------------------------------------------------------------
// Pool transforms

/// Exact dedup on normalized turn content. Bucket and prompt metadata are not
/// part of the key, so duplicates across buckets are caught.
pub fn dedup_pairs(pairs: Vec<InstructionPair>) -> (Vec<InstructionPair>, Vec<DropRecord>) {
    dedup_by_key(pairs, InstructionPair::dedup_key, |p| p.id.clone())
}

/// Every pair in `bucket` ends up `factor` times. Copies get ids
/// `{id}#up{k}` and follow all originals; each pair's copies are consecutive.
pub fn upsample_bucket(
    pairs: Vec<InstructionPair>,
    bucket: Bucket,
    factor: usize,
) -> Result<Vec<InstructionPair>, SftError> {
    if factor == 0 {
        return Err(SftError::ZeroFactor);
    }
    let copies: Vec<InstructionPair> = pairs
        .iter()
        .filter(|p| p.bucket == bucket)
        .flat_map(|p| {
            (1..factor).map(move |k| InstructionPair { id: format!("{}#up{k}", p.id), ..p.clone() })
        })
        .collect();
    let mut out = pairs;
    out.extend(copies);
    Ok(out)
}

/// How system-prompt languages are distributed over the final pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPlan {
    /// Exact counts for non-Sardinian prompt languages.
    pub targets: BTreeMap<PromptLang, usize>,
    /// Fraction of the remainder (after targets) that gets no system prompt.
    /// The rest gets the Sardinian prompt.
    pub no_prompt_share: f64,
}

impl Default for PromptPlan {
    fn default() -> Self {
        let targets = [
            (PromptLang::Italian, 300),
            (PromptLang::English, 250),
            (PromptLang::Spanish, 150),
            (PromptLang::Portuguese, 100),
            (PromptLang::French, 75),
        ]
        .into_iter()
        .collect();
        Self { targets, no_prompt_share: 0.05 }
    }
}

impl PromptPlan {
    pub fn without_targets() -> Self {
        Self { targets: BTreeMap::new(), ..Self::default() }
    }

    pub fn targeted_total(&self) -> usize {
        self.targets.values().sum()
    }
}

/// Shuffles pair indices with `seed`, hands out the exact target counts in
/// [`PromptLang`] order, then splits the remainder into no-prompt
/// (`floor(remainder * no_prompt_share)`) and Sardinian.
pub fn assign_system_prompts(
    mut pairs: Vec<InstructionPair>,
    plan: &PromptPlan,
    seed: u64,
) -> Result<Vec<InstructionPair>, SftError> {
    for lang in [PromptLang::Sardinian, PromptLang::None] {
        if plan.targets.contains_key(&lang) {
            return Err(SftError::RemainderLanguageTargeted(lang));
        }
    }
    if !(0.0..=1.0).contains(&plan.no_prompt_share) {
        return Err(SftError::BadShare(plan.no_prompt_share));
    }
    let needed = plan.targeted_total();
    if needed > pairs.len() {
        return Err(SftError::InfeasibleTargets { needed, available: pairs.len() });
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    shuffle(&mut order, &mut rng);

    let remainder = pairs.len() - needed;
    let no_prompt = (remainder as f64 * plan.no_prompt_share).floor() as usize;
    let mut plan_seq: Vec<(PromptLang, usize)> = plan.targets.iter().map(|(l, n)| (*l, *n)).collect();
    plan_seq.push((PromptLang::None, no_prompt));
    plan_seq.push((PromptLang::Sardinian, remainder - no_prompt));

    let mut cursor = order.into_iter();
    for (lang, n) in plan_seq {
        for idx in cursor.by_ref().take(n) {
            pairs[idx].system_prompt_lang = lang;
        }
    }
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// ChatML serialization

/// How frame markers map to token ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MarkerMode {
    /// One special-token id per marker.
    #[default]
    Special,
    /// Markers are encoded as ordinary text.
    Literal,
}

impl FromStr for MarkerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "special" => Ok(MarkerMode::Special),
            "literal" => Ok(MarkerMode::Literal),
            other => Err(format!("unknown marker mode {other:?} (expected special or literal)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTemplate {
    pub turn_start: String,
    pub turn_end: String,
    pub marker_mode: MarkerMode,
    /// System prompt text per language. `None` has no entry.
    pub system_prompts: BTreeMap<PromptLang, String>,
}

impl Default for ChatTemplate {
    fn default() -> Self {
        let system_prompts = [
            (PromptLang::Sardinian, "Ses un'assistente chi faeddat in limba sarda."),
            (PromptLang::Italian, "Sei un assistente che risponde in sardo."),
            (PromptLang::English, "You are an assistant that answers in Sardinian."),
            (PromptLang::Spanish, "Eres un asistente que responde en sardo."),
            (PromptLang::Portuguese, "Você é um assistente que responde em sardo."),
            (PromptLang::French, "Tu es un assistant qui répond en sarde."),
        ]
        .into_iter()
        .map(|(l, s)| (l, s.to_string()))
        .collect();
        Self {
            turn_start: "<|im_start|>".into(),
            turn_end: "<|im_end|>".into(),
            marker_mode: MarkerMode::Special,
            system_prompts,
        }
    }
}

impl ChatTemplate {
    /// Turns as serialized: `none` drops any system turn, `sardinian` keeps
    /// a pair's own system turn when it has one, other languages use the
    /// template's prompt text.
    pub fn effective_turns<'a>(&'a self, pair: &'a InstructionPair) -> Vec<(Role, &'a str)> {
        let (own_system, body) = match pair.turns.first() {
            Some(t) if t.role == Role::System => (Some(t.text.as_str()), &pair.turns[1..]),
            _ => (None, &pair.turns[..]),
        };
        let system = match pair.system_prompt_lang {
            PromptLang::None => None,
            PromptLang::Sardinian => own_system.or_else(|| self.prompt_text(PromptLang::Sardinian)),
            lang => self.prompt_text(lang).or(own_system),
        };
        system
            .map(|s| (Role::System, s))
            .into_iter()
            .chain(body.iter().map(|t| (t.role, t.text.as_str())))
            .collect()
    }

    fn prompt_text(&self, lang: PromptLang) -> Option<&str> {
        self.system_prompts.get(&lang).map(String::as_str)
    }

    fn marker_ids(&self, marker: &str, tokenizer: &Tokenizer) -> Result<Vec<TokenId>, SftError> {
        match self.marker_mode {
            MarkerMode::Literal => Ok(tokenizer.encode(marker)),
            MarkerMode::Special => tokenizer
                .special_id(marker)
                .map(|id| vec![id])
                .ok_or_else(|| SftError::MissingSpecial {
                    tokenizer: tokenizer.name().to_string(),
                    marker: marker.to_string(),
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedExample {
    pub id: String,
    pub token_ids: Vec<TokenId>,
    pub loss_mask: Vec<bool>,
}

impl SerializedExample {
    pub fn masked_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}

/// Frames each turn as `start role \n text end \n`. The loss mask is true on
/// assistant text and the assistant's end marker only.
pub fn serialize_chatml(
    pair: &InstructionPair,
    tokenizer: &Tokenizer,
    template: &ChatTemplate,
) -> Result<SerializedExample, SftError> {
    pair.validate()?;
    let start = template.marker_ids(&template.turn_start, tokenizer)?;
    let end = template.marker_ids(&template.turn_end, tokenizer)?;
    let newline = tokenizer.encode("\n");

    let mut token_ids = Vec::new();
    let mut loss_mask = Vec::new();
    let mut push = |ids: &[TokenId], train: bool| {
        token_ids.extend_from_slice(ids);
        loss_mask.extend(std::iter::repeat_n(train, ids.len()));
    };
    for (role, text) in template.effective_turns(pair) {
        let completion = role == Role::Assistant;
        push(&start, false);
        push(&tokenizer.encode(role.as_str()), false);
        push(&newline, false);
        push(&tokenizer.encode(text), completion);
        push(&end, completion);
        push(&newline, false);
    }
    Ok(SerializedExample { id: pair.id.clone(), token_ids, loss_mask })
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCount {
    pub pairs: usize,
    pub tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub raw_pairs: usize,
    pub raw_buckets: BTreeMap<String, BucketCount>,
    pub deduped_pairs: usize,
    pub deduped_buckets: BTreeMap<String, BucketCount>,
    pub upsampled_additions: usize,
    pub final_pairs: usize,
    pub final_buckets: BTreeMap<String, BucketCount>,
    pub system_prompt_histogram: BTreeMap<String, usize>,
    pub final_tokens: usize,
    pub no_prompt_share: f64,
    pub stage_order: Vec<String>,
    pub tokenizer: String,
}

impl PoolManifest {
    pub fn check_invariants(&self) -> bool {
        self.final_pairs == self.deduped_pairs + self.upsampled_additions
            && self.system_prompt_histogram.values().sum::<usize>() == self.final_pairs
    }
}

/// The three snapshots a pool manifest summarizes.
#[derive(Debug, Clone, Copy)]
pub struct PoolStages<'a> {
    pub raw: &'a [InstructionPair],
    pub deduped: &'a [InstructionPair],
    pub final_pool: &'a [InstructionPair],
}

impl<'a> PoolStages<'a> {
    pub fn single(pairs: &'a [InstructionPair]) -> Self {
        Self { raw: pairs, deduped: pairs, final_pool: pairs }
    }
}

pub const STAGE_ORDER: [&str; 4] = ["dedup", "upsample", "assign_system_prompts", "serialize"];

pub fn pool_stats(stages: PoolStages<'_>, tokenizer: &Tokenizer, no_prompt_share: f64) -> PoolManifest {
    let buckets = |pairs: &[InstructionPair]| {
        let tokens: Vec<usize> = pairs.par_iter().map(|p| p.token_count(tokenizer)).collect();
        let mut out: BTreeMap<String, BucketCount> =
            Bucket::ALL.iter().map(|b| (b.as_str().to_string(), BucketCount::default())).collect();
        for (p, t) in pairs.iter().zip(tokens) {
            let c = out.get_mut(p.bucket.as_str()).expect("all buckets present");
            c.pairs += 1;
            c.tokens += t;
        }
        out
    };
    let mut histogram: BTreeMap<String, usize> =
        PromptLang::ALL.iter().map(|l| (l.as_str().to_string(), 0)).collect();
    for p in stages.final_pool {
        *histogram.get_mut(p.system_prompt_lang.as_str()).expect("all languages present") += 1;
    }
    let final_buckets = buckets(stages.final_pool);
    PoolManifest {
        raw_pairs: stages.raw.len(),
        raw_buckets: buckets(stages.raw),
        deduped_pairs: stages.deduped.len(),
        deduped_buckets: buckets(stages.deduped),
        upsampled_additions: stages.final_pool.len().saturating_sub(stages.deduped.len()),
        final_pairs: stages.final_pool.len(),
        final_tokens: final_buckets.values().map(|b| b.tokens).sum(),
        final_buckets,
        system_prompt_histogram: histogram,
        no_prompt_share,
        stage_order: STAGE_ORDER.iter().map(|s| s.to_string()).collect(),
        tokenizer: tokenizer.name().to_string(),
    }
}

// ---------------------------------------------------------------------------
// Whole pipeline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    pub upsample: BTreeMap<Bucket, usize>,
    pub prompts: PromptPlan,
    pub seed: u64,
    pub template: ChatTemplate,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            upsample: [(Bucket::Synthesized, 5)].into_iter().collect(),
            prompts: PromptPlan::default(),
            seed: crate::rng::DEFAULT_SEED,
            template: ChatTemplate::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AssembledPool {
    pub pairs: Vec<InstructionPair>,
    pub serialized: Vec<SerializedExample>,
    pub drop_log: Vec<DropRecord>,
    pub manifest: PoolManifest,
}

/// dedup → upsample (buckets in declaration order) → assign prompts →
/// serialize. Prompts are assigned after upsampling, so copies draw their
/// prompt language independently of their original.
pub fn assemble_pool(
    raw: Vec<InstructionPair>,
    tokenizer: &Tokenizer,
    opts: &AssemblyOptions,
) -> Result<AssembledPool, SftError> {
    raw.par_iter().try_for_each(InstructionPair::validate)?;
    let (deduped, drop_log) = dedup_pairs(raw.clone());
    let mut pool = deduped.clone();
    for (bucket, factor) in &opts.upsample {
        pool = upsample_bucket(pool, *bucket, *factor)?;
    }
    let pool = assign_system_prompts(pool, &opts.prompts, opts.seed)?;
    let serialized = pool
        .par_iter()
        .map(|p| serialize_chatml(p, tokenizer, &opts.template))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = pool_stats(
        PoolStages { raw: &raw, deduped: &deduped, final_pool: &pool },
        tokenizer,
        opts.prompts.no_prompt_share,
    );
    Ok(AssembledPool { pairs: pool, serialized, drop_log, manifest })
}
