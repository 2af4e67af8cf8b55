//! Tokenizers and UTF-8 byte statistics.
//!
//! The default [`Tokenizer::byte_level`] maps every UTF-8 byte to its own id
//! (0..=255), so token counts are deterministic and need no model files.
//! A vocabulary tokenizer does greedy longest-match over byte strings and
//! falls back to single bytes, which is the regime that inflates token
//! counts for multi-byte scripts.
//!
//! Id layout shared by both kinds:
//!
//! | range                   | meaning                     |
//! |-------------------------|-----------------------------|
//! | `0..=255`               | raw byte                    |
//! | `256..256+specials`     | special tokens (chat frame) |
//! | after the specials      | vocabulary entries          |

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Token id.
pub type TokenId = u32;

pub const BYTE_VOCAB: u32 = 256;

/// Chat-frame markers registered as special tokens by default.
pub const DEFAULT_SPECIALS: [&str; 2] = ["<|im_start|>", "<|im_end|>"];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TokenizeError {
    #[error("input is not valid UTF-8: {0}")]
    InvalidUtf8(String),
    #[error("token id {0} is outside the tokenizer's id space")]
    UnknownId(TokenId),
    #[error("text is empty, bytes per codepoint is undefined")]
    EmptyText,
    #[error("vocabulary file: {0}")]
    Vocabulary(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Kind {
    ByteLevel,
    Vocabulary(Vocab),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Vocab {
    entries: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, TokenId>,
    max_len: usize,
}

/// On-disk vocabulary: `{"name": "...", "tokens": ["sa", " limba", ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocabFile {
    pub name: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    name: String,
    kind: Kind,
    specials: Vec<String>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::byte_level()
    }
}

impl Tokenizer {
    pub fn byte_level() -> Self {
        Self {
            name: "byte-level".to_string(),
            kind: Kind::ByteLevel,
            specials: DEFAULT_SPECIALS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Greedy longest-match tokenizer over `tokens`, with byte fallback.
    /// Empty and single-byte entries are ignored since bytes already have ids.
    pub fn with_vocabulary(name: impl Into<String>, tokens: &[String]) -> Self {
        let specials: Vec<String> = DEFAULT_SPECIALS.iter().map(|s| s.to_string()).collect();
        let first = BYTE_VOCAB + specials.len() as u32;
        let mut entries = Vec::new();
        let mut index = HashMap::new();
        for t in tokens {
            let bytes = t.as_bytes().to_vec();
            if bytes.len() < 2 || index.contains_key(&bytes) {
                continue;
            }
            index.insert(bytes.clone(), first + entries.len() as u32);
            entries.push(bytes);
        }
        let max_len = entries.iter().map(Vec::len).max().unwrap_or(1);
        Self {
            name: name.into(),
            kind: Kind::Vocabulary(Vocab { entries, index, max_len }),
            specials,
        }
    }

    pub fn from_vocab_file(path: &Path) -> Result<Self, TokenizeError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| TokenizeError::Vocabulary(format!("{}: {e}", path.display())))?;
        Self::from_vocab_json(&raw).map_err(|e| TokenizeError::Vocabulary(format!("{}: {e}", path.display())))
    }

    /// Parses a vocabulary document `{"name": ..., "tokens": [...]}`.
    pub fn from_vocab_json(raw: &str) -> Result<Self, TokenizeError> {
        let file: VocabFile = serde_json::from_str(raw).map_err(|e| TokenizeError::Vocabulary(e.to_string()))?;
        Ok(Self::with_vocabulary(file.name, &file.tokens))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_byte_level(&self) -> bool {
        matches!(self.kind, Kind::ByteLevel)
    }

    /// Id of a registered special token such as `<|im_end|>`.
    pub fn special_id(&self, marker: &str) -> Option<TokenId> {
        self.specials
            .iter()
            .position(|s| s == marker)
            .map(|i| BYTE_VOCAB + i as u32)
    }

    pub fn vocab_size(&self) -> usize {
        let base = BYTE_VOCAB as usize + self.specials.len();
        match &self.kind {
            Kind::ByteLevel => base,
            Kind::Vocabulary(v) => base + v.entries.len(),
        }
    }

    /// Encodes text. Special-token strings inside `text` are encoded as
    /// ordinary bytes; special ids are only produced by callers that ask for
    /// them through [`Tokenizer::special_id`].
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let bytes = text.as_bytes();
        match &self.kind {
            Kind::ByteLevel => bytes.iter().map(|&b| b as TokenId).collect(),
            Kind::Vocabulary(v) => {
                let mut ids = Vec::with_capacity(bytes.len());
                let mut i = 0;
                while i < bytes.len() {
                    let longest = (2..=v.max_len.min(bytes.len() - i))
                        .rev()
                        .find_map(|len| v.index.get(&bytes[i..i + len]).map(|&id| (id, len)));
                    match longest {
                        Some((id, len)) => {
                            ids.push(id);
                            i += len;
                        }
                        None => {
                            ids.push(bytes[i] as TokenId);
                            i += 1;
                        }
                    }
                }
                ids
            }
        }
    }

    /// Encodes raw bytes that must be valid UTF-8.
    pub fn encode_bytes(&self, bytes: &[u8]) -> Result<Vec<TokenId>, TokenizeError> {
        let text =
            std::str::from_utf8(bytes).map_err(|e| TokenizeError::InvalidUtf8(e.to_string()))?;
        Ok(self.encode(text))
    }

    /// Byte expansion of a single id.
    pub fn id_bytes(&self, id: TokenId) -> Result<&[u8], TokenizeError> {
        const BYTES: [u8; 256] = {
            let mut t = [0u8; 256];
            let mut i = 0;
            while i < 256 {
                t[i] = i as u8;
                i += 1;
            }
            t
        };
        if id < BYTE_VOCAB {
            return Ok(&BYTES[id as usize..id as usize + 1]);
        }
        let special = (id - BYTE_VOCAB) as usize;
        if let Some(s) = self.specials.get(special) {
            return Ok(s.as_bytes());
        }
        match &self.kind {
            Kind::Vocabulary(v) => v
                .entries
                .get(special - self.specials.len())
                .map(Vec::as_slice)
                .ok_or(TokenizeError::UnknownId(id)),
            Kind::ByteLevel => Err(TokenizeError::UnknownId(id)),
        }
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizeError> {
        let mut buf = Vec::with_capacity(ids.len());
        for &id in ids {
            buf.extend_from_slice(self.id_bytes(id)?);
        }
        String::from_utf8(buf).map_err(|e| TokenizeError::InvalidUtf8(e.to_string()))
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        match self.kind {
            Kind::ByteLevel => text.len(),
            Kind::Vocabulary(_) => self.encode(text).len(),
        }
    }
}

/// UTF-8 size statistics for one text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ByteStats {
    pub codepoints: usize,
    pub bytes: usize,
    /// Mean UTF-8 bytes per codepoint.
    pub k: f64,
}

pub fn bytes_per_codepoint(text: &str) -> Result<ByteStats, TokenizeError> {
    let codepoints = text.chars().count();
    if codepoints == 0 {
        return Err(TokenizeError::EmptyText);
    }
    let bytes = text.len();
    Ok(ByteStats { codepoints, bytes, k: bytes as f64 / codepoints as f64 })
}
