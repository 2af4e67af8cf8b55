//! Text normalization and content hashing shared by the deduplication steps.

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

/// NFC, whitespace runs collapsed to one space, ends trimmed.
///
/// With `preserve_linebreaks` the line structure survives: each line is
/// collapsed and trimmed on its own, `\r\n` becomes `\n`, and leading or
/// trailing blank lines are dropped. Blank lines between text are kept.
pub fn normalize_text(text: &str, preserve_linebreaks: bool) -> String {
    let nfc: String = text.nfc().collect();
    if !preserve_linebreaks {
        return collapse(&nfc);
    }
    let unified = nfc.replace("\r\n", "\n").replace('\r', "\n");
    let lines: Vec<String> = unified.split('\n').map(collapse).collect();
    let first = lines.iter().position(|l| !l.is_empty());
    let last = lines.iter().rposition(|l| !l.is_empty());
    match (first, last) {
        (Some(a), Some(b)) => lines[a..=b].join("\n"),
        _ => String::new(),
    }
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Hex SHA-256 of already-normalized text.
pub fn content_hash(normalized: &str) -> String {
    let digest = Sha256::digest(normalized.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
