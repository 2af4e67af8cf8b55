//! Results tables: one row per direction, one column per model.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Metric, MetricError};

pub const MISSING: &str = "—";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellValue {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

/// One score as it appears in a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub direction: String,
    pub metric: Metric,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_resamples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    directions: Vec<String>,
    models: Vec<String>,
    cells: HashMap<(String, String, Metric), CellValue>,
}

impl ScoreTable {
    pub fn new<S: Into<String>>(directions: impl IntoIterator<Item = S>, models: impl IntoIterator<Item = S>) -> Self {
        Self {
            directions: directions.into_iter().map(Into::into).collect(),
            models: models.into_iter().map(Into::into).collect(),
            cells: HashMap::new(),
        }
    }

    /// Rows and columns keep the order in which they first appear.
    pub fn from_rows(rows: &[ReportRow]) -> Self {
        let mut t = Self::default();
        for r in rows {
            t.insert(&r.direction, &r.model, r.metric, CellValue { value: r.value, stderr: r.stderr });
        }
        t
    }

    pub fn insert(&mut self, direction: &str, model: &str, metric: Metric, cell: CellValue) {
        if !self.directions.iter().any(|d| d == direction) {
            self.directions.push(direction.to_string());
        }
        if !self.models.iter().any(|m| m == model) {
            self.models.push(model.to_string());
        }
        self.cells.insert((direction.to_string(), model.to_string(), metric), cell);
    }

    pub fn get(&self, direction: &str, model: &str, metric: Metric) -> Option<CellValue> {
        self.cells.get(&(direction.to_string(), model.to_string(), metric)).copied()
    }

    pub fn directions(&self) -> &[String] {
        &self.directions
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportLayout {
    /// Cells read "BLEU / chrF".
    Combined,
    Single(Metric),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    /// Aligned pipe table.
    Plain,
    Delimited(char),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportStyle {
    pub layout: ReportLayout,
    pub format: ReportFormat,
    pub stderr: bool,
}

impl Default for ReportStyle {
    fn default() -> Self {
        Self { layout: ReportLayout::Combined, format: ReportFormat::Plain, stderr: false }
    }
}

// Ties are judged on the printed value.
fn cents(v: f64) -> i64 {
    (v * 100.0).round() as i64
}

fn best_cents(table: &ScoreTable, direction: &str, metric: Metric) -> Option<i64> {
    table.models.iter().filter_map(|m| table.get(direction, m, metric)).map(|c| cents(c.value)).max()
}

fn bold(s: String, on: bool) -> String {
    if on {
        format!("**{s}**")
    } else {
        s
    }
}

fn cell_text(table: &ScoreTable, style: &ReportStyle, direction: &str, model: &str) -> String {
    let part = |metric: Metric| -> Option<(String, bool)> {
        let c = table.get(direction, model, metric)?;
        let mut s = format!("{:.2}", c.value);
        if style.stderr {
            if let Some(e) = c.stderr {
                s.push_str(&format!(" ± {e:.2}"));
            }
        }
        Some((s, best_cents(table, direction, metric) == Some(cents(c.value))))
    };
    match style.layout {
        ReportLayout::Single(metric) => part(metric).map_or_else(|| MISSING.to_string(), |(s, b)| bold(s, b)),
        ReportLayout::Combined => match (part(Metric::Bleu), part(Metric::Chrf)) {
            (None, None) => MISSING.to_string(),
            (Some((b, true)), Some((c, true))) => format!("**{b} / {c}**"),
            (b, c) => {
                let show = |p: Option<(String, bool)>| p.map_or_else(|| MISSING.to_string(), |(s, best)| bold(s, best));
                format!("{} / {}", show(b), show(c))
            }
        },
    }
}

fn quote(field: &str, delim: char) -> String {
    if field.contains(delim) || field.contains('"') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Renders the table. Every line, including the last, ends in `\n`.
pub fn render_report(table: &ScoreTable, style: &ReportStyle) -> Result<String, MetricError> {
    if table.directions.is_empty() || table.models.is_empty() {
        return Err(MetricError::EmptyTable);
    }
    let mut rows: Vec<Vec<String>> = Vec::with_capacity(table.directions.len() + 1);
    rows.push(std::iter::once("Direction".to_string()).chain(table.models.iter().cloned()).collect());
    for d in &table.directions {
        let mut row = vec![d.clone()];
        row.extend(table.models.iter().map(|m| cell_text(table, style, d, m)));
        rows.push(row);
    }

    let mut out = String::new();
    match style.format {
        ReportFormat::Delimited(delim) => {
            for row in &rows {
                let fields: Vec<String> = row.iter().map(|f| quote(f, delim)).collect();
                out.push_str(&fields.join(&delim.to_string()));
                out.push('\n');
            }
        }
        ReportFormat::Plain => {
            let ncols = rows[0].len();
            let widths: Vec<usize> =
                (0..ncols).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0).max(3)).collect();
            let line = |row: &[String]| -> String {
                let cells: Vec<String> = row
                    .iter()
                    .enumerate()
                    .map(|(c, s)| {
                        let pad = " ".repeat(widths[c] - s.chars().count());
                        if c == 0 {
                            format!("{s}{pad}")
                        } else {
                            format!("{pad}{s}")
                        }
                    })
                    .collect();
                format!("| {} |\n", cells.join(" | "))
            };
            out.push_str(&line(&rows[0]));
            let rule: Vec<String> = widths
                .iter()
                .enumerate()
                .map(|(c, &w)| if c == 0 { format!(":{}", "-".repeat(w - 1)) } else { format!("{}:", "-".repeat(w - 1)) })
                .collect();
            out.push_str(&format!("| {} |\n", rule.join(" | ")));
            for row in &rows[1..] {
                out.push_str(&line(row));
            }
        }
    }
    Ok(out)
}
