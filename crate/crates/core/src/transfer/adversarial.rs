use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::hash::Hash;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairLabel {
    Entailment,
    NonEntailment,
}

impl FromStr for PairLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "entailment" | "1" => Ok(PairLabel::Entailment),
            "non-entailment" | "not_entailment" | "non_entailment" | "0" => Ok(PairLabel::NonEntailment),
            other => Err(Error::invalid(format!("unknown label {other:?}"))),
        }
    }
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairLabel::Entailment => "entailment",
            PairLabel::NonEntailment => "non-entailment",
        })
    }
}

/// One line of a pair file. QNLI-style files carry a leading index column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub index: Option<String>,
    pub text_a: String,
    pub text_b: String,
    pub label: PairLabel,
}

impl PairRecord {
    pub fn parse(line: &str, line_no: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        let (index, a, b, label) = match fields.as_slice() {
            [a, b, l] => (None, *a, *b, *l),
            [i, a, b, l] => (Some(i.to_string()), *a, *b, *l),
            _ => {
                return Err(parse_err(format!(
                    "expected 3 or 4 tab-separated fields, found {}",
                    fields.len()
                )))
            }
        };
        if a.trim().is_empty() || b.trim().is_empty() {
            return Err(parse_err("empty text field".into()));
        }
        let label = label.parse().map_err(|e: Error| parse_err(e.to_string()))?;
        Ok(Self {
            index,
            text_a: a.to_string(),
            text_b: b.to_string(),
            label,
        })
    }

    pub fn to_line(&self) -> String {
        match &self.index {
            Some(i) => format!("{i}\t{}\t{}\t{}", self.text_a, self.text_b, self.label),
            None => format!("{}\t{}\t{}", self.text_a, self.text_b, self.label),
        }
    }

    /// The first text paired with itself, labelled non-entailment.
    pub fn adversarial(&self) -> Self {
        Self {
            index: self.index.clone(),
            text_a: self.text_a.clone(),
            text_b: self.text_a.clone(),
            label: PairLabel::NonEntailment,
        }
    }

    /// Overlap of the whitespace tokens of both texts.
    pub fn lexical_overlap(&self) -> Result<f64> {
        let a: Vec<&str> = self.text_a.split_whitespace().collect();
        let b: Vec<&str> = self.text_b.split_whitespace().collect();
        lexical_overlap(&a, &b)
    }
}

fn is_header(line: &str) -> bool {
    line.rsplit('\t').next().is_some_and(|l| l.trim() == "label")
}

/// Transforms pair-file text. A header line, if present, is kept.
pub fn adversarial_pairs_text(input: &str) -> Result<String> {
    let mut out = String::with_capacity(input.len());
    for (i, line) in input.lines().enumerate() {
        if i == 0 && is_header(line) {
            out.push_str(line);
        } else {
            out.push_str(&PairRecord::parse(line, i + 1)?.adversarial().to_line());
        }
        out.push('\n');
    }
    Ok(out)
}

/// Reads a pair file and writes its adversarial counterpart; returns the
/// number of records written.
pub fn make_adversarial_pairs(input: impl AsRef<Path>, output: impl AsRef<Path>) -> Result<usize> {
    let (input, output) = (input.as_ref(), output.as_ref());
    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let result = adversarial_pairs_text(&text)?;
    let records = result.lines().count() - text.lines().next().is_some_and(is_header) as usize;
    fs::write(output, result).map_err(|e| Error::io(output, e))?;
    Ok(records)
}

/// Shared occurrences (multiset intersection) over the shorter length.
pub fn lexical_overlap<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("lexical overlap needs two non-empty sides"));
    }
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for t in a {
        *counts.entry(t).or_insert(0) += 1;
    }
    let shared = b
        .iter()
        .filter(|t| match counts.get_mut(t) {
            Some(c) if *c > 0 => {
                *c -= 1;
                true
            }
            _ => false,
        })
        .count();
    Ok(shared as f64 / a.len().min(b.len()) as f64)
}
