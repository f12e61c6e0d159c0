use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::languages::{block_bounds, consecutive_pairing, stack_pairing, PairingWitness};
use super::{Generated, Generator, Grammar, Target};
use crate::corpus::{read_corpus, Sequence};
use crate::distributions::{
    bigram_row_divergences, kl_divergence, BigramCounts, TokenDistribution, UnigramCounts,
};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Bi-gram rows are only judged once a context has this many transitions.
pub const BIGRAM_MIN_VISITS: u64 = 1000;
pub const UNIGRAM_KL_FLOOR: f64 = 0.01;
pub const BIGRAM_ROW_KL_FLOOR: f64 = 0.05;
/// Violations kept verbatim in a report; the rest are only counted.
const MAX_LISTED_VIOLATIONS: usize = 1000;

/// Acceptance bound for `KL(empirical || target)` from `samples` draws over
/// `support` outcomes: the larger of `floor` and a far tail of the
/// sampling distribution (`2n KL ~ chi2(support - 1)`, mean plus ten standard
/// deviations plus ten).
fn sampling_threshold(floor: f64, support: usize, samples: u64) -> f64 {
    let dof = support.saturating_sub(1) as f64;
    let tail = dof + 10.0 * (2.0 * dof).sqrt() + 10.0;
    floor.max(tail / (2.0 * samples.max(1) as f64))
}

pub fn unigram_threshold(support: usize, tokens: u64) -> f64 {
    sampling_threshold(UNIGRAM_KL_FLOOR, support, tokens)
}

pub fn bigram_row_threshold(support: usize, visits: u64) -> f64 {
    sampling_threshold(BIGRAM_ROW_KL_FLOOR, support, visits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based corpus line; `None` for corpus-level checks.
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceCheck {
    pub kl: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramCheck {
    pub min_visits: u64,
    pub contexts_checked: usize,
    pub max_row_kl: Option<f64>,
    pub failing_contexts: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub kind: String,
    pub sequences: u64,
    pub tokens: u64,
    pub violation_count: u64,
    pub violations: Vec<Violation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unigram: Option<DivergenceCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bigram: Option<BigramCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_span: Option<usize>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} sequences, {} tokens, {} violations",
            self.kind, self.sequences, self.tokens, self.violation_count
        )
    }

    fn push(&mut self, v: Violation) {
        self.violation_count += 1;
        if self.violations.len() < MAX_LISTED_VIOLATIONS {
            self.violations.push(v);
        }
    }
}

/// Per-line outcome folded into a report.
#[derive(Default)]
struct LineCheck {
    problems: Vec<String>,
    max_span: Option<usize>,
}

fn check_line(
    generator: &Generator,
    seq: &[TokenId],
    witness: Option<&PairingWitness>,
) -> LineCheck {
    let spec = generator.spec();
    let mut out = LineCheck::default();
    let (lo, hi) = spec.length_bounds();
    if seq.len() < lo || seq.len() > hi {
        out.problems
            .push(format!("length {} outside [{lo}, {hi}]", seq.len()));
    }
    if let Some(t) = seq.iter().find(|&&t| t >= spec.content_size) {
        out.problems.push(format!("token {t} is not a content id"));
        return out;
    }
    match &spec.grammar {
        Grammar::FlatParens { max_span, .. } => {
            let mut counts: HashMap<TokenId, usize> = HashMap::new();
            seq.iter().for_each(|&t| *counts.entry(t).or_default() += 1);
            let mut odd: Vec<_> = counts.iter().filter(|(_, &c)| c % 2 == 1).map(|(&t, _)| t).collect();
            if !odd.is_empty() {
                odd.sort_unstable();
                out.problems
                    .push(format!("tokens with odd counts: {odd:?}"));
            }
            if let Some(w) = witness {
                if let Err(e) = w.check_partition(seq) {
                    out.problems.push(format!("witness: {e}"));
                }
            }
            let (pairing, _) = consecutive_pairing(seq);
            out.max_span = pairing.max_span();
            if let Some(span) = out.max_span.filter(|s| s > max_span) {
                out.problems
                    .push(format!("dependency span {span} exceeds {max_span}"));
            }
        }
        Grammar::NestingParens { .. } => match witness {
            Some(w) => {
                if let Err(e) = w.check_partition(seq) {
                    out.problems.push(format!("witness: {e}"));
                } else if !w.is_non_crossing() {
                    out.problems.push("witness pairs cross".into());
                }
                out.max_span = w.max_span();
            }
            None => {
                let (pairing, open) = stack_pairing(seq);
                if !open.is_empty() {
                    out.problems.push(format!(
                        "not well nested: {} positions left open, first at {}",
                        open.len(),
                        open[0]
                    ));
                }
                out.max_span = pairing.max_span();
            }
        },
        Grammar::Shuffle { block_size } => {
            let mut start = 0;
            while start < seq.len() {
                let block = block_bounds(seq.len(), *block_size, start);
                let mut values = seq[block.clone()].to_vec();
                values.sort_unstable();
                if values.windows(2).any(|w| w[1] != w[0] + 1) {
                    out.problems.push(format!(
                        "block at {}..{} is not a run of consecutive ids",
                        block.start, block.end
                    ));
                }
                start = block.end;
            }
        }
        Grammar::Uniform | Grammar::Unigram { .. } | Grammar::Bigram { .. } => {}
    }
    out
}

/// Checks every line against the generator's grammar and, for the
/// statistical languages, the corpus-level divergences.
///
/// `lines` pairs each sequence with its 1-based line number.
fn validate_lines(
    generator: &Generator,
    lines: &[(usize, &[TokenId], Option<&PairingWitness>)],
    mut report: ValidationReport,
) -> Result<ValidationReport> {
    let spec = generator.spec();
    let checks: Vec<LineCheck> = lines
        .par_iter()
        .map(|(_, seq, w)| check_line(generator, seq, *w))
        .collect();
    for ((line, seq, _), check) in lines.iter().zip(checks) {
        report.sequences += 1;
        report.tokens += seq.len() as u64;
        report.max_span = report.max_span.max(check.max_span);
        for message in check.problems {
            report.push(Violation {
                line: Some(*line),
                message,
            });
        }
    }

    let content_only = lines
        .iter()
        .filter(|(_, s, _)| s.iter().all(|&t| t < spec.content_size));
    match (&spec.grammar, generator.target()) {
        (Grammar::Uniform, _) | (Grammar::Unigram { .. }, _) => {
            let target = match generator.target() {
                Target::Unigram(d) => d.clone(),
                _ => TokenDistribution::uniform(spec.content_size as usize),
            };
            let mut counts = UnigramCounts::new(spec.content_size);
            for (_, seq, _) in content_only {
                counts.observe(seq)?;
            }
            if counts.total() > 0 {
                let kl = kl_divergence(&counts.to_distribution()?, &target);
                let threshold = unigram_threshold(target.support_size(), counts.total());
                if kl > threshold {
                    report.push(Violation {
                        line: None,
                        message: format!("uni-gram KL {kl:.5} exceeds {threshold:.5}"),
                    });
                }
                report.unigram = Some(DivergenceCheck { kl, threshold });
            }
        }
        (Grammar::Bigram { .. }, Target::Bigram(target)) => {
            let mut counts = BigramCounts::new(spec.content_size);
            for (_, seq, _) in content_only {
                counts.observe(seq)?;
            }
            if report.tokens > 0 {
                let empirical = counts.to_model()?;
                let rows = bigram_row_divergences(&empirical, target, BIGRAM_MIN_VISITS);
                let mut check = BigramCheck {
                    min_visits: BIGRAM_MIN_VISITS,
                    contexts_checked: rows.len(),
                    max_row_kl: rows.iter().map(|r| r.kl).reduce(f64::max),
                    failing_contexts: Vec::new(),
                };
                for row in &rows {
                    let threshold = bigram_row_threshold(row.target_support, row.visits);
                    if row.kl > threshold {
                        check.failing_contexts.push(row.context);
                        report.push(Violation {
                            line: None,
                            message: format!(
                                "bi-gram row {} KL {:.5} exceeds {threshold:.5} ({} visits)",
                                row.context, row.kl, row.visits
                            ),
                        });
                    }
                }
                report.bigram = Some(check);
            }
        }
        _ => {}
    }
    Ok(report)
}

fn empty_report(generator: &Generator) -> ValidationReport {
    ValidationReport {
        kind: generator.spec().grammar.name().to_string(),
        sequences: 0,
        tokens: 0,
        violation_count: 0,
        violations: Vec::new(),
        unigram: None,
        bigram: None,
        max_span: None,
    }
}

pub fn validate_corpus(corpus: &[Sequence], generator: &Generator) -> Result<ValidationReport> {
    let lines: Vec<_> = corpus
        .iter()
        .enumerate()
        .map(|(i, s)| (i + 1, s.as_slice(), None))
        .collect();
    validate_lines(generator, &lines, empty_report(generator))
}

/// Validates freshly generated sequences, replaying their witnesses.
pub fn validate_generated(corpus: &[Generated], generator: &Generator) -> Result<ValidationReport> {
    let lines: Vec<_> = corpus
        .iter()
        .enumerate()
        .map(|(i, g)| (i + 1, g.tokens.as_slice(), g.witness.as_ref()))
        .collect();
    validate_lines(generator, &lines, empty_report(generator))
}

/// Validates a corpus file. Unparseable lines become violations.
pub fn validate_corpus_file(path: impl AsRef<Path>, generator: &Generator) -> Result<ValidationReport> {
    let mut report = empty_report(generator);
    let mut parsed = Vec::new();
    for (i, item) in read_corpus(path, None)?.enumerate() {
        match item {
            Ok(seq) => parsed.push((i + 1, seq)),
            Err(Error::Parse { line, message }) => {
                report.sequences += 1;
                report.push(Violation {
                    line: Some(line),
                    message,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let lines: Vec<_> = parsed.iter().map(|(l, s)| (*l, s.as_slice(), None)).collect();
    validate_lines(generator, &lines, report)
}

#[cfg(test)]
mod tests {
    use super::super::{DistributionSource, GeneratorSpec};
    use super::*;

    fn generator(grammar: Grammar) -> Generator {
        Generator::new(GeneratorSpec::new(grammar, 64, 200, 3).with_lengths(2, 120)).unwrap()
    }

    fn flat(max_span: usize) -> Generator {
        generator(Grammar::FlatParens {
            distribution: DistributionSource::Uniform,
            max_span,
        })
    }

    #[test]
    fn generated_flat_six_passes_with_span_six() {
        let g = Generator::new(GeneratorSpec::new(
            Grammar::FlatParens { distribution: DistributionSource::Uniform, max_span: 6 },
            64,
            500,
            1,
        ))
        .unwrap();
        let corpus = g.generate_all().unwrap();
        let report = validate_generated(&corpus, &g).unwrap();
        assert!(report.passed(), "{:?}", report.violations);
        assert_eq!(report.max_span, Some(6));
    }

    #[test]
    fn odd_counts_fail_flat() {
        let report = validate_corpus(&[vec![5, 5, 5]], &flat(6)).unwrap();
        assert!(!report.passed());
        assert!(report.violations.iter().all(|v| v.line == Some(1)));
    }

    #[test]
    fn span_over_limit_fails_flat() {
        let report = validate_corpus(&[vec![1, 2, 3, 1, 2, 3]], &flat(3)).unwrap();
        assert_eq!(report.violation_count, 1);
        assert_eq!(report.max_span, Some(4));
    }

    #[test]
    fn shuffle_block_permutation() {
        let g = Generator::new(
            GeneratorSpec::new(Grammar::Shuffle { block_size: 4 }, 64, 200, 3).with_lengths(4, 120),
        )
        .unwrap();
        assert!(validate_corpus(&[vec![7, 8, 9, 6]], &g).unwrap().passed());
        assert!(validate_corpus(&[vec![7, 8, 9, 6, 3, 2]], &g).unwrap().passed());
        let bad = validate_corpus(&[vec![7, 8, 9, 6], vec![7, 8, 9, 11]], &g).unwrap();
        assert_eq!(bad.violations[0].line, Some(2));
    }

    #[test]
    fn nesting_recognition() {
        let g = generator(Grammar::NestingParens {
            distribution: DistributionSource::Uniform,
            push_prob: 0.4,
        });
        assert!(validate_corpus(&[vec![1, 2, 2, 1, 3, 3]], &g).unwrap().passed());
        assert!(!validate_corpus(&[vec![1, 2, 1, 2]], &g).unwrap().passed());
    }

    #[test]
    fn crossing_witness_is_rejected() {
        let g = generator(Grammar::NestingParens {
            distribution: DistributionSource::Uniform,
            push_prob: 0.4,
        });
        let crossing = Generated {
            tokens: vec![1, 1, 1, 1],
            witness: Some(PairingWitness { pairs: vec![(0, 2), (1, 3)] }),
        };
        assert!(!validate_generated(&[crossing], &g).unwrap().passed());
    }

    #[test]
    fn file_parse_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "1 1\n2 x\n").unwrap();
        let report = validate_corpus_file(&path, &flat(2)).unwrap();
        assert_eq!(report.violation_count, 1);
        assert_eq!(report.violations[0].line, Some(2));
    }

    #[test]
    fn skewed_unigram_corpus_fails() {
        let g = generator(Grammar::Unigram { distribution: DistributionSource::Uniform });
        let corpus = vec![vec![0u32; 100]; 100];
        let report = validate_corpus(&corpus, &g).unwrap();
        assert!(!report.passed());
        assert!(report.unigram.unwrap().kl > 1.0);
    }

    #[test]
    fn thresholds_shrink_to_floor() {
        assert_eq!(unigram_threshold(64, 10_000_000), UNIGRAM_KL_FLOOR);
        assert!(unigram_threshold(29_995, 1_000_000) > UNIGRAM_KL_FLOOR);
        assert_eq!(bigram_row_threshold(64, 1_000_000), BIGRAM_ROW_KL_FLOOR);
    }
}
