use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::languages::{consecutive_pairing, stack_pairing};
use crate::corpus::Sequence;
use crate::distributions::{
    bigram_row_divergences, kl_divergence, BigramCounts, BigramModel, TokenDistribution,
    UnigramCounts,
};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

use super::validate::BIGRAM_MIN_VISITS;

/// How depending pairs are reconstructed from a bare sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingRule {
    /// Each occurrence with the next occurrence of the same value.
    Consecutive,
    /// Greedy stack matching of equal tokens.
    Stack,
}

#[derive(Debug, Clone, Default)]
pub struct StatsOptions<'a> {
    pub content_size: u32,
    pub reference_unigram: Option<&'a TokenDistribution>,
    pub reference_bigram: Option<&'a BigramModel>,
    pub pairing: Option<PairingRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramSummary {
    pub min_visits: u64,
    pub contexts: usize,
    /// Visit-weighted mean of row KL.
    pub mean_row_kl: Option<f64>,
    pub max_row_kl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub sequences: u64,
    pub tokens: u64,
    pub length_histogram: BTreeMap<usize, u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unigram_kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bigram: Option<BigramSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span_histogram: Option<BTreeMap<usize, u64>>,
    /// Positions left unmatched by the pairing rule.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unpaired_positions: Option<u64>,
    /// Fraction of tokens whose value occurs more than once on its line.
    pub repeated_token_rate: f64,
}

pub fn corpus_stats(corpus: &[Sequence], options: &StatsOptions<'_>) -> Result<StatsReport> {
    let mut lengths = BTreeMap::new();
    let mut repeated = 0u64;
    let mut spans: BTreeMap<usize, u64> = BTreeMap::new();
    let mut unpaired = 0u64;
    let mut seen: HashMap<TokenId, u32> = HashMap::new();
    for seq in corpus {
        *lengths.entry(seq.len()).or_default() += 1;
        seen.clear();
        seq.iter().for_each(|&t| *seen.entry(t).or_default() += 1);
        repeated += seen.values().filter(|&&c| c > 1).map(|&c| c as u64).sum::<u64>();
        if let Some(rule) = options.pairing {
            let (pairs, open) = match rule {
                PairingRule::Consecutive => consecutive_pairing(seq),
                PairingRule::Stack => stack_pairing(seq),
            };
            pairs.spans().for_each(|s| *spans.entry(s).or_default() += 1);
            unpaired += open.len() as u64;
        }
    }
    let tokens: u64 = corpus.iter().map(|s| s.len() as u64).sum();

    let unigram_kl = match options.reference_unigram {
        Some(reference) if tokens > 0 => {
            let mut counts = UnigramCounts::new(options.content_size);
            for seq in corpus {
                counts.observe(seq)?;
            }
            Some(kl_divergence(&counts.to_distribution()?, reference))
        }
        _ => None,
    };

    let bigram = match options.reference_bigram {
        Some(reference) if tokens > 0 => {
            let mut counts = BigramCounts::new(options.content_size);
            for seq in corpus {
                counts.observe(seq)?;
            }
            let rows = bigram_row_divergences(&counts.to_model()?, reference, BIGRAM_MIN_VISITS);
            let visits: u64 = rows.iter().map(|r| r.visits).sum();
            Some(BigramSummary {
                min_visits: BIGRAM_MIN_VISITS,
                contexts: rows.len(),
                mean_row_kl: (visits > 0).then(|| {
                    rows.iter().map(|r| r.kl * r.visits as f64).sum::<f64>() / visits as f64
                }),
                max_row_kl: rows.iter().map(|r| r.kl).reduce(f64::max),
            })
        }
        _ => None,
    };

    Ok(StatsReport {
        sequences: corpus.len() as u64,
        tokens,
        length_histogram: lengths,
        unigram_kl,
        bigram,
        span_histogram: options.pairing.map(|_| spans),
        unpaired_positions: options.pairing.map(|_| unpaired),
        repeated_token_rate: if tokens > 0 {
            repeated as f64 / tokens as f64
        } else {
            0.0
        },
    })
}

/// Two-column CSV with a header row.
pub fn write_histogram_csv<K: Display, V: Display>(
    path: impl AsRef<Path>,
    header: (&str, &str),
    rows: impl IntoIterator<Item = (K, V)>,
) -> Result<()> {
    let path = path.as_ref();
    let mut text = format!("{},{}\n", header.0, header.1);
    for (k, v) in rows {
        text.push_str(&format!("{k},{v}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{DistributionSource, Generator, GeneratorSpec, Grammar};

    fn corpus(grammar: Grammar, n: u64) -> Vec<Sequence> {
        Generator::new(GeneratorSpec::new(grammar, 64, n, 5))
            .unwrap()
            .generate_all()
            .unwrap()
            .into_iter()
            .map(|g| g.tokens)
            .collect()
    }

    #[test]
    fn uniform_against_uniform_is_near_zero() {
        let c = corpus(Grammar::Uniform, 2000);
        let reference = TokenDistribution::uniform(64);
        let report = corpus_stats(
            &c,
            &StatsOptions {
                content_size: 64,
                reference_unigram: Some(&reference),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.unigram_kl.unwrap() < 1e-3);
    }

    #[test]
    fn flat_two_spans_are_all_two() {
        let c = corpus(
            Grammar::FlatParens { distribution: DistributionSource::Uniform, max_span: 2 },
            300,
        );
        let report = corpus_stats(
            &c,
            &StatsOptions {
                content_size: 64,
                pairing: Some(PairingRule::Consecutive),
                ..Default::default()
            },
        )
        .unwrap();
        let spans = report.span_histogram.unwrap();
        assert_eq!(spans.keys().copied().collect::<Vec<_>>(), vec![2]);
        assert_eq!(report.unpaired_positions, Some(0));
    }

    #[test]
    fn shuffle_lengths_in_default_range() {
        let c = corpus(Grammar::Shuffle { block_size: 64 }, 300);
        let report = corpus_stats(&c, &StatsOptions { content_size: 64, ..Default::default() }).unwrap();
        let lengths: Vec<_> = report.length_histogram.keys().copied().collect();
        assert!(lengths.iter().all(|l| (100..=120).contains(l)));
        // two 64-wide blocks over 64 ids always overlap
        assert!(report.repeated_token_rate > 0.0);
    }

    #[test]
    fn histogram_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        write_histogram_csv(&path, ("span", "count"), [(2, 10), (3, 4)]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "span,count\n2,10\n3,4\n");
    }
}
