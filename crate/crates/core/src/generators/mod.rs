//! Artificial pre-training languages and checks that generated corpora
//! really have the traits each language is built around.

mod languages;
mod stats;
mod validate;

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, CorpusManifest, Sequence};
use crate::distributions::{
    estimate_bigram, estimate_unigram, zipf_distribution, AliasSampler, BigramModel,
    BigramSampler, TokenDistribution,
};
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::vocab::Vocabulary;

pub use languages::{
    block_bounds, consecutive_pairing, gen_bigram, gen_flat_parens, gen_nesting_parens,
    gen_nesting_parens_traced, gen_shuffle_n, gen_unigram, gen_uniform, nesting_parens_with,
    stack_pairing, NestingMoves, NestingTrace, PairingWitness,
};
pub use stats::{corpus_stats, write_histogram_csv, BigramSummary, PairingRule, StatsOptions, StatsReport};
pub use validate::{
    bigram_row_threshold, unigram_threshold, validate_corpus, validate_corpus_file,
    validate_generated, BigramCheck, DivergenceCheck, ValidationReport, Violation,
    BIGRAM_MIN_VISITS,
};

pub const DEFAULT_SEQ_LEN_RANGE: [usize; 2] = [100, 120];
pub const DEFAULT_PUSH_PROB: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DistributionSource {
    Uniform,
    Zipf { exponent: f64 },
    /// A uni-gram file written by [`TokenDistribution::save`].
    File { path: PathBuf },
    /// A tokenized reference corpus to estimate from.
    Corpus { path: PathBuf },
}

impl DistributionSource {
    pub fn resolve(&self, content_size: u32) -> Result<TokenDistribution> {
        let dist = match self {
            DistributionSource::Uniform => TokenDistribution::uniform(content_size as usize),
            DistributionSource::Zipf { exponent } => zipf_distribution(content_size, *exponent)?,
            DistributionSource::File { path } => TokenDistribution::load(path)?,
            DistributionSource::Corpus { path } => {
                let vocab = Vocabulary::new(content_size)?;
                estimate_unigram(crate::corpus::read_corpus_all(path, Some(vocab))?, &vocab)?
            }
        };
        if dist.len() != content_size as usize {
            return Err(Error::invalid(format!(
                "distribution covers {} ids, generator content size is {content_size}",
                dist.len()
            )));
        }
        Ok(dist)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BigramSource {
    File { path: PathBuf },
    Corpus { path: PathBuf },
}

impl BigramSource {
    pub fn resolve(&self, content_size: u32) -> Result<BigramModel> {
        let model = match self {
            BigramSource::File { path } => BigramModel::load(path)?,
            BigramSource::Corpus { path } => {
                let vocab = Vocabulary::new(content_size)?;
                estimate_bigram(crate::corpus::read_corpus_all(path, Some(vocab))?, &vocab)?
            }
        };
        if model.content_size() != content_size {
            return Err(Error::invalid(format!(
                "bi-gram model covers {} ids, generator content size is {content_size}",
                model.content_size()
            )));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grammar {
    Uniform,
    Unigram {
        distribution: DistributionSource,
    },
    Bigram {
        model: BigramSource,
    },
    FlatParens {
        distribution: DistributionSource,
        /// Largest inclusive span of a depending pair.
        max_span: usize,
    },
    NestingParens {
        distribution: DistributionSource,
        push_prob: f64,
    },
    Shuffle {
        block_size: usize,
    },
}

impl Grammar {
    pub fn name(&self) -> &'static str {
        match self {
            Grammar::Uniform => "uniform",
            Grammar::Unigram { .. } => "unigram",
            Grammar::Bigram { .. } => "bigram",
            Grammar::FlatParens { .. } => "flat_parens",
            Grammar::NestingParens { .. } => "nesting_parens",
            Grammar::Shuffle { .. } => "shuffle",
        }
    }

    pub fn is_parentheses(&self) -> bool {
        matches!(self, Grammar::FlatParens { .. } | Grammar::NestingParens { .. })
    }

    pub fn pairing_rule(&self) -> Option<PairingRule> {
        match self {
            Grammar::FlatParens { .. } => Some(PairingRule::Consecutive),
            Grammar::NestingParens { .. } => Some(PairingRule::Stack),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub grammar: Grammar,
    pub content_size: u32,
    pub seq_len_range: [usize; 2],
    pub num_sequences: u64,
    pub master_seed: u64,
}

impl GeneratorSpec {
    pub fn new(grammar: Grammar, content_size: u32, num_sequences: u64, master_seed: u64) -> Self {
        Self {
            grammar,
            content_size,
            seq_len_range: DEFAULT_SEQ_LEN_RANGE,
            num_sequences,
            master_seed,
        }
    }

    pub fn with_lengths(mut self, min: usize, max: usize) -> Self {
        self.seq_len_range = [min, max];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [min, max] = self.seq_len_range;
        if min == 0 || min > max {
            return Err(Error::invalid(format!("bad sequence length range [{min}, {max}]")));
        }
        if self.content_size == 0 {
            return Err(Error::invalid("content size must be positive"));
        }
        match &self.grammar {
            Grammar::FlatParens { max_span, .. } if *max_span < 2 => {
                return Err(Error::invalid(format!("max span must be at least 2, got {max_span}")))
            }
            Grammar::NestingParens { push_prob, .. } if !(*push_prob > 0.0 && *push_prob < 1.0) => {
                return Err(Error::invalid(format!(
                    "push probability must be in (0, 1), got {push_prob}"
                )))
            }
            Grammar::Shuffle { block_size } => {
                if *block_size == 0 || *block_size > min {
                    return Err(Error::invalid(format!(
                        "block size must be in 1..={min} (the shortest sequence), got {block_size}"
                    )));
                }
                if *block_size as u64 > self.content_size as u64 {
                    return Err(Error::invalid(format!(
                        "block size {block_size} exceeds content size {}",
                        self.content_size
                    )));
                }
            }
            _ => {}
        }
        if self.grammar.is_parentheses() && max < 2 {
            return Err(Error::invalid("parenthesis languages need sequences of length >= 2"));
        }
        if self.grammar.is_parentheses() && min < 2 {
            return Err(Error::invalid("parenthesis languages need a minimum length of 2"));
        }
        Ok(())
    }

    /// Range of lengths a generated line may have.
    pub fn length_bounds(&self) -> (usize, usize) {
        let [min, max] = self.seq_len_range;
        if self.grammar.is_parentheses() {
            (min - min % 2, max - max % 2)
        } else {
            (min, max)
        }
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.content_size)
    }
}

/// In-memory statistics a grammar samples from.
#[derive(Debug, Clone)]
pub enum Target {
    None,
    Unigram(TokenDistribution),
    Bigram(BigramModel),
}

#[derive(Debug, Clone)]
enum Sampler {
    None,
    Unigram(AliasSampler),
    Bigram(BigramSampler),
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub tokens: Sequence,
    pub witness: Option<PairingWitness>,
}

/// A validated spec with its distributions loaded and samplers built.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    target: Target,
    sampler: Sampler,
}

impl Generator {
    /// Resolves the spec's distribution sources.
    pub fn new(spec: GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let target = match &spec.grammar {
            Grammar::Uniform | Grammar::Shuffle { .. } => Target::None,
            Grammar::Unigram { distribution }
            | Grammar::FlatParens { distribution, .. }
            | Grammar::NestingParens { distribution, .. } => {
                Target::Unigram(distribution.resolve(spec.content_size)?)
            }
            Grammar::Bigram { model } => Target::Bigram(model.resolve(spec.content_size)?),
        };
        Self::from_parts(spec, target)
    }

    /// Uses `target` in place of the spec's distribution source.
    pub fn from_parts(spec: GeneratorSpec, target: Target) -> Result<Self> {
        spec.validate()?;
        let sampler = match (&spec.grammar, &target) {
            (Grammar::Uniform | Grammar::Shuffle { .. }, _) => Sampler::None,
            (Grammar::Bigram { .. }, Target::Bigram(m)) if m.content_size() == spec.content_size => {
                Sampler::Bigram(m.sampler())
            }
            (Grammar::Bigram { .. }, _) => {
                return Err(Error::invalid("bi-gram grammar needs a bi-gram model of the content size"))
            }
            (_, Target::Unigram(d)) if d.len() == spec.content_size as usize => {
                Sampler::Unigram(d.sampler())
            }
            _ => {
                return Err(Error::invalid(format!(
                    "{} grammar needs a uni-gram distribution over {} ids",
                    spec.grammar.name(),
                    spec.content_size
                )))
            }
        };
        Ok(Self {
            spec,
            target,
            sampler,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    /// Sequence `index`; a pure function of `(master_seed, index)`.
    pub fn generate(&self, index: u64) -> Result<Generated> {
        let mut rng = derive_rng(self.spec.master_seed, index);
        let [min, max] = self.spec.seq_len_range;
        let mut len = rng.random_range(min..=max);
        if self.spec.grammar.is_parentheses() {
            len -= len % 2;
        }
        let unigram = || match &self.sampler {
            Sampler::Unigram(s) => s,
            _ => unreachable!("sampler kind checked at construction"),
        };
        let (tokens, witness) = match &self.spec.grammar {
            Grammar::Uniform => (gen_uniform(self.spec.content_size, len, &mut rng), None),
            Grammar::Unigram { .. } => (gen_unigram(unigram(), len, &mut rng), None),
            Grammar::Bigram { .. } => {
                let Sampler::Bigram(s) = &self.sampler else {
                    unreachable!("sampler kind checked at construction")
                };
                (gen_bigram(s, len, &mut rng), None)
            }
            Grammar::FlatParens { max_span, .. } => {
                let (s, w) = gen_flat_parens(unigram(), len, *max_span, &mut rng)?;
                (s, Some(w))
            }
            Grammar::NestingParens { push_prob, .. } => {
                let (s, w) = gen_nesting_parens(unigram(), len, *push_prob, &mut rng)?;
                (s, Some(w))
            }
            Grammar::Shuffle { block_size } => (
                gen_shuffle_n(self.spec.content_size, *block_size, len, &mut rng)?,
                None,
            ),
        };
        Ok(Generated { tokens, witness })
    }

    /// Sequences `range`, generated in parallel; output order and content do
    /// not depend on the thread count.
    pub fn generate_range(&self, range: std::ops::Range<u64>) -> Result<Vec<Generated>> {
        range.into_par_iter().map(|i| self.generate(i)).collect()
    }

    pub fn generate_all(&self) -> Result<Vec<Generated>> {
        self.generate_range(0..self.spec.num_sequences)
    }

    /// Sequences from a stream disjoint from the corpus, for evaluation.
    pub fn held_out(&self, count: u64) -> Result<Vec<Generated>> {
        let shifted = GeneratorSpec {
            master_seed: crate::rng::derive_seed(self.spec.master_seed, crate::rng::domain::HELD_OUT),
            ..self.spec.clone()
        };
        Generator {
            spec: shifted,
            target: self.target.clone(),
            sampler: self.sampler.clone(),
        }
        .generate_range(0..count)
    }

    pub fn manifest(&self, sequences: &[Sequence]) -> Result<CorpusManifest> {
        Ok(CorpusManifest::new(
            serde_json::to_value(&self.spec)?,
            self.spec.master_seed,
            self.spec.content_size,
            sequences,
        )
        .with_frequencies(sequences))
    }
}

/// Generates the corpus described by `spec` into `path` plus its manifest.
pub fn generate_corpus(spec: &GeneratorSpec, path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let generator = Generator::new(spec.clone())?;
    write_generated(&generator, path)
}

pub fn write_generated(generator: &Generator, path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let sequences: Vec<Sequence> = generator
        .generate_all()?
        .into_iter()
        .map(|g| g.tokens)
        .collect();
    let manifest = generator.manifest(&sequences)?;
    write_corpus(&sequences, path, &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::read_corpus_all;

    fn spec(grammar: Grammar) -> GeneratorSpec {
        GeneratorSpec::new(grammar, 64, 50, 9)
    }

    #[test]
    fn three_sequences_within_length_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.txt");
        let s = GeneratorSpec::new(Grammar::Uniform, 64, 3, 1);
        let manifest = generate_corpus(&s, &path).unwrap();
        let seqs = read_corpus_all(&path, None).unwrap();
        assert_eq!(seqs.len(), 3);
        assert!(seqs.iter().all(|s| (100..=120).contains(&s.len())));
        assert_eq!(manifest.token_count, seqs.iter().map(|s| s.len() as u64).sum::<u64>());
        let freq = manifest.token_frequencies.unwrap();
        assert_eq!(freq.iter().sum::<u64>(), manifest.token_count);
    }

    #[test]
    fn same_spec_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(Grammar::NestingParens {
            distribution: DistributionSource::Zipf { exponent: 1.1 },
            push_prob: 0.4,
        });
        generate_corpus(&s, dir.path().join("a.txt")).unwrap();
        generate_corpus(&s, dir.path().join("b.txt")).unwrap();
        let a = std::fs::read(dir.path().join("a.txt")).unwrap();
        let b = std::fs::read(dir.path().join("b.txt")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parentheses_lengths_are_even() {
        let g = Generator::new(spec(Grammar::FlatParens {
            distribution: DistributionSource::Uniform,
            max_span: 4,
        }))
        .unwrap();
        assert!(g.generate_all().unwrap().iter().all(|s| s.tokens.len() % 2 == 0));
    }

    #[test]
    fn specs_are_checked() {
        assert!(Generator::new(spec(Grammar::Shuffle { block_size: 0 })).is_err());
        assert!(Generator::new(spec(Grammar::Shuffle { block_size: 101 })).is_err());
        assert!(Generator::new(spec(Grammar::FlatParens {
            distribution: DistributionSource::Uniform,
            max_span: 1
        }))
        .is_err());
        assert!(Generator::new(spec(Grammar::NestingParens {
            distribution: DistributionSource::Uniform,
            push_prob: 1.0
        }))
        .is_err());
        assert!(Generator::new(spec(Grammar::Uniform).with_lengths(10, 5)).is_err());
        let wrong_size = Target::Unigram(TokenDistribution::uniform(10));
        assert!(Generator::from_parts(
            spec(Grammar::Unigram { distribution: DistributionSource::Uniform }),
            wrong_size
        )
        .is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let s = spec(Grammar::Shuffle { block_size: 4 });
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"kind\":\"shuffle\""));
        assert_eq!(serde_json::from_str::<GeneratorSpec>(&text).unwrap(), s);
    }

    #[test]
    fn held_out_differs_from_training_stream() {
        let g = Generator::new(spec(Grammar::Uniform)).unwrap();
        assert_ne!(g.generate(0).unwrap().tokens, g.held_out(1).unwrap()[0].tokens);
    }
}
