//! Uni-gram and bi-gram token statistics: estimation, sampling, divergence.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

/// Additive smoothing applied to `q` before evaluating `KL(p || q)`.
pub const KL_SMOOTHING: f64 = 1e-10;
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;
/// Stand-in exponent for natural-language rank/frequency curves.
pub const DEFAULT_ZIPF_EXPONENT: f64 = 1.1;

/// A probability vector indexed by token id.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("distribution over an empty support"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::invalid(format!("invalid probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!("invalid weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("weights sum to zero"));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(size: usize) -> Self {
        assert!(size > 0, "uniform distribution over an empty support");
        Self {
            probs: vec![1.0 / size as f64; size],
        }
    }

    pub fn point_mass(size: usize, id: TokenId) -> Self {
        let mut probs = vec![0.0; size];
        probs[id as usize] = 1.0;
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs.get(id as usize).copied().unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|&&p| p > 0.0).count()
    }

    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    pub fn sampler(&self) -> AliasSampler {
        AliasSampler::new(&self.probs)
    }

    pub fn save(&self, path: impl AsRef<Path>, source: &str) -> Result<()> {
        let file = DistributionFile {
            format: UNIGRAM_FORMAT.into(),
            content_size: self.probs.len() as u32,
            source: source.into(),
            probabilities: sparse(&self.probs),
        };
        write_json(path, &file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: DistributionFile = read_json(&path)?;
        if file.format != UNIGRAM_FORMAT {
            return Err(Error::invalid(format!(
                "{} is not a uni-gram distribution file",
                path.as_ref().display()
            )));
        }
        Self::new(dense(&file.probabilities, file.content_size)?)
    }
}

/// `p(k) ∝ (k+1)^-s` over ids `0..content_size`.
pub fn zipf_distribution(content_size: u32, exponent: f64) -> Result<TokenDistribution> {
    if content_size == 0 {
        return Err(Error::invalid("zipf distribution over an empty support"));
    }
    if exponent.is_nan() || exponent < 0.0 || exponent.is_infinite() {
        return Err(Error::invalid(format!("zipf exponent must be finite and >= 0, got {exponent}")));
    }
    let weights = (0..content_size)
        .map(|k| ((k + 1) as f64).powf(-exponent))
        .collect();
    TokenDistribution::from_weights(weights)
}

/// Walker/Vose alias table: O(n) setup, O(1) per draw.
#[derive(Debug, Clone)]
pub struct AliasSampler {
    threshold: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasSampler {
    pub fn new(probs: &[f64]) -> Self {
        let n = probs.len();
        assert!(n > 0, "alias table over an empty support");
        let total: f64 = probs.iter().sum();
        let mut scaled: Vec<f64> = probs.iter().map(|p| p * n as f64 / total).collect();
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let mut threshold = vec![0.0; n];
        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            threshold[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        for &l in &large {
            threshold[l] = 1.0;
        }
        // Rounding leftovers; a zero-probability slot must never be returned.
        let heaviest = (0..n).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        for &s in &small {
            if probs[s] > 0.0 {
                threshold[s] = 1.0;
            } else {
                threshold[s] = 0.0;
                alias[s] = heaviest as u32;
            }
        }
        Self { threshold, alias }
    }

    pub fn len(&self) -> usize {
        self.threshold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.threshold.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenId {
        let slot = rng.random_range(0..self.threshold.len());
        if rng.random::<f64>() < self.threshold[slot] {
            slot as TokenId
        } else {
            self.alias[slot]
        }
    }
}

pub fn sample_token<R: Rng + ?Sized>(sampler: &AliasSampler, rng: &mut R) -> TokenId {
    sampler.sample(rng)
}

/// `Σ p ln(p / q')` with `q' = (q + ε) / (1 + nε)`, in nats.
pub fn kl_divergence(p: &TokenDistribution, q: &TokenDistribution) -> f64 {
    kl_divergence_probs(p.probs(), q.probs())
}

pub fn kl_divergence_probs(p: &[f64], q: &[f64]) -> f64 {
    raw_kl(p, q).max(0.0)
}

/// Smoothed divergence before clamping away rounding noise below zero.
fn raw_kl(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    let norm = 1.0 + n as f64 * KL_SMOOTHING;
    p.iter()
        .enumerate()
        .filter(|(_, &pi)| pi > 0.0)
        .map(|(i, &pi)| {
            let qi = (q.get(i).copied().unwrap_or(0.0) + KL_SMOOTHING) / norm;
            pi * (pi / qi).ln()
        })
        .sum()
}

/// Mergeable occurrence counts over content ids.
#[derive(Debug, Clone, PartialEq)]
pub struct UnigramCounts {
    counts: Vec<u64>,
    total: u64,
}

impl UnigramCounts {
    pub fn new(content_size: u32) -> Self {
        Self {
            counts: vec![0; content_size as usize],
            total: 0,
        }
    }

    pub fn observe(&mut self, seq: &[TokenId]) -> Result<()> {
        for &t in seq {
            let slot = self
                .counts
                .get_mut(t as usize)
                .ok_or_else(|| Error::invalid(format!("token {t} is not a content id")))?;
            *slot += 1;
        }
        self.total += seq.len() as u64;
        Ok(())
    }

    pub fn merge(mut self, other: &UnigramCounts) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        self
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn to_distribution(&self) -> Result<TokenDistribution> {
        if self.total == 0 {
            return Err(Error::invalid("cannot estimate from an empty corpus"));
        }
        let total = self.total as f64;
        TokenDistribution::new(self.counts.iter().map(|&c| c as f64 / total).collect())
    }
}

pub fn estimate_unigram<I, S>(corpus: I, vocab: &Vocabulary) -> Result<TokenDistribution>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[TokenId]>,
{
    let mut counts = UnigramCounts::new(vocab.content_size());
    for seq in corpus {
        counts.observe(seq.as_ref())?;
    }
    counts.to_distribution()
}

/// Successor distribution of one context token, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalRow {
    pub successors: Vec<TokenId>,
    pub probs: Vec<f64>,
    /// Number of observed transitions out of this context.
    pub visits: u64,
}

impl ConditionalRow {
    pub fn prob(&self, id: TokenId) -> f64 {
        self.successors
            .binary_search(&id)
            .map(|k| self.probs[k])
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self, content_size: u32) -> TokenDistribution {
        let mut probs = vec![0.0; content_size as usize];
        for (&s, &p) in self.successors.iter().zip(&self.probs) {
            probs[s as usize] = p;
        }
        TokenDistribution { probs }
    }

    fn from_counts(counts: &BTreeMap<TokenId, u64>) -> Self {
        let visits: u64 = counts.values().sum();
        Self {
            successors: counts.keys().copied().collect(),
            probs: counts.values().map(|&c| c as f64 / visits as f64).collect(),
            visits,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BigramModel {
    content_size: u32,
    conditional: BTreeMap<TokenId, ConditionalRow>,
    backoff: TokenDistribution,
    start: TokenDistribution,
}

impl BigramModel {
    pub fn new(
        content_size: u32,
        conditional: BTreeMap<TokenId, ConditionalRow>,
        backoff: TokenDistribution,
        start: TokenDistribution,
    ) -> Result<Self> {
        for (ctx, row) in &conditional {
            if *ctx >= content_size {
                return Err(Error::invalid(format!("context {ctx} is not a content id")));
            }
            let total: f64 = row.probs.iter().sum();
            if (total - 1.0).abs() > NORMALIZATION_TOLERANCE
                || row.successors.len() != row.probs.len()
                || row.successors.windows(2).any(|w| w[0] >= w[1])
                || row.successors.last().is_some_and(|&s| s >= content_size)
            {
                return Err(Error::invalid(format!("malformed row for context {ctx}")));
            }
        }
        if backoff.len() != content_size as usize || start.len() != content_size as usize {
            return Err(Error::invalid("backoff/start size differs from content size"));
        }
        Ok(Self {
            content_size,
            conditional,
            backoff,
            start,
        })
    }

    pub fn content_size(&self) -> u32 {
        self.content_size
    }

    pub fn row(&self, context: TokenId) -> Option<&ConditionalRow> {
        self.conditional.get(&context)
    }

    pub fn rows(&self) -> impl Iterator<Item = (TokenId, &ConditionalRow)> {
        self.conditional.iter().map(|(&c, r)| (c, r))
    }

    pub fn backoff(&self) -> &TokenDistribution {
        &self.backoff
    }

    pub fn start(&self) -> &TokenDistribution {
        &self.start
    }

    pub fn without_row(mut self, context: TokenId) -> Self {
        self.conditional.remove(&context);
        self
    }

    pub fn sampler(&self) -> BigramSampler {
        let mut rows = vec![None; self.content_size as usize];
        for (&ctx, row) in &self.conditional {
            rows[ctx as usize] = Some((row.successors.clone(), AliasSampler::new(&row.probs)));
        }
        BigramSampler {
            start: self.start.sampler(),
            backoff: self.backoff.sampler(),
            rows,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, source: &str) -> Result<()> {
        let file = BigramFile {
            format: BIGRAM_FORMAT.into(),
            content_size: self.content_size,
            source: source.into(),
            start: sparse(self.start.probs()),
            backoff: sparse(self.backoff.probs()),
            rows: self
                .conditional
                .iter()
                .map(|(&ctx, row)| {
                    let successors = row.successors.iter().copied().zip(row.probs.iter().copied());
                    (
                        ctx,
                        RowFile {
                            visits: row.visits,
                            successors: successors.collect(),
                        },
                    )
                })
                .collect(),
        };
        write_json(path, &file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: BigramFile = read_json(&path)?;
        if file.format != BIGRAM_FORMAT {
            return Err(Error::invalid(format!(
                "{} is not a bi-gram model file",
                path.as_ref().display()
            )));
        }
        let rows = file
            .rows
            .into_iter()
            .map(|(ctx, row)| {
                let (successors, probs) = row.successors.into_iter().unzip();
                (
                    ctx,
                    ConditionalRow {
                        successors,
                        probs,
                        visits: row.visits,
                    },
                )
            })
            .collect();
        Self::new(
            file.content_size,
            rows,
            TokenDistribution::new(dense(&file.backoff, file.content_size)?)?,
            TokenDistribution::new(dense(&file.start, file.content_size)?)?,
        )
    }
}

/// Mergeable transition counts. Pairs never straddle two sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramCounts {
    unigram: UnigramCounts,
    starts: UnigramCounts,
    transitions: BTreeMap<TokenId, BTreeMap<TokenId, u64>>,
}

impl BigramCounts {
    pub fn new(content_size: u32) -> Self {
        Self {
            unigram: UnigramCounts::new(content_size),
            starts: UnigramCounts::new(content_size),
            transitions: BTreeMap::new(),
        }
    }

    pub fn observe(&mut self, seq: &[TokenId]) -> Result<()> {
        self.unigram.observe(seq)?;
        if let Some(&first) = seq.first() {
            self.starts.observe(&[first])?;
        }
        for w in seq.windows(2) {
            *self
                .transitions
                .entry(w[0])
                .or_default()
                .entry(w[1])
                .or_default() += 1;
        }
        Ok(())
    }

    pub fn merge(mut self, other: &BigramCounts) -> Self {
        self.unigram = self.unigram.merge(&other.unigram);
        self.starts = self.starts.merge(&other.starts);
        for (ctx, row) in &other.transitions {
            let mine = self.transitions.entry(*ctx).or_default();
            for (s, c) in row {
                *mine.entry(*s).or_default() += c;
            }
        }
        self
    }

    pub fn to_model(&self) -> Result<BigramModel> {
        let content_size = self.unigram.counts.len() as u32;
        let rows = self
            .transitions
            .iter()
            .map(|(&ctx, counts)| (ctx, ConditionalRow::from_counts(counts)))
            .collect();
        BigramModel::new(
            content_size,
            rows,
            self.unigram.to_distribution()?,
            self.starts.to_distribution()?,
        )
    }
}

pub fn estimate_bigram<I, S>(corpus: I, vocab: &Vocabulary) -> Result<BigramModel>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[TokenId]>,
{
    let mut counts = BigramCounts::new(vocab.content_size());
    for seq in corpus {
        counts.observe(seq.as_ref())?;
    }
    counts.to_model()
}

/// Row-wise comparison of an empirical bi-gram model against a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDivergence {
    pub context: TokenId,
    pub visits: u64,
    /// `KL(empirical row || target row)` in nats.
    pub kl: f64,
    /// Support size of the target row (backoff support when the row is missing).
    pub target_support: usize,
}

/// KL of every empirical row with at least `min_visits` visits.
pub fn bigram_row_divergences(
    empirical: &BigramModel,
    target: &BigramModel,
    min_visits: u64,
) -> Vec<RowDivergence> {
    let n = target.content_size;
    empirical
        .rows()
        .filter(|(_, row)| row.visits >= min_visits)
        .map(|(ctx, row)| {
            let target_row = match target.row(ctx) {
                Some(r) => r.to_dense(n),
                None => target.backoff().clone(),
            };
            RowDivergence {
                context: ctx,
                visits: row.visits,
                kl: kl_divergence(&row.to_dense(n), &target_row),
                target_support: target_row.support_size(),
            }
        })
        .collect()
}

/// Chain sampler for a [`BigramModel`]; unseen contexts back off to the uni-gram.
#[derive(Debug, Clone)]
pub struct BigramSampler {
    start: AliasSampler,
    backoff: AliasSampler,
    rows: Vec<Option<(Vec<TokenId>, AliasSampler)>>,
}

impl BigramSampler {
    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenId {
        self.start.sample(rng)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, context: TokenId, rng: &mut R) -> TokenId {
        match self.rows.get(context as usize) {
            Some(Some((successors, sampler))) => successors[sampler.sample(rng) as usize],
            _ => self.backoff.sample(rng),
        }
    }
}

const UNIGRAM_FORMAT: &str = "artilang-unigram-v1";
const BIGRAM_FORMAT: &str = "artilang-bigram-v1";

#[derive(Serialize, Deserialize)]
struct DistributionFile {
    format: String,
    content_size: u32,
    source: String,
    probabilities: BTreeMap<TokenId, f64>,
}

#[derive(Serialize, Deserialize)]
struct RowFile {
    visits: u64,
    successors: BTreeMap<TokenId, f64>,
}

#[derive(Serialize, Deserialize)]
struct BigramFile {
    format: String,
    content_size: u32,
    source: String,
    start: BTreeMap<TokenId, f64>,
    backoff: BTreeMap<TokenId, f64>,
    rows: BTreeMap<TokenId, RowFile>,
}

fn sparse(probs: &[f64]) -> BTreeMap<TokenId, f64> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| (i as TokenId, p))
        .collect()
}

fn dense(entries: &BTreeMap<TokenId, f64>, content_size: u32) -> Result<Vec<f64>> {
    let mut probs = vec![0.0; content_size as usize];
    for (&id, &p) in entries {
        *probs
            .get_mut(id as usize)
            .ok_or_else(|| Error::invalid(format!("id {id} outside content size {content_size}")))? = p;
    }
    Ok(probs)
}

fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn vocab(n: u32) -> Vocabulary {
        Vocabulary::new(n).unwrap()
    }

    fn sample_counts(dist: &TokenDistribution, draws: usize, seed: u64) -> UnigramCounts {
        let sampler = dist.sampler();
        let mut rng = derive_rng(seed, 0);
        let seq: Vec<_> = (0..draws).map(|_| sampler.sample(&mut rng)).collect();
        let mut counts = UnigramCounts::new(dist.len() as u32);
        counts.observe(&seq).unwrap();
        counts
    }

    #[test]
    fn unigram_counts_relative_frequencies() {
        let d = estimate_unigram([vec![0, 0, 1]], &vocab(4)).unwrap();
        assert_abs_diff_eq!(d.prob(0), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.prob(1), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(d.prob(2), 0.0);

        let d = estimate_unigram([vec![3; 10]], &vocab(4)).unwrap();
        assert_eq!(d, TokenDistribution::point_mass(4, 3));
    }

    #[test]
    fn estimation_rejects_empty_corpus_and_specials() {
        assert!(estimate_unigram(Vec::<Vec<u32>>::new(), &vocab(4)).is_err());
        assert!(estimate_unigram([vec![4]], &vocab(4)).is_err());
        assert!(estimate_bigram(Vec::<Vec<u32>>::new(), &vocab(4)).is_err());
    }

    #[test]
    fn bigram_rows_from_alternation() {
        let m = estimate_bigram([vec![0, 1, 0, 1]], &vocab(4)).unwrap();
        assert_eq!(m.row(0).unwrap().prob(1), 1.0);
        assert_eq!(m.row(1).unwrap().prob(0), 1.0);
        assert_eq!(m.row(0).unwrap().visits, 2);
        assert_eq!(m.start(), &TokenDistribution::point_mass(4, 0));
        assert_eq!(m.backoff(), &estimate_unigram([vec![0, 1, 0, 1]], &vocab(4)).unwrap());
    }

    #[test]
    fn bigram_of_singletons_has_no_rows() {
        let m = estimate_bigram([vec![2], vec![3], vec![2]], &vocab(4)).unwrap();
        assert_eq!(m.rows().count(), 0);
        assert_abs_diff_eq!(m.start().prob(2), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(m.start(), m.backoff());
    }

    #[test]
    fn bigram_pairs_do_not_cross_sequences() {
        let m = estimate_bigram([vec![0, 1], vec![2, 3]], &vocab(4)).unwrap();
        assert!(m.row(1).is_none());
    }

    #[test]
    fn zipf_closed_forms() {
        let d = zipf_distribution(2, 1.0).unwrap();
        assert_abs_diff_eq!(d.prob(0), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.prob(1), 1.0 / 3.0, epsilon = 1e-15);
        let flat = zipf_distribution(2, 0.0).unwrap();
        assert_eq!(flat.probs(), &[0.5, 0.5]);
        let full = zipf_distribution(29_995, 1.1).unwrap();
        assert_abs_diff_eq!(full.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert!(zipf_distribution(2, -1.0).is_err());
    }

    #[test]
    fn point_mass_always_sampled() {
        let sampler = TokenDistribution::point_mass(16, 7).sampler();
        let mut rng = derive_rng(1, 0);
        assert!((0..10_000).all(|_| sampler.sample(&mut rng) == 7));
    }

    #[test]
    fn zero_probability_ids_never_drawn() {
        let d = TokenDistribution::new(vec![0.0, 0.3, 0.0, 0.7, 0.0]).unwrap();
        let counts = sample_counts(&d, 100_000, 3);
        assert_eq!(counts.counts()[0] + counts.counts()[2] + counts.counts()[4], 0);
    }

    #[test]
    fn fair_coin_frequencies() {
        // 100k fair draws: sd of the frequency is 0.0016, so 0.49..0.51 is a 6-sigma band.
        let counts = sample_counts(&TokenDistribution::uniform(2), 100_000, 11);
        for &c in counts.counts() {
            let f = c as f64 / 100_000.0;
            assert!((0.49..=0.51).contains(&f), "frequency {f}");
        }
    }

    #[test]
    fn kl_closed_forms() {
        let p = TokenDistribution::new(vec![1.0, 0.0]).unwrap();
        let q = TokenDistribution::uniform(2);
        assert_abs_diff_eq!(kl_divergence(&p, &q), std::f64::consts::LN_2, epsilon = 1e-9);
        assert_abs_diff_eq!(kl_divergence(&q, &q), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn kl_shrinks_with_sample_size() {
        let target = zipf_distribution(256, 1.1).unwrap();
        let kls: Vec<f64> = [1_000, 10_000, 100_000]
            .iter()
            .map(|&n| {
                // average over a few replicates: monotone in expectation
                (0..4)
                    .map(|r| {
                        let emp = sample_counts(&target, n, 100 + r).to_distribution().unwrap();
                        kl_divergence(&emp, &target)
                    })
                    .sum::<f64>()
                    / 4.0
            })
            .collect();
        assert!(kls[0] > kls[1] && kls[1] > kls[2], "{kls:?}");
    }

    #[test]
    fn missing_row_backs_off() {
        let m = estimate_bigram([vec![0, 1, 0, 1, 2]], &vocab(4)).unwrap().without_row(1);
        let sampler = m.sampler();
        let mut rng = derive_rng(5, 0);
        let next = sampler.sample_next(1, &mut rng);
        assert!(m.backoff().prob(next) > 0.0);
        assert_eq!(sampler.sample_next(0, &mut rng), 1);
    }

    #[test]
    fn files_round_trip_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = [vec![0, 1, 2, 1, 0, 3, 3, 1], vec![2, 2, 1]];
        let uni = estimate_unigram(&corpus, &vocab(5)).unwrap();
        uni.save(dir.path().join("u.json"), "test").unwrap();
        let back = TokenDistribution::load(dir.path().join("u.json")).unwrap();
        for (a, b) in back.probs().iter().zip(uni.probs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }

        let bi = estimate_bigram(&corpus, &vocab(5)).unwrap();
        bi.save(dir.path().join("b.json"), "test").unwrap();
        let back = BigramModel::load(dir.path().join("b.json")).unwrap();
        assert_eq!(back.rows().count(), bi.rows().count());
        for ((ca, ra), (cb, rb)) in back.rows().zip(bi.rows()) {
            assert_eq!((ca, &ra.successors, ra.visits), (cb, &rb.successors, rb.visits));
            for (a, b) in ra.probs.iter().zip(&rb.probs) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
        for (_, row) in back.rows() {
            assert_abs_diff_eq!(row.probs.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
        assert!(BigramModel::load(dir.path().join("u.json")).is_err());
    }

    #[test]
    fn counts_merge_associatively() {
        let a = [vec![0u32, 1, 2], vec![2, 2]];
        let b = [vec![1u32, 0]];
        let mut whole = BigramCounts::new(3);
        for s in a.iter().chain(&b) {
            whole.observe(s).unwrap();
        }
        let (mut left, mut right) = (BigramCounts::new(3), BigramCounts::new(3));
        a.iter().for_each(|s| left.observe(s).unwrap());
        b.iter().for_each(|s| right.observe(s).unwrap());
        assert_eq!(left.merge(&right), whole);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn gibbs_inequality(p in prop::collection::vec(0.0f64..1.0, 8), q in prop::collection::vec(0.0f64..1.0, 8)) {
            prop_assume!(p.iter().sum::<f64>() > 0.0 && q.iter().sum::<f64>() > 0.0);
            let p = TokenDistribution::from_weights(p).unwrap();
            let q = TokenDistribution::from_weights(q).unwrap();
            prop_assert!(raw_kl(p.probs(), q.probs()) >= -1e-9);
            prop_assert!(raw_kl(p.probs(), p.probs()).abs() < 1e-6);
        }
    }
}
