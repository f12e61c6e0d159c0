//! Entropy-difference dependency probe: for the center position `i`, find the
//! position `j` whose extra masking most raises the model's uncertainty.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Sequence;
use crate::distributions::TokenDistribution;
use crate::error::{Error, Result};
use crate::generators::block_bounds;
use crate::mlm::{MlmModel, PredictionQuery, Real};
use crate::vocab::TokenId;

/// Offsets counted as "near" the center in summaries.
pub const NEAR_RADIUS: usize = 3;

/// `-Σ p ln p` in nats.
pub fn entropy(dist: &TokenDistribution) -> f64 {
    entropy_of(dist.probs())
}

pub fn entropy_of(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub sequence_id: usize,
    pub len: usize,
    pub center: usize,
    /// `H(j and center masked) - H(j masked)` at position `j`; `None` at the
    /// center and at special tokens.
    pub deltas: Vec<Option<f64>>,
    pub j_star: usize,
}

impl ProbeResult {
    pub fn offset(&self) -> i64 {
        self.j_star as i64 - self.center as i64
    }

    pub fn candidates(&self) -> impl Iterator<Item = usize> + '_ {
        self.deltas
            .iter()
            .enumerate()
            .filter_map(|(j, d)| d.map(|_| j))
    }
}

/// Largest delta; ties go to the nearest position, then the leftmost.
fn arg_max(center: usize, deltas: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, d) in deltas.iter().enumerate() {
        let Some(d) = *d else { continue };
        let better = match best {
            None => true,
            Some((b, bd)) => d > bd || (d == bd && j.abs_diff(center) < b.abs_diff(center)),
        };
        if better {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| j)
}

/// Probes the center `⌊T/2⌋` of one sequence with MASK-only replacement:
/// two predictions per candidate `j`, both read at `j`.
pub fn probe_sequence<F: Real>(model: &MlmModel<F>, sequence: &[TokenId], sequence_id: usize) -> Result<ProbeResult> {
    let len = sequence.len();
    if len < 3 {
        return Err(Error::invalid(format!("probing needs at least 3 tokens, got {len}")));
    }
    let vocab = model.vocab();
    let center = len / 2;
    let candidates: Vec<usize> = (0..len)
        .filter(|&j| j != center && vocab.is_content(sequence[j]))
        .collect();
    if candidates.is_empty() {
        return Err(Error::invalid("no content positions to probe"));
    }
    let mut queries = Vec::with_capacity(2 * candidates.len());
    for &j in &candidates {
        let mut both = vec![j, center];
        both.sort_unstable();
        for masked in [vec![j], both] {
            queries.push(PredictionQuery {
                tokens: sequence.to_vec(),
                masked,
                query: j,
            });
        }
    }
    let dists = model.predict_many(&queries)?;
    let mut deltas = vec![None; len];
    for (k, &j) in candidates.iter().enumerate() {
        let delta = entropy(&dists[2 * k + 1]) - entropy(&dists[2 * k]);
        if !delta.is_finite() {
            return Err(Error::invalid(format!("non-finite entropy difference at position {j}")));
        }
        deltas[j] = Some(delta);
    }
    let j_star = arg_max(center, &deltas).expect("at least one candidate");
    Ok(ProbeResult {
        sequence_id,
        len,
        center,
        deltas,
        j_star,
    })
}

/// Probes sequences in parallel; results keep corpus order.
pub fn probe_sequences<F: Real>(model: &MlmModel<F>, sequences: &[Sequence]) -> Result<Vec<ProbeResult>> {
    sequences
        .par_iter()
        .enumerate()
        .map(|(id, s)| probe_sequence(model, s, id))
        .collect()
}

/// Counts of `j* - i` over probed sequences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeHistogram {
    pub counts: BTreeMap<i64, u64>,
    pub total: u64,
    /// Sum over sequences of the share of candidates within `NEAR_RADIUS`.
    chance_near: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub total: u64,
    pub modal_offset: Option<i64>,
    pub modal_fraction: f64,
    pub within_1: f64,
    pub within_3: f64,
    /// `within_3` over what uniformly random `j*` would give.
    pub concentration_ratio: f64,
}

impl ProbeHistogram {
    pub fn add(&mut self, result: &ProbeResult) {
        *self.counts.entry(result.offset()).or_default() += 1;
        self.total += 1;
        let (mut near, mut all) = (0usize, 0usize);
        for j in result.candidates() {
            all += 1;
            near += (j.abs_diff(result.center) <= NEAR_RADIUS) as usize;
        }
        self.chance_near += near as f64 / all as f64;
    }

    pub fn from_results(results: &[ProbeResult]) -> Self {
        let mut h = Self::default();
        results.iter().for_each(|r| h.add(r));
        h
    }

    pub fn merge(mut self, other: &Self) -> Self {
        for (&k, &c) in &other.counts {
            *self.counts.entry(k).or_default() += c;
        }
        self.total += other.total;
        self.chance_near += other.chance_near;
        self
    }

    fn fraction_within(&self, radius: u64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let near: u64 = self
            .counts
            .iter()
            .filter(|(k, _)| k.unsigned_abs() <= radius)
            .map(|(_, c)| c)
            .sum();
        near as f64 / self.total as f64
    }

    /// Most frequent offset; ties go to the smaller magnitude, then the negative side.
    pub fn modal_offset(&self) -> Option<i64> {
        self.counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.abs().cmp(&a.0.abs())).then(b.0.cmp(a.0)))
            .map(|(&k, _)| k)
    }

    pub fn summary(&self) -> ProbeSummary {
        let modal_offset = self.modal_offset();
        let modal_fraction = modal_offset
            .map(|k| self.counts[&k] as f64 / self.total as f64)
            .unwrap_or(0.0);
        let within_3 = self.fraction_within(NEAR_RADIUS as u64);
        let chance = if self.total == 0 {
            0.0
        } else {
            self.chance_near / self.total as f64
        };
        ProbeSummary {
            total: self.total,
            modal_offset,
            modal_fraction,
            within_1: self.fraction_within(1),
            within_3,
            concentration_ratio: if chance > 0.0 { within_3 / chance } else { 0.0 },
        }
    }

    /// `relative_offset,count` rows covering every offset between the extremes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("relative_offset,count\n");
        if let (Some((&lo, _)), Some((&hi, _))) = (self.counts.first_key_value(), self.counts.last_key_value()) {
            for k in lo..=hi {
                out.push_str(&format!("{k},{}\n", self.counts.get(&k).copied().unwrap_or(0)));
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Probes up to `max_sequences` sequences and accumulates their offsets.
pub fn probe_corpus<F: Real>(
    model: &MlmModel<F>,
    corpus: &[Sequence],
    max_sequences: usize,
) -> Result<(ProbeHistogram, Vec<ProbeResult>)> {
    let n = corpus.len().min(max_sequences);
    let results = probe_sequences(model, &corpus[..n])?;
    Ok((ProbeHistogram::from_results(&results), results))
}

/// Share of `j*` inside the center's aligned block of `block_size`, next to
/// the share a uniformly random candidate would land there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockConcentration {
    pub inside: f64,
    pub chance: f64,
    pub ratio: f64,
}

pub fn block_concentration(results: &[ProbeResult], block_size: usize) -> BlockConcentration {
    let (mut inside, mut chance) = (0.0, 0.0);
    for r in results {
        let block = block_bounds(r.len, block_size, r.center);
        inside += block.contains(&r.j_star) as u8 as f64;
        let candidates: Vec<usize> = r.candidates().collect();
        let in_block = candidates.iter().filter(|j| block.contains(j)).count();
        chance += in_block as f64 / candidates.len() as f64;
    }
    let n = results.len().max(1) as f64;
    let (inside, chance) = (inside / n, chance / n);
    BlockConcentration {
        inside,
        chance,
        ratio: if chance > 0.0 { inside / chance } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlm::MlmConfig;
    use crate::rng::derive_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn entropy_closed_forms() {
        assert_abs_diff_eq!(entropy(&TokenDistribution::uniform(64)), 64f64.ln(), epsilon = 1e-12);
        assert_eq!(entropy(&TokenDistribution::point_mass(5, 2)), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn entropy_below_log_support(w in prop::collection::vec(0.0f64..1.0, 1..40)) {
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let d = TokenDistribution::from_weights(w).unwrap();
            let h = entropy(&d);
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (d.support_size() as f64).ln() + 1e-9);
        }
    }

    /// Output depends on nothing: every projection and the final norm gain are zero.
    fn constant_model() -> MlmModel<f64> {
        let mut m = MlmModel::new(MlmConfig::default(), 0).unwrap();
        let p = m.params_mut();
        p.final_norm_gain.fill(0.0);
        p.final_norm_bias.fill(0.0);
        m
    }

    #[test]
    fn constant_model_ties_to_left_neighbor() {
        let m = constant_model();
        let seq: Vec<TokenId> = (0..9).collect();
        let r = probe_sequence(&m, &seq, 0).unwrap();
        assert_eq!(r.center, 4);
        assert!(r.candidates().all(|j| r.deltas[j] == Some(0.0)));
        assert_eq!(r.j_star, 3);
        assert_eq!(r.deltas[4], None);
    }

    #[test]
    fn short_sequences_are_refused() {
        assert!(probe_sequence(&constant_model(), &[1, 2], 0).is_err());
    }

    #[test]
    fn tie_rule_prefers_near_then_left() {
        let d = [Some(1.0), Some(2.0), None, Some(2.0), Some(0.5)];
        assert_eq!(arg_max(2, &d), Some(1));
        let d = [Some(3.0), Some(2.0), None, Some(2.0), Some(3.0)];
        assert_eq!(arg_max(2, &d), Some(0));
    }

    #[test]
    fn specials_are_skipped() {
        let m = MlmModel::<f64>::new(MlmConfig::default(), 1).unwrap();
        let v = m.vocab();
        let seq = vec![v.cls(), 3, 4, 5, 6, v.sep()];
        let r = probe_sequence(&m, &seq, 0).unwrap();
        assert_eq!(r.deltas[0], None);
        assert_eq!(r.deltas[5], None);
        assert_eq!(r.candidates().count(), 3);
        assert!(r.candidates().all(|j| r.deltas[j].unwrap().is_finite()));
    }

    #[test]
    fn batched_and_serial_probing_agree() {
        let m = MlmModel::<f64>::new(MlmConfig::default(), 5).unwrap();
        let mut rng = derive_rng(1, 0);
        let corpus: Vec<Sequence> = (0..4)
            .map(|i| crate::generators::gen_uniform(64, 20 + i, &mut rng))
            .collect();
        let batched = probe_sequences(&m, &corpus).unwrap();
        for (i, s) in corpus.iter().enumerate() {
            let one = probe_sequence(&m, s, i).unwrap();
            assert_eq!(one.j_star, batched[i].j_star);
            for (a, b) in one.deltas.iter().zip(&batched[i].deltas) {
                assert_abs_diff_eq!(a.unwrap_or(0.0), b.unwrap_or(0.0), epsilon = 1e-6);
            }
        }
    }

    fn forced(offset: i64, len: usize) -> ProbeResult {
        let center = len / 2;
        let j_star = (center as i64 + offset) as usize;
        let mut deltas = vec![Some(0.0); len];
        deltas[center] = None;
        deltas[j_star] = Some(1.0);
        ProbeResult {
            sequence_id: 0,
            len,
            center,
            deltas,
            j_star,
        }
    }

    #[test]
    fn histogram_counts_forced_offsets() {
        let h = ProbeHistogram::from_results(&[forced(1, 9), forced(1, 9)]);
        assert_eq!(h.counts, BTreeMap::from([(1, 2)]));
        assert_eq!(h.total, 2);
        let s = h.summary();
        assert_eq!(s.modal_offset, Some(1));
        assert_eq!(s.within_1, 1.0);
        // 6 of 8 candidates lie within 3 of the center
        assert_abs_diff_eq!(s.concentration_ratio, 1.0 / 0.75, epsilon = 1e-12);
        assert_eq!(h.to_csv(), "relative_offset,count\n1,2\n");
    }

    #[test]
    fn histogram_merge_is_associative() {
        let rs: Vec<_> = [-2, 1, 1, 3, -1].iter().map(|&o| forced(o, 11)).collect();
        let parts: Vec<_> = rs.iter().map(|r| ProbeHistogram::from_results(std::slice::from_ref(r))).collect();
        let left = parts.iter().fold(ProbeHistogram::default(), |a, b| a.merge(b));
        let right = parts
            .iter()
            .rev()
            .fold(ProbeHistogram::default(), |a, b| b.clone().merge(&a));
        assert_eq!(left.counts, right.counts);
        assert_eq!(left, ProbeHistogram::from_results(&rs));
        assert_eq!(left.to_csv().lines().count(), 1 + 6);
    }

    #[test]
    fn block_share_against_chance() {
        // len 12, block 4: center 6 sits in 4..8, three of eleven candidates share it
        let c = block_concentration(&[forced(1, 12), forced(-3, 12)], 4);
        assert_abs_diff_eq!(c.inside, 0.5);
        assert_abs_diff_eq!(c.chance, 3.0 / 11.0, epsilon = 1e-12);
    }
}
