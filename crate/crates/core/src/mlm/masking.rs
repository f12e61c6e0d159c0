use rand::seq::IteratorRandom;
use rand::Rng;

use super::config::{MaskingMode, MaskingPolicy};
use super::encoder::Batch;
use crate::error::Result;
use crate::vocab::{TokenId, Vocabulary};

/// Corrupted inputs plus, per flat row, the original token the loss must
/// recover (`None` where the row does not count).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub batch: Batch,
    pub targets: Vec<Option<TokenId>>,
}

impl MaskedBatch {
    pub fn loss_mask(&self) -> Vec<bool> {
        self.targets.iter().map(Option::is_some).collect()
    }

    pub fn target_rows(&self) -> Vec<usize> {
        self.targets
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|_| i))
            .collect()
    }

    pub fn selected(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }
}

fn replace<R: Rng + ?Sized>(token: TokenId, vocab: &Vocabulary, policy: &MaskingPolicy, rng: &mut R) -> TokenId {
    let u = rng.random::<f64>();
    if u < policy.replace_mask {
        vocab.mask()
    } else if u < policy.replace_mask + policy.replace_random {
        rng.random_range(0..vocab.content_size())
    } else {
        token
    }
}

/// Selects content positions per the policy and corrupts them; special
/// tokens are never selected.
pub fn mask_batch<S: AsRef<[TokenId]>, R: Rng + ?Sized>(
    sequences: &[S],
    vocab: &Vocabulary,
    policy: &MaskingPolicy,
    rng: &mut R,
) -> Result<MaskedBatch> {
    policy.validate()?;
    let mut batch = Batch::from_sequences(sequences, vocab)?;
    let mut targets = vec![None; batch.rows()];
    for (s, seq) in sequences.iter().enumerate() {
        let seq = seq.as_ref();
        let chosen: Vec<usize> = match policy.mode {
            MaskingMode::Dynamic => (0..seq.len())
                .filter(|&p| vocab.is_content(seq[p]) && rng.random::<f64>() < policy.mask_prob)
                .collect(),
            MaskingMode::SingleMask => (0..seq.len())
                .filter(|&p| vocab.is_content(seq[p]))
                .choose(rng)
                .into_iter()
                .collect(),
        };
        for p in chosen {
            let r = batch.row(s, p);
            targets[r] = Some(seq[p]);
            batch.ids[r] = replace(seq[p], vocab, policy, rng);
        }
    }
    Ok(MaskedBatch { batch, targets })
}

/// Replaces the given positions of each sequence with MASK and targets them.
pub fn mask_positions<S: AsRef<[TokenId]>>(
    sequences: &[S],
    positions: &[Vec<usize>],
    vocab: &Vocabulary,
) -> Result<MaskedBatch> {
    let mut batch = Batch::from_sequences(sequences, vocab)?;
    let mut targets = vec![None; batch.rows()];
    for (s, (seq, ps)) in sequences.iter().zip(positions).enumerate() {
        let seq = seq.as_ref();
        for &p in ps {
            if p >= seq.len() {
                return Err(crate::Error::PositionOutOfRange {
                    position: p,
                    len: seq.len(),
                });
            }
            let r = batch.row(s, p);
            targets[r] = Some(seq[p]);
            batch.ids[r] = vocab.mask();
        }
    }
    Ok(MaskedBatch { batch, targets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use approx::assert_abs_diff_eq;

    fn corpus(n: usize, len: usize) -> Vec<Vec<TokenId>> {
        (0..n).map(|i| (0..len).map(|j| ((i + j) % 64) as TokenId).collect()).collect()
    }

    #[test]
    fn dynamic_rates_match_policy() {
        let vocab = Vocabulary::desk();
        let seqs = corpus(1000, 100);
        let m = mask_batch(&seqs, &vocab, &MaskingPolicy::default(), &mut derive_rng(1, 0)).unwrap();
        let selected = m.selected() as f64;
        // binomial sd at n = 1e5 is 0.0011
        assert_abs_diff_eq!(selected / 100_000.0, 0.15, epsilon = 0.005);
        let mut masked = 0.0;
        let mut kept = 0.0;
        for r in m.target_rows() {
            let (orig, now) = (m.targets[r].unwrap(), m.batch.ids[r]);
            if now == vocab.mask() {
                masked += 1.0;
            } else if now == orig {
                kept += 1.0;
            }
        }
        assert_abs_diff_eq!(masked / selected, 0.8, epsilon = 0.02);
        // random replacements can coincide with the original token
        assert_abs_diff_eq!(kept / selected, 0.1 + 0.1 / 64.0, epsilon = 0.02);
    }

    #[test]
    fn zero_rate_leaves_input_alone() {
        let vocab = Vocabulary::desk();
        let seqs = corpus(20, 30);
        let policy = MaskingPolicy {
            mask_prob: 0.0,
            ..MaskingPolicy::default()
        };
        let m = mask_batch(&seqs, &vocab, &policy, &mut derive_rng(1, 1)).unwrap();
        assert_eq!(m.selected(), 0);
        assert_eq!(m.batch, Batch::from_sequences(&seqs, &vocab).unwrap());
    }

    #[test]
    fn single_mask_on_five_tokens() {
        let vocab = Vocabulary::desk();
        let m = mask_batch(&[vec![1, 2, 3, 4, 5]], &vocab, &MaskingPolicy::single_mask(), &mut derive_rng(0, 9)).unwrap();
        assert_eq!(m.selected(), 1);
        assert_eq!(m.batch.ids.iter().filter(|&&t| t == vocab.mask()).count(), 1);
    }

    #[test]
    fn specials_are_never_selected() {
        let vocab = Vocabulary::desk();
        let seq = vec![vocab.cls(), 1, 2, vocab.sep(), 3, vocab.sep()];
        let policy = MaskingPolicy {
            mask_prob: 1.0,
            ..MaskingPolicy::default()
        };
        let m = mask_batch(&[seq], &vocab, &policy, &mut derive_rng(2, 0)).unwrap();
        assert_eq!(m.loss_mask(), vec![false, true, true, false, true, false]);
    }

    #[test]
    fn single_mask_picks_one_per_sequence() {
        let vocab = Vocabulary::desk();
        let seqs = corpus(50, 30);
        let m = mask_batch(&seqs, &vocab, &MaskingPolicy::single_mask(), &mut derive_rng(3, 0)).unwrap();
        assert_eq!(m.selected(), 50);
        for r in m.target_rows() {
            assert_eq!(m.batch.ids[r], vocab.mask());
        }
    }

    #[test]
    fn padding_is_invalid_and_untargeted() {
        let vocab = Vocabulary::desk();
        let m = mask_positions(&[vec![1, 2, 3], vec![4]], &[vec![2], vec![0]], &vocab).unwrap();
        assert_eq!(m.batch.len, 3);
        assert_eq!(m.batch.valid, vec![true, true, true, true, false, false]);
        assert_eq!(m.targets, vec![None, None, Some(3), Some(4), None, None]);
        assert!(mask_positions(&[vec![1]], &[vec![1]], &vocab).is_err());
    }

    #[test]
    fn same_stream_same_masks() {
        let vocab = Vocabulary::desk();
        let seqs = corpus(10, 20);
        let a = mask_batch(&seqs, &vocab, &MaskingPolicy::default(), &mut derive_rng(9, 4)).unwrap();
        let b = mask_batch(&seqs, &vocab, &MaskingPolicy::default(), &mut derive_rng(9, 4)).unwrap();
        let c = mask_batch(&seqs, &vocab, &MaskingPolicy::default(), &mut derive_rng(9, 5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
