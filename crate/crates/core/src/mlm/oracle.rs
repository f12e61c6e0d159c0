use crate::distributions::TokenDistribution;
use crate::error::{Error, Result};
use crate::generators::block_bounds;
use crate::vocab::{TokenId, Vocabulary};

/// Exact posterior of the token at `masked` in a Shuffle-`block_size`
/// sequence, given every other position.
///
/// Blocks are independent, so only the block holding `masked` matters: each
/// start `s` whose run `s..s+width` covers the visible members is equally
/// likely, and the missing members are equally likely at the masked slot.
/// The result ranges over the whole vocabulary; specials get zero mass.
pub fn bayes_oracle_shuffle(
    block_size: usize,
    vocab: &Vocabulary,
    sequence: &[TokenId],
    masked: usize,
) -> Result<TokenDistribution> {
    if block_size == 0 {
        return Err(Error::invalid("block size must be positive"));
    }
    if masked >= sequence.len() {
        return Err(Error::PositionOutOfRange {
            position: masked,
            len: sequence.len(),
        });
    }
    let content = vocab.content_size();
    let block = block_bounds(sequence.len(), block_size, masked);
    let width = block.len() as TokenId;
    if width > content {
        return Err(Error::InconsistentBlock(format!(
            "block of {width} exceeds {content} content ids"
        )));
    }
    let mut visible: Vec<TokenId> = block
        .clone()
        .filter(|&p| p != masked)
        .map(|p| sequence[p])
        .collect();
    visible.sort_unstable();
    if visible.windows(2).any(|w| w[0] == w[1]) || visible.iter().any(|&t| t >= content) {
        return Err(Error::InconsistentBlock(format!(
            "visible members {visible:?} are not distinct content ids"
        )));
    }
    let (lo, hi) = match (visible.first(), visible.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => (content - 1, 0),
    };
    if !visible.is_empty() && hi - lo >= width {
        return Err(Error::InconsistentBlock(format!(
            "visible members {visible:?} do not fit a run of {width}"
        )));
    }
    // valid starts: s <= lo, s + width - 1 >= hi, 0 <= s <= content - width
    let first = (hi + 1).saturating_sub(width);
    let last = lo.min(content - width);
    let mut weights = vec![0.0; vocab.total_size() as usize];
    for s in first..=last {
        let missing: Vec<TokenId> = (s..s + width)
            .filter(|t| visible.binary_search(t).is_err())
            .collect();
        let share = 1.0 / missing.len() as f64;
        for t in missing {
            weights[t as usize] += share;
        }
    }
    TokenDistribution::from_weights(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_gap_is_determined() {
        let v = Vocabulary::desk();
        let d = bayes_oracle_shuffle(4, &v, &[7, 8, 0, 10], 2).unwrap();
        assert_eq!(d.prob(9), 1.0);
        assert_eq!(d.len(), 69);
    }

    #[test]
    fn open_end_splits_evenly() {
        let v = Vocabulary::desk();
        let d = bayes_oracle_shuffle(4, &v, &[7, 8, 9, 0], 3).unwrap();
        assert_abs_diff_eq!(d.prob(6), 0.5);
        assert_abs_diff_eq!(d.prob(10), 0.5);
    }

    #[test]
    fn vocabulary_edge_limits_starts() {
        let v = Vocabulary::desk();
        // only s = 0 fits below id 0
        let d = bayes_oracle_shuffle(4, &v, &[0, 1, 2, 40], 3).unwrap();
        assert_eq!(d.prob(3), 1.0);
        let d = bayes_oracle_shuffle(4, &v, &[63, 62, 61, 0], 3).unwrap();
        assert_eq!(d.prob(60), 1.0);
    }

    #[test]
    fn later_blocks_and_partial_blocks_are_isolated() {
        let v = Vocabulary::desk();
        // block 1 is positions 4..8; the final partial block has width 2
        let seq = [1, 2, 3, 4, 20, 21, 22, 23, 50, 51];
        let d = bayes_oracle_shuffle(4, &v, &seq, 9).unwrap();
        assert_abs_diff_eq!(d.prob(49), 0.5);
        assert_abs_diff_eq!(d.prob(51), 0.5);
    }

    #[test]
    fn agrees_with_brute_force_enumeration() {
        // every (start, arrangement) of one block of 4 over 7 ids is equally likely
        let v = Vocabulary::new(7).unwrap();
        let mut worlds = Vec::new();
        for s in 0..=3u32 {
            let ids = [s, s + 1, s + 2, s + 3];
            for a in 0..4 {
                for b in 0..4 {
                    for c in 0..4 {
                        for d in 0..4 {
                            let p = [a, b, c, d];
                            let mut q = p;
                            q.sort_unstable();
                            if q == [0, 1, 2, 3] {
                                worlds.push(p.map(|i| ids[i]));
                            }
                        }
                    }
                }
            }
        }
        for masked in 0..4 {
            for w in &worlds {
                let matching: Vec<_> = worlds
                    .iter()
                    .filter(|o| (0..4).all(|p| p == masked || o[p] == w[p]))
                    .collect();
                let d = bayes_oracle_shuffle(4, &v, w, masked).unwrap();
                for t in 0..7 {
                    let expected = matching.iter().filter(|o| o[masked] == t).count() as f64
                        / matching.len() as f64;
                    assert_abs_diff_eq!(d.prob(t), expected, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn inconsistent_blocks_error() {
        let v = Vocabulary::desk();
        assert!(matches!(
            bayes_oracle_shuffle(4, &v, &[3, 9, 0, 0], 2),
            Err(Error::InconsistentBlock(_))
        ));
        assert!(bayes_oracle_shuffle(4, &v, &[3, 3, 4, 0], 3).is_err());
        assert!(bayes_oracle_shuffle(4, &v, &[3, 4], 5).is_err());
    }
}
