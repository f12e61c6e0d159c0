use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlm::{MlmModel, Real};
use crate::rng::{derive_rng, derive_seed, domain};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RemapStrategy {
    Identity,
    RandomPermutation { seed: u64 },
    /// Pre-training id of frequency rank r takes downstream id of rank r.
    FrequencyRank,
    /// Fresh token embeddings; every other tensor kept.
    ReinitEmbeddings { seed: u64 },
}

/// Bijection over content ids; specials map to themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    /// `forward[pretrain_id] = downstream_id`.
    forward: Vec<TokenId>,
}

impl Permutation {
    pub fn identity(content_size: u32) -> Self {
        Self {
            forward: (0..content_size).collect(),
        }
    }

    pub fn random(content_size: u32, seed: u64) -> Self {
        let mut forward: Vec<TokenId> = (0..content_size).collect();
        forward.shuffle(&mut derive_rng(derive_seed(seed, domain::REMAP), 0));
        Self { forward }
    }

    pub fn from_forward(forward: Vec<TokenId>) -> Result<Self> {
        let mut seen = vec![false; forward.len()];
        for &t in &forward {
            match seen.get_mut(t as usize) {
                Some(s) if !*s => *s = true,
                _ => return Err(Error::invalid(format!("{t} breaks the bijection"))),
            }
        }
        Ok(Self { forward })
    }

    /// Pairs ids of equal frequency rank; ties go to the smaller id.
    pub fn by_frequency_rank(pretrain: &[u64], downstream: &[u64]) -> Result<Self> {
        if pretrain.len() != downstream.len() {
            return Err(Error::invalid(format!(
                "frequency tables differ in size: {} vs {}",
                pretrain.len(),
                downstream.len()
            )));
        }
        let ranked = |counts: &[u64]| {
            let mut ids: Vec<TokenId> = (0..counts.len() as TokenId).collect();
            ids.sort_by_key(|&i| (std::cmp::Reverse(counts[i as usize]), i));
            ids
        };
        let (src, dst) = (ranked(pretrain), ranked(downstream));
        let mut forward = vec![0; pretrain.len()];
        for (s, d) in src.into_iter().zip(dst) {
            forward[s as usize] = d;
        }
        Ok(Self { forward })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn map(&self, token: TokenId) -> TokenId {
        self.forward.get(token as usize).copied().unwrap_or(token)
    }

    pub fn apply(&self, sequence: &[TokenId]) -> Vec<TokenId> {
        sequence.iter().map(|&t| self.map(t)).collect()
    }

    pub fn inverse(&self) -> Self {
        let mut back = vec![0; self.forward.len()];
        for (i, &t) in self.forward.iter().enumerate() {
            back[t as usize] = i as TokenId;
        }
        Self { forward: back }
    }
}

/// Frequency tables a rank remap needs.
#[derive(Debug, Clone, Default)]
pub struct RemapContext {
    pub pretrain_frequencies: Option<Vec<u64>>,
    /// Defaults to ids already sorted by decreasing frequency.
    pub downstream_frequencies: Option<Vec<u64>>,
}

/// Moves the row of every pre-training id to its downstream id, in the
/// embedding table, the output bias and an untied output projection.
pub fn permute_model<F: Real>(model: &MlmModel<F>, perm: &Permutation) -> Result<MlmModel<F>> {
    let vocab = model.vocab();
    if perm.len() != vocab.content_size() as usize {
        return Err(Error::invalid(format!(
            "permutation over {} ids for a model with {} content ids",
            perm.len(),
            vocab.content_size()
        )));
    }
    let mut out = model.clone();
    let src = model.params();
    let dst = out.params_mut();
    for old in 0..vocab.content_size() {
        let (o, n) = (old as usize, perm.map(old) as usize);
        dst.token_embedding.row_mut(n).assign(&src.token_embedding.row(o));
        dst.output_bias[[0, n]] = src.output_bias[[0, o]];
        if let (Some(d), Some(s)) = (dst.output_weight.as_mut(), src.output_weight.as_ref()) {
            d.row_mut(n).assign(&s.row(o));
        }
    }
    Ok(out)
}

pub fn remap_model<F: Real>(
    model: &MlmModel<F>,
    strategy: &RemapStrategy,
    context: &RemapContext,
) -> Result<MlmModel<F>> {
    let content = model.vocab().content_size();
    match strategy {
        RemapStrategy::Identity => Ok(model.clone()),
        RemapStrategy::RandomPermutation { seed } => permute_model(model, &Permutation::random(content, *seed)),
        RemapStrategy::FrequencyRank => {
            let pretrain = context.pretrain_frequencies.as_ref().ok_or_else(|| {
                Error::Manifest("frequency-rank remapping needs pre-training token frequencies".into())
            })?;
            let downstream = context
                .downstream_frequencies
                .clone()
                .unwrap_or_else(|| (0..content as u64).rev().collect());
            permute_model(model, &Permutation::by_frequency_rank(pretrain, &downstream)?)
        }
        RemapStrategy::ReinitEmbeddings { seed } => {
            let mut out = model.clone();
            let config = model.config().clone();
            let mut rng = derive_rng(derive_seed(*seed, domain::REMAP), 1);
            out.params_mut().token_embedding =
                crate::mlm::normal_init(config.vocab_size, config.hidden_dim, config.init_std, &mut rng);
            Ok(out)
        }
    }
}

/// Remaps sequences the same way `remap_model` moves embedding rows.
pub fn remap_sequences(sequences: &[Vec<TokenId>], perm: &Permutation, vocab: &Vocabulary) -> Vec<Vec<TokenId>> {
    sequences
        .iter()
        .map(|s| s.iter().map(|&t| if vocab.is_content(t) { perm.map(t) } else { t }).collect())
        .collect()
}
