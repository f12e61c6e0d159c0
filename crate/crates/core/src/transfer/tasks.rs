use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{format_sequence, read_corpus_all, sidecar_path, Sequence};
use crate::distributions::AliasSampler;
use crate::error::{Error, Result};
use crate::generators::DistributionSource;
use crate::rng::{derive_rng, derive_seed, domain, StreamRng};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// `[CLS] a [SEP] b [SEP]`; 1 iff `b` is a permutation of `a`.
    PermPair,
    /// `[CLS] a [SEP]`; 1 iff some token occurs twice.
    DupPresence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownstreamTask {
    pub kind: TaskKind,
    pub content_size: u32,
    pub segment_len: [usize; 2],
    /// Tokens replaced in a perm_pair negative.
    pub corruption: usize,
    pub distribution: DistributionSource,
    pub train_size: usize,
    pub dev_size: usize,
    pub seed: u64,
}

impl Default for DownstreamTask {
    fn default() -> Self {
        Self {
            kind: TaskKind::PermPair,
            content_size: crate::vocab::DESK_CONTENT_SIZE,
            segment_len: [4, 8],
            corruption: 2,
            distribution: DistributionSource::Uniform,
            train_size: 4000,
            dev_size: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub tokens: Sequence,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Vec<LabeledExample>,
    pub dev: Vec<LabeledExample>,
}

pub const NUM_CLASSES: usize = 2;

impl DownstreamTask {
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.content_size)
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.segment_len;
        if lo == 0 || lo > hi {
            return Err(Error::invalid(format!("bad segment length range [{lo}, {hi}]")));
        }
        match self.kind {
            TaskKind::PermPair if self.corruption == 0 || self.corruption > lo => Err(Error::invalid(format!(
                "corruption {} must be in 1..={lo}",
                self.corruption
            ))),
            TaskKind::PermPair if self.content_size < 2 => {
                Err(Error::invalid("perm_pair needs at least 2 content ids"))
            }
            TaskKind::DupPresence if lo < 2 || hi as u64 > self.content_size as u64 => Err(Error::invalid(format!(
                "dup_presence segments must have 2..={} tokens",
                self.content_size
            ))),
            _ => Ok(()),
        }
    }

    /// Longest encoded example, including the special tokens.
    pub fn max_input_len(&self) -> usize {
        match self.kind {
            TaskKind::PermPair => 2 * self.segment_len[1] + 3,
            TaskKind::DupPresence => self.segment_len[1] + 2,
        }
    }
}

fn draw_segment(sampler: &AliasSampler, len: usize, rng: &mut StreamRng) -> Vec<TokenId> {
    (0..len).map(|_| sampler.sample(rng)).collect()
}

fn draw_distinct(sampler: &AliasSampler, len: usize, rng: &mut StreamRng) -> Result<Vec<TokenId>> {
    let mut out = Vec::with_capacity(len);
    let mut tries = 0;
    while out.len() < len {
        let t = sampler.sample(rng);
        if !out.contains(&t) {
            out.push(t);
        }
        tries += 1;
        if tries > 1000 * len {
            return Err(Error::invalid("distribution support too small for distinct segments"));
        }
    }
    Ok(out)
}

fn multiset(tokens: &[TokenId]) -> HashMap<TokenId, usize> {
    let mut m = HashMap::new();
    tokens.iter().for_each(|&t| *m.entry(t).or_insert(0) += 1);
    m
}

pub fn is_permutation(a: &[TokenId], b: &[TokenId]) -> bool {
    a.len() == b.len() && multiset(a) == multiset(b)
}

pub fn has_duplicate(tokens: &[TokenId]) -> bool {
    multiset(tokens).values().any(|&c| c >= 2)
}

fn perm_pair(
    task: &DownstreamTask,
    sampler: &AliasSampler,
    vocab: &Vocabulary,
    positive: bool,
    rng: &mut StreamRng,
) -> Result<LabeledExample> {
    let len = rng.random_range(task.segment_len[0]..=task.segment_len[1]);
    let a = draw_segment(sampler, len, rng);
    let mut b = a.clone();
    b.shuffle(rng);
    if !positive {
        let original = b.clone();
        loop {
            for p in sample(rng, len, task.corruption) {
                b[p] = sampler.sample(rng);
            }
            if !is_permutation(&a, &b) {
                break;
            }
            b.clone_from(&original);
        }
    }
    let mut tokens = Vec::with_capacity(2 * len + 3);
    tokens.push(vocab.cls());
    tokens.extend_from_slice(&a);
    tokens.push(vocab.sep());
    tokens.extend_from_slice(&b);
    tokens.push(vocab.sep());
    Ok(LabeledExample {
        tokens,
        label: positive as usize,
    })
}

fn dup_presence(
    task: &DownstreamTask,
    sampler: &AliasSampler,
    vocab: &Vocabulary,
    positive: bool,
    rng: &mut StreamRng,
) -> Result<LabeledExample> {
    let len = rng.random_range(task.segment_len[0]..=task.segment_len[1]);
    let mut seg = draw_distinct(sampler, len, rng)?;
    if positive {
        let picks = sample(rng, len, 2);
        let (from, to) = (picks.index(0), picks.index(1));
        seg[to] = seg[from];
    }
    let mut tokens = Vec::with_capacity(len + 2);
    tokens.push(vocab.cls());
    tokens.extend_from_slice(&seg);
    tokens.push(vocab.sep());
    Ok(LabeledExample {
        tokens,
        label: positive as usize,
    })
}

fn build_split(
    task: &DownstreamTask,
    sampler: &AliasSampler,
    vocab: &Vocabulary,
    size: usize,
    stream: u64,
) -> Result<Vec<LabeledExample>> {
    let seed = derive_seed(task.seed, domain::TASK);
    let mut examples = (0..size)
        .map(|i| {
            let mut rng = derive_rng(seed, stream << 32 | i as u64);
            let positive = i % 2 == 0;
            match task.kind {
                TaskKind::PermPair => perm_pair(task, sampler, vocab, positive, &mut rng),
                TaskKind::DupPresence => dup_presence(task, sampler, vocab, positive, &mut rng),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    examples.shuffle(&mut derive_rng(seed, stream << 32 | u32::MAX as u64));
    Ok(examples)
}

/// Balanced train and dev splits, deterministic per seed.
pub fn build_downstream_task(task: &DownstreamTask) -> Result<TaskData> {
    task.validate()?;
    let vocab = task.vocabulary()?;
    let dist = task.distribution.resolve(task.content_size)?;
    if dist.support_size() < 2 {
        return Err(Error::invalid("task distribution needs at least two tokens"));
    }
    let sampler = dist.sampler();
    Ok(TaskData {
        train: build_split(task, &sampler, &vocab, task.train_size, 1)?,
        dev: build_split(task, &sampler, &vocab, task.dev_size, 2)?,
    })
}

pub fn labels_path(path: impl AsRef<Path>) -> PathBuf {
    sidecar_path(path.as_ref(), ".labels")
}

/// Writes the token lines in corpus format and the labels alongside.
pub fn write_examples(path: impl AsRef<Path>, examples: &[LabeledExample]) -> Result<()> {
    let path = path.as_ref();
    let labels = labels_path(path);
    let mut tokens = String::new();
    let mut label_text = String::new();
    for e in examples {
        format_sequence(&e.tokens, &mut tokens);
        label_text.push_str(&format!("{}\n", e.label));
    }
    fs::write(path, tokens).map_err(|e| Error::io(path, e))?;
    fs::write(&labels, label_text).map_err(|e| Error::io(&labels, e))
}

pub fn read_examples(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let sequences = read_corpus_all(path, None)?;
    let labels_file = labels_path(path);
    let text = fs::read_to_string(&labels_file).map_err(|e| Error::io(&labels_file, e))?;
    let labels = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("label {l:?}: {e}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if labels.len() != sequences.len() {
        return Err(Error::invalid(format!(
            "{} sequences but {} labels",
            sequences.len(),
            labels.len()
        )));
    }
    Ok(sequences
        .into_iter()
        .zip(labels)
        .map(|(tokens, label)| LabeledExample { tokens, label })
        .collect())
}
