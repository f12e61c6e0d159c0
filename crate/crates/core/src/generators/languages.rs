//! The six sequence grammars, one function per language.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Sequence;
use crate::distributions::{AliasSampler, BigramSampler};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Positions of depending token pairs in one sequence, `open < close`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingWitness {
    pub pairs: Vec<(usize, usize)>,
}

impl PairingWitness {
    /// Inclusive span `close - open + 1` of every pair.
    pub fn spans(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|&(o, c)| c - o + 1)
    }

    pub fn max_span(&self) -> Option<usize> {
        self.spans().max()
    }

    /// Pairs cover every position exactly once and join equal tokens.
    pub fn check_partition(&self, seq: &[TokenId]) -> std::result::Result<(), String> {
        let mut seen = vec![false; seq.len()];
        for &(o, c) in &self.pairs {
            if o >= c || c >= seq.len() {
                return Err(format!("pair ({o}, {c}) is not ordered within the sequence"));
            }
            for p in [o, c] {
                if std::mem::replace(&mut seen[p], true) {
                    return Err(format!("position {p} is paired twice"));
                }
            }
            if seq[o] != seq[c] {
                return Err(format!("pair ({o}, {c}) joins {} and {}", seq[o], seq[c]));
            }
        }
        match seen.iter().position(|s| !s) {
            Some(p) => Err(format!("position {p} is unpaired")),
            None => Ok(()),
        }
    }

    /// No `o1 < o2 < c1 < c2`.
    pub fn is_non_crossing(&self) -> bool {
        let mut sorted = self.pairs.clone();
        sorted.sort_unstable();
        let mut open: Vec<usize> = Vec::new();
        let mut events: Vec<(usize, bool, usize)> = Vec::with_capacity(sorted.len() * 2);
        for (k, &(o, c)) in sorted.iter().enumerate() {
            events.push((o, true, k));
            events.push((c, false, k));
        }
        events.sort_unstable();
        for (_, is_open, k) in events {
            if is_open {
                open.push(k);
            } else if open.pop() != Some(k) {
                return false;
            }
        }
        true
    }
}

/// Pairs every occurrence of a value with its next occurrence. Among all
/// pairings of equal values this one minimizes the largest span. Values with
/// an odd count leave their final occurrence unpaired.
pub fn consecutive_pairing(seq: &[TokenId]) -> (PairingWitness, Vec<usize>) {
    let mut open: std::collections::HashMap<TokenId, usize> = Default::default();
    let mut pairs = Vec::with_capacity(seq.len() / 2);
    for (pos, &t) in seq.iter().enumerate() {
        match open.remove(&t) {
            Some(o) => pairs.push((o, pos)),
            None => {
                open.insert(t, pos);
            }
        }
    }
    let mut unpaired: Vec<usize> = open.into_values().collect();
    unpaired.sort_unstable();
    pairs.sort_unstable();
    (PairingWitness { pairs }, unpaired)
}

/// Greedy recognizer for well-nested equal-token pairs: push a token unless
/// it equals the stack top, in which case pop. Returns the pairing and the
/// positions still open at the end.
pub fn stack_pairing(seq: &[TokenId]) -> (PairingWitness, Vec<usize>) {
    let mut stack: Vec<usize> = Vec::new();
    let mut pairs = Vec::with_capacity(seq.len() / 2);
    for (pos, &t) in seq.iter().enumerate() {
        match stack.last() {
            Some(&top) if seq[top] == t => {
                stack.pop();
                pairs.push((top, pos));
            }
            _ => stack.push(pos),
        }
    }
    pairs.sort_unstable();
    (PairingWitness { pairs }, stack)
}

pub fn gen_uniform<R: Rng + ?Sized>(content_size: u32, len: usize, rng: &mut R) -> Sequence {
    (0..len).map(|_| rng.random_range(0..content_size)).collect()
}

pub fn gen_unigram<R: Rng + ?Sized>(dist: &AliasSampler, len: usize, rng: &mut R) -> Sequence {
    (0..len).map(|_| dist.sample(rng)).collect()
}

pub fn gen_bigram<R: Rng + ?Sized>(model: &BigramSampler, len: usize, rng: &mut R) -> Sequence {
    let mut seq = Vec::with_capacity(len);
    if len == 0 {
        return seq;
    }
    let mut prev = model.sample_start(rng);
    seq.push(prev);
    for _ in 1..len {
        prev = model.sample_next(prev, rng);
        seq.push(prev);
    }
    seq
}

/// Duplicated tokens whose pair spans never exceed `max_span`.
///
/// With `max_span >= len` the sequence is `len / 2` draws, each duplicated,
/// then uniformly shuffled. Otherwise the smallest unfilled position is
/// repeatedly paired with a uniformly chosen unfilled position inside its
/// window. The window always holds a free slot: earlier pairs can occupy at
/// most `max_span - 2` of its `max_span - 1` positions.
pub fn gen_flat_parens<R: Rng + ?Sized>(
    dist: &AliasSampler,
    len: usize,
    max_span: usize,
    rng: &mut R,
) -> Result<(Sequence, PairingWitness)> {
    if len % 2 != 0 {
        return Err(Error::invalid(format!("flat parentheses need an even length, got {len}")));
    }
    if max_span < 2 {
        return Err(Error::invalid(format!("max span must be at least 2, got {max_span}")));
    }
    if max_span >= len {
        let mut seq: Sequence = Vec::with_capacity(len);
        for _ in 0..len / 2 {
            let t = dist.sample(rng);
            seq.push(t);
            seq.push(t);
        }
        seq.shuffle(rng);
        let (witness, _) = consecutive_pairing(&seq);
        return Ok((seq, witness));
    }

    let mut seq: Vec<Option<TokenId>> = vec![None; len];
    let mut pairs = Vec::with_capacity(len / 2);
    let mut candidates = Vec::with_capacity(max_span);
    let mut open = 0;
    while open < len {
        if seq[open].is_some() {
            open += 1;
            continue;
        }
        let last = (open + max_span - 1).min(len - 1);
        candidates.clear();
        candidates.extend((open + 1..=last).filter(|&p| seq[p].is_none()));
        let close = *candidates
            .get(rng.random_range(0..candidates.len().max(1)))
            .ok_or_else(|| Error::invalid("flat pairing stranded an open position"))?;
        let t = dist.sample(rng);
        seq[open] = Some(t);
        seq[close] = Some(t);
        pairs.push((open, close));
        open += 1;
    }
    pairs.sort_unstable();
    Ok((seq.into_iter().flatten().collect(), PairingWitness { pairs }))
}

/// Drives the nesting stack automaton.
pub trait NestingMoves {
    /// Bernoulli draw for an unforced step: `true` pushes.
    fn push(&mut self) -> bool;
    fn token(&mut self) -> TokenId;
}

struct RandomMoves<'a, R: ?Sized> {
    dist: &'a AliasSampler,
    push_prob: f64,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> NestingMoves for RandomMoves<'_, R> {
    fn push(&mut self) -> bool {
        self.rng.random_bool(self.push_prob)
    }

    fn token(&mut self) -> TokenId {
        self.dist.sample(self.rng)
    }
}

/// Counts of the Bernoulli draws actually consulted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NestingTrace {
    pub unforced_steps: u64,
    pub unforced_pushes: u64,
}

/// Stack grammar: a push emits a fresh token and pushes it, a pop emits the
/// stack top. Pushes are forced on an empty stack and pops are forced once
/// the remaining positions equal the stack depth, so the sequence ends empty.
pub fn nesting_parens_with<M: NestingMoves>(
    len: usize,
    moves: &mut M,
) -> Result<(Sequence, PairingWitness, NestingTrace)> {
    if len % 2 != 0 {
        return Err(Error::invalid(format!("nesting parentheses need an even length, got {len}")));
    }
    let mut seq = Vec::with_capacity(len);
    let mut stack: Vec<(usize, TokenId)> = Vec::new();
    let mut pairs = Vec::with_capacity(len / 2);
    let mut trace = NestingTrace::default();
    for pos in 0..len {
        let remaining = len - pos;
        let push = if stack.is_empty() {
            true
        } else if remaining == stack.len() {
            false
        } else {
            trace.unforced_steps += 1;
            let push = moves.push();
            trace.unforced_pushes += push as u64;
            push
        };
        if push {
            let t = moves.token();
            stack.push((pos, t));
            seq.push(t);
        } else {
            let (open, t) = stack.pop().expect("pop on a non-empty stack");
            pairs.push((open, pos));
            seq.push(t);
        }
    }
    debug_assert!(stack.is_empty());
    pairs.sort_unstable();
    Ok((seq, PairingWitness { pairs }, trace))
}

pub fn gen_nesting_parens<R: Rng + ?Sized>(
    dist: &AliasSampler,
    len: usize,
    push_prob: f64,
    rng: &mut R,
) -> Result<(Sequence, PairingWitness)> {
    gen_nesting_parens_traced(dist, len, push_prob, rng).map(|(s, w, _)| (s, w))
}

pub fn gen_nesting_parens_traced<R: Rng + ?Sized>(
    dist: &AliasSampler,
    len: usize,
    push_prob: f64,
    rng: &mut R,
) -> Result<(Sequence, PairingWitness, NestingTrace)> {
    if !(push_prob > 0.0 && push_prob < 1.0) {
        return Err(Error::invalid(format!("push probability must be in (0, 1), got {push_prob}")));
    }
    let mut moves = RandomMoves {
        dist,
        push_prob,
        rng,
    };
    nesting_parens_with(len, &mut moves)
}

/// Concatenated blocks, each a shuffled run of consecutive ids. A trailing
/// partial block of `len % block_size` ids is built the same way.
pub fn gen_shuffle_n<R: Rng + ?Sized>(
    content_size: u32,
    block_size: usize,
    len: usize,
    rng: &mut R,
) -> Result<Sequence> {
    if block_size == 0 || block_size > len {
        return Err(Error::invalid(format!(
            "block size must be in 1..={len}, got {block_size}"
        )));
    }
    if block_size as u64 > content_size as u64 {
        return Err(Error::invalid(format!(
            "block size {block_size} exceeds content size {content_size}"
        )));
    }
    let mut seq = Vec::with_capacity(len);
    let mut remaining = len;
    while remaining > 0 {
        let width = block_size.min(remaining);
        let start = rng.random_range(0..=content_size - width as u32);
        let block_start = seq.len();
        seq.extend(start..start + width as u32);
        seq[block_start..].shuffle(rng);
        remaining -= width;
    }
    Ok(seq)
}

/// Position range of the block containing `pos`.
pub fn block_bounds(len: usize, block_size: usize, pos: usize) -> std::ops::Range<usize> {
    let start = pos / block_size * block_size;
    start..(start + block_size).min(len)
}
