//! Plain-text corpus files.
//!
//! One sequence per line, ids as decimal ASCII separated by single spaces,
//! every line terminated by `\n`. A JSON manifest sits next to the corpus at
//! `<corpus>.manifest.json`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

pub type Sequence = Vec<TokenId>;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    /// Whatever produced the corpus: a generator spec, a task description.
    pub generator_spec: serde_json::Value,
    pub master_seed: u64,
    pub num_sequences: u64,
    pub content_size: u32,
    pub token_count: u64,
    /// Per content id occurrence counts; required by frequency-rank remapping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_frequencies: Option<Vec<u64>>,
}

impl CorpusManifest {
    pub fn new(
        generator_spec: serde_json::Value,
        master_seed: u64,
        content_size: u32,
        sequences: &[Sequence],
    ) -> Self {
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            generator_spec,
            master_seed,
            num_sequences: sequences.len() as u64,
            content_size,
            token_count: sequences.iter().map(|s| s.len() as u64).sum(),
            token_frequencies: None,
        }
    }

    pub fn with_frequencies(mut self, sequences: &[Sequence]) -> Self {
        let mut counts = vec![0u64; self.content_size as usize];
        for &t in sequences.iter().flatten() {
            if let Some(c) = counts.get_mut(t as usize) {
                *c += 1;
            }
        }
        self.token_frequencies = Some(counts);
        self
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn manifest_path(corpus: impl AsRef<Path>) -> PathBuf {
    sidecar_path(corpus, ".manifest.json")
}

pub(crate) fn sidecar_path(base: impl AsRef<Path>, suffix: &str) -> PathBuf {
    let mut os = base.as_ref().as_os_str().to_owned();
    os.push(suffix);
    PathBuf::from(os)
}

/// Streaming reader over a corpus file.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    vocab: Option<Vocabulary>,
    path: PathBuf,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R, vocab: Option<Vocabulary>) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            vocab,
            path: PathBuf::from("<reader>"),
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Sequence>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = match self.lines.next()? {
            Ok(line) => line,
            Err(e) => return Some(Err(Error::io(&self.path, e))),
        };
        self.line_no += 1;
        Some(parse_line(&line, self.line_no, self.vocab.as_ref()))
    }
}

pub fn parse_line(line: &str, line_no: usize, vocab: Option<&Vocabulary>) -> Result<Sequence> {
    line.split_ascii_whitespace()
        .map(|field| {
            let id: TokenId = field.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("not a token id: {field:?}"),
            })?;
            if let Some(v) = vocab {
                if !v.contains(id) {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!(
                            "token id {id} out of range for vocabulary of {}",
                            v.total_size()
                        ),
                    });
                }
            }
            Ok(id)
        })
        .collect()
}

pub fn read_corpus(
    path: impl AsRef<Path>,
    vocab: Option<Vocabulary>,
) -> Result<CorpusReader<BufReader<File>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = CorpusReader::new(BufReader::new(file), vocab);
    reader.path = path.to_path_buf();
    Ok(reader)
}

pub fn read_corpus_all(path: impl AsRef<Path>, vocab: Option<Vocabulary>) -> Result<Vec<Sequence>> {
    read_corpus(path, vocab)?.collect()
}

pub fn format_sequence(seq: &[TokenId], out: &mut String) {
    use std::fmt::Write as _;
    for (k, t) in seq.iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{t}");
    }
    out.push('\n');
}

/// Writes the corpus and its manifest sidecar.
///
/// The corpus is staged in a temporary file and only moved into place once
/// the sequence and token counts agree with the manifest.
pub fn write_corpus<I, S>(sequences: I, path: impl AsRef<Path>, manifest: &CorpusManifest) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[TokenId]>,
{
    let path = path.as_ref();
    let staging = sidecar_path(path, ".partial");
    let result = write_staged(sequences, &staging, manifest);
    if let Err(e) = result {
        let _ = fs::remove_file(&staging);
        return Err(e);
    }
    fs::rename(&staging, path).map_err(|e| Error::io(path, e))?;
    manifest.write(manifest_path(path))
}

fn write_staged<I, S>(sequences: I, staging: &Path, manifest: &CorpusManifest) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[TokenId]>,
{
    let file = File::create(staging).map_err(|e| Error::io(staging, e))?;
    let mut out = BufWriter::new(file);
    let mut line = String::new();
    let (mut n_seq, mut n_tok) = (0u64, 0u64);
    for seq in sequences {
        let seq = seq.as_ref();
        line.clear();
        format_sequence(seq, &mut line);
        out.write_all(line.as_bytes())
            .map_err(|e| Error::io(staging, e))?;
        n_seq += 1;
        n_tok += seq.len() as u64;
        if n_tok > manifest.token_count || n_seq > manifest.num_sequences {
            return Err(count_mismatch(manifest, n_seq, n_tok));
        }
    }
    if n_tok != manifest.token_count || n_seq != manifest.num_sequences {
        return Err(count_mismatch(manifest, n_seq, n_tok));
    }
    out.flush().map_err(|e| Error::io(staging, e))
}

fn count_mismatch(manifest: &CorpusManifest, n_seq: u64, n_tok: u64) -> Error {
    Error::Manifest(format!(
        "manifest declares {} sequences / {} tokens, stream has at least {n_seq} / {n_tok}",
        manifest.num_sequences, manifest.token_count
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn manifest_for(seqs: &[Sequence]) -> CorpusManifest {
        CorpusManifest::new(serde_json::json!({"kind": "test"}), 0, 64, seqs)
    }

    #[test]
    fn parses_a_line() {
        let seqs: Vec<_> = CorpusReader::new("3 1 4 1 5\n".as_bytes(), None)
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(seqs, vec![vec![3, 1, 4, 1, 5]]);
    }

    #[test]
    fn empty_input_is_an_empty_stream() {
        assert_eq!(CorpusReader::new("".as_bytes(), None).count(), 0);
    }

    #[test]
    fn reports_the_bad_line() {
        let mut reader = CorpusReader::new("3 x 4\n".as_bytes(), None);
        match reader.next().unwrap() {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let vocab = Vocabulary::new(4).unwrap();
        let mut reader = CorpusReader::new("1 2\n1 9\n".as_bytes(), Some(vocab));
        assert!(reader.next().unwrap().is_ok());
        assert!(matches!(reader.next().unwrap(), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn writes_exact_bytes_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        let seqs = vec![vec![1, 2], vec![3]];
        write_corpus(&seqs, &path, &manifest_for(&seqs)).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "1 2\n3\n");
        let m = CorpusManifest::read(manifest_path(&path)).unwrap();
        assert_eq!(m.token_count, 3);
        assert_eq!(m.num_sequences, 2);
    }

    #[test]
    fn token_count_mismatch_fails_and_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        let seqs = vec![vec![1, 2], vec![3]];
        let mut manifest = manifest_for(&seqs);
        manifest.token_count = 2;
        assert!(matches!(
            write_corpus(&seqs, &path, &manifest),
            Err(Error::Manifest(_))
        ));
        assert!(!path.exists());
        assert!(!manifest_path(&path).exists());
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(seqs in prop::collection::vec(prop::collection::vec(0u32..69, 0..20), 0..20)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.txt");
            write_corpus(&seqs, &path, &manifest_for(&seqs)).unwrap();
            let back = read_corpus_all(&path, Some(Vocabulary::desk())).unwrap();
            prop_assert_eq!(back, seqs);
        }
    }
}
