//! Corpus ingestion: tokenization, vocabulary construction, sequence
//! length selection and fixed-length id encoding.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::matrix::{fnv1a64, seeded_rng};
use crate::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// One labeled text: class id, tokens, and (after encoding) a
/// fixed-length id sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub label: usize,
    pub tokens: Vec<String>,
    pub ids: Option<Vec<usize>>,
}

impl Document {
    pub fn new(label: usize, tokens: Vec<String>) -> Self {
        Document { label, tokens, ids: None }
    }
}

/// Bidirectional token<->id map with reserved pad (0) and unknown (1) ids.
/// Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let mut id_to_token = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { token_to_id, id_to_token }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    /// FNV-1a over all tokens in id order; used to tie checkpoints and
    /// encoded datasets to the vocabulary they were built with.
    pub fn content_hash(&self) -> u64 {
        let mut joined = Vec::new();
        for t in &self.id_to_token {
            joined.extend_from_slice(t.as_bytes());
            joined.push(0);
        }
        fnv1a64(&joined)
    }

    /// One token per line, line number = id. Reserved tokens included.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.id_to_token {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < 2 || lines[0] != PAD_TOKEN || lines[1] != UNK_TOKEN {
            return Err(Error::Data(format!(
                "vocabulary file {} missing reserved tokens",
                path.display()
            )));
        }
        let id_to_token: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary { token_to_id, id_to_token })
    }
}

/// Lowercase, split on every non-alphanumeric character, drop empties.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Build the vocabulary from tokenized documents. Tokens with corpus
/// frequency >= `min_count` are kept; ids are assigned by descending
/// frequency, ties broken lexicographically.
pub fn build_vocabulary(docs: &[Document], min_count: usize) -> Result<Vocabulary> {
    if docs.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for d in docs {
        for t in &d.tokens {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> =
        counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocabulary::from_tokens(
        kept.into_iter().map(|(t, _)| t.to_string()).collect(),
    ))
}

/// Document-length statistics and the chosen fixed sequence length.
#[derive(Clone, Debug)]
pub struct LengthStats {
    pub lengths: Vec<usize>,
    pub theta: f64,
    pub chosen: usize,
}

impl LengthStats {
    pub fn compute(lengths: Vec<usize>, theta: f64) -> Result<Self> {
        let chosen = select_sequence_length(&lengths, theta)?;
        Ok(LengthStats { lengths, theta, chosen })
    }

    /// Histogram CSV, bucket width 10 tokens:
    /// `bucket_start,bucket_end,count`.
    pub fn histogram_csv(&self) -> String {
        const WIDTH: usize = 10;
        let max = self.lengths.iter().copied().max().unwrap_or(0);
        let buckets = max / WIDTH + 1;
        let mut counts = vec![0usize; buckets];
        for &l in &self.lengths {
            counts[l / WIDTH] += 1;
        }
        let mut out = String::from("bucket_start,bucket_end,count\n");
        for (i, c) in counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", i * WIDTH, (i + 1) * WIDTH, c);
        }
        out
    }
}

/// Smallest observed length SL such that at least a `theta` fraction of
/// documents have length <= SL. Falls back to the maximum length if no
/// candidate satisfies the constraint.
pub fn select_sequence_length(lengths: &[usize], theta: f64) -> Result<usize> {
    if lengths.is_empty() {
        return Err(Error::Data("empty length multiset".into()));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Config(format!("theta must be in (0,1), got {theta}")));
    }
    let n = lengths.len() as f64;
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let mut candidates = sorted.clone();
    candidates.dedup();
    for &sl in &candidates {
        let fitting = sorted.iter().filter(|&&l| l <= sl).count() as f64;
        if fitting / n >= theta {
            return Ok(sl);
        }
    }
    Ok(*sorted.last().unwrap())
}

/// Encode a tokenized document to exactly `sl` ids: truncate from the
/// end, pad with 0, map out-of-vocabulary tokens to the unknown id.
pub fn encode_document(doc: &Document, vocab: &Vocabulary, sl: usize) -> Vec<usize> {
    assert!(sl > 0);
    let mut ids: Vec<usize> = doc
        .tokens
        .iter()
        .take(sl)
        .map(|t| vocab.id_of(t).unwrap_or(UNK_ID))
        .collect();
    ids.resize(sl, PAD_ID);
    ids
}

pub fn encode_all(docs: &mut [Document], vocab: &Vocabulary, sl: usize) {
    for d in docs.iter_mut() {
        d.ids = Some(encode_document(d, vocab, sl));
    }
}

/// Stratified train/test split after a seeded per-class shuffle.
pub fn split_dataset(
    docs: &[Document],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<Document>, Vec<Document>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must be in (0,1), got {test_fraction}"
        )));
    }
    let num_classes = docs.iter().map(|d| d.label).max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, d) in docs.iter().enumerate() {
        by_class[d.label].push(i);
    }
    let mut rng = seeded_rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, indices) in by_class.iter_mut().enumerate() {
        if indices.len() < 2 {
            return Err(Error::Data(format!(
                "class {class} too small to stratify ({} document(s))",
                indices.len()
            )));
        }
        indices.shuffle(&mut rng);
        let n_test = ((indices.len() as f64) * test_fraction).round() as usize;
        let n_test = n_test.clamp(1, indices.len() - 1);
        for (k, &i) in indices.iter().enumerate() {
            if k < n_test {
                test.push(docs[i].clone());
            } else {
                train.push(docs[i].clone());
            }
        }
    }
    Ok((train, test))
}

/// Load a dataset laid out as one subdirectory per category, one plain
/// text file per document. Class ids follow the lexicographic order of
/// category names. Returns (documents, category names).
pub fn load_dataset_dir(root: &Path) -> Result<(Vec<Document>, Vec<String>)> {
    if !root.is_dir() {
        return Err(Error::Data(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut categories: Vec<String> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    categories.sort();
    if categories.is_empty() {
        return Err(Error::Data(format!(
            "dataset root {} contains no category directories",
            root.display()
        )));
    }
    let mut docs = Vec::new();
    for (label, cat) in categories.iter().enumerate() {
        let dir = root.join(cat);
        let mut files: Vec<_> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for f in files {
            let bytes = fs::read(&f)?;
            let text = String::from_utf8_lossy(&bytes);
            docs.push(Document::new(label, tokenize(&text)));
        }
    }
    if docs.is_empty() {
        return Err(Error::Data(format!(
            "dataset root {} contains no documents",
            root.display()
        )));
    }
    Ok((docs, categories))
}
