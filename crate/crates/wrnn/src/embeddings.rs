//! Word vectors: skip-gram with negative sampling trained on the corpus,
//! or loaded from the word2vec text format. Row 0 of the table is the
//! padding vector and stays exactly zero.

use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::corpus::{Vocabulary, PAD_ID, UNK_ID};
use crate::matrix::{dot, seeded_rng, sigmoid, DenseMatrix, InitScheme, Rng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub table: DenseMatrix,
    pub trainable: bool,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    /// Xavier-initialized table with a zeroed pad row.
    pub fn random(vocab_size: usize, dim: usize, rng: &mut Rng) -> Self {
        let mut table = crate::matrix::init_matrix(vocab_size, dim, InitScheme::XavierUniform, rng);
        table.row_mut(PAD_ID).fill(0.0);
        EmbeddingMatrix { table, trainable: true }
    }
}

#[derive(Clone, Debug)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig { dim: 200, window: 5, negatives: 5, epochs: 5, lr: 0.025, seed: 1 }
    }
}

/// Unigram^0.75 noise distribution over real tokens (ids >= 2),
/// sampled by binary search over the cumulative table.
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn build(counts: &[u64]) -> Option<Self> {
        let mut cumulative = Vec::with_capacity(counts.len());
        let mut acc = 0.0;
        for (id, &c) in counts.iter().enumerate() {
            if id >= 2 && c > 0 {
                acc += (c as f64).powf(0.75);
            }
            cumulative.push(acc);
        }
        if acc == 0.0 {
            return None;
        }
        Some(NoiseTable { cumulative })
    }

    fn sample(&self, rng: &mut Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let x = rng.gen_range(0.0..total);
        self.cumulative.partition_point(|&c| c <= x)
    }
}

/// Train skip-gram with negative sampling over encoded id sequences.
/// Returns the input-vector table and the mean loss per epoch.
/// Deterministic: pairs are visited in corpus order, single-threaded.
pub fn train_skipgram(
    sequences: &[Vec<usize>],
    vocab_size: usize,
    cfg: &SkipGramConfig,
) -> Result<(EmbeddingMatrix, Vec<f64>)> {
    assert!(cfg.dim >= 2 && cfg.window >= 1 && cfg.negatives >= 1);
    let mut rng = seeded_rng(cfg.seed);
    let mut input = EmbeddingMatrix::random(vocab_size, cfg.dim, &mut rng);
    let mut output = DenseMatrix::zeros(vocab_size, cfg.dim);

    let mut counts = vec![0u64; vocab_size];
    for seq in sequences {
        for &id in seq {
            if id >= vocab_size {
                return Err(Error::Data(format!("token id {id} out of range {vocab_size}")));
            }
            counts[id] += 1;
        }
    }
    let noise = NoiseTable::build(&counts)
        .ok_or_else(|| Error::Data("corpus has no trainable skip-gram pair".into()))?;

    // count pairs once for the linear lr decay
    let mut total_pairs: u64 = 0;
    for seq in sequences {
        for (t, &center) in seq.iter().enumerate() {
            if center == PAD_ID || center == UNK_ID {
                continue;
            }
            let lo = t.saturating_sub(cfg.window);
            let hi = (t + cfg.window + 1).min(seq.len());
            total_pairs += (lo..hi)
                .filter(|&j| j != t && seq[j] != PAD_ID)
                .count() as u64;
        }
    }
    if total_pairs == 0 {
        return Err(Error::Data("corpus has no trainable skip-gram pair".into()));
    }

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut seen: u64 = 0;
    let total_updates = total_pairs * cfg.epochs as u64;
    for _ in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut loss_n = 0u64;
        for seq in sequences {
            for (t, &center) in seq.iter().enumerate() {
                if center == PAD_ID || center == UNK_ID {
                    continue;
                }
                let lo = t.saturating_sub(cfg.window);
                let hi = (t + cfg.window + 1).min(seq.len());
                for j in lo..hi {
                    if j == t || seq[j] == PAD_ID {
                        continue;
                    }
                    let lr = cfg.lr * (1.0 - seen as f64 / total_updates as f64).max(0.05);
                    seen += 1;
                    let context = seq[j];
                    let mut center_grad = vec![0.0; cfg.dim];
                    // positive pair, then `negatives` noise samples
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            (noise.sample(&mut rng), 0.0)
                        };
                        let score = {
                            let center_row = input.table.row(center);
                            let out_row = output.row(target);
                            sigmoid(dot(center_row, out_row))
                        };
                        loss_sum += if label == 1.0 {
                            -(score.max(1e-12)).ln()
                        } else {
                            -((1.0 - score).max(1e-12)).ln()
                        };
                        let g = score - label;
                        let center_row = input.table.row(center).to_vec();
                        let out_row = output.row_mut(target);
                        for d in 0..cfg.dim {
                            center_grad[d] += g * out_row[d];
                            out_row[d] -= lr * g * center_row[d];
                        }
                    }
                    let center_row = input.table.row_mut(center);
                    for d in 0..cfg.dim {
                        center_row[d] -= lr * center_grad[d];
                    }
                    loss_n += 1 + cfg.negatives as u64;
                }
            }
        }
        epoch_losses.push(loss_sum / loss_n as f64);
    }
    input.table.row_mut(PAD_ID).fill(0.0);
    Ok((input, epoch_losses))
}

/// Write the table in word2vec text format: header `<count> <dim>`,
/// then one `<token> <v1> ... <v_dim>` line per vocabulary entry.
pub fn save_embeddings(path: &Path, emb: &EmbeddingMatrix, vocab: &Vocabulary) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", emb.vocab_size(), emb.dim()));
    for id in 0..emb.vocab_size() {
        let token = vocab
            .token_of(id)
            .ok_or_else(|| Error::Data(format!("vocabulary has no token for id {id}")))?;
        out.push_str(token);
        for v in emb.table.row(id) {
            out.push(' ');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load word2vec text-format vectors for the given vocabulary. Tokens
/// absent from the file get reproducible xavier-initialized rows; the
/// pad row is zero; dimension comes from the file header.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingMatrix> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty embedding file", path.display())))?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Data(format!("{}:1: malformed header", path.display())))?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Data(format!("{}:1: malformed header", path.display())))?;
    if dim == 0 {
        return Err(Error::Data(format!("{}:1: zero dimension", path.display())));
    }

    let mut rng = seeded_rng(crate::matrix::sub_seed(seed, "embedding-fallback"));
    let mut emb = EmbeddingMatrix::random(vocab.size(), dim, &mut rng);
    let mut loaded = 0usize;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap();
        let values: Vec<f64> = fields
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| {
                Error::Data(format!("{}:{}: bad value: {e}", path.display(), lineno + 1))
            })?;
        if values.len() != dim {
            return Err(Error::Data(format!(
                "{}:{}: expected {dim} values, got {}",
                path.display(),
                lineno + 1,
                values.len()
            )));
        }
        loaded += 1;
        if let Some(id) = vocab.id_of(token) {
            emb.table.row_mut(id).copy_from_slice(&values);
        }
    }
    if loaded != count {
        return Err(Error::Data(format!(
            "{}: header declares {count} vectors, file has {loaded}",
            path.display()
        )));
    }
    emb.table.row_mut(PAD_ID).fill(0.0);
    Ok(emb)
}

/// Gather rows for an id sequence: row t of the result is table[ids[t]].
pub fn lookup(ids: &[usize], emb: &EmbeddingMatrix) -> Result<DenseMatrix> {
    let mut out = DenseMatrix::zeros(ids.len(), emb.dim());
    for (t, &id) in ids.iter().enumerate() {
        if id >= emb.vocab_size() {
            return Err(Error::Data(format!(
                "lookup: id {id} out of range {}",
                emb.vocab_size()
            )));
        }
        out.row_mut(t).copy_from_slice(emb.table.row(id));
    }
    Ok(out)
}

/// Backward of `lookup`: scatter-add the output gradient rows into the
/// table gradient. The pad row's gradient is forced to zero so the pad
/// vector never drifts.
pub fn lookup_backward(ids: &[usize], d_out: &DenseMatrix, d_table: &mut DenseMatrix) {
    assert_eq!(ids.len(), d_out.rows());
    assert_eq!(d_out.cols(), d_table.cols());
    for (t, &id) in ids.iter().enumerate() {
        if id == PAD_ID {
            continue;
        }
        let src = d_out.row(t);
        let dst = d_table.row_mut(id);
        for (a, b) in dst.iter_mut().zip(src.iter()) {
            *a += b;
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}
