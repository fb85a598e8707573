//! Loss, Adam optimization, the minibatched training loop and the
//! binary checkpoint format.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::corpus::PAD_ID;
use crate::lstm::CandidateAct;
use crate::matrix::{seeded_rng, sub_seed, DenseMatrix};
use crate::models::{backward_into, forward, ModelKind, ModelParams, ModelSpec};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub minibatch: usize,
    pub epochs: usize,
    /// L2 regularization rate; applies to weight matrices only.
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clip; 0 disables.
    pub clip_norm: f64,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            minibatch: 128,
            epochs: 5,
            lambda: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            seed: 1,
            deterministic: false,
        }
    }
}

/// One encoded example: fixed-length id sequence and class label.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub label: usize,
}

pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Data(format!(
            "label {label} out of range {}",
            probs.len()
        )));
    }
    Ok(-(probs[label].max(1e-12)).ln())
}

/// (lambda/2) * sum of squared entries over weight matrices only.
pub fn l2_penalty(params: &ModelParams, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (_, t, decay) in params.tensors() {
        if decay {
            acc += t.sum_squares();
        }
    }
    0.5 * lambda * acc
}

/// Accumulate the L2 gradient `lambda * w` into the gradient set.
pub fn l2_grad_into(params: &ModelParams, lambda: f64, grads: &mut ModelParams) {
    if lambda == 0.0 {
        return;
    }
    let decays: Vec<bool> = params.tensors().iter().map(|(_, _, d)| *d).collect();
    for (((_, g), (_, p, _)), decay) in grads
        .tensors_mut()
        .into_iter()
        .zip(params.tensors())
        .zip(decays)
    {
        if decay {
            g.add_scaled(p, lambda);
        }
    }
}

/// Global-L2-norm gradient clipping. Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut ModelParams, clip_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, t, _) in grads.tensors() {
        sq += t.sum_squares();
    }
    let norm = sq.sqrt();
    if clip_norm > 0.0 && norm > clip_norm {
        let scale = clip_norm / norm;
        for (_, t) in grads.tensors_mut() {
            t.scale(scale);
        }
    }
    norm
}

/// First/second moment buffers mirroring the parameter tensors.
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

/// Standard Adam with bias correction on a single tensor:
///   m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
pub fn adam_update(
    param: &mut DenseMatrix,
    grad: &DenseMatrix,
    m: &mut DenseMatrix,
    v: &mut DenseMatrix,
    t: u64,
    cfg: &TrainConfig,
) -> Result<()> {
    if !param.same_shape(grad) || !param.same_shape(m) || !param.same_shape(v) {
        return Err(Error::Shape(format!(
            "adam_update: param {}x{} vs grad {}x{}",
            param.rows(),
            param.cols(),
            grad.rows(),
            grad.cols()
        )));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let (pd, gd) = (param.data_mut(), grad.data());
    let (md, vd) = (m.data_mut(), v.data_mut());
    for i in 0..gd.len() {
        md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gd[i];
        vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
        let m_hat = md[i] / bc1;
        let v_hat = vd[i] / bc2;
        pd[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// One optimizer step over every trainable tensor. The step counter is
/// incremented before the update.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    state.t += 1;
    let t = state.t;
    let grad_list = grads.tensors();
    let m_list = state.m.tensors_mut();
    let v_list = state.v.tensors_mut();
    for ((((_, p), (_, g, _)), (_, m)), (_, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grad_list)
        .zip(m_list)
        .zip(v_list)
    {
        adam_update(p, g, m, v, t, cfg)?;
    }
    // the pad embedding stays exactly zero through training
    params.embeddings.table.row_mut(PAD_ID).fill(0.0);
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// L2 penalty of the parameters at the end of the epoch; the full
    /// objective on the train split is train_loss + train_l2.
    pub train_l2: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// `epoch,split,loss,accuracy` rows for split in {train,test}.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,accuracy\n");
        for e in &self.epochs {
            out.push_str(&format!("{},train,{},{}\n", e.epoch, e.train_loss, e.train_accuracy));
            out.push_str(&format!("{},test,{},{}\n", e.epoch, e.test_loss, e.test_accuracy));
        }
        out
    }
}

/// Mean cross-entropy, accuracy, predictions and per-example losses on
/// a dataset under fixed parameters.
pub struct EvalResult {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub losses: Vec<f64>,
}

pub fn evaluate(params: &ModelParams, data: &[Example]) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::Data("evaluate: empty dataset".into()));
    }
    // forward passes are independent, so they can run in parallel; the
    // loss sum below stays sequential to keep results bit-reproducible
    // regardless of thread count
    let per_example: Vec<(usize, f64)> = data
        .par_iter()
        .map(|ex| {
            let (probs, _) = forward(params, &ex.ids)?;
            let pred = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            Ok((pred, cross_entropy(&probs, ex.label)?))
        })
        .collect::<Result<_>>()?;
    let mut predictions = Vec::with_capacity(data.len());
    let mut losses = Vec::with_capacity(data.len());
    let mut correct = 0usize;
    for ((pred, loss), ex) in per_example.into_iter().zip(data) {
        if pred == ex.label {
            correct += 1;
        }
        predictions.push(pred);
        losses.push(loss);
    }
    let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok(EvalResult {
        mean_loss,
        accuracy: correct as f64 / data.len() as f64,
        predictions,
        losses,
    })
}

pub struct TrainOutcome {
    /// Parameters after the final epoch.
    pub params: ModelParams,
    /// Parameters at the epoch with the best test accuracy.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub history: TrainHistory,
}

fn zero_grads(grads: &mut ModelParams) {
    for (_, t) in grads.tensors_mut() {
        t.data_mut().fill(0.0);
    }
}

/// Minibatched training: per epoch, a seeded shuffle, mean per-example
/// gradients plus the L2 term, global-norm clipping and an Adam step.
/// Examples inside a batch are processed in ascending index order, so
/// results are bit-reproducible under a fixed seed.
pub fn train(
    mut params: ModelParams,
    train_set: &[Example],
    test_set: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Data("empty train set".into()));
    }
    let mut state = AdamState::new(&params);
    let mut grads = params.zeros_like();
    let mut rng = seeded_rng(sub_seed(cfg.seed, "train-shuffle"));
    let mut history = TrainHistory::default();
    let mut best = params.clone();
    let mut best_epoch = 0usize;
    let mut best_acc = f64::NEG_INFINITY;

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        indices.shuffle(&mut rng);
        for (batch_idx, batch) in indices.chunks(cfg.minibatch).enumerate() {
            zero_grads(&mut grads);
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &train_set[i];
                let (probs, cache) = forward(&params, &ex.ids)?;
                let loss = cross_entropy(&probs, ex.label)?;
                if !loss.is_finite() {
                    return Err(diverged(epoch, batch_idx, loss, &params));
                }
                batch_loss += loss;
                backward_into(&params, &cache, ex.label, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(diverged(epoch, batch_idx, batch_loss, &params));
            }
            let scale = 1.0 / batch.len() as f64;
            for (_, t) in grads.tensors_mut() {
                t.scale(scale);
            }
            l2_grad_into(&params, cfg.lambda, &mut grads);
            clip_gradients(&mut grads, cfg.clip_norm);
            adam_step(&mut params, &grads, &mut state, cfg)?;
        }

        let train_eval = evaluate(&params, train_set)?;
        let test_eval = if test_set.is_empty() {
            None
        } else {
            Some(evaluate(&params, test_set)?)
        };
        let (test_loss, test_accuracy) = test_eval
            .as_ref()
            .map_or((f64::NAN, f64::NAN), |e| (e.mean_loss, e.accuracy));
        history.epochs.push(EpochStats {
            epoch,
            train_loss: train_eval.mean_loss,
            train_accuracy: train_eval.accuracy,
            train_l2: l2_penalty(&params, cfg.lambda),
            test_loss,
            test_accuracy,
            wall_secs: start.elapsed().as_secs_f64(),
        });
        // retain the best checkpoint by test accuracy (train accuracy
        // when no test set is given)
        let selector = test_eval.as_ref().map_or(train_eval.accuracy, |e| e.accuracy);
        if selector > best_acc {
            best_acc = selector;
            best = params.clone();
            best_epoch = epoch;
        }
    }
    Ok(TrainOutcome { params, best, best_epoch, history })
}

fn diverged(epoch: usize, batch: usize, loss: f64, params: &ModelParams) -> Error {
    let norms: Vec<String> = params
        .tensors()
        .iter()
        .map(|(n, t, _)| format!("{n}={:.3e}", t.sum_squares().sqrt()))
        .collect();
    Error::Numeric(format!(
        "non-finite loss {loss} at epoch {epoch} batch {batch}; parameter norms: {}",
        norms.join(" ")
    ))
}

// ---------------------------------------------------------------------------
// checkpoint format
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &str = "wrnn-checkpoint v1";

fn candidate_act_name(act: CandidateAct) -> &'static str {
    match act {
        CandidateAct::Tanh => "tanh",
        CandidateAct::Sigmoid => "sigmoid",
    }
}

fn parse_candidate_act(s: &str) -> Result<CandidateAct> {
    match s {
        "tanh" => Ok(CandidateAct::Tanh),
        "sigmoid" => Ok(CandidateAct::Sigmoid),
        other => Err(Error::Config(format!(
            "unknown candidate activation '{other}' (expected tanh or sigmoid)"
        ))),
    }
}

/// Textual header (format version, model spec, vocabulary size and
/// hash) followed by named tensor blocks of little-endian f64 in
/// row-major order. Round-trips bit-exactly.
pub fn save_checkpoint(params: &ModelParams, vocab_hash: u64, path: &Path) -> Result<()> {
    let spec = &params.spec;
    let mut buf: Vec<u8> = Vec::new();
    let tensors = params.tensors();
    let header = format!(
        "{CHECKPOINT_MAGIC}\nkind {}\nseq_len {}\nembed_dim {}\nlstm_hidden {}\n\
         classifier_hidden {}\nnum_classes {}\ncandidate_act {}\nfreeze_embeddings {}\n\
         normalize_pool {}\nvocab_size {}\nvocab_hash {:016x}\ntensors {}\n",
        spec.kind,
        spec.seq_len,
        spec.embed_dim,
        spec.lstm_hidden,
        spec.classifier_hidden,
        spec.num_classes,
        candidate_act_name(spec.candidate_act),
        spec.freeze_embeddings,
        spec.normalize_pool,
        params.embeddings.vocab_size(),
        vocab_hash,
        tensors.len(),
    );
    buf.extend_from_slice(header.as_bytes());
    for (name, t, _) in tensors {
        buf.extend_from_slice(format!("tensor {name} {} {}\n", t.rows(), t.cols()).as_bytes());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Data("checkpoint truncated: missing newline".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::Data("checkpoint header is not valid utf-8".into()))
    }

    fn raw(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data(format!(
                "checkpoint truncated: wanted {n} bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

fn header_field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|s| s.strip_prefix(' '))
        .ok_or_else(|| Error::Data(format!("checkpoint header: expected '{key} ...', got '{line}'")))
}

/// Load a checkpoint, validating every tensor shape against the stored
/// spec and (when given) the vocabulary hash. A mismatching hash means
/// the checkpoint belongs to a different vocabulary and is refused.
pub fn load_checkpoint(path: &Path, expected_vocab_hash: Option<u64>) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = ByteReader { bytes: &bytes, pos: 0 };
    if r.line()? != CHECKPOINT_MAGIC {
        return Err(Error::Data(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let kind = ModelKind::from_str(header_field(r.line()?, "kind")?)?;
    let parse_usize = |s: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Data(format!("checkpoint header: bad integer '{s}'")))
    };
    let parse_bool = |s: &str| -> Result<bool> {
        s.parse().map_err(|_| Error::Data(format!("checkpoint header: bad bool '{s}'")))
    };
    let seq_len = parse_usize(header_field(r.line()?, "seq_len")?)?;
    let embed_dim = parse_usize(header_field(r.line()?, "embed_dim")?)?;
    let lstm_hidden = parse_usize(header_field(r.line()?, "lstm_hidden")?)?;
    let classifier_hidden = parse_usize(header_field(r.line()?, "classifier_hidden")?)?;
    let num_classes = parse_usize(header_field(r.line()?, "num_classes")?)?;
    let candidate_act = parse_candidate_act(header_field(r.line()?, "candidate_act")?)?;
    let freeze_embeddings = parse_bool(header_field(r.line()?, "freeze_embeddings")?)?;
    let normalize_pool = parse_bool(header_field(r.line()?, "normalize_pool")?)?;
    let vocab_size = parse_usize(header_field(r.line()?, "vocab_size")?)?;
    let hash_str = header_field(r.line()?, "vocab_hash")?;
    let vocab_hash = u64::from_str_radix(hash_str, 16)
        .map_err(|_| Error::Data(format!("checkpoint header: bad hash '{hash_str}'")))?;
    let tensor_count = parse_usize(header_field(r.line()?, "tensors")?)?;

    if let Some(expected) = expected_vocab_hash {
        if expected != vocab_hash {
            return Err(Error::Data(format!(
                "vocabulary hash mismatch: checkpoint was built with {vocab_hash:016x}, \
                 current vocabulary is {expected:016x}; refusing to load"
            )));
        }
    }

    let spec = ModelSpec {
        kind,
        seq_len,
        embed_dim,
        lstm_hidden,
        classifier_hidden,
        num_classes,
        candidate_act,
        freeze_embeddings,
        normalize_pool,
    };
    // build a skeleton with the right structure, then overwrite every
    // tensor from the file
    let mut rng = seeded_rng(0);
    let emb = crate::embeddings::EmbeddingMatrix::random(vocab_size, embed_dim, &mut rng);
    let mut params = ModelParams::init(spec, emb, &mut rng)?;
    params.embeddings.trainable = !freeze_embeddings;

    let expected: Vec<(String, usize, usize)> = params
        .tensors()
        .iter()
        .map(|(n, t, _)| (n.clone(), t.rows(), t.cols()))
        .collect();
    if tensor_count != expected.len() {
        return Err(Error::Data(format!(
            "checkpoint declares {tensor_count} tensors, model needs {}",
            expected.len()
        )));
    }
    for (name, rows, cols) in expected {
        let line = r.line()?;
        let mut parts = line.split(' ');
        if parts.next() != Some("tensor") {
            return Err(Error::Data(format!("checkpoint: expected tensor block, got '{line}'")));
        }
        let got_name = parts.next().unwrap_or("");
        let got_rows = parse_usize(parts.next().unwrap_or(""))?;
        let got_cols = parse_usize(parts.next().unwrap_or(""))?;
        if got_name != name || got_rows != rows || got_cols != cols {
            return Err(Error::Data(format!(
                "checkpoint tensor mismatch: expected {name} {rows}x{cols}, \
                 got {got_name} {got_rows}x{got_cols}"
            )));
        }
        let raw = r.raw(rows * cols * 8)?;
        let mut data = Vec::with_capacity(rows * cols);
        for chunk in raw.chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        for (pname, t) in params.tensors_mut() {
            if pname == name {
                *t = DenseMatrix::from_vec(rows, cols, data);
                break;
            }
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::EmbeddingMatrix;
    use crate::matrix::{finite_diff_grad, max_rel_error};
    use crate::synthetic::marker_corpus;

    fn tiny_model(kind: ModelKind, seed: u64) -> ModelParams {
        let mut rng = seeded_rng(seed);
        let emb = EmbeddingMatrix::random(8, 2, &mut rng);
        let spec = ModelSpec {
            kind,
            seq_len: 4,
            embed_dim: 2,
            lstm_hidden: 3,
            classifier_hidden: 3,
            num_classes: 2,
            candidate_act: CandidateAct::Tanh,
            freeze_embeddings: false,
            normalize_pool: false,
        };
        ModelParams::init(spec, emb, &mut rng).unwrap()
    }

    #[test]
    fn cross_entropy_values() {
        let uniform4 = vec![0.25; 4];
        assert!((cross_entropy(&uniform4, 0).unwrap() - 4.0f64.ln()).abs() < 1e-12);
        let certain = vec![0.0, 1.0];
        assert_eq!(cross_entropy(&certain, 1).unwrap(), 0.0);
        let uniform20 = vec![0.05; 20];
        assert!((cross_entropy(&uniform20, 7).unwrap() - 20.0f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&certain, 5).is_err());
    }

    #[test]
    fn l2_penalty_values() {
        let mut m = tiny_model(ModelKind::Dnn, 1);
        // zero all decayed tensors, then set head.hidden.w to [3,4]
        for (name, t) in m.tensors_mut() {
            if name != "embeddings" {
                t.data_mut().fill(0.0);
            }
        }
        m.head.hidden.w.data_mut()[0] = 3.0;
        m.head.hidden.w.data_mut()[1] = 4.0;
        assert!((l2_penalty(&m, 0.01) - 0.125).abs() < 1e-15);
        assert_eq!(l2_penalty(&m, 0.0), 0.0);
    }

    #[test]
    fn l2_gradient_matches_finite_differences() {
        let m = tiny_model(ModelKind::Wrnn, 2);
        let lambda = 0.01;
        let mut grads = m.zeros_like();
        l2_grad_into(&m, lambda, &mut grads);
        for (name, base, decay) in m.tensors() {
            if !decay {
                continue;
            }
            let analytic = grads.tensors().iter().find(|(n, _, _)| *n == name).unwrap().1.clone();
            let numeric = finite_diff_grad(
                &mut |t| {
                    let mut mm = m.clone();
                    for (n, tt) in mm.tensors_mut() {
                        if n == name {
                            *tt = t.clone();
                        }
                    }
                    l2_penalty(&mm, lambda)
                },
                &base.clone(),
                3e-5,
            )
            .unwrap();
            assert!(max_rel_error(&analytic, &numeric, 1e-8) < 1e-5, "{name}");
        }
    }

    #[test]
    fn adam_hand_values() {
        let cfg = TrainConfig::default();
        let mut p = DenseMatrix::zeros(1, 1);
        let g = DenseMatrix::from_vec(1, 1, vec![1.0]);
        let mut m = DenseMatrix::zeros(1, 1);
        let mut v = DenseMatrix::zeros(1, 1);
        adam_update(&mut p, &g, &mut m, &mut v, 1, &cfg).unwrap();
        assert!((p.at(0, 0) + 0.01).abs() < 1e-6);
        adam_update(&mut p, &g, &mut m, &mut v, 2, &cfg).unwrap();
        assert!((p.at(0, 0) + 0.02).abs() < 1e-5);
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut params = tiny_model(ModelKind::Wrnn, 3);
        let before = params.clone();
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params);
        let cfg = TrainConfig::default();
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn clip_examples() {
        let mut m = tiny_model(ModelKind::Dnn, 4);
        let mut grads = m.zeros_like();
        // put a gradient of known norm 10 in one tensor
        grads.head.hidden.b.data_mut()[0] = 10.0;
        let norm = clip_gradients(&mut grads, 5.0);
        assert!((norm - 10.0).abs() < 1e-12);
        assert!((grads.head.hidden.b.at(0, 0) - 5.0).abs() < 1e-12);

        grads.head.hidden.b.data_mut()[0] = 3.0;
        clip_gradients(&mut grads, 5.0);
        assert!((grads.head.hidden.b.at(0, 0) - 3.0).abs() < 1e-12);

        grads.head.hidden.b.data_mut()[0] = 42.0;
        clip_gradients(&mut grads, 0.0);
        assert!((grads.head.hidden.b.at(0, 0) - 42.0).abs() < 1e-12);
        let _ = &mut m;
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        // total objective = mean cross-entropy + l2 penalty, on a tiny wrnn
        let m = tiny_model(ModelKind::Wrnn, 5);
        let examples = vec![
            Example { ids: vec![2, 3, 4, 0], label: 0 },
            Example { ids: vec![5, 2, 0, 0], label: 1 },
        ];
        let lambda = 0.01;
        let objective = |mm: &ModelParams| -> f64 {
            let mut acc = 0.0;
            for ex in &examples {
                let (probs, _) = forward(mm, &ex.ids).unwrap();
                acc += cross_entropy(&probs, ex.label).unwrap();
            }
            acc / examples.len() as f64 + l2_penalty(mm, lambda)
        };
        let mut grads = m.zeros_like();
        for ex in &examples {
            let (_, cache) = forward(&m, &ex.ids).unwrap();
            backward_into(&m, &cache, ex.label, &mut grads).unwrap();
        }
        for (_, t) in grads.tensors_mut() {
            t.scale(1.0 / examples.len() as f64);
        }
        l2_grad_into(&m, lambda, &mut grads);
        for (name, base, _) in m.tensors() {
            let analytic = grads.tensors().iter().find(|(n, _, _)| *n == name).unwrap().1.clone();
            let numeric = finite_diff_grad(
                &mut |t| {
                    let mut mm = m.clone();
                    for (n, tt) in mm.tensors_mut() {
                        if n == name {
                            *tt = t.clone();
                        }
                    }
                    objective(&mm)
                },
                &base.clone(),
                3e-5,
            )
            .unwrap();
            assert!(max_rel_error(&analytic, &numeric, 1e-8) < 1e-5, "{name}");
        }
    }

    #[test]
    fn zero_epochs_changes_nothing() {
        let m = tiny_model(ModelKind::Wrnn, 6);
        let data = vec![Example { ids: vec![2, 3, 4, 5], label: 0 }; 4];
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let out = train(m.clone(), &data, &data, &cfg).unwrap();
        assert_eq!(out.params, m);
        assert!(out.history.epochs.is_empty());
    }

    #[test]
    fn empty_train_set_errors() {
        let m = tiny_model(ModelKind::Wrnn, 7);
        let cfg = TrainConfig::default();
        assert!(train(m, &[], &[], &cfg).is_err());
    }

    #[test]
    fn training_separates_marker_corpus() {
        let (train_set, test_set, vocab_size) = marker_corpus(60, 20, 1);
        let mut rng = seeded_rng(1);
        let emb = EmbeddingMatrix::random(vocab_size, 8, &mut rng);
        let spec = ModelSpec {
            kind: ModelKind::Wrnn,
            seq_len: 20,
            embed_dim: 8,
            lstm_hidden: 8,
            classifier_hidden: 8,
            num_classes: 2,
            candidate_act: CandidateAct::Tanh,
            freeze_embeddings: false,
            normalize_pool: false,
        };
        let params = ModelParams::init(spec, emb, &mut rng).unwrap();
        let cfg = TrainConfig { epochs: 15, minibatch: 16, seed: 1, ..Default::default() };
        let out = train(params, &train_set, &test_set, &cfg).unwrap();
        let last = out.history.epochs.last().unwrap();
        assert!(last.train_accuracy >= 0.99, "train accuracy {}", last.train_accuracy);
        // objective (cross-entropy + L2) non-increasing over the first 3 epochs
        let h = &out.history.epochs;
        for w in h.windows(2).take(2) {
            let a = w[0].train_loss + w[0].train_l2;
            let b = w[1].train_loss + w[1].train_l2;
            assert!(b <= a + 1e-9, "objective increased: {a} -> {b}");
        }
    }

    #[test]
    fn deterministic_training_is_bitwise_reproducible() {
        let (train_set, test_set, vocab_size) = marker_corpus(24, 8, 2);
        let run = || {
            let mut rng = seeded_rng(9);
            let emb = EmbeddingMatrix::random(vocab_size, 4, &mut rng);
            let spec = ModelSpec {
                kind: ModelKind::Wrnn,
                seq_len: 20,
                embed_dim: 4,
                lstm_hidden: 4,
                classifier_hidden: 4,
                num_classes: 2,
                candidate_act: CandidateAct::Tanh,
                freeze_embeddings: false,
                normalize_pool: false,
            };
            let params = ModelParams::init(spec, emb, &mut rng).unwrap();
            let cfg = TrainConfig {
                epochs: 3,
                minibatch: 8,
                seed: 9,
                deterministic: true,
                ..Default::default()
            };
            train(params, &train_set, &test_set, &cfg).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.params, b.params);
        // wall-clock times differ between runs; everything else must be
        // bit-identical
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        for (ea, eb) in a.history.epochs.iter().zip(b.history.epochs.iter()) {
            assert_eq!(ea.train_l2, eb.train_l2);
        }
    }

    #[test]
    fn checkpoint_roundtrip_bitwise() {
        let m = tiny_model(ModelKind::Birnn, 10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&m, 0xdeadbeef, &path).unwrap();
        let loaded = load_checkpoint(&path, Some(0xdeadbeef)).unwrap();
        assert_eq!(m, loaded);
    }

    #[test]
    fn checkpoint_truncated_errors() {
        let m = tiny_model(ModelKind::Wrnn, 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&m, 1, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        let err = load_checkpoint(&path, Some(1)).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn checkpoint_hash_mismatch_refused() {
        let m = tiny_model(ModelKind::Wrnn, 12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&m, 100, &path).unwrap();
        let err = load_checkpoint(&path, Some(200)).unwrap_err();
        assert!(err.to_string().contains("vocabulary hash mismatch"), "{err}");
    }
}
