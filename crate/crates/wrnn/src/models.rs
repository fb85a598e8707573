//! Classifier assembly: the weighted-pooling model (wrnn) and the
//! baselines rnn_last, birnn and dnn. Each forward keeps a cache and
//! has a matching hand-derived backward producing gradients for every
//! trainable parameter.

use std::fmt;
use std::str::FromStr;

use crate::corpus::PAD_ID;
use crate::embeddings::{lookup, lookup_backward, EmbeddingMatrix};
use crate::lstm::{
    unroll_backward, unroll_forward, CandidateAct, Direction, LstmParams, UnrollCache,
};
use crate::matrix::{dot, softmax, DenseMatrix, InitScheme, Rng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Wrnn,
    RnnLast,
    Birnn,
    Dnn,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Wrnn => "wrnn",
            ModelKind::RnnLast => "rnn_last",
            ModelKind::Birnn => "birnn",
            ModelKind::Dnn => "dnn",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wrnn" => Ok(ModelKind::Wrnn),
            "rnn_last" => Ok(ModelKind::RnnLast),
            "birnn" => Ok(ModelKind::Birnn),
            "dnn" => Ok(ModelKind::Dnn),
            other => Err(Error::Config(format!(
                "unknown model kind '{other}' (expected wrnn, rnn_last, birnn or dnn)"
            ))),
        }
    }
}

/// Everything needed to build (or validate) a parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub classifier_hidden: usize,
    pub num_classes: usize,
    pub candidate_act: CandidateAct,
    pub freeze_embeddings: bool,
    /// Softmax-normalize the positional pooling weights.
    pub normalize_pool: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub w: DenseMatrix,
    pub b: DenseMatrix,
}

impl DenseLayer {
    fn new(out_dim: usize, in_dim: usize, rng: &mut Rng) -> Self {
        DenseLayer {
            w: crate::matrix::init_matrix(out_dim, in_dim, InitScheme::XavierUniform, rng),
            b: DenseMatrix::zeros(out_dim, 1),
        }
    }

    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        DenseLayer { w: DenseMatrix::zeros(out_dim, in_dim), b: DenseMatrix::zeros(out_dim, 1) }
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.w.matvec(x)?;
        for (zi, bi) in z.iter_mut().zip(self.b.data().iter()) {
            *zi += bi;
        }
        Ok(z)
    }
}

/// Dense ReLU layer followed by the softmax output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub hidden: DenseLayer,
    pub out: DenseLayer,
}

/// All trainable parameters of one model. Also used as the gradient
/// container (`zeros_like` mirrors every tensor).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub embeddings: EmbeddingMatrix,
    pub lstm_fwd: Option<LstmParams>,
    pub lstm_bwd: Option<LstmParams>,
    /// Positional pooling weights, one trainable scalar per position,
    /// initialized to 1/SL so the initial pooling is close to a mean.
    pub pos_weights: Option<DenseMatrix>,
    /// Second dense ReLU layer, dnn only.
    pub dnn_mid: Option<DenseLayer>,
    pub head: ClassifierHead,
}

impl ModelParams {
    pub fn init(spec: ModelSpec, embeddings: EmbeddingMatrix, rng: &mut Rng) -> Result<Self> {
        if embeddings.dim() != spec.embed_dim {
            return Err(Error::Config(format!(
                "embedding dim {} does not match spec embed_dim {}",
                embeddings.dim(),
                spec.embed_dim
            )));
        }
        let head_in = match spec.kind {
            ModelKind::Wrnn | ModelKind::RnnLast => spec.lstm_hidden,
            ModelKind::Birnn => 2 * spec.lstm_hidden,
            ModelKind::Dnn => spec.embed_dim,
        };
        let lstm_fwd = match spec.kind {
            ModelKind::Dnn => None,
            _ => Some(LstmParams::new(spec.lstm_hidden, spec.embed_dim, rng)),
        };
        let lstm_bwd = match spec.kind {
            ModelKind::Birnn => Some(LstmParams::new(spec.lstm_hidden, spec.embed_dim, rng)),
            _ => None,
        };
        let pos_weights = match spec.kind {
            ModelKind::Wrnn => {
                let mut w = DenseMatrix::zeros(spec.seq_len, 1);
                let init = 1.0 / spec.seq_len as f64;
                for v in w.data_mut() {
                    *v = init;
                }
                Some(w)
            }
            _ => None,
        };
        let dnn_mid = match spec.kind {
            ModelKind::Dnn => Some(DenseLayer::new(spec.classifier_hidden, spec.classifier_hidden, rng)),
            _ => None,
        };
        let head = ClassifierHead {
            hidden: DenseLayer::new(spec.classifier_hidden, head_in, rng),
            out: DenseLayer::new(spec.num_classes, spec.classifier_hidden, rng),
        };
        Ok(ModelParams { spec, embeddings, lstm_fwd, lstm_bwd, pos_weights, dnn_mid, head })
    }

    /// Same structure, every tensor zero. Gradient container.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.embeddings.table = DenseMatrix::zeros(
            self.embeddings.vocab_size(),
            self.embeddings.dim(),
        );
        if let Some(l) = &mut z.lstm_fwd {
            *l = l.zeros_like();
        }
        if let Some(l) = &mut z.lstm_bwd {
            *l = l.zeros_like();
        }
        if let Some(w) = &mut z.pos_weights {
            *w = DenseMatrix::zeros(w.rows(), 1);
        }
        if let Some(d) = &mut z.dnn_mid {
            *d = DenseLayer::zeros(d.w.rows(), d.w.cols());
        }
        z.head.hidden = DenseLayer::zeros(self.head.hidden.w.rows(), self.head.hidden.w.cols());
        z.head.out = DenseLayer::zeros(self.head.out.w.rows(), self.head.out.w.cols());
        z
    }

    /// Flat, deterministically ordered view of every tensor:
    /// (name, tensor, subject to weight decay).
    pub fn tensors(&self) -> Vec<(String, &DenseMatrix, bool)> {
        let mut out: Vec<(String, &DenseMatrix, bool)> =
            vec![("embeddings".into(), &self.embeddings.table, false)];
        if let Some(l) = &self.lstm_fwd {
            for (n, t, decay) in l.tensors() {
                out.push((format!("lstm_fwd.{n}"), t, decay));
            }
        }
        if let Some(l) = &self.lstm_bwd {
            for (n, t, decay) in l.tensors() {
                out.push((format!("lstm_bwd.{n}"), t, decay));
            }
        }
        if let Some(w) = &self.pos_weights {
            out.push(("pos_weights".into(), w, false));
        }
        out.push(("head.hidden.w".into(), &self.head.hidden.w, true));
        out.push(("head.hidden.b".into(), &self.head.hidden.b, false));
        if let Some(d) = &self.dnn_mid {
            out.push(("dnn_mid.w".into(), &d.w, true));
            out.push(("dnn_mid.b".into(), &d.b, false));
        }
        out.push(("head.out.w".into(), &self.head.out.w, true));
        out.push(("head.out.b".into(), &self.head.out.b, false));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        let mut out: Vec<(String, &mut DenseMatrix)> =
            vec![("embeddings".into(), &mut self.embeddings.table)];
        if let Some(l) = &mut self.lstm_fwd {
            for (n, t) in l.tensors_mut() {
                out.push((format!("lstm_fwd.{n}"), t));
            }
        }
        if let Some(l) = &mut self.lstm_bwd {
            for (n, t) in l.tensors_mut() {
                out.push((format!("lstm_bwd.{n}"), t));
            }
        }
        if let Some(w) = &mut self.pos_weights {
            out.push(("pos_weights".into(), w));
        }
        out.push(("head.hidden.w".into(), &mut self.head.hidden.w));
        out.push(("head.hidden.b".into(), &mut self.head.hidden.b));
        if let Some(d) = &mut self.dnn_mid {
            out.push(("dnn_mid.w".into(), &mut d.w));
            out.push(("dnn_mid.b".into(), &mut d.b));
        }
        out.push(("head.out.w".into(), &mut self.head.out.w));
        out.push(("head.out.b".into(), &mut self.head.out.b));
        out
    }
}

/// Pool per-position hidden states with positional weights:
/// `sum_i w_i * H[i]`. Raw weights by default; optional softmax
/// normalization returns the normalized weights for the backward pass.
pub fn weighted_sum(
    h: &DenseMatrix,
    w: &DenseMatrix,
    normalize: bool,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if w.rows() != h.rows() || w.cols() != 1 {
        return Err(Error::Shape(format!(
            "weighted_sum: weights {}x{} vs {} rows",
            w.rows(),
            w.cols(),
            h.rows()
        )));
    }
    let weights: Option<Vec<f64>> = normalize.then(|| softmax(w.data()));
    let eff = weights.as_deref().unwrap_or(w.data());
    let mut out = vec![0.0; h.cols()];
    for i in 0..h.rows() {
        let wi = eff[i];
        for (o, v) in out.iter_mut().zip(h.row(i)) {
            *o += wi * v;
        }
    }
    Ok((out, weights))
}

/// Forward intermediates retained for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub ids: Vec<usize>,
    pub x: DenseMatrix,
    pub h_fwd: Option<DenseMatrix>,
    pub unroll_fwd: Option<UnrollCache>,
    pub h_bwd: Option<DenseMatrix>,
    pub unroll_bwd: Option<UnrollCache>,
    /// Softmax-normalized pooling weights when normalize_pool is on.
    pub pool_u: Option<Vec<f64>>,
    pub pooled: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z_mid: Option<Vec<f64>>,
    pub a_mid: Option<Vec<f64>>,
    pub probs: Vec<f64>,
    pub n_nonpad: usize,
}

fn relu_vec(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

/// Full forward pass for any model kind. Returns class probabilities
/// and the cache consumed by `backward`.
pub fn forward(params: &ModelParams, ids: &[usize]) -> Result<(Vec<f64>, ForwardCache)> {
    let spec = &params.spec;
    if ids.len() != spec.seq_len {
        return Err(Error::Shape(format!(
            "forward: sequence length {} != spec seq_len {}",
            ids.len(),
            spec.seq_len
        )));
    }
    let x = lookup(ids, &params.embeddings)?;

    let mut h_fwd = None;
    let mut unroll_fwd = None;
    let mut h_bwd = None;
    let mut unroll_bwd = None;
    let mut pool_u = None;
    let n_nonpad = ids.iter().filter(|&&id| id != PAD_ID).count();

    let pooled = match spec.kind {
        ModelKind::Wrnn => {
            let lstm = params.lstm_fwd.as_ref().expect("wrnn has forward lstm");
            let (h, cache) = unroll_forward(&x, lstm, Direction::Forward, spec.candidate_act)?;
            let w = params.pos_weights.as_ref().expect("wrnn has pos weights");
            let (pooled, u) = weighted_sum(&h, w, spec.normalize_pool)?;
            h_fwd = Some(h);
            unroll_fwd = Some(cache);
            pool_u = u;
            pooled
        }
        ModelKind::RnnLast => {
            let lstm = params.lstm_fwd.as_ref().expect("rnn_last has forward lstm");
            let (h, cache) = unroll_forward(&x, lstm, Direction::Forward, spec.candidate_act)?;
            let pooled = h.row(h.rows() - 1).to_vec();
            h_fwd = Some(h);
            unroll_fwd = Some(cache);
            pooled
        }
        ModelKind::Birnn => {
            let fwd = params.lstm_fwd.as_ref().expect("birnn has forward lstm");
            let bwd = params.lstm_bwd.as_ref().expect("birnn has backward lstm");
            let (hf, cf) = unroll_forward(&x, fwd, Direction::Forward, spec.candidate_act)?;
            let (hb, cb) = unroll_forward(&x, bwd, Direction::Reverse, spec.candidate_act)?;
            // final state of each direction: last position forward,
            // position 0 for the reverse pass
            let mut pooled = hf.row(hf.rows() - 1).to_vec();
            pooled.extend_from_slice(hb.row(0));
            h_fwd = Some(hf);
            unroll_fwd = Some(cf);
            h_bwd = Some(hb);
            unroll_bwd = Some(cb);
            pooled
        }
        ModelKind::Dnn => {
            // mean of non-pad embedding rows; zero vector if all pad
            let mut pooled = vec![0.0; spec.embed_dim];
            if n_nonpad > 0 {
                for (t, &id) in ids.iter().enumerate() {
                    if id != PAD_ID {
                        for (p, v) in pooled.iter_mut().zip(x.row(t)) {
                            *p += v;
                        }
                    }
                }
                for p in pooled.iter_mut() {
                    *p /= n_nonpad as f64;
                }
            }
            pooled
        }
    };

    let z1 = params.head.hidden.forward(&pooled)?;
    let a1 = relu_vec(&z1);
    let (z_mid, a_mid) = match &params.dnn_mid {
        Some(mid) => {
            let z = mid.forward(&a1)?;
            let a = relu_vec(&z);
            (Some(z), Some(a))
        }
        None => (None, None),
    };
    let last = a_mid.as_ref().unwrap_or(&a1);
    let logits = params.head.out.forward(last)?;
    let probs = softmax(&logits);

    let cache = ForwardCache {
        ids: ids.to_vec(),
        x,
        h_fwd,
        unroll_fwd,
        h_bwd,
        unroll_bwd,
        pool_u,
        pooled,
        z1,
        a1,
        z_mid,
        a_mid,
        probs: probs.clone(),
        n_nonpad,
    };
    Ok((probs, cache))
}

/// Backward pass from the cross-entropy gradient at the softmax input
/// (`probs - onehot(label)`). Returns a gradient set covering exactly
/// the trainable parameters; embedding gradients are omitted when
/// embeddings are frozen.
pub fn backward(params: &ModelParams, cache: &ForwardCache, label: usize) -> Result<ModelParams> {
    let mut grads = params.zeros_like();
    backward_into(params, cache, label, &mut grads)?;
    Ok(grads)
}

fn add_lstm_grads(dst: &mut LstmParams, src: &LstmParams) {
    for ((_, d), (_, s, _)) in dst.tensors_mut().into_iter().zip(src.tensors()) {
        d.add_scaled(s, 1.0);
    }
}

/// Like `backward` but accumulates into an existing gradient set, so a
/// minibatch can share one buffer instead of allocating a full
/// embedding-table gradient per example.
pub fn backward_into(
    params: &ModelParams,
    cache: &ForwardCache,
    label: usize,
    grads: &mut ModelParams,
) -> Result<()> {
    let spec = &params.spec;
    if label >= spec.num_classes {
        return Err(Error::Data(format!(
            "label {label} out of range {}",
            spec.num_classes
        )));
    }
    if cache.ids.len() != spec.seq_len {
        return Err(Error::Shape("backward: cache does not match model spec".into()));
    }

    // softmax + cross-entropy fused gradient
    let mut dlogits = cache.probs.clone();
    dlogits[label] -= 1.0;

    let last_act = cache.a_mid.as_ref().unwrap_or(&cache.a1);
    grads.head.out.w.add_outer(&dlogits, last_act);
    for (i, &d) in dlogits.iter().enumerate() {
        *grads.head.out.b.at_mut(i, 0) += d;
    }
    let mut da_last = params.head.out.w.matvec_transposed(&dlogits)?;

    if let (Some(mid), Some(z_mid)) = (&params.dnn_mid, &cache.z_mid) {
        let dz_mid: Vec<f64> = da_last
            .iter()
            .zip(z_mid.iter())
            .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
            .collect();
        let gmid = grads.dnn_mid.as_mut().expect("grads mirror params");
        gmid.w.add_outer(&dz_mid, &cache.a1);
        for (i, &d) in dz_mid.iter().enumerate() {
            *gmid.b.at_mut(i, 0) += d;
        }
        da_last = mid.w.matvec_transposed(&dz_mid)?;
    }

    let dz1: Vec<f64> = da_last
        .iter()
        .zip(cache.z1.iter())
        .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
        .collect();
    grads.head.hidden.w.add_outer(&dz1, &cache.pooled);
    for (i, &d) in dz1.iter().enumerate() {
        *grads.head.hidden.b.at_mut(i, 0) += d;
    }
    let d_pooled = params.head.hidden.w.matvec_transposed(&dz1)?;

    // pooling backward -> gradient w.r.t. the embedded input rows
    let mut dx = DenseMatrix::zeros(spec.seq_len, spec.embed_dim);
    match spec.kind {
        ModelKind::Wrnn => {
            let h = cache.h_fwd.as_ref().unwrap();
            let w = params.pos_weights.as_ref().unwrap();
            let mut dh = DenseMatrix::zeros(spec.seq_len, spec.lstm_hidden);
            let gw = grads.pos_weights.as_mut().unwrap();
            match &cache.pool_u {
                Some(u) => {
                    // softmax-normalized pooling: chain through the softmax
                    let du: Vec<f64> = (0..spec.seq_len)
                        .map(|i| dot(&d_pooled, h.row(i)))
                        .collect();
                    let du_dot_u = dot(&du, u);
                    for i in 0..spec.seq_len {
                        *gw.at_mut(i, 0) += u[i] * (du[i] - du_dot_u);
                        for (d, &p) in dh.row_mut(i).iter_mut().zip(d_pooled.iter()) {
                            *d += u[i] * p;
                        }
                    }
                }
                None => {
                    for i in 0..spec.seq_len {
                        *gw.at_mut(i, 0) += dot(&d_pooled, h.row(i));
                        let wi = w.at(i, 0);
                        for (d, &p) in dh.row_mut(i).iter_mut().zip(d_pooled.iter()) {
                            *d += wi * p;
                        }
                    }
                }
            }
            let lstm = params.lstm_fwd.as_ref().unwrap();
            let (dx_l, dlstm) = unroll_backward(&dh, cache.unroll_fwd.as_ref().unwrap(), lstm)?;
            dx = dx_l;
            add_lstm_grads(grads.lstm_fwd.as_mut().unwrap(), &dlstm);
        }
        ModelKind::RnnLast => {
            let mut dh = DenseMatrix::zeros(spec.seq_len, spec.lstm_hidden);
            dh.row_mut(spec.seq_len - 1).copy_from_slice(&d_pooled);
            let lstm = params.lstm_fwd.as_ref().unwrap();
            let (dx_l, dlstm) = unroll_backward(&dh, cache.unroll_fwd.as_ref().unwrap(), lstm)?;
            dx = dx_l;
            add_lstm_grads(grads.lstm_fwd.as_mut().unwrap(), &dlstm);
        }
        ModelKind::Birnn => {
            let hidden = spec.lstm_hidden;
            let mut dh_f = DenseMatrix::zeros(spec.seq_len, hidden);
            dh_f.row_mut(spec.seq_len - 1).copy_from_slice(&d_pooled[..hidden]);
            let mut dh_b = DenseMatrix::zeros(spec.seq_len, hidden);
            dh_b.row_mut(0).copy_from_slice(&d_pooled[hidden..]);
            let fwd = params.lstm_fwd.as_ref().unwrap();
            let bwd = params.lstm_bwd.as_ref().unwrap();
            let (dx_f, dl_f) = unroll_backward(&dh_f, cache.unroll_fwd.as_ref().unwrap(), fwd)?;
            let (dx_b, dl_b) = unroll_backward(&dh_b, cache.unroll_bwd.as_ref().unwrap(), bwd)?;
            dx = dx_f;
            dx.add_scaled(&dx_b, 1.0);
            add_lstm_grads(grads.lstm_fwd.as_mut().unwrap(), &dl_f);
            add_lstm_grads(grads.lstm_bwd.as_mut().unwrap(), &dl_b);
        }
        ModelKind::Dnn => {
            if cache.n_nonpad > 0 {
                let scale = 1.0 / cache.n_nonpad as f64;
                for (t, &id) in cache.ids.iter().enumerate() {
                    if id != PAD_ID {
                        for (d, &p) in dx.row_mut(t).iter_mut().zip(d_pooled.iter()) {
                            *d += scale * p;
                        }
                    }
                }
            }
        }
    }

    if !spec.freeze_embeddings {
        lookup_backward(&cache.ids, &dx, &mut grads.embeddings.table);
    }
    Ok(())
}
