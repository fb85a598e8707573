//! LSTM cell with exact forward semantics and a hand-derived backward
//! pass, plus unrolling over a sequence in either direction.
//!
//! Gate inputs are the concatenation [h_prev ; x_t]. The candidate
//! activation defaults to tanh; a paper-literal mode uses sigmoid for
//! the candidate as well.

use crate::matrix::{dot, sigmoid, DenseMatrix, InitScheme, Rng};
use crate::{Error, Result};

/// Candidate-content activation for the cell update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CandidateAct {
    Tanh,
    Sigmoid,
}

impl CandidateAct {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            CandidateAct::Tanh => x.tanh(),
            CandidateAct::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed in terms of the activation output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            CandidateAct::Tanh => 1.0 - y * y,
            CandidateAct::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Gate weights and biases. Each W has shape hidden x (hidden + input);
/// each b has length hidden.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_f: DenseMatrix,
    pub w_g: DenseMatrix,
    pub w_c: DenseMatrix,
    pub w_o: DenseMatrix,
    pub b_f: DenseMatrix,
    pub b_g: DenseMatrix,
    pub b_c: DenseMatrix,
    pub b_o: DenseMatrix,
}

impl LstmParams {
    pub fn new(hidden: usize, input: usize, rng: &mut Rng) -> Self {
        let w = |rng: &mut Rng| {
            crate::matrix::init_matrix(hidden, hidden + input, InitScheme::XavierUniform, rng)
        };
        LstmParams {
            w_f: w(rng),
            w_g: w(rng),
            w_c: w(rng),
            w_o: w(rng),
            b_f: DenseMatrix::zeros(hidden, 1),
            b_g: DenseMatrix::zeros(hidden, 1),
            b_c: DenseMatrix::zeros(hidden, 1),
            b_o: DenseMatrix::zeros(hidden, 1),
        }
    }

    pub fn zeros(hidden: usize, input: usize) -> Self {
        LstmParams {
            w_f: DenseMatrix::zeros(hidden, hidden + input),
            w_g: DenseMatrix::zeros(hidden, hidden + input),
            w_c: DenseMatrix::zeros(hidden, hidden + input),
            w_o: DenseMatrix::zeros(hidden, hidden + input),
            b_f: DenseMatrix::zeros(hidden, 1),
            b_g: DenseMatrix::zeros(hidden, 1),
            b_c: DenseMatrix::zeros(hidden, 1),
            b_o: DenseMatrix::zeros(hidden, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams::zeros(self.hidden_size(), self.input_size())
    }

    pub fn hidden_size(&self) -> usize {
        self.w_f.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w_f.cols() - self.w_f.rows()
    }

    pub fn tensors(&self) -> Vec<(&'static str, &DenseMatrix, bool)> {
        vec![
            ("w_f", &self.w_f, true),
            ("w_g", &self.w_g, true),
            ("w_c", &self.w_c, true),
            ("w_o", &self.w_o, true),
            ("b_f", &self.b_f, false),
            ("b_g", &self.b_g, false),
            ("b_c", &self.b_c, false),
            ("b_o", &self.b_o, false),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut DenseMatrix)> {
        vec![
            ("w_f", &mut self.w_f),
            ("w_g", &mut self.w_g),
            ("w_c", &mut self.w_c),
            ("w_o", &mut self.w_o),
            ("b_f", &mut self.b_f),
            ("b_g", &mut self.b_g),
            ("b_c", &mut self.b_c),
            ("b_o", &mut self.b_o),
        ]
    }
}

/// Forward intermediates for one timestep, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub s_prev: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub s: Vec<f64>,
    pub o: Vec<f64>,
    pub tanh_s: Vec<f64>,
    pub candidate_act: CandidateAct,
}

/// One LSTM step:
///   f = sigmoid(W_f [h,x] + b_f)
///   g = sigmoid(W_g [h,x] + b_g)
///   c = act(W_c [h,x] + b_c)
///   s = f*s_prev + g*c
///   o = sigmoid(W_o [h,x] + b_o)
///   h = o * tanh(s)
pub fn cell_forward(
    x: &[f64],
    h_prev: &[f64],
    s_prev: &[f64],
    params: &LstmParams,
    candidate_act: CandidateAct,
) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache)> {
    let hidden = params.hidden_size();
    if x.len() != params.input_size() || h_prev.len() != hidden || s_prev.len() != hidden {
        return Err(Error::Shape(format!(
            "cell_forward: input {} hidden {} state {} vs params hidden {} input {}",
            x.len(),
            h_prev.len(),
            s_prev.len(),
            hidden,
            params.input_size()
        )));
    }
    let mut z = Vec::with_capacity(hidden + x.len());
    z.extend_from_slice(h_prev);
    z.extend_from_slice(x);

    let gate = |w: &DenseMatrix, b: &DenseMatrix, act: &dyn Fn(f64) -> f64| -> Result<Vec<f64>> {
        let mut a = w.matvec(&z)?;
        for (ai, bi) in a.iter_mut().zip(b.data().iter()) {
            *ai = act(*ai + bi);
        }
        Ok(a)
    };

    let f = gate(&params.w_f, &params.b_f, &sigmoid)?;
    let g = gate(&params.w_g, &params.b_g, &sigmoid)?;
    let c = gate(&params.w_c, &params.b_c, &|v| candidate_act.apply(v))?;
    let o = gate(&params.w_o, &params.b_o, &sigmoid)?;

    let mut s = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    let mut tanh_s = vec![0.0; hidden];
    for i in 0..hidden {
        s[i] = f[i] * s_prev[i] + g[i] * c[i];
        tanh_s[i] = s[i].tanh();
        h[i] = o[i] * tanh_s[i];
    }

    let cache = LstmStepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        s_prev: s_prev.to_vec(),
        f,
        g,
        c,
        s: s.clone(),
        o,
        tanh_s,
        candidate_act,
    };
    Ok((h, s, cache))
}

/// Gradients of one step. Given dL/dh_t and dL/ds_t (from downstream),
/// returns (dx, dh_prev, ds_prev) and accumulates into `dparams`.
pub fn cell_backward(
    dh: &[f64],
    ds_in: &[f64],
    cache: &LstmStepCache,
    params: &LstmParams,
    dparams: &mut LstmParams,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let hidden = params.hidden_size();
    if dh.len() != hidden || ds_in.len() != hidden || cache.f.len() != hidden {
        return Err(Error::Shape(format!(
            "cell_backward: dh {} ds {} cache {} vs hidden {}",
            dh.len(),
            ds_in.len(),
            cache.f.len(),
            hidden
        )));
    }
    let mut z = Vec::with_capacity(hidden + cache.x.len());
    z.extend_from_slice(&cache.h_prev);
    z.extend_from_slice(&cache.x);

    let mut ds = vec![0.0; hidden];
    let mut da_f = vec![0.0; hidden];
    let mut da_g = vec![0.0; hidden];
    let mut da_c = vec![0.0; hidden];
    let mut da_o = vec![0.0; hidden];
    let mut ds_prev = vec![0.0; hidden];
    for i in 0..hidden {
        let do_i = dh[i] * cache.tanh_s[i];
        ds[i] = ds_in[i] + dh[i] * cache.o[i] * (1.0 - cache.tanh_s[i] * cache.tanh_s[i]);
        let df = ds[i] * cache.s_prev[i];
        let dg = ds[i] * cache.c[i];
        let dc = ds[i] * cache.g[i];
        ds_prev[i] = ds[i] * cache.f[i];
        da_f[i] = df * cache.f[i] * (1.0 - cache.f[i]);
        da_g[i] = dg * cache.g[i] * (1.0 - cache.g[i]);
        da_c[i] = dc * cache.candidate_act.derivative_from_output(cache.c[i]);
        da_o[i] = do_i * cache.o[i] * (1.0 - cache.o[i]);
    }

    dparams.w_f.add_outer(&da_f, &z);
    dparams.w_g.add_outer(&da_g, &z);
    dparams.w_c.add_outer(&da_c, &z);
    dparams.w_o.add_outer(&da_o, &z);
    for i in 0..hidden {
        *dparams.b_f.at_mut(i, 0) += da_f[i];
        *dparams.b_g.at_mut(i, 0) += da_g[i];
        *dparams.b_c.at_mut(i, 0) += da_c[i];
        *dparams.b_o.at_mut(i, 0) += da_o[i];
    }

    let mut dz = params.w_f.matvec_transposed(&da_f)?;
    for (d, v) in dz.iter_mut().zip(params.w_g.matvec_transposed(&da_g)?) {
        *d += v;
    }
    for (d, v) in dz.iter_mut().zip(params.w_c.matvec_transposed(&da_c)?) {
        *d += v;
    }
    for (d, v) in dz.iter_mut().zip(params.w_o.matvec_transposed(&da_o)?) {
        *d += v;
    }
    let dh_prev = dz[..hidden].to_vec();
    let dx = dz[hidden..].to_vec();
    Ok((dx, dh_prev, ds_prev))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// Per-sequence cache: step caches in processing order plus the
/// direction they were produced in.
#[derive(Clone, Debug)]
pub struct UnrollCache {
    pub steps: Vec<LstmStepCache>,
    pub direction: Direction,
}

impl UnrollCache {
    /// Input position consumed at processing step k.
    fn pos(&self, k: usize) -> usize {
        match self.direction {
            Direction::Forward => k,
            Direction::Reverse => self.steps.len() - 1 - k,
        }
    }
}

/// Run the cell over all rows of X. Row t of the returned H is the
/// hidden state emitted at input position t regardless of direction
/// (for reverse, the output is re-indexed back to input order).
pub fn unroll_forward(
    x: &DenseMatrix,
    params: &LstmParams,
    direction: Direction,
    candidate_act: CandidateAct,
) -> Result<(DenseMatrix, UnrollCache)> {
    let sl = x.rows();
    let hidden = params.hidden_size();
    let mut h = vec![0.0; hidden];
    let mut s = vec![0.0; hidden];
    let mut out = DenseMatrix::zeros(sl, hidden);
    let mut steps = Vec::with_capacity(sl);
    for k in 0..sl {
        let pos = match direction {
            Direction::Forward => k,
            Direction::Reverse => sl - 1 - k,
        };
        let (h_new, s_new, cache) = cell_forward(x.row(pos), &h, &s, params, candidate_act)?;
        out.row_mut(pos).copy_from_slice(&h_new);
        h = h_new;
        s = s_new;
        steps.push(cache);
    }
    Ok((out, UnrollCache { steps, direction }))
}

/// Backpropagation through time. `dh_out` row t is dL/dh_t (indexed by
/// input position, like H). Returns dX and accumulates parameter
/// gradients summed over timesteps.
pub fn unroll_backward(
    dh_out: &DenseMatrix,
    cache: &UnrollCache,
    params: &LstmParams,
) -> Result<(DenseMatrix, LstmParams)> {
    let sl = cache.steps.len();
    if dh_out.rows() != sl || dh_out.cols() != params.hidden_size() {
        return Err(Error::Shape(format!(
            "unroll_backward: dH {}x{} vs {} steps of hidden {}",
            dh_out.rows(),
            dh_out.cols(),
            sl,
            params.hidden_size()
        )));
    }
    let hidden = params.hidden_size();
    let mut dparams = params.zeros_like();
    let mut dx = DenseMatrix::zeros(sl, params.input_size());
    let mut dh_carry = vec![0.0; hidden];
    let mut ds_carry = vec![0.0; hidden];
    for k in (0..sl).rev() {
        let pos = cache.pos(k);
        let mut dh = dh_out.row(pos).to_vec();
        for (a, b) in dh.iter_mut().zip(dh_carry.iter()) {
            *a += b;
        }
        let (dx_t, dh_prev, ds_prev) =
            cell_backward(&dh, &ds_carry, &cache.steps[k], params, &mut dparams)?;
        dx.row_mut(pos).copy_from_slice(&dx_t);
        dh_carry = dh_prev;
        ds_carry = ds_prev;
    }
    Ok((dx, dparams))
}

/// Frobenius dot product of all parameter tensors; used by tests.
pub fn params_dot(a: &LstmParams, b: &LstmParams) -> f64 {
    let mut acc = 0.0;
    for ((_, ta, _), (_, tb, _)) in a.tensors().iter().zip(b.tensors().iter()) {
        acc += dot(ta.data(), tb.data());
    }
    acc
}
