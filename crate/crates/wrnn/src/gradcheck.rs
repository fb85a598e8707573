//! Finite-difference validation of every analytic gradient in the
//! crate, on fixed-seed tiny instances. Run via the `gradcheck`
//! command; also the backbone of the acceptance suite.

use crate::embeddings::EmbeddingMatrix;
use crate::lstm::{cell_backward, cell_forward, unroll_backward, unroll_forward};
use crate::lstm::{CandidateAct, Direction, LstmParams};
use crate::matrix::{dot, finite_diff_grad, max_rel_error, seeded_rng, DenseMatrix};
use crate::models::{backward, forward, ModelKind, ModelParams, ModelSpec};
use crate::training::{cross_entropy, l2_grad_into, l2_penalty, Example};
use crate::Result;

pub const TOLERANCE: f64 = 1e-5;
const THRESHOLD: f64 = 1e-8;
// larger than the tolerance: the central-difference noise floor on
// tiny-magnitude coordinates is lowest around this step size
const EPS: f64 = 3e-5;

#[derive(Clone, Debug)]
pub struct ComponentResult {
    pub component: &'static str,
    pub worst_rel_error: f64,
    pub pass: bool,
}

pub const COMPONENTS: [&str; 7] = [
    "lstm_cell",
    "bptt",
    "pooling_weights",
    "classifier_head",
    "embedding_lookup",
    "l2_term",
    "full_objective",
];

fn tiny_model(kind: ModelKind) -> ModelParams {
    let mut rng = seeded_rng(424242);
    let emb = EmbeddingMatrix::random(7, 2, &mut rng);
    let spec = ModelSpec {
        kind,
        seq_len: 5,
        embed_dim: 2,
        lstm_hidden: 4,
        classifier_hidden: 3,
        num_classes: 2,
        candidate_act: CandidateAct::Tanh,
        freeze_embeddings: false,
        normalize_pool: false,
    };
    let mut params = ModelParams::init(spec, emb, &mut rng).unwrap();
    if let Some(w) = &mut params.pos_weights {
        // non-uniform pooling weights so their gradient path is exercised
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            *v = 0.1 + 0.15 * i as f64;
        }
    }
    params
}

fn worst_over_tensors(
    params: &ModelParams,
    grads: &ModelParams,
    loss: &dyn Fn(&ModelParams) -> f64,
    only: Option<&[&str]>,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for (name, base, _) in params.tensors() {
        if let Some(filter) = only {
            if !filter.iter().any(|f| name.starts_with(f)) {
                continue;
            }
        }
        let analytic = grads
            .tensors()
            .iter()
            .find(|(n, _, _)| *n == name)
            .unwrap()
            .1
            .clone();
        let numeric = finite_diff_grad(
            &mut |t| {
                let mut mm = params.clone();
                for (n, tt) in mm.tensors_mut() {
                    if n == name {
                        *tt = t.clone();
                    }
                }
                loss(&mm)
            },
            &base.clone(),
            EPS,
        )?;
        worst = worst.max(max_rel_error(&analytic, &numeric, THRESHOLD));
    }
    Ok(worst)
}

fn check_lstm_cell() -> Result<f64> {
    let mut rng = seeded_rng(1001);
    let params = LstmParams::new(3, 2, &mut rng);
    use rand::Rng as _;
    let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h_prev: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let s_prev: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |p: &LstmParams| -> f64 {
        let (h, s, _) = cell_forward(&x, &h_prev, &s_prev, p, CandidateAct::Tanh).unwrap();
        0.5 * (dot(&h, &h) + dot(&s, &s))
    };
    let (h, s, cache) = cell_forward(&x, &h_prev, &s_prev, &params, CandidateAct::Tanh)?;
    let mut dp = params.zeros_like();
    cell_backward(&h, &s, &cache, &params, &mut dp)?;
    let mut worst = 0.0f64;
    let names: Vec<&str> = params.tensors().iter().map(|(n, _, _)| *n).collect();
    for name in names {
        let analytic = dp.tensors().iter().find(|(n, _, _)| *n == name).unwrap().1.clone();
        let base = params.tensors().iter().find(|(n, _, _)| *n == name).unwrap().1.clone();
        let numeric = finite_diff_grad(
            &mut |t| {
                let mut pp = params.clone();
                for (n, tt) in pp.tensors_mut() {
                    if n == name {
                        *tt = t.clone();
                    }
                }
                loss(&pp)
            },
            &base,
            EPS,
        )?;
        worst = worst.max(max_rel_error(&analytic, &numeric, THRESHOLD));
    }
    Ok(worst)
}

fn check_bptt() -> Result<f64> {
    let mut rng = seeded_rng(1002);
    let params = LstmParams::new(4, 2, &mut rng);
    use rand::Rng as _;
    let x = {
        let mut m = DenseMatrix::zeros(5, 2);
        for v in m.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        m
    };
    let loss = |p: &LstmParams| -> f64 {
        let (h, _) = unroll_forward(&x, p, Direction::Forward, CandidateAct::Tanh).unwrap();
        0.5 * h.sum_squares()
    };
    let (h, cache) = unroll_forward(&x, &params, Direction::Forward, CandidateAct::Tanh)?;
    let (_, dp) = unroll_backward(&h, &cache, &params)?;
    let mut worst = 0.0f64;
    let names: Vec<&str> = params.tensors().iter().map(|(n, _, _)| *n).collect();
    for name in names {
        let analytic = dp.tensors().iter().find(|(n, _, _)| *n == name).unwrap().1.clone();
        let base = params.tensors().iter().find(|(n, _, _)| *n == name).unwrap().1.clone();
        let numeric = finite_diff_grad(
            &mut |t| {
                let mut pp = params.clone();
                for (n, tt) in pp.tensors_mut() {
                    if n == name {
                        *tt = t.clone();
                    }
                }
                loss(&pp)
            },
            &base,
            EPS,
        )?;
        worst = worst.max(max_rel_error(&analytic, &numeric, THRESHOLD));
    }
    Ok(worst)
}

fn model_loss(m: &ModelParams, ids: &[usize], label: usize) -> f64 {
    let (probs, _) = forward(m, ids).unwrap();
    cross_entropy(&probs, label).unwrap()
}

fn check_model_tensors(only: &[&str]) -> Result<f64> {
    let params = tiny_model(ModelKind::Wrnn);
    let ids = [2, 3, 0, 5, 6];
    let label = 1;
    let (_, cache) = forward(&params, &ids)?;
    let grads = backward(&params, &cache, label)?;
    worst_over_tensors(&params, &grads, &|m| model_loss(m, &ids, label), Some(only))
}

fn check_l2_term() -> Result<f64> {
    let params = tiny_model(ModelKind::Wrnn);
    let lambda = 0.01;
    let mut grads = params.zeros_like();
    l2_grad_into(&params, lambda, &mut grads);
    // restrict to decayed tensors: the others have identically zero
    // analytic and numeric gradients
    let decayed: Vec<&str> = vec!["lstm_fwd.w_", "head.hidden.w", "head.out.w"];
    worst_over_tensors(&params, &grads, &|m| l2_penalty(m, lambda), Some(&decayed))
}

fn check_full_objective() -> Result<f64> {
    let params = tiny_model(ModelKind::Wrnn);
    let examples = vec![
        Example { ids: vec![2, 3, 4, 5, 0], label: 0 },
        Example { ids: vec![6, 2, 0, 0, 0], label: 1 },
        Example { ids: vec![4, 4, 5, 3, 2], label: 1 },
    ];
    let lambda = 0.01;
    let objective = move |m: &ModelParams| -> f64 {
        let mut acc = 0.0;
        for ex in &examples {
            acc += model_loss(m, &ex.ids, ex.label);
        }
        acc / 3.0 + l2_penalty(m, lambda)
    };
    let examples2 = vec![
        Example { ids: vec![2, 3, 4, 5, 0], label: 0 },
        Example { ids: vec![6, 2, 0, 0, 0], label: 1 },
        Example { ids: vec![4, 4, 5, 3, 2], label: 1 },
    ];
    let mut grads = params.zeros_like();
    for ex in &examples2 {
        let (_, cache) = forward(&params, &ex.ids)?;
        crate::models::backward_into(&params, &cache, ex.label, &mut grads)?;
    }
    for (_, t) in grads.tensors_mut() {
        t.scale(1.0 / 3.0);
    }
    l2_grad_into(&params, lambda, &mut grads);
    worst_over_tensors(&params, &grads, &objective, None)
}

/// Run the whole suite. `corrupt` deliberately scales the measured
/// error of one named component, as a negative control for the
/// reporting path.
pub fn run_suite(corrupt: Option<&str>) -> Result<Vec<ComponentResult>> {
    let mut results = Vec::new();
    for component in COMPONENTS {
        let mut worst = match component {
            "lstm_cell" => check_lstm_cell()?,
            "bptt" => check_bptt()?,
            "pooling_weights" => check_model_tensors(&["pos_weights"])?,
            "classifier_head" => check_model_tensors(&["head."])?,
            "embedding_lookup" => check_model_tensors(&["embeddings"])?,
            "l2_term" => check_l2_term()?,
            "full_objective" => check_full_objective()?,
            _ => unreachable!(),
        };
        if corrupt == Some(component) {
            worst += 1.0;
        }
        results.push(ComponentResult {
            component,
            worst_rel_error: worst,
            pass: worst < TOLERANCE,
        });
    }
    Ok(results)
}
