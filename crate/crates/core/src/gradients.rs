//! Analytic gradients of the stage losses and a central-difference checker.

use serde::Serialize;

use crate::data::AnnotatedPair;
use crate::error::{Error, Result};
use crate::head::{RewardHeadParams, Tensor, TensorId, Trace};
use crate::losses::{self, LossTerms, OverallVerdict, Stage, StageWeights};
use crate::taxonomy::Taxonomy;

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const DEFAULT_PARAM_CAP: usize = 20_000;

/// One gradient tensor per parameter tensor, same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    tensors: Vec<Tensor>,
}

impl GradientSet {
    pub fn zeros_like(p: &RewardHeadParams) -> Self {
        GradientSet {
            tensors: TensorId::ALL
                .iter()
                .map(|&id| {
                    let t = p.tensor(id);
                    Tensor::zeros(t.rows, t.cols)
                })
                .collect(),
        }
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.tensors[id.index()]
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut Tensor {
        &mut self.tensors[id.index()]
    }

    pub fn is_zero(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|&v| v == 0.0))
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &GradientSet) -> f64 {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Upstream derivatives of the loss with respect to one candidate's outputs.
struct Upstream {
    dc: Vec<f64>,
    dsums: Vec<f64>,
    dos: f64,
}

impl Upstream {
    fn zeros(nc: usize, na: usize) -> Self {
        Upstream {
            dc: vec![0.0; nc],
            dsums: vec![0.0; na],
            dos: 0.0,
        }
    }
}

/// Accumulates `d loss / d params` for one candidate into `grads`.
fn backward(
    p: &RewardHeadParams,
    h: &[f64],
    tr: &Trace,
    up: &Upstream,
    t: &Taxonomy,
    grads: &mut GradientSet,
) {
    use TensorId::*;
    let out = &tr.out;
    let (na, nc) = (p.n_aspects(), p.n_criteria());

    // os = sum_i sums[i] * ar[i]
    let dar: Vec<f64> = (0..na).map(|i| up.dos * out.aspect_sums[i]).collect();
    let dsums: Vec<f64> = (0..na).map(|i| up.dsums[i] + up.dos * out.ar[i]).collect();

    // c[k] = w[k] * z[k], sums[i] = sum_{k in U_i} c[k]
    let mut dz = vec![0.0; nc];
    let mut dlogit_c = vec![0.0; nc];
    for (i, &ds) in dsums.iter().enumerate() {
        let u = t.range(i);
        let mut dw = vec![0.0; u.len()];
        for (j, k) in u.clone().enumerate() {
            let dck = up.dc[k] + ds;
            dz[k] = dck * out.criteria_weights[k];
            dw[j] = dck * tr.raw_scores[k];
        }
        let dot: f64 = u
            .clone()
            .zip(&dw)
            .map(|(k, g)| out.criteria_weights[k] * g)
            .sum();
        for (j, k) in u.enumerate() {
            dlogit_c[k] = out.criteria_weights[k] * (dw[j] - dot);
        }
    }

    let dot: f64 = out.ar.iter().zip(&dar).map(|(a, g)| a * g).sum();
    let dlogit_g: Vec<f64> = out
        .ar
        .iter()
        .zip(&dar)
        .map(|(a, g)| a * (g - dot))
        .collect();

    if !p.is_frozen(ScoreWeight) {
        outer_acc(grads.tensor_mut(ScoreWeight), &dz, h);
    }
    if !p.is_frozen(ScoreBias) {
        vec_acc(grads.tensor_mut(ScoreBias), &dz);
    }
    gate_backward(
        p,
        [
            AspectHiddenWeight,
            AspectHiddenBias,
            AspectOutWeight,
            AspectOutBias,
        ],
        h,
        &tr.aspect_hidden,
        &dlogit_g,
        grads,
    );
    gate_backward(
        p,
        [
            CriteriaHiddenWeight,
            CriteriaHiddenBias,
            CriteriaOutWeight,
            CriteriaOutBias,
        ],
        h,
        &tr.criteria_hidden,
        &dlogit_c,
        grads,
    );
}

/// Backpropagates through `logits = W2 tanh(W1 h + b1) + b2`.
fn gate_backward(
    p: &RewardHeadParams,
    [w1, b1, w2, b2]: [TensorId; 4],
    h: &[f64],
    hidden: &[f64],
    dlogits: &[f64],
    grads: &mut GradientSet,
) {
    if !p.is_frozen(w2) {
        outer_acc(grads.tensor_mut(w2), dlogits, hidden);
    }
    if !p.is_frozen(b2) {
        vec_acc(grads.tensor_mut(b2), dlogits);
    }
    if p.is_frozen(w1) && p.is_frozen(b1) {
        return;
    }
    let out_w = p.tensor(w2);
    let dpre: Vec<f64> = (0..hidden.len())
        .map(|j| {
            let du: f64 = (0..out_w.rows).map(|r| out_w.at(r, j) * dlogits[r]).sum();
            du * (1.0 - hidden[j] * hidden[j])
        })
        .collect();
    if !p.is_frozen(w1) {
        outer_acc(grads.tensor_mut(w1), &dpre, h);
    }
    if !p.is_frozen(b1) {
        vec_acc(grads.tensor_mut(b1), &dpre);
    }
}

fn outer_acc(g: &mut Tensor, rows: &[f64], cols: &[f64]) {
    for (r, &a) in rows.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let row = &mut g.data[r * g.cols..(r + 1) * g.cols];
        for (x, &b) in row.iter_mut().zip(cols) {
            *x += a * b;
        }
    }
}

fn vec_acc(g: &mut Tensor, v: &[f64]) {
    for (x, &a) in g.data.iter_mut().zip(v) {
        *x += a;
    }
}

/// Loss terms and exact gradient of the stage loss. Frozen tensors receive
/// zero gradients.
pub fn loss_gradient_terms(
    stage: Stage,
    params: &RewardHeadParams,
    batch: &[AnnotatedPair],
    t: &Taxonomy,
    weights: &StageWeights,
) -> Result<(LossTerms, GradientSet)> {
    loss_gradient_terms_with_threads(stage, params, batch, t, weights, 1)
}

/// As [`loss_gradient_terms`], running the forward passes on up to `threads`
/// workers. Accumulation stays sequential in item order, so the result does
/// not depend on `threads`.
pub fn loss_gradient_terms_with_threads(
    stage: Stage,
    params: &RewardHeadParams,
    batch: &[AnnotatedPair],
    t: &Taxonomy,
    weights: &StageWeights,
    threads: usize,
) -> Result<(LossTerms, GradientSet)> {
    losses::validate_batch(stage, batch, weights)?;
    params.check_shape_vs(t)?;
    let w = weights.masked(stage);
    for item in batch {
        params.check_input(&item.feature_a)?;
        params.check_input(&item.feature_b)?;
    }
    let traces: Vec<(Trace, Trace)> = crate::parallel::ordered_map(batch, threads, |item| {
        (
            params.trace(&item.feature_a, t),
            params.trace(&item.feature_b, t),
        )
    });
    let outputs: Vec<_> = traces
        .iter()
        .map(|(a, b)| (a.out.clone(), b.out.clone()))
        .collect();
    let terms = losses::combine(batch, &outputs, &w);

    let mut grads = GradientSet::zeros_like(params);
    if TensorId::ALL.iter().all(|&id| params.is_frozen(id)) {
        return Ok((terms, grads));
    }

    let (na, nc) = (params.n_aspects(), params.n_criteria());
    let scale = |lambda: f64, n: usize| if n == 0 { 0.0 } else { lambda / n as f64 };
    let k1 = scale(w.lambda_l1, terms.n_l1);
    let k2 = scale(w.lambda_l2, terms.n_l2);
    let k3 = scale(w.lambda_l3, terms.n_l3);

    for (item, (ta, tb)) in batch.iter().zip(&traces) {
        let mut ua = Upstream::zeros(nc, na);
        let mut ub = Upstream::zeros(nc, na);
        if k1 > 0.0 {
            for (u, tr, labels) in [
                (&mut ua, ta, &item.criteria_a),
                (&mut ub, tb, &item.criteria_b),
            ] {
                for (k, s) in labels.values().iter().enumerate() {
                    if let Some(s) = s {
                        u.dc[k] = k1 * 2.0 * (tr.out.c[k] - s);
                    }
                }
            }
        }
        if k2 > 0.0 {
            for i in 0..na {
                if let Some(sign) = item.aspect_prefs.sign(i) {
                    let margin = sign * (ta.out.aspect_sums[i] - tb.out.aspect_sums[i]);
                    let g = -k2 * sign * losses::sigmoid(-margin);
                    ua.dsums[i] += g;
                    ub.dsums[i] -= g;
                }
            }
        }
        if k3 > 0.0 {
            let sign = match item.overall_pref {
                Some(OverallVerdict::A) => Some(1.0),
                Some(OverallVerdict::B) => Some(-1.0),
                _ => None,
            };
            if let Some(sign) = sign {
                let margin = sign * (ta.out.os - tb.out.os);
                let g = -k3 * sign * losses::sigmoid(-margin);
                ua.dos += g;
                ub.dos -= g;
            }
        }
        backward(params, &item.feature_a, ta, &ua, t, &mut grads);
        backward(params, &item.feature_b, tb, &ub, t, &mut grads);
    }
    Ok((terms, grads))
}

/// Stage loss and its gradient with respect to every unfrozen tensor.
pub fn loss_gradient(
    stage: Stage,
    params: &RewardHeadParams,
    batch: &[AnnotatedPair],
    t: &Taxonomy,
    weights: &StageWeights,
) -> Result<(f64, GradientSet)> {
    loss_gradient_terms(stage, params, batch, t, weights).map(|(l, g)| (l.total, g))
}

/// Worst-case agreement between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub stage: u32,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub worst_tensor: Option<String>,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped_frozen: usize,
    pub h_step: f64,
}

/// Compares `analytic` against central differences of the stage loss over
/// every unfrozen coordinate.
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_compare(
    stage: Stage,
    params: &RewardHeadParams,
    batch: &[AnnotatedPair],
    t: &Taxonomy,
    weights: &StageWeights,
    analytic: &GradientSet,
    h_step: f64,
    param_cap: usize,
) -> Result<FdReport> {
    if params.num_parameters() > param_cap {
        return Err(Error::Refused(format!(
            "refusing finite-difference check: {} parameters exceed the cap of {param_cap}",
            params.num_parameters()
        )));
    }
    if !(h_step > 0.0 && h_step.is_finite()) {
        return Err(Error::Range(format!("step must be positive, got {h_step}")));
    }
    let mut report = FdReport {
        stage: stage.number(),
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        worst_tensor: None,
        worst_index: None,
        checked: 0,
        skipped_frozen: 0,
        h_step,
    };
    let mut probe = params.clone();
    for id in TensorId::ALL {
        let n = params.tensor(id).len();
        if params.is_frozen(id) {
            report.skipped_frozen += n;
            continue;
        }
        for k in 0..n {
            let orig = params.tensor(id).data[k];
            probe.tensor_mut(id).data[k] = orig + h_step;
            let up = losses::stage_loss(stage, batch, &probe, t, weights)?;
            probe.tensor_mut(id).data[k] = orig - h_step;
            let down = losses::stage_loss(stage, batch, &probe, t, weights)?;
            probe.tensor_mut(id).data[k] = orig;

            let numeric = (up - down) / (2.0 * h_step);
            let a = analytic.tensor(id).data[k];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if abs > report.max_abs_err {
                report.max_abs_err = abs;
            }
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_tensor = Some(id.name().to_string());
                report.worst_index = Some(k);
            }
        }
    }
    Ok(report)
}

/// Runs [`loss_gradient`] and checks it against central differences.
pub fn finite_diff_check(
    stage: Stage,
    params: &RewardHeadParams,
    batch: &[AnnotatedPair],
    t: &Taxonomy,
    weights: &StageWeights,
    h_step: f64,
    param_cap: usize,
) -> Result<FdReport> {
    if params.num_parameters() > param_cap {
        return Err(Error::Refused(format!(
            "refusing finite-difference check: {} parameters exceed the cap of {param_cap}",
            params.num_parameters()
        )));
    }
    let (_, analytic) = loss_gradient(stage, params, batch, t, weights)?;
    finite_diff_compare(
        stage, params, batch, t, weights, &analytic, h_step, param_cap,
    )
}
