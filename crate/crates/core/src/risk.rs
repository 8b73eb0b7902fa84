//! Feed-forward ensemble, attention gating and the gated cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    dropout_mask, glorot_init, softmax_rows, softmax_rows_backward, Activation, Matrix, Mode,
    Parameters, Rng,
};

/// Probabilities are clamped to `[PROB_FLOOR, 1 − PROB_FLOOR]` inside logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// How attention weights gate member losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gating {
    /// `(1/N) Σ_p Σ_i β_pi ℓ_pi`
    #[default]
    PerPatient,
    /// `Σ_i β̄_i L_i` with `β̄` the batch-mean attention.
    BatchMean,
}

/// How member probabilities combine into the ensemble prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    Weighted,
    Mean,
}

/// One member: hidden layers then a two-way softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct FfnParams {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

impl FfnParams {
    /// Widths `input → hidden… → 2`.
    pub fn init(input: usize, hidden: &[usize], zero_output: bool, rng: &mut Rng) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(2);
        let last = widths.len() - 2;
        let weights = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if zero_output && i == last {
                    Matrix::zeros(w[0], w[1])
                } else {
                    glorot_init(w[0], w[1], rng)
                }
            })
            .collect();
        let biases = widths[1..].iter().map(|&w| Matrix::zeros(1, w)).collect();
        FfnParams { weights, biases }
    }

    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut p = FfnParams::init(input, hidden, true, &mut Rng::new(0));
        p.weights.iter_mut().for_each(|w| w.data_mut().fill(0.0));
        p
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.weights[..self.weights.len() - 1].iter().map(Matrix::cols).collect()
    }
}

impl Parameters for FfnParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("ffn.w{i}"), w));
            out.push((format!("ffn.b{i}"), b));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.weights.iter_mut().zip(self.biases.iter_mut()).enumerate() {
            out.push((format!("ffn.w{i}"), w));
            out.push((format!("ffn.b{i}"), b));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleParams {
    pub members: Vec<FfnParams>,
    /// `q × L`
    pub w_beta: Matrix,
    /// `1 × L`
    pub b_beta: Matrix,
}

impl EnsembleParams {
    pub fn init(input: usize, hidden: &[usize], members: usize, zero_output: bool, rng: &mut Rng) -> Self {
        let members: Vec<FfnParams> = (0..members)
            .map(|_| FfnParams::init(input, hidden, zero_output, rng))
            .collect();
        let l = members.len();
        EnsembleParams {
            members,
            w_beta: if zero_output {
                Matrix::zeros(input, l)
            } else {
                glorot_init(input, l, rng)
            },
            b_beta: Matrix::zeros(1, l),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl Parameters for EnsembleParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (m, member) in self.members.iter().enumerate() {
            for (name, t) in member.tensors() {
                out.push((format!("ensemble.{m}.{name}"), t));
            }
        }
        out.push(("attention.w".into(), &self.w_beta));
        out.push(("attention.b".into(), &self.b_beta));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        for (m, member) in self.members.iter_mut().enumerate() {
            for (name, t) in member.tensors_mut() {
                out.push((format!("ensemble.{m}.{name}"), t));
            }
        }
        out.push(("attention.w".into(), &mut self.w_beta));
        out.push(("attention.b".into(), &mut self.b_beta));
        out
    }
}

/// Inverted-dropout masks for each hidden layer of one member; all ones in
/// evaluation mode.
pub fn hidden_masks(rows: usize, member: &FfnParams, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Vec<Matrix>> {
    member
        .hidden_widths()
        .into_iter()
        .map(|w| dropout_mask(rows, w, rate, mode, rng))
        .collect()
}

pub struct FfnCache {
    /// Input to each layer.
    inputs: Vec<Matrix>,
    pres: Vec<Matrix>,
    acts: Vec<Matrix>,
    masks: Vec<Matrix>,
    probs: Matrix,
}

/// Forward pass; `masks` (one per hidden layer) multiply hidden activations.
pub fn ffn_forward_cached(
    x: &Matrix,
    member: &FfnParams,
    kind: Activation,
    masks: Option<&[Matrix]>,
) -> Result<(Matrix, FfnCache)> {
    let hidden = member.weights.len() - 1;
    if let Some(m) = masks {
        if m.len() != hidden {
            return Err(Error::Config(format!("expected {hidden} dropout masks, got {}", m.len())));
        }
    }
    let mut cache = FfnCache {
        inputs: Vec::with_capacity(hidden + 1),
        pres: Vec::with_capacity(hidden),
        acts: Vec::with_capacity(hidden),
        masks: Vec::with_capacity(hidden),
        probs: Matrix::zeros(0, 0),
    };
    let mut h = x.clone();
    for layer in 0..hidden {
        let pre = h.matmul(&member.weights[layer])?.add_row_broadcast(&member.biases[layer])?;
        let act = kind.apply(&pre);
        let next = match masks {
            Some(m) => act.hadamard(&m[layer])?,
            None => act.clone(),
        };
        cache.inputs.push(std::mem::replace(&mut h, next));
        cache.pres.push(pre);
        cache.acts.push(act);
        if let Some(m) = masks {
            cache.masks.push(m[layer].clone());
        }
    }
    let logits = h.matmul(&member.weights[hidden])?.add_row_broadcast(&member.biases[hidden])?;
    cache.inputs.push(h);
    let probs = softmax_rows(&logits)?;
    cache.probs = probs.clone();
    Ok((probs, cache))
}

/// Member probabilities, columns `(survive, die)`.
pub fn ffn_forward(x: &Matrix, member: &FfnParams, kind: Activation, masks: Option<&[Matrix]>) -> Result<Matrix> {
    Ok(ffn_forward_cached(x, member, kind, masks)?.0)
}

/// Returns the parameter gradients and `∂L/∂X` given `∂L/∂probs`.
pub fn ffn_backward(
    cache: &FfnCache,
    member: &FfnParams,
    kind: Activation,
    grad_probs: &Matrix,
) -> Result<(FfnParams, Matrix)> {
    let layers = member.weights.len();
    let mut d_w = vec![Matrix::zeros(0, 0); layers];
    let mut d_b = vec![Matrix::zeros(0, 0); layers];
    let mut grad = softmax_rows_backward(&cache.probs, grad_probs)?;
    for layer in (0..layers).rev() {
        if layer < layers - 1 {
            if !cache.masks.is_empty() {
                grad = grad.hadamard(&cache.masks[layer])?;
            }
            grad = kind.backward(&cache.pres[layer], &cache.acts[layer], &grad)?;
        }
        d_w[layer] = cache.inputs[layer].t_matmul(&grad)?;
        d_b[layer] = grad.col_sums();
        grad = grad.matmul_t(&member.weights[layer])?;
    }
    Ok((FfnParams { weights: d_w, biases: d_b }, grad))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Per-patient cross-entropy of the death probability.
pub fn patient_losses(probs: &Matrix, labels: &[bool]) -> Result<Vec<f64>> {
    if probs.cols() != 2 || probs.rows() != labels.len() {
        return Err(Error::shape("member loss", probs.shape(), (labels.len(), 2)));
    }
    Ok(labels
        .iter()
        .enumerate()
        .map(|(p, &y)| {
            let q = clamp_prob(probs.get(p, 1));
            if y {
                -q.ln()
            } else {
                -(1.0 - q).ln()
            }
        })
        .collect())
}

/// `∂ℓ_p/∂probs` scaled per patient by `weights[p]`.
fn patient_loss_grad(probs: &Matrix, labels: &[bool], weights: &[f64]) -> Matrix {
    let mut g = Matrix::zeros(probs.rows(), 2);
    for (p, &y) in labels.iter().enumerate() {
        let raw = probs.get(p, 1);
        if raw <= PROB_FLOOR || raw >= 1.0 - PROB_FLOOR {
            continue;
        }
        let d = if y { -1.0 / raw } else { 1.0 / (1.0 - raw) };
        g.set(p, 1, weights[p] * d);
    }
    g
}

/// Mean cross-entropy of one member over the batch.
pub fn member_loss(probs: &Matrix, labels: &[bool]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Data("member loss needs at least one patient".into()));
    }
    Ok(patient_losses(probs, labels)?.iter().sum::<f64>() / labels.len() as f64)
}

/// Per-patient softmax over member logits, `N × L`.
pub fn attention_weights(x_star: &Matrix, ens: &EnsembleParams) -> Result<Matrix> {
    softmax_rows(&x_star.matmul(&ens.w_beta)?.add_row_broadcast(&ens.b_beta)?)
}

fn check_members(member_probs: &[Matrix], beta: &Matrix) -> Result<()> {
    if member_probs.len() != beta.cols() || member_probs.is_empty() {
        return Err(Error::shape("ensemble", (beta.rows(), member_probs.len()), beta.shape()));
    }
    for p in member_probs {
        if p.shape() != (beta.rows(), 2) {
            return Err(Error::shape("ensemble member", p.shape(), (beta.rows(), 2)));
        }
    }
    Ok(())
}

pub fn total_loss(member_probs: &[Matrix], beta: &Matrix, labels: &[bool], gating: Gating) -> Result<f64> {
    Ok(total_loss_with_grad(member_probs, beta, labels, gating)?.0)
}

/// Loss with its gradients with respect to each member's probabilities and
/// to `β`.
pub fn total_loss_with_grad(
    member_probs: &[Matrix],
    beta: &Matrix,
    labels: &[bool],
    gating: Gating,
) -> Result<(f64, Vec<Matrix>, Matrix)> {
    check_members(member_probs, beta)?;
    let n = beta.rows();
    if n == 0 || labels.len() != n {
        return Err(Error::shape("total loss labels", beta.shape(), (labels.len(), 1)));
    }
    let nf = n as f64;
    let losses: Vec<Vec<f64>> = member_probs
        .iter()
        .map(|p| patient_losses(p, labels))
        .collect::<Result<_>>()?;
    let l = member_probs.len();
    let mut d_beta = Matrix::zeros(n, l);
    let mut d_probs = Vec::with_capacity(l);
    let mut total = 0.0;
    match gating {
        Gating::PerPatient => {
            for (i, li) in losses.iter().enumerate() {
                let w: Vec<f64> = (0..n).map(|p| beta.get(p, i) / nf).collect();
                for p in 0..n {
                    total += w[p] * li[p];
                    d_beta.set(p, i, li[p] / nf);
                }
                d_probs.push(patient_loss_grad(&member_probs[i], labels, &w));
            }
        }
        Gating::BatchMean => {
            let mean_beta = beta.col_sums().scale(1.0 / nf);
            for (i, li) in losses.iter().enumerate() {
                let member_mean = li.iter().sum::<f64>() / nf;
                let b = mean_beta.get(0, i);
                total += b * member_mean;
                for p in 0..n {
                    d_beta.set(p, i, member_mean / nf);
                }
                d_probs.push(patient_loss_grad(&member_probs[i], labels, &vec![b / nf; n]));
            }
        }
    }
    Ok((total, d_probs, d_beta))
}

/// Combined `N × 2` prediction.
pub fn ensemble_predict(member_probs: &[Matrix], beta: &Matrix, combine: Combine) -> Result<Matrix> {
    check_members(member_probs, beta)?;
    let n = beta.rows();
    let l = member_probs.len();
    let mut out = Matrix::zeros(n, 2);
    for p in 0..n {
        for (i, probs) in member_probs.iter().enumerate() {
            let w = match combine {
                Combine::Weighted => beta.get(p, i),
                Combine::Mean => 1.0 / l as f64,
            };
            for c in 0..2 {
                out.set(p, c, out.get(p, c) + w * probs.get(p, c));
            }
        }
    }
    Ok(out)
}

/// Hyperparameters of the head that are not tensors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadOptions {
    pub activation: Activation,
    pub dropout: f64,
    pub gating: Gating,
    pub combine: Combine,
}

pub struct HeadCache {
    x_star: Matrix,
    members: Vec<FfnCache>,
    beta: Matrix,
}

pub struct HeadOutput {
    pub member_probs: Vec<Matrix>,
    pub beta: Matrix,
    pub prediction: Matrix,
}

impl HeadOutput {
    /// Death probability per patient.
    pub fn risk(&self) -> Vec<f64> {
        self.prediction.col(1)
    }
}

pub fn head_forward(
    x_star: &Matrix,
    ens: &EnsembleParams,
    opts: &HeadOptions,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(HeadOutput, HeadCache)> {
    if ens.is_empty() {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    let mut member_probs = Vec::with_capacity(ens.len());
    let mut caches = Vec::with_capacity(ens.len());
    for member in &ens.members {
        let masks = if mode == Mode::Train && opts.dropout > 0.0 {
            Some(hidden_masks(x_star.rows(), member, opts.dropout, mode, rng)?)
        } else {
            None
        };
        let (probs, cache) = ffn_forward_cached(x_star, member, opts.activation, masks.as_deref())?;
        member_probs.push(probs);
        caches.push(cache);
    }
    let beta = attention_weights(x_star, ens)?;
    let prediction = ensemble_predict(&member_probs, &beta, opts.combine)?;
    Ok((
        HeadOutput {
            member_probs,
            beta: beta.clone(),
            prediction,
        },
        HeadCache {
            x_star: x_star.clone(),
            members: caches,
            beta,
        },
    ))
}

/// Loss, parameter gradients and `∂L/∂X*`.
pub fn head_backward(
    cache: &HeadCache,
    output: &HeadOutput,
    ens: &EnsembleParams,
    opts: &HeadOptions,
    labels: &[bool],
) -> Result<(f64, EnsembleParams, Matrix)> {
    let (loss, d_probs, d_beta) = total_loss_with_grad(&output.member_probs, &cache.beta, labels, opts.gating)?;
    let mut d_x = Matrix::zeros(cache.x_star.rows(), cache.x_star.cols());
    let mut members = Vec::with_capacity(ens.len());
    for ((member, mc), dp) in ens.members.iter().zip(&cache.members).zip(&d_probs) {
        let (g, dx) = ffn_backward(mc, member, opts.activation, dp)?;
        d_x.add_assign(&dx)?;
        members.push(g);
    }
    let d_logits = softmax_rows_backward(&cache.beta, &d_beta)?;
    let w_beta = cache.x_star.t_matmul(&d_logits)?;
    let b_beta = d_logits.col_sums();
    d_x.add_assign(&d_logits.matmul_t(&ens.w_beta)?)?;
    Ok((loss, EnsembleParams { members, w_beta, b_beta }, d_x))
}
