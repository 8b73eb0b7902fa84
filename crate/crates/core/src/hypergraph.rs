//! Diagnosis-code hypergraphs over a patient batch and the residual
//! hypergraph convolution stack.
//!
//! Each code present in the batch is a hyperedge joining the patients that
//! carry it. The propagation operator is `P = D⁻¹ H W B⁻¹ Hᵀ` with
//! `D_ii = Σ_e W_ee H_ie` and `B_ee = Σ_i H_ie`; rows of isolated patients
//! (`D_ii = 0`) are zero. A layer maps `X ↦ σ(P X Θ) + X`.

use crate::error::{Error, Result};
use crate::numeric::{glorot_init, Activation, Matrix, Parameters, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct Hypergraph {
    /// `N × K` 0/1 incidence over retained (non-empty) hyperedges.
    pub incidence: Matrix,
    /// Positive hyperedge weights, length `K`.
    pub weights: Vec<f64>,
    /// Weighted node degrees, length `N`.
    pub node_degree: Vec<f64>,
    /// Hyperedge cardinalities, length `K`.
    pub edge_degree: Vec<f64>,
    /// Vocabulary column behind each retained hyperedge.
    pub edge_columns: Vec<usize>,
}

impl Hypergraph {
    pub fn nodes(&self) -> usize {
        self.incidence.rows()
    }

    pub fn edges(&self) -> usize {
        self.incidence.cols()
    }

    /// Code strings of the retained hyperedges.
    pub fn edge_codes<'a>(&self, vocab: &'a [String]) -> Vec<&'a str> {
        self.edge_columns.iter().map(|&c| vocab[c].as_str()).collect()
    }

    /// Recomputes `D` and `B` from `H` and `W` and compares.
    pub fn is_consistent(&self) -> bool {
        let (n, k) = self.incidence.shape();
        if self.weights.len() != k || self.node_degree.len() != n || self.edge_degree.len() != k {
            return false;
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        (0..n).all(|i| {
            let d: f64 = (0..k).map(|e| self.weights[e] * self.incidence.get(i, e)).sum();
            close(d, self.node_degree[i])
        }) && (0..k).all(|e| {
            let b: f64 = (0..n).map(|i| self.incidence.get(i, e)).sum();
            close(b, self.edge_degree[e]) && b >= 1.0 && self.weights[e] > 0.0
        })
    }

    /// Dense `N × N` propagation operator.
    pub fn operator(&self) -> Matrix {
        let (n, k) = self.incidence.shape();
        if k == 0 {
            return Matrix::zeros(n, n);
        }
        let mut left = self.incidence.clone();
        for i in 0..n {
            let inv_d = if self.node_degree[i] > 0.0 {
                1.0 / self.node_degree[i]
            } else {
                0.0
            };
            for (e, v) in left.row_mut(i).iter_mut().enumerate() {
                *v *= inv_d * self.weights[e] / self.edge_degree[e];
            }
        }
        left.matmul_t(&self.incidence).expect("incidence shapes agree")
    }

    /// Gradient of a loss with respect to the hyperedge weights, given its
    /// gradient `grad_op` with respect to the operator `op = self.operator()`.
    pub fn weight_gradient(&self, op: &Matrix, grad_op: &Matrix) -> Result<Vec<f64>> {
        let (n, k) = self.incidence.shape();
        if op.shape() != (n, n) || grad_op.shape() != (n, n) {
            return Err(Error::shape("hypergraph weight gradient", op.shape(), grad_op.shape()));
        }
        // ∂P_ij/∂W_e = H_ie (H_je / B_e − P_ij) / D_i
        let gh = grad_op.matmul(&self.incidence)?;
        let gp: Vec<f64> = (0..n)
            .map(|i| grad_op.row(i).iter().zip(op.row(i)).map(|(g, p)| g * p).sum())
            .collect();
        let mut out = vec![0.0; k];
        for i in 0..n {
            if self.node_degree[i] <= 0.0 {
                continue;
            }
            for (e, o) in out.iter_mut().enumerate() {
                if self.incidence.get(i, e) != 0.0 {
                    *o += (gh.get(i, e) / self.edge_degree[e] - gp[i]) / self.node_degree[i];
                }
            }
        }
        Ok(out)
    }
}

/// Builds the hypergraph of a batch from its `N × g` code matrix, dropping
/// codes nobody in the batch carries. `weights` (length `g`) defaults to
/// all ones.
pub fn build_hypergraph(icd: &Matrix, weights: Option<&[f64]>) -> Result<Hypergraph> {
    let (n, g) = icd.shape();
    if n == 0 {
        return Err(Error::Data("hypergraph needs at least one node".into()));
    }
    if let Some(w) = weights {
        if w.len() != g {
            return Err(Error::shape("build_hypergraph", (1, g), (1, w.len())));
        }
        if w.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Data("hyperedge weights must be positive".into()));
        }
    }
    if icd.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data("incidence entries must be 0 or 1".into()));
    }
    let edge_columns: Vec<usize> = (0..g)
        .filter(|&c| (0..n).any(|i| icd.get(i, c) != 0.0))
        .collect();
    let k = edge_columns.len();
    let mut incidence = Matrix::zeros(n, k);
    for i in 0..n {
        for (e, &c) in edge_columns.iter().enumerate() {
            incidence.set(i, e, icd.get(i, c));
        }
    }
    let weights: Vec<f64> = edge_columns
        .iter()
        .map(|&c| weights.map_or(1.0, |w| w[c]))
        .collect();
    let node_degree = (0..n)
        .map(|i| (0..k).map(|e| weights[e] * incidence.get(i, e)).sum())
        .collect();
    let edge_degree = (0..k).map(|e| (0..n).map(|i| incidence.get(i, e)).sum()).collect();
    Ok(Hypergraph {
        incidence,
        weights,
        node_degree,
        edge_degree,
        edge_columns,
    })
}

/// The propagation operator of a hypergraph.
pub fn hconv_operator(hg: &Hypergraph) -> Matrix {
    hg.operator()
}

/// Square layer matrices `Θ⁽⁰⁾ … Θ⁽ˡ⁻¹⁾`.
#[derive(Clone, Debug, PartialEq)]
pub struct HconvStackParams {
    pub thetas: Vec<Matrix>,
}

impl HconvStackParams {
    pub fn init(width: usize, layers: usize, rng: &mut Rng) -> Self {
        HconvStackParams {
            thetas: (0..layers).map(|_| glorot_init(width, width, rng)).collect(),
        }
    }

    pub fn zeros(width: usize, layers: usize) -> Self {
        HconvStackParams {
            thetas: vec![Matrix::zeros(width, width); layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.thetas.len()
    }
}

impl Parameters for HconvStackParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        self.thetas
            .iter()
            .enumerate()
            .map(|(l, t)| (format!("hconv.theta.{l}"), t))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        self.thetas
            .iter_mut()
            .enumerate()
            .map(|(l, t)| (format!("hconv.theta.{l}"), t))
            .collect()
    }
}

/// Intermediates of one layer.
pub struct LayerCache {
    input: Matrix,
    propagated: Matrix,
    pre: Matrix,
    act: Matrix,
}

/// One residual layer with a precomputed operator.
pub fn layer_forward(
    x: &Matrix,
    op: &Matrix,
    theta: &Matrix,
    kind: Activation,
) -> Result<(Matrix, LayerCache)> {
    if theta.rows() != theta.cols() || theta.rows() != x.cols() {
        return Err(Error::shape("hconv layer", x.shape(), theta.shape()));
    }
    let propagated = op.matmul(x)?;
    let pre = propagated.matmul(theta)?;
    let act = kind.apply(&pre);
    let out = act.add(x)?;
    Ok((
        out,
        LayerCache {
            input: x.clone(),
            propagated,
            pre,
            act,
        },
    ))
}

/// Returns `(∂L/∂X, ∂L/∂Θ, ∂L/∂P)` for one layer.
pub fn layer_backward(
    cache: &LayerCache,
    op: &Matrix,
    theta: &Matrix,
    kind: Activation,
    grad_out: &Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    let d_pre = kind.backward(&cache.pre, &cache.act, grad_out)?;
    let d_theta = cache.propagated.t_matmul(&d_pre)?;
    let d_prop = d_pre.matmul_t(theta)?;
    let mut d_x = op.t_matmul(&d_prop)?;
    d_x.add_assign(grad_out)?;
    let d_op = d_prop.matmul_t(&cache.input)?;
    Ok((d_x, d_theta, d_op))
}

/// `σ(P X Θ) + X` on a hypergraph.
pub fn hconv_layer(x: &Matrix, hg: &Hypergraph, theta: &Matrix, kind: Activation) -> Result<Matrix> {
    if x.rows() != hg.nodes() {
        return Err(Error::shape("hconv layer", x.shape(), hg.incidence.shape()));
    }
    Ok(layer_forward(x, &hg.operator(), theta, kind)?.0)
}

pub struct StackCache {
    layers: Vec<LayerCache>,
}

pub fn stack_forward(
    x: &Matrix,
    op: &Matrix,
    params: &HconvStackParams,
    kind: Activation,
) -> Result<(Matrix, StackCache)> {
    let mut h = x.clone();
    let mut layers = Vec::with_capacity(params.layers());
    for theta in &params.thetas {
        let (next, cache) = layer_forward(&h, op, theta, kind)?;
        layers.push(cache);
        h = next;
    }
    Ok((h, StackCache { layers }))
}

/// Returns `(∂L/∂X, ∂L/∂Θ for every layer, ∂L/∂P summed over layers)`.
pub fn stack_backward(
    cache: &StackCache,
    op: &Matrix,
    params: &HconvStackParams,
    kind: Activation,
    grad_out: &Matrix,
) -> Result<(Matrix, HconvStackParams, Matrix)> {
    let mut grad = grad_out.clone();
    let mut d_thetas = vec![Matrix::zeros(0, 0); params.layers()];
    let mut d_op = Matrix::zeros(op.rows(), op.cols());
    for (l, (layer, theta)) in cache.layers.iter().zip(&params.thetas).enumerate().rev() {
        let (dx, dt, dp) = layer_backward(layer, op, theta, kind, &grad)?;
        d_thetas[l] = dt;
        d_op.add_assign(&dp)?;
        grad = dx;
    }
    Ok((grad, HconvStackParams { thetas: d_thetas }, d_op))
}

/// `l` residual layers applied in order.
pub fn hconv_stack(
    x: &Matrix,
    hg: &Hypergraph,
    params: &HconvStackParams,
    kind: Activation,
) -> Result<Matrix> {
    if x.rows() != hg.nodes() {
        return Err(Error::shape("hconv stack", x.shape(), hg.incidence.shape()));
    }
    Ok(stack_forward(x, &hg.operator(), params, kind)?.0)
}
