//! Pairwise patient similarity, thresholded adjacency and normalized
//! aggregation over similar patients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, Activation, Matrix, Mode};

pub const DEFAULT_TEMPERATURE: f64 = 50.0;
pub const DEFAULT_ZETA: f64 = 0.4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    /// `X Xᵀ / F²` for feature width `F`.
    #[default]
    Scaled,
    /// Dot products of unit-normalized rows; zero rows give zero similarity.
    Cosine,
}

/// Raw similarities together with both adjacency variants.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityGraph {
    pub a: Matrix,
    pub a_soft: Matrix,
    pub a_hard: Matrix,
    pub zeta: f64,
    pub temperature: f64,
}

impl SimilarityGraph {
    pub fn new(x: &Matrix, mode: SimilarityMode, zeta: f64, temperature: f64) -> Result<Self> {
        let a = similarity(x, mode);
        Ok(SimilarityGraph {
            a_soft: threshold(&a, zeta, temperature, Mode::Train)?,
            a_hard: threshold(&a, zeta, temperature, Mode::Eval)?,
            a,
            zeta,
            temperature,
        })
    }

    pub fn adjacency(&self, mode: Mode) -> &Matrix {
        match mode {
            Mode::Train => &self.a_soft,
            Mode::Eval => &self.a_hard,
        }
    }
}

pub fn similarity(x: &Matrix, mode: SimilarityMode) -> Matrix {
    match mode {
        SimilarityMode::Scaled => {
            let f = x.cols() as f64;
            let scale = if f > 0.0 { 1.0 / (f * f) } else { 0.0 };
            gram(x).scale(scale)
        }
        SimilarityMode::Cosine => gram(&unit_rows(x).0),
    }
}

/// Symmetric `X Xᵀ`, filling only the upper triangle and mirroring.
fn gram(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

fn unit_rows(x: &Matrix) -> (Matrix, Vec<f64>) {
    let mut u = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        norms.push(norm);
        let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        u.row_mut(i).iter_mut().for_each(|v| *v *= inv);
    }
    (u, norms)
}

/// Gradient with respect to `X` given the gradient of the similarity matrix.
pub fn similarity_backward(x: &Matrix, mode: SimilarityMode, grad: &Matrix) -> Result<Matrix> {
    let n = x.rows();
    if grad.shape() != (n, n) {
        return Err(Error::shape("similarity backward", (n, n), grad.shape()));
    }
    let sym = grad.add(&grad.transpose())?;
    match mode {
        SimilarityMode::Scaled => {
            let f = x.cols() as f64;
            let scale = if f > 0.0 { 1.0 / (f * f) } else { 0.0 };
            Ok(sym.matmul(x)?.scale(scale))
        }
        SimilarityMode::Cosine => {
            let (u, norms) = unit_rows(x);
            let du = sym.matmul(&u)?;
            let mut dx = Matrix::zeros(n, x.cols());
            for i in 0..n {
                if norms[i] == 0.0 {
                    continue;
                }
                let dot: f64 = u.row(i).iter().zip(du.row(i)).map(|(a, b)| a * b).sum();
                for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                    *o = (du.get(i, j) - u.get(i, j) * dot) / norms[i];
                }
            }
            Ok(dx)
        }
    }
}

/// Eval: `1[A > ζ]`. Train: `σ(τ (A − ζ))`.
pub fn threshold(a: &Matrix, zeta: f64, temperature: f64, mode: Mode) -> Result<Matrix> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    Ok(match mode {
        Mode::Eval => a.map(|v| if v > zeta { 1.0 } else { 0.0 }),
        Mode::Train => a.map(|v| sigmoid(temperature * (v - zeta))),
    })
}

/// Train-mode gradients `(∂L/∂A, ∂L/∂ζ)` given the relaxed adjacency.
pub fn threshold_backward(soft: &Matrix, temperature: f64, grad: &Matrix) -> Result<(Matrix, f64)> {
    let da = soft.zip_map(grad, "threshold backward", |s, g| g * temperature * s * (1.0 - s))?;
    let dzeta = -da.sum();
    Ok((da, dzeta))
}

pub struct AggregateCache {
    input: Matrix,
    /// `D̃^{-1/2} Ã D̃^{-1/2}`
    norm_adj: Matrix,
    adj: Matrix,
    inv_sqrt_deg: Vec<f64>,
    mixed: Matrix,
    pre: Matrix,
    out: Matrix,
}

impl AggregateCache {
    pub fn output(&self) -> &Matrix {
        &self.out
    }
}

pub fn aggregate_forward(
    x: &Matrix,
    a_prime: &Matrix,
    phi: &Matrix,
    kind: Activation,
) -> Result<(Matrix, AggregateCache)> {
    let n = x.rows();
    if a_prime.shape() != (n, n) {
        return Err(Error::shape("gcn aggregate adjacency", x.shape(), a_prime.shape()));
    }
    if phi.rows() != x.cols() {
        return Err(Error::shape("gcn aggregate", x.shape(), phi.shape()));
    }
    let mut adj = a_prime.clone();
    for i in 0..n {
        adj.set(i, i, adj.get(i, i) + 1.0);
    }
    let inv_sqrt_deg: Vec<f64> = adj.row_sums().into_iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut norm_adj = adj.clone();
    for i in 0..n {
        for (j, v) in norm_adj.row_mut(i).iter_mut().enumerate() {
            *v *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }
    let mixed = norm_adj.matmul(x)?;
    let pre = mixed.matmul(phi)?;
    let out = kind.apply(&pre);
    Ok((
        out.clone(),
        AggregateCache {
            input: x.clone(),
            norm_adj,
            adj,
            inv_sqrt_deg,
            mixed,
            pre,
            out,
        },
    ))
}

pub struct AggregateGrads {
    pub x: Matrix,
    pub phi: Matrix,
    pub a_prime: Matrix,
}

pub fn aggregate_backward(
    cache: &AggregateCache,
    phi: &Matrix,
    kind: Activation,
    grad_out: &Matrix,
) -> Result<AggregateGrads> {
    let d_pre = kind.backward(&cache.pre, &cache.out, grad_out)?;
    let d_phi = cache.mixed.t_matmul(&d_pre)?;
    let d_mixed = d_pre.matmul_t(phi)?;
    let d_x = cache.norm_adj.t_matmul(&d_mixed)?;
    let d_norm = d_mixed.matmul_t(&cache.input)?;

    let n = cache.adj.rows();
    let r = &cache.inv_sqrt_deg;
    // S_ij = Ã_ij r_i r_j with r_i = deg_i^{-1/2} and deg_i = Σ_j Ã_ij.
    let mut dr = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let g = d_norm.get(i, j) * cache.adj.get(i, j);
            dr[i] += g * r[j];
            dr[j] += g * r[i];
        }
    }
    let d_deg: Vec<f64> = (0..n).map(|i| -0.5 * dr[i] * r[i].powi(3)).collect();
    let mut d_adj = Matrix::zeros(n, n);
    for i in 0..n {
        for (j, v) in d_adj.row_mut(i).iter_mut().enumerate() {
            *v = d_norm.get(i, j) * r[i] * r[j] + d_deg[i];
        }
    }
    Ok(AggregateGrads {
        x: d_x,
        phi: d_phi,
        a_prime: d_adj,
    })
}

/// `σ(D̃^{-1/2} (A′ + I) D̃^{-1/2} X Φ)`.
pub fn gcn_aggregate(x: &Matrix, a_prime: &Matrix, phi: &Matrix, kind: Activation) -> Result<Matrix> {
    Ok(aggregate_forward(x, a_prime, phi, kind)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_diff_check, NamedParams, Parameters, Rng, DEFAULT_STEP};
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn zero_features_give_zero_similarity() {
        for mode in [SimilarityMode::Scaled, SimilarityMode::Cosine] {
            assert_eq!(similarity(&Matrix::zeros(3, 4), mode), Matrix::zeros(3, 3));
        }
    }

    #[test]
    fn scaled_similarity_hand_case() {
        let x = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let expect = m(&[&[1.0, 0.0, 1.0], &[0.0, 1.0, 1.0], &[1.0, 1.0, 2.0]]).scale(0.25);
        assert!(similarity(&x, SimilarityMode::Scaled).max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn cosine_similarity_hand_case() {
        let x = m(&[&[3.0, 0.0], &[0.0, 2.0], &[1.0, 1.0]]);
        let s = similarity(&x, SimilarityMode::Cosine);
        let h = 0.5f64.sqrt();
        let expect = m(&[&[1.0, 0.0, h], &[0.0, 1.0, h], &[h, h, 1.0]]);
        assert!(s.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn threshold_eval_is_strict() {
        let a = m(&[&[0.9, 0.1], &[0.4, 0.4000001]]);
        let hard = threshold(&a, 0.4, 50.0, Mode::Eval).unwrap();
        assert_eq!(hard, m(&[&[1.0, 0.0], &[0.0, 1.0]]));
    }

    #[test]
    fn threshold_train_centre_is_half() {
        let soft = threshold(&Matrix::filled(2, 2, 0.4), 0.4, 50.0, Mode::Train).unwrap();
        assert!(soft.data().iter().all(|&v| v == 0.5));
        assert!(threshold(&soft, 0.4, 0.0, Mode::Train).is_err());
    }

    #[test]
    fn zero_adjacency_reduces_to_projection() {
        let mut rng = Rng::new(1);
        let x = random(4, 3, &mut rng);
        let phi = random(3, 2, &mut rng);
        let got = gcn_aggregate(&x, &Matrix::zeros(4, 4), &phi, Activation::Tanh).unwrap();
        let expect = x.matmul(&phi).unwrap().map(f64::tanh);
        assert!(got.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn connected_identical_rows_agree() {
        let mut rng = Rng::new(2);
        let row: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let x = Matrix::from_rows(&[row.clone(), row]).unwrap();
        let phi = random(3, 4, &mut rng);
        let y = gcn_aggregate(&x, &m(&[&[0.0, 1.0], &[1.0, 0.0]]), &phi, Activation::Relu).unwrap();
        assert_eq!(y.row(0), y.row(1));
    }

    #[test]
    fn aggregate_matches_dense_oracle() {
        let mut rng = Rng::new(3);
        let x = random(3, 4, &mut rng);
        let phi = random(4, 2, &mut rng);
        let a = m(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 1.0], &[0.0, 1.0, 1.0]]);
        let got = gcn_aggregate(&x, &a, &phi, Activation::Sigmoid).unwrap();

        let tilde = a.add(&Matrix::identity(3)).unwrap();
        let mut dm = Matrix::zeros(3, 3);
        for (i, s) in tilde.row_sums().into_iter().enumerate() {
            dm.set(i, i, 1.0 / s.sqrt());
        }
        let expect = dm
            .matmul(&tilde)
            .unwrap()
            .matmul(&dm)
            .unwrap()
            .matmul(&x)
            .unwrap()
            .matmul(&phi)
            .unwrap()
            .map(sigmoid);
        assert!(got.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn large_temperature_approaches_hard_threshold() {
        let mut rng = Rng::new(4);
        let a = random(5, 5, &mut rng).scale(0.5);
        let hard = threshold(&a, 0.1, 1.0, Mode::Eval).unwrap();
        let soft = threshold(&a, 0.1, 1e6, Mode::Train).unwrap();
        for (h, (s, v)) in hard.data().iter().zip(soft.data().iter().zip(a.data())) {
            if (v - 0.1).abs() > 1e-4 {
                assert!((h - s).abs() < 1e-12);
            }
        }
    }

    /// End-to-end check through similarity, relaxed threshold and aggregation.
    fn pipeline_check(mode: SimilarityMode, zeta: f64, temperature: f64) {
        let mut rng = Rng::new(5);
        let n = 6;
        let x = random(n, 4, &mut rng).scale(if mode == SimilarityMode::Scaled { 2.0 } else { 1.0 });
        let phi = random(4, 3, &mut rng);
        let probe = random(n, 3, &mut rng);
        let kind = Activation::Tanh;

        let forward = |q: &NamedParams| {
            let (x, phi, zeta) = (q.get(0), q.get(1), q.get(2).get(0, 0));
            let a = similarity(x, mode);
            let soft = threshold(&a, zeta, temperature, Mode::Train).unwrap();
            aggregate_forward(x, &soft, phi, kind).unwrap().0.hadamard(&probe).unwrap().sum()
        };
        let params = NamedParams::new(vec![
            ("x".into(), x.clone()),
            ("phi".into(), phi.clone()),
            ("zeta".into(), Matrix::filled(1, 1, zeta)),
        ]);

        let a = similarity(&x, mode);
        let soft = threshold(&a, zeta, temperature, Mode::Train).unwrap();
        let (_, cache) = aggregate_forward(&x, &soft, &phi, kind).unwrap();
        let g = aggregate_backward(&cache, &phi, kind, &probe).unwrap();
        let (da, dzeta) = threshold_backward(&soft, temperature, &g.a_prime).unwrap();
        let dx = g.x.add(&similarity_backward(&x, mode, &da).unwrap()).unwrap();
        let analytic = NamedParams::new(vec![
            ("x".into(), dx),
            ("phi".into(), g.phi),
            ("zeta".into(), Matrix::filled(1, 1, dzeta)),
        ]);
        let r = finite_diff_check(forward, &params, &analytic, DEFAULT_STEP).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
        assert_eq!(r.checked, params.scalar_count());
    }

    #[test]
    fn scaled_pipeline_gradients() {
        pipeline_check(SimilarityMode::Scaled, 0.05, 20.0);
    }

    #[test]
    fn cosine_pipeline_gradients() {
        pipeline_check(SimilarityMode::Cosine, 0.2, 5.0);
    }

    proptest! {
        #[test]
        fn similarity_and_adjacency_are_symmetric(
            vals in proptest::collection::vec(-3.0f64..3.0, 20),
            zeta in -0.5f64..0.5,
        ) {
            let x = Matrix::from_vec(5, 4, vals).unwrap();
            for mode in [SimilarityMode::Scaled, SimilarityMode::Cosine] {
                let g = SimilarityGraph::new(&x, mode, zeta, DEFAULT_TEMPERATURE).unwrap();
                for mat in [&g.a, &g.a_soft, &g.a_hard] {
                    prop_assert!(mat.max_abs_diff(&mat.transpose()) <= 1e-12);
                }
                prop_assert!(g.a_soft.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
                for (h, a) in g.a_hard.data().iter().zip(g.a.data()) {
                    prop_assert_eq!(*h == 1.0, *a > zeta);
                }
            }
        }

        #[test]
        fn hard_threshold_depends_only_on_side(
            vals in proptest::collection::vec(-2.0f64..2.0, 16),
            zeta in -1.0f64..1.0,
        ) {
            let a = Matrix::from_vec(4, 4, vals).unwrap();
            let warped = a.map(|v| zeta + 3.0 * (v - zeta) + (v - zeta).powi(3));
            prop_assert_eq!(
                threshold(&a, zeta, 1.0, Mode::Eval).unwrap(),
                threshold(&warped, zeta, 1.0, Mode::Eval).unwrap()
            );
        }
    }
}
