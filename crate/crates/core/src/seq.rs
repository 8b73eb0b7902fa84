//! GRU sequence encoder.
//!
//! Gate convention, per row (patient):
//!
//! ```text
//! z  = σ(x·W_z + h·U_z + b_z)
//! r  = σ(x·W_r + h·U_r + b_r)
//! h̃  = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```
//!
//! Weights are stored input-major (`W: M × d`, `U: d × d`) so a batch of
//! patients is one row-major product per gate.

use crate::error::{Error, Result};
use crate::numeric::{glorot_init, sigmoid, Matrix, Parameters, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Matrix,
    pub b_r: Matrix,
    pub b_h: Matrix,
}

impl GruParams {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        GruParams {
            w_z: Matrix::zeros(inputs, hidden),
            w_r: Matrix::zeros(inputs, hidden),
            w_h: Matrix::zeros(inputs, hidden),
            u_z: Matrix::zeros(hidden, hidden),
            u_r: Matrix::zeros(hidden, hidden),
            u_h: Matrix::zeros(hidden, hidden),
            b_z: Matrix::zeros(1, hidden),
            b_r: Matrix::zeros(1, hidden),
            b_h: Matrix::zeros(1, hidden),
        }
    }

    /// Glorot weights, zero biases.
    pub fn init(inputs: usize, hidden: usize, rng: &mut Rng) -> Self {
        GruParams {
            w_z: glorot_init(inputs, hidden, rng),
            w_r: glorot_init(inputs, hidden, rng),
            w_h: glorot_init(inputs, hidden, rng),
            u_z: glorot_init(hidden, hidden, rng),
            u_r: glorot_init(hidden, hidden, rng),
            u_h: glorot_init(hidden, hidden, rng),
            b_z: Matrix::zeros(1, hidden),
            b_r: Matrix::zeros(1, hidden),
            b_h: Matrix::zeros(1, hidden),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_z.rows()
    }

    pub fn hidden(&self) -> usize {
        self.u_z.rows()
    }
}

impl Parameters for GruParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("gru.w_z".into(), &self.w_z),
            ("gru.w_r".into(), &self.w_r),
            ("gru.w_h".into(), &self.w_h),
            ("gru.u_z".into(), &self.u_z),
            ("gru.u_r".into(), &self.u_r),
            ("gru.u_h".into(), &self.u_h),
            ("gru.b_z".into(), &self.b_z),
            ("gru.b_r".into(), &self.b_r),
            ("gru.b_h".into(), &self.b_h),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![
            ("gru.w_z".into(), &mut self.w_z),
            ("gru.w_r".into(), &mut self.w_r),
            ("gru.w_h".into(), &mut self.w_h),
            ("gru.u_z".into(), &mut self.u_z),
            ("gru.u_r".into(), &mut self.u_r),
            ("gru.u_h".into(), &mut self.u_h),
            ("gru.b_z".into(), &mut self.b_z),
            ("gru.b_r".into(), &mut self.b_r),
            ("gru.b_h".into(), &mut self.b_h),
        ]
    }
}

struct StepCache {
    h_prev: Matrix,
    z: Matrix,
    r: Matrix,
    cand: Matrix,
    rh: Matrix,
}

/// Activations kept from a batched forward pass for backpropagation.
pub struct GruCache {
    inputs: Vec<Matrix>,
    steps: Vec<StepCache>,
}

fn affine(x: &Matrix, w: &Matrix, h: &Matrix, u: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut a = x.matmul(w)?;
    a.add_assign(&h.matmul(u)?)?;
    a.add_row_broadcast(b)
}

fn step(x: &Matrix, h: &Matrix, p: &GruParams) -> Result<(Matrix, StepCache)> {
    if x.cols() != p.inputs() || h.cols() != p.hidden() || x.rows() != h.rows() {
        return Err(Error::shape("gru step", x.shape(), h.shape()));
    }
    let z = affine(x, &p.w_z, h, &p.u_z, &p.b_z)?.map(sigmoid);
    let r = affine(x, &p.w_r, h, &p.u_r, &p.b_r)?.map(sigmoid);
    let rh = r.hadamard(h)?;
    let cand = affine(x, &p.w_h, &rh, &p.u_h, &p.b_h)?.map(f64::tanh);
    let mut h_next = Matrix::zeros(h.rows(), h.cols());
    for (((o, &zi), &hi), &ci) in h_next
        .data_mut()
        .iter_mut()
        .zip(z.data())
        .zip(h.data())
        .zip(cand.data())
    {
        *o = (1.0 - zi) * hi + zi * ci;
    }
    let cache = StepCache {
        h_prev: h.clone(),
        z,
        r,
        cand,
        rh,
    };
    Ok((h_next, cache))
}

/// One GRU update for a single patient.
pub fn gru_cell(x: &[f64], h_prev: &[f64], p: &GruParams) -> Result<Vec<f64>> {
    let (h, _) = step(&Matrix::row_vector(x), &Matrix::row_vector(h_prev), p)?;
    Ok(h.into_vec())
}

/// Runs the GRU from `h₀ = 0` over the columns of an `M × T` series and
/// returns `h_T`.
pub fn encode_sequence(series: &Matrix, p: &GruParams) -> Result<Vec<f64>> {
    let (h, _) = gru_forward(&batch_steps(&[series])?, p)?;
    Ok(h.into_vec())
}

/// Rearranges per-patient `M × T` series into `T` batch matrices of shape
/// `N × M`.
pub fn batch_steps(series: &[&Matrix]) -> Result<Vec<Matrix>> {
    let first = series
        .first()
        .ok_or_else(|| Error::Data("empty patient batch".into()))?;
    let (m, t) = first.shape();
    if t == 0 {
        return Err(Error::Data("series has no time steps".into()));
    }
    let mut steps = vec![Matrix::zeros(series.len(), m); t];
    for (i, s) in series.iter().enumerate() {
        if s.shape() != (m, t) {
            return Err(Error::shape("batch_steps", (m, t), s.shape()));
        }
        for v in 0..m {
            for (step, &value) in steps.iter_mut().zip(s.row(v)) {
                step.set(i, v, value);
            }
        }
    }
    Ok(steps)
}

/// Batched forward pass; returns the final hidden states (`N × d`).
pub fn gru_forward(steps: &[Matrix], p: &GruParams) -> Result<(Matrix, GruCache)> {
    let first = steps
        .first()
        .ok_or_else(|| Error::Data("sequence has no time steps".into()))?;
    let mut h = Matrix::zeros(first.rows(), p.hidden());
    let mut caches = Vec::with_capacity(steps.len());
    for x in steps {
        let (next, cache) = step(x, &h, p)?;
        caches.push(cache);
        h = next;
    }
    Ok((
        h,
        GruCache {
            inputs: steps.to_vec(),
            steps: caches,
        },
    ))
}

/// Backpropagation through time from `∂L/∂h_T`. Input gradients are
/// returned only when requested.
pub fn gru_backward(
    cache: &GruCache,
    p: &GruParams,
    d_last: &Matrix,
    want_inputs: bool,
) -> Result<(GruParams, Option<Vec<Matrix>>)> {
    let mut grads = GruParams::zeros(p.inputs(), p.hidden());
    let mut d_inputs = want_inputs.then(|| Vec::with_capacity(cache.steps.len()));
    let (u_z_t, u_r_t, u_h_t) = (p.u_z.transpose(), p.u_r.transpose(), p.u_h.transpose());
    let mut dh = d_last.clone();

    for (x, c) in cache.inputs.iter().zip(&cache.steps).rev() {
        let n = dh.len();
        let (mut da_z, mut da_c) = (vec![0.0; n], vec![0.0; n]);
        let mut dh_prev = vec![0.0; n];
        for i in 0..n {
            let g = dh.data()[i];
            let (z, cand, hp) = (c.z.data()[i], c.cand.data()[i], c.h_prev.data()[i]);
            dh_prev[i] = g * (1.0 - z);
            da_z[i] = g * (cand - hp) * z * (1.0 - z);
            da_c[i] = g * z * (1.0 - cand * cand);
        }
        let shape = dh.shape();
        let da_z = Matrix::from_vec(shape.0, shape.1, da_z)?;
        let da_c = Matrix::from_vec(shape.0, shape.1, da_c)?;

        grads.w_h.add_assign(&x.t_matmul(&da_c)?)?;
        grads.u_h.add_assign(&c.rh.t_matmul(&da_c)?)?;
        grads.b_h.add_assign(&da_c.col_sums())?;
        let d_rh = da_c.matmul(&u_h_t)?;

        let mut da_r = vec![0.0; n];
        for i in 0..n {
            let r = c.r.data()[i];
            da_r[i] = d_rh.data()[i] * c.h_prev.data()[i] * r * (1.0 - r);
            dh_prev[i] += d_rh.data()[i] * r;
        }
        let da_r = Matrix::from_vec(shape.0, shape.1, da_r)?;

        grads.w_z.add_assign(&x.t_matmul(&da_z)?)?;
        grads.u_z.add_assign(&c.h_prev.t_matmul(&da_z)?)?;
        grads.b_z.add_assign(&da_z.col_sums())?;
        grads.w_r.add_assign(&x.t_matmul(&da_r)?)?;
        grads.u_r.add_assign(&c.h_prev.t_matmul(&da_r)?)?;
        grads.b_r.add_assign(&da_r.col_sums())?;

        let mut dh_next = Matrix::from_vec(shape.0, shape.1, dh_prev)?;
        dh_next.add_assign(&da_z.matmul(&u_z_t)?)?;
        dh_next.add_assign(&da_r.matmul(&u_r_t)?)?;

        if let Some(d_inputs) = d_inputs.as_mut() {
            let mut dx = da_z.matmul_t(&p.w_z)?;
            dx.add_assign(&da_r.matmul_t(&p.w_r)?)?;
            dx.add_assign(&da_c.matmul_t(&p.w_h)?)?;
            d_inputs.push(dx);
        }
        dh = dh_next;
    }
    if let Some(d) = d_inputs.as_mut() {
        d.reverse();
    }
    Ok((grads, d_inputs))
}

/// Concatenates the hidden state and the diagnosis-code vector.
pub fn fuse(h: &[f64], icd: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(h.len() + icd.len());
    out.extend_from_slice(h);
    out.extend_from_slice(icd);
    out
}
