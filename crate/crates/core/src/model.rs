//! The full network: sequence encoder, code hypergraph convolution, patient
//! similarity aggregation and the gated ensemble head.

use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::hypergraph::{build_hypergraph, Hypergraph, stack_backward, stack_forward, HconvStackParams, StackCache};
use crate::numeric::{glorot_init, Activation, Matrix, Mode, Parameters, Rng};
use crate::patient_graph::{
    aggregate_backward, aggregate_forward, similarity, similarity_backward, threshold,
    threshold_backward, AggregateCache, SimilarityMode, DEFAULT_TEMPERATURE, DEFAULT_ZETA,
};
use crate::risk::{head_backward, head_forward, Combine, EnsembleParams, Gating, HeadCache, HeadOptions, HeadOutput};
use crate::seq::{batch_steps, gru_backward, gru_forward, GruCache, GruParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// GRU state width `d`.
    pub hidden_size: usize,
    /// Hypergraph convolution depth `l`.
    pub hconv_layers: usize,
    /// Width `q` of the aggregated representation.
    pub aggregate_width: usize,
    pub ffn_hidden: Vec<usize>,
    pub ensemble_size: usize,
    pub zeta_init: f64,
    pub temperature: f64,
    pub dropout: f64,
    pub hconv_activation: Activation,
    pub aggregate_activation: Activation,
    pub ffn_activation: Activation,
    pub similarity: SimilarityMode,
    pub gating: Gating,
    pub combine: Combine,
    /// When false the similarity adjacency is forced to zero.
    pub aggregate_similar: bool,
    pub learn_edge_weights: bool,
    /// Zero the last FFN layer and the attention layer at initialization.
    pub zero_init_output: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_size: 59,
            hconv_layers: 3,
            aggregate_width: 37,
            ffn_hidden: vec![27, 17],
            ensemble_size: 4,
            zeta_init: DEFAULT_ZETA,
            temperature: DEFAULT_TEMPERATURE,
            dropout: 0.2,
            hconv_activation: Activation::Relu,
            aggregate_activation: Activation::Relu,
            ffn_activation: Activation::Relu,
            similarity: SimilarityMode::Scaled,
            gating: Gating::PerPatient,
            combine: Combine::Weighted,
            aggregate_similar: true,
            learn_edge_weights: false,
            zero_init_output: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden_size == 0 || self.aggregate_width == 0 {
            return bad("hidden_size and aggregate_width must be positive");
        }
        if self.ensemble_size == 0 {
            return bad("ensemble_size must be at least 1");
        }
        if self.ffn_hidden.iter().any(|&w| w == 0) {
            return bad("ffn_hidden widths must be positive");
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad("temperature must be positive");
        }
        if !self.zeta_init.is_finite() {
            return bad("zeta_init must be finite");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    fn head_options(&self) -> HeadOptions {
        HeadOptions {
            activation: self.ffn_activation,
            dropout: self.dropout,
            gating: self.gating,
            combine: self.combine,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub gru: GruParams,
    pub hconv: HconvStackParams,
    /// Similarity threshold `ζ` as a `1 × 1` matrix.
    pub zeta: Matrix,
    /// `(d + g) × q`
    pub phi: Matrix,
    pub head: EnsembleParams,
    /// Log hyperedge weights `1 × g`, present when edge weights train.
    pub edge_log_weights: Option<Matrix>,
}

impl ModelParameters {
    pub fn init(config: &ModelConfig, variables: usize, codes: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let width = config.hidden_size + codes;
        let mut streams = (0..5u64).map(|k| rng.split(k));
        let mut next = || streams.next().expect("five streams");
        Ok(ModelParameters {
            gru: GruParams::init(variables, config.hidden_size, &mut next()),
            hconv: HconvStackParams::init(width, config.hconv_layers, &mut next()),
            zeta: Matrix::filled(1, 1, config.zeta_init),
            phi: glorot_init(width, config.aggregate_width, &mut next()),
            head: EnsembleParams::init(
                config.aggregate_width,
                &config.ffn_hidden,
                config.ensemble_size,
                config.zero_init_output,
                &mut next(),
            ),
            edge_log_weights: config.learn_edge_weights.then(|| Matrix::zeros(1, codes)),
        })
    }

    pub fn variables(&self) -> usize {
        self.gru.inputs()
    }

    pub fn codes(&self) -> usize {
        self.phi.rows() - self.gru.hidden()
    }

    pub fn zeta(&self) -> f64 {
        self.zeta.get(0, 0)
    }
}

impl Parameters for ModelParameters {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.gru.tensors();
        out.extend(self.hconv.tensors());
        out.push(("zeta".into(), &self.zeta));
        out.push(("phi".into(), &self.phi));
        out.extend(self.head.tensors());
        if let Some(w) = &self.edge_log_weights {
            out.push(("hconv.edge_log_weights".into(), w));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = self.gru.tensors_mut();
        out.extend(self.hconv.tensors_mut());
        out.push(("zeta".into(), &mut self.zeta));
        out.push(("phi".into(), &mut self.phi));
        out.extend(self.head.tensors_mut());
        if let Some(w) = &mut self.edge_log_weights {
            out.push(("hconv.edge_log_weights".into(), w));
        }
        out
    }
}

/// Model inputs for one group of patients.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `T` matrices of shape `N × M`.
    pub steps: Vec<Matrix>,
    /// `N × g` diagnosis indicator matrix.
    pub icd: Matrix,
    pub labels: Vec<bool>,
}

impl Batch {
    /// Gathers patients by index; their series must be fully imputed.
    pub fn from_cohort(cohort: &Cohort, indices: &[usize]) -> Result<Self> {
        let series = indices
            .iter()
            .map(|&i| cohort.patients[i].series.to_matrix())
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            steps: batch_steps(&series)?,
            icd: cohort.icd_matrix(indices),
            labels: indices.iter().map(|&i| cohort.patients[i].label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.icd.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Intermediate representations and outputs of a forward pass.
pub struct ForwardOutput {
    /// Final GRU states, `N × d`.
    pub gru: Matrix,
    /// Hypergraph stack output, `N × (d + g)`.
    pub hconv: Matrix,
    /// Aggregated representation `X*`, `N × q`.
    pub aggregated: Matrix,
    pub head: HeadOutput,
}

impl ForwardOutput {
    pub fn risk(&self) -> Vec<f64> {
        self.head.risk()
    }
}

pub struct ForwardCache {
    mode: Mode,
    gru: GruCache,
    op: Matrix,
    hypergraph: Hypergraph,
    stack: StackCache,
    soft_adjacency: Option<Matrix>,
    aggregate: AggregateCache,
    head: HeadCache,
}

fn edge_weights(params: &ModelParameters) -> Option<Vec<f64>> {
    params
        .edge_log_weights
        .as_ref()
        .map(|w| w.data().iter().map(|v| v.exp()).collect())
}

pub fn forward(
    params: &ModelParameters,
    config: &ModelConfig,
    batch: &Batch,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(ForwardOutput, ForwardCache)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if batch.icd.cols() != params.codes() {
        return Err(Error::shape("model codes", batch.icd.shape(), (batch.len(), params.codes())));
    }
    let (h, gru_cache) = gru_forward(&batch.steps, &params.gru)?;
    let fused = h.hcat(&batch.icd)?;
    let weights = edge_weights(params);
    let hg = build_hypergraph(&batch.icd, weights.as_deref())?;
    let op = hg.operator();
    let (x1, stack) = stack_forward(&fused, &op, &params.hconv, config.hconv_activation)?;

    let n = batch.len();
    let (adjacency, soft_adjacency) = if config.aggregate_similar {
        let a = similarity(&x1, config.similarity);
        let adj = threshold(&a, params.zeta(), config.temperature, mode)?;
        let soft = (mode == Mode::Train).then(|| adj.clone());
        (adj, soft)
    } else {
        (Matrix::zeros(n, n), None)
    };
    let (x_star, aggregate) = aggregate_forward(&x1, &adjacency, &params.phi, config.aggregate_activation)?;
    let (head_out, head_cache) = head_forward(&x_star, &params.head, &config.head_options(), mode, rng)?;
    Ok((
        ForwardOutput {
            gru: h,
            hconv: x1,
            aggregated: x_star,
            head: head_out,
        },
        ForwardCache {
            mode,
            gru: gru_cache,
            op,
            hypergraph: hg,
            stack,
            soft_adjacency,
            aggregate,
            head: head_cache,
        },
    ))
}

/// Loss and gradients for every trainable tensor.
pub fn backward(
    params: &ModelParameters,
    config: &ModelConfig,
    batch: &Batch,
    output: &ForwardOutput,
    cache: &ForwardCache,
) -> Result<(f64, ModelParameters)> {
    let (loss, d_head, d_star) = head_backward(&cache.head, &output.head, &params.head, &config.head_options(), &batch.labels)?;
    let agg = aggregate_backward(&cache.aggregate, &params.phi, config.aggregate_activation, &d_star)?;
    let mut d_x1 = agg.x;
    let mut d_zeta = 0.0;
    if let (Some(soft), Mode::Train) = (&cache.soft_adjacency, cache.mode) {
        let (d_a, dz) = threshold_backward(soft, config.temperature, &agg.a_prime)?;
        d_x1.add_assign(&similarity_backward(&output.hconv, config.similarity, &d_a)?)?;
        d_zeta = dz;
    }
    let (d_fused, d_hconv, d_op) = stack_backward(&cache.stack, &cache.op, &params.hconv, config.hconv_activation, &d_x1)?;

    let d_edges = match &params.edge_log_weights {
        Some(logw) => {
            let hg = &cache.hypergraph;
            let dw = hg.weight_gradient(&cache.op, &d_op)?;
            let mut g = Matrix::zeros(1, logw.cols());
            for (e, &c) in hg.edge_columns.iter().enumerate() {
                g.set(0, c, dw[e] * hg.weights[e]);
            }
            Some(g)
        }
        None => None,
    };

    let d_h = d_fused.col_range(0, params.gru.hidden());
    let (d_gru, _) = gru_backward(&cache.gru, &params.gru, &d_h, false)?;
    Ok((
        loss,
        ModelParameters {
            gru: d_gru,
            hconv: d_hconv,
            zeta: Matrix::filled(1, 1, d_zeta),
            phi: agg.phi,
            head: d_head,
            edge_log_weights: d_edges,
        },
    ))
}

/// Training-mode loss without gradients, dropout off. Used by gradient
/// checks and diagnostics.
pub fn train_loss(params: &ModelParameters, config: &ModelConfig, batch: &Batch) -> Result<f64> {
    let config = ModelConfig {
        dropout: 0.0,
        ..config.clone()
    };
    let (out, _) = forward(params, &config, batch, Mode::Train, &mut Rng::new(0))?;
    crate::risk::total_loss(&out.head.member_probs, &out.head.beta, &batch.labels, config.gating)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_diff_check, DEFAULT_STEP};

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            hidden_size: 3,
            hconv_layers: 2,
            aggregate_width: 3,
            ffn_hidden: vec![4, 3],
            ensemble_size: 2,
            dropout: 0.0,
            hconv_activation: Activation::Tanh,
            aggregate_activation: Activation::Tanh,
            ffn_activation: Activation::Tanh,
            zero_init_output: false,
            ..ModelConfig::default()
        }
    }

    fn tiny_batch(rng: &mut Rng) -> Batch {
        let icd = Matrix::from_rows(&[
            [1.0, 0.0, 1.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 1.0],
            [0.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        Batch {
            steps: (0..3).map(|_| random(5, 2, rng)).collect(),
            icd,
            labels: vec![true, false, false, true, false],
        }
    }

    fn check(config: ModelConfig, seed: u64) {
        let mut rng = Rng::new(seed);
        let batch = tiny_batch(&mut rng);
        let mut params = ModelParameters::init(&config, 2, 4, &mut rng).unwrap();
        for (_, t) in params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += 0.2 * rng.normal());
        }
        // Place ζ inside the similarity range so the relaxation is not saturated.
        let (out, _) = forward(&params, &config, &batch, Mode::Train, &mut Rng::new(0)).unwrap();
        let a = similarity(&out.hconv, config.similarity);
        params.zeta.set(0, 0, a.data().iter().sum::<f64>() / a.len() as f64);

        let (out, cache) = forward(&params, &config, &batch, Mode::Train, &mut Rng::new(0)).unwrap();
        let (loss, grads) = backward(&params, &config, &batch, &out, &cache).unwrap();
        assert!((loss - train_loss(&params, &config, &batch).unwrap()).abs() < 1e-14);
        let r = finite_diff_check(|p| train_loss(p, &config, &batch).unwrap(), &params, &grads, DEFAULT_STEP).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
        assert_eq!(r.checked, params.scalar_count());
    }

    #[test]
    fn full_gradients_pass_finite_differences() {
        check(tiny_config(), 11);
    }

    #[test]
    fn gradients_with_learned_edge_weights_and_cosine() {
        check(
            ModelConfig {
                learn_edge_weights: true,
                similarity: SimilarityMode::Cosine,
                temperature: 5.0,
                gating: Gating::BatchMean,
                ..tiny_config()
            },
            12,
        );
    }

    #[test]
    fn gradients_without_similarity_aggregation() {
        check(
            ModelConfig {
                aggregate_similar: false,
                hconv_layers: 0,
                ..tiny_config()
            },
            13,
        );
    }

    #[test]
    fn zero_initialized_head_starts_at_ln2() {
        let mut rng = Rng::new(3);
        let batch = tiny_batch(&mut rng);
        let config = ModelConfig {
            hidden_size: 3,
            aggregate_width: 3,
            ..ModelConfig::default()
        };
        let params = ModelParameters::init(&config, 2, 4, &mut rng).unwrap();
        let (out, cache) = forward(&params, &config, &batch, Mode::Train, &mut rng).unwrap();
        let (loss, _) = backward(&params, &config, &batch, &out, &cache).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn eval_is_deterministic_and_dropout_free() {
        let mut rng = Rng::new(4);
        let batch = tiny_batch(&mut rng);
        let config = ModelConfig {
            zero_init_output: false,
            ..tiny_config()
        };
        let params = ModelParameters::init(&config, 2, 4, &mut rng).unwrap();
        let a = forward(&params, &config, &batch, Mode::Eval, &mut Rng::new(1)).unwrap().0;
        let b = forward(&params, &config, &batch, Mode::Eval, &mut Rng::new(2)).unwrap().0;
        assert_eq!(a.risk(), b.risk());
        assert_eq!(a.gru.shape(), (5, 3));
        assert_eq!(a.hconv.shape(), (5, 7));
        assert_eq!(a.aggregated.shape(), (5, 3));
    }

    #[test]
    fn code_mismatch_is_rejected() {
        let mut rng = Rng::new(5);
        let batch = tiny_batch(&mut rng);
        let params = ModelParameters::init(&tiny_config(), 2, 6, &mut rng).unwrap();
        assert!(forward(&params, &tiny_config(), &batch, Mode::Eval, &mut rng).is_err());
    }
}
