//! Minibatch CD-k training for plain and graph-regularized RBMs.
//!
//! Each minibatch gets its own graph: the signed label graph for
//! [`ModelKind::Slrbm`], a kNN graph over the batch's visible rows for
//! [`ModelKind::GraphRbm`], none for [`ModelKind::Rbm`]. The hidden
//! conditionals in the positive phase are shifted by `delta` computed from
//! that graph. The shift is not normalized by batch size, so the effective
//! regularization strength grows with `batch_size`.
//!
//! Randomness comes from per-batch streams derived from the seed, so runs
//! are bit-reproducible and the plain path consumes exactly the same Gibbs
//! draws as a regularized run with `lambda = 0`.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{build_knn_adjacency, build_signed_adjacency, smoothness, KnnWeighting};
use crate::model::{
    bernoulli, delta_all, delta_row, sample_matrix, sigmoid, BatchState, DeltaSource, Gradient,
    RbmParams,
};
use crate::rng::{stream_rng, Stream};
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// No graph term.
    Rbm,
    /// Signed label graph.
    #[default]
    Slrbm,
    /// Unsigned kNN graph over the visible data.
    GraphRbm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rbm => "rbm",
            ModelKind::Slrbm => "slrbm",
            ModelKind::GraphRbm => "graphrbm",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbm" => Ok(ModelKind::Rbm),
            "slrbm" => Ok(ModelKind::Slrbm),
            "graphrbm" => Ok(ModelKind::GraphRbm),
            other => Err(Error::InvalidArgument(format!("unknown model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub lambda: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub cd_k: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub n_hidden: usize,
    pub delta_source: DeltaSource,
    pub delta_in_negative_phase: bool,
    /// Neighbour count for the kNN graph of [`ModelKind::GraphRbm`].
    pub knn_p: usize,
    /// Heat-kernel width for the kNN graph; unit weights when absent.
    pub knn_rho: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Slrbm,
            lambda: 1e-2,
            eta: 1e-2,
            batch_size: 100,
            epochs: 100,
            cd_k: 1,
            weight_decay: 1e-4,
            seed: 0,
            n_hidden: 128,
            delta_source: DeltaSource::MeanField,
            delta_in_negative_phase: true,
            knn_p: 5,
            knn_rho: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            ));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be finite and > 0, got {}", self.eta));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight decay must be finite and >= 0, got {}",
                self.weight_decay
            ));
        }
        if self.batch_size == 0 || self.cd_k == 0 || self.n_hidden == 0 {
            return bad("batch size, cd_k and n_hidden must be positive".into());
        }
        if self.model == ModelKind::GraphRbm {
            if self.knn_p == 0 {
                return bad("knn_p must be positive".into());
            }
            if let Some(rho) = self.knn_rho {
                if !(rho > 0.0 && rho.is_finite()) {
                    return bad(format!("knn_rho must be positive, got {rho}"));
                }
            }
        }
        Ok(())
    }

    pub fn with_model(mut self, model: ModelKind) -> Self {
        self.model = model;
        self
    }

    /// Regularization weight actually applied: zero for the plain model.
    pub fn effective_lambda(&self) -> f64 {
        match self.model {
            ModelKind::Rbm => 0.0,
            _ => self.lambda,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }
}

/// Random streams for one minibatch.
pub struct BatchRng {
    pub gibbs: ChaCha8Rng,
    pub delta: ChaCha8Rng,
}

impl BatchRng {
    pub fn new(seed: u64, epoch: u64, batch: u64) -> Self {
        Self {
            gibbs: stream_rng(seed, Stream::Gibbs, epoch, batch),
            delta: stream_rng(seed, Stream::Delta, epoch, batch),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-pixel |v - p(v | h)| after one Gibbs half-step.
    pub recon_error: f64,
    /// Mean over batches of the signed-label smoothness of the encoder
    /// probabilities `f(W v + c)`.
    pub mean_smoothness: f64,
    /// Wall-clock seconds since training started.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub seconds: f64,
    pub checkpoint: Option<std::path::PathBuf>,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "epoch,recon_error,mean_smoothness,seconds";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.6}",
                r.epoch, r.recon_error, r.mean_smoothness, r.seconds
            );
        }
        out
    }
}

/// Outputs of one CD step beyond the gradient.
#[derive(Debug, Clone)]
pub struct CdOutput {
    pub gradient: Gradient,
    pub recon_error: f64,
    /// Encoder probabilities `f(V W^T + c)` for the batch (B x n).
    pub encoder: Array2<f64>,
}

/// Batch graph required by `config`. A graph already carried by the batch
/// wins; otherwise it is built from labels or data.
fn batch_graph(batch: &BatchState, config: &TrainConfig) -> Result<Option<Array2<f64>>> {
    match config.model {
        ModelKind::Rbm => Ok(None),
        _ if batch.phi.is_some() => Ok(batch.phi.clone()),
        ModelKind::Slrbm => match &batch.labels {
            Some(labels) => Ok(Some(build_signed_adjacency(labels)?.phi)),
            None if config.lambda == 0.0 => Ok(None),
            None => Err(Error::MissingLabels),
        },
        ModelKind::GraphRbm => Ok(knn_graph(batch.v.view(), config)?),
    }
}

fn knn_graph(v: ArrayView2<f64>, config: &TrainConfig) -> Result<Option<Array2<f64>>> {
    let b = v.nrows();
    if b < 2 {
        return Ok(None);
    }
    let weighting = match config.knn_rho {
        Some(rho) => KnnWeighting::HeatKernel { rho },
        None => KnnWeighting::Binary,
    };
    let p = config.knn_p.min(b - 1);
    Ok(Some(build_knn_adjacency(v, p, weighting)?.phi))
}

pub fn cd_gradient(
    params: &RbmParams,
    batch: &BatchState,
    config: &TrainConfig,
    rng: &mut BatchRng,
) -> Result<Gradient> {
    Ok(cd_step(params, batch, config, rng)?.gradient)
}

pub fn cd_step(
    params: &RbmParams,
    batch: &BatchState,
    config: &TrainConfig,
    rng: &mut BatchRng,
) -> Result<CdOutput> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch.v.ncols() != params.n_visible() {
        return Err(Error::Dimension(format!(
            "batch width {} for model with {} visible units",
            batch.v.ncols(),
            params.n_visible()
        )));
    }
    if config.cd_k == 0 {
        return Err(Error::InvalidArgument("cd_k must be positive".into()));
    }
    let lambda = config.effective_lambda();
    let graph = batch_graph(batch, config)?;
    let v_data = batch.v.view();

    // positive phase
    let pre = params.hidden_input(v_data);
    let encoder = pre.mapv(sigmoid);
    let h_pos = match &graph {
        Some(phi) => {
            let source = match config.delta_source {
                DeltaSource::MeanField => encoder.clone(),
                DeltaSource::Sample => sample_matrix(&encoder, &mut rng.delta),
            };
            let shift = delta_all(phi.view(), source.view(), lambda);
            (&pre - &shift).mapv(sigmoid)
        }
        None => encoder.clone(),
    };

    // negative phase
    let mut h_state = sample_matrix(&h_pos, &mut rng.gibbs);
    let mut chain = match config.delta_source {
        DeltaSource::MeanField => h_pos.clone(),
        DeltaSource::Sample => h_state.clone(),
    };
    let chain_phi = graph.as_ref().filter(|_| config.delta_in_negative_phase);
    let mut h_neg = h_pos.clone();
    let mut v_neg = Array2::zeros(batch.v.raw_dim());
    let mut v_neg_prob = Array2::zeros(batch.v.raw_dim());
    let mut recon_error = 0.0;
    for step in 0..config.cd_k {
        let v_prob = params.visible_input(h_state.view()).mapv(sigmoid);
        if step == 0 {
            recon_error = (&batch.v - &v_prob).mapv(f64::abs).mean().unwrap_or(0.0);
        }
        v_neg = sample_matrix(&v_prob, &mut rng.gibbs);
        v_neg_prob = v_prob;
        let neg_pre = params.hidden_input(v_neg.view());
        // sequential sweep over the batch: each row sees the current
        // hidden state of the rows before it
        for i in 0..b {
            let shift = chain_phi.map(|phi| delta_row(phi.row(i), chain.view(), lambda));
            for l in 0..params.n_hidden() {
                let arg = match &shift {
                    Some(d) => neg_pre[[i, l]] - d[l],
                    None => neg_pre[[i, l]],
                };
                let p = sigmoid(arg);
                h_neg[[i, l]] = p;
                h_state[[i, l]] = bernoulli(p, &mut rng.gibbs);
            }
            if chain_phi.is_some() {
                match config.delta_source {
                    DeltaSource::MeanField => chain.row_mut(i).assign(&h_neg.row(i)),
                    DeltaSource::Sample => chain.row_mut(i).assign(&h_state.row(i)),
                }
            }
        }
    }

    let scale = 1.0 / b as f64;
    let weights = (h_pos.t().dot(&v_data) - h_neg.t().dot(&v_neg)) * scale;
    // E[v | h] is exact, so the bias term uses probabilities (lower variance)
    let visible_bias = (&batch.v - &v_neg_prob).sum_axis(Axis(0)) * scale;
    let hidden_bias = (&h_pos - &h_neg).sum_axis(Axis(0)) * scale;
    Ok(CdOutput {
        gradient: Gradient {
            weights,
            visible_bias,
            hidden_bias,
        },
        recon_error,
        encoder,
    })
}

/// Gradient ascent step with L2 decay on the weights only.
pub fn apply_update(
    params: &RbmParams,
    grad: &Gradient,
    config: &TrainConfig,
) -> Result<RbmParams> {
    if grad.weights.dim() != params.weights.dim()
        || grad.visible_bias.len() != params.n_visible()
        || grad.hidden_bias.len() != params.n_hidden()
    {
        return Err(Error::Dimension(
            "gradient shape does not match parameters".into(),
        ));
    }
    if !grad.is_finite() {
        return Err(Error::Diverged);
    }
    let eta = config.eta;
    let decay = config.weight_decay;
    let mut weights = params.weights.clone();
    ndarray::Zip::from(&mut weights)
        .and(&grad.weights)
        .for_each(|w, &g| *w += eta * (g - decay * *w));
    let visible_bias = &params.visible_bias + &(&grad.visible_bias * eta);
    let hidden_bias = &params.hidden_bias + &(&grad.hidden_bias * eta);
    let next = RbmParams {
        weights,
        visible_bias,
        hidden_bias,
    };
    if !next.is_finite() {
        return Err(Error::Diverged);
    }
    Ok(next)
}

pub fn initial_params(n_visible: usize, config: &TrainConfig) -> RbmParams {
    let mut rng = stream_rng(config.seed, Stream::Init, 0, 0);
    RbmParams::init(n_visible, config.n_hidden, &mut rng)
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(RbmParams, TrainReport)> {
    config.validate()?;
    let n_samples = dataset.len();
    if n_samples == 0 {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size > n_samples {
        return Err(Error::InvalidArgument(format!(
            "batch size {} exceeds dataset size {n_samples}",
            config.batch_size
        )));
    }
    let params = initial_params(dataset.n_visible(), config);
    train_from(params, dataset, config)
}

/// Continues training from `params`.
pub fn train_from(
    mut params: RbmParams,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(RbmParams, TrainReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.n_visible() != params.n_visible() {
        return Err(Error::Dimension(format!(
            "dataset width {} for model with {} visible units",
            dataset.n_visible(),
            params.n_visible()
        )));
    }
    let start = Instant::now();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..config.epochs {
        let mut shuffle = stream_rng(config.seed, Stream::Shuffle, epoch as u64, 0);
        order.shuffle(&mut shuffle);

        let mut recon_sum = 0.0;
        let mut smooth_sum = 0.0;
        let mut n_batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let v = dataset.images.select(Axis(0), chunk);
            let labels: Vec<Label> = chunk.iter().map(|&i| dataset.labels[i]).collect();
            let signed = build_signed_adjacency(&labels)?.phi;
            let phi = match config.model {
                ModelKind::Rbm => None,
                ModelKind::Slrbm => Some(signed.clone()),
                ModelKind::GraphRbm => knn_graph(v.view(), config)?,
            };
            let batch = BatchState {
                phi,
                labels: Some(labels),
                ..BatchState::new(v, config.n_hidden)
            };
            let mut rng = BatchRng::new(config.seed, epoch as u64, bi as u64);
            let out = cd_step(&params, &batch, config, &mut rng)?;
            params = apply_update(&params, &out.gradient, config)?;

            recon_sum += out.recon_error * chunk.len() as f64;
            smooth_sum += smoothness(out.encoder.t(), signed.view())?;
            n_batches += 1;
        }
        report.epochs.push(EpochRecord {
            epoch: epoch + 1,
            recon_error: recon_sum / dataset.len() as f64,
            mean_smoothness: smooth_sum / n_batches as f64,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok((params, report))
}

/// Mean signed-label smoothness of encoder probabilities over consecutive
/// chunks of `batch_size` rows, without shuffling.
pub fn batch_smoothness(params: &RbmParams, dataset: &Dataset, batch_size: usize) -> Result<f64> {
    if dataset.is_empty() || batch_size == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(batch_size) {
        let v = dataset.images.select(Axis(0), chunk);
        let labels: Vec<Label> = chunk.iter().map(|&i| dataset.labels[i]).collect();
        let phi = build_signed_adjacency(&labels)?.phi;
        let enc = params.hidden_input(v.view()).mapv(sigmoid);
        total += smoothness(enc.t(), phi.view())?;
        count += 1;
    }
    Ok(total / count as f64)
}
