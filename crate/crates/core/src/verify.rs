//! Randomized checks of the closed forms against the enumeration oracle and
//! the graph identities. Used by the `oracle-check` command.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{
    align_patches, build_laplacian, build_signed_adjacency, min_eigenvalue, smoothness,
    smoothness_via_trace, DegreeConvention,
};
use crate::model::{delta, visible_conditional, BatchState, DeltaSource, RbmParams};
use crate::oracle::{enumerate, exact_gradient, log_likelihood, Clamp, Unit, MAX_FREE_BITS};
use crate::rng::{stream_rng, Stream};
use crate::Label;

/// Closed-form hidden conditional under test: `(params, v, delta) -> p(h = 1)`.
pub type HiddenConditional =
    dyn Fn(&RbmParams, ArrayView1<f64>, ArrayView1<f64>) -> Result<Array1<f64>>;

pub const LAMBDAS: [f64; 3] = [0.0, 0.1, 1.0];
pub const CONDITIONAL_TOL: f64 = 1e-12;
pub const GRADIENT_TOL: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;
pub const TRACE_REL_TOL: f64 = 1e-9;
pub const PATCH_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleSizes {
    pub max_visible: usize,
    pub max_hidden: usize,
    pub max_batch: usize,
}

impl Default for OracleSizes {
    fn default() -> Self {
        Self {
            max_visible: 4,
            max_hidden: 4,
            max_batch: 3,
        }
    }
}

impl OracleSizes {
    /// Conditional checks enumerate one layer of the whole batch at a time.
    pub fn check(&self) -> Result<()> {
        if self.max_visible == 0 || self.max_hidden == 0 || self.max_batch == 0 {
            return Err(Error::InvalidArgument("sizes must be positive".into()));
        }
        let bits = self.max_batch * self.max_visible.max(self.max_hidden);
        if bits > MAX_FREE_BITS {
            return Err(Error::TooLarge {
                bits,
                cap: MAX_FREE_BITS,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub passed: usize,
    pub worst: f64,
    pub first_failure: Option<String>,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            trials: 0,
            passed: 0,
            worst: 0.0,
            first_failure: None,
        }
    }

    fn record(&mut self, ok: bool, err: f64, detail: impl FnOnce() -> String) {
        self.trials += 1;
        self.worst = self.worst.max(err);
        if ok {
            self.passed += 1;
        } else if self.first_failure.is_none() {
            self.first_failure = Some(detail());
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

fn binary_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_bool(0.5) as u8 as f64)
}

pub fn random_params(rng: &mut ChaCha8Rng, m: usize, n: usize, scale: f64) -> RbmParams {
    RbmParams {
        weights: uniform_matrix(rng, n, m, scale),
        visible_bias: Array1::from_shape_simple_fn(m, || rng.random_range(-scale..scale)),
        hidden_bias: Array1::from_shape_simple_fn(n, || rng.random_range(-scale..scale)),
    }
}

fn random_labels(rng: &mut ChaCha8Rng, len: usize, classes: u8) -> Vec<Label> {
    (0..len).map(|_| rng.random_range(0..classes)).collect()
}

/// Closed-form conditionals against enumeration on random tiny batches.
/// Each trial checks every hidden and every visible unit of the batch.
pub fn conditional_suite(
    trials: usize,
    sizes: OracleSizes,
    seed: u64,
    hidden: &HiddenConditional,
) -> Result<SuiteReport> {
    sizes.check()?;
    let mut report = SuiteReport::new("conditional");
    let mut rng = stream_rng(seed, Stream::Oracle, 1, 0);
    for t in 0..trials {
        let m = rng.random_range(1..=sizes.max_visible);
        let n = rng.random_range(1..=sizes.max_hidden);
        let b = rng.random_range(1..=sizes.max_batch);
        let lambda = LAMBDAS[t % LAMBDAS.len()];
        let params = random_params(&mut rng, m, n, 2.0);
        let labels = random_labels(&mut rng, b, 3);
        let v = binary_matrix(&mut rng, b, m);
        let h = binary_matrix(&mut rng, b, n);
        let mut batch = BatchState::labeled(v.clone(), n, labels)?;
        batch.h_sample = h.clone();
        let phi = batch.phi.clone().expect("labeled batch has a graph");

        let over_hidden = enumerate(&params, lambda, phi.view(), Clamp::Visible(v.clone()))?;
        let over_visible = enumerate(&params, lambda, phi.view(), Clamp::Hidden(h.clone()))?;
        let mut err: f64 = 0.0;
        for i in 0..b {
            let d = delta(&batch, lambda, i, DeltaSource::Sample)?;
            let closed = hidden(&params, v.row(i), d.view())?;
            for l in 0..n {
                let unit = Unit::Hidden {
                    sample: i,
                    index: l,
                };
                let exact = over_hidden.conditional(unit, v.view(), h.view())?;
                let table = over_hidden.conditional_from_table(unit, v.view(), h.view())?;
                err = err
                    .max((closed[l] - exact).abs())
                    .max((table - exact).abs());
            }
            let closed = visible_conditional(&params, h.row(i))?;
            for r in 0..m {
                let unit = Unit::Visible {
                    sample: i,
                    index: r,
                };
                let exact = over_visible.conditional(unit, v.view(), h.view())?;
                err = err.max((closed[r] - exact).abs());
            }
        }
        report.record(err <= CONDITIONAL_TOL, err, || {
            format!("trial {t}: m={m} n={n} B={b} lambda={lambda} max error {err:e}")
        });
    }
    Ok(report)
}

/// Exact gradient against central finite differences of the enumerated
/// log-likelihood. Sizes are capped at m, n <= 3 and B <= 2.
pub fn gradient_suite(trials: usize, sizes: OracleSizes, seed: u64) -> Result<SuiteReport> {
    sizes.check()?;
    let mut report = SuiteReport::new("gradient");
    let mut rng = stream_rng(seed, Stream::Oracle, 2, 0);
    for t in 0..trials {
        let m = rng.random_range(1..=sizes.max_visible.min(3));
        let n = rng.random_range(1..=sizes.max_hidden.min(3));
        let b = rng.random_range(1..=sizes.max_batch.min(2));
        let lambda = LAMBDAS[t % LAMBDAS.len()];
        let params = random_params(&mut rng, m, n, 1.0);
        let labels = random_labels(&mut rng, b, 2);
        let v = binary_matrix(&mut rng, b, m);
        let phi = build_signed_adjacency(&labels)?.phi;

        let exact = exact_gradient(&params, lambda, v.view(), phi.view())?;
        let fd = finite_difference_gradient(&params, lambda, v.view(), phi.view(), FD_STEP)?;
        let err = exact.max_abs_diff(&fd);
        report.record(err <= GRADIENT_TOL, err, || {
            format!("trial {t}: m={m} n={n} B={b} lambda={lambda} max error {err:e}")
        });
    }
    Ok(report)
}

/// Central differences of `log_likelihood / B` in every parameter.
pub fn finite_difference_gradient(
    params: &RbmParams,
    lambda: f64,
    v: ndarray::ArrayView2<f64>,
    phi: ndarray::ArrayView2<f64>,
    step: f64,
) -> Result<crate::model::Gradient> {
    let b = v.nrows() as f64;
    let mut grad = crate::model::Gradient::zeros(params.n_visible(), params.n_hidden());
    let central = |perturb: &dyn Fn(&mut RbmParams, f64)| -> Result<f64> {
        let mut plus = params.clone();
        perturb(&mut plus, step);
        let mut minus = params.clone();
        perturb(&mut minus, -step);
        let up = log_likelihood(&plus, lambda, v, phi)?;
        let down = log_likelihood(&minus, lambda, v, phi)?;
        Ok((up - down) / (2.0 * step) / b)
    };
    for l in 0..params.n_hidden() {
        for r in 0..params.n_visible() {
            grad.weights[[l, r]] = central(&|p, s| p.weights[[l, r]] += s)?;
        }
    }
    for r in 0..params.n_visible() {
        grad.visible_bias[r] = central(&|p, s| p.visible_bias[r] += s)?;
    }
    for l in 0..params.n_hidden() {
        grad.hidden_bias[l] = central(&|p, s| p.hidden_bias[l] += s)?;
    }
    Ok(grad)
}

/// Pairwise smoothness against `2 tr(H L H^T)` on random codes and labels.
pub fn trace_suite(trials: usize, max_points: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("trace");
    let mut rng = stream_rng(seed, Stream::Oracle, 3, 0);
    for t in 0..trials {
        let n_points = rng.random_range(1..=max_points.max(1));
        let n = rng.random_range(1..=6);
        let h = uniform_matrix(&mut rng, n, n_points, 1.0);
        let labels = random_labels(&mut rng, n_points, 4);
        let adjacency = build_signed_adjacency(&labels)?;
        let graph = build_laplacian(&adjacency, DegreeConvention::Signed)?;
        let direct = smoothness(h.view(), adjacency.phi.view())?;
        let trace = smoothness_via_trace(h.view(), &graph)?;
        let rel = relative_error(direct, trace);
        report.record(rel <= TRACE_REL_TOL, rel, || {
            format!("trial {t}: N={n_points} pairwise {direct} trace {trace}")
        });
    }
    Ok(report)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Aligned patches against `L_signed + L_absolute`.
pub fn patch_suite(trials: usize, max_points: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("patch");
    let mut rng = stream_rng(seed, Stream::Oracle, 4, 0);
    for t in 0..trials {
        let n_points = rng.random_range(1..=max_points.max(1));
        let labels = random_labels(&mut rng, n_points, 3);
        let adjacency = build_signed_adjacency(&labels)?;
        let signed = build_laplacian(&adjacency, DegreeConvention::Signed)?;
        let absolute = build_laplacian(&adjacency, DegreeConvention::Absolute)?;
        let aligned = align_patches(&signed)?;
        let expect = &signed.laplacian + &absolute.laplacian;
        let err = aligned
            .iter()
            .zip(expect.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        report.record(err <= PATCH_TOL, err, || {
            format!("trial {t}: labels {labels:?}")
        });
    }
    Ok(report)
}

/// Absolute-degree Laplacians of random signed graphs are PSD.
pub fn psd_suite(trials: usize, max_points: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("psd");
    let mut rng = stream_rng(seed, Stream::Oracle, 5, 0);
    for t in 0..trials {
        let n_points = rng.random_range(1..=max_points.max(1));
        let labels = random_labels(&mut rng, n_points, 4);
        let adjacency = build_signed_adjacency(&labels)?;
        let absolute = build_laplacian(&adjacency, DegreeConvention::Absolute)?;
        let min = min_eigenvalue(absolute.laplacian.view())?;
        report.record(min >= -PSD_TOL, (-min).max(0.0), || {
            format!("trial {t}: min eigenvalue {min}")
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleCheck {
    pub trials: usize,
    pub seed: u64,
    pub sizes: OracleSizes,
}

impl Default for OracleCheck {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            sizes: OracleSizes::default(),
        }
    }
}

/// Runs every suite with the model's own hidden conditional.
pub fn run_all(check: &OracleCheck) -> Result<Vec<SuiteReport>> {
    run_all_with(check, &|p, v, d| crate::model::hidden_conditional(p, v, d))
}

pub fn run_all_with(check: &OracleCheck, hidden: &HiddenConditional) -> Result<Vec<SuiteReport>> {
    check.sizes.check()?;
    Ok(vec![
        conditional_suite(check.trials, check.sizes, check.seed, hidden)?,
        gradient_suite(check.trials, check.sizes, check.seed)?,
        trace_suite(check.trials, 30, check.seed)?,
        patch_suite(check.trials, 10, check.seed)?,
        psd_suite(check.trials, 20, check.seed)?,
    ])
}
