//! Binary RBM parameters, energies and conditionals.
//!
//! The label-regularized model adds a graph term to the per-sample energy:
//!
//! ```text
//! F(v_i, h_i) = E(v_i, h_i) + lambda * sum_j phi_ij * ||h_i - h_j||^2
//! ```
//!
//! For binary hidden units, flipping `h_il` from 0 to 1 changes the graph
//! term by `delta_il = lambda * sum_j phi_ij * (1 - 2 h_jl)`, which enters
//! the hidden conditional as a shift of the logistic argument. Visible
//! conditionals are unaffected.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Label;

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    /// Hidden x visible weights.
    pub weights: Array2<f64>,
    /// Visible biases, length m.
    pub visible_bias: Array1<f64>,
    /// Hidden biases, length n.
    pub hidden_bias: Array1<f64>,
}

impl RbmParams {
    pub fn new(
        weights: Array2<f64>,
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
    ) -> Result<Self> {
        if weights.nrows() != hidden_bias.len() || weights.ncols() != visible_bias.len() {
            return Err(Error::Dimension(format!(
                "weights {}x{} do not match {} hidden / {} visible biases",
                weights.nrows(),
                weights.ncols(),
                hidden_bias.len(),
                visible_bias.len()
            )));
        }
        let params = Self {
            weights,
            visible_bias,
            hidden_bias,
        };
        if !params.is_finite() {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(params)
    }

    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Self {
            weights: Array2::zeros((n_hidden, n_visible)),
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
        }
    }

    /// `W ~ U(-0.01, 0.01) / sqrt(m)`, zero biases.
    pub fn init<R: Rng + ?Sized>(n_visible: usize, n_hidden: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (n_visible.max(1) as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((n_hidden, n_visible), || {
            rng.random_range(-0.01..0.01) * scale
        });
        Self {
            weights,
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
        }
    }

    pub fn n_visible(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|x| x.is_finite())
            && self.visible_bias.iter().all(|x| x.is_finite())
            && self.hidden_bias.iter().all(|x| x.is_finite())
    }

    /// `V W^T + c` for a batch of visible rows (B x m), giving B x n.
    pub fn hidden_input(&self, v: ArrayView2<f64>) -> Array2<f64> {
        let mut out = v.dot(&self.weights.t());
        out += &self.hidden_bias;
        out
    }

    /// `H W + b` for a batch of hidden rows (B x n), giving B x m.
    pub fn visible_input(&self, h: ArrayView2<f64>) -> Array2<f64> {
        let mut out = h.dot(&self.weights);
        out += &self.visible_bias;
        out
    }
}

/// Parameter-shaped triple, used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
}

impl Gradient {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Self {
            weights: Array2::zeros((n_hidden, n_visible)),
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|x| x.is_finite())
            && self.visible_bias.iter().all(|x| x.is_finite())
            && self.hidden_bias.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Gradient) -> f64 {
        let w: f64 = self
            .weights
            .iter()
            .zip(other.weights.iter())
            .map(|(a, b)| a * b)
            .sum();
        let b: f64 = self.visible_bias.dot(&other.visible_bias);
        let c: f64 = self.hidden_bias.dot(&other.hidden_bias);
        w + b + c
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Gradient) -> f64 {
        self.weights
            .iter()
            .zip(other.weights.iter())
            .chain(self.visible_bias.iter().zip(other.visible_bias.iter()))
            .chain(self.hidden_bias.iter().zip(other.hidden_bias.iter()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Where the neighbour hidden values inside `delta` come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaSource {
    /// Activation probabilities.
    #[default]
    MeanField,
    /// Binary samples.
    Sample,
}

/// Per-batch state: visible rows, hidden probabilities and samples, labels
/// and the batch adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchState {
    pub v: Array2<f64>,
    pub h_prob: Array2<f64>,
    pub h_sample: Array2<f64>,
    pub labels: Option<Vec<Label>>,
    pub phi: Option<Array2<f64>>,
}

impl BatchState {
    /// Batch with hidden state zeroed and no graph.
    pub fn new(v: Array2<f64>, n_hidden: usize) -> Self {
        let b = v.nrows();
        Self {
            v,
            h_prob: Array2::zeros((b, n_hidden)),
            h_sample: Array2::zeros((b, n_hidden)),
            labels: None,
            phi: None,
        }
    }

    /// Batch with the signed label graph built from `labels`.
    pub fn labeled(v: Array2<f64>, n_hidden: usize, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != v.nrows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                v.nrows()
            )));
        }
        let phi = crate::graph::build_signed_adjacency(&labels)?.phi;
        Ok(Self {
            phi: Some(phi),
            labels: Some(labels),
            ..Self::new(v, n_hidden)
        })
    }

    pub fn len(&self) -> usize {
        self.v.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.v.nrows() == 0
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::Index {
                index: i,
                len: self.len(),
            });
        }
        Ok(())
    }

    fn phi(&self) -> Result<&Array2<f64>> {
        self.phi.as_ref().ok_or(Error::MissingLabels)
    }
}

pub fn energy_rbm(params: &RbmParams, v: ArrayView1<f64>, h: ArrayView1<f64>) -> Result<f64> {
    if v.len() != params.n_visible() || h.len() != params.n_hidden() {
        return Err(Error::Dimension(format!(
            "state ({}, {}) for model ({}, {})",
            v.len(),
            h.len(),
            params.n_visible(),
            params.n_hidden()
        )));
    }
    let interaction = h.dot(&params.weights.dot(&v));
    Ok(-interaction - params.visible_bias.dot(&v) - params.hidden_bias.dot(&h))
}

/// Per-sample regularized energy of row `i`, using `h_sample` for every
/// sample's hidden code.
pub fn energy_slrbm(params: &RbmParams, batch: &BatchState, lambda: f64, i: usize) -> Result<f64> {
    batch.check_index(i)?;
    let base = energy_rbm(params, batch.v.row(i), batch.h_sample.row(i))?;
    if lambda == 0.0 {
        return Ok(base);
    }
    let phi = batch.phi()?;
    let hi = batch.h_sample.row(i);
    let mut reg = 0.0;
    for (j, hj) in batch.h_sample.rows().into_iter().enumerate() {
        let w = phi[[i, j]];
        if w != 0.0 {
            let d: f64 = hi.iter().zip(hj).map(|(a, b)| (a - b) * (a - b)).sum();
            reg += w * d;
        }
    }
    Ok(base + lambda * reg)
}

/// Hidden-unit shift for sample `i`.
pub fn delta(
    batch: &BatchState,
    lambda: f64,
    i: usize,
    source: DeltaSource,
) -> Result<Array1<f64>> {
    batch.check_index(i)?;
    let hidden = match source {
        DeltaSource::MeanField => &batch.h_prob,
        DeltaSource::Sample => &batch.h_sample,
    };
    if lambda == 0.0 {
        return Ok(Array1::zeros(hidden.ncols()));
    }
    let phi = batch.phi()?;
    Ok(delta_row(phi.row(i), hidden.view(), lambda))
}

/// `lambda * sum_j phi_j * (1 - 2 h_j)` for one row of the adjacency.
pub(crate) fn delta_row(
    phi_row: ArrayView1<f64>,
    hidden: ArrayView2<f64>,
    lambda: f64,
) -> Array1<f64> {
    let mut out = Array1::<f64>::zeros(hidden.ncols());
    for (w, hj) in phi_row.iter().zip(hidden.rows()) {
        if *w != 0.0 {
            out.zip_mut_with(&hj, |o, &h| *o += w * (1.0 - 2.0 * h));
        }
    }
    out *= lambda;
    out
}

/// Shift matrix for every row at once: `lambda * Phi (1 - 2H)`.
pub(crate) fn delta_all(phi: ArrayView2<f64>, hidden: ArrayView2<f64>, lambda: f64) -> Array2<f64> {
    let centered = hidden.mapv(|h| 1.0 - 2.0 * h);
    let mut out = phi.dot(&centered);
    out *= lambda;
    out
}

pub fn hidden_conditional(
    params: &RbmParams,
    v: ArrayView1<f64>,
    delta: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    if v.len() != params.n_visible() || delta.len() != params.n_hidden() {
        return Err(Error::Dimension(format!(
            "visible {} / delta {} for model ({}, {})",
            v.len(),
            delta.len(),
            params.n_visible(),
            params.n_hidden()
        )));
    }
    if !v.iter().chain(delta.iter()).all(|x| x.is_finite()) {
        return Err(Error::NonFinite("hidden conditional input"));
    }
    let mut act = params.weights.dot(&v);
    act += &params.hidden_bias;
    act -= &delta;
    act.mapv_inplace(sigmoid);
    Ok(act)
}

pub fn visible_conditional(params: &RbmParams, h: ArrayView1<f64>) -> Result<Array1<f64>> {
    if h.len() != params.n_hidden() {
        return Err(Error::Dimension(format!(
            "hidden {} for model with {} hidden units",
            h.len(),
            params.n_hidden()
        )));
    }
    if !h.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("visible conditional input"));
    }
    let mut act = h.dot(&params.weights);
    act += &params.visible_bias;
    act.mapv_inplace(sigmoid);
    Ok(act)
}

pub fn sample_bernoulli<R: Rng + ?Sized>(
    probs: ArrayView1<f64>,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Probability(p));
    }
    Ok(probs.mapv(|p| bernoulli(p, rng)))
}

#[inline]
pub(crate) fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

/// Row-major in-place sampling of a probability matrix.
pub(crate) fn sample_matrix<R: Rng + ?Sized>(probs: &Array2<f64>, rng: &mut R) -> Array2<f64> {
    let mut out = probs.clone();
    for row in out.axis_iter_mut(Axis(0)) {
        for x in row {
            *x = bernoulli(*x, rng);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(w: Array2<f64>, b: Array1<f64>, c: Array1<f64>) -> RbmParams {
        RbmParams::new(w, b, c).unwrap()
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_abs_diff_eq!(sigmoid(3f64.ln()), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn params_validate() {
        assert!(RbmParams::new(Array2::zeros((2, 3)), Array1::zeros(3), Array1::zeros(1)).is_err());
        assert!(RbmParams::new(array![[f64::NAN]], array![0.], array![0.]).is_err());
    }

    #[test]
    fn energy_examples() {
        let p = RbmParams::zeros(3, 2);
        assert_eq!(
            energy_rbm(&p, array![1., 0., 1.].view(), array![1., 1.].view()).unwrap(),
            0.0
        );

        let p = params(array![[2f64.ln()]], array![0.], array![0.]);
        assert_abs_diff_eq!(
            energy_rbm(&p, array![1.].view(), array![1.].view()).unwrap(),
            -(2f64.ln()),
            epsilon = 1e-15
        );

        let p = params(array![[1., -1.]], array![0.5, 0.], array![-0.5]);
        assert_eq!(
            energy_rbm(&p, array![1., 1.].view(), array![1.].view()).unwrap(),
            0.0
        );

        assert!(energy_rbm(&p, array![1.].view(), array![1.].view()).is_err());
    }

    fn pair_batch(labels: Vec<Label>) -> BatchState {
        let mut b = BatchState::labeled(Array2::zeros((2, 1)), 2, labels).unwrap();
        b.h_sample = array![[1., 0.], [0., 1.]];
        b
    }

    #[test]
    fn regularized_energy_examples() {
        let p = RbmParams::zeros(1, 2);
        let same = pair_batch(vec![3, 3]);
        assert_eq!(energy_slrbm(&p, &same, 0.5, 0).unwrap(), 1.0);
        let diff = pair_batch(vec![3, 4]);
        assert_eq!(energy_slrbm(&p, &diff, 0.5, 0).unwrap(), -1.0);

        let p = params(array![[0.3], [-0.2]], array![0.1], array![0.05, 0.7]);
        let mut b = pair_batch(vec![1, 2]);
        b.v = array![[1.], [0.]];
        assert_eq!(
            energy_slrbm(&p, &b, 0.0, 1).unwrap(),
            energy_rbm(&p, b.v.row(1), b.h_sample.row(1)).unwrap()
        );
        assert!(energy_slrbm(&p, &b, 0.1, 2).is_err());
    }

    #[test]
    fn delta_examples() {
        let mut b = BatchState::labeled(Array2::zeros((3, 1)), 1, vec![0, 0, 1]).unwrap();
        assert_eq!(
            delta(&b, 0.0, 0, DeltaSource::MeanField).unwrap(),
            array![0.]
        );

        // row phi = [0, 1, -1], neighbour values 1 and 0
        b.h_sample = array![[0.], [1.], [0.]];
        let d = delta(&b, 0.01, 0, DeltaSource::Sample).unwrap();
        assert_abs_diff_eq!(d[0], -0.02, epsilon = 1e-15);

        b.h_prob = Array2::from_elem((3, 1), 0.5);
        assert_eq!(
            delta(&b, 0.7, 2, DeltaSource::MeanField).unwrap(),
            array![0.]
        );

        assert!(delta(&b, 0.1, 3, DeltaSource::MeanField).is_err());
    }

    #[test]
    fn delta_without_graph_needs_labels() {
        let b = BatchState::new(Array2::zeros((2, 1)), 1);
        assert!(matches!(
            delta(&b, 0.1, 0, DeltaSource::Sample),
            Err(Error::MissingLabels)
        ));
    }

    #[test]
    fn hidden_conditional_examples() {
        let p = RbmParams::zeros(2, 3);
        let out = hidden_conditional(&p, array![1., 0.].view(), Array1::zeros(3).view()).unwrap();
        assert_eq!(out, array![0.5, 0.5, 0.5]);

        let p = params(array![[1., 1.]], array![0., 0.], array![-1.]);
        let out = hidden_conditional(&p, array![1., 1.].view(), array![1.].view()).unwrap();
        assert_eq!(out, array![0.5]);

        let p = params(array![[1.]], array![0.], array![0.]);
        let out = hidden_conditional(&p, array![1.].view(), array![-0.02].view()).unwrap();
        // logistic(1.02), evaluated independently
        assert_abs_diff_eq!(out[0], 0.734_972_599_466_518_8, epsilon = 1e-12);

        assert!(hidden_conditional(&p, array![f64::INFINITY].view(), array![0.].view()).is_err());
        assert!(hidden_conditional(&p, array![1., 0.].view(), array![0.].view()).is_err());
    }

    #[test]
    fn visible_conditional_examples() {
        let p = RbmParams::zeros(2, 3);
        assert_eq!(
            visible_conditional(&p, array![1., 1., 0.].view()).unwrap(),
            array![0.5, 0.5]
        );

        let p = params(array![[3.], [-3.]], array![0.], array![0., 0.]);
        assert_eq!(
            visible_conditional(&p, array![1., 1.].view()).unwrap(),
            array![0.5]
        );

        let p = params(array![[3f64.ln()]], array![0.], array![0.]);
        let out = visible_conditional(&p, array![1.].view()).unwrap();
        assert_abs_diff_eq!(out[0], 0.75, epsilon = 1e-15);

        assert!(visible_conditional(&p, array![f64::NAN].view()).is_err());
    }

    #[test]
    fn bernoulli_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(
            sample_bernoulli(Array1::zeros(50).view(), &mut rng).unwrap(),
            Array1::zeros(50)
        );
        assert_eq!(
            sample_bernoulli(Array1::ones(50).view(), &mut rng).unwrap(),
            Array1::ones(50)
        );

        let half = Array1::from_elem(10_000, 0.5);
        let draws = sample_bernoulli(half.view(), &mut rng).unwrap();
        let mean = draws.mean().unwrap();
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");

        let a = sample_bernoulli(half.view(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = sample_bernoulli(half.view(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);

        assert!(matches!(
            sample_bernoulli(array![0.2, 1.5].view(), &mut rng),
            Err(Error::Probability(_))
        ));
    }

    fn tiny_instance() -> impl Strategy<Value = (RbmParams, BatchState, f64, usize)> {
        (1..=4usize, 1..=4usize, 1..=4usize).prop_flat_map(|(m, n, b)| {
            (
                prop::collection::vec(-2.0..2.0f64, n * m + m + n),
                prop::collection::vec(any::<bool>(), b * (m + n)),
                prop::collection::vec(0u8..3, b),
                0.0..1.5f64,
                0..b,
            )
                .prop_map(move |(theta, bits, labels, lambda, i)| {
                    let w = Array2::from_shape_vec((n, m), theta[..n * m].to_vec()).unwrap();
                    let bv = Array1::from(theta[n * m..n * m + m].to_vec());
                    let c = Array1::from(theta[n * m + m..].to_vec());
                    let p = RbmParams::new(w, bv, c).unwrap();
                    let bit = |x: bool| if x { 1.0 } else { 0.0 };
                    let v = Array2::from_shape_fn((b, m), |(r, k)| bit(bits[r * (m + n) + k]));
                    let h = Array2::from_shape_fn((b, n), |(r, k)| bit(bits[r * (m + n) + m + k]));
                    let mut batch = BatchState::labeled(v, n, labels).unwrap();
                    batch.h_sample = h;
                    (p, batch, lambda, i)
                })
        })
    }

    proptest! {
        #[test]
        fn flip_difference_matches_conditional_argument((p, batch, lambda, i) in tiny_instance()) {
            let d = delta(&batch, lambda, i, DeltaSource::Sample).unwrap();
            let act = p.weights.dot(&batch.v.row(i)) + &p.hidden_bias;
            for l in 0..p.n_hidden() {
                let mut on = batch.clone();
                on.h_sample[[i, l]] = 1.0;
                let mut off = batch.clone();
                off.h_sample[[i, l]] = 0.0;
                let diff = energy_slrbm(&p, &on, lambda, i).unwrap()
                    - energy_slrbm(&p, &off, lambda, i).unwrap();
                prop_assert!((diff - (-act[l] + d[l])).abs() <= 1e-12, "{diff} vs {}", -act[l] + d[l]);
            }
        }

        #[test]
        fn hidden_conditional_decreases_in_delta(
            (p, batch, _lambda, i) in tiny_instance(),
            base in -1.0..1.0f64,
            bump in 0.01..1.0f64,
        ) {
            let n = p.n_hidden();
            let lo = Array1::from_elem(n, base);
            let hi = Array1::from_elem(n, base + bump);
            let a = hidden_conditional(&p, batch.v.row(i), lo.view()).unwrap();
            let b = hidden_conditional(&p, batch.v.row(i), hi.view()).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!(y < x);
                prop_assert!(*x > 0.0 && *x < 1.0);
            }
        }

        #[test]
        fn batch_delta_matches_rowwise((_p, mut batch, lambda, _i) in tiny_instance()) {
            batch.h_prob = batch.h_sample.mapv(|x| 0.25 + 0.5 * x);
            let all = delta_all(batch.phi.as_ref().unwrap().view(), batch.h_prob.view(), lambda);
            for i in 0..batch.len() {
                let row = delta(&batch, lambda, i, DeltaSource::MeanField).unwrap();
                for (a, b) in all.row(i).iter().zip(row.iter()) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}
