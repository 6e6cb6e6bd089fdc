//! Exhaustive enumeration of tiny batch models.
//!
//! A batch of B samples is treated as one joint Gibbs distribution with
//! energy
//!
//! ```text
//! E(V, H) = sum_i E_rbm(v_i, h_i) + lambda * sum_{i<j} phi_ij ||h_i - h_j||^2
//! ```
//!
//! Each unordered pair enters once, so the exact conditional of a single
//! hidden unit given everything else is `f(W_l v_i + c_l - delta_il)` with
//! `delta_il = lambda * sum_j phi_ij (1 - 2 h_jl)`, the closed form used by
//! the model.
//!
//! Energies here are evaluated with plain loops and do not call into
//! [`crate::model`], so the two stay independent.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::model::{Gradient, RbmParams};

/// Largest number of free binary variables the oracle will enumerate.
pub const MAX_FREE_BITS: usize = 20;

/// Which variables are held fixed during enumeration.
#[derive(Debug, Clone, PartialEq)]
pub enum Clamp {
    /// Visible rows fixed (B x m); hidden units enumerated.
    Visible(Array2<f64>),
    /// Hidden rows fixed (B x n); visible units enumerated.
    Hidden(Array2<f64>),
    /// Everything enumerated.
    Free { batch_size: usize },
}

impl Clamp {
    fn batch_size(&self) -> usize {
        match self {
            Clamp::Visible(v) => v.nrows(),
            Clamp::Hidden(h) => h.nrows(),
            Clamp::Free { batch_size } => *batch_size,
        }
    }
}

/// A unit addressed by sample and position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Visible { sample: usize, index: usize },
    Hidden { sample: usize, index: usize },
}

#[derive(Debug, Clone)]
pub struct EnumeratedDistribution {
    pub n_visible: usize,
    pub n_hidden: usize,
    pub batch_size: usize,
    pub clamp: Clamp,
    /// Energy of every configuration, indexed by the free-bit encoding.
    pub energies: Vec<f64>,
    pub log_partition: f64,
    pub probabilities: Vec<f64>,
}

fn bit(x: f64) -> Result<bool> {
    if x == 0.0 {
        Ok(false)
    } else if x == 1.0 {
        Ok(true)
    } else {
        Err(Error::InvalidArgument(format!(
            "expected binary state, got {x}"
        )))
    }
}

/// Total batch energy, evaluated directly from the definition.
pub fn batch_energy(
    params: &RbmParams,
    lambda: f64,
    phi: ArrayView2<f64>,
    v: ArrayView2<f64>,
    h: ArrayView2<f64>,
) -> f64 {
    let (m, n) = (params.n_visible(), params.n_hidden());
    let b = v.nrows();
    let mut total = 0.0;
    for i in 0..b {
        let mut e = 0.0;
        for l in 0..n {
            for r in 0..m {
                e -= params.weights[[l, r]] * h[[i, l]] * v[[i, r]];
            }
        }
        for r in 0..m {
            e -= params.visible_bias[r] * v[[i, r]];
        }
        for l in 0..n {
            e -= params.hidden_bias[l] * h[[i, l]];
        }
        total += e;
    }
    if lambda != 0.0 {
        let mut reg = 0.0;
        for i in 0..b {
            for j in (i + 1)..b {
                let mut d = 0.0;
                for l in 0..n {
                    let diff = h[[i, l]] - h[[j, l]];
                    d += diff * diff;
                }
                reg += phi[[i, j]] * d;
            }
        }
        total += lambda * reg;
    }
    total
}

impl EnumeratedDistribution {
    pub fn free_bits(&self) -> usize {
        free_bits(&self.clamp, self.n_visible, self.n_hidden)
    }

    /// Writes configuration `index` into `v` and `h`.
    pub fn decode_into(&self, index: usize, v: &mut Array2<f64>, h: &mut Array2<f64>) {
        decode(&self.clamp, index, v, h);
    }

    pub fn decode(&self, index: usize) -> (Array2<f64>, Array2<f64>) {
        let mut v = Array2::zeros((self.batch_size, self.n_visible));
        let mut h = Array2::zeros((self.batch_size, self.n_hidden));
        self.decode_into(index, &mut v, &mut h);
        (v, h)
    }

    /// Index of the configuration `(v, h)`; clamped parts are ignored.
    pub fn encode(&self, v: ArrayView2<f64>, h: ArrayView2<f64>) -> Result<usize> {
        if v.dim() != (self.batch_size, self.n_visible)
            || h.dim() != (self.batch_size, self.n_hidden)
        {
            return Err(Error::Dimension(
                "state does not match the enumeration".into(),
            ));
        }
        let mut index = 0usize;
        let mut k = 0;
        for i in 0..self.batch_size {
            if !matches!(self.clamp, Clamp::Visible(_)) {
                for r in 0..self.n_visible {
                    if bit(v[[i, r]])? {
                        index |= 1 << k;
                    }
                    k += 1;
                }
            }
            if !matches!(self.clamp, Clamp::Hidden(_)) {
                for l in 0..self.n_hidden {
                    if bit(h[[i, l]])? {
                        index |= 1 << k;
                    }
                    k += 1;
                }
            }
        }
        Ok(index)
    }

    fn unit_bit(&self, unit: Unit) -> Result<usize> {
        let (sample, visible, index) = match unit {
            Unit::Visible { sample, index } => (sample, true, index),
            Unit::Hidden { sample, index } => (sample, false, index),
        };
        if sample >= self.batch_size {
            return Err(Error::Index {
                index: sample,
                len: self.batch_size,
            });
        }
        let limit = if visible {
            self.n_visible
        } else {
            self.n_hidden
        };
        if index >= limit {
            return Err(Error::Index { index, len: limit });
        }
        let per_sample = match self.clamp {
            Clamp::Visible(_) => self.n_hidden,
            Clamp::Hidden(_) => self.n_visible,
            Clamp::Free { .. } => self.n_visible + self.n_hidden,
        };
        let offset = match (&self.clamp, visible) {
            (Clamp::Visible(_), true) | (Clamp::Hidden(_), false) => {
                return Err(Error::InvalidArgument("unit is clamped".into()))
            }
            (Clamp::Free { .. }, false) => self.n_visible + index,
            _ => index,
        };
        Ok(sample * per_sample + offset)
    }

    /// The two configuration indices that agree with `(v, h)` everywhere
    /// except `unit`, as (unit off, unit on).
    fn flip_pair(
        &self,
        unit: Unit,
        v: ArrayView2<f64>,
        h: ArrayView2<f64>,
    ) -> Result<(usize, usize)> {
        let k = self.unit_bit(unit)?;
        let index = self.encode(v, h)?;
        Ok((index & !(1 << k), index | (1 << k)))
    }

    /// `p(unit = 1 | every other variable)` from the energy difference of
    /// the two configurations that differ only in `unit`.
    pub fn conditional(&self, unit: Unit, v: ArrayView2<f64>, h: ArrayView2<f64>) -> Result<f64> {
        let (off, on) = self.flip_pair(unit, v, h)?;
        Ok(1.0 / (1.0 + (self.energies[on] - self.energies[off]).exp()))
    }

    /// Same conditional, read from the normalized probability table.
    pub fn conditional_from_table(
        &self,
        unit: Unit,
        v: ArrayView2<f64>,
        h: ArrayView2<f64>,
    ) -> Result<f64> {
        let (off, on) = self.flip_pair(unit, v, h)?;
        let (p0, p1) = (self.probabilities[off], self.probabilities[on]);
        Ok(p1 / (p0 + p1))
    }

    /// Expectations of `sum_i h_i v_i^T`, `sum_i v_i` and `sum_i h_i`.
    pub fn expected_statistics(&self) -> Gradient {
        let (b, m, n) = (self.batch_size, self.n_visible, self.n_hidden);
        let mut stats = Gradient::zeros(m, n);
        let mut v = Array2::zeros((b, m));
        let mut h = Array2::zeros((b, n));
        for (index, &p) in self.probabilities.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            self.decode_into(index, &mut v, &mut h);
            for i in 0..b {
                for l in 0..n {
                    if h[[i, l]] != 0.0 {
                        stats.hidden_bias[l] += p;
                        for r in 0..m {
                            stats.weights[[l, r]] += p * v[[i, r]];
                        }
                    }
                }
                for r in 0..m {
                    stats.visible_bias[r] += p * v[[i, r]];
                }
            }
        }
        stats
    }

    /// Total probability of configurations satisfying `pred`.
    pub fn mass_where<F>(&self, mut pred: F) -> f64
    where
        F: FnMut(&Array2<f64>, &Array2<f64>) -> bool,
    {
        let mut v = Array2::zeros((self.batch_size, self.n_visible));
        let mut h = Array2::zeros((self.batch_size, self.n_hidden));
        let mut mass = 0.0;
        for (index, &p) in self.probabilities.iter().enumerate() {
            self.decode_into(index, &mut v, &mut h);
            if pred(&v, &h) {
                mass += p;
            }
        }
        mass
    }
}

fn free_bits(clamp: &Clamp, m: usize, n: usize) -> usize {
    let per = match clamp {
        Clamp::Visible(_) => n,
        Clamp::Hidden(_) => m,
        Clamp::Free { .. } => m + n,
    };
    per * clamp.batch_size()
}

fn decode(clamp: &Clamp, index: usize, v: &mut Array2<f64>, h: &mut Array2<f64>) {
    let b = v.nrows();
    let (m, n) = (v.ncols(), h.ncols());
    match clamp {
        Clamp::Visible(cv) => v.assign(cv),
        Clamp::Hidden(ch) => h.assign(ch),
        Clamp::Free { .. } => {}
    }
    let mut k = 0;
    for i in 0..b {
        if !matches!(clamp, Clamp::Visible(_)) {
            for r in 0..m {
                v[[i, r]] = ((index >> k) & 1) as f64;
                k += 1;
            }
        }
        if !matches!(clamp, Clamp::Hidden(_)) {
            for l in 0..n {
                h[[i, l]] = ((index >> k) & 1) as f64;
                k += 1;
            }
        }
    }
}

/// Log-sum-exp of `-energies`, accumulated in index order.
fn log_sum_exp_neg(energies: &[f64]) -> f64 {
    let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return -min;
    }
    let sum: f64 = energies.iter().map(|e| (min - e).exp()).sum();
    -min + sum.ln()
}

pub fn enumerate(
    params: &RbmParams,
    lambda: f64,
    phi: ArrayView2<f64>,
    clamp: Clamp,
) -> Result<EnumeratedDistribution> {
    let (m, n) = (params.n_visible(), params.n_hidden());
    let b = clamp.batch_size();
    if b == 0 {
        return Err(Error::EmptyDataset);
    }
    if phi.dim() != (b, b) {
        return Err(Error::Dimension(format!(
            "adjacency {}x{} for batch of {b}",
            phi.nrows(),
            phi.ncols()
        )));
    }
    match &clamp {
        Clamp::Visible(cv) if cv.ncols() != m => {
            return Err(Error::Dimension(format!(
                "clamped visible width {} != {m}",
                cv.ncols()
            )))
        }
        Clamp::Hidden(ch) if ch.ncols() != n => {
            return Err(Error::Dimension(format!(
                "clamped hidden width {} != {n}",
                ch.ncols()
            )))
        }
        Clamp::Visible(x) | Clamp::Hidden(x) => {
            for &e in x.iter() {
                bit(e)?;
            }
        }
        Clamp::Free { .. } => {}
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let bits = free_bits(&clamp, m, n);
    if bits > MAX_FREE_BITS {
        return Err(Error::TooLarge {
            bits,
            cap: MAX_FREE_BITS,
        });
    }

    let states = 1usize << bits;
    let mut energies = Vec::with_capacity(states);
    let mut v = Array2::zeros((b, m));
    let mut h = Array2::zeros((b, n));
    for index in 0..states {
        decode(&clamp, index, &mut v, &mut h);
        energies.push(batch_energy(params, lambda, phi, v.view(), h.view()));
    }
    let log_partition = log_sum_exp_neg(&energies);
    let probabilities = energies
        .iter()
        .map(|e| (-e - log_partition).exp())
        .collect();
    Ok(EnumeratedDistribution {
        n_visible: m,
        n_hidden: n,
        batch_size: b,
        clamp,
        energies,
        log_partition,
        probabilities,
    })
}

/// `p(h_l^(i) = 1 | v, all other hidden units)` for a distribution whose
/// hidden units are enumerated.
pub fn exact_hidden_conditional(
    dist: &EnumeratedDistribution,
    sample: usize,
    index: usize,
    v: ArrayView2<f64>,
    h: ArrayView2<f64>,
) -> Result<f64> {
    dist.conditional(Unit::Hidden { sample, index }, v, h)
}

/// Log-probability of the visible batch under the joint model, with the
/// hidden units marginalized.
pub fn log_likelihood(
    params: &RbmParams,
    lambda: f64,
    batch_v: ArrayView2<f64>,
    phi: ArrayView2<f64>,
) -> Result<f64> {
    let clamped = enumerate(params, lambda, phi, Clamp::Visible(batch_v.to_owned()))?;
    let free = enumerate(
        params,
        lambda,
        phi,
        Clamp::Free {
            batch_size: batch_v.nrows(),
        },
    )?;
    Ok(clamped.log_partition - free.log_partition)
}

/// Gradient of `log_likelihood / B`: clamped minus free expectations,
/// averaged over the batch.
pub fn exact_gradient(
    params: &RbmParams,
    lambda: f64,
    batch_v: ArrayView2<f64>,
    phi: ArrayView2<f64>,
) -> Result<Gradient> {
    let b = batch_v.nrows();
    let clamped = enumerate(params, lambda, phi, Clamp::Visible(batch_v.to_owned()))?;
    let free = enumerate(params, lambda, phi, Clamp::Free { batch_size: b })?;
    let pos = clamped.expected_statistics();
    let neg = free.expected_statistics();
    let scale = 1.0 / b as f64;
    Ok(Gradient {
        weights: (pos.weights - neg.weights) * scale,
        visible_bias: (pos.visible_bias - neg.visible_bias) * scale,
        hidden_bias: (pos.hidden_bias - neg.hidden_bias) * scale,
    })
}
