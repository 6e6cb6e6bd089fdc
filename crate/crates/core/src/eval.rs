//! Hidden-code encoding and nearest-neighbour classification.
//!
//! Test points carry no graph, so encoding always uses the plain hidden
//! conditional `f(W v + c)`.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::data::{format_real, Dataset};
use crate::error::{Error, Result};
use crate::model::{sample_matrix, sigmoid, RbmParams};
use crate::rng::{stream_rng, Stream};
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    /// Activation probabilities.
    Probability,
    /// One Bernoulli draw per unit.
    Sample { seed: u64 },
}

/// Hidden codes for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Representations {
    /// One code per row (N x n); [`Representations::matrix`] gives the
    /// n x N view.
    pub codes: Array2<f64>,
    pub labels: Vec<Label>,
    pub source: Option<String>,
}

impl Representations {
    pub fn new(codes: Array2<f64>, labels: Vec<Label>) -> Result<Self> {
        if codes.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} codes but {} labels",
                codes.nrows(),
                labels.len()
            )));
        }
        Ok(Self {
            codes,
            labels,
            source: None,
        })
    }

    /// Codes as columns.
    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.codes.t()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.codes.ncols()
    }
}

pub fn encode(params: &RbmParams, dataset: &Dataset, mode: EncodeMode) -> Result<Representations> {
    if dataset.n_visible() != params.n_visible() {
        return Err(Error::Dimension(format!(
            "data has {} visible units, model expects {}",
            dataset.n_visible(),
            params.n_visible()
        )));
    }
    let probs = params.hidden_input(dataset.images.view()).mapv(sigmoid);
    let codes = match mode {
        EncodeMode::Probability => probs,
        EncodeMode::Sample { seed } => {
            sample_matrix(&probs, &mut stream_rng(seed, Stream::Encode, 0, 0))
        }
    };
    Representations::new(codes, dataset.labels.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub predictions: Vec<Label>,
    pub error_rate: f64,
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Labels of the `k` nearest rows of `train` to `query`, nearest first;
/// equal distances go to the lower index.
fn nearest(
    train: &Representations,
    query: ArrayView1<f64>,
    k: usize,
    skip: Option<usize>,
) -> Vec<usize> {
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (j, row) in train.codes.rows().into_iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        let d = squared_distance(query, row);
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        let at = best.partition_point(|&(bd, _)| bd <= d);
        best.insert(at, (d, j));
        best.truncate(k);
    }
    best.into_iter().map(|(_, j)| j).collect()
}

/// Majority vote; ties go to the class of the nearest tied neighbour.
fn vote(train: &Representations, neighbours: &[usize]) -> Label {
    let mut counts = [0usize; 256];
    for &j in neighbours {
        counts[train.labels[j] as usize] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0);
    neighbours
        .iter()
        .map(|&j| train.labels[j])
        .find(|&l| counts[l as usize] == top)
        .unwrap_or(0)
}

fn check_pair(train: &Representations, test: &Representations, k: usize) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if train.dim() != test.dim() {
        return Err(Error::Dimension(format!(
            "train codes have {} units, test codes {}",
            train.dim(),
            test.dim()
        )));
    }
    Ok(())
}

fn error_rate(predictions: &[Label], truth: &[Label]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let correct = predictions
        .iter()
        .zip(truth)
        .filter(|(p, t)| p == t)
        .count();
    1.0 - correct as f64 / truth.len() as f64
}

/// Euclidean kNN over codes.
pub fn knn_classify(
    train: &Representations,
    test: &Representations,
    k: usize,
) -> Result<Classification> {
    check_pair(train, test, k)?;
    let predictions: Vec<Label> = test
        .codes
        .rows()
        .into_iter()
        .map(|q| vote(train, &nearest(train, q, k, None)))
        .collect();
    let error_rate = error_rate(&predictions, &test.labels);
    Ok(Classification {
        predictions,
        error_rate,
    })
}

/// kNN where each point is classified against all others.
pub fn leave_one_out(reps: &Representations, k: usize) -> Result<Classification> {
    if reps.len() < 2 {
        return Err(Error::InvalidArgument(
            "leave-one-out needs at least two points".into(),
        ));
    }
    check_pair(reps, reps, k)?;
    let predictions: Vec<Label> = reps
        .codes
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, q)| vote(reps, &nearest(reps, q, k, Some(i))))
        .collect();
    let error_rate = error_rate(&predictions, &reps.labels);
    Ok(Classification {
        predictions,
        error_rate,
    })
}

/// Mean pairwise Euclidean distance within classes and across classes.
pub fn class_distances(reps: &Representations) -> (f64, f64) {
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..reps.len() {
        for j in (i + 1)..reps.len() {
            let d = squared_distance(reps.codes.row(i), reps.codes.row(j)).sqrt();
            if reps.labels[i] == reps.labels[j] {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    (mean(intra, n_intra), mean(inter, n_inter))
}

pub fn representations_csv(reps: &Representations) -> String {
    let mut out = String::from("label");
    for l in 0..reps.dim() {
        out.push_str(&format!(",h{l}"));
    }
    out.push('\n');
    for (label, row) in reps.labels.iter().zip(reps.codes.rows()) {
        out.push_str(&label.to_string());
        for &x in row {
            out.push(',');
            out.push_str(&format_real(x));
        }
        out.push('\n');
    }
    out
}

/// `label,h0,...,h{n-1}` header, then one row per sample.
pub fn export_representations(reps: &Representations, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, representations_csv(reps))?;
    Ok(())
}

pub fn parse_representations(text: &str) -> Result<Representations> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("missing header".into()))?;
    let n = header.split(',').count().saturating_sub(1);
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let mut cells = line.split(',');
        let bad = || Error::InvalidArgument(format!("bad row {}", lineno + 2));
        let label: Label = cells.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let row: Vec<f64> = cells
            .map(|c| c.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(bad());
        }
        labels.push(label);
        values.extend(row);
    }
    let codes = Array2::from_shape_vec((labels.len(), n), values)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    Representations::new(codes, labels)
}

pub fn read_representations(path: impl AsRef<Path>) -> Result<Representations> {
    parse_representations(&fs::read_to_string(path)?)
}

/// One row of the error-rate summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub model: String,
    pub lambda: f64,
    pub eta: f64,
    pub seed: u64,
    pub error_rate: f64,
}

impl EvalSummary {
    pub const CSV_HEADER: &'static str = "model,lambda,eta,seed,error_rate";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.model,
            format_real(self.lambda),
            format_real(self.eta),
            self.seed,
            format_real(self.error_rate)
        )
    }
}
