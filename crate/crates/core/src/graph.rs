//! Graph construction over data points: signed label graphs, kNN graphs,
//! degree matrices and Laplacians, plus the smoothness regularizer
//!
//! ```text
//! J(H) = sum_{i,j} phi_ij * ||h_i - h_j||^2
//! ```
//!
//! over the columns of a code matrix `H` (n x N). Both orders of every pair
//! are counted. With signed degrees `D_ii = sum_j phi_ij` the identity
//! `J(H) = 2 tr(H L H^T)` holds for `L = D - Phi`; with absolute degrees the
//! Laplacian is positive semi-definite instead. Both views are provided.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the adjacency weights were produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AdjacencyMode {
    /// +1 for same-label pairs, -1 for different-label pairs.
    SignedLabel,
    /// Heat-kernel weights `exp(-d^2 / rho)` on kNN edges.
    HeatKernel { rho: f64, p: usize },
    /// Unit weights on kNN edges.
    BinaryKnn { p: usize },
    /// Caller-supplied matrix.
    Custom,
}

/// Edge weighting for [`build_knn_adjacency`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KnnWeighting {
    HeatKernel { rho: f64 },
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegreeConvention {
    /// `D_ii = sum_j phi_ij`
    Signed,
    /// `D_ii = sum_j |phi_ij|`
    Absolute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    pub phi: Array2<f64>,
    pub mode: AdjacencyMode,
}

impl Adjacency {
    /// Wraps an arbitrary square matrix. Symmetry is checked when a
    /// Laplacian is built from it.
    pub fn custom(phi: Array2<f64>) -> Result<Self> {
        if phi.nrows() != phi.ncols() {
            return Err(Error::Dimension(format!(
                "adjacency must be square, got {}x{}",
                phi.nrows(),
                phi.ncols()
            )));
        }
        Ok(Self {
            phi,
            mode: AdjacencyMode::Custom,
        })
    }

    pub fn len(&self) -> usize {
        self.phi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.nrows() == 0
    }

    pub fn is_symmetric(&self) -> bool {
        first_asymmetry(self.phi.view()).is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignedGraph {
    pub adjacency: Adjacency,
    pub degree: Array1<f64>,
    pub laplacian: Array2<f64>,
    pub degree_convention: DegreeConvention,
}

/// A per-node patch matrix together with the global node order of its
/// rows (the anchor node first, then the rest ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub matrix: Array2<f64>,
    pub ordering: Vec<usize>,
}

pub fn build_signed_adjacency<T: PartialEq>(labels: &[T]) -> Result<Adjacency> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = labels.len();
    let phi = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else if labels[i] == labels[j] {
            1.0
        } else {
            -1.0
        }
    });
    Ok(Adjacency {
        phi,
        mode: AdjacencyMode::SignedLabel,
    })
}

/// Symmetric kNN graph over the rows of `data` (N x m). An edge joins `i`
/// and `j` when either lists the other among its `p` nearest neighbours.
/// Ties at equal distance go to the lower index.
pub fn build_knn_adjacency(
    data: ArrayView2<f64>,
    p: usize,
    weighting: KnnWeighting,
) -> Result<Adjacency> {
    let n = data.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if p >= n {
        return Err(Error::TooManyNeighbors { p, n });
    }
    if p == 0 {
        return Err(Error::InvalidArgument(
            "neighbor count must be positive".into(),
        ));
    }
    let mode = match weighting {
        KnnWeighting::HeatKernel { rho } => {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "kernel width must be positive, got {rho}"
                )));
            }
            AdjacencyMode::HeatKernel { rho, p }
        }
        KnnWeighting::Binary => AdjacencyMode::BinaryKnn { p },
    };

    let dist = squared_distances(data);
    let mut phi = Array2::<f64>::zeros((n, n));
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        order.sort_by(|&a, &b| dist[[i, a]].total_cmp(&dist[[i, b]]).then(a.cmp(&b)));
        for &j in &order[..p] {
            let w = match weighting {
                KnnWeighting::HeatKernel { rho } => (-dist[[i, j]] / rho).exp(),
                KnnWeighting::Binary => 1.0,
            };
            phi[[i, j]] = w;
            phi[[j, i]] = w;
        }
    }
    Ok(Adjacency { phi, mode })
}

fn squared_distances(data: ArrayView2<f64>) -> Array2<f64> {
    let n = data.nrows();
    let mut dist = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = data
                .row(i)
                .iter()
                .zip(data.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }
    dist
}

fn first_asymmetry(phi: ArrayView2<f64>) -> Option<(usize, usize)> {
    let n = phi.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if phi[[i, j]] != phi[[j, i]] {
                return Some((i, j));
            }
        }
    }
    None
}

pub fn build_laplacian(adjacency: &Adjacency, convention: DegreeConvention) -> Result<SignedGraph> {
    if let Some((i, j)) = first_asymmetry(adjacency.phi.view()) {
        return Err(Error::NotSymmetric(i, j));
    }
    let phi = &adjacency.phi;
    let degree: Array1<f64> = match convention {
        DegreeConvention::Signed => phi.rows().into_iter().map(|r| r.sum()).collect(),
        DegreeConvention::Absolute => phi
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|x| x.abs()).sum())
            .collect(),
    };
    let mut laplacian = -phi.clone();
    for (i, d) in degree.iter().enumerate() {
        laplacian[[i, i]] += d;
    }
    Ok(SignedGraph {
        adjacency: adjacency.clone(),
        degree,
        laplacian,
        degree_convention: convention,
    })
}

/// Pairwise-sum form of the regularizer. `h` is n x N with one code per
/// column.
pub fn smoothness(h: ArrayView2<f64>, phi: ArrayView2<f64>) -> Result<f64> {
    let n_points = h.ncols();
    if phi.nrows() != n_points || phi.ncols() != n_points {
        return Err(Error::Dimension(format!(
            "code matrix has {} columns but adjacency is {}x{}",
            n_points,
            phi.nrows(),
            phi.ncols()
        )));
    }
    let mut total = 0.0;
    for i in 0..n_points {
        for j in 0..n_points {
            let w = phi[[i, j]];
            if w == 0.0 {
                continue;
            }
            let d: f64 = h
                .column(i)
                .iter()
                .zip(h.column(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += w * d;
        }
    }
    Ok(total)
}

/// `2 tr(H L H^T)`, equal to [`smoothness`] when the Laplacian uses signed
/// degrees.
pub fn smoothness_via_trace(h: ArrayView2<f64>, graph: &SignedGraph) -> Result<f64> {
    if graph.degree_convention != DegreeConvention::Signed {
        return Err(Error::NeedsSignedDegrees);
    }
    if h.ncols() != graph.laplacian.nrows() {
        return Err(Error::Dimension(format!(
            "code matrix has {} columns but Laplacian is {}x{}",
            h.ncols(),
            graph.laplacian.nrows(),
            graph.laplacian.ncols()
        )));
    }
    let hl = h.dot(&graph.laplacian);
    let trace: f64 = hl.iter().zip(h.iter()).map(|(a, b)| a * b).sum();
    Ok(2.0 * trace)
}

pub fn build_patch(graph: &SignedGraph, i: usize) -> Result<Patch> {
    let n = graph.laplacian.nrows();
    if i >= n {
        return Err(Error::Index { index: i, len: n });
    }
    let ordering: Vec<usize> = std::iter::once(i)
        .chain((0..n).filter(|&j| j != i))
        .collect();
    let phi = &graph.adjacency.phi;
    let mut matrix = Array2::<f64>::zeros((n, n));
    matrix[[0, 0]] = graph.degree[i];
    for (k, &j) in ordering.iter().enumerate().skip(1) {
        matrix[[0, k]] = -phi[[j, i]];
        matrix[[k, 0]] = -phi[[j, i]];
        matrix[[k, k]] = phi[[j, i]].abs();
    }
    Ok(Patch { matrix, ordering })
}

/// Scatter-adds every node's patch back into global coordinates. For a
/// signed-degree graph the result is `L_signed + L_absolute`.
pub fn align_patches(graph: &SignedGraph) -> Result<Array2<f64>> {
    if graph.degree_convention != DegreeConvention::Signed {
        return Err(Error::NeedsSignedDegrees);
    }
    let n = graph.laplacian.nrows();
    let mut total = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let patch = build_patch(graph, i)?;
        for (a, &ga) in patch.ordering.iter().enumerate() {
            for (b, &gb) in patch.ordering.iter().enumerate() {
                total[[ga, gb]] += patch.matrix[[a, b]];
            }
        }
    }
    Ok(total)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(matrix: ArrayView2<f64>) -> Result<Vec<f64>> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::Dimension("eigenvalues need a square matrix".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = DMatrix::from_fn(n, n, |i, j| matrix[[i, j]]);
    let mut values: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

pub fn min_eigenvalue(matrix: ArrayView2<f64>) -> Result<f64> {
    Ok(symmetric_eigenvalues(matrix)?
        .first()
        .copied()
        .unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn signed(labels: &[u8]) -> SignedGraph {
        build_laplacian(
            &build_signed_adjacency(labels).unwrap(),
            DegreeConvention::Signed,
        )
        .unwrap()
    }

    fn absolute(labels: &[u8]) -> SignedGraph {
        build_laplacian(
            &build_signed_adjacency(labels).unwrap(),
            DegreeConvention::Absolute,
        )
        .unwrap()
    }

    #[test]
    fn signed_adjacency_examples() {
        let a = build_signed_adjacency(&[0, 0, 1]).unwrap();
        assert_eq!(a.phi, array![[0., 1., -1.], [1., 0., -1.], [-1., -1., 0.]]);
        assert_eq!(a.mode, AdjacencyMode::SignedLabel);

        let a = build_signed_adjacency(&[5]).unwrap();
        assert_eq!(a.phi, array![[0.]]);

        let a = build_signed_adjacency(&[0, 1, 2, 0]).unwrap();
        assert_eq!(a.phi[[0, 3]], 1.0);
        assert_eq!(a.phi[[0, 1]], -1.0);
        assert_eq!(a.phi[[0, 2]], -1.0);
        assert_eq!(a.phi[[1, 2]], -1.0);
    }

    #[test]
    fn signed_adjacency_rejects_empty() {
        let err = build_signed_adjacency::<u8>(&[]).unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn knn_identical_points_heat_kernel() {
        let data = array![[3.0, 4.0], [3.0, 4.0]];
        let a = build_knn_adjacency(data.view(), 1, KnnWeighting::HeatKernel { rho: 1.0 }).unwrap();
        assert_eq!(a.phi, array![[0., 1.], [1., 0.]]);
    }

    #[test]
    fn knn_line_or_rule() {
        let data = array![[0.0], [1.0], [10.0]];
        let a = build_knn_adjacency(data.view(), 1, KnnWeighting::Binary).unwrap();
        assert_eq!(a.phi[[0, 1]], 1.0);
        assert_eq!(a.phi[[1, 2]], 1.0);
        assert_eq!(a.phi[[0, 2]], 0.0);
        assert!(a.is_symmetric());
    }

    #[test]
    fn knn_heat_kernel_weight() {
        let data = array![[0.0, 0.0], [0.0, 2.0]];
        let a = build_knn_adjacency(data.view(), 1, KnnWeighting::HeatKernel { rho: 2.0 }).unwrap();
        assert_abs_diff_eq!(a.phi[[0, 1]], (-2.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(a.phi[[0, 1]], 0.135335, epsilon = 1e-6);
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        // node 1 is equidistant from 0 and 2
        let data = array![[0.0], [1.0], [2.0], [50.0]];
        let a = build_knn_adjacency(data.view(), 1, KnnWeighting::Binary).unwrap();
        assert_eq!(a.phi[[1, 0]], 1.0);
        // 2 picks 1 (distance 1) so the or-rule still links them
        assert_eq!(a.phi[[1, 2]], 1.0);
        assert_eq!(a.phi[[3, 2]], 1.0);
        assert_eq!(a.phi[[3, 0]], 0.0);
    }

    #[test]
    fn knn_errors() {
        let data = array![[0.0], [1.0]];
        let err = build_knn_adjacency(data.view(), 2, KnnWeighting::Binary).unwrap_err();
        assert!(err.to_string().starts_with("too many neighbors"));
        assert!(
            build_knn_adjacency(data.view(), 1, KnnWeighting::HeatKernel { rho: 0.0 }).is_err()
        );
    }

    #[test]
    fn laplacian_examples() {
        let g = signed(&[0, 0, 1]);
        assert_eq!(g.degree, array![0., 0., -2.]);
        assert_eq!(
            g.laplacian,
            array![[0., -1., 1.], [-1., 0., 1.], [1., 1., -2.]]
        );

        let neg = Adjacency::custom(array![[0., -1.], [-1., 0.]]).unwrap();
        let g = build_laplacian(&neg, DegreeConvention::Signed).unwrap();
        assert_eq!(g.laplacian, array![[-1., 1.], [1., -1.]]);
        let ev = symmetric_eigenvalues(g.laplacian.view()).unwrap();
        assert_abs_diff_eq!(ev[0], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 0.0, epsilon = 1e-12);

        let g = build_laplacian(&neg, DegreeConvention::Absolute).unwrap();
        assert_eq!(g.laplacian, array![[1., 1.], [1., 1.]]);
        let ev = symmetric_eigenvalues(g.laplacian.view()).unwrap();
        assert_abs_diff_eq!(ev[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn laplacian_rejects_asymmetric() {
        let a = Adjacency::custom(array![[0., 1.], [0., 0.]]).unwrap();
        let err = build_laplacian(&a, DegreeConvention::Signed).unwrap_err();
        assert!(err.to_string().starts_with("adjacency not symmetric"));
    }

    #[test]
    fn smoothness_examples() {
        let h = array![[1., 1., 0.], [0., 0., 1.]];
        let a = build_signed_adjacency(&[0, 0, 1]).unwrap();
        assert_eq!(smoothness(h.view(), a.phi.view()).unwrap(), -8.0);
        assert_eq!(
            smoothness_via_trace(h.view(), &signed(&[0, 0, 1])).unwrap(),
            -8.0
        );

        let single = build_signed_adjacency(&[3]).unwrap();
        assert_eq!(
            smoothness(array![[0.7], [0.1]].view(), single.phi.view()).unwrap(),
            0.0
        );

        let same = Array2::from_elem((3, 4), 0.25);
        let a = build_signed_adjacency(&[0, 1, 1, 2]).unwrap();
        assert_eq!(smoothness(same.view(), a.phi.view()).unwrap(), 0.0);

        let zero = Array2::<f64>::zeros((2, 3));
        assert_eq!(
            smoothness_via_trace(zero.view(), &signed(&[0, 1, 0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn smoothness_errors() {
        let h = Array2::<f64>::zeros((2, 3));
        let a = build_signed_adjacency(&[0, 1]).unwrap();
        assert!(smoothness(h.view(), a.phi.view()).is_err());
        let err = smoothness_via_trace(h.view(), &absolute(&[0, 1, 1])).unwrap_err();
        assert_eq!(err.to_string(), "identity holds for signed degrees only");
    }

    #[test]
    fn patch_examples() {
        let p = build_patch(&signed(&[0, 1]), 0).unwrap();
        assert_eq!(p.matrix, array![[-1., 1.], [1., 1.]]);
        assert_eq!(p.ordering, vec![0, 1]);

        let p = build_patch(&signed(&[4]), 0).unwrap();
        assert_eq!(p.matrix, array![[0.]]);

        let p = build_patch(&signed(&[0, 0, 1]), 2).unwrap();
        assert_eq!(p.ordering, vec![2, 0, 1]);
        assert_eq!(p.matrix, array![[-2., 1., 1.], [1., 1., 0.], [1., 0., 1.]]);

        assert!(build_patch(&signed(&[0, 1]), 2).is_err());
    }

    #[test]
    fn aligned_patches_examples() {
        let total = align_patches(&signed(&[0, 1])).unwrap();
        assert_eq!(total, array![[0., 2.], [2., 0.]]);

        let g = signed(&[0, 0]);
        assert_eq!(align_patches(&g).unwrap(), &g.laplacian * 2.0);

        let total = align_patches(&signed(&[0, 0, 1])).unwrap();
        assert_eq!(
            total,
            &signed(&[0, 0, 1]).laplacian + &absolute(&[0, 0, 1]).laplacian
        );

        assert!(align_patches(&absolute(&[0, 1])).is_err());
    }

    #[test]
    fn negative_pair_is_indefinite_under_signed_degrees() {
        let g = signed(&[0, 1]);
        let min = min_eigenvalue(g.laplacian.view()).unwrap();
        assert_abs_diff_eq!(min, -2.0, epsilon = 1e-9);
    }

    fn codes_and_labels(max_n: usize) -> impl Strategy<Value = (Array2<f64>, Vec<u8>)> {
        (1..=4usize, 1..=max_n).prop_flat_map(|(rows, n)| {
            (
                prop::collection::vec(-2.0..2.0f64, rows * n)
                    .prop_map(move |v| Array2::from_shape_vec((rows, n), v).unwrap()),
                prop::collection::vec(0u8..4, n),
            )
        })
    }

    proptest! {
        #[test]
        fn signed_adjacency_symmetric_zero_diagonal(labels in prop::collection::vec(0u8..6, 1..=50)) {
            let a = build_signed_adjacency(&labels).unwrap();
            prop_assert!(a.is_symmetric());
            for i in 0..labels.len() {
                prop_assert_eq!(a.phi[[i, i]], 0.0);
            }
        }

        #[test]
        fn trace_identity((h, labels) in codes_and_labels(12)) {
            let a = build_signed_adjacency(&labels).unwrap();
            let direct = smoothness(h.view(), a.phi.view()).unwrap();
            let g = build_laplacian(&a, DegreeConvention::Signed).unwrap();
            let trace = smoothness_via_trace(h.view(), &g).unwrap();
            let scale = direct.abs().max(trace.abs()).max(1e-300);
            prop_assert!((direct - trace).abs() <= 1e-9 * scale, "{direct} vs {trace}");
        }

        #[test]
        fn absolute_laplacian_is_psd(labels in prop::collection::vec(0u8..4, 1..=20)) {
            let min = min_eigenvalue(absolute(&labels).laplacian.view()).unwrap();
            prop_assert!(min >= -1e-9, "min eigenvalue {min}");
        }

        #[test]
        fn laplacian_is_diag_minus_phi(labels in prop::collection::vec(0u8..3, 1..=10)) {
            for g in [signed(&labels), absolute(&labels)] {
                let n = labels.len();
                for i in 0..n {
                    for j in 0..n {
                        let d = if i == j { g.degree[i] } else { 0.0 };
                        prop_assert_eq!(g.laplacian[[i, j]], d - g.adjacency.phi[[i, j]]);
                        prop_assert_eq!(g.laplacian[[i, j]], g.laplacian[[j, i]]);
                    }
                }
            }
        }

        #[test]
        fn patches_align_to_laplacian_sum(labels in prop::collection::vec(0u8..3, 1..=10)) {
            let total = align_patches(&signed(&labels)).unwrap();
            let expect = &signed(&labels).laplacian + &absolute(&labels).laplacian;
            for (a, b) in total.iter().zip(expect.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn moving_codes_closer_follows_edge_sign(
            pair in prop::collection::vec(-2.0..2.0f64, 6),
            same_class in any::<bool>(),
            t in 0.05..0.95f64,
        ) {
            let h = Array2::from_shape_vec((3, 2), pair).unwrap();
            let diff = &h.column(0) - &h.column(1);
            prop_assume!(diff.iter().any(|d| d.abs() > 1e-3));
            let labels = if same_class { [0u8, 0] } else { [0u8, 1] };
            let a = build_signed_adjacency(&labels).unwrap();
            let mut moved = h.clone();
            moved.column_mut(1).scaled_add(t, &diff);
            let before = smoothness(h.view(), a.phi.view()).unwrap();
            let after = smoothness(moved.view(), a.phi.view()).unwrap();
            if same_class {
                prop_assert!(after < before);
            } else {
                prop_assert!(after > before);
            }
        }
    }
}
