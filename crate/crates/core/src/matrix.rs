//! SDDM matrices stored by their standard splitting `M = D - A`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::WeightedGraph;

/// Relative tolerance used for symmetry and dominance checks.
pub const STRUCTURE_TOL: f64 = 1e-12;

/// An SDDM matrix `M = D - A` with positive diagonal `D` and a symmetric,
/// non-negative, zero-diagonal `A` stored row by row.
///
/// Rows hold `(column, A_kj)` pairs sorted by column with every stored
/// value strictly positive. Node `k` of a distributed solver only ever sees
/// `diag[k]` and `rows[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMatrix {
    diag: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SplitMatrix {
    pub fn new(diag: Vec<f64>, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = diag.len();
        if rows.len() != n {
            return Err(Error::Structure(format!(
                "{} diagonal entries but {} rows",
                n,
                rows.len()
            )));
        }
        if let Some(k) = diag.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Structure(format!(
                "diagonal entry {k} is {} (must be positive)",
                diag[k]
            )));
        }
        let mut clean = Vec::with_capacity(n);
        for (k, mut row) in rows.into_iter().enumerate() {
            row.retain(|&(_, v)| v != 0.0);
            row.sort_by_key(|&(j, _)| j);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::Structure(format!(
                        "row {k} repeats column {}",
                        w[0].0
                    )));
                }
            }
            for &(j, v) in &row {
                if j >= n {
                    return Err(Error::Structure(format!("row {k} has column {j} >= {n}")));
                }
                if j == k {
                    return Err(Error::Structure(format!(
                        "row {k} stores a diagonal entry in A"
                    )));
                }
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Structure(format!(
                        "A[{k},{j}] = {v}; off-diagonal part must be non-negative"
                    )));
                }
            }
            clean.push(row);
        }
        let m = Self { diag, rows: clean };
        m.check_symmetric()?;
        Ok(m)
    }

    fn check_symmetric(&self) -> Result<()> {
        for (k, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                let back = self.entry_a(j, k);
                if (back - v).abs() > STRUCTURE_TOL * v.abs().max(back.abs()) {
                    return Err(Error::Structure(format!(
                        "A is not symmetric: A[{k},{j}] = {v} but A[{j},{k}] = {back}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Splits a dense symmetric matrix. Positive off-diagonal entries cannot
    /// be represented and are rejected.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        check_square_symmetric(m)?;
        let n = m.nrows();
        let diag = (0..n).map(|i| m[(i, i)]).collect();
        let mut rows = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i != j && m[(i, j)] != 0.0 {
                    if m[(i, j)] > 0.0 {
                        return Err(Error::Structure(format!(
                            "positive off-diagonal entry M[{i},{j}] = {}",
                            m[(i, j)]
                        )));
                    }
                    rows[i].push((j, -m[(i, j)]));
                }
            }
        }
        Self::new(diag, rows)
    }

    /// Builds from `(i, j, M_ij)` triplets of the full matrix `M`; duplicate
    /// entries are summed.
    pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut diag = vec![0.0; n];
        let mut acc: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
        for &(i, j, v) in entries {
            if i >= n || j >= n {
                return Err(Error::Structure(format!(
                    "entry ({i}, {j}) outside {n}x{n}"
                )));
            }
            if i == j {
                diag[i] += v;
            } else {
                *acc[i].entry(j).or_insert(0.0) += v;
            }
        }
        let mut rows = Vec::with_capacity(n);
        for (i, row) in acc.into_iter().enumerate() {
            let mut r = Vec::with_capacity(row.len());
            for (j, v) in row {
                if v > 0.0 {
                    return Err(Error::Structure(format!(
                        "positive off-diagonal entry M[{i},{j}] = {v}"
                    )));
                }
                r.push((j, -v));
            }
            rows.push(r);
        }
        Self::new(diag, rows)
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Off-diagonal entries `(j, A_kj)` of row `k`.
    pub fn row(&self, k: usize) -> &[(usize, f64)] {
        &self.rows[k]
    }

    pub fn nnz_offdiag(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn entry_a(&self, i: usize, j: usize) -> f64 {
        match self.rows[i].binary_search_by_key(&j, |&(c, _)| c) {
            Ok(pos) => self.rows[i][pos].1,
            Err(_) => 0.0,
        }
    }

    /// `D_kk - sum_j A_kj`; zero in every row of a graph Laplacian.
    pub fn slack(&self, k: usize) -> f64 {
        self.diag[k] - self.rows[k].iter().map(|&(_, v)| v).sum::<f64>()
    }

    pub fn has_offdiag(&self) -> bool {
        self.rows.iter().any(|r| !r.is_empty())
    }

    /// `M x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(k, row)| self.diag[k] * x[k] - row.iter().map(|&(j, v)| v * x[j]).sum::<f64>())
            .collect()
    }

    /// `A x`
    pub fn apply_offdiag(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `A D^{-1} x`
    pub fn apply_a_dinv(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, v)| v * x[j] / self.diag[j]).sum())
            .collect()
    }

    /// `D^{-1} A x`
    pub fn apply_dinv_a(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(k, row)| row.iter().map(|&(j, v)| v * x[j]).sum::<f64>() / self.diag[k])
            .collect()
    }

    /// `x^T M x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.apply(x))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for k in 0..n {
            m[(k, k)] = self.diag[k];
            for &(j, v) in &self.rows[k] {
                m[(k, j)] = -v;
            }
        }
        m
    }

    pub fn diag_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.diag))
    }

    pub fn offdiag_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut a = DMatrix::zeros(n, n);
        for k in 0..n {
            for &(j, v) in &self.rows[k] {
                a[(k, j)] = v;
            }
        }
        a
    }

    /// The graph whose edges are the non-zero off-diagonal entries.
    pub fn support_graph(&self) -> WeightedGraph {
        let edges = self
            .rows
            .iter()
            .enumerate()
            .flat_map(|(k, row)| {
                row.iter()
                    .filter(move |&&(j, _)| j > k)
                    .map(move |&(j, v)| (k, j, v))
            })
            .collect();
        WeightedGraph::new(self.dim(), edges).expect("symmetric split matrix has a valid support")
    }

    pub fn sddm_report(&self) -> SddmReport {
        let violating_rows = (0..self.dim())
            .filter(|&k| {
                let off: f64 = self.rows[k].iter().map(|&(_, v)| v).sum();
                self.diag[k] < off - STRUCTURE_TOL * (self.diag[k] + off)
            })
            .collect::<Vec<_>>();
        let strict_rows = (0..self.dim())
            .filter(|&k| self.slack(k) > STRUCTURE_TOL * self.diag[k])
            .count();
        SddmReport {
            is_sddm: violating_rows.is_empty(),
            violating_rows,
            positive_offdiag: Vec::new(),
            strict_rows,
        }
    }

    pub fn is_sddm(&self) -> bool {
        self.sddm_report().is_sddm
    }
}

/// Result of an SDDM check. Row indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SddmReport {
    pub is_sddm: bool,
    /// Rows where `M_ii < -sum_{j != i} M_ij`.
    pub violating_rows: Vec<usize>,
    /// Off-diagonal positions holding a positive value.
    pub positive_offdiag: Vec<(usize, usize)>,
    /// Rows with strict dominance.
    pub strict_rows: usize,
}

fn check_square_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Structure(format!(
            "matrix is {}x{}, not square",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > STRUCTURE_TOL * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::Structure(format!(
                    "matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
        }
    }
    Ok(())
}

/// SDDM test for a dense matrix: symmetric, non-positive off-diagonals, and
/// `M_ii >= -sum_{j != i} M_ij` in every row.
pub fn is_sddm(m: &DMatrix<f64>) -> Result<SddmReport> {
    check_square_symmetric(m)?;
    let n = m.nrows();
    let mut violating_rows = Vec::new();
    let mut positive_offdiag = Vec::new();
    let mut strict_rows = 0;
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            if m[(i, j)] > 0.0 {
                positive_offdiag.push((i, j));
            }
            off += m[(i, j)].abs();
        }
        let d = m[(i, i)];
        if d < off - STRUCTURE_TOL * (d.abs() + off) {
            violating_rows.push(i);
        } else if d - off > STRUCTURE_TOL * d.abs() {
            strict_rows += 1;
        }
    }
    Ok(SddmReport {
        is_sddm: violating_rows.is_empty() && positive_offdiag.is_empty(),
        violating_rows,
        positive_offdiag,
        strict_rows,
    })
}

/// Weighted graph Laplacian: `D_ii` is the weighted degree, `A` the weighted
/// adjacency. Every row is dominant with equality.
pub fn laplacian(graph: &WeightedGraph) -> SplitMatrix {
    let n = graph.node_count();
    let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|k| graph.neighbors(k).to_vec()).collect();
    let diag = rows
        .iter()
        .map(|r| r.iter().map(|&(_, w)| w).sum())
        .collect();
    SplitMatrix { diag, rows }
}

/// A Laplacian with one row and column removed, plus the map back to the
/// original coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grounded {
    pub matrix: SplitMatrix,
    /// The removed coordinate.
    pub node: usize,
    /// `kept[r]` is the original index of reduced coordinate `r`.
    pub kept: Vec<usize>,
    n: usize,
}

impl Grounded {
    pub fn original_dim(&self) -> usize {
        self.n
    }

    /// Drops the grounded coordinate.
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        self.kept.iter().map(|&i| v[i]).collect()
    }

    /// Re-inserts the grounded coordinate with value 0.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (r, &i) in self.kept.iter().enumerate() {
            out[i] = x[r];
        }
        out
    }

    /// Embeds and then shifts to zero mean.
    pub fn embed_mean_zero(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.embed(x);
        let mean = out.iter().sum::<f64>() / self.n as f64;
        out.iter_mut().for_each(|v| *v -= mean);
        out
    }
}

/// Removes row and column `g` from a connected Laplacian. The result is a
/// nonsingular SDDM matrix whose rows adjacent to `g` are strictly dominant.
pub fn ground(lap: &SplitMatrix, g: usize) -> Result<Grounded> {
    let n = lap.dim();
    if n < 2 {
        return Err(Error::param("grounding needs at least two nodes"));
    }
    if g >= n {
        return Err(Error::param(format!("grounding node {g} outside 0..{n}")));
    }
    lap.support_graph().validate_connected()?;
    let kept: Vec<usize> = (0..n).filter(|&i| i != g).collect();
    let mut index = vec![usize::MAX; n];
    for (r, &i) in kept.iter().enumerate() {
        index[i] = r;
    }
    let diag = kept.iter().map(|&i| lap.diag[i]).collect();
    let rows = kept
        .iter()
        .map(|&i| {
            lap.rows[i]
                .iter()
                .filter(|&&(j, _)| j != g)
                .map(|&(j, v)| (index[j], v))
                .collect()
        })
        .collect();
    Ok(Grounded {
        matrix: SplitMatrix { diag, rows },
        node: g,
        kept,
        n,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Removes the mean (the component along the all-ones vector).
pub fn project_out_ones(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

/// Entries uniform in `[-1, 1)` from a ChaCha8 stream on `seed`.
pub fn seeded_rhs(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn triangle() -> WeightedGraph {
        WeightedGraph::new(3, vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap()
    }

    #[test]
    fn single_edge_laplacian() {
        let g = WeightedGraph::new(2, vec![(0, 1, 1.0)]).unwrap();
        let l = laplacian(&g);
        assert_eq!(l.diag(), &[1.0, 1.0]);
        assert_eq!(l.offdiag_dense(), dmatrix![0.0, 1.0; 1.0, 0.0]);
    }

    #[test]
    fn triangle_laplacian() {
        let l = laplacian(&triangle());
        assert_eq!(l.diag(), &[2.0, 2.0, 2.0]);
        assert_eq!(l.nnz_offdiag(), 6);
        assert!(l.is_sddm());
        assert_eq!(l.sddm_report().strict_rows, 0);
    }

    #[test]
    fn sddm_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!(is_sddm(&id).unwrap().is_sddm);
        let bad = dmatrix![1.0, -2.0; -2.0, 1.0];
        let rep = is_sddm(&bad).unwrap();
        assert!(!rep.is_sddm);
        assert_eq!(rep.violating_rows, vec![0, 1]);
        assert!(
            is_sddm(&dmatrix![1.0, 1.0; 1.0, 3.0])
                .unwrap()
                .positive_offdiag
                .len()
                == 2
        );
    }

    #[test]
    fn structural_errors() {
        let nonsquare = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(is_sddm(&nonsquare), Err(Error::Structure(_))));
        let asym = dmatrix![1.0, -0.5; -0.2, 1.0];
        assert!(matches!(is_sddm(&asym), Err(Error::Structure(_))));
        assert!(SplitMatrix::new(vec![1.0, 0.0], vec![vec![], vec![]]).is_err());
        assert!(SplitMatrix::new(vec![1.0, 1.0], vec![vec![(1, 0.5)], vec![]]).is_err());
    }

    #[test]
    fn grounding_examples() {
        let g = WeightedGraph::new(2, vec![(0, 1, 1.0)]).unwrap();
        let gr = ground(&laplacian(&g), 1).unwrap();
        assert_eq!(gr.matrix.to_dense(), dmatrix![1.0]);

        let gr = ground(&laplacian(&triangle()), 2).unwrap();
        assert_eq!(gr.matrix.to_dense(), dmatrix![2.0, -1.0; -1.0, 2.0]);
        assert_eq!(gr.matrix.sddm_report().strict_rows, 2);
        assert_eq!(gr.embed(&[3.0, 4.0]), vec![3.0, 4.0, 0.0]);
        assert_eq!(gr.restrict(&[3.0, 4.0, 5.0]), vec![3.0, 4.0]);
    }

    #[test]
    fn grounding_disconnected_fails() {
        let g = WeightedGraph::new(4, vec![(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        assert!(matches!(
            ground(&laplacian(&g), 0),
            Err(Error::Disconnected { .. })
        ));
    }

    #[test]
    fn products_match_dense() {
        let m = SplitMatrix::from_dense(&dmatrix![3.0, -1.0, 0.0; -1.0, 2.0, -0.5; 0.0, -0.5, 4.0])
            .unwrap();
        let x = [1.0, -2.0, 0.5];
        let dense = m.to_dense() * nalgebra::DVector::from_column_slice(&x);
        let ours = m.apply(&x);
        for i in 0..3 {
            assert!((dense[i] - ours[i]).abs() < 1e-14);
        }
        let d_inv = m.diag_dense().try_inverse().unwrap();
        let a = m.offdiag_dense();
        let ad = &a * &d_inv * nalgebra::DVector::from_column_slice(&x);
        let da = &d_inv * &a * nalgebra::DVector::from_column_slice(&x);
        let (ad2, da2) = (m.apply_a_dinv(&x), m.apply_dinv_a(&x));
        for i in 0..3 {
            assert!((ad[i] - ad2[i]).abs() < 1e-14);
            assert!((da[i] - da2[i]).abs() < 1e-14);
        }
    }
}
