//! Binary incidence matrices and the node-side / hyperedge-side operators
//! that define incidence-space geometry.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, HedgeError, Result};

/// Real-valued relaxed incidence state, `n x m`.
pub type RelaxedState = DMatrix<f64>;

/// Structural constraints checked when an [`IncidenceMatrix`] is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Constraints {
    /// Rows that sum to zero are accepted.
    pub allow_isolated: bool,
    /// Columns that sum to zero are accepted. Only projected samples and
    /// baseline outputs use this; they report empty hyperedges instead of
    /// repairing them.
    pub allow_empty_edges: bool,
}

impl Constraints {
    pub const STRICT: Constraints = Constraints {
        allow_isolated: false,
        allow_empty_edges: false,
    };
    pub const ALLOW_ISOLATED: Constraints = Constraints {
        allow_isolated: true,
        allow_empty_edges: false,
    };
    pub const RELAXED: Constraints = Constraints {
        allow_isolated: true,
        allow_empty_edges: true,
    };
}

/// Binary `n x m` node-hyperedge membership matrix, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IncidenceMatrix {
    n: usize,
    m: usize,
    data: Vec<u8>,
}

impl IncidenceMatrix {
    /// Strict constructor: no empty hyperedges and no isolated nodes.
    pub fn new(n: usize, m: usize, data: Vec<u8>) -> Result<Self> {
        Self::with_constraints(n, m, data, Constraints::STRICT)
    }

    pub fn with_constraints(
        n: usize,
        m: usize,
        data: Vec<u8>,
        constraints: Constraints,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(HedgeError::InvalidIncidence(format!(
                "shape {n}x{m} must be non-empty"
            )));
        }
        if data.len() != n * m {
            return Err(HedgeError::InvalidIncidence(format!(
                "expected {} entries, got {}",
                n * m,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(HedgeError::InvalidIncidence(format!(
                "entry {bad} is not binary"
            )));
        }
        let h = IncidenceMatrix { n, m, data };
        if !constraints.allow_empty_edges {
            if let Some(&e) = h.empty_hyperedges().first() {
                return Err(HedgeError::InvalidIncidence(format!(
                    "hyperedge {e} is empty"
                )));
            }
        }
        if !constraints.allow_isolated {
            if let Some(&v) = h.isolated_nodes().first() {
                return Err(HedgeError::InvalidIncidence(format!(
                    "node {v} is isolated (allow_isolated not set)"
                )));
            }
        }
        Ok(h)
    }

    /// Builds from nested rows, strict constraints.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        Self::from_rows_with(rows, Constraints::STRICT)
    }

    pub fn from_rows_with<R: AsRef<[u8]>>(rows: &[R], constraints: Constraints) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n * m);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != m {
                return Err(HedgeError::InvalidIncidence(format!(
                    "row {i} has {} entries, expected {m}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::with_constraints(n, m, data, constraints)
    }

    /// Builds from 0-indexed `(row, col)` incidence pairs.
    pub fn from_pairs(
        n: usize,
        m: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
        constraints: Constraints,
    ) -> Result<Self> {
        let mut data = vec![0u8; n * m];
        for (r, c) in pairs {
            if r >= n || c >= m {
                return Err(HedgeError::InvalidIncidence(format!(
                    "pair ({r}, {c}) out of range for {n}x{m}"
                )));
            }
            data[r * m + c] = 1;
        }
        Self::with_constraints(n, m, data, constraints)
    }

    /// Thresholds a real matrix entrywise (`>= threshold` maps to 1).
    pub fn from_threshold(x: &DMatrix<f64>, threshold: f64) -> Self {
        let (n, m) = x.shape();
        let mut data = vec![0u8; n * m];
        for i in 0..n {
            for j in 0..m {
                data[i * m + j] = u8::from(x[(i, j)] >= threshold);
            }
        }
        IncidenceMatrix { n, m, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.m + j] == 1
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.m + j] = u8::from(v);
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.n * self.m) as f64
    }

    /// Incidence pairs in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = self.m;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(move |(k, _)| (k / m, k % m))
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.m, |i, j| f64::from(self.data[i * self.m + j]))
    }

    pub fn empty_hyperedges(&self) -> Vec<usize> {
        (0..self.m)
            .filter(|&j| (0..self.n).all(|i| !self.get(i, j)))
            .collect()
    }

    pub fn isolated_nodes(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| (0..self.m).all(|j| !self.get(i, j)))
            .collect()
    }

    /// Returns `P H Q^T` where `P[i, rows[i]] = 1` and `Q[j, cols[j]] = 1`,
    /// i.e. entry `(i, j)` of the result is `H[rows[i], cols[j]]`.
    pub fn permuted(&self, rows: &[usize], cols: &[usize]) -> Self {
        assert_eq!(rows.len(), self.n);
        assert_eq!(cols.len(), self.m);
        self.select(rows, cols)
    }

    /// The `rows.len() x cols.len()` matrix with entry `(i, j)` equal to
    /// `H[rows[i], cols[j]]`. No structural constraints are checked.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        assert!(!rows.is_empty() && !cols.is_empty());
        let m = cols.len();
        let mut data = vec![0u8; rows.len() * m];
        for (i, &ri) in rows.iter().enumerate() {
            for (j, &cj) in cols.iter().enumerate() {
                data[i * m + j] = self.data[ri * self.m + cj];
            }
        }
        IncidenceMatrix {
            n: rows.len(),
            m,
            data,
        }
    }

    /// Overlap counts `(H^T H)_{jk}` for `j < k`, in lexicographic pair order.
    pub fn pairwise_intersections(&self) -> Vec<usize> {
        let cols: Vec<Vec<usize>> = (0..self.m)
            .map(|j| (0..self.n).filter(|&i| self.get(i, j)).collect())
            .collect();
        let mut out = Vec::with_capacity(self.m * self.m.saturating_sub(1) / 2);
        for j in 0..self.m {
            for k in (j + 1)..self.m {
                out.push(cols[j].iter().filter(|&&v| self.get(v, k)).count());
            }
        }
        out
    }
}

/// Applies the same row/column relabeling to a real matrix; see
/// [`IncidenceMatrix::permuted`].
pub fn permute_matrix(x: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(rows[i], cols[j])])
}

/// Node-degree and hyperedge-size vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeProfile {
    pub d_v: Vec<usize>,
    pub d_e: Vec<usize>,
}

impl DegreeProfile {
    pub fn total(&self) -> usize {
        self.d_v.iter().sum()
    }
}

pub fn degree_profile(h: &IncidenceMatrix) -> DegreeProfile {
    let mut d_v = vec![0usize; h.n];
    let mut d_e = vec![0usize; h.m];
    for (i, j) in h.pairs() {
        d_v[i] += 1;
        d_e[j] += 1;
    }
    DegreeProfile { d_v, d_e }
}

/// `I_n - D_V^{-1/2} H D_E^{-1} H^T D_V^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLaplacian {
    pub matrix: DMatrix<f64>,
}

/// `I_m - D_ov^{-1/2} A_E D_ov^{-1/2}` with `A_E = offdiag(D_E^{-1/2} H^T H D_E^{-1/2})`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLaplacian {
    pub matrix: DMatrix<f64>,
    pub overlap: DMatrix<f64>,
    pub ov_degrees: DVector<f64>,
}

/// Entrywise inverse square root with the zero-to-zero convention.
fn inv_sqrt(x: f64) -> f64 {
    if x > 0.0 {
        1.0 / x.sqrt()
    } else {
        0.0
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

pub fn node_laplacian(h: &IncidenceMatrix) -> NodeLaplacian {
    let deg = degree_profile(h);
    let n = h.n;
    let hm = h.to_matrix();
    // H D_E^{-1}
    let mut hd = hm.clone();
    for (j, &d) in deg.d_e.iter().enumerate() {
        let w = if d > 0 { 1.0 / d as f64 } else { 0.0 };
        hd.column_mut(j).scale_mut(w);
    }
    let mut smooth = &hd * hm.transpose();
    let dv: Vec<f64> = deg.d_v.iter().map(|&d| inv_sqrt(d as f64)).collect();
    for u in 0..n {
        for v in 0..n {
            smooth[(u, v)] *= dv[u] * dv[v];
        }
    }
    let mut matrix = DMatrix::identity(n, n) - smooth;
    symmetrize(&mut matrix);
    NodeLaplacian { matrix }
}

pub fn edge_laplacian(h: &IncidenceMatrix) -> EdgeLaplacian {
    let deg = degree_profile(h);
    let m = h.m;
    let hm = h.to_matrix();
    let gram = hm.transpose() * &hm;
    let de: Vec<f64> = deg.d_e.iter().map(|&d| inv_sqrt(d as f64)).collect();
    let mut overlap = DMatrix::zeros(m, m);
    for j in 0..m {
        for k in 0..m {
            if j != k {
                overlap[(j, k)] = gram[(j, k)] * de[j] * de[k];
            }
        }
    }
    symmetrize(&mut overlap);
    let ov_degrees = DVector::from_fn(m, |j, _| overlap.row(j).sum());
    let dov: Vec<f64> = ov_degrees.iter().map(|&d| inv_sqrt(d)).collect();
    let mut matrix = DMatrix::identity(m, m);
    for j in 0..m {
        for k in 0..m {
            matrix[(j, k)] -= dov[j] * overlap[(j, k)] * dov[k];
        }
    }
    symmetrize(&mut matrix);
    EdgeLaplacian {
        matrix,
        overlap,
        ov_degrees,
    }
}

/// Which sides of the two-sided heat operator are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatTerms {
    /// `L_V X + X L_E`.
    #[default]
    Both,
    /// `L_V X`.
    NodeOnly,
    /// `X L_E`.
    EdgeOnly,
    /// No heat term; the forward process is a scheduled OU.
    Off,
}

impl HeatTerms {
    pub fn node(self) -> bool {
        matches!(self, HeatTerms::Both | HeatTerms::NodeOnly)
    }

    pub fn edge(self) -> bool {
        matches!(self, HeatTerms::Both | HeatTerms::EdgeOnly)
    }
}

/// Two-sided heat operator `A_H(X) = L_V X + X L_E`.
pub fn heat_apply(lv: &NodeLaplacian, le: &EdgeLaplacian, x: &RelaxedState) -> Result<RelaxedState> {
    heat_apply_masked(lv, le, x, HeatTerms::Both)
}

pub fn heat_apply_masked(
    lv: &NodeLaplacian,
    le: &EdgeLaplacian,
    x: &RelaxedState,
    terms: HeatTerms,
) -> Result<RelaxedState> {
    let n = lv.matrix.nrows();
    let m = le.matrix.nrows();
    if x.shape() != (n, m) {
        return Err(shape_err((n, m), x.shape()));
    }
    let mut out = DMatrix::zeros(n, m);
    if terms.node() {
        out += &lv.matrix * x;
    }
    if terms.edge() {
        out += x * &le.matrix;
    }
    Ok(out)
}
