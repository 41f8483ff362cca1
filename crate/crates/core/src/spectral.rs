//! Joint node/hyperedge eigenbasis and per-mode heat flow.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, HedgeError, Result};
use crate::incidence::{
    edge_laplacian, node_laplacian, EdgeLaplacian, HeatTerms, IncidenceMatrix, NodeLaplacian,
    RelaxedState,
};
use crate::linalg::symmetric_eigen;

/// Rates at or below this are treated as zero modes.
pub const ZERO_RATE: f64 = 1e-9;

/// `L_V = U diag(lambda) U^T`, `L_E = V diag(mu) V^T`.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub u: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub v: DMatrix<f64>,
    pub mu: DVector<f64>,
}

/// `rates[(i, j)] = lambda_i + mu_j`.
#[derive(Debug, Clone)]
pub struct ModeGrid {
    pub rates: DMatrix<f64>,
}

impl ModeGrid {
    /// Smallest strictly positive rate, `None` when every mode is a zero mode.
    pub fn spectral_gap(&self) -> Option<f64> {
        self.rates
            .iter()
            .copied()
            .filter(|&r| r > ZERO_RATE)
            .min_by(f64::total_cmp)
    }
}

pub fn eigendecompose(lv: &NodeLaplacian, le: &EdgeLaplacian) -> Result<SpectralBasis> {
    let node = symmetric_eigen(&lv.matrix)?;
    let edge = symmetric_eigen(&le.matrix)?;
    Ok(SpectralBasis {
        u: node.vectors,
        lambda: node.values.map(|x| x.max(0.0)),
        v: edge.vectors,
        mu: edge.values.map(|x| x.max(0.0)),
    })
}

impl SpectralBasis {
    pub fn from_incidence(h: &IncidenceMatrix) -> Result<Self> {
        eigendecompose(&node_laplacian(h), &edge_laplacian(h))
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn m(&self) -> usize {
        self.v.nrows()
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.shape() != (self.n(), self.m()) {
            return Err(shape_err((self.n(), self.m()), x.shape()));
        }
        Ok(())
    }

    /// `U^T X V`.
    pub fn to_modes(&self, x: &RelaxedState) -> Result<DMatrix<f64>> {
        self.check(x)?;
        Ok(self.u.tr_mul(x) * &self.v)
    }

    /// `U Y V^T`.
    pub fn from_modes(&self, y: &DMatrix<f64>) -> Result<RelaxedState> {
        self.check(y)?;
        Ok(&self.u * y * self.v.transpose())
    }

    /// Node eigenvalues with the masked side zeroed.
    pub fn node_rates(&self, terms: HeatTerms) -> DVector<f64> {
        if terms.node() {
            self.lambda.clone()
        } else {
            DVector::zeros(self.n())
        }
    }

    pub fn edge_rates(&self, terms: HeatTerms) -> DVector<f64> {
        if terms.edge() {
            self.mu.clone()
        } else {
            DVector::zeros(self.m())
        }
    }

    pub fn mode_grid(&self) -> ModeGrid {
        self.mode_grid_masked(HeatTerms::Both)
    }

    pub fn mode_grid_masked(&self, terms: HeatTerms) -> ModeGrid {
        let lam = self.node_rates(terms);
        let mu = self.edge_rates(terms);
        ModeGrid {
            rates: DMatrix::from_fn(self.n(), self.m(), |i, j| lam[i] + mu[j]),
        }
    }

    /// Projection onto the zero modes, `Pi_V X Pi_E`.
    pub fn zero_mode_projection(&self, x: &RelaxedState) -> Result<RelaxedState> {
        let grid = self.mode_grid();
        let mut modes = self.to_modes(x)?;
        for (y, &r) in modes.iter_mut().zip(grid.rates.iter()) {
            if r > ZERO_RATE {
                *y = 0.0;
            }
        }
        self.from_modes(&modes)
    }
}

/// Pure heat flow `e^{-s L_V} X0 e^{-s L_E}` evaluated per mode.
pub fn heat_kernel_state(basis: &SpectralBasis, x0: &RelaxedState, s: f64) -> Result<RelaxedState> {
    if !(s >= 0.0) {
        return Err(HedgeError::TimeOutOfRange {
            s,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    let mut modes = basis.to_modes(x0)?;
    for j in 0..basis.m() {
        for i in 0..basis.n() {
            modes[(i, j)] *= (-s * (basis.lambda[i] + basis.mu[j])).exp();
        }
    }
    basis.from_modes(&modes)
}
