//! Reverse-time generation: Gaussian base draw, Euler-Maruyama integration of
//! the reverse SDE and entrywise binary projection.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::forward::{conditional_reverse_drift, DiffusionConfig, HypergraphModes};
use crate::incidence::{IncidenceMatrix, RelaxedState};
use crate::net::DriftNet;
use crate::rng::named_stream;

/// Entries within this distance of 0 or 1 count as saturated.
pub const SATURATION_BAND: f64 = 0.1;

/// A reverse-time drift field `u(X, s)`, with `s` the forward time.
pub trait ReverseDrift: Sync {
    fn drift(&self, x: &RelaxedState, s: f64) -> Result<RelaxedState>;
}

impl ReverseDrift for DriftNet {
    fn drift(&self, x: &RelaxedState, s: f64) -> Result<RelaxedState> {
        self.forward(x, s)
    }
}

/// Always zero.
pub struct ZeroDrift;

impl ReverseDrift for ZeroDrift {
    fn drift(&self, x: &RelaxedState, _s: f64) -> Result<RelaxedState> {
        Ok(DMatrix::zeros(x.nrows(), x.ncols()))
    }
}

/// The exact conditional reverse drift of one hypergraph.
pub struct ExactConditionalDrift<'a> {
    pub cfg: &'a DiffusionConfig,
    pub modes: &'a HypergraphModes,
}

impl ReverseDrift for ExactConditionalDrift<'_> {
    fn drift(&self, x: &RelaxedState, s: f64) -> Result<RelaxedState> {
        conditional_reverse_drift(self.cfg, self.modes, x, s)
    }
}

impl<F> ReverseDrift for F
where
    F: Fn(&RelaxedState, f64) -> Result<RelaxedState> + Sync,
{
    fn drift(&self, x: &RelaxedState, s: f64) -> Result<RelaxedState> {
        self(x, s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Number of uniform reverse steps `K`.
    pub steps: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 256,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(HedgeError::InvalidConfig("steps must be at least 1".into()));
        }
        if !self.threshold.is_finite() {
            return Err(HedgeError::InvalidConfig("threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Draw from `N(M0, tau / gamma I)`.
pub fn init_base<R: Rng + ?Sized>(cfg: &DiffusionConfig, rng: &mut R) -> RelaxedState {
    let sd = (cfg.tau / cfg.gamma).sqrt();
    cfg.m0.map(|mu| {
        let z: f64 = rng.sample(StandardNormal);
        mu + sd * z
    })
}

/// Projected matrix and its saturation diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub matrix: IncidenceMatrix,
    /// Fraction of entries within [`SATURATION_BAND`] of `{0, 1}`.
    pub saturation: f64,
}

pub fn saturation_fraction(y: &RelaxedState) -> f64 {
    let hits = y
        .iter()
        .filter(|&&v| v.abs() <= SATURATION_BAND || (v - 1.0).abs() <= SATURATION_BAND)
        .count();
    hits as f64 / y.len() as f64
}

/// Entrywise `1{Y >= threshold}`. Empty hyperedges and isolated nodes are
/// kept and visible through [`IncidenceMatrix::empty_hyperedges`].
pub fn project_binary(y: &RelaxedState, threshold: f64) -> Projection {
    Projection {
        matrix: IncidenceMatrix::from_threshold(y, threshold),
        saturation: saturation_fraction(y),
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub index: usize,
    pub relaxed: RelaxedState,
    pub projected: IncidenceMatrix,
    pub saturation: f64,
    pub empty_hyperedges: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub index: usize,
    pub step: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct GenerationOutput {
    /// Successful samples in index order.
    pub samples: Vec<GeneratedSample>,
    pub failures: Vec<GenerationFailure>,
}

impl GenerationOutput {
    pub fn matrices(&self) -> Vec<IncidenceMatrix> {
        self.samples.iter().map(|s| s.projected.clone()).collect()
    }

    pub fn mean_saturation(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.saturation).sum::<f64>() / self.samples.len() as f64
    }
}

/// Reverse-time grid point `s_k = S - t_k` and step `dt`.
fn reverse_time(cfg: &DiffusionConfig, steps: usize, k: usize) -> (f64, f64) {
    let dt = cfg.horizon / steps as f64;
    let s = (cfg.horizon - k as f64 * dt).max(0.0);
    (s, dt)
}

/// Integrates one reverse path from its base draw; returns the terminal state
/// or the index of the step that produced a non-finite state.
pub fn integrate_path<D: ReverseDrift + ?Sized>(
    drift: &D,
    cfg: &DiffusionConfig,
    sc: &SampleConfig,
    index: usize,
) -> std::result::Result<RelaxedState, GenerationFailure> {
    let fail = |step: usize, message: String| GenerationFailure {
        index,
        step,
        message,
    };
    let mut y = init_base(cfg, &mut named_stream(sc.seed, "base", &[index as u64]));
    for k in 0..sc.steps {
        let (s, dt) = reverse_time(cfg, sc.steps, k);
        let u = drift.drift(&y, s).map_err(|e| fail(k, e.to_string()))?;
        let (_, beta) = cfg.schedule.eval(s, cfg.horizon);
        let sd = (2.0 * cfg.tau * beta * dt).sqrt();
        let mut rng = named_stream(sc.seed, "step", &[index as u64, k as u64]);
        for (yv, &uv) in y.iter_mut().zip(u.iter()) {
            let z: f64 = rng.sample(StandardNormal);
            *yv += dt * uv + sd * z;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(fail(k, HedgeError::DriftBlowUp { step: k }.to_string()));
        }
    }
    Ok(y)
}

/// Generates `count` samples; failing samples are recorded, not fatal.
pub fn generate<D: ReverseDrift + ?Sized>(
    drift: &D,
    cfg: &DiffusionConfig,
    sc: &SampleConfig,
    count: usize,
) -> Result<GenerationOutput> {
    cfg.validate()?;
    sc.validate()?;
    let results: Vec<_> = (0..count)
        .into_par_iter()
        .map(|index| integrate_path(drift, cfg, sc, index))
        .collect();
    let mut out = GenerationOutput::default();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(relaxed) => {
                let p = project_binary(&relaxed, sc.threshold);
                out.samples.push(GeneratedSample {
                    index,
                    empty_hyperedges: p.matrix.empty_hyperedges(),
                    projected: p.matrix,
                    saturation: p.saturation,
                    relaxed,
                });
            }
            Err(f) => out.failures.push(f),
        }
    }
    Ok(out)
}

/// Fraction of projected entries that change between two thresholds.
pub fn threshold_flip_fraction(y: &RelaxedState, lo: f64, hi: f64) -> f64 {
    let flips = y.iter().filter(|&&v| v >= lo && v < hi).count();
    flips as f64 / y.len() as f64
}

/// Re-reads a projection as a relaxed state.
pub fn as_relaxed(h: &IncidenceMatrix) -> RelaxedState {
    h.to_matrix()
}
