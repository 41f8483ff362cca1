//! Scheduled heat-OU forward process: exact per-mode Gaussian moments,
//! forward sampling, conditional score and conditional drifts.
//!
//! Given `H`, the forward SDE
//!
//! ```text
//! dX = -alpha(s) A_H(X) ds - beta(s) gamma (X - M0) ds + sqrt(2 tau beta(s)) dW
//! ```
//!
//! decouples in the joint eigenbasis into `n * m` scalar linear SDEs with rate
//! `b_ij(s) = alpha(s) (lambda_i + mu_j) + beta(s) gamma`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, HedgeError, Result};
use crate::incidence::{
    edge_laplacian, heat_apply_masked, node_laplacian, EdgeLaplacian, HeatTerms, IncidenceMatrix,
    NodeLaplacian, RelaxedState,
};
use crate::quadrature::CompositeRule;
use crate::spectral::{eigendecompose, SpectralBasis};

/// Conditional variances at or below this make the score singular.
pub const VAR_FLOOR: f64 = 1e-12;
/// Score queries below `S_MIN_FRACTION * horizon` are rejected.
pub const S_MIN_FRACTION: f64 = 1e-3;
const PANEL_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `alpha = 1 - s/S`, `beta = s/S`.
    #[default]
    Linear,
    /// `beta = 3u^2 - 2u^3` with `u = s/S`.
    Smoothstep,
    /// `alpha = 0`, `beta = 1`: a time-homogeneous OU process. Does not
    /// satisfy the endpoint conditions; used for analytic checks.
    Constant,
}

impl ScheduleKind {
    /// `(alpha(s), beta(s))`, no range check.
    pub fn eval(self, s: f64, horizon: f64) -> (f64, f64) {
        match self {
            ScheduleKind::Linear => {
                let u = s / horizon;
                (1.0 - u, u)
            }
            ScheduleKind::Smoothstep => {
                let u = s / horizon;
                let b = u * u * (3.0 - 2.0 * u);
                (1.0 - b, b)
            }
            ScheduleKind::Constant => (0.0, 1.0),
        }
    }

    /// `(int_0^s alpha, int_0^s beta)` in closed form.
    pub fn cumulative(self, s: f64, horizon: f64) -> (f64, f64) {
        match self {
            ScheduleKind::Linear => {
                let b = s * s / (2.0 * horizon);
                (s - b, b)
            }
            ScheduleKind::Smoothstep => {
                let u = s / horizon;
                let b = horizon * (u * u * u - 0.5 * u * u * u * u);
                (s - b, b)
            }
            ScheduleKind::Constant => (0.0, s),
        }
    }
}

/// Forward-process parameters shared by every hypergraph of a shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    /// Horizon `S`.
    pub horizon: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Base mean `M0`, `n x m`.
    pub m0: DMatrix<f64>,
    pub schedule: ScheduleKind,
    /// Total Gauss-Legendre nodes on `[0, s]`, rounded up to whole 16-point panels.
    pub quad_points: usize,
    /// Active sides of the heat operator.
    #[serde(default)]
    pub heat: HeatTerms,
}

impl DiffusionConfig {
    /// Defaults calibrated to a training density `rho`: `S = 1`, `gamma = 12`,
    /// `tau = gamma rho (1 - rho)` and `M0 = rho * ones`.
    pub fn for_density(n: usize, m: usize, rho: f64) -> Self {
        let gamma = 12.0;
        Self {
            horizon: 1.0,
            gamma,
            tau: gamma * rho * (1.0 - rho),
            m0: DMatrix::from_element(n, m, rho),
            schedule: ScheduleKind::Linear,
            quad_points: 512,
            heat: HeatTerms::Both,
        }
    }

    /// Defaults from the pooled density of a training set.
    pub fn for_data(data: &[IncidenceMatrix]) -> Result<Self> {
        let first = data
            .first()
            .ok_or_else(|| HedgeError::Empty("training set".into()))?;
        let (n, m) = first.shape();
        let nnz: usize = data.iter().map(IncidenceMatrix::nnz).sum();
        let rho = nnz as f64 / (n * m * data.len()) as f64;
        Ok(Self::for_density(n, m, rho))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.m0.shape()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(HedgeError::InvalidConfig(msg.to_string()));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive and finite");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive and finite");
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("tau must be non-negative and finite");
        }
        if self.quad_points < 64 {
            return bad("quad_points must be at least 64");
        }
        if self.m0.is_empty() || self.m0.iter().any(|x| !x.is_finite()) {
            return bad("base mean must be non-empty and finite");
        }
        Ok(())
    }

    pub fn s_min(&self) -> f64 {
        S_MIN_FRACTION * self.horizon
    }

    fn check_time(&self, s: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&s) {
            return Err(HedgeError::TimeOutOfRange {
                s,
                lo: 0.0,
                hi: self.horizon,
            });
        }
        Ok(())
    }

    fn rule(&self) -> CompositeRule {
        CompositeRule::new(PANEL_POINTS, self.quad_points.div_ceil(PANEL_POINTS))
    }
}

/// `(alpha(s), beta(s))` for `s` in `[0, S]`.
pub fn schedule_eval(cfg: &DiffusionConfig, s: f64) -> Result<(f64, f64)> {
    cfg.check_time(s)?;
    Ok(cfg.schedule.eval(s, cfg.horizon))
}

/// Operators, eigenbasis and mode coordinates of one hypergraph.
#[derive(Debug, Clone)]
pub struct HypergraphModes {
    pub node: NodeLaplacian,
    pub edge: EdgeLaplacian,
    pub basis: SpectralBasis,
    /// `U^T H V`.
    pub data_modes: DMatrix<f64>,
    /// `U^T M0 V`.
    pub base_modes: DMatrix<f64>,
}

impl HypergraphModes {
    pub fn new(cfg: &DiffusionConfig, h: &IncidenceMatrix) -> Result<Self> {
        if cfg.shape() != h.shape() {
            return Err(shape_err(cfg.shape(), h.shape()));
        }
        let node = node_laplacian(h);
        let edge = edge_laplacian(h);
        let basis = eigendecompose(&node, &edge)?;
        let data_modes = basis.to_modes(&h.to_matrix())?;
        let base_modes = basis.to_modes(&cfg.m0)?;
        Ok(Self {
            node,
            edge,
            basis,
            data_modes,
            base_modes,
        })
    }

    pub fn heat(&self, x: &RelaxedState, terms: HeatTerms) -> Result<RelaxedState> {
        heat_apply_masked(&self.node, &self.edge, x, terms)
    }
}

/// Per-mode Gaussian law of `X_s` given `H`.
#[derive(Debug, Clone)]
pub struct ConditionalMoments {
    pub s: f64,
    pub horizon: f64,
    pub mean_modes: DMatrix<f64>,
    pub var_modes: DMatrix<f64>,
}

pub fn conditional_moments(
    cfg: &DiffusionConfig,
    modes: &HypergraphModes,
    s: f64,
) -> Result<ConditionalMoments> {
    cfg.check_time(s)?;
    let (n, m) = modes.data_modes.shape();
    if s == 0.0 {
        return Ok(ConditionalMoments {
            s,
            horizon: cfg.horizon,
            mean_modes: modes.data_modes.clone(),
            var_modes: DMatrix::zeros(n, m),
        });
    }
    let lam = modes.basis.node_rates(cfg.heat);
    let mu = modes.basis.edge_rates(cfg.heat);
    let (a_s, b_s) = cfg.schedule.cumulative(s, cfg.horizon);

    // drift integral: int beta(u) Phi(s,u) du; variance integral: int beta(u) Phi(s,u)^2 du
    let mut drift_int = DMatrix::<f64>::zeros(n, m);
    let mut var_int = DMatrix::<f64>::zeros(n, m);
    let mut e_lam = vec![0.0; n];
    let mut e_mu = vec![0.0; m];
    for (u, w) in cfg.rule().nodes_on(s) {
        let (_, beta) = cfg.schedule.eval(u, cfg.horizon);
        if beta == 0.0 {
            continue;
        }
        let (a_u, b_u) = cfg.schedule.cumulative(u, cfg.horizon);
        let da = (a_s - a_u).max(0.0);
        let ou = (-cfg.gamma * (b_s - b_u).max(0.0)).exp();
        for (e, &l) in e_lam.iter_mut().zip(lam.iter()) {
            *e = (-l * da).exp();
        }
        for (e, &r) in e_mu.iter_mut().zip(mu.iter()) {
            *e = (-r * da).exp();
        }
        let c1 = w * beta * ou;
        let c2 = w * beta * ou * ou;
        for j in 0..m {
            let ej = e_mu[j];
            let d_col = drift_int.column_mut(j);
            for (d, &ei) in d_col.into_iter().zip(&e_lam) {
                *d += c1 * ei * ej;
            }
            let v_col = var_int.column_mut(j);
            for (v, &ei) in v_col.into_iter().zip(&e_lam) {
                let f = ei * ej;
                *v += c2 * f * f;
            }
        }
    }
    let ou_s = (-cfg.gamma * b_s).exp();
    let mean_modes = DMatrix::from_fn(n, m, |i, j| {
        let decay = (-(lam[i] + mu[j]) * a_s).exp() * ou_s;
        decay * modes.data_modes[(i, j)] + cfg.gamma * modes.base_modes[(i, j)] * drift_int[(i, j)]
    });
    let var_modes = var_int * (2.0 * cfg.tau);
    Ok(ConditionalMoments {
        s,
        horizon: cfg.horizon,
        mean_modes,
        var_modes,
    })
}

/// Draws `X_s = from_modes(mean + sqrt(var) * xi)`.
pub fn sample_forward_state<R: Rng + ?Sized>(
    moments: &ConditionalMoments,
    basis: &SpectralBasis,
    rng: &mut R,
) -> Result<RelaxedState> {
    let (n, m) = moments.mean_modes.shape();
    let mut y = moments.mean_modes.clone();
    for j in 0..m {
        for i in 0..n {
            let xi: f64 = rng.sample(StandardNormal);
            y[(i, j)] += moments.var_modes[(i, j)].max(0.0).sqrt() * xi;
        }
    }
    basis.from_modes(&y)
}

/// `grad_X log p_{s|H}(X)`.
pub fn conditional_score(
    moments: &ConditionalMoments,
    basis: &SpectralBasis,
    x: &RelaxedState,
) -> Result<RelaxedState> {
    let s_min = S_MIN_FRACTION * moments.horizon;
    if moments.s < s_min {
        return Err(HedgeError::TimeOutOfRange {
            s: moments.s,
            lo: s_min,
            hi: moments.horizon,
        });
    }
    let mut y = basis.to_modes(x)?;
    for ((y, &mean), &var) in y
        .iter_mut()
        .zip(moments.mean_modes.iter())
        .zip(moments.var_modes.iter())
    {
        if !(var > VAR_FLOOR) {
            return Err(HedgeError::ScoreSingular { s: moments.s, var });
        }
        *y = -(*y - mean) / var;
    }
    basis.from_modes(&y)
}

/// `b_{s|H}(X) = -alpha A_H(X) - beta gamma (X - M0)`.
pub fn conditional_forward_drift(
    cfg: &DiffusionConfig,
    modes: &HypergraphModes,
    x: &RelaxedState,
    s: f64,
) -> Result<RelaxedState> {
    let (alpha, beta) = schedule_eval(cfg, s)?;
    let heat = modes.heat(x, cfg.heat)?;
    Ok(heat * -alpha - (x - &cfg.m0) * (beta * cfg.gamma))
}

/// Conditional reverse drift with precomputed moments.
pub fn reverse_drift_with_moments(
    cfg: &DiffusionConfig,
    modes: &HypergraphModes,
    moments: &ConditionalMoments,
    x: &RelaxedState,
) -> Result<RelaxedState> {
    let (alpha, beta) = schedule_eval(cfg, moments.s)?;
    let score = conditional_score(moments, &modes.basis, x)?;
    let heat = modes.heat(x, cfg.heat)?;
    Ok(heat * alpha + (x - &cfg.m0) * (beta * cfg.gamma) + score * (2.0 * cfg.tau * beta))
}

/// `u*_{s|H}(X) = alpha A_H(X) + beta gamma (X - M0) + 2 tau beta score`.
pub fn conditional_reverse_drift(
    cfg: &DiffusionConfig,
    modes: &HypergraphModes,
    x: &RelaxedState,
    s: f64,
) -> Result<RelaxedState> {
    let moments = conditional_moments(cfg, modes, s)?;
    reverse_drift_with_moments(cfg, modes, &moments, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::incidence::permute_matrix;
    use approx::assert_abs_diff_eq;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn h2() -> IncidenceMatrix {
        IncidenceMatrix::from_rows(&[[1, 1], [1, 0]]).unwrap()
    }

    fn h34() -> IncidenceMatrix {
        IncidenceMatrix::from_rows(&[[1, 0, 1, 0], [1, 1, 0, 0], [0, 1, 1, 1]]).unwrap()
    }

    fn cfg_for(h: &IncidenceMatrix) -> DiffusionConfig {
        DiffusionConfig::for_data(std::slice::from_ref(h)).unwrap()
    }

    /// RK4 on the scalar mean and variance equations of one mode.
    fn ode_oracle(cfg: &DiffusionConfig, rate: f64, h0: f64, m0: f64, s: f64) -> (f64, f64) {
        let steps = 20_000;
        let dt = s / steps as f64;
        let f = |u: f64, y: [f64; 2]| {
            let (a, b) = cfg.schedule.eval(u, cfg.horizon);
            let k = a * rate + b * cfg.gamma;
            [-k * y[0] + b * cfg.gamma * m0, -2.0 * k * y[1] + 2.0 * cfg.tau * b]
        };
        let mut y = [h0, 0.0];
        for step in 0..steps {
            let u = step as f64 * dt;
            let k1 = f(u, y);
            let k2 = f(u + dt / 2.0, [y[0] + dt / 2.0 * k1[0], y[1] + dt / 2.0 * k1[1]]);
            let k3 = f(u + dt / 2.0, [y[0] + dt / 2.0 * k2[0], y[1] + dt / 2.0 * k2[1]]);
            let k4 = f(u + dt, [y[0] + dt * k3[0], y[1] + dt * k3[1]]);
            for c in 0..2 {
                y[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
        }
        (y[0], y[1])
    }

    #[test]
    fn schedule_endpoints() {
        let mut cfg = cfg_for(&h2());
        assert_eq!(schedule_eval(&cfg, 0.0).unwrap(), (1.0, 0.0));
        assert_eq!(schedule_eval(&cfg, 0.5).unwrap(), (0.5, 0.5));
        cfg.schedule = ScheduleKind::Smoothstep;
        assert_eq!(schedule_eval(&cfg, 0.0).unwrap(), (1.0, 0.0));
        assert_eq!(schedule_eval(&cfg, 1.0).unwrap(), (0.0, 1.0));
        assert!(schedule_eval(&cfg, 1.5).is_err());
        assert!(schedule_eval(&cfg, -0.1).is_err());
    }

    #[test]
    fn schedules_are_monotone_and_cumulative_integrals_match() {
        let rule = CompositeRule::new(16, 8);
        for kind in [ScheduleKind::Linear, ScheduleKind::Smoothstep] {
            let mut prev = kind.eval(0.0, 2.0);
            for k in 1..=200 {
                let s = 2.0 * k as f64 / 200.0;
                let (a, b) = kind.eval(s, 2.0);
                assert!(a <= prev.0 + 1e-15 && b >= prev.1 - 1e-15);
                assert_abs_diff_eq!(a + b, 1.0, epsilon = 1e-15);
                prev = (a, b);
            }
            for s in [0.3, 1.1, 2.0] {
                let (ia, ib) = kind.cumulative(s, 2.0);
                assert_abs_diff_eq!(ia, rule.integrate(s, |u| kind.eval(u, 2.0).0), epsilon = 1e-13);
                assert_abs_diff_eq!(ib, rule.integrate(s, |u| kind.eval(u, 2.0).1), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn moments_at_zero_are_the_data() {
        let h = h34();
        let cfg = cfg_for(&h);
        let modes = HypergraphModes::new(&cfg, &h).unwrap();
        let mom = conditional_moments(&cfg, &modes, 0.0).unwrap();
        assert_eq!(mom.mean_modes, modes.data_modes);
        assert!(mom.var_modes.iter().all(|&v| v == 0.0));
        assert!(conditional_moments(&cfg, &modes, 1.01).is_err());
    }

    #[test]
    fn pure_ou_matches_analytic_moments() {
        let h = h34();
        let mut cfg = cfg_for(&h);
        cfg.schedule = ScheduleKind::Constant;
        let modes = HypergraphModes::new(&cfg, &h).unwrap();
        for s in [0.01, 0.2, 0.7, 1.0] {
            let mom = conditional_moments(&cfg, &modes, s).unwrap();
            let decay = (-cfg.gamma * s).exp();
            let var = cfg.tau / cfg.gamma * (1.0 - (-2.0 * cfg.gamma * s).exp());
            for (k, (&mean, &c)) in mom.mean_modes.iter().zip(mom.var_modes.iter()).enumerate() {
                let expect = modes.base_modes[k] + decay * (modes.data_modes[k] - modes.base_modes[k]);
                assert_abs_diff_eq!(mean, expect, epsilon = 1e-8);
                assert_abs_diff_eq!(c, var, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn zero_rate_mode_closed_form() {
        let h = h2();
        let cfg = cfg_for(&h);
        let modes = HypergraphModes::new(&cfg, &h).unwrap();
        assert!(modes.basis.lambda[0] < 1e-12 && modes.basis.mu[0] < 1e-12);
        for s in [0.05, 0.5, 1.0] {
            let mom = conditional_moments(&cfg, &modes, s).unwrap();
            let phi = (-cfg.gamma * s * s / (2.0 * cfg.horizon)).exp();
            let mean = phi * modes.data_modes[(0, 0)] + (1.0 - phi) * modes.base_modes[(0, 0)];
            let var = cfg.tau / cfg.gamma * (1.0 - phi * phi);
            assert_abs_diff_eq!(mom.mean_modes[(0, 0)], mean, epsilon = 1e-8);
            assert_abs_diff_eq!(mom.var_modes[(0, 0)], var, epsilon = 1e-8);
        }
    }

    #[test]
    fn moments_match_ode_oracle_for_every_mode() {
        let h = h34();
        for kind in [ScheduleKind::Linear, ScheduleKind::Smoothstep] {
            let mut cfg = cfg_for(&h);
            cfg.schedule = kind;
            let modes = HypergraphModes::new(&cfg, &h).unwrap();
            let rates = modes.basis.mode_grid().rates;
            for s in [0.1, 0.55, 1.0] {
                let mom = conditional_moments(&cfg, &modes, s).unwrap();
                for k in 0..rates.len() {
                    let (mean, var) =
                        ode_oracle(&cfg, rates[k], modes.data_modes[k], modes.base_modes[k], s);
                    assert_abs_diff_eq!(mom.mean_modes[k], mean, epsilon = 1e-9);
                    assert_abs_diff_eq!(mom.var_modes[k], var, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn quadrature_refinement_is_converged() {
        let h = h34();
        let mut cfg = cfg_for(&h);
        let modes = HypergraphModes::new(&cfg, &h).unwrap();
        let coarse = conditional_moments(&cfg, &modes, 0.8).unwrap();
        cfg.quad_points *= 2;
        let fine = conditional_moments(&cfg, &modes, 0.8).unwrap();
        let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).norm() / b.norm();
        assert!(rel(&coarse.mean_modes, &fine.mean_modes) < 1e-8);
        assert!(rel(&coarse.var_modes, &fine.var_modes) < 1e-8);
    }

    #[test]
    fn terminal_law_is_near_base() {
        let h = h34();
        let cfg = cfg_for(&h);
        let modes = HypergraphModes::new(&cfg, &h).unwrap();
        let mom = conditional_moments(&cfg, &modes, cfg.horizon).unwrap();
        let target = cfg.tau / cfg.gamma;
        for &c in mom.var_modes.iter() {
            assert!((c - target).abs() / target < 0.01, "var {c} vs {target}");
        }
        let grid = modes.basis.mode_grid();
        let bound = (-cfg.gamma * cfg.horizon / 2.0).exp();
        for k in 0..grid.rates.len() {
            if grid.rates[k] < 1e-9 {
                let gap0 = (modes.data_modes[k] - modes.base_modes[k]).abs();
                let gap = (mom.mean_modes[k] - modes.base_modes[k]).abs();
                assert!(gap <= bound * gap0 + 1e-15);
            }
        }
    }

    #[test]
    fn forward_samples_have_mode_variance() {
        let h = h2();
        let cfg = cfg_for(&h);
        let modes = HypergraphModes::new(&cfg, &h).unwrap();
        let mom = conditional_moments(&cfg, &modes, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws = 100_000;
        let mut sum = DMatrix::<f64>::zeros(2, 2);
        let mut sq = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..draws {
            let x = sample_forward_state(&mom, &modes.basis, &mut rng).unwrap();
            let y = modes.basis.to_modes(&x).unwrap();
            sum += &y;
            sq += y.component_mul(&y);
        }
        for k in 0..4 {
            let mean = sum[k] / draws as f64;
            let var = sq[k] / draws as f64 - mean * mean;
            assert!((var - mom.var_modes[k]).abs() / mom.var_modes[k] < 0.03);
        }
    }

    #[test]
    fn degenerate_and_seeded_sampling() {
        let h = h2();
        let cfg = cfg_for(&h);
        let modes = HypergraphModes::new(&cfg, &h).unwrap();
        let mom = conditional_moments(&cfg, &modes, 0.0).unwrap();
        let x = sample_forward_state(&mom, &modes.basis, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((x - h.to_matrix()).amax() < 1e-12);
        let mom = conditional_moments(&cfg, &modes, 0.3).unwrap();
        let a = sample_forward_state(&mom, &modes.basis, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_forward_state(&mom, &modes.basis, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn score_vanishes_at_mean_and_rejects_small_times() {
        let h = h34();
        let cfg = cfg_for(&h);
        let modes = HypergraphModes::new(&cfg, &h).unwrap();
        let mom = conditional_moments(&cfg, &modes, 0.5).unwrap();
        let mean = modes.basis.from_modes(&mom.mean_modes).unwrap();
        let score = conditional_score(&mom, &modes.basis, &mean).unwrap();
        assert!(score.amax() < 1e-12);
        let early = conditional_moments(&cfg, &modes, 1e-4).unwrap();
        assert!(matches!(
            conditional_score(&early, &modes.basis, &mean),
            Err(HedgeError::TimeOutOfRange { .. })
        ));
        let mut singular = mom.clone();
        singular.var_modes[(1, 1)] = 1e-13;
        assert!(matches!(
            conditional_score(&singular, &modes.basis, &mean),
            Err(HedgeError::ScoreSingular { .. })
        ));
    }

    #[test]
    fn isotropic_score() {
        let basis = SpectralBasis {
            u: DMatrix::identity(2, 2),
            lambda: nalgebra::DVector::zeros(2),
            v: DMatrix::identity(3, 3),
            mu: nalgebra::DVector::zeros(3),
        };
        let mean = DMatrix::from_fn(2, 3, |i, j| (i + j) as f64 * 0.1);
        let mom = ConditionalMoments {
            s: 0.5,
            horizon: 1.0,
            mean_modes: mean.clone(),
            var_modes: DMatrix::from_element(2, 3, 0.25),
        };
        let x = DMatrix::from_element(2, 3, 1.0);
        let score = conditional_score(&mom, &basis, &x).unwrap();
        assert!((score - (x - mean) * -4.0).amax() < 1e-14);
    }

    #[test]
    fn score_matches_log_density_differences() {
        let h = h34();
        let cfg = cfg_for(&h);
        let modes = HypergraphModes::new(&cfg, &h).unwrap();
        let mom = conditional_moments(&cfg, &modes, 0.3).unwrap();
        let (n, m) = (3, 4);
        // Dense covariance in vec (column-major) coordinates: (V kron U) diag(c) (V kron U)^T.
        let kron = modes.basis.v.kronecker(&modes.basis.u);
        let cov = &kron * DMatrix::from_diagonal(&mom.var_modes.as_slice().into()) * kron.transpose();
        let chol = cov.cholesky().unwrap();
        let mean = modes.basis.from_modes(&mom.mean_modes).unwrap();
        let log_density = |x: &DMatrix<f64>| {
            let d = nalgebra::DVector::from_column_slice((x - &mean).as_slice());
            -0.5 * d.dot(&chol.solve(&d))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = sample_forward_state(&mom, &modes.basis, &mut rng).unwrap();
        let score = conditional_score(&mom, &modes.basis, &x).unwrap();
        let step = 1e-4;
        let mut fd = DMatrix::zeros(n, m);
        for k in 0..n * m {
            let mut p = x.clone();
            let mut q = x.clone();
            p[k] += step;
            q[k] -= step;
            fd[k] = (log_density(&p) - log_density(&q)) / (2.0 * step);
        }
        assert!((&fd - &score).norm() / score.norm() < 1e-5);
    }

    #[test]
    fn reverse_drift_decomposition() {
        let h = h34();
        let cfg = cfg_for(&h);
        let modes = HypergraphModes::new(&cfg, &h).unwrap();
        let s = 0.37;
        let mom = conditional_moments(&cfg, &modes, s).unwrap();
        let x = sample_forward_state(&mom, &modes.basis, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let (alpha, beta) = schedule_eval(&cfg, s).unwrap();
        let score = conditional_score(&mom, &modes.basis, &x).unwrap();
        let heat = modes.heat(&x, HeatTerms::Both).unwrap();
        let manual = &heat * alpha + (&x - &cfg.m0) * (beta * cfg.gamma) + &score * (2.0 * cfg.tau * beta);
        let fused = conditional_reverse_drift(&cfg, &modes, &x, s).unwrap();
        assert!((&fused - manual).amax() < 1e-12);
        let fwd = conditional_forward_drift(&cfg, &modes, &x, s).unwrap();
        assert!((fused + fwd - score * (2.0 * cfg.tau * beta)).amax() < 1e-12);
    }

    #[test]
    fn ou_limits_of_the_drifts() {
        let h = h34();
        let mut cfg = cfg_for(&h);
        cfg.schedule = ScheduleKind::Constant;
        let modes = HypergraphModes::new(&cfg, &h).unwrap();
        let s = 0.6;
        let mom = conditional_moments(&cfg, &modes, s).unwrap();
        let mean = modes.basis.from_modes(&mom.mean_modes).unwrap();
        let u = conditional_reverse_drift(&cfg, &modes, &mean, s).unwrap();
        assert!((u - (&mean - &cfg.m0) * cfg.gamma).amax() < 1e-12);
        let b = conditional_forward_drift(&cfg, &modes, &cfg.m0, s).unwrap();
        assert!(b.amax() == 0.0);
    }

    #[test]
    fn laws_and_targets_are_equivariant() {
        let h = h34();
        let cfg = cfg_for(&h);
        let modes = HypergraphModes::new(&cfg, &h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = DMatrix::from_fn(3, 4, |i, j| 0.1 * (i * 4 + j) as f64 - 0.4);
        for _ in 0..10 {
            let mut rows: Vec<usize> = (0..3).collect();
            let mut cols: Vec<usize> = (0..4).collect();
            rows.shuffle(&mut rng);
            cols.shuffle(&mut rng);
            let hp = h.permuted(&rows, &cols);
            let xp = permute_matrix(&x, &rows, &cols);
            let pm = HypergraphModes::new(&cfg, &hp).unwrap();
            for s in [0.2, 0.9] {
                let a = conditional_moments(&cfg, &modes, s).unwrap();
                let b = conditional_moments(&cfg, &pm, s).unwrap();
                let ma = modes.basis.from_modes(&a.mean_modes).unwrap();
                let mb = pm.basis.from_modes(&b.mean_modes).unwrap();
                assert!((permute_matrix(&ma, &rows, &cols) - mb).amax() < 1e-9);
                let ua = conditional_reverse_drift(&cfg, &modes, &x, s).unwrap();
                let ub = conditional_reverse_drift(&cfg, &pm, &xp, s).unwrap();
                assert!((permute_matrix(&ua, &rows, &cols) - ub).amax() < 1e-9);
            }
        }
    }
}
