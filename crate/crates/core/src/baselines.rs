//! Comparator generators: i.i.d. Bernoulli incidences and a degree- and
//! size-preserving swap chain.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::incidence::{Constraints, IncidenceMatrix};
use crate::rng::named_stream;

/// Column redraws before an empty hyperedge is kept and reported.
pub const MAX_COLUMN_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    ErHg,
    HcmMcmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Swap proposals per incidence; 0 returns copies of the sources.
    pub swaps_per_incidence: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kind: BaselineKind::ErHg,
            swaps_per_incidence: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BaselineOutput {
    pub samples: Vec<IncidenceMatrix>,
    pub warnings: Vec<String>,
}

/// Pooled incidence density of a batch.
pub fn batch_density(batch: &[IncidenceMatrix]) -> f64 {
    let nnz: usize = batch.iter().map(IncidenceMatrix::nnz).sum();
    let cells: usize = batch.iter().map(|h| h.n() * h.m()).sum();
    nnz as f64 / cells as f64
}

/// Each entry Bernoulli at the reference density, with the shape of the
/// reference element `i mod len`.
pub fn er_hg_generate(reference: &[IncidenceMatrix], count: usize, seed: u64) -> Result<BaselineOutput> {
    if reference.is_empty() {
        return Err(HedgeError::Empty("reference batch".into()));
    }
    let rho = batch_density(reference);
    let parts: Vec<(IncidenceMatrix, Vec<usize>)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let (n, m) = reference[i % reference.len()].shape();
            let mut rng = named_stream(seed, "er_hg", &[i as u64]);
            let mut data = vec![0u8; n * m];
            let mut empty = Vec::new();
            for j in 0..m {
                let mut filled = false;
                for _ in 0..MAX_COLUMN_REDRAWS {
                    for r in 0..n {
                        data[r * m + j] = u8::from(rng.random_bool(rho));
                    }
                    if (0..n).any(|r| data[r * m + j] == 1) {
                        filled = true;
                        break;
                    }
                }
                if !filled {
                    empty.push(j);
                }
            }
            let h = IncidenceMatrix::with_constraints(n, m, data, Constraints::RELAXED)?;
            Ok((h, empty))
        })
        .collect::<Result<_>>()?;
    let mut out = BaselineOutput::default();
    for (i, (h, empty)) in parts.into_iter().enumerate() {
        if !empty.is_empty() {
            out.warnings.push(format!(
                "sample {i}: hyperedges {empty:?} still empty after {MAX_COLUMN_REDRAWS} redraws"
            ));
        }
        out.samples.push(h);
    }
    Ok(out)
}

/// One double-incidence swap: `(v1,e1),(v2,e2) -> (v1,e2),(v2,e1)`, applied
/// only if neither new membership already exists. Returns whether it was applied.
pub fn try_swap(h: &mut IncidenceMatrix, a: (usize, usize), b: (usize, usize)) -> bool {
    let ((v1, e1), (v2, e2)) = (a, b);
    debug_assert!(h.get(v1, e1) && h.get(v2, e2));
    if v1 == v2 || e1 == e2 || h.get(v1, e2) || h.get(v2, e1) {
        return false;
    }
    h.set(v1, e1, false);
    h.set(v2, e2, false);
    h.set(v1, e2, true);
    h.set(v2, e1, true);
    true
}

/// Runs `proposals` uniformly chosen swap proposals in place; returns the
/// number accepted.
pub fn swap_chain<R: Rng + ?Sized>(h: &mut IncidenceMatrix, proposals: usize, rng: &mut R) -> usize {
    let mut inc: Vec<(usize, usize)> = h.pairs().collect();
    if inc.len() < 2 {
        return 0;
    }
    let mut accepted = 0;
    for _ in 0..proposals {
        let x = rng.random_range(0..inc.len());
        let y = rng.random_range(0..inc.len());
        let (a, b) = (inc[x], inc[y]);
        if try_swap(h, a, b) {
            inc[x] = (a.0, b.1);
            inc[y] = (b.0, a.1);
            accepted += 1;
        }
    }
    accepted
}

/// Copies of reference elements randomized by [`swap_chain`].
pub fn hcm_mcmc_generate(reference: &[IncidenceMatrix], count: usize, cfg: &BaselineConfig) -> Result<BaselineOutput> {
    if reference.is_empty() {
        return Err(HedgeError::Empty("reference batch".into()));
    }
    if let Some((k, h)) = reference.iter().enumerate().find(|(_, h)| h.nnz() < 2) {
        return Err(HedgeError::InvalidIncidence(format!(
            "reference element {k} has {} incidences; swaps need at least 2",
            h.nnz()
        )));
    }
    let samples = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = named_stream(cfg.seed, "hcm_mcmc", &[i as u64]);
            let mut h = reference[rng.random_range(0..reference.len())].clone();
            let proposals = cfg.swaps_per_incidence * h.nnz();
            swap_chain(&mut h, proposals, &mut rng);
            h
        })
        .collect();
    Ok(BaselineOutput {
        samples,
        warnings: Vec::new(),
    })
}

/// Dispatches on `cfg.kind`.
pub fn generate_baseline(reference: &[IncidenceMatrix], count: usize, cfg: &BaselineConfig) -> Result<BaselineOutput> {
    match cfg.kind {
        BaselineKind::ErHg => er_hg_generate(reference, count, cfg.seed),
        BaselineKind::HcmMcmc => hcm_mcmc_generate(reference, count, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::incidence::degree_profile;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference(count: usize, n: usize, m: usize, p: f64, seed: u64) -> Vec<IncidenceMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| loop {
                let d = (0..n * m).map(|_| u8::from(rng.random_bool(p))).collect();
                if let Ok(h) = IncidenceMatrix::with_constraints(n, m, d, Constraints::ALLOW_ISOLATED) {
                    break h;
                }
            })
            .collect()
    }

    #[test]
    fn er_degenerate_densities() {
        let zeros = vec![IncidenceMatrix::with_constraints(3, 4, vec![0; 12], Constraints::RELAXED).unwrap()];
        let out = er_hg_generate(&zeros, 2, 0).unwrap();
        assert!(out.samples.iter().all(|h| h.nnz() == 0));
        assert_eq!(out.warnings.len(), 2);
        let ones = vec![IncidenceMatrix::with_constraints(3, 4, vec![1; 12], Constraints::RELAXED).unwrap()];
        let out = er_hg_generate(&ones, 3, 0).unwrap();
        assert!(out.samples.iter().all(|h| h.nnz() == 12));
        assert!(out.warnings.is_empty());
        assert!(er_hg_generate(&[], 1, 0).is_err());
    }

    #[test]
    fn er_density_within_binomial_band() {
        let refb = reference(10, 20, 15, 0.3, 1);
        let rho = batch_density(&refb);
        let out = er_hg_generate(&refb, 200, 7).unwrap();
        let got = batch_density(&out.samples);
        let cells = 200.0 * 300.0;
        let sigma = (rho * (1.0 - rho) / cells).sqrt();
        // Column redraws only remove all-zero columns, which are rare here.
        let p_empty = (1.0 - rho).powi(20);
        let bias = rho * p_empty / (1.0 - p_empty);
        assert!((got - rho).abs() <= 3.0 * sigma + bias, "{got} vs {rho}");
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn er_is_reproducible() {
        let refb = reference(3, 8, 6, 0.4, 2);
        assert_eq!(er_hg_generate(&refb, 5, 9).unwrap().samples, er_hg_generate(&refb, 5, 9).unwrap().samples);
    }

    #[test]
    fn duplicate_creating_swap_rejected() {
        let mut h = IncidenceMatrix::from_rows(&[[1u8, 1], [1, 0]]).unwrap();
        let before = h.clone();
        assert!(!try_swap(&mut h, (0, 1), (1, 0)));
        assert!(!try_swap(&mut h, (0, 0), (1, 0)));
        assert_eq!(h, before);
        let mut g = IncidenceMatrix::from_rows(&[[1u8, 0], [0, 1]]).unwrap();
        assert!(try_swap(&mut g, (0, 0), (1, 1)));
        assert_eq!(g, IncidenceMatrix::from_rows(&[[0u8, 1], [1, 0]]).unwrap());
    }

    #[test]
    fn hcm_preserves_marginals() {
        let refb = reference(6, 12, 10, 0.3, 3);
        let cfg = BaselineConfig {
            kind: BaselineKind::HcmMcmc,
            ..BaselineConfig::default()
        };
        let out = hcm_mcmc_generate(&refb, 40, &cfg).unwrap();
        let profiles: Vec<_> = refb.iter().map(degree_profile).collect();
        for h in &out.samples {
            let p = degree_profile(h);
            assert!(profiles.contains(&p));
        }
        assert!(out.samples.iter().any(|h| !refb.contains(h)));
    }

    #[test]
    fn hcm_zero_swaps_copies() {
        let refb = reference(1, 6, 5, 0.5, 4);
        let cfg = BaselineConfig {
            kind: BaselineKind::HcmMcmc,
            swaps_per_incidence: 0,
            seed: 1,
        };
        let out = generate_baseline(&refb, 3, &cfg).unwrap();
        assert!(out.samples.iter().all(|h| *h == refb[0]));
    }

    #[test]
    fn hcm_rejects_tiny_reference() {
        let single = vec![IncidenceMatrix::from_rows(&[[1u8]]).unwrap()];
        assert!(hcm_mcmc_generate(&single, 1, &BaselineConfig::default()).is_err());
    }
}
