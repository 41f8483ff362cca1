//! Batch-level comparison metrics between real and generated hypergraphs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::incidence::IncidenceMatrix;
use crate::spectral::SpectralBasis;

/// Largest spectral truncation used by [`default_truncation`].
pub const MAX_TRUNCATION: usize = 32;

/// Number of entries in [`features`].
pub const FEATURE_DIM: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub delta_rho: f64,
    pub delta_k: f64,
    pub delta_e: f64,
    pub w1_degree: f64,
    pub w1_size: f64,
    pub node_spec_wd: f64,
    pub edge_spec_wd: f64,
    pub tail_gap: f64,
    pub intersection_wd: f64,
    pub feature_mmd: f64,
    pub real_count: usize,
    pub gen_count: usize,
    pub truncation: usize,
}

impl MetricReport {
    /// The ten distances, by field name.
    pub fn named(&self) -> [(&'static str, f64); 10] {
        [
            ("delta_rho", self.delta_rho),
            ("delta_k", self.delta_k),
            ("delta_e", self.delta_e),
            ("w1_degree", self.w1_degree),
            ("w1_size", self.w1_size),
            ("node_spec_wd", self.node_spec_wd),
            ("edge_spec_wd", self.edge_spec_wd),
            ("tail_gap", self.tail_gap),
            ("intersection_wd", self.intersection_wd),
            ("feature_mmd", self.feature_mmd),
        ]
    }
}

/// Relabeling-invariant summaries of one hypergraph.
#[derive(Debug, Clone)]
pub struct HypergraphStats {
    pub n: usize,
    pub m: usize,
    pub degrees: Vec<f64>,
    pub sizes: Vec<f64>,
    pub intersections: Vec<f64>,
    /// Ascending spectrum of the node operator.
    pub node_spectrum: Vec<f64>,
    /// Ascending spectrum of the hyperedge operator.
    pub edge_spectrum: Vec<f64>,
}

impl HypergraphStats {
    pub fn new(h: &IncidenceMatrix) -> Result<Self> {
        let (n, m) = h.shape();
        let mut degrees = vec![0.0; n];
        let mut sizes = vec![0.0; m];
        for (i, j) in h.pairs() {
            degrees[i] += 1.0;
            sizes[j] += 1.0;
        }
        let basis = SpectralBasis::from_incidence(h)?;
        Ok(Self {
            n,
            m,
            degrees,
            sizes,
            intersections: h.pairwise_intersections().into_iter().map(|v| v as f64).collect(),
            node_spectrum: basis.lambda.iter().copied().collect(),
            edge_spectrum: basis.mu.iter().copied().collect(),
        })
    }

    pub fn density(&self) -> f64 {
        self.degrees.iter().sum::<f64>() / (self.n * self.m) as f64
    }

    pub fn mean_degree(&self) -> f64 {
        mean(&self.degrees)
    }

    pub fn mean_size(&self) -> f64 {
        mean(&self.sizes)
    }

    /// Fraction of hyperedge pairs sharing at least two nodes; 0 when `m < 2`.
    pub fn tail_mass(&self) -> f64 {
        if self.intersections.is_empty() {
            return 0.0;
        }
        self.intersections.iter().filter(|&&v| v >= 2.0).count() as f64 / self.intersections.len() as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mu = mean(v);
    (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / v.len() as f64).sqrt()
}

fn max_or_zero(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn nonempty(batch: &[IncidenceMatrix], what: &str) -> Result<()> {
    if batch.is_empty() {
        Err(HedgeError::Empty(format!("{what} batch")))
    } else {
        Ok(())
    }
}

/// Statistics of every batch element, computed in parallel in batch order.
pub fn batch_stats(batch: &[IncidenceMatrix]) -> Result<Vec<HypergraphStats>> {
    batch.par_iter().map(HypergraphStats::new).collect()
}

/// W1 between two empirical distributions, by integrating |F_a - F_b|.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(HedgeError::Empty("wasserstein sample".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(HedgeError::NonFinite("wasserstein sample".into()));
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    if xa.len() == xb.len() {
        let total: f64 = xa.iter().zip(&xb).map(|(p, q)| (p - q).abs()).sum();
        return Ok(total / xa.len() as f64);
    }
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    let mut prev = xa[0].min(xb[0]);
    while i < xa.len() || j < xb.len() {
        let next = match (xa.get(i), xb.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < xa.len() && xa[i] == next {
            i += 1;
        }
        while j < xb.len() && xb[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Signed density, mean-degree and mean-size gaps (generated minus real) and
/// W1 between pooled degree and size samples.
pub fn calibration_gaps(real: &[IncidenceMatrix], gen: &[IncidenceMatrix]) -> Result<(f64, f64, f64, f64, f64)> {
    nonempty(real, "real")?;
    nonempty(gen, "generated")?;
    calibration_from_stats(&batch_stats(real)?, &batch_stats(gen)?)
}

fn calibration_from_stats(real: &[HypergraphStats], gen: &[HypergraphStats]) -> Result<(f64, f64, f64, f64, f64)> {
    let avg = |b: &[HypergraphStats], f: fn(&HypergraphStats) -> f64| b.iter().map(f).sum::<f64>() / b.len() as f64;
    let pool = |b: &[HypergraphStats], f: fn(&HypergraphStats) -> &Vec<f64>| -> Vec<f64> {
        b.iter().flat_map(|s| f(s).iter().copied()).collect()
    };
    let d_rho = avg(gen, HypergraphStats::density) - avg(real, HypergraphStats::density);
    let d_k = avg(gen, HypergraphStats::mean_degree) - avg(real, HypergraphStats::mean_degree);
    let d_e = avg(gen, HypergraphStats::mean_size) - avg(real, HypergraphStats::mean_size);
    let w_deg = wasserstein_1d(&pool(real, |s| &s.degrees), &pool(gen, |s| &s.degrees))?;
    let w_size = wasserstein_1d(&pool(real, |s| &s.sizes), &pool(gen, |s| &s.sizes))?;
    Ok((d_rho, d_k, d_e, w_deg, w_size))
}

/// `min(n, m, 32)` over every shape present in either batch.
pub fn default_truncation(real: &[IncidenceMatrix], gen: &[IncidenceMatrix]) -> usize {
    real.iter()
        .chain(gen)
        .map(|h| h.n().min(h.m()))
        .min()
        .unwrap_or(1)
        .clamp(1, MAX_TRUNCATION)
}

/// W1 between pooled spectra, each truncated to its `k` smallest values.
pub fn spectral_wd_from_spectra(real: &[Vec<f64>], gen: &[Vec<f64>], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(HedgeError::InvalidConfig("spectral truncation must be at least 1".into()));
    }
    let pool = |b: &[Vec<f64>]| -> Vec<f64> {
        b.iter()
            .flat_map(|spec| {
                let mut s = spec.clone();
                s.sort_by(f64::total_cmp);
                s.truncate(k);
                s
            })
            .collect()
    };
    wasserstein_1d(&pool(real), &pool(gen))
}

/// Node and hyperedge spectral W1 at truncation `k`.
pub fn spectral_wd(real: &[IncidenceMatrix], gen: &[IncidenceMatrix], k: usize) -> Result<(f64, f64)> {
    nonempty(real, "real")?;
    nonempty(gen, "generated")?;
    spectral_from_stats(&batch_stats(real)?, &batch_stats(gen)?, k)
}

fn spectral_from_stats(real: &[HypergraphStats], gen: &[HypergraphStats], k: usize) -> Result<(f64, f64)> {
    let node = |b: &[HypergraphStats]| b.iter().map(|s| s.node_spectrum.clone()).collect::<Vec<_>>();
    let edge = |b: &[HypergraphStats]| b.iter().map(|s| s.edge_spectrum.clone()).collect::<Vec<_>>();
    Ok((
        spectral_wd_from_spectra(&node(real), &node(gen), k)?,
        spectral_wd_from_spectra(&edge(real), &edge(gen), k)?,
    ))
}

/// Overlap-tail gap and W1 between pooled pairwise intersection sizes.
pub fn intersection_stats(real: &[IncidenceMatrix], gen: &[IncidenceMatrix]) -> Result<(f64, f64)> {
    nonempty(real, "real")?;
    nonempty(gen, "generated")?;
    intersection_from_stats(&batch_stats(real)?, &batch_stats(gen)?)
}

fn intersection_from_stats(real: &[HypergraphStats], gen: &[HypergraphStats]) -> Result<(f64, f64)> {
    if let Some(s) = real.iter().chain(gen).find(|s| s.m < 2) {
        return Err(HedgeError::InvalidIncidence(format!(
            "intersection statistics need at least 2 hyperedges, got {}",
            s.m
        )));
    }
    let tail = |b: &[HypergraphStats]| b.iter().map(HypergraphStats::tail_mass).sum::<f64>() / b.len() as f64;
    let pool = |b: &[HypergraphStats]| -> Vec<f64> { b.iter().flat_map(|s| s.intersections.iter().copied()).collect() };
    Ok(((tail(real) - tail(gen)).abs(), wasserstein_1d(&pool(real), &pool(gen))?))
}

/// The fixed 12-dimensional summary vector of one hypergraph.
pub fn features(s: &HypergraphStats) -> [f64; FEATURE_DIM] {
    [
        s.density(),
        mean(&s.degrees),
        std_dev(&s.degrees),
        mean(&s.sizes),
        std_dev(&s.sizes),
        s.tail_mass(),
        mean(&s.intersections),
        max_or_zero(&s.intersections),
        mean(&s.node_spectrum),
        max_or_zero(&s.node_spectrum),
        mean(&s.edge_spectrum),
        max_or_zero(&s.edge_spectrum),
    ]
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn rbf(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    (-sq_dist(a, b) / (2.0 * bandwidth * bandwidth)).exp()
}

/// Unbiased MMD^2 with kernel `exp(-|x-y|^2 / (2 bw^2))`.
pub fn mmd2_unbiased(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    if x.len() < 2 || y.len() < 2 {
        return Err(HedgeError::InvalidConfig("MMD needs at least 2 elements per batch".into()));
    }
    let within = |v: &[Vec<f64>]| {
        let mut t = 0.0;
        for i in 0..v.len() {
            for j in 0..v.len() {
                if i != j {
                    t += rbf(&v[i], &v[j], bandwidth);
                }
            }
        }
        t / (v.len() * (v.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for a in x {
        for b in y {
            cross += rbf(a, b, bandwidth);
        }
    }
    Ok(within(x) + within(y) - 2.0 * cross / (x.len() * y.len()) as f64)
}

/// Median pairwise distance of a point set; 1 when that median is 0.
pub fn median_bandwidth(points: &[Vec<f64>]) -> f64 {
    let mut d = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let k = d.len();
    let med = if k % 2 == 1 { d[k / 2] } else { 0.5 * (d[k / 2 - 1] + d[k / 2]) };
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

/// Square root of the clamped unbiased MMD^2 between standardized features.
pub fn feature_mmd(real: &[IncidenceMatrix], gen: &[IncidenceMatrix]) -> Result<f64> {
    feature_mmd_from_stats(&batch_stats(real)?, &batch_stats(gen)?)
}

fn feature_mmd_from_stats(real: &[HypergraphStats], gen: &[HypergraphStats]) -> Result<f64> {
    if real.len() < 2 || gen.len() < 2 {
        return Err(HedgeError::InvalidConfig("feature MMD needs at least 2 elements per batch".into()));
    }
    let fr: Vec<[f64; FEATURE_DIM]> = real.iter().map(features).collect();
    let fg: Vec<[f64; FEATURE_DIM]> = gen.iter().map(features).collect();
    let mut center = [0.0; FEATURE_DIM];
    let mut scale = [1.0; FEATURE_DIM];
    for d in 0..FEATURE_DIM {
        let col: Vec<f64> = fr.iter().map(|f| f[d]).collect();
        center[d] = mean(&col);
        let sd = std_dev(&col);
        // Rounding-level spread counts as constant.
        if sd > 1e-9 * (1.0 + center[d].abs()) {
            scale[d] = sd;
        }
    }
    let standardize =
        |f: &[f64; FEATURE_DIM]| -> Vec<f64> { (0..FEATURE_DIM).map(|d| (f[d] - center[d]) / scale[d]).collect() };
    let x: Vec<Vec<f64>> = fr.iter().map(standardize).collect();
    let y: Vec<Vec<f64>> = fg.iter().map(standardize).collect();
    let pooled: Vec<Vec<f64>> = x.iter().chain(&y).cloned().collect();
    let bw = median_bandwidth(&pooled);
    Ok(mmd2_unbiased(&x, &y, bw)?.max(0.0).sqrt())
}

/// Every metric in one pass over both batches.
pub fn evaluate(real: &[IncidenceMatrix], gen: &[IncidenceMatrix]) -> Result<MetricReport> {
    evaluate_with(real, gen, None)
}

/// [`evaluate`] with an explicit spectral truncation; `None` uses
/// [`default_truncation`].
pub fn evaluate_with(real: &[IncidenceMatrix], gen: &[IncidenceMatrix], truncation: Option<usize>) -> Result<MetricReport> {
    nonempty(real, "real")?;
    nonempty(gen, "generated")?;
    let k = match truncation {
        Some(0) => return Err(HedgeError::InvalidConfig("spectral truncation must be positive".into())),
        Some(k) => k,
        None => default_truncation(real, gen),
    };
    let sr = batch_stats(real)?;
    let sg = batch_stats(gen)?;
    let (delta_rho, delta_k, delta_e, w1_degree, w1_size) = calibration_from_stats(&sr, &sg)?;
    let (node_spec_wd, edge_spec_wd) = spectral_from_stats(&sr, &sg, k)?;
    let (tail_gap, intersection_wd) = intersection_from_stats(&sr, &sg)?;
    let feature_mmd = feature_mmd_from_stats(&sr, &sg)?;
    Ok(MetricReport {
        delta_rho,
        delta_k,
        delta_e,
        w1_degree,
        w1_size,
        node_spec_wd,
        edge_spec_wd,
        tail_gap,
        intersection_wd,
        feature_mmd,
        real_count: real.len(),
        gen_count: gen.len(),
        truncation: k,
    })
}
