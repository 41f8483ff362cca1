//! Incidence files, batch directories, subhypergraph sampling and the
//! synthetic regimes.
//!
//! The text format is a header line `n m` followed by one `row col` line per
//! incidence, both 0-indexed.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::swap_chain;
use crate::error::{HedgeError, Result};
use crate::incidence::{Constraints, IncidenceMatrix};
use crate::rng::named_stream;

pub const MANIFEST_NAME: &str = "manifest.json";

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> HedgeError {
    HedgeError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses the text format. `path` is only used in error messages.
pub fn parse_incidence(text: &str, path: &Path, constraints: Constraints) -> Result<IncidenceMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "missing header"))?;
    let nums: Vec<&str> = header.split_whitespace().collect();
    let parse_pair = |fields: &[&str]| -> Option<(usize, usize)> {
        match fields {
            [a, b] => Some((a.parse().ok()?, b.parse().ok()?)),
            _ => None,
        }
    };
    let (n, m) = parse_pair(&nums).ok_or_else(|| parse_err(path, 1, format!("malformed header {header:?}")))?;
    if n == 0 || m == 0 {
        return Err(parse_err(path, 1, format!("shape {n}x{m} must be non-empty")));
    }
    let mut data = vec![0u8; n * m];
    for (k, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (r, c) = parse_pair(&fields).ok_or_else(|| parse_err(path, k + 1, format!("malformed pair {line:?}")))?;
        if r >= n || c >= m {
            return Err(parse_err(path, k + 1, format!("({r}, {c}) out of range for {n}x{m}")));
        }
        if data[r * m + c] == 1 {
            return Err(parse_err(path, k + 1, format!("duplicate incidence ({r}, {c})")));
        }
        data[r * m + c] = 1;
    }
    IncidenceMatrix::with_constraints(n, m, data, constraints).map_err(|e| parse_err(path, 1, e.to_string()))
}

pub fn format_incidence(h: &IncidenceMatrix) -> String {
    let mut out = format!("{} {}\n", h.n(), h.m());
    for (r, c) in h.pairs() {
        let _ = writeln!(out, "{r} {c}");
    }
    out
}

/// Loads a file; isolated nodes are accepted, empty hyperedges are not.
pub fn load_incidence(path: &Path) -> Result<IncidenceMatrix> {
    load_incidence_with(path, Constraints::ALLOW_ISOLATED)
}

pub fn load_incidence_with(path: &Path, constraints: Constraints) -> Result<IncidenceMatrix> {
    let text = fs::read_to_string(path)?;
    parse_incidence(&text, path, constraints)
}

pub fn save_incidence(h: &IncidenceMatrix, path: &Path) -> Result<()> {
    fs::write(path, format_incidence(h))?;
    Ok(())
}

/// File name of batch element `i`.
pub fn batch_file_name(i: usize) -> String {
    format!("h{i:05}.txt")
}

/// Writes numbered incidence files and a JSON manifest into `dir`.
pub fn write_batch_dir(dir: &Path, batch: &[IncidenceMatrix], manifest: &serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, h) in batch.iter().enumerate() {
        save_incidence(h, &dir.join(batch_file_name(i)))?;
    }
    fs::write(dir.join(MANIFEST_NAME), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

fn is_batch_file(name: &str) -> bool {
    name.len() == 10
        && name.starts_with('h')
        && name.ends_with(".txt")
        && name[1..6].bytes().all(|b| b.is_ascii_digit())
}

/// Reads every numbered incidence file of `dir` in index order.
pub fn read_batch_dir(dir: &Path, constraints: Constraints) -> Result<Vec<IncidenceMatrix>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(is_batch_file))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(HedgeError::Empty(format!("no incidence files in {}", dir.display())));
    }
    files.iter().map(|p| load_incidence_with(p, constraints)).collect()
}

/// Reads `manifest.json` from a batch directory.
pub fn read_manifest(dir: &Path) -> Result<serde_json::Value> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_NAME))?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsampleConfig {
    pub n_sub: usize,
    pub m_sub: usize,
    pub count: usize,
    pub seed: u64,
    pub max_retries: usize,
}

impl Default for SubsampleConfig {
    fn default() -> Self {
        Self {
            n_sub: 16,
            m_sub: 16,
            count: 64,
            seed: 0,
            max_retries: 200,
        }
    }
}

impl SubsampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sub < 1 || self.m_sub < 2 {
            return Err(HedgeError::InvalidConfig(format!(
                "target shape {}x{} needs n_sub >= 1 and m_sub >= 2",
                self.n_sub, self.m_sub
            )));
        }
        Ok(())
    }
}

/// One subsample attempt: hyperedges first, then nodes. Nodes beyond the
/// incident set pad the row count when the drawn edges touch fewer than
/// `n_sub` nodes.
fn subsample_once<R: Rng + ?Sized>(h: &IncidenceMatrix, cfg: &SubsampleConfig, rng: &mut R) -> Option<IncidenceMatrix> {
    let (n, m) = h.shape();
    let edges: Vec<usize> = index::sample(rng, m, cfg.m_sub).into_vec();
    let mut seen = HashSet::new();
    let mut incident = Vec::new();
    for &e in &edges {
        for v in 0..n {
            if h.get(v, e) && seen.insert(v) {
                incident.push(v);
            }
        }
    }
    let nodes: Vec<usize> = if incident.len() >= cfg.n_sub {
        index::sample(rng, incident.len(), cfg.n_sub)
            .into_iter()
            .map(|k| incident[k])
            .collect()
    } else {
        let mut rest: Vec<usize> = (0..n).filter(|v| !seen.contains(v)).collect();
        rest.shuffle(rng);
        incident.extend(rest.into_iter().take(cfg.n_sub - incident.len()));
        incident
    };
    let sub = h.select(&nodes, &edges);
    sub.empty_hyperedges().is_empty().then_some(sub)
}

/// Fixed-shape subhypergraphs without empty hyperedges.
pub fn sample_subhypergraphs(h: &IncidenceMatrix, cfg: &SubsampleConfig) -> Result<Vec<IncidenceMatrix>> {
    cfg.validate()?;
    if cfg.n_sub > h.n() || cfg.m_sub > h.m() {
        return Err(HedgeError::InvalidConfig(format!(
            "target {}x{} exceeds source {}x{}",
            cfg.n_sub,
            cfg.m_sub,
            h.n(),
            h.m()
        )));
    }
    (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = named_stream(cfg.seed, "subsample", &[i as u64]);
            for _ in 0..cfg.max_retries.max(1) {
                if let Some(sub) = subsample_once(h, cfg, &mut rng) {
                    return Ok(sub);
                }
            }
            Err(HedgeError::RetriesExhausted(cfg.max_retries))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    #[default]
    Configuration,
    OverlappingBlocks,
    Committee,
    SparseTailOverlap,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 4] = [
        RegimeKind::Configuration,
        RegimeKind::OverlappingBlocks,
        RegimeKind::Committee,
        RegimeKind::SparseTailOverlap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::Configuration => "configuration",
            RegimeKind::OverlappingBlocks => "overlapping_blocks",
            RegimeKind::Committee => "committee",
            RegimeKind::SparseTailOverlap => "sparse_tail_overlap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeConfig {
    pub kind: RegimeKind,
    pub n: usize,
    pub m: usize,
    pub count: usize,
    pub seed: u64,
    /// Power-law exponent of hyperedge sizes (configuration).
    pub size_exponent: f64,
    /// Power-law exponent of node degrees (configuration).
    pub degree_exponent: f64,
    pub swaps_per_incidence: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Committee sizes range over `[min_frac * n, max_frac * n]`.
    pub committee_min_frac: f64,
    pub committee_max_frac: f64,
    /// Node popularity weight `(rank + 1)^(-popularity_exponent)`.
    pub popularity_exponent: f64,
    /// Target fraction of hyperedge pairs sharing at least two nodes.
    pub tail_fraction: f64,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            kind: RegimeKind::Configuration,
            n: 32,
            m: 32,
            count: 64,
            seed: 0,
            size_exponent: 2.5,
            degree_exponent: 2.5,
            swaps_per_incidence: 10,
            blocks: 4,
            p_in: 0.5,
            p_out: 0.02,
            committee_min_frac: 0.1,
            committee_max_frac: 0.7,
            popularity_exponent: 1.0,
            tail_fraction: 0.3,
        }
    }
}

impl RegimeConfig {
    pub fn of_kind(kind: RegimeKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HedgeError::InvalidConfig(msg));
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if self.n < 2 || self.m < 2 {
            return bad(format!("regime shape {}x{} needs n, m >= 2", self.n, self.m));
        }
        match self.kind {
            RegimeKind::Configuration => {
                if !(self.size_exponent > 1.0 && self.degree_exponent > 1.0) {
                    return bad("power-law exponents must exceed 1".into());
                }
            }
            RegimeKind::OverlappingBlocks => {
                if self.blocks == 0 || self.blocks > self.n.min(self.m) {
                    return bad(format!("block count {} outside 1..={}", self.blocks, self.n.min(self.m)));
                }
                if !(unit(self.p_in) && unit(self.p_out) && self.p_in > 0.0) {
                    return bad("block probabilities must lie in [0, 1] with p_in > 0".into());
                }
            }
            RegimeKind::Committee => {
                let (lo, hi) = (self.committee_min_frac, self.committee_max_frac);
                if !(lo > 0.0 && lo <= hi && hi <= 1.0) || !(self.popularity_exponent >= 0.0) {
                    return bad("committee fractions need 0 < min <= max <= 1".into());
                }
            }
            RegimeKind::SparseTailOverlap => {
                if !unit(self.tail_fraction) {
                    return bad("tail fraction must lie in [0, 1]".into());
                }
                if self.n < 5 {
                    return bad("sparse_tail_overlap needs n >= 5".into());
                }
            }
        }
        Ok(())
    }
}

/// Gale-Ryser test for a 0/1 matrix with the given row and column sums.
pub fn gale_ryser(degrees: &[usize], sizes: &[usize]) -> bool {
    if degrees.iter().sum::<usize>() != sizes.iter().sum::<usize>() {
        return false;
    }
    let mut cols = sizes.to_vec();
    cols.sort_unstable_by(|a, b| b.cmp(a));
    let mut lhs = 0;
    for (k, &c) in cols.iter().enumerate() {
        lhs += c;
        let rhs: usize = degrees.iter().map(|&d| d.min(k + 1)).sum();
        if lhs > rhs {
            return false;
        }
    }
    true
}

/// Ryser construction: each hyperedge, largest first, takes the nodes with the
/// largest remaining degree.
fn greedy_realization<R: Rng + ?Sized>(degrees: &[usize], sizes: &[usize], rng: &mut R) -> Option<Vec<Vec<usize>>> {
    let mut rem = degrees.to_vec();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]));
    let mut members = vec![Vec::new(); sizes.len()];
    for j in order {
        let mut nodes: Vec<usize> = (0..rem.len()).collect();
        nodes.shuffle(rng);
        nodes.sort_by(|&a, &b| rem[b].cmp(&rem[a]));
        for &v in nodes.iter().take(sizes[j]) {
            if rem[v] == 0 {
                return None;
            }
            rem[v] -= 1;
            members[j].push(v);
        }
    }
    Some(members)
}

/// Random stub matching with duplicate repair; `None` if repair stalls.
fn stub_matching<R: Rng + ?Sized>(degrees: &[usize], sizes: &[usize], rng: &mut R) -> Option<Vec<Vec<usize>>> {
    let mut stubs: Vec<usize> = degrees.iter().enumerate().flat_map(|(v, &d)| std::iter::repeat_n(v, d)).collect();
    stubs.shuffle(rng);
    let mut members: Vec<Vec<usize>> = Vec::with_capacity(sizes.len());
    let mut dups: Vec<(usize, usize)> = Vec::new();
    let mut cursor = 0;
    for (j, &s) in sizes.iter().enumerate() {
        let mut set = Vec::with_capacity(s);
        for &v in &stubs[cursor..cursor + s] {
            if set.contains(&v) {
                dups.push((j, v));
            } else {
                set.push(v);
            }
        }
        cursor += s;
        members.push(set);
    }
    for (j, v) in dups {
        let mut placed = false;
        for _ in 0..200 {
            let k = rng.random_range(0..members.len());
            if k == j || members[k].contains(&v) || members[k].is_empty() {
                continue;
            }
            let slot = rng.random_range(0..members[k].len());
            let w = members[k][slot];
            if members[j].contains(&w) {
                continue;
            }
            members[k][slot] = v;
            members[j].push(w);
            placed = true;
            break;
        }
        if !placed {
            return None;
        }
    }
    Some(members)
}

/// A random 0/1 matrix with exactly the given node degrees and hyperedge
/// sizes, randomized by `swaps_per_incidence` swap proposals per incidence.
pub fn realize_degree_sequence<R: Rng + ?Sized>(
    degrees: &[usize],
    sizes: &[usize],
    swaps_per_incidence: usize,
    rng: &mut R,
) -> Result<IncidenceMatrix> {
    if !gale_ryser(degrees, sizes) {
        return Err(HedgeError::InfeasibleDegrees(format!(
            "degrees {degrees:?} and sizes {sizes:?} admit no 0/1 realization"
        )));
    }
    let members = stub_matching(degrees, sizes, rng)
        .or_else(|| greedy_realization(degrees, sizes, rng))
        .ok_or_else(|| HedgeError::InfeasibleDegrees("greedy realization failed".into()))?;
    let pairs = members.iter().enumerate().flat_map(|(j, vs)| vs.iter().map(move |&v| (v, j)));
    let constraints = Constraints {
        allow_isolated: true,
        allow_empty_edges: sizes.contains(&0),
    };
    let mut h = IncidenceMatrix::from_pairs(degrees.len(), sizes.len(), pairs, constraints)?;
    let proposals = swaps_per_incidence * h.nnz();
    swap_chain(&mut h, proposals, rng);
    Ok(h)
}

/// Discrete power law `P(k) ∝ k^(-exponent)` on `lo..=hi`.
fn power_law_draw<R: Rng + ?Sized>(lo: usize, hi: usize, exponent: f64, rng: &mut R) -> usize {
    let weights: Vec<f64> = (lo..=hi).map(|k| (k as f64).powf(-exponent)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in (lo..=hi).zip(&weights) {
        if u < *w {
            return k;
        }
        u -= w;
    }
    hi
}

fn configuration_sample<R: Rng + ?Sized>(cfg: &RegimeConfig, rng: &mut R) -> Result<IncidenceMatrix> {
    let (n, m) = (cfg.n, cfg.m);
    let hi = (n / 2).max(2).min(n);
    // Zipf node weights give a power-law degree profile with the requested exponent.
    let zipf = 1.0 / (cfg.degree_exponent - 1.0);
    let mut weights: Vec<f64> = (0..n).map(|i| ((i + 1) as f64).powf(-zipf)).collect();
    weights.shuffle(rng);
    let mut last = None;
    for _ in 0..50 {
        let sizes: Vec<usize> = (0..m).map(|_| power_law_draw(2.min(n), hi, cfg.size_exponent, rng)).collect();
        let mut degrees = vec![0usize; n];
        let total: usize = sizes.iter().sum();
        let mut placed = 0;
        while placed < total {
            let open: Vec<usize> = (0..n).filter(|&v| degrees[v] < m).collect();
            let v = open[index::sample_weighted(rng, open.len(), |k| weights[open[k]], 1)
                .map_err(|e| HedgeError::InvalidConfig(e.to_string()))?
                .index(0)];
            degrees[v] += 1;
            placed += 1;
        }
        match realize_degree_sequence(&degrees, &sizes, cfg.swaps_per_incidence, rng) {
            Ok(h) => return Ok(h),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| HedgeError::InfeasibleDegrees("no feasible sequence".into())))
}

/// Block-structured sample together with node and hyperedge block labels.
pub fn overlapping_blocks_labeled<R: Rng + ?Sized>(
    cfg: &RegimeConfig,
    rng: &mut R,
) -> Result<(IncidenceMatrix, Vec<usize>, Vec<usize>)> {
    let (n, m, b) = (cfg.n, cfg.m, cfg.blocks);
    let mut node_block: Vec<usize> = (0..n).map(|i| i * b / n).collect();
    let mut edge_block: Vec<usize> = (0..m).map(|j| j * b / m).collect();
    node_block.shuffle(rng);
    edge_block.shuffle(rng);
    let mut data = vec![0u8; n * m];
    for j in 0..m {
        for attempt in 0..=100 {
            for i in 0..n {
                let p = if node_block[i] == edge_block[j] { cfg.p_in } else { cfg.p_out };
                data[i * m + j] = u8::from(rng.random_bool(p));
            }
            if (0..n).any(|i| data[i * m + j] == 1) {
                break;
            }
            if attempt == 100 {
                let own: Vec<usize> = (0..n).filter(|&i| node_block[i] == edge_block[j]).collect();
                data[own[rng.random_range(0..own.len())] * m + j] = 1;
            }
        }
    }
    let h = IncidenceMatrix::with_constraints(n, m, data, Constraints::ALLOW_ISOLATED)?;
    Ok((h, node_block, edge_block))
}

fn committee_sample<R: Rng + ?Sized>(cfg: &RegimeConfig, rng: &mut R) -> Result<IncidenceMatrix> {
    let n = cfg.n;
    let lo = ((cfg.committee_min_frac * n as f64).ceil() as usize).clamp(1, n);
    let hi = ((cfg.committee_max_frac * n as f64).floor() as usize).clamp(lo, n);
    let mut weights: Vec<f64> = (0..n).map(|i| ((i + 1) as f64).powf(-cfg.popularity_exponent)).collect();
    weights.shuffle(rng);
    let mut pairs = Vec::new();
    for j in 0..cfg.m {
        let size = rng.random_range(lo..=hi);
        let chosen = index::sample_weighted(rng, n, |i| weights[i], size)
            .map_err(|e| HedgeError::InvalidConfig(e.to_string()))?;
        pairs.extend(chosen.into_iter().map(|v| (v, j)));
    }
    IncidenceMatrix::from_pairs(n, cfg.m, pairs, Constraints::ALLOW_ISOLATED)
}

/// P(two uniform subsets of sizes `a`, `b` from `pool` items share >= 2).
fn overlap_at_least_two(pool: usize, a: usize, b: usize) -> f64 {
    let choose = |n: usize, k: usize| -> f64 {
        if k > n {
            return 0.0;
        }
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    };
    let total = choose(pool, b);
    let p0 = choose(pool - a, b) / total;
    let p1 = a as f64 * choose(pool - a, b - 1) / total;
    1.0 - p0 - p1
}

/// Expected fraction of hyperedge pairs sharing at least two nodes under the
/// planting model of [`RegimeKind::SparseTailOverlap`] on `n` nodes.
pub fn sparse_tail_expected_t2(n: usize, tail_fraction: f64) -> f64 {
    let pi = tail_fraction.sqrt();
    let pool = n - 2;
    let mut bg = 0.0;
    for a in 2..=3 {
        for b in 2..=3 {
            bg += 0.25 * overlap_at_least_two(pool, a, b);
        }
    }
    pi * pi + (1.0 - pi) * (1.0 - pi) * bg
}

fn sparse_tail_sample<R: Rng + ?Sized>(cfg: &RegimeConfig, rng: &mut R) -> Result<IncidenceMatrix> {
    let n = cfg.n;
    let pi = cfg.tail_fraction.sqrt();
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(rng);
    let (core, rest) = nodes.split_at(2);
    let mut pairs = Vec::new();
    for j in 0..cfg.m {
        if rng.random_bool(pi) {
            pairs.extend([(core[0], j), (core[1], j), (rest[rng.random_range(0..rest.len())], j)]);
        } else {
            let size = rng.random_range(2..=3);
            pairs.extend(index::sample(rng, rest.len(), size).into_iter().map(|k| (rest[k], j)));
        }
    }
    IncidenceMatrix::from_pairs(n, cfg.m, pairs, Constraints::ALLOW_ISOLATED)
}

/// `cfg.count` samples of the configured regime.
pub fn synth_regime(cfg: &RegimeConfig) -> Result<Vec<IncidenceMatrix>> {
    cfg.validate()?;
    let tag = RegimeKind::ALL.iter().position(|&k| k == cfg.kind).unwrap_or(0) as u64;
    (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = named_stream(cfg.seed, "regime", &[tag, i as u64]);
            match cfg.kind {
                RegimeKind::Configuration => configuration_sample(cfg, &mut rng),
                RegimeKind::OverlappingBlocks => overlapping_blocks_labeled(cfg, &mut rng).map(|t| t.0),
                RegimeKind::Committee => committee_sample(cfg, &mut rng),
                RegimeKind::SparseTailOverlap => sparse_tail_sample(cfg, &mut rng),
            }
        })
        .collect()
}
