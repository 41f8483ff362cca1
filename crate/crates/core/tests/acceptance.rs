//! Acceptance criteria, one test per criterion. Each prints a single
//! `criterion N: PASS|FAIL` line straight to the terminal, bypassing capture.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use hedge::ablation::{run_ablation, AblationConfig, Variant};
use hedge::align::{aligned_agreement, raw_agreement};
use hedge::baselines::{batch_density, hcm_mcmc_generate, BaselineConfig, BaselineKind};
use hedge::datasets::{synth_regime, RegimeConfig, RegimeKind};
use hedge::forward::{conditional_moments, conditional_score, sample_forward_state, DiffusionConfig, HypergraphModes, ScheduleKind};
use hedge::incidence::{degree_profile, edge_laplacian, node_laplacian, permute_matrix, Constraints, HeatTerms};
use hedge::metrics::{mmd2_unbiased, wasserstein_1d};
use hedge::net::{DriftNet, NetArch};
use hedge::sampler::{generate, saturation_fraction, threshold_flip_fraction, SampleConfig};
use hedge::spectral::{heat_kernel_state, SpectralBasis};
use hedge::trainer::{draw_sample, loss_and_gradient, regression_loss, BasisBank, TrainConfig, Trainer};
use hedge::validation::{
    check_conditional_law, check_em_order, check_mixture_identity, check_pure_ou_moments, check_stability_bound, Check,
    EmBudget, LawBudget, StabilityBudget,
};
use hedge::{IncidenceMatrix, RelaxedState};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, pass: bool, elapsed: Duration, detail: &str) {
    let line = format!(
        "criterion {n:>2}: {} ({:.1}s) {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

/// Bernoulli(p) entries; an empty hyperedge gets one uniformly chosen member.
fn random_h<R: Rng>(n: usize, m: usize, p: f64, rng: &mut R) -> IncidenceMatrix {
    let mut data: Vec<u8> = (0..n * m).map(|_| u8::from(rng.random_bool(p))).collect();
    for j in 0..m {
        if (0..n).all(|i| data[i * m + j] == 0) {
            data[rng.random_range(0..n) * m + j] = 1;
        }
    }
    IncidenceMatrix::with_constraints(n, m, data, Constraints::ALLOW_ISOLATED).unwrap()
}

fn perm<R: Rng>(k: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..k).collect();
    p.shuffle(rng);
    p
}

fn failed_checks(checks: &[Check]) -> Vec<String> {
    checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{}={:.4e} (bound {:e} + {:e}; {})", c.name, c.measured, c.bound, c.tolerance, c.note))
        .collect()
}

#[test]
fn criterion_01_operator_correctness() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut min_eig, mut asym, mut equi) = (f64::INFINITY, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let (n, m) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let h = random_h(n, m, rng.random_range(0.15..0.7), &mut rng);
        let lv = node_laplacian(&h).matrix;
        let le = edge_laplacian(&h).matrix;
        for l in [&lv, &le] {
            asym = asym.max((l - l.transpose()).amax());
            let sym = (l + l.transpose()) * 0.5;
            min_eig = min_eig.min(SymmetricEigen::new(sym).eigenvalues.min());
        }
        for _ in 0..20 {
            let (p, q) = (perm(n, &mut rng), perm(m, &mut rng));
            let hp = h.permuted(&p, &q);
            equi = equi.max((node_laplacian(&hp).matrix - permute_matrix(&lv, &p, &p)).amax());
            equi = equi.max((edge_laplacian(&hp).matrix - permute_matrix(&le, &q, &q)).amax());
        }
    }
    let el = t.elapsed();
    let pass = asym == 0.0 && min_eig >= -1e-10 && equi <= 1e-9 && el < Duration::from_secs(10);
    report(
        1,
        pass,
        el,
        &format!("max asymmetry {asym:.1e}, min eigenvalue {min_eig:.3e}, equivariance defect {equi:.1e}"),
    );
    assert!(pass);
}

/// Dense `nm x nm` generator of `X -> L_V X + X L_E` on column-major `vec(X)`.
fn kron_generator(h: &IncidenceMatrix) -> DMatrix<f64> {
    let (n, m) = h.shape();
    let lv = node_laplacian(h).matrix;
    let le = edge_laplacian(h).matrix;
    DMatrix::<f64>::identity(m, m).kronecker(&lv) + le.transpose().kronecker(&DMatrix::<f64>::identity(n, n))
}

fn null_projector(l: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let e = SymmetricEigen::new(l.clone());
    let k = l.nrows();
    let mut p = DMatrix::zeros(k, k);
    for (i, &v) in e.eigenvalues.iter().enumerate() {
        if v.abs() <= 1e-9 {
            let c = e.eigenvectors.column(i);
            p += &c * c.transpose();
        }
    }
    (p, e.eigenvalues.iter().copied().collect())
}

#[test]
fn criterion_02_spectral_decoupling() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_flow = 0.0f64;
    let mut worst_bound = f64::NEG_INFINITY;
    for _ in 0..20 {
        let (n, m) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let h = random_h(n, m, rng.random_range(0.2..0.6), &mut rng);
        let gen = kron_generator(&h);
        let basis = SpectralBasis::from_incidence(&h).unwrap();
        let z0 = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v0 = DVector::from_column_slice(z0.as_slice());
        for s in [0.05, 0.3, 1.0, 2.5, 6.0] {
            let dense = (&gen * -s).exp() * &v0;
            let dense = DMatrix::from_column_slice(n, m, dense.as_slice());
            let modal = heat_kernel_state(&basis, &z0, s).unwrap();
            worst_flow = worst_flow.max((&modal - &dense).norm() / dense.norm());
        }
        let (pv, lam) = null_projector(&node_laplacian(&h).matrix);
        let (pe, mu) = null_projector(&edge_laplacian(&h).matrix);
        let eta = lam
            .iter()
            .flat_map(|l| mu.iter().map(move |u| l.max(0.0) + u.max(0.0)))
            .filter(|&r| r > 1e-9)
            .fold(f64::INFINITY, f64::min);
        if !eta.is_finite() {
            continue;
        }
        let limit = &pv * &z0 * &pe;
        for k in 1..=10 {
            let s = 0.4 * k as f64;
            let zs = (&gen * -s).exp() * &v0;
            let zs = DMatrix::from_column_slice(n, m, zs.as_slice());
            worst_bound = worst_bound.max((zs - &limit).norm() - (-eta * s).exp() * z0.norm());
        }
    }
    let el = t.elapsed();
    let pass = worst_flow <= 1e-8 && worst_bound <= 1e-12 && el < Duration::from_secs(30);
    report(
        2,
        pass,
        el,
        &format!("max relative error vs dense exponential {worst_flow:.2e}; max bound excess {worst_bound:.2e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_conditional_gaussian_law() {
    let _g = serial();
    let t = Instant::now();
    let h = IncidenceMatrix::from_rows(&[[1u8, 0, 1, 0], [1, 1, 0, 0], [0, 1, 1, 1]]).unwrap();
    let cfg = DiffusionConfig::for_data(std::slice::from_ref(&h)).unwrap();
    let mut checks = check_conditional_law(&h, &cfg, &LawBudget::default(), 303);
    checks.extend(check_pure_ou_moments(&h, &cfg));
    let el = t.elapsed();
    let worst_se = checks
        .iter()
        .filter(|c| c.name.starts_with("law.mean") || c.name.starts_with("law.var"))
        .map(|c| c.measured)
        .fold(0.0, f64::max);
    let ou = checks.iter().find(|c| c.name == "law.pure_ou_analytic").map_or(f64::NAN, |c| c.measured);
    let bad = failed_checks(&checks);
    let pass = bad.is_empty() && checks.len() == 12 && el < Duration::from_secs(300);
    report(
        3,
        pass,
        el,
        &format!("max |z| {worst_se:.2} over 5 times; pure-OU error {ou:.1e}; failures {bad:?}"),
    );
    assert!(pass);
}

/// Dense Gaussian log-density in column-major `vec` coordinates.
fn gaussian_logpdf(mean: &DVector<f64>, cov: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("covariance is positive definite");
    let r = x - mean;
    let z = chol.solve(&r);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (r.dot(&z) + logdet + r.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

#[test]
fn criterion_04_score_exactness() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let h = IncidenceMatrix::from_rows(&[[1u8, 0, 1, 0], [1, 1, 0, 1], [0, 1, 1, 0]]).unwrap();
    let (n, m) = h.shape();
    let cfg = DiffusionConfig::for_data(std::slice::from_ref(&h)).unwrap();
    let modes = HypergraphModes::new(&cfg, &h).unwrap();
    let b = modes.basis.v.kronecker(&modes.basis.u);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let s = cfg.horizon * (0.02 + 0.98 * k as f64 / 19.0);
        let mom = conditional_moments(&cfg, &modes, s).unwrap();
        let var = DVector::from_column_slice(mom.var_modes.as_slice());
        let cov = &b * DMatrix::from_diagonal(&var) * b.transpose();
        let mean = &b * DVector::from_column_slice(mom.mean_modes.as_slice());
        let x = sample_forward_state(&mom, &modes.basis, &mut rng).unwrap();
        let xv = DVector::from_column_slice(x.as_slice());
        let hstep = 1e-3;
        let fd = DVector::from_fn(n * m, |r, _| {
            let at = |d: f64| {
                let mut y = xv.clone();
                y[r] += d;
                gaussian_logpdf(&mean, &cov, &y)
            };
            (-at(2.0 * hstep) + 8.0 * at(hstep) - 8.0 * at(-hstep) + at(-2.0 * hstep)) / (12.0 * hstep)
        });
        let score = conditional_score(&mom, &modes.basis, &x).unwrap();
        let sv = DVector::from_column_slice(score.as_slice());
        worst = worst.max((sv - &fd).norm() / fd.norm());
    }
    let el = t.elapsed();
    let pass = worst <= 1e-5;
    report(4, pass, el, &format!("max relative error {worst:.2e} over 20 probes"));
    assert!(pass);
}

#[test]
fn criterion_05_mixture_identities() {
    let _g = serial();
    let t = Instant::now();
    let data = [
        IncidenceMatrix::from_rows(&[[1u8, 0, 1, 0], [0, 1, 1, 0], [1, 0, 0, 1], [0, 1, 0, 1]]).unwrap(),
        IncidenceMatrix::from_rows(&[[0u8, 1, 1, 1], [1, 1, 0, 0], [0, 0, 1, 0], [1, 0, 0, 1]]).unwrap(),
    ];
    let cfg = DiffusionConfig::for_data(&data).unwrap();
    let checks = check_mixture_identity(&data, &cfg, &[0.1, 0.3, 0.6, 1.0], 5, 505);
    let el = t.elapsed();
    let bad = failed_checks(&checks);
    let pass = bad.is_empty() && checks.len() == 2;
    let detail: Vec<String> = checks.iter().map(|c| format!("{} {:.2e} ({})", c.name, c.measured, c.note)).collect();
    report(5, pass, el, &detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_06_em_strong_order() {
    let _g = serial();
    let t = Instant::now();
    let cfg = DiffusionConfig {
        schedule: ScheduleKind::Constant,
        heat: HeatTerms::Off,
        ..DiffusionConfig::for_density(3, 3, 0.3)
    };
    let checks = check_em_order(&cfg, &EmBudget::default(), 606);
    let el = t.elapsed();
    let c = &checks[0];
    let pass = c.passed() && el < Duration::from_secs(120);
    report(
        6,
        pass,
        el,
        &format!("fitted slope {:.4}, accepted [0.4, 0.65]; {}", c.measured, c.note),
    );
    assert!(pass, "{c:?}");
}

#[test]
fn criterion_07_stability_inequality() {
    let _g = serial();
    let t = Instant::now();
    let checks = check_stability_bound(6, &StabilityBudget::default(), 707);
    let el = t.elapsed();
    let bad = failed_checks(&checks);
    let pass = bad.is_empty();
    let detail: Vec<String> = checks.iter().map(|c| format!("{} {:.3e}", c.name, c.measured)).collect();
    report(7, pass, el, &format!("{}; failures {bad:?}", detail.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_08_gradient_correctness() {
    let _g = serial();
    let t = Instant::now();
    let h = IncidenceMatrix::from_rows(&[[1u8, 0, 1, 0], [1, 1, 0, 0], [0, 1, 1, 1]]).unwrap();
    let diffusion = DiffusionConfig::for_data(std::slice::from_ref(&h)).unwrap();
    let bank = BasisBank::new(&diffusion, std::slice::from_ref(&h)).unwrap();
    let tc = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let batch: Vec<_> = (0..4).map(|_| draw_sample(&diffusion, &bank, &tc, &mut rng).unwrap()).collect();
    let mut net = DriftNet::new(NetArch::default(), diffusion.horizon, 8).unwrap();
    for p in net.params_mut() {
        *p += 0.05 * rng.sample::<f64, _>(StandardNormal);
    }
    let (_, grad) = loss_and_gradient(&net, &batch).unwrap();
    let mut worst = 0.0f64;
    let mut worst_at = 0;
    for k in 0..net.num_params() {
        let p0 = net.params()[k];
        let step = 1e-5 * p0.abs().max(1.0);
        let mut eval = |d: f64| {
            net.params_mut()[k] = p0 + d;
            regression_loss(&net, &batch).unwrap()
        };
        let fd = (eval(step) - eval(-step)) / (2.0 * step);
        net.params_mut()[k] = p0;
        let g = grad.0[k];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
        if rel > worst {
            worst = rel;
            worst_at = k;
        }
    }
    let el = t.elapsed();
    let pass = worst <= 1e-4;
    report(
        8,
        pass,
        el,
        &format!("{} parameters, max relative error {worst:.2e} at index {worst_at}", net.num_params()),
    );
    assert!(pass);
}

const C9_SEEDS: u64 = 5;
const C9_SAMPLES: usize = 10;

struct SeedRun {
    seed: u64,
    loss_ratio: f64,
    aligned: f64,
    raw: f64,
    relaxed: Vec<RelaxedState>,
}

struct LearningRuns {
    target: IncidenceMatrix,
    runs: Vec<SeedRun>,
    er_aligned: f64,
    train_time: Duration,
}

fn c9_target() -> IncidenceMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    random_h(16, 16, 0.3, &mut rng)
}

/// Criterion-9 training, shared with criterion 11.
fn learning_runs() -> &'static LearningRuns {
    static RUNS: OnceLock<LearningRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t = Instant::now();
        let target = c9_target();
        let data = vec![target.clone()];
        let diffusion = DiffusionConfig::for_data(&data).unwrap();
        let runs = (0..C9_SEEDS)
            .map(|seed| {
                let tc = TrainConfig {
                    steps: 2000,
                    batch: 16,
                    lr: 3e-3,
                    seed,
                    ..TrainConfig::default()
                };
                let mut trainer = Trainer::new(&data, diffusion.clone(), NetArch::default(), tc).unwrap();
                let records = trainer.run(None).unwrap();
                let (net, report) = trainer.finish(records);
                let sc = SampleConfig {
                    steps: 256,
                    seed,
                    threshold: 0.5,
                };
                let out = generate(&net, &diffusion, &sc, C9_SAMPLES).unwrap();
                assert!(out.failures.is_empty(), "{:?}", out.failures);
                let k = out.samples.len() as f64;
                SeedRun {
                    seed,
                    loss_ratio: report.tail_loss_ratio(100),
                    aligned: out.samples.iter().map(|s| aligned_agreement(&s.projected, &target)).sum::<f64>() / k,
                    raw: out.samples.iter().map(|s| raw_agreement(&s.projected, &target)).sum::<f64>() / k,
                    relaxed: out.samples.into_iter().map(|s| s.relaxed).collect(),
                }
            })
            .collect();
        // Context: independent Bernoulli matrices at the target density.
        let rho = batch_density(std::slice::from_ref(&target));
        let mut rng = ChaCha8Rng::seed_from_u64(909);
        let er_aligned = (0..C9_SAMPLES)
            .map(|_| {
                let d = (0..256).map(|_| u8::from(rng.random_bool(rho))).collect();
                let g = IncidenceMatrix::with_constraints(16, 16, d, Constraints::RELAXED).unwrap();
                aligned_agreement(&g, &target)
            })
            .sum::<f64>()
            / C9_SAMPLES as f64;
        LearningRuns {
            target,
            runs,
            er_aligned,
            train_time: t.elapsed(),
        }
    })
}

#[test]
fn criterion_09_end_to_end_learning() {
    let _g = serial();
    let t = Instant::now();
    let lr = learning_runs();
    let el = lr.train_time.max(t.elapsed());
    let mut good = 0;
    let mut rows = Vec::new();
    for r in &lr.runs {
        let ok = r.loss_ratio < 0.1 && r.aligned > 0.9;
        good += usize::from(ok);
        rows.push(format!(
            "seed {} loss ratio {:.3} agreement {:.3} (unaligned {:.3}){}",
            r.seed,
            r.loss_ratio,
            r.aligned,
            r.raw,
            if ok { "" } else { " miss" }
        ));
    }
    let pass = good >= 3 && el < Duration::from_secs(600);
    report(
        9,
        pass,
        el,
        &format!(
            "{good}/5 seeds meet both bounds on a {}x{} target with {} incidences; Bernoulli reference agreement {:.3}; {}",
            lr.target.n(),
            lr.target.m(),
            lr.target.nnz(),
            lr.er_aligned,
            rows.join("; ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_ablation_direction() {
    let _g = serial();
    let t = Instant::now();
    let regime = RegimeConfig {
        n: 32,
        m: 32,
        ..RegimeConfig::of_kind(RegimeKind::OverlappingBlocks)
    };
    let mut cfg = AblationConfig::new(regime, 5, 1010);
    cfg.variants = vec![Variant::Full, Variant::OuOnly];
    cfg.train = TrainConfig {
        steps: 1000,
        batch: 8,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let report_ = run_ablation(&cfg, None).unwrap();
    let el = t.elapsed();
    let full = report_.summary[&Variant::Full]["intersection_wd"];
    let ou = report_.summary[&Variant::OuOnly]["intersection_wd"];
    let pass = full.mean <= ou.mean + 0.02 && el < Duration::from_secs(1800);
    report(
        10,
        pass,
        el,
        &format!(
            "intersection WD full {:.4} ± {:.4} vs OU-only {:.4} ± {:.4} over 5 seeds",
            full.mean, full.se, ou.mean, ou.se
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_11_projection_stability() {
    let _g = serial();
    let t = Instant::now();
    let lr = learning_runs();
    let el = t.elapsed();
    let relaxed: Vec<&RelaxedState> = lr.runs.iter().flat_map(|r| r.relaxed.iter()).collect();
    let k = relaxed.len() as f64;
    let saturation = relaxed.iter().map(|y| saturation_fraction(y)).sum::<f64>() / k;
    let flips = relaxed.iter().map(|y| threshold_flip_fraction(y, 0.1, 0.9)).sum::<f64>() / k;
    let pass = saturation >= 0.9 && flips < 0.05;
    report(
        11,
        pass,
        el,
        &format!(
            "{} samples: {:.2}% of entries within 0.1 of {{0,1}}, threshold sweep changes {:.2}%",
            relaxed.len(),
            100.0 * saturation,
            100.0 * flips
        ),
    );
    assert!(pass);
}

/// Optimal transport between uniform empirical measures by successive
/// shortest augmenting paths on the bipartite network with integer masses.
fn transport_oracle(a: &[f64], b: &[f64]) -> f64 {
    let (p, q) = (a.len(), b.len());
    let mut supply = vec![q as i64; p];
    let mut demand = vec![p as i64; q];
    let mut flow = vec![vec![0i64; q]; p];
    let cost = |i: usize, j: usize| (a[i] - b[j]).abs();
    loop {
        // Bellman-Ford over nodes: source 0, a-nodes 1..=p, b-nodes p+1..=p+q.
        let nodes = p + q + 1;
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev = vec![usize::MAX; nodes];
        dist[0] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for i in 0..p {
                if supply[i] > 0 && dist[0] < dist[1 + i] {
                    dist[1 + i] = dist[0];
                    prev[1 + i] = 0;
                    changed = true;
                }
                for j in 0..q {
                    let (u, v) = (1 + i, 1 + p + j);
                    if dist[u] + cost(i, j) < dist[v] - 1e-15 {
                        dist[v] = dist[u] + cost(i, j);
                        prev[v] = u;
                        changed = true;
                    }
                    if flow[i][j] > 0 && dist[v] - cost(i, j) < dist[u] - 1e-15 {
                        dist[u] = dist[v] - cost(i, j);
                        prev[u] = v;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let Some(j) = (0..q)
            .filter(|&j| demand[j] > 0 && dist[1 + p + j].is_finite())
            .min_by(|&x, &y| dist[1 + p + x].total_cmp(&dist[1 + p + y]))
        else {
            break;
        };
        let mut path = vec![1 + p + j];
        while *path.last().unwrap() != 0 {
            path.push(prev[*path.last().unwrap()]);
        }
        path.reverse();
        let mut amount = demand[j].min(supply[path[1] - 1]);
        for w in path[1..].windows(2) {
            if w[0] > p {
                amount = amount.min(flow[w[1] - 1][w[0] - 1 - p]);
            }
        }
        supply[path[1] - 1] -= amount;
        demand[j] -= amount;
        for w in path[1..].windows(2) {
            if w[0] <= p {
                flow[w[0] - 1][w[1] - 1 - p] += amount;
            } else {
                flow[w[1] - 1][w[0] - 1 - p] -= amount;
            }
        }
    }
    let total = (p * q) as f64;
    let mut c = 0.0;
    for i in 0..p {
        for j in 0..q {
            c += flow[i][j] as f64 * cost(i, j);
        }
    }
    c / total
}

#[test]
fn criterion_12_metric_oracles() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let mut w_err = 0.0f64;
    for _ in 0..300 {
        let a: Vec<f64> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(-3.0..3.0)).collect();
        w_err = w_err.max((wasserstein_1d(&a, &b).unwrap() - transport_oracle(&a, &b)).abs());
    }
    let mut mmd_err = 0.0f64;
    for _ in 0..100 {
        let pts = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..4).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect()
        };
        let (x, y) = (pts(&mut rng), pts(&mut rng));
        let bw = rng.random_range(0.3..3.0);
        let k = |u: &Vec<f64>, v: &Vec<f64>| {
            let d: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d / (2.0 * bw * bw)).exp()
        };
        let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    xx += k(&x[i], &x[j]);
                    yy += k(&y[i], &y[j]);
                }
                xy += k(&x[i], &y[j]);
            }
        }
        let oracle = xx / 12.0 + yy / 12.0 - 2.0 * xy / 16.0;
        mmd_err = mmd_err.max((mmd2_unbiased(&x, &y, bw).unwrap() - oracle).abs());
    }
    let reference = synth_regime(&RegimeConfig {
        n: 16,
        m: 16,
        count: 5,
        seed: 12,
        ..RegimeConfig::of_kind(RegimeKind::Configuration)
    })
    .unwrap();
    let profiles: Vec<_> = reference.iter().map(degree_profile).collect();
    let cfg = BaselineConfig {
        kind: BaselineKind::HcmMcmc,
        swaps_per_incidence: 10,
        seed: 12,
    };
    let out = hcm_mcmc_generate(&reference, 100, &cfg).unwrap();
    let preserved = out.samples.iter().filter(|h| profiles.contains(&degree_profile(h))).count();
    let el = t.elapsed();
    let pass = w_err <= 1e-9 && mmd_err <= 1e-12 && preserved == out.samples.len();
    report(
        12,
        pass,
        el,
        &format!(
            "W1 vs transport LP {w_err:.1e}; MMD vs double sum {mmd_err:.1e}; swap chain preserved {preserved}/{}",
            out.samples.len()
        ),
    );
    assert!(pass);
}
