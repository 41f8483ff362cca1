//! Drift regression against exact conditional reverse-drift targets.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::forward::{
    conditional_moments, reverse_drift_with_moments, sample_forward_state, DiffusionConfig,
    HypergraphModes,
};
use crate::incidence::{IncidenceMatrix, RelaxedState};
use crate::net::{DriftNet, NetArch, ParamGradients};
use crate::rng::named_stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Initial learning rate, cosine-decayed to `lr_final`.
    pub lr: f64,
    pub lr_final: f64,
    /// Training times are drawn uniformly from `[s_min, s_max] * horizon`.
    pub s_min: f64,
    pub s_max: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Target norms above this quantile of the warmup buffer are clipped.
    pub clip_quantile: f64,
    /// Steps whose target norms fill the clipping buffer.
    pub warmup_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 16,
            lr: 1e-3,
            lr_final: 1e-5,
            s_min: 1e-3,
            s_max: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_quantile: 0.999,
            warmup_steps: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HedgeError::InvalidConfig(m.to_string()));
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(0.0 < self.s_min && self.s_min < self.s_max && self.s_max <= 1.0) {
            return bad("need 0 < s_min < s_max <= 1 (fractions of the horizon)");
        }
        if !(self.lr > 0.0 && self.lr_final >= 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("invalid adaptive-moment parameters");
        }
        if !(0.0 < self.clip_quantile && self.clip_quantile <= 1.0) {
            return bad("clip_quantile must be in (0, 1]");
        }
        Ok(())
    }

    /// Cosine decay from `lr` at step 0 to `lr_final` at the last step.
    pub fn lr_at(&self, step: usize) -> f64 {
        let span = self.steps.saturating_sub(1).max(1) as f64;
        let t = (step as f64 / span).min(1.0);
        self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    /// Loss of the zero predictor on the same minibatch.
    pub zero_loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
    pub params_checksum: u64,
    pub clip_threshold: Option<f64>,
}

impl TrainReport {
    /// Mean of `loss / zero_loss` over the last `window` steps.
    pub fn tail_loss_ratio(&self, window: usize) -> f64 {
        let tail = &self.records[self.records.len().saturating_sub(window)..];
        let loss: f64 = tail.iter().map(|r| r.loss).sum();
        let zero: f64 = tail.iter().map(|r| r.zero_loss).sum();
        loss / zero
    }
}

/// Per-hypergraph operators and eigenbases, computed once.
#[derive(Debug, Clone)]
pub struct BasisBank {
    entries: Vec<HypergraphModes>,
}

impl BasisBank {
    pub fn new(cfg: &DiffusionConfig, data: &[IncidenceMatrix]) -> Result<Self> {
        let entries = data
            .iter()
            .map(|h| HypergraphModes::new(cfg, h))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    pub fn get(&self, i: usize) -> &HypergraphModes {
        &self.entries[i]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A regression example `(H index, s, X_s, u*_{s|H}(X_s))`.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub index: usize,
    pub s: f64,
    pub state: RelaxedState,
    pub target: RelaxedState,
}

/// Draws one example from a keyed stream.
pub fn draw_sample<R: Rng + ?Sized>(
    diffusion: &DiffusionConfig,
    bank: &BasisBank,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainingSample> {
    let index = rng.random_range(0..bank.len());
    let lo = cfg.s_min * diffusion.horizon;
    let hi = cfg.s_max * diffusion.horizon;
    let s = rng.random_range(lo..=hi);
    let modes = bank.get(index);
    let moments = conditional_moments(diffusion, modes, s)?;
    let state = sample_forward_state(&moments, &modes.basis, rng)?;
    let target = reverse_drift_with_moments(diffusion, modes, &moments, &state)?;
    Ok(TrainingSample {
        index,
        s,
        state,
        target,
    })
}

fn check_target(sample: &TrainingSample) -> Result<()> {
    if sample.target.iter().any(|v| !v.is_finite()) {
        return Err(HedgeError::NonFinite(format!(
            "regression target at s = {}",
            sample.s
        )));
    }
    Ok(())
}

/// Mean squared Frobenius error of the net over a batch.
pub fn regression_loss(net: &DriftNet, batch: &[TrainingSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(HedgeError::Empty("batch".into()));
    }
    let mut total = 0.0;
    for sample in batch {
        check_target(sample)?;
        let u = net.forward(&sample.state, sample.s)?;
        total += (u - &sample.target).norm_squared();
    }
    Ok(total / batch.len() as f64)
}

/// Loss and its parameter gradient; per-sample work runs in parallel and the
/// reduction follows batch order.
pub fn loss_and_gradient(net: &DriftNet, batch: &[TrainingSample]) -> Result<(f64, ParamGradients)> {
    if batch.is_empty() {
        return Err(HedgeError::Empty("batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, ParamGradients)> = batch
        .par_iter()
        .map(|sample| {
            check_target(sample)?;
            let (u, cache) = net.forward_cached(&sample.state, sample.s)?;
            let resid = u - &sample.target;
            let grad = net.backward(&cache, &(&resid * 2.0))?;
            Ok((resid.norm_squared(), grad))
        })
        .collect::<Result<_>>()?;
    let mut grad = ParamGradients::zeros(net.num_params());
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grad.add_scaled(g, scale);
    }
    Ok((loss * scale, grad))
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            first: vec![0.0; len],
            second: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &ParamGradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(&grad.0)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

pub fn check_dataset(data: &[IncidenceMatrix]) -> Result<(usize, usize)> {
    let first = data
        .first()
        .ok_or_else(|| HedgeError::Empty("training set".into()))?;
    let shape = first.shape();
    for (k, h) in data.iter().enumerate() {
        if h.shape() != shape {
            return Err(HedgeError::DimensionMismatch {
                expected: format!("{}x{}", shape.0, shape.1),
                got: format!("{}x{} (element {k})", h.n(), h.m()),
            });
        }
        if !h.empty_hyperedges().is_empty() {
            return Err(HedgeError::InvalidIncidence(format!(
                "training element {k} has empty hyperedges"
            )));
        }
    }
    Ok(shape)
}

/// Stateful training loop; one call to [`Trainer::step`] is one update.
pub struct Trainer {
    pub net: DriftNet,
    diffusion: DiffusionConfig,
    cfg: TrainConfig,
    bank: BasisBank,
    adam: Adam,
    step: usize,
    norm_buffer: Vec<f64>,
    clip: Option<f64>,
    started: Instant,
}

impl Trainer {
    pub fn new(
        data: &[IncidenceMatrix],
        diffusion: DiffusionConfig,
        arch: NetArch,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        diffusion.validate()?;
        let shape = check_dataset(data)?;
        if shape != diffusion.shape() {
            return Err(crate::error::shape_err(diffusion.shape(), shape));
        }
        let bank = BasisBank::new(&diffusion, data)?;
        let net = DriftNet::new(arch, diffusion.horizon, crate::rng::name_key("init") ^ cfg.seed)?;
        let adam = Adam::new(net.num_params(), cfg.beta1, cfg.beta2, cfg.eps);
        Ok(Self {
            net,
            diffusion,
            cfg,
            bank,
            adam,
            step: 0,
            norm_buffer: Vec::new(),
            clip: None,
            started: Instant::now(),
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn clip_threshold(&self) -> Option<f64> {
        self.clip
    }

    pub fn bank(&self) -> &BasisBank {
        &self.bank
    }

    /// The minibatch used at `step`, after clipping.
    pub fn batch_at(&self, step: usize) -> Result<Vec<TrainingSample>> {
        (0..self.cfg.batch)
            .into_par_iter()
            .map(|b| {
                let mut rng = named_stream(self.cfg.seed, "train", &[step as u64, b as u64]);
                let mut sample = draw_sample(&self.diffusion, &self.bank, &self.cfg, &mut rng)?;
                if let Some(limit) = self.clip {
                    let norm = sample.target.norm();
                    if norm > limit {
                        sample.target *= limit / norm;
                    }
                }
                Ok(sample)
            })
            .collect()
    }

    pub fn step(&mut self) -> Result<TrainRecord> {
        let batch = self.batch_at(self.step)?;
        if self.clip.is_none() {
            self.norm_buffer.extend(batch.iter().map(|s| s.target.norm()));
            if self.step + 1 >= self.cfg.warmup_steps {
                self.clip = Some(quantile(&mut self.norm_buffer, self.cfg.clip_quantile));
            }
        }
        let zero_loss = batch.iter().map(|s| s.target.norm_squared()).sum::<f64>() / batch.len() as f64;
        let (loss, grad) = loss_and_gradient(&self.net, &batch)?;
        if !loss.is_finite() || grad.0.iter().any(|g| !g.is_finite()) {
            return Err(HedgeError::NonFinite(format!("loss at step {}", self.step)));
        }
        let lr = self.cfg.lr_at(self.step);
        self.adam.step(self.net.params_mut(), &grad, lr);
        let record = TrainRecord {
            step: self.step,
            loss,
            zero_loss,
            lr,
            wall_ms: self.started.elapsed().as_millis() as u64,
        };
        self.step += 1;
        Ok(record)
    }

    /// Runs the remaining steps, writing one JSON record per line to `log`.
    pub fn run(&mut self, mut log: Option<&mut dyn Write>) -> Result<Vec<TrainRecord>> {
        let mut records = Vec::with_capacity(self.cfg.steps.saturating_sub(self.step));
        while self.step < self.cfg.steps {
            let r = self.step()?;
            if let Some(w) = log.as_deref_mut() {
                serde_json::to_writer(&mut *w, &LogLine::from(&r))?;
                w.write_all(b"\n")?;
            }
            records.push(r);
        }
        Ok(records)
    }

    pub fn finish(self, records: Vec<TrainRecord>) -> (DriftNet, TrainReport) {
        let report = TrainReport {
            records,
            params_checksum: self.net.checksum(),
            clip_threshold: self.clip,
        };
        (self.net, report)
    }
}

#[derive(Serialize)]
struct LogLine {
    step: usize,
    loss: f64,
    lr: f64,
    wall_ms: u64,
}

impl From<&TrainRecord> for LogLine {
    fn from(r: &TrainRecord) -> Self {
        Self {
            step: r.step,
            loss: r.loss,
            lr: r.lr,
            wall_ms: r.wall_ms,
        }
    }
}

/// Full training run.
pub fn train(
    data: &[IncidenceMatrix],
    diffusion: &DiffusionConfig,
    arch: NetArch,
    cfg: &TrainConfig,
    log: Option<&mut dyn Write>,
) -> Result<(DriftNet, TrainReport)> {
    let mut trainer = Trainer::new(data, diffusion.clone(), arch, cfg.clone())?;
    let records = trainer.run(log)?;
    Ok(trainer.finish(records))
}
