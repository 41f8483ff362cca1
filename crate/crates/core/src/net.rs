//! Permutation-equivariant state-only drift network.
//!
//! Each layer maps `c_in` channels of `n x m` matrices to `c_out` channels
//! using, per channel pair, the four equivariant linear maps
//! `{X, row-mean broadcast, column-mean broadcast, global-mean broadcast}`
//! plus a constant bias per output channel. Hidden layers are modulated by a
//! time-dependent per-channel scale and shift, `(1 + g) Z + h`, followed by
//! `tanh`. The last layer is linear.
//!
//! Parameters live in one flat vector; gradients use the same layout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::incidence::RelaxedState;
use crate::linalg::spectral_norm;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"HEDGEv1";
const BASIS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArch {
    /// Hidden channel widths; input and output have one channel.
    pub hidden: Vec<usize>,
    /// Sinusoidal time features, an even number.
    pub embed_dim: usize,
    pub time_hidden: usize,
}

impl Default for NetArch {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16, 16],
            embed_dim: 16,
            time_hidden: 32,
        }
    }
}

impl NetArch {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(1);
        w.extend_from_slice(&self.hidden);
        w.push(1);
        w
    }

    fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(HedgeError::InvalidConfig("embed_dim must be even and positive".into()));
        }
        if self.time_hidden == 0 || self.hidden.iter().any(|&c| c == 0) {
            return Err(HedgeError::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSlots {
    cin: usize,
    cout: usize,
    /// `[cout][cin][4]`
    weights: usize,
    /// `[cout]`
    bias: usize,
    /// Offset of this layer's scales in the modulation vector; shifts follow.
    film: Option<usize>,
}

impl LayerSlots {
    fn w(&self, o: usize, c: usize, k: usize) -> usize {
        self.weights + (o * self.cin + c) * BASIS + k
    }
}

#[derive(Debug, Clone)]
struct Layout {
    layers: Vec<LayerSlots>,
    t1_w: usize,
    t1_b: usize,
    t2_w: usize,
    t2_b: usize,
    film_len: usize,
    total: usize,
}

impl Layout {
    fn new(arch: &NetArch) -> Self {
        let widths = arch.widths();
        let mut off = 0;
        let mut film = 0;
        let mut layers = Vec::new();
        let last = widths.len() - 2;
        for l in 0..widths.len() - 1 {
            let (cin, cout) = (widths[l], widths[l + 1]);
            let weights = off;
            off += cin * cout * BASIS;
            let bias = off;
            off += cout;
            let film_slot = (l < last).then(|| {
                let f = film;
                film += 2 * cout;
                f
            });
            layers.push(LayerSlots {
                cin,
                cout,
                weights,
                bias,
                film: film_slot,
            });
        }
        let t1_w = off;
        off += arch.time_hidden * arch.embed_dim;
        let t1_b = off;
        off += arch.time_hidden;
        let t2_w = off;
        off += film * arch.time_hidden;
        let t2_b = off;
        off += film;
        Self {
            layers,
            t1_w,
            t1_b,
            t2_w,
            t2_b,
            film_len: film,
            total: off,
        }
    }
}

/// Gradient of a scalar objective with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients(pub Vec<f64>);

impl ParamGradients {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn add_scaled(&mut self, other: &ParamGradients, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct DriftNet {
    arch: NetArch,
    horizon: f64,
    layout: Layout,
    params: Vec<f64>,
}

/// Channel stack: channel `c` occupies `data[c * nm..(c + 1) * nm]`,
/// column-major within a channel.
#[derive(Debug, Clone)]
struct Channels {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl Channels {
    fn zeros(c: usize, n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            data: vec![0.0; c * n * m],
        }
    }

    fn nm(&self) -> usize {
        self.n * self.m
    }

    fn channel(&self, c: usize) -> &[f64] {
        let nm = self.nm();
        &self.data[c * nm..(c + 1) * nm]
    }

    fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let nm = self.nm();
        &mut self.data[c * nm..(c + 1) * nm]
    }

    /// Per-channel row sums, column sums and total.
    fn marginals(&self, c: usize) -> (Vec<f64>, Vec<f64>, f64) {
        let (n, m) = (self.n, self.m);
        let ch = self.channel(c);
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; m];
        for j in 0..m {
            let col = &ch[j * n..(j + 1) * n];
            let mut s = 0.0;
            for (r, &v) in rows.iter_mut().zip(col) {
                *r += v;
                s += v;
            }
            cols[j] = s;
        }
        let total = cols.iter().sum();
        (rows, cols, total)
    }
}

/// Intermediate values needed by [`DriftNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    n: usize,
    m: usize,
    embed: Vec<f64>,
    time_act: Vec<f64>,
    film: Vec<f64>,
    /// Layer inputs.
    inputs: Vec<Channels>,
    /// Hidden pre-modulation outputs.
    pre: Vec<Channels>,
}

fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let mut e = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let w = (1u64 << k) as f64;
        e.push((w * t).sin());
        e.push((w * t).cos());
    }
    e
}

impl DriftNet {
    /// Random hidden weights, zero output layer, zero modulation.
    pub fn new(arch: NetArch, horizon: f64, seed: u64) -> Result<Self> {
        arch.validate()?;
        if !(horizon > 0.0) {
            return Err(HedgeError::InvalidConfig("horizon must be positive".into()));
        }
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = layout.layers.len() - 1;
        for (l, slot) in layout.layers.iter().enumerate() {
            if l == last {
                continue;
            }
            let id = Normal::new(0.0, (1.0 / slot.cin as f64).sqrt()).unwrap();
            let mean = Normal::new(0.0, (0.25 / slot.cin as f64).sqrt()).unwrap();
            for o in 0..slot.cout {
                for c in 0..slot.cin {
                    params[slot.w(o, c, 0)] = id.sample(&mut rng);
                    for k in 1..BASIS {
                        params[slot.w(o, c, k)] = mean.sample(&mut rng);
                    }
                }
            }
        }
        let t1 = Normal::new(0.0, (1.0 / arch.embed_dim as f64).sqrt()).unwrap();
        for p in &mut params[layout.t1_w..layout.t1_b] {
            *p = t1.sample(&mut rng);
        }
        Ok(Self {
            arch,
            horizon,
            layout,
            params,
        })
    }

    pub fn from_params(arch: NetArch, horizon: f64, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if params.len() != layout.total {
            return Err(HedgeError::Checkpoint(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            arch,
            horizon,
            layout,
            params,
        })
    }

    pub fn arch(&self) -> &NetArch {
        &self.arch
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// FNV-1a over the little-endian parameter bytes.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for b in p.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
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

    /// Time MLP: returns (embedding, hidden activations, modulation vector).
    fn modulation(&self, s: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let a = &self.arch;
        let l = &self.layout;
        let p = &self.params;
        let embed = time_embedding(s / self.horizon, a.embed_dim);
        let hidden: Vec<f64> = (0..a.time_hidden)
            .map(|r| {
                let row = &p[l.t1_w + r * a.embed_dim..l.t1_w + (r + 1) * a.embed_dim];
                let z: f64 = row.iter().zip(&embed).map(|(w, e)| w * e).sum();
                (z + p[l.t1_b + r]).tanh()
            })
            .collect();
        let film: Vec<f64> = (0..l.film_len)
            .map(|r| {
                let row = &p[l.t2_w + r * a.time_hidden..l.t2_w + (r + 1) * a.time_hidden];
                let z: f64 = row.iter().zip(&hidden).map(|(w, h)| w * h).sum();
                z + p[l.t2_b + r]
            })
            .collect();
        (embed, hidden, film)
    }

    fn layer_forward(&self, slot: &LayerSlots, input: &Channels) -> Channels {
        let (n, m) = (input.n, input.m);
        let (nf, mf) = (n as f64, m as f64);
        let p = &self.params;
        let marg: Vec<_> = (0..slot.cin).map(|c| input.marginals(c)).collect();
        let mut out = Channels::zeros(slot.cout, n, m);
        let mut row_term = vec![0.0; n];
        let mut col_term = vec![0.0; m];
        for o in 0..slot.cout {
            row_term.iter_mut().for_each(|v| *v = 0.0);
            col_term.iter_mut().for_each(|v| *v = 0.0);
            let mut constant = p[slot.bias + o];
            let z = out.channel_mut(o);
            for (c, (rows, cols, total)) in marg.iter().enumerate() {
                let w0 = p[slot.w(o, c, 0)];
                let w1 = p[slot.w(o, c, 1)] / mf;
                let w2 = p[slot.w(o, c, 2)] / nf;
                constant += p[slot.w(o, c, 3)] * total / (nf * mf);
                for (r, &v) in row_term.iter_mut().zip(rows) {
                    *r += w1 * v;
                }
                for (r, &v) in col_term.iter_mut().zip(cols) {
                    *r += w2 * v;
                }
                for (zv, &a) in z.iter_mut().zip(input.channel(c)) {
                    *zv += w0 * a;
                }
            }
            for j in 0..m {
                let cj = col_term[j] + constant;
                for (zv, &r) in z[j * n..(j + 1) * n].iter_mut().zip(&row_term) {
                    *zv += r + cj;
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &RelaxedState, s: f64) -> Result<RelaxedState> {
        Ok(self.forward_cached(x, s)?.0)
    }

    pub fn forward_cached(&self, x: &RelaxedState, s: f64) -> Result<(RelaxedState, ForwardCache)> {
        self.check_time(s)?;
        let (n, m) = x.shape();
        if n == 0 || m == 0 {
            return Err(HedgeError::InvalidConfig("empty state".into()));
        }
        let (embed, time_act, film) = self.modulation(s);
        let mut act = Channels {
            n,
            m,
            data: x.as_slice().to_vec(),
        };
        let mut inputs = Vec::with_capacity(self.layout.layers.len());
        let mut pre = Vec::new();
        for slot in &self.layout.layers {
            let z = self.layer_forward(slot, &act);
            inputs.push(std::mem::replace(&mut act, z));
            if let Some(f) = slot.film {
                pre.push(act.clone());
                for o in 0..slot.cout {
                    let g = 1.0 + film[f + o];
                    let h = film[f + slot.cout + o];
                    for v in act.channel_mut(o) {
                        *v = (g * *v + h).tanh();
                    }
                }
            }
        }
        let out = DMatrix::from_column_slice(n, m, &act.data);
        Ok((
            out,
            ForwardCache {
                n,
                m,
                embed,
                time_act,
                film,
                inputs,
                pre,
            },
        ))
    }

    /// Gradient of `<upstream, forward(x, s)>` with respect to the parameters.
    pub fn backward(&self, cache: &ForwardCache, upstream: &RelaxedState) -> Result<ParamGradients> {
        let (n, m) = (cache.n, cache.m);
        if upstream.shape() != (n, m) {
            return Err(crate::error::shape_err((n, m), upstream.shape()));
        }
        let (nf, mf) = (n as f64, m as f64);
        let p = &self.params;
        let mut grad = vec![0.0; self.params.len()];
        let mut dfilm = vec![0.0; self.layout.film_len];
        let mut dz = Channels {
            n,
            m,
            data: upstream.as_slice().to_vec(),
        };
        let mut pre_idx = cache.pre.len();
        for (l, slot) in self.layout.layers.iter().enumerate().rev() {
            if let Some(f) = slot.film {
                // dz holds d(activation); convert to d(pre-modulation).
                pre_idx -= 1;
                let zpre = &cache.pre[pre_idx];
                let act_next = if l + 1 < cache.inputs.len() {
                    &cache.inputs[l + 1]
                } else {
                    unreachable!("hidden layers are followed by another layer")
                };
                for o in 0..slot.cout {
                    let g = 1.0 + cache.film[f + o];
                    let mut dg = 0.0;
                    let mut dh = 0.0;
                    let a = act_next.channel(o);
                    let zp = zpre.channel(o);
                    for ((d, &av), &zv) in dz.channel_mut(o).iter_mut().zip(a).zip(zp) {
                        let dpre = *d * (1.0 - av * av);
                        dg += dpre * zv;
                        dh += dpre;
                        *d = dpre * g;
                    }
                    dfilm[f + o] += dg;
                    dfilm[f + slot.cout + o] += dh;
                }
            }
            let input = &cache.inputs[l];
            let marg_in: Vec<_> = (0..slot.cin).map(|c| input.marginals(c)).collect();
            let marg_dz: Vec<_> = (0..slot.cout).map(|o| dz.marginals(o)).collect();
            for o in 0..slot.cout {
                let (drows, dcols, dtotal) = &marg_dz[o];
                grad[slot.bias + o] += dtotal;
                let dzo = dz.channel(o);
                for (c, (rows, cols, total)) in marg_in.iter().enumerate() {
                    let a = input.channel(c);
                    grad[slot.w(o, c, 0)] += dzo.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
                    grad[slot.w(o, c, 1)] +=
                        drows.iter().zip(rows).map(|(x, y)| x * y).sum::<f64>() / mf;
                    grad[slot.w(o, c, 2)] +=
                        dcols.iter().zip(cols).map(|(x, y)| x * y).sum::<f64>() / nf;
                    grad[slot.w(o, c, 3)] += dtotal * total / (nf * mf);
                }
            }
            if l == 0 {
                break;
            }
            let mut da = Channels::zeros(slot.cin, n, m);
            let mut row_term = vec![0.0; n];
            let mut col_term = vec![0.0; m];
            for c in 0..slot.cin {
                row_term.iter_mut().for_each(|v| *v = 0.0);
                col_term.iter_mut().for_each(|v| *v = 0.0);
                let mut constant = 0.0;
                let dac = da.channel_mut(c);
                for (o, (drows, dcols, dtotal)) in marg_dz.iter().enumerate() {
                    let w0 = p[slot.w(o, c, 0)];
                    let w1 = p[slot.w(o, c, 1)] / mf;
                    let w2 = p[slot.w(o, c, 2)] / nf;
                    constant += p[slot.w(o, c, 3)] * dtotal / (nf * mf);
                    for (r, &v) in row_term.iter_mut().zip(drows) {
                        *r += w1 * v;
                    }
                    for (r, &v) in col_term.iter_mut().zip(dcols) {
                        *r += w2 * v;
                    }
                    for (d, &v) in dac.iter_mut().zip(dz.channel(o)) {
                        *d += w0 * v;
                    }
                }
                for j in 0..m {
                    let cj = col_term[j] + constant;
                    for (d, &r) in dac[j * n..(j + 1) * n].iter_mut().zip(&row_term) {
                        *d += r + cj;
                    }
                }
            }
            dz = da;
        }

        // Time MLP.
        let a = &self.arch;
        let lay = &self.layout;
        let mut dhidden = vec![0.0; a.time_hidden];
        for (r, &df) in dfilm.iter().enumerate() {
            grad[lay.t2_b + r] += df;
            let row = lay.t2_w + r * a.time_hidden;
            for k in 0..a.time_hidden {
                grad[row + k] += df * cache.time_act[k];
                dhidden[k] += df * p[row + k];
            }
        }
        for (r, &dh) in dhidden.iter().enumerate() {
            let dpre = dh * (1.0 - cache.time_act[r] * cache.time_act[r]);
            grad[lay.t1_b + r] += dpre;
            let row = lay.t1_w + r * a.embed_dim;
            for k in 0..a.embed_dim {
                grad[row + k] += dpre * cache.embed[k];
            }
        }
        Ok(ParamGradients(grad))
    }

    /// Forward and backward in one call.
    pub fn drift_backward(&self, x: &RelaxedState, s: f64, upstream: &RelaxedState) -> Result<ParamGradients> {
        let (_, cache) = self.forward_cached(x, s)?;
        self.backward(&cache, upstream)
    }

    /// Upper bound on the Lipschitz constant of `x -> forward(x, s)` in the
    /// Frobenius norm.
    ///
    /// Row-mean, column-mean and global-mean broadcasts are commuting
    /// orthogonal projectors, so every layer is block diagonal over four
    /// orthogonal subspaces with channel-mixing matrices `w0`, `w0 + w1`,
    /// `w0 + w2` and `w0 + w1 + w2 + w3`.
    pub fn lipschitz_bound(&self, s: f64) -> Result<f64> {
        self.check_time(s)?;
        let (_, _, film) = self.modulation(s);
        let p = &self.params;
        let mut bound = 1.0;
        for slot in &self.layout.layers {
            let mut layer = 0.0f64;
            for combo in [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 0.0, 1.0, 0.0], [1.0, 1.0, 1.0, 1.0]] {
                let mix = DMatrix::from_fn(slot.cout, slot.cin, |o, c| {
                    let scale = slot.film.map_or(1.0, |f| 1.0 + film[f + o]);
                    scale * (0..BASIS).map(|k| combo[k] * p[slot.w(o, c, k)]).sum::<f64>()
                });
                layer = layer.max(spectral_norm(&mix)?);
            }
            bound *= layer;
        }
        Ok(bound)
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let widths = self.arch.widths();
        w.write_all(&(widths.len() as u32).to_le_bytes())?;
        for c in &widths {
            w.write_all(&(*c as u32).to_le_bytes())?;
        }
        w.write_all(&(self.arch.embed_dim as u32).to_le_bytes())?;
        w.write_all(&(self.arch.time_hidden as u32).to_le_bytes())?;
        w.write_all(&self.horizon.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)
            .map_err(|_| HedgeError::Checkpoint("truncated header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(HedgeError::Checkpoint("bad magic".into()));
        }
        let mut u32_buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<usize> {
            r.read_exact(&mut u32_buf)
                .map_err(|_| HedgeError::Checkpoint("truncated header".into()))?;
            Ok(u32::from_le_bytes(u32_buf) as usize)
        };
        let count = read_u32(&mut r)?;
        if !(2..=1024).contains(&count) {
            return Err(HedgeError::Checkpoint(format!("implausible layer count {count}")));
        }
        let widths: Vec<usize> = (0..count).map(|_| read_u32(&mut r)).collect::<Result<_>>()?;
        if widths[0] != 1 || widths[count - 1] != 1 {
            return Err(HedgeError::Checkpoint("input and output must have one channel".into()));
        }
        let embed_dim = read_u32(&mut r)?;
        let time_hidden = read_u32(&mut r)?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)
            .map_err(|_| HedgeError::Checkpoint("truncated header".into()))?;
        let horizon = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)
            .map_err(|_| HedgeError::Checkpoint("truncated header".into()))?;
        let len = u64::from_le_bytes(b8) as usize;
        let arch = NetArch {
            hidden: widths[1..count - 1].to_vec(),
            embed_dim,
            time_hidden,
        };
        arch.validate()?;
        let expected = Layout::new(&arch).total;
        if len != expected {
            return Err(HedgeError::Checkpoint(format!(
                "header declares {len} parameters, shape implies {expected}"
            )));
        }
        let mut params = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut b8)
                .map_err(|_| HedgeError::Checkpoint("truncated parameters".into()))?;
            params.push(f64::from_le_bytes(b8));
        }
        if r.read(&mut b8)? != 0 {
            return Err(HedgeError::Checkpoint("trailing bytes".into()));
        }
        Self::from_params(arch, horizon, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}
