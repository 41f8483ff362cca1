//! Gauss-Legendre rules.

use std::f64::consts::PI;

/// Nodes and weights of the `k`-point rule on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(k >= 1);
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    for i in 0..k.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(k, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(k, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[k - 1 - i] = x;
        weights[i] = w;
        weights[k - 1 - i] = w;
    }
    (nodes, weights)
}

/// `(P_k(x), P_k'(x))` by the three-term recurrence.
fn legendre(k: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=k {
        let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    if k == 0 {
        return (1.0, 0.0);
    }
    let d = k as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite rule on `[0, s]`: `panels` copies of a `k`-point rule.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    unit_nodes: Vec<f64>,
    unit_weights: Vec<f64>,
    panels: usize,
}

impl CompositeRule {
    pub fn new(points_per_panel: usize, panels: usize) -> Self {
        let (unit_nodes, unit_weights) = gauss_legendre(points_per_panel);
        Self {
            unit_nodes,
            unit_weights,
            panels: panels.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.unit_nodes.len() * self.panels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(node, weight)` pairs on `[0, s]`.
    pub fn nodes_on(&self, s: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = s / self.panels as f64;
        (0..self.panels).flat_map(move |p| {
            let left = p as f64 * h;
            self.unit_nodes
                .iter()
                .zip(&self.unit_weights)
                .map(move |(&x, &w)| (left + 0.5 * h * (x + 1.0), 0.5 * h * w))
        })
    }

    pub fn integrate(&self, s: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes_on(s).map(|(u, w)| w * f(u)).sum()
    }
}
