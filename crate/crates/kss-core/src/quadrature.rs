//! Gauss-Legendre rules on finite intervals.

use gauss_quad::legendre::GaussLegendre;
use std::num::NonZeroUsize;

/// Nodes and weights of the `n`-point rule on `[a, b]`.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn new(n: usize, a: f64, b: f64) -> Self {
        let gl = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let (nodes, weights) = gl
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (mid + half * x, half * w))
            .unzip();
        Rule { nodes, weights }
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Weighted sum of precomputed integrand values.
    pub fn apply(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

/// One-shot `n`-point integral of `f` over `[a, b]`.
pub fn integrate(n: usize, a: f64, b: f64, f: impl FnMut(f64) -> f64) -> f64 {
    Rule::new(n, a, b).integrate(f)
}

/// Composite rule: `panels` equal panels with `n` points each.
pub fn composite(n: usize, panels: usize, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = (b - a) / panels as f64;
    let base = Rule::new(n, 0.0, h);
    (0..panels)
        .map(|p| {
            let off = a + p as f64 * h;
            base.integrate(|x| f(off + x))
        })
        .sum()
}
