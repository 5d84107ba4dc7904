//! Gaussian quadrature rules: Gauss–Hermite (standard normal weight),
//! Gauss–Legendre, their tensor products, and an adaptive Gauss–Kronrod
//! integrator for one-dimensional closed-form oracles.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::math;

/// Nodes and weights for `E[φ(Z)]`, `Z ~ N(0, I_D)`.
///
/// Weights are positive and sum to one. A tensor rule built from `n`-point
/// one-dimensional rules integrates every monomial of total degree
/// `≤ order = 2n − 1` exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    order: usize,
}

impl QuadratureRule {
    /// Tensor Gauss–Hermite rule with `per_axis` nodes on each of `dim` axes.
    pub fn gauss_hermite(dim: usize, per_axis: usize) -> Self {
        assert!(dim >= 1 && per_axis >= 1);
        let (x1, w1) = gauss_hermite_standard(per_axis);
        let count = per_axis.pow(dim as u32);
        let mut nodes = Vec::with_capacity(count * dim);
        let mut weights = Vec::with_capacity(count);
        let mut idx = vec![0usize; dim];
        for _ in 0..count {
            let mut w = 1.0;
            for &k in &idx {
                nodes.push(x1[k]);
                w *= w1[k];
            }
            weights.push(w);
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < per_axis {
                    break;
                }
                idx[a] = 0;
            }
        }
        Self {
            dim,
            nodes,
            weights,
            order: 2 * per_axis - 1,
        }
    }

    /// Default rule for a factor dimension: 16 nodes per axis up to three
    /// dimensions, fewer beyond so the tensor stays near 4096 points.
    pub fn default_for_dim(dim: usize) -> Self {
        Self::gauss_hermite(dim, default_nodes_per_axis(dim, 16))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.nodes.chunks(self.dim).zip(self.weights.iter().copied())
    }

    /// `E[φ(Z)]`.
    pub fn expect<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        self.iter().map(|(z, w)| w * f(z)).sum()
    }
}

/// Per-axis node count keeping the tensor size near `base³`.
pub fn default_nodes_per_axis(dim: usize, base: usize) -> usize {
    if dim <= 3 {
        return base;
    }
    let budget = math::powi(base as f64, 3);
    let n = math::floor(math::powf(budget, 1.0 / dim as f64)) as usize;
    n.max(3)
}

/// Gauss–Legendre rule on `[a, b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let (nodes, weights) = gauss_legendre_unit(n);
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn on_interval(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.on_interval(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Probabilists' Gauss–Hermite nodes/weights (`∫ φ(x) N(0,1)(dx)`).
pub fn gauss_hermite_standard(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => math::sqrt(2.0 * nf + 1.0) - 1.85575 * math::powf(2.0 * nf + 1.0, -1.0 / 6.0),
            1 => z - 1.14 * math::powf(nf, 0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * math::sqrt(2.0 / jf) * p2 - math::sqrt((jf - 1.0) / jf) * p3;
            }
            pp = math::sqrt(2.0 * nf) * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if math::abs(z - z1) <= 1e-15 * (1.0 + math::abs(z)) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[m - 1] = 0.0;
    }
    let sqrt_pi = math::sqrt(PI);
    let sqrt2 = core::f64::consts::SQRT_2;
    let mut pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(&w)
        .map(|(&xi, &wi)| (sqrt2 * xi, wi / sqrt_pi))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // renormalise away the last few ulps so weights sum to one
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(xi, wi)| (xi, wi / total)).unzip()
}

/// Gauss–Legendre nodes/weights on `[-1, 1]`, ascending.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = math::cos(PI * (i as f64 + 0.75) / (nf + 0.5));
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if math::abs(z - z1) <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

const GK_XK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = GK_WK[7] * fc;
    let mut gauss = GK_WG[3] * fc;
    for j in 0..7 {
        let dx = h * GK_XK[j];
        let s = f(c - dx) + f(c + dx);
        kron += GK_WK[j] * s;
        if j % 2 == 1 {
            gauss += GK_WG[j / 2] * s;
        }
    }
    (kron * h, math::abs((kron - gauss) * h))
}

/// Result of [`integrate_adaptive`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptiveEstimate {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

/// Globally adaptive Gauss–Kronrod (7/15) on `[a, b]`, splitting first at the
/// supplied interior breakpoints.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> AdaptiveEstimate {
    let mut cuts: Vec<f64> = Vec::with_capacity(breakpoints.len() + 2);
    cuts.push(a);
    cuts.extend(breakpoints.iter().copied().filter(|&x| x > a && x < b));
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    // (a, b, value, error)
    let mut pieces: Vec<(f64, f64, f64, f64)> = cuts
        .windows(2)
        .map(|ab| {
            let (v, e) = gk15(&mut f, ab[0], ab[1]);
            (ab[0], ab[1], v, e)
        })
        .collect();

    const MAX_INTERVALS: usize = 4000;
    loop {
        let value: f64 = pieces.iter().map(|p| p.2).sum();
        let error: f64 = pieces.iter().map(|p| p.3).sum();
        if error <= abs_tol.max(rel_tol * math::abs(value)) || pieces.len() >= MAX_INTERVALS {
            return AdaptiveEstimate {
                value,
                error,
                intervals: pieces.len(),
            };
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval exhausted at machine precision
            let value: f64 = pieces.iter().map(|p| p.2).sum();
            let error: f64 = pieces.iter().map(|p| p.3).sum();
            return AdaptiveEstimate {
                value,
                error,
                intervals: pieces.len(),
            };
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
}
