//! Discrete Hölder norms on bounded tensor grids.
//!
//! Every seminorm is a maximum over all pairs of grid points, so the
//! estimates are exact for the sampled point set and increase toward the
//! continuous value as the grid is refined.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{EndowmentSpec, MarketConfig, Terminal};
use crate::linalg::Matrix;
use crate::math;
use crate::{Error, Result};

/// Smallest accepted number of grid points per axis.
pub const MIN_RESOLUTION: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HolderOrder {
    /// `|g|₀`
    Zero,
    /// `|g|₀ + [g]_α`
    Alpha,
    /// `|g|₀ + |∂g|₀ + [∂g]_α`
    OnePlusAlpha,
    /// `|g|₀ + |∂g|₀ + |∂²g|₀ + [∂²g]_α`
    TwoPlusAlpha,
}

/// Axis-aligned box `Π [lower_d, upper_d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl GridBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Dimension("box bounds must have equal positive length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(u > l)) {
            return Err(Error::HolderResolution("box must be nonempty".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn centered(dim: usize, half_width: f64) -> Self {
        Self {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Tensor grid with `n` points per axis, last axis fastest.
    pub fn points(&self, n: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let total = n.pow(d as u32);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            out.push(
                idx.iter()
                    .enumerate()
                    .map(|(a, &k)| self.lower[a] + (self.upper[a] - self.lower[a]) * k as f64 / (n - 1) as f64)
                    .collect(),
            );
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < n {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    }

    fn spacing(&self, n: usize, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (n - 1) as f64
    }
}

/// What to measure: a function with derivative evaluators, or samples on
/// the tensor grid of the box (row-major, last axis fastest).
#[derive(Clone, Copy)]
pub enum HolderTarget<'a> {
    Function(&'a dyn Terminal),
    Gridded(&'a [f64]),
}

/// `max_{p≠q} Σ_c |v_c(p) − v_c(q)| / |p − q|^α` summed per component.
///
/// `components[c][k]` is component `c` at point `k`.
fn pairwise_seminorm(points: &[Vec<f64>], components: &[Vec<f64>], alpha: f64) -> f64 {
    let mut best = vec![0.0f64; components.len()];
    for p in 0..points.len() {
        for q in (p + 1)..points.len() {
            let dist: f64 = points[p]
                .iter()
                .zip(&points[q])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let denom = math::powf(math::sqrt(dist), alpha);
            for (c, comp) in components.iter().enumerate() {
                let r = math::abs(comp[p] - comp[q]) / denom;
                if r > best[c] {
                    best[c] = r;
                }
            }
        }
    }
    best.iter().sum()
}

fn sup_sum(components: &[Vec<f64>]) -> f64 {
    components
        .iter()
        .map(|c| c.iter().fold(0.0f64, |m, v| m.max(math::abs(*v))))
        .sum()
}

/// Central differences along `axis` (second-order one-sided at the edges).
fn grid_derivative(values: &[f64], n: usize, dim: usize, axis: usize, h: f64) -> Vec<f64> {
    let stride = n.pow((dim - 1 - axis) as u32);
    let mut out = vec![0.0; values.len()];
    for (k, o) in out.iter_mut().enumerate() {
        let i = (k / stride) % n;
        *o = if i == 0 {
            (-3.0 * values[k] + 4.0 * values[k + stride] - values[k + 2 * stride]) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * values[k] - 4.0 * values[k - stride] + values[k - 2 * stride]) / (2.0 * h)
        } else {
            (values[k + stride] - values[k - stride]) / (2.0 * h)
        };
    }
    out
}

struct Sampled {
    value: Vec<f64>,
    grad: Vec<Vec<f64>>,
    hess: Vec<Vec<f64>>,
}

fn sample(target: HolderTarget<'_>, order: HolderOrder, bx: &GridBox, n: usize) -> Result<Sampled> {
    let d = bx.dim();
    let points = bx.points(n);
    let need_grad = matches!(order, HolderOrder::OnePlusAlpha | HolderOrder::TwoPlusAlpha);
    let need_hess = order == HolderOrder::TwoPlusAlpha;
    let mut out = Sampled {
        value: Vec::new(),
        grad: Vec::new(),
        hess: Vec::new(),
    };
    match target {
        HolderTarget::Gridded(values) => {
            if values.len() != points.len() {
                return Err(Error::Dimension(format!(
                    "gridded values: expected {} samples, got {}",
                    points.len(),
                    values.len()
                )));
            }
            out.value = values.to_vec();
            if need_grad {
                out.grad = (0..d).map(|a| grid_derivative(values, n, d, a, bx.spacing(n, a))).collect();
            }
            if need_hess {
                if n < 5 {
                    return Err(Error::HolderResolution(
                        "resolution too coarse for second differences".into(),
                    ));
                }
                for a in 0..d {
                    for b in 0..d {
                        out.hess.push(grid_derivative(&out.grad[a], n, d, b, bx.spacing(n, b)));
                    }
                }
            }
        }
        HolderTarget::Function(g) => {
            if g.dim() != d {
                return Err(Error::Dimension("box dimension differs from the function's".into()));
            }
            out.value = points.iter().map(|p| g.value(p)).collect();
            if need_grad {
                out.grad = vec![Vec::with_capacity(points.len()); d];
                let mut buf = vec![0.0; d];
                for p in &points {
                    g.gradient(p, &mut buf);
                    for a in 0..d {
                        out.grad[a].push(buf[a]);
                    }
                }
            }
            if need_hess {
                out.hess = vec![Vec::with_capacity(points.len()); d * d];
                let mut hm = Matrix::zeros(d, d);
                let mut exact = true;
                for p in &points {
                    if !g.hessian(p, &mut hm) {
                        exact = false;
                        break;
                    }
                    for (c, v) in hm.as_slice().iter().enumerate() {
                        out.hess[c].push(*v);
                    }
                }
                if !exact {
                    out.hess.clear();
                    for a in 0..d {
                        for b in 0..d {
                            out.hess.push(grid_derivative(&out.grad[a], n, d, b, bx.spacing(n, b)));
                        }
                    }
                }
            }
        }
    }
    if out.value.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "model-core: Hölder estimate",
        });
    }
    Ok(out)
}

/// Discrete approximation of `|g|_order` on the tensor grid of `bx` with
/// `resolution` points per axis. Exact derivatives are used for function
/// targets; gridded targets are differentiated by finite differences.
pub fn holder_norm_estimate(
    target: HolderTarget<'_>,
    order: HolderOrder,
    alpha: f64,
    bx: &GridBox,
    resolution: usize,
) -> Result<f64> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::HolderResolution(format!(
            "resolution {resolution} below the minimum of {MIN_RESOLUTION} points per axis"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::HolderResolution(format!("α must lie in (0, 1) (got {alpha})")));
    }
    let s = sample(target, order, bx, resolution)?;
    let sup0 = s.value.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
    Ok(match order {
        HolderOrder::Zero => sup0,
        HolderOrder::Alpha => sup0 + pairwise_seminorm(&bx.points(resolution), &[s.value], alpha),
        HolderOrder::OnePlusAlpha => {
            sup0 + sup_sum(&s.grad) + pairwise_seminorm(&bx.points(resolution), &s.grad, alpha)
        }
        HolderOrder::TwoPlusAlpha => {
            sup0 + sup_sum(&s.grad)
                + sup_sum(&s.hess)
                + pairwise_seminorm(&bx.points(resolution), &s.hess, alpha)
        }
    })
}

/// `1 / max_i |g^{(i)}|²_{1+α}`, a constant-free indicator of the maturity
/// scale on which the contraction argument applies. Not an absolute bound.
/// Returns `+∞` when every endowment vanishes on the grid.
pub fn t0_scaling_report(
    endowments: &[EndowmentSpec],
    market: &MarketConfig,
    bx: &GridBox,
    resolution: usize,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for g in endowments {
        let n = holder_norm_estimate(
            HolderTarget::Function(g),
            HolderOrder::OnePlusAlpha,
            market.holder_alpha(),
            bx,
            resolution,
        )?;
        worst = worst.max(n);
    }
    Ok(if worst == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (worst * worst)
    })
}

/// Samples of a function of `(t, x)` on `times × space`, time-major.
#[derive(Clone, Debug)]
pub struct ParabolicGrid {
    pub times: Vec<f64>,
    pub space: Vec<Vec<f64>>,
}

impl ParabolicGrid {
    pub fn len(&self) -> usize {
        self.times.len() * self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parabolic `|h|_α = |h|₀ + sup |h(t,x) − h(s,y)| / (√|t−s| + |x−y|)^α`
/// over the grid points.
pub fn parabolic_alpha_norm(grid: &ParabolicGrid, values: &[f64], alpha: f64) -> f64 {
    assert_eq!(values.len(), grid.len());
    let nx = grid.space.len();
    let sup = values.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
    let mut semi = 0.0f64;
    for p in 0..values.len() {
        let (tp, xp) = (grid.times[p / nx], &grid.space[p % nx]);
        for q in (p + 1)..values.len() {
            let (tq, xq) = (grid.times[q / nx], &grid.space[q % nx]);
            let dx: f64 = xp.iter().zip(xq).map(|(a, b)| (a - b) * (a - b)).sum();
            let dist = math::sqrt(math::abs(tp - tq)) + math::sqrt(dx);
            let r = math::abs(values[p] - values[q]) / math::powf(dist, alpha);
            semi = semi.max(r);
        }
    }
    sup + semi
}
