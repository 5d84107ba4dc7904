use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// How gridded gradients are extended outside the space box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Extension {
    /// Hold the boundary value along each axis.
    #[default]
    Clamp,
    /// Continue the boundary cell's multilinear interpolant.
    Linear,
}

/// Gridded value functions `u^{(i)}` and gradients `∂_y u^{(i)}` on
/// `times × axes[0] × … × axes[D−1]`.
///
/// Storage is time-major; within a time slice the last axis runs fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionField {
    pub(crate) times: Vec<f64>,
    pub(crate) axes: Vec<Vec<f64>>,
    pub(crate) investors: usize,
    pub(crate) u: Vec<Vec<f64>>,
    pub(crate) grad: Vec<Vec<f64>>,
    pub(crate) extension: Extension,
    pub iterations: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
}

/// Bracket `(index, weight of index+1)` along one axis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Bracket {
    pub lo: usize,
    pub w: f64,
}

pub(crate) fn bracket(axis: &[f64], x: f64, ext: Extension) -> Bracket {
    let n = axis.len();
    if n == 1 {
        return Bracket { lo: 0, w: 0.0 };
    }
    let lo = match axis.partition_point(|&v| v <= x) {
        0 => 0,
        k if k >= n => n - 2,
        k => k - 1,
    };
    let mut w = (x - axis[lo]) / (axis[lo + 1] - axis[lo]);
    if ext == Extension::Clamp {
        w = w.clamp(0.0, 1.0);
    }
    Bracket { lo, w }
}

impl SolutionField {
    pub(crate) fn new(times: Vec<f64>, axes: Vec<Vec<f64>>, investors: usize, extension: Extension) -> Self {
        let d = axes.len();
        let p: usize = axes.iter().map(Vec::len).product();
        let m = times.len();
        Self {
            times,
            axes,
            investors,
            u: vec![vec![0.0; m * p]; investors],
            grad: vec![vec![0.0; m * p * d]; investors],
            extension,
            iterations: 0,
            residual: f64::INFINITY,
            residual_history: Vec::new(),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn investors(&self) -> usize {
        self.investors
    }

    pub fn extension(&self) -> Extension {
        self.extension
    }

    pub fn maturity(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Number of space points per time slice.
    pub fn space_len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    /// Coordinates of space point `p`.
    pub fn space_point(&self, p: usize, out: &mut [f64]) {
        let mut rem = p;
        for a in (0..self.dim()).rev() {
            let n = self.axes[a].len();
            out[a] = self.axes[a][rem % n];
            rem /= n;
        }
    }

    pub fn space_points(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..self.space_len())
            .map(|p| {
                let mut y = vec![0.0; d];
                self.space_point(p, &mut y);
                y
            })
            .collect()
    }

    /// `u^{(i)}` at grid node `(m, p)`.
    pub fn u_node(&self, i: usize, m: usize, p: usize) -> f64 {
        self.u[i][m * self.space_len() + p]
    }

    /// `∂_y u^{(i)}` at grid node `(m, p)`.
    pub fn grad_node(&self, i: usize, m: usize, p: usize) -> &[f64] {
        let d = self.dim();
        let k = (m * self.space_len() + p) * d;
        &self.grad[i][k..k + d]
    }

    pub(crate) fn time_bracket(&self, t: f64) -> Bracket {
        bracket(&self.times, t, Extension::Clamp)
    }

    /// Visits the `2^{D}` space corners of the cell containing `y` as
    /// `(flat index, weight)`.
    fn space_corners(&self, y: &[f64], mut visit: impl FnMut(usize, f64)) {
        let d = self.dim();
        let mut br = [Bracket { lo: 0, w: 0.0 }; 8];
        let mut big = Vec::new();
        let brs: &mut [Bracket] = if d <= 8 {
            &mut br[..d]
        } else {
            big.resize(d, Bracket { lo: 0, w: 0.0 });
            &mut big
        };
        for a in 0..d {
            brs[a] = bracket(&self.axes[a], y[a], self.extension);
        }
        for corner in 0..(1usize << d) {
            let mut idx = 0;
            let mut w = 1.0;
            for a in 0..d {
                let up = (corner >> (d - 1 - a)) & 1;
                let b = brs[a];
                idx = idx * self.axes[a].len() + b.lo + up;
                w *= if up == 1 { b.w } else { 1.0 - b.w };
            }
            if w != 0.0 {
                visit(idx, w);
            }
        }
    }

    /// Multilinear interpolation of every investor's gradient at `(t, y)`
    /// into `out[i·D + d]`, with the time bracket supplied.
    pub(crate) fn grads_at_bracket(&self, tb: Bracket, y: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let p_len = self.space_len();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (dm, wt) in [(0usize, 1.0 - tb.w), (1, tb.w)] {
            if wt == 0.0 {
                continue;
            }
            let base = (tb.lo + dm) * p_len;
            self.space_corners(y, |idx, w| {
                let ww = wt * w;
                let k = (base + idx) * d;
                for i in 0..self.investors {
                    let g = &self.grad[i][k..k + d];
                    let o = &mut out[i * d..(i + 1) * d];
                    for a in 0..d {
                        o[a] += ww * g[a];
                    }
                }
            });
        }
    }

    pub fn grads_at(&self, t: f64, y: &[f64], out: &mut [f64]) {
        self.grads_at_bracket(self.time_bracket(t), y, out)
    }

    pub fn grad_at(&self, i: usize, t: f64, y: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut all = vec![0.0; d * self.investors];
        self.grads_at(t, y, &mut all);
        all[i * d..(i + 1) * d].to_vec()
    }

    pub fn value_at(&self, i: usize, t: f64, y: &[f64]) -> f64 {
        let tb = self.time_bracket(t);
        let p_len = self.space_len();
        let mut acc = 0.0;
        for (dm, wt) in [(0usize, 1.0 - tb.w), (1, tb.w)] {
            if wt == 0.0 {
                continue;
            }
            let base = (tb.lo + dm) * p_len;
            self.space_corners(y, |idx, w| acc += wt * w * self.u[i][base + idx]);
        }
        acc
    }

    /// Largest mismatch between stored gradients and central differences of
    /// `u` at interior nodes of each time slice.
    pub fn gradient_consistency(&self) -> f64 {
        let d = self.dim();
        let p_len = self.space_len();
        let mut worst = 0.0f64;
        let mut y = vec![0.0; d];
        for i in 0..self.investors {
            for m in 0..self.times.len() {
                for p in 0..p_len {
                    self.space_point(p, &mut y);
                    let mut stride = 1;
                    for a in (0..d).rev() {
                        let n = self.axes[a].len();
                        let k = (p / stride) % n;
                        if k > 0 && k + 1 < n {
                            let up = self.u_node(i, m, p + stride);
                            let dn = self.u_node(i, m, p - stride);
                            let h = self.axes[a][k + 1] - self.axes[a][k - 1];
                            let fd = (up - dn) / h;
                            worst = worst.max(math::abs(fd - self.grad_node(i, m, p)[a]));
                        }
                        stride *= n;
                    }
                }
            }
        }
        worst
    }
}
