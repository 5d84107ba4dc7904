//! Randomized checks of the covariance-window bounds and the discrete
//! product inequality for parabolic Hölder norms.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kernel::CovarianceWindow;
use crate::linalg::Matrix;
use crate::math;
use crate::model::{parabolic_alpha_norm, MarketConfig, ParabolicGrid, VolSchedule};
use crate::Result;

/// Relative slack for floating-point roundoff in the exact bounds.
const ROUNDOFF: f64 = 1e-12;

/// Volatility schedules the suite draws from (all with `D = 2`).
pub fn shipped_schedules() -> Result<Vec<MarketConfig>> {
    let m = |r: &[[f64; 2]; 2]| Matrix::from_rows(&[r[0].to_vec(), r[1].to_vec()]).unwrap();
    let schedules = vec![
        VolSchedule::constant(Matrix::identity(2)),
        VolSchedule::constant(m(&[[1.0, 0.2], [0.0, 0.8]])),
        VolSchedule::constant(Matrix::from_diagonal(&[1.0, 2.0])),
        VolSchedule::linear(Matrix::identity(2), m(&[[0.0, 0.0], [1.0, 0.0]])),
        VolSchedule::linear(m(&[[1.0, 0.3], [-0.2, 0.9]]), m(&[[0.5, 0.0], [0.1, -0.3]])),
    ];
    schedules
        .into_iter()
        .map(|v| MarketConfig::new(2, 2, vec![1.0], v, 1.0, 0.5, None))
        .collect()
}

/// Outcome of [`covariance_bounds_suite`].
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceSuiteReport {
    pub draws: usize,
    /// Violations of the bounds on `Σ`, `Σ⁻¹` and the Cholesky factor `L`.
    pub violations: [usize; 3],
    /// `max ‖L(t₁,s) − L(t₂,s)‖_F / √(t₂ − t₁)`.
    pub cholesky_increment_ratio: f64,
    /// Smallest `K` with
    /// `|√Σ⁻¹(t₁,s)_ii − √Σ⁻¹(t₂,s)_ii| ≤ K min{(s−t₂)^{−1/2}, (t₂−t₁)(s−t₂)^{−3/2}}`.
    pub inverse_diagonal_constant: f64,
}

impl CovarianceSuiteReport {
    pub fn bounds_hold(&self) -> bool {
        self.violations == [0, 0, 0]
    }
}

fn window_violations(w: &CovarianceWindow, lo: f64, hi: f64) -> [usize; 3] {
    let d = w.dim();
    let len = w.s - w.t;
    let tol = |x: f64| ROUNDOFF * math::abs(x);
    let li = w.chol_lower.lower_inverse();
    let inv = li.transpose().matmul(&li);
    let mut out = [0; 3];
    for i in 0..d {
        let sii = w.sigma[(i, i)];
        if sii < lo * len - tol(sii) {
            out[0] += 1;
        }
        let qii = inv[(i, i)];
        if qii < 1.0 / (hi * len) - tol(qii) || qii > 1.0 / (lo * len) + tol(qii) {
            out[1] += 1;
        }
        if w.chol_lower[(i, i)] < math::sqrt(lo * len) * (1.0 - ROUNDOFF) {
            out[2] += 1;
        }
        for j in 0..d {
            if math::abs(w.sigma[(i, j)]) > hi * len + tol(hi * len) {
                out[0] += 1;
            }
            if math::abs(inv[(i, j)]) > (1.0 + ROUNDOFF) / (lo * len) {
                out[1] += 1;
            }
            if math::abs(w.chol_lower[(i, j)]) > math::sqrt(hi * len) * (1.0 + ROUNDOFF) {
                out[2] += 1;
            }
        }
    }
    out
}

/// Draws `draws` triples `t₁ < t₂ < s` in `[0, 1]` and a schedule from
/// `markets`, checks the window bounds on both `(t₁, s)` and `(t₂, s)`,
/// and records the two increment statistics.
pub fn covariance_bounds_suite(markets: &[MarketConfig], draws: usize, seed: u64) -> Result<CovarianceSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CovarianceSuiteReport {
        draws,
        violations: [0; 3],
        cholesky_increment_ratio: 0.0,
        inverse_diagonal_constant: 0.0,
    };
    for _ in 0..draws {
        let m = &markets[rng.random_range(0..markets.len())];
        let mut u = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        u.sort_by(f64::total_cmp);
        let [t1, t2, s] = u;
        if !(t1 < t2 && t2 < s) {
            continue;
        }
        let (lo, hi) = m.ellipticity();
        let w1 = CovarianceWindow::from_vol(m.vol(), t1, s)?;
        let w2 = CovarianceWindow::from_vol(m.vol(), t2, s)?;
        for w in [&w1, &w2] {
            let v = window_violations(w, lo, hi);
            for k in 0..3 {
                report.violations[k] += v[k];
            }
        }
        let dl = w1.chol_lower.sub(&w2.chol_lower).frobenius_norm() / math::sqrt(t2 - t1);
        report.cholesky_increment_ratio = report.cholesky_increment_ratio.max(dl);
        let i1 = w1.inverse_transpose();
        let i2 = w2.inverse_transpose();
        let bound = (1.0 / math::sqrt(s - t2)).min((t2 - t1) / math::powf(s - t2, 1.5));
        for i in 0..w1.dim() {
            // Σ⁻¹ = L⁻ᵀ(L⁻ᵀ)ᵀ
            let q1: f64 = (0..w1.dim()).map(|k| i1[(i, k)] * i1[(i, k)]).sum();
            let q2: f64 = (0..w2.dim()).map(|k| i2[(i, k)] * i2[(i, k)]).sum();
            let lhs = math::abs(math::sqrt(q1) - math::sqrt(q2));
            report.inverse_diagonal_constant = report.inverse_diagonal_constant.max(lhs / bound);
        }
    }
    Ok(report)
}

/// Largest relative deviation `|x − mean| / mean` of each increment
/// statistic across reports from different seeds.
pub fn seed_spread(reports: &[CovarianceSuiteReport]) -> (f64, f64) {
    let spread = |f: &dyn Fn(&CovarianceSuiteReport) -> f64| {
        let v: Vec<f64> = reports.iter().map(f).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| math::abs(x - mean) / mean).fold(0.0, f64::max)
    };
    (
        spread(&|r| r.cholesky_increment_ratio),
        spread(&|r| r.inverse_diagonal_constant),
    )
}

/// Both sides of `|h₁h₂ − h̃₁h̃₂|_α ≤ ½(|h₁−h̃₁|_α|h₂+h̃₂|_α + |h₁+h̃₁|_α|h₂−h̃₂|_α)`
/// with discrete norms on `grid`.
pub fn product_inequality(
    grid: &ParabolicGrid,
    h1: &[f64],
    h2: &[f64],
    g1: &[f64],
    g2: &[f64],
    alpha: f64,
) -> (f64, f64) {
    let zip = |a: &[f64], b: &[f64], f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect() };
    let p1 = zip(h1, h2, |x, y| x * y);
    let p2 = zip(g1, g2, |x, y| x * y);
    let lhs = parabolic_alpha_norm(grid, &zip(&p1, &p2, |x, y| x - y), alpha);
    let n = |v: Vec<f64>| parabolic_alpha_norm(grid, &v, alpha);
    let rhs = 0.5
        * (n(zip(h1, g1, |x, y| x - y)) * n(zip(h2, g2, |x, y| x + y))
            + n(zip(h1, g1, |x, y| x + y)) * n(zip(h2, g2, |x, y| x - y)));
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_hold_on_shipped_schedules() {
        let ms = shipped_schedules().unwrap();
        let rep = covariance_bounds_suite(&ms, 1000, 1).unwrap();
        assert!(rep.bounds_hold(), "{rep:?}");
        assert!(rep.cholesky_increment_ratio.is_finite() && rep.cholesky_increment_ratio > 0.0);
        assert!(rep.inverse_diagonal_constant.is_finite() && rep.inverse_diagonal_constant > 0.0);
    }

    #[test]
    fn constant_identity_statistics_approach_one() {
        let m = MarketConfig::new(2, 2, vec![1.0], VolSchedule::constant(Matrix::identity(2)), 1.0, 0.5, None).unwrap();
        let rep = covariance_bounds_suite(&[m], 2000, 4).unwrap();
        // suprema √D and 1 for C ≡ I, approached from below
        let r2 = 2f64.sqrt();
        assert!(rep.cholesky_increment_ratio <= r2 + 1e-12 && rep.cholesky_increment_ratio > 0.9 * r2);
        assert!(rep.inverse_diagonal_constant <= 1.0 + 1e-12 && rep.inverse_diagonal_constant > 0.9);
    }

    #[test]
    fn product_inequality_on_smooth_functions() {
        let grid = ParabolicGrid {
            times: vec![0.0, 0.05, 0.1],
            space: (0..9).map(|k| vec![-1.0 + 0.25 * k as f64]).collect(),
        };
        let eval = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            grid.times.iter().flat_map(|&t| grid.space.iter().map(move |x| (t, x[0]))).map(|(t, x)| f(t, x)).collect()
        };
        let h1 = eval(&|t, x| (x + t).sin());
        let h2 = eval(&|t, x| x * x - t);
        let g1 = eval(&|t, x| (x - t).cos());
        let g2 = eval(&|_, x| x.exp());
        let (l, r) = product_inequality(&grid, &h1, &h2, &g1, &g2, 0.5);
        assert!(l <= r + 1e-9, "{l} > {r}");
    }
}
