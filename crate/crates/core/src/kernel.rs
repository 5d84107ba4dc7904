//! Covariance windows `Σ(t,s) = ∫_t^s CCᵀ`, the Gaussian kernel and
//! Feynman–Kac evaluation of the inhomogeneous heat equation
//! `∂_t u + ½ tr(CCᵀ ∂_yy u) + f = 0`, `u(T) = g`.
//!
//! Expectations over `x = y − L(t,s) z`, `z ~ N(0, I)`, use a tensor
//! Gauss–Hermite rule; the time integral uses `s = t + τ²` so the
//! `(s − t)^{-1/2}` singularity of the gradient term disappears.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::linalg::{dot, Matrix};
use crate::math;
use crate::model::{MarketConfig, Terminal, VolSchedule};
use crate::quadrature::{GaussLegendre, QuadratureRule};
use crate::{Error, Result};

/// Relative Frobenius tolerance for the `LLᵀ = Σ` reconstruction.
pub const CHOLESKY_RECONSTRUCTION_TOL: f64 = 1e-12;

/// `Σ(t,s)` with its lower Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceWindow {
    pub t: f64,
    pub s: f64,
    pub sigma: Matrix,
    pub chol_lower: Matrix,
}

impl CovarianceWindow {
    pub fn from_vol(vol: &VolSchedule, t: f64, s: f64) -> Result<Self> {
        if !(t < s) {
            return Err(Error::TimeOrder { t, maturity: s });
        }
        let sigma = vol.integrate_outer(t, s).symmetrized();
        let chol_lower = sigma.cholesky().map_err(|(_, pivot)| {
            let d: Vec<f64> = (0..sigma.rows()).map(|i| sigma[(i, i)]).collect();
            let hi = d.iter().cloned().fold(f64::MIN, f64::max);
            let lo = d.iter().cloned().fold(f64::MAX, f64::min);
            Error::NotPositiveDefinite {
                t,
                s,
                pivot,
                ratio: if lo > 0.0 { hi / lo } else { f64::INFINITY },
            }
        })?;
        Ok(Self {
            t,
            s,
            sigma,
            chol_lower,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.rows()
    }

    /// `det Σ = (Π L_ii)²`
    pub fn determinant(&self) -> f64 {
        let p: f64 = (0..self.dim()).map(|i| self.chol_lower[(i, i)]).product();
        p * p
    }

    /// `Σ⁻¹ y` via two triangular solves.
    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        let w = self.chol_lower.solve_lower(y);
        self.chol_lower.solve_lower_transpose(&w)
    }

    /// `L⁻ᵀ`
    pub fn inverse_transpose(&self) -> Matrix {
        self.chol_lower.lower_inverse().transpose()
    }
}

pub fn sigma_window(market: &MarketConfig, t: f64, s: f64) -> Result<CovarianceWindow> {
    CovarianceWindow::from_vol(market.vol(), t, s)
}

/// `exp(−½ yᵀΣ⁻¹y) / ((2π)^{D/2} det(Σ)^{1/2})`
pub fn gaussian_kernel(window: &CovarianceWindow, y: &[f64]) -> f64 {
    let w = window.chol_lower.solve_lower(y);
    let q = dot(&w, &w);
    let d = window.dim() as f64;
    let sqrt_det: f64 = (0..window.dim()).map(|i| window.chol_lower[(i, i)]).product();
    math::exp(-0.5 * q) / (math::powf(2.0 * PI, 0.5 * d) * sqrt_det)
}

/// One node of the substituted time rule.
#[derive(Clone, Debug)]
pub struct TimeSlice {
    pub s: f64,
    /// Gauss–Legendre weight times `ds/dτ = 2τ`.
    pub weight: f64,
    pub chol_lower: Matrix,
    pub inv_transpose: Matrix,
}

/// Precomputed windows for evaluating at a fixed `t` with maturity `T`.
#[derive(Clone, Debug)]
pub struct FkPlan {
    pub t: f64,
    pub maturity: f64,
    pub terminal: CovarianceWindow,
    pub slices: Vec<TimeSlice>,
}

impl FkPlan {
    pub fn new(vol: &VolSchedule, t: f64, maturity: f64, time_rule: &GaussLegendre) -> Result<Self> {
        if !(t < maturity) {
            return Err(Error::TimeOrder { t, maturity });
        }
        let terminal = CovarianceWindow::from_vol(vol, t, maturity)?;
        let mut slices = Vec::with_capacity(time_rule.len());
        for (tau, w) in time_rule.on_interval(0.0, math::sqrt(maturity - t)) {
            let s = t + tau * tau;
            let win = CovarianceWindow::from_vol(vol, t, s)?;
            slices.push(TimeSlice {
                s,
                weight: 2.0 * tau * w,
                inv_transpose: win.inverse_transpose(),
                chol_lower: win.chol_lower,
            });
        }
        Ok(Self {
            t,
            maturity,
            terminal,
            slices,
        })
    }

    pub fn dim(&self) -> usize {
        self.terminal.dim()
    }

    /// `E[g(y − L(t,T)z)]`
    pub fn terminal_value<G: Terminal + ?Sized>(&self, g: &G, y: &[f64], rule: &QuadratureRule) -> f64 {
        let d = self.dim();
        let mut x = vec![0.0; d];
        let mut acc = 0.0;
        for (z, w) in rule.iter() {
            displaced(y, &self.terminal.chol_lower, z, &mut x);
            acc += w * g.value(&x);
        }
        acc
    }

    /// `E[∂g(y − L(t,T)z)]` accumulated into `out`.
    pub fn terminal_gradient<G: Terminal + ?Sized>(
        &self,
        g: &G,
        y: &[f64],
        rule: &QuadratureRule,
        out: &mut [f64],
    ) {
        let d = self.dim();
        let mut x = vec![0.0; d];
        let mut gx = vec![0.0; d];
        out.iter_mut().for_each(|o| *o = 0.0);
        for (z, w) in rule.iter() {
            displaced(y, &self.terminal.chol_lower, z, &mut x);
            g.gradient(&x, &mut gx);
            for (o, v) in out.iter_mut().zip(&gx) {
                *o += w * v;
            }
        }
    }

    /// `∫_t^T E[f(s, y − L(t,s)z)] ds` and
    /// `−∫_t^T E[L(t,s)⁻ᵀz · f(s, y − L(t,s)z)] ds` in one pass.
    pub fn source_terms<F: FnMut(f64, &[f64]) -> f64>(
        &self,
        mut f: F,
        y: &[f64],
        rule: &QuadratureRule,
        grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        let d = self.dim();
        let mut x = vec![0.0; d];
        let mut value = 0.0;
        let mut gacc = vec![0.0; d];
        let want_grad = grad.is_some();
        let mut mz = vec![0.0; d];
        for sl in &self.slices {
            let mut e_val = 0.0;
            let mut e_grad = vec![0.0; if want_grad { d } else { 0 }];
            for (z, w) in rule.iter() {
                displaced(y, &sl.chol_lower, z, &mut x);
                let fv = f(sl.s, &x);
                if !fv.is_finite() {
                    return Err(Error::NonFinite {
                        context: "sigma-kernel: source term",
                    });
                }
                e_val += w * fv;
                if want_grad {
                    sl.inv_transpose.matvec_into(z, &mut mz);
                    for (g, m) in e_grad.iter_mut().zip(&mz) {
                        *g += w * m * fv;
                    }
                }
            }
            value += sl.weight * e_val;
            if want_grad {
                for (a, g) in gacc.iter_mut().zip(&e_grad) {
                    *a -= sl.weight * g;
                }
            }
        }
        if let Some(out) = grad {
            out.copy_from_slice(&gacc);
        }
        Ok(value)
    }
}

#[inline]
fn displaced(y: &[f64], l: &Matrix, z: &[f64], out: &mut [f64]) {
    l.matvec_into(z, out);
    for (o, yv) in out.iter_mut().zip(y) {
        *o = yv - *o;
    }
}

/// `u(t,y)` for terminal `g` and source `f`.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_eval<G, F>(
    g: &G,
    f: F,
    vol: &VolSchedule,
    t: f64,
    y: &[f64],
    maturity: f64,
    rule: &QuadratureRule,
    time_rule: &GaussLegendre,
) -> Result<f64>
where
    G: Terminal + ?Sized,
    F: FnMut(f64, &[f64]) -> f64,
{
    let plan = FkPlan::new(vol, t, maturity, time_rule)?;
    let v = plan.terminal_value(g, y, rule) + plan.source_terms(f, y, rule, None)?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "sigma-kernel: Feynman-Kac value",
        });
    }
    Ok(v)
}

/// `∂_y u(t,y)`, all components.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_grad_all<G, F>(
    g: &G,
    f: F,
    vol: &VolSchedule,
    t: f64,
    y: &[f64],
    maturity: f64,
    rule: &QuadratureRule,
    time_rule: &GaussLegendre,
) -> Result<Vec<f64>>
where
    G: Terminal + ?Sized,
    F: FnMut(f64, &[f64]) -> f64,
{
    let plan = FkPlan::new(vol, t, maturity, time_rule)?;
    let d = plan.dim();
    let mut out = vec![0.0; d];
    plan.terminal_gradient(g, y, rule, &mut out);
    let mut src = vec![0.0; d];
    plan.source_terms(f, y, rule, Some(&mut src))?;
    for (o, s) in out.iter_mut().zip(&src) {
        *o += s;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "sigma-kernel: Feynman-Kac gradient",
        });
    }
    Ok(out)
}

/// `∂_{y_d} u(t,y)`
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_grad<G, F>(
    g: &G,
    f: F,
    vol: &VolSchedule,
    t: f64,
    y: &[f64],
    maturity: f64,
    d: usize,
    rule: &QuadratureRule,
    time_rule: &GaussLegendre,
) -> Result<f64>
where
    G: Terminal + ?Sized,
    F: FnMut(f64, &[f64]) -> f64,
{
    Ok(feynman_kac_grad_all(g, f, vol, t, y, maturity, rule, time_rule)?[d])
}

/// Terminal given by closures; the gradient falls back to central
/// differences when none is supplied.
pub struct FnTerminal<V, G = fn(&[f64], &mut [f64])> {
    dim: usize,
    value: V,
    gradient: Option<G>,
}

impl<V: Fn(&[f64]) -> f64> FnTerminal<V> {
    pub fn new(dim: usize, value: V) -> Self {
        Self {
            dim,
            value,
            gradient: None,
        }
    }
}

impl<V: Fn(&[f64]) -> f64, G: Fn(&[f64], &mut [f64])> FnTerminal<V, G> {
    pub fn with_gradient(dim: usize, value: V, gradient: G) -> Self {
        Self {
            dim,
            value,
            gradient: Some(gradient),
        }
    }
}

impl<V: Fn(&[f64]) -> f64, G: Fn(&[f64], &mut [f64])> Terminal for FnTerminal<V, G> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, y: &[f64]) -> f64 {
        (self.value)(y)
    }

    fn gradient(&self, y: &[f64], out: &mut [f64]) {
        match &self.gradient {
            Some(g) => g(y, out),
            None => {
                let h = 1e-6;
                let mut p = y.to_vec();
                for a in 0..self.dim {
                    p[a] = y[a] + h;
                    let up = (self.value)(&p);
                    p[a] = y[a] - h;
                    let dn = (self.value)(&p);
                    p[a] = y[a];
                    out[a] = (up - dn) / (2.0 * h);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EndowmentSpec;
    use approx::assert_relative_eq;

    fn vol1() -> VolSchedule {
        VolSchedule::constant(Matrix::identity(1))
    }

    #[test]
    fn window_examples() {
        let w = CovarianceWindow::from_vol(&VolSchedule::constant(Matrix::identity(2)), 0.2, 0.7).unwrap();
        assert!(w.sigma.sub(&Matrix::identity(2).scale(0.5)).max_abs() < 1e-15);
        assert!(w.chol_lower.sub(&Matrix::identity(2).scale(libm::sqrt(0.5))).max_abs() < 1e-15);
        let w = CovarianceWindow::from_vol(&VolSchedule::constant(Matrix::from_diagonal(&[1.0, 2.0])), 0.0, 1.0)
            .unwrap();
        assert!(w.sigma.sub(&Matrix::from_diagonal(&[1.0, 4.0])).max_abs() < 1e-15);
        assert!(w.chol_lower.sub(&Matrix::from_diagonal(&[1.0, 2.0])).max_abs() < 1e-15);
        let lin = VolSchedule::linear(
            Matrix::identity(2),
            Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap(),
        );
        let w = CovarianceWindow::from_vol(&lin, 0.0, 1.0).unwrap();
        let want = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 4.0 / 3.0]]).unwrap();
        assert!(w.sigma.sub(&want).max_abs() < 1e-15);
        let rec = w.chol_lower.matmul(&w.chol_lower.transpose());
        assert!(rec.sub(&w.sigma).frobenius_norm() <= CHOLESKY_RECONSTRUCTION_TOL * w.sigma.frobenius_norm());
    }

    #[test]
    fn rejects_reversed_window() {
        assert!(matches!(
            CovarianceWindow::from_vol(&vol1(), 0.5, 0.5),
            Err(Error::TimeOrder { .. })
        ));
    }

    #[test]
    fn kernel_values_and_normalization() {
        let w = CovarianceWindow::from_vol(&vol1(), 0.0, 1.0).unwrap();
        assert_relative_eq!(gaussian_kernel(&w, &[0.0]), 0.398_942_280_401_432_7, epsilon = 1e-15);
        let w2 = CovarianceWindow::from_vol(&VolSchedule::constant(Matrix::identity(2)), 0.0, 1.0).unwrap();
        assert_relative_eq!(gaussian_kernel(&w2, &[0.0, 0.0]), 1.0 / (2.0 * PI), epsilon = 1e-15);
        // ∫Γ = 1 via y = k·L z with a deliberately mismatched scale k
        let lin = VolSchedule::linear(
            Matrix::from_rows(&[vec![1.0, 0.2], vec![0.0, 0.8]]).unwrap(),
            Matrix::from_rows(&[vec![0.0, 0.0], vec![0.5, 0.3]]).unwrap(),
        );
        let w = CovarianceWindow::from_vol(&lin, 0.1, 0.6).unwrap();
        let k = 1.2;
        let rule = QuadratureRule::gauss_hermite(2, 40);
        let det_l = libm::sqrt(w.determinant());
        let total = rule.expect(|z| {
            let y: Vec<f64> = w.chol_lower.matvec(z).iter().map(|v| k * v).collect();
            let phi = libm::exp(-0.5 * dot(z, z)) / (2.0 * PI);
            gaussian_kernel(&w, &y) * k * k * det_l / phi
        });
        assert_relative_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn kernel_is_even() {
        let w = CovarianceWindow::from_vol(
            &VolSchedule::constant(Matrix::from_rows(&[vec![1.0, 0.3], vec![-0.2, 0.9]]).unwrap()),
            0.0,
            0.4,
        )
        .unwrap();
        let y = [0.3, -0.8];
        assert_eq!(gaussian_kernel(&w, &y), gaussian_kernel(&w, &[-0.3, 0.8]));
    }

    #[test]
    fn feynman_kac_trivial_cases() {
        let rule = QuadratureRule::gauss_hermite(1, 16);
        let tr = GaussLegendre::new(32);
        let v = vol1();
        let k = EndowmentSpec::constant(3.5, 1);
        let u = feynman_kac_eval(&k, |_, _| 0.0, &v, 0.2, &[0.7], 0.9, &rule, &tr).unwrap();
        assert_relative_eq!(u, 3.5, epsilon = 1e-13);
        let zero = EndowmentSpec::zero(1);
        let u = feynman_kac_eval(&zero, |_, _| 1.0, &v, 0.2, &[0.7], 0.9, &rule, &tr).unwrap();
        assert_relative_eq!(u, 0.7, epsilon = 1e-13);
        let sq = EndowmentSpec::quadratic(0.0, vec![0.0], Matrix::identity(1), 0.0).unwrap();
        let u = feynman_kac_eval(&sq, |_, _| 0.0, &v, 0.2, &[0.7], 0.9, &rule, &tr).unwrap();
        assert_relative_eq!(u, 0.49 + 0.7, epsilon = 1e-13);
        let lin = EndowmentSpec::quadratic(0.0, vec![1.5], Matrix::zeros(1, 1), 0.0).unwrap();
        let g = feynman_kac_grad(&lin, |_, _| 0.0, &v, 0.2, &[0.7], 0.9, 0, &rule, &tr).unwrap();
        assert_relative_eq!(g, 1.5, epsilon = 1e-14);
        let g = feynman_kac_grad(&zero, |_, _| 1.0, &v, 0.2, &[0.7], 0.9, 0, &rule, &tr).unwrap();
        assert!(g.abs() < 1e-13);
    }

    #[test]
    fn rejects_t_at_maturity() {
        let rule = QuadratureRule::gauss_hermite(1, 4);
        let tr = GaussLegendre::new(4);
        let g = EndowmentSpec::zero(1);
        assert!(feynman_kac_eval(&g, |_, _| 0.0, &vol1(), 0.5, &[0.0], 0.5, &rule, &tr).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences_of_value() {
        let vol = VolSchedule::linear(
            Matrix::from_rows(&[vec![1.0, 0.1], vec![0.0, 0.7]]).unwrap(),
            Matrix::from_rows(&[vec![0.2, 0.0], vec![0.3, 0.1]]).unwrap(),
        );
        let rule = QuadratureRule::gauss_hermite(2, 16);
        let tr = GaussLegendre::new(32);
        let g = EndowmentSpec::analytic(
            crate::model::AnalyticFamily::Cosine {
                amplitude: 0.8,
                wave: vec![1.1, -0.6],
                phase: 0.3,
            },
            0.0,
        )
        .unwrap();
        let f = |s: f64, x: &[f64]| libm::sin(x[0] + 0.5 * x[1]) * (1.0 + s);
        let (t, y, mat) = (0.1, [0.2, -0.4], 0.6);
        let grad = feynman_kac_grad_all(&g, f, &vol, t, &y, mat, &rule, &tr).unwrap();
        let h = 1e-4;
        for d in 0..2 {
            let mut yp = y;
            let mut ym = y;
            yp[d] += h;
            ym[d] -= h;
            let up = feynman_kac_eval(&g, f, &vol, t, &yp, mat, &rule, &tr).unwrap();
            let dn = feynman_kac_eval(&g, f, &vol, t, &ym, mat, &rule, &tr).unwrap();
            assert_relative_eq!(grad[d], (up - dn) / (2.0 * h), epsilon = 1e-6);
        }
    }

    #[test]
    fn fn_terminal_finite_difference_fallback() {
        let t = FnTerminal::new(1, |y: &[f64]| y[0] * y[0] * y[0]);
        let mut g = [0.0];
        t.gradient(&[2.0], &mut g);
        assert_relative_eq!(g[0], 12.0, epsilon = 1e-6);
    }
}
