//! Taylor-approximate equilibria and empirical convergence rates.
//!
//! `λ` comes from the Picard solver or, for one complete single-agent
//! factor with constant volatility, from the Cole–Hopf closed form; `λ̃`
//! comes from the Riccati system of the Taylor-expanded endowments.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::kernel::CovarianceWindow;
use crate::linalg::Matrix;
use crate::math;
use crate::model::{EndowmentSpec, MarketConfig, Terminal};
use crate::picard::{picard_solve, PicardOptions};
use crate::quadrature::{integrate_adaptive, QuadratureRule};
use crate::riccati::{quadratic_lambda, riccati_integrate, RiccatiOptions};
use crate::{Error, Result};

pub use crate::model::{example_big_f, example_f, example_f_prime};

/// Second-order Taylor polynomial at 0, stored as
/// `g(0) + ∂g(0)ᵀy + yᵀ(½∂²g(0))y`.
pub fn taylor2(g: &EndowmentSpec) -> Result<EndowmentSpec> {
    let d = g.dim();
    let origin = vec![0.0; d];
    let mut h = vec![0.0; d];
    g.gradient(&origin, &mut h);
    let mut hess = Matrix::zeros(d, d);
    if !g.hessian(&origin, &mut hess) {
        return Err(Error::InvalidEndowment("second-order expansion needs a Hessian".into()));
    }
    EndowmentSpec::quadratic(g.value(&origin), h, hess.scale(0.5), g.initial())
}

/// First-order Taylor polynomial `g(0) + ∂g(0)ᵀy`.
pub fn taylor1(g: &EndowmentSpec) -> Result<EndowmentSpec> {
    let d = g.dim();
    let origin = vec![0.0; d];
    let mut h = vec![0.0; d];
    g.gradient(&origin, &mut h);
    EndowmentSpec::quadratic(g.value(&origin), h, Matrix::zeros(d, d), g.initial())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaylorOrder {
    First,
    Second,
}

impl TaylorOrder {
    pub fn expand(self, g: &EndowmentSpec) -> Result<EndowmentSpec> {
        match self {
            TaylorOrder::First => taylor1(g),
            TaylorOrder::Second => taylor2(g),
        }
    }
}

/// `E|λ_a(t, Y_t) − λ_b(t, Y_t)|` with `Y_t ~ N(0, Σ(0,t))`; at `t = 0`
/// the law is a point mass at the origin.
pub fn l1_error<A, B>(lambda_a: A, lambda_b: B, vol: &crate::VolSchedule, t: f64, rule: &QuadratureRule) -> Result<f64>
where
    A: Fn(f64, &[f64]) -> Result<Vec<f64>>,
    B: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    let d = vol.dim();
    let dist = |y: &[f64]| -> Result<f64> {
        let a = lambda_a(t, y)?;
        let b = lambda_b(t, y)?;
        Ok(math::sqrt(a.iter().zip(&b).map(|(x, z)| (x - z) * (x - z)).sum()))
    };
    if t <= 0.0 {
        return dist(&vec![0.0; d]);
    }
    let win = CovarianceWindow::from_vol(vol, 0.0, t)?;
    let mut y = vec![0.0; d];
    let mut acc = 0.0;
    for (z, w) in rule.iter() {
        win.chol_lower.matvec_into(z, &mut y);
        acc += w * dist(&y)?;
    }
    Ok(acc)
}

/// Least squares of `log error` on `log T` over strictly positive errors.
/// Returns `(slope, intercept)`.
pub fn rate_fit(maturities: &[f64], errors: &[f64]) -> Result<(f64, f64)> {
    if maturities.len() != errors.len() {
        return Err(Error::Compare("maturities and errors differ in length".into()));
    }
    let pts: Vec<(f64, f64)> = maturities
        .iter()
        .zip(errors)
        .filter(|(t, e)| **t > 0.0 && **e > 0.0 && e.is_finite())
        .map(|(t, e)| (math::ln(*t), math::ln(*e)))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Compare(format!(
            "rate fit needs at least 3 positive errors, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Compare("rate fit needs distinct maturities".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// `∂_y u(t,y)` for `∂_t u + ½c²u_yy − (a/2)c²u_y² = 0`, `u(T) = g`:
/// `E[g'(y − x)e^{−a g(y−x)}] / E[e^{−a g(y−x)}]`, `x ~ N(0, c²(T−t))`.
pub fn cole_hopf_gradient(g: &EndowmentSpec, a: f64, c: f64, t: f64, y: f64, maturity: f64) -> Result<f64> {
    if g.dim() != 1 {
        return Err(Error::Dimension("closed form needs a one-dimensional endowment".into()));
    }
    if !(t < maturity) {
        return Err(Error::TimeOrder { t, maturity });
    }
    let sigma = math::abs(c) * math::sqrt(maturity - t);
    let gy = g.value(&[y]);
    let width = 12.0 * sigma;
    let breaks: Vec<f64> = g.kinks_1d().iter().map(|k| y - k).collect();
    let density = |x: f64| math::exp(-0.5 * (x / sigma) * (x / sigma));
    let mut grad = [0.0];
    let num = integrate_adaptive(
        |x| {
            let p = [y - x];
            g.gradient(&p, &mut grad);
            density(x) * grad[0] * math::exp(-a * (g.value(&p) - gy))
        },
        -width,
        width,
        &breaks,
        0.0,
        1e-13,
    );
    let den = integrate_adaptive(
        |x| density(x) * math::exp(-a * (g.value(&[y - x]) - gy)),
        -width,
        width,
        &breaks,
        0.0,
        1e-13,
    );
    let v = num.value / den.value;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "taylor-compare: closed-form integral",
        });
    }
    Ok(v)
}

/// Market price of risk of the complete one-factor single-agent market
/// with constant volatility `c`: `λ = a·c·∂_y u`.
pub fn closed_form_lambda(g: &EndowmentSpec, a: f64, c: f64, t: f64, y: f64, maturity: f64) -> Result<f64> {
    Ok(a * c * cole_hopf_gradient(g, a, c, t, y, maturity)?)
}

/// `λ(t,y)` of the rate-optimality example (`a = 1`, `C ≡ 1`, `g = F`).
pub fn example_closed_lambda(t: f64, y: f64, maturity: f64, alpha: f64) -> Result<f64> {
    let g = EndowmentSpec::example(alpha, 1, 0.0)?;
    closed_form_lambda(&g, 1.0, 1.0, t, y, maturity)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TEvalPolicy {
    AtZero,
    SupOverT,
}

impl TEvalPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            TEvalPolicy::AtZero => "at_zero",
            TEvalPolicy::SupOverT => "sup_over_t",
        }
    }

    /// Evaluation times for maturity `T`.
    pub fn times(self, maturity: f64) -> Vec<f64> {
        match self {
            TEvalPolicy::AtZero => vec![0.0],
            TEvalPolicy::SupOverT => vec![0.0, 0.25 * maturity, 0.5 * maturity, 0.75 * maturity],
        }
    }
}

/// Where `λ` comes from in [`compare_pipeline`].
#[derive(Clone, Debug, PartialEq)]
pub enum LambdaSource {
    Picard(PicardOptions),
    /// Cole–Hopf closed form (one complete factor, one investor, constant
    /// volatility).
    ClosedForm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateExperiment {
    pub maturities: Vec<f64>,
    pub errors: Vec<f64>,
    pub fitted_slope: f64,
    pub fitted_intercept: f64,
    pub t_eval_policy: TEvalPolicy,
    /// Maturities dropped because a solver failed, with the reason.
    pub dropped: Vec<(f64, String)>,
}

/// `2^{−k}` for `k` in `lo..=hi`, decreasing.
pub fn dyadic_schedule(lo: u32, hi: u32) -> Vec<f64> {
    (lo..=hi).map(|k| 1.0 / (1u64 << k) as f64).collect()
}

/// Error between `λ` and `λ̃` at one maturity under `policy`.
pub fn compare_at(
    market: &MarketConfig,
    endowments: &[EndowmentSpec],
    maturity: f64,
    policy: TEvalPolicy,
    source: &LambdaSource,
    order: TaylorOrder,
    rule: &QuadratureRule,
) -> Result<f64> {
    let m = market.with_maturity(maturity)?;
    let approx: Vec<EndowmentSpec> = endowments.iter().map(|g| order.expand(g)).collect::<Result<_>>()?;
    let path = riccati_integrate(&m, &approx, maturity, &RiccatiOptions::default())?;
    let lambda_tilde = |t: f64, y: &[f64]| quadratic_lambda(&path, &m, t, y);
    let mut worst = 0.0f64;
    match source {
        LambdaSource::ClosedForm => {
            if m.dim_factor() != 1 || m.dim_assets() != 1 || m.num_investors() != 1 {
                return Err(Error::InvalidMarket("closed form needs D = N = I = 1".into()));
            }
            let c = m.vol_at(0.0)[(0, 0)];
            if !m.vol().is_constant() {
                return Err(Error::InvalidMarket("closed form needs constant volatility".into()));
            }
            let a = m.risk_aversion(0);
            let g = &endowments[0];
            let lambda = |t: f64, y: &[f64]| closed_form_lambda(g, a, c, t, y[0], maturity).map(|v| vec![v]);
            for t in policy.times(maturity) {
                worst = worst.max(l1_error(lambda, lambda_tilde, m.vol(), t, rule)?);
            }
        }
        LambdaSource::Picard(opts) => {
            let (_, eq) = picard_solve(&m, endowments, maturity, opts)?;
            let lambda = |t: f64, y: &[f64]| Ok(eq.lambda(t, y));
            for t in policy.times(maturity) {
                worst = worst.max(l1_error(lambda, lambda_tilde, m.vol(), t, rule)?);
            }
        }
    }
    Ok(worst)
}

/// Runs [`compare_at`] over a maturity schedule and fits the exponent.
/// Maturities whose solvers fail are dropped and recorded.
pub fn compare_pipeline(
    market: &MarketConfig,
    endowments: &[EndowmentSpec],
    maturities: &[f64],
    policy: TEvalPolicy,
    source: &LambdaSource,
    order: TaylorOrder,
    rule: &QuadratureRule,
) -> Result<RateExperiment> {
    let mut kept_t = Vec::new();
    let mut kept_e = Vec::new();
    let mut dropped = Vec::new();
    for &t in maturities {
        match compare_at(market, endowments, t, policy, source, order, rule) {
            Ok(e) => {
                kept_t.push(t);
                kept_e.push(e);
            }
            Err(err) if err.is_solver_failure() => dropped.push((t, alloc::string::ToString::to_string(&err))),
            Err(err) => return Err(err),
        }
    }
    let (slope, intercept) = rate_fit(&kept_t, &kept_e)?;
    Ok(RateExperiment {
        maturities: kept_t,
        errors: kept_e,
        fitted_slope: slope,
        fitted_intercept: intercept,
        t_eval_policy: policy,
        dropped,
    })
}

/// Rate experiment for the example endowment with the closed-form `λ` and
/// `λ̃ ≡ 2`, evaluated at `t = 0`.
pub fn example_rate_experiment(alpha: f64, maturities: &[f64]) -> Result<RateExperiment> {
    let m = MarketConfig::scalar(vec![1.0], 1.0, 1.0, alpha)?;
    let g = [EndowmentSpec::example(alpha, 1, 0.0)?];
    let rule = QuadratureRule::gauss_hermite(1, 16);
    compare_pipeline(
        &m,
        &g,
        maturities,
        TEvalPolicy::AtZero,
        &LambdaSource::ClosedForm,
        TaylorOrder::Second,
        &rule,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AnalyticFamily;
    use approx::assert_relative_eq;

    fn cosine() -> EndowmentSpec {
        EndowmentSpec::analytic(
            AnalyticFamily::Cosine {
                amplitude: 1.0,
                wave: vec![1.0],
                phase: 0.0,
            },
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn taylor_examples() {
        let q = EndowmentSpec::quadratic(
            0.4,
            vec![1.0, -0.5],
            Matrix::from_rows(&[vec![0.3, 0.2], vec![0.0, -0.1]]).unwrap(),
            0.2,
        )
        .unwrap();
        assert_eq!(taylor2(&q).unwrap(), q);
        assert_eq!(taylor2(&taylor2(&q).unwrap()).unwrap(), taylor2(&q).unwrap());
        let ex = EndowmentSpec::example(0.5, 1, 0.0).unwrap();
        let t2 = taylor2(&ex).unwrap();
        let (f, h, j) = t2.quadratic_parts().unwrap();
        assert_relative_eq!(f, 2.0, epsilon = 1e-15);
        assert_relative_eq!(h[0], 2.0, epsilon = 1e-15);
        assert_eq!(j[(0, 0)], 0.0);
        assert_eq!(taylor1(&ex).unwrap(), t2);
        let c2 = taylor2(&cosine()).unwrap();
        let (f, h, j) = c2.quadratic_parts().unwrap();
        assert_eq!((f, h[0], j[(0, 0)]), (1.0, 0.0, -0.5));
        let c1 = taylor1(&cosine()).unwrap();
        assert_eq!(c1, EndowmentSpec::constant(1.0, 1));
        let affine = EndowmentSpec::quadratic(1.0, vec![0.3], Matrix::zeros(1, 1), 0.0).unwrap();
        assert_eq!(taylor1(&affine).unwrap(), affine);
    }

    #[test]
    fn rate_fit_exact_power_laws() {
        let t = dyadic_schedule(4, 10);
        let (s, _) = rate_fit(&t, &t).unwrap();
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        let e: Vec<f64> = t.iter().map(|x| 3.0 * x.powf(0.75)).collect();
        let (s, c) = rate_fit(&t, &e).unwrap();
        assert_relative_eq!(s, 0.75, epsilon = 1e-12);
        assert_relative_eq!(c, 3f64.ln(), epsilon = 1e-12);
        assert!(rate_fit(&t[..3], &[0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn l1_error_examples() {
        let vol = crate::VolSchedule::constant(Matrix::identity(1));
        let rule = QuadratureRule::gauss_hermite(1, 16);
        let a = |_: f64, y: &[f64]| Ok(vec![y[0].sin()]);
        assert_eq!(l1_error(a, a, &vol, 0.3, &rule).unwrap(), 0.0);
        let b = |_: f64, y: &[f64]| Ok(vec![y[0].sin() + 0.7]);
        assert_relative_eq!(l1_error(a, b, &vol, 0.3, &rule).unwrap(), 0.7, epsilon = 1e-14);
        assert_relative_eq!(l1_error(a, b, &vol, 0.0, &rule).unwrap(), 0.7, epsilon = 1e-14);
    }

    #[test]
    fn closed_form_examples() {
        let affine = EndowmentSpec::quadratic(2.0, vec![2.0], Matrix::zeros(1, 1), 0.0).unwrap();
        for &(t, y) in &[(0.0, 0.0), (0.05, 1.3), (0.09, -2.5)] {
            assert_relative_eq!(closed_form_lambda(&affine, 1.0, 1.0, t, y, 0.1).unwrap(), 2.0, epsilon = 1e-12);
        }
        for &(t, y) in &[(0.0, 0.0), (0.05, 0.4), (0.0, -1.5), (0.08, 2.1)] {
            assert!(example_closed_lambda(t, y, 0.1, 0.5).unwrap() <= 2.0 + 1e-12);
        }
        let near = example_closed_lambda(0.0, 1.0, 1e-6, 0.5).unwrap();
        assert!((near - 1.0).abs() < 1e-3, "{near}");
        assert!(example_closed_lambda(0.0, 0.0, 0.01, 0.5).unwrap() < 2.0);
    }

    #[test]
    fn example_error_shrinks_with_maturity() {
        let exp = example_rate_experiment(0.5, &dyadic_schedule(4, 10)).unwrap();
        assert!(exp.errors.windows(2).all(|w| w[1] <= w[0]));
        assert!((exp.fitted_slope - 0.75).abs() <= 0.08, "{}", exp.fitted_slope);
    }

    #[test]
    fn quadratic_endowments_have_no_taylor_error() {
        let m = MarketConfig::scalar(vec![1.0], 1.0, 1.0, 0.5).unwrap();
        let g = [EndowmentSpec::quadratic(0.5, vec![1.0], Matrix::from_diagonal(&[0.2]), 0.0).unwrap()];
        let rule = QuadratureRule::gauss_hermite(1, 16);
        let e = compare_at(&m, &g, 0.1, TEvalPolicy::SupOverT, &LambdaSource::ClosedForm, TaylorOrder::Second, &rule)
            .unwrap();
        assert!(e < 1e-7, "{e}");
    }
}
