//! Coupled Riccati system for exponential-quadratic endowments
//! `g^{(i)}(y) = f^{(i)} + h^{(i)ᵀ}y + yᵀj^{(i)}y`.
//!
//! The state is parameterized by time-to-maturity `s`; at `s` the market
//! coefficients are evaluated at calendar time `T − s`. Per investor the flat
//! state holds `γ` (row-major `D×D`), then `β` (`D`), then `α`.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{dot, Matrix};
use crate::math;
use crate::model::{EndowmentSpec, MarketConfig};
use crate::picard::{Equilibrium, ValueSource};
use crate::{Error, Result};

/// Integrator settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiOptions {
    pub atol: f64,
    pub rtol: f64,
    /// Largest step as a fraction of the horizon.
    pub max_step_fraction: f64,
    /// `max_i ||γ^{(i)}||_F` above this counts as blow-up.
    pub blow_up_cap: f64,
    /// Width to which the blow-up time is bisected.
    pub blow_up_resolution: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-8,
            max_step_fraction: 1.0 / 64.0,
            blow_up_cap: 1e6,
            blow_up_resolution: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub min_step: f64,
    pub max_step: f64,
}

/// Sampled solution of the Riccati system with derivatives for cubic
/// Hermite interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiPath {
    dim: usize,
    investors: usize,
    maturity: f64,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
    blow_up: Option<f64>,
    pub stats: StepStats,
}

fn stride(d: usize) -> usize {
    d * d + d + 1
}

impl RiccatiPath {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn investors(&self) -> usize {
        self.investors
    }

    /// Calendar maturity `T` the path was integrated for.
    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    /// Time-to-maturity grid.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    /// Last time-to-maturity reached.
    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Estimated explosion time, if one was detected before `T`.
    pub fn blow_up(&self) -> Option<f64> {
        self.blow_up
    }

    /// Full state at time-to-maturity `s` (clamped to the grid).
    pub fn state_at(&self, s: f64) -> Vec<f64> {
        let n = self.times.len();
        if n == 1 || s <= self.times[0] {
            return self.states[0].clone();
        }
        if s >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let k = self.times.partition_point(|&v| v <= s).min(n - 1) - 1;
        let (s0, s1) = (self.times[k], self.times[k + 1]);
        let h = s1 - s0;
        let th = (s - s0) / h;
        let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
        let h10 = th * (1.0 - th) * (1.0 - th);
        let h01 = th * th * (3.0 - 2.0 * th);
        let h11 = th * th * (th - 1.0);
        self.states[k]
            .iter()
            .zip(&self.derivs[k])
            .zip(self.states[k + 1].iter().zip(&self.derivs[k + 1]))
            .map(|((y0, d0), (y1, d1))| h00 * y0 + h * h10 * d0 + h01 * y1 + h * h11 * d1)
            .collect()
    }

    pub fn gamma(&self, i: usize, s: f64) -> Matrix {
        let st = self.state_at(s);
        gamma_of(&st, self.dim, i)
    }

    pub fn beta(&self, i: usize, s: f64) -> Vec<f64> {
        let st = self.state_at(s);
        let d = self.dim;
        let o = i * stride(d) + d * d;
        st[o..o + d].to_vec()
    }

    pub fn alpha(&self, i: usize, s: f64) -> f64 {
        let st = self.state_at(s);
        st[i * stride(self.dim) + stride(self.dim) - 1]
    }

    fn check(&self, t: f64) -> Result<f64> {
        let s = self.maturity - t;
        if let Some(t0) = self.blow_up {
            if s > t0 {
                return Err(Error::RiccatiBlowUp {
                    t0,
                    horizon: self.maturity,
                    path: alloc::boxed::Box::new(self.clone()),
                });
            }
        }
        if !(s >= -1e-14 && s <= self.horizon() + 1e-14) {
            return Err(Error::TimeOrder {
                t,
                maturity: self.maturity,
            });
        }
        Ok(s.max(0.0))
    }
}

fn gamma_of(state: &[f64], d: usize, i: usize) -> Matrix {
    let o = i * stride(d);
    Matrix::from_row_major(d, d, state[o..o + d * d].to_vec())
}

/// Right-hand side of the Riccati system at time-to-maturity `s` for a
/// market with maturity `maturity`.
pub fn riccati_rhs(state: &[f64], s: f64, market: &MarketConfig, maturity: f64) -> Vec<f64> {
    let c = market.vol_at((maturity - s).max(0.0));
    let n = market.dim_assets();
    let cbar = c.leading_columns(n);
    let p = cbar.matmul(&cbar.transpose());
    let q = c.outer_self();
    rhs_with(state, market.risk_aversions(), market.tau_sigma(), &c, &p, &q, n)
}

fn rhs_with(state: &[f64], a: &[f64], tau: f64, c: &Matrix, p: &Matrix, q: &Matrix, n: usize) -> Vec<f64> {
    let d = c.rows();
    let k = stride(d);
    let inv = a.len();
    let pq = p.sub(q);
    let gs: Vec<Matrix> = (0..inv).map(|i| gamma_of(state, d, i).plus_transpose()).collect();
    let betas: Vec<&[f64]> = (0..inv).map(|i| &state[i * k + d * d..i * k + d * d + d]).collect();
    let mut g_sum = Matrix::zeros(d, d);
    for g in &gs {
        g_sum = g_sum.add(g);
    }
    let mut b_sum = vec![0.0; d];
    for b in &betas {
        for (s, v) in b_sum.iter_mut().zip(b.iter()) {
            *s += v;
        }
    }
    let p_gsum = p.matmul(&g_sum);
    let gpg = g_sum.matmul(&p_gsum);
    let p_bsum = p.matvec(&b_sum);
    let gp_bsum = g_sum.matvec(&p_bsum);
    let cbar_bsum: f64 = {
        let v = c.tr_matvec(&b_sum);
        v[..n].iter().map(|x| x * x).sum()
    };
    let mut out = vec![0.0; state.len()];
    for i in 0..inv {
        let ai = a[i];
        let gi = &gs[i];
        let bi = betas[i];
        let dg = gi
            .matmul(&pq)
            .matmul(gi)
            .scale(0.5 * ai)
            .sub(&gi.matmul(&p_gsum).scale(1.0 / tau))
            .add(&gpg.scale(1.0 / (2.0 * ai * tau * tau)));
        out[i * k..i * k + d * d].copy_from_slice(dg.as_slice());
        let t1 = gi.matvec(&pq.matvec(bi));
        let t3 = g_sum.matvec(&p.matvec(bi));
        let t4 = gi.matvec(&p_bsum);
        for c_ in 0..d {
            out[i * k + d * d + c_] =
                ai * t1[c_] + gp_bsum[c_] / (ai * tau * tau) - t3[c_] / tau - t4[c_] / tau;
        }
        let ctb = c.tr_matvec(bi);
        let hidden: f64 = ctb[n..].iter().map(|v| v * v).sum();
        let tr: f64 = gi.matmul(q).trace();
        out[i * k + k - 1] = 0.5 * tr + cbar_bsum / (2.0 * ai * tau * tau) - dot(&b_sum, &p.matvec(bi)) / tau
            - 0.5 * ai * hidden;
    }
    out
}

// Dormand–Prince 5(4) tableau
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn lin(y: &[f64], terms: &[(f64, &[f64])], h: f64) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in terms {
        for (o, v) in out.iter_mut().zip(k.iter()) {
            *o += h * c * v;
        }
    }
    out
}

struct Step {
    y: Vec<f64>,
    dy: Vec<f64>,
    err: f64,
}

fn dp_step<F: FnMut(f64, &[f64]) -> Vec<f64>>(
    f: &mut F,
    s: f64,
    y: &[f64],
    k1: &[f64],
    h: f64,
    atol: f64,
    rtol: f64,
) -> Step {
    let k2 = f(s + h / 5.0, &lin(y, &[(A21, k1)], h));
    let k3 = f(s + 3.0 * h / 10.0, &lin(y, &[(A31, k1), (A32, &k2)], h));
    let k4 = f(s + 4.0 * h / 5.0, &lin(y, &[(A41, k1), (A42, &k2), (A43, &k3)], h));
    let k5 = f(
        s + 8.0 * h / 9.0,
        &lin(y, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)], h),
    );
    let k6 = f(
        s + h,
        &lin(y, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h),
    );
    let y5 = lin(y, &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], h);
    let k7 = f(s + h, &y5);
    let mut err = 0.0f64;
    for idx in 0..y.len() {
        let e = h * (E1 * k1[idx] + E3 * k3[idx] + E4 * k4[idx] + E5 * k5[idx] + E6 * k6[idx] + E7 * k7[idx]);
        let sc = atol + rtol * math::abs(y[idx]).max(math::abs(y5[idx]));
        let r = e / sc;
        err += r * r;
    }
    err = math::sqrt(err / y.len() as f64);
    Step { y: y5, dy: k7, err }
}

fn gamma_norm(state: &[f64], d: usize, investors: usize) -> f64 {
    let k = stride(d);
    (0..investors)
        .map(|i| math::sqrt(state[i * k..i * k + d * d].iter().map(|v| v * v).sum()))
        .fold(0.0, f64::max)
}

fn unsafe_state(state: &[f64], d: usize, investors: usize, cap: f64) -> bool {
    state.iter().any(|v| !v.is_finite()) || gamma_norm(state, d, investors) > cap
}

/// Integrates the system from time-to-maturity 0 to `maturity` with
/// initial data `(γ, β, α)(0) = (j, h, f)`.
pub fn riccati_integrate(
    market: &MarketConfig,
    endowments: &[EndowmentSpec],
    maturity: f64,
    opts: &RiccatiOptions,
) -> Result<RiccatiPath> {
    let d = market.dim_factor();
    let inv = market.num_investors();
    if endowments.len() != inv {
        return Err(Error::Dimension(alloc::format!(
            "{} endowments for {inv} investors",
            endowments.len()
        )));
    }
    if !(maturity > 0.0 && maturity <= 1.0) {
        return Err(Error::InvalidMarket("maturity T must lie in (0, 1]".into()));
    }
    let k = stride(d);
    let mut y0 = vec![0.0; inv * k];
    for (i, g) in endowments.iter().enumerate() {
        let (f, h, j) = g.quadratic_parts().ok_or(Error::NotQuadratic(i))?;
        if h.len() != d {
            return Err(Error::Dimension("endowment dimension differs from D".into()));
        }
        y0[i * k..i * k + d * d].copy_from_slice(j.as_slice());
        y0[i * k + d * d..i * k + d * d + d].copy_from_slice(h);
        y0[i * k + k - 1] = f;
    }
    let n = market.dim_assets();
    let a = market.risk_aversions().to_vec();
    let tau = market.tau_sigma();
    let vol = market.vol().clone();
    let mut evals = 0usize;
    let mut rhs = |s: f64, y: &[f64]| {
        evals += 1;
        let c = vol.at((maturity - s).max(0.0));
        let cbar = c.leading_columns(n);
        let p = cbar.matmul(&cbar.transpose());
        let q = c.outer_self();
        rhs_with(y, &a, tau, &c, &p, &q, n)
    };

    let h_max = maturity * opts.max_step_fraction;
    let mut s = 0.0;
    let mut y = y0;
    let mut dy = rhs(0.0, &y);
    let mut times = vec![0.0];
    let mut states = vec![y.clone()];
    let mut derivs = vec![dy.clone()];
    let mut stats = StepStats {
        min_step: f64::INFINITY,
        ..StepStats::default()
    };
    let mut h = h_max.min(1e-3 * maturity).max(1e-12);
    let h_floor = 1e-14 * maturity.max(1.0);
    let mut blow_up = None;
    while s < maturity {
        let h_try = h.min(maturity - s);
        let step = dp_step(&mut rhs, s, &y, &dy, h_try, opts.atol, opts.rtol);
        let bad = !step.err.is_finite() || unsafe_state(&step.y, d, inv, opts.blow_up_cap);
        if !bad && step.err <= 1.0 {
            s = if h_try == maturity - s { maturity } else { s + h_try };
            y = step.y;
            dy = step.dy;
            times.push(s);
            states.push(y.clone());
            derivs.push(dy.clone());
            stats.accepted += 1;
            stats.min_step = stats.min_step.min(h_try);
            stats.max_step = stats.max_step.max(h_try);
            let fac = if step.err == 0.0 {
                5.0
            } else {
                (0.9 * math::powf(step.err, -0.2)).clamp(0.2, 5.0)
            };
            h = (h_try * fac).min(h_max);
            continue;
        }
        stats.rejected += 1;
        if bad && h_try <= opts.blow_up_resolution {
            // Bisect the first unsafe step length from the last safe state.
            let (mut lo, mut hi) = (0.0, h_try);
            while hi - lo > opts.blow_up_resolution * 1e-3 {
                let mid = 0.5 * (lo + hi);
                let probe = dp_step(&mut rhs, s, &y, &dy, mid, opts.atol, opts.rtol);
                if unsafe_state(&probe.y, d, inv, opts.blow_up_cap) || !probe.err.is_finite() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            blow_up = Some(s + lo);
            break;
        }
        let fac = if bad {
            0.25
        } else {
            (0.9 * math::powf(step.err, -0.2)).clamp(0.2, 1.0)
        };
        h = h_try * fac;
        if h < h_floor {
            blow_up = Some(s);
            break;
        }
    }
    stats.rhs_evals = evals;
    let path = RiccatiPath {
        dim: d,
        investors: inv,
        maturity,
        times,
        states,
        derivs,
        blow_up,
        stats,
    };
    match path.blow_up {
        Some(t0) => Err(Error::RiccatiBlowUp {
            t0,
            horizon: maturity,
            path: alloc::boxed::Box::new(path),
        }),
        None => Ok(path),
    }
}

pub(crate) fn value_unchecked(path: &RiccatiPath, i: usize, s: f64, y: &[f64]) -> f64 {
    let st = path.state_at(s);
    let d = path.dim;
    let o = i * stride(d);
    let g = gamma_of(&st, d, i);
    st[o + stride(d) - 1] + dot(&st[o + d * d..o + d * d + d], y) + dot(y, &g.matvec(y))
}

pub(crate) fn gradient_unchecked(path: &RiccatiPath, i: usize, s: f64, y: &[f64]) -> Vec<f64> {
    let st = path.state_at(s);
    let d = path.dim;
    let o = i * stride(d);
    let g = gamma_of(&st, d, i).plus_transpose();
    let mut out = g.matvec(y);
    for (v, b) in out.iter_mut().zip(&st[o + d * d..o + d * d + d]) {
        *v += b;
    }
    out
}

/// `u^{(i)}(t,y) = α(T−t) + β(T−t)ᵀy + yᵀγ(T−t)y`
pub fn quadratic_value(path: &RiccatiPath, t: f64, y: &[f64], i: usize) -> Result<f64> {
    let s = path.check(t)?;
    Ok(value_unchecked(path, i, s, y))
}

/// `∂_y u^{(i)}(t,y) = β(T−t) + (γ + γᵀ)(T−t) y`
pub fn quadratic_gradient(path: &RiccatiPath, t: f64, y: &[f64], i: usize) -> Result<Vec<f64>> {
    let s = path.check(t)?;
    Ok(gradient_unchecked(path, i, s, y))
}

/// `λ̃(t,y) = (1/τ_Σ)·C̄(t)ᵀ·Σ_i (β^{(i)} + (γ^{(i)} + γ^{(i)ᵀ}) y)` at `T − t`.
pub fn quadratic_lambda(path: &RiccatiPath, market: &MarketConfig, t: f64, y: &[f64]) -> Result<Vec<f64>> {
    let s = path.check(t)?;
    let d = path.dim;
    let mut total = vec![0.0; d];
    for i in 0..path.investors {
        for (acc, v) in total.iter_mut().zip(gradient_unchecked(path, i, s, y)) {
            *acc += v;
        }
    }
    let q = market.vol_at(t).tr_matvec(&total);
    let tau = market.tau_sigma();
    Ok(q[..market.dim_assets()].iter().map(|v| v / tau).collect())
}

/// Equilibrium built from the quadratic value functions.
pub fn riccati_equilibrium(
    path: &RiccatiPath,
    market: &MarketConfig,
    endowments: &[EndowmentSpec],
) -> Result<Equilibrium> {
    path.check(0.0)?;
    Ok(Equilibrium::assemble(
        market,
        endowments,
        path.maturity,
        ValueSource::Quadratic(path.clone()),
    ))
}
