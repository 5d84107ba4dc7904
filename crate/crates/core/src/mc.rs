//! Monte Carlo checks of a computed equilibrium: path law of `Y`,
//! martingality of the indirect utility, clearing along paths and local
//! optimality of the strategies.
//!
//! Every path (or antithetic pair) draws from its own ChaCha stream keyed by
//! `(seed, path)`, and all reductions run in path order, so reports do not
//! depend on the number of worker threads.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::kernel::CovarianceWindow;
use crate::linalg::Matrix;
use crate::math;
use crate::model::{MarketConfig, Terminal};
use crate::picard::Equilibrium;
use crate::{par_map, Error, Result};

/// Strategy offsets used by [`optimality_probe`] when none are given.
pub const PROBE_EPSILONS: [f64; 4] = [-0.1, -0.05, 0.05, 0.1];

/// Simulated factor paths with the Brownian increments that drove them.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle {
    pub num_paths: usize,
    pub num_steps: usize,
    pub times: Vec<f64>,
    pub seed: u64,
    pub antithetic: bool,
    dim: usize,
    paths: Vec<f64>,
    dw: Vec<f64>,
}

impl PathBundle {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `Y` of path `p` at step `k`.
    pub fn y(&self, p: usize, k: usize) -> &[f64] {
        let o = (p * (self.num_steps + 1) + k) * self.dim;
        &self.paths[o..o + self.dim]
    }

    /// `W_{t_{k+1}} − W_{t_k}` of path `p`.
    pub fn dw(&self, p: usize, k: usize) -> &[f64] {
        let o = (p * self.num_steps + k) * self.dim;
        &self.dw[o..o + self.dim]
    }

    /// Number of independent samples: pairs when antithetic.
    pub fn samples(&self) -> usize {
        if self.antithetic {
            self.num_paths / 2
        } else {
            self.num_paths
        }
    }

    fn group(&self, s: usize) -> core::ops::Range<usize> {
        if self.antithetic {
            2 * s..2 * s + 2
        } else {
            s..s + 1
        }
    }
}

/// Exact joint simulation of `(W, Y)` on a uniform grid.
///
/// Over each step `ΔY = M̄ΔW + Rξ` with `M̄` the mean of `C` on the step and
/// `RRᵀ = Σ(t_k, t_{k+1}) − h M̄M̄ᵀ`, so `ΔY ~ N(0, Σ)` without Euler bias.
/// With `antithetic` the path count is rounded up to an even number and
/// path `2m+1` mirrors path `2m`.
pub fn simulate_paths(
    market: &MarketConfig,
    maturity: f64,
    num_paths: usize,
    num_steps: usize,
    seed: u64,
    antithetic: bool,
) -> Result<PathBundle> {
    if num_paths == 0 || num_steps == 0 {
        return Err(Error::Dimension("need at least one path and one step".into()));
    }
    let d = market.dim_factor();
    let vol = market.vol();
    let h = maturity / num_steps as f64;
    let times: Vec<f64> = (0..=num_steps).map(|k| maturity * k as f64 / num_steps as f64).collect();
    let mut means = Vec::with_capacity(num_steps);
    let mut resid = Vec::with_capacity(num_steps);
    for k in 0..num_steps {
        let win = CovarianceWindow::from_vol(vol, times[k], times[k + 1])?;
        let mbar = vol.integrate(times[k], times[k + 1]).scale(1.0 / h);
        let cond = win.sigma.sub(&mbar.outer_self().scale(h)).symmetrized();
        resid.push(cond.cholesky_psd(1e-10));
        means.push(mbar);
    }
    let num_paths = if antithetic { num_paths + num_paths % 2 } else { num_paths };
    let groups = if antithetic { num_paths / 2 } else { num_paths };
    let per_group = par_map(groups, |g| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(g as u64);
        let mut z = vec![0.0; 2 * d];
        let mut ys = vec![0.0; (num_steps + 1) * d];
        let mut dws = vec![0.0; num_steps * d];
        let mut dy = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        for k in 0..num_steps {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let dw = &mut dws[k * d..(k + 1) * d];
            for a in 0..d {
                dw[a] = math::sqrt(h) * z[a];
            }
            means[k].matvec_into(dw, &mut dy);
            resid[k].matvec_into(&z[d..], &mut tmp);
            for a in 0..d {
                ys[(k + 1) * d + a] = ys[k * d + a] + dy[a] + tmp[a];
            }
        }
        (ys, dws)
    });
    let mut paths = Vec::with_capacity(num_paths * (num_steps + 1) * d);
    let mut dw = Vec::with_capacity(num_paths * num_steps * d);
    for (ys, dws) in per_group {
        paths.extend_from_slice(&ys);
        dw.extend_from_slice(&dws);
        if antithetic {
            paths.extend(ys.iter().map(|v| -v));
            dw.extend(dws.iter().map(|v| -v));
        }
    }
    Ok(PathBundle {
        num_paths,
        num_steps,
        times,
        seed,
        antithetic,
        dim: d,
        paths,
        dw,
    })
}

/// Largest `|z|` of the sample second moments of the step-`k` increments
/// of `Y` against `Σ(t_k, t_{k+1})`, with Wishart standard deviations.
pub fn increment_covariance_zscore(bundle: &PathBundle, market: &MarketConfig, k: usize) -> Result<f64> {
    let d = bundle.dim;
    let sigma = CovarianceWindow::from_vol(market.vol(), bundle.times[k], bundle.times[k + 1])?.sigma;
    let n = bundle.num_paths as f64;
    let mut worst = 0.0f64;
    for a in 0..d {
        for b in a..d {
            let mut acc = 0.0;
            for p in 0..bundle.num_paths {
                let (y0, y1) = (bundle.y(p, k), bundle.y(p, k + 1));
                acc += (y1[a] - y0[a]) * (y1[b] - y0[b]);
            }
            let est = acc / n;
            let sd = math::sqrt((sigma[(a, b)] * sigma[(a, b)] + sigma[(a, a)] * sigma[(b, b)]) / n);
            worst = worst.max(math::abs(est - sigma[(a, b)]) / sd);
        }
    }
    Ok(worst)
}

/// One output row of a statistical check.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationRecord {
    pub check: String,
    pub investor: Option<usize>,
    pub param: String,
    pub horizon: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub samples: usize,
}

/// Sample mean and its standard error.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, math::sqrt(var / n as f64))
}

fn t_stat(mean: f64, se: f64) -> f64 {
    if se == 0.0 {
        if mean == 0.0 {
            0.0
        } else {
            f64::INFINITY * mean.signum()
        }
    } else {
        mean / se
    }
}

fn record(check: &str, investor: Option<usize>, param: String, horizon: f64, values: &[f64]) -> ValidationRecord {
    let (estimate, std_error) = mean_and_std_error(values);
    ValidationRecord {
        check: check.into(),
        investor,
        param,
        horizon,
        estimate,
        std_error,
        t_stat: t_stat(estimate, std_error),
        samples: values.len(),
    }
}

/// Wealth of investor `i` along path `p` under `Ĥ^{(i)}`, plus the wealth
/// sensitivities `Z_j` to each offset `η_j`:
/// `X_{k+1} = e^{rh}X_k + Hᵀ(λh + ΔW̄)`, `X_0 = −ĉ₀`.
fn wealth_along(eq: &Equilibrium, i: usize, bundle: &PathBundle, p: usize, offsets: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = eq.market().dim_assets();
    let r = eq.rate();
    let mut x = vec![0.0; bundle.num_steps + 1];
    x[0] = -eq.initial_consumptions()[i];
    let mut z = vec![0.0; offsets.len()];
    for k in 0..bundle.num_steps {
        let t = bundle.times[k];
        let h = bundle.times[k + 1] - t;
        let (lambda, strategies) = eq.lambda_and_strategies(t, bundle.y(p, k));
        let dw = bundle.dw(p, k);
        let gain = |v: &[f64]| (0..n).map(|a| v[a] * (lambda[a] * h + dw[a])).sum::<f64>();
        let grow = math::exp(r * h);
        x[k + 1] = grow * x[k] + gain(&strategies[i]);
        for (zj, eta) in z.iter_mut().zip(offsets) {
            *zj = grow * *zj + gain(eta);
        }
    }
    (x, z)
}

/// Report of [`martingale_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleReport {
    pub rows: Vec<ValidationRecord>,
    /// Samples excluded because a non-finite value appeared along them.
    pub flagged: usize,
}

impl MartingaleReport {
    pub fn max_abs_t(&self) -> f64 {
        self.rows.iter().map(|r| math::abs(r.t_stat)).fold(0.0, f64::max)
    }
}

/// `E[V_t − V_0]` for `V = V^{(i)}(t, X̂_t, Y_t)` at a quarter, half,
/// three quarters and all of the horizon. At maturity `V_T` uses the
/// terminal utility `−exp(−a(X_T + g(Y_T)))`.
pub fn martingale_check(eq: &Equilibrium, i: usize, bundle: &PathBundle) -> MartingaleReport {
    let s = bundle.num_steps;
    let mut horizons: Vec<usize> = [s / 4, s / 2, 3 * s / 4, s].into_iter().filter(|&k| k > 0).collect();
    horizons.dedup();
    let a = eq.market().risk_aversion(i);
    let g = &eq.endowments()[i];
    let per_sample = par_map(bundle.samples(), |smp| {
        let mut acc = vec![0.0; horizons.len()];
        let members = bundle.group(smp);
        let m = members.len() as f64;
        for p in members {
            let (x, _) = wealth_along(eq, i, bundle, p, &[]);
            let v0 = eq.indirect_utility(i, 0.0, x[0], bundle.y(p, 0));
            for (slot, &k) in acc.iter_mut().zip(&horizons) {
                let vk = if k == s {
                    -math::exp(-a * (x[k] + g.value(bundle.y(p, k))))
                } else {
                    eq.indirect_utility(i, bundle.times[k], x[k], bundle.y(p, k))
                };
                *slot += (vk - v0) / m;
            }
        }
        acc
    });
    let kept: Vec<&Vec<f64>> = per_sample.iter().filter(|v| v.iter().all(|x| x.is_finite())).collect();
    let flagged = per_sample.len() - kept.len();
    let rows = horizons
        .iter()
        .enumerate()
        .map(|(h, &k)| {
            let vals: Vec<f64> = kept.iter().map(|v| v[h]).collect();
            record("martingale", Some(i), format!("step={k}"), bundle.times[k], &vals)
        })
        .collect();
    MartingaleReport { rows, flagged }
}

/// `(max |Σ_i Ĥ^{(i)}|, |Σ_i ĉ₀^{(i)}|)` over every sampled `(t_k, path)`.
pub fn clearing_check(eq: &Equilibrium, bundle: &PathBundle) -> (f64, f64) {
    let per_path = par_map(bundle.num_paths, |p| {
        let mut worst = 0.0f64;
        for k in 0..bundle.num_steps {
            let (_, hs) = eq.lambda_and_strategies(bundle.times[k], bundle.y(p, k));
            let n = hs[0].len();
            let norm = math::sqrt(
                (0..n)
                    .map(|a| {
                        let s: f64 = hs.iter().map(|h| h[a]).sum();
                        s * s
                    })
                    .sum(),
            );
            worst = worst.max(norm);
        }
        worst
    });
    let h = per_path.into_iter().fold(0.0, f64::max);
    let c: f64 = eq.initial_consumptions().iter().sum();
    (h, math::abs(c))
}

/// `E[U_i(X^{Ĥ+εη}_T + g(Y_T))] − E[U_i(X^{Ĥ}_T + g(Y_T))]` for every
/// constant offset `η` and every `ε`, with common random numbers.
pub fn optimality_probe(
    eq: &Equilibrium,
    i: usize,
    bundle: &PathBundle,
    offsets: &[Vec<f64>],
    epsilons: &[f64],
) -> Vec<ValidationRecord> {
    let s = bundle.num_steps;
    let a = eq.market().risk_aversion(i);
    let g = &eq.endowments()[i];
    let per_sample = par_map(bundle.samples(), |smp| {
        let mut acc = vec![0.0; offsets.len() * epsilons.len()];
        let members = bundle.group(smp);
        let m = members.len() as f64;
        for p in members {
            let (x, z) = wealth_along(eq, i, bundle, p, offsets);
            let gt = g.value(bundle.y(p, s));
            let base = -math::exp(-a * (x[s] + gt));
            for (j, zj) in z.iter().enumerate() {
                for (e, eps) in epsilons.iter().enumerate() {
                    let pert = -math::exp(-a * (x[s] + eps * zj + gt));
                    acc[j * epsilons.len() + e] += (pert - base) / m;
                }
            }
        }
        acc
    });
    let kept: Vec<&Vec<f64>> = per_sample.iter().filter(|v| v.iter().all(|x| x.is_finite())).collect();
    let mut rows = Vec::with_capacity(offsets.len() * epsilons.len());
    for j in 0..offsets.len() {
        for (e, eps) in epsilons.iter().enumerate() {
            let vals: Vec<f64> = kept.iter().map(|v| v[j * epsilons.len() + e]).collect();
            rows.push(record("optimality", Some(i), format!("eta={j};eps={eps}"), eq.maturity(), &vals));
        }
    }
    rows
}

/// Sample mean and covariance of `Y` at step `k`.
pub fn sample_moments(bundle: &PathBundle, k: usize) -> (Vec<f64>, Matrix) {
    let d = bundle.dim;
    let n = bundle.num_paths as f64;
    let mut mean = vec![0.0; d];
    for p in 0..bundle.num_paths {
        for (m, v) in mean.iter_mut().zip(bundle.y(p, k)) {
            *m += v / n;
        }
    }
    let mut data = vec![0.0; d * d];
    for p in 0..bundle.num_paths {
        let y = bundle.y(p, k);
        for a in 0..d {
            for b in 0..d {
                data[a * d + b] += (y[a] - mean[a]) * (y[b] - mean[b]) / (n - 1.0);
            }
        }
    }
    (mean, Matrix::from_row_major(d, d, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EndowmentSpec, VolSchedule};
    use crate::riccati::{riccati_equilibrium, riccati_integrate, RiccatiOptions};

    fn quad_eq(endow: Vec<EndowmentSpec>, a: Vec<f64>, t: f64) -> Equilibrium {
        let m = MarketConfig::scalar(a, 1.0, t, 0.5).unwrap();
        let path = riccati_integrate(&m, &endow, t, &RiccatiOptions::default()).unwrap();
        riccati_equilibrium(&path, &m, &endow).unwrap()
    }

    #[test]
    fn one_step_identity_moments() {
        let m = MarketConfig::new(2, 2, vec![1.0], VolSchedule::constant(Matrix::identity(2)), 1.0, 0.5, None).unwrap();
        let b = simulate_paths(&m, 1.0, 100_000, 1, 7, false).unwrap();
        let (mean, cov) = sample_moments(&b, 1);
        let se = (1.0f64 / 1e5).sqrt();
        for a in 0..2 {
            assert!(mean[a].abs() < 3.0 * se);
            assert!((cov[(a, a)] - 1.0).abs() < 3.0 * (2.0f64 / 1e5).sqrt());
        }
        assert!(cov[(0, 1)].abs() < 3.0 * se);
        assert_eq!(b.y(5, 0), &[0.0, 0.0]);
    }

    #[test]
    fn deterministic_given_seed() {
        let m = MarketConfig::scalar(vec![1.0], 1.0, 0.5, 0.5).unwrap();
        let a = simulate_paths(&m, 0.5, 64, 8, 11, true).unwrap();
        let b = simulate_paths(&m, 0.5, 64, 8, 11, true).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&m, 0.5, 64, 8, 12, true).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.y(1, 3)[0], -a.y(0, 3)[0]);
    }

    #[test]
    fn diagonal_vol_variance_ratio() {
        let m = MarketConfig::new(2, 2, vec![1.0], VolSchedule::constant(Matrix::from_diagonal(&[1.0, 2.0])), 1.0, 0.5, None)
            .unwrap();
        let b = simulate_paths(&m, 1.0, 40_000, 1, 3, false).unwrap();
        let (_, cov) = sample_moments(&b, 1);
        let ratio = cov[(1, 1)] / cov[(0, 0)];
        assert!((ratio - 4.0).abs() < 0.15, "{ratio}");
    }

    #[test]
    fn increments_match_covariance_windows() {
        let vol = VolSchedule::linear(
            Matrix::from_rows(&[vec![1.0, 0.2], vec![0.0, 0.8]]).unwrap(),
            Matrix::from_rows(&[vec![0.3, 0.0], vec![0.1, 0.2]]).unwrap(),
        );
        let m = MarketConfig::new(2, 1, vec![1.0], vol, 1.0, 0.5, None).unwrap();
        let b = simulate_paths(&m, 1.0, 20_000, 4, 5, false).unwrap();
        for k in 0..4 {
            assert!(increment_covariance_zscore(&b, &m, k).unwrap() < 4.0);
        }
    }

    #[test]
    fn zero_endowments_keep_v_constant() {
        let eq = quad_eq(vec![EndowmentSpec::zero(1)], vec![1.0], 0.5);
        let b = simulate_paths(eq.market(), 0.5, 200, 16, 1, false).unwrap();
        let rep = martingale_check(&eq, 0, &b);
        assert_eq!(rep.flagged, 0);
        for r in &rep.rows {
            assert_eq!(r.estimate, 0.0);
            assert_eq!(r.t_stat, 0.0);
        }
        let probe = optimality_probe(&eq, 0, &b, &[vec![1.0]], &PROBE_EPSILONS);
        for r in &probe {
            assert!(r.estimate <= 2.0 * r.std_error, "{r:?}");
        }
        let zero = optimality_probe(&eq, 0, &b, &[vec![1.0]], &[0.0]);
        assert_eq!(zero[0].estimate, 0.0);
    }

    #[test]
    fn single_agent_clears_exactly() {
        let g = EndowmentSpec::quadratic(0.1, vec![0.5], Matrix::from_diagonal(&[0.2]), 0.0).unwrap();
        let eq = quad_eq(vec![g], vec![1.0], 0.5);
        let b = simulate_paths(eq.market(), 0.5, 50, 8, 2, false).unwrap();
        assert_eq!(clearing_check(&eq, &b), (0.0, 0.0));
    }

    #[test]
    fn quadratic_two_agent_martingale_and_clearing() {
        let g1 = EndowmentSpec::quadratic(0.1, vec![0.5], Matrix::from_diagonal(&[0.2]), 0.3).unwrap();
        let g2 = EndowmentSpec::quadratic(-0.2, vec![-0.1], Matrix::from_diagonal(&[-0.1]), 0.0).unwrap();
        let eq = quad_eq(vec![g1, g2], vec![1.0, 2.0], 0.5);
        let b = simulate_paths(eq.market(), 0.5, 4000, 32, 9, true).unwrap();
        let (h, c) = clearing_check(&eq, &b);
        assert!(h < 1e-10 && c < 1e-10, "{h} {c}");
        for i in 0..2 {
            let rep = martingale_check(&eq, i, &b);
            assert!(rep.max_abs_t() < 4.0, "{rep:?}");
        }
    }

    #[test]
    fn mean_and_error_examples() {
        let (m, se) = mean_and_std_error(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(t_stat(0.0, 0.0), 0.0);
    }
}
