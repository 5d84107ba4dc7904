//! General-endowment equilibrium: the Picard map on gridded value
//! functions and the assembly of `(r, λ, Ĥ, ĉ₀)` from any value source.

mod field;
mod solve;

pub use field::{Extension, SolutionField};
pub use solve::{apply_pi, picard_solve, PicardOptions, PicardWorkspace};

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;
use crate::model::{EndowmentSpec, MarketConfig};
use crate::riccati::{self, RiccatiPath};

/// `λ = (1/τ_Σ)·C̄ᵀΣ_j p_j` and `f^{(i)}` for every investor, from the
/// volatility `c = C(t)` and gradients `grads[i·D..(i+1)·D]`.
///
/// `scratch` must hold at least `I·D + N` values.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lambda_and_sources(
    c: &Matrix,
    risk_aversions: &[f64],
    tau: f64,
    n: usize,
    grads: &[f64],
    lambda: &mut [f64],
    sources: Option<&mut [f64]>,
    scratch: &mut [f64],
) {
    let d = c.rows();
    let inv = risk_aversions.len();
    let (q, _) = scratch.split_at_mut(inv * d);
    for i in 0..inv {
        c.tr_matvec_into(&grads[i * d..(i + 1) * d], &mut q[i * d..(i + 1) * d]);
    }
    lambda.iter_mut().for_each(|l| *l = 0.0);
    for i in 0..inv {
        for k in 0..n {
            lambda[k] += q[i * d + k];
        }
    }
    lambda.iter_mut().for_each(|l| *l /= tau);
    if let Some(out) = sources {
        let l2: f64 = lambda.iter().map(|l| l * l).sum();
        for i in 0..inv {
            let a = risk_aversions[i];
            let qi = &q[i * d..(i + 1) * d];
            let cross: f64 = (0..n).map(|k| lambda[k] * qi[k]).sum();
            let hidden: f64 = qi[n..].iter().map(|v| v * v).sum();
            out[i] = l2 / (2.0 * a) - cross - 0.5 * a * hidden;
        }
    }
}

fn flatten(grads: &[Vec<f64>]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.iter().copied()).collect()
}

/// Market price of risk `(1/τ_Σ)·C̄(t)ᵀ·Σ_j ∂_y u^{(j)}`.
pub fn coupling_lambda(grads: &[Vec<f64>], market: &MarketConfig, t: f64) -> Vec<f64> {
    let c = market.vol_at(t);
    let n = market.dim_assets();
    let mut lambda = vec![0.0; n];
    let mut scratch = vec![0.0; grads.len() * c.rows() + n];
    lambda_and_sources(
        &c,
        market.risk_aversions(),
        market.tau_sigma(),
        n,
        &flatten(grads),
        &mut lambda,
        None,
        &mut scratch,
    );
    lambda
}

/// `f^{(i)} = |λ|²/(2a_i) − λᵀC̄ᵀp_i + (a_i/2)(|C̄ᵀp_i|² − |Cᵀp_i|²)`.
pub fn nonlinearity_f(i: usize, grads: &[Vec<f64>], market: &MarketConfig, t: f64) -> f64 {
    let c = market.vol_at(t);
    let n = market.dim_assets();
    let mut lambda = vec![0.0; n];
    let mut f = vec![0.0; grads.len()];
    let mut scratch = vec![0.0; grads.len() * c.rows() + n];
    lambda_and_sources(
        &c,
        market.risk_aversions(),
        market.tau_sigma(),
        n,
        &flatten(grads),
        &mut lambda,
        Some(&mut f),
        &mut scratch,
    );
    f[i]
}

/// `r = Σ_i (u^{(i)}(0,0) − g₀^{(i)}) / (τ_Σ T)`
pub fn equilibrium_rate(u_at_origin: &[f64], g0: &[f64], market: &MarketConfig, maturity: f64) -> f64 {
    let excess: f64 = u_at_origin.iter().zip(g0).map(|(u, g)| u - g).sum();
    excess / (market.tau_sigma() * maturity)
}

/// `Ĥ^{(i)} = e^{−r(T−t)}(λ/a_i − C̄(t)ᵀ∂_y u^{(i)})`
pub fn optimal_strategy(
    i: usize,
    t: f64,
    grad_i: &[f64],
    lambda: &[f64],
    r: f64,
    market: &MarketConfig,
    maturity: f64,
) -> Vec<f64> {
    let a = market.risk_aversion(i);
    let q = market.vol_at(t).tr_matvec(grad_i);
    let disc = math::exp(-r * (maturity - t));
    lambda
        .iter()
        .zip(&q)
        .map(|(l, qk)| disc * (l / a - qk))
        .collect()
}

/// Maximizer of `c ↦ −e^{−a(c+g₀)} − e^{a e^{rT} c − a u(0,0)}`:
/// `ĉ₀ = (u(0,0) − g₀ − rT/a) / (1 + e^{rT})`.
pub fn initial_consumption(i: usize, u_at_origin: f64, g0: f64, r: f64, market: &MarketConfig, maturity: f64) -> f64 {
    let a = market.risk_aversion(i);
    (u_at_origin - g0 - r * maturity / a) / (1.0 + math::exp(r * maturity))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Picard,
    Riccati,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Picard => "picard",
            Provenance::Riccati => "riccati",
        }
    }
}

/// Where the value functions `u^{(i)}` come from.
#[derive(Clone, Debug)]
pub enum ValueSource {
    Field(SolutionField),
    Quadratic(RiccatiPath),
}

/// `(r, λ, Ĥ, ĉ₀)` together with the value functions they were built from.
#[derive(Clone, Debug)]
pub struct Equilibrium {
    market: MarketConfig,
    endowments: Vec<EndowmentSpec>,
    maturity: f64,
    r: f64,
    c0: Vec<f64>,
    source: ValueSource,
}

impl Equilibrium {
    pub(crate) fn assemble(
        market: &MarketConfig,
        endowments: &[EndowmentSpec],
        maturity: f64,
        source: ValueSource,
    ) -> Self {
        let mut eq = Self {
            market: market.clone(),
            endowments: endowments.to_vec(),
            maturity,
            r: 0.0,
            c0: Vec::new(),
            source,
        };
        let origin = vec![0.0; market.dim_factor()];
        let u0: Vec<f64> = (0..endowments.len()).map(|i| eq.value(i, 0.0, &origin)).collect();
        let g0: Vec<f64> = endowments.iter().map(EndowmentSpec::initial).collect();
        eq.r = equilibrium_rate(&u0, &g0, market, maturity);
        eq.c0 = (0..endowments.len())
            .map(|i| initial_consumption(i, u0[i], g0[i], eq.r, market, maturity))
            .collect();
        eq
    }

    pub fn rate(&self) -> f64 {
        self.r
    }

    pub fn initial_consumptions(&self) -> &[f64] {
        &self.c0
    }

    pub fn provenance(&self) -> Provenance {
        match self.source {
            ValueSource::Field(_) => Provenance::Picard,
            ValueSource::Quadratic(_) => Provenance::Riccati,
        }
    }

    pub fn market(&self) -> &MarketConfig {
        &self.market
    }

    pub fn endowments(&self) -> &[EndowmentSpec] {
        &self.endowments
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn source(&self) -> &ValueSource {
        &self.source
    }

    pub fn num_investors(&self) -> usize {
        self.endowments.len()
    }

    /// `u^{(i)}(t, y)`
    pub fn value(&self, i: usize, t: f64, y: &[f64]) -> f64 {
        match &self.source {
            ValueSource::Field(f) => f.value_at(i, t, y),
            ValueSource::Quadratic(p) => riccati::value_unchecked(p, i, self.maturity - t, y),
        }
    }

    /// All gradients `∂_y u^{(i)}(t, y)` flattened investor-major.
    pub fn gradients(&self, t: f64, y: &[f64]) -> Vec<f64> {
        let d = self.market.dim_factor();
        let mut out = vec![0.0; d * self.num_investors()];
        match &self.source {
            ValueSource::Field(f) => f.grads_at(t, y, &mut out),
            ValueSource::Quadratic(p) => {
                for i in 0..self.num_investors() {
                    let g = riccati::gradient_unchecked(p, i, self.maturity - t, y);
                    out[i * d..(i + 1) * d].copy_from_slice(&g);
                }
            }
        }
        out
    }

    pub fn lambda(&self, t: f64, y: &[f64]) -> Vec<f64> {
        let g = self.gradients(t, y);
        self.lambda_from(t, &g)
    }

    fn lambda_from(&self, t: f64, grads: &[f64]) -> Vec<f64> {
        let n = self.market.dim_assets();
        let c = self.market.vol_at(t);
        let mut lambda = vec![0.0; n];
        let mut scratch = vec![0.0; grads.len() + n];
        lambda_and_sources(
            &c,
            self.market.risk_aversions(),
            self.market.tau_sigma(),
            n,
            grads,
            &mut lambda,
            None,
            &mut scratch,
        );
        lambda
    }

    /// `(λ, [Ĥ^{(1)}, …, Ĥ^{(I)}])` at `(t, y)`.
    pub fn lambda_and_strategies(&self, t: f64, y: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.market.dim_factor();
        let g = self.gradients(t, y);
        let lambda = self.lambda_from(t, &g);
        let h = (0..self.num_investors())
            .map(|i| optimal_strategy(i, t, &g[i * d..(i + 1) * d], &lambda, self.r, &self.market, self.maturity))
            .collect();
        (lambda, h)
    }

    pub fn strategy(&self, i: usize, t: f64, y: &[f64]) -> Vec<f64> {
        self.lambda_and_strategies(t, y).1.swap_remove(i)
    }

    /// `u^{(i)}(0, 0)` for every investor.
    pub fn u_at_origin(&self) -> Vec<f64> {
        let origin = vec![0.0; self.market.dim_factor()];
        (0..self.num_investors()).map(|i| self.value(i, 0.0, &origin)).collect()
    }

    /// `V^{(i)}(t, x, y) = −exp(−a_i(e^{r(T−t)}x + u^{(i)}(t,y)))`
    pub fn indirect_utility(&self, i: usize, t: f64, x: f64, y: &[f64]) -> f64 {
        let a = self.market.risk_aversion(i);
        -math::exp(-a * (math::exp(self.r * (self.maturity - t)) * x + self.value(i, t, y)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: Vec<f64>) -> MarketConfig {
        MarketConfig::scalar(a, 1.0, 0.5, 0.5).unwrap()
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(coupling_lambda(&[vec![0.0]], &scalar(vec![1.0]), 0.1), vec![0.0]);
        assert_relative_eq!(coupling_lambda(&[vec![2.0]], &scalar(vec![1.0]), 0.1)[0], 2.0);
        let m = scalar(vec![1.0, 1.0]);
        assert_relative_eq!(coupling_lambda(&[vec![3.0], vec![1.0]], &m, 0.1)[0], 2.0);
    }

    #[test]
    fn source_examples() {
        let m = scalar(vec![1.0]);
        assert_eq!(nonlinearity_f(0, &[vec![0.0]], &m, 0.0), 0.0);
        // complete single agent: −(a/2)|Cᵀp|²
        assert_relative_eq!(nonlinearity_f(0, &[vec![1.7]], &m, 0.0), -0.5 * 1.7 * 1.7, epsilon = 1e-15);
        let m3 = MarketConfig::scalar(vec![3.0], 1.0, 0.5, 0.5).unwrap();
        assert_relative_eq!(nonlinearity_f(0, &[vec![0.4]], &m3, 0.0), -1.5 * 0.16, epsilon = 1e-15);
        let m2 = scalar(vec![1.0, 1.0]);
        assert_relative_eq!(nonlinearity_f(0, &[vec![3.0], vec![1.0]], &m2, 0.0), -4.0, epsilon = 1e-15);
    }

    #[test]
    fn rate_examples() {
        let m = scalar(vec![1.0]);
        assert_eq!(equilibrium_rate(&[0.2, 0.3], &[0.2, 0.3], &scalar(vec![1.0, 2.0]), 0.5), 0.0);
        assert_relative_eq!(equilibrium_rate(&[0.3], &[0.1], &m, 0.5), 0.4, epsilon = 1e-15);
        let m2 = scalar(vec![2.0]);
        assert_relative_eq!(
            equilibrium_rate(&[0.3], &[0.1], &m2, 0.5),
            2.0 * equilibrium_rate(&[0.3], &[0.1], &m, 0.5),
            epsilon = 1e-15
        );
    }

    fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let a = hi - phi * (hi - lo);
            let b = lo + phi * (hi - lo);
            if f(a) > f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn consumption_matches_numeric_maximizer() {
        let m = scalar(vec![1.0]);
        assert_eq!(initial_consumption(0, 0.4, 0.4, 0.0, &m, 0.5), 0.0);
        assert_relative_eq!(initial_consumption(0, 1.0, 0.0, 0.0, &m, 0.5), 0.5, epsilon = 1e-15);
        for &(a, u, g0, r, t) in &[(1.0, 1.0, 0.0, 0.0, 0.5), (2.5, 0.3, -0.2, 0.7, 0.8), (0.5, -1.0, 0.4, -0.3, 1.0)] {
            let m = MarketConfig::scalar(vec![a], 1.0, t, 0.5).unwrap();
            let c = initial_consumption(0, u, g0, r, &m, t);
            let obj = |c: f64| -(-a * (c + g0)).exp() - (a * (r * t).exp() * c - a * u).exp();
            let num = golden_max(obj, -10.0, 10.0);
            assert_relative_eq!(c, num, epsilon = 1e-7);
        }
    }

    #[test]
    fn consumptions_clear_under_equilibrium_rate() {
        let m = MarketConfig::scalar(vec![1.0, 2.0, 0.5], 1.0, 0.7, 0.5).unwrap();
        let u0 = [0.4, -0.1, 0.25];
        let g0 = [0.1, 0.2, -0.3];
        let r = equilibrium_rate(&u0, &g0, &m, 0.7);
        let total: f64 = (0..3).map(|i| initial_consumption(i, u0[i], g0[i], r, &m, 0.7)).sum();
        assert!(total.abs() < 1e-12);
    }

    #[test]
    fn strategies_sum_to_zero_for_coupled_lambda() {
        let c = Matrix::from_rows(&[vec![1.0, 0.2, 0.0], vec![0.1, 0.9, 0.3], vec![0.0, 0.2, 1.1]]).unwrap();
        let m = MarketConfig::new(
            3,
            2,
            vec![1.0, 2.0, 4.0],
            crate::VolSchedule::constant(c),
            0.5,
            0.5,
            None,
        )
        .unwrap();
        let grads = vec![vec![0.3, -1.2, 0.5], vec![2.0, 0.1, -0.7], vec![-0.4, 0.8, 0.9]];
        let lambda = coupling_lambda(&grads, &m, 0.2);
        let mut total = vec![0.0; 2];
        for (i, g) in grads.iter().enumerate() {
            let h = optimal_strategy(i, 0.2, g, &lambda, 0.3, &m, 0.5);
            for k in 0..2 {
                total[k] += h[k];
            }
        }
        assert!(total.iter().all(|v| v.abs() < 1e-12));
    }
}
