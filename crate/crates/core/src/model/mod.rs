//! Market and endowment data model.

mod coords;
mod endowment;
pub mod holder;
mod vol;

pub use coords::{reduce_coordinates, RawFactorSpec, ReducedModel};
pub use endowment::{example_big_f, example_f, example_f_prime, AnalyticFamily, EndowmentKind, EndowmentSpec, Terminal};
pub use holder::{
    holder_norm_estimate, parabolic_alpha_norm, t0_scaling_report, GridBox, HolderOrder, HolderTarget,
    ParabolicGrid,
};
pub use vol::VolSchedule;

use alloc::format;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::{Error, Result};

/// Number of equally spaced times used to check ellipticity of `C(t)C(t)ᵀ`.
const ELLIPTICITY_SAMPLES: usize = 257;

/// Dimensions, risk aversions and volatility of the economy.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketConfig {
    dim_factor: usize,
    dim_assets: usize,
    risk_aversions: Vec<f64>,
    vol: VolSchedule,
    maturity: f64,
    holder_alpha: f64,
    delta_lower: f64,
    delta_upper: f64,
}

impl MarketConfig {
    /// Validates and builds a market. When `ellipticity` is `None` the bounds
    /// are taken from the sampled extreme eigenvalues of `CCᵀ` widened by 1%.
    pub fn new(
        dim_factor: usize,
        dim_assets: usize,
        risk_aversions: Vec<f64>,
        vol: VolSchedule,
        maturity: f64,
        holder_alpha: f64,
        ellipticity: Option<(f64, f64)>,
    ) -> Result<Self> {
        if dim_factor == 0 || dim_assets == 0 {
            return Err(Error::InvalidMarket(
                "dimensions D and N must be positive".into(),
            ));
        }
        if dim_assets > dim_factor {
            return Err(Error::InvalidMarket(format!(
                "N ≤ D required (dim_assets = {dim_assets} > dim_factor = {dim_factor})"
            )));
        }
        if risk_aversions.is_empty() {
            return Err(Error::InvalidMarket("at least one investor required".into()));
        }
        if let Some(a) = risk_aversions.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidMarket(format!(
                "risk aversions must be positive (got {a})"
            )));
        }
        if !(maturity > 0.0 && maturity <= 1.0) {
            return Err(Error::InvalidMarket(format!(
                "maturity T must lie in (0, 1] (got {maturity})"
            )));
        }
        if !(holder_alpha > 0.0 && holder_alpha < 1.0) {
            return Err(Error::InvalidMarket(format!(
                "Hölder exponent α must lie in (0, 1) (got {holder_alpha})"
            )));
        }
        if vol.dim() != dim_factor {
            return Err(Error::InvalidMarket(format!(
                "volatility schedule is {0}×{0}, expected {dim_factor}×{dim_factor}",
                vol.dim()
            )));
        }
        let (lo, hi) = vol.sampled_eigen_range(ELLIPTICITY_SAMPLES);
        let (delta_lower, delta_upper) = match ellipticity {
            Some((l, u)) => {
                if !(l > 0.0 && l < u) {
                    return Err(Error::InvalidMarket(format!(
                        "ellipticity bounds need 0 < δ_lower < δ_upper (got {l}, {u})"
                    )));
                }
                (l, u)
            }
            None => (0.99 * lo, 1.01 * hi),
        };
        if !(lo > 0.0) || lo < delta_lower || hi > delta_upper {
            let (t, ev) = vol.worst_ellipticity_sample(ELLIPTICITY_SAMPLES, delta_lower, delta_upper);
            return Err(Error::EllipticityViolated {
                t,
                eigenvalue: ev,
                lower: delta_lower,
                upper: delta_upper,
            });
        }
        Ok(Self {
            dim_factor,
            dim_assets,
            risk_aversions,
            vol,
            maturity,
            holder_alpha,
            delta_lower,
            delta_upper,
        })
    }

    /// The one-factor complete market with `C ≡ c`.
    pub fn scalar(risk_aversions: Vec<f64>, c: f64, maturity: f64, alpha: f64) -> Result<Self> {
        Self::new(
            1,
            1,
            risk_aversions,
            VolSchedule::constant(Matrix::from_diagonal(&[c])),
            maturity,
            alpha,
            None,
        )
    }

    pub fn dim_factor(&self) -> usize {
        self.dim_factor
    }

    pub fn dim_assets(&self) -> usize {
        self.dim_assets
    }

    pub fn num_investors(&self) -> usize {
        self.risk_aversions.len()
    }

    pub fn risk_aversions(&self) -> &[f64] {
        &self.risk_aversions
    }

    pub fn risk_aversion(&self, i: usize) -> f64 {
        self.risk_aversions[i]
    }

    pub fn vol(&self) -> &VolSchedule {
        &self.vol
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn holder_alpha(&self) -> f64 {
        self.holder_alpha
    }

    /// `(δ_lower, δ_upper)`
    pub fn ellipticity(&self) -> (f64, f64) {
        (self.delta_lower, self.delta_upper)
    }

    /// Aggregate risk tolerance `τ_Σ = Σ_i 1/a_i`.
    pub fn tau_sigma(&self) -> f64 {
        self.risk_aversions.iter().map(|a| 1.0 / a).sum()
    }

    pub fn vol_at(&self, t: f64) -> Matrix {
        self.vol.at(t)
    }

    /// Same market with different risk aversions (used by homogeneity checks).
    pub fn with_risk_aversions(&self, risk_aversions: Vec<f64>) -> Result<Self> {
        Self::new(
            self.dim_factor,
            self.dim_assets,
            risk_aversions,
            self.vol.clone(),
            self.maturity,
            self.holder_alpha,
            Some((self.delta_lower, self.delta_upper)),
        )
    }

    pub fn with_maturity(&self, maturity: f64) -> Result<Self> {
        let mut m = self.clone();
        if !(maturity > 0.0 && maturity <= 1.0) {
            return Err(Error::InvalidMarket(format!(
                "maturity T must lie in (0, 1] (got {maturity})"
            )));
        }
        m.maturity = maturity;
        Ok(m)
    }

    /// Default half-width of the diagnostic box, `4·sqrt(δ_upper·T)`.
    pub fn diagnostic_half_width(&self) -> f64 {
        4.0 * crate::math::sqrt(self.delta_upper * self.maturity)
    }
}
