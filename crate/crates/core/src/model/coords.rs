use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{EndowmentSpec, VolSchedule};
use crate::linalg::Matrix;
use crate::math;
use crate::{Error, Result};

/// Number of fixed RK4 steps on `[0, T]`.
const PHI_STEPS: usize = 1024;
/// `|det Φ(t)|` below this is treated as singular.
const SINGULAR_DET: f64 = 1e-12;

type VecFn = Box<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
type MatFn = Box<dyn Fn(f64) -> Matrix + Send + Sync>;

/// Ornstein–Uhlenbeck factor `dY = (A + BY)dt + C dW`, `Y(0) = Y₀`.
pub struct RawFactorSpec {
    pub drift: VecFn,
    pub mean_reversion: MatFn,
    pub vol: VolSchedule,
    pub y0: Vec<f64>,
}

impl RawFactorSpec {
    pub fn driftless(vol: VolSchedule) -> Self {
        let d = vol.dim();
        Self {
            drift: Box::new(move |_| vec![0.0; d]),
            mean_reversion: Box::new(move |_| Matrix::zeros(d, d)),
            vol,
            y0: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.vol.dim()
    }
}

/// Output of [`reduce_coordinates`].
#[derive(Clone, Debug)]
pub struct ReducedModel {
    pub vol: VolSchedule,
    pub endowments: Vec<EndowmentSpec>,
    /// `Φ(T)`
    pub phi_maturity: Matrix,
    /// `Y₀ + ∫₀ᵀ Φ(s)⁻¹A(s) ds`
    pub shift: Vec<f64>,
    /// `min_t |det Φ(t)|` over the integration grid.
    pub min_abs_det: f64,
}

struct PhiState {
    phi: Matrix,
    psi: Matrix,
    q: Vec<f64>,
}

fn phi_rhs(raw: &RawFactorSpec, t: f64, s: &PhiState) -> PhiState {
    let b = (raw.mean_reversion)(t);
    let a = (raw.drift)(t);
    PhiState {
        phi: b.matmul(&s.phi),
        psi: s.psi.matmul(&b).scale(-1.0),
        q: s.psi.matvec(&a),
    }
}

fn axpy(s: &PhiState, k: &PhiState, h: f64) -> PhiState {
    PhiState {
        phi: s.phi.add(&k.phi.scale(h)),
        psi: s.psi.add(&k.psi.scale(h)),
        q: s.q.iter().zip(&k.q).map(|(x, y)| x + h * y).collect(),
    }
}

/// Transforms the OU factor into the driftless form `Ỹ = ∫C̃ dW` with
/// `C̃ = Φ⁻¹C` and endowments `g̃(y) = g(Φ(T)(Y₀ + ∫₀ᵀΦ⁻¹A + y))`.
///
/// `Φ` and `Φ⁻¹` are integrated jointly with classical RK4; `C̃` is returned
/// as the piecewise-linear interpolant on the integration grid. When `B`
/// vanishes on that grid, `C` is passed through unchanged.
pub fn reduce_coordinates(
    raw: &RawFactorSpec,
    endowments: &[EndowmentSpec],
    maturity: f64,
    ellipticity: Option<(f64, f64)>,
) -> Result<ReducedModel> {
    let d = raw.dim();
    if raw.y0.len() != d {
        return Err(Error::Dimension("Y₀ must have length D".into()));
    }
    if !(maturity > 0.0 && maturity <= 1.0) {
        return Err(Error::InvalidMarket("maturity T must lie in (0, 1]".into()));
    }
    if endowments.iter().any(|g| super::Terminal::dim(g) != d) {
        return Err(Error::Dimension("endowment dimension differs from D".into()));
    }
    let h = maturity / PHI_STEPS as f64;
    let mut state = PhiState {
        phi: Matrix::identity(d),
        psi: Matrix::identity(d),
        q: vec![0.0; d],
    };
    let mut times = Vec::with_capacity(PHI_STEPS + 1);
    let mut psis = Vec::with_capacity(PHI_STEPS + 1);
    let mut b_zero = true;
    let mut min_abs_det = 1.0f64;
    for k in 0..=PHI_STEPS {
        let t = k as f64 * h;
        times.push(t);
        psis.push(state.psi.clone());
        let det = state.phi.determinant();
        if !det.is_finite() || math::abs(det) < SINGULAR_DET {
            return Err(Error::FundamentalMatrixSingular { t, det });
        }
        min_abs_det = min_abs_det.min(math::abs(det));
        if k == PHI_STEPS {
            break;
        }
        if (raw.mean_reversion)(t).max_abs() != 0.0 || (raw.mean_reversion)(t + 0.5 * h).max_abs() != 0.0 {
            b_zero = false;
        }
        let k1 = phi_rhs(raw, t, &state);
        let k2 = phi_rhs(raw, t + 0.5 * h, &axpy(&state, &k1, 0.5 * h));
        let k3 = phi_rhs(raw, t + 0.5 * h, &axpy(&state, &k2, 0.5 * h));
        let k4 = phi_rhs(raw, t + h, &axpy(&state, &k3, h));
        let mut next = axpy(&state, &k1, h / 6.0);
        next = axpy(&next, &k2, h / 3.0);
        next = axpy(&next, &k3, h / 3.0);
        next = axpy(&next, &k4, h / 6.0);
        if !(next.phi.is_finite() && next.psi.is_finite()) {
            return Err(Error::NonFinite {
                context: "fundamental matrix integration",
            });
        }
        state = next;
    }
    let vol = if b_zero {
        raw.vol.clone()
    } else {
        let samples: Vec<Matrix> = times
            .iter()
            .zip(&psis)
            .map(|(&t, psi)| psi.matmul(&raw.vol.at(t)))
            .collect();
        VolSchedule::piecewise_linear(&times, &samples)?
    };
    if let Some((lo, hi)) = ellipticity {
        for (&t, _) in times.iter().zip(&psis) {
            let ev = vol.at(t).outer_self().symmetric_eigenvalues();
            for e in [ev[0], ev[d - 1]] {
                if e < lo || e > hi {
                    return Err(Error::EllipticityViolated {
                        t,
                        eigenvalue: e,
                        lower: lo,
                        upper: hi,
                    });
                }
            }
        }
    } else {
        let (lo, _) = vol.sampled_eigen_range(PHI_STEPS + 1);
        if !(lo > 0.0) {
            return Err(Error::EllipticityViolated {
                t: f64::NAN,
                eigenvalue: lo,
                lower: 0.0,
                upper: f64::INFINITY,
            });
        }
    }
    let shift: Vec<f64> = raw.y0.iter().zip(&state.q).map(|(a, b)| a + b).collect();
    let identity = state.phi.sub(&Matrix::identity(d)).max_abs() == 0.0 && shift.iter().all(|x| *x == 0.0);
    let endowments = if identity {
        endowments.to_vec()
    } else {
        endowments
            .iter()
            .map(|g| EndowmentSpec::composed(g, state.phi.clone(), shift.clone()))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(ReducedModel {
        vol,
        endowments,
        phi_maturity: state.phi,
        shift,
        min_abs_det,
    })
}
