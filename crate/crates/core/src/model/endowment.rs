use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{dot, Matrix};
use crate::math;
use crate::{Error, Result};

/// A terminal payoff `g: R^D → R` with its first and (optionally) second
/// derivatives.
pub trait Terminal {
    fn dim(&self) -> usize;

    fn value(&self, y: &[f64]) -> f64;

    fn gradient(&self, y: &[f64], out: &mut [f64]);

    /// Writes the Hessian into `out` and returns `true`, or returns `false`
    /// when second derivatives are unavailable.
    fn hessian(&self, _y: &[f64], _out: &mut Matrix) -> bool {
        false
    }
}

/// Smooth closed-form endowment families with exact derivatives.
#[derive(Clone, Debug, PartialEq)]
pub enum AnalyticFamily {
    /// `A·cos(wᵀy + φ)`
    Cosine {
        amplitude: f64,
        wave: Vec<f64>,
        phase: f64,
    },
    /// `A·exp(−|y − c|² / (2s²))`
    GaussianBump {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum EndowmentKind {
    /// `f + hᵀy + yᵀjy` with `j` stored symmetric.
    ///
    /// The coefficient `j` is the Riccati initial condition `γ(0)`, so a
    /// second-order Taylor polynomial enters with `j = ½∂²g(0)`.
    Quadratic { f: f64, h: Vec<f64>, j: Matrix },
    /// The rate-optimality example `F(y_1)` with Hölder exponent `alpha`,
    /// acting on the first factor coordinate.
    ExampleF { alpha: f64 },
    Analytic(AnalyticFamily),
    /// `inner(map·(offset + y))`, produced by the coordinate reduction.
    Composed {
        inner: Box<EndowmentKind>,
        map: Matrix,
        offset: Vec<f64>,
    },
    /// `factor · inner(y)`
    Scaled {
        inner: Box<EndowmentKind>,
        factor: f64,
    },
}

/// Terminal endowment `g^{(i)}` plus initial endowment `g₀^{(i)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct EndowmentSpec {
    dim: usize,
    kind: EndowmentKind,
    g0: f64,
}

impl EndowmentSpec {
    pub fn quadratic(f: f64, h: Vec<f64>, j: Matrix, g0: f64) -> Result<Self> {
        let d = h.len();
        if d == 0 || j.rows() != d || j.cols() != d {
            return Err(Error::InvalidEndowment(format!(
                "quadratic endowment needs h ∈ R^D and j ∈ R^(D×D) (got |h| = {d}, j {}×{})",
                j.rows(),
                j.cols()
            )));
        }
        if !(f.is_finite() && h.iter().all(|x| x.is_finite()) && j.is_finite()) {
            return Err(Error::InvalidEndowment("non-finite quadratic coefficients".into()));
        }
        Ok(Self {
            dim: d,
            kind: EndowmentKind::Quadratic {
                f,
                h,
                j: j.symmetrized(),
            },
            g0,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self::constant(0.0, dim)
    }

    pub fn constant(k: f64, dim: usize) -> Self {
        Self {
            dim,
            kind: EndowmentKind::Quadratic {
                f: k,
                h: vec![0.0; dim],
                j: Matrix::zeros(dim, dim),
            },
            g0: 0.0,
        }
    }

    pub fn example(alpha: f64, dim: usize, g0: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) || dim == 0 {
            return Err(Error::InvalidEndowment(format!(
                "example endowment needs α ∈ (0,1) and D ≥ 1 (got α = {alpha}, D = {dim})"
            )));
        }
        Ok(Self {
            dim,
            kind: EndowmentKind::ExampleF { alpha },
            g0,
        })
    }

    pub fn analytic(family: AnalyticFamily, g0: f64) -> Result<Self> {
        let dim = match &family {
            AnalyticFamily::Cosine { wave, .. } => wave.len(),
            AnalyticFamily::GaussianBump { center, width, .. } => {
                if !(*width > 0.0) {
                    return Err(Error::InvalidEndowment("bump width must be positive".into()));
                }
                center.len()
            }
        };
        if dim == 0 {
            return Err(Error::InvalidEndowment("analytic endowment needs D ≥ 1".into()));
        }
        Ok(Self {
            dim,
            kind: EndowmentKind::Analytic(family),
            g0,
        })
    }

    /// `inner(map·(offset + y))`
    pub fn composed(inner: &EndowmentSpec, map: Matrix, offset: Vec<f64>) -> Result<Self> {
        if map.rows() != inner.dim || map.cols() != offset.len() {
            return Err(Error::Dimension(format!(
                "composition map {}×{} incompatible with D = {}",
                map.rows(),
                map.cols(),
                inner.dim
            )));
        }
        Ok(Self {
            dim: offset.len(),
            kind: EndowmentKind::Composed {
                inner: Box::new(inner.kind.clone()),
                map,
                offset,
            },
            g0: inner.g0,
        })
    }

    pub fn kind(&self) -> &EndowmentKind {
        &self.kind
    }

    pub fn initial(&self) -> f64 {
        self.g0
    }

    pub fn with_initial(mut self, g0: f64) -> Self {
        self.g0 = g0;
        self
    }

    /// Same payoff multiplied by `k` (initial endowment unchanged).
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            dim: self.dim,
            kind: scale_kind(&self.kind, k),
            g0: self.g0,
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, EndowmentKind::Quadratic { .. })
    }

    /// `(f, h, j)` for quadratic endowments.
    pub fn quadratic_parts(&self) -> Option<(f64, &[f64], &Matrix)> {
        match &self.kind {
            EndowmentKind::Quadratic { f, h, j } => Some((*f, h, j)),
            _ => None,
        }
    }

    /// Points where a one-dimensional payoff loses smoothness, used to split
    /// adaptive integrals.
    pub fn kinks_1d(&self) -> Vec<f64> {
        kind_kinks(&self.kind)
    }
}

fn scale_kind(kind: &EndowmentKind, k: f64) -> EndowmentKind {
    match kind {
        EndowmentKind::Quadratic { f, h, j } => EndowmentKind::Quadratic {
            f: k * f,
            h: h.iter().map(|x| k * x).collect(),
            j: j.scale(k),
        },
        EndowmentKind::Analytic(AnalyticFamily::Cosine {
            amplitude,
            wave,
            phase,
        }) => EndowmentKind::Analytic(AnalyticFamily::Cosine {
            amplitude: k * amplitude,
            wave: wave.clone(),
            phase: *phase,
        }),
        EndowmentKind::Analytic(AnalyticFamily::GaussianBump {
            amplitude,
            center,
            width,
        }) => EndowmentKind::Analytic(AnalyticFamily::GaussianBump {
            amplitude: k * amplitude,
            center: center.clone(),
            width: *width,
        }),
        EndowmentKind::Composed { inner, map, offset } => EndowmentKind::Composed {
            inner: Box::new(scale_kind(inner, k)),
            map: map.clone(),
            offset: offset.clone(),
        },
        EndowmentKind::Scaled { inner, factor } => EndowmentKind::Scaled {
            inner: inner.clone(),
            factor: k * factor,
        },
        EndowmentKind::ExampleF { .. } => EndowmentKind::Scaled {
            inner: Box::new(kind.clone()),
            factor: k,
        },
    }
}

fn kind_kinks(kind: &EndowmentKind) -> Vec<f64> {
    match kind {
        EndowmentKind::ExampleF { .. } => vec![-2.0, -1.0, 0.0, 1.0, 2.0],
        EndowmentKind::Composed { inner, map, offset } if map.rows() == 1 && map.cols() == 1 => {
            let m = map[(0, 0)];
            if m == 0.0 {
                return Vec::new();
            }
            kind_kinks(inner).into_iter().map(|x| x / m - offset[0]).collect()
        }
        EndowmentKind::Scaled { inner, .. } => kind_kinks(inner),
        _ => Vec::new(),
    }
}

/// Rate-optimality example density
/// `f(x) = 2 − |x|^{1+α}` on `|x| ≤ 1`, `(2 − |x|)^{1+α}` on `1 < |x| < 2`,
/// zero elsewhere.
pub fn example_f(x: f64, alpha: f64) -> f64 {
    let ax = math::abs(x);
    if ax <= 1.0 {
        2.0 - math::powf(ax, 1.0 + alpha)
    } else if ax < 2.0 {
        math::powf(2.0 - ax, 1.0 + alpha)
    } else {
        0.0
    }
}

/// `F(x) = ∫_{-2}^x f`, zero for `x ≤ −2` and `4` for `x ≥ 2`.
pub fn example_big_f(x: f64, alpha: f64) -> f64 {
    let p = 2.0 + alpha;
    if x <= -2.0 {
        0.0
    } else if x <= -1.0 {
        math::powf(2.0 + x, p) / p
    } else if x <= 0.0 {
        2.0 * (x + 1.0) + math::powf(-x, p) / p
    } else if x <= 1.0 {
        2.0 + 2.0 * x - math::powf(x, p) / p
    } else if x < 2.0 {
        4.0 - math::powf(2.0 - x, p) / p
    } else {
        4.0
    }
}

/// `f'(x) = F''(x)`
pub fn example_f_prime(x: f64, alpha: f64) -> f64 {
    let ax = math::abs(x);
    let sign = if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    };
    if ax <= 1.0 {
        -(1.0 + alpha) * sign * math::powf(ax, alpha)
    } else if ax < 2.0 {
        -(1.0 + alpha) * sign * math::powf(2.0 - ax, alpha)
    } else {
        0.0
    }
}

fn kind_value(kind: &EndowmentKind, y: &[f64]) -> f64 {
    match kind {
        EndowmentKind::Quadratic { f, h, j } => {
            let jy = j.matvec(y);
            f + dot(h, y) + dot(y, &jy)
        }
        EndowmentKind::ExampleF { alpha } => example_big_f(y[0], *alpha),
        EndowmentKind::Analytic(AnalyticFamily::Cosine {
            amplitude,
            wave,
            phase,
        }) => amplitude * math::cos(dot(wave, y) + phase),
        EndowmentKind::Analytic(AnalyticFamily::GaussianBump {
            amplitude,
            center,
            width,
        }) => {
            let r2: f64 = y.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
            amplitude * math::exp(-r2 / (2.0 * width * width))
        }
        EndowmentKind::Composed { inner, map, offset } => {
            let x = compose_point(map, offset, y);
            kind_value(inner, &x)
        }
        EndowmentKind::Scaled { inner, factor } => factor * kind_value(inner, y),
    }
}

fn compose_point(map: &Matrix, offset: &[f64], y: &[f64]) -> Vec<f64> {
    let shifted: Vec<f64> = offset
        .iter()
        .zip(y)
        .map(|(o, v)| o + v)
        .collect();
    map.matvec(&shifted)
}

fn kind_gradient(kind: &EndowmentKind, y: &[f64], out: &mut [f64]) {
    match kind {
        EndowmentKind::Quadratic { h, j, .. } => {
            j.matvec_into(y, out);
            for (o, hd) in out.iter_mut().zip(h) {
                *o = hd + 2.0 * *o;
            }
        }
        EndowmentKind::ExampleF { alpha } => {
            out.iter_mut().for_each(|o| *o = 0.0);
            out[0] = example_f(y[0], *alpha);
        }
        EndowmentKind::Analytic(AnalyticFamily::Cosine {
            amplitude,
            wave,
            phase,
        }) => {
            let s = -amplitude * math::sin(dot(wave, y) + phase);
            for (o, w) in out.iter_mut().zip(wave) {
                *o = s * w;
            }
        }
        EndowmentKind::Analytic(AnalyticFamily::GaussianBump {
            amplitude,
            center,
            width,
        }) => {
            let r2: f64 = y.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
            let w2 = width * width;
            let g = amplitude * math::exp(-r2 / (2.0 * w2));
            for ((o, a), c) in out.iter_mut().zip(y).zip(center) {
                *o = -g * (a - c) / w2;
            }
        }
        EndowmentKind::Composed { inner, map, offset } => {
            let x = compose_point(map, offset, y);
            let mut gi = vec![0.0; x.len()];
            kind_gradient(inner, &x, &mut gi);
            map.tr_matvec_into(&gi, out);
        }
        EndowmentKind::Scaled { inner, factor } => {
            kind_gradient(inner, y, out);
            out.iter_mut().for_each(|o| *o *= factor);
        }
    }
}

fn kind_hessian(kind: &EndowmentKind, y: &[f64], out: &mut Matrix) {
    let d = y.len();
    match kind {
        EndowmentKind::Quadratic { j, .. } => {
            *out = j.scale(2.0);
        }
        EndowmentKind::ExampleF { alpha } => {
            *out = Matrix::zeros(d, d);
            out[(0, 0)] = example_f_prime(y[0], *alpha);
        }
        EndowmentKind::Analytic(AnalyticFamily::Cosine {
            amplitude,
            wave,
            phase,
        }) => {
            let c = -amplitude * math::cos(dot(wave, y) + phase);
            *out = Matrix::zeros(d, d);
            for a in 0..d {
                for b in 0..d {
                    out[(a, b)] = c * wave[a] * wave[b];
                }
            }
        }
        EndowmentKind::Analytic(AnalyticFamily::GaussianBump {
            amplitude,
            center,
            width,
        }) => {
            let r2: f64 = y.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
            let w2 = width * width;
            let g = amplitude * math::exp(-r2 / (2.0 * w2));
            *out = Matrix::zeros(d, d);
            for a in 0..d {
                for b in 0..d {
                    let da = y[a] - center[a];
                    let db = y[b] - center[b];
                    let delta = if a == b { 1.0 } else { 0.0 };
                    out[(a, b)] = g * (da * db / (w2 * w2) - delta / w2);
                }
            }
        }
        EndowmentKind::Composed { inner, map, offset } => {
            let x = compose_point(map, offset, y);
            let mut hi = Matrix::zeros(x.len(), x.len());
            kind_hessian(inner, &x, &mut hi);
            *out = map.transpose().matmul(&hi).matmul(map);
        }
        EndowmentKind::Scaled { inner, factor } => {
            kind_hessian(inner, y, out);
            *out = out.scale(*factor);
        }
    }
}

impl Terminal for EndowmentSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, y: &[f64]) -> f64 {
        kind_value(&self.kind, y)
    }

    fn gradient(&self, y: &[f64], out: &mut [f64]) {
        kind_gradient(&self.kind, y, out)
    }

    fn hessian(&self, y: &[f64], out: &mut Matrix) -> bool {
        kind_hessian(&self.kind, y, out);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_adaptive;
    use approx::assert_relative_eq;

    #[test]
    fn example_f_piece_values() {
        let a = 0.5;
        assert_eq!(example_f(0.0, a), 2.0);
        assert_eq!(example_f(2.0, a), 0.0);
        assert_eq!(example_f(-2.0, a), 0.0);
        assert_relative_eq!(example_f(1.0, a), 1.0);
        assert_relative_eq!(example_f(-1.0, a), 1.0);
    }

    #[test]
    fn example_big_f_matches_numeric_antiderivative() {
        for alpha in [0.25, 0.5, 0.9] {
            for &x in &[-1.7f64, -1.0, -0.3, 0.0, 0.4, 1.0, 1.6, 2.0, 3.0] {
                let est = integrate_adaptive(
                    |u| example_f(u, alpha),
                    -2.0,
                    x.max(-2.0),
                    &[-1.0, 0.0, 1.0, 2.0],
                    1e-14,
                    1e-13,
                );
                assert_relative_eq!(example_big_f(x, alpha), est.value, epsilon = 1e-11);
            }
        }
        // F(0) = 1/(2+α) + 2 − 1/(2+α)
        assert_relative_eq!(example_big_f(0.0, 0.5), 2.0, epsilon = 1e-15);
        assert_relative_eq!(example_big_f(2.0, 0.5), 4.0, epsilon = 1e-15);
        assert_eq!(example_big_f(7.0, 0.5), example_big_f(2.0, 0.5));
    }

    #[test]
    fn symmetrization_is_idempotent() {
        let j = Matrix::from_rows(&[vec![1.0, 0.3], vec![-0.1, 2.0]]).unwrap();
        let once = EndowmentSpec::quadratic(0.0, vec![0.0, 0.0], j, 0.0).unwrap();
        let (_, _, j1) = once.quadratic_parts().unwrap();
        let twice = EndowmentSpec::quadratic(0.0, vec![0.0, 0.0], j1.clone(), 0.0).unwrap();
        let (_, _, j2) = twice.quadratic_parts().unwrap();
        assert_eq!(j1.as_slice(), j2.as_slice());
        assert_eq!(j1[(0, 1)], j1[(1, 0)]);
    }

    fn check_derivatives(g: &EndowmentSpec, y: &[f64]) {
        let d = y.len();
        let h = 1e-5;
        let mut grad = vec![0.0; d];
        g.gradient(y, &mut grad);
        let mut hess = Matrix::zeros(d, d);
        assert!(g.hessian(y, &mut hess));
        for a in 0..d {
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[a] += h;
            ym[a] -= h;
            let fd = (g.value(&yp) - g.value(&ym)) / (2.0 * h);
            assert_relative_eq!(grad[a], fd, epsilon = 1e-8);
            let mut gp = vec![0.0; d];
            let mut gm = vec![0.0; d];
            g.gradient(&yp, &mut gp);
            g.gradient(&ym, &mut gm);
            for b in 0..d {
                assert_relative_eq!(hess[(b, a)], (gp[b] - gm[b]) / (2.0 * h), epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn exact_derivatives_match_finite_differences() {
        let y = [0.3, -0.7];
        let q = EndowmentSpec::quadratic(
            1.0,
            vec![0.5, -1.0],
            Matrix::from_rows(&[vec![0.2, 0.1], vec![0.1, -0.3]]).unwrap(),
            0.0,
        )
        .unwrap();
        check_derivatives(&q, &y);
        let c = EndowmentSpec::analytic(
            AnalyticFamily::Cosine {
                amplitude: 1.3,
                wave: vec![0.7, -1.1],
                phase: 0.2,
            },
            0.0,
        )
        .unwrap();
        check_derivatives(&c, &y);
        let b = EndowmentSpec::analytic(
            AnalyticFamily::GaussianBump {
                amplitude: 0.8,
                center: vec![0.1, 0.2],
                width: 0.9,
            },
            0.0,
        )
        .unwrap();
        check_derivatives(&b, &y);
        let e = EndowmentSpec::example(0.5, 2, 0.0).unwrap();
        check_derivatives(&e, &[0.37, 0.2]);
        let m = Matrix::from_rows(&[vec![1.2, 0.1], vec![0.0, 0.9]]).unwrap();
        let comp = EndowmentSpec::composed(&c, m, vec![0.05, -0.1]).unwrap();
        check_derivatives(&comp, &y);
    }

    #[test]
    fn scaling_scales_every_kind() {
        let e = EndowmentSpec::example(0.5, 1, 0.0).unwrap();
        let e2 = e.scaled(2.0);
        for x in [-1.5, 0.0, 0.3, 2.5] {
            assert_relative_eq!(e2.value(&[x]), 2.0 * e.value(&[x]), epsilon = 1e-14);
        }
        assert_eq!(e2.kinks_1d(), e.kinks_1d());
    }
}
