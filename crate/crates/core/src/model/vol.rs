use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;
use crate::{Error, Result};

/// Piecewise-polynomial volatility `t ↦ C(t) ∈ R^{D×D}`.
///
/// On piece `p` (`breaks[p] ≤ t < breaks[p+1]`) the schedule is
/// `Σ_k coeffs[p][k] · (t − breaks[p])^k`. Integrals of `C` and `CCᵀ` are
/// exact; cumulative values at the breakpoints are cached.
#[derive(Clone, Debug, PartialEq)]
pub struct VolSchedule {
    dim: usize,
    breaks: Vec<f64>,
    pieces: Vec<Vec<Matrix>>,
    cum_outer: Vec<Matrix>,
    cum_linear: Vec<Matrix>,
}

impl VolSchedule {
    pub fn constant(c: Matrix) -> Self {
        Self::build(vec![0.0, 1.0], vec![vec![c]])
    }

    /// `C(t) = c0 + c1·t`
    pub fn linear(c0: Matrix, c1: Matrix) -> Self {
        Self::build(vec![0.0, 1.0], vec![vec![c0, c1]])
    }

    /// General piecewise-polynomial schedule in local coordinates.
    pub fn piecewise(breaks: Vec<f64>, pieces: Vec<Vec<Matrix>>) -> Result<Self> {
        if breaks.len() < 2 || pieces.len() != breaks.len() - 1 {
            return Err(Error::InvalidMarket(
                "piecewise schedule needs len(breaks) = len(pieces) + 1 ≥ 2".into(),
            ));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidMarket("breakpoints must increase strictly".into()));
        }
        let dim = pieces[0].first().map_or(0, Matrix::rows);
        for p in &pieces {
            if p.is_empty() || p.iter().any(|m| m.rows() != dim || m.cols() != dim) {
                return Err(Error::InvalidMarket(format!(
                    "every piece needs at least one {dim}×{dim} coefficient"
                )));
            }
        }
        if dim == 0 {
            return Err(Error::InvalidMarket("empty volatility matrix".into()));
        }
        Ok(Self::build(breaks, pieces))
    }

    /// Piecewise-linear interpolant through `(times[k], samples[k])`.
    pub fn piecewise_linear(times: &[f64], samples: &[Matrix]) -> Result<Self> {
        if times.len() != samples.len() || times.len() < 2 {
            return Err(Error::InvalidMarket(
                "piecewise-linear schedule needs ≥ 2 matching samples".into(),
            ));
        }
        let pieces = samples
            .windows(2)
            .zip(times.windows(2))
            .map(|(s, t)| vec![s[0].clone(), s[1].sub(&s[0]).scale(1.0 / (t[1] - t[0]))])
            .collect();
        Self::piecewise(times.to_vec(), pieces)
    }

    fn build(breaks: Vec<f64>, pieces: Vec<Vec<Matrix>>) -> Self {
        let dim = pieces[0][0].rows();
        let mut s = Self {
            dim,
            breaks,
            pieces,
            cum_outer: Vec::new(),
            cum_linear: Vec::new(),
        };
        let mut outer = vec![Matrix::zeros(dim, dim)];
        let mut lin = vec![Matrix::zeros(dim, dim)];
        for p in 0..s.pieces.len() {
            let len = s.breaks[p + 1] - s.breaks[p];
            outer.push(outer[p].add(&s.piece_outer(p, 0.0, len)));
            lin.push(lin[p].add(&s.piece_linear(p, 0.0, len)));
        }
        s.cum_outer = outer;
        s.cum_linear = lin;
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[Vec<Matrix>] {
        &self.pieces
    }

    /// True when `C(t)` does not depend on `t`.
    pub fn is_constant(&self) -> bool {
        let c0 = &self.pieces[0][0];
        self.pieces
            .iter()
            .all(|p| &p[0] == c0 && p[1..].iter().all(|q| q.max_abs() == 0.0))
    }

    fn piece_index(&self, t: f64) -> usize {
        let n = self.pieces.len();
        // last p with breaks[p] <= t
        let p = self.breaks[1..n].partition_point(|&b| b <= t);
        p.min(n - 1)
    }

    pub fn at(&self, t: f64) -> Matrix {
        let p = self.piece_index(t);
        let tau = t - self.breaks[p];
        let coeffs = &self.pieces[p];
        let mut out = coeffs[coeffs.len() - 1].clone();
        for k in (0..coeffs.len() - 1).rev() {
            out = out.scale(tau).add(&coeffs[k]);
        }
        out
    }

    fn piece_outer(&self, p: usize, u0: f64, u1: f64) -> Matrix {
        let coeffs = &self.pieces[p];
        let mut out = Matrix::zeros(self.dim, self.dim);
        for (k, mk) in coeffs.iter().enumerate() {
            for (l, ml) in coeffs.iter().enumerate() {
                let e = (k + l + 1) as i32;
                let w = (math::powi(u1, e) - math::powi(u0, e)) / e as f64;
                out.add_scaled_in_place(&mk.matmul(&ml.transpose()), w);
            }
        }
        out
    }

    fn piece_linear(&self, p: usize, u0: f64, u1: f64) -> Matrix {
        let mut out = Matrix::zeros(self.dim, self.dim);
        for (k, mk) in self.pieces[p].iter().enumerate() {
            let e = (k + 1) as i32;
            out.add_scaled_in_place(mk, (math::powi(u1, e) - math::powi(u0, e)) / e as f64);
        }
        out
    }

    fn integrate_with(
        &self,
        t: f64,
        s: f64,
        piece: impl Fn(usize, f64, f64) -> Matrix,
        cum: &[Matrix],
    ) -> Matrix {
        let pt = self.piece_index(t);
        let ps = self.piece_index(s);
        if pt == ps {
            let b = self.breaks[pt];
            return piece(pt, t - b, s - b);
        }
        let bt = self.breaks[pt];
        let mut out = piece(pt, t - bt, self.breaks[pt + 1] - bt);
        out = out.add(&cum[ps].sub(&cum[pt + 1]));
        out.add(&piece(ps, 0.0, s - self.breaks[ps]))
    }

    /// `∫_t^s C(u)C(u)ᵀ du` for `t ≤ s`.
    pub fn integrate_outer(&self, t: f64, s: f64) -> Matrix {
        self.integrate_with(t, s, |p, a, b| self.piece_outer(p, a, b), &self.cum_outer)
    }

    /// `∫_t^s C(u) du` for `t ≤ s`.
    pub fn integrate(&self, t: f64, s: f64) -> Matrix {
        self.integrate_with(t, s, |p, a, b| self.piece_linear(p, a, b), &self.cum_linear)
    }

    fn sample_times(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        let lo = self.breaks[0].max(0.0);
        let hi = self.breaks[self.breaks.len() - 1].min(1.0).max(lo);
        (0..n).map(move |k| lo + (hi - lo) * k as f64 / (n - 1).max(1) as f64)
    }

    /// Extreme eigenvalues of `C(t)C(t)ᵀ` over `n` sampled times in `[0, 1]`.
    pub fn sampled_eigen_range(&self, n: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in self.sample_times(n) {
            let ev = self.at(t).outer_self().symmetric_eigenvalues();
            lo = lo.min(ev[0]);
            hi = hi.max(ev[ev.len() - 1]);
        }
        (lo, hi)
    }

    pub(crate) fn worst_ellipticity_sample(&self, n: usize, lower: f64, upper: f64) -> (f64, f64) {
        let mut worst = (0.0, f64::NAN, 0.0);
        for t in self.sample_times(n) {
            let ev = self.at(t).outer_self().symmetric_eigenvalues();
            for e in [ev[0], ev[ev.len() - 1]] {
                let violation = (lower - e).max(e - upper);
                if violation > worst.2 || worst.1.is_nan() {
                    worst = (t, e, violation);
                }
            }
        }
        (worst.0, worst.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_outer_integral_matches_hand_computation() {
        // C(u) = [[1,0],[u,1]] → ∫_0^1 CCᵀ = [[1, 1/2], [1/2, 4/3]]
        let c0 = Matrix::identity(2);
        let c1 = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let v = VolSchedule::linear(c0, c1);
        let s = v.integrate_outer(0.0, 1.0);
        assert_relative_eq!(s[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(s[(0, 1)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(s[(1, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(s[(1, 1)], 4.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn piecewise_integrals_are_additive() {
        let times: Vec<f64> = (0..=8).map(|k| k as f64 / 8.0).collect();
        let samples: Vec<Matrix> = times
            .iter()
            .map(|&t| Matrix::from_rows(&[vec![1.0 + t * t, 0.1], vec![0.0, 2.0 - t]]).unwrap())
            .collect();
        let v = VolSchedule::piecewise_linear(&times, &samples).unwrap();
        let whole = v.integrate_outer(0.1, 0.93);
        let split = v.integrate_outer(0.1, 0.4).add(&v.integrate_outer(0.4, 0.93));
        assert!(whole.sub(&split).max_abs() < 1e-14);
        // interpolant passes through the samples
        assert!(v.at(0.375).sub(&samples[3]).max_abs() < 1e-14);
        let lin = v.integrate(0.0, 1.0);
        assert!(lin.is_finite());
    }

    #[test]
    fn rejects_malformed_pieces() {
        assert!(VolSchedule::piecewise(vec![0.0, 1.0], vec![]).is_err());
        assert!(VolSchedule::piecewise(vec![0.0, 0.0], vec![vec![Matrix::identity(1)]]).is_err());
    }
}
