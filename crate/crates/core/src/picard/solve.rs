use alloc::vec;
use alloc::vec::Vec;

use super::field::{bracket, Bracket, Extension, SolutionField};
use super::{lambda_and_sources, Equilibrium, ValueSource};
use crate::kernel::FkPlan;
use crate::linalg::Matrix;
use crate::math;
use crate::model::{EndowmentSpec, MarketConfig, Terminal};
use crate::quadrature::{default_nodes_per_axis, GaussLegendre, QuadratureRule};
use crate::{par_map, Error, Result};

/// Grids, quadrature sizes and stopping rule for [`picard_solve`].
#[derive(Clone, Debug, PartialEq)]
pub struct PicardOptions {
    /// Number of time intervals; nodes cluster quadratically toward `T`.
    pub time_steps: usize,
    /// Space points per axis (odd, so the origin is a node). `None` picks
    /// 33 for `D ≤ 2`, 17 for `D = 3` and 9 beyond.
    pub space_points: Option<usize>,
    /// Box half-width; `None` gives `5·sqrt(δ_upper·T)`.
    pub half_width: Option<f64>,
    /// Gauss–Hermite nodes per axis; `None` gives 16 (fewer for `D > 3`).
    pub hermite_nodes: Option<usize>,
    pub legendre_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub extension: Extension,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            time_steps: 24,
            space_points: None,
            half_width: None,
            hermite_nodes: None,
            legendre_nodes: 32,
            tol: 1e-7,
            max_iter: 50,
            extension: Extension::Clamp,
        }
    }
}

impl PicardOptions {
    pub fn resolved_space_points(&self, dim: usize) -> usize {
        self.space_points.unwrap_or(match dim {
            0..=2 => 33,
            3 => 17,
            _ => 9,
        })
    }

    pub fn resolved_hermite_nodes(&self, dim: usize) -> usize {
        self.hermite_nodes.unwrap_or_else(|| default_nodes_per_axis(dim, 16))
    }

    pub fn resolved_half_width(&self, market: &MarketConfig, maturity: f64) -> f64 {
        self.half_width
            .unwrap_or_else(|| 5.0 * math::sqrt(market.ellipticity().1 * maturity))
    }

    /// `t_m = T(1 − (1 − m/M)²)`
    pub fn time_grid(&self, maturity: f64) -> Vec<f64> {
        let m = self.time_steps.max(1);
        (0..=m)
            .map(|k| {
                if k == m {
                    maturity
                } else {
                    let x = 1.0 - k as f64 / m as f64;
                    maturity * (1.0 - x * x)
                }
            })
            .collect()
    }
}

/// Per-slice data for one output time.
struct SlicePrep {
    weight: f64,
    bracket: Bracket,
    vol: Matrix,
    /// `L z_k` for every rule node, node-major.
    lz: Vec<f64>,
    /// `L⁻ᵀ z_k` for every rule node, node-major.
    mz: Vec<f64>,
}

/// Everything [`apply_pi`] needs that does not change between iterations.
pub struct PicardWorkspace {
    market: MarketConfig,
    endowments: Vec<EndowmentSpec>,
    maturity: f64,
    rule: QuadratureRule,
    template: SolutionField,
    slices: Vec<Vec<SlicePrep>>,
    terminal_u: Vec<Vec<f64>>,
    terminal_grad: Vec<Vec<f64>>,
}

impl PicardWorkspace {
    pub fn new(
        market: &MarketConfig,
        endowments: &[EndowmentSpec],
        maturity: f64,
        opts: &PicardOptions,
    ) -> Result<Self> {
        let d = market.dim_factor();
        if endowments.len() != market.num_investors() {
            return Err(Error::Dimension(alloc::format!(
                "{} endowments for {} investors",
                endowments.len(),
                market.num_investors()
            )));
        }
        if endowments.iter().any(|g| g.dim() != d) {
            return Err(Error::Dimension("endowment dimension differs from D".into()));
        }
        if !(maturity > 0.0 && maturity <= market.maturity()) {
            return Err(Error::InvalidMarket(alloc::format!(
                "solver maturity {maturity} must lie in (0, {}]",
                market.maturity()
            )));
        }
        if !(opts.tol > 0.0) || opts.legendre_nodes == 0 {
            return Err(Error::InvalidMarket("tolerance and node counts must be positive".into()));
        }
        let n_space = opts.resolved_space_points(d);
        if n_space < 2 {
            return Err(Error::InvalidMarket("need at least 2 space points per axis".into()));
        }
        let hw = opts.resolved_half_width(market, maturity);
        let axis: Vec<f64> = (0..n_space)
            .map(|k| -hw + 2.0 * hw * k as f64 / (n_space - 1) as f64)
            .collect();
        let times = opts.time_grid(maturity);
        let inv = endowments.len();
        let template = SolutionField::new(times.clone(), vec![axis; d], inv, opts.extension);
        let rule = QuadratureRule::gauss_hermite(d, opts.resolved_hermite_nodes(d));
        let time_rule = GaussLegendre::new(opts.legendre_nodes);
        let p_len = template.space_len();
        let nodes = rule.len();

        let mut slices = Vec::with_capacity(times.len() - 1);
        let mut terminal_u = vec![vec![0.0; times.len() * p_len]; inv];
        let mut terminal_grad = vec![vec![0.0; times.len() * p_len * d]; inv];
        let points = template.space_points();
        let mut buf = vec![0.0; d];
        for (m, &t) in times.iter().enumerate() {
            if m + 1 == times.len() {
                for (p, y) in points.iter().enumerate() {
                    for (i, g) in endowments.iter().enumerate() {
                        terminal_u[i][m * p_len + p] = g.value(y);
                        g.gradient(y, &mut buf);
                        terminal_grad[i][(m * p_len + p) * d..(m * p_len + p + 1) * d].copy_from_slice(&buf);
                    }
                }
                break;
            }
            let plan = FkPlan::new(market.vol(), t, maturity, &time_rule)?;
            let mut prep = Vec::with_capacity(plan.slices.len());
            for sl in &plan.slices {
                let mut lz = vec![0.0; nodes * d];
                let mut mz = vec![0.0; nodes * d];
                for k in 0..nodes {
                    let z = rule.node(k);
                    sl.chol_lower.matvec_into(z, &mut lz[k * d..(k + 1) * d]);
                    sl.inv_transpose.matvec_into(z, &mut mz[k * d..(k + 1) * d]);
                }
                prep.push(SlicePrep {
                    weight: sl.weight,
                    bracket: bracket(&times, sl.s, Extension::Clamp),
                    vol: market.vol_at(sl.s),
                    lz,
                    mz,
                });
            }
            slices.push(prep);
            let terms: Vec<(Vec<f64>, Vec<f64>)> = par_map(points.len(), |p| {
                let y = &points[p];
                let mut us = vec![0.0; inv];
                let mut gs = vec![0.0; inv * d];
                for (i, g) in endowments.iter().enumerate() {
                    us[i] = plan.terminal_value(g, y, &rule);
                    plan.terminal_gradient(g, y, &rule, &mut gs[i * d..(i + 1) * d]);
                }
                (us, gs)
            });
            for (p, (us, gs)) in terms.into_iter().enumerate() {
                for i in 0..inv {
                    terminal_u[i][m * p_len + p] = us[i];
                    terminal_grad[i][(m * p_len + p) * d..(m * p_len + p + 1) * d]
                        .copy_from_slice(&gs[i * d..(i + 1) * d]);
                }
            }
        }
        Ok(Self {
            market: market.clone(),
            endowments: endowments.to_vec(),
            maturity,
            rule,
            template,
            slices,
            terminal_u,
            terminal_grad,
        })
    }

    /// `v(t, y) = g(y)` with gradients from the endowment spec.
    pub fn terminal_extension(&self) -> SolutionField {
        let mut f = self.template.clone();
        let d = f.dim();
        let p_len = f.space_len();
        let m_last = f.times.len() - 1;
        for i in 0..f.investors {
            for m in 0..f.times.len() {
                f.u[i][m * p_len..(m + 1) * p_len]
                    .copy_from_slice(&self.terminal_u[i][m_last * p_len..(m_last + 1) * p_len]);
                f.grad[i][m * p_len * d..(m + 1) * p_len * d]
                    .copy_from_slice(&self.terminal_grad[i][m_last * p_len * d..(m_last + 1) * p_len * d]);
            }
        }
        f
    }

    pub fn template(&self) -> &SolutionField {
        &self.template
    }

    /// One application of the Picard map to `field`.
    pub fn apply(&self, field: &SolutionField) -> Result<SolutionField> {
        let d = field.dim();
        let inv = field.investors;
        let n = self.market.dim_assets();
        let p_len = field.space_len();
        let points = field.space_points();
        let a = self.market.risk_aversions();
        let tau = self.market.tau_sigma();
        let nodes = self.rule.len();
        let weights = self.rule.weights();
        let mut out = field.clone();
        for (m, prep) in self.slices.iter().enumerate() {
            let results: Vec<Result<(Vec<f64>, Vec<f64>)>> = par_map(p_len, |p| {
                let y = &points[p];
                let mut x = vec![0.0; d];
                let mut grads = vec![0.0; inv * d];
                let mut lambda = vec![0.0; n];
                let mut f = vec![0.0; inv];
                let mut scratch = vec![0.0; inv * d + n];
                let mut val = vec![0.0; inv];
                let mut grd = vec![0.0; inv * d];
                let mut e_val = vec![0.0; inv];
                let mut e_grd = vec![0.0; inv * d];
                for sl in prep {
                    e_val.iter_mut().for_each(|v| *v = 0.0);
                    e_grd.iter_mut().for_each(|v| *v = 0.0);
                    for k in 0..nodes {
                        let lz = &sl.lz[k * d..(k + 1) * d];
                        for c in 0..d {
                            x[c] = y[c] - lz[c];
                        }
                        field.grads_at_bracket(sl.bracket, &x, &mut grads);
                        lambda_and_sources(&sl.vol, a, tau, n, &grads, &mut lambda, Some(&mut f), &mut scratch);
                        let w = weights[k];
                        let mz = &sl.mz[k * d..(k + 1) * d];
                        for i in 0..inv {
                            let wf = w * f[i];
                            e_val[i] += wf;
                            for c in 0..d {
                                e_grd[i * d + c] += wf * mz[c];
                            }
                        }
                    }
                    for i in 0..inv {
                        val[i] += sl.weight * e_val[i];
                        for c in 0..d {
                            grd[i * d + c] -= sl.weight * e_grd[i * d + c];
                        }
                    }
                }
                if val.iter().chain(&grd).any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: "picard-solver: source integral",
                    });
                }
                Ok((val, grd))
            });
            for (p, r) in results.into_iter().enumerate() {
                let (val, grd) = r?;
                let k = m * p_len + p;
                for i in 0..inv {
                    out.u[i][k] = self.terminal_u[i][k] + val[i];
                    for c in 0..d {
                        out.grad[i][k * d + c] = self.terminal_grad[i][k * d + c] + grd[i * d + c];
                    }
                }
            }
        }
        let m_last = field.times.len() - 1;
        for i in 0..inv {
            out.u[i][m_last * p_len..].copy_from_slice(&self.terminal_u[i][m_last * p_len..]);
            out.grad[i][m_last * p_len * d..].copy_from_slice(&self.terminal_grad[i][m_last * p_len * d..]);
        }
        Ok(out)
    }

    /// Iterates [`Self::apply`] from the terminal extension until the sup
    /// distance between iterates is at most `tol`.
    pub fn solve(&self, tol: f64, max_iter: usize) -> Result<SolutionField> {
        let mut field = self.terminal_extension();
        let mut history = Vec::new();
        for it in 1..=max_iter {
            let next = self.apply(&field)?;
            let res = sup_distance(&field, &next);
            history.push(res);
            field = next;
            if res <= tol {
                field.iterations = it;
                field.residual = res;
                field.residual_history = history;
                return Ok(field);
            }
        }
        Err(Error::PicardNotConverged {
            iterations: max_iter,
            last: history.last().copied().unwrap_or(f64::NAN),
            residuals: history,
        })
    }

    pub fn equilibrium(&self, field: SolutionField) -> Equilibrium {
        Equilibrium::assemble(&self.market, &self.endowments, self.maturity, ValueSource::Field(field))
    }
}

/// `max(sup|Δu|, sup|Δ∂u|)` over all nodes and investors.
pub fn sup_distance(a: &SolutionField, b: &SolutionField) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.investors {
        for (x, y) in a.u[i].iter().zip(&b.u[i]).chain(a.grad[i].iter().zip(&b.grad[i])) {
            worst = worst.max(math::abs(x - y));
        }
    }
    worst
}

/// One application of the Picard map with a freshly built workspace.
pub fn apply_pi(
    field: &SolutionField,
    market: &MarketConfig,
    endowments: &[EndowmentSpec],
    opts: &PicardOptions,
) -> Result<SolutionField> {
    let ws = PicardWorkspace::new(market, endowments, field.maturity(), opts)?;
    if ws.template.times != field.times || ws.template.axes != field.axes {
        return Err(Error::Dimension("field grid does not match the options".into()));
    }
    ws.apply(field)
}

/// Solves the coupled system by Picard iteration and assembles the
/// equilibrium from the converged field.
pub fn picard_solve(
    market: &MarketConfig,
    endowments: &[EndowmentSpec],
    maturity: f64,
    opts: &PicardOptions,
) -> Result<(SolutionField, Equilibrium)> {
    let ws = PicardWorkspace::new(market, endowments, maturity, opts)?;
    let field = ws.solve(opts.tol, opts.max_iter)?;
    let eq = ws.equilibrium(field.clone());
    Ok((field, eq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_opts() -> PicardOptions {
        PicardOptions {
            time_steps: 8,
            space_points: Some(9),
            hermite_nodes: Some(8),
            legendre_nodes: 8,
            ..PicardOptions::default()
        }
    }

    #[test]
    fn zero_endowments_are_a_fixed_point() {
        let m = MarketConfig::scalar(vec![1.0, 2.0], 1.0, 0.3, 0.5).unwrap();
        let g = [EndowmentSpec::zero(1), EndowmentSpec::zero(1)];
        let (field, eq) = picard_solve(&m, &g, 0.3, &small_opts()).unwrap();
        assert!(field.u.iter().chain(&field.grad).flatten().all(|v| *v == 0.0));
        assert_eq!(eq.rate(), 0.0);
        assert_eq!(eq.initial_consumptions(), &[0.0, 0.0]);
        assert_eq!(eq.lambda(0.1, &[0.3]), vec![0.0]);
        assert_eq!(field.iterations, 1);
    }

    #[test]
    fn constant_endowments_after_one_application() {
        let m = MarketConfig::scalar(vec![1.0, 3.0], 1.0, 0.2, 0.5).unwrap();
        let g = [EndowmentSpec::constant(0.7, 1), EndowmentSpec::constant(-1.1, 1)];
        let ws = PicardWorkspace::new(&m, &g, 0.2, &small_opts()).unwrap();
        let once = ws.apply(&ws.terminal_extension()).unwrap();
        for i in 0..2 {
            let k = [0.7, -1.1][i];
            assert!(once.u[i].iter().all(|v| (v - k).abs() < 1e-14));
            assert!(once.grad[i].iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn example_iterates_contract() {
        let m = MarketConfig::scalar(vec![1.0], 1.0, 0.05, 0.5).unwrap();
        let g = [EndowmentSpec::example(0.5, 1, 0.0).unwrap()];
        let ws = PicardWorkspace::new(&m, &g, 0.05, &small_opts()).unwrap();
        let v0 = ws.terminal_extension();
        let v1 = ws.apply(&v0).unwrap();
        let v2 = ws.apply(&v1).unwrap();
        assert!(sup_distance(&v2, &v1) < sup_distance(&v1, &v0));
    }

    #[test]
    fn non_convergence_reports_history() {
        let m = MarketConfig::scalar(vec![1.0], 1.0, 0.3, 0.5).unwrap();
        let g = [EndowmentSpec::example(0.5, 1, 0.0).unwrap()];
        let opts = PicardOptions {
            max_iter: 2,
            tol: 1e-14,
            ..small_opts()
        };
        match picard_solve(&m, &g, 0.3, &opts) {
            Err(Error::PicardNotConverged { residuals, .. }) => assert_eq!(residuals.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn terminal_slice_is_exact() {
        let m = MarketConfig::scalar(vec![1.0], 1.0, 0.1, 0.5).unwrap();
        let g = [EndowmentSpec::example(0.5, 1, 0.0).unwrap()];
        let (field, _) = picard_solve(&m, &g, 0.1, &small_opts()).unwrap();
        let last = field.times.len() - 1;
        for (p, y) in field.space_points().iter().enumerate() {
            assert_eq!(field.u_node(0, last, p), g[0].value(y));
        }
        assert!(field.residual <= 1e-7);
    }

    #[test]
    fn time_grid_clusters_near_maturity() {
        let t = PicardOptions::default().time_grid(0.1);
        assert_eq!(t[0], 0.0);
        assert_eq!(*t.last().unwrap(), 0.1);
        assert!(t[1] - t[0] > t[t.len() - 1] - t[t.len() - 2]);
        assert_relative_eq!(t[12], 0.075, epsilon = 1e-15);
    }
}
