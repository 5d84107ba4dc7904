use std::path::PathBuf;

use radner_core::lemma::{covariance_bounds_suite, seed_spread, shipped_schedules};
use radner_core::mc::{
    clearing_check, increment_covariance_zscore, martingale_check, optimality_probe, simulate_paths, ValidationRecord,
    PROBE_EPSILONS,
};
use radner_core::picard::picard_solve;
use radner_core::quadrature::QuadratureRule;
use radner_core::riccati::{riccati_equilibrium, riccati_integrate, RiccatiPath};
use radner_core::taylor::{compare_pipeline, example_rate_experiment, rate_fit, LambdaSource, RateExperiment};
use radner_core::{EndowmentSpec, Equilibrium, Error, MarketConfig};

use crate::config::{Command, Pipeline, RunConfig, Source};
use crate::csv::{format_float, Cell, Schema, Table};
use crate::CliError;

/// Output directory, precision and the accumulated summary lines.
pub struct Run {
    pub dir: PathBuf,
    pub precision: usize,
    pub summary: Vec<String>,
}

impl Run {
    fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.summary.push(format!("{key}: {value}"));
    }

    fn num(&mut self, key: &str, x: f64) {
        let s = format_float(x, self.precision);
        self.note(key, s);
    }

    fn write(&self, table: &Table) -> Result<(), CliError> {
        table.write(&self.dir, self.precision)
    }

    fn equilibrium_lines(&mut self, eq: &Equilibrium) {
        self.note("provenance", eq.provenance().as_str());
        self.num("r", eq.rate());
        for (i, c) in eq.initial_consumptions().iter().enumerate() {
            self.num(&format!("c0_{}", i + 1), *c);
        }
        let total: f64 = eq.initial_consumptions().iter().sum();
        self.num("c0_sum", total);
    }
}

pub fn run(cmd: Command, cfg: &RunConfig, out: &mut Run) -> Result<(), CliError> {
    match cmd {
        Command::SolveGeneral => solve_general(cfg, out),
        Command::SolveQuadratic => solve_quadratic(cfg, out),
        Command::CompareTaylor => compare_taylor(cfg, out),
        Command::Example => example(cfg, out),
        Command::Validate => validate(cfg, out),
        Command::LemmaSuite => lemma_suite(cfg, out),
    }
}

fn axis(n: usize, half: f64) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0];
    }
    (0..n).map(|j| -half + 2.0 * half * j as f64 / (n - 1) as f64).collect()
}

fn surface(cfg: &RunConfig, market: &MarketConfig, eq: &Equilibrium) -> Table {
    let d = market.dim_factor();
    let n_assets = market.dim_assets();
    let maturity = market.maturity();
    let nt = cfg.solver.surface_times;
    let times: Vec<f64> = if nt == 1 {
        vec![0.0]
    } else {
        (0..nt).map(|k| maturity * k as f64 / (nt - 1) as f64).collect()
    };
    let ax = axis(cfg.solver.surface_points.unwrap_or(5), cfg.solver.surface_half_width);
    let per_slice = ax.len().pow(d as u32);
    let mut table = Table::new(Schema::LambdaSurface { dim: d, assets: n_assets }, times.len() * per_slice);
    let r = eq.rate();
    let mut y = vec![0.0; d];
    for &t in &times {
        for p in 0..per_slice {
            let mut rest = p;
            for k in (0..d).rev() {
                y[k] = ax[rest % ax.len()];
                rest /= ax.len();
            }
            let mut row: Vec<Cell> = vec![t.into()];
            row.extend(y.iter().map(|v| Cell::Num(*v)));
            row.extend(eq.lambda(t, &y).into_iter().map(Cell::Num));
            row.push(r.into());
            table.push(row);
        }
    }
    table
}

fn riccati_table(path: &RiccatiPath) -> Table {
    let d = path.dim();
    let inv = path.investors();
    let t0 = path.blow_up().unwrap_or(f64::NAN);
    let mut table = Table::new(Schema::RiccatiPath { dim: d }, path.times().len() * inv);
    for &s in path.times() {
        for i in 0..inv {
            let mut row: Vec<Cell> = vec![s.into(), (i + 1).into(), path.alpha(i, s).into()];
            row.extend(path.beta(i, s).into_iter().map(Cell::Num));
            row.extend(path.gamma(i, s).as_slice().iter().map(|v| Cell::Num(*v)));
            row.push(t0.into());
            table.push(row);
        }
    }
    table
}

fn market_and_endowments(cfg: &RunConfig) -> Result<(MarketConfig, Vec<EndowmentSpec>), CliError> {
    let m = cfg.market()?;
    let g = cfg.endowments(&m)?;
    Ok((m, g))
}

fn solve_general(cfg: &RunConfig, out: &mut Run) -> Result<(), CliError> {
    let (m, g) = market_and_endowments(cfg)?;
    let (field, eq) = picard_solve(&m, &g, m.maturity(), &cfg.picard_options()?)?;
    out.write(&surface(cfg, &m, &eq))?;
    out.note("pipeline", "picard");
    out.note("iterations", field.iterations);
    out.num("residual", field.residual);
    out.num("gradient_consistency", field.gradient_consistency());
    out.equilibrium_lines(&eq);
    Ok(())
}

fn integrate(cfg: &RunConfig, m: &MarketConfig, g: &[EndowmentSpec], out: &mut Run) -> Result<RiccatiPath, CliError> {
    match riccati_integrate(m, g, m.maturity(), &cfg.riccati_options()) {
        Ok(path) => Ok(path),
        Err(Error::RiccatiBlowUp { t0, horizon, path }) => {
            out.write(&riccati_table(&path))?;
            out.num("t0_riccati", t0);
            Err(Error::RiccatiBlowUp { t0, horizon, path }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn solve_quadratic(cfg: &RunConfig, out: &mut Run) -> Result<(), CliError> {
    let (m, g) = market_and_endowments(cfg)?;
    let path = integrate(cfg, &m, &g, out)?;
    out.write(&riccati_table(&path))?;
    let eq = riccati_equilibrium(&path, &m, &g)?;
    out.write(&surface(cfg, &m, &eq))?;
    out.note("pipeline", "riccati");
    out.note("accepted_steps", path.stats.accepted);
    out.note("rejected_steps", path.stats.rejected);
    out.num("t0_riccati", f64::NAN);
    out.equilibrium_lines(&eq);
    Ok(())
}

fn convergence(exp: &RateExperiment, out: &mut Run) -> Result<(), CliError> {
    let n = exp.maturities.len();
    let mut table = Table::new(Schema::Convergence, n);
    for k in 0..n {
        let running = rate_fit(&exp.maturities[..=k], &exp.errors[..=k]).map(|(s, _)| s).unwrap_or(f64::NAN);
        table.push(vec![
            exp.maturities[k].into(),
            exp.t_eval_policy.as_str().into(),
            exp.errors[k].into(),
            running.into(),
        ]);
    }
    out.write(&table)?;
    out.note("t_policy", exp.t_eval_policy.as_str());
    out.note("points", n);
    out.num("fitted_slope", exp.fitted_slope);
    out.num("fitted_intercept", exp.fitted_intercept);
    for (t, why) in &exp.dropped {
        let t = format_float(*t, out.precision);
        out.note("dropped", format!("T={t} ({why})"));
    }
    Ok(())
}

fn compare_taylor(cfg: &RunConfig, out: &mut Run) -> Result<(), CliError> {
    let (m, g) = market_and_endowments(cfg)?;
    let source = match cfg.solver.lambda_source {
        Source::Picard => LambdaSource::Picard(cfg.picard_options()?),
        Source::ClosedForm => LambdaSource::ClosedForm,
    };
    let rule = QuadratureRule::gauss_hermite(m.dim_factor(), cfg.solver.quadrature_nodes);
    let exp = compare_pipeline(&m, &g, &cfg.maturities(), cfg.policy(), &source, cfg.order(), &rule)?;
    convergence(&exp, out)
}

fn example(cfg: &RunConfig, out: &mut Run) -> Result<(), CliError> {
    let exp = example_rate_experiment(cfg.solver.example_alpha, &cfg.maturities())?;
    out.num("alpha", cfg.solver.example_alpha);
    convergence(&exp, out)
}

fn validate(cfg: &RunConfig, out: &mut Run) -> Result<(), CliError> {
    let (m, g) = market_and_endowments(cfg)?;
    let use_riccati = match cfg.solver.pipeline {
        Pipeline::Auto => g.iter().all(EndowmentSpec::is_quadratic),
        Pipeline::Riccati => true,
        Pipeline::Picard => false,
    };
    let eq = if use_riccati {
        let path = integrate(cfg, &m, &g, out)?;
        riccati_equilibrium(&path, &m, &g)?
    } else {
        picard_solve(&m, &g, m.maturity(), &cfg.picard_options()?)?.1
    };
    let s = &cfg.solver;
    let bundle = simulate_paths(&m, m.maturity(), s.paths, s.steps, s.seed, s.antithetic)?;
    let mut records: Vec<ValidationRecord> = Vec::new();
    let mut worst_t = 0.0f64;
    let mut flagged = 0;
    for i in 0..m.num_investors() {
        let rep = martingale_check(&eq, i, &bundle);
        worst_t = worst_t.max(rep.max_abs_t());
        flagged += rep.flagged;
        records.extend(rep.rows);
    }
    let (h_sum, c_sum) = clearing_check(&eq, &bundle);
    let scalar = |param: &str, horizon: f64, estimate: f64, samples: usize| ValidationRecord {
        check: "clearing".into(),
        investor: None,
        param: param.into(),
        horizon,
        estimate,
        std_error: f64::NAN,
        t_stat: f64::NAN,
        samples,
    };
    records.push(scalar("strategy_sum", m.maturity(), h_sum, bundle.num_paths * bundle.num_steps));
    records.push(scalar("c0_sum", 0.0, c_sum, 1));
    let n = m.dim_assets();
    let offsets: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            let mut e = vec![0.0; n];
            e[a] = 1.0;
            e
        })
        .collect();
    for i in 0..m.num_investors() {
        records.extend(optimality_probe(&eq, i, &bundle, &offsets, &PROBE_EPSILONS));
    }
    let last = bundle.num_steps - 1;
    let z = increment_covariance_zscore(&bundle, &m, last)?;
    records.push(ValidationRecord {
        check: "increment_covariance".into(),
        investor: None,
        param: format!("step={last}"),
        horizon: bundle.times[last + 1],
        estimate: z,
        std_error: f64::NAN,
        t_stat: z,
        samples: bundle.samples(),
    });
    let mut table = Table::new(Schema::Validation, records.len());
    for r in &records {
        table.push(vec![
            r.check.as_str().into(),
            r.investor.map_or(Cell::Empty, |i| Cell::Int(i + 1)),
            r.param.as_str().into(),
            r.horizon.into(),
            r.estimate.into(),
            r.std_error.into(),
            r.t_stat.into(),
            r.samples.into(),
        ]);
    }
    out.write(&table)?;
    out.note("pipeline", if use_riccati { "riccati" } else { "picard" });
    out.note("paths", bundle.num_paths);
    out.note("steps", bundle.num_steps);
    out.note("seed", bundle.seed);
    out.note("antithetic", bundle.antithetic);
    out.num("martingale_max_abs_t", worst_t);
    out.note("martingale_flagged", flagged);
    out.num("clearing_strategy_sum", h_sum);
    out.num("clearing_c0_sum", c_sum);
    out.equilibrium_lines(&eq);
    Ok(())
}

fn lemma_suite(cfg: &RunConfig, out: &mut Run) -> Result<(), CliError> {
    let markets = match &cfg.market {
        Some(_) => vec![cfg.market()?],
        None => shipped_schedules()?,
    };
    let s = &cfg.solver;
    let mut reports = Vec::with_capacity(s.lemma_seeds);
    let mut table = Table::new(Schema::Validation, 5 * s.lemma_seeds);
    for k in 0..s.lemma_seeds as u64 {
        let seed = s.seed + k;
        let rep = covariance_bounds_suite(&markets, s.lemma_draws, seed)?;
        let param = format!("seed={seed}");
        let mut row = |check: &str, estimate: f64| {
            table.push(vec![
                check.into(),
                Cell::Empty,
                param.as_str().into(),
                Cell::Num(f64::NAN),
                estimate.into(),
                Cell::Num(f64::NAN),
                Cell::Num(f64::NAN),
                rep.draws.into(),
            ]);
        };
        for (part, v) in rep.violations.iter().enumerate() {
            row(&format!("bound_violations_{}", part + 1), *v as f64);
        }
        row("cholesky_increment_ratio", rep.cholesky_increment_ratio);
        row("inverse_diagonal_constant", rep.inverse_diagonal_constant);
        reports.push(rep);
    }
    out.write(&table)?;
    out.note("schedules", markets.len());
    out.note("draws", s.lemma_draws);
    out.note("seeds", s.lemma_seeds);
    out.note("bounds_hold", reports.iter().all(|r| r.bounds_hold()));
    if !reports.is_empty() {
        let (a, b) = seed_spread(&reports);
        out.num("cholesky_ratio_seed_spread", a);
        out.num("inverse_diagonal_seed_spread", b);
    }
    Ok(())
}
