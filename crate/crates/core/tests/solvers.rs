use radner_core::mc::{martingale_check, simulate_paths};
use radner_core::model::AnalyticFamily;
use radner_core::picard::{nonlinearity_f, picard_solve, PicardOptions, SolutionField};
use radner_core::riccati::{quadratic_gradient, quadratic_value, riccati_equilibrium, riccati_integrate, RiccatiOptions};
use radner_core::taylor::{dyadic_schedule, example_closed_lambda};
use radner_core::{EndowmentSpec, MarketConfig, Matrix, VolSchedule};

fn cosine(amplitude: f64) -> EndowmentSpec {
    EndowmentSpec::analytic(
        AnalyticFamily::Cosine {
            amplitude,
            wave: vec![1.0],
            phase: 0.3,
        },
        0.0,
    )
    .unwrap()
}

fn two_agents() -> (MarketConfig, Vec<EndowmentSpec>) {
    let c = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.3, 0.8]]).unwrap();
    let m = MarketConfig::new(2, 1, vec![1.0, 2.0], VolSchedule::constant(c), 0.25, 0.5, None).unwrap();
    let g = vec![
        EndowmentSpec::quadratic(0.1, vec![0.5, -0.2], Matrix::from_rows(&[vec![0.1, 0.02], vec![0.02, -0.05]]).unwrap(), 0.0)
            .unwrap(),
        EndowmentSpec::quadratic(-0.2, vec![-0.3, 0.4], Matrix::from_rows(&[vec![-0.05, 0.0], vec![0.0, 0.08]]).unwrap(), 0.0)
            .unwrap(),
    ];
    (m, g)
}

fn example_opts(time_steps: usize, space_points: usize) -> PicardOptions {
    PicardOptions {
        time_steps,
        space_points: Some(space_points),
        ..PicardOptions::default()
    }
}

#[test]
fn picard_residuals_strictly_decrease() {
    let m = MarketConfig::scalar(vec![1.0, 3.0], 1.0, 0.25, 0.5).unwrap();
    let g = [EndowmentSpec::example(0.5, 1, 0.0).unwrap(), cosine(0.5)];
    let (field, _) = picard_solve(&m, &g, 0.25, &example_opts(16, 33)).unwrap();
    let h = &field.residual_history;
    assert!(h.len() >= 3, "{h:?}");
    assert!(h[1..].windows(2).all(|w| w[1] < w[0]), "{h:?}");
}

#[test]
fn halving_grid_spacing_moves_lambda_little() {
    let m = MarketConfig::scalar(vec![1.0], 1.0, 0.25, 0.5).unwrap();
    let g = [cosine(1.0)];
    let (coarse, ec) = picard_solve(&m, &g, 0.25, &example_opts(12, 17)).unwrap();
    let (_, ef) = picard_solve(&m, &g, 0.25, &example_opts(24, 33)).unwrap();
    let tol = coarse.gradient_consistency();
    for y in [-0.4, 0.0, 0.3] {
        let diff = (ec.lambda(0.0, &[y])[0] - ef.lambda(0.0, &[y])[0]).abs();
        assert!(diff < 4.0 * tol, "y={y}: {diff} vs {tol}");
    }
}

/// Max of `|∂_t u + ½c²u_yy − (a/2)c²u_y²|` over interior nodes of a
/// single-agent field, by central differences on the stored values.
fn complete_residual(field: &SolutionField, a: f64, c: f64) -> f64 {
    let t = field.times();
    let y = &field.axes()[0];
    let n = y.len();
    let mut worst = 0.0f64;
    for m in 1..t.len() - 1 {
        for p in n / 4..3 * n / 4 {
            let h = y[p + 1] - y[p];
            let u = |mm: usize, pp: usize| field.u_node(0, mm, pp);
            let ut = (u(m + 1, p) - u(m - 1, p)) / (t[m + 1] - t[m - 1]);
            let uy = (u(m, p + 1) - u(m, p - 1)) / (2.0 * h);
            let uyy = (u(m, p + 1) - 2.0 * u(m, p) + u(m, p - 1)) / (h * h);
            worst = worst.max((ut + 0.5 * c * c * uyy - 0.5 * a * c * c * uy * uy).abs());
        }
    }
    worst
}

#[test]
fn single_agent_field_solves_the_complete_market_pde() {
    let (a, c) = (1.5, 0.8);
    let m = MarketConfig::scalar(vec![a], c, 0.25, 0.5).unwrap();
    let g = [cosine(1.0)];
    let (coarse, _) = picard_solve(&m, &g, 0.25, &example_opts(24, 33)).unwrap();
    let (fine, _) = picard_solve(&m, &g, 0.25, &example_opts(48, 65)).unwrap();
    let rc = complete_residual(&coarse, a, c);
    let rf = complete_residual(&fine, a, c);
    // terms are O(1); the residual is pure discretization error
    assert!(rc < 5e-2 && rf < 0.5 * rc, "{rc} -> {rf}");
}

#[test]
fn riccati_step_halving() {
    let (m, g) = two_agents();
    let tol = 1e-8;
    let coarse = RiccatiOptions {
        atol: tol,
        rtol: tol,
        ..RiccatiOptions::default()
    };
    let fine = RiccatiOptions {
        atol: tol / 10.0,
        rtol: tol / 10.0,
        ..RiccatiOptions::default()
    };
    let p1 = riccati_integrate(&m, &g, 0.25, &coarse).unwrap();
    let p2 = riccati_integrate(&m, &g, 0.25, &fine).unwrap();
    for s in [0.05, 0.125, 0.25] {
        for (x, y) in p1.state_at(s).iter().zip(p2.state_at(s)) {
            assert!((x - y).abs() <= 10.0 * tol, "s={s}: {x} vs {y}");
        }
    }
}

#[test]
fn riccati_values_solve_the_coupled_pde() {
    let (m, g) = two_agents();
    let path = riccati_integrate(&m, &g, 0.25, &RiccatiOptions::default()).unwrap();
    let cct = {
        let c = m.vol().at(0.0);
        c.matmul(&c.transpose())
    };
    let (ht, hy) = (1e-5, 1e-4);
    for &(t, y) in &[(0.05, [0.2, -0.1]), (0.15, [-0.5, 0.7]), (0.2, [1.0, 0.3])] {
        let grads: Vec<Vec<f64>> = (0..2).map(|i| quadratic_gradient(&path, t, &y, i).unwrap()).collect();
        for i in 0..2 {
            let ut = (quadratic_value(&path, t + ht, &y, i).unwrap() - quadratic_value(&path, t - ht, &y, i).unwrap()) / (2.0 * ht);
            let mut trace = 0.0;
            for k in 0..2 {
                let (mut yp, mut ym) = (y.to_vec(), y.to_vec());
                yp[k] += hy;
                ym[k] -= hy;
                let gp = quadratic_gradient(&path, t, &yp, i).unwrap();
                let gm = quadratic_gradient(&path, t, &ym, i).unwrap();
                for l in 0..2 {
                    trace += cct[(l, k)] * (gp[l] - gm[l]) / (2.0 * hy);
                }
            }
            let res = ut + 0.5 * trace + nonlinearity_f(i, &grads, &m, t);
            assert!(res.abs() < 1e-6, "t={t} i={i}: {res}");
        }
    }
}

#[test]
fn simulation_is_identical_across_thread_counts() {
    let (m, g) = two_agents();
    let eq = riccati_equilibrium(&riccati_integrate(&m, &g, 0.25, &RiccatiOptions::default()).unwrap(), &m, &g).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let b = simulate_paths(&m, 0.25, 2000, 20, 11, true).unwrap();
            let rep = martingale_check(&eq, 1, &b);
            (b.y(1999, 20).to_vec(), rep)
        })
    };
    let (y1, r1) = run(1);
    let (y4, r4) = run(4);
    assert_eq!(y1, y4);
    assert_eq!(r1, r4);
}

#[test]
fn antithetic_pairs_reduce_value_increment_variance() {
    let (m, g) = two_agents();
    let eq = riccati_equilibrium(&riccati_integrate(&m, &g, 0.25, &RiccatiOptions::default()).unwrap(), &m, &g).unwrap();
    for i in 0..2 {
        let plain = martingale_check(&eq, i, &simulate_paths(&m, 0.25, 8000, 20, 5, false).unwrap());
        let anti = martingale_check(&eq, i, &simulate_paths(&m, 0.25, 8000, 20, 5, true).unwrap());
        for (p, q) in plain.rows.iter().zip(&anti.rows) {
            let ratio = (q.std_error / p.std_error).powi(2);
            assert!(ratio < 1.0, "investor {i} {}: {ratio}", p.param);
        }
    }
}

#[test]
fn example_lambda_approaches_two_as_maturity_shrinks() {
    let mut last = f64::INFINITY;
    for t in dyadic_schedule(4, 10) {
        let gap = (example_closed_lambda(0.0, 0.0, t, 0.5).unwrap() - 2.0).abs();
        assert!(gap <= last, "T={t}: {gap} > {last}");
        last = gap;
    }
}
