//! Cross-verification of the PDE solvers by Monte Carlo, the lattice
//! oracle, supermartingale diagnostics, P&L optimality, and the two-factor
//! example's closed structure.

use eqprice::equilibrium::{
    evaluate_pnl, extract_strategies, per_path_pnl, verify_supermartingale, MeasureTag,
};
use eqprice::grid::Grid;
use eqprice::heston::{min_y_derivative, switching_report, HestonTypeParams};
use eqprice::mc::{
    estimate_value, lattice_oracle, random_admissible_strategy, simulate, ControlSelector,
    SimConfig,
};
use eqprice::models::{
    build_model, AgentModel, CoefficientField, MarketSpec, Mat, PayoffKind, PayoffSpec,
};
use eqprice::pde::{solve_equilibrium, solve_fundamental, SolverOptions};

fn constant_agent(id: u32, sigma: f64) -> AgentModel<f64> {
    build_model(
        id,
        CoefficientField::Constant {
            drift: vec![0.0],
            sigma: Mat::new(1, 1, vec![sigma]),
        },
    )
    .unwrap()
}

fn butterfly_market() -> MarketSpec<f64> {
    MarketSpec::new(
        vec![constant_agent(1, 0.1), constant_agent(2, 0.3)],
        PayoffSpec::new(PayoffKind::Butterfly {
            center: 1.0,
            half_width: 0.1,
        })
        .unwrap(),
        1.0,
        vec![1.0],
        1.0,
        0.0,
    )
    .unwrap()
}

#[test]
fn fixed_selector_mc_matches_fundamental_pde() {
    let agents = vec![constant_agent(1, 0.2)];
    let payoff = PayoffSpec::new(PayoffKind::Call { strike: 1.0 }).unwrap();
    let grid = Grid::auto(&agents, &[1.0], 1.0, &[401], 400, 6.0).unwrap();
    let s = solve_fundamental(&agents[0], &payoff, &grid, &SolverOptions::implicit()).unwrap();
    let pde = s.value_at(0.0, &[1.0]);
    let cfg = SimConfig::new(40_000, 50, 2024);
    let bundle = simulate(&agents, &ControlSelector::Fixed(1), &[1.0], 1.0, &cfg).unwrap();
    let (mean, se) = estimate_value(&bundle, &payoff);
    assert!(
        (mean - pde).abs() <= 3.0 * se + s.scheme_tolerance,
        "MC {mean} +- {se} vs PDE {pde}"
    );
}

#[test]
fn feedback_control_dominates_fixed_agents() {
    let market = butterfly_market();
    let grid = Grid::auto(&market.agents, &[1.0], 1.0, &[201], 400, 6.0).unwrap();
    let s = solve_equilibrium(&market.agents, &market.payoff, &grid, &SolverOptions::implicit())
        .unwrap();
    let pde = s.value_at(0.0, &[1.0]);
    let cfg = SimConfig::new(40_000, 100, 7);
    let fb = simulate(
        &market.agents,
        &ControlSelector::Feedback(&s),
        &[1.0],
        1.0,
        &cfg,
    )
    .unwrap();
    let (fb_mean, fb_se) = estimate_value(&fb, &market.payoff);
    assert!(
        (fb_mean - pde).abs() <= 3.0 * fb_se + 2.0 * s.scheme_tolerance,
        "feedback MC {fb_mean} +- {fb_se} vs PDE {pde}"
    );
    for agent in &market.agents {
        let fx = simulate(
            &market.agents,
            &ControlSelector::Fixed(agent.id),
            &[1.0],
            1.0,
            &cfg,
        )
        .unwrap();
        let (mean, se) = estimate_value(&fx, &market.payoff);
        let joint = (se * se + fb_se * fb_se).sqrt();
        assert!(
            mean <= fb_mean + 3.0 * joint,
            "fixed agent {} beat the feedback control: {mean} > {fb_mean}",
            agent.id
        );
    }
}

#[test]
fn lattice_oracle_confirms_strict_bubble_gap() {
    let market = butterfly_market();
    let dx = 0.3 * (0.1f64).sqrt() * 1.1;
    let both = lattice_oracle(&market.agents, &market.payoff, 1.0, 1.0, 10, dx).unwrap();
    let v1 = lattice_oracle(&market.agents[..1], &market.payoff, 1.0, 1.0, 10, dx).unwrap();
    let v2 = lattice_oracle(&market.agents[1..], &market.payoff, 1.0, 1.0, 10, dx).unwrap();
    assert!(both >= v1 && both >= v2);
    assert!(
        both - v1.max(v2) > 1e-4,
        "lattice gap {} too small",
        both - v1.max(v2)
    );
}

#[test]
fn supermartingale_diagnostics_pass_and_detect_violations() {
    let market = butterfly_market();
    let grid = Grid::auto(&market.agents, &[1.0], 1.0, &[201], 200, 6.0).unwrap();
    let opts = SolverOptions::implicit();
    let eq = solve_equilibrium(&market.agents, &market.payoff, &grid, &opts).unwrap();
    let report = verify_supermartingale(&eq, &market.agents, 10.0 * eq.residual_tolerance);
    assert!(report.pass, "max drift {}", report.max_drift);
    // The low-vol agent's fundamental surface is not an equilibrium: the
    // high-vol generator is strictly positive where the surface is convex.
    let fund1 = solve_fundamental(&market.agents[0], &market.payoff, &grid, &opts).unwrap();
    let bad = verify_supermartingale(&fund1, &market.agents, 10.0 * fund1.residual_tolerance);
    assert!(!bad.pass);
    assert!(bad.max_drift > 0.0);
    assert_eq!(bad.max_drift_at.0, 2);
}

#[test]
fn no_trade_for_ordered_vols_on_convex_payoff() {
    let agents = vec![constant_agent(1, 0.1), constant_agent(2, 0.3)];
    let payoff = PayoffSpec::new(PayoffKind::Call { strike: 1.0 }).unwrap();
    let market = MarketSpec::new(agents.clone(), payoff.clone(), 1.0, vec![1.0], 1.0, 0.0).unwrap();
    let grid = Grid::auto(&agents, &[1.0], 1.0, &[201], 200, 6.0).unwrap();
    let s = solve_equilibrium(&agents, &payoff, &grid, &SolverOptions::implicit()).unwrap();
    // Agent 2 is a maximizer everywhere; unique maximizers are agent 2.
    for m in 0..s.layers() {
        for node in 0..grid.node_count() {
            let mask = s.maximizer_mask(m, node);
            assert!(mask & 0b10 != 0, "agent 2 not maximal at ({m}, {node})");
        }
    }
    // Equilibrium price equals the high-vol fundamental within tolerance.
    let f2 = solve_fundamental(&agents[1], &payoff, &grid, &SolverOptions::implicit()).unwrap();
    let gap = (s.value_at(0.0, &[1.0]) - f2.value_at(0.0, &[1.0])).abs();
    assert!(gap <= 2.0 * s.scheme_tolerance, "gap {gap}");
    // Simulated feedback paths never force a trade.
    let cfg = SimConfig::new(2_000, 100, 99);
    let mut bundle = simulate(&agents, &ControlSelector::Feedback(&s), &[1.0], 1.0, &cfg).unwrap();
    bundle.annotate(&s, &market).unwrap();
    assert_eq!(bundle.trade_count(), 0);
}

#[test]
fn optimal_strategy_pnl_dominates_random_competitors() {
    let market = butterfly_market();
    let grid = Grid::auto(&market.agents, &[1.0], 1.0, &[201], 200, 6.0).unwrap();
    let s = solve_equilibrium(&market.agents, &market.payoff, &grid, &SolverOptions::implicit())
        .unwrap();
    let profile = extract_strategies(&s, &market).unwrap();
    let _ = &profile;
    let cfg = SimConfig::new(8_000, 100, 31);
    // Under agent 1's own model (the agent whose expectation is taken).
    let mut bundle = simulate(
        &market.agents,
        &ControlSelector::Fixed(1),
        &[1.0],
        1.0,
        &cfg,
    )
    .unwrap();
    bundle.annotate(&s, &market).unwrap();
    let (opt_mean, opt_se) = evaluate_pnl(&bundle, |p, m| bundle.holding(p, m, 0)).unwrap();
    let n = market.n_agents() as f64;
    let (lo, hi) = (-market.short_bound, market.supply + market.short_bound * (n - 1.0));
    let opt_pnls = per_path_pnl(&bundle, |p, m| bundle.holding(p, m, 0));
    for competitor in 0..20u64 {
        let levels = random_admissible_strategy(1234, competitor, 8, cfg.steps, lo, hi);
        let pnls = per_path_pnl(&bundle, |_, m| levels[m]);
        // Joint standard error of the difference on common paths.
        let diffs: Vec<f64> = opt_pnls
            .iter()
            .zip(pnls.iter())
            .map(|(a, b)| a - b)
            .collect();
        let (dmean, dse) = eqprice::equilibrium::mean_se(&diffs);
        assert!(
            dmean >= -3.0 * dse,
            "competitor {competitor} beat the optimal strategy: diff {dmean} +- {dse} \
             (optimal {opt_mean} +- {opt_se})"
        );
    }
}

#[test]
fn constant_strategy_pnl_is_nonpositive_supermartingale() {
    let market = butterfly_market();
    let grid = Grid::auto(&market.agents, &[1.0], 1.0, &[201], 200, 6.0).unwrap();
    let s = solve_equilibrium(&market.agents, &market.payoff, &grid, &SolverOptions::implicit())
        .unwrap();
    let cfg = SimConfig::new(8_000, 100, 5);
    for agent in &market.agents {
        let mut bundle = simulate(
            &market.agents,
            &ControlSelector::Fixed(agent.id),
            &[1.0],
            1.0,
            &cfg,
        )
        .unwrap();
        bundle.annotate(&s, &market).unwrap();
        assert_eq!(bundle.measure, MeasureTag::Agent(agent.id));
        // H = 0 gives exactly zero P&L.
        let (zero_mean, zero_se) = evaluate_pnl(&bundle, |_, _| 0.0).unwrap();
        assert_eq!((zero_mean, zero_se), (0.0, 0.0));
        // Constant H = 1: Z is a supermartingale under each agent's model.
        let (mean, se) = evaluate_pnl(&bundle, |_, _| 1.0).unwrap();
        assert!(mean <= 3.0 * se, "agent {} drift {mean} +- {se}", agent.id);
    }
}

#[test]
fn heston_demo_three_way_price_agreement() {
    let params = HestonTypeParams::<f64>::default_demo();
    let market = params.market().unwrap();
    let grid = Grid::auto(&market.agents, &market.x0, 1.0, &[81, 81], 80, 6.0).unwrap();
    let s = solve_equilibrium(&market.agents, &market.payoff, &grid, &SolverOptions::implicit())
        .unwrap();
    let pde = s.value_at(0.0, &market.x0);
    let qcfg = SimConfig::new(40_000, 64, 17);
    let (qmc, qse) = params.quadrature_mc_price(&qcfg).unwrap();
    let fcfg = SimConfig::new(40_000, 100, 23);
    let fb = simulate(
        &market.agents,
        &ControlSelector::Feedback(&s),
        &market.x0,
        1.0,
        &fcfg,
    )
    .unwrap();
    let (fmc, fse) = estimate_value(&fb, &market.payoff);
    let tol = 2.0 * s.scheme_tolerance;
    let pairs = [
        ("pde-qmc", (pde - qmc).abs(), 3.0 * qse),
        ("pde-fmc", (pde - fmc).abs(), 3.0 * fse),
        (
            "qmc-fmc",
            (qmc - fmc).abs(),
            3.0 * (qse * qse + fse * fse).sqrt(),
        ),
    ];
    for (name, gap, se_bound) in pairs {
        assert!(
            gap <= se_bound.max(tol),
            "{name} gap {gap} exceeds max({se_bound}, {tol})"
        );
    }
}

#[test]
fn heston_switching_geometry_monotonicity_and_trades() {
    let params = HestonTypeParams::<f64>::default_demo();
    let market = params.market().unwrap();
    let grid = Grid::auto(&market.agents, &market.x0, 1.0, &[81, 81], 80, 6.0).unwrap();
    // y_bar must sit on a node (odd count, symmetric bounds around y0 = y_bar).
    assert_eq!(grid.axes[1].coord(40), params.y_bar);
    let s = solve_equilibrium(&market.agents, &market.payoff, &grid, &SolverOptions::implicit())
        .unwrap();
    let report = switching_report(&s, &params);
    assert!(report.checked > 0);
    assert_eq!(
        report.mismatches, 0,
        "{} of {} checked nodes mismatch",
        report.mismatches, report.checked
    );
    let min_dy = min_y_derivative(&s);
    assert!(
        min_dy >= -10.0 * s.scheme_tolerance,
        "min dv/dy {min_dy} vs tolerance {}",
        s.scheme_tolerance
    );
    // Paths started on the switching level trade with positive probability.
    let cfg = SimConfig::new(10_000, 50, 41);
    let mut bundle = simulate(
        &market.agents,
        &ControlSelector::Feedback(&s),
        &market.x0,
        1.0,
        &cfg,
    )
    .unwrap();
    bundle.annotate(&s, &market).unwrap();
    assert!(bundle.trade_count() > 0);
}

#[test]
fn heston_y_mean_reverts_to_level() {
    let params = HestonTypeParams::<f64>::default_demo();
    let agents = params.agents().unwrap();
    let cfg = SimConfig::new(20_000, 50, 13);
    let bundle = simulate(&agents, &ControlSelector::Fixed(1), &[1.0, 0.0], 1.0, &cfg).unwrap();
    let terminal_y: Vec<f64> = (0..cfg.paths)
        .map(|p| bundle.state(p, cfg.steps)[1])
        .collect();
    let (mean, se) = eqprice::equilibrium::mean_se(&terminal_y);
    assert!(
        (mean - params.y_bar).abs() <= 3.0 * se,
        "terminal Y mean {mean} +- {se}"
    );
}
