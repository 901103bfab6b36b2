//! Equilibrium objects derived from a solved value surface: strategies,
//! market clearing, supermartingale diagnostics, path P&L, and the bubble
//! decomposition.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::models::{AgentModel, MarketSpec};
use crate::pde::{
    build_stencil, solve_equilibrium, solve_fundamental, LayerCoeffs, SolverOptions, ValueSurface,
};
use crate::scalar::{lit, Real};

/// Per-node, per-agent holdings implied by the maximizer field and the
/// supply/short-bound constraints; holdings are derived lazily from the
/// surface's maximizer sets (they are piecewise constant by nature).
#[derive(Debug, Clone, Copy)]
pub struct StrategyProfile<'a, T> {
    pub surface: &'a ValueSurface<T>,
    pub market: &'a MarketSpec<T>,
}

/// The strategy table: maximizers split `s0 + k (n - m)` equally, everyone
/// else sits at the short bound `-k`.
pub fn holdings_from_mask<T: Real>(mask: u32, n_agents: usize, supply: T, short_bound: T) -> Vec<T> {
    let m = mask.count_ones() as usize;
    debug_assert!(m >= 1 && m <= n_agents);
    let long = (supply + short_bound * lit::<T>((n_agents - m) as f64)) / lit::<T>(m as f64);
    (0..n_agents)
        .map(|i| {
            if mask & (1 << i) != 0 {
                long
            } else {
                -short_bound
            }
        })
        .collect()
}

/// Builds the optimal strategy profile from a solved equilibrium surface.
pub fn extract_strategies<'a, T: Real>(
    surface: &'a ValueSurface<T>,
    market: &'a MarketSpec<T>,
) -> Result<StrategyProfile<'a, T>> {
    let ids: Vec<u32> = market.agents.iter().map(|a| a.id).collect();
    if surface.agent_ids != ids {
        return Err(Error::AgentMismatch(format!(
            "surface agents {:?} != market agents {ids:?}",
            surface.agent_ids
        )));
    }
    Ok(StrategyProfile { surface, market })
}

impl<'a, T: Real> StrategyProfile<'a, T> {
    /// Holdings of every agent at `(layer, node)`.
    pub fn holdings(&self, m: usize, node: usize) -> Vec<T> {
        holdings_from_mask(
            self.surface.maximizer_mask(m, node),
            self.market.n_agents(),
            self.market.supply,
            self.market.short_bound,
        )
    }
}

/// Maximum absolute deviation of `sum_i h_i` from the supply over all nodes.
/// Zero exactly for extracted profiles: the formula clears by construction.
pub fn check_clearing<T: Real>(profile: &StrategyProfile<'_, T>) -> T {
    let grid = &profile.surface.grid;
    let mut worst = T::zero();
    for m in 0..profile.surface.layers() {
        for node in 0..grid.node_count() {
            let total: T = profile.holdings(m, node).into_iter().sum();
            worst = worst.max((total - profile.market.supply).abs());
        }
    }
    worst
}

/// Outcome of the supermartingale drift diagnostics.
#[derive(Debug, Clone)]
pub struct SupermartingaleReport<T> {
    /// Largest drift over agents and interior nodes; must stay below the
    /// tolerance (each agent's price process is a supermartingale).
    pub max_drift: T,
    pub max_drift_at: (u32, usize, usize),
    /// Largest deviation of `max_i mu_i` from zero over interior nodes.
    pub sup_deviation: T,
    pub sup_deviation_at: (usize, usize),
    pub tolerance: T,
    pub pass: bool,
}

/// Checks that every agent's drift is nonpositive and the nodewise maximum
/// drift vanishes, both within `tolerance`, on interior nodes.
pub fn verify_supermartingale<T: Real>(
    surface: &ValueSurface<T>,
    agents: &[AgentModel<T>],
    tolerance: T,
) -> SupermartingaleReport<T> {
    let grid = &surface.grid;
    let nodes = grid.node_count();
    let dt = grid.dt();
    let mut max_drift = T::neg_infinity();
    let mut max_drift_at = (0u32, 0usize, 0usize);
    let mut sup_dev = T::zero();
    let mut sup_dev_at = (0usize, 0usize);
    let mut mu = vec![T::zero(); nodes * agents.len()];
    for m in 0..grid.time_steps {
        let eval_layer = match surface.scheme {
            crate::pde::Scheme::Explicit => m + 1,
            crate::pde::Scheme::Implicit => m,
        };
        let layer = surface.layer(eval_layer);
        let (cur, next) = (surface.layer(m), surface.layer(m + 1));
        for (i, agent) in agents.iter().enumerate() {
            let coeffs = LayerCoeffs::sample(agent, grid, grid.time(eval_layer));
            for node in 0..nodes {
                let g = build_stencil(grid, node, &coeffs).apply(layer);
                mu[i * nodes + node] = (next[node] - cur[node]) / dt + g;
            }
        }
        for node in 0..nodes {
            if grid.is_boundary(node) {
                continue;
            }
            let mut sup = T::neg_infinity();
            for (i, agent) in agents.iter().enumerate() {
                let v = mu[i * nodes + node];
                sup = sup.max(v);
                if v > max_drift {
                    max_drift = v;
                    max_drift_at = (agent.id, m, node);
                }
            }
            if sup.abs() > sup_dev {
                sup_dev = sup.abs();
                sup_dev_at = (m, node);
            }
        }
    }
    SupermartingaleReport {
        max_drift,
        max_drift_at,
        sup_deviation: sup_dev,
        sup_deviation_at: sup_dev_at,
        tolerance,
        pass: max_drift <= tolerance && sup_dev <= tolerance,
    }
}

/// Which model generated a path bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureTag {
    /// Simulated under one agent's belief.
    Agent(u32),
    /// Simulated under the feedback control of the maximizer field.
    Feedback,
}

/// Simulated paths of the state, with the induced price path, holdings, and
/// representative maximizers once annotated against a surface.
#[derive(Debug, Clone)]
pub struct PathBundle<T> {
    pub seed: u64,
    pub measure: MeasureTag,
    pub n_paths: usize,
    pub dim: usize,
    /// `steps + 1` times from 0 to the horizon.
    pub times: Vec<T>,
    /// `n_paths x (steps+1) x dim`, path-major.
    pub states: Vec<T>,
    /// Price path `Z(t) = v(t, X(t))`; empty until annotated.
    pub z: Vec<T>,
    /// `n_paths x (steps+1) x n_agents` holdings; empty until annotated.
    pub holdings: Vec<T>,
    /// Representative maximizer id per `(path, step)`; empty until annotated.
    pub representatives: Vec<u32>,
    /// Maximizer bitmask per `(path, step)`; empty until annotated.
    pub masks: Vec<u32>,
    pub n_agents: usize,
}

impl<T: Real> PathBundle<T> {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn state(&self, path: usize, step: usize) -> &[T] {
        let i = (path * self.times.len() + step) * self.dim;
        &self.states[i..i + self.dim]
    }

    pub fn z_at(&self, path: usize, step: usize) -> T {
        self.z[path * self.times.len() + step]
    }

    pub fn holding(&self, path: usize, step: usize, agent_index: usize) -> T {
        self.holdings[(path * self.times.len() + step) * self.n_agents + agent_index]
    }

    /// Fills the price path, holdings, and representative maximizers from an
    /// equilibrium surface. `Z` interpolates the surface multilinearly except
    /// at the horizon, where the exact payoff is used; holdings are read from
    /// the nearest grid node (holdings are piecewise constant, interpolation
    /// would create inadmissible values).
    pub fn annotate(&mut self, surface: &ValueSurface<T>, market: &MarketSpec<T>) -> Result<()> {
        let ids: Vec<u32> = market.agents.iter().map(|a| a.id).collect();
        if surface.agent_ids != ids {
            return Err(Error::AgentMismatch(
                "surface and market agents differ".into(),
            ));
        }
        let steps = self.steps();
        let n = market.n_agents();
        self.n_agents = n;
        self.z = vec![T::zero(); self.n_paths * (steps + 1)];
        self.holdings = vec![T::zero(); self.n_paths * (steps + 1) * n];
        self.representatives = vec![0; self.n_paths * (steps + 1)];
        self.masks = vec![0; self.n_paths * (steps + 1)];
        for p in 0..self.n_paths {
            for m in 0..=steps {
                let t = self.times[m];
                let x = self.state(p, m).to_vec();
                let z = if m == steps {
                    market.payoff.eval(&x)
                } else {
                    surface.value_at(t, &x)
                };
                self.z[p * (steps + 1) + m] = z;
                let layer = surface.grid.nearest_layer(t);
                let node = surface.grid.nearest_node(&x);
                let mask = surface.maximizer_mask(layer, node);
                let h = holdings_from_mask(mask, n, market.supply, market.short_bound);
                for (i, hi) in h.into_iter().enumerate() {
                    self.holdings[(p * (steps + 1) + m) * n + i] = hi;
                }
                self.representatives[p * (steps + 1) + m] =
                    surface.representative_maximizer(layer, node);
                self.masks[p * (steps + 1) + m] = mask;
            }
        }
        Ok(())
    }

    /// Number of forced trade events summed over paths.
    ///
    /// The holder is sticky: it stays with the current agent while that
    /// agent remains in the maximizer set, and a trade is counted only when
    /// the set excludes the holder (ties do not force reallocation; trades
    /// happen exactly where beliefs cross).
    pub fn trade_count(&self) -> usize {
        let steps = self.steps();
        let mut count = 0;
        for p in 0..self.n_paths {
            let mut holder = self.masks[p * (steps + 1)].trailing_zeros();
            for m in 1..=steps {
                let mask = self.masks[p * (steps + 1) + m];
                if mask & (1 << holder) == 0 {
                    holder = mask.trailing_zeros();
                    count += 1;
                }
            }
        }
        count
    }
}

/// Mean and standard error of the per-path P&L `sum_m H(t_m) (Z(t_{m+1}) -
/// Z(t_m))` with left-point (predictable) holdings.
pub fn evaluate_pnl<T: Real>(
    bundle: &PathBundle<T>,
    holdings: impl Fn(usize, usize) -> T,
) -> Result<(T, T)> {
    if bundle.z.is_empty() {
        return Err(Error::Unsupported(
            "bundle has no price path; annotate it against a surface first".into(),
        ));
    }
    let pnls = per_path_pnl(bundle, holdings);
    Ok(mean_se(&pnls))
}

/// Per-path P&L vector (left-point Riemann-Stieltjes sums).
pub fn per_path_pnl<T: Real>(
    bundle: &PathBundle<T>,
    holdings: impl Fn(usize, usize) -> T,
) -> Vec<T> {
    let steps = bundle.steps();
    (0..bundle.n_paths)
        .map(|p| {
            let mut acc = T::zero();
            for m in 0..steps {
                acc += holdings(p, m) * (bundle.z_at(p, m + 1) - bundle.z_at(p, m));
            }
            acc
        })
        .collect()
}

/// Sample mean and standard error.
pub fn mean_se<T: Real>(xs: &[T]) -> (T, T) {
    let n = lit::<T>(xs.len() as f64);
    let mean = xs.iter().copied().sum::<T>() / n;
    if xs.len() < 2 {
        return (mean, T::zero());
    }
    let var = xs
        .iter()
        .map(|&x| (x - mean) * (x - mean))
        .sum::<T>()
        / (n - T::one());
    (mean, (var / n).sqrt())
}

/// Scalar diagnostics of an equilibrium solve.
#[derive(Debug, Clone)]
pub struct EquilibriumDiagnostics<T> {
    pub max_drift: T,
    pub sup_drift_deviation: T,
    pub clearing_residual: T,
    pub terminal_residual: T,
    pub scheme_tolerance: T,
    pub residual_tolerance: T,
}

/// Price, fundamentals, bubble, and diagnostics at the initial state.
#[derive(Debug, Clone)]
pub struct EquilibriumReport<T> {
    pub price: T,
    /// Per-agent fundamental values, in agent order.
    pub fundamentals: Vec<T>,
    /// `price - max_i fundamental_i`: the resale-option value.
    pub bubble: T,
    pub diagnostics: EquilibriumDiagnostics<T>,
}

/// Full output of [`bubble_decomposition`]: the report plus the surfaces it
/// was computed from.
pub struct BubbleDecomposition<T> {
    pub report: EquilibriumReport<T>,
    pub equilibrium: ValueSurface<T>,
    pub fundamentals: Vec<ValueSurface<T>>,
}

/// Runs the equilibrium solve and one linear solve per agent, and assembles
/// the price/bubble report at `(0, x0)`.
pub fn bubble_decomposition<T: Real>(
    market: &MarketSpec<T>,
    grid: &Grid<T>,
    options: &SolverOptions<T>,
) -> Result<BubbleDecomposition<T>> {
    if !grid.contains_interior(&market.x0) {
        return Err(Error::InvalidGrid(
            "initial state must lie strictly inside the grid".into(),
        ));
    }
    let equilibrium = solve_equilibrium(&market.agents, &market.payoff, grid, options)?;
    let fundamentals: Vec<ValueSurface<T>> = market
        .agents
        .iter()
        .map(|a| solve_fundamental(a, &market.payoff, grid, options))
        .collect::<Result<_>>()?;
    let price = equilibrium.value_at(T::zero(), &market.x0);
    let fvals: Vec<T> = fundamentals
        .iter()
        .map(|s| s.value_at(T::zero(), &market.x0))
        .collect();
    let fmax = fvals.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let profile = extract_strategies(&equilibrium, market)?;
    let clearing = check_clearing(&profile);
    let sm = verify_supermartingale(
        &equilibrium,
        &market.agents,
        equilibrium.residual_tolerance,
    );
    let report = EquilibriumReport {
        price,
        fundamentals: fvals,
        bubble: price - fmax,
        diagnostics: EquilibriumDiagnostics {
            max_drift: sm.max_drift,
            sup_drift_deviation: sm.sup_deviation,
            clearing_residual: clearing,
            terminal_residual: equilibrium.terminal_residual(&market.payoff),
            scheme_tolerance: equilibrium.scheme_tolerance,
            residual_tolerance: equilibrium.residual_tolerance,
        },
    };
    Ok(BubbleDecomposition {
        report,
        equilibrium,
        fundamentals,
    })
}
