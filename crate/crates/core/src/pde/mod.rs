//! Finite-difference solvers for the linear fundamental-value PDE and the
//! nonlinear equilibrium PDE with per-node maximization over agents.

mod stencil;

pub use stencil::{build_stencil, tie_mask, LayerCoeffs, Stencil};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::models::{AgentModel, PayoffSpec};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Euler-forward in backward time; subject to a CFL bound.
    #[default]
    Explicit,
    /// Fully implicit (theta = 1) with policy iteration per time step.
    Implicit,
}

#[derive(Debug, Clone)]
pub struct SolverOptions<T> {
    pub scheme: Scheme,
    /// Relative tie tolerance for maximizer sets.
    pub tie_tolerance: T,
    pub policy_max_iterations: usize,
    /// Gauss-Seidel sweep cap for the 2-D implicit solve.
    pub max_sweeps: usize,
    /// Parallelize intra-layer node updates of the explicit scheme.
    pub parallel: bool,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            scheme: Scheme::Explicit,
            tie_tolerance: lit(1e-9),
            policy_max_iterations: 50,
            max_sweeps: 50_000,
            parallel: true,
        }
    }
}

impl<T: Real> SolverOptions<T> {
    pub fn implicit() -> Self {
        Self {
            scheme: Scheme::Implicit,
            ..Self::default()
        }
    }
}

/// Solved value surface: all time layers, per-node maximizer sets, and the
/// tolerances implied by the scheme.
///
/// Drift fields `mu_i` are derived on demand by [`drift_field`]; layer `m`
/// of a drift field uses the backward time difference `(v[m+1] - v[m]) / dt`
/// and the spatial generator on the layer the scheme evaluated (layer `m+1`
/// for the explicit scheme, `m` for the implicit one), so an equilibrium
/// surface satisfies `max_i mu_i = 0` up to the stated residual tolerance.
#[derive(Debug, Clone)]
pub struct ValueSurface<T> {
    pub grid: Grid<T>,
    pub agent_ids: Vec<u32>,
    pub scheme: Scheme,
    /// A-priori discretization error scale `(dt + sum dx_j^2) * (1 + max|f|)`.
    pub scheme_tolerance: T,
    /// Bound on the drift residual `|max_i mu_i|` achievable by the scheme.
    pub residual_tolerance: T,
    values: Vec<T>,
    maximizers: Vec<u32>,
}

impl<T: Real> ValueSurface<T> {
    pub fn agent_count(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn layers(&self) -> usize {
        self.grid.time_steps + 1
    }

    pub fn layer(&self, m: usize) -> &[T] {
        let n = self.grid.node_count();
        &self.values[m * n..(m + 1) * n]
    }

    pub fn value(&self, m: usize, node: usize) -> T {
        self.values[m * self.grid.node_count() + node]
    }

    pub fn maximizer_mask(&self, m: usize, node: usize) -> u32 {
        self.maximizers[m * self.grid.node_count() + node]
    }

    /// Agent ids attaining the nodewise maximum, within the tie tolerance.
    pub fn maximizer_set(&self, m: usize, node: usize) -> Vec<u32> {
        let mask = self.maximizer_mask(m, node);
        self.agent_ids
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &id)| id)
            .collect()
    }

    /// Smallest-index representative maximizer.
    pub fn representative_maximizer(&self, m: usize, node: usize) -> u32 {
        let mask = self.maximizer_mask(m, node);
        debug_assert!(mask != 0);
        self.agent_ids[mask.trailing_zeros() as usize]
    }

    pub fn values_raw(&self) -> &[T] {
        &self.values
    }

    pub fn maximizers_raw(&self) -> &[u32] {
        &self.maximizers
    }

    /// Reassembles a surface from its raw parts (binary import path).
    pub fn from_raw(
        grid: Grid<T>,
        agent_ids: Vec<u32>,
        scheme: Scheme,
        scheme_tolerance: T,
        residual_tolerance: T,
        values: Vec<T>,
        maximizers: Vec<u32>,
    ) -> Result<Self> {
        let expect = (grid.time_steps + 1) * grid.node_count();
        if values.len() != expect || maximizers.len() != expect {
            return Err(Error::MalformedSurface(format!(
                "expected {expect} values, got {} / {}",
                values.len(),
                maximizers.len()
            )));
        }
        Ok(Self {
            grid,
            agent_ids,
            scheme,
            scheme_tolerance,
            residual_tolerance,
            values,
            maximizers,
        })
    }

    /// Multilinear interpolation of the surface at `(t, x)`; clamps to the
    /// grid domain.
    pub fn value_at(&self, t: T, x: &[T]) -> T {
        let dt = self.grid.dt();
        let m_raw = t / dt;
        let m0 = m_raw
            .floor()
            .max(T::zero())
            .min(lit::<T>((self.grid.time_steps - 1) as f64));
        let m0u = m0.as_f64() as usize;
        let wt = (m_raw - m0).max(T::zero()).min(T::one());
        let v0 = self.space_interp(m0u, x);
        let v1 = self.space_interp(m0u + 1, x);
        (T::one() - wt) * v0 + wt * v1
    }

    fn space_interp(&self, m: usize, x: &[T]) -> T {
        let layer = self.layer(m);
        let g = &self.grid;
        let mut cells = [(0usize, T::zero()); 2];
        for (j, axis) in g.axes.iter().enumerate() {
            let dx = axis.spacing();
            let r = (x[j] - axis.lo) / dx;
            let i = r
                .floor()
                .max(T::zero())
                .min(lit::<T>((axis.nodes - 2) as f64));
            let w = (r - i).max(T::zero()).min(T::one());
            cells[j] = (i.as_f64() as usize, w);
        }
        match g.dim() {
            1 => {
                let (i, w) = cells[0];
                (T::one() - w) * layer[i] + w * layer[i + 1]
            }
            _ => {
                let (i, wi) = cells[0];
                let (j, wj) = cells[1];
                let at = |a: usize, b: usize| layer[g.flat_index(&[a, b])];
                let one = T::one();
                (one - wi) * ((one - wj) * at(i, j) + wj * at(i, j + 1))
                    + wi * ((one - wj) * at(i + 1, j) + wj * at(i + 1, j + 1))
            }
        }
    }

    /// First spatial derivative along `axis` (central in the interior,
    /// one-sided second order at the boundary).
    pub fn gradient(&self, m: usize, node: usize, axis: usize) -> T {
        let g = &self.grid;
        let layer = self.layer(m);
        let mi = g.multi_index(node);
        let n = g.axes[axis].nodes;
        let dx = g.axes[axis].spacing();
        let s = if axis == 0 && g.dim() == 2 {
            g.axes[1].nodes
        } else {
            1
        };
        let i = mi[axis];
        let two = lit::<T>(2.0);
        if i > 0 && i < n - 1 {
            (layer[node + s] - layer[node - s]) / (two * dx)
        } else if i == 0 {
            (-lit::<T>(3.0) * layer[node] + lit::<T>(4.0) * layer[node + s]
                - layer[node + 2 * s])
                / (two * dx)
        } else {
            (lit::<T>(3.0) * layer[node] - lit::<T>(4.0) * layer[node - s]
                + layer[node - 2 * s])
                / (two * dx)
        }
    }

    /// Second spatial derivative along `axis` at an interior node.
    pub fn second_derivative(&self, m: usize, node: usize, axis: usize) -> T {
        let g = &self.grid;
        let layer = self.layer(m);
        let mi = g.multi_index(node);
        debug_assert!(mi[axis] > 0 && mi[axis] < g.axes[axis].nodes - 1);
        let dx = g.axes[axis].spacing();
        let s = if axis == 0 && g.dim() == 2 {
            g.axes[1].nodes
        } else {
            1
        };
        (layer[node + s] - lit::<T>(2.0) * layer[node] + layer[node - s]) / (dx * dx)
    }

    /// Largest deviation of the terminal layer from the payoff (0 by
    /// construction).
    pub fn terminal_residual(&self, payoff: &PayoffSpec<T>) -> T {
        let g = &self.grid;
        (0..g.node_count())
            .map(|n| (self.value(g.time_steps, n) - payoff.eval(&g.node_coords(n))).abs())
            .fold(T::zero(), |a, b| a.max(b))
    }
}

/// Solves the linear fundamental-value PDE of one agent.
pub fn solve_fundamental<T: Real>(
    agent: &AgentModel<T>,
    payoff: &PayoffSpec<T>,
    grid: &Grid<T>,
    options: &SolverOptions<T>,
) -> Result<ValueSurface<T>> {
    solve_equilibrium(std::slice::from_ref(agent), payoff, grid, options)
}

/// Solves the nonlinear equilibrium PDE: backward induction with a per-node
/// maximum of the Bellman generator over agents.
pub fn solve_equilibrium<T: Real>(
    agents: &[AgentModel<T>],
    payoff: &PayoffSpec<T>,
    grid: &Grid<T>,
    options: &SolverOptions<T>,
) -> Result<ValueSurface<T>> {
    if agents.is_empty() {
        return Err(Error::InvalidMarket("no agents".into()));
    }
    if agents.len() > 32 {
        return Err(Error::Unsupported("more than 32 agents".into()));
    }
    let d = grid.dim();
    if agents.iter().any(|a| a.coefficients.state_dim() != d) {
        return Err(Error::AgentMismatch(
            "agent state dimension does not match the grid".into(),
        ));
    }
    let nodes = grid.node_count();
    let layers = grid.time_steps + 1;
    let dt = grid.dt();
    let mut values = vec![T::zero(); layers * nodes];
    let mut maximizers = vec![0u32; layers * nodes];

    let mut fmax = T::zero();
    for node in 0..nodes {
        let v = payoff.eval(&grid.node_coords(node));
        values[grid.time_steps * nodes + node] = v;
        fmax = fmax.max(v.abs());
    }
    let vscale = T::one() + fmax;
    let dx2_sum: T = grid
        .axes
        .iter()
        .map(|a| a.spacing() * a.spacing())
        .sum();
    let scheme_tolerance = (dt + dx2_sum) * vscale;
    let residual_tolerance = match options.scheme {
        Scheme::Explicit => lit::<T>(1e-11).max(T::epsilon() * lit(64.0)) * vscale / dt,
        Scheme::Implicit => T::epsilon() * lit::<T>(1e6) * vscale / dt,
    };

    // Terminal-layer maximizer sets from the terminal values.
    {
        let coeffs: Vec<LayerCoeffs<T>> = agents
            .iter()
            .map(|a| LayerCoeffs::sample(a, grid, grid.horizon))
            .collect();
        let term_layer = &values[grid.time_steps * nodes..];
        for node in 0..nodes {
            let gs: Vec<T> = coeffs
                .iter()
                .map(|c| build_stencil(grid, node, c).apply(term_layer))
                .collect();
            maximizers[grid.time_steps * nodes + node] = tie_mask(&gs, options.tie_tolerance);
        }
    }

    for m in (0..grid.time_steps).rev() {
        let (head, tail) = values.split_at_mut((m + 1) * nodes);
        let prev = &tail[..nodes];
        let cur = &mut head[m * nodes..];
        let mask_out = &mut maximizers[m * nodes..(m + 1) * nodes];
        match options.scheme {
            Scheme::Explicit => {
                let t_eval = grid.time(m + 1);
                let coeffs: Vec<LayerCoeffs<T>> = agents
                    .iter()
                    .map(|a| LayerCoeffs::sample(a, grid, t_eval))
                    .collect();
                explicit_step(grid, &coeffs, dt, prev, cur, mask_out, options)?;
            }
            Scheme::Implicit => {
                let t_eval = grid.time(m);
                let coeffs: Vec<LayerCoeffs<T>> = agents
                    .iter()
                    .map(|a| LayerCoeffs::sample(a, grid, t_eval))
                    .collect();
                implicit_step(grid, &coeffs, dt, prev, cur, mask_out, options, vscale)?;
            }
        }
    }

    Ok(ValueSurface {
        grid: grid.clone(),
        agent_ids: agents.iter().map(|a| a.id).collect(),
        scheme: options.scheme,
        scheme_tolerance,
        residual_tolerance,
        values,
        maximizers,
    })
}

fn explicit_step<T: Real>(
    grid: &Grid<T>,
    coeffs: &[LayerCoeffs<T>],
    dt: T,
    prev: &[T],
    cur: &mut [T],
    mask_out: &mut [u32],
    options: &SolverOptions<T>,
) -> Result<()> {
    let nodes = grid.node_count();
    // CFL: the update 1 + dt * w_center must stay nonnegative at every node.
    let mut w_center_max = T::zero();
    for node in 0..nodes {
        for c in coeffs {
            let w = -build_stencil(grid, node, c).weight_of(node);
            w_center_max = w_center_max.max(w);
        }
    }
    if dt * w_center_max > T::one() {
        let required = (grid.horizon * w_center_max).as_f64().ceil() as usize;
        return Err(Error::CflViolation {
            steps: grid.time_steps,
            required,
        });
    }
    let update = |node: usize| -> (T, u32) {
        let gs: Vec<T> = coeffs
            .iter()
            .map(|c| build_stencil(grid, node, c).apply(prev))
            .collect();
        let gmax = gs.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        (prev[node] + dt * gmax, tie_mask(&gs, options.tie_tolerance))
    };
    if options.parallel {
        cur.par_iter_mut()
            .zip(mask_out.par_iter_mut())
            .enumerate()
            .for_each(|(node, (v, mask))| {
                let (nv, m) = update(node);
                *v = nv;
                *mask = m;
            });
    } else {
        for node in 0..nodes {
            let (nv, m) = update(node);
            cur[node] = nv;
            mask_out[node] = m;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn implicit_step<T: Real>(
    grid: &Grid<T>,
    coeffs: &[LayerCoeffs<T>],
    dt: T,
    prev: &[T],
    cur: &mut [T],
    mask_out: &mut [u32],
    options: &SolverOptions<T>,
    vscale: T,
) -> Result<()> {
    let nodes = grid.node_count();
    let n_agents = coeffs.len();
    let stencils: Vec<Vec<Stencil<T>>> = coeffs
        .iter()
        .map(|c| (0..nodes).map(|n| build_stencil(grid, n, c)).collect())
        .collect();
    let argmax = |v: &[T]| -> Vec<u8> {
        (0..nodes)
            .map(|node| {
                let mut best = 0usize;
                let mut gbest = stencils[0][node].apply(v);
                for (i, agent_stencils) in stencils.iter().enumerate().skip(1) {
                    let g = agent_stencils[node].apply(v);
                    if g > gbest {
                        gbest = g;
                        best = i;
                    }
                }
                best as u8
            })
            .collect()
    };
    let policy_tol = lit::<T>(1e-10).max(T::epsilon() * lit(1e3)) * vscale;
    let mut policy = argmax(prev);
    let mut v = prev.to_vec();
    let mut converged = false;
    for _it in 0..options.policy_max_iterations {
        let v_before = v.clone();
        solve_linear(grid, &stencils, &policy, dt, prev, &mut v, options, vscale)?;
        let new_policy = argmax(&v);
        let change = v
            .iter()
            .zip(v_before.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), |a, b| a.max(b));
        let stable = new_policy == policy;
        policy = new_policy;
        if stable || change < policy_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::PolicyIterationDiverged {
            max_iterations: options.policy_max_iterations,
        });
    }
    for node in 0..nodes {
        let gs: Vec<T> = (0..n_agents)
            .map(|i| stencils[i][node].apply(&v))
            .collect();
        mask_out[node] = tie_mask(&gs, options.tie_tolerance);
    }
    cur.copy_from_slice(&v);
    Ok(())
}

/// Solves `(I - dt W_policy) v = rhs`: Thomas in 1-D, Gauss-Seidel in 2-D.
#[allow(clippy::too_many_arguments)]
fn solve_linear<T: Real>(
    grid: &Grid<T>,
    stencils: &[Vec<Stencil<T>>],
    policy: &[u8],
    dt: T,
    rhs: &[T],
    v: &mut [T],
    options: &SolverOptions<T>,
    vscale: T,
) -> Result<()> {
    let nodes = grid.node_count();
    if grid.dim() == 1 {
        // Tridiagonal by construction.
        let mut lower = vec![T::zero(); nodes];
        let mut diag = vec![T::zero(); nodes];
        let mut upper = vec![T::zero(); nodes];
        for node in 0..nodes {
            let st = &stencils[policy[node] as usize][node];
            diag[node] = T::one() - dt * st.weight_of(node);
            if node > 0 {
                lower[node] = -dt * st.weight_of(node - 1);
            }
            if node < nodes - 1 {
                upper[node] = -dt * st.weight_of(node + 1);
            }
        }
        let mut cp = vec![T::zero(); nodes];
        let mut dp = vec![T::zero(); nodes];
        cp[0] = upper[0] / diag[0];
        dp[0] = rhs[0] / diag[0];
        for i in 1..nodes {
            let m = diag[i] - lower[i] * cp[i - 1];
            cp[i] = upper[i] / m;
            dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / m;
        }
        v[nodes - 1] = dp[nodes - 1];
        for i in (0..nodes - 1).rev() {
            v[i] = dp[i] - cp[i] * v[i + 1];
        }
        return Ok(());
    }
    // 2-D: Gauss-Seidel with the 9-point stencil, warm-started from `v`.
    let tol = T::epsilon() * lit::<T>(1e3) * vscale;
    let mut centers = vec![T::zero(); nodes];
    let mut offs: Vec<Vec<(usize, T)>> = Vec::with_capacity(nodes);
    for node in 0..nodes {
        let st = &stencils[policy[node] as usize][node];
        centers[node] = T::one() - dt * st.weight_of(node);
        let mut row = Vec::with_capacity(st.len);
        for i in 0..st.len {
            if st.idx[i] != node && st.w[i] != T::zero() {
                row.push((st.idx[i], -dt * st.w[i]));
            }
        }
        offs.push(row);
    }
    for sweep in 0..options.max_sweeps {
        let mut change = T::zero();
        for node in 0..nodes {
            let mut s = rhs[node];
            for &(j, w) in &offs[node] {
                s -= w * v[j];
            }
            let nv = s / centers[node];
            change = change.max((nv - v[node]).abs());
            v[node] = nv;
        }
        if change < tol {
            return Ok(());
        }
        if sweep == options.max_sweeps - 1 {
            return Err(Error::LinearSolverDiverged {
                max_sweeps: options.max_sweeps,
                residual: change.as_f64(),
            });
        }
    }
    Ok(())
}

/// Recomputes per-node maximizer sets from a solved surface.
pub fn argmax_field<T: Real>(
    surface: &ValueSurface<T>,
    agents: &[AgentModel<T>],
    tie_tolerance: T,
) -> Vec<u32> {
    let grid = &surface.grid;
    let nodes = grid.node_count();
    let mut out = vec![0u32; surface.layers() * nodes];
    for m in 0..surface.layers() {
        let eval_layer = eval_layer_for(surface, m);
        let t = grid.time(eval_layer);
        let coeffs: Vec<LayerCoeffs<T>> = agents
            .iter()
            .map(|a| LayerCoeffs::sample(a, grid, t))
            .collect();
        let layer = surface.layer(eval_layer);
        for node in 0..nodes {
            let gs: Vec<T> = coeffs
                .iter()
                .map(|c| build_stencil(grid, node, c).apply(layer))
                .collect();
            out[m * nodes + node] = tie_mask(&gs, tie_tolerance);
        }
    }
    out
}

/// Layer on which the scheme evaluated the generator when stamping layer `m`.
fn eval_layer_for<T: Real>(surface: &ValueSurface<T>, m: usize) -> usize {
    match surface.scheme {
        Scheme::Explicit => (m + 1).min(surface.grid.time_steps),
        Scheme::Implicit => m,
    }
}

/// Per-node drift field `mu_i` of one agent on layers `0..M`.
#[derive(Debug, Clone)]
pub struct DriftField<T> {
    pub layers: usize,
    pub nodes: usize,
    pub values: Vec<T>,
}

impl<T: Real> DriftField<T> {
    pub fn value(&self, m: usize, node: usize) -> T {
        self.values[m * self.nodes + node]
    }
}

/// Computes `mu_i(t, x) = d_t v + b_i . grad v + 1/2 tr[a_i D^2 v]` using the
/// scheme's own stencils, so that the solved surface has residual ~0.
pub fn drift_field<T: Real>(surface: &ValueSurface<T>, agent: &AgentModel<T>) -> DriftField<T> {
    let grid = &surface.grid;
    let nodes = grid.node_count();
    let m_layers = grid.time_steps;
    let dt = grid.dt();
    let mut values = vec![T::zero(); m_layers * nodes];
    for m in 0..m_layers {
        let eval_layer = eval_layer_for(surface, m);
        let coeffs = LayerCoeffs::sample(agent, grid, grid.time(eval_layer));
        let layer = surface.layer(eval_layer);
        let (cur, next) = (surface.layer(m), surface.layer(m + 1));
        for node in 0..nodes {
            let g = build_stencil(grid, node, &coeffs).apply(layer);
            values[m * nodes + node] = (next[node] - cur[node]) / dt + g;
        }
    }
    DriftField {
        layers: m_layers,
        nodes,
        values,
    }
}
