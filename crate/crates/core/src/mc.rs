//! Monte Carlo and lattice verification: Euler-Maruyama simulation under
//! fixed or feedback controls, value estimation, and a small-instance
//! trinomial dynamic-programming oracle.

use rayon::prelude::*;

use crate::equilibrium::{mean_se, MeasureTag, PathBundle};
use crate::error::{Error, Result};
use crate::models::{AgentModel, PayoffSpec};
use crate::pde::ValueSurface;
use crate::scalar::{lit, Real};

/// Simulation configuration.
#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl SimConfig {
    pub fn new(paths: usize, steps: usize, seed: u64) -> Self {
        Self {
            paths,
            steps,
            seed,
            antithetic: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.paths < 1 || self.steps < 1 {
            return Err(Error::InvalidModel(
                "simulation needs at least 1 path and 1 step".into(),
            ));
        }
        Ok(())
    }
}

// --- counter-based normal variates ---------------------------------------
//
// Draws are a pure function of (seed, path, step, draw), so paths can be
// generated in parallel in any order and still reproduce bit-identically.

#[inline]
fn mix64(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[inline]
fn counter_hash(seed: u64, path: u64, step: u64, draw: u64) -> u64 {
    mix64(seed ^ mix64(path ^ mix64(step ^ mix64(draw))))
}

#[inline]
fn to_open_unit(bits: u64) -> f64 {
    // (0, 1]: safe for the logarithm in Box-Muller.
    ((bits >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

/// Standard normal pair keyed by `(seed, path, step, pair)`.
pub fn normal_pair(seed: u64, path: u64, step: u64, pair: u64) -> (f64, f64) {
    let h1 = counter_hash(seed, path, step, 2 * pair);
    let h2 = counter_hash(seed, path, step, 2 * pair + 1);
    let u1 = to_open_unit(h1);
    let u2 = to_open_unit(h2);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Fills `out` with standard normals for one `(seed, path, step)`.
pub fn standard_normals<T: Real>(seed: u64, path: u64, step: u64, out: &mut [T]) {
    let mut pair = 0u64;
    let mut i = 0;
    while i < out.len() {
        let (z0, z1) = normal_pair(seed, path, step, pair);
        out[i] = lit(z0);
        i += 1;
        if i < out.len() {
            out[i] = lit(z1);
            i += 1;
        }
        pair += 1;
    }
}

/// Uniform draw in `[lo, hi)` keyed by `(seed, path, step, draw)`; used for
/// random admissible competitor strategies.
pub fn uniform_in<T: Real>(seed: u64, path: u64, step: u64, draw: u64, lo: T, hi: T) -> T {
    let u = (counter_hash(seed, path, step, draw) >> 11) as f64 * (1.0 / 9007199254740992.0);
    lo + (hi - lo) * lit::<T>(u)
}

/// Which agent's dynamics drive the simulated state at each step.
#[derive(Debug, Clone, Copy)]
pub enum ControlSelector<'a, T> {
    /// A single agent's model throughout.
    Fixed(u32),
    /// The maximizer field of a solved surface, read at the nearest grid
    /// node and layer with smallest-index tie-break.
    Feedback(&'a ValueSurface<T>),
}

/// Euler-Maruyama simulation of the (possibly controlled) SDE. The selector
/// is evaluated at the left endpoint of each step (predictability).
pub fn simulate<T: Real>(
    agents: &[AgentModel<T>],
    selector: &ControlSelector<'_, T>,
    x0: &[T],
    horizon: T,
    cfg: &SimConfig,
) -> Result<PathBundle<T>> {
    cfg.validate()?;
    let d = agents[0].coefficients.state_dim();
    if x0.len() != d {
        return Err(Error::InvalidModel("x0 dimension mismatch".into()));
    }
    let measure = match selector {
        ControlSelector::Fixed(id) => {
            if !agents.iter().any(|a| a.id == *id) {
                return Err(Error::AgentMismatch(format!("no agent with id {id}")));
            }
            MeasureTag::Agent(*id)
        }
        ControlSelector::Feedback(surface) => {
            let ids: Vec<u32> = agents.iter().map(|a| a.id).collect();
            if surface.agent_ids != ids {
                return Err(Error::SurfaceCoverage(
                    "surface agents do not match the simulated agents".into(),
                ));
            }
            if surface.grid.horizon < horizon - lit::<T>(1e-12) {
                return Err(Error::SurfaceCoverage(format!(
                    "surface horizon {} < simulation horizon {horizon}",
                    surface.grid.horizon
                )));
            }
            MeasureTag::Feedback
        }
    };
    let steps = cfg.steps;
    let dt = horizon / lit::<T>(steps as f64);
    let sqrt_dt = dt.sqrt();
    let times: Vec<T> = (0..=steps).map(|m| dt * lit::<T>(m as f64)).collect();
    let dp = agents
        .iter()
        .map(|a| a.coefficients.noise_dim())
        .max()
        .unwrap();

    let mut states = vec![T::zero(); cfg.paths * (steps + 1) * d];
    states
        .par_chunks_mut((steps + 1) * d)
        .enumerate()
        .for_each(|(p, chunk)| {
            let (key, sign) = if cfg.antithetic {
                ((p / 2) as u64, if p % 2 == 1 { -T::one() } else { T::one() })
            } else {
                (p as u64, T::one())
            };
            let mut x = x0.to_vec();
            let mut xi = vec![T::zero(); dp];
            chunk[..d].copy_from_slice(&x);
            for m in 0..steps {
                let t = times[m];
                let agent = match selector {
                    ControlSelector::Fixed(id) => {
                        agents.iter().find(|a| a.id == *id).unwrap()
                    }
                    ControlSelector::Feedback(surface) => {
                        let layer = surface.grid.nearest_layer(t);
                        let node = surface.grid.nearest_node(&x);
                        let id = surface.representative_maximizer(layer, node);
                        agents.iter().find(|a| a.id == id).unwrap()
                    }
                };
                let b = agent.coefficients.drift(t, &x);
                let sigma = agent.coefficients.sigma(t, &x);
                standard_normals(cfg.seed, key, m as u64, &mut xi);
                for j in 0..d {
                    let mut dx = b[j] * dt;
                    for (l, &z) in xi.iter().enumerate().take(sigma.cols) {
                        dx += sigma.get(j, l) * sqrt_dt * sign * z;
                    }
                    x[j] += dx;
                }
                chunk[(m + 1) * d..(m + 2) * d].copy_from_slice(&x);
            }
        });

    Ok(PathBundle {
        seed: cfg.seed,
        measure,
        n_paths: cfg.paths,
        dim: d,
        times,
        states,
        z: Vec::new(),
        holdings: Vec::new(),
        representatives: Vec::new(),
        masks: Vec::new(),
        n_agents: agents.len(),
    })
}

/// Sample mean and standard error of the terminal payoff.
pub fn estimate_value<T: Real>(bundle: &PathBundle<T>, payoff: &PayoffSpec<T>) -> (T, T) {
    let steps = bundle.steps();
    let terminal: Vec<T> = (0..bundle.n_paths)
        .map(|p| payoff.eval(bundle.state(p, steps)))
        .collect();
    mean_se(&terminal)
}

/// Random admissible competitor strategy: piecewise constant on `pieces`
/// coarse intervals, values uniform in `[lo, hi]`, keyed by
/// `(seed, strategy_index)`. Returns per-step holdings.
pub fn random_admissible_strategy<T: Real>(
    seed: u64,
    strategy_index: u64,
    pieces: usize,
    steps: usize,
    lo: T,
    hi: T,
) -> Vec<T> {
    let levels: Vec<T> = (0..pieces)
        .map(|j| uniform_in(seed ^ 0x5eed_c0de, strategy_index, j as u64, 0, lo, hi))
        .collect();
    (0..steps)
        .map(|m| levels[(m * pieces) / steps])
        .collect()
}

/// Exact dynamic-programming oracle on a shared recombining trinomial
/// lattice: per node, the one-step expectation is maximized over agents
/// with per-agent moment-matched branch probabilities.
///
/// Only one-dimensional states are supported, and the step count is capped
/// so the oracle stays a brute-force desk check.
pub fn lattice_oracle<T: Real>(
    agents: &[AgentModel<T>],
    payoff: &PayoffSpec<T>,
    x0: T,
    horizon: T,
    steps: usize,
    increment: T,
) -> Result<T> {
    if agents.iter().any(|a| a.coefficients.state_dim() != 1) {
        return Err(Error::Unsupported(
            "lattice oracle supports one-dimensional states only".into(),
        ));
    }
    if steps == 0 || steps > 12 {
        return Err(Error::Unsupported(
            "lattice oracle is limited to 1..=12 steps".into(),
        ));
    }
    if !(increment > T::zero()) {
        return Err(Error::InvalidModel("lattice increment must be positive".into()));
    }
    let dt = horizon / lit::<T>(steps as f64);
    let j = steps as i64;
    let node_x = |off: i64| x0 + increment * lit::<T>(off as f64);
    let mut values: Vec<T> = (-j..=j).map(|o| payoff.eval(&[node_x(o)])).collect();
    for m in (0..steps).rev() {
        let t = dt * lit::<T>(m as f64);
        let width = 2 * m as i64 + 1;
        let mut next = vec![T::neg_infinity(); width as usize];
        for (i, off) in (-(m as i64)..=m as i64).enumerate() {
            let x = node_x(off);
            for agent in agents {
                let b = agent.coefficients.drift(t, &[x])[0];
                let var = agent.coefficients.diffusion_product(t, &[x]).get(0, 0);
                let m1 = b * dt / increment;
                let m2 = (var * dt + b * dt * b * dt) / (increment * increment);
                let pu = (m2 + m1) * lit::<T>(0.5);
                let pd = (m2 - m1) * lit::<T>(0.5);
                let pm = T::one() - m2;
                for (name, p) in [("up", pu), ("mid", pm), ("down", pd)] {
                    let _ = name;
                    if !(p >= T::zero() && p <= T::one()) {
                        return Err(Error::InvalidBranch {
                            step: m,
                            increment: increment.as_f64(),
                            probability: p.as_f64(),
                        });
                    }
                }
                // values is indexed over offsets -(m+1)..=(m+1).
                let e = pu * values[i + 2] + pm * values[i + 1] + pd * values[i];
                next[i] = next[i].max(e);
            }
        }
        values = next;
    }
    Ok(values[0])
}
