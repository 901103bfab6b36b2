//! Uniform space-time grids for the finite-difference solvers.

use crate::error::{Error, Result};
use crate::models::{AgentModel, CoefficientField};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct Axis<T> {
    pub lo: T,
    pub hi: T,
    pub nodes: usize,
}

impl<T: Real> Axis<T> {
    pub fn spacing(&self) -> T {
        (self.hi - self.lo) / lit::<T>((self.nodes - 1) as f64)
    }

    pub fn coord(&self, i: usize) -> T {
        self.lo + self.spacing() * lit::<T>(i as f64)
    }

    /// Index of the node closest to `v`, clamped to the axis.
    pub fn nearest(&self, v: T) -> usize {
        let w = ((v - self.lo) / self.spacing()).round();
        let w = w.max(T::zero()).min(lit::<T>((self.nodes - 1) as f64));
        w.as_f64() as usize
    }
}

/// Discretization of `[0, T] x [lo, hi]^d`: uniform spacing per axis,
/// `time_steps` backward-induction steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub axes: Vec<Axis<T>>,
    pub time_steps: usize,
    pub horizon: T,
}

impl<T: Real> Grid<T> {
    pub fn new(axes: Vec<Axis<T>>, time_steps: usize, horizon: T) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidGrid(
                "only state dimensions 1 and 2 are supported".into(),
            ));
        }
        for (j, a) in axes.iter().enumerate() {
            if !(a.lo < a.hi) {
                return Err(Error::InvalidGrid(format!(
                    "axis {j}: bounds [{}, {}] are not increasing",
                    a.lo, a.hi
                )));
            }
            if a.nodes < 3 {
                return Err(Error::InvalidGrid(format!(
                    "axis {j}: at least 3 nodes required"
                )));
            }
        }
        if time_steps < 1 {
            return Err(Error::InvalidGrid("at least 1 time step required".into()));
        }
        if !(horizon > T::zero()) {
            return Err(Error::InvalidGrid("horizon must be positive".into()));
        }
        Ok(Self {
            axes,
            time_steps,
            horizon,
        })
    }

    /// Derives spatial bounds from the agents' diffusion scale: `L` standard
    /// deviations around the initial state (mean-reverting axes use the
    /// stationary standard deviation of the slowest agent).
    ///
    /// Bounds are symmetric around `x0`, so with an odd node count `x0` sits
    /// exactly on a node.
    pub fn auto(
        agents: &[AgentModel<T>],
        x0: &[T],
        horizon: T,
        nodes_per_axis: &[usize],
        time_steps: usize,
        deviations: T,
    ) -> Result<Self> {
        let d = agents[0].coefficients.state_dim();
        if nodes_per_axis.len() != d || x0.len() != d {
            return Err(Error::InvalidGrid(
                "auto grid: dimension mismatch between agents, x0 and node counts".into(),
            ));
        }
        let half_widths = auto_half_widths(agents, horizon, deviations)?;
        let axes = (0..d)
            .map(|j| Axis {
                lo: x0[j] - half_widths[j],
                hi: x0[j] + half_widths[j],
                nodes: nodes_per_axis[j],
            })
            .collect();
        Self::new(axes, time_steps, horizon)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    pub fn dt(&self) -> T {
        self.horizon / lit::<T>(self.time_steps as f64)
    }

    pub fn time(&self, m: usize) -> T {
        self.dt() * lit::<T>(m as f64)
    }

    /// Multi-index of a flat node index (row-major, last axis fastest).
    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        match self.axes.len() {
            1 => [node, 0],
            _ => {
                let n1 = self.axes[1].nodes;
                [node / n1, node % n1]
            }
        }
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        match self.axes.len() {
            1 => idx[0],
            _ => idx[0] * self.axes[1].nodes + idx[1],
        }
    }

    pub fn node_coords(&self, node: usize) -> Vec<T> {
        let mi = self.multi_index(node);
        self.axes
            .iter()
            .enumerate()
            .map(|(j, a)| a.coord(mi[j]))
            .collect()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let mi = self.multi_index(node);
        self.axes
            .iter()
            .enumerate()
            .any(|(j, a)| mi[j] == 0 || mi[j] == a.nodes - 1)
    }

    /// Flat index of the grid node nearest to `x` (componentwise clamp).
    pub fn nearest_node(&self, x: &[T]) -> usize {
        let idx: Vec<usize> = self
            .axes
            .iter()
            .zip(x.iter())
            .map(|(a, &v)| a.nearest(v))
            .collect();
        self.flat_index(&idx)
    }

    /// Time layer nearest to `t` (clamped to `[0, M]`).
    pub fn nearest_layer(&self, t: T) -> usize {
        let m = (t / self.dt()).round().max(T::zero());
        (m.as_f64() as usize).min(self.time_steps)
    }

    pub fn contains_interior(&self, x: &[T]) -> bool {
        self.axes
            .iter()
            .zip(x.iter())
            .all(|(a, &v)| a.lo < v && v < a.hi)
    }
}

fn auto_half_widths<T: Real>(
    agents: &[AgentModel<T>],
    horizon: T,
    deviations: T,
) -> Result<Vec<T>> {
    let d = agents[0].coefficients.state_dim();
    let all_mean_reverting = agents
        .iter()
        .all(|a| matches!(a.coefficients, CoefficientField::MeanRevertingVol { .. }));
    if all_mean_reverting {
        // y-axis: stationary deviation beta_max / sqrt(2 lambda_min);
        // s-axis: alpha evaluated at the top of the y-range.
        let mut beta_max = T::zero();
        let mut lambda_min = T::infinity();
        let mut y_bar0 = T::zero();
        for a in &agents[0..] {
            if let CoefficientField::MeanRevertingVol {
                beta,
                lambda,
                y_bar,
                ..
            } = &a.coefficients
            {
                beta_max = beta_max.max(beta.hi);
                lambda_min = lambda_min.min(*lambda);
                y_bar0 = *y_bar;
            }
        }
        let wy = deviations * beta_max / (lit::<T>(2.0) * lambda_min).sqrt();
        let mut alpha_max = T::zero();
        for a in agents {
            if let CoefficientField::MeanRevertingVol { alpha, .. } = &a.coefficients {
                alpha_max = alpha_max.max(alpha.eval(y_bar0 + wy));
            }
        }
        let ws = deviations * alpha_max * horizon.sqrt();
        return Ok(vec![ws, wy]);
    }
    if d != 1 {
        return Err(Error::InvalidGrid(
            "auto grid bounds are implemented for d=1 and the mean-reverting 2-factor family"
                .into(),
        ));
    }
    let mut sigma_max = T::zero();
    let mut drift_max = T::zero();
    for a in agents {
        match &a.coefficients {
            CoefficientField::Constant { drift, sigma } => {
                sigma_max = sigma_max.max(sigma.gram().get(0, 0).sqrt());
                drift_max = drift_max.max(drift[0].abs());
            }
            CoefficientField::LocalVolTable { sigma, drift, .. } => {
                for &s in sigma {
                    sigma_max = sigma_max.max(s);
                }
                drift_max = drift_max.max(drift.abs());
            }
            CoefficientField::MeanRevertingVol { .. } => unreachable!(),
        }
    }
    Ok(vec![
        deviations * sigma_max * horizon.sqrt() + drift_max * horizon,
    ])
}
