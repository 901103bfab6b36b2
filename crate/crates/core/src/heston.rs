//! The solvable two-factor stochastic-volatility example: all agents agree
//! on the volatility functions `alpha`, `beta` and the mean-reversion level
//! `y_bar` and differ only in their mean-reversion speeds `lambda_i`.
//!
//! For this family the equilibrium has closed structure: the equilibrium
//! `y`-drift is the upper envelope `gamma(y) = max_i lambda_i (y_bar - y)`,
//! the price is increasing in `y`, the maximizer switches exactly at
//! `y = y_bar`, and the price can be cross-checked by conditioning on the
//! realized variance of the volatility path (the conditional price is an
//! exact Gaussian expectation of the piecewise-linear payoff).

use crate::error::{Error, Result};
use crate::mc::{standard_normals, SimConfig};
use crate::models::{
    build_model, AgentModel, ClippedAffine, CoefficientField, MarketSpec, PayoffKind, PayoffSpec,
    PiecewiseLinearForm,
};
use crate::pde::ValueSurface;
use crate::scalar::{half, lit, Real};

/// Parameters of the two-factor example market.
#[derive(Debug, Clone)]
pub struct HestonTypeParams<T> {
    pub alpha: ClippedAffine<T>,
    pub beta: ClippedAffine<T>,
    /// Mean-reversion speed of agent `i + 1`; all distinct and positive.
    pub lambdas: Vec<T>,
    pub y_bar: T,
    pub payoff: PayoffSpec<T>,
    pub horizon: T,
    pub s0: T,
    pub y0: T,
}

impl<T: Real> HestonTypeParams<T> {
    /// The demo instance: `alpha(y) = clip(0.2 + 0.1 y, 0.05, 1)`,
    /// `beta = 0.3`, speeds `2` and `0.5`, level `y_bar = 0`, at-the-money
    /// call with unit horizon started at `(s, y) = (1, 0)`.
    pub fn default_demo() -> Self {
        Self {
            alpha: ClippedAffine::new(lit(0.2), lit(0.1), lit(0.05), lit(1.0)).unwrap(),
            beta: ClippedAffine::constant(lit(0.3)).unwrap(),
            lambdas: vec![lit(2.0), lit(0.5)],
            y_bar: T::zero(),
            payoff: PayoffSpec::new(PayoffKind::Call { strike: T::one() }).unwrap(),
            horizon: T::one(),
            s0: T::one(),
            y0: T::zero(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() {
            return Err(Error::InvalidModel("at least one speed is required".into()));
        }
        if self.lambdas.iter().any(|l| !(*l > T::zero())) {
            return Err(Error::InvalidModel("speeds must be positive".into()));
        }
        if !self.lambdas.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::InvalidModel(
                "speeds must be strictly decreasing (lambda_1 > lambda_2 > ...)".into(),
            ));
        }
        if !(self.horizon > T::zero()) {
            return Err(Error::InvalidModel("horizon must be positive".into()));
        }
        Ok(())
    }

    /// One [`CoefficientField::MeanRevertingVol`] agent per speed.
    pub fn agents(&self) -> Result<Vec<AgentModel<T>>> {
        self.validate()?;
        self.lambdas
            .iter()
            .enumerate()
            .map(|(i, &lambda)| {
                build_model(
                    i as u32 + 1,
                    CoefficientField::MeanRevertingVol {
                        alpha: self.alpha,
                        beta: self.beta,
                        lambda,
                        y_bar: self.y_bar,
                    },
                )
            })
            .collect()
    }

    /// Market with unit supply and no shorting.
    pub fn market(&self) -> Result<MarketSpec<T>> {
        MarketSpec::new(
            self.agents()?,
            self.payoff.clone(),
            self.horizon,
            vec![self.s0, self.y0],
            T::one(),
            T::zero(),
        )
    }

    /// The equilibrium `y`-drift: the upper envelope of the agents' drifts
    /// (valid because the price is nondecreasing in `y`).
    pub fn gamma_drift(&self, y: T) -> T {
        self.lambdas
            .iter()
            .map(|&l| l * (self.y_bar - y))
            .fold(T::neg_infinity(), |a, b| a.max(b))
    }

    /// Id of the agent whose drift attains the envelope at `y`: the fastest
    /// speed below the level, the slowest above it (any at the level).
    pub fn switching_agent(&self, y: T) -> u32 {
        let pick = |best: fn(T, T) -> bool| {
            let mut idx = 0usize;
            for (i, &l) in self.lambdas.iter().enumerate() {
                if best(l, self.lambdas[idx]) {
                    idx = i;
                }
            }
            idx as u32 + 1
        };
        if y <= self.y_bar {
            pick(|l, cur| l > cur)
        } else {
            pick(|l, cur| l < cur)
        }
    }

    /// Closed-form switching holdings `(h_1, h_2)` of the two-agent example:
    /// the fast-reverting agent holds everything below the level, the slow
    /// one above it, and they split equally on the level.
    pub fn switching_strategy(&self, y: T, market: &MarketSpec<T>) -> Result<Vec<T>> {
        if self.lambdas.len() != 2 || market.n_agents() != 2 {
            return Err(Error::InvalidMarket(
                "switching strategies are defined for the two-agent example".into(),
            ));
        }
        let (s0, k) = (market.supply, market.short_bound);
        let h1 = if y < self.y_bar {
            s0 + k
        } else if y > self.y_bar {
            -k
        } else {
            s0 * half::<T>()
        };
        Ok(vec![h1, s0 - h1])
    }

    /// Exact conditional price given the realized variance
    /// `V = int_0^T alpha(Y_t)^2 dt` of the volatility path.
    pub fn conditional_gaussian_price(&self, variance: T) -> T {
        gaussian_expectation(&self.payoff.as_piecewise_linear(), self.s0, variance.sqrt())
    }

    /// Conditional-quadrature Monte Carlo price: simulates the volatility
    /// factor under the envelope drift `gamma`, integrates `alpha(Y)^2`
    /// along each path, and prices each path by the exact conditional
    /// Gaussian expectation. Returns `(mean, standard error)`.
    pub fn quadrature_mc_price(&self, cfg: &SimConfig) -> Result<(T, T)> {
        self.validate()?;
        if cfg.paths < 2 || cfg.steps < 1 {
            return Err(Error::InvalidModel(
                "quadrature MC needs at least 2 paths and 1 step".into(),
            ));
        }
        let dt = self.horizon / lit::<T>(cfg.steps as f64);
        let sqrt_dt = dt.sqrt();
        use rayon::prelude::*;
        let prices: Vec<T> = (0..cfg.paths)
            .into_par_iter()
            .map(|p| {
                let (key, sign) = if cfg.antithetic {
                    ((p / 2) as u64, if p % 2 == 1 { -T::one() } else { T::one() })
                } else {
                    (p as u64, T::one())
                };
                let mut y = self.y0;
                let mut variance = T::zero();
                let mut xi = [T::zero(); 1];
                for m in 0..cfg.steps {
                    // Trapezoidal accumulation of alpha(Y)^2 over the step.
                    let a0 = self.alpha.eval(y);
                    standard_normals(cfg.seed, key, m as u64, &mut xi);
                    y += self.gamma_drift(y) * dt + self.beta.eval(y) * sqrt_dt * sign * xi[0];
                    let a1 = self.alpha.eval(y);
                    variance += half::<T>() * (a0 * a0 + a1 * a1) * dt;
                }
                self.conditional_gaussian_price(variance)
            })
            .collect();
        Ok(crate::equilibrium::mean_se(&prices))
    }
}

/// Standard normal density.
pub fn normal_pdf<T: Real>(z: T) -> T {
    let inv_sqrt_2pi = lit::<T>(0.3989422804014327);
    inv_sqrt_2pi * (-half::<T>() * z * z).exp()
}

/// Standard normal distribution function via the error function.
pub fn normal_cdf<T: Real>(z: T) -> T {
    let arg = z.as_f64() / std::f64::consts::SQRT_2;
    lit::<T>(0.5 * (1.0 + libm::erf(arg)))
}

/// Bachelier call value `E[(F + s Z - K)+]` with `Z` standard normal.
pub fn bachelier_call<T: Real>(forward: T, strike: T, stdev: T) -> T {
    if stdev <= T::zero() {
        return (forward - strike).max(T::zero());
    }
    let d = (forward - strike) / stdev;
    (forward - strike) * normal_cdf(d) + stdev * normal_pdf(d)
}

/// Exact Gaussian expectation `E[f(mean + stdev Z)]` of a piecewise-linear
/// function: the affine part passes through, each kink is a Bachelier call.
pub fn gaussian_expectation<T: Real>(pl: &PiecewiseLinearForm<T>, mean: T, stdev: T) -> T {
    let mut v = pl.intercept + pl.slope * mean;
    for &(kink, jump) in &pl.kinks {
        v += jump * bachelier_call(mean, kink, stdev);
    }
    v
}

/// Smallest first derivative of the surface in the `y` direction over all
/// layers and nodes; the example's price is nondecreasing in `y`, so this
/// should be nonnegative up to the scheme tolerance.
pub fn min_y_derivative<T: Real>(surface: &ValueSurface<T>) -> T {
    let grid = &surface.grid;
    debug_assert_eq!(grid.dim(), 2);
    let mut worst = T::infinity();
    for m in 0..surface.layers() {
        for node in 0..grid.node_count() {
            worst = worst.min(surface.gradient(m, node, 1));
        }
    }
    worst
}

/// Outcome of the switching-geometry check.
#[derive(Debug, Clone)]
pub struct SwitchingReport {
    /// Interior nodes with a unique maximizer away from the switching level.
    pub checked: usize,
    /// Of those, how many disagree with the closed-form switching rule.
    pub mismatches: usize,
    /// Nodes skipped (boundary, tied maximizers, or within one cell of the
    /// switching level `y_bar`).
    pub skipped: usize,
}

/// Compares the surface's maximizer field with the closed-form rule: the
/// fastest agent maximizes below `y_bar`, the slowest above. Nodes where the
/// discrete generators tie (within the solver's tolerance), boundary nodes,
/// and nodes within one cell of the level are excluded: there the rule is
/// not decided at grid resolution.
pub fn switching_report<T: Real>(
    surface: &ValueSurface<T>,
    params: &HestonTypeParams<T>,
) -> SwitchingReport {
    let grid = &surface.grid;
    let dy = grid.axes[1].spacing();
    let mut checked = 0;
    let mut mismatches = 0;
    let mut skipped = 0;
    // The terminal layer's maximizer field reflects the payoff, not the
    // equilibrium solution; check the solved layers only.
    for m in 0..grid.time_steps {
        for node in 0..grid.node_count() {
            let y = grid.node_coords(node)[1];
            let mask = surface.maximizer_mask(m, node);
            if grid.is_boundary(node)
                || mask.count_ones() != 1
                || (y - params.y_bar).abs() <= dy
            {
                skipped += 1;
                continue;
            }
            checked += 1;
            if surface.representative_maximizer(m, node) != params.switching_agent(y) {
                mismatches += 1;
            }
        }
    }
    SwitchingReport {
        checked,
        mismatches,
        skipped,
    }
}
