//! Agent belief models: drift/diffusion coefficient fields, payoff
//! specifications, market definitions, and numerical regularity checks.

use crate::error::{Error, Result};
use crate::scalar::{half, lit, Real};

/// Behaviour when a tabulated coefficient field is queried outside its table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutOfDomain {
    #[default]
    Clamp,
    Reject,
}

/// Small dense row-major matrix used for diffusion coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn diag(entries: &[T]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for (i, &e) in entries.iter().enumerate() {
            m.data[i * n + i] = e;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    /// `self * self^T`, the diffusion product sigma sigma^T.
    pub fn gram(&self) -> Mat<T> {
        let mut out = Mat::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in 0..self.rows {
                let mut s = T::zero();
                for l in 0..self.cols {
                    s += self.get(i, l) * self.get(j, l);
                }
                out.data[i * self.rows + j] = s;
            }
        }
        out
    }

    /// Smallest eigenvalue; implemented for the 1x1 and 2x2 symmetric cases.
    pub fn min_eigenvalue_sym(&self) -> T {
        match self.rows {
            1 => self.data[0],
            2 => {
                let (a, b, c) = (self.get(0, 0), self.get(0, 1), self.get(1, 1));
                let tr = a + c;
                let disc = ((a - c) * (a - c) + lit::<T>(4.0) * b * b).sqrt();
                half::<T>() * (tr - disc)
            }
            _ => panic!("min_eigenvalue_sym: only d <= 2 supported"),
        }
    }
}

/// Affine function of one variable clipped to `[lo, hi]`; the parametric form
/// used for the mean-reverting family's `alpha` and `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClippedAffine<T> {
    pub intercept: T,
    pub slope: T,
    pub lo: T,
    pub hi: T,
}

impl<T: Real> ClippedAffine<T> {
    pub fn new(intercept: T, slope: T, lo: T, hi: T) -> Result<Self> {
        if !(lo > T::zero()) {
            return Err(Error::InvalidModel(format!(
                "clipped affine lower bound must be positive, got {lo}"
            )));
        }
        if !(hi >= lo) {
            return Err(Error::InvalidModel(format!(
                "clipped affine bounds must satisfy lo <= hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            intercept,
            slope,
            lo,
            hi,
        })
    }

    pub fn constant(value: T) -> Result<Self> {
        Self::new(value, T::zero(), value, value)
    }

    #[inline]
    pub fn eval(&self, y: T) -> T {
        (self.intercept + self.slope * y).max(self.lo).min(self.hi)
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.slope >= T::zero()
    }
}

/// One agent's belief about the state dynamics, as a coefficient field.
///
/// Families:
/// * `Constant` — Bachelier-type constant drift vector and diffusion matrix.
/// * `LocalVolTable` — one-dimensional local volatility tabulated over
///   `(t, x)` with bilinear interpolation.
/// * `MeanRevertingVol` — the two-factor model `dS = alpha(Y) dW`,
///   `dY = lambda (y_bar - Y) dt + beta(Y) dW'` with independent noises.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientField<T> {
    Constant {
        drift: Vec<T>,
        sigma: Mat<T>,
    },
    LocalVolTable {
        t_grid: Vec<T>,
        x_grid: Vec<T>,
        /// Row-major `t_grid.len() x x_grid.len()` table of local volatility.
        sigma: Vec<T>,
        drift: T,
        out_of_domain: OutOfDomain,
    },
    MeanRevertingVol {
        alpha: ClippedAffine<T>,
        beta: ClippedAffine<T>,
        lambda: T,
        y_bar: T,
    },
}

impl<T: Real> CoefficientField<T> {
    /// State dimension `d`.
    pub fn state_dim(&self) -> usize {
        match self {
            Self::Constant { drift, .. } => drift.len(),
            Self::LocalVolTable { .. } => 1,
            Self::MeanRevertingVol { .. } => 2,
        }
    }

    /// Driving-noise dimension `d'`.
    pub fn noise_dim(&self) -> usize {
        match self {
            Self::Constant { sigma, .. } => sigma.cols,
            Self::LocalVolTable { .. } => 1,
            Self::MeanRevertingVol { .. } => 2,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Constant { drift, sigma } => {
                if drift.is_empty() || sigma.rows != drift.len() || sigma.cols == 0 {
                    return Err(Error::InvalidModel(
                        "constant family: inconsistent dimensions".into(),
                    ));
                }
                if drift.iter().chain(sigma.data.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidModel(
                        "constant family: non-finite coefficient".into(),
                    ));
                }
            }
            Self::LocalVolTable {
                t_grid,
                x_grid,
                sigma,
                drift,
                ..
            } => {
                if t_grid.len() < 2 || x_grid.len() < 2 {
                    return Err(Error::InvalidModel(
                        "local-vol table needs at least 2 points per axis".into(),
                    ));
                }
                if sigma.len() != t_grid.len() * x_grid.len() {
                    return Err(Error::InvalidModel(
                        "local-vol table size does not match its axes".into(),
                    ));
                }
                if !strictly_increasing(t_grid) || !strictly_increasing(x_grid) {
                    return Err(Error::InvalidModel(
                        "local-vol table axes must be strictly increasing".into(),
                    ));
                }
                if sigma.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
                    return Err(Error::InvalidModel(
                        "local-vol table entries must be finite and nonnegative".into(),
                    ));
                }
                if !drift.is_finite() {
                    return Err(Error::InvalidModel("local-vol drift must be finite".into()));
                }
            }
            Self::MeanRevertingVol {
                alpha,
                beta,
                lambda,
                y_bar,
            } => {
                if !(*lambda > T::zero()) {
                    return Err(Error::InvalidModel(format!(
                        "mean-reverting family requires lambda > 0, got {lambda}"
                    )));
                }
                if !y_bar.is_finite() {
                    return Err(Error::InvalidModel("mean-reversion level must be finite".into()));
                }
                if !alpha.is_nondecreasing() {
                    return Err(Error::InvalidModel(
                        "mean-reverting family requires alpha nondecreasing in y".into(),
                    ));
                }
                // lo > 0 is enforced by ClippedAffine; spot-check positivity on a lattice.
                for m in 0..=16 {
                    let y = *y_bar + lit::<T>(m as f64 - 8.0);
                    if !(alpha.eval(y) > T::zero()) || !(beta.eval(y) > T::zero()) {
                        return Err(Error::InvalidModel(
                            "mean-reverting family requires positive alpha, beta".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Drift vector `b(t, x)`.
    pub fn drift(&self, _t: T, x: &[T]) -> Vec<T> {
        match self {
            Self::Constant { drift, .. } => drift.clone(),
            Self::LocalVolTable { drift, .. } => vec![*drift],
            Self::MeanRevertingVol { lambda, y_bar, .. } => {
                vec![T::zero(), *lambda * (*y_bar - x[1])]
            }
        }
    }

    /// Diffusion matrix `sigma(t, x)` of shape `d x d'`.
    pub fn sigma(&self, t: T, x: &[T]) -> Mat<T> {
        match self {
            Self::Constant { sigma, .. } => sigma.clone(),
            Self::LocalVolTable {
                t_grid,
                x_grid,
                sigma,
                ..
            } => {
                let v = bilinear(t_grid, x_grid, sigma, t, x[0]);
                Mat::new(1, 1, vec![v])
            }
            Self::MeanRevertingVol { alpha, beta, .. } => {
                Mat::diag(&[alpha.eval(x[1]), beta.eval(x[1])])
            }
        }
    }

    /// `sigma sigma^T (t, x)`, symmetric positive semidefinite of shape `d x d`.
    pub fn diffusion_product(&self, t: T, x: &[T]) -> Mat<T> {
        match self {
            // Diagonal families avoid the general gram product.
            Self::MeanRevertingVol { alpha, beta, .. } => {
                let a = alpha.eval(x[1]);
                let b = beta.eval(x[1]);
                Mat::diag(&[a * a, b * b])
            }
            _ => self.sigma(t, x).gram(),
        }
    }
}

fn strictly_increasing<T: Real>(xs: &[T]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

/// Bilinear interpolation on a rectangular table, clamping outside the axes.
fn bilinear<T: Real>(ts: &[T], xs: &[T], table: &[T], t: T, x: T) -> T {
    let (it, wt) = bracket(ts, t);
    let (ix, wx) = bracket(xs, x);
    let nx = xs.len();
    let f = |i: usize, j: usize| table[i * nx + j];
    let one = T::one();
    (one - wt) * ((one - wx) * f(it, ix) + wx * f(it, ix + 1))
        + wt * ((one - wx) * f(it + 1, ix) + wx * f(it + 1, ix + 1))
}

/// Index and weight of the cell containing `v`, clamped to the axis range.
fn bracket<T: Real>(axis: &[T], v: T) -> (usize, T) {
    let n = axis.len();
    if v <= axis[0] {
        return (0, T::zero());
    }
    if v >= axis[n - 1] {
        return (n - 2, T::one());
    }
    let mut i = match axis.partition_point(|a| *a <= v) {
        0 => 0,
        p => p - 1,
    };
    if i > n - 2 {
        i = n - 2;
    }
    let w = (v - axis[i]) / (axis[i + 1] - axis[i]);
    (i, w)
}

/// One agent: an identifier and a belief model.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel<T> {
    pub id: u32,
    pub coefficients: CoefficientField<T>,
}

/// Builds an agent model, validating the family parameters.
pub fn build_model<T: Real>(id: u32, coefficients: CoefficientField<T>) -> Result<AgentModel<T>> {
    coefficients.validate()?;
    Ok(AgentModel { id, coefficients })
}

/// Evaluates an agent's coefficients: `(b_i(t,x), sigma_i sigma_i^T(t,x))`.
pub fn eval_coefficients<T: Real>(model: &AgentModel<T>, t: T, x: &[T]) -> (Vec<T>, Mat<T>) {
    (
        model.coefficients.drift(t, x),
        model.coefficients.diffusion_product(t, x),
    )
}

/// Payoff function evaluated on one state coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum PayoffKind<T> {
    Call { strike: T },
    Put { strike: T },
    /// Long one unit at `center -+ half_width`, short two at `center`.
    Butterfly { center: T, half_width: T },
    /// Piecewise-linear interpolation of `(x, f(x))` points, extrapolated
    /// linearly with the end slopes.
    Table { points: Vec<(T, T)> },
    Identity,
    Constant { level: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayoffSpec<T> {
    pub kind: PayoffKind<T>,
    /// Index of the state coordinate the payoff reads; 0 by default.
    pub coordinate: usize,
}

/// Canonical form `f(u) = intercept + slope * u + sum_j jump_j * (u - kink_j)+`.
///
/// Every supported payoff is piecewise linear, and this form makes Gaussian
/// expectations of the payoff exact (each kink term is a Bachelier call).
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearForm<T> {
    pub intercept: T,
    pub slope: T,
    pub kinks: Vec<(T, T)>,
}

impl<T: Real> PiecewiseLinearForm<T> {
    pub fn eval(&self, u: T) -> T {
        let mut v = self.intercept + self.slope * u;
        for &(kink, jump) in &self.kinks {
            if u > kink {
                v += jump * (u - kink);
            }
        }
        v
    }
}

impl<T: Real> PayoffSpec<T> {
    pub fn new(kind: PayoffKind<T>) -> Result<Self> {
        Self::on_coordinate(kind, 0)
    }

    pub fn on_coordinate(kind: PayoffKind<T>, coordinate: usize) -> Result<Self> {
        match &kind {
            PayoffKind::Butterfly { half_width, .. } => {
                if !(*half_width > T::zero()) {
                    return Err(Error::InvalidModel(
                        "butterfly half-width must be positive".into(),
                    ));
                }
            }
            PayoffKind::Table { points } => {
                if points.len() < 2 {
                    return Err(Error::InvalidModel(
                        "piecewise-linear payoff needs at least 2 points".into(),
                    ));
                }
                if !points.windows(2).all(|w| w[0].0 < w[1].0) {
                    return Err(Error::InvalidModel(
                        "piecewise-linear payoff abscissae must be strictly increasing".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(Self { kind, coordinate })
    }

    /// Evaluates the payoff on a state vector.
    pub fn eval(&self, x: &[T]) -> T {
        self.as_piecewise_linear().eval(x[self.coordinate])
    }

    /// Polynomial growth bound `(c, p)` with `|f(x)| <= c (1 + |x|^p)`.
    pub fn growth_bound(&self) -> (T, u32) {
        let pl = self.as_piecewise_linear();
        let total_slope: T = pl
            .kinks
            .iter()
            .map(|&(_, j)| j.abs())
            .fold(pl.slope.abs(), |a, b| a + b);
        let kink_span: T = pl
            .kinks
            .iter()
            .map(|&(kink, _)| kink.abs())
            .fold(T::zero(), |a, b| a.max(b));
        (
            pl.intercept.abs() + total_slope * (T::one() + kink_span) + T::one(),
            1,
        )
    }

    /// Canonical piecewise-linear decomposition of the payoff.
    pub fn as_piecewise_linear(&self) -> PiecewiseLinearForm<T> {
        let one = T::one();
        match &self.kind {
            PayoffKind::Call { strike } => PiecewiseLinearForm {
                intercept: T::zero(),
                slope: T::zero(),
                kinks: vec![(*strike, one)],
            },
            PayoffKind::Put { strike } => PiecewiseLinearForm {
                intercept: *strike,
                slope: -one,
                kinks: vec![(*strike, one)],
            },
            PayoffKind::Butterfly { center, half_width } => PiecewiseLinearForm {
                intercept: T::zero(),
                slope: T::zero(),
                kinks: vec![
                    (*center - *half_width, one),
                    (*center, -lit::<T>(2.0)),
                    (*center + *half_width, one),
                ],
            },
            PayoffKind::Table { points } => {
                let slopes: Vec<T> = points
                    .windows(2)
                    .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
                    .collect();
                let slope0 = slopes[0];
                let intercept = points[0].1 - slope0 * points[0].0;
                let kinks = points[1..points.len() - 1]
                    .iter()
                    .zip(slopes.windows(2))
                    .map(|(&(x, _), s)| (x, s[1] - s[0]))
                    .collect();
                PiecewiseLinearForm {
                    intercept,
                    slope: slope0,
                    kinks,
                }
            }
            PayoffKind::Identity => PiecewiseLinearForm {
                intercept: T::zero(),
                slope: one,
                kinks: vec![],
            },
            PayoffKind::Constant { level } => PiecewiseLinearForm {
                intercept: *level,
                slope: T::zero(),
                kinks: vec![],
            },
        }
    }
}

/// The market: agents, payoff, horizon, initial state, supply, short bound.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSpec<T> {
    pub agents: Vec<AgentModel<T>>,
    pub payoff: PayoffSpec<T>,
    pub horizon: T,
    pub x0: Vec<T>,
    pub supply: T,
    pub short_bound: T,
}

impl<T: Real> MarketSpec<T> {
    pub fn new(
        agents: Vec<AgentModel<T>>,
        payoff: PayoffSpec<T>,
        horizon: T,
        x0: Vec<T>,
        supply: T,
        short_bound: T,
    ) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidMarket("at least one agent is required".into()));
        }
        for (i, a) in agents.iter().enumerate() {
            if a.id != i as u32 + 1 {
                return Err(Error::InvalidMarket(
                    "agent ids must be distinct and contiguous from 1".into(),
                ));
            }
        }
        let d = agents[0].coefficients.state_dim();
        if agents.iter().any(|a| a.coefficients.state_dim() != d) {
            return Err(Error::InvalidMarket(
                "all agents must share the state dimension".into(),
            ));
        }
        if x0.len() != d {
            return Err(Error::InvalidMarket(format!(
                "initial state has dimension {}, expected {d}",
                x0.len()
            )));
        }
        if payoff.coordinate >= d {
            return Err(Error::InvalidMarket(
                "payoff coordinate exceeds the state dimension".into(),
            ));
        }
        if !(horizon > T::zero()) {
            return Err(Error::InvalidMarket("horizon must be positive".into()));
        }
        if !(supply >= T::zero()) || !(short_bound >= T::zero()) {
            return Err(Error::InvalidMarket(
                "supply and short bound must be nonnegative".into(),
            ));
        }
        if !(supply + short_bound > T::zero()) {
            return Err(Error::InvalidMarket(
                "a market requires s0 + k > 0".into(),
            ));
        }
        Ok(Self {
            agents,
            payoff,
            horizon,
            x0,
            supply,
            short_bound,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn state_dim(&self) -> usize {
        self.agents[0].coefficients.state_dim()
    }
}

/// Rectangular sample lattice for regularity checks.
#[derive(Debug, Clone)]
pub struct SampleLattice<T> {
    pub times: Vec<T>,
    pub axes: Vec<Vec<T>>,
}

impl<T: Real> SampleLattice<T> {
    pub fn new(horizon: T, bounds: &[(T, T)], points_per_axis: usize, time_points: usize) -> Self {
        assert!(points_per_axis >= 2 && time_points >= 2);
        let linspace = |lo: T, hi: T, n: usize| -> Vec<T> {
            (0..n)
                .map(|i| lo + (hi - lo) * lit::<T>(i as f64 / (n - 1) as f64))
                .collect()
        };
        Self {
            times: linspace(T::zero(), horizon, time_points),
            axes: bounds
                .iter()
                .map(|&(lo, hi)| linspace(lo, hi, points_per_axis))
                .collect(),
        }
    }

    fn points(&self) -> Vec<Vec<T>> {
        let mut pts = vec![vec![]];
        for axis in &self.axes {
            let mut next = Vec::with_capacity(pts.len() * axis.len());
            for p in &pts {
                for &v in axis {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
            pts = next;
        }
        pts
    }
}

/// Outcome of the numerical regularity check of one agent model.
#[derive(Debug, Clone)]
pub struct RegularityReport<T> {
    pub min_eigenvalue: T,
    pub lipschitz_drift: T,
    pub lipschitz_sigma: T,
    pub elliptic: bool,
    pub threshold: T,
}

/// Default ellipticity threshold: strictly positive, far below any realistic
/// volatility floor.
pub fn default_ellipticity_threshold<T: Real>() -> T {
    lit(1e-6)
}

/// Scans a sample lattice for the minimum eigenvalue of `sigma sigma^T` and
/// finite-difference Lipschitz estimates of `b` and `sigma` in `x`.
pub fn validate_regularity<T: Real>(
    model: &AgentModel<T>,
    lattice: &SampleLattice<T>,
    threshold: T,
) -> RegularityReport<T> {
    let pts = lattice.points();
    let mut min_eig = T::infinity();
    let mut lip_b = T::zero();
    let mut lip_s = T::zero();
    for &t in &lattice.times {
        let evals: Vec<(Vec<T>, Mat<T>)> = pts
            .iter()
            .map(|x| (model.coefficients.drift(t, x), model.coefficients.sigma(t, x)))
            .collect();
        for (x, (_, _)) in pts.iter().zip(evals.iter()) {
            let a = model.coefficients.diffusion_product(t, x);
            min_eig = min_eig.min(a.min_eigenvalue_sym());
        }
        for (i, xi) in pts.iter().enumerate() {
            for (j, xj) in pts.iter().enumerate().skip(i + 1) {
                // Compare only lattice neighbours (differ in one coordinate).
                let diffs: Vec<usize> = (0..xi.len()).filter(|&c| xi[c] != xj[c]).collect();
                if diffs.len() != 1 {
                    continue;
                }
                let dist = (xi[diffs[0]] - xj[diffs[0]]).abs();
                let db = evals[i]
                    .0
                    .iter()
                    .zip(evals[j].0.iter())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>()
                    .sqrt();
                let ds = evals[i]
                    .1
                    .data
                    .iter()
                    .zip(evals[j].1.data.iter())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>()
                    .sqrt();
                lip_b = lip_b.max(db / dist);
                lip_s = lip_s.max(ds / dist);
            }
        }
    }
    RegularityReport {
        min_eigenvalue: min_eig,
        lipschitz_drift: lip_b,
        lipschitz_sigma: lip_s,
        elliptic: min_eig >= threshold,
        threshold,
    }
}
