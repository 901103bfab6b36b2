//! JSON run configuration (versioned `schema: 1`) and its conversion into
//! the library's domain types.

use serde::{Deserialize, Serialize};

use eqprice::grid::{Axis, Grid};
use eqprice::models::{
    build_model, AgentModel, ClippedAffine, CoefficientField, MarketSpec, Mat, OutOfDomain,
    PayoffKind, PayoffSpec,
};
use eqprice::mc::SimConfig;
use eqprice::pde::{Scheme, SolverOptions};

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub market: MarketSection,
    pub grid: GridSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub scheme: Option<SchemeName>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub agents: Vec<AgentSection>,
    pub payoff: PayoffSection,
    pub horizon: f64,
    pub x0: Vec<f64>,
    #[serde(default = "one")]
    pub supply: f64,
    #[serde(default)]
    pub short_bound: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSection {
    Constant {
        drift: Vec<f64>,
        /// Row-major `d x d'` diffusion matrix.
        sigma: Vec<Vec<f64>>,
    },
    LocalVolTable {
        t_grid: Vec<f64>,
        x_grid: Vec<f64>,
        /// Row-major `t x x` table.
        sigma: Vec<Vec<f64>>,
        #[serde(default)]
        drift: f64,
        #[serde(default)]
        clamp: bool,
    },
    MeanRevertingVol {
        alpha: ClippedAffineSection,
        beta: ClippedAffineSection,
        lambda: f64,
        y_bar: f64,
    },
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ClippedAffineSection {
    pub intercept: f64,
    #[serde(default)]
    pub slope: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffSection {
    Call {
        strike: f64,
        #[serde(default)]
        coordinate: usize,
    },
    Put {
        strike: f64,
        #[serde(default)]
        coordinate: usize,
    },
    Butterfly {
        center: f64,
        half_width: f64,
        #[serde(default)]
        coordinate: usize,
    },
    Table {
        points: Vec<(f64, f64)>,
        #[serde(default)]
        coordinate: usize,
    },
    Identity {
        #[serde(default)]
        coordinate: usize,
    },
    Constant {
        level: f64,
    },
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Node count per spatial axis.
    pub nodes: Vec<usize>,
    pub time_steps: usize,
    /// Explicit `[lo, hi]` per axis; omitted axes use the auto rule.
    #[serde(default)]
    pub bounds: Option<Vec<[f64; 2]>>,
    /// Half-width of auto bounds in diffusion standard deviations.
    #[serde(default = "six")]
    pub deviations: f64,
}

fn six() -> f64 {
    6.0
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    /// `"feedback"` or an agent id rendered as a string (e.g. `"1"`).
    #[serde(default = "feedback")]
    pub measure: String,
}

fn feedback() -> String {
    "feedback".into()
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            paths: 10_000,
            steps: 100,
            seed: 42,
            antithetic: false,
            measure: feedback(),
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Lattice oracle steps; the oracle runs only when `<= 12` and d = 1.
    pub lattice_steps: usize,
    /// Lattice state increment; 0 selects `1.1 sigma_max sqrt(dt)`.
    #[serde(default)]
    pub lattice_increment: f64,
    /// Number of random admissible competitor strategies for the P&L check.
    pub competitors: usize,
    /// Drift tolerance in units of the scheme residual.
    pub residual_multiplier: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            lattice_steps: 10,
            lattice_increment: 0.0,
            competitors: 50,
            residual_multiplier: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "lower")]
pub enum SchemeName {
    Explicit,
    Implicit,
}

impl From<SchemeName> for Scheme {
    fn from(s: SchemeName) -> Scheme {
        match s {
            SchemeName::Explicit => Scheme::Explicit,
            SchemeName::Implicit => Scheme::Implicit,
        }
    }
}

/// A configuration error carrying context for the exit-code-2 path.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl RunConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))?;
        if cfg.schema != 1 {
            return Err(ConfigError(format!(
                "unsupported schema version {}, expected 1",
                cfg.schema
            )));
        }
        Ok(cfg)
    }

    pub fn agents(&self) -> Result<Vec<AgentModel<f64>>, ConfigError> {
        self.market
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let field = a.to_field()?;
                build_model(i as u32 + 1, field)
                    .map_err(|e| ConfigError(format!("agent {}: {e}", i + 1)))
            })
            .collect()
    }

    pub fn market(&self) -> Result<MarketSpec<f64>, ConfigError> {
        MarketSpec::new(
            self.agents()?,
            self.market.payoff.to_payoff()?,
            self.market.horizon,
            self.market.x0.clone(),
            self.market.supply,
            self.market.short_bound,
        )
        .map_err(|e| ConfigError(e.to_string()))
    }

    pub fn grid(&self, market: &MarketSpec<f64>) -> Result<Grid<f64>, ConfigError> {
        let g = &self.grid;
        let mk = |e: eqprice::Error| ConfigError(e.to_string());
        match &g.bounds {
            Some(bounds) => {
                if bounds.len() != g.nodes.len() {
                    return Err(ConfigError(
                        "grid bounds and node counts have different lengths".into(),
                    ));
                }
                let axes = bounds
                    .iter()
                    .zip(g.nodes.iter())
                    .map(|(&[lo, hi], &nodes)| Axis { lo, hi, nodes })
                    .collect();
                Grid::new(axes, g.time_steps, market.horizon).map_err(mk)
            }
            None => Grid::auto(
                &market.agents,
                &market.x0,
                market.horizon,
                &g.nodes,
                g.time_steps,
                g.deviations,
            )
            .map_err(mk),
        }
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            paths: self.sim.paths,
            steps: self.sim.steps,
            seed: self.sim.seed,
            antithetic: self.sim.antithetic,
        }
    }

    pub fn solver_options(&self, override_scheme: Option<SchemeName>) -> SolverOptions<f64> {
        let scheme = override_scheme
            .or(self.scheme)
            .map(Scheme::from)
            .unwrap_or_default();
        SolverOptions {
            scheme,
            ..SolverOptions::default()
        }
    }
}

impl AgentSection {
    fn to_field(&self) -> Result<CoefficientField<f64>, ConfigError> {
        match self {
            AgentSection::Constant { drift, sigma } => {
                let rows = sigma.len();
                let cols = sigma.first().map_or(0, |r| r.len());
                if sigma.iter().any(|r| r.len() != cols) || rows == 0 || cols == 0 {
                    return Err(ConfigError(
                        "constant agent: sigma must be a rectangular non-empty matrix".into(),
                    ));
                }
                Ok(CoefficientField::Constant {
                    drift: drift.clone(),
                    sigma: Mat::new(rows, cols, sigma.iter().flatten().copied().collect()),
                })
            }
            AgentSection::LocalVolTable {
                t_grid,
                x_grid,
                sigma,
                drift,
                clamp,
            } => {
                let cols = x_grid.len();
                if sigma.len() != t_grid.len() || sigma.iter().any(|r| r.len() != cols) {
                    return Err(ConfigError(
                        "local-vol agent: sigma table shape must be t_grid x x_grid".into(),
                    ));
                }
                Ok(CoefficientField::LocalVolTable {
                    t_grid: t_grid.clone(),
                    x_grid: x_grid.clone(),
                    sigma: sigma.iter().flatten().copied().collect(),
                    drift: *drift,
                    out_of_domain: if *clamp {
                        OutOfDomain::Clamp
                    } else {
                        OutOfDomain::default()
                    },
                })
            }
            AgentSection::MeanRevertingVol {
                alpha,
                beta,
                lambda,
                y_bar,
            } => Ok(CoefficientField::MeanRevertingVol {
                alpha: alpha.to_affine("alpha")?,
                beta: beta.to_affine("beta")?,
                lambda: *lambda,
                y_bar: *y_bar,
            }),
        }
    }
}

impl ClippedAffineSection {
    fn to_affine(&self, name: &str) -> Result<ClippedAffine<f64>, ConfigError> {
        ClippedAffine::new(self.intercept, self.slope, self.lo, self.hi)
            .map_err(|e| ConfigError(format!("{name}: {e}")))
    }
}

impl PayoffSection {
    fn to_payoff(&self) -> Result<PayoffSpec<f64>, ConfigError> {
        let (kind, coordinate) = match self {
            PayoffSection::Call { strike, coordinate } => {
                (PayoffKind::Call { strike: *strike }, *coordinate)
            }
            PayoffSection::Put { strike, coordinate } => {
                (PayoffKind::Put { strike: *strike }, *coordinate)
            }
            PayoffSection::Butterfly {
                center,
                half_width,
                coordinate,
            } => (
                PayoffKind::Butterfly {
                    center: *center,
                    half_width: *half_width,
                },
                *coordinate,
            ),
            PayoffSection::Table { points, coordinate } => (
                PayoffKind::Table {
                    points: points.clone(),
                },
                *coordinate,
            ),
            PayoffSection::Identity { coordinate } => (PayoffKind::Identity, *coordinate),
            PayoffSection::Constant { level } => (PayoffKind::Constant { level: *level }, 0),
        };
        PayoffSpec::on_coordinate(kind, coordinate).map_err(|e| ConfigError(e.to_string()))
    }
}
