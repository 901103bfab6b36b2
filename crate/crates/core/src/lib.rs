//! Equilibrium derivative pricing among risk-neutral agents with
//! heterogeneous Markovian beliefs.
//!
//! The price solves a nonlinear parabolic PDE whose generator is the
//! nodewise maximum of the agents' Bellman generators; the surplus of the
//! equilibrium price over every agent's fundamental value is the resale
//! option (speculative bubble). This crate provides the finite-difference
//! solvers, strategy extraction and market-clearing diagnostics, Monte Carlo
//! and lattice verification, and the solvable two-factor stochastic
//! volatility example.
//!
//! The numerical core is generic over the scalar type ([`Real`]); `f64`
//! aliases are exported at the crate root.

// Validation deliberately uses negated comparisons (`!(x > 0)`) so that NaN
// inputs fail the check instead of slipping through a `x <= 0` rewrite.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod heston;
pub mod io;
pub mod mc;
pub mod models;
pub mod pde;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` aliases for the main domain types.
pub type AgentModel64 = models::AgentModel<f64>;
pub type MarketSpec64 = models::MarketSpec<f64>;
pub type PayoffSpec64 = models::PayoffSpec<f64>;
pub type CoefficientField64 = models::CoefficientField<f64>;
pub type Grid64 = grid::Grid<f64>;
pub type ValueSurface64 = pde::ValueSurface<f64>;
pub type SolverOptions64 = pde::SolverOptions<f64>;
pub type StrategyProfile64<'a> = equilibrium::StrategyProfile<'a, f64>;
pub type EquilibriumReport64 = equilibrium::EquilibriumReport<f64>;
pub type PathBundle64 = equilibrium::PathBundle<f64>;
pub type SimConfig64 = mc::SimConfig;
pub type HestonTypeParams64 = heston::HestonTypeParams<f64>;
