//! Numerical tolerances and solver knobs shared by every analysis.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Slack allowed on utility and benefit comparisons.
    pub value: f64,
    /// Convergence threshold on per-owner action changes.
    pub action: f64,
    /// Resolution of every price search.
    pub price: f64,
    /// Relative |S - D| slack when declaring a price market-clearing.
    pub clearing_rel: f64,
    /// Largest grid improvement accepted by equilibrium verification.
    pub verify: f64,
    /// Grid resolution used for verification inside the solver.
    pub verify_grid: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            value: 1e-9,
            action: 1e-9,
            price: 1e-6,
            clearing_rel: 1e-4,
            verify: 1e-4,
            verify_grid: 201,
        }
    }
}

impl Tolerances {
    pub fn clearing(&self, demand: f64) -> f64 {
        self.clearing_rel * demand.max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Initial damping factor of the simultaneous best-response scheme.
    pub damping: f64,
    /// Damping is never halved below this value.
    pub damping_floor: f64,
    /// Iterations without progress before the damping is halved.
    pub stall_window: usize,
    pub max_iterations: usize,
    /// Bisection steps used by the owner best response.
    pub response_steps: usize,
    /// Verify every converged equilibrium on a grid.
    pub verify: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            damping: 0.5,
            damping_floor: 1.0 / 64.0,
            stall_window: 50,
            max_iterations: 10_000,
            response_steps: 64,
            verify: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub tolerances: Tolerances,
    pub solver: SolverSettings,
}
