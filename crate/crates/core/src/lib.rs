//! Equilibrium analysis of two-sided sharing markets.
//!
//! Owners split a unit resource between their own use and renting it out
//! through a platform at a posted price; renters buy usage at that price.
//! The crate computes owner equilibria, structural prices, revenue and
//! welfare optima, subsidy effects and demand calibration.

pub mod agents;
pub mod benefit;
pub mod calibration;
pub mod equilibrium;
pub mod error;
pub mod fixtures;
pub mod market;
pub mod oracle;
pub mod pricing;
pub mod scenario;
pub mod search;
pub mod settings;
pub mod subsidy;

pub use agents::{Subsidy, SubsidyModel};
pub use benefit::BenefitFunction;
pub use error::{Error, Result};
pub use market::{Market, Owner, OwnerAction, Renter};
pub use settings::Settings;
