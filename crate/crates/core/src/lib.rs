//! Numerical laboratory for backward stochastic differential equations
//! reflected between two barriers, on a recombining binomial lattice.
//!
//! The production solver is [`reflect::solve_reflected`]; the penalized
//! scheme, the Picard loop, the Dynkin-game oracle and the comparison
//! harness exist to cross-check it.

pub mod dynkin;
pub mod lattice;
pub mod model;
pub mod penalize;
pub mod reflect;
pub mod stepper;
pub mod suite;
pub mod transform;
pub mod verify;

pub use lattice::{LatticeModel, Node, NodeField};
pub use model::{Barrier, Driver, DriverSpec, GridSpec, ScenarioSpec, Terminal};
pub use reflect::{solve_reflected, SolutionSurface, SolveError};
