//! Loss families, identification functions, semiparametric conditional DGPs,
//! M-/Z-estimators and brute-force auditors that certify the consistency
//! hierarchy connecting forecast-evaluation losses with M-estimation on
//! finite instances.

pub mod checkers;
pub mod cli;
pub mod config;
pub mod dgp;
pub mod dist;
pub mod estimators;
pub mod grid;
pub mod identification;
pub mod losses;
pub mod report;

pub use dgp::{ConditionalDGP, DGPClass, Dataset, ModelFamily, ParametricModel};
pub use dist::{ActionPoint, DiscreteDistribution, Functional};
pub use grid::{BoxBounds, GridSpec};
pub use losses::{ConvexSpec, IncreasingSpec, Kappa, Loss};
