//! Seabed survey modeling and complexity-aware path planning for a surface vessel.
//!
//! The pipeline surveys a scalar seabed-complexity field with a lawnmower
//! pattern, fits a Gaussian process to the soundings, plans around the
//! predicted complexity with A* or RRT*, and tracks the plan with a 3-DOF
//! vessel model under line-of-sight guidance.

pub mod dubins;
pub mod error;
pub mod experiment;
pub mod field;
pub mod gp;
pub mod kernels;
pub mod planners;
pub mod scenario;
pub mod survey;
pub mod vessel;

pub use dubins::{DubinsPath, DubinsWord, Pose2};
pub use error::{Error, Result};
pub use field::{ObstacleGrid, ScalarField};
pub use gp::{fit, fit_with_prior, GpModel, Prediction, PriorMean, TrainingSet};
pub use kernels::{Hyperparameters, KernelKind};
pub use planners::{CostWeights, PlanOutcome, PlannedPath, PlannerKind};
pub use scenario::Scenario;
