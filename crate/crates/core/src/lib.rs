//! Robust optimal transport under the trimmed cost `min(d, 2λ)`.
//!
//! The transport layers ([`measure`], [`ot`], [`robot`], [`concentration`])
//! are generic over [`Scalar`] (`f32` or `f64`). The statistical layers
//! built on top of them work in `f64`.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod concentration;
pub mod domain_adapt;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod lambda_select;
pub mod measure;
pub mod optimize;
pub mod ot;
pub mod regression;
pub mod robot;
pub mod sampling;
pub mod scalar;

pub use error::{Result, RobotError};
pub use measure::{build_cost_matrix, trimmed_cost, DiscreteMeasure, GroundMetric, TrimmedCostMatrix};
pub use robot::{recover_tv_modification, robot_distance, robot_value, sensitivity_curve, verify_dual, RobotSolution};
pub use ot::{solve_exact, w1_distance, CostMatrix, DualPotentials, OtSolution, TransportPlan};
pub use scalar::Scalar;

pub type DiscreteMeasureF64 = DiscreteMeasure<f64>;
pub type DiscreteMeasureF32 = DiscreteMeasure<f32>;
pub type TransportPlanF64 = TransportPlan<f64>;
pub type TransportPlanF32 = TransportPlan<f32>;
