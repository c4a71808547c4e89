//! Reversible Lagrangian systems of classical type `L = ½F² − U` on a single
//! chart of ℝⁿ or a flat torus.
//!
//! The crate covers expression parsing with forward-mode differentiation,
//! Finsler and Riemannian geometry kernels, Euler–Lagrange and Hamilton flows,
//! the Jacobi metric correspondence, brake and rotation orbit search with
//! monodromy, self-intersection detection and conformal perturbations that
//! remove chosen intersections.

// Index loops mirror the tensor notation; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod intersect;
pub mod jacobi;
pub mod linalg;
pub mod orbits;
pub mod perturb;
pub mod reference;

pub use dynamics::{PhaseState, Potential, SystemSpec, Tolerances, Trajectory};
pub use error::{Error, Result};
pub use expr::{parse, Dual, ExprNode, Real};
pub use geometry::{ChartPoint, Covector, MetricKind, MetricModel, Space, TangentVector, Tensor3};
pub use intersect::{IntersectionKind, IntersectionReport, IntersectionSettings};
pub use jacobi::JacobiMetric;
pub use linalg::Mat;
pub use orbits::{MonodromyReport, OrbitKind, PeriodicOrbit, Section, ShootingSettings};
pub use perturb::{ConformalPerturbation, DisplacedCurve, TubeFrame};
pub use reference::OscillatorSpec;
