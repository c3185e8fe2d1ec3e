//! Physics-informed neural networks for the power-system swing equation.
//!
//! The crate covers the full pipeline for transient-stability studies with
//! unknown inertia coefficients:
//!
//! - [`dynamics`] — swing-equation right-hand side, electrical power coupling,
//!   equilibria, and the built-in 1-bus / 2-bus presets;
//! - [`solver`] — adaptive Dormand–Prince 5(4) integration with dense output,
//!   used to generate ground-truth rotor-angle trajectories;
//! - [`autodiff`] — a differentiation engine carrying first and second
//!   time-derivatives forward while backpropagating parameter gradients;
//! - [`net`] — small fully connected networks for angle and inertia prediction;
//! - [`pinn`] — residual assembly, the two-term loss, and the Adam trainer for
//!   one angle/inertia network pair;
//! - [`dataset`] — trajectory generation, noise corruption, labeled/collocation
//!   partitioning, and CSV persistence;
//! - [`ensemble`] — member diversification, ensemble training, and the
//!   posterior Gaussian summary of the inertia estimate.

// Validation guards use `!(x > 0)` rather than `x <= 0` so that NaN fails
// the check instead of slipping through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod dataset;
pub mod dynamics;
pub mod ensemble;
pub mod net;
pub mod pinn;
pub mod solver;

pub use autodiff::{DiffValue, Tape};
pub use dynamics::{BusSystem, GenState, InputKind};
pub use pinn::{PinnModel, TrainConfig};
