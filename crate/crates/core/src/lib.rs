//! Anelastic large-eddy simulation pipeline built around an explicit
//! kernel-schedule abstraction.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`], [`comm`], [`halo`]: staggered periodic grid, z-pencil
//!   decomposition and the simulated-rank message layer.
//! * [`fields`]: field containers, base state and binary checkpoints.
//! * [`sched`]: schedules, the stencil executor, reductions and async queues.
//! * [`dynamics`], [`poisson`], [`subgrid`], [`thermo`], [`microphys`]: the
//!   physics kernels.
//! * [`model`]: the per-rank time loop tying everything together.
//! * [`tuner`], [`perf`], [`verify`]: auto-tuning, timing reports and
//!   statistical verification.

pub mod comm;
pub mod config;
pub mod dynamics;
pub mod exact;
pub mod fields;
pub mod grid;
pub mod halo;
pub mod kernels;
pub mod microphys;
pub mod model;
pub mod perf;
pub mod poisson;
pub mod sched;
pub mod subgrid;
pub mod thermo;
pub mod tuner;
pub mod verify;

pub use fields::{Field3, FieldSet, Shape};
pub use grid::{Decomposition, Grid, GridConfig, Vertical};
pub use sched::{Executor, Schedule};
