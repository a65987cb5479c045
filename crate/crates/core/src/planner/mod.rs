//! Fitted value iteration over a lattice of Gaussian basis functions.

mod fvi;
pub mod grid;
mod kernel;
mod model;

pub use fvi::{default_tolerance, Planner, ValueSolution};
pub use grid::{
    build_grid, max_grid_spacing, AngleEncoding, Axis, GridOptions, KernelGrid,
    LipschitzConstants,
};
pub use kernel::{KernelRow, TransitionKernel};
pub use model::KnownMdpModel;
