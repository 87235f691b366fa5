//! Differential-algebraic model of the multi-machine system.
//!
//! Devices per synchronous generator: two-axis machine (4 states), IEEE
//! Type-1 exciter (4 states), IEESGO-style turbine/governor (6 states).
//! Rotor angles are expressed in a frame rotating with a reference machine,
//! whose own angle is held constant; this removes the uniform-rotation
//! direction so a post-disturbance equilibrium exists even when the system
//! settles off-nominal. The normative per-device equation set lives in
//! `docs/device-models.md`.

mod layout;
mod model;
#[cfg(test)]
pub(crate) mod tests;

pub use layout::{MachineBlock, StateKind, StateLayout, StateVar};
pub use model::{init_dynamic_state, DynamicModel, SystemState};

use crate::DVec;

/// Residual provider for a semi-explicit DAE  x' = f(x,y), 0 = g(x,y).
///
/// Implemented by [`DynamicModel`]; test code plugs in toy systems to
/// exercise the generic Jacobian and solver machinery.
pub trait DaeSystem: Sync {
    fn n_diff(&self) -> usize;
    fn n_alg(&self) -> usize;
    fn eval_f(&self, x: &DVec, y: &DVec) -> DVec;
    fn eval_g(&self, x: &DVec, y: &DVec) -> DVec;
}
