//! Post-hoc checks on a design or a simulated trajectory.

pub mod lyapunov;
pub mod pe;
pub mod convergence;
