//! Numerical kernels shared by the model code: quadrature, ODE integration,
//! matrix-exponential actions, monotone interpolation and a derivative-free
//! optimizer.

pub mod expm;
pub mod interp;
pub mod normal;
pub mod ode;
pub mod optimize;
pub mod quadrature;

pub use expm::{matrix_exp_action, Matrix};
pub use interp::MonotoneCubic;
pub use ode::{integrate_path, solve_ivp, OdeSpec, PathNode};
pub use optimize::{minimize, Minimum, OptimizerSpec};
pub use quadrature::{integrate, integrate_with_breaks, QuadratureSpec};
