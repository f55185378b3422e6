//! Two-dimensional incompressible Bingham flow with variable density,
//! viscosity and yield stress on a staggered grid.
//!
//! One time step transports the density implicitly with the divergence-free
//! velocity, evaluates the coefficients, solves the coupled velocity /
//! plastic-tensor problem by a relaxed fixed point, and finally removes the
//! divergence with a constant-coefficient pressure increment.
//!
//! ```no_run
//! use bingham_core::config::parse_config;
//!
//! let text = std::fs::read_to_string("cavity.toml").unwrap();
//! let cfg = parse_config(&text).unwrap();
//! let (integrator, state, _) = cfg.build().unwrap();
//! let (next, report) = integrator.step(&state).unwrap();
//! println!("{} sweeps, t = {}", report.fixed_point.iterations, next.t);
//! ```

pub mod config;
pub mod diagnostics;
mod error;
pub mod grid;
pub mod integrator;
pub mod momentum;
pub mod output;
pub mod pressure;
pub mod runner;
pub mod scenario;
pub mod solvers;
pub mod tensor;
pub mod transport;

pub use error::Error;
