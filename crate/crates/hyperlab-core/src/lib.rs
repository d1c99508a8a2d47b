//! Numerical laboratory for boundary control of two coupled heterodirectional
//! linear transport equations with actuator delay.
//!
//! The plant is the 1-D system
//!
//! ```text
//! u_t + lambda u_x = sigma_pm(x) v        u(t,0) = q v(t,0)
//! v_t - mu     v_x = sigma_mp(x) u        v(t,1) = rho u(t,1) + U(t - delta)
//! ```
//!
//! on `x in [0,1]`, actuated through `U` at the right boundary with a delay
//! `delta` in the actuation path. The crate provides, end to end:
//!
//! * [`model`]: plant description, derived constants and the stabilizability
//!   classification driven by the open-loop gain `rho * q`;
//! * [`kernel`]: the backstepping kernel solver on the triangle `xi <= x`,
//!   the inverse-transform kernels and the boundary feedback gains;
//! * [`sim`]: a semi-Lagrangian time-domain simulator for the closed loop
//!   under each control law, with an exact delay line on the actuation;
//! * [`neutral`]: reduction of the closed loop to a scalar neutral delay
//!   equation with distributed delay, used as an independent cross-check of
//!   the PDE simulation;
//! * [`spectral`]: characteristic functions of the closed loops and a
//!   right-half-plane root counter based on the argument principle.
//!
//! All numerics are generic over the floating-point scalar through the
//! [`Real`] trait; `f64` aliases for the main types are exported at the crate
//! root.

pub mod grid;
pub mod kernel;
pub mod model;
pub mod neutral;
pub mod scalar;
pub mod sim;
pub mod spectral;

mod error;

pub use error::Error;
pub use scalar::Real;

/// Convenience result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

pub type PlantConfig64 = model::PlantConfig<f64>;
pub type Profile64 = model::Profile<f64>;
pub type KernelSet64 = kernel::KernelSet<f64>;
pub type InverseKernelSet64 = kernel::InverseKernelSet<f64>;
pub type FeedbackGains64 = kernel::FeedbackGains<f64>;
pub type ControlLaw64 = sim::ControlLaw<f64>;
pub type TraceRecord64 = sim::TraceRecord<f64>;
pub type NeutralSpec64 = neutral::NeutralSpec<f64>;
pub type History64 = neutral::History<f64>;
pub type CharacteristicFunction64 = spectral::CharacteristicFunction<f64>;
pub type RootScanResult64 = spectral::RootScanResult<f64>;
