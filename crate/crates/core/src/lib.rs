//! Simulation and control stack for autonomous contact-based ultrasonic
//! thickness inspection with an underactuated quadrotor.
//!
//! The crate is split along the signal flow of the control architecture:
//!
//! - [`vehicle`]: translational dynamics, rotor thrust model, an emulated
//!   inner flight controller that tracks acceleration and yaw-rate setpoints,
//!   and noisy sensor readout.
//! - [`contact`]: inspection surface, compliant magnetic probe, couplant and
//!   the ultrasonic measurement quality model.
//! - [`observer`]: acceleration-based external force observer, bias
//!   estimation and thrust-coefficient identification.
//! - [`admittance`]: second-order virtual dynamics producing a compliant
//!   reference from the nominal one.
//! - [`trajectory`]: minimum-snap piecewise polynomials through waypoints.
//! - [`controller`]: PD pose controller emitting acceleration and yaw-rate
//!   commands.
//! - [`mission`]: the inspection state machine.
//! - [`scenario`], [`scheduler`], [`telemetry`], [`metrics`]: config file,
//!   the deterministic multi-rate executive, CSV logs and run metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admittance;
pub mod contact;
pub mod controller;
mod error;
pub mod metrics;
pub mod mission;
pub mod observer;
pub mod scenario;
pub mod scheduler;
mod serde_vec;
pub mod telemetry;
pub mod trajectory;
pub mod vehicle;

pub use error::{Error, Result};

use nalgebra::Vector3;

/// World-frame 3-vector, SI units.
pub type Vec3 = Vector3<f64>;

/// Gravitational acceleration, m/s².
pub const GRAVITY: f64 = 9.81;

/// Unit vector along world z (up).
pub fn e3() -> Vec3 {
    Vec3::z()
}

/// Wraps an angle to (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub(crate) fn all_finite(v: &Vec3) -> bool {
    v.iter().all(|x| x.is_finite())
}
