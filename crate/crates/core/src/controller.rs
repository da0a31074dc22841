//! PD pose controller producing acceleration and yaw-rate setpoints.

use serde::{Deserialize, Serialize};

use crate::trajectory::ReferenceSetpoint;
use crate::vehicle::AccelYawRateCmd;
use crate::{all_finite, e3, wrap_angle, Error, Result, Vec3, GRAVITY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    /// Diagonal position gain, 1/s².
    #[serde(rename = "Kp", with = "crate::serde_vec::vec3")]
    pub kp: Vec3,
    /// Diagonal velocity gain, 1/s.
    #[serde(rename = "Kv", with = "crate::serde_vec::vec3")]
    pub kv: Vec3,
    #[serde(rename = "K_psi")]
    pub k_psi: f64,
    /// Mass used to convert the force estimate to acceleration, kg.
    #[serde(alias = "mass")]
    pub m: f64,
    /// Rate, Hz.
    pub rate: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self { kp: Vec3::new(14.0, 14.0, 20.0), kv: Vec3::new(4.0, 4.0, 8.0), k_psi: 3.0, m: 2.3, rate: 200.0 }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        if self.kp.iter().chain(self.kv.iter()).any(|g| !(*g > 0.0 && g.is_finite()))
            || !(self.k_psi > 0.0)
            || !(self.m > 0.0)
            || !(self.rate > 0.0)
        {
            return Err(Error::Config("gains must be positive".into()));
        }
        Ok(())
    }
}

/// `a_r + Kp (p_r − p) + Kv (v_r − v) + g e3 − f̂ / m`.
pub fn accel_command(
    reference: &ReferenceSetpoint,
    p: &Vec3,
    v: &Vec3,
    f_ext_hat: &Vec3,
    gains: &ControllerGains,
) -> Result<Vec3> {
    if ![reference.p, reference.v, reference.a, *p, *v, *f_ext_hat].iter().all(all_finite) {
        return Err(Error::NonFiniteInput("accel_command"));
    }
    Ok(reference.a
        + gains.kp.component_mul(&(reference.p - p))
        + gains.kv.component_mul(&(reference.v - v))
        + GRAVITY * e3()
        - f_ext_hat / gains.m)
}

/// `ψ̇_d + K_ψ wrap(ψ_d − ψ)`.
pub fn yaw_rate_command(yaw_d: f64, yaw_rate_d: f64, psi: f64, gains: &ControllerGains) -> f64 {
    yaw_rate_d + gains.k_psi * wrap_angle(yaw_d - psi)
}

pub fn command(
    reference: &ReferenceSetpoint,
    p: &Vec3,
    v: &Vec3,
    psi: f64,
    f_ext_hat: &Vec3,
    gains: &ControllerGains,
) -> Result<AccelYawRateCmd> {
    Ok(AccelYawRateCmd {
        accel: accel_command(reference, p, v, f_ext_hat, gains)?,
        yaw_rate: yaw_rate_command(reference.yaw, reference.yaw_rate, psi, gains),
    })
}
