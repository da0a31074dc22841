//! Mass-spring-damper admittance between the nominal and compliant references.
//!
//! With `e = p_d − p_r` the virtual dynamics are `M ë + D ė + K e = −f̂`, so a
//! reaction force from a wall pushes the compliant reference away from it.

use nalgebra::{Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::trajectory::ReferenceSetpoint;
use crate::{all_finite, Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmittanceConfig {
    /// Diagonal virtual mass, kg.
    #[serde(rename = "M", with = "crate::serde_vec::vec3")]
    pub m: Vec3,
    /// Diagonal virtual damping, N s/m.
    #[serde(rename = "D", with = "crate::serde_vec::vec3")]
    pub d: Vec3,
    /// Diagonal virtual stiffness, N/m.
    #[serde(rename = "K", with = "crate::serde_vec::vec3")]
    pub k: Vec3,
    /// Rate, Hz.
    pub rate: f64,
}

impl Default for AdmittanceConfig {
    fn default() -> Self {
        Self { m: Vec3::repeat(0.5), d: Vec3::repeat(7.5), k: Vec3::new(30.0, 30.0, 100.0), rate: 50.0 }
    }
}

impl AdmittanceConfig {
    pub fn validate(&self) -> Result<()> {
        let all = self.m.iter().chain(self.d.iter()).chain(self.k.iter());
        if all.clone().any(|x| !(*x > 0.0 && x.is_finite())) || !(self.rate > 0.0) {
            return Err(Error::Config("admittance M, D, K and rate must be positive".into()));
        }
        Ok(())
    }

    /// Exact zero-order-hold transition and input maps for one axis.
    pub fn discretize(&self, axis: usize, dt: f64) -> (Matrix2<f64>, Vector2<f64>) {
        let (m, d, k) = (self.m[axis], self.d[axis], self.k[axis]);
        #[rustfmt::skip]
        let aug = Matrix3::new(
            0.0,    1.0,    0.0,
            -k / m, -d / m, 1.0 / m,
            0.0,    0.0,    0.0,
        ) * dt;
        let e = aug.exp();
        (e.fixed_view::<2, 2>(0, 0).into_owned(), e.fixed_view::<2, 1>(0, 2).into_owned())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdmittanceState {
    pub e: Vec3,
    pub e_dot: Vec3,
}

impl AdmittanceState {
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// `ë` implied by the virtual dynamics at this state.
    pub fn e_ddot(&self, f_ext_hat: &Vec3, cfg: &AdmittanceConfig) -> Vec3 {
        Vec3::from_fn(|i, _| (-f_ext_hat[i] - cfg.d[i] * self.e_dot[i] - cfg.k[i] * self.e[i]) / cfg.m[i])
    }
}

/// Advances the virtual dynamics by `dt` with the force held constant and
/// returns the compliant reference at the end of the step.
pub fn admittance_step(
    state: &AdmittanceState,
    f_ext_hat: &Vec3,
    desired: &ReferenceSetpoint,
    cfg: &AdmittanceConfig,
    dt: f64,
) -> Result<(AdmittanceState, ReferenceSetpoint)> {
    if !all_finite(f_ext_hat) || ![desired.p, desired.v, desired.a].iter().all(all_finite) {
        return Err(Error::NonFiniteInput("admittance_step"));
    }
    let mut next = AdmittanceState::default();
    for i in 0..3 {
        let (phi, gamma) = cfg.discretize(i, dt);
        let x = phi * Vector2::new(state.e[i], state.e_dot[i]) + gamma * (-f_ext_hat[i]);
        next.e[i] = x[0];
        next.e_dot[i] = x[1];
    }
    let e_ddot = next.e_ddot(f_ext_hat, cfg);
    let compliant =
        ReferenceSetpoint { p: desired.p - next.e, v: desired.v - next.e_dot, a: desired.a - e_ddot, ..*desired };
    Ok((next, compliant))
}

/// Depth past the surface that yields `f_des` at steady state through the
/// virtual stiffness along `axis`.
pub fn depth_for_force(f_des: f64, cfg: &AdmittanceConfig, axis: &Vec3) -> Result<f64> {
    let k = axis.dot(&cfg.k.component_mul(axis));
    if k.abs() < 1e-12 {
        return Err(Error::ZeroStiffness);
    }
    Ok(f_des / k)
}
