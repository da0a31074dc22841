//! Translational quadrotor dynamics with an emulated inner flight controller.
//!
//! Only the translational equation of motion is integrated. The attitude and
//! collective thrust follow their setpoints through first-order lags, which
//! stands in for the closed low-level controller that tracks acceleration and
//! yaw-rate commands.

use nalgebra::{Rotation3, UnitQuaternion, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{all_finite, e3, wrap_angle, Error, Result, Vec3, GRAVITY};

/// Physical and inner-loop parameters of the vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Mass, kg.
    #[serde(alias = "mass")]
    pub m: f64,
    /// Thrust coefficient, N/(rad/s)².
    pub c_f: f64,
    /// Rotor axes in body frame.
    #[serde(with = "crate::serde_vec::vec3x4")]
    pub z_p: [Vec3; 4],
    /// Attitude tracking time constant, s.
    pub tau_att: f64,
    /// Collective thrust lag, s.
    pub tau_thrust: f64,
    /// Rotor speed ceiling, rad/s.
    pub omega_max: f64,
    /// Acceleration command magnitude limit, m/s².
    pub accel_cmd_max: f64,
    /// Below this desired thrust the body z-axis setpoint is held, N.
    pub f_min: f64,
    /// Roll and pitch setpoint limit, rad.
    pub max_tilt: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            m: 2.3,
            c_f: 1.0e-5,
            z_p: [e3(); 4],
            tau_att: 0.05,
            tau_thrust: 0.05,
            omega_max: 1500.0,
            accel_cmd_max: 3.0 * GRAVITY,
            f_min: 0.1,
            max_tilt: 1.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("vehicle.{what}")));
        if !(self.m > 0.0 && self.m.is_finite()) {
            return bad("m must be positive");
        }
        if !(self.c_f > 0.0 && self.c_f.is_finite()) {
            return bad("c_f must be positive");
        }
        if !(self.tau_att > 0.0 && self.tau_thrust > 0.0) {
            return bad("tau_att and tau_thrust must be positive");
        }
        if !(self.omega_max > 0.0) {
            return bad("omega_max must be positive");
        }
        if !(self.accel_cmd_max > 0.0 && self.f_min >= 0.0 && self.max_tilt > 0.0) {
            return bad("accel_cmd_max, f_min and max_tilt must be positive");
        }
        if self.z_p.iter().any(|z| (z.norm() - 1.0).abs() > 1e-6) {
            return bad("z_p entries must be unit vectors");
        }
        if self.axis_sum().norm() < 1e-9 {
            return bad("z_p axes cancel out");
        }
        Ok(())
    }

    fn axis_sum(&self) -> Vec3 {
        self.z_p.iter().sum()
    }

    /// Equal rotor speed producing a collective thrust of `thrust` newtons.
    pub fn rotor_speed_for_thrust(&self, thrust: f64) -> f64 {
        (thrust.max(0.0) / (self.c_f * self.axis_sum().norm())).sqrt()
    }

    pub fn hover_rotor_speed(&self) -> f64 {
        self.rotor_speed_for_thrust(self.m * GRAVITY)
    }
}

/// Simulated truth.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub position: Vec3,
    pub velocity: Vec3,
    /// Acceleration applied over the last step.
    pub acceleration: Vec3,
    /// Rotation world ← body.
    pub attitude: UnitQuaternion<f64>,
    /// Yaw of `attitude`, wrapped to (-π, π].
    pub yaw: f64,
    pub rotor_speeds: Vector4<f64>,
    pub t: f64,
}

impl VehicleState {
    /// Level hover at `position` with rotor speeds balancing gravity.
    pub fn hover(params: &VehicleParams, position: Vec3, yaw: f64) -> Self {
        let yaw = wrap_angle(yaw);
        Self {
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            attitude: UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
            yaw,
            rotor_speeds: Vector4::repeat(params.hover_rotor_speed()),
            t: 0.0,
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        self.attitude.to_rotation_matrix()
    }
}

/// Setpoint accepted by the inner flight controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelYawRateCmd {
    /// World-frame acceleration including the gravity-compensation term, m/s².
    pub accel: Vec3,
    pub yaw_rate: f64,
}

impl AccelYawRateCmd {
    pub fn hover() -> Self {
        Self { accel: GRAVITY * e3(), yaw_rate: 0.0 }
    }

    /// Clamps the acceleration magnitude to `max`. Non-finite commands
    /// collapse to hover.
    pub fn saturated(&self, max: f64) -> Self {
        if !all_finite(&self.accel) || !self.yaw_rate.is_finite() {
            return Self::hover();
        }
        let n = self.accel.norm();
        let accel = if n > max { self.accel * (max / n) } else { self.accel };
        Self { accel, yaw_rate: self.yaw_rate }
    }
}

/// Sum of rotor thrusts in body frame, `Σ c_f |ω_i| ω_i z_i`.
pub fn rotor_force_body(rotor_speeds: &Vector4<f64>, params: &VehicleParams) -> Vec3 {
    rotor_speeds.iter().zip(params.z_p.iter()).map(|(w, z)| z * (params.c_f * w.abs() * w)).sum()
}

/// Advances the translational dynamics by one step with semi-implicit Euler
/// (velocity first, then position). Attitude and rotor speeds are taken as
/// set by the inner loop.
pub fn step_dynamics(
    state: &VehicleState,
    f_ext_world: &Vec3,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState> {
    let f_rot = state.attitude * rotor_force_body(&state.rotor_speeds, params);
    let acceleration = (f_rot + f_ext_world) / params.m - GRAVITY * e3();
    let velocity = state.velocity + acceleration * dt;
    let position = state.position + velocity * dt;
    let next = VehicleState {
        position,
        velocity,
        acceleration,
        attitude: state.attitude,
        yaw: state.yaw,
        rotor_speeds: state.rotor_speeds,
        t: state.t + dt,
    };
    if !(all_finite(&position) && all_finite(&velocity) && next.t.is_finite()) {
        return Err(Error::NonFiniteState { tick: (next.t / dt).round() as u64 });
    }
    Ok(next)
}

/// Emulated low-level controller: follows acceleration and yaw-rate setpoints
/// through first-order attitude and thrust lags, with equal rotor allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerLoop {
    yaw_setpoint: f64,
    body_z_setpoint: Vec3,
}

impl InnerLoop {
    pub fn new(state: &VehicleState) -> Self {
        Self { yaw_setpoint: state.yaw, body_z_setpoint: state.attitude * e3() }
    }

    pub fn yaw_setpoint(&self) -> f64 {
        self.yaw_setpoint
    }

    /// Returns the new rotor speeds and attitude after `dt`.
    pub fn step(
        &mut self,
        cmd: &AccelYawRateCmd,
        state: &VehicleState,
        params: &VehicleParams,
        dt: f64,
    ) -> (Vector4<f64>, UnitQuaternion<f64>) {
        let cmd = cmd.saturated(params.accel_cmd_max);
        let f_des = cmd.accel * params.m;
        let f_des_norm = f_des.norm();
        if f_des_norm >= params.f_min {
            self.body_z_setpoint = f_des / f_des_norm;
        }
        self.yaw_setpoint = wrap_angle(self.yaw_setpoint + cmd.yaw_rate * dt);

        // Roll/pitch that put the body z-axis on its setpoint, expressed in
        // the frame yawed by the yaw setpoint (ZYX convention).
        let b = Rotation3::from_axis_angle(&Vec3::z_axis(), -self.yaw_setpoint) * self.body_z_setpoint;
        let roll_des = (-b.y).clamp(-1.0, 1.0).asin().clamp(-params.max_tilt, params.max_tilt);
        let pitch_des = b.x.atan2(b.z).clamp(-params.max_tilt, params.max_tilt);

        let (roll, pitch, _) = state.attitude.euler_angles();
        let a_att = 1.0 - (-dt / params.tau_att).exp();
        let roll = roll + a_att * (roll_des - roll);
        let pitch = pitch + a_att * (pitch_des - pitch);
        let yaw = wrap_angle(state.yaw + a_att * wrap_angle(self.yaw_setpoint - state.yaw));
        let attitude = UnitQuaternion::from_euler_angles(roll, pitch, yaw);

        let thrust = rotor_force_body(&state.rotor_speeds, params).norm();
        let a_thr = 1.0 - (-dt / params.tau_thrust).exp();
        let thrust = thrust + a_thr * (f_des_norm - thrust);
        let w = params.rotor_speed_for_thrust(thrust).min(params.omega_max);
        (Vector4::repeat(w), attitude)
    }
}

/// Sensor noise and unmodelled disturbances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Odometry position noise σ, m.
    pub odom_pos_sigma: f64,
    /// Odometry velocity noise σ, m/s.
    pub odom_vel_sigma: f64,
    /// Odometry attitude noise σ per axis, rad.
    pub odom_att_sigma: f64,
    /// Accelerometer noise σ, m/s².
    pub imu_sigma: f64,
    /// Constant accelerometer bias in body frame, m/s².
    #[serde(with = "crate::serde_vec::vec3")]
    pub imu_bias: Vec3,
    /// Relative rotor-speed noise σ (0.01 = 1 %).
    pub rotor_rel_sigma: f64,
    /// Constant aerodynamic disturbance force acting on the vehicle, N (world).
    #[serde(with = "crate::serde_vec::vec3")]
    pub aero_force: Vec3,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            odom_pos_sigma: 0.005,
            odom_vel_sigma: 0.01,
            odom_att_sigma: 0.0,
            imu_sigma: 0.05,
            imu_bias: Vec3::zeros(),
            rotor_rel_sigma: 0.01,
            aero_force: Vec3::zeros(),
        }
    }
}

impl NoiseConfig {
    /// Perfect sensors, no disturbance.
    pub fn zero() -> Self {
        Self {
            odom_pos_sigma: 0.0,
            odom_vel_sigma: 0.0,
            odom_att_sigma: 0.0,
            imu_sigma: 0.0,
            imu_bias: Vec3::zeros(),
            rotor_rel_sigma: 0.0,
            aero_force: Vec3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas =
            [self.odom_pos_sigma, self.odom_vel_sigma, self.odom_att_sigma, self.imu_sigma, self.rotor_rel_sigma];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("noise sigmas must be finite and non-negative".into()));
        }
        if !all_finite(&self.imu_bias) || !all_finite(&self.aero_force) {
            return Err(Error::Config("noise.imu_bias and noise.aero_force must be finite".into()));
        }
        Ok(())
    }
}

/// One sample of onboard sensing.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorReadings {
    pub odom_p: Vec3,
    pub odom_v: Vec3,
    pub odom_attitude: UnitQuaternion<f64>,
    /// Specific force in body frame, m/s².
    pub imu_accel_body: Vec3,
    pub rotor_speeds_meas: Vector4<f64>,
}

impl SensorReadings {
    pub fn odom_yaw(&self) -> f64 {
        self.odom_attitude.euler_angles().2
    }
}

fn gaussian3<R: Rng>(rng: &mut R, sigma: f64) -> Vec3 {
    let mut draw = || sigma * rng.sample::<f64, _>(StandardNormal);
    Vec3::new(draw(), draw(), draw())
}

/// Reads the sensors. Every call consumes the same number of random draws
/// regardless of the configured sigmas, so changing one noise level does not
/// shift the realisations of the others.
pub fn sense<R: Rng>(
    state: &VehicleState,
    f_ext_world: &Vec3,
    params: &VehicleParams,
    noise: &NoiseConfig,
    rng: &mut R,
) -> SensorReadings {
    let f_rot = state.attitude * rotor_force_body(&state.rotor_speeds, params);
    let accel = (f_rot + f_ext_world) / params.m - GRAVITY * e3();

    let odom_p = state.position + gaussian3(rng, noise.odom_pos_sigma);
    let odom_v = state.velocity + gaussian3(rng, noise.odom_vel_sigma);
    let tilt_err = gaussian3(rng, noise.odom_att_sigma);
    let odom_attitude = state.attitude * UnitQuaternion::from_scaled_axis(tilt_err);
    let imu_accel_body =
        state.attitude.inverse() * (accel + GRAVITY * e3()) + noise.imu_bias + gaussian3(rng, noise.imu_sigma);
    let rotor_speeds_meas = state.rotor_speeds.map(|w| {
        let n: f64 = rng.sample(StandardNormal);
        w * (1.0 + noise.rotor_rel_sigma * n)
    });
    SensorReadings { odom_p, odom_v, odom_attitude, imu_accel_body, rotor_speeds_meas }
}
