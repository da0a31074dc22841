//! Acceleration-based external force observer and thrust-coefficient
//! identification.

use nalgebra::{Matrix3, UnitQuaternion, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{command, ControllerGains};
use crate::scenario::Scenario;
use crate::trajectory::ReferenceSetpoint;
use crate::vehicle::{rotor_force_body, sense, step_dynamics, AccelYawRateCmd, InnerLoop, VehicleParams, VehicleState};
use crate::{all_finite, e3, Error, Result, Vec3, GRAVITY};

/// Fewest filtered samples accepted for a bias estimate.
pub const MIN_BIAS_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverConfig {
    /// Diagonal observer gain, 1/s.
    #[serde(rename = "L", with = "crate::serde_vec::vec3")]
    pub l: Vec3,
    /// Low-pass cutoff, rad/s.
    pub omega_c: f64,
    /// Update rate, Hz.
    pub rate: f64,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self { l: Vec3::repeat(7.5), omega_c: 31.42, rate: 100.0 }
    }
}

impl ObserverConfig {
    pub fn validate(&self) -> Result<()> {
        let dt = 1.0 / self.rate;
        if !(self.rate > 0.0 && self.omega_c > 0.0) {
            return Err(Error::Config("observer.rate and observer.omega_c must be positive".into()));
        }
        if self.l.iter().any(|l| !(*l > 0.0 && l * dt < 2.0)) {
            return Err(Error::Config("observer.L entries must satisfy 0 < L·dt < 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForceEstimate {
    /// Observer integrator state, N (world).
    pub f_hat: Vec3,
    pub f_hat_filtered: Vec3,
    pub bias: Vec3,
}

impl ForceEstimate {
    /// Bias-corrected estimate of the force acting on the vehicle.
    pub fn output(&self) -> Vec3 {
        self.f_hat_filtered - self.bias
    }
}

/// Force residual `m R a_imu − R f_rot`, world frame.
pub fn residual(
    imu_accel_body: &Vec3,
    attitude: &UnitQuaternion<f64>,
    rotor_speeds_meas: &Vector4<f64>,
    params: &VehicleParams,
) -> Vec3 {
    attitude * (imu_accel_body * params.m - rotor_force_body(rotor_speeds_meas, params))
}

/// One observer step: exact first-order update of the integrator towards the
/// residual, then the low-pass stage.
pub fn observer_update(
    est: &ForceEstimate,
    imu_accel_body: &Vec3,
    attitude: &UnitQuaternion<f64>,
    rotor_speeds_meas: &Vector4<f64>,
    params: &VehicleParams,
    cfg: &ObserverConfig,
    dt: f64,
) -> Result<ForceEstimate> {
    if !all_finite(imu_accel_body) || rotor_speeds_meas.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFiniteInput("observer_update"));
    }
    let r = residual(imu_accel_body, attitude, rotor_speeds_meas, params);
    Ok(filter_step(est, &r, cfg, dt))
}

/// The observer cascade driven directly by a residual.
pub fn filter_step(est: &ForceEstimate, r: &Vec3, cfg: &ObserverConfig, dt: f64) -> ForceEstimate {
    let decay = cfg.l.map(|l| (-l * dt).exp());
    let f_hat = decay.component_mul(&est.f_hat) + (Vec3::repeat(1.0) - decay).component_mul(r);
    let a = 1.0 - (-cfg.omega_c * dt).exp();
    let f_hat_filtered = est.f_hat_filtered + (f_hat - est.f_hat_filtered) * a;
    ForceEstimate { f_hat, f_hat_filtered, bias: est.bias }
}

/// Mean of the filtered estimate over a hover window.
pub fn estimate_bias(history: &[Vec3]) -> Result<Vec3> {
    if history.len() < MIN_BIAS_SAMPLES {
        return Err(Error::InsufficientSamples { got: history.len(), need: MIN_BIAS_SAMPLES });
    }
    Ok(history.iter().sum::<Vec3>() / history.len() as f64)
}

/// Averaged hover condition for one payload mass.
#[derive(Debug, Clone, PartialEq)]
pub struct IdSample {
    pub mass: f64,
    pub rotor_speeds: Vector4<f64>,
    /// Mean rotation world ← body.
    pub rotation: Matrix3<f64>,
}

/// Scalar least squares for c_f from hover force balance. Returns the
/// estimate and the RMS norm of the per-sample force residual.
pub fn identify_cf(dataset: &[IdSample], rotor_axes: &[Vec3; 4]) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::DegenerateData("empty dataset".into()));
    }
    let pairs: Vec<(Vec3, Vec3)> = dataset
        .iter()
        .map(|s| {
            let thrust_dir: Vec3 = s.rotor_speeds.iter().zip(rotor_axes.iter()).map(|(w, z)| z * (w.abs() * w)).sum();
            (s.mass * GRAVITY * e3(), s.rotation * thrust_dir)
        })
        .collect();
    if pairs.iter().any(|(b, a)| !all_finite(b) || !all_finite(a)) {
        return Err(Error::DegenerateData("non-finite sample".into()));
    }
    let ata: f64 = pairs.iter().map(|(_, a)| a.dot(a)).sum();
    if ata == 0.0 {
        return Err(Error::DegenerateData("all rotor speeds are zero".into()));
    }
    let c_f = pairs.iter().map(|(b, a)| b.dot(a)).sum::<f64>() / ata;
    let ss: f64 = pairs.iter().map(|(b, a)| (b - a * c_f).norm_squared()).sum();
    Ok((c_f, (ss / pairs.len() as f64).sqrt()))
}

/// Default payload protocol: nominal mass plus 0..=400 g in 100 g steps.
pub fn default_masses(m: f64) -> Vec<f64> {
    (0..5).map(|i| m + 0.1 * i as f64).collect()
}

/// Seconds of each hover discarded as transient.
pub const ID_TRANSIENT: f64 = 2.0;
/// Averaging rate of the identification recorder, Hz.
pub const ID_RECORD_RATE: f64 = 100.0;

/// Simulated identification flights: one closed-loop hover per mass at the
/// scenario start position, free of contact and aerodynamic disturbance.
/// Rotor speeds and attitude are averaged after the transient.
pub fn identification_experiment(scenario: &Scenario, masses: &[f64], hover_duration: f64) -> Result<Vec<IdSample>> {
    if !(hover_duration > ID_TRANSIENT) {
        return Err(Error::Config(format!("hover duration must exceed {ID_TRANSIENT} s")));
    }
    let dt = 1.0 / scenario.run.physics_rate;
    let ctrl_div = scenario.divider(scenario.gains.rate)?;
    let rec_div = scenario.divider(ID_RECORD_RATE)?;
    let n_ticks = (hover_duration * scenario.run.physics_rate).round() as u64;
    let skip = (ID_TRANSIENT * scenario.run.physics_rate).round() as u64;

    masses
        .iter()
        .enumerate()
        .map(|(j, &mass)| {
            if !(mass > 0.0 && mass.is_finite()) {
                return Err(Error::Config(format!("payload mass {mass} must be positive")));
            }
            let params = VehicleParams { m: mass, ..scenario.vehicle.clone() };
            let gains = ControllerGains { m: mass, ..scenario.gains.clone() };
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.run.seed.wrapping_add(j as u64));
            let hold = ReferenceSetpoint::hold(scenario.run.start_position, scenario.run.start_yaw, 0.0);
            let mut state = VehicleState::hover(&params, scenario.run.start_position, scenario.run.start_yaw);
            let mut inner = InnerLoop::new(&state);
            let mut cmd = AccelYawRateCmd::hover();
            let mut w_sum = Vector4::zeros();
            let mut r_sum = Matrix3::zeros();
            let mut count = 0usize;
            for tick in 1..=n_ticks {
                let (w, att) = inner.step(&cmd, &state, &params, dt);
                state.rotor_speeds = w;
                state.attitude = att;
                state.yaw = att.euler_angles().2;
                state =
                    step_dynamics(&state, &Vec3::zeros(), &params, dt).map_err(|_| Error::NonFiniteState { tick })?;
                let meas = sense(&state, &Vec3::zeros(), &params, &scenario.noise, &mut rng);
                if tick % ctrl_div == 0 {
                    cmd = command(&hold, &meas.odom_p, &meas.odom_v, meas.odom_yaw(), &Vec3::zeros(), &gains)?;
                }
                if tick > skip && tick % rec_div == 0 {
                    w_sum += meas.rotor_speeds_meas;
                    r_sum += meas.odom_attitude.to_rotation_matrix().into_inner();
                    count += 1;
                }
            }
            Ok(IdSample { mass, rotor_speeds: w_sum / count as f64, rotation: r_sum / count as f64 })
        })
        .collect()
}

pub const ID_DATASET_HEADER: [&str; 14] =
    ["mass_kg", "w1", "w2", "w3", "w4", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33"];

pub fn write_id_dataset<W: std::io::Write>(dataset: &[IdSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ID_DATASET_HEADER)?;
    for s in dataset {
        let mut row = vec![s.mass];
        row.extend(s.rotor_speeds.iter());
        for i in 0..3 {
            row.extend((0..3).map(|k| s.rotation[(i, k)]));
        }
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_id_dataset(text: &str) -> Result<Vec<IdSample>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.iter().ne(ID_DATASET_HEADER.iter().copied()) {
        return Err(Error::Schema(format!("unexpected dataset header {:?}", header)));
    }
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let v: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Schema(format!("dataset row {}: {e}", i + 1)))?;
            if v.len() != ID_DATASET_HEADER.len() {
                return Err(Error::Schema(format!("dataset row {} has {} fields", i + 1, v.len())));
            }
            Ok(IdSample {
                mass: v[0],
                rotor_speeds: Vector4::new(v[1], v[2], v[3], v[4]),
                rotation: Matrix3::from_row_slice(&v[5..14]),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn cfg() -> ObserverConfig {
        ObserverConfig::default()
    }

    #[test]
    fn hover_residual_is_zero() {
        let p = VehicleParams::default();
        let s = VehicleState::hover(&p, Vec3::zeros(), 0.7);
        let imu = s.attitude.inverse() * (GRAVITY * e3());
        let mut est = ForceEstimate::default();
        for _ in 0..100 {
            est = observer_update(&est, &imu, &s.attitude, &s.rotor_speeds, &p, &cfg(), 0.01).unwrap();
        }
        assert!(est.output().norm() < 1e-12);
    }

    #[test]
    fn single_step_response() {
        let est = filter_step(&ForceEstimate::default(), &Vec3::x(), &cfg(), 0.01);
        assert_relative_eq!(est.f_hat.x, 1.0 - (-0.075f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(est.f_hat.x, 0.07226, epsilon = 1e-5);
    }

    #[test]
    fn one_second_convergence() {
        let mut est = ForceEstimate::default();
        for _ in 0..100 {
            est = filter_step(&est, &Vec3::x(), &cfg(), 0.01);
        }
        assert!((1.0 - est.f_hat.x) / 1.0 < 6e-4);
    }

    #[test]
    fn residual_equals_external_force_noiseless() {
        let p = VehicleParams::default();
        let mut s = VehicleState::hover(&p, Vec3::zeros(), 0.2);
        s.attitude = UnitQuaternion::from_euler_angles(0.1, -0.05, 0.2);
        let f_ext = Vec3::new(1.0, -2.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = sense(&s, &f_ext, &p, &crate::vehicle::NoiseConfig::zero(), &mut rng);
        let res = residual(&r.imu_accel_body, &r.odom_attitude, &r.rotor_speeds_meas, &p);
        assert_relative_eq!(res, f_ext, epsilon = 1e-9);
    }

    #[test]
    fn bias_examples() {
        let c = Vec3::new(0.3, -0.1, 0.05);
        assert_relative_eq!(estimate_bias(&[c; 200]).unwrap(), c, epsilon = 1e-12);
        assert_eq!(estimate_bias(&[c; 9]), Err(Error::InsufficientSamples { got: 9, need: 10 }));
    }

    #[test]
    fn bias_of_noise_is_small() {
        // 200 samples of σ = 0.1: standard error 0.007 per axis, so the
        // largest norm over 200 trials sits near 0.03.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let h: Vec<Vec3> =
                (0..200).map(|_| Vec3::from_fn(|_, _| 0.1 * rng.sample::<f64, _>(StandardNormal))).collect();
            worst = worst.max(estimate_bias(&h).unwrap().norm());
        }
        assert!(worst < 0.045, "{worst}");
    }

    fn synthetic(c_f: f64, masses: &[f64]) -> Vec<IdSample> {
        let p = VehicleParams { c_f, ..Default::default() };
        masses
            .iter()
            .map(|&m| {
                let w = (m * GRAVITY / (4.0 * c_f)).sqrt();
                IdSample { mass: m, rotor_speeds: Vector4::repeat(w), rotation: Matrix3::identity() }
            })
            .inspect(|s| assert!((rotor_force_body(&s.rotor_speeds, &p).z - s.mass * GRAVITY).abs() < 1e-9))
            .collect()
    }

    #[test]
    fn identify_noiseless() {
        let data = synthetic(1e-5, &[2.3, 2.4, 2.5, 2.6, 2.7]);
        let (c, res) = identify_cf(&data, &[e3(); 4]).unwrap();
        assert!(((c - 1e-5) / 1e-5).abs() < 1e-12);
        assert!(res < 1e-9);
    }

    #[test]
    fn identify_single_point_closed_form() {
        let w = 700.0;
        let data = [IdSample { mass: 2.3, rotor_speeds: Vector4::repeat(w), rotation: Matrix3::identity() }];
        let (c, res) = identify_cf(&data, &[e3(); 4]).unwrap();
        assert_relative_eq!(c, 2.3 * GRAVITY / (4.0 * w * w), max_relative = 1e-14);
        assert!(res < 1e-12);
    }

    #[test]
    fn identify_degenerate() {
        let data = [IdSample { mass: 2.3, rotor_speeds: Vector4::zeros(), rotation: Matrix3::identity() }];
        assert!(matches!(identify_cf(&data, &[e3(); 4]), Err(Error::DegenerateData(_))));
        assert!(matches!(identify_cf(&[], &[e3(); 4]), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn dataset_csv_round_trip() {
        let data = synthetic(1.3e-5, &[2.3, 2.7]);
        let mut buf = Vec::new();
        write_id_dataset(&data, &mut buf).unwrap();
        let back = parse_id_dataset(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, data);
        assert!(matches!(parse_id_dataset("mass_kg,w1\n1,2\n"), Err(Error::Schema(_))));
    }

    #[test]
    fn experiment_noiseless_hover_balance() {
        let sc = Scenario { noise: crate::vehicle::NoiseConfig::zero(), ..Scenario::default() };
        let masses = default_masses(sc.vehicle.m);
        let data = identification_experiment(&sc, &masses, 10.0).unwrap();
        let base = data[0].rotor_speeds[0];
        let last = data[4].rotor_speeds[0];
        assert_relative_eq!(last / base, ((2.3 + 0.4) / 2.3f64).sqrt(), max_relative = 1e-12);
        let (c, _) = identify_cf(&data, &sc.vehicle.z_p).unwrap();
        assert!(((c - sc.vehicle.c_f) / sc.vehicle.c_f).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn observer_is_linear(
            r1 in prop::array::uniform3(-5.0f64..5.0),
            r2 in prop::array::uniform3(-5.0f64..5.0),
            steps in 1usize..150,
        ) {
            let (r1, r2) = (Vec3::from(r1), Vec3::from(r2));
            let run = |r: Vec3| {
                let mut est = ForceEstimate::default();
                for _ in 0..steps {
                    est = filter_step(&est, &r, &cfg(), 0.01);
                }
                est
            };
            let (a, b, ab) = (run(r1), run(r2), run(r1 + r2));
            prop_assert!((a.f_hat_filtered + b.f_hat_filtered - ab.f_hat_filtered).norm() < 1e-9);
            prop_assert!((a.f_hat + b.f_hat - ab.f_hat).norm() < 1e-9);
        }

        #[test]
        fn step_response_monotone_and_unity_gain(r in -10.0f64..10.0) {
            let mut est = ForceEstimate::default();
            let mut prev = 0.0;
            let steps = (10.0 / 7.5 / 0.01) as usize;
            for _ in 0..steps {
                est = filter_step(&est, &Vec3::repeat(r), &cfg(), 0.01);
                let y = est.f_hat_filtered.x;
                prop_assert!(y.abs() >= prev - 1e-15 && y.abs() <= r.abs() + 1e-12);
                prev = y.abs();
            }
            prop_assert!((est.f_hat_filtered.x - r).abs() < 1e-3);
        }

        #[test]
        fn identify_recovers_any_cf(c_f in 1e-7f64..1e-3) {
            let data = synthetic(c_f, &[2.3, 2.4, 2.5]);
            let (c, _) = identify_cf(&data, &[e3(); 4]).unwrap();
            prop_assert!(((c - c_f) / c_f).abs() <= 1e-10);
        }
    }
}
