//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.
//!
//! Run with `cargo test -p aerial-ndt --test acceptance -- --nocapture` to see
//! the report; the lines are written straight to stdout so they also appear
//! in a plain `cargo test` log.

use std::io::Write;
use std::time::Instant;

use aerial_ndt::admittance::{admittance_step, depth_for_force, AdmittanceConfig, AdmittanceState};
use aerial_ndt::contact::{breakaway_force, contact_step, ContactState, ProbeSpec, SurfaceSpec, TipKinematics};
use aerial_ndt::metrics::{compute_metrics, Outcome, RunMetrics};
use aerial_ndt::mission::{
    allowed_transition, tick, InspectionRequest, MissionContext, MissionInputs, MissionState, Phase,
};
use aerial_ndt::observer::{
    default_masses, filter_step, identification_experiment, identify_cf, ForceEstimate, ObserverConfig,
};
use aerial_ndt::scenario::Scenario;
use aerial_ndt::scheduler::{run, RunLog};
use aerial_ndt::telemetry::log_to_string;
use aerial_ndt::trajectory::{plan, Limits, ReferenceSetpoint, Trajectory, Waypoint};
use aerial_ndt::vehicle::NoiseConfig;
use aerial_ndt::Vec3;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn report(n: usize, title: &str, outcome: &Check) {
    let line = match outcome {
        Ok(detail) => format!("PASS criterion {n}: {title}: {detail}\n"),
        Err(detail) => format!("FAIL criterion {n}: {title}: {detail}\n"),
    };
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn nominal() -> (RunLog, RunMetrics) {
    let log = run(&Scenario::default()).expect("nominal run");
    let m = compute_metrics(&log.rows).expect("nominal metrics");
    (log, m)
}

fn contact_force(m: &RunMetrics) -> Check {
    let mut s = Scenario::default();
    // Keep simulating after the mission so the full 60 s are timed.
    s.run.stop_after_terminal = s.run.duration;
    let start = Instant::now();
    let log = run(&s).map_err(|e| e.to_string())?;
    let wall = start.elapsed().as_secs_f64();
    let simulated = log.rows.last().map_or(0.0, |r| r.t);
    let f = m.steady_force.ok_or("no good_stable span")?;
    ensure(
        (f - 2.0).abs() <= 0.1 && wall < 10.0 && simulated >= 60.0 - 0.02,
        format!("steady interface force {f:.4} N (2.0 ± 0.1), {simulated:.2} s simulated in {wall:.2} s (< 10)"),
    )
}

fn depth_from_stiffness(m: &RunMetrics) -> Check {
    let depth = depth_for_force(2.0, &AdmittanceConfig::default(), &Vec3::x()).map_err(|e| e.to_string())?;
    let f_hat = m.steady_force_estimate.ok_or("no steady estimate")?;
    ensure(
        (depth - 2.0 / 30.0).abs() <= 1e-15 && (f_hat - 2.0).abs() <= 0.05 * 2.0,
        format!("depth {depth:.5} m (0.06667), steady |f_hat| {f_hat:.4} N (within 5 % of 2)"),
    )
}

fn observer_dc_gain() -> Check {
    let f = Vec3::new(1.0, -2.0, 0.5);
    let mut s = Scenario { noise: NoiseConfig { aero_force: f, ..NoiseConfig::zero() }, ..Scenario::default() };
    s.mission.autostart = false;
    s.run.duration = 4.0;
    let log = run(&s).map_err(|e| e.to_string())?;
    let err = log.rows.iter().filter(|r| r.t >= 2.0).map(|r| (r.f_est - f).amax()).fold(0.0, f64::max);
    // First logged instant at which the raw observer state reaches 1 − 1/e
    // of the step on every axis.
    let t63 = log
        .rows
        .iter()
        .find(|r| (0..3).all(|i| r.f_hat[i] / f[i] >= 1.0 - (-1.0f64).exp()))
        .map(|r| r.t)
        .ok_or("step never reached 63 %")?;
    let t_expected = 1.0 / 7.5;
    ensure(
        err <= 1e-3 && (t63 - t_expected).abs() <= 0.01 + 1e-9,
        format!("max error after 2 s {err:.2e} N (<= 1e-3), 63 % at {t63:.3} s ({t_expected:.3} ± 0.01)"),
    )
}

fn identification() -> Check {
    let mut s = Scenario::default();
    let truth = s.vehicle.c_f;
    let masses = default_masses(s.vehicle.m);
    s.noise = NoiseConfig::zero();
    let data = identification_experiment(&s, &masses, 10.0).map_err(|e| e.to_string())?;
    let (c_f, _) = identify_cf(&data, &s.vehicle.z_p).map_err(|e| e.to_string())?;
    let exact = ((c_f - truth) / truth).abs();

    s.noise.rotor_rel_sigma = 0.01;
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        s.run.seed = seed;
        let data = identification_experiment(&s, &masses, 10.0).map_err(|e| e.to_string())?;
        let (c_f, _) = identify_cf(&data, &s.vehicle.z_p).map_err(|e| e.to_string())?;
        worst = worst.max(((c_f - truth) / truth).abs());
    }
    ensure(
        exact <= 1e-10 && worst <= 5e-3,
        format!("noiseless relative error {exact:.1e} (<= 1e-10), worst of 100 noisy seeds {worst:.2e} (<= 5e-3)"),
    )
}

/// Derivative of order `r` of a segment polynomial at normalised time τ,
/// evaluated term by term.
fn poly(coeffs: &[f64; 10], tau: f64, r: usize) -> f64 {
    (r..10)
        .map(|k| {
            let falling: f64 = (0..r).map(|j| (k - j) as f64).product();
            coeffs[k] * falling * tau.powi((k - r) as i32)
        })
        .sum()
}

fn junction_mismatch(traj: &Trajectory) -> f64 {
    let mut worst: f64 = 0.0;
    for pair in traj.segments.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        for r in 0..5 {
            for ax in 0..3 {
                let left = poly(&a.coeffs[ax], 1.0, r) / a.duration.powi(r as i32);
                let right = poly(&b.coeffs[ax], 0.0, r) / b.duration.powi(r as i32);
                worst = worst.max((left - right).abs());
            }
        }
    }
    worst
}

fn trajectory_limits() -> Check {
    let limits = Limits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut v_worst, mut a_worst, mut j_worst): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..20 {
        let n = rng.random_range(2..=6);
        let wps: Vec<Waypoint> = (0..n)
            .map(|_| {
                let p = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.5..2.5));
                Waypoint::rest(p, rng.random_range(-3.0..3.0))
            })
            .collect();
        let traj = plan(&wps, &limits).map_err(|e| e.to_string())?;
        let steps = (traj.total_duration / 1e-3).ceil() as usize;
        for i in 0..=steps {
            let t = (i as f64 * 1e-3).min(traj.total_duration);
            v_worst = v_worst.max(traj.derivative(t, 1).norm());
            a_worst = a_worst.max(traj.derivative(t, 2).norm());
        }
        j_worst = j_worst.max(junction_mismatch(&traj));
    }
    ensure(
        v_worst <= 0.505 && a_worst <= 0.2525 && j_worst <= 1e-9,
        format!("max |v| {v_worst:.4} m/s (<= 0.505), max |a| {a_worst:.4} m/s² (<= 0.2525), junction {j_worst:.1e} (<= 1e-9)"),
    )
}

/// Step response of M ë + D ė + K e = −f from rest.
fn analytic(m: f64, d: f64, k: f64, f: f64, t: f64) -> f64 {
    let e_ss = -f / k;
    let wn = (k / m).sqrt();
    let zeta = d / (2.0 * (k * m).sqrt());
    assert!(zeta < 1.0, "oracle covers the underdamped case");
    let wd = wn * (1.0 - zeta * zeta).sqrt();
    let decay = (-zeta * wn * t).exp();
    e_ss * (1.0 - decay * ((wd * t).cos() + zeta * wn / wd * (wd * t).sin()))
}

fn admittance_response() -> Check {
    let cfg = AdmittanceConfig::default();
    let dt = 1.0 / cfg.rate;
    let desired = ReferenceSetpoint::hold(Vec3::zeros(), 0.0, 0.0);
    let mut worst: f64 = 0.0;
    let mut steady = 0.0;
    for axis in 0..3 {
        let mut f = Vec3::zeros();
        f[axis] = -2.0;
        let mut st = AdmittanceState::default();
        for k in 1..=1500 {
            st = admittance_step(&st, &f, &desired, &cfg, dt).map_err(|e| e.to_string())?.0;
            let t = k as f64 * dt;
            let e = analytic(cfg.m[axis], cfg.d[axis], cfg.k[axis], f[axis], t);
            worst = worst.max((st.e[axis] - e).abs());
            for other in (0..3).filter(|o| *o != axis) {
                worst = worst.max(st.e[other].abs());
            }
        }
        if axis == 0 {
            steady = st.e[0];
        }
    }
    ensure(
        worst <= 1e-9 && (steady - 2.0 / 30.0).abs() <= 1e-9,
        format!("max deviation from analytic {worst:.1e} m (<= 1e-9), steady e_x {steady:.6} m (2/30)"),
    )
}

fn mission_timeline(log: &RunLog, m: &RunMetrics) -> Check {
    let phases: Vec<Phase> = log.timeline.iter().map(|(_, p)| *p).collect();
    let recovery = m.recovery_time.ok_or("no detach recovery")?;
    let names: Vec<&str> = phases.iter().map(|p| p.name()).collect();
    ensure(
        phases == Phase::NOMINAL && m.outcome == Outcome::Success && recovery <= 1.5,
        format!("{} ; recovery {recovery:.2} s (<= 1.5)", names.join(" > ")),
    )
}

fn tracking(m: &RunMetrics) -> Check {
    let r = m.rmse;
    let [ey, ez] = m.yz_error;
    ensure(
        r.amax() <= 0.06 && ey <= 0.06 && ez <= 0.06,
        format!("RMSE {:.4}/{:.4}/{:.4} m, contact y/z error {ey:.4}/{ez:.4} m (all <= 0.06)", r.x, r.y, r.z),
    )
}

fn thickness_batch() -> Check {
    let mut readings = Vec::new();
    let mut failures = 0;
    for seed in 1..=20 {
        let mut s = Scenario::default();
        s.run.seed = seed;
        let log = run(&s).map_err(|e| e.to_string())?;
        let m = compute_metrics(&log.rows).map_err(|e| e.to_string())?;
        if m.outcome != Outcome::Success {
            failures += 1;
        }
        readings.extend(m.thickness);
    }
    if readings.len() < 2 {
        return Err("no thickness readings".into());
    }
    let n = readings.len() as f64;
    let mean = readings.iter().sum::<f64>() / n;
    let sd = (readings.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    ensure(
        failures == 0 && (mean - 3.0).abs() < 0.005 && 2.0 * sd <= 0.05,
        format!(
            "{} readings from 20 missions ({failures} failed): mean {mean:.3} mm, 2σ {:.4} mm (<= 0.05)",
            readings.len(),
            2.0 * sd
        ),
    )
}

fn determinism() -> Check {
    let mut varied = Scenario::default();
    varied.run.seed = 77;
    varied.noise.aero_force = Vec3::new(0.05, -0.02, 0.0);
    let mut identical = 0;
    for s in [Scenario::default(), varied] {
        let a = log_to_string(&run(&s).map_err(|e| e.to_string())?.rows);
        let b = log_to_string(&run(&s).map_err(|e| e.to_string())?.rows);
        if a.as_bytes() == b.as_bytes() {
            identical += 1;
        }
    }
    ensure(identical == 2, format!("{identical}/2 scenarios gave byte-identical logs"))
}

fn property(name: &str, cases: u32, f: impl FnOnce(&mut TestRunner) -> Result<(), String>) -> Result<String, String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    f(&mut runner).map(|_| format!("{name} ok")).map_err(|e| format!("{name}: {e}"))
}

fn properties() -> Check {
    let vec3 = || prop::array::uniform3(-5.0f64..5.0).prop_map(Vec3::from);
    let results = [
        property("admittance decoupling", 256, |r| {
            r.run(&(vec3(), vec3(), vec3()), |(f, e0, v0)| {
                let cfg = AdmittanceConfig::default();
                let desired = ReferenceSetpoint::hold(Vec3::zeros(), 0.0, 0.0);
                let st = AdmittanceState { e: e0 * 0.1, e_dot: v0 * 0.1 };
                let (full, _) = admittance_step(&st, &f, &desired, &cfg, 0.02).unwrap();
                for i in 0..3 {
                    let mut fi = Vec3::zeros();
                    fi[i] = f[i];
                    let mut si = AdmittanceState::default();
                    si.e[i] = st.e[i];
                    si.e_dot[i] = st.e_dot[i];
                    let (alone, _) = admittance_step(&si, &fi, &desired, &cfg, 0.02).unwrap();
                    prop_assert_eq!(alone.e[i], full.e[i]);
                    prop_assert_eq!(alone.e_dot[i], full.e_dot[i]);
                }
                Ok(())
            })
            .map_err(|e| e.to_string())
        }),
        property("observer linearity", 256, |r| {
            r.run(&(vec3(), vec3(), -3.0f64..3.0), |(a, b, s)| {
                let cfg = ObserverConfig::default();
                let (mut ea, mut eb, mut ec) =
                    (ForceEstimate::default(), ForceEstimate::default(), ForceEstimate::default());
                for _ in 0..50 {
                    ea = filter_step(&ea, &a, &cfg, 0.01);
                    eb = filter_step(&eb, &b, &cfg, 0.01);
                    ec = filter_step(&ec, &(a * s + b), &cfg, 0.01);
                }
                let combined = ea.f_hat_filtered * s + eb.f_hat_filtered;
                prop_assert!((ec.f_hat_filtered - combined).amax() <= 1e-12 * (1.0 + combined.amax()));
                Ok(())
            })
            .map_err(|e| e.to_string())
        }),
        property("breakaway monotone, zero at 60°", 512, |r| {
            r.run(&(0.0f64..std::f64::consts::PI, 0.0f64..std::f64::consts::PI), |(a, b)| {
                let p = ProbeSpec::default();
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(breakaway_force(&p, hi) <= breakaway_force(&p, lo));
                prop_assert_eq!(breakaway_force(&p, 60f64.to_radians()), 0.0);
                if hi >= 60f64.to_radians() {
                    prop_assert_eq!(breakaway_force(&p, hi), 0.0);
                }
                Ok(())
            })
            .map_err(|e| e.to_string())
        }),
        property("contact force continuity", 64, |r| {
            r.run(&(-0.2f64..0.2, -2.0f64..2.0, 0.0f64..1.5), |(v0, acc, yaw_rate)| {
                let surface = SurfaceSpec::default();
                let probe = ProbeSpec::default();
                let dt = 1e-3;
                let (mut x, mut v, mut psi) = (1.49, v0, 0.0);
                let mut c = ContactState::default();
                let mut f_prev = Vec3::zeros();
                for _ in 0..2000 {
                    let (x0, v0) = (x, v);
                    v = (v + acc * dt).clamp(-0.3, 0.3);
                    x = (x + v * dt).clamp(1.45, 1.52);
                    psi += yaw_rate * dt;
                    let tip = TipKinematics {
                        position: Vec3::new(x, 0.0, 1.0),
                        axis: Vec3::x(),
                        velocity: Vec3::new(v, 0.0, 0.0),
                    };
                    let (next, f) = contact_step(&c, &tip, &surface, &probe, psi, dt);
                    if !(c.attached && !next.attached) {
                        let dx = (x - x0).abs();
                        let bound = (probe.k_spring + probe.z_coupling) * dx
                            + probe.d_spring * ((v - v0).abs() + 0.3 * dx / probe.damper_ramp)
                            + probe.f_breakaway_0 * yaw_rate * dt / probe.yaw_release
                            + 1e-9;
                        prop_assert!((f - f_prev).norm() <= bound);
                    }
                    c = next;
                    f_prev = f;
                }
                Ok(())
            })
            .map_err(|e| e.to_string())
        }),
        property("mission graph closure", 256, |r| {
            let inputs =
                prop::collection::vec((0.0f64..60.0, vec3(), any::<bool>(), any::<bool>(), any::<bool>()), 1..25);
            r.run(&(prop::sample::select(Phase::ALL.to_vec()), inputs), |(phase, seq)| {
                let ctx = MissionContext {
                    cfg: Default::default(),
                    probe: ProbeSpec::default(),
                    admittance: AdmittanceConfig::default(),
                };
                let request = InspectionRequest { point: Vec3::new(1.5, 0.0, 1.0), normal: -Vec3::x() };
                let mut s = MissionState::default();
                s.phase = phase;
                s.inspection_pose = Some(request);
                s.target = Some(Vec3::new(0.7, 0.0, 1.0));
                let mut t = 0.0;
                for (dt, f, done, req, ab) in seq {
                    t += dt * 0.1;
                    let inp = MissionInputs {
                        t,
                        f_ext_hat: f,
                        odom_p: Vec3::new(0.5, 0.0, 1.0),
                        trajectory_done: done,
                        request: req.then_some(request),
                        abort: ab.then(|| "operator".to_string()),
                        ..Default::default()
                    };
                    let (n, _) = tick(&s, &inp, &ctx).unwrap();
                    prop_assert!(allowed_transition(s.phase, n.phase));
                    s = n;
                }
                Ok(())
            })
            .map_err(|e| e.to_string())
        }),
    ];
    let failed: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    if failed.is_empty() {
        Ok(format!("{} suites passed", results.len()))
    } else {
        Err(failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; "))
    }
}

#[test]
fn acceptance() {
    let (log, m) = nominal();
    let results: Vec<(usize, &str, Check)> = vec![
        (1, "contact force", contact_force(&m)),
        (2, "depth from stiffness", depth_from_stiffness(&m)),
        (3, "force observer", observer_dc_gain()),
        (4, "thrust coefficient identification", identification()),
        (5, "trajectory limits", trajectory_limits()),
        (6, "admittance response", admittance_response()),
        (7, "mission completion", mission_timeline(&log, &m)),
        (8, "tracking errors", tracking(&m)),
        (9, "thickness batch", thickness_batch()),
        (10, "determinism", determinism()),
        (11, "property suites", properties()),
    ];
    for (n, title, outcome) in &results {
        report(*n, title, outcome);
    }
    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
