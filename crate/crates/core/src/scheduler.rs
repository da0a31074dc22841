//! Deterministic multi-rate executive.
//!
//! Every physics tick runs, in order: contact, inner loop and dynamics,
//! sensing. On their own rate boundaries then follow the force observer, the
//! ultrasonic gauge, trajectory sampling with the mission FSM, the admittance
//! filter and the pose controller. Slower signals are held between updates.
//! Tick 0 runs everything except physics so the first commands exist before
//! the first step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::admittance::{admittance_step, AdmittanceState};
use crate::contact::{contact_step, dispense_couplant, probe_tip, ContactState, UtGauge, UtReading};
use crate::controller::command;
use crate::mission::{self, BiasDirective, MissionContext, MissionInputs, MissionState, Phase};
use crate::observer::{estimate_bias, observer_update, ForceEstimate};
use crate::scenario::Scenario;
use crate::telemetry::LogRow;
use crate::trajectory::{plan, ReferenceSetpoint, Trajectory};
use crate::vehicle::{sense, step_dynamics, AccelYawRateCmd, InnerLoop, SensorReadings, VehicleState};
use crate::{Error, Result, Vec3};

/// Seed offset of the ultrasonic noise stream.
const UT_STREAM: u64 = 0x5554_5f6e_6f69_7365;

/// How often each rate group has fired.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RateCounters {
    pub physics: u64,
    pub observer: u64,
    pub planner: u64,
    pub admittance: u64,
    pub control: u64,
    pub ut: u64,
}

/// Ticks at which each group fired, for rate assertions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateTrace {
    pub observer: Vec<u64>,
    pub planner: Vec<u64>,
    pub admittance: Vec<u64>,
    pub control: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    pub mission: MissionState,
    /// Phase entries with their times.
    pub timeline: Vec<(f64, Phase)>,
    pub counters: RateCounters,
    /// Bias frozen by the last estimate, N.
    pub bias: Vec3,
    pub warnings: Vec<String>,
}

struct Dividers {
    observer: u64,
    planner: u64,
    admittance: u64,
    control: u64,
    ut: u64,
    log: u64,
}

/// Full simulation state, advanced one physics tick at a time.
pub struct Simulation {
    sc: Scenario,
    ctx: MissionContext,
    div: Dividers,
    dt: f64,
    tick: u64,
    started: bool,
    state: VehicleState,
    inner: InnerLoop,
    contact: ContactState,
    f_ext: Vec3,
    meas: SensorReadings,
    est: ForceEstimate,
    bias_window: Option<Vec<Vec3>>,
    adm: AdmittanceState,
    adm_enabled: bool,
    mission: MissionState,
    requested: bool,
    traj: Option<(Trajectory, f64)>,
    hold: ReferenceSetpoint,
    desired: ReferenceSetpoint,
    compliant: ReferenceSetpoint,
    cmd: AccelYawRateCmd,
    measuring: bool,
    gauge: UtGauge,
    ut: UtReading,
    ut_pending: Option<UtReading>,
    ut_new: bool,
    rng_sense: ChaCha8Rng,
    rng_ut: ChaCha8Rng,
    abort_request: Option<String>,
    terminal_since: Option<f64>,
    pub counters: RateCounters,
    pub trace: Option<RateTrace>,
    rows: Vec<LogRow>,
    timeline: Vec<(f64, Phase)>,
    warnings: Vec<String>,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let sc = scenario.clone();
        let div = Dividers {
            observer: sc.divider(sc.observer.rate)?,
            planner: sc.divider(sc.mission.rate)?,
            admittance: sc.divider(sc.admittance.rate)?,
            control: sc.divider(sc.gains.rate)?,
            ut: sc.divider(sc.ut.rate)?,
            log: sc.divider(sc.run.log_rate)?,
        };
        let state = VehicleState::hover(&sc.vehicle, sc.run.start_position, sc.run.start_yaw);
        let hold = ReferenceSetpoint::hold(sc.run.start_position, sc.run.start_yaw, 0.0);
        let mut rng_sense = ChaCha8Rng::seed_from_u64(sc.run.seed);
        let meas = sense(&state, &sc.noise.aero_force, &sc.vehicle, &sc.noise, &mut rng_sense);
        Ok(Self {
            ctx: MissionContext { cfg: sc.mission.clone(), probe: sc.probe.clone(), admittance: sc.admittance.clone() },
            div,
            dt: 1.0 / sc.run.physics_rate,
            tick: 0,
            started: false,
            inner: InnerLoop::new(&state),
            state,
            contact: ContactState::default(),
            f_ext: sc.noise.aero_force,
            meas,
            est: ForceEstimate::default(),
            bias_window: None,
            adm: AdmittanceState::default(),
            adm_enabled: false,
            mission: MissionState::default(),
            requested: false,
            traj: None,
            hold,
            desired: hold,
            compliant: hold,
            cmd: AccelYawRateCmd::hover(),
            measuring: false,
            gauge: UtGauge::default(),
            ut: UtReading::no_signal(),
            ut_pending: None,
            ut_new: false,
            rng_ut: ChaCha8Rng::seed_from_u64(sc.run.seed ^ UT_STREAM),
            rng_sense,
            abort_request: None,
            terminal_since: None,
            counters: RateCounters::default(),
            trace: None,
            rows: Vec::new(),
            timeline: vec![(0.0, Phase::Idle)],
            warnings: Vec::new(),
            sc,
        })
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn vehicle(&self) -> &VehicleState {
        &self.state
    }

    pub fn contact(&self) -> &ContactState {
        &self.contact
    }

    pub fn estimate(&self) -> &ForceEstimate {
        &self.est
    }

    pub fn mission(&self) -> &MissionState {
        &self.mission
    }

    /// Aborts the mission at the next planner tick.
    pub fn request_abort(&mut self, reason: &str) {
        self.abort_request = Some(reason.to_string());
    }

    /// Whether the run has reached its time limit or its post-mission hold.
    pub fn finished(&self) -> bool {
        let t = self.time();
        t >= self.sc.run.duration - 1e-9
            || self.terminal_since.is_some_and(|t0| t - t0 >= self.sc.run.stop_after_terminal - 1e-9)
    }

    /// Advances one physics tick (or runs the initial tick-0 updates).
    pub fn step(&mut self) -> Result<()> {
        if self.started {
            self.tick += 1;
            self.physics()?;
        }
        self.started = true;
        let i = self.tick;
        let t = self.time();

        self.meas = sense(&self.state, &self.f_ext, &self.sc.vehicle, &self.sc.noise, &mut self.rng_sense);

        if i.is_multiple_of(self.div.observer) {
            self.counters.observer += 1;
            if let Some(tr) = &mut self.trace {
                tr.observer.push(i);
            }
            self.est = observer_update(
                &self.est,
                &self.meas.imu_accel_body,
                &self.meas.odom_attitude,
                &self.meas.rotor_speeds_meas,
                &self.sc.vehicle,
                &self.sc.observer,
                1.0 / self.sc.observer.rate,
            )?;
            if let Some(w) = &mut self.bias_window {
                w.push(self.est.f_hat_filtered);
            }
        }

        self.ut_new = false;
        if i.is_multiple_of(self.div.ut) {
            if self.measuring {
                self.counters.ut += 1;
                let r = self.gauge.sample(&self.contact, &self.sc.surface, &self.sc.ut, &mut self.rng_ut);
                self.ut = r;
                self.ut_pending = Some(r);
                self.ut_new = true;
            } else {
                self.gauge = UtGauge::default();
                self.ut = UtReading::no_signal();
            }
        }

        if i.is_multiple_of(self.div.planner) {
            self.counters.planner += 1;
            if let Some(tr) = &mut self.trace {
                tr.planner.push(i);
            }
            self.planner_tick(t)?;
        }

        if i.is_multiple_of(self.div.admittance) {
            self.counters.admittance += 1;
            if let Some(tr) = &mut self.trace {
                tr.admittance.push(i);
            }
            if self.adm_enabled {
                let (adm, compliant) = admittance_step(
                    &self.adm,
                    &self.est.output(),
                    &self.desired,
                    &self.sc.admittance,
                    1.0 / self.sc.admittance.rate,
                )?;
                self.adm = adm;
                self.compliant = compliant;
            } else {
                self.compliant = self.desired;
            }
        }

        if i.is_multiple_of(self.div.control) {
            self.counters.control += 1;
            if let Some(tr) = &mut self.trace {
                tr.control.push(i);
            }
            self.cmd = command(
                &self.compliant,
                &self.meas.odom_p,
                &self.meas.odom_v,
                self.meas.odom_yaw(),
                &self.est.output(),
                &self.sc.gains,
            )?;
        }

        if i.is_multiple_of(self.div.log) {
            self.rows.push(self.row(t));
        }
        Ok(())
    }

    fn physics(&mut self) -> Result<()> {
        self.counters.physics += 1;
        let sc = &self.sc;
        let tip = probe_tip(&self.state, &sc.probe);
        let (contact, f_contact) = contact_step(&self.contact, &tip, &sc.surface, &sc.probe, self.state.yaw, self.dt);
        self.contact = contact;
        self.f_ext = f_contact + sc.noise.aero_force;

        let (w, att) = self.inner.step(&self.cmd, &self.state, &sc.vehicle, self.dt);
        self.state.rotor_speeds = w;
        self.state.attitude = att;
        self.state.yaw = att.euler_angles().2;
        self.state = step_dynamics(&self.state, &self.f_ext, &sc.vehicle, self.dt)
            .map_err(|_| Error::NonFiniteState { tick: self.tick })?;
        Ok(())
    }

    fn planner_tick(&mut self, t: f64) -> Result<()> {
        let traj_done = match &self.traj {
            Some((traj, t0)) => {
                self.desired = traj.sample(t - t0);
                traj.is_done(t - t0)
            }
            None => {
                self.desired = ReferenceSetpoint { t, ..self.hold };
                true
            }
        };

        let mc = &self.sc.mission;
        let request = (mc.autostart && !self.requested && t >= mc.t_start - 1e-9).then(|| self.sc.request());
        self.requested |= request.is_some();
        let inputs = MissionInputs {
            t,
            f_ext_hat: self.est.output(),
            odom_p: self.meas.odom_p,
            odom_yaw: self.meas.odom_yaw(),
            desired: Some(self.desired),
            trajectory_done: traj_done,
            ut: self.ut_pending.take(),
            request,
            abort: self.abort_request.take(),
        };
        let before = self.mission.phase;
        let (next, d) = mission::tick(&self.mission, &inputs, &self.ctx)?;
        self.mission = next;
        if self.mission.phase != before {
            self.timeline.push((t, self.mission.phase));
            log::info!("t={t:.2}s phase {} -> {}", before.name(), self.mission.phase.name());
            if self.mission.phase.is_terminal() {
                self.terminal_since = Some(t);
            }
            if self.mission.phase == Phase::Aborted {
                self.hold = ReferenceSetpoint { v: Vec3::zeros(), a: Vec3::zeros(), yaw_rate: 0.0, ..self.desired };
                self.traj = None;
                self.desired = ReferenceSetpoint { t, ..self.hold };
                self.measuring = false;
            }
        }

        if let Some(p) = d.plan {
            let traj = plan(&p.waypoints, &p.limits)?;
            let last = p.waypoints.last().expect("plans have waypoints");
            self.hold = ReferenceSetpoint::hold(last.p, last.yaw, t);
            self.desired = traj.sample(0.0);
            self.desired.t = t;
            self.traj = Some((traj, t));
        }
        if d.enable_admittance {
            self.adm.reset();
            self.adm_enabled = true;
        }
        match d.bias {
            BiasDirective::None => {}
            BiasDirective::Start => self.bias_window = Some(Vec::new()),
            BiasDirective::Finish => {
                let w = self.bias_window.take().unwrap_or_default();
                self.est.bias = estimate_bias(&w)?;
                log::info!("bias estimate {:?} N from {} samples", self.est.bias.as_slice(), w.len());
            }
        }
        if d.dispense_couplant {
            match dispense_couplant(&self.contact) {
                Ok(c) => self.contact = c,
                Err(e) => {
                    log::warn!("t={t:.2}s {e}");
                    self.warnings.push(format!("t={t:.2}s {e}"));
                }
            }
        }
        if !self.mission.phase.is_terminal() {
            self.measuring = d.request_measurement;
        }
        Ok(())
    }

    fn row(&self, t: f64) -> LogRow {
        let (roll, pitch, yaw) = self.state.attitude.euler_angles();
        LogRow {
            t,
            p: self.state.position,
            v: self.state.velocity,
            roll,
            pitch,
            yaw,
            p_r: self.compliant.p,
            v_r: self.compliant.v,
            p_d: self.desired.p,
            yaw_d: self.desired.yaw,
            f_ext: self.f_ext,
            f_hat: self.est.f_hat,
            f_filt: self.est.f_hat_filtered,
            f_est: self.est.output(),
            rotor_speeds: [0, 1, 2, 3].map(|k| self.state.rotor_speeds[k]),
            phase: self.mission.phase,
            latched: self.mission.contact_latched,
            attached: self.contact.attached,
            compression: self.contact.compression,
            interface_force: self.contact.interface_normal_force,
            ut_quality: self.ut.quality,
            ut_new: self.ut_new,
            ut_thickness: if self.ut_new { self.ut.thickness } else { None },
            ut_stable: self.ut.stable_duration,
            couplant_age: self.contact.couplant_age,
        }
        .quantized()
    }

    pub fn into_log(self) -> RunLog {
        RunLog {
            rows: self.rows,
            mission: self.mission,
            timeline: self.timeline,
            counters: self.counters,
            bias: self.est.bias,
            warnings: self.warnings,
        }
    }
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunLog> {
    let mut sim = Simulation::new(scenario)?;
    sim.step()?;
    while !sim.finished() {
        sim.step()?;
    }
    Ok(sim.into_log())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::log_to_string;
    use crate::vehicle::NoiseConfig;

    fn quiet() -> Scenario {
        Scenario { noise: NoiseConfig::zero(), ..Scenario::default() }
    }

    #[test]
    fn idle_hover_regulation() {
        let mut s = quiet();
        s.mission.autostart = false;
        s.run.duration = 5.0;
        let log = run(&s).unwrap();
        let worst = log.rows.iter().map(|r| (r.p_r - r.p).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-3, "{worst}");
        assert_eq!(log.mission.phase, Phase::Idle);
    }

    #[test]
    fn rates_are_exact() {
        let mut s = quiet();
        s.run.duration = 1.0;
        let mut sim = Simulation::new(&s).unwrap();
        sim.trace = Some(RateTrace::default());
        sim.step().unwrap();
        while !sim.finished() {
            sim.step().unwrap();
        }
        let tr = sim.trace.clone().unwrap();
        let spacing = |v: &[u64], d: u64| v.windows(2).all(|w| w[1] - w[0] == d);
        assert!(spacing(&tr.observer, 10));
        assert!(spacing(&tr.planner, 20));
        assert!(spacing(&tr.admittance, 20));
        assert!(spacing(&tr.control, 5));
        assert_eq!(sim.counters.physics, 1000);
        assert_eq!(sim.counters.control, 201);
        assert_eq!(sim.counters.observer, 101);
        assert_eq!(sim.counters.planner, 51);
    }

    #[test]
    fn logs_are_deterministic() {
        let mut s = Scenario::default();
        s.run.duration = 8.0;
        let a = log_to_string(&run(&s).unwrap().rows);
        let b = log_to_string(&run(&s).unwrap().rows);
        assert_eq!(a, b);
        s.run.seed = 2;
        assert_ne!(a, log_to_string(&run(&s).unwrap().rows));
    }

    #[test]
    fn log_times_strictly_increase_at_log_rate() {
        let mut s = quiet();
        s.run.duration = 2.0;
        let log = run(&s).unwrap();
        assert_eq!(log.rows.len(), 201);
        assert!(log.rows.windows(2).all(|w| w[1].t > w[0].t));
    }
}
