//! Inspection state machine.
//!
//! Targets are expressed for the probe tip and converted to vehicle positions
//! with the probe mounting offset at the commanded yaw.

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use crate::admittance::{depth_for_force, AdmittanceConfig};
use crate::contact::{ProbeSpec, UtQuality, UtReading};
use crate::trajectory::{Limits, ReferenceSetpoint, Waypoint};
use crate::{all_finite, e3, wrap_angle, Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Idle,
    ApproachInspection,
    PrepareContact,
    MoveForward,
    PerformMeasurement,
    Detach,
    Done,
    Aborted,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Phase::Idle,
        Phase::ApproachInspection,
        Phase::PrepareContact,
        Phase::MoveForward,
        Phase::PerformMeasurement,
        Phase::Detach,
        Phase::Done,
        Phase::Aborted,
    ];

    /// The successful mission, in order.
    pub const NOMINAL: [Phase; 7] = [
        Phase::Idle,
        Phase::ApproachInspection,
        Phase::PrepareContact,
        Phase::MoveForward,
        Phase::PerformMeasurement,
        Phase::Detach,
        Phase::Done,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Idle => "Idle",
            Phase::ApproachInspection => "ApproachInspection",
            Phase::PrepareContact => "PrepareContact",
            Phase::MoveForward => "MoveForward",
            Phase::PerformMeasurement => "PerformMeasurement",
            Phase::Detach => "Detach",
            Phase::Done => "Done",
            Phase::Aborted => "Aborted",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    /// Position in the nominal sequence; `Aborted` has none.
    pub fn number(self) -> Option<usize> {
        Self::NOMINAL.iter().position(|p| *p == self)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Aborted)
    }
}

/// Edges of the mission graph: the nominal chain plus an abort edge from
/// every non-terminal phase.
pub fn allowed_transition(from: Phase, to: Phase) -> bool {
    use Phase::*;
    match (from, to) {
        (a, b) if a == b => true,
        (a, Aborted) => !a.is_terminal(),
        (Idle, ApproachInspection)
        | (ApproachInspection, PrepareContact)
        | (PrepareContact, MoveForward)
        | (MoveForward, PerformMeasurement)
        | (PerformMeasurement, Detach)
        | (Detach, Done) => true,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    /// Standoff of the probe tip from the surface before contact, m.
    pub approach_offset: f64,
    /// Desired steady contact force, N.
    pub f_desired: f64,
    pub f_contact_threshold: f64,
    /// Speed limit while moving into contact, m/s.
    pub approach_speed: f64,
    pub t_bias_window: f64,
    pub t_measurement_max: f64,
    pub detach_yaw: f64,
    pub detach_back_offset: f64,
    pub detach_lateral_offset: f64,
    /// Position gate for leaving the approach, m.
    pub pose_tolerance: f64,
    /// Extra time allowed after a trajectory ends before giving up, s.
    pub timeout_grace: f64,
    pub max_vel: f64,
    pub max_acc: f64,
    pub max_yaw_rate: f64,
    /// FSM and planner rate, Hz.
    pub rate: f64,
    /// Issue the inspection request automatically at `t_start`.
    pub autostart: bool,
    pub t_start: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            approach_offset: 0.5,
            f_desired: 2.0,
            f_contact_threshold: 1.0,
            approach_speed: 0.1,
            t_bias_window: 2.0,
            t_measurement_max: 15.0,
            detach_yaw: 60f64.to_radians(),
            detach_back_offset: 0.5,
            detach_lateral_offset: 0.3,
            pose_tolerance: 0.05,
            timeout_grace: 5.0,
            max_vel: 0.5,
            max_acc: 0.25,
            max_yaw_rate: 0.5,
            rate: 50.0,
            autostart: true,
            t_start: 1.0,
        }
    }
}

impl MissionConfig {
    pub fn validate(&self, adm: &AdmittanceConfig, normal: &Vec3) -> Result<()> {
        let positive = [
            self.approach_offset,
            self.f_desired,
            self.f_contact_threshold,
            self.approach_speed,
            self.t_bias_window,
            self.t_measurement_max,
            self.pose_tolerance,
            self.rate,
        ];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::Config("mission thresholds, offsets and rate must be positive".into()));
        }
        if !(self.timeout_grace >= 0.0 && self.t_start >= 0.0) {
            return Err(Error::Config("mission.timeout_grace and t_start must be non-negative".into()));
        }
        if !(self.detach_back_offset >= 0.0 && self.detach_lateral_offset >= 0.0 && self.detach_yaw.is_finite()) {
            return Err(Error::Config("mission detach offsets must be non-negative".into()));
        }
        self.limits().validate()?;
        let depth = depth_for_force(self.f_desired, adm, &-normal)?;
        if !(self.approach_offset > depth) {
            return Err(Error::Config(format!(
                "mission.approach_offset {} must exceed the contact depth {depth:.4}",
                self.approach_offset
            )));
        }
        Ok(())
    }

    pub fn limits(&self) -> Limits {
        Limits { max_vel: self.max_vel, max_acc: self.max_acc, max_yaw_rate: self.max_yaw_rate }
    }

    fn contact_limits(&self) -> Limits {
        Limits { max_vel: self.approach_speed, ..self.limits() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InspectionRequest {
    pub point: Vec3,
    /// Unit normal pointing away from the surface.
    pub normal: Vec3,
}

impl InspectionRequest {
    pub fn validate(&self) -> Result<()> {
        if !all_finite(&self.point) || !all_finite(&self.normal) {
            return Err(Error::InvalidPose("non-finite point or normal".into()));
        }
        if (self.normal.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidPose(format!("normal has length {}", self.normal.norm())));
        }
        if self.normal.xy().norm() < 1e-6 {
            return Err(Error::InvalidPose("normal must have a horizontal component".into()));
        }
        Ok(())
    }
}

/// What the FSM sees on each tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MissionInputs {
    pub t: f64,
    /// Bias-corrected force estimate, N.
    pub f_ext_hat: Vec3,
    pub odom_p: Vec3,
    pub odom_yaw: f64,
    /// Current nominal reference sample.
    pub desired: Option<ReferenceSetpoint>,
    pub trajectory_done: bool,
    /// Fresh ultrasonic reading since the previous tick.
    pub ut: Option<UtReading>,
    pub request: Option<InspectionRequest>,
    pub abort: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiasDirective {
    #[default]
    None,
    /// Clear the history and start recording.
    Start,
    /// Average the recorded window and freeze it.
    Finish,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// Vehicle waypoints, starting at the current reference.
    pub waypoints: Vec<Waypoint>,
    pub limits: Limits,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Directives {
    pub plan: Option<Plan>,
    pub enable_admittance: bool,
    pub bias: BiasDirective,
    pub dispense_couplant: bool,
    /// Level signal: sample the gauge while set.
    pub request_measurement: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionState {
    pub phase: Phase,
    pub phase_entry_time: f64,
    pub contact_latched: bool,
    /// The reading that completed the measurement.
    pub measurement: Option<UtReading>,
    /// Thickness values of the streak that ended in a stable reading, mm.
    pub thickness_record: Vec<f64>,
    pub inspection_pose: Option<InspectionRequest>,
    pub abort_reason: Option<String>,
    /// Vehicle position the current leg aims for.
    pub target: Option<Vec3>,
    /// Latest time the current phase may last before it is aborted.
    pub deadline: f64,
    pub couplant_dispensed: bool,
    streak: Vec<f64>,
}

impl Default for MissionState {
    fn default() -> Self {
        Self {
            phase: Phase::Idle,
            phase_entry_time: 0.0,
            contact_latched: false,
            measurement: None,
            thickness_record: Vec::new(),
            inspection_pose: None,
            abort_reason: None,
            target: None,
            deadline: f64::INFINITY,
            couplant_dispensed: false,
            streak: Vec::new(),
        }
    }
}

/// `|f̂| > threshold`.
pub fn contact_detected(f_ext_hat: &Vec3, threshold: f64) -> bool {
    f_ext_hat.norm() > threshold
}

/// Yaw that points the probe axis against the surface normal.
pub fn facing_yaw(normal: &Vec3, probe_axis_body: &Vec3) -> f64 {
    wrap_angle((-normal.y).atan2(-normal.x) - probe_axis_body.y.atan2(probe_axis_body.x))
}

/// Vehicle position that puts the probe tip at `tip` when flying at `yaw`.
pub fn vehicle_for_tip(tip: &Vec3, yaw: f64, probe_offset_body: &Vec3) -> Vec3 {
    tip - Rotation3::from_axis_angle(&Vec3::z_axis(), yaw) * probe_offset_body
}

/// Single waypoint backing off the surface while yawing to release the hood.
pub fn detach_waypoints(current: &Vec3, yaw: f64, normal: &Vec3, cfg: &MissionConfig) -> Vec<Waypoint> {
    let lateral = normal.cross(&e3());
    let lateral = if lateral.norm() > 1e-9 { lateral.normalize() } else { Vec3::zeros() };
    let p = current + normal * cfg.detach_back_offset + lateral * cfg.detach_lateral_offset;
    vec![Waypoint::rest(p, wrap_angle(yaw + cfg.detach_yaw))]
}

/// Static context the FSM needs besides its config.
#[derive(Debug, Clone, PartialEq)]
pub struct MissionContext {
    pub cfg: MissionConfig,
    pub probe: ProbeSpec,
    pub admittance: AdmittanceConfig,
}

fn start_waypoint(inputs: &MissionInputs) -> Waypoint {
    let d = inputs.desired.unwrap_or_else(|| ReferenceSetpoint::hold(inputs.odom_p, inputs.odom_yaw, inputs.t));
    Waypoint { p: d.p, yaw: d.yaw, v: Some(d.v), a: Some(d.a) }
}

fn enter(next: &mut MissionState, phase: Phase, t: f64) {
    debug_assert!(allowed_transition(next.phase, phase), "{:?} -> {:?}", next.phase, phase);
    next.phase = phase;
    next.phase_entry_time = t;
    next.deadline = f64::INFINITY;
}

fn abort(next: &mut MissionState, reason: &str, t: f64) -> Directives {
    enter(next, Phase::Aborted, t);
    next.abort_reason = Some(reason.to_string());
    next.contact_latched = false;
    Directives::default()
}

/// One FSM step.
pub fn tick(state: &MissionState, inputs: &MissionInputs, ctx: &MissionContext) -> Result<(MissionState, Directives)> {
    let cfg = &ctx.cfg;
    let t = inputs.t;
    let mut next = state.clone();
    let mut out = Directives::default();
    if state.phase.is_terminal() {
        return Ok((next, out));
    }
    if let Some(reason) = &inputs.abort {
        let out = abort(&mut next, reason, t);
        return Ok((next, out));
    }

    match state.phase {
        Phase::Idle => {
            if let Some(req) = inputs.request {
                req.validate()?;
                let yaw = facing_yaw(&req.normal, &ctx.probe.axis_body);
                let tip = req.point + req.normal * cfg.approach_offset;
                let target = vehicle_for_tip(&tip, yaw, &ctx.probe.offset_body);
                next.inspection_pose = Some(req);
                next.target = Some(target);
                enter(&mut next, Phase::ApproachInspection, t);
                out.plan = Some(Plan {
                    waypoints: vec![start_waypoint(inputs), Waypoint::rest(target, yaw)],
                    limits: cfg.limits(),
                });
            }
        }
        Phase::ApproachInspection => {
            let target = state.target.ok_or_else(|| Error::InvalidPose("approach phase without target".into()))?;
            if inputs.trajectory_done {
                if next.deadline.is_infinite() {
                    next.deadline = t + cfg.timeout_grace;
                }
                if (target - inputs.odom_p).norm() < cfg.pose_tolerance {
                    enter(&mut next, Phase::PrepareContact, t);
                    out.enable_admittance = true;
                    out.bias = BiasDirective::Start;
                } else if t > next.deadline {
                    out = abort(&mut next, "approach timeout", t);
                }
            }
        }
        Phase::PrepareContact => {
            if t - state.phase_entry_time >= cfg.t_bias_window - 1e-9 {
                out.bias = BiasDirective::Finish;
                let req =
                    state.inspection_pose.ok_or_else(|| Error::InvalidPose("prepare phase without pose".into()))?;
                let yaw = facing_yaw(&req.normal, &ctx.probe.axis_body);
                let depth = depth_for_force(cfg.f_desired, &ctx.admittance, &-req.normal)?;
                let tip = req.point - req.normal * depth;
                let target = vehicle_for_tip(&tip, yaw, &ctx.probe.offset_body);
                next.target = Some(target);
                enter(&mut next, Phase::MoveForward, t);
                out.plan = Some(Plan {
                    waypoints: vec![start_waypoint(inputs), Waypoint::rest(target, yaw)],
                    limits: cfg.contact_limits(),
                });
            }
        }
        Phase::MoveForward => {
            if contact_detected(&inputs.f_ext_hat, cfg.f_contact_threshold) {
                next.contact_latched = true;
            }
            if inputs.trajectory_done && next.deadline.is_infinite() {
                next.deadline = t + cfg.timeout_grace;
            }
            if next.contact_latched && inputs.trajectory_done {
                enter(&mut next, Phase::PerformMeasurement, t);
                next.couplant_dispensed = true;
                next.streak.clear();
                out.dispense_couplant = true;
                out.request_measurement = true;
            } else if t > next.deadline {
                out = abort(&mut next, "contact timeout", t);
            }
        }
        Phase::PerformMeasurement => {
            out.request_measurement = true;
            if let Some(r) = inputs.ut {
                match (r.quality, r.thickness) {
                    (UtQuality::NoSignal, _) | (_, None) => next.streak.clear(),
                    (_, Some(th)) => {
                        if r.stable_duration == 0.0 {
                            next.streak.clear();
                        }
                        next.streak.push(th);
                    }
                }
                if r.quality == UtQuality::GoodStable {
                    next.measurement = Some(r);
                    next.thickness_record = std::mem::take(&mut next.streak);
                    let req = state
                        .inspection_pose
                        .ok_or_else(|| Error::InvalidPose("measurement phase without pose".into()))?;
                    let start = start_waypoint(inputs);
                    let mut wps = vec![start.clone()];
                    wps.extend(detach_waypoints(&start.p, start.yaw, &req.normal, cfg));
                    next.target = Some(wps[1].p);
                    enter(&mut next, Phase::Detach, t);
                    out.request_measurement = false;
                    out.plan = Some(Plan { waypoints: wps, limits: cfg.limits() });
                    return Ok((next, out));
                }
            }
            if t - state.phase_entry_time > cfg.t_measurement_max {
                out = abort(&mut next, "measurement timeout", t);
            }
        }
        Phase::Detach => {
            let req = state.inspection_pose.ok_or_else(|| Error::InvalidPose("detach phase without pose".into()))?;
            let yaw_rot = Rotation3::from_axis_angle(&Vec3::z_axis(), inputs.odom_yaw);
            let tip = inputs.odom_p + yaw_rot * ctx.probe.offset_body;
            if inputs.trajectory_done && next.deadline.is_infinite() {
                next.deadline = t + cfg.timeout_grace;
            }
            if req.normal.dot(&(tip - req.point)) > 0.8 * cfg.approach_offset {
                enter(&mut next, Phase::Done, t);
                next.contact_latched = false;
            } else if t > next.deadline {
                out = abort(&mut next, "detach timeout", t);
            }
        }
        Phase::Done | Phase::Aborted => unreachable!(),
    }
    Ok((next, out))
}
