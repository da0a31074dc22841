//! Minimum-snap piecewise polynomial trajectories.
//!
//! Each axis is a chain of degree-9 polynomials in normalised segment time
//! `τ = t / T ∈ [0, 1]`. Coefficients come from one equality-constrained
//! quadratic program per waypoint set, solved for the free knot derivatives. Yaw is
//! planned separately as rest-to-rest quintics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{all_finite, wrap_angle, Error, Result, Vec3};

const COEFFS: usize = 10;
/// Derivative orders fixed at the endpoints (position through snap).
const END_ORDERS: usize = 5;
const MAX_SCALINGS: usize = 5;
const LIMIT_SLACK: f64 = 1.01;
const CHECK_DT: f64 = 0.01;
const MIN_DURATION: f64 = 0.1;
/// Peak of d/dτ (10τ³ − 15τ⁴ + 6τ⁵).
const QUINTIC_PEAK_RATE: f64 = 1.875;

#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub p: Vec3,
    pub yaw: f64,
    pub v: Option<Vec3>,
    pub a: Option<Vec3>,
}

impl Waypoint {
    pub fn rest(p: Vec3, yaw: f64) -> Self {
        Self { p, yaw, v: None, a: None }
    }

    fn is_finite(&self) -> bool {
        all_finite(&self.p)
            && self.yaw.is_finite()
            && self.v.as_ref().is_none_or(all_finite)
            && self.a.as_ref().is_none_or(all_finite)
    }

    fn derivatives(&self) -> [Vec3; END_ORDERS] {
        [self.p, self.v.unwrap_or_else(Vec3::zeros), self.a.unwrap_or_else(Vec3::zeros), Vec3::zeros(), Vec3::zeros()]
    }
}

/// Kinematic limits used for time allocation and the post-solve check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub max_vel: f64,
    pub max_acc: f64,
    pub max_yaw_rate: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_vel: 0.5, max_acc: 0.25, max_yaw_rate: 0.5 }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_vel > 0.0 && self.max_acc > 0.0 && self.max_yaw_rate > 0.0) {
            return Err(Error::Config("limits must be positive".into()));
        }
        Ok(())
    }
}

/// Sample of the reference consumed by the pose controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSetpoint {
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub t: f64,
}

impl ReferenceSetpoint {
    /// Stationary setpoint.
    pub fn hold(p: Vec3, yaw: f64, t: f64) -> Self {
        Self { p, v: Vec3::zeros(), a: Vec3::zeros(), yaw: wrap_angle(yaw), yaw_rate: 0.0, t }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub duration: f64,
    /// Per-axis coefficients in τ, lowest order first.
    pub coeffs: [[f64; COEFFS]; 3],
    /// Unwrapped yaw at segment start and its change over the segment.
    pub yaw_start: f64,
    pub yaw_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub segments: Vec<Segment>,
    pub total_duration: f64,
}

fn falling(k: usize, r: usize) -> f64 {
    if k < r {
        0.0
    } else {
        ((k - r + 1)..=k).product::<usize>() as f64
    }
}

/// r-th τ-derivative of a polynomial at τ.
fn poly_deriv(c: &[f64; COEFFS], tau: f64, r: usize) -> f64 {
    (r..COEFFS).rev().fold(0.0, |acc, k| acc * tau + c[k] * falling(k, r))
}

/// Trapezoidal/triangular duration for a move of length `len`.
fn profile_time(len: f64, max_vel: f64, max_acc: f64) -> f64 {
    if len <= max_vel * max_vel / max_acc {
        2.0 * (len / max_acc).sqrt()
    } else {
        len / max_vel + max_vel / max_acc
    }
}

/// Segment durations from a trapezoidal velocity profile over each straight
/// leg, stretched if the yaw change needs longer, with a 0.1 s floor.
pub fn allocate_times(waypoints: &[Waypoint], limits: &Limits) -> Vec<f64> {
    waypoints
        .windows(2)
        .map(|w| {
            let len = (w[1].p - w[0].p).norm();
            let t_pos = profile_time(len, limits.max_vel, limits.max_acc);
            let t_yaw = QUINTIC_PEAK_RATE * wrap_angle(w[1].yaw - w[0].yaw).abs() / limits.max_yaw_rate;
            t_pos.max(t_yaw).max(MIN_DURATION)
        })
        .collect()
}

/// Inverse of the boundary-derivative map of one normalised segment and the
/// snap cost expressed in boundary derivatives.
fn segment_basis() -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut a = DMatrix::<f64>::zeros(COEFFS, COEFFS);
    for r in 0..END_ORDERS {
        a[(r, r)] = falling(r, r);
        for k in r..COEFFS {
            a[(END_ORDERS + r, k)] = falling(k, r);
        }
    }
    let a_inv = a.try_inverse().ok_or_else(|| Error::SolverSingular("boundary map".into()))?;
    let mut h = DMatrix::<f64>::zeros(COEFFS, COEFFS);
    for k in 4..COEFFS {
        for l in 4..COEFFS {
            h[(k, l)] = falling(k, 4) * falling(l, 4) / (k + l - 7) as f64;
        }
    }
    let q = a_inv.transpose() * h * &a_inv;
    Ok((a_inv, q))
}

/// Minimum-snap trajectory with the given segment durations.
pub fn solve_with_durations(waypoints: &[Waypoint], durations: &[f64]) -> Result<Trajectory> {
    if waypoints.len() < 2 {
        return Err(Error::SolverSingular("need at least two waypoints".into()));
    }
    if durations.len() != waypoints.len() - 1 {
        return Err(Error::SolverSingular("one duration per segment required".into()));
    }
    if !waypoints.iter().all(Waypoint::is_finite) {
        return Err(Error::NonFiniteInput("plan"));
    }
    if !durations.iter().all(|t| t.is_finite() && *t > 0.0) {
        return Err(Error::SolverSingular("durations must be positive".into()));
    }

    let segs = durations.len();
    let knots = segs + 1;
    // Unknowns are the derivatives at each knot, scaled by t_ref^r so the
    // system stays well conditioned whatever the absolute durations.
    let t_ref = durations.iter().sum::<f64>() / segs as f64;
    let idx = |knot: usize, r: usize| END_ORDERS * knot + r;
    let n = END_ORDERS * knots;

    let (a_inv, q) = segment_basis()?;
    // Local boundary vector of segment i from the global knot vector.
    let local = |i: usize| {
        let s = durations[i] / t_ref;
        let mut m = DMatrix::<f64>::zeros(COEFFS, n);
        for r in 0..END_ORDERS {
            m[(r, idx(i, r))] = s.powi(r as i32);
            m[(END_ORDERS + r, idx(i + 1, r))] = s.powi(r as i32);
        }
        m
    };
    let mut cost = DMatrix::<f64>::zeros(n, n);
    for (i, dur) in durations.iter().enumerate() {
        let m = local(i);
        cost += (m.transpose() * &q * &m) * (t_ref / dur).powi(7);
    }

    let mut known = DMatrix::<f64>::zeros(n, 3);
    let mut fixed = vec![false; n];
    let first = waypoints[0].derivatives();
    let last = waypoints[segs].derivatives();
    for r in 0..END_ORDERS {
        let scale = t_ref.powi(r as i32);
        known.row_mut(idx(0, r)).copy_from(&(first[r] * scale).transpose());
        known.row_mut(idx(segs, r)).copy_from(&(last[r] * scale).transpose());
        fixed[idx(0, r)] = true;
        fixed[idx(segs, r)] = true;
    }
    for (j, wp) in waypoints.iter().enumerate().take(segs).skip(1) {
        known.row_mut(idx(j, 0)).copy_from(&wp.p.transpose());
        fixed[idx(j, 0)] = true;
    }

    let free: Vec<usize> = (0..n).filter(|&k| !fixed[k]).collect();
    let held: Vec<usize> = (0..n).filter(|&k| fixed[k]).collect();
    let mut g = known.clone();
    if !free.is_empty() {
        let pff = cost.select_rows(&free).select_columns(&free);
        let pfx = cost.select_rows(&free).select_columns(&held);
        let rhs = -(pfx * known.select_rows(&held));
        let x = pff
            .cholesky()
            .ok_or_else(|| Error::SolverSingular("snap cost is not positive definite".into()))?
            .solve(&rhs);
        for (row, &k) in free.iter().enumerate() {
            g.set_row(k, &x.row(row));
        }
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::SolverSingular("non-finite solution".into()));
    }
    let coeffs: Vec<DMatrix<f64>> = (0..segs).map(|i| &a_inv * local(i) * &g).collect();

    let mut yaw = waypoints[0].yaw;
    let segments = (0..segs)
        .map(|i| {
            let coeffs = std::array::from_fn(|ax| std::array::from_fn(|k| coeffs[i][(k, ax)]));
            let yaw_delta = wrap_angle(waypoints[i + 1].yaw - waypoints[i].yaw);
            let seg = Segment { duration: durations[i], coeffs, yaw_start: yaw, yaw_delta };
            yaw += yaw_delta;
            seg
        })
        .collect();
    Ok(Trajectory { segments, total_duration: durations.iter().sum() })
}

/// Plans a trajectory through `waypoints` and stretches it uniformly until
/// the sampled speed and acceleration respect `limits`.
pub fn plan(waypoints: &[Waypoint], limits: &Limits) -> Result<Trajectory> {
    limits.validate()?;
    let mut durations = allocate_times(waypoints, limits);
    for iter in 0..=MAX_SCALINGS {
        let traj = solve_with_durations(waypoints, &durations)?;
        let (v_max, a_max) = traj.peak_speed_accel(CHECK_DT);
        if v_max <= LIMIT_SLACK * limits.max_vel && a_max <= LIMIT_SLACK * limits.max_acc {
            return Ok(traj);
        }
        if iter == MAX_SCALINGS {
            break;
        }
        let factor = (v_max / limits.max_vel).max((a_max / limits.max_acc).sqrt());
        durations.iter_mut().for_each(|t| *t *= factor);
    }
    Err(Error::LimitUnreachable(MAX_SCALINGS))
}

impl Segment {
    fn eval(&self, tau: f64, r: usize) -> Vec3 {
        let s = self.duration.powi(r as i32);
        Vec3::from_fn(|ax, _| poly_deriv(&self.coeffs[ax], tau, r) / s)
    }
}

impl Trajectory {
    /// Index of the segment covering `t` and the normalised time within it.
    fn locate(&self, t: f64) -> (usize, f64) {
        let mut start = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            if t < start + seg.duration || i + 1 == self.segments.len() {
                return (i, ((t - start) / seg.duration).clamp(0.0, 1.0));
            }
            start += seg.duration;
        }
        unreachable!("trajectory without segments")
    }

    /// r-th time derivative of position at `t` (clamped to the trajectory span).
    pub fn derivative(&self, t: f64, r: usize) -> Vec3 {
        let (i, tau) = self.locate(t.clamp(0.0, self.total_duration));
        self.segments[i].eval(tau, r)
    }

    pub fn sample(&self, t: f64) -> ReferenceSetpoint {
        if t >= self.total_duration {
            let seg = self.segments.last().expect("trajectory without segments");
            return ReferenceSetpoint::hold(seg.eval(1.0, 0), seg.yaw_start + seg.yaw_delta, t);
        }
        let (i, tau) = self.locate(t.max(0.0));
        let seg = &self.segments[i];
        let tau2 = tau * tau;
        let shape = tau2 * tau * (10.0 - 15.0 * tau + 6.0 * tau2);
        let shape_rate = 30.0 * tau2 * (1.0 - tau) * (1.0 - tau);
        ReferenceSetpoint {
            p: seg.eval(tau, 0),
            v: seg.eval(tau, 1),
            a: seg.eval(tau, 2),
            yaw: wrap_angle(seg.yaw_start + seg.yaw_delta * shape),
            yaw_rate: seg.yaw_delta * shape_rate / seg.duration,
            t,
        }
    }

    pub fn is_done(&self, t: f64) -> bool {
        t >= self.total_duration
    }

    /// Largest speed and acceleration magnitudes on a uniform grid (end included).
    pub fn peak_speed_accel(&self, dt: f64) -> (f64, f64) {
        let n = (self.total_duration / dt).ceil() as usize;
        (0..=n).map(|k| (k as f64 * dt).min(self.total_duration)).fold((0.0f64, 0.0f64), |(v, a), t| {
            (v.max(self.derivative(t, 1).norm()), a.max(self.derivative(t, 2).norm()))
        })
    }

    /// Largest mismatch of derivatives 0..=4 across interior junctions.
    pub fn junction_residual(&self) -> f64 {
        self.segments
            .windows(2)
            .flat_map(|w| (0..END_ORDERS).map(move |r| (w[0].eval(1.0, r) - w[1].eval(0.0, r)).amax()))
            .fold(0.0, f64::max)
    }

    /// Knot times, starting with 0.
    pub fn knot_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        let mut out = vec![0.0];
        for seg in &self.segments {
            t += seg.duration;
            out.push(t);
        }
        out
    }
}
