//! Inspection surface, compliant magnetic probe and ultrasonic measurement model.
//!
//! The probe hood latches onto a ferromagnetic surface when it comes within
//! `capture_dist`. While latched it acts as a bilateral spring-damper along the
//! surface normal that can hold tension up to a yaw-dependent breakaway force.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::vehicle::VehicleState;
use crate::{all_finite, e3, wrap_angle, Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceSpec {
    #[serde(with = "crate::serde_vec::vec3")]
    pub point: Vec3,
    /// Unit normal pointing into free space.
    #[serde(with = "crate::serde_vec::vec3")]
    pub normal: Vec3,
    /// Wall thickness, mm.
    pub true_thickness: f64,
    pub ferromagnetic: bool,
}

impl Default for SurfaceSpec {
    fn default() -> Self {
        Self {
            point: Vec3::new(1.5, 0.0, 1.0),
            normal: Vec3::new(-1.0, 0.0, 0.0),
            true_thickness: 3.0,
            ferromagnetic: true,
        }
    }
}

impl SurfaceSpec {
    pub fn validate(&self) -> Result<()> {
        if !all_finite(&self.point) || (self.normal.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("surface.normal must be a unit vector".into()));
        }
        if !(self.true_thickness > 0.0) {
            return Err(Error::Config("surface.true_thickness must be positive".into()));
        }
        Ok(())
    }

    /// Signed distance of `x` from the plane, positive on the free side.
    pub fn gap(&self, x: &Vec3) -> f64 {
        self.normal.dot(&(x - self.point))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpec {
    /// Tip position in body frame, m.
    #[serde(with = "crate::serde_vec::vec3")]
    pub offset_body: Vec3,
    /// Pointing direction in body frame.
    #[serde(with = "crate::serde_vec::vec3")]
    pub axis_body: Vec3,
    /// Hood spring stiffness, N/m.
    pub k_spring: f64,
    /// Hood damping, N s/m.
    pub d_spring: f64,
    /// Hood deflection over which damping engages fully, m.
    pub damper_ramp: f64,
    /// Upward force on the cage per metre of compression, N/m.
    pub z_coupling: f64,
    /// Magnetic clamp force at the interface, N.
    pub f_adhesion: f64,
    /// Tension capacity with no yaw applied, N.
    pub f_breakaway_0: f64,
    /// Relative yaw at which the hood releases freely, rad.
    pub yaw_release: f64,
    /// Distance at which the magnet captures the surface, m.
    pub capture_dist: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            offset_body: Vec3::new(0.3, 0.0, 0.0),
            axis_body: Vec3::x(),
            k_spring: 2000.0,
            d_spring: 120.0,
            damper_ramp: 5e-4,
            z_coupling: 150.0,
            f_adhesion: 0.05,
            f_breakaway_0: 8.0,
            yaw_release: 60f64.to_radians(),
            capture_dist: 5e-3,
        }
    }
}

impl ProbeSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::Config(format!("probe.{s}")));
        if !all_finite(&self.offset_body) || (self.axis_body.norm() - 1.0).abs() > 1e-9 {
            return bad("axis_body must be a unit vector");
        }
        if !(self.k_spring > 0.0 && self.capture_dist > 0.0) {
            return bad("k_spring and capture_dist must be positive");
        }
        if !(self.d_spring >= 0.0 && self.damper_ramp > 0.0 && self.z_coupling >= 0.0) {
            return bad("d_spring, damper_ramp and z_coupling must be non-negative");
        }
        if !(self.f_breakaway_0 >= self.f_adhesion && self.f_adhesion >= 0.0) {
            return bad("need f_breakaway_0 >= f_adhesion >= 0");
        }
        if !(self.yaw_release > 0.0) {
            return bad("yaw_release must be positive");
        }
        Ok(())
    }
}

/// Probe tip pose and velocity in world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipKinematics {
    pub position: Vec3,
    pub axis: Vec3,
    pub velocity: Vec3,
}

/// Tip kinematics of a rigidly mounted probe. The angular-velocity term of the
/// tip velocity is neglected.
pub fn probe_tip(state: &VehicleState, probe: &ProbeSpec) -> TipKinematics {
    TipKinematics {
        position: state.position + state.attitude * probe.offset_body,
        axis: state.attitude * probe.axis_body,
        velocity: state.velocity,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactState {
    pub attached: bool,
    /// Hood compression along the normal, m. Negative while stretched.
    pub compression: f64,
    pub yaw_at_attach: f64,
    /// Time since couplant was dispensed, s.
    pub couplant_age: Option<f64>,
    pub interface_normal_force: f64,
    /// Tip speed parallel to the surface, m/s.
    pub lateral_speed: f64,
    /// Gap remaining between hood and seat when it latched, shrinks as the
    /// hood closes.
    slack: f64,
    /// Cleared by a detach; set again once the tip leaves capture range.
    armed: bool,
}

impl Default for ContactState {
    fn default() -> Self {
        Self {
            attached: false,
            compression: 0.0,
            yaw_at_attach: 0.0,
            couplant_age: None,
            interface_normal_force: 0.0,
            lateral_speed: 0.0,
            slack: 0.0,
            armed: true,
        }
    }
}

/// Tension the latched hood can hold at relative yaw `psi_rel` (wrapped to [0, π]).
pub fn breakaway_force(probe: &ProbeSpec, psi_rel: f64) -> f64 {
    probe.f_breakaway_0 * (1.0 - psi_rel / probe.yaw_release).max(0.0)
}

/// Advances the contact by `dt`. Returns the new state and the contact force
/// acting on the vehicle, world frame.
pub fn contact_step(
    contact: &ContactState,
    tip: &TipKinematics,
    surface: &SurfaceSpec,
    probe: &ProbeSpec,
    psi: f64,
    dt: f64,
) -> (ContactState, Vec3) {
    let n = surface.normal;
    let d = surface.gap(&tip.position);
    let d_dot = n.dot(&tip.velocity);
    let mut c = contact.clone();
    c.compression = -d;
    c.lateral_speed = (tip.velocity - n * d_dot).norm();
    c.couplant_age = c.couplant_age.map(|a| a + dt);
    if d > probe.capture_dist {
        c.armed = true;
    }

    if !c.attached {
        let captured = d <= 0.0 || (c.armed && surface.ferromagnetic && d <= probe.capture_dist);
        if !captured {
            c.interface_normal_force = 0.0;
            return (c, Vec3::zeros());
        }
        c.attached = true;
        c.slack = d.max(0.0);
        c.yaw_at_attach = psi;
    }

    c.slack = c.slack.min(d.max(0.0));
    let (deflection, spring) = if d <= 0.0 {
        (-d, probe.k_spring * -d)
    } else if d <= c.slack {
        (0.0, 0.0)
    } else {
        (d - c.slack, -probe.k_spring * (d - c.slack))
    };
    let engage = (deflection / probe.damper_ramp).min(1.0);
    let mut normal_force = spring - probe.d_spring * d_dot * engage;

    let (adhesion, capacity) = if surface.ferromagnetic {
        let psi_rel = wrap_angle(psi - c.yaw_at_attach).abs();
        (probe.f_adhesion, breakaway_force(probe, psi_rel))
    } else {
        (0.0, 0.0)
    };
    if normal_force < -capacity {
        if c.compression <= 0.0 {
            c.attached = false;
            c.armed = false;
            c.couplant_age = None;
            c.interface_normal_force = 0.0;
            return (c, Vec3::zeros());
        }
        normal_force = -capacity;
    }

    c.interface_normal_force = (probe.k_spring * c.compression).max(0.0) + adhesion;
    let force = n * normal_force + e3() * (probe.z_coupling * c.compression.max(0.0));
    (c, force)
}

/// Resets the couplant age. Fails when the probe is not latched, in which case
/// the state is left unchanged.
pub fn dispense_couplant(contact: &ContactState) -> Result<ContactState> {
    if !contact.attached {
        return Err(Error::CouplantWithoutContact);
    }
    Ok(ContactState { couplant_age: Some(0.0), ..contact.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtQuality {
    NoSignal,
    Unstable,
    GoodStable,
}

impl UtQuality {
    pub fn name(self) -> &'static str {
        match self {
            UtQuality::NoSignal => "no_signal",
            UtQuality::Unstable => "unstable",
            UtQuality::GoodStable => "good_stable",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "no_signal" => Some(UtQuality::NoSignal),
            "unstable" => Some(UtQuality::Unstable),
            "good_stable" => Some(UtQuality::GoodStable),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtReading {
    /// mm; `None` without signal.
    pub thickness: Option<f64>,
    pub quality: UtQuality,
    /// Time the good-coupling condition has held continuously, s.
    pub stable_duration: f64,
}

impl UtReading {
    pub fn no_signal() -> Self {
        Self { thickness: None, quality: UtQuality::NoSignal, stable_duration: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtQualityConfig {
    /// Lower edge of the acceptable interface force band, N.
    pub f_lo: f64,
    pub f_hi: f64,
    /// Maximum tip slip speed, m/s.
    pub v_slip_max: f64,
    /// Dwell before a reading counts as stable, s.
    pub t_stable: f64,
    /// Couplant lifetime, s.
    pub t_couplant_life: f64,
    /// Thickness noise σ, mm.
    pub sigma_ut: f64,
    /// Sampling rate, Hz.
    pub rate: f64,
}

impl Default for UtQualityConfig {
    fn default() -> Self {
        Self {
            f_lo: 0.7,
            f_hi: 6.0,
            v_slip_max: 0.02,
            t_stable: 2.0,
            t_couplant_life: 60.0,
            sigma_ut: 0.02,
            rate: 10.0,
        }
    }
}

impl UtQualityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_lo >= 0.0 && self.f_hi > self.f_lo) {
            return Err(Error::Config("ut: need 0 <= f_lo < f_hi".into()));
        }
        if !(self.v_slip_max > 0.0 && self.t_stable >= 0.0 && self.t_couplant_life > 0.0) {
            return Err(Error::Config("ut: v_slip_max, t_couplant_life must be positive".into()));
        }
        if !(self.sigma_ut >= 0.0 && self.rate > 0.0) {
            return Err(Error::Config("ut: sigma_ut >= 0 and rate > 0 required".into()));
        }
        Ok(())
    }
}

/// Ultrasonic gauge with the dwell memory needed to grade stability.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UtGauge {
    stable_duration: Option<f64>,
}

impl UtGauge {
    /// Takes one reading. Always consumes one normal draw.
    pub fn sample<R: Rng>(
        &mut self,
        contact: &ContactState,
        surface: &SurfaceSpec,
        cfg: &UtQualityConfig,
        rng: &mut R,
    ) -> UtReading {
        let noise: f64 = rng.sample(StandardNormal);
        let coupled =
            contact.attached && contact.couplant_age.is_some_and(|a| (0.0..=cfg.t_couplant_life).contains(&a));
        if !coupled {
            self.stable_duration = None;
            return UtReading::no_signal();
        }
        let good =
            (cfg.f_lo..=cfg.f_hi).contains(&contact.interface_normal_force) && contact.lateral_speed <= cfg.v_slip_max;
        self.stable_duration = match (good, self.stable_duration) {
            (false, _) => None,
            (true, None) => Some(0.0),
            (true, Some(s)) => Some(s + 1.0 / cfg.rate),
        };
        let stable_duration = self.stable_duration.unwrap_or(0.0);
        // Small tolerance so 2 s of 10 Hz increments qualifies.
        let quality =
            if good && stable_duration >= cfg.t_stable - 1e-9 { UtQuality::GoodStable } else { UtQuality::Unstable };
        UtReading { thickness: Some(surface.true_thickness + cfg.sigma_ut * noise), quality, stable_duration }
    }
}
