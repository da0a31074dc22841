//! Scenario file: every tunable of a run in one TOML document.
//!
//! Missing sections and keys take their defaults. Dotted `section.key=value`
//! overrides are applied on top of the file before validation.

use serde::{Deserialize, Serialize};

use crate::admittance::AdmittanceConfig;
use crate::contact::{ProbeSpec, SurfaceSpec, UtQualityConfig};
use crate::controller::ControllerGains;
use crate::mission::{InspectionRequest, MissionConfig};
use crate::observer::ObserverConfig;
use crate::vehicle::{NoiseConfig, VehicleParams};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Simulated time limit, s.
    pub duration: f64,
    /// Simulated time kept after the mission ends, s.
    pub stop_after_terminal: f64,
    pub physics_rate: f64,
    pub log_rate: f64,
    #[serde(with = "crate::serde_vec::vec3")]
    pub start_position: Vec3,
    pub start_yaw: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            duration: 60.0,
            stop_after_terminal: 5.0,
            physics_rate: 1000.0,
            log_rate: 100.0,
            start_position: Vec3::new(0.0, 0.0, 1.0),
            start_yaw: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub vehicle: VehicleParams,
    pub noise: NoiseConfig,
    pub surface: SurfaceSpec,
    pub probe: ProbeSpec,
    pub ut: UtQualityConfig,
    pub observer: ObserverConfig,
    pub admittance: AdmittanceConfig,
    pub gains: ControllerGains,
    pub mission: MissionConfig,
    pub run: RunConfig,
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies one `a.b.c=value` override to a TOML table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) =
        assignment.split_once('=').ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let (leaf, path) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for part in path {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a section")))?;
    }
    node.insert(leaf.to_string(), parse_value(value));
    Ok(())
}

impl Scenario {
    /// Parses a scenario document, applies overrides and validates it.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let gains_mass_given = table
            .get("gains")
            .and_then(toml::Value::as_table)
            .is_some_and(|g| g.contains_key("m") || g.contains_key("mass"));
        let mut scenario: Scenario = if overrides.is_empty() {
            // Straight from the text keeps line numbers in error messages.
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            toml::Value::Table(table.clone()).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?
        };
        let overridden_mass = overrides.iter().any(|o| {
            let k = o.split('=').next().unwrap_or("").trim();
            k == "gains.m" || k == "gains.mass"
        });
        if !gains_mass_given && !overridden_mass {
            scenario.gains.m = scenario.vehicle.m;
        }
        scenario.validate()?;
        Ok(scenario)
    }

    /// Headline parameters that neither the document nor an override sets.
    pub fn defaulted_keys(text: &str, overrides: &[String]) -> Vec<&'static str> {
        const KEYS: [(&str, &str, &[&str]); 6] = [
            ("vehicle.m", "vehicle", &["m", "mass"]),
            ("vehicle.c_f", "vehicle", &["c_f"]),
            ("surface.point", "surface", &["point"]),
            ("surface.normal", "surface", &["normal"]),
            ("mission.f_desired", "mission", &["f_desired"]),
            ("run.seed", "run", &["seed"]),
        ];
        let table: toml::Table = text.parse().unwrap_or_default();
        KEYS.iter()
            .filter(|(_, section, names)| {
                let in_file = table
                    .get(*section)
                    .and_then(toml::Value::as_table)
                    .is_some_and(|t| names.iter().any(|n| t.contains_key(*n)));
                let overridden = overrides.iter().any(|o| {
                    let k = o.split('=').next().unwrap_or("").trim();
                    names.iter().any(|n| k == format!("{section}.{n}"))
                });
                !in_file && !overridden
            })
            .map(|(key, _, _)| *key)
            .collect()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.noise.validate()?;
        self.surface.validate()?;
        self.probe.validate()?;
        self.ut.validate()?;
        self.observer.validate()?;
        self.admittance.validate()?;
        self.gains.validate()?;
        self.mission.validate(&self.admittance, &self.surface.normal)?;
        self.request().validate()?;
        let r = &self.run;
        if !(r.duration > 0.0 && r.duration.is_finite() && r.stop_after_terminal >= 0.0) {
            return Err(Error::Config("run.duration must be positive".into()));
        }
        if !(r.physics_rate > 0.0) {
            return Err(Error::Config("run.physics_rate must be positive".into()));
        }
        for rate in
            [self.gains.rate, self.observer.rate, self.mission.rate, self.admittance.rate, self.ut.rate, r.log_rate]
        {
            self.divider(rate)?;
        }
        if self.divider(self.ut.rate)? % self.divider(r.log_rate)? != 0 {
            return Err(Error::Config("run.log_rate must be a multiple of ut.rate".into()));
        }
        Ok(())
    }

    /// Physics ticks per period of `rate`.
    pub fn divider(&self, rate: f64) -> Result<u64> {
        let ratio = self.run.physics_rate / rate;
        let n = ratio.round();
        if !(rate > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "rate {rate} Hz does not divide the physics rate {} Hz",
                self.run.physics_rate
            )));
        }
        Ok(n as u64)
    }

    pub fn request(&self) -> InspectionRequest {
        InspectionRequest { point: self.surface.point, normal: self.surface.normal }
    }
}
