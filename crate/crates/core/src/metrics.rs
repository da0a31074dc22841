//! Run metrics computed from a log, and their single-line CSV form.

use std::collections::BTreeMap;

use crate::contact::UtQuality;
use crate::mission::Phase;
use crate::telemetry::{quantize, LogRow};
use crate::{Error, Result, Vec3};

/// Tracking error below which the vehicle counts as recovered after detach, m.
pub const RECOVERY_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Aborted,
    Incomplete,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Aborted => "aborted",
            Outcome::Incomplete => "incomplete",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Outcome::Success, Outcome::Aborted, Outcome::Incomplete].into_iter().find(|o| o.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub outcome: Outcome,
    /// RMSE of compliant reference minus position from approach to detach, m.
    pub rmse: Vec3,
    /// Mean |p_d − p| on y and z while contact is latched, m.
    pub yz_error: [f64; 2],
    /// Mean interface force over the qualifying measurement window, N.
    pub steady_force: Option<f64>,
    /// Mean |f̂| over the same window, N.
    pub steady_force_estimate: Option<f64>,
    /// Dwell reached by the completing reading, s.
    pub good_stable_duration: f64,
    pub recovery_time: Option<f64>,
    /// Readings of the qualifying window, mm.
    pub thickness: Vec<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl RunMetrics {
    pub fn thickness_mean(&self) -> Option<f64> {
        mean(self.thickness.iter().copied())
    }

    /// Sample standard deviation.
    pub fn thickness_std(&self) -> Option<f64> {
        let m = self.thickness_mean()?;
        let n = self.thickness.len();
        (n > 1).then(|| (self.thickness.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt())
    }
}

/// Index range of log rows forming the measurement streak that ended in the
/// first stable reading, and the rows of gauge samples inside it.
fn qualifying_window(rows: &[LogRow]) -> Option<(usize, usize, Vec<usize>)> {
    let end = rows.iter().position(|r| r.ut_new && r.ut_quality == UtQuality::GoodStable)?;
    let mut samples = vec![end];
    let mut prev = rows[end].ut_stable;
    for i in (0..end).rev() {
        let r = &rows[i];
        if !r.ut_new {
            continue;
        }
        if r.ut_quality == UtQuality::NoSignal || r.ut_stable >= prev {
            break;
        }
        samples.push(i);
        prev = r.ut_stable;
        if prev == 0.0 {
            break;
        }
    }
    samples.reverse();
    Some((samples[0], end, samples))
}

/// Metrics of one run. Fails with `NoContactPhase` if contact never latched.
pub fn compute_metrics(rows: &[LogRow]) -> Result<RunMetrics> {
    if !rows.iter().any(|r| r.latched) {
        return Err(Error::NoContactPhase);
    }
    let outcome = match rows.last().map(|r| r.phase) {
        Some(Phase::Done) => Outcome::Success,
        Some(Phase::Aborted) => Outcome::Aborted,
        _ => Outcome::Incomplete,
    };

    let in_procedure = |r: &&LogRow| (Phase::ApproachInspection..=Phase::Detach).contains(&r.phase);
    let n = rows.iter().filter(in_procedure).count().max(1) as f64;
    let sq = rows
        .iter()
        .filter(in_procedure)
        .fold(Vec3::zeros(), |acc, r| acc + (r.p_r - r.p).component_mul(&(r.p_r - r.p)));
    let rmse = (sq / n).map(f64::sqrt);

    let latched: Vec<&LogRow> = rows.iter().filter(|r| r.latched).collect();
    let yz_error = [1, 2].map(|ax| mean(latched.iter().map(|r| (r.p_d[ax] - r.p[ax]).abs())).unwrap_or(0.0));

    let (steady_force, steady_force_estimate, good_stable_duration, thickness) = match qualifying_window(rows) {
        Some((start, end, samples)) => {
            let span = &rows[start..=end];
            (
                mean(span.iter().map(|r| r.interface_force)),
                mean(span.iter().map(|r| r.f_est.norm())),
                rows[end].ut_stable,
                samples.iter().filter_map(|&i| rows[i].ut_thickness).collect(),
            )
        }
        None => (None, None, 0.0, Vec::new()),
    };

    let detach =
        rows.windows(2).position(|w| w[0].attached && !w[1].attached && w[1].phase == Phase::Detach).map(|i| i + 1);
    let recovery_time = detach.and_then(|d| {
        let err = |r: &LogRow| (r.p_r - r.p).norm();
        let last_bad = rows[d..].iter().rposition(|r| err(r) >= RECOVERY_TOLERANCE);
        match last_bad {
            None => Some(0.0),
            Some(k) if d + k + 1 < rows.len() => Some(rows[d + k + 1].t - rows[d].t),
            Some(_) => None,
        }
    });

    Ok(RunMetrics {
        outcome,
        rmse,
        yz_error,
        steady_force,
        steady_force_estimate,
        good_stable_duration,
        recovery_time,
        thickness,
    })
}

pub const METRIC_COLUMNS: [&str; 13] = [
    "outcome",
    "rmse_x",
    "rmse_y",
    "rmse_z",
    "yz_err_y",
    "yz_err_z",
    "steady_force",
    "steady_force_est",
    "good_stable_duration",
    "recovery_time",
    "thickness_mean",
    "thickness_std",
    "thickness_count",
];

/// One parsed metrics line: any subset of the known columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsRecord {
    pub outcome: Option<Outcome>,
    pub seed: Option<u64>,
    /// Numeric columns; `None` for empty cells.
    pub values: BTreeMap<String, Option<f64>>,
}

impl RunMetrics {
    pub fn to_record(&self) -> MetricsRecord {
        let vals: [Option<f64>; 12] = [
            Some(self.rmse.x),
            Some(self.rmse.y),
            Some(self.rmse.z),
            Some(self.yz_error[0]),
            Some(self.yz_error[1]),
            self.steady_force,
            self.steady_force_estimate,
            Some(self.good_stable_duration),
            self.recovery_time,
            self.thickness_mean(),
            self.thickness_std(),
            Some(self.thickness.len() as f64),
        ];
        MetricsRecord {
            outcome: Some(self.outcome),
            seed: None,
            values: METRIC_COLUMNS[1..].iter().zip(vals).map(|(k, v)| (k.to_string(), v.map(quantize))).collect(),
        }
    }

    pub fn summary(&self) -> String {
        let opt = |x: Option<f64>, unit: &str| x.map_or("n/a".to_string(), |v| format!("{v:.4} {unit}"));
        let mut s = String::new();
        s += &format!("outcome               {}\n", self.outcome.name());
        s += &format!("rmse x/y/z            {:.4} / {:.4} / {:.4} m\n", self.rmse.x, self.rmse.y, self.rmse.z);
        s += &format!("contact y/z error     {:.4} / {:.4} m\n", self.yz_error[0], self.yz_error[1]);
        s += &format!("steady contact force  {}\n", opt(self.steady_force, "N"));
        s += &format!("steady force estimate {}\n", opt(self.steady_force_estimate, "N"));
        s += &format!("stable dwell          {:.2} s\n", self.good_stable_duration);
        s += &format!("detach recovery       {}\n", opt(self.recovery_time, "s"));
        s += &format!(
            "thickness             {} ± {} ({} readings)\n",
            opt(self.thickness_mean(), "mm"),
            opt(self.thickness_std(), "mm"),
            self.thickness.len()
        );
        s
    }
}

impl MetricsRecord {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied().flatten()
    }
}

/// Writes records with a fixed column order; a `seed` column is added in
/// front when any record carries one.
pub fn write_metrics<W: std::io::Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let with_seed = records.iter().any(|r| r.seed.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = Vec::new();
    if with_seed {
        header.push("seed");
    }
    header.extend(METRIC_COLUMNS);
    w.write_record(&header)?;
    for r in records {
        let mut row = Vec::new();
        if with_seed {
            row.push(r.seed.map(|s| s.to_string()).unwrap_or_default());
        }
        row.push(r.outcome.map(|o| o.name().to_string()).unwrap_or_default());
        for k in &METRIC_COLUMNS[1..] {
            row.push(r.get(k).map(|v| format!("{v:?}")).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn metrics_to_string(records: &[MetricsRecord]) -> String {
    let mut buf = Vec::new();
    write_metrics(records, &mut buf).expect("writing to memory succeeds");
    String::from_utf8(buf).expect("metrics are utf-8")
}

/// Parses a metrics file. Any subset of known columns is accepted (baseline
/// files usually carry only a few); unknown columns are a schema error.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    for h in &header {
        if h != "seed" && !METRIC_COLUMNS.contains(&h.as_str()) {
            return Err(Error::Schema(format!("unknown metrics column `{h}`")));
        }
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = header.iter().find(|h| !seen.insert(h.as_str())) {
        return Err(Error::Schema(format!("duplicate metrics column `{dup}`")));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut m = MetricsRecord::default();
        for (h, cell) in header.iter().zip(rec.iter()) {
            let cell = cell.trim();
            let bad = || Error::Schema(format!("metrics row {}: column {h}: `{cell}`", i + 1));
            match h.as_str() {
                "outcome" if cell.is_empty() => {}
                "outcome" => m.outcome = Some(Outcome::from_name(cell).ok_or_else(bad)?),
                "seed" if cell.is_empty() => {}
                "seed" => m.seed = Some(cell.parse().map_err(|_| bad())?),
                _ if cell.is_empty() => {
                    m.values.insert(h.clone(), None);
                }
                _ => {
                    let v: f64 = cell.parse().map_err(|_| bad())?;
                    m.values.insert(h.clone(), Some(v));
                }
            }
        }
        out.push(m);
    }
    if out.is_empty() {
        return Err(Error::Schema("metrics file has no rows".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delta {
    pub column: String,
    pub value: f64,
    pub baseline: f64,
    pub pass: bool,
}

/// Per-column differences for every numeric column present in both records.
pub fn compare(current: &MetricsRecord, baseline: &MetricsRecord, tolerance: f64) -> Vec<Delta> {
    baseline
        .values
        .iter()
        .filter_map(|(k, b)| {
            let b = (*b)?;
            let v = current.get(k)?;
            Some(Delta { column: k.clone(), value: v, baseline: b, pass: (v - b).abs() <= tolerance })
        })
        .collect()
}
