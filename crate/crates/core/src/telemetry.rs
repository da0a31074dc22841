//! Run log rows and their CSV form.
//!
//! Values are rounded to 9 significant digits when a row is recorded, so a
//! log re-read from CSV is bit-identical to the one held in memory.

use crate::contact::UtQuality;
use crate::mission::Phase;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    /// Truth position, m.
    pub p: Vec3,
    pub v: Vec3,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// Compliant reference.
    pub p_r: Vec3,
    pub v_r: Vec3,
    /// Nominal reference.
    pub p_d: Vec3,
    pub yaw_d: f64,
    /// True external force on the vehicle, N.
    pub f_ext: Vec3,
    pub f_hat: Vec3,
    pub f_filt: Vec3,
    /// Bias-corrected estimate.
    pub f_est: Vec3,
    pub rotor_speeds: [f64; 4],
    pub phase: Phase,
    pub latched: bool,
    pub attached: bool,
    pub compression: f64,
    pub interface_force: f64,
    pub ut_quality: UtQuality,
    pub ut_new: bool,
    pub ut_thickness: Option<f64>,
    pub ut_stable: f64,
    pub couplant_age: Option<f64>,
}

/// Rounds to 9 significant digits.
pub fn quantize(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn fmt(x: f64) -> String {
    format!("{:?}", quantize(x))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

pub const LOG_HEADER: [&str; 49] = [
    "t",
    "p_x",
    "p_y",
    "p_z",
    "v_x",
    "v_y",
    "v_z",
    "roll",
    "pitch",
    "yaw",
    "p_r_x",
    "p_r_y",
    "p_r_z",
    "v_r_x",
    "v_r_y",
    "v_r_z",
    "p_d_x",
    "p_d_y",
    "p_d_z",
    "yaw_d",
    "f_ext_x",
    "f_ext_y",
    "f_ext_z",
    "f_hat_x",
    "f_hat_y",
    "f_hat_z",
    "f_filt_x",
    "f_filt_y",
    "f_filt_z",
    "f_est_x",
    "f_est_y",
    "f_est_z",
    "w1",
    "w2",
    "w3",
    "w4",
    "phase",
    "latched",
    "attached",
    "compression",
    "interface_force",
    "ut_quality",
    "ut_new",
    "ut_thickness",
    "ut_stable",
    "couplant_age",
    "phase_id",
    "contact_active",
    "f_est_norm",
];

impl LogRow {
    /// Rounds every numeric field to what the CSV will hold.
    pub fn quantized(mut self) -> Self {
        let qv = |v: &mut Vec3| v.iter_mut().for_each(|x| *x = quantize(*x));
        self.t = quantize(self.t);
        for v in [
            &mut self.p,
            &mut self.v,
            &mut self.p_r,
            &mut self.v_r,
            &mut self.p_d,
            &mut self.f_ext,
            &mut self.f_hat,
            &mut self.f_filt,
            &mut self.f_est,
        ] {
            qv(v);
        }
        for x in [
            &mut self.roll,
            &mut self.pitch,
            &mut self.yaw,
            &mut self.yaw_d,
            &mut self.compression,
            &mut self.interface_force,
            &mut self.ut_stable,
        ] {
            *x = quantize(*x);
        }
        self.rotor_speeds.iter_mut().for_each(|x| *x = quantize(*x));
        self.ut_thickness = self.ut_thickness.map(quantize);
        self.couplant_age = self.couplant_age.map(quantize);
        self
    }

    fn fields(&self) -> Vec<String> {
        let mut f = vec![fmt(self.t)];
        let vec3 = |f: &mut Vec<String>, v: &Vec3| f.extend(v.iter().map(|x| fmt(*x)));
        vec3(&mut f, &self.p);
        vec3(&mut f, &self.v);
        f.extend([self.roll, self.pitch, self.yaw].map(fmt));
        vec3(&mut f, &self.p_r);
        vec3(&mut f, &self.v_r);
        vec3(&mut f, &self.p_d);
        f.push(fmt(self.yaw_d));
        vec3(&mut f, &self.f_ext);
        vec3(&mut f, &self.f_hat);
        vec3(&mut f, &self.f_filt);
        vec3(&mut f, &self.f_est);
        f.extend(self.rotor_speeds.map(fmt));
        f.push(self.phase.name().into());
        f.push(u8::from(self.latched).to_string());
        f.push(u8::from(self.attached).to_string());
        f.push(fmt(self.compression));
        f.push(fmt(self.interface_force));
        f.push(self.ut_quality.name().into());
        f.push(u8::from(self.ut_new).to_string());
        f.push(fmt_opt(self.ut_thickness));
        f.push(fmt(self.ut_stable));
        f.push(fmt_opt(self.couplant_age));
        // Plot helpers derived from the fields above.
        f.push(self.phase.number().map_or("-1".into(), |n| n.to_string()));
        f.push(u8::from(self.attached && self.compression > 0.0).to_string());
        f.push(fmt(self.f_est.norm()));
        f
    }
}

pub fn write_log<W: std::io::Write>(rows: &[LogRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn log_to_string(rows: &[LogRow]) -> String {
    let mut buf = Vec::new();
    write_log(rows, &mut buf).expect("writing to memory succeeds");
    String::from_utf8(buf).expect("log is utf-8")
}

fn schema(row: usize, msg: impl std::fmt::Display) -> Error {
    Error::Schema(format!("log row {row}: {msg}"))
}

struct Fields<'a> {
    rec: &'a csv::StringRecord,
    pos: usize,
    row: usize,
}

impl Fields<'_> {
    fn next_str(&mut self) -> Result<&str> {
        let s = self.rec.get(self.pos).ok_or_else(|| schema(self.row, "missing field"))?;
        self.pos += 1;
        Ok(s.trim())
    }

    fn num(&mut self) -> Result<f64> {
        let (col, row) = (LOG_HEADER[self.pos], self.row);
        let s = self.next_str()?;
        s.parse().map_err(|_| schema(row, format!("column {col}: `{s}` is not a number")))
    }

    fn opt(&mut self) -> Result<Option<f64>> {
        if self.rec.get(self.pos).is_some_and(|s| s.trim().is_empty()) {
            self.pos += 1;
            return Ok(None);
        }
        self.num().map(Some)
    }

    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.num()?, self.num()?, self.num()?))
    }

    fn flag(&mut self) -> Result<bool> {
        let row = self.row;
        match self.next_str()? {
            "0" => Ok(false),
            "1" => Ok(true),
            s => Err(schema(row, format!("`{s}` is not 0 or 1"))),
        }
    }
}

/// Reads a log written by [`write_log`]. Rejects unknown headers, short rows,
/// malformed values and non-increasing time.
pub fn parse_log(text: &str) -> Result<Vec<LogRow>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.iter().ne(LOG_HEADER.iter().copied()) {
        return Err(Error::Schema("log header does not match the expected columns".into()));
    }
    let mut rows: Vec<LogRow> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != LOG_HEADER.len() {
            return Err(schema(row, format!("{} fields, expected {}", rec.len(), LOG_HEADER.len())));
        }
        let mut f = Fields { rec: &rec, pos: 0, row };
        let parsed = LogRow {
            t: f.num()?,
            p: f.vec3()?,
            v: f.vec3()?,
            roll: f.num()?,
            pitch: f.num()?,
            yaw: f.num()?,
            p_r: f.vec3()?,
            v_r: f.vec3()?,
            p_d: f.vec3()?,
            yaw_d: f.num()?,
            f_ext: f.vec3()?,
            f_hat: f.vec3()?,
            f_filt: f.vec3()?,
            f_est: f.vec3()?,
            rotor_speeds: [f.num()?, f.num()?, f.num()?, f.num()?],
            phase: {
                let s = f.next_str()?;
                Phase::from_name(s).ok_or_else(|| schema(row, format!("unknown phase `{s}`")))?
            },
            latched: f.flag()?,
            attached: f.flag()?,
            compression: f.num()?,
            interface_force: f.num()?,
            ut_quality: {
                let s = f.next_str()?;
                UtQuality::from_name(s).ok_or_else(|| schema(row, format!("unknown quality `{s}`")))?
            },
            ut_new: f.flag()?,
            ut_thickness: f.opt()?,
            ut_stable: f.num()?,
            couplant_age: f.opt()?,
        };
        if !parsed.t.is_finite() {
            return Err(schema(row, "non-finite time"));
        }
        if rows.last().is_some_and(|prev| prev.t >= parsed.t) {
            return Err(schema(row, "time is not strictly increasing"));
        }
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(Error::Schema("log has no rows".into()));
    }
    Ok(rows)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn row(t: f64) -> LogRow {
        LogRow {
            t,
            p: Vec3::new(0.1, 0.2, 1.0),
            v: Vec3::zeros(),
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
            p_r: Vec3::new(0.1, 0.2, 1.0),
            v_r: Vec3::zeros(),
            p_d: Vec3::new(0.1, 0.2, 1.0),
            yaw_d: 0.0,
            f_ext: Vec3::zeros(),
            f_hat: Vec3::zeros(),
            f_filt: Vec3::zeros(),
            f_est: Vec3::zeros(),
            rotor_speeds: [751.0; 4],
            phase: Phase::Idle,
            latched: false,
            attached: false,
            compression: 0.0,
            interface_force: 0.0,
            ut_quality: UtQuality::NoSignal,
            ut_new: false,
            ut_thickness: None,
            ut_stable: 0.0,
            couplant_age: None,
        }
    }

    #[test]
    fn quantize_keeps_nine_digits() {
        assert_eq!(quantize(1.0 / 3.0), 0.333333333);
        assert_eq!(quantize(2.0 / 30.0), 0.0666666667);
        assert_eq!(quantize(0.0), 0.0);
        assert_eq!(quantize(quantize(std::f64::consts::PI)), quantize(std::f64::consts::PI));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut a = row(0.0);
        a.p = Vec3::new(1.0 / 3.0, -2e-12, 7.123456789123);
        a.ut_thickness = Some(3.0123456789);
        a.couplant_age = Some(0.1);
        a.phase = Phase::PerformMeasurement;
        a.ut_quality = UtQuality::GoodStable;
        let rows = vec![a.quantized(), row(0.01).quantized()];
        let back = parse_log(&log_to_string(&rows)).unwrap();
        assert_eq!(back, rows);
        assert_eq!(log_to_string(&back), log_to_string(&rows));
    }

    #[test]
    fn malformed_logs_rejected() {
        let text = log_to_string(&[row(0.0), row(0.01)]);
        let truncated = &text[..text.len() - 20];
        assert!(matches!(parse_log(truncated), Err(Error::Schema(_))));
        assert!(matches!(parse_log("t,p_x\n0,1\n"), Err(Error::Schema(_))));
        let header_only = text.lines().next().unwrap().to_string() + "\n";
        assert!(matches!(parse_log(&header_only), Err(Error::Schema(_))));
        let reversed = log_to_string(&[row(0.01), row(0.0)]);
        assert!(matches!(parse_log(&reversed), Err(Error::Schema(_))));
    }
}
