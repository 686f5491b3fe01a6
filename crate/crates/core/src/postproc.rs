//! Post-processing: velocity response spectra, peak-velocity maps and
//! profiles, telemetry summaries.

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::engine::RunResult;
use crate::error::{Error, Result};
use crate::memtier::StepTelemetry;
use crate::mesh::Mesh;
use crate::par::Exec;

pub const DEFAULT_DAMPING: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseSpectrum {
    pub periods: Vec<f64>,
    pub sv: Vec<f64>,
    pub h: f64,
}

/// `n` log-spaced periods from `t0` to `t1` inclusive.
pub fn log_periods(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![t0];
    }
    let (a, b) = (t0.ln(), t1.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// 100 log-spaced periods in [0.1, 10] s.
pub fn default_periods() -> Vec<f64> {
    log_periods(0.1, 10.0, 100)
}

/// Peak relative velocity of a damped oscillator of period `period` under
/// base acceleration `accel`, integrated with the average-acceleration
/// Newmark scheme. Samples are joined linearly and each interval is split
/// so that a sub-step never exceeds `period / 40`.
pub fn sdof_peak_velocity(accel: &[f64], dt: f64, h: f64, period: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI / period;
    let (c, k) = (2.0 * h * w, w * w);
    let sub = (40.0 * dt / period).ceil().max(1.0) as usize;
    let ds = dt / sub as f64;
    let kh = k + 2.0 * c / ds + 4.0 / (ds * ds);
    let mut v = 0.0f64;
    let Some(&a0) = accel.first() else { return 0.0 };
    let mut a = -a0;
    let mut peak = 0.0f64;
    for win in accel.windows(2) {
        let dp = -(win[1] - win[0]) / sub as f64;
        for _ in 0..sub {
            let du = (dp + (4.0 / ds + 2.0 * c) * v + 2.0 * a) / kh;
            let dv = 2.0 * du / ds - 2.0 * v;
            let da = 4.0 * du / (ds * ds) - 4.0 * v / ds - 2.0 * a;
            v += dv;
            a += da;
            peak = peak.max(v.abs());
        }
    }
    peak
}

pub fn velocity_response_spectrum(
    accel: &[f64],
    dt: f64,
    h: f64,
    periods: &[f64],
    exec: Exec,
) -> Result<ResponseSpectrum> {
    if !(0.0..1.0).contains(&h) {
        return Err(Error::invalid(format!("damping ratio {h} is outside [0, 1)")));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    if periods.windows(2).any(|w| !(w[1] > w[0])) || periods.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::invalid("periods must be positive and strictly increasing"));
    }
    let sv = exec.map(periods.len(), |i| sdof_peak_velocity(accel, dt, h, periods[i]));
    Ok(ResponseSpectrum {
        periods: periods.to_vec(),
        sv,
        h,
    })
}

/// Central-difference derivative (one-sided at the ends).
pub fn differentiate(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|k| match k {
            0 => (x[1] - x[0]) / dt,
            k if k == n - 1 => (x[n - 1] - x[n - 2]) / dt,
            k => (x[k + 1] - x[k - 1]) / (2.0 * dt),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityMeasure {
    X,
    Y,
    Z,
    /// Euclidean norm of the three components.
    #[default]
    Norm,
}

impl VelocityMeasure {
    fn index(self) -> usize {
        match self {
            VelocityMeasure::X => 0,
            VelocityMeasure::Y => 1,
            VelocityMeasure::Z => 2,
            VelocityMeasure::Norm => 3,
        }
    }
}

impl std::str::FromStr for VelocityMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(VelocityMeasure::X),
            "y" => Ok(VelocityMeasure::Y),
            "z" => Ok(VelocityMeasure::Z),
            "norm" => Ok(VelocityMeasure::Norm),
            _ => Err(Error::invalid(format!(
                "unknown velocity measure {s:?} (x, y, z, norm)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub node: usize,
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

/// Peak velocity of every surface node.
pub fn max_velocity_map(mesh: &Mesh, run: &RunResult, measure: VelocityMeasure) -> Result<Vec<MapPoint>> {
    if run.surface_nodes.is_empty() || run.surface_max_velocity.len() != run.surface_nodes.len() {
        return Err(Error::invalid("run carries no surface velocity record"));
    }
    run.surface_nodes
        .iter()
        .zip(&run.surface_max_velocity)
        .map(|(&n, m)| {
            let p = mesh
                .nodes
                .get(n)
                .ok_or_else(|| Error::invalid(format!("surface node {n} is not in the mesh")))?;
            Ok(MapPoint {
                node: n,
                x: p[0],
                y: p[1],
                value: m[measure.index()],
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxVelocityProfile {
    /// Distance from the start of the line (m).
    pub positions: Vec<f64>,
    pub values: Vec<f64>,
}

/// Samples a peak-velocity map at `n` points along the segment `a`-`b`,
/// taking the nearest surface node in plan.
pub fn max_velocity_profile(
    map: &[MapPoint],
    a: [f64; 2],
    b: [f64; 2],
    n: usize,
) -> Result<MaxVelocityProfile> {
    if map.is_empty() || n == 0 {
        return Err(Error::invalid(
            "profile needs a non-empty map and at least one sample",
        ));
    }
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let mut positions = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for k in 0..n {
        let t = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
        let (x, y) = (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]));
        let nearest = map
            .iter()
            .min_by(|p, q| {
                let dp = (p.x - x).powi(2) + (p.y - y).powi(2);
                let dq = (q.x - x).powi(2) + (q.y - y).powi(2);
                dp.total_cmp(&dq)
            })
            .expect("non-empty map");
        positions.push(t * len);
        values.push(nearest.value);
    }
    Ok(MaxVelocityProfile { positions, values })
}

/// Parses one telemetry record per line; blank lines are skipped.
pub fn parse_telemetry<R: BufRead>(r: R) -> Result<Vec<StepTelemetry>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StepTelemetry = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("telemetry line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_telemetry<W: std::io::Write>(mut w: W, steps: &[StepTelemetry]) -> Result<()> {
    for s in steps {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TelemetryTotals {
    pub solver_s: f64,
    pub crs_update_s: f64,
    pub constitutive_s: f64,
    pub multispring_stage_s: f64,
    pub transfer_up_s: f64,
    pub transfer_down_s: f64,
    pub overlapped_s: f64,
    pub solver_iterations: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryReport {
    pub steps: usize,
    pub totals: TelemetryTotals,
    pub means: TelemetryTotals,
    pub peak_arena_bytes: u64,
    pub resident_high_watermark: usize,
}

/// Totals (summed in record order), per-step means and peak watermarks.
pub fn summarize_telemetry(steps: &[StepTelemetry]) -> Result<TelemetryReport> {
    if steps.is_empty() {
        return Err(Error::invalid("telemetry stream is empty"));
    }
    let mut t = TelemetryTotals::default();
    let mut peak = 0;
    let mut high = 0;
    for s in steps {
        t.solver_s += s.solver_s;
        t.crs_update_s += s.crs_update_s;
        t.constitutive_s += s.constitutive_s;
        t.multispring_stage_s += s.multispring_stage_s;
        t.transfer_up_s += s.transfer_up_s;
        t.transfer_down_s += s.transfer_down_s;
        t.overlapped_s += s.overlapped_s;
        t.solver_iterations += s.solver_iterations.iter().sum::<usize>() as u64;
        t.bytes_up += s.bytes_up;
        t.bytes_down += s.bytes_down;
        peak = peak.max(s.peak_arena_bytes);
        high = high.max(s.resident_high_watermark);
    }
    let n = steps.len() as f64;
    let means = TelemetryTotals {
        solver_s: t.solver_s / n,
        crs_update_s: t.crs_update_s / n,
        constitutive_s: t.constitutive_s / n,
        multispring_stage_s: t.multispring_stage_s / n,
        transfer_up_s: t.transfer_up_s / n,
        transfer_down_s: t.transfer_down_s / n,
        overlapped_s: t.overlapped_s / n,
        solver_iterations: t.solver_iterations / steps.len() as u64,
        bytes_up: t.bytes_up / steps.len() as u64,
        bytes_down: t.bytes_down / steps.len() as u64,
    };
    Ok(TelemetryReport {
        steps: steps.len(),
        totals: t,
        means,
        peak_arena_bytes: peak,
        resident_high_watermark: high,
    })
}

impl TelemetryReport {
    /// Fixed-width table of totals and per-step means.
    pub fn table(&self) -> String {
        let rows: [(&str, f64, f64); 7] = [
            ("solver (s)", self.totals.solver_s, self.means.solver_s),
            (
                "CRS update (s)",
                self.totals.crs_update_s,
                self.means.crs_update_s,
            ),
            (
                "multi-spring compute (s)",
                self.totals.constitutive_s,
                self.means.constitutive_s,
            ),
            (
                "multi-spring stage (s)",
                self.totals.multispring_stage_s,
                self.means.multispring_stage_s,
            ),
            (
                "transfer up (s)",
                self.totals.transfer_up_s,
                self.means.transfer_up_s,
            ),
            (
                "transfer down (s)",
                self.totals.transfer_down_s,
                self.means.transfer_down_s,
            ),
            (
                "overlapped (s)",
                self.totals.overlapped_s,
                self.means.overlapped_s,
            ),
        ];
        let mut s = String::new();
        let _ = writeln!(s, "{:<26} {:>14} {:>14}", "item", "total", "per step");
        for (name, tot, mean) in rows {
            let _ = writeln!(s, "{name:<26} {tot:>14.6} {mean:>14.6}");
        }
        let _ = writeln!(
            s,
            "{:<26} {:>14} {:>14}",
            "solver iterations", self.totals.solver_iterations, self.means.solver_iterations
        );
        let _ = writeln!(
            s,
            "{:<26} {:>14} {:>14}",
            "bytes up", self.totals.bytes_up, self.means.bytes_up
        );
        let _ = writeln!(
            s,
            "{:<26} {:>14} {:>14}",
            "bytes down", self.totals.bytes_down, self.means.bytes_down
        );
        let _ = writeln!(
            s,
            "steps {}; peak fast-tier bytes {}; resident partitions <= {}",
            self.steps, self.peak_arena_bytes, self.resident_high_watermark
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_gives_zero_spectrum() {
        let s =
            velocity_response_spectrum(&[0.0; 500], 0.01, 0.05, &default_periods(), Exec::default()).unwrap();
        assert!(s.sv.iter().all(|v| *v == 0.0));
        assert_eq!(s.periods.len(), 100);
        assert!((s.periods[0] - 0.1).abs() < 1e-15 && (s.periods[99] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn bad_arguments_are_rejected() {
        assert!(velocity_response_spectrum(&[0.0; 4], 0.01, 1.0, &[1.0], Exec::default()).is_err());
        assert!(velocity_response_spectrum(&[0.0; 4], 0.0, 0.05, &[1.0], Exec::default()).is_err());
        assert!(velocity_response_spectrum(&[0.0; 4], 0.01, 0.05, &[2.0, 1.0], Exec::default()).is_err());
    }

    #[test]
    fn telemetry_lines_are_numbered() {
        let good = serde_json::to_string(&StepTelemetry::default()).unwrap();
        let text = format!("{good}\n\n{{\"step\": \"x\"}}\n");
        let e = parse_telemetry(text.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
    }

    #[test]
    fn single_step_totals_equal_the_step() {
        let s = StepTelemetry {
            solver_s: 0.25,
            solver_iterations: vec![3, 4],
            bytes_up: 10,
            ..Default::default()
        };
        let r = summarize_telemetry(std::slice::from_ref(&s)).unwrap();
        assert_eq!(r.totals.solver_s, 0.25);
        assert_eq!(r.totals.solver_iterations, 7);
        assert_eq!(r.means.bytes_up, 10);
        assert!(summarize_telemetry(&[]).is_err());
        assert!(r.table().contains("solver"));
    }

    #[test]
    fn profile_picks_nearest_node() {
        let map = vec![
            MapPoint {
                node: 0,
                x: 0.0,
                y: 0.0,
                value: 1.0,
            },
            MapPoint {
                node: 1,
                x: 10.0,
                y: 0.0,
                value: 2.0,
            },
        ];
        let p = max_velocity_profile(&map, [0.0, 0.0], [10.0, 0.0], 3).unwrap();
        assert_eq!(p.values, vec![1.0, 1.0, 2.0]);
        assert_eq!(p.positions, vec![0.0, 5.0, 10.0]);
    }
}
