//! Input waves: band-limited random generation, trapezoidal band-pass
//! filtering and waveform files.

use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest frequency kept in generated waves (Hz).
pub const CUTOFF_HZ: f64 = 2.5;

/// Default peak amplitude per component.
pub const DEFAULT_BOUNDS: [f64; 3] = [0.6, 0.6, 0.3];

/// Band-pass corners applied to recorded motions (Hz).
pub const DEFAULT_BANDPASS: [f64; 4] = [0.2, 0.5, 2.4, 2.5];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveKind {
    #[default]
    Velocity,
    Acceleration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputWave {
    pub dt: f64,
    pub samples: Vec<[f64; 3]>,
    /// Peak amplitude each component was scaled to; zero when unbounded.
    pub bounds: [f64; 3],
    pub kind: WaveKind,
}

impl InputWave {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[c]).collect()
    }

    /// Incident bedrock velocity in model units: samples times `scale`,
    /// integrated with the trapezoidal rule when they are accelerations.
    pub fn incident_velocity(&self, scale: f64) -> Vec<[f64; 3]> {
        match self.kind {
            WaveKind::Velocity => self.samples.iter().map(|s| s.map(|v| v * scale)).collect(),
            WaveKind::Acceleration => {
                let mut v = [0.0; 3];
                let mut out = Vec::with_capacity(self.samples.len());
                for (k, s) in self.samples.iter().enumerate() {
                    if k > 0 {
                        let p = self.samples[k - 1];
                        for c in 0..3 {
                            v[c] += 0.5 * self.dt * (p[c] + s[c]) * scale;
                        }
                    }
                    out.push(v);
                }
                out
            }
        }
    }
}

/// Frequency of FFT bin `k` of an `n`-point transform.
pub fn bin_frequency(k: usize, n: usize, dt: f64) -> f64 {
    k.min(n - k) as f64 / (n as f64 * dt)
}

fn spectrum(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn inverse(mut buf: Vec<Complex64>) -> Vec<f64> {
    let n = buf.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Multiplies the spectrum of `x` by the real, symmetric mask `gain(f)`.
pub fn filter_zero_phase<F: Fn(f64) -> f64>(x: &[f64], dt: f64, gain: F) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len();
    let mut s = spectrum(x);
    for (k, c) in s.iter_mut().enumerate() {
        *c *= gain(bin_frequency(k, n, dt));
    }
    inverse(s)
}

/// Uniform white noise per component, low-passed at [`CUTOFF_HZ`] with a
/// brick-wall mask (the mean is removed too) and rescaled so that the
/// largest absolute sample of component `c` equals `bounds[c]`.
///
/// `stream` selects an independent sequence for the same seed.
pub fn generate_random_wave(
    seed: u64,
    stream: u64,
    nt: usize,
    dt: f64,
    bounds: [f64; 3],
) -> Result<InputWave> {
    if nt == 0 || !(dt > 0.0) {
        return Err(Error::invalid("random wave needs nt > 0 and dt > 0"));
    }
    if (nt as f64) * dt < 0.8 {
        return Err(Error::invalid(format!(
            "record of {} s is too short to resolve {CUTOFF_HZ} Hz (need at least 0.8 s)",
            nt as f64 * dt
        )));
    }
    if bounds.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
        return Err(Error::invalid("component bounds must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut samples = vec![[0.0; 3]; nt];
    for (c, &bound) in bounds.iter().enumerate() {
        let white: Vec<f64> = (0..nt).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let low = filter_zero_phase(&white, dt, |f| if f > 0.0 && f <= CUTOFF_HZ { 1.0 } else { 0.0 });
        let peak = low.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return Err(Error::invalid(
                "filtered random wave vanished; lengthen the record",
            ));
        }
        for (s, v) in samples.iter_mut().zip(&low) {
            s[c] = v * bound / peak;
        }
    }
    Ok(InputWave {
        dt,
        samples,
        bounds,
        kind: WaveKind::Velocity,
    })
}

/// Trapezoidal band-pass gain with cosine flanks.
pub fn taper(f: f64, corners: [f64; 4]) -> f64 {
    let [f1, f2, f3, f4] = corners;
    let pi = std::f64::consts::PI;
    if f < f1 || f > f4 {
        0.0
    } else if f < f2 {
        0.5 * (1.0 - (pi * (f - f1) / (f2 - f1)).cos())
    } else if f <= f3 {
        1.0
    } else {
        0.5 * (1.0 + (pi * (f - f3) / (f4 - f3)).cos())
    }
}

/// Zero-phase band-pass of one series.
pub fn bandpass(x: &[f64], dt: f64, corners: [f64; 4]) -> Result<Vec<f64>> {
    let [f1, f2, f3, f4] = corners;
    if !(0.0 <= f1 && f1 < f2 && f2 < f3 && f3 < f4) {
        return Err(Error::invalid(format!(
            "band-pass corners {corners:?} must satisfy 0 <= f1 < f2 < f3 < f4"
        )));
    }
    if !(dt > 0.0) || f4 > 0.5 / dt {
        return Err(Error::invalid(format!(
            "corner {f4} Hz is above the Nyquist frequency {} Hz",
            0.5 / dt
        )));
    }
    Ok(filter_zero_phase(x, dt, |f| taper(f, corners)))
}

/// Band-passes every component of a wave.
pub fn bandpass_wave(w: &InputWave, corners: [f64; 4]) -> Result<InputWave> {
    let mut out = w.clone();
    for c in 0..3 {
        let y = bandpass(&w.component(c), w.dt, corners)?;
        for (s, v) in out.samples.iter_mut().zip(y) {
            s[c] = v;
        }
    }
    out.bounds = [0.0; 3];
    Ok(out)
}

/// Reads a waveform file: rows of `t, x` or `t, x, y, z`, comma or
/// whitespace separated. A non-numeric first row is taken as a header and
/// `#` starts a comment. Time must be uniformly sampled.
pub fn read_wave_csv<R: Read>(r: R, kind: WaveKind) -> Result<InputWave> {
    let mut text = String::new();
    let mut r = r;
    r.read_to_string(&mut text)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut t = Vec::new();
    let mut samples = Vec::new();
    let mut width = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("waveform line {}: {e}", i + 1)))?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        let fields: Vec<&str> = rec
            .iter()
            .flat_map(|f| f.split_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let vals = match parsed {
            Ok(v) => v,
            Err(_) if t.is_empty() && width.is_none() => {
                width = Some(0);
                continue;
            }
            Err(e) => return Err(Error::Format(format!("waveform line {line}: {e}"))),
        };
        if vals.len() != 2 && vals.len() != 4 {
            return Err(Error::Format(format!(
                "waveform line {line}: expected 2 or 4 columns, found {}",
                vals.len()
            )));
        }
        match width {
            Some(w) if w != 0 && w != vals.len() => {
                return Err(Error::Format(format!(
                    "waveform line {line}: column count changed"
                )))
            }
            _ => width = Some(vals.len()),
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("waveform line {line}: non-finite value")));
        }
        t.push(vals[0]);
        samples.push(if vals.len() == 2 {
            [vals[1], 0.0, 0.0]
        } else {
            [vals[1], vals[2], vals[3]]
        });
    }
    if t.len() < 2 {
        return Err(Error::Format("waveform needs at least two samples".into()));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Format("waveform time must increase".into()));
    }
    for (k, w) in t.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.max(1.0) {
            return Err(Error::Format(format!(
                "waveform sample {} breaks uniform spacing {dt}",
                k + 1
            )));
        }
    }
    Ok(InputWave {
        dt,
        samples,
        bounds: [0.0; 3],
        kind,
    })
}

/// Writes `t, x, y, z` rows.
pub fn write_wave_csv<W: std::io::Write>(w: W, wave: &InputWave) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "x", "y", "z"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for (k, s) in wave.samples.iter().enumerate() {
        let row = [k as f64 * wave.dt, s[0], s[1], s[2]].map(|v| v.to_string());
        wr.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}
