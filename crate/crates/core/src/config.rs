//! JSON run configuration shared by the command-line subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constitutive::MaterialParams;
use crate::engine::EngineConfig;
use crate::ensemble::{
    bandpass_wave, generate_random_wave, read_wave_csv, EnsembleSpec, InputWave, WaveKind,
};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryConditionSpec, Interface, MeshConfig};

/// Where the base motion of a single run comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum WaveSource {
    /// Two- or four-column waveform file, resampled by nothing: the file's
    /// spacing must equal the run's `dt`.
    Csv {
        path: PathBuf,
        #[serde(default)]
        kind: WaveKind,
        #[serde(default)]
        bandpass: Option<[f64; 4]>,
    },
    Random {
        seed: u64,
        #[serde(default)]
        case: u64,
        #[serde(default = "default_bounds")]
        bounds: [f64; 3],
    },
    /// `amplitude * sin(2 pi f t)` on each component, ramped over one period.
    Sine { frequency: f64, amplitude: [f64; 3] },
}

fn default_bounds() -> [f64; 3] {
    crate::ensemble::DEFAULT_BOUNDS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub boundary: BoundaryConditionSpec,
    pub dt: f64,
    pub nt: usize,
    pub engine: EngineConfig,
    pub input: WaveSource,
    /// Multiplies input samples into model units.
    pub scale: f64,
    pub observation_points: Vec<[f64; 3]>,
    pub ensemble: EnsembleSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mesh = MeshConfig {
            lx: 200.0,
            ly: 200.0,
            lz: 60.0,
            nx: 8,
            ny: 8,
            nz: 4,
            interfaces: vec![Interface::Flat { z: -30.0 }],
            materials: vec![MaterialParams::soft_soil(), MaterialParams::bedrock()],
        };
        RunConfig {
            mesh,
            boundary: BoundaryConditionSpec::default(),
            dt: 0.005,
            nt: 2000,
            engine: EngineConfig::default(),
            input: WaveSource::Random {
                seed: 0,
                case: 0,
                bounds: default_bounds(),
            },
            scale: 1.0,
            observation_points: vec![[100.0, 100.0, 0.0]],
            ensemble: EnsembleSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        // relative waveform paths are taken from the config's directory
        if let WaveSource::Csv { path: p, .. } = &mut cfg.input {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        if !(self.dt > 0.0) || self.nt == 0 {
            return Err(Error::invalid("dt must be positive and nt at least 1"));
        }
        if !self.scale.is_finite() {
            return Err(Error::invalid("scale must be finite"));
        }
        self.engine.channel.validate()?;
        Ok(())
    }

    /// The base motion, trimmed or zero-padded to `nt` samples.
    pub fn input_wave(&self) -> Result<InputWave> {
        let mut w = match &self.input {
            WaveSource::Csv { path, kind, bandpass } => {
                let f = std::fs::File::open(path)
                    .map_err(|e| Error::invalid(format!("cannot open waveform {}: {e}", path.display())))?;
                let w = read_wave_csv(std::io::BufReader::new(f), *kind)?;
                if (w.dt - self.dt).abs() > 1e-9 * self.dt {
                    return Err(Error::invalid(format!(
                        "waveform spacing {} s differs from the run's dt {} s",
                        w.dt, self.dt
                    )));
                }
                match bandpass {
                    Some(c) => bandpass_wave(&w, *c)?,
                    None => w,
                }
            }
            WaveSource::Random { seed, case, bounds } => {
                generate_random_wave(*seed, *case, self.nt, self.dt, *bounds)?
            }
            WaveSource::Sine { frequency, amplitude } => {
                if !(*frequency > 0.0) {
                    return Err(Error::invalid("sine frequency must be positive"));
                }
                let samples = (0..self.nt)
                    .map(|k| {
                        let t = k as f64 * self.dt;
                        let s = (2.0 * std::f64::consts::PI * frequency * t).sin() * (t * frequency).min(1.0);
                        amplitude.map(|a| a * s)
                    })
                    .collect();
                InputWave {
                    dt: self.dt,
                    samples,
                    bounds: *amplitude,
                    kind: WaveKind::Velocity,
                }
            }
        };
        w.samples.resize(self.nt, [0.0; 3]);
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let c = RunConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
    }

    #[test]
    fn partial_config_takes_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"dt": 0.01, "nt": 100, "engine": {"strategy": "slow_only"}}"#).unwrap();
        assert_eq!(c.nt, 100);
        assert_eq!(c.engine.strategy, crate::memtier::StrategyKind::SlowOnly);
        assert_eq!(c.input_wave().unwrap().len(), 100);
    }

    #[test]
    fn sine_wave_is_padded_to_nt() {
        let c = RunConfig {
            nt: 50,
            input: WaveSource::Sine {
                frequency: 1.0,
                amplitude: [0.1, 0.0, 0.0],
            },
            ..Default::default()
        };
        let w = c.input_wave().unwrap();
        assert_eq!(w.len(), 50);
        assert_eq!(w.samples[0], [0.0; 3]);
    }
}
