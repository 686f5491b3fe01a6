//! Ensemble driving: random input waves, case scheduling with two-set
//! batching, crash-safe persistence and dataset export.
//!
//! An output directory holds `manifest.json` and one `case_NNNNN.json` per
//! finished case. Both are replaced atomically, so an interrupted run can
//! be resumed: cases listed in the manifest are loaded, not recomputed.

mod archive;
mod wave;

pub use archive::{
    decode_dataset, encode_dataset, export_dataset, read_dataset, write_atomic, ArrayEntry, Dataset,
    DatasetManifest, DatasetMeta, MAGIC,
};
pub use wave::{
    bandpass, bandpass_wave, bin_frequency, filter_zero_phase, generate_random_wave, read_wave_csv, taper,
    write_wave_csv, InputWave, WaveKind, CUTOFF_HZ, DEFAULT_BANDPASS, DEFAULT_BOUNDS,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::column::{run_column, ColumnResult};
use crate::engine::{run_time_history, EngineConfig, RunResult};
use crate::error::{Error, Result};
use crate::memtier::StrategyKind;
use crate::mesh::Column1D;
use crate::model::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSpec {
    pub n_cases: usize,
    pub seed: u64,
    pub bounds: [f64; 3],
    pub nt: usize,
    pub dt: f64,
    pub observation_points: Vec<[f64; 3]>,
    pub output_dir: Option<PathBuf>,
    /// How generated samples drive the base.
    pub wave_kind: WaveKind,
    /// Multiplies samples into model units.
    pub scale: f64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec {
            n_cases: 100,
            seed: 0,
            bounds: DEFAULT_BOUNDS,
            nt: 2000,
            dt: 0.005,
            observation_points: vec![[0.0, 0.0, 0.0]],
            output_dir: None,
            wave_kind: WaveKind::Velocity,
            scale: 1.0,
        }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_cases == 0 {
            return Err(Error::invalid("an ensemble needs at least one case"));
        }
        if self.observation_points.is_empty() {
            return Err(Error::invalid("an ensemble needs at least one observation point"));
        }
        if !(self.scale.is_finite()) {
            return Err(Error::invalid("scale must be finite"));
        }
        Ok(())
    }

    /// Input wave of case `id`.
    pub fn wave(&self, id: usize) -> Result<InputWave> {
        let mut w = generate_random_wave(self.seed, id as u64, self.nt, self.dt, self.bounds)?;
        w.kind = self.wave_kind;
        Ok(w)
    }

    /// Hash of everything that determines the records.
    fn fingerprint(&self, model: &Model, cfg: &EngineConfig) -> Result<String> {
        let mut s = self.clone();
        s.output_dir = None;
        let key = serde_json::to_vec(&(
            s,
            &model.mesh.config,
            model.bc,
            (cfg.strategy, cfg.deterministic, cfg.solver, cfg.rayleigh_band),
        ))?;
        Ok(format!("{:x}", Sha256::digest(key)))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub steps: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub max_residual: f64,
}

impl SolveSummary {
    pub fn of(r: &RunResult) -> Self {
        let mut s = SolveSummary {
            steps: r.solve_stats.len(),
            ..Default::default()
        };
        for st in &r.solve_stats {
            s.total_iterations += st.iterations;
            s.max_iterations = s.max_iterations.max(st.iterations);
            s.max_residual = s.max_residual.max(st.residual);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CaseStatus {
    Ok,
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: usize,
    /// Input samples as generated, before scaling.
    pub input: Vec<[f64; 3]>,
    /// Velocity history per observation point.
    pub response: Vec<Vec<[f64; 3]>>,
    pub strategy: StrategyKind,
    pub solve: SolveSummary,
    #[serde(flatten)]
    pub status: CaseStatus,
}

impl CaseRecord {
    pub fn is_ok(&self) -> bool {
        self.status == CaseStatus::Ok
    }

    fn from_run(case_id: usize, wave: &InputWave, r: &RunResult) -> Result<Self> {
        let response: Vec<Vec<[f64; 3]>> = (0..r.observation_nodes.len()).map(|k| r.velocity(k)).collect();
        if response.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: 0 });
        }
        Ok(CaseRecord {
            case_id,
            input: wave.samples.clone(),
            response,
            strategy: r.strategy,
            solve: SolveSummary::of(r),
            status: CaseStatus::Ok,
        })
    }

    fn failed(case_id: usize, wave: &InputWave, strategy: StrategyKind, e: &Error) -> Self {
        CaseRecord {
            case_id,
            input: wave.samples.clone(),
            response: Vec::new(),
            strategy,
            solve: SolveSummary::default(),
            status: CaseStatus::Failed { error: e.to_string() },
        }
    }
}

/// Progress file of an ensemble directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub fingerprint: String,
    pub n_cases: usize,
    pub dt: f64,
    pub meta: DatasetMeta,
    /// Finished case ids (successful or failed), ascending.
    pub done: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunControl {
    /// Stop after this many newly computed cases.
    pub max_new_cases: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleOutcome {
    /// Finished records in case-id order.
    pub records: Vec<CaseRecord>,
    /// Cases computed by this call.
    pub computed: Vec<usize>,
    pub complete: bool,
}

fn case_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("case_{id:05}.json"))
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

/// Loads the finished records of an ensemble directory.
pub fn load_records(dir: &Path) -> Result<(EnsembleManifest, Vec<CaseRecord>)> {
    let m: EnsembleManifest = serde_json::from_slice(&fs::read(manifest_path(dir))?)?;
    let mut records = Vec::with_capacity(m.done.len());
    for &id in &m.done {
        let r: CaseRecord = serde_json::from_slice(&fs::read(case_path(dir, id))?)?;
        if r.case_id != id {
            return Err(Error::Format(format!(
                "{} holds case {}",
                case_path(dir, id).display(),
                r.case_id
            )));
        }
        records.push(r);
    }
    Ok((m, records))
}

fn observation_nodes(model: &Model, points: &[[f64; 3]]) -> Vec<usize> {
    points.iter().map(|&p| model.mesh.nearest_node(p)).collect()
}

/// Runs (or resumes) an ensemble. Under the batched strategy cases are run
/// two at a time on one engine; otherwise one by one. A failed case is
/// recorded and the ensemble moves on.
pub fn run_ensemble(
    model: &Model,
    spec: &EnsembleSpec,
    cfg: &EngineConfig,
    ctl: RunControl,
) -> Result<EnsembleOutcome> {
    spec.validate()?;
    let fingerprint = spec.fingerprint(model, cfg)?;
    let mut manifest = EnsembleManifest {
        fingerprint: fingerprint.clone(),
        n_cases: spec.n_cases,
        dt: spec.dt,
        meta: dataset_meta(spec, model, cfg.strategy),
        done: Vec::new(),
    };
    let mut records: Vec<CaseRecord> = Vec::new();
    if let Some(dir) = &spec.output_dir {
        fs::create_dir_all(dir)?;
        if manifest_path(dir).exists() {
            let (m, r) = load_records(dir)?;
            if m.fingerprint != fingerprint {
                return Err(Error::invalid(format!(
                    "{} belongs to a different ensemble; use a fresh directory",
                    dir.display()
                )));
            }
            manifest = m;
            records = r;
        }
    }
    let obs = observation_nodes(model, &spec.observation_points);
    let pending: Vec<usize> = (0..spec.n_cases)
        .filter(|id| !manifest.done.contains(id))
        .collect();
    let budget = ctl.max_new_cases.unwrap_or(usize::MAX).min(pending.len());
    let group = if cfg.strategy == StrategyKind::PipelinedBatch2Ebe {
        2
    } else {
        1
    };
    let mut computed = Vec::new();
    for ids in pending[..budget].chunks(group) {
        let waves: Vec<InputWave> = ids.iter().map(|&id| spec.wave(id)).collect::<Result<_>>()?;
        for rec in run_group(model, spec, cfg, ids, &waves, &obs) {
            if let Some(dir) = &spec.output_dir {
                write_atomic(&case_path(dir, rec.case_id), &serde_json::to_vec(&rec)?)?;
                manifest.done.push(rec.case_id);
                manifest.done.sort_unstable();
                write_atomic(&manifest_path(dir), &serde_json::to_vec_pretty(&manifest)?)?;
            } else {
                manifest.done.push(rec.case_id);
            }
            computed.push(rec.case_id);
            records.push(rec);
        }
    }
    records.sort_by_key(|r| r.case_id);
    let complete = records.len() == spec.n_cases;
    Ok(EnsembleOutcome {
        records,
        computed,
        complete,
    })
}

fn run_group(
    model: &Model,
    spec: &EnsembleSpec,
    cfg: &EngineConfig,
    ids: &[usize],
    waves: &[InputWave],
    obs: &[usize],
) -> Vec<CaseRecord> {
    let inc: Vec<Vec<[f64; 3]>> = waves.iter().map(|w| w.incident_velocity(spec.scale)).collect();
    let refs: Vec<&[[f64; 3]]> = inc.iter().map(|v| v.as_slice()).collect();
    match run_time_history(model, cfg, spec.dt, &refs, obs) {
        Ok(runs) => ids
            .iter()
            .zip(waves)
            .zip(&runs)
            .map(|((&id, w), r)| {
                CaseRecord::from_run(id, w, r).unwrap_or_else(|e| CaseRecord::failed(id, w, cfg.strategy, &e))
            })
            .collect(),
        // a failed pair is split so the failure lands on the right case
        Err(_) if ids.len() > 1 => ids
            .iter()
            .zip(waves)
            .flat_map(|(&id, w)| run_group(model, spec, cfg, &[id], std::slice::from_ref(w), obs))
            .collect(),
        Err(e) => vec![CaseRecord::failed(ids[0], &waves[0], cfg.strategy, &e)],
    }
}

/// Archive metadata of an ensemble.
pub fn dataset_meta(spec: &EnsembleSpec, model: &Model, strategy: StrategyKind) -> DatasetMeta {
    let points = observation_nodes(model, &spec.observation_points)
        .iter()
        .map(|&n| model.mesh.nodes[n])
        .collect();
    DatasetMeta {
        observation_points: points,
        strategy,
        seed: Some(spec.seed),
        wave_kind: spec.wave_kind,
        scale: spec.scale,
    }
}

/// Builds the dataset archive of an ensemble directory.
pub fn export_ensemble_dir(dir: &Path, out: &Path) -> Result<DatasetManifest> {
    let (m, records) = load_records(dir)?;
    export_dataset(&records, &m.meta, m.dt, out)
}

/// Runs the 1D column under a wave, returning the same record shape as a
/// 3D case with the column surface as the single observation point.
pub fn run_1d_case(
    col: &Column1D,
    case_id: usize,
    wave: &InputWave,
    scale: f64,
    band: [f64; 2],
) -> Result<(CaseRecord, ColumnResult)> {
    let r = run_column(col, &wave.incident_velocity(scale), wave.dt, band)?;
    let rec = CaseRecord {
        case_id,
        input: wave.samples.clone(),
        response: vec![r.surface_velocity.clone()],
        strategy: StrategyKind::SlowOnly,
        solve: SolveSummary {
            steps: wave.len(),
            ..Default::default()
        },
        status: CaseStatus::Ok,
    };
    Ok((rec, r))
}
