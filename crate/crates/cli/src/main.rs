//! Command-line front end.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 invalid input,
//! 3 solver failure, 4 fast-tier capacity or residency violation,
//! 5 I/O error.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tieredfem::config::RunConfig;
use tieredfem::engine::run_time_history;
use tieredfem::ensemble::{
    export_dataset, export_ensemble_dir, read_wave_csv, run_1d_case, run_ensemble, DatasetMeta, RunControl,
    WaveKind,
};
use tieredfem::memtier::StrategyKind;
use tieredfem::mesh::{Column1D, Mesh};
use tieredfem::model::Model;
use tieredfem::postproc::{
    default_periods, differentiate, max_velocity_map, parse_telemetry, summarize_telemetry,
    velocity_response_spectrum, write_telemetry, VelocityMeasure, DEFAULT_DAMPING,
};
use tieredfem::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(
    name = "tieredfem",
    version,
    about = "Nonlinear seismic ground response with tiered-memory strategies"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random-wave seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// 1 | 2 | 3 | 4 or slow_only | solver_fast | pipelined | pipelined_batch2_ebe.
    #[arg(long, global = true)]
    strategy: Option<StrategyKind>,
    /// Colour-ordered accumulation (bitwise reproducible).
    #[arg(long, global = true)]
    deterministic: Option<bool>,
    #[arg(long, global = true)]
    partition_elems: Option<usize>,
    #[arg(long, global = true)]
    fast_capacity_bytes: Option<u64>,
    /// Transfer bandwidth (bytes/s).
    #[arg(long, global = true)]
    bandwidth: Option<f64>,
    /// Per-message transfer latency (s).
    #[arg(long, global = true)]
    latency: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the mesh and report its size and resolution.
    Mesh {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Frequency for the resolution check (Hz).
        #[arg(long, default_value_t = 2.5)]
        fmax: f64,
    },
    /// Run one time history.
    Run {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run (or resume) a random-wave ensemble and export its dataset.
    Ensemble {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cases: Option<usize>,
        /// Stop after this many new cases.
        #[arg(long)]
        max_new_cases: Option<usize>,
    },
    /// Run the 1D column below a point.
    Column1d {
        #[arg(long)]
        x: f64,
        #[arg(long)]
        y: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Velocity response spectra of a waveform file.
    Spectra {
        #[arg(long)]
        wave: PathBuf,
        #[arg(long, default_value = "velocity")]
        kind: String,
        #[arg(long, default_value_t = DEFAULT_DAMPING)]
        h: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a telemetry stream.
    Report {
        #[arg(long)]
        telemetry: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Build the dataset archive of an ensemble directory.
    ExportDataset {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>().map(Error::kind) {
        Some(ErrorKind::Input) => 2,
        Some(ErrorKind::Solver) => 3,
        Some(ErrorKind::Capacity) => 4,
        Some(ErrorKind::Io) => 5,
        None if e.downcast_ref::<std::io::Error>().is_some() => 5,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let e = &mut cfg.engine;
    if let Some(s) = g.strategy {
        e.strategy = s;
    }
    if let Some(d) = g.deterministic {
        e.deterministic = d;
    }
    if g.partition_elems.is_some() {
        e.partition_elems = g.partition_elems;
    }
    if g.fast_capacity_bytes.is_some() {
        e.fast_capacity_bytes = g.fast_capacity_bytes;
    }
    if let Some(b) = g.bandwidth {
        e.channel.bandwidth = b;
    }
    if let Some(l) = g.latency {
        e.channel.latency = l;
    }
    if let Some(seed) = g.seed {
        cfg.ensemble.seed = seed;
        if let tieredfem::config::WaveSource::Random { seed: s, .. } = &mut cfg.input {
            *s = seed;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build_model(cfg: &RunConfig) -> Result<Model> {
    let mesh = Mesh::generate(&cfg.mesh)?;
    Ok(Model::new(mesh, cfg.boundary, cfg.engine.exec)?)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.cmd {
        Command::Mesh { out, fmax } => {
            let cfg = load_config(g)?;
            let mesh = Mesh::generate(&cfg.mesh)?;
            let summary = serde_json::json!({
                "nodes": mesh.n_nodes(),
                "elements": mesh.n_elements(),
                "dofs": mesh.n_dofs(),
                "resolution": mesh.resolution(fmax),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(p) = out {
                let mut w = create(&p)?;
                mesh.write_binary(&mut w)?;
                w.flush()?;
            }
        }
        Command::Run { out } => {
            let cfg = load_config(g)?;
            let model = build_model(&cfg)?;
            let wave = cfg.input_wave()?;
            let inc = wave.incident_velocity(cfg.scale);
            let obs: Vec<usize> = cfg
                .observation_points
                .iter()
                .map(|&p| model.mesh.nearest_node(p))
                .collect();
            let r = run_time_history(&model, &cfg.engine, cfg.dt, &[&inc], &obs)?.remove(0);
            fs::create_dir_all(&out)?;
            serde_json::to_writer(create(&out.join("result.json"))?, &r)?;
            write_telemetry(create(&out.join("telemetry.jsonl"))?, &r.telemetry)?;
            let mut w = create(&out.join("observations.csv"))?;
            write!(w, "t")?;
            for k in 0..obs.len() {
                write!(w, ",vx{k},vy{k},vz{k}")?;
            }
            writeln!(w)?;
            for i in 0..inc.len() {
                write!(w, "{}", (i + 1) as f64 * cfg.dt)?;
                for o in &r.observations {
                    write!(w, ",{},{},{}", o[i][3], o[i][4], o[i][5])?;
                }
                writeln!(w)?;
            }
            w.flush()?;
            let mut w = create(&out.join("surface_max_velocity.csv"))?;
            writeln!(w, "node,x,y,vx,vy,vz,norm")?;
            let maps: Vec<_> = [
                VelocityMeasure::X,
                VelocityMeasure::Y,
                VelocityMeasure::Z,
                VelocityMeasure::Norm,
            ]
            .iter()
            .map(|&m| max_velocity_map(&model.mesh, &r, m))
            .collect::<Result<_, _>>()?;
            for (i, p) in maps[0].iter().enumerate() {
                let (vy, vz, vn) = (maps[1][i].value, maps[2][i].value, maps[3][i].value);
                writeln!(w, "{},{},{},{},{vy},{vz},{vn}", p.node, p.x, p.y, p.value)?;
            }
            w.flush()?;
            let summary = summarize_telemetry(&r.telemetry)?;
            println!("{}", summary.table());
            println!("history digest {}", r.history_digest);
        }
        Command::Ensemble {
            out,
            cases,
            max_new_cases,
        } => {
            let cfg = load_config(g)?;
            let model = build_model(&cfg)?;
            let mut spec = cfg.ensemble.clone();
            if let Some(n) = cases {
                spec.n_cases = n;
            }
            spec.output_dir = Some(out.clone());
            let o = run_ensemble(&model, &spec, &cfg.engine, RunControl { max_new_cases })?;
            let failed = o.records.iter().filter(|r| !r.is_ok()).count();
            println!(
                "{} of {} cases finished ({} computed now, {failed} failed)",
                o.records.len(),
                spec.n_cases,
                o.computed.len()
            );
            if o.complete {
                let m = export_ensemble_dir(&out, &out.join("dataset.bin"))?;
                println!(
                    "dataset {} cases x {} points x {} steps",
                    m.n_cases, m.n_points, m.nt
                );
            }
        }
        Command::Column1d { x, y, out } => {
            let cfg = load_config(g)?;
            let col = Column1D::from_config(&cfg.mesh, x, y)?;
            let wave = cfg.input_wave()?;
            let (rec, res) = run_1d_case(&col, 0, &wave, cfg.scale, cfg.engine.rayleigh_band)?;
            let mut w = create(&out)?;
            writeln!(w, "t,vx,vy,vz")?;
            for (i, v) in res.surface_velocity.iter().enumerate() {
                writeln!(w, "{},{},{},{}", (i + 1) as f64 * res.dt, v[0], v[1], v[2])?;
            }
            w.flush()?;
            let mut w = create(&out.with_extension("profile.csv"))?;
            writeln!(w, "z,vx,vy,vz")?;
            for (z, v) in &res.max_velocity_profile {
                writeln!(w, "{z},{},{},{}", v[0], v[1], v[2])?;
            }
            w.flush()?;
            let meta = DatasetMeta {
                observation_points: vec![[x, y, 0.0]],
                strategy: StrategyKind::SlowOnly,
                seed: None,
                wave_kind: wave.kind,
                scale: cfg.scale,
            };
            export_dataset(&[rec], &meta, wave.dt, &out.with_extension("bin"))?;
        }
        Command::Spectra { wave, kind, h, out } => {
            let kind = match kind.as_str() {
                "velocity" => WaveKind::Velocity,
                "acceleration" => WaveKind::Acceleration,
                k => return Err(Error::InvalidInput(format!("unknown wave kind {k:?}")).into()),
            };
            let f = fs::File::open(&wave).with_context(|| format!("opening {}", wave.display()))?;
            let w = read_wave_csv(BufReader::new(f), kind)?;
            let periods = default_periods();
            let mut sv = Vec::new();
            for c in 0..3 {
                let x = w.component(c);
                let acc = match kind {
                    WaveKind::Velocity => differentiate(&x, w.dt),
                    WaveKind::Acceleration => x,
                };
                sv.push(velocity_response_spectrum(&acc, w.dt, h, &periods, Default::default())?.sv);
            }
            let mut o = create(&out)?;
            writeln!(o, "period,sv_x,sv_y,sv_z")?;
            for (i, t) in periods.iter().enumerate() {
                writeln!(o, "{t},{},{},{}", sv[0][i], sv[1][i], sv[2][i])?;
            }
            o.flush()?;
        }
        Command::Report { telemetry, json } => {
            let f = fs::File::open(&telemetry).with_context(|| format!("opening {}", telemetry.display()))?;
            let steps = parse_telemetry(BufReader::new(f))?;
            let r = summarize_telemetry(&steps)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                print!("{}", r.table());
            }
        }
        Command::ExportDataset { dir, out } => {
            if !dir.join("manifest.json").exists() {
                bail!(Error::InvalidInput(format!(
                    "{} is not an ensemble directory",
                    dir.display()
                )));
            }
            let m = export_ensemble_dir(&dir, &out)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
    }
    Ok(())
}
