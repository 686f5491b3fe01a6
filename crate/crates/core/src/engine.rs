//! Time-history driver: one linearized solve and one constitutive update per
//! step, placed on the tiers according to the selected strategy.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constitutive::{SpringState, SPRINGS_PER_ELEMENT};
use crate::element::{ElementTangents, DOFS};
use crate::error::{Error, Result};
use crate::memtier::{
    default_partition_elems, partition_states, run_direct, run_pipeline, run_serial, ChannelConfig,
    ComputeCost, Direction, FastArena, PartitionStore, StageTiming, StepTelemetry, StrategyKind,
    TransferChannel, TANGENT_BYTES_PER_ELEMENT,
};
use crate::model::{check_finite, update_element, FreeField, Model};
use crate::par::{Exec, WorkerPool};
use crate::sparse::{
    gather, pcg, pcg_pair, scatter_elements, BlockCrsMatrix, BlockJacobi, CrsOperator, EbeOperator,
    LinearOperator, ScatterMode, SolveStats, SolverConfig, TwoLevel,
};
use crate::timestep::{apply_updates, build_rhs, NewmarkCoeffs, RayleighCoeffs};

/// Vectors of length `n_dofs` the solver keeps on the fast tier.
const SOLVER_VECTORS: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub strategy: StrategyKind,
    /// Elements per constitutive partition; `None` gives eight partitions.
    pub partition_elems: Option<usize>,
    /// Fast-tier capacity; `None` is unbounded.
    pub fast_capacity_bytes: Option<u64>,
    pub channel: ChannelConfig,
    pub compute_cost: ComputeCost,
    /// Replace the pipeline by direct slow-tier access with this per-access
    /// latency (s). Diagnostic only.
    pub direct_access_latency: Option<f64>,
    pub solver: SolverConfig,
    /// Colour-ordered accumulation everywhere; otherwise atomic scatter.
    pub deterministic: bool,
    /// Band (Hz) for the Rayleigh fit.
    pub rayleigh_band: [f64; 2],
    pub exec: Exec,
    /// Threads of the slow and fast worker pools; 0 shares the global pool.
    pub slow_threads: usize,
    pub fast_threads: usize,
    /// Keep the full displacement vector of every step.
    pub keep_displacement_history: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            strategy: StrategyKind::Pipelined,
            partition_elems: None,
            fast_capacity_bytes: None,
            channel: ChannelConfig::default(),
            compute_cost: ComputeCost::Measured,
            direct_access_latency: None,
            solver: SolverConfig::default(),
            deterministic: true,
            rayleigh_band: [0.2, 2.5],
            exec: Exec::default(),
            slow_threads: 0,
            fast_threads: 0,
            keep_displacement_history: false,
        }
    }
}

/// Output of one problem set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dt: f64,
    pub strategy: StrategyKind,
    pub observation_nodes: Vec<usize>,
    /// Per observation node and step: `(ux, uy, uz, vx, vy, vz)`.
    pub observations: Vec<Vec<[f64; 6]>>,
    pub solve_stats: Vec<SolveStats>,
    /// Shared by both sets of a batched run.
    pub telemetry: Vec<StepTelemetry>,
    pub surface_nodes: Vec<usize>,
    /// Peak `|vx|, |vy|, |vz|, |v|` per surface node.
    pub surface_max_velocity: Vec<[f64; 4]>,
    /// SHA-256 over the little-endian displacement vectors of all steps.
    pub history_digest: String,
    pub final_u: Vec<f64>,
    #[serde(skip)]
    pub displacement_history: Option<Vec<Vec<f64>>>,
}

impl RunResult {
    /// Velocity time series `[vx, vy, vz]` of observation `k`.
    pub fn velocity(&self, k: usize) -> Vec<[f64; 3]> {
        self.observations[k].iter().map(|o| [o[3], o[4], o[5]]).collect()
    }
}

struct SetState<'w> {
    wave: &'w [[f64; 3]],
    st: crate::timestep::TimeState,
    tangents: Vec<ElementTangents>,
    elem_h: Vec<f64>,
    dq: Vec<[f64; DOFS]>,
    du: Vec<f64>,
    store: PartitionStore,
    ff: Option<FreeField>,
    crs: Option<BlockCrsMatrix>,
    ray: RayleighCoeffs,
    f_ext: Vec<f64>,
    hasher: Sha256,
    out: RunResult,
}

struct Ctx<'a> {
    model: &'a Model,
    cfg: &'a EngineConfig,
    nm: NewmarkCoeffs,
    scatter: ScatterMode,
    exec: Exec,
}

/// Runs the time history of one problem set, or two under the batched
/// strategy. `waves[k][n]` is the incident bedrock velocity of set `k` at
/// step `n`; outputs are sampled after each step.
pub fn run_time_history(
    model: &Model,
    cfg: &EngineConfig,
    dt: f64,
    waves: &[&[[f64; 3]]],
    observation_nodes: &[usize],
) -> Result<Vec<RunResult>> {
    let strategy = cfg.strategy;
    if waves.is_empty() || waves.len() > strategy.max_sets() {
        return Err(Error::invalid(format!(
            "strategy {strategy} runs 1..={} problem sets",
            strategy.max_sets()
        )));
    }
    let nt = waves[0].len();
    if waves.iter().any(|w| w.len() != nt) {
        return Err(Error::invalid("batched problem sets need equal step counts"));
    }
    if let Some(&bad) = observation_nodes.iter().find(|&&n| n >= model.mesh.n_nodes()) {
        return Err(Error::invalid(format!("observation node {bad} does not exist")));
    }
    if cfg.direct_access_latency.is_some() && !strategy.is_pipelined() {
        return Err(Error::invalid(
            "direct access applies to the pipelined strategies only",
        ));
    }
    let ctx = Ctx {
        model,
        cfg,
        nm: NewmarkCoeffs::new(dt)?,
        scatter: if cfg.deterministic {
            ScatterMode::Colored
        } else {
            ScatterMode::Atomic
        },
        exec: cfg.exec,
    };
    let slow_pool = WorkerPool::new("slow", cfg.slow_threads);
    let fast_pool = WorkerPool::new("fast", cfg.fast_threads);
    let ne = model.n_elements();
    let part = cfg.partition_elems.unwrap_or_else(|| default_partition_elems(ne));
    let n = model.n_dofs();

    let mut sets = waves
        .iter()
        .map(|w| new_set(&ctx, w, part, observation_nodes))
        .collect::<Result<Vec<SetState<'_>>>>()?;

    // fast-tier residents
    let mut arena = FastArena::new(cfg.fast_capacity_bytes);
    let geometry = (model.mesh.n_nodes() * 24 + ne * 40) as u64;
    let slot_bytes = sets[0].store.max_partition_bytes();
    let pipelined = strategy.is_pipelined() && cfg.direct_access_latency.is_none();
    match strategy {
        StrategyKind::SlowOnly => {}
        StrategyKind::SolverFast | StrategyKind::Pipelined => {
            let crs = sets[0].crs.as_ref().expect("crs strategies assemble a matrix");
            arena.alloc("matrix", crs.storage_bytes())?;
            arena.alloc("solver workspace", SOLVER_VECTORS * 8 * n as u64)?;
            arena.alloc("tangents", TANGENT_BYTES_PER_ELEMENT * ne as u64)?;
            if strategy == StrategyKind::Pipelined {
                arena.alloc("geometry", geometry)?;
            }
        }
        StrategyKind::PipelinedBatch2Ebe => {
            arena.alloc("geometry", geometry)?;
            for k in 0..sets.len() {
                arena.alloc(format!("solver workspace {k}"), SOLVER_VECTORS * 8 * n as u64)?;
                arena.alloc(format!("tangents {k}"), TANGENT_BYTES_PER_ELEMENT * ne as u64)?;
                let c = model
                    .coarse
                    .assemble(&model.kernels, &sets[k].tangents, 1.0, &model.mass)?;
                arena.alloc(format!("coarse matrix {k}"), c.storage_bytes())?;
            }
        }
    }
    let mut slots: [Vec<SpringState>; 2] = [Vec::new(), Vec::new()];
    if pipelined {
        for (k, s) in slots.iter_mut().enumerate() {
            arena.alloc(format!("partition slot {k}"), slot_bytes)?;
            *s = vec![SpringState::VIRGIN; (slot_bytes as usize) / crate::constitutive::SPRING_BYTES];
        }
    }
    let mut channel = TransferChannel::new(cfg.channel)?;

    for step in 0..nt {
        let fail = |e: Error| match e {
            Error::StepFailed { .. } => e,
            other => Error::StepFailed {
                step,
                source: Box::new(other),
            },
        };
        let mut tel = StepTelemetry {
            step,
            strategy: Some(strategy),
            sets: sets.len(),
            ..Default::default()
        };
        channel.reset();

        // right-hand sides
        let mut rhs = Vec::with_capacity(sets.len());
        for s in sets.iter_mut() {
            rhs.push(prepare(&ctx, s, step).map_err(fail)?);
        }

        // solve
        let t0 = Instant::now();
        let solved: Vec<(Vec<f64>, SolveStats)> = match strategy {
            StrategyKind::SlowOnly => vec![slow_pool
                .install(|| solve_crs(&ctx, &sets[0], &rhs[0]))
                .map_err(fail)?],
            StrategyKind::SolverFast | StrategyKind::Pipelined => {
                vec![fast_pool
                    .install(|| solve_crs(&ctx, &sets[0], &rhs[0]))
                    .map_err(fail)?]
            }
            StrategyKind::PipelinedBatch2Ebe => {
                fast_pool.install(|| solve_ebe(&ctx, &sets, &rhs)).map_err(fail)?
            }
        };
        tel.solver_s = t0.elapsed().as_secs_f64();
        for (s, (du, stats)) in sets.iter_mut().zip(solved) {
            check_finite(&du, step).map_err(fail)?;
            tel.solver_iterations.push(stats.iterations);
            tel.solver_residual.push(stats.residual);
            s.out.solve_stats.push(stats);
            s.du = du;
        }

        // constitutive stage
        let mut timing = StageTiming::default();
        for s in sets.iter_mut() {
            let t = match strategy {
                StrategyKind::SlowOnly => slow_pool.install(|| multispring_serial(&ctx, s)),
                StrategyKind::SolverFast => {
                    let down = channel.charge(None, Direction::Down, 8 * n as u64);
                    let mut t = slow_pool.install(|| multispring_serial(&ctx, s)).map_err(fail)?;
                    let up = channel.charge(None, Direction::Up, TANGENT_BYTES_PER_ELEMENT * ne as u64);
                    t.down_ns += down.duration_ns;
                    t.up_ns += up.duration_ns;
                    t.bytes_down += down.bytes;
                    t.bytes_up += up.bytes;
                    t.stage_ns += down.duration_ns + up.duration_ns;
                    Ok(t)
                }
                _ if !pipelined => {
                    let lat = cfg.direct_access_latency.unwrap_or(0.0);
                    fast_pool.install(|| multispring_direct(&ctx, s, &mut channel, lat))
                }
                _ => fast_pool.install(|| multispring_pipelined(&ctx, s, &mut slots, &mut channel)),
            }
            .map_err(fail)?;
            timing.add(&t);
        }

        // state update and matrix update
        for s in sets.iter_mut() {
            finish_step(&ctx, s, step).map_err(fail)?;
        }
        let t1 = Instant::now();
        for s in sets.iter_mut() {
            let pool = if strategy == StrategyKind::SlowOnly {
                &slow_pool
            } else {
                &fast_pool
            };
            pool.install(|| update_matrix(&ctx, s)).map_err(fail)?;
        }
        tel.crs_update_s = if strategy.uses_crs() {
            t1.elapsed().as_secs_f64()
        } else {
            0.0
        };

        tel.constitutive_s = timing.compute_ns as f64 * 1e-9;
        tel.transfer_up_s = timing.up_ns as f64 * 1e-9;
        tel.transfer_down_s = timing.down_ns as f64 * 1e-9;
        tel.overlapped_s = timing.overlapped_ns as f64 * 1e-9;
        tel.multispring_stage_s = timing.stage_ns as f64 * 1e-9;
        tel.bytes_up = channel.bytes_up;
        tel.bytes_down = channel.bytes_down;
        tel.peak_arena_bytes = arena.peak();
        tel.resident_high_watermark = timing.resident_high_watermark;
        for s in sets.iter_mut() {
            s.out.telemetry.push(tel.clone());
        }
    }
    Ok(sets
        .into_iter()
        .map(|mut s| {
            s.out.history_digest = format!("{:x}", s.hasher.finalize());
            s.out.final_u = s.st.u;
            s.out
        })
        .collect())
}

fn new_set<'w>(ctx: &Ctx<'_>, wave: &'w [[f64; 3]], part: usize, obs: &[usize]) -> Result<SetState<'w>> {
    let model = ctx.model;
    let ne = model.n_elements();
    let n = model.n_dofs();
    if let Some(k) = wave.iter().position(|w| w.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid(format!("input wave sample {k} is not finite")));
    }
    let tangents = model.initial_tangents();
    let ray = RayleighCoeffs::default();
    let crs = if ctx.cfg.strategy.uses_crs() {
        let mut m = model.pattern.clone();
        let sys = ctx.nm.system(&ray);
        let diag = sys.diagonal(&model.mass, &model.dashpot);
        m.update_values(
            &model.kernels,
            &tangents,
            &model.coloring,
            sys.a_k,
            &diag,
            ctx.exec,
        )?;
        Some(m)
    } else {
        None
    };
    let surface_nodes = model.mesh.surface_nodes();
    Ok(SetState {
        wave,
        st: crate::timestep::TimeState::zeros(n, ctx.nm.dt),
        tangents,
        elem_h: vec![0.0; ne],
        dq: vec![[0.0; DOFS]; ne],
        du: vec![0.0; n],
        store: partition_states(ne, part)?,
        ff: model.free_field(ctx.nm.dt, ctx.cfg.rayleigh_band)?,
        crs,
        ray,
        f_ext: vec![0.0; n],
        hasher: Sha256::new(),
        out: RunResult {
            dt: ctx.nm.dt,
            strategy: ctx.cfg.strategy,
            observation_nodes: obs.to_vec(),
            observations: vec![Vec::with_capacity(wave.len()); obs.len()],
            solve_stats: Vec::with_capacity(wave.len()),
            telemetry: Vec::with_capacity(wave.len()),
            surface_max_velocity: vec![[0.0; 4]; surface_nodes.len()],
            surface_nodes,
            history_digest: String::new(),
            final_u: Vec::new(),
            displacement_history: ctx.cfg.keep_displacement_history.then(Vec::new),
        },
    })
}

/// Free-field step, external force and right-hand side.
fn prepare(ctx: &Ctx<'_>, s: &mut SetState<'_>, step: usize) -> Result<Vec<f64>> {
    let model = ctx.model;
    let v_inc = s.wave[step];
    if let Some(ff) = s.ff.as_mut() {
        ff.step(v_inc, ctx.exec)?;
    }
    model.external_force(v_inc, s.ff.as_ref(), &mut s.f_ext);
    let mut kv = vec![0.0; model.n_dofs()];
    stiffness_operator(ctx, &s.tangents, None, 1.0).apply(&s.st.v, &mut kv);
    Ok(build_rhs(
        &s.st,
        &s.f_ext,
        &model.mass,
        &model.dashpot,
        &kv,
        &s.ray,
        &ctx.nm,
        ctx.exec,
    ))
}

fn stiffness_operator<'a>(
    ctx: &'a Ctx<'a>,
    tangents: &'a [ElementTangents],
    diag: Option<&'a [f64]>,
    a_k: f64,
) -> EbeOperator<'a> {
    EbeOperator {
        n_dofs: ctx.model.n_dofs(),
        kernels: &ctx.model.kernels,
        nodes: ctx.model.nodes(),
        coloring: &ctx.model.coloring,
        tangents,
        diag,
        a_k,
        scatter: ctx.scatter,
        exec: ctx.exec,
    }
}

fn solve_crs(ctx: &Ctx<'_>, s: &SetState<'_>, rhs: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
    let m = s.crs.as_ref().expect("crs strategies assemble a matrix");
    let pc = BlockJacobi::new(&m.diagonal_blocks(), ctx.exec)?;
    let op = CrsOperator {
        matrix: m,
        exec: ctx.exec,
    };
    pcg(&op, &pc, rhs, s.du.clone(), &ctx.cfg.solver, ctx.exec)
}

fn solve_ebe(ctx: &Ctx<'_>, sets: &[SetState<'_>], rhs: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, SolveStats)>> {
    let model = ctx.model;
    let sys: Vec<_> = sets.iter().map(|s| ctx.nm.system(&s.ray)).collect();
    let diags: Vec<Vec<f64>> = sys
        .iter()
        .map(|y| y.diagonal(&model.mass, &model.dashpot))
        .collect();
    let ops: Vec<EbeOperator<'_>> = sets
        .iter()
        .zip(&diags)
        .zip(&sys)
        .map(|((s, d), y)| stiffness_operator(ctx, &s.tangents, Some(d), y.a_k))
        .collect();
    let mut pcs = Vec::with_capacity(sets.len());
    for ((s, op), (d, y)) in sets.iter().zip(&ops).zip(diags.iter().zip(&sys)) {
        let smoother = BlockJacobi::new(&op.diagonal_blocks(), ctx.exec)?;
        let coarse = model.coarse.assemble(&model.kernels, &s.tangents, y.a_k, d)?;
        pcs.push(TwoLevel::new(op, smoother, &model.coarse, coarse, ctx.exec)?);
    }
    if sets.len() == 1 {
        return Ok(vec![pcg(
            &ops[0],
            &pcs[0],
            &rhs[0],
            sets[0].du.clone(),
            &ctx.cfg.solver,
            ctx.exec,
        )?]);
    }
    let [a, b] = pcg_pair(
        [&ops[0], &ops[1]],
        [&pcs[0], &pcs[1]],
        [&rhs[0], &rhs[1]],
        [sets[0].du.clone(), sets[1].du.clone()],
        &ctx.cfg.solver,
        ctx.exec,
    )?;
    Ok(vec![a, b])
}

/// Advances the springs of partition `p`, writing tangents, internal-force
/// increments and damping of its elements.
#[allow(clippy::too_many_arguments)]
fn compute_partition(
    ctx: &Ctx<'_>,
    range: std::ops::Range<usize>,
    springs: &mut [SpringState],
    du: &[f64],
    tangents: &mut [ElementTangents],
    dq: &mut [[f64; DOFS]],
    h: &mut [f64],
) -> Result<()> {
    let model = ctx.model;
    let start = range.start;
    let mut items: Vec<_> = springs
        .chunks_mut(SPRINGS_PER_ELEMENT)
        .zip(tangents[range.clone()].iter_mut())
        .zip(dq[range.clone()].iter_mut())
        .zip(h[range].iter_mut())
        .collect();
    ctx.exec.for_each_mut(&mut items, |k, (((sp, t), q), hh)| {
        let e = start + k;
        let due = gather(&model.nodes()[e], du);
        let up = update_element(&model.kernels[e], sp, &due, model.material(e));
        **t = up.tangents;
        **q = up.dq;
        **hh = up.damping;
    });
    Ok(())
}

fn multispring_serial(ctx: &Ctx<'_>, s: &mut SetState<'_>) -> Result<StageTiming> {
    let SetState {
        store,
        du,
        tangents,
        dq,
        elem_h,
        ..
    } = s;
    let ranges = store.ranges.clone();
    run_serial(store, ctx.cfg.compute_cost, |p, sp| {
        compute_partition(ctx, ranges[p].clone(), sp, du, tangents, dq, elem_h)
    })
}

fn multispring_pipelined(
    ctx: &Ctx<'_>,
    s: &mut SetState<'_>,
    slots: &mut [Vec<SpringState>; 2],
    channel: &mut TransferChannel,
) -> Result<StageTiming> {
    let SetState {
        store,
        du,
        tangents,
        dq,
        elem_h,
        ..
    } = s;
    let ranges = store.ranges.clone();
    run_pipeline(store, slots, channel, ctx.cfg.compute_cost, |p, sp| {
        compute_partition(ctx, ranges[p].clone(), sp, du, tangents, dq, elem_h)
    })
}

fn multispring_direct(
    ctx: &Ctx<'_>,
    s: &mut SetState<'_>,
    channel: &mut TransferChannel,
    latency: f64,
) -> Result<StageTiming> {
    let SetState {
        store,
        du,
        tangents,
        dq,
        elem_h,
        ..
    } = s;
    let ranges = store.ranges.clone();
    run_direct(store, channel, latency, ctx.cfg.compute_cost, |p, sp| {
        compute_partition(ctx, ranges[p].clone(), sp, du, tangents, dq, elem_h)
    })
}

/// Assembles the internal-force increment in colour order, advances the
/// kinematic state and records outputs.
fn finish_step(ctx: &Ctx<'_>, s: &mut SetState<'_>, step: usize) -> Result<()> {
    let model = ctx.model;
    let mut dqg = vec![0.0; model.n_dofs()];
    let dq = &s.dq;
    scatter_elements(
        &model.coloring,
        model.nodes(),
        &mut dqg,
        ctx.scatter,
        ctx.exec,
        |e| dq[e],
    );
    apply_updates(&mut s.st, &s.du, &dqg, &ctx.nm);
    check_finite(&s.st.u, step)?;
    check_finite(&s.st.v, step)?;
    for (k, &node) in s.out.observation_nodes.iter().enumerate() {
        let b = 3 * node;
        let (u, v) = (&s.st.u, &s.st.v);
        s.out.observations[k].push([u[b], u[b + 1], u[b + 2], v[b], v[b + 1], v[b + 2]]);
    }
    for (m, &node) in s.out.surface_max_velocity.iter_mut().zip(&s.out.surface_nodes) {
        let v = &s.st.v[3 * node..3 * node + 3];
        for c in 0..3 {
            m[c] = m[c].max(v[c].abs());
        }
        m[3] = m[3].max((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt());
    }
    for x in &s.st.u {
        s.hasher.update(x.to_le_bytes());
    }
    if let Some(h) = s.out.displacement_history.as_mut() {
        h.push(s.st.u.clone());
    }
    Ok(())
}

/// Rayleigh update from the new damping level and, for the matrix-based
/// strategies, reassembly of the system matrix.
fn update_matrix(ctx: &Ctx<'_>, s: &mut SetState<'_>) -> Result<()> {
    let model = ctx.model;
    s.ray = RayleighCoeffs::fit(model.mean_damping(&s.elem_h), ctx.cfg.rayleigh_band)?;
    if let Some(m) = s.crs.as_mut() {
        let sys = ctx.nm.system(&s.ray);
        let diag = sys.diagonal(&model.mass, &model.dashpot);
        m.update_values(
            &model.kernels,
            &s.tangents,
            &model.coloring,
            sys.a_k,
            &diag,
            ctx.exec,
        )?;
    }
    Ok(())
}
