//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.
//!
//! `cargo test --test acceptance -- <substring>` runs the matching subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tieredfem::column::run_column;
use tieredfem::constitutive::{
    point_tangent, update_eval_point, ElementMaterialState, MaterialParams, SpringDirectionTable,
    SpringState, TangentMatrix, ELEMENT_STATE_BYTES, SPRINGS_PER_POINT, SPRING_BYTES,
};
use tieredfem::element::{ElementTangents, DOFS};
use tieredfem::engine::{run_time_history, EngineConfig, RunResult};
use tieredfem::ensemble::{
    export_ensemble_dir, generate_random_wave, run_ensemble, EnsembleSpec, RunControl,
};
use tieredfem::memtier::{
    partition_states, run_direct, run_pipeline, ChannelConfig, ComputeCost, StrategyKind, TransferChannel,
};
use tieredfem::mesh::{BoundaryConditionSpec, Column1D, Interface, Mesh, MeshConfig};
use tieredfem::model::Model;
use tieredfem::par::Exec;
use tieredfem::sparse::{
    batched_apply, pcg, BlockJacobi, CrsOperator, EbeOperator, LinearOperator, ScatterMode, SolverConfig,
    TwoLevel,
};
use tieredfem::timestep::{apply_updates, build_rhs, NewmarkCoeffs, RayleighCoeffs, TimeState};
use tieredfem::ErrorKind;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn model(cfg: &MeshConfig) -> Model {
    Model::new(
        Mesh::generate(cfg).expect("mesh"),
        BoundaryConditionSpec::default(),
        Exec::default(),
    )
    .expect("model")
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

// ---------------------------------------------------------------- strategies

fn strategy_equivalence() -> Result<String, String> {
    let t0 = Instant::now();
    let cfg = MeshConfig::two_layer(140.0, 100.0, 60.0, 14, 10, 6, 30.0);
    let m = model(&cfg);
    let ne = m.n_elements();
    ensure((4500..=5500).contains(&ne), || format!("mesh has {ne} elements"))?;
    let (dt, nt) = (0.01, 200);
    let w = generate_random_wave(11, 0, nt, dt, [0.6, 0.6, 0.3])
        .unwrap()
        .incident_velocity(0.3);
    let obs = [m.mesh.nearest_node([70.0, 50.0, 0.0])];
    let mut runs: Vec<RunResult> = Vec::new();
    for s in StrategyKind::ALL {
        let ec = EngineConfig {
            strategy: s,
            keep_displacement_history: true,
            ..Default::default()
        };
        let r = run_time_history(&m, &ec, dt, &[&w], &obs)
            .map_err(|e| format!("{s}: {e}"))?
            .remove(0);
        runs.push(r);
    }
    let npart = ne.div_ceil(tieredfem::memtier::default_partition_elems(ne));
    ensure(npart >= 4, || format!("only {npart} partitions"))?;
    let nonlinear = runs[0].telemetry.len() == nt;
    ensure(nonlinear, || "missing telemetry".into())?;
    for k in 1..3 {
        ensure(runs[k].history_digest == runs[0].history_digest, || {
            format!("{} history differs from {}", runs[k].strategy, runs[0].strategy)
        })?;
    }
    let (a, b) = (
        runs[3].displacement_history.as_ref().unwrap(),
        runs[0].displacement_history.as_ref().unwrap(),
    );
    let fa: Vec<f64> = a.iter().flatten().copied().collect();
    let fb: Vec<f64> = b.iter().flatten().copied().collect();
    let rel = rel_l2(&fa, &fb);
    let vmax = runs[0].velocity(0).iter().map(|v| v[0].abs()).fold(0.0, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    ensure(rel <= 1e-6, || format!("EBE relative L2 {rel:e} > 1e-6"))?;
    ensure(secs < 600.0, || format!("took {secs:.0} s"))?;
    Ok(format!(
        "{ne} elements, {npart} partitions, {nt} steps, surface |vx| peak {vmax:.3} m/s; strategies 1-3 bitwise equal, \
         strategy 4 rel L2 {rel:.2e}; {secs:.0} s"
    ))
}

// ---------------------------------------------------------------- residency

fn residency_and_capacity() -> Result<String, String> {
    let cfg = MeshConfig::two_layer(60.0, 60.0, 30.0, 4, 4, 3, 15.0);
    let m = model(&cfg);
    let (dt, nt) = (0.01, 30);
    let w = generate_random_wave(3, 0, 100, dt, [0.6, 0.6, 0.3])
        .unwrap()
        .incident_velocity(0.3);
    let w = &w[..nt];
    let obs = [m.mesh.nearest_node([30.0, 30.0, 0.0])];
    let base = EngineConfig {
        partition_elems: Some(m.n_elements().div_ceil(6)),
        ..Default::default()
    };
    let mut notes = Vec::new();
    for s in [StrategyKind::Pipelined, StrategyKind::PipelinedBatch2Ebe] {
        let free = run_time_history(
            &m,
            &EngineConfig {
                strategy: s,
                ..base.clone()
            },
            dt,
            &[w],
            &obs,
        )
        .map_err(|e| e.to_string())?
        .remove(0);
        let need = free.telemetry.iter().map(|t| t.peak_arena_bytes).max().unwrap();
        let high = free
            .telemetry
            .iter()
            .map(|t| t.resident_high_watermark)
            .max()
            .unwrap();
        ensure(
            free.telemetry.iter().all(|t| t.resident_high_watermark <= 2),
            || format!("{s}: high-watermark {high}"),
        )?;
        // exactly enough room runs, every step within capacity
        let tight = EngineConfig {
            strategy: s,
            fast_capacity_bytes: Some(need),
            ..base.clone()
        };
        let r = run_time_history(&m, &tight, dt, &[w], &obs)
            .map_err(|e| format!("{s} at capacity: {e}"))?
            .remove(0);
        ensure(r.telemetry.iter().all(|t| t.peak_arena_bytes <= need), || {
            format!("{s}: arena above capacity")
        })?;
        ensure(r.history_digest == free.history_digest, || {
            format!("{s}: capacity changed the result")
        })?;
        // one byte less is refused up front
        let short = EngineConfig {
            strategy: s,
            fast_capacity_bytes: Some(need - 1),
            ..base.clone()
        };
        match run_time_history(&m, &short, dt, &[w], &obs) {
            Err(e) if e.kind() == ErrorKind::Capacity => {}
            Err(e) => return Err(format!("{s}: wrong error {e}")),
            Ok(_) => return Err(format!("{s}: ran with {} bytes below need", 1)),
        }
        notes.push(format!("{s}: high-watermark {high}, peak {need} B"));
    }
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------- overlap

fn overlap_law() -> Result<String, String> {
    let (elems, per) = (48, 6);
    let npart = elems / per;
    let ns_per_elem = 50_000;
    let c = (per * ns_per_elem) as u64;
    let cost = ComputeCost::PerElement {
        ns: ns_per_elem as u64,
    };
    let bytes = (per * ELEMENT_STATE_BYTES) as f64;
    let mut worst: f64 = 0.0;
    for ratio in [0.25, 0.5, 1.0, 2.0, 4.0] {
        // latency share keeps both terms of the message cost in play
        let latency = 0.1 * c as f64 / ratio * 1e-9;
        let bandwidth = bytes / (0.9 * c as f64 / ratio * 1e-9);
        let mut ch = TransferChannel::new(ChannelConfig { bandwidth, latency }).unwrap();
        let x = ch.config.duration_ns(bytes as u64);
        let mut store = partition_states(elems, per).unwrap();
        let n = per * tieredfem::constitutive::SPRINGS_PER_ELEMENT;
        let mut slots = [vec![SpringState::VIRGIN; n], vec![SpringState::VIRGIN; n]];
        let t = run_pipeline(&mut store, &mut slots, &mut ch, cost, |_, sp| {
            for s in sp {
                s.gamma += 1e-6;
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        let big = c.max(x);
        let (lo, hi) = (big * npart as u64, big * npart as u64 + 2 * (c + x));
        ensure(lo <= t.stage_ns && t.stage_ns <= hi, || {
            format!("c/x = {ratio}: T = {} ns outside [{lo}, {hi}]", t.stage_ns)
        })?;
        ensure(t.resident_high_watermark <= 2, || {
            format!("c/x = {ratio}: {} resident", t.resident_high_watermark)
        })?;
        ensure(t.overlapped_ns <= t.compute_ns.min(t.up_ns + t.down_ns), || {
            "overlap exceeds its parts".into()
        })?;
        worst = worst.max(t.stage_ns as f64 / (big * npart as u64) as f64);
    }

    // direct slow-tier access with a high per-access latency
    let ch_cfg = ChannelConfig {
        bandwidth: bytes / (c as f64 * 1e-9),
        latency: 1e-6,
    };
    let mut ch = TransferChannel::new(ch_cfg).unwrap();
    let mut store = partition_states(elems, per).unwrap();
    let n = per * tieredfem::constitutive::SPRINGS_PER_ELEMENT;
    let mut slots = [vec![SpringState::VIRGIN; n], vec![SpringState::VIRGIN; n]];
    let piped =
        run_pipeline(&mut store, &mut slots, &mut ch, cost, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let mut ch = TransferChannel::new(ch_cfg).unwrap();
    let direct = run_direct(&mut store, &mut ch, 1e-4, cost, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let slow = direct.stage_ns as f64 / piped.stage_ns as f64;
    ensure(slow >= 3.0, || format!("direct access only {slow:.2}x slower"))?;

    // the engine reports the same law in its telemetry
    let m = model(&MeshConfig::two_layer(40.0, 40.0, 20.0, 2, 2, 2, 10.0));
    let ne = m.n_elements();
    let ec = EngineConfig {
        strategy: StrategyKind::Pipelined,
        partition_elems: Some(ne / 8),
        compute_cost: ComputeCost::PerElement { ns: 20_000 },
        channel: ChannelConfig {
            bandwidth: 2.0 * ELEMENT_STATE_BYTES as f64 / 20_000e-9,
            latency: 0.0,
        },
        ..Default::default()
    };
    let w = vec![[0.05, 0.0, 0.0]; 3];
    let r = run_time_history(&m, &ec, 0.01, &[&w], &[0])
        .map_err(|e| e.to_string())?
        .remove(0);
    let part = (ne / 8) as f64;
    let (ce, xe) = (part * 20_000e-9, part * 10_000e-9);
    for t in &r.telemetry {
        let (lo, hi) = (ce.max(xe) * 8.0, ce.max(xe) * 8.0 + 2.0 * (ce + xe));
        ensure(
            t.multispring_stage_s >= lo - 1e-9 && t.multispring_stage_s <= hi + 1e-9,
            || {
                format!(
                    "engine step {}: stage {} s outside [{lo}, {hi}]",
                    t.step, t.multispring_stage_s
                )
            },
        )?;
        ensure(t.overlapped_s > 0.0, || "engine recorded no overlap".into())?;
    }
    let ec_direct = EngineConfig {
        direct_access_latency: Some(1e-4),
        ..ec
    };
    let rd = run_time_history(&m, &ec_direct, 0.01, &[&w], &[0])
        .map_err(|e| e.to_string())?
        .remove(0);
    ensure(rd.history_digest == r.history_digest, || {
        "direct access changed the result".into()
    })?;
    let engine_slow = rd.telemetry[0].multispring_stage_s / r.telemetry[0].multispring_stage_s;
    ensure(engine_slow >= 3.0, || {
        format!("engine direct access only {engine_slow:.2}x slower")
    })?;
    Ok(format!(
        "c/x in {{0.25..4}}: T/(max*npart) <= {worst:.3}; direct access {slow:.1}x slower (engine {engine_slow:.1}x)"
    ))
}

// ---------------------------------------------------------------- operators

struct System {
    model: Model,
    tangents: Vec<ElementTangents>,
    diag: Vec<f64>,
    a_k: f64,
}

/// A damped Newmark system with per-element tangents softened at random,
/// as after nonlinear loading.
fn system(cfg: &MeshConfig, seed: u64) -> System {
    let model = model(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tangents: Vec<ElementTangents> = (0..model.n_elements())
        .map(|e| {
            let mat = model.material(e);
            let mut t = tieredfem::element::elastic_tangents(mat);
            for d in t.iter_mut() {
                let g = mat.g0 * rng.gen_range(0.2..1.0);
                *d = TangentMatrix::isotropic(mat.bulk, g);
            }
            t
        })
        .collect();
    let nm = NewmarkCoeffs::new(0.01).unwrap();
    let sys = nm.system(&RayleighCoeffs::fit(0.05, [0.2, 2.5]).unwrap());
    let diag = sys.diagonal(&model.mass, &model.dashpot);
    System {
        model,
        tangents,
        diag,
        a_k: sys.a_k,
    }
}

impl System {
    fn ebe<'a>(&'a self, scatter: ScatterMode, tangents: Option<&'a [ElementTangents]>) -> EbeOperator<'a> {
        EbeOperator {
            n_dofs: self.model.n_dofs(),
            kernels: &self.model.kernels,
            nodes: self.model.nodes(),
            coloring: &self.model.coloring,
            tangents: tangents.unwrap_or(&self.tangents),
            diag: Some(&self.diag),
            a_k: self.a_k,
            scatter,
            exec: Exec::default(),
        }
    }

    fn crs(&self) -> tieredfem::sparse::BlockCrsMatrix {
        let mut m = self.model.pattern.clone();
        let md = &self.model;
        m.update_values(
            &md.kernels,
            &self.tangents,
            &md.coloring,
            self.a_k,
            &self.diag,
            Exec::default(),
        )
        .unwrap();
        m
    }

    /// Dense matrix assembled straight from the element stiffness matrices.
    fn dense(&self) -> DMatrix<f64> {
        let n = self.model.n_dofs();
        let mut a = DMatrix::zeros(n, n);
        for (e, k) in self.model.kernels.iter().enumerate() {
            let ke = k.stiffness(&self.tangents[e]);
            let nodes = &self.model.nodes()[e];
            for i in 0..DOFS {
                let gi = 3 * nodes[i / 3] as usize + i % 3;
                for j in 0..DOFS {
                    let gj = 3 * nodes[j / 3] as usize + j % 3;
                    a[(gi, gj)] += self.a_k * ke[i][j];
                }
            }
        }
        for i in 0..n {
            a[(i, i)] += self.diag[i];
        }
        a
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn operator_equivalence() -> Result<String, String> {
    let s = system(&MeshConfig::two_layer(40.0, 40.0, 30.0, 3, 3, 3, 15.0), 5);
    let crs = s.crs();
    let crs_op = CrsOperator {
        matrix: &crs,
        exec: Exec::default(),
    };
    let n = s.model.n_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let (mut y1, mut y2) = (vec![0.0; n], vec![0.0; n]);
    for k in 0..1000 {
        let x = random_vec(&mut rng, n);
        let mode = if k % 2 == 0 {
            ScatterMode::Colored
        } else {
            ScatterMode::Atomic
        };
        s.ebe(mode, None).apply(&x, &mut y1);
        crs_op.apply(&x, &mut y2);
        worst = worst.max(rel_l2(&y1, &y2));
    }
    ensure(worst <= 1e-12, || {
        format!("EBE vs CRS relative difference {worst:e}")
    })?;

    let other: Vec<ElementTangents> = s.tangents.iter().rev().cloned().collect();
    let mut worst_b: f64 = 0.0;
    for mode in [ScatterMode::Colored, ScatterMode::Atomic] {
        let (op1, op2) = (s.ebe(mode, None), s.ebe(mode, Some(&other)));
        for _ in 0..50 {
            let (x1, x2) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
            let (mut b1, mut b2, mut r1, mut r2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            batched_apply(&op1, &op2, &x1, &x2, &mut b1, &mut b2).map_err(|e| e.to_string())?;
            op1.apply(&x1, &mut r1);
            op2.apply(&x2, &mut r2);
            worst_b = worst_b.max(rel_l2(&b1, &r1)).max(rel_l2(&b2, &r2));
        }
    }
    ensure(worst_b <= 1e-15, || format!("batched vs sequential {worst_b:e}"))?;
    Ok(format!(
        "{n} DOF: EBE vs CRS max rel {worst:.1e} over 1000 vectors; batched vs sequential {worst_b:.1e}"
    ))
}

// ---------------------------------------------------------------- solvers

fn solver_contract() -> Result<String, String> {
    let s = system(&MeshConfig::two_layer(50.0, 50.0, 30.0, 5, 5, 3, 15.0), 8);
    let n = s.model.n_dofs();
    ensure(n <= 3000, || format!("{n} DOF"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let b = random_vec(&mut rng, n);
    let exact = s
        .dense()
        .lu()
        .solve(&DVector::from_column_slice(&b))
        .ok_or("dense solve failed")?;
    let exact: Vec<f64> = exact.iter().copied().collect();
    let cfg = SolverConfig::default();

    let crs = s.crs();
    let op = CrsOperator {
        matrix: &crs,
        exec: Exec::default(),
    };
    let bj = BlockJacobi::new(&crs.diagonal_blocks(), Exec::default()).unwrap();
    let (x1, st1) = pcg(&op, &bj, &b, vec![0.0; n], &cfg, Exec::default()).map_err(|e| e.to_string())?;

    let ebe = s.ebe(ScatterMode::Colored, None);
    let smoother = BlockJacobi::new(&ebe.diagonal_blocks(), Exec::default()).unwrap();
    let coarse = s
        .model
        .coarse
        .assemble(&s.model.kernels, &s.tangents, s.a_k, &s.diag)
        .unwrap();
    let tl = TwoLevel::new(&ebe, smoother, &s.model.coarse, coarse, Exec::default()).unwrap();
    let (x2, st2) = pcg(&ebe, &tl, &b, vec![0.0; n], &cfg, Exec::default()).map_err(|e| e.to_string())?;

    for (name, x, st) in [("CRS-PCG", &x1, st1), ("EBE-IPCG", &x2, st2)] {
        ensure(st.residual <= 1e-8, || {
            format!("{name} residual {:e}", st.residual)
        })?;
        let err = rel_l2(x, &exact);
        ensure(err <= 1e-7, || format!("{name} differs from dense by {err:e}"))?;
    }

    // iteration counts on the layered regression mesh
    let r = system(
        &MeshConfig {
            interfaces: vec![Interface::Flat { z: -30.0 }],
            ..tieredfem::config::RunConfig::default().mesh
        },
        21,
    );
    let nr = r.model.n_dofs();
    let br = random_vec(&mut rng, nr);
    let ebe = r.ebe(ScatterMode::Colored, None);
    let bj = BlockJacobi::new(&ebe.diagonal_blocks(), Exec::default()).unwrap();
    let (_, sb) = pcg(&ebe, &bj, &br, vec![0.0; nr], &cfg, Exec::default()).map_err(|e| e.to_string())?;
    let smoother = BlockJacobi::new(&ebe.diagonal_blocks(), Exec::default()).unwrap();
    let coarse = r
        .model
        .coarse
        .assemble(&r.model.kernels, &r.tangents, r.a_k, &r.diag)
        .unwrap();
    let tl = TwoLevel::new(&ebe, smoother, &r.model.coarse, coarse, Exec::default()).unwrap();
    let (_, st) = pcg(&ebe, &tl, &br, vec![0.0; nr], &cfg, Exec::default()).map_err(|e| e.to_string())?;
    ensure(st.iterations < sb.iterations, || {
        format!(
            "two-level {} vs block Jacobi {} iterations",
            st.iterations, sb.iterations
        )
    })?;
    Ok(format!(
        "{n} DOF: CRS-PCG {} it (res {:.1e}), EBE-IPCG {} it (res {:.1e}), both within 1e-7 of dense; \
         {nr} DOF regression mesh: two-level {} vs block Jacobi {} iterations",
        st1.iterations, st1.residual, st2.iterations, st2.residual, st.iterations, sb.iterations
    ))
}

// ---------------------------------------------------------------- layout

fn state_layout() -> Result<String, String> {
    let s = SpringState {
        gamma: 1.5,
        gamma_max: 2.0,
        gamma_rev: 0.25,
        tau_rev: 3.0,
        dir: -1,
        skel: 0,
    };
    let mut buf = Vec::new();
    s.write_le(&mut buf);
    ensure(buf.len() == 40 && SPRING_BYTES == 40, || {
        format!("spring serializes to {} bytes", buf.len())
    })?;
    ensure(SpringState::read_le(&buf).unwrap() == s, || {
        "spring round trip".into()
    })?;
    let el = ElementMaterialState::default();
    let bytes = el.to_le_bytes();
    ensure(bytes.len() == 24_000 && ELEMENT_STATE_BYTES == 24_000, || {
        format!("element is {} bytes", bytes.len())
    })?;
    ensure(ElementMaterialState::from_le_bytes(&bytes).unwrap() == el, || {
        "element round trip".into()
    })?;
    Ok("spring 40 B, element 24000 B, both round-trip".into())
}

// ---------------------------------------------------------------- constitutive

fn drive(s: &mut SpringState, to: f64, steps: usize, mat: &MaterialParams) {
    let d = (to - s.gamma) / steps as f64;
    for _ in 0..steps {
        s.update(d, mat);
    }
}

fn constitutive_physics() -> Result<String, String> {
    let mat = MaterialParams::soft_soil();
    let tf = mat.tau_f();
    let mut worst_close: f64 = 0.0;
    for amp in [0.05, 0.5, 2.0, 20.0] {
        let ga = amp * mat.gamma_ref;
        let mut s = SpringState::VIRGIN;
        drive(&mut s, ga, 37, &mat);
        let top = s.stress(&mat);
        drive(&mut s, -ga, 53, &mat);
        let bottom = s.stress(&mat);
        drive(&mut s, ga, 41, &mat);
        worst_close = worst_close
            .max((s.stress(&mat) - top).abs())
            .max((bottom + top).abs());
        // inner loop closes at its reversal point
        drive(&mut s, 0.2 * ga, 19, &mat);
        let at = (s.gamma, s.stress(&mat));
        drive(&mut s, 0.6 * ga, 23, &mat);
        drive(&mut s, at.0, 29, &mat);
        worst_close = worst_close.max((s.stress(&mat) - at.1).abs());
    }
    ensure(worst_close <= 1e-6 * tf, || {
        format!("loop closure error {:e} tau_f", worst_close / tf)
    })?;

    // spring tangents on skeleton and branches
    let mut worst_t: f64 = 0.0;
    let mut s = SpringState::VIRGIN;
    let path = [1.3, -0.7, 0.4, -2.5, 1.1];
    for &target in &path {
        drive(&mut s, target * mat.gamma_ref, 17, &mat);
        let dir = if target > 0.0 { 1.0 } else { -1.0 };
        // continue a little in the same direction so the branch is unchanged
        let next = s.gamma + dir * 1e-3 * mat.gamma_ref;
        drive(&mut s, next, 1, &mat);
        let h = dir * 1e-9 * mat.gamma_ref;
        let mut t = s;
        let tau0 = t.stress(&mat);
        t.update(h, &mat);
        let fd = (t.stress(&mat) - tau0) / h;
        let an = s.tangent(&mat);
        worst_t = worst_t.max((fd - an).abs() / an.abs());
    }
    // multi-spring point tangent against finite differences of the stress
    let tbl = SpringDirectionTable::standard();
    let mut springs = vec![SpringState::VIRGIN; SPRINGS_PER_POINT];
    let e1 = [0.3, -0.1, -0.2, 1.0, 0.4, -0.6].map(|v| v * 1.5e-3);
    let e2 = [-0.2, 0.25, -0.05, -0.7, 0.9, 0.3].map(|v| 0.8e-3 * v);
    for _ in 0..10 {
        update_eval_point(&mut springs, &e1.map(|v| v / 10.0), &mat, tbl);
    }
    for _ in 0..10 {
        update_eval_point(&mut springs, &e2.map(|v| v / 10.0), &mat, tbl);
    }
    let d = point_tangent(&springs, &mat, tbl);
    let h = 1e-7;
    let mut probe = springs.clone();
    let (_, ds) = update_eval_point(&mut probe, &e2.map(|v| v * h), &mat, tbl);
    let an = d.mul_vec(&e2);
    let num: f64 = (0..6).map(|i| (ds[i] / h - an[i]).powi(2)).sum::<f64>().sqrt();
    let den: f64 = an.iter().map(|v| v * v).sum::<f64>().sqrt();
    worst_t = worst_t.max(num / den);
    ensure(worst_t <= 1e-4, || {
        format!("tangent vs finite difference {worst_t:e}")
    })?;

    let virgin = point_tangent(&vec![SpringState::VIRGIN; SPRINGS_PER_POINT], &mat, tbl);
    let iso = TangentMatrix::isotropic(mat.bulk, mat.g0);
    let mut diff = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            diff += (virgin.0[i][j] - iso.0[i][j]).powi(2);
        }
    }
    let rel = diff.sqrt() / iso.frobenius();
    ensure(rel <= 1e-8, || {
        format!("calibrated D differs from isotropic by {rel:e}")
    })?;
    Ok(format!(
        "closure {:.1e} tau_f, tangent vs FD {worst_t:.1e}, calibrated D vs isotropic {rel:.1e}",
        worst_close / tf
    ))
}

// ---------------------------------------------------------------- SDOF

/// Free vibration of `u'' + w^2 u = 0` through the library's step update.
fn sdof(dt: f64, t_end: f64) -> (Vec<f64>, f64) {
    let w = 2.0 * std::f64::consts::PI;
    let nm = NewmarkCoeffs::new(dt).unwrap();
    let ray = RayleighCoeffs::default();
    let (m, k) = (1.0, w * w);
    let mut st = TimeState::zeros(1, dt);
    st.u[0] = 1.0;
    st.q[0] = k;
    st.a[0] = -k;
    let mut u = vec![1.0];
    let sys = nm.system(&ray);
    let lhs = sys.a_m * m + sys.a_k * k;
    let n = (t_end / dt).round() as usize;
    for _ in 0..n {
        let kv = [k * st.v[0]];
        let r = build_rhs(&st, &[0.0], &[m], &[0.0], &kv, &ray, &nm, Exec::Sequential);
        let du = r[0] / lhs;
        apply_updates(&mut st, &[du], &[k * du], &nm);
        u.push(st.u[0]);
    }
    let omega_bar = 2.0 / dt * (w * dt / 2.0).atan();
    (u, omega_bar)
}

fn measured_period(u: &[f64], dt: f64) -> f64 {
    let mut ups = Vec::new();
    for i in 1..u.len() {
        if u[i - 1] < 0.0 && u[i] >= 0.0 {
            ups.push((i - 1) as f64 * dt + dt * u[i - 1] / (u[i - 1] - u[i]));
        }
    }
    (ups[ups.len() - 1] - ups[0]) / (ups.len() - 1) as f64
}

fn sdof_accuracy() -> Result<String, String> {
    let w = 2.0 * std::f64::consts::PI;
    let (u, ob) = sdof(0.01, 10.0);
    ensure(u.len() == 1001, || "1000 steps".into())?;
    let peak_last = u[u.len() - 200..].iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let peak_first = u[..200].iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let drift = (peak_last / peak_first - 1.0).abs();
    ensure(drift <= 1e-3, || format!("amplitude drift {drift:e}"))?;
    let off = u
        .iter()
        .enumerate()
        .map(|(n, v)| (v - (ob * n as f64 * 0.01).cos()).abs())
        .fold(0.0, f64::max);
    ensure(off <= 1e-9, || {
        format!("off the discrete analytic solution by {off:e}")
    })?;
    let mut errs = Vec::new();
    for dt in [0.01, 0.005, 0.0025] {
        let (u, _) = sdof(dt, 10.0);
        let err = measured_period(&u, dt) - 1.0;
        let bound = (w * dt).powi(2) / 12.0 * 1.05;
        ensure(err > 0.0 && err <= bound, || {
            format!("dt {dt}: period error {err:e} vs bound {bound:e}")
        })?;
        errs.push(err);
    }
    let r1 = errs[0] / errs[1];
    let r2 = errs[1] / errs[2];
    ensure((3.8..4.2).contains(&r1) && (3.8..4.2).contains(&r2), || {
        format!("error ratios {r1:.3}, {r2:.3}")
    })?;
    Ok(format!(
        "drift {drift:.1e}; period errors {:.2e}, {:.2e}, {:.2e} (ratios {r1:.3}, {r2:.3})",
        errs[0], errs[1], errs[2]
    ))
}

// ---------------------------------------------------------------- 1D / 3D

/// Peak horizontal surface velocities of the 3D model and the column at `p`.
fn peaks_3d_1d(cfg: &MeshConfig, p: [f64; 3]) -> Result<([f64; 3], [f64; 3]), String> {
    let (dt, nt) = (0.01, 600);
    let m = model(cfg);
    let w = generate_random_wave(1, 0, nt, dt, [0.6, 0.6, 0.3])
        .unwrap()
        .incident_velocity(0.3);
    let ec = EngineConfig {
        strategy: StrategyKind::SolverFast,
        ..Default::default()
    };
    let node = m.mesh.nearest_node(p);
    let r = run_time_history(&m, &ec, dt, &[&w], &[node])
        .map_err(|e| e.to_string())?
        .remove(0);
    let col = Column1D::from_config(cfg, p[0], p[1]).map_err(|e| e.to_string())?;
    let c = run_column(&col, &w, dt, ec.rayleigh_band).map_err(|e| e.to_string())?;
    let peak = |s: &[[f64; 3]]| [0, 1, 2].map(|k| s.iter().map(|v| v[k].abs()).fold(0.0, f64::max));
    Ok((peak(&r.velocity(0)), peak(&c.surface_velocity)))
}

fn cross_validation_1d_3d() -> Result<String, String> {
    let flat = MeshConfig {
        interfaces: vec![Interface::Flat { z: -30.0 }],
        ..MeshConfig::two_layer(60.0, 60.0, 60.0, 8, 8, 8, 30.0)
    };
    let (a, b) = peaks_3d_1d(&flat, [30.0, 30.0, 0.0])?;
    let flat_diff = [0, 1].map(|k| (a[k] / b[k] - 1.0).abs());
    let zf = a[2] / b[2] - 1.0;
    ensure(flat_diff.iter().all(|d| *d <= 0.05), || {
        format!("flat layer differs by {flat_diff:?}")
    })?;

    let sloped = MeshConfig {
        interfaces: vec![Interface::ProfileX {
            points: vec![(0.0, -40.0), (40.0, -40.0), (80.0, -10.0), (120.0, -10.0)],
        }],
        ..MeshConfig::two_layer(120.0, 60.0, 60.0, 12, 6, 8, 30.0)
    };
    let (a, b) = peaks_3d_1d(&sloped, [75.0, 30.0, 0.0])?;
    let slope_diff = [0, 1]
        .map(|k| (a[k] / b[k] - 1.0).abs())
        .into_iter()
        .fold(0.0, f64::max);
    let zs = a[2] / b[2] - 1.0;
    ensure(slope_diff >= 0.15, || {
        format!("slope point differs by only {slope_diff:.3}")
    })?;
    Ok(format!(
        "flat: horizontal {:.1}% / {:.1}% (vertical {:+.1}%); slope point: horizontal {:.1}% (vertical {:+.1}%)",
        100.0 * flat_diff[0],
        100.0 * flat_diff[1],
        100.0 * zf,
        100.0 * slope_diff,
        100.0 * zs
    ))
}

// ---------------------------------------------------------------- ensemble

fn ensemble_determinism() -> Result<String, String> {
    let cfg = MeshConfig::two_layer(40.0, 40.0, 20.0, 2, 2, 2, 10.0);
    let m = model(&cfg);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = |dir: &str| EnsembleSpec {
        n_cases: 16,
        seed: 2024,
        nt: 200,
        dt: 0.005,
        observation_points: vec![[20.0, 20.0, 0.0], [0.0, 0.0, 0.0]],
        output_dir: Some(tmp.path().join(dir)),
        ..Default::default()
    };
    let ec = EngineConfig::default();
    let full = |dir: &str| -> Result<Vec<u8>, String> {
        let out = run_ensemble(&m, &spec(dir), &ec, RunControl::default()).map_err(|e| e.to_string())?;
        ensure(out.complete && out.records.iter().all(|r| r.is_ok()), || {
            format!("{dir}: incomplete")
        })?;
        let path = tmp.path().join(format!("{dir}.bin"));
        export_ensemble_dir(&tmp.path().join(dir), &path).map_err(|e| e.to_string())?;
        std::fs::read(path).map_err(|e| e.to_string())
    };
    let a = full("a")?;
    let b = full("b")?;
    ensure(a == b, || "two runs gave different archives".into())?;

    // interrupted twice, then finished
    for chunk in [5, 4] {
        let out = run_ensemble(
            &m,
            &spec("c"),
            &ec,
            RunControl {
                max_new_cases: Some(chunk),
            },
        )
        .map_err(|e| e.to_string())?;
        ensure(out.computed.len() == chunk && !out.complete, || {
            "partial run".into()
        })?;
    }
    let c = full("c")?;
    ensure(a == c, || "resumed run gave a different archive".into())?;
    let mut other = spec("d");
    other.seed = 2025;
    run_ensemble(&m, &other, &ec, RunControl::default()).map_err(|e| e.to_string())?;
    export_ensemble_dir(&tmp.path().join("d"), &tmp.path().join("d.bin")).map_err(|e| e.to_string())?;
    let d = std::fs::read(tmp.path().join("d.bin")).map_err(|e| e.to_string())?;
    ensure(d != a, || "a different seed gave the same archive".into())?;
    Ok(format!(
        "16 cases, {} byte archive identical across runs and after resume",
        a.len()
    ))
}

fn main() {
    let checks: [(&str, Check); 10] = [
        ("strategy_equivalence", strategy_equivalence),
        ("residency_capacity", residency_and_capacity),
        ("overlap_law", overlap_law),
        ("operator_equivalence", operator_equivalence),
        ("solver_contract", solver_contract),
        ("state_layout", state_layout),
        ("constitutive_physics", constitutive_physics),
        ("sdof_integration", sdof_accuracy),
        ("cross_validation_1d_3d", cross_validation_1d_3d),
        ("ensemble_determinism", ensemble_determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if std::env::args().any(|a| a == "--list") {
        for (name, _) in &checks {
            println!("{name}: test");
        }
        return;
    }
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
