//! Linear solvers for the per-step system
//! `(4/dt^2 M + 2/dt C + K) du = r`.
//!
//! The CG recurrences run in double precision; preconditioners work in
//! single precision internally.

mod bcsr;
mod ebe;
mod precond;

pub use bcsr::{Block, BlockCrsF32, BlockCrsMatrix, CrsOperator};
pub use ebe::{batched_apply, gather, scatter_elements, Coloring, EbeOperator, ScatterMode};
pub use precond::{invert3, BlockJacobi, CoarseSpace, Identity, TwoLevel};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;

pub trait LinearOperator: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()>;

    /// True when the preconditioner is not a fixed linear map, which calls
    /// for the flexible (Polak-Ribiere) update.
    fn is_variable(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Relative residual `|b - Ax| / |b|` at convergence.
    pub tol: f64,
    /// Iteration cap; `None` means `10 sqrt(n)`.
    pub max_iter: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_iter: None,
        }
    }
}

impl SolverConfig {
    pub fn max_iterations(&self, n: usize) -> usize {
        self.max_iter
            .unwrap_or_else(|| ((10.0 * (n as f64).sqrt()).ceil() as usize).max(10))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// True relative residual of the returned solution.
    pub residual: f64,
    pub elapsed_s: f64,
    pub matvecs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Init,
    Iterate,
    Check,
    Done,
}

/// Conjugate gradient as a resumable state machine: the caller supplies the
/// operator products it asks for. Running two instances in lockstep lets
/// two systems share one element loop while each follows exactly the
/// arithmetic of a standalone solve.
pub struct CgState<'b> {
    b: &'b [f64],
    pub x: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    y: Vec<f64>,
    rz: f64,
    bnorm: f64,
    tol: f64,
    max_iter: usize,
    stage: Stage,
    exec: Exec,
    started: Instant,
    pub stats: SolveStats,
}

impl<'b> CgState<'b> {
    pub fn new(b: &'b [f64], x0: Vec<f64>, cfg: &SolverConfig, exec: Exec) -> Result<Self> {
        if x0.len() != b.len() {
            return Err(Error::invalid(
                "initial guess and right-hand side differ in length",
            ));
        }
        let n = b.len();
        Ok(CgState {
            b,
            x: x0,
            r: vec![0.0; n],
            z: vec![0.0; n],
            p: vec![0.0; n],
            y: vec![0.0; n],
            rz: 0.0,
            bnorm: 0.0,
            tol: cfg.tol,
            max_iter: cfg.max_iterations(n),
            stage: Stage::Init,
            exec,
            started: Instant::now(),
            stats: SolveStats::default(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.stage == Stage::Done
    }

    /// Vector to multiply next and the buffer for the product, or `None`
    /// once converged.
    pub fn request(&mut self) -> Option<(&[f64], &mut [f64])> {
        match self.stage {
            Stage::Init | Stage::Check => Some((&self.x, &mut self.y)),
            Stage::Iterate => Some((&self.p, &mut self.y)),
            Stage::Done => None,
        }
    }

    fn restart(&mut self, pc: &dyn Preconditioner) -> Result<()> {
        pc.apply(&self.r, &mut self.z)?;
        self.p.copy_from_slice(&self.z);
        self.rz = self.exec.dot(&self.r, &self.z);
        self.stage = Stage::Iterate;
        Ok(())
    }

    fn finish(&mut self, residual: f64) {
        self.stats.residual = residual;
        self.stats.elapsed_s = self.started.elapsed().as_secs_f64();
        self.stage = Stage::Done;
    }

    /// Consumes the product requested by [`Self::request`].
    pub fn advance(&mut self, pc: &dyn Preconditioner) -> Result<()> {
        self.stats.matvecs += 1;
        let exec = self.exec;
        match self.stage {
            Stage::Init => {
                for ((ri, bi), yi) in self.r.iter_mut().zip(self.b).zip(&self.y) {
                    *ri = bi - yi;
                }
                self.bnorm = exec.norm(self.b);
                if self.bnorm == 0.0 {
                    self.x.fill(0.0);
                    self.finish(0.0);
                    return Ok(());
                }
                let res = exec.norm(&self.r) / self.bnorm;
                if res <= self.tol {
                    self.finish(res);
                    return Ok(());
                }
                self.restart(pc)
            }
            Stage::Iterate => {
                let pq = exec.dot(&self.p, &self.y);
                if !(pq > 0.0) || !pq.is_finite() {
                    return Err(Error::Indefinite {
                        iteration: self.stats.iterations,
                        curvature: pq,
                    });
                }
                let alpha = self.rz / pq;
                axpy(exec, alpha, &self.p, &mut self.x);
                axpy(exec, -alpha, &self.y, &mut self.r);
                self.stats.iterations += 1;
                let res = exec.norm(&self.r) / self.bnorm;
                if !res.is_finite() {
                    return Err(Error::Indefinite {
                        iteration: self.stats.iterations,
                        curvature: pq,
                    });
                }
                if res <= self.tol {
                    self.stage = Stage::Check;
                    return Ok(());
                }
                if self.stats.iterations >= self.max_iter {
                    return Err(Error::MaxIterations {
                        iterations: self.stats.iterations,
                        residual: res,
                    });
                }
                pc.apply(&self.r, &mut self.z)?;
                let rz_new = exec.dot(&self.r, &self.z);
                let beta = if pc.is_variable() {
                    -alpha * exec.dot(&self.z, &self.y) / self.rz
                } else {
                    rz_new / self.rz
                };
                self.rz = rz_new;
                let z = &self.z;
                exec.for_each_chunk_mut(&mut self.p, 4096, |c, pc_| {
                    let o = 4096 * c;
                    for (i, pi) in pc_.iter_mut().enumerate() {
                        *pi = z[o + i] + beta * *pi;
                    }
                });
                Ok(())
            }
            Stage::Check => {
                for ((ri, bi), yi) in self.r.iter_mut().zip(self.b).zip(&self.y) {
                    *ri = bi - yi;
                }
                let res = exec.norm(&self.r) / self.bnorm;
                if res <= self.tol {
                    self.finish(res);
                    return Ok(());
                }
                if self.stats.iterations >= self.max_iter {
                    return Err(Error::MaxIterations {
                        iterations: self.stats.iterations,
                        residual: res,
                    });
                }
                self.restart(pc)
            }
            Stage::Done => Ok(()),
        }
    }

    pub fn into_solution(self) -> (Vec<f64>, SolveStats) {
        (self.x, self.stats)
    }
}

fn axpy(exec: Exec, a: f64, x: &[f64], y: &mut [f64]) {
    exec.for_each_chunk_mut(y, 4096, |c, yc| {
        let o = 4096 * c;
        for (i, yi) in yc.iter_mut().enumerate() {
            *yi += a * x[o + i];
        }
    });
}

/// Preconditioned CG; flexible when the preconditioner is variable.
pub fn pcg(
    op: &dyn LinearOperator,
    pc: &dyn Preconditioner,
    b: &[f64],
    x0: Vec<f64>,
    cfg: &SolverConfig,
    exec: Exec,
) -> Result<(Vec<f64>, SolveStats)> {
    if op.len() != b.len() {
        return Err(Error::invalid("operator and right-hand side differ in size"));
    }
    let mut st = CgState::new(b, x0, cfg, exec)?;
    while let Some((v, y)) = st.request() {
        op.apply(v, y);
        st.advance(pc)?;
    }
    Ok(st.into_solution())
}

/// Solves two systems that share topology, batching their operator
/// products through [`batched_apply`].
#[allow(clippy::too_many_arguments)]
pub fn pcg_pair(
    ops: [&EbeOperator<'_>; 2],
    pcs: [&dyn Preconditioner; 2],
    bs: [&[f64]; 2],
    x0: [Vec<f64>; 2],
    cfg: &SolverConfig,
    exec: Exec,
) -> Result<[(Vec<f64>, SolveStats); 2]> {
    let [x1, x2] = x0;
    let mut s1 = CgState::new(bs[0], x1, cfg, exec)?;
    let mut s2 = CgState::new(bs[1], x2, cfg, exec)?;
    loop {
        match (s1.request(), s2.request()) {
            (None, None) => break,
            (Some((v1, y1)), Some((v2, y2))) => {
                batched_apply(ops[0], ops[1], v1, v2, y1, y2)?;
                s1.advance(pcs[0])?;
                s2.advance(pcs[1])?;
            }
            (Some((v, y)), None) => {
                ops[0].apply(v, y);
                s1.advance(pcs[0])?;
            }
            (None, Some((v, y))) => {
                ops[1].apply(v, y);
                s2.advance(pcs[1])?;
            }
        }
    }
    Ok([s1.into_solution(), s2.into_solution()])
}
