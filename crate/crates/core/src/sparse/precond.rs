use crate::element::{ElementKernel, ElementTangents, NODES};
use crate::error::{Error, Result};
use crate::mesh::TET_EDGES;
use crate::par::Exec;

use super::{Block, BlockCrsF32, LinearOperator, Preconditioner};

/// Inverse of a 3x3 block, or `None` when singular.
pub fn invert3(m: &Block) -> Option<Block> {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(det.abs() > 1e-14 * scale.powi(3)) || !det.is_finite() {
        return None;
    }
    let inv = 1.0 / det;
    Some([
        [
            c00 * inv,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv,
        ],
        [
            c01 * inv,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv,
        ],
        [
            c02 * inv,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv,
        ],
    ])
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        z.copy_from_slice(r);
        Ok(())
    }
}

/// Inverted diagonal 3x3 blocks, with a single-precision copy for the
/// coarse level.
#[derive(Clone, Debug)]
pub struct BlockJacobi {
    pub inv: Vec<Block>,
    inv32: Vec<[[f32; 3]; 3]>,
    exec: Exec,
}

impl BlockJacobi {
    pub fn new(diag: &[Block], exec: Exec) -> Result<Self> {
        let inv = diag
            .iter()
            .enumerate()
            .map(|(i, b)| {
                invert3(b).ok_or_else(|| Error::Preconditioner(format!("diagonal block {i} is singular")))
            })
            .collect::<Result<Vec<Block>>>()?;
        let inv32 = inv.iter().map(|m| m.map(|row| row.map(|v| v as f32))).collect();
        Ok(BlockJacobi { inv, inv32, exec })
    }

    pub fn apply_f32(&self, r: &[f32], z: &mut [f32]) {
        let inv = &self.inv32;
        self.exec.for_each_chunk_mut(z, 3 * 512, |c, zc| {
            let n0 = 512 * c;
            for (k, zn) in zc.chunks_exact_mut(3).enumerate() {
                let n = n0 + k;
                let b = &inv[n];
                let rn = &r[3 * n..3 * n + 3];
                for p in 0..3 {
                    zn[p] = b[p][0] * rn[0] + b[p][1] * rn[1] + b[p][2] * rn[2];
                }
            }
        });
    }
}

impl Preconditioner for BlockJacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        let inv = &self.inv;
        self.exec.for_each_chunk_mut(z, 3 * 512, |c, zc| {
            let n0 = 512 * c;
            for (k, zn) in zc.chunks_exact_mut(3).enumerate() {
                let n = n0 + k;
                let b = &inv[n];
                let rn = &r[3 * n..3 * n + 3];
                for p in 0..3 {
                    zn[p] = b[p][0] * rn[0] + b[p][1] * rn[1] + b[p][2] * rn[2];
                }
            }
        });
        Ok(())
    }
}

/// Corner-node (linear) subspace of a quadratic mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseSpace {
    pub n_fine: usize,
    /// Coarse index of each fine node, `u32::MAX` for midside nodes.
    pub fine_to_coarse: Vec<u32>,
    pub coarse_to_fine: Vec<u32>,
    /// Midside fine node and the coarse indices of its edge endpoints.
    pub midsides: Vec<(u32, u32, u32)>,
    /// Coarse element connectivity.
    pub elements: Vec<[u32; 4]>,
}

impl CoarseSpace {
    pub fn new(n_fine: usize, elements: &[[u32; NODES]]) -> Result<Self> {
        let mut fine_to_coarse = vec![u32::MAX; n_fine];
        let mut coarse_to_fine = Vec::new();
        for t in elements {
            for &n in &t[..4] {
                let slot = &mut fine_to_coarse[n as usize];
                if *slot == u32::MAX {
                    *slot = coarse_to_fine.len() as u32;
                    coarse_to_fine.push(n);
                }
            }
        }
        let mut seen = vec![false; n_fine];
        let mut midsides = Vec::new();
        for t in elements {
            for (m, &(a, b)) in TET_EDGES.iter().enumerate() {
                let n = t[4 + m] as usize;
                if fine_to_coarse[n] != u32::MAX {
                    return Err(Error::invalid(format!(
                        "node {n} is both a corner and a midside node"
                    )));
                }
                if !seen[n] {
                    seen[n] = true;
                    midsides.push((
                        n as u32,
                        fine_to_coarse[t[a] as usize],
                        fine_to_coarse[t[b] as usize],
                    ));
                }
            }
        }
        midsides.sort_unstable();
        let coarse_elements = elements
            .iter()
            .map(|t| [0, 1, 2, 3].map(|a| fine_to_coarse[t[a] as usize]))
            .collect();
        Ok(CoarseSpace {
            n_fine,
            fine_to_coarse,
            coarse_to_fine,
            midsides,
            elements: coarse_elements,
        })
    }

    pub fn n_coarse(&self) -> usize {
        self.coarse_to_fine.len()
    }

    /// Quadratic interpolation: corners copy, midsides average their edge.
    pub fn prolong(&self, xc: &[f32], xf: &mut [f64]) {
        for (c, &f) in self.coarse_to_fine.iter().enumerate() {
            for k in 0..3 {
                xf[3 * f as usize + k] = xc[3 * c + k] as f64;
            }
        }
        for &(f, a, b) in &self.midsides {
            for k in 0..3 {
                xf[3 * f as usize + k] =
                    0.5 * (xc[3 * a as usize + k] as f64 + xc[3 * b as usize + k] as f64);
            }
        }
    }

    /// Transpose of [`Self::prolong`].
    pub fn restrict(&self, rf: &[f64], rc: &mut [f32]) {
        let mut acc = vec![0.0f64; rc.len()];
        for (c, &f) in self.coarse_to_fine.iter().enumerate() {
            for k in 0..3 {
                acc[3 * c + k] += rf[3 * f as usize + k];
            }
        }
        for &(f, a, b) in &self.midsides {
            for k in 0..3 {
                let h = 0.5 * rf[3 * f as usize + k];
                acc[3 * a as usize + k] += h;
                acc[3 * b as usize + k] += h;
            }
        }
        for (o, v) in rc.iter_mut().zip(acc) {
            *o = v as f32;
        }
    }

    /// Injection: the corner values of a fine vector.
    pub fn inject(&self, xf: &[f64], xc: &mut [f32]) {
        for (c, &f) in self.coarse_to_fine.iter().enumerate() {
            for k in 0..3 {
                xc[3 * c + k] = xf[3 * f as usize + k] as f32;
            }
        }
    }

    /// Coarse operator: linear-element stiffness with the element's mean
    /// tangent, plus the Galerkin projection of the fine diagonal.
    pub fn assemble(
        &self,
        kernels: &[ElementKernel],
        tangents: &[ElementTangents],
        a_k: f64,
        diag: &[f64],
    ) -> Result<BlockCrsF32> {
        let nc = self.n_coarse();
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); nc];
        for t in &self.elements {
            for &a in t {
                adj[a as usize].extend_from_slice(t);
            }
        }
        let mut row_ptr = vec![0usize];
        let mut col_idx = Vec::new();
        let mut diag_pos = Vec::with_capacity(nc);
        for (i, row) in adj.iter_mut().enumerate() {
            row.push(i as u32);
            row.sort_unstable();
            row.dedup();
            diag_pos.push(col_idx.len() + row.binary_search(&(i as u32)).unwrap());
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let find =
            |r: usize, c: u32| row_ptr[r] + col_idx[row_ptr[r]..row_ptr[r + 1]].binary_search(&c).unwrap();
        let mut vals = vec![[[0.0f64; 3]; 3]; col_idx.len()];
        for (e, t) in self.elements.iter().enumerate() {
            let k = &kernels[e];
            let d = &tangents[e][4].0;
            for a in 0..4 {
                let ga = k.bary[a];
                let bta = [
                    [(0, ga[0]), (3, ga[1]), (5, ga[2])],
                    [(1, ga[1]), (3, ga[0]), (4, ga[2])],
                    [(2, ga[2]), (4, ga[1]), (5, ga[0])],
                ];
                for b in 0..4 {
                    let gb = k.bary[b];
                    let btb = [
                        [(0, gb[0]), (3, gb[1]), (5, gb[2])],
                        [(1, gb[1]), (3, gb[0]), (4, gb[2])],
                        [(2, gb[2]), (4, gb[1]), (5, gb[0])],
                    ];
                    let pos = find(t[a] as usize, t[b]);
                    for p in 0..3 {
                        for q in 0..3 {
                            let mut acc = 0.0;
                            for &(r, cr) in &bta[p] {
                                for &(s, cs) in &btb[q] {
                                    acc += cr * d[r][s] * cs;
                                }
                            }
                            vals[pos][p][q] += a_k * k.volume * acc;
                        }
                    }
                }
            }
        }
        for (c, &f) in self.coarse_to_fine.iter().enumerate() {
            for k in 0..3 {
                vals[diag_pos[c]][k][k] += diag[3 * f as usize + k];
            }
        }
        for &(f, a, b) in &self.midsides {
            let (pa, pb) = (a as usize, b as usize);
            let pab = find(pa, b);
            let pba = find(pb, a);
            for k in 0..3 {
                let q = 0.25 * diag[3 * f as usize + k];
                vals[diag_pos[pa]][k][k] += q;
                vals[diag_pos[pb]][k][k] += q;
                vals[pab][k][k] += q;
                vals[pba][k][k] += q;
            }
        }
        Ok(BlockCrsF32 {
            n_rows: nc,
            row_ptr,
            col_idx,
            vals: vals.iter().map(|b| b.map(|r| r.map(|v| v as f32))).collect(),
            diag_pos,
        })
    }
}

/// Power-iteration estimate of the largest eigenvalue of `B A`.
fn spectral_radius(a: &dyn LinearOperator, b: &BlockJacobi, iters: usize) -> Result<f64> {
    let n = a.len();
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i * 2_654_435_761) % 1000) as f64 * 1e-3)
        .collect();
    let mut y = vec![0.0; n];
    let mut lambda = 1.0;
    for _ in 0..iters {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        x.iter_mut().for_each(|v| *v /= norm);
        a.apply(&x, &mut y);
        b.apply(&y, &mut x)?;
        lambda = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    Ok(lambda.max(1.0))
}

/// Two-level preconditioner: block-Jacobi smoothing on the quadratic mesh
/// around a loosely solved single-precision correction on the corner nodes.
pub struct TwoLevel<'a> {
    fine: &'a dyn LinearOperator,
    smoother: BlockJacobi,
    space: &'a CoarseSpace,
    coarse: BlockCrsF32,
    coarse_smoother: BlockJacobi,
    /// Smoother damping, `4 / (3 lambda_max)` of the block-Jacobi
    /// preconditioned operator.
    pub omega: f64,
    pub coarse_tol: f32,
    pub coarse_max_iter: usize,
    exec: Exec,
}

impl<'a> TwoLevel<'a> {
    pub fn new(
        fine: &'a dyn LinearOperator,
        smoother: BlockJacobi,
        space: &'a CoarseSpace,
        coarse: BlockCrsF32,
        exec: Exec,
    ) -> Result<Self> {
        let cdiag: Vec<Block> = coarse
            .diag_pos
            .iter()
            .map(|&p| coarse.vals[p].map(|r| r.map(|v| v as f64)))
            .collect();
        let coarse_smoother = BlockJacobi::new(&cdiag, exec)?;
        let omega = 4.0 / (3.0 * 1.05 * spectral_radius(fine, &smoother, 12)?);
        Ok(TwoLevel {
            fine,
            smoother,
            space,
            coarse,
            coarse_smoother,
            omega,
            coarse_tol: 0.1,
            coarse_max_iter: 60,
            exec,
        })
    }

    pub fn coarse_matrix(&self) -> &BlockCrsF32 {
        &self.coarse
    }

    /// Loose single-precision PCG on the coarse level.
    fn coarse_solve(&self, b: &[f32], x: &mut [f32]) -> Result<()> {
        let n = b.len();
        x.fill(0.0);
        let dot = |u: &[f32], v: &[f32]| {
            u.iter()
                .zip(v)
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum::<f64>()
        };
        let bnorm = dot(b, b).sqrt();
        if bnorm == 0.0 {
            return Ok(());
        }
        let mut r = b.to_vec();
        let mut z = vec![0.0f32; n];
        let mut q = vec![0.0f32; n];
        self.coarse_smoother.apply_f32(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..self.coarse_max_iter {
            self.coarse.matvec(&p, &mut q, self.exec);
            let pq = dot(&p, &q);
            if !(pq > 0.0) || !pq.is_finite() {
                return Err(Error::Preconditioner(format!(
                    "coarse solve breakdown (p'Ap = {pq:e})"
                )));
            }
            let alpha = (rz / pq) as f32;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            if dot(&r, &r).sqrt() <= self.coarse_tol as f64 * bnorm {
                break;
            }
            self.coarse_smoother.apply_f32(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = (rz_new / rz) as f32;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Ok(())
    }
}

impl Preconditioner for TwoLevel<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        let n = r.len();
        let nc = 3 * self.space.n_coarse();
        let mut t = vec![0.0; n];
        let mut s = vec![0.0; n];
        // pre-smoothing
        self.smoother.apply(r, z)?;
        for v in z.iter_mut() {
            *v *= self.omega;
        }
        // coarse correction of the remaining residual
        self.fine.apply(z, &mut t);
        for i in 0..n {
            t[i] = r[i] - t[i];
        }
        let mut rc = vec![0.0f32; nc];
        let mut ec = vec![0.0f32; nc];
        self.space.restrict(&t, &mut rc);
        self.coarse_solve(&rc, &mut ec)?;
        self.space.prolong(&ec, &mut s);
        for i in 0..n {
            z[i] += s[i];
        }
        // post-smoothing
        self.fine.apply(z, &mut t);
        for i in 0..n {
            t[i] = r[i] - t[i];
        }
        self.smoother.apply(&t, &mut s)?;
        for i in 0..n {
            z[i] += self.omega * s[i];
        }
        Ok(())
    }

    fn is_variable(&self) -> bool {
        true
    }
}
