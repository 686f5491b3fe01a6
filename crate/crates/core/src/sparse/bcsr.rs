use crate::element::{ElementKernel, ElementTangents, NODES};
use crate::error::{Error, Result};
use crate::par::{DisjointSlice, Exec};

use super::{Coloring, LinearOperator};

pub type Block = [[f64; 3]; 3];

/// Compressed-row matrix of 3x3 blocks over mesh nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCrsMatrix {
    pub n_rows: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub vals: Vec<Block>,
    /// Position of the diagonal block of each row.
    pub diag_pos: Vec<usize>,
    /// Block index of local pair `(a, b)` of each element, at `10 a + b`.
    pub elem_map: Vec<[u32; NODES * NODES]>,
}

impl BlockCrsMatrix {
    /// Sparsity pattern from element connectivity; values are zero.
    pub fn pattern(n_nodes: usize, elements: &[[u32; NODES]]) -> Result<Self> {
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n_nodes];
        for t in elements {
            for &a in t {
                if a as usize >= n_nodes {
                    return Err(Error::invalid(format!("element node {a} out of range")));
                }
                adj[a as usize].extend_from_slice(t);
            }
        }
        let mut row_ptr = Vec::with_capacity(n_nodes + 1);
        let mut col_idx = Vec::new();
        let mut diag_pos = Vec::with_capacity(n_nodes);
        row_ptr.push(0);
        for (i, row) in adj.iter_mut().enumerate() {
            row.push(i as u32);
            row.sort_unstable();
            row.dedup();
            diag_pos.push(col_idx.len() + row.binary_search(&(i as u32)).unwrap());
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let find = |r: usize, c: u32| -> u32 {
            let cols = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            (row_ptr[r] + cols.binary_search(&c).expect("pattern contains element pair")) as u32
        };
        let elem_map = elements
            .iter()
            .map(|t| {
                let mut m = [0u32; NODES * NODES];
                for a in 0..NODES {
                    for b in 0..NODES {
                        m[a * NODES + b] = find(t[a] as usize, t[b]);
                    }
                }
                m
            })
            .collect();
        let nnz = col_idx.len();
        Ok(BlockCrsMatrix {
            n_rows: n_nodes,
            row_ptr,
            col_idx,
            vals: vec![[[0.0; 3]; 3]; nnz],
            diag_pos,
            elem_map,
        })
    }

    pub fn nnz_blocks(&self) -> usize {
        self.col_idx.len()
    }

    /// Storage of values and index arrays: `72 nnz + 8 (n + 1) + 4 nnz` bytes.
    pub fn storage_bytes(&self) -> u64 {
        (self.nnz_blocks() * 72 + (self.n_rows + 1) * std::mem::size_of::<usize>() + self.nnz_blocks() * 4)
            as u64
    }

    /// Refills values with `a_k * sum_e K_e + diag(diag)`. The pattern is
    /// untouched; element contributions are summed colour by colour, so the
    /// result does not depend on the execution policy.
    pub fn update_values(
        &mut self,
        kernels: &[ElementKernel],
        tangents: &[ElementTangents],
        coloring: &Coloring,
        a_k: f64,
        diag: &[f64],
        exec: Exec,
    ) -> Result<()> {
        if kernels.len() != self.elem_map.len()
            || tangents.len() != kernels.len()
            || diag.len() != 3 * self.n_rows
        {
            return Err(Error::invalid("assembly inputs do not match the matrix pattern"));
        }
        for v in self.vals.iter_mut() {
            *v = [[0.0; 3]; 3];
        }
        let elem_map = &self.elem_map;
        let vals = DisjointSlice::new(&mut self.vals);
        for group in &coloring.groups {
            exec.for_each(group.len(), |k| {
                let e = group[k] as usize;
                let blocks = kernels[e].stiffness_blocks(&tangents[e]);
                for (pos, blk) in elem_map[e].iter().zip(blocks.iter()) {
                    // SAFETY: elements of one colour share no node, so they
                    // touch disjoint block rows.
                    let dst = unsafe { vals.get(*pos as usize) };
                    for p in 0..3 {
                        for q in 0..3 {
                            dst[p][q] += a_k * blk[p][q];
                        }
                    }
                }
            });
        }
        for (i, &pos) in self.diag_pos.iter().enumerate() {
            for c in 0..3 {
                self.vals[pos][c][c] += diag[3 * i + c];
            }
        }
        Ok(())
    }

    pub fn diagonal_blocks(&self) -> Vec<Block> {
        self.diag_pos.iter().map(|&p| self.vals[p]).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64], exec: Exec) {
        debug_assert_eq!(x.len(), 3 * self.n_rows);
        exec.for_each_chunk_mut(y, 3 * 256, |chunk, yc| {
            let r0 = chunk * 256;
            for (lr, yr) in yc.chunks_exact_mut(3).enumerate() {
                let r = r0 + lr;
                let mut acc = [0.0; 3];
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    let c = self.col_idx[k] as usize;
                    let b = &self.vals[k];
                    let xc = &x[3 * c..3 * c + 3];
                    for p in 0..3 {
                        acc[p] += b[p][0] * xc[0] + b[p][1] * xc[1] + b[p][2] * xc[2];
                    }
                }
                yr.copy_from_slice(&acc);
            }
        });
    }

    /// Dense copy, for small test problems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = 3 * self.n_rows;
        let mut a = vec![vec![0.0; n]; n];
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k] as usize;
                for p in 0..3 {
                    for q in 0..3 {
                        a[3 * r + p][3 * c + q] = self.vals[k][p][q];
                    }
                }
            }
        }
        a
    }
}

/// Matrix-vector product bound to an execution policy.
pub struct CrsOperator<'a> {
    pub matrix: &'a BlockCrsMatrix,
    pub exec: Exec,
}

impl LinearOperator for CrsOperator<'_> {
    fn len(&self) -> usize {
        3 * self.matrix.n_rows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec(x, y, self.exec)
    }
}

/// Single-precision block matrix used by the coarse level.
#[derive(Clone, Debug, Default)]
pub struct BlockCrsF32 {
    pub n_rows: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub vals: Vec<[[f32; 3]; 3]>,
    pub diag_pos: Vec<usize>,
}

impl BlockCrsF32 {
    pub fn matvec(&self, x: &[f32], y: &mut [f32], exec: Exec) {
        exec.for_each_chunk_mut(y, 3 * 256, |chunk, yc| {
            let r0 = chunk * 256;
            for (lr, yr) in yc.chunks_exact_mut(3).enumerate() {
                let r = r0 + lr;
                let mut acc = [0.0f32; 3];
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    let c = self.col_idx[k] as usize;
                    let b = &self.vals[k];
                    for p in 0..3 {
                        acc[p] += b[p][0] * x[3 * c] + b[p][1] * x[3 * c + 1] + b[p][2] * x[3 * c + 2];
                    }
                }
                yr.copy_from_slice(&acc);
            }
        });
    }

    pub fn storage_bytes(&self) -> u64 {
        (self.col_idx.len() * 40 + (self.n_rows + 1) * std::mem::size_of::<usize>()) as u64
    }
}
