use serde::{Deserialize, Serialize};

use crate::element::{ElementKernel, ElementTangents, DOFS, NODES};
use crate::error::{Error, Result};
use crate::par::{AtomicF64Vec, DisjointSlice, Exec};

use super::LinearOperator;

/// Partition of the elements into groups that share no node.
#[derive(Clone, Debug, PartialEq)]
pub struct Coloring {
    pub groups: Vec<Vec<u32>>,
}

impl Coloring {
    /// Greedy colouring in element order.
    pub fn greedy(n_nodes: usize, elements: &[[u32; NODES]]) -> Result<Self> {
        let mut used = vec![0u128; n_nodes];
        let mut groups: Vec<Vec<u32>> = Vec::new();
        for (e, t) in elements.iter().enumerate() {
            let mask = t.iter().fold(0u128, |m, &n| m | used[n as usize]);
            let c = (!mask).trailing_zeros() as usize;
            if c >= 128 {
                return Err(Error::invalid("element colouring needs more than 128 colours"));
            }
            for &n in t {
                used[n as usize] |= 1u128 << c;
            }
            if groups.len() <= c {
                groups.resize_with(c + 1, Vec::new);
            }
            groups[c].push(e as u32);
        }
        Ok(Coloring { groups })
    }

    pub fn n_colors(&self) -> usize {
        self.groups.len()
    }

    pub fn n_elements(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

/// How element contributions are accumulated into nodal vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScatterMode {
    /// Colour by colour; bitwise reproducible.
    #[default]
    Colored,
    /// Atomic adds over all elements at once; summation order varies.
    Atomic,
}

/// Gathers the 30 local values of an element.
#[inline]
pub fn gather(nodes: &[u32; NODES], x: &[f64]) -> [f64; DOFS] {
    let mut u = [0.0; DOFS];
    for (a, &n) in nodes.iter().enumerate() {
        let n = 3 * n as usize;
        u[3 * a..3 * a + 3].copy_from_slice(&x[n..n + 3]);
    }
    u
}

/// Adds per-element vectors into a nodal vector.
///
/// `local(e)` returns the contribution of element `e`, already scaled.
pub fn scatter_elements<F>(
    coloring: &Coloring,
    nodes: &[[u32; NODES]],
    y: &mut [f64],
    mode: ScatterMode,
    exec: Exec,
    local: F,
) where
    F: Fn(usize) -> [f64; DOFS] + Sync + Send,
{
    match mode {
        ScatterMode::Colored => {
            let out = DisjointSlice::new(y);
            for group in &coloring.groups {
                exec.for_each(group.len(), |k| {
                    let e = group[k] as usize;
                    let f = local(e);
                    for (a, &n) in nodes[e].iter().enumerate() {
                        for c in 0..3 {
                            // SAFETY: elements of one colour share no node.
                            unsafe { *out.get(3 * n as usize + c) += f[3 * a + c] };
                        }
                    }
                });
            }
        }
        ScatterMode::Atomic => {
            let acc = AtomicF64Vec::zeros(y.len());
            exec.for_each(nodes.len(), |e| {
                let f = local(e);
                for (a, &n) in nodes[e].iter().enumerate() {
                    for c in 0..3 {
                        acc.add(3 * n as usize + c, f[3 * a + c]);
                    }
                }
            });
            for (yi, ai) in y.iter_mut().zip(acc.into_vec()) {
                *yi += ai;
            }
        }
    }
}

/// Matrix-free `A x = diag * x + a_k * sum_e K_e x_e`.
pub struct EbeOperator<'a> {
    pub n_dofs: usize,
    pub kernels: &'a [ElementKernel],
    pub nodes: &'a [[u32; NODES]],
    pub coloring: &'a Coloring,
    pub tangents: &'a [ElementTangents],
    /// Per-DOF diagonal (mass and dashpot terms); `None` for stiffness only.
    pub diag: Option<&'a [f64]>,
    pub a_k: f64,
    pub scatter: ScatterMode,
    pub exec: Exec,
}

impl EbeOperator<'_> {
    fn init(&self, x: &[f64], y: &mut [f64]) {
        match self.diag {
            Some(d) => {
                for ((yi, di), xi) in y.iter_mut().zip(d).zip(x) {
                    *yi = di * xi;
                }
            }
            None => y.fill(0.0),
        }
    }

    /// Diagonal 3x3 blocks of the operator, summed colour by colour.
    pub fn diagonal_blocks(&self) -> Vec<[[f64; 3]; 3]> {
        let n_nodes = self.len() / 3;
        let mut flat = vec![0.0; 9 * n_nodes];
        let out = DisjointSlice::new(&mut flat);
        for group in &self.coloring.groups {
            self.exec.for_each(group.len(), |k| {
                let e = group[k] as usize;
                for (a, &n) in self.nodes[e].iter().enumerate() {
                    let blk = self.kernels[e].diagonal_block(&self.tangents[e], a);
                    for p in 0..3 {
                        for q in 0..3 {
                            // SAFETY: elements of one colour share no node.
                            unsafe { *out.get(9 * n as usize + 3 * p + q) += self.a_k * blk[p][q] };
                        }
                    }
                }
            });
        }
        (0..n_nodes)
            .map(|n| {
                let mut b = [[0.0; 3]; 3];
                for p in 0..3 {
                    for q in 0..3 {
                        b[p][q] = flat[9 * n + 3 * p + q];
                    }
                    if let Some(d) = self.diag {
                        b[p][p] += d[3 * n + p];
                    }
                }
                b
            })
            .collect()
    }
}

impl LinearOperator for EbeOperator<'_> {
    fn len(&self) -> usize {
        self.n_dofs
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.init(x, y);
        scatter_elements(self.coloring, self.nodes, y, self.scatter, self.exec, |e| {
            let u = gather(&self.nodes[e], x);
            let mut f = self.kernels[e].product(&self.tangents[e], &u);
            for v in f.iter_mut() {
                *v *= self.a_k;
            }
            f
        });
    }
}

/// Applies two operators that share topology and geometry in one element
/// loop. Each result equals the corresponding single-operator product.
pub fn batched_apply(
    op1: &EbeOperator<'_>,
    op2: &EbeOperator<'_>,
    x1: &[f64],
    x2: &[f64],
    y1: &mut [f64],
    y2: &mut [f64],
) -> Result<()> {
    if !std::ptr::eq(op1.kernels, op2.kernels)
        || !std::ptr::eq(op1.nodes, op2.nodes)
        || !std::ptr::eq(op1.coloring, op2.coloring)
    {
        return Err(Error::invalid("batched operators must share mesh topology"));
    }
    if op1.tangents.len() != op2.tangents.len() || op1.scatter != op2.scatter || op1.n_dofs != op2.n_dofs {
        return Err(Error::invalid(
            "batched operators differ in element count or scatter mode",
        ));
    }
    op1.init(x1, y1);
    op2.init(x2, y2);
    let (nodes, exec) = (op1.nodes, op1.exec);
    let pair = |e: usize| {
        let kern = &op1.kernels[e];
        let u1 = gather(&nodes[e], x1);
        let u2 = gather(&nodes[e], x2);
        let mut f1 = kern.product(&op1.tangents[e], &u1);
        let mut f2 = kern.product(&op2.tangents[e], &u2);
        for v in f1.iter_mut() {
            *v *= op1.a_k;
        }
        for v in f2.iter_mut() {
            *v *= op2.a_k;
        }
        (f1, f2)
    };
    match op1.scatter {
        ScatterMode::Colored => {
            let o1 = DisjointSlice::new(y1);
            let o2 = DisjointSlice::new(y2);
            for group in &op1.coloring.groups {
                exec.for_each(group.len(), |k| {
                    let e = group[k] as usize;
                    let (f1, f2) = pair(e);
                    for (a, &n) in nodes[e].iter().enumerate() {
                        for c in 0..3 {
                            let i = 3 * n as usize + c;
                            // SAFETY: elements of one colour share no node.
                            unsafe {
                                *o1.get(i) += f1[3 * a + c];
                                *o2.get(i) += f2[3 * a + c];
                            }
                        }
                    }
                });
            }
        }
        ScatterMode::Atomic => {
            let a1 = AtomicF64Vec::zeros(y1.len());
            let a2 = AtomicF64Vec::zeros(y2.len());
            exec.for_each(nodes.len(), |e| {
                let (f1, f2) = pair(e);
                for (a, &n) in nodes[e].iter().enumerate() {
                    for c in 0..3 {
                        a1.add(3 * n as usize + c, f1[3 * a + c]);
                        a2.add(3 * n as usize + c, f2[3 * a + c]);
                    }
                }
            });
            for (yi, ai) in y1.iter_mut().zip(a1.into_vec()) {
                *yi += ai;
            }
            for (yi, ai) in y2.iter_mut().zip(a2.into_vec()) {
                *yi += ai;
            }
        }
    }
    Ok(())
}
