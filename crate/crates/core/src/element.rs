//! Ten-node tetrahedral element kernels.
//!
//! Local DOF order is node-major: DOF `3a + c` is component `c` of node `a`.
//! Elements are straight-sided, so barycentric gradients are constant and
//! shape-function gradients are linear in the barycentric coordinates.

use crate::constitutive::{MaterialParams, TangentMatrix};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryFace, Mesh, TET_EDGES};

pub const NODES: usize = 10;
pub const DOFS: usize = 30;
pub const QUAD_POINTS: usize = 5;

/// Element tangents at the five quadrature points; the last one is the
/// centre point.
pub type ElementTangents = [TangentMatrix; QUAD_POINTS];

/// Five-point degree-3 rule on the tetrahedron: four points at
/// barycentric `(1/2, 1/6, 1/6, 1/6)` and permutations, then the centroid.
#[derive(Clone, Copy, Debug)]
pub struct QuadratureRule5 {
    pub points: [[f64; 4]; QUAD_POINTS],
    /// Weights as fractions of the element volume.
    pub weights: [f64; QUAD_POINTS],
}

impl QuadratureRule5 {
    pub const fn new() -> Self {
        let a = 0.5;
        let b = 1.0 / 6.0;
        QuadratureRule5 {
            points: [
                [a, b, b, b],
                [b, a, b, b],
                [b, b, a, b],
                [b, b, b, a],
                [0.25, 0.25, 0.25, 0.25],
            ],
            weights: [0.45, 0.45, 0.45, 0.45, -0.8],
        }
    }
}

impl Default for QuadratureRule5 {
    fn default() -> Self {
        Self::new()
    }
}

pub const RULE: QuadratureRule5 = QuadratureRule5::new();

/// Quadratic shape function values at barycentric coordinates `l`.
pub fn shape_values(l: &[f64; 4]) -> [f64; NODES] {
    let mut n = [0.0; NODES];
    for a in 0..4 {
        n[a] = l[a] * (2.0 * l[a] - 1.0);
    }
    for (m, &(a, b)) in TET_EDGES.iter().enumerate() {
        n[4 + m] = 4.0 * l[a] * l[b];
    }
    n
}

/// Shape-function gradients for constant barycentric gradients `gl`.
pub fn shape_gradients(l: &[f64; 4], gl: &[[f64; 3]; 4]) -> [[f64; 3]; NODES] {
    let mut g = [[0.0; 3]; NODES];
    for a in 0..4 {
        let s = 4.0 * l[a] - 1.0;
        g[a] = [s * gl[a][0], s * gl[a][1], s * gl[a][2]];
    }
    for (m, &(a, b)) in TET_EDGES.iter().enumerate() {
        for c in 0..3 {
            g[4 + m][c] = 4.0 * (l[a] * gl[b][c] + l[b] * gl[a][c]);
        }
    }
    g
}

/// Precomputed geometry of one element.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementKernel {
    pub nodes: [u32; NODES],
    pub volume: f64,
    /// Quadrature weights (m^3), summing to the volume.
    pub weights: [f64; QUAD_POINTS],
    /// Shape-function gradients at each quadrature point.
    pub grads: [[[f64; 3]; NODES]; QUAD_POINTS],
    /// Gradients of the barycentric coordinates.
    pub bary: [[f64; 3]; 4],
}

impl ElementKernel {
    pub fn new(coords: &[[f64; 3]; NODES], nodes: [u32; NODES]) -> Result<Self> {
        let p0 = coords[0];
        let col = |k: usize| [coords[k][0] - p0[0], coords[k][1] - p0[1], coords[k][2] - p0[2]];
        let (a, b, c) = (col(1), col(2), col(3));
        let det = a[0] * (b[1] * c[2] - b[2] * c[1]) - b[0] * (a[1] * c[2] - a[2] * c[1])
            + c[0] * (a[1] * b[2] - a[2] * b[1]);
        let volume = det / 6.0;
        if !(volume > 0.0) || !volume.is_finite() {
            return Err(Error::InvertedElement {
                element: usize::MAX,
                volume,
            });
        }
        // rows of the inverse of [a b c] are the gradients of L1, L2, L3
        let inv = |u: [f64; 3], v: [f64; 3]| {
            [
                (u[1] * v[2] - u[2] * v[1]) / det,
                (u[2] * v[0] - u[0] * v[2]) / det,
                (u[0] * v[1] - u[1] * v[0]) / det,
            ]
        };
        let g1 = inv(b, c);
        let g2 = inv(c, a);
        let g3 = inv(a, b);
        let g0 = [
            -(g1[0] + g2[0] + g3[0]),
            -(g1[1] + g2[1] + g3[1]),
            -(g1[2] + g2[2] + g3[2]),
        ];
        let gl = [g0, g1, g2, g3];
        let mut grads = [[[0.0; 3]; NODES]; QUAD_POINTS];
        let mut weights = [0.0; QUAD_POINTS];
        for j in 0..QUAD_POINTS {
            grads[j] = shape_gradients(&RULE.points[j], &gl);
            weights[j] = RULE.weights[j] * volume;
        }
        Ok(ElementKernel {
            nodes,
            volume,
            weights,
            grads,
            bary: gl,
        })
    }

    pub fn from_mesh(mesh: &Mesh, e: usize) -> Result<Self> {
        let t = mesh.tets[e];
        let coords = t.map(|n| mesh.nodes[n as usize]);
        Self::new(&coords, t).map_err(|err| match err {
            Error::InvertedElement { volume, .. } => Error::InvertedElement { element: e, volume },
            other => other,
        })
    }

    /// Engineering strain `B_j u` at quadrature point `j`.
    #[inline]
    pub fn strain(&self, j: usize, u: &[f64; DOFS]) -> [f64; 6] {
        let mut e = [0.0; 6];
        for (a, g) in self.grads[j].iter().enumerate() {
            let (ux, uy, uz) = (u[3 * a], u[3 * a + 1], u[3 * a + 2]);
            e[0] += g[0] * ux;
            e[1] += g[1] * uy;
            e[2] += g[2] * uz;
            e[3] += g[1] * ux + g[0] * uy;
            e[4] += g[2] * uy + g[1] * uz;
            e[5] += g[0] * uz + g[2] * ux;
        }
        e
    }

    /// Adds `scale * B_j^T s` to `f`.
    #[inline]
    pub fn add_bt(&self, j: usize, s: &[f64; 6], scale: f64, f: &mut [f64; DOFS]) {
        for (a, g) in self.grads[j].iter().enumerate() {
            f[3 * a] += scale * (g[0] * s[0] + g[1] * s[3] + g[2] * s[5]);
            f[3 * a + 1] += scale * (g[1] * s[1] + g[0] * s[3] + g[2] * s[4]);
            f[3 * a + 2] += scale * (g[2] * s[2] + g[1] * s[4] + g[0] * s[5]);
        }
    }

    /// Explicit 6x30 strain-displacement matrix at point `j`.
    pub fn b_matrix(&self, j: usize) -> [[f64; DOFS]; 6] {
        let mut b = [[0.0; DOFS]; 6];
        for (a, g) in self.grads[j].iter().enumerate() {
            let c = 3 * a;
            b[0][c] = g[0];
            b[1][c + 1] = g[1];
            b[2][c + 2] = g[2];
            b[3][c] = g[1];
            b[3][c + 1] = g[0];
            b[4][c + 1] = g[2];
            b[4][c + 2] = g[1];
            b[5][c] = g[2];
            b[5][c + 2] = g[0];
        }
        b
    }

    /// 3x3 blocks `K_ab = sum_j w_j B_a^T D_j B_b`, indexed `10 a + b`.
    pub fn stiffness_blocks(&self, d: &ElementTangents) -> [[[f64; 3]; 3]; NODES * NODES] {
        let mut k = [[[0.0; 3]; 3]; NODES * NODES];
        for j in 0..QUAD_POINTS {
            let dm = &d[j].0;
            let w = self.weights[j];
            let g = &self.grads[j];
            // columns of D B_b, stored as db[b][col][row]
            let mut db = [[[0.0; 6]; 3]; NODES];
            for b in 0..NODES {
                let [g0, g1, g2] = g[b];
                for r in 0..6 {
                    db[b][0][r] = g0 * dm[r][0] + g1 * dm[r][3] + g2 * dm[r][5];
                    db[b][1][r] = g1 * dm[r][1] + g0 * dm[r][3] + g2 * dm[r][4];
                    db[b][2][r] = g2 * dm[r][2] + g1 * dm[r][4] + g0 * dm[r][5];
                }
            }
            for a in 0..NODES {
                let [g0, g1, g2] = g[a];
                for b in a..NODES {
                    let blk = &mut k[a * NODES + b];
                    for c in 0..3 {
                        let col = &db[b][c];
                        blk[0][c] += w * (g0 * col[0] + g1 * col[3] + g2 * col[5]);
                        blk[1][c] += w * (g1 * col[1] + g0 * col[3] + g2 * col[4]);
                        blk[2][c] += w * (g2 * col[2] + g1 * col[4] + g0 * col[5]);
                    }
                }
            }
        }
        for a in 0..NODES {
            for b in 0..a {
                let t = k[b * NODES + a];
                k[a * NODES + b] = [
                    [t[0][0], t[1][0], t[2][0]],
                    [t[0][1], t[1][1], t[2][1]],
                    [t[0][2], t[1][2], t[2][2]],
                ];
            }
        }
        k
    }

    /// Diagonal 3x3 block of node `a`.
    pub fn diagonal_block(&self, d: &ElementTangents, a: usize) -> [[f64; 3]; 3] {
        let mut blk = [[0.0; 3]; 3];
        for j in 0..QUAD_POINTS {
            let dm = &d[j].0;
            let w = self.weights[j];
            let [g0, g1, g2] = self.grads[j][a];
            // rows of B_a^T as sparse (index, coefficient) lists
            let bt: [[(usize, f64); 3]; 3] = [
                [(0, g0), (3, g1), (5, g2)],
                [(1, g1), (3, g0), (4, g2)],
                [(2, g2), (4, g1), (5, g0)],
            ];
            for p in 0..3 {
                for q in 0..3 {
                    let mut acc = 0.0;
                    for &(r, cr) in &bt[p] {
                        for &(s, cs) in &bt[q] {
                            acc += cr * dm[r][s] * cs;
                        }
                    }
                    blk[p][q] += w * acc;
                }
            }
        }
        blk
    }

    /// Dense `K_e = sum_j w_j B_j^T D_j B_j`.
    pub fn stiffness(&self, d: &ElementTangents) -> Vec<[f64; DOFS]> {
        let blocks = self.stiffness_blocks(d);
        let mut k = vec![[0.0; DOFS]; DOFS];
        for a in 0..NODES {
            for b in 0..NODES {
                let blk = &blocks[a * NODES + b];
                for p in 0..3 {
                    for q in 0..3 {
                        k[3 * a + p][3 * b + q] = blk[p][q];
                    }
                }
            }
        }
        k
    }

    /// `K_e u` without forming `K_e`.
    #[inline]
    pub fn product(&self, d: &ElementTangents, u: &[f64; DOFS]) -> [f64; DOFS] {
        let mut f = [0.0; DOFS];
        for j in 0..QUAD_POINTS {
            let e = self.strain(j, u);
            let s = d[j].mul_vec(&e);
            self.add_bt(j, &s, self.weights[j], &mut f);
        }
        f
    }

    /// HRZ-lumped nodal masses: `rho V / 36` at corners, `4 rho V / 27` at midsides.
    pub fn lumped_mass(&self, rho: f64) -> [f64; NODES] {
        let mut m = [0.0; NODES];
        let mv = rho * self.volume;
        for (a, v) in m.iter_mut().enumerate() {
            *v = if a < 4 { mv / 36.0 } else { 4.0 * mv / 27.0 };
        }
        m
    }
}

/// Element tangents from the four evaluation points; the centre point uses
/// their average.
pub fn element_tangents(points: &[TangentMatrix; 4]) -> ElementTangents {
    [
        points[0],
        points[1],
        points[2],
        points[3],
        TangentMatrix::average(points),
    ]
}

pub fn elastic_tangents(mat: &MaterialParams) -> ElementTangents {
    [TangentMatrix::elastic(mat); QUAD_POINTS]
}

/// Tributary area fractions of a six-node triangle (HRZ): corners 1/19,
/// midsides 16/57.
pub const FACE_FRACTIONS: [f64; 6] = [
    1.0 / 19.0,
    1.0 / 19.0,
    1.0 / 19.0,
    16.0 / 57.0,
    16.0 / 57.0,
    16.0 / 57.0,
];

/// Lysmer-Kuhlemeyer dashpot coefficients of a face, per face node and
/// global axis: `rho Vp A` normal to the face, `rho Vs A` tangential.
pub fn dashpot_coefficients(face: &BoundaryFace, mat: &MaterialParams) -> Result<[[f64; 3]; 6]> {
    if !(face.area > 0.0) {
        return Err(Error::invalid(format!(
            "boundary face of element {} has zero area",
            face.element
        )));
    }
    let axis = face.plane.axis();
    let (cn, ct) = (mat.rho * mat.vp(), mat.rho * mat.vs());
    let mut out = [[0.0; 3]; 6];
    for (a, row) in out.iter_mut().enumerate() {
        let area = FACE_FRACTIONS[a] * face.area;
        for (c, v) in row.iter_mut().enumerate() {
            *v = area * if c == axis { cn } else { ct };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::FacePlane;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn rule_integrates_cubics_exactly() {
        // reference tet: L1 = x, L2 = y, L3 = z, volume 1/6
        for a in 0..=3 {
            for b in 0..=3 - a {
                for c in 0..=3 - a - b {
                    let exact = factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3);
                    let q: f64 = (0..QUAD_POINTS)
                        .map(|j| {
                            let l = RULE.points[j];
                            RULE.weights[j] / 6.0
                                * l[1].powi(a as i32)
                                * l[2].powi(b as i32)
                                * l[3].powi(c as i32)
                        })
                        .sum();
                    assert!((q - exact).abs() < 1e-13, "x^{a} y^{b} z^{c}: {q} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn shape_functions_partition_unity() {
        for p in RULE.points {
            let s: f64 = shape_values(&p).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dashpot_tangential_coefficient() {
        let face = BoundaryFace {
            nodes: [0; 6],
            element: 0,
            plane: FacePlane::Bottom,
            area: 1.0,
        };
        let c = dashpot_coefficients(&face, &MaterialParams::bedrock()).unwrap();
        let tangential: f64 = c.iter().map(|r| r[0]).sum();
        assert!((tangential - 8.0e5).abs() < 1e-6);
        let zero = BoundaryFace { area: 0.0, ..face };
        assert!(dashpot_coefficients(&zero, &MaterialParams::bedrock()).is_err());
    }

    #[test]
    fn face_fractions_sum_to_one() {
        assert!((FACE_FRACTIONS.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
