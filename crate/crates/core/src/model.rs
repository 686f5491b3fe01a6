//! Assembled 3D model: element kernels, lumped mass, boundary dashpots and
//! the free-field columns that drive the lateral boundaries.

use std::collections::HashMap;

use crate::column::ColumnSolver;
use crate::constitutive::{
    element_damping, update_eval_point, MaterialParams, SpringDirectionTable, SpringState, TangentMatrix,
    EVAL_POINTS, SPRINGS_PER_POINT,
};
use crate::element::{dashpot_coefficients, element_tangents, ElementKernel, ElementTangents, DOFS};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryConditionSpec, Column1D, Mesh};
use crate::par::Exec;
use crate::sparse::{BlockCrsMatrix, CoarseSpace, Coloring};

/// Free-field dashpot drive of one lateral-boundary node.
#[derive(Clone, Debug, PartialEq)]
pub struct SideNodeLoad {
    pub node: u32,
    pub column: u32,
    pub z: f64,
    /// Dashpot coefficient per axis.
    pub c: [f64; 3],
}

/// Free-field traction on one lateral-boundary face, integrated against
/// the quadratic face shape functions.
#[derive(Clone, Debug, PartialEq)]
pub struct SideFaceLoad {
    pub column: u32,
    pub nodes: [u32; 6],
    pub normal: [f64; 3],
    /// Elevation of each quadrature point and `w A N_a` there.
    pub points: Vec<(f64, [f64; 6])>,
}

/// Six-point triangle rule exact for quartics: barycentric point, weight.
const TRI_RULE: [([f64; 3], f64); 6] = [
    (
        [
            0.108_103_018_168_070,
            0.445_948_490_915_965,
            0.445_948_490_915_965,
        ],
        0.223_381_589_678_011,
    ),
    (
        [
            0.445_948_490_915_965,
            0.108_103_018_168_070,
            0.445_948_490_915_965,
        ],
        0.223_381_589_678_011,
    ),
    (
        [
            0.445_948_490_915_965,
            0.445_948_490_915_965,
            0.108_103_018_168_070,
        ],
        0.223_381_589_678_011,
    ),
    (
        [
            0.816_847_572_980_459,
            0.091_576_213_509_771,
            0.091_576_213_509_771,
        ],
        0.109_951_743_655_322,
    ),
    (
        [
            0.091_576_213_509_771,
            0.816_847_572_980_459,
            0.091_576_213_509_771,
        ],
        0.109_951_743_655_322,
    ),
    (
        [
            0.091_576_213_509_771,
            0.091_576_213_509_771,
            0.816_847_572_980_459,
        ],
        0.109_951_743_655_322,
    ),
];

/// Quadratic triangle shape functions; corners, then midsides of
/// (0,1), (1,2), (2,0).
fn face_shape(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

/// Index of the free-field column below `(x, y)`, adding it when new.
fn column_slot(
    mesh: &Mesh,
    columns: &mut Vec<Column1D>,
    index: &mut HashMap<Vec<(u64, usize)>, usize>,
    x: f64,
    y: f64,
) -> Result<u32> {
    let col = mesh.extract_column(x, y)?;
    let next = index.len();
    let ci = *index.entry(col.signature()).or_insert(next);
    if ci == columns.len() {
        columns.push(col);
    }
    Ok(ci as u32)
}

pub struct Model {
    pub mesh: Mesh,
    pub bc: BoundaryConditionSpec,
    pub kernels: Vec<ElementKernel>,
    pub coloring: Coloring,
    /// Lumped mass per DOF.
    pub mass: Vec<f64>,
    /// Boundary dashpot per DOF.
    pub dashpot: Vec<f64>,
    /// Bottom nodes and their dashpots; the incident wave enters as `2 c v_inc`.
    pub bottom_input: Vec<(u32, [f64; 3])>,
    pub side_loads: Vec<SideNodeLoad>,
    pub side_faces: Vec<SideFaceLoad>,
    /// Distinct free-field columns referenced by the side loads.
    pub columns: Vec<Column1D>,
    pub coarse: CoarseSpace,
    pub pattern: BlockCrsMatrix,
    /// Nonlinear flag and volume per element.
    pub nonlinear: Vec<bool>,
    pub volumes: Vec<f64>,
}

impl Model {
    pub fn new(mesh: Mesh, bc: BoundaryConditionSpec, exec: Exec) -> Result<Model> {
        mesh.validate()?;
        let ne = mesh.n_elements();
        let kernels = exec
            .map(ne, |e| ElementKernel::from_mesh(&mesh, e))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let coloring = Coloring::greedy(mesh.n_nodes(), &mesh.tets)?;
        let n = mesh.n_dofs();
        let mut mass = vec![0.0; n];
        for (e, k) in kernels.iter().enumerate() {
            let m = k.lumped_mass(mesh.element_material(e).rho);
            for (a, &node) in mesh.tets[e].iter().enumerate() {
                for c in 0..3 {
                    mass[3 * node as usize + c] += m[a];
                }
            }
        }
        let mut dashpot = vec![0.0; n];
        let mut bottom = vec![None::<[f64; 3]>; mesh.n_nodes()];
        let mut side = vec![None::<usize>; mesh.n_nodes()];
        let mut side_loads: Vec<SideNodeLoad> = Vec::new();
        let mut side_faces: Vec<SideFaceLoad> = Vec::new();
        let mut columns: Vec<Column1D> = Vec::new();
        let mut col_index: HashMap<Vec<(u64, usize)>, usize> = HashMap::new();
        for face in mesh.boundary_faces() {
            let is_side = face.plane.is_side();
            if (is_side && !bc.absorbing_sides) || (!is_side && !bc.absorbing_bottom) {
                continue;
            }
            let mat = mesh.element_material(face.element as usize);
            let coef = dashpot_coefficients(&face, mat)?;
            for (a, &node) in face.nodes.iter().enumerate() {
                let node = node as usize;
                for c in 0..3 {
                    dashpot[3 * node + c] += coef[a][c];
                }
                if !is_side {
                    let b = bottom[node].get_or_insert([0.0; 3]);
                    for c in 0..3 {
                        b[c] += coef[a][c];
                    }
                    continue;
                }
                if !bc.free_field {
                    continue;
                }
                let slot = match side[node] {
                    Some(s) => s,
                    None => {
                        let p = mesh.nodes[node];
                        let column = column_slot(&mesh, &mut columns, &mut col_index, p[0], p[1])?;
                        side_loads.push(SideNodeLoad {
                            node: node as u32,
                            column,
                            z: p[2],
                            c: [0.0; 3],
                        });
                        side[node] = Some(side_loads.len() - 1);
                        side_loads.len() - 1
                    }
                };
                for c in 0..3 {
                    side_loads[slot].c[c] += coef[a][c];
                }
            }
            if is_side && bc.free_field {
                let corner = |k: usize| mesh.nodes[face.nodes[k] as usize];
                let (p0, p1, p2) = (corner(0), corner(1), corner(2));
                let cx = (p0[0] + p1[0] + p2[0]) / 3.0;
                let cy = (p0[1] + p1[1] + p2[1]) / 3.0;
                let column = column_slot(&mesh, &mut columns, &mut col_index, cx, cy)?;
                let points = TRI_RULE
                    .iter()
                    .map(|&(l, w)| {
                        let z = l[0] * p0[2] + l[1] * p1[2] + l[2] * p2[2];
                        (z, face_shape(l).map(|n| n * w * face.area))
                    })
                    .collect();
                side_faces.push(SideFaceLoad {
                    column,
                    nodes: face.nodes,
                    normal: face.plane.normal(),
                    points,
                });
            }
        }
        let bottom_input = bottom
            .into_iter()
            .enumerate()
            .filter_map(|(i, b)| b.map(|b| (i as u32, b)))
            .collect();
        let coarse = CoarseSpace::new(mesh.n_nodes(), &mesh.tets)?;
        let pattern = BlockCrsMatrix::pattern(mesh.n_nodes(), &mesh.tets)?;
        let nonlinear = (0..ne).map(|e| !mesh.element_material(e).linear).collect();
        let volumes = kernels.iter().map(|k| k.volume).collect();
        Ok(Model {
            mesh,
            bc,
            kernels,
            coloring,
            mass,
            dashpot,
            bottom_input,
            side_loads,
            side_faces,
            columns,
            coarse,
            pattern,
            nonlinear,
            volumes,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.n_elements()
    }

    pub fn nodes(&self) -> &[[u32; 10]] {
        &self.mesh.tets
    }

    pub fn material(&self, e: usize) -> &MaterialParams {
        self.mesh.element_material(e)
    }

    /// Volume-weighted mean of the element damping ratios over nonlinear
    /// elements, summed in element order.
    pub fn mean_damping(&self, element_h: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for e in 0..self.n_elements() {
            if self.nonlinear[e] {
                num += self.volumes[e] * element_h[e];
                den += self.volumes[e];
            }
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    /// Initial tangents (elastic).
    pub fn initial_tangents(&self) -> Vec<ElementTangents> {
        (0..self.n_elements())
            .map(|e| crate::element::elastic_tangents(self.material(e)))
            .collect()
    }

    /// External force at one step: bottom input plus free-field side loads.
    pub fn external_force(&self, v_inc: [f64; 3], ff: Option<&FreeField>, f: &mut [f64]) {
        f.fill(0.0);
        for (node, c) in &self.bottom_input {
            for k in 0..3 {
                f[3 * *node as usize + k] += 2.0 * c[k] * v_inc[k];
            }
        }
        let Some(ff) = ff else { return };
        for ld in &self.side_loads {
            let v = ff.solvers[ld.column as usize].velocity_at(ld.z);
            for k in 0..3 {
                f[3 * ld.node as usize + k] += ld.c[k] * v[k];
            }
        }
        for fl in &self.side_faces {
            let col = &ff.solvers[fl.column as usize];
            let n = fl.normal;
            for (z, wn) in &fl.points {
                let s = col.stress_at(*z);
                // traction sigma . n, Voigt (11, 22, 33, 12, 23, 31)
                let t = [
                    s[0] * n[0] + s[3] * n[1] + s[5] * n[2],
                    s[3] * n[0] + s[1] * n[1] + s[4] * n[2],
                    s[5] * n[0] + s[4] * n[1] + s[2] * n[2],
                ];
                for (a, &node) in fl.nodes.iter().enumerate() {
                    for k in 0..3 {
                        f[3 * node as usize + k] += wn[a] * t[k];
                    }
                }
            }
        }
    }

    /// Free-field columns for a run with time step `dt`, or `None` when the
    /// sides are not driven.
    pub fn free_field(&self, dt: f64, band: [f64; 2]) -> Result<Option<FreeField>> {
        if self.side_loads.is_empty() {
            return Ok(None);
        }
        let solvers = self
            .columns
            .iter()
            .map(|c| ColumnSolver::new(c, dt, band))
            .collect::<Result<_>>()?;
        Ok(Some(FreeField { solvers }))
    }
}

/// Lock-stepped free-field columns.
#[derive(Clone, Debug)]
pub struct FreeField {
    pub solvers: Vec<ColumnSolver>,
}

impl FreeField {
    pub fn step(&mut self, v_inc: [f64; 3], exec: Exec) -> Result<()> {
        let mut slots: Vec<(&mut ColumnSolver, Result<()>)> =
            self.solvers.iter_mut().map(|s| (s, Ok(()))).collect();
        exec.for_each_mut(&mut slots, |_, (s, r)| *r = s.step(v_inc));
        slots.into_iter().try_for_each(|(_, r)| r)
    }
}

/// Result of advancing one element's evaluation points.
#[derive(Clone, Debug)]
pub struct ElementUpdate {
    pub tangents: ElementTangents,
    /// Internal-force increment in element DOF order.
    pub dq: [f64; DOFS],
    pub damping: f64,
}

/// Advances the 600 springs of an element by the displacement increment
/// `du` and returns the new tangents and internal-force increment. The
/// centre quadrature point uses the mean tangent and mean stress increment
/// of the four evaluation points.
pub fn update_element(
    kernel: &ElementKernel,
    springs: &mut [SpringState],
    du: &[f64; DOFS],
    mat: &MaterialParams,
) -> ElementUpdate {
    let tbl = SpringDirectionTable::standard();
    let mut d = [TangentMatrix::default(); EVAL_POINTS];
    let mut ds_mean = [0.0; 6];
    let mut dq = [0.0; DOFS];
    for j in 0..EVAL_POINTS {
        let de = kernel.strain(j, du);
        let sp = &mut springs[j * SPRINGS_PER_POINT..(j + 1) * SPRINGS_PER_POINT];
        let (dj, ds) = update_eval_point(sp, &de, mat, tbl);
        d[j] = dj;
        kernel.add_bt(j, &ds, kernel.weights[j], &mut dq);
        for i in 0..6 {
            ds_mean[i] += 0.25 * ds[i];
        }
    }
    kernel.add_bt(4, &ds_mean, kernel.weights[4], &mut dq);
    ElementUpdate {
        tangents: element_tangents(&d),
        dq,
        damping: element_damping(springs, mat),
    }
}

/// Checks that a vector is finite, reporting the step otherwise.
pub fn check_finite(v: &[f64], step: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MeshConfig;

    fn model(nx: usize, nz: usize) -> Model {
        let cfg = MeshConfig::two_layer(40.0, 40.0, 20.0, nx, nx, nz, 10.0);
        Model::new(
            Mesh::generate(&cfg).unwrap(),
            BoundaryConditionSpec::default(),
            Exec::default(),
        )
        .unwrap()
    }

    #[test]
    fn mass_matches_total() {
        let m = model(2, 2);
        let total: f64 = m.mass.iter().step_by(3).sum();
        let exact = 40.0 * 40.0 * 10.0 * (1700.0 + 2000.0);
        assert!((total - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn flat_model_has_one_free_field_column() {
        let m = model(2, 2);
        assert_eq!(m.columns.len(), 1);
        assert!(!m.side_loads.is_empty());
    }

    #[test]
    fn bottom_dashpot_matches_impedance() {
        let m = model(2, 2);
        let rock = MaterialParams::bedrock();
        let sum: [f64; 3] = m.bottom_input.iter().fold([0.0; 3], |mut s, (_, c)| {
            for k in 0..3 {
                s[k] += c[k];
            }
            s
        });
        let area = 1600.0;
        assert!((sum[0] - rock.rho * rock.vs() * area).abs() < 1e-9 * sum[0]);
        assert!((sum[2] - rock.rho * rock.vp() * area).abs() < 1e-9 * sum[2]);
    }

    #[test]
    fn side_tractions_balance_on_opposite_faces() {
        let m = model(2, 2);
        let mut net = [0.0; 3];
        for fl in &m.side_faces {
            let area: f64 = fl.points.iter().map(|(_, w)| w.iter().sum::<f64>()).sum();
            for k in 0..3 {
                net[k] += area * fl.normal[k];
            }
        }
        for v in net {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn face_rule_integrates_shape_functions() {
        // integral of each quadratic shape function over a unit-area triangle
        let mut int = [0.0; 6];
        for (l, w) in TRI_RULE {
            for (i, n) in face_shape(l).iter().enumerate() {
                int[i] += w * n;
            }
        }
        for (i, v) in int.iter().enumerate() {
            let exact = if i < 3 { 0.0 } else { 1.0 / 3.0 };
            assert!((v - exact).abs() < 1e-12, "{i}: {v}");
        }
    }
}
