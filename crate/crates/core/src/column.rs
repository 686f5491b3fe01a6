//! One-dimensional soil column under vertically incident waves.
//!
//! Quadratic three-node elements with two Gauss points; each Gauss point is
//! a full multi-spring evaluation point driven by the strain components a
//! laterally uniform displacement field can produce (`e33`, `g23`, `g31`).
//! The same integrator and Rayleigh update as the 3D solver are used, so a
//! flat 3D model reproduces the column. The column also serves as the
//! free-field reference for the lateral boundaries of the 3D model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constitutive::{
    element_damping, update_eval_point, MaterialParams, SpringDirectionTable, SpringState, TangentMatrix,
    SPRINGS_PER_POINT,
};
use crate::error::{Error, Result};
use crate::mesh::Column1D;
use crate::timestep::{NewmarkCoeffs, RayleighCoeffs};

const GAUSS: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// Lumped-mass fractions of a quadratic element. These are the per-level
/// sums of the tetrahedral lumped mass over one lattice cell, so the column
/// carries the same nodal inertia as a laterally uniform 3D slice.
pub const MASS_FRACTIONS: [f64; 3] = [41.0 / 162.0, 80.0 / 162.0, 41.0 / 162.0];

/// Voigt index of the stress component acting on the x, y, z displacement.
const VOIGT_OF: [usize; 3] = [5, 4, 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnElement {
    /// Top, middle and bottom node.
    pub nodes: [usize; 3],
    pub z_top: f64,
    pub h: f64,
    pub material: usize,
}

/// Discretized column with unit cross-section.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnModel {
    /// Node elevations, surface first.
    pub z: Vec<f64>,
    pub elements: Vec<ColumnElement>,
    pub materials: Vec<MaterialParams>,
    /// Nodal mass per unit area.
    pub mass: Vec<f64>,
    /// Base dashpot per unit area (`rho Vs`, `rho Vs`, `rho Vp`).
    pub base_dashpot: [f64; 3],
}

fn shape(xi: f64) -> [f64; 3] {
    [0.5 * xi * (xi - 1.0), 1.0 - xi * xi, 0.5 * xi * (xi + 1.0)]
}

fn dshape(xi: f64) -> [f64; 3] {
    [xi - 0.5, -2.0 * xi, xi + 0.5]
}

impl ColumnModel {
    pub fn new(col: &Column1D) -> Result<Self> {
        if col.layers.is_empty() || !(col.element_height > 0.0) {
            return Err(Error::invalid(
                "column needs at least one layer and a positive element height",
            ));
        }
        for m in &col.materials {
            m.validate()?;
        }
        let mut z = vec![0.0];
        let mut elements = Vec::new();
        let mut top = 0.0;
        for layer in &col.layers {
            if layer.material >= col.materials.len() {
                return Err(Error::invalid(format!(
                    "layer material {} is undefined",
                    layer.material
                )));
            }
            let n = ((layer.thickness / col.element_height) - 1e-9).ceil().max(1.0) as usize;
            let h = layer.thickness / n as f64;
            for k in 0..n {
                let z_top = top - k as f64 * h;
                let base = z.len() - 1;
                z.push(z_top - 0.5 * h);
                z.push(z_top - h);
                elements.push(ColumnElement {
                    nodes: [base, base + 1, base + 2],
                    z_top,
                    h,
                    material: layer.material,
                });
            }
            top -= layer.thickness;
        }
        let mut mass = vec![0.0; z.len()];
        for e in &elements {
            let rho = col.materials[e.material].rho;
            for (a, &n) in e.nodes.iter().enumerate() {
                mass[n] += MASS_FRACTIONS[a] * rho * e.h;
            }
        }
        let base = &col.materials[elements.last().expect("non-empty").material];
        let base_dashpot = [base.rho * base.vs(), base.rho * base.vs(), base.rho * base.vp()];
        Ok(ColumnModel {
            z,
            elements,
            materials: col.materials.clone(),
            mass,
            base_dashpot,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.z.len()
    }

    pub fn depth(&self) -> f64 {
        -self.z[self.z.len() - 1]
    }

    /// Element and local coordinate of elevation `z` (clamped into the column).
    pub fn locate(&self, z: f64) -> (usize, f64) {
        let z = z.clamp(-self.depth(), 0.0);
        let e = self
            .elements
            .partition_point(|el| el.z_top - el.h > z)
            .min(self.elements.len() - 1);
        let el = &self.elements[e];
        let xi = (2.0 * (el.z_top - z) / el.h - 1.0).clamp(-1.0, 1.0);
        (e, xi)
    }

    /// Strain-displacement rows for the (x, y, z) components at a Gauss point.
    fn dndz(el: &ColumnElement, xi: f64) -> [f64; 3] {
        dshape(xi).map(|d| -2.0 * d / el.h)
    }
}

/// Time-stepping state of a column.
#[derive(Clone, Debug)]
pub struct ColumnSolver {
    pub model: ColumnModel,
    nm: NewmarkCoeffs,
    band: [f64; 2],
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    q: Vec<f64>,
    springs: Vec<SpringState>,
    tangents: Vec<[TangentMatrix; 2]>,
    stress: Vec<[[f64; 6]; 2]>,
    pub rayleigh: RayleighCoeffs,
    pub step: usize,
}

impl ColumnSolver {
    pub fn new(col: &Column1D, dt: f64, band: [f64; 2]) -> Result<Self> {
        let model = ColumnModel::new(col)?;
        let n = 3 * model.n_nodes();
        let ne = model.elements.len();
        let tangents = model
            .elements
            .iter()
            .map(|e| [TangentMatrix::elastic(&model.materials[e.material]); 2])
            .collect();
        Ok(ColumnSolver {
            nm: NewmarkCoeffs::new(dt)?,
            band,
            u: vec![0.0; n],
            v: vec![0.0; n],
            a: vec![0.0; n],
            q: vec![0.0; n],
            springs: vec![SpringState::VIRGIN; ne * 2 * SPRINGS_PER_POINT],
            tangents,
            stress: vec![[[0.0; 6]; 2]; ne],
            rayleigh: RayleighCoeffs::default(),
            step: 0,
            model,
        })
    }

    /// Length-weighted mean damping ratio over the nonlinear elements.
    pub fn mean_damping(&self) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (e, el) in self.model.elements.iter().enumerate() {
            let mat = &self.model.materials[el.material];
            if mat.linear {
                continue;
            }
            let sp = &self.springs[e * 2 * SPRINGS_PER_POINT..(e + 1) * 2 * SPRINGS_PER_POINT];
            num += el.h * element_damping(sp, mat);
            den += el.h;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    fn stiffness_matrix(&self) -> DMatrix<f64> {
        let n = 3 * self.model.n_nodes();
        let mut k = DMatrix::zeros(n, n);
        for (e, el) in self.model.elements.iter().enumerate() {
            for (g, &xi) in GAUSS.iter().enumerate() {
                let dn = ColumnModel::dndz(el, xi);
                let d = &self.tangents[e][g].0;
                let w = 0.5 * el.h;
                for a in 0..3 {
                    for b in 0..3 {
                        let s = w * dn[a] * dn[b];
                        for c in 0..3 {
                            for dd in 0..3 {
                                k[(3 * el.nodes[a] + c, 3 * el.nodes[b] + dd)] +=
                                    s * d[VOIGT_OF[c]][VOIGT_OF[dd]];
                            }
                        }
                    }
                }
            }
        }
        k
    }

    /// Advances one step with incident velocity `v_inc` at the base.
    pub fn step(&mut self, v_inc: [f64; 3]) -> Result<()> {
        self.rayleigh = RayleighCoeffs::fit(self.mean_damping(), self.band)?;
        let sys = self.nm.system(&self.rayleigh);
        let n = 3 * self.model.n_nodes();
        let base = self.model.n_nodes() - 1;
        let k = self.stiffness_matrix();
        let vvec = DVector::from_column_slice(&self.v);
        let kv = &k * &vvec;
        let mut rhs = DVector::zeros(n);
        for i in 0..n {
            let m = self.model.mass[i / 3];
            let c = if i / 3 == base {
                self.model.base_dashpot[i % 3]
            } else {
                0.0
            };
            let f = if i / 3 == base {
                2.0 * c * v_inc[i % 3]
            } else {
                0.0
            };
            rhs[i] = f - self.q[i]
                + self.rayleigh.alpha * m * self.v[i]
                + self.rayleigh.beta * kv[i]
                + c * self.v[i]
                + m * (self.a[i] + self.nm.c_vel * self.v[i]);
        }
        let mut a = k * sys.a_k;
        for i in 0..n {
            a[(i, i)] += sys.a_m * self.model.mass[i / 3];
        }
        for c in 0..3 {
            a[(3 * base + c, 3 * base + c)] += sys.a_d * self.model.base_dashpot[c];
        }
        let du = a
            .cholesky()
            .ok_or(Error::Indefinite {
                iteration: 0,
                curvature: f64::NAN,
            })?
            .solve(&rhs);
        if du.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: self.step });
        }
        let dq = self.update_constitutive(du.as_slice());
        for i in 0..n {
            let v_old = self.v[i];
            self.u[i] += du[i];
            self.v[i] = -v_old + self.nm.c_damp * du[i];
            self.a[i] = -self.a[i] - self.nm.c_vel * v_old + self.nm.c_mass * du[i];
            self.q[i] += dq[i];
        }
        self.step += 1;
        Ok(())
    }

    fn update_constitutive(&mut self, du: &[f64]) -> Vec<f64> {
        let tbl = SpringDirectionTable::standard();
        let mut dq = vec![0.0; du.len()];
        for (e, el) in self.model.elements.iter().enumerate() {
            let mat = &self.model.materials[el.material];
            for (g, &xi) in GAUSS.iter().enumerate() {
                let dn = ColumnModel::dndz(el, xi);
                let mut de = [0.0; 6];
                for a in 0..3 {
                    for c in 0..3 {
                        de[VOIGT_OF[c]] += dn[a] * du[3 * el.nodes[a] + c];
                    }
                }
                let off = (2 * e + g) * SPRINGS_PER_POINT;
                let (d, ds) =
                    update_eval_point(&mut self.springs[off..off + SPRINGS_PER_POINT], &de, mat, tbl);
                self.tangents[e][g] = d;
                for (s, v) in self.stress[e][g].iter_mut().zip(&ds) {
                    *s += v;
                }
                let w = 0.5 * el.h;
                for a in 0..3 {
                    for c in 0..3 {
                        dq[3 * el.nodes[a] + c] += w * dn[a] * ds[VOIGT_OF[c]];
                    }
                }
            }
        }
        dq
    }

    fn interpolate(&self, field: &[f64], z: f64) -> [f64; 3] {
        let (e, xi) = self.model.locate(z);
        let nodes = self.model.elements[e].nodes;
        let n = shape(xi);
        let mut out = [0.0; 3];
        for a in 0..3 {
            for c in 0..3 {
                out[c] += n[a] * field[3 * nodes[a] + c];
            }
        }
        out
    }

    pub fn velocity_at(&self, z: f64) -> [f64; 3] {
        self.interpolate(&self.v, z)
    }

    pub fn displacement_at(&self, z: f64) -> [f64; 3] {
        self.interpolate(&self.u, z)
    }

    /// Stress at elevation `z`, linear through the two Gauss points of the
    /// containing element.
    pub fn stress_at(&self, z: f64) -> [f64; 6] {
        let (e, xi) = self.model.locate(z);
        let [s0, s1] = &self.stress[e];
        let t = (xi - GAUSS[0]) / (GAUSS[1] - GAUSS[0]);
        let mut out = [0.0; 6];
        for i in 0..6 {
            out[i] = s0[i] + t * (s1[i] - s0[i]);
        }
        out
    }

    pub fn surface_velocity(&self) -> [f64; 3] {
        [self.v[0], self.v[1], self.v[2]]
    }
}

/// Result of a stand-alone column run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnResult {
    pub dt: f64,
    pub surface_velocity: Vec<[f64; 3]>,
    pub surface_displacement: Vec<[f64; 3]>,
    /// Node elevations and peak absolute velocity per component.
    pub max_velocity_profile: Vec<(f64, [f64; 3])>,
}

/// Runs a column through an incident velocity history sampled at `dt`.
pub fn run_column(col: &Column1D, wave: &[[f64; 3]], dt: f64, band: [f64; 2]) -> Result<ColumnResult> {
    let mut s = ColumnSolver::new(col, dt, band)?;
    let mut surface_velocity = Vec::with_capacity(wave.len());
    let mut surface_displacement = Vec::with_capacity(wave.len());
    let mut peak = vec![[0.0f64; 3]; s.model.n_nodes()];
    for &w in wave {
        let step = s.step;
        s.step(w).map_err(|e| Error::StepFailed {
            step,
            source: Box::new(e),
        })?;
        surface_velocity.push(s.surface_velocity());
        surface_displacement.push([s.u[0], s.u[1], s.u[2]]);
        for (p, v) in peak.iter_mut().zip(s.v.chunks_exact(3)) {
            for c in 0..3 {
                p[c] = p[c].max(v[c].abs());
            }
        }
    }
    let max_velocity_profile = s.model.z.iter().copied().zip(peak).collect();
    Ok(ColumnResult {
        dt,
        surface_velocity,
        surface_displacement,
        max_velocity_profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::ColumnLayer;

    fn uniform(h: f64, layer_mat: MaterialParams, base: MaterialParams, eh: f64) -> Column1D {
        Column1D {
            x: 0.0,
            y: 0.0,
            layers: vec![
                ColumnLayer {
                    thickness: h,
                    material: 0,
                },
                ColumnLayer {
                    thickness: eh,
                    material: 1,
                },
            ],
            materials: vec![layer_mat, base],
            element_height: eh,
        }
    }

    #[test]
    fn mass_sums_to_column_mass() {
        let soil = MaterialParams::soft_soil();
        let rock = MaterialParams::bedrock();
        let col = uniform(10.0, soil, rock, 2.5);
        let m = ColumnModel::new(&col).unwrap();
        let total: f64 = m.mass.iter().sum();
        assert!((total - (10.0 * soil.rho + 2.5 * rock.rho)).abs() < 1e-9 * total);
        assert_eq!(m.elements.len(), 5);
        assert_eq!(m.n_nodes(), 11);
    }

    #[test]
    fn locate_round_trips_node_elevations() {
        let col = uniform(10.0, MaterialParams::soft_soil(), MaterialParams::bedrock(), 2.0);
        let m = ColumnModel::new(&col).unwrap();
        for (e, el) in m.elements.iter().enumerate() {
            let (f, xi) = m.locate(el.z_top - 0.25 * el.h);
            assert_eq!(f, e);
            assert!((xi + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rigid_linear_column_doubles_incident_motion() {
        let stiff = MaterialParams::from_velocities(2000.0, 5000.0, 0.3, 1e-3, 0.0, true);
        let col = uniform(5.0, stiff, stiff, 5.0);
        let dt = 0.005;
        let wave: Vec<[f64; 3]> = (0..400)
            .map(|k| {
                [
                    (2.0 * std::f64::consts::PI * 0.5 * k as f64 * dt).sin() * 0.1,
                    0.0,
                    0.0,
                ]
            })
            .collect();
        let r = run_column(&col, &wave, dt, [0.2, 2.5]).unwrap();
        for (k, v) in r.surface_velocity.iter().enumerate().skip(10) {
            assert!(
                (v[0] - 2.0 * wave[k][0]).abs() < 5e-3,
                "step {k}: {} vs {}",
                v[0],
                2.0 * wave[k][0]
            );
        }
    }
}
