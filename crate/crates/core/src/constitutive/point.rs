use serde::{Deserialize, Serialize};

use super::directions::{SpringDirectionTable, PACKED};
use super::{MaterialParams, SpringState, SPRING_BYTES};
use crate::error::{Error, Result};

pub const SPRINGS_PER_POINT: usize = 150;
pub const EVAL_POINTS: usize = 4;
pub const SPRINGS_PER_ELEMENT: usize = SPRINGS_PER_POINT * EVAL_POINTS;
pub const ELEMENT_STATE_BYTES: usize = SPRINGS_PER_ELEMENT * SPRING_BYTES;

/// Symmetric 6x6 material tangent in Voigt order (11, 22, 33, 12, 23, 31)
/// with engineering shear strains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentMatrix(pub [[f64; 6]; 6]);

impl Default for TangentMatrix {
    fn default() -> Self {
        TangentMatrix([[0.0; 6]; 6])
    }
}

impl TangentMatrix {
    pub fn isotropic(bulk: f64, shear: f64) -> Self {
        let mut d = [[0.0; 6]; 6];
        for (i, row) in d.iter_mut().enumerate().take(3) {
            for (j, v) in row.iter_mut().enumerate().take(3) {
                *v = bulk + shear * if i == j { 4.0 / 3.0 } else { -2.0 / 3.0 };
            }
        }
        for (i, row) in d.iter_mut().enumerate().skip(3) {
            row[i] = shear;
        }
        TangentMatrix(d)
    }

    pub fn elastic(mat: &MaterialParams) -> Self {
        Self::isotropic(mat.bulk, mat.g0)
    }

    pub fn average(ds: &[TangentMatrix]) -> Self {
        let mut out = [[0.0; 6]; 6];
        for d in ds {
            for i in 0..6 {
                for j in 0..6 {
                    out[i][j] += d.0[i][j];
                }
            }
        }
        let s = 1.0 / ds.len() as f64;
        for row in &mut out {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        TangentMatrix(out)
    }

    #[inline]
    pub fn mul_vec(&self, e: &[f64; 6]) -> [f64; 6] {
        let mut s = [0.0; 6];
        for (i, si) in s.iter_mut().enumerate() {
            let r = &self.0[i];
            *si = r[0] * e[0] + r[1] * e[1] + r[2] * e[2] + r[3] * e[3] + r[4] * e[4] + r[5] * e[5];
        }
        s
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Advances the 150 springs of one evaluation point by a strain increment.
///
/// Returns the tangent at the updated state and the stress increment. The
/// volumetric part is linear elastic with the bulk modulus; linear layers
/// return the isotropic elastic tangent and stress increment directly.
pub fn update_eval_point(
    springs: &mut [SpringState],
    strain_incr: &[f64; 6],
    mat: &MaterialParams,
    tbl: &SpringDirectionTable,
) -> (TangentMatrix, [f64; 6]) {
    debug_assert_eq!(springs.len(), tbl.len());
    let proj = tbl.projections();
    if mat.linear {
        for (s, p) in springs.iter_mut().zip(proj) {
            let dg = dot6(p, strain_incr);
            s.gamma += dg;
            s.gamma_max = s.gamma_max.max(s.gamma.abs());
        }
        let d = TangentMatrix::elastic(mat);
        let ds = d.mul_vec(strain_incr);
        return (d, ds);
    }
    let wproj = tbl.weighted_projections();
    let wouter = tbl.weighted_outer();
    let mut packed = [0.0; 21];
    let mut ds = [0.0; 6];
    for (k, s) in springs.iter_mut().enumerate() {
        let dg = dot6(&proj[k], strain_incr);
        let tau_old = s.stress(mat);
        let (gt, tau) = s.advance(dg, mat);
        let dtau = tau - tau_old;
        let wp = &wproj[k];
        for i in 0..6 {
            ds[i] += dtau * wp[i];
        }
        let wo = &wouter[k];
        for i in 0..21 {
            packed[i] += gt * wo[i];
        }
    }
    let mut d = [[0.0; 6]; 6];
    for (k, &(i, j)) in PACKED.iter().enumerate() {
        d[i][j] = packed[k];
        d[j][i] = packed[k];
    }
    let dvol = mat.bulk * (strain_incr[0] + strain_incr[1] + strain_incr[2]);
    for i in 0..3 {
        for j in 0..3 {
            d[i][j] += mat.bulk;
        }
        ds[i] += dvol;
    }
    (TangentMatrix(d), ds)
}

/// Tangent of an evaluation point from its current spring states, without
/// advancing them.
pub fn point_tangent(
    springs: &[SpringState],
    mat: &MaterialParams,
    tbl: &SpringDirectionTable,
) -> TangentMatrix {
    if mat.linear {
        return TangentMatrix::elastic(mat);
    }
    let mut packed = [0.0; 21];
    for (s, wo) in springs.iter().zip(tbl.weighted_outer()) {
        let gt = s.tangent(mat);
        for i in 0..21 {
            packed[i] += gt * wo[i];
        }
    }
    let mut d = [[0.0; 6]; 6];
    for (k, &(i, j)) in PACKED.iter().enumerate() {
        d[i][j] = packed[k];
        d[j][i] = packed[k];
    }
    for row in d.iter_mut().take(3) {
        for v in row.iter_mut().take(3) {
            *v += mat.bulk;
        }
    }
    TangentMatrix(d)
}

/// Deviatoric stress carried by the springs of one evaluation point.
pub fn point_deviatoric_stress(
    springs: &[SpringState],
    mat: &MaterialParams,
    tbl: &SpringDirectionTable,
) -> [f64; 6] {
    let mut s = [0.0; 6];
    for (sp, wp) in springs.iter().zip(tbl.weighted_projections()) {
        let tau = sp.stress(mat);
        for i in 0..6 {
            s[i] += tau * wp[i];
        }
    }
    s
}

#[inline]
fn dot6(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3] + a[4] * b[4] + a[5] * b[5]
}

/// Constitutive state of one element: four evaluation points of 150 springs,
/// point-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementMaterialState {
    pub springs: Vec<SpringState>,
}

impl Default for ElementMaterialState {
    fn default() -> Self {
        ElementMaterialState {
            springs: vec![SpringState::VIRGIN; SPRINGS_PER_ELEMENT],
        }
    }
}

impl ElementMaterialState {
    pub fn point(&self, j: usize) -> &[SpringState] {
        &self.springs[j * SPRINGS_PER_POINT..(j + 1) * SPRINGS_PER_POINT]
    }

    pub fn point_mut(&mut self, j: usize) -> &mut [SpringState] {
        &mut self.springs[j * SPRINGS_PER_POINT..(j + 1) * SPRINGS_PER_POINT]
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ELEMENT_STATE_BYTES);
        for s in &self.springs {
            s.write_le(&mut out);
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != ELEMENT_STATE_BYTES {
            return Err(Error::Format(format!(
                "element state needs {ELEMENT_STATE_BYTES} bytes, got {}",
                bytes.len()
            )));
        }
        let springs = bytes
            .chunks_exact(SPRING_BYTES)
            .map(SpringState::read_le)
            .collect::<Result<_>>()?;
        Ok(ElementMaterialState { springs })
    }
}

/// Mean equivalent damping over all springs of an element.
pub fn element_damping(springs: &[SpringState], mat: &MaterialParams) -> f64 {
    if mat.linear || springs.is_empty() {
        return 0.0;
    }
    springs.iter().map(|s| s.damping(mat)).sum::<f64>() / springs.len() as f64
}
