use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dimension of the space of symmetric operators on deviatoric strain.
pub const DEVIATORIC_RANK: usize = 15;

const STANDARD_NORMALS: usize = 75;

/// Orientations and weights of the springs at an evaluation point.
///
/// Spring `k` measures the engineering shear strain `P_k . eps` on the plane
/// with normal `n_k` in direction `t_k`. The weights are calibrated so that
/// `sum_k w_k P_k P_k^T` equals the isotropic deviatoric operator; with all
/// springs at their initial modulus the tangent is then exactly isotropic.
#[derive(Clone, Debug)]
pub struct SpringDirectionTable {
    normals: Vec<[f64; 3]>,
    tangents: Vec<[f64; 3]>,
    weights: Vec<f64>,
    proj: Vec<[f64; 6]>,
    /// `w_k P_k`, used for stress increments.
    wproj: Vec<[f64; 6]>,
    /// Packed upper triangle of `w_k P_k P_k^T`.
    wouter: Vec<[f64; 21]>,
    residual: f64,
}

/// Voigt index pairs of the packed upper triangle.
pub(crate) const PACKED: [(usize, usize); 21] = {
    let mut out = [(0, 0); 21];
    let mut k = 0;
    let mut i = 0;
    while i < 6 {
        let mut j = i;
        while j < 6 {
            out[k] = (i, j);
            k += 1;
            j += 1;
        }
        i += 1;
    }
    out
};

fn projection(n: &[f64; 3], t: &[f64; 3]) -> [f64; 6] {
    [
        2.0 * n[0] * t[0],
        2.0 * n[1] * t[1],
        2.0 * n[2] * t[2],
        n[0] * t[1] + n[1] * t[0],
        n[1] * t[2] + n[2] * t[1],
        n[2] * t[0] + n[0] * t[2],
    ]
}

/// Isotropic deviatoric operator per unit shear modulus, Voigt with
/// engineering shear strains.
pub(crate) fn deviatoric_identity() -> [[f64; 6]; 6] {
    let mut q = [[0.0; 6]; 6];
    for (i, row) in q.iter_mut().enumerate().take(3) {
        for (j, v) in row.iter_mut().enumerate().take(3) {
            *v = if i == j { 4.0 / 3.0 } else { -2.0 / 3.0 };
        }
    }
    for (i, row) in q.iter_mut().enumerate().skip(3) {
        row[i] = 1.0;
    }
    q
}

impl SpringDirectionTable {
    /// Builds a table from explicit direction pairs with uniform weights
    /// scaled to best fit the isotropic operator.
    pub fn from_pairs(normals: Vec<[f64; 3]>, tangents: Vec<[f64; 3]>) -> Result<Self> {
        if normals.len() != tangents.len() || normals.is_empty() {
            return Err(Error::invalid(
                "direction table needs matching, non-empty normal and tangent lists",
            ));
        }
        for (n, t) in normals.iter().zip(&tangents) {
            let nn: f64 = n.iter().map(|v| v * v).sum();
            let tt: f64 = t.iter().map(|v| v * v).sum();
            let nt: f64 = n.iter().zip(t).map(|(a, b)| a * b).sum();
            if (nn - 1.0).abs() > 1e-12 || (tt - 1.0).abs() > 1e-12 || nt.abs() > 1e-12 {
                return Err(Error::invalid("spring directions must be orthonormal pairs"));
            }
        }
        let proj: Vec<[f64; 6]> = normals
            .iter()
            .zip(&tangents)
            .map(|(n, t)| projection(n, t))
            .collect();
        let n = proj.len();
        let mut table = SpringDirectionTable {
            normals,
            tangents,
            weights: vec![1.0; n],
            proj,
            wproj: Vec::new(),
            wouter: Vec::new(),
            residual: f64::NAN,
        };
        // scalar least-squares fit of a uniform weight
        let (a, b) = (table.system(), target());
        let aw = &a * DVector::from_element(n, 1.0);
        let scale = aw.dot(&b) / aw.dot(&aw);
        table.weights = vec![scale; n];
        table.refresh();
        Ok(table)
    }

    /// 75 spherical-Fibonacci normals, each carrying an azimuthal and a
    /// polar tangent (150 springs). Weights are not yet calibrated.
    pub fn fibonacci() -> Self {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let mut normals = Vec::with_capacity(2 * STANDARD_NORMALS);
        let mut tangents = Vec::with_capacity(2 * STANDARD_NORMALS);
        for k in 0..STANDARD_NORMALS {
            let z = 1.0 - (2 * k + 1) as f64 / STANDARD_NORMALS as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = k as f64 * golden;
            let (s, c) = phi.sin_cos();
            let n = [r * c, r * s, z];
            let e_phi = [-s, c, 0.0];
            // e_theta = e_phi x n
            let e_theta = [
                e_phi[1] * n[2] - e_phi[2] * n[1],
                e_phi[2] * n[0] - e_phi[0] * n[2],
                e_phi[0] * n[1] - e_phi[1] * n[0],
            ];
            normals.push(n);
            tangents.push(e_phi);
            normals.push(n);
            tangents.push(e_theta);
        }
        Self::from_pairs(normals, tangents).expect("fibonacci directions are orthonormal")
    }

    /// Calibrated 150-spring table shared by every evaluation point.
    pub fn standard() -> &'static SpringDirectionTable {
        static TABLE: OnceLock<SpringDirectionTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            SpringDirectionTable::fibonacci()
                .calibrate()
                .expect("standard direction set calibrates")
        })
    }

    /// Least-squares weight correction (minimum norm from the uniform
    /// weights) so that the linear-regime operator is isotropic.
    pub fn calibrate(mut self) -> Result<Self> {
        let a = self.system();
        let b = target();
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
        if rank < DEVIATORIC_RANK {
            return Err(Error::RankDeficient {
                rank,
                required: DEVIATORIC_RANK,
            });
        }
        let w0 = DVector::from_column_slice(&self.weights);
        let rhs = &b - &a * &w0;
        let dw = svd
            .solve(&rhs, 1e-10 * smax)
            .map_err(|e| Error::invalid(e.to_string()))?;
        let w = w0 + dw;
        if w.iter().any(|&v| v <= 0.0) {
            return Err(Error::invalid("calibrated spring weights are not all positive"));
        }
        self.weights = w.iter().copied().collect();
        self.refresh();
        if self.residual > 1e-8 {
            return Err(Error::invalid(format!(
                "calibration residual {:e} exceeds 1e-8",
                self.residual
            )));
        }
        Ok(self)
    }

    fn refresh(&mut self) {
        self.wproj = self
            .proj
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| p.map(|v| w * v))
            .collect();
        self.wouter = self
            .proj
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| {
                let mut o = [0.0; 21];
                for (k, &(i, j)) in PACKED.iter().enumerate() {
                    o[k] = w * p[i] * p[j];
                }
                o
            })
            .collect();
        self.residual = self.fit_residual();
    }

    fn system(&self) -> DMatrix<f64> {
        DMatrix::from_fn(36, self.proj.len(), |r, k| {
            let p = &self.proj[k];
            p[r / 6] * p[r % 6]
        })
    }

    fn fit_residual(&self) -> f64 {
        let q = deviatoric_identity();
        let d = self.deviatoric_operator();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                num += (d[i][j] - q[i][j]).powi(2);
                den += q[i][j].powi(2);
            }
        }
        (num / den).sqrt()
    }

    /// `sum_k w_k P_k P_k^T`.
    pub fn deviatoric_operator(&self) -> [[f64; 6]; 6] {
        let mut d = [[0.0; 6]; 6];
        for (p, w) in self.proj.iter().zip(&self.weights) {
            for i in 0..6 {
                for j in 0..6 {
                    d[i][j] += w * p[i] * p[j];
                }
            }
        }
        d
    }

    pub fn len(&self) -> usize {
        self.proj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proj.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn projections(&self) -> &[[f64; 6]] {
        &self.proj
    }

    pub(crate) fn weighted_projections(&self) -> &[[f64; 6]] {
        &self.wproj
    }

    pub(crate) fn weighted_outer(&self) -> &[[f64; 21]] {
        &self.wouter
    }

    pub fn normals(&self) -> &[[f64; 3]] {
        &self.normals
    }

    pub fn tangents(&self) -> &[[f64; 3]] {
        &self.tangents
    }

    /// Relative Frobenius misfit against the isotropic operator.
    pub fn residual(&self) -> f64 {
        self.residual
    }
}

fn target() -> DVector<f64> {
    let q = deviatoric_identity();
    DVector::from_fn(36, |r, _| q[r / 6][r % 6])
}
