//! Multi-spring elasto-plastic soil model.
//!
//! Each material evaluation point carries 150 one-dimensional shear springs.
//! A spring follows a Ramberg-Osgood type skeleton on first loading and
//! Masing branches after a reversal. The 6x6 tangent at the point is the
//! weighted sum of spring tangents projected onto their shear planes plus a
//! linear volumetric part.

mod directions;
mod point;

pub use directions::{SpringDirectionTable, DEVIATORIC_RANK};
pub use point::{
    element_damping, point_deviatoric_stress, point_tangent, update_eval_point, ElementMaterialState,
    TangentMatrix, ELEMENT_STATE_BYTES, EVAL_POINTS, SPRINGS_PER_ELEMENT, SPRINGS_PER_POINT,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized size of one [`SpringState`].
pub const SPRING_BYTES: usize = 40;

/// Material constants of one soil or rock layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// Density (kg/m^3).
    pub rho: f64,
    /// Small-strain shear modulus (Pa).
    pub g0: f64,
    /// Bulk modulus (Pa).
    pub bulk: f64,
    /// Reference shear strain of the skeleton curve.
    pub gamma_ref: f64,
    /// Skeleton coefficient; with `ro_beta = 1` the stress asymptote is `g0 * gamma_ref / ro_alpha`.
    #[serde(default = "one")]
    pub ro_alpha: f64,
    /// Skeleton exponent, `0 < ro_beta <= 1`.
    #[serde(default = "one")]
    pub ro_beta: f64,
    /// Maximum damping ratio used for the Rayleigh update.
    pub h_max: f64,
    /// Linear elastic layer (engineering bedrock).
    #[serde(default)]
    pub linear: bool,
}

fn one() -> f64 {
    1.0
}

impl MaterialParams {
    pub fn from_velocities(
        rho: f64,
        vs: f64,
        poisson: f64,
        gamma_ref: f64,
        h_max: f64,
        linear: bool,
    ) -> Self {
        let g0 = rho * vs * vs;
        let bulk = g0 * 2.0 * (1.0 + poisson) / (3.0 * (1.0 - 2.0 * poisson));
        MaterialParams {
            rho,
            g0,
            bulk,
            gamma_ref,
            ro_alpha: 1.0,
            ro_beta: 1.0,
            h_max,
            linear,
        }
    }

    /// Soft surface layer: Vs = 100 m/s, rho = 1700 kg/m^3, nonlinear.
    pub fn soft_soil() -> Self {
        Self::from_velocities(1700.0, 100.0, 0.45, 1.0e-3, 0.2, false)
    }

    /// Engineering bedrock: Vs = 400 m/s, rho = 2000 kg/m^3, linear.
    pub fn bedrock() -> Self {
        Self::from_velocities(2000.0, 400.0, 0.3, 1.0e-3, 0.0, true)
    }

    pub fn vs(&self) -> f64 {
        (self.g0 / self.rho).sqrt()
    }

    pub fn vp(&self) -> f64 {
        ((self.bulk + 4.0 / 3.0 * self.g0) / self.rho).sqrt()
    }

    /// Stress scale of the skeleton curve.
    pub fn tau_f(&self) -> f64 {
        self.g0 * self.gamma_ref / self.ro_alpha
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rho > 0.0
            && self.g0 > 0.0
            && self.bulk > 2.0 * self.g0 / 3.0
            && self.gamma_ref > 0.0
            && self.ro_alpha > 0.0
            && self.ro_beta > 0.0
            && self.ro_beta <= 1.0
            && self.h_max >= 0.0
            && self.h_max < 2.0 / std::f64::consts::PI;
        if ok
            && [self.rho, self.g0, self.bulk, self.gamma_ref, self.h_max]
                .iter()
                .all(|v| v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "material parameters out of range: {self:?}"
            )))
        }
    }

    /// Skeleton curve `tau = g0 * gamma / (1 + alpha * |gamma / gamma_ref|^beta)`.
    #[inline]
    pub fn skeleton_stress(&self, gamma: f64) -> f64 {
        self.g0 * gamma / (1.0 + self.ro_alpha * self.ratio_pow(gamma))
    }

    /// Derivative of [`Self::skeleton_stress`].
    #[inline]
    pub fn skeleton_tangent(&self, gamma: f64) -> f64 {
        let xb = self.ratio_pow(gamma);
        let den = 1.0 + self.ro_alpha * xb;
        self.g0 * (1.0 + self.ro_alpha * (1.0 - self.ro_beta) * xb) / (den * den)
    }

    #[inline]
    fn ratio_pow(&self, gamma: f64) -> f64 {
        let x = (gamma / self.gamma_ref).abs();
        if self.ro_beta == 1.0 {
            x
        } else {
            x.powf(self.ro_beta)
        }
    }

    /// Secant modulus of the skeleton at strain amplitude `gamma_a`.
    pub fn secant_modulus(&self, gamma_a: f64) -> f64 {
        self.g0 / (1.0 + self.ro_alpha * self.ratio_pow(gamma_a))
    }
}

/// State of one 1D spring. Layout is 40 bytes: four f64 and two i32.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpringState {
    pub gamma: f64,
    /// Largest strain amplitude reached so far.
    pub gamma_max: f64,
    pub gamma_rev: f64,
    pub tau_rev: f64,
    /// Loading direction, -1 or +1.
    pub dir: i32,
    /// 1 while on the skeleton, 0 on a Masing branch.
    pub skel: i32,
}

impl Default for SpringState {
    fn default() -> Self {
        SpringState::VIRGIN
    }
}

impl SpringState {
    pub const VIRGIN: SpringState = SpringState {
        gamma: 0.0,
        gamma_max: 0.0,
        gamma_rev: 0.0,
        tau_rev: 0.0,
        dir: 1,
        skel: 1,
    };

    pub fn on_skeleton(&self) -> bool {
        self.skel == 1
    }

    #[inline]
    fn branch_stress(&self, gamma: f64, mat: &MaterialParams) -> f64 {
        self.tau_rev + 2.0 * mat.skeleton_stress(0.5 * (gamma - self.gamma_rev))
    }

    /// Stress the active curve assigns to the current strain.
    pub fn stress(&self, mat: &MaterialParams) -> f64 {
        if mat.linear {
            mat.g0 * self.gamma
        } else if self.on_skeleton() {
            mat.skeleton_stress(self.gamma)
        } else {
            self.branch_stress(self.gamma, mat)
        }
    }

    /// Tangent modulus of the active curve at the current strain.
    pub fn tangent(&self, mat: &MaterialParams) -> f64 {
        if mat.linear {
            mat.g0
        } else if self.on_skeleton() {
            mat.skeleton_tangent(self.gamma)
        } else {
            mat.skeleton_tangent(0.5 * (self.gamma - self.gamma_rev))
        }
    }

    /// Advances the spring by a strain increment and returns the tangent of
    /// the active curve at the new strain.
    pub fn update(&mut self, d_gamma: f64, mat: &MaterialParams) -> f64 {
        self.advance(d_gamma, mat).0
    }

    /// Like [`Self::update`], also returning the new stress.
    pub fn advance(&mut self, d_gamma: f64, mat: &MaterialParams) -> (f64, f64) {
        if mat.linear {
            self.gamma += d_gamma;
            self.gamma_max = self.gamma_max.max(self.gamma.abs());
            return (mat.g0, mat.g0 * self.gamma);
        }
        if d_gamma == 0.0 {
            return (self.tangent(mat), self.stress(mat));
        }
        let d = if d_gamma > 0.0 { 1 } else { -1 };
        if self.on_skeleton() {
            if self.gamma == 0.0 || d == self.dir {
                self.dir = d;
                self.gamma += d_gamma;
                self.gamma_max = self.gamma_max.max(self.gamma.abs());
                return (mat.skeleton_tangent(self.gamma), mat.skeleton_stress(self.gamma));
            }
            self.tau_rev = mat.skeleton_stress(self.gamma);
            self.gamma_rev = self.gamma;
            self.dir = d;
            self.skel = 0;
        } else if d != self.dir {
            self.tau_rev = self.branch_stress(self.gamma, mat);
            self.gamma_rev = self.gamma;
            self.dir = d;
        }

        self.gamma += d_gamma;
        let df = f64::from(d);
        // The largest loop so far encloses every later branch: a branch that
        // reaches it continues along it, and it touches the skeleton again
        // at the far tip.
        let tip = -df * self.gamma_max;
        if self.gamma_rev != tip {
            let tip_tau = mat.skeleton_stress(tip);
            let outer = tip_tau + 2.0 * mat.skeleton_stress(0.5 * (self.gamma - tip));
            if df * (self.branch_stress(self.gamma, mat) - outer) >= 0.0 {
                self.gamma_rev = tip;
                self.tau_rev = tip_tau;
            }
        }
        if self.gamma_rev == tip && df * self.gamma >= self.gamma_max {
            self.skel = 1;
            self.gamma_max = self.gamma.abs();
            return (mat.skeleton_tangent(self.gamma), mat.skeleton_stress(self.gamma));
        }
        (
            mat.skeleton_tangent(0.5 * (self.gamma - self.gamma_rev)),
            self.branch_stress(self.gamma, mat),
        )
    }

    /// Equivalent damping `h_max * (1 - G_sec / G0)` at the strain extreme.
    pub fn damping(&self, mat: &MaterialParams) -> f64 {
        if mat.linear {
            return 0.0;
        }
        let amp = if self.on_skeleton() {
            self.gamma.abs()
        } else {
            self.gamma.abs().max(self.gamma_rev.abs())
        };
        if amp == 0.0 {
            return 0.0;
        }
        mat.h_max * (1.0 - mat.secant_modulus(amp) / mat.g0)
    }

    pub fn write_le(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.gamma.to_le_bytes());
        out.extend_from_slice(&self.gamma_max.to_le_bytes());
        out.extend_from_slice(&self.gamma_rev.to_le_bytes());
        out.extend_from_slice(&self.tau_rev.to_le_bytes());
        out.extend_from_slice(&self.dir.to_le_bytes());
        out.extend_from_slice(&self.skel.to_le_bytes());
    }

    pub fn read_le(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < SPRING_BYTES {
            return Err(Error::Format(format!(
                "spring record needs {SPRING_BYTES} bytes, got {}",
                bytes.len()
            )));
        }
        let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let g = |i: usize| i32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        Ok(SpringState {
            gamma: f(0),
            gamma_max: f(8),
            gamma_rev: f(16),
            tau_rev: f(24),
            dir: g(32),
            skel: g(36),
        })
    }
}
