//! Average-acceleration Newmark integration.
//!
//! Each step solves
//! `(4/dt^2 M + 2/dt C + K) du = f - q + C v + M (a + 4/dt v)`
//! and then updates
//! `u += du`, `v = -v + 2/dt du`, `a = -a - 4/dt v_old + 4/dt^2 du`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewmarkCoeffs {
    pub dt: f64,
    /// `4 / dt^2`
    pub c_mass: f64,
    /// `2 / dt`
    pub c_damp: f64,
    /// `4 / dt`
    pub c_vel: f64,
}

impl NewmarkCoeffs {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        Ok(NewmarkCoeffs {
            dt,
            c_mass: 4.0 / (dt * dt),
            c_damp: 2.0 / dt,
            c_vel: 4.0 / dt,
        })
    }

    /// Coefficients of `M`, `K` and the dashpots in the system matrix.
    pub fn system(&self, ray: &RayleighCoeffs) -> SystemCoeffs {
        SystemCoeffs {
            a_m: self.c_mass + self.c_damp * ray.alpha,
            a_k: 1.0 + self.c_damp * ray.beta,
            a_d: self.c_damp,
        }
    }
}

/// `A = a_m M + a_k K + a_d C_b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemCoeffs {
    pub a_m: f64,
    pub a_k: f64,
    pub a_d: f64,
}

impl SystemCoeffs {
    /// Per-DOF diagonal `a_m m + a_d c`.
    pub fn diagonal(&self, mass: &[f64], dashpot: &[f64]) -> Vec<f64> {
        mass.iter()
            .zip(dashpot)
            .map(|(m, c)| self.a_m * m + self.a_d * c)
            .collect()
    }
}

/// Rayleigh damping `C = alpha M + beta K`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RayleighCoeffs {
    pub alpha: f64,
    pub beta: f64,
}

impl RayleighCoeffs {
    /// Least-squares fit of `h(omega) = (alpha / omega + beta omega) / 2` to
    /// the constant `hbar` over the band `[fmin, fmax]` Hz.
    pub fn fit(hbar: f64, band: [f64; 2]) -> Result<Self> {
        let [fmin, fmax] = band;
        if !(fmin > 0.0 && fmax > fmin) || !(hbar >= 0.0) {
            return Err(Error::invalid(format!(
                "bad Rayleigh fit inputs: h = {hbar}, band = {band:?}"
            )));
        }
        if hbar == 0.0 {
            return Ok(RayleighCoeffs::default());
        }
        let (w1, w2) = (
            2.0 * std::f64::consts::PI * fmin,
            2.0 * std::f64::consts::PI * fmax,
        );
        let a11 = 0.25 * (1.0 / w1 - 1.0 / w2);
        let a12 = 0.25 * (w2 - w1);
        let a22 = (w2.powi(3) - w1.powi(3)) / 12.0;
        let b1 = 0.5 * hbar * (w2 / w1).ln();
        let b2 = 0.25 * hbar * (w2 * w2 - w1 * w1);
        let det = a11 * a22 - a12 * a12;
        Ok(RayleighCoeffs {
            alpha: (b1 * a22 - b2 * a12) / det,
            beta: (a11 * b2 - a12 * b1) / det,
        })
    }

    /// Damping ratio implied at frequency `f` Hz.
    pub fn ratio_at(&self, f: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f;
        0.5 * (self.alpha / w + self.beta * w)
    }
}

/// Nodal state at step `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    /// Internal force consistent with the constitutive stresses.
    pub q: Vec<f64>,
    pub step: usize,
    pub dt: f64,
}

impl TimeState {
    pub fn zeros(n: usize, dt: f64) -> Self {
        TimeState {
            u: vec![0.0; n],
            v: vec![0.0; n],
            a: vec![0.0; n],
            q: vec![0.0; n],
            step: 0,
            dt,
        }
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Right-hand side `f - q + C v + M (a + 4/dt v)` with
/// `C v = alpha M v + beta K v + C_b v`; `kv` is the stiffness product `K v`.
#[allow(clippy::too_many_arguments)]
pub fn build_rhs(
    st: &TimeState,
    f_ext: &[f64],
    mass: &[f64],
    dashpot: &[f64],
    kv: &[f64],
    ray: &RayleighCoeffs,
    nm: &NewmarkCoeffs,
    exec: Exec,
) -> Vec<f64> {
    let mut r = vec![0.0; st.len()];
    exec.for_each_chunk_mut(&mut r, 4096, |c, rc| {
        let o = 4096 * c;
        for (k, ri) in rc.iter_mut().enumerate() {
            let i = o + k;
            let cv = ray.alpha * mass[i] * st.v[i] + ray.beta * kv[i] + dashpot[i] * st.v[i];
            *ri = f_ext[i] - st.q[i] + cv + mass[i] * (st.a[i] + nm.c_vel * st.v[i]);
        }
    });
    r
}

/// Advances `u`, `v`, `a` by the solved increment and `q` by the assembled
/// internal-force increment.
pub fn apply_updates(st: &mut TimeState, du: &[f64], dq: &[f64], nm: &NewmarkCoeffs) {
    for i in 0..st.u.len() {
        let v_old = st.v[i];
        st.u[i] += du[i];
        st.v[i] = -v_old + nm.c_damp * du[i];
        st.a[i] = -st.a[i] - nm.c_vel * v_old + nm.c_mass * du[i];
        st.q[i] += dq[i];
    }
    st.step += 1;
}
