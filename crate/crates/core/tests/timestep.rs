#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use tieredfem::par::Exec;
use tieredfem::timestep::{apply_updates, build_rhs, NewmarkCoeffs, RayleighCoeffs, TimeState};

/// Spring chain fixed at one end: tridiagonal `K`, lumped `M`.
fn chain(k: &[f64]) -> DMatrix<f64> {
    let n = k.len();
    let mut m = DMatrix::zeros(n, n);
    for (i, &ki) in k.iter().enumerate() {
        m[(i, i)] += ki;
        if i + 1 < n {
            let kn = k[i + 1];
            m[(i, i)] += kn;
            m[(i + 1, i)] -= kn;
            m[(i, i + 1)] -= kn;
        }
    }
    m
}

fn energy(st: &TimeState, mass: &[f64], k: &DMatrix<f64>) -> f64 {
    let u = DVector::from_column_slice(&st.u);
    let kin: f64 = st.v.iter().zip(mass).map(|(v, m)| m * v * v).sum();
    0.5 * kin + 0.5 * u.dot(&(k * &u))
}

/// Steps a linear system with damping `C = alpha M + beta K + diag(dash)`.
fn run(
    k: &DMatrix<f64>,
    mass: &[f64],
    dash: &[f64],
    ray: &RayleighCoeffs,
    st: &mut TimeState,
    nt: usize,
    mut each: impl FnMut(&TimeState),
) {
    let nm = NewmarkCoeffs::new(st.dt).unwrap();
    let s = nm.system(ray);
    let n = mass.len();
    let mut a = k * s.a_k;
    for (i, d) in s.diagonal(mass, dash).into_iter().enumerate() {
        a[(i, i)] += d;
    }
    let lu = a.lu();
    let f = vec![0.0; n];
    for _ in 0..nt {
        let kv = k * DVector::from_column_slice(&st.v);
        let rhs = build_rhs(st, &f, mass, dash, kv.as_slice(), ray, &nm, Exec::Sequential);
        let du = lu.solve(&DVector::from_vec(rhs)).unwrap();
        let dq = k * &du;
        apply_updates(st, du.as_slice(), dq.as_slice(), &nm);
        each(st);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn undamped_linear_energy_is_conserved(
        stiff in prop::collection::vec(1.0f64..1e3, 1..8),
        mass_seed in prop::collection::vec(0.1f64..10.0, 8),
        u0 in prop::collection::vec(-1.0f64..1.0, 8),
        dt in 1e-3f64..0.2,
    ) {
        let n = stiff.len();
        let k = chain(&stiff);
        let mass = &mass_seed[..n];
        let mut st = TimeState::zeros(n, dt);
        st.u.copy_from_slice(&u0[..n]);
        let uq = &k * DVector::from_column_slice(&st.u);
        st.q.copy_from_slice(uq.as_slice());
        // consistent initial acceleration
        for i in 0..n {
            st.a[i] = -st.q[i] / mass[i];
        }
        let e0 = energy(&st, mass, &k);
        let mut worst: f64 = 0.0;
        run(&k, mass, &vec![0.0; n], &RayleighCoeffs::default(), &mut st, 300, |s| {
            worst = worst.max((energy(s, mass, &k) - e0).abs());
        });
        prop_assert!(worst <= 1e-9 * e0.max(1e-300), "energy drift {worst:e} of {e0:e}");
    }

    #[test]
    fn damping_never_adds_energy(
        stiff in prop::collection::vec(1.0f64..1e3, 1..6),
        h in 0.0f64..0.3,
        dash in prop::collection::vec(0.0f64..5.0, 6),
        dt in 1e-3f64..0.1,
    ) {
        let n = stiff.len();
        let k = chain(&stiff);
        let mass = vec![1.0; n];
        let ray = RayleighCoeffs::fit(h, [0.2, 2.5]).unwrap();
        let mut st = TimeState::zeros(n, dt);
        st.v.iter_mut().enumerate().for_each(|(i, v)| *v = 1.0 - 0.3 * i as f64);
        // consistent initial acceleration, M a = -C v
        let kv = &k * DVector::from_column_slice(&st.v);
        for i in 0..n {
            st.a[i] = -(ray.alpha * st.v[i] + ray.beta * kv[i] + dash[i] * st.v[i]);
        }
        let e0 = energy(&st, &mass, &k);
        let mut prev = e0;
        let mut ok = true;
        run(&k, &mass, &dash[..n], &ray, &mut st, 200, |s| {
            let e = energy(s, &mass, &k);
            ok &= e <= prev + 1e-13 * e0;
            prev = e;
        });
        prop_assert!(ok);
    }
}

/// Continuous least-squares fit computed independently by quadrature.
fn rayleigh_oracle(h: f64, band: [f64; 2]) -> (f64, f64) {
    let (w1, w2) = (
        2.0 * std::f64::consts::PI * band[0],
        2.0 * std::f64::consts::PI * band[1],
    );
    let n = 200_000;
    let mut a = DMatrix::<f64>::zeros(2, 2);
    let mut b = DVector::<f64>::zeros(2);
    for i in 0..n {
        let w = w1 + (w2 - w1) * (i as f64 + 0.5) / n as f64;
        let phi = [0.5 / w, 0.5 * w];
        for p in 0..2 {
            b[p] += phi[p] * h;
            for q in 0..2 {
                a[(p, q)] += phi[p] * phi[q];
            }
        }
    }
    let x = a.lu().solve(&b).unwrap();
    (x[0], x[1])
}

#[test]
fn rayleigh_fit_matches_quadrature_least_squares() {
    for (h, band) in [(0.05, [0.2, 2.5]), (0.12, [0.5, 10.0]), (0.02, [1.0, 1.5])] {
        let r = RayleighCoeffs::fit(h, band).unwrap();
        let (alpha, beta) = rayleigh_oracle(h, band);
        assert!(
            (r.alpha - alpha).abs() <= 1e-6 * alpha.abs(),
            "{} vs {alpha}",
            r.alpha
        );
        assert!((r.beta - beta).abs() <= 1e-6 * beta.abs(), "{} vs {beta}", r.beta);
    }
}

#[test]
fn free_decay_matches_the_damping_ratio() {
    // SDOF at 1 Hz with 5% damping from a stiffness-proportional term only
    let w = 2.0 * std::f64::consts::PI;
    let h = 0.05;
    let ray = RayleighCoeffs {
        alpha: 0.0,
        beta: 2.0 * h / w,
    };
    let k = DMatrix::from_element(1, 1, w * w);
    let mut st = TimeState::zeros(1, 1e-3);
    st.u[0] = 1.0;
    st.q[0] = w * w;
    st.a[0] = -w * w;
    let mut u = vec![st.u[0]];
    run(&k, &[1.0], &[0.0], &ray, &mut st, 6000, |s| u.push(s.u[0]));
    let peaks: Vec<f64> = u
        .windows(3)
        .filter(|w| w[1] > w[0] && w[1] >= w[2] && w[1] > 0.0)
        .map(|w| w[1])
        .collect();
    assert!(peaks.len() >= 4);
    let n = peaks.len() - 1;
    let delta = (peaks[0] / peaks[n]).ln() / n as f64;
    let h_est = delta / (4.0 * std::f64::consts::PI * std::f64::consts::PI + delta * delta).sqrt();
    assert!((h_est - h).abs() < 0.02 * h, "{h_est}");
}
