use proptest::prelude::*;
use tieredfem::constitutive::{
    point_tangent, update_eval_point, MaterialParams, SpringDirectionTable, SpringState, SPRINGS_PER_POINT,
};

fn soil() -> MaterialParams {
    MaterialParams::soft_soil()
}

fn drive(s: &mut SpringState, to: f64, steps: usize, mat: &MaterialParams) -> Vec<(f64, f64)> {
    let d = (to - s.gamma) / steps as f64;
    (0..steps)
        .map(|_| {
            s.update(d, mat);
            (s.gamma, s.stress(mat))
        })
        .collect()
}

/// Masing damping of the hyperbolic skeleton at amplitude ratio `x`.
fn hyperbolic_masing_damping(x: f64) -> f64 {
    let pi = std::f64::consts::PI;
    4.0 / pi * (1.0 + 1.0 / x) * (1.0 - (1.0 + x).ln() / x) - 2.0 / pi
}

#[test]
fn loop_damping_matches_masing_construction() {
    let m = soil();
    // secant G/G0 = 0.5 at gamma = gamma_ref
    let ga = m.gamma_ref;
    assert!((m.secant_modulus(ga) / m.g0 - 0.5).abs() < 1e-12);
    let mut s = SpringState::VIRGIN;
    drive(&mut s, ga, 1000, &m);
    let mut path = vec![(s.gamma, s.stress(&m))];
    path.extend(drive(&mut s, -ga, 20_000, &m));
    path.extend(drive(&mut s, ga, 20_000, &m));
    // trapezoid loop area
    let area: f64 = path
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum();
    let tau_a = m.skeleton_stress(ga);
    let h = area.abs() / (4.0 * std::f64::consts::PI * 0.5 * ga * tau_a);
    let oracle = hyperbolic_masing_damping(1.0);
    assert!((h / oracle - 1.0).abs() < 0.02, "loop damping {h} vs {oracle}");
}

#[test]
fn reversal_stiffens_the_point_tangent() {
    let m = soil();
    let tbl = SpringDirectionTable::standard();
    let mut springs = vec![SpringState::VIRGIN; SPRINGS_PER_POINT];
    let e = [0.0, 0.0, 0.0, 4e-3, 0.0, 0.0];
    let (d_load, _) = update_eval_point(&mut springs, &e, &m, tbl);
    let back = e.map(|v| -1e-9 * v);
    let (d_unload, _) = update_eval_point(&mut springs, &back, &m, tbl);
    for i in 3..6 {
        assert!(d_unload.0[i][i] > d_load.0[i][i]);
    }
}

#[test]
fn volumetric_part_is_linear() {
    let m = soil();
    let tbl = SpringDirectionTable::standard();
    let mut springs = vec![SpringState::VIRGIN; SPRINGS_PER_POINT];
    let (_, ds) = update_eval_point(&mut springs, &[1e-3, 1e-3, 1e-3, 0.0, 0.0, 0.0], &m, tbl);
    for s in &ds[..3] {
        assert!((s - 3e-3 * m.bulk).abs() < 1e-9 * m.bulk);
    }
    assert!(springs.iter().all(|s| s.gamma.abs() < 1e-18));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn periodic_strain_gives_periodic_stress(
        amps in prop::collection::vec(0.01f64..30.0, 2..6),
        cycles in 3usize..5,
    ) {
        let m = soil();
        let g = m.gamma_ref;
        // zero-mean path: each amplitude is visited with both signs
        let targets: Vec<f64> = amps.iter().flat_map(|a| [a * g, -a * g]).collect();
        let mut s = SpringState::VIRGIN;
        let mut ends: Vec<Vec<f64>> = Vec::new();
        for _ in 0..cycles {
            ends.push(targets.iter().map(|&t| { drive(&mut s, t, 13, &m); s.stress(&m) }).collect());
        }
        // the first cycle starts from the virgin state; later ones repeat
        for k in 2..cycles {
            for (a, b) in ends[k].iter().zip(&ends[k - 1]) {
                prop_assert!((a - b).abs() <= 1e-6 * m.tau_f(), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn decaying_cycles_follow_masing_branches(
        first in 0.05f64..20.0,
        ratios in prop::collection::vec(0.05f64..0.98, 1..10),
    ) {
        let m = soil();
        let g = m.gamma_ref;
        // reversal points of a decaying oscillation; each branch starts at the last one
        let mut tips = vec![first * g];
        for r in &ratios {
            let last = *tips.last().unwrap();
            tips.push(-r * last);
        }
        let mut s = SpringState::VIRGIN;
        drive(&mut s, tips[0], 11, &m);
        let mut oracle = m.skeleton_stress(tips[0]);
        for w in tips.windows(2) {
            drive(&mut s, w[1], 29, &m);
            oracle += 2.0 * m.skeleton_stress(0.5 * (w[1] - w[0]));
            prop_assert!((s.stress(&m) - oracle).abs() <= 1e-9 * m.tau_f(), "{} vs {oracle}", s.stress(&m));
        }
    }

    #[test]
    fn tangent_matches_central_difference(
        path in prop::collection::vec(-5.0f64..5.0, 1..6),
        extra in 0.01f64..0.5,
    ) {
        let m = soil();
        let g = m.gamma_ref;
        let mut s = SpringState::VIRGIN;
        for &p in &path {
            drive(&mut s, p * g, 7, &m);
        }
        // step on so the probe sits away from a reversal point
        let dir = if s.dir > 0 { 1.0 } else { -1.0 };
        s.update(dir * extra * g, &m);
        let eps = 1e-9;
        let (mut a, mut b) = (s, s);
        // two probes from the same state along the current direction
        a.update(dir * eps, &m);
        b.update(dir * 2.0 * eps, &m);
        let fd = (4.0 * a.stress(&m) - 3.0 * s.stress(&m) - b.stress(&m)) / (2.0 * dir * eps);
        let gt = s.tangent(&m);
        prop_assert!((fd - gt).abs() <= 1e-4 * gt.abs(), "fd {fd} vs {gt}");
    }

    #[test]
    fn stress_stays_bounded_by_the_asymptote(steps in prop::collection::vec(-4.0f64..4.0, 1..200)) {
        let m = soil();
        let mut s = SpringState::VIRGIN;
        for d in steps {
            s.update(d * m.gamma_ref, &m);
            prop_assert!(s.stress(&m).abs() <= m.tau_f());
            prop_assert!(s.gamma.abs() <= s.gamma_max);
            let h = s.damping(&m);
            prop_assert!((0.0..=m.h_max).contains(&h));
        }
    }

    #[test]
    fn spring_bytes_round_trip(
        gamma in -1.0f64..1.0, tau in -1.0f64..1.0, gr in -1.0f64..1.0, tr in -1e6f64..1e6,
        dir in prop::sample::select(vec![-1i32, 1]), skel in 0i32..2,
    ) {
        let s = SpringState { gamma, gamma_max: tau.abs(), gamma_rev: gr, tau_rev: tr, dir, skel };
        let mut buf = Vec::new();
        s.write_le(&mut buf);
        prop_assert_eq!(buf.len(), 40);
        prop_assert_eq!(SpringState::read_le(&buf).unwrap(), s);
    }

    #[test]
    fn point_tangent_is_symmetric_and_positive(e in prop::array::uniform6(-3e-3f64..3e-3)) {
        let m = soil();
        let tbl = SpringDirectionTable::standard();
        let mut springs = vec![SpringState::VIRGIN; SPRINGS_PER_POINT];
        update_eval_point(&mut springs, &e, &m, tbl);
        let d = point_tangent(&springs, &m, tbl);
        for i in 0..6 {
            prop_assert!(d.0[i][i] > 0.0);
            for j in 0..6 {
                prop_assert!((d.0[i][j] - d.0[j][i]).abs() <= 1e-9 * m.bulk);
            }
        }
    }
}
