mod common;

use common::*;
use flatstrip::geodesics::PhaseState;
use flatstrip::riccati::*;

#[test]
fn comparison_sandwich_on_parameter_grid() {
    for c in [0.5, 1.0, 2.0] {
        for m in [1u32, 2, 3] {
            let r = 0.5 * comparison_domain(c, m);
            let cv = solve_comparison_riccati(c, m, r).unwrap();
            for i in 0..cv.x.len() {
                assert!(cv.lower[i] <= cv.lambda[i] && cv.lambda[i] <= cv.upper[i], "C={c} m={m} x={}", cv.x[i]);
            }
        }
    }
}

#[test]
fn comparison_matches_rk4_oracle() {
    let cv = solve_comparison_riccati(1.0, 2, 0.5).unwrap();
    let oracle = rk4(|x, l| x * x - l * l, 0.0, 0.0, 0.5, 100_000);
    let got = *cv.lambda.last().unwrap();
    assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
    assert!(got > 0.5f64.powi(3) / 6.0 && got < 0.5f64.powi(3) / 3.0);
    for (i, &x) in cv.x.iter().enumerate().step_by(32) {
        let o = rk4(|x, l| x * x - l * l, 0.0, 0.0, x, 20_000);
        assert!((cv.lambda[i] - o).abs() < 1e-10);
    }
}

#[test]
fn comparison_rejects_wide_domain() {
    let r0 = comparison_domain(1.0, 2);
    assert!(matches!(
        solve_comparison_riccati(1.0, 2, 1.01 * r0),
        Err(RiccatiError::DomainTooWide { .. })
    ));
}

#[test]
fn unstable_limit_hosts() {
    let set = LimitSettings::default();
    let grid = [0.0, 1.0];
    let u = unstable_riccati_limit(&constant(1.0), &PhaseState::new(0.0, 0.2, 0.1), &grid, &set).unwrap();
    assert!((u.u[0] - 1.0).abs() < 1e-8);
    let u = unstable_riccati_limit(&power(2, 1.0), &PhaseState::new(0.0, 0.0, 0.0), &grid, &set).unwrap();
    assert!(u.u[0].abs() < 1e-6);
}

#[test]
fn constant_curvature_potential() {
    let set = LimitSettings::default();
    for k in [0.5, 1.0, 2.0] {
        for (x, phi) in [(0.0, 0.0), (0.2, -0.1), (-0.5, 0.4)] {
            let p = psi_u(&constant(k), &PhaseState::new(0.3, x, phi), &set).unwrap();
            assert!((p.psi_u + k).abs() < 1e-6, "k={k}: {}", p.psi_u);
            if k == 1.0 {
                assert!((p.gap_bound - 2.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn singular_vector_has_zero_potential() {
    let p = psi_u(&power(2, 1.0), &PhaseState::new(0.0, 0.0, 0.0), &LimitSettings::default()).unwrap();
    assert!(p.psi_u.abs() < 1e-6 && p.gap_bound.abs() < 1e-6);
}

#[test]
fn trace_bounds_closed_forms() {
    let (lo, hi) = trace_comparison_bounds(1.0, 1.0, 1.0, TraceCase::One, 2).unwrap();
    assert!((lo - 1f64.tanh()).abs() < 1e-12 && (hi - 1.0 / 1f64.tanh()).abs() < 1e-12);
    let (lo, hi) = trace_comparison_bounds(1.0, 1.0, 1e8, TraceCase::One, 2).unwrap();
    assert!(lo < 1e-7 && hi < 1e-7);
    let (lo, _) = trace_comparison_bounds(1.0, 1.0, 1.0, TraceCase::Two { k3: 1.0, big_k3: 2.0 }, 2).unwrap();
    assert!((lo - 0.5).abs() < 1e-15);
}

#[test]
fn scaling_envelope_and_density_stability() {
    let model = power(2, 1.0);
    let set = LimitSettings::default();
    let nb = Neighborhood {
        x_min: 1e-3,
        x_max: 1e-1,
        phi_max: 1e-2,
    };
    let a = scaling_check(&model, 2, &neighborhood_grid(&nb, 10, 20), &set).unwrap();
    assert_eq!(a.samples.len(), 200);
    assert!(a.q_low > 0.0 && a.q_high / a.q_low < 50.0);
    let b = scaling_check(&model, 2, &neighborhood_grid(&nb, 20, 20), &set).unwrap();
    assert!(((b.q_low - a.q_low) / a.q_low).abs() < 0.1);
    assert!(((b.q_high - a.q_high) / a.q_high).abs() < 0.1);
    assert!(matches!(
        scaling_check(&model, 2, &[(0.0, 0.0)], &set),
        Err(RiccatiError::DegenerateSample { .. })
    ));
}
