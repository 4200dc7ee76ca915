mod common;

use common::*;
use flatstrip::geometry::*;
use proptest::prelude::*;

/// Central differences of `G` at `(s, x)`.
fn fd(model: &MetricModel, s: f64, x: f64, h: f64) -> (f64, f64) {
    let g = |x: f64| model.eval_metric(s, x).unwrap().g;
    ((g(x + h) - g(x - h)) / (2.0 * h), (g(x + h) - 2.0 * g(x) + g(x - h)) / (h * h))
}

#[test]
fn flat_constant_curvature_values() {
    assert_eq!(flat().eval_metric(0.3, -0.7).unwrap(), Warp { g: 1.0, gx: 0.0, gxx: 0.0 });
    let w = constant(1.0).eval_metric(0.0, 0.0).unwrap();
    assert_eq!((w.g, w.gx, w.gxx), (1.0, 0.0, 1.0));
    for x in [-0.8, 0.0, 0.4] {
        assert!((constant(1.0).normal_curvature(0.0, x).unwrap() + 1.0).abs() < 1e-15);
    }
    assert!((constant(1.0).principal_curvatures(0.0, 1.0).unwrap()[0] - 1f64.tanh()).abs() < 1e-15);
}

#[test]
fn power_hand_values() {
    let m = power(2, 1.0);
    assert!((m.normal_curvature(0.0, 0.1).unwrap() + 0.12 / 1.0001).abs() < 1e-15);
    assert!((m.principal_curvatures(0.0, 0.5).unwrap()[0] - 0.5 / 1.0625).abs() < 1e-15);
    let m3 = MetricModel::new(ProfileSpec::Power { m: 2, c: 1.0 }, 3, 1.0, 1.0).unwrap();
    let a = m3.sectional_and_ricci(0.1, 0.0).unwrap();
    assert!((a.ric - 2.0 * a.k_perp).abs() < 1e-15);
    assert!((a.ric + 0.239976).abs() < 1e-6);
    let b = m.sectional_and_ricci(0.3, std::f64::consts::FRAC_PI_2).unwrap();
    let w = m.eval_metric(0.0, 0.3).unwrap();
    assert!((b.k_sigma + (w.gx / w.g).powi(2)).abs() < 1e-15);
    assert_eq!(b.ric, b.k_perp);
}

#[test]
fn derivatives_match_finite_differences() {
    let models = [
        power(2, 1.0),
        power(3, 0.7),
        constant(2.0),
        sdependent(),
        MetricModel::new(ProfileSpec::CappedPower { m: 2, c: 1.0, x_cap: 0.5 }, 2, 1.0, 1.0).unwrap(),
    ];
    for model in &models {
        for s in [0.0, 0.2, 0.55] {
            for x in [-0.7, -0.3, 0.05, 0.45, 0.52, 0.9] {
                let w = model.eval_metric(s, x).unwrap();
                let (d1, d2) = fd(model, s, x, 1e-4);
                assert!((w.gx - d1).abs() < 1e-6 * (1.0 + d1.abs()), "{model:?} {x}");
                assert!((w.gxx - d2).abs() < 1e-4 * (1.0 + d2.abs()), "{model:?} {x}");
            }
        }
    }
}

#[test]
fn cap_matches_two_derivatives_at_junction() {
    let model = MetricModel::new(ProfileSpec::CappedPower { m: 2, c: 1.0, x_cap: 0.5 }, 2, 1.0, 1.0).unwrap();
    let a = model.eval_metric(0.0, 0.5 - 1e-12).unwrap();
    let b = model.eval_metric(0.0, 0.5 + 1e-12).unwrap();
    assert!((a.g - b.g).abs() < 1e-10);
    assert!((a.gx - b.gx).abs() < 1e-10);
    assert!((a.gxx - b.gxx).abs() < 1e-9);
    for x in [0.55, 0.7, 0.95] {
        assert!(model.normal_curvature(0.0, x).unwrap() < 0.0);
    }
}

#[test]
fn order_certificates() {
    let m = power(2, 1.0);
    let env = verify_curvature_order(&m, 2, EnvelopeQuantity::NormalCurvature, (0.01, 0.3), 64).unwrap();
    assert!(env.c2_hat >= 12.0 / (1.0 + 0.3f64.powi(4)) - 1e-9);
    assert!(env.c1_hat <= 12.0 + 1e-9);
    assert!(matches!(
        verify_curvature_order(&m, 4, EnvelopeQuantity::NormalCurvature, (0.01, 0.3), 64),
        Err(GeometryError::OrderMismatch { m: 4, .. })
    ));
    assert!(matches!(
        verify_curvature_order(&flat(), 2, EnvelopeQuantity::WarpExcess, (0.01, 0.3), 64),
        Err(GeometryError::OrderMismatch { .. })
    ));
}

proptest! {
    #[test]
    fn power_is_even_and_nonpositively_curved(m in 1u32..6, c in 0.1f64..3.0, x in -0.99f64..0.99, s in -5.0f64..5.0) {
        let model = power(m, c);
        let a = model.eval_metric(s, x).unwrap();
        let b = model.eval_metric(s + 1.0, -x).unwrap();
        prop_assert_eq!(a.g, b.g);
        prop_assert_eq!(a.gx, -b.gx);
        prop_assert_eq!(a.gxx, b.gxx);
        prop_assert!(a.g >= 1.0);
        prop_assert!(model.normal_curvature(s, x).unwrap() <= 0.0);
    }

    #[test]
    fn sectional_interpolates(x in 0.01f64..0.9, theta in 0.0f64..1.57) {
        let model = MetricModel::new(ProfileSpec::Power { m: 2, c: 1.0 }, 4, 1.0, 1.0).unwrap();
        let k = model.sectional_and_ricci(x, theta).unwrap();
        let lo = model.sectional_and_ricci(x, 0.0).unwrap().k_sigma;
        let hi = model.sectional_and_ricci(x, std::f64::consts::FRAC_PI_2).unwrap().k_sigma;
        prop_assert!(k.k_sigma <= lo.max(hi) + 1e-15 && k.k_sigma >= lo.min(hi) - 1e-15);
        prop_assert!(k.ric <= 0.0);
    }
}
