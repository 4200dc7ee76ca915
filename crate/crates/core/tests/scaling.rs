mod common;

use common::*;
use flatstrip::pressure::PotentialSpec;
use flatstrip::scaling::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn fit_rejects_noise_free_prefactor() {
    let s: Vec<(f64, f64)> = (0..100).map(|i| 10f64.powf(i as f64 / 33.0)).map(|t| (t, 7.0 * (t + 1.0).powf(-0.4))).collect();
    let f = fit_loglog_exponent(&s, (1.0, 1e3)).unwrap();
    assert!((f.slope + 0.4).abs() < 1e-12);
    assert!(matches!(fit_loglog_exponent(&s, (1e4, 1e5)), Err(ScalingError::InsufficientData { .. })));
}

#[test]
fn bouncing_decay_at_t400() {
    let r = verify_decay_bounds(&power(2, 1.0), 2, Regime::Type1Bouncing, 400.0, 0.3, &DecayOptions::default()).unwrap();
    assert!(r.q_min.is_finite() && r.q_min >= 1.0);
    let rev = r.q_min_reversed.unwrap();
    assert!((rev - r.q_min).abs() / r.q_min < 1e-2, "time reversal: {rev} vs {}", r.q_min);
    assert!((r.t_ref - 200.0).abs() < 1e-6);
    let v = serde_json::to_value(&r).unwrap();
    for key in ["m", "regime", "Q_min", "fit_x", "fit_phi", "witness"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

#[test]
fn bouncing_exponents_far_from_the_ends() {
    let r = verify_decay_bounds(&power(2, 1.0), 2, Regime::Type1Bouncing, 2e5, 0.3, &DecayOptions::default()).unwrap();
    assert_eq!(r.window, (100.0, 1e4));
    assert!((r.fit_x.slope + 1.0).abs() < 0.05);
    assert!((r.fit_phi.slope + 2.0).abs() < 0.1);
}

#[test]
fn shadowing_regime_restricted_lower_bound() {
    let r = verify_decay_bounds(&sdependent(), 2, Regime::Type2Shadowing, 400.0, 0.3, &DecayOptions::default()).unwrap();
    assert!(r.q_min.is_finite());
    assert!(r.excluded_phi_lower.unwrap().is_finite());
    assert!(r.q_min_reversed.unwrap().is_finite());
}

#[test]
fn regime_must_match_model() {
    assert!(matches!(
        verify_decay_bounds(&power(2, 1.0), 2, Regime::Type2Shadowing, 400.0, 0.3, &DecayOptions::default()),
        Err(ScalingError::RegimeMismatch(..))
    ));
    assert!(verify_decay_bounds(&power(2, 1.0), 2, Regime::Type1Bouncing, -1.0, 0.3, &DecayOptions::default()).is_err());
}

#[test]
fn q_limit_reports_violation() {
    let opts = DecayOptions {
        q_limit: 1.0,
        ..Default::default()
    };
    assert!(matches!(
        verify_decay_bounds(&power(2, 1.0), 2, Regime::Type1Bouncing, 200.0, 0.3, &opts),
        Err(ScalingError::BoundViolated { .. })
    ));
}

#[test]
fn q0_matches_quadrature_oracle() {
    assert_eq!(lemma_q0(4.0, 0.5), std::f64::consts::PI);
    assert!((beta_tanh_sinh(0.5, 0.5) - std::f64::consts::PI).abs() < 1e-12);
    for (a, b) in [(4.0, 0.5), (3.0, 0.6), (5.0, 0.3), (2.5, 0.7)] {
        let oracle = beta_tanh_sinh(b, 1.0 - b).powf(1.0 / (a * b - 1.0));
        assert!((lemma_q0(a, b) - oracle).abs() < 1e-12 * oracle, "({a}, {b})");
    }
}

fn params(s: &Synthetic) -> LemmaParams {
    LemmaParams {
        alpha: s.alpha,
        beta: s.beta,
        q1: s.q1,
        q2: s.q2,
    }
}

#[test]
fn synthetic_instances_never_violate_the_conclusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..300 {
        let s = synthetic_lemma_instance(&mut rng, i % 2 == 0);
        let rep = check_ode_discont_lemma(&s.pieces, &params(&s)).unwrap_or_else(|e| panic!("instance {i}: {e}"));
        assert!(rep.upper_margin >= 1.0 - 1e-9);
        if rep.jumps == 0 {
            assert!(rep.lower_margin.unwrap() >= 1.0 - 1e-9);
        }
    }
}

#[test]
fn increasing_function_violates_hypothesis() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = synthetic_lemma_instance(&mut rng, false);
    let n = s.pieces[0].f.len();
    s.pieces[0].f[n / 2] = s.pieces[0].f[n / 2 - 1] * 1.01;
    assert!(matches!(
        check_ode_discont_lemma(&s.pieces, &params(&s)),
        Err(ScalingError::HypothesisViolated { .. })
    ));
}

#[test]
fn tightened_envelope_is_caught() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = synthetic_lemma_instance(&mut rng, false);
    let (q1, q2) = envelope_constants(&s.pieces, s.alpha, s.beta).unwrap();
    assert!(q1 >= s.q1 * (1.0 - 1e-12) && q2 <= s.q2 * (1.0 + 1e-12));
    let p = LemmaParams {
        q2: 0.5 * (q1 + q2),
        ..params(&s)
    };
    if q2 > q1 * (1.0 + 1e-6) {
        assert!(matches!(
            check_ode_discont_lemma(&s.pieces, &p),
            Err(ScalingError::HypothesisViolated { .. })
        ));
    }
}

#[test]
fn bounce_satisfies_lemma() {
    let model = power(2, 1.0);
    let ro = regime_orbit(&model, 2, Regime::Type1Bouncing, 400.0, 0.3, 1e-10).unwrap();
    let pc = bounce_as_lemma_input(&model, &ro.orbit, ro.t_ref, 400, 1e-11).unwrap();
    let pieces = [pc];
    let (q1, q2) = envelope_constants(&pieces, 4.0, 0.5).unwrap();
    let rep = check_ode_discont_lemma(
        &pieces,
        &LemmaParams {
            alpha: 4.0,
            beta: 0.5,
            q1,
            q2,
        },
    )
    .unwrap();
    assert!(rep.upper_margin >= 1.0 && rep.lower_margin.unwrap() >= 1.0);
}

#[test]
fn constant_potential_integrals_vanish() {
    let mut spec = PotentialSpec::power_law(0.0, 1.0, 1.5, 0.7, 0.3, 2).unwrap();
    spec.c = 0.0;
    let pert = Perturbations {
        count: 2,
        seed: 0,
        max_tries: 20,
    };
    let rep = key_inequality_integral(&power(2, 1.0), &spec, &[10.0, 50.0], 0.3, 0.02, &pert, 1e-9).unwrap();
    for row in &rep.rows {
        assert_eq!(row.shadow, 0.0);
        assert_eq!(row.min, 0.0);
    }
}

#[test]
fn doubling_t_keeps_q_min() {
    let ti = check_t_independence(&power(2, 1.0), 2, Regime::Type1Bouncing, 200.0, 0.3, &DecayOptions::default()).unwrap();
    assert!(ti.stable && ti.ratio < 1.01);
}

