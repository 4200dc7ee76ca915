//! Runs one configured experiment and assembles its report.

use std::f64::consts::FRAC_PI_4;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, ExperimentKind, PotentialParams, SeedLayout};
use crate::geodesics::{
    classify_vector, clairaut_invariant, integrate, separated_preservation_check, shadow_map, GeodesicError,
    PhaseState,
};
use crate::geometry::{verify_curvature_order, EnvelopeQuantity, GeometryError, MetricModel, ProfileSpec};
use crate::pressure::{
    classify_potential_region, escape_time_l, gap_grid_search, gap_lower_bound, lambda_estimate, phi_norm,
    sing_pressure, PotentialSpec, PressureError, Region,
};
use crate::report::{emit_report, Report, Series, Status};
use crate::riccati::{
    comparison_domain, neighborhood_grid, psi_u, scaling_check, solve_comparison_riccati, LimitSettings,
    Neighborhood, RiccatiError,
};
use crate::scaling::{
    check_t_independence, key_inequality_integral, regime_orbit, sandwich_grid, verify_decay_bounds, DecayOptions,
    Perturbations, Regime, ScalingError,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure in `{stage}`: {message}")]
    Numerical { stage: String, message: String },
    #[error("bound violated in `{stage}`: {message}")]
    BoundViolation { stage: String, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical { .. } | RunError::Io(_) => 3,
            RunError::BoundViolation { .. } => 4,
        }
    }
}

/// Stage-named numerical failure.
fn numerical(stage: &str, e: impl std::fmt::Display) -> RunError {
    RunError::Numerical {
        stage: stage.into(),
        message: e.to_string(),
    }
}

/// Errors that signal a violated inequality rather than a failed
/// computation.
trait Classify {
    fn is_violation(&self) -> bool;
}

impl Classify for GeodesicError {
    fn is_violation(&self) -> bool {
        matches!(self, GeodesicError::SeparationViolated { .. } | GeodesicError::StripTooWide { .. })
    }
}

impl Classify for GeometryError {
    fn is_violation(&self) -> bool {
        matches!(self, GeometryError::OrderMismatch { .. })
    }
}

impl Classify for RiccatiError {
    fn is_violation(&self) -> bool {
        matches!(self, RiccatiError::SandwichViolated { .. })
    }
}

impl Classify for ScalingError {
    fn is_violation(&self) -> bool {
        match self {
            ScalingError::BoundViolated { .. } | ScalingError::ConclusionViolated { .. } => true,
            ScalingError::Geodesic(g) => g.is_violation(),
            _ => false,
        }
    }
}

impl Classify for PressureError {
    fn is_violation(&self) -> bool {
        match self {
            PressureError::Geodesic(g) => g.is_violation(),
            _ => false,
        }
    }
}

/// Routes a module error to the report (violations) or to a hard failure.
fn route<T, E: Classify + std::fmt::Display>(
    report: &mut Report,
    stage: &str,
    r: Result<T, E>,
) -> Result<Option<T>, RunError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_violation() => {
            report.violate(format!("{stage}: {e}"));
            Ok(None)
        }
        Err(e) => Err(numerical(stage, e)),
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
}

/// Validates, computes in a pool of the requested size, and writes the
/// report files. Returns the report and the directory written.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(Report, PathBuf), RunError> {
    let model = cfg.validate()?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let jobs = opts.jobs.or(cfg.jobs);
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("out/{}", cfg.experiment.name())));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| numerical("run", e))?;
    let report = pool.install(|| execute(cfg, &model, seed))?;
    emit_report(&out, &report)?;
    Ok((report, out))
}

/// Pure computation of the report; independent of thread count.
pub fn execute(cfg: &ExperimentConfig, model: &MetricModel, seed: u64) -> Result<Report, RunError> {
    let mut archived = cfg.clone();
    archived.out_dir = None;
    archived.jobs = None;
    archived.seed = seed;
    let mut report = Report {
        experiment: cfg.experiment.name().into(),
        seed,
        model: json!({
            "profile": model.profile(),
            "n": model.n(),
            "X": model.half_width(),
            "gamma0": model.period(),
            "hash": model.hash(),
        }),
        config: serde_json::to_value(&archived).map_err(|e| numerical("run", e))?,
        status: Status::Ok,
        violations: Vec::new(),
        result: Value::Null,
        series: Vec::new(),
        summary: Vec::new(),
    };
    match cfg.experiment {
        ExperimentKind::Curvature => curvature(cfg, model, &mut report)?,
        ExperimentKind::Geodesic => geodesic(cfg, model, &mut report)?,
        ExperimentKind::Shadow => shadow(cfg, model, &mut report)?,
        ExperimentKind::Riccati => riccati(cfg, model, &mut report)?,
        ExperimentKind::Decay => decay(cfg, model, &mut report)?,
        ExperimentKind::KeyInequality => key_inequality(cfg, model, &mut report)?,
        ExperimentKind::PressureGap => pressure_gap(cfg, model, &mut report)?,
        ExperimentKind::Lambda => lambda(cfg, model, seed, &mut report)?,
    }
    Ok(report)
}

fn curvature(cfg: &ExperimentConfig, model: &MetricModel, report: &mut Report) -> Result<(), RunError> {
    let p = cfg.curvature.as_ref().unwrap();
    let st = "curvature";
    let warped = model.is_s_independent();
    let mut series = Series::new(
        "curvature",
        "curvature along x at s = 0; K_sigma at the configured plane angle, Ric_vertical for theta = 0",
        &["x", "G", "G_x", "G_xx", "K_perp", "K_sigma", "Ric", "Ric_vertical", "principal"],
    );
    let mut max_k: f64 = f64::NEG_INFINITY;
    let mut max_ric: f64 = f64::NEG_INFINITY;
    for i in 0..p.grid {
        let x = p.x_min * (p.x_max / p.x_min).powf(i as f64 / (p.grid - 1) as f64);
        let w = model.eval_metric(0.0, x).map_err(|e| numerical(st, e))?;
        let kp = model.normal_curvature(0.0, x).map_err(|e| numerical(st, e))?;
        let pc = model.principal_curvatures(0.0, x).map_err(|e| numerical(st, e))?[0];
        let (ks, ric, ricv) = if warped {
            let a = model.sectional_and_ricci(x, p.theta).map_err(|e| numerical(st, e))?;
            let v = model.sectional_and_ricci(x, 0.0).map_err(|e| numerical(st, e))?;
            (a.k_sigma, a.ric, v.ric)
        } else {
            (f64::NAN, f64::NAN, kp)
        };
        max_k = max_k.max(kp);
        if ric.is_finite() {
            max_ric = max_ric.max(ric);
        }
        max_ric = max_ric.max(ricv);
        series.push(vec![x, w.g, w.gx, w.gxx, kp, ks, ric, ricv, pc]);
    }
    if max_k > 0.0 {
        report.violate(format!("{st}: K_perp = {max_k:e} > 0 on the grid"));
    }
    if max_ric > 0.0 {
        report.violate(format!("{st}: Ric = {max_ric:e} > 0 on the grid"));
    }
    let mut orders = Vec::new();
    if let Some(m) = model.profile().order() {
        for q in [
            EnvelopeQuantity::WarpExcess,
            EnvelopeQuantity::NormalCurvature,
            EnvelopeQuantity::VerticalRicci,
        ] {
            if let Some(env) = route(report, st, verify_curvature_order(model, m, q, (p.x_min, p.x_max), p.grid))? {
                report
                    .summary
                    .push(format!("order {m} {q:?}: C2_hat = {:.6e}, C1_hat = {:.6e}", env.c2_hat, env.c1_hat));
                orders.push(env);
            }
        }
    }
    report.summary.push(format!("max K_perp = {max_k:.6e}"));
    report.result = json!({
        "max_k_perp": max_k,
        "max_ric": max_ric,
        "order_envelopes": orders,
    });
    report.series.push(series);
    Ok(())
}

fn geodesic(cfg: &ExperimentConfig, model: &MetricModel, report: &mut Report) -> Result<(), RunError> {
    let p = cfg.geodesic.as_ref().unwrap();
    let st = "geodesic";
    let v = PhaseState::new(p.s, p.x, p.phi);
    let traj = integrate(model, &v, p.t_max, p.tol).map_err(|e| numerical(st, e))?;
    let mut series = Series::new(
        "trajectory",
        "accepted integrator steps; clairaut is G*cos(phi), NaN for s-dependent warps",
        &["tau", "s", "x", "phi", "clairaut"],
    );
    for q in &traj.samples {
        let c = clairaut_invariant(model, q).unwrap_or(f64::NAN);
        series.push(vec![q.tau, q.s, q.x, q.phi, c]);
    }
    let class = match p.r {
        Some(r) => Some(match classify_vector(model, &v, r, p.horizon) {
            Ok(c) => json!(c),
            Err(GeodesicError::Inconclusive(why)) => json!({ "inconclusive": why }),
            Err(e) => return Err(numerical(st, e)),
        }),
        None => None,
    };
    let end = traj.samples.last().copied().unwrap_or(v);
    report.summary.push(format!(
        "integrated to tau = {:.6e} in {} steps; clairaut drift = {}",
        end.tau,
        traj.samples.len().saturating_sub(1),
        traj.clairaut_drift.map_or("n/a".into(), |d| format!("{d:.3e}"))
    ));
    report.result = json!({
        "end": end,
        "events": traj.events,
        "clairaut_drift": traj.clairaut_drift,
        "tol": traj.tol,
        "steps": traj.samples.len().saturating_sub(1),
        "classification": class,
    });
    report.series.push(series);
    Ok(())
}

fn shadow(cfg: &ExperimentConfig, model: &MetricModel, report: &mut Report) -> Result<(), RunError> {
    let p = cfg.shadow.as_ref().unwrap();
    let st = "shadow";
    let Some(sh) = route(report, st, shadow_map(model, p.s0, p.t, p.r, p.tol))? else {
        report.result = Value::Null;
        return Ok(());
    };
    let times: Vec<f64> = (0..p.samples).map(|i| p.t * i as f64 / (p.samples - 1) as f64).collect();
    let path = sh.orbit.sample(model, &times, 1e-12).map_err(|e| numerical(st, e))?;
    let mut series = Series::new("shadow", "shadowing orbit on a uniform time grid", &["tau", "s", "x", "phi"]);
    for q in &path {
        series.push(vec![q.tau, q.s, q.x, q.phi]);
    }
    let min_second_diff = path
        .windows(3)
        .map(|w| w[0].x - 2.0 * w[1].x + w[2].x)
        .fold(f64::INFINITY, f64::min);
    let min_x = path.iter().map(|q| q.x).fold(f64::INFINITY, f64::min);
    let max_angle = path.iter().map(|q| q.phi.abs()).fold(0.0, f64::max);
    if min_second_diff < -1e-8 {
        report.violate(format!("{st}: x is not convex (second difference {min_second_diff:e})"));
    }
    if min_x <= 0.0 && matches!(model.profile(), ProfileSpec::Power { .. } | ProfileSpec::CappedPower { .. }) {
        report.violate(format!("{st}: x reaches {min_x:e} on a bouncing orbit"));
    }
    if max_angle >= FRAC_PI_4 {
        report.violate(format!("{st}: |phi| reaches {max_angle} >= pi/4"));
    }
    let symmetry = model.is_s_independent().then(|| {
        path.iter()
            .zip(path.iter().rev())
            .map(|(a, b)| (a.x - b.x).abs())
            .fold(0.0, f64::max)
    });
    let mut separation = None;
    if let Some(n) = p.separation_seeds {
        let delta = p.delta.unwrap_or(model.period() / 16.0);
        let seeds: Vec<f64> = (0..n).map(|i| model.period() * i as f64 / n as f64).collect();
        separation = route(report, st, separated_preservation_check(model, &seeds, p.t, delta, p.r))?;
    }
    report.summary.push(format!(
        "phi_w = {:.16e}, residual = {:.3e}, turning time = {:.6e}, min x = {:.6e}",
        sh.w.phi, sh.residual, sh.t_turn, min_x
    ));
    report.result = json!({
        "shadow": sh,
        "min_second_difference": min_second_diff,
        "min_x": min_x,
        "max_abs_phi": max_angle,
        "symmetry_defect": symmetry,
        "separation": separation,
    });
    report.series.push(series);
    Ok(())
}

fn riccati(cfg: &ExperimentConfig, model: &MetricModel, report: &mut Report) -> Result<(), RunError> {
    let p = cfg.riccati.as_ref().unwrap();
    let st = "riccati";
    let mut result = serde_json::Map::new();
    if let Some(c) = &p.comparison {
        let r = c.r.unwrap_or(0.5 * comparison_domain(c.c, c.m));
        if let Some(curve) = route(report, st, solve_comparison_riccati(c.c, c.m, r))? {
            let mut s = Series::new(
                "comparison",
                "comparison Riccati solution with its sandwich",
                &["x", "lambda", "lower", "upper"],
            );
            for i in 0..curve.x.len() {
                s.push(vec![curve.x[i], curve.lambda[i], curve.lower[i], curve.upper[i]]);
            }
            report.summary.push(format!(
                "comparison C = {}, m = {}, R = {:.6e}: lambda(R) = {:.16e}",
                c.c,
                c.m,
                r,
                curve.lambda[curve.lambda.len() - 1]
            ));
            result.insert("comparison".into(), json!({ "C": c.c, "m": c.m, "R": r, "lambda_R": curve.lambda.last() }));
            report.series.push(s);
        }
    }
    if let (Some(x_min), Some(x_max), Some(phi_max)) = (p.x_min, p.x_max, p.phi_max) {
        let nb = Neighborhood { x_min, x_max, phi_max };
        let pts = neighborhood_grid(&nb, p.nx, p.nphi);
        let set = LimitSettings::default();
        let mut s = Series::new(
            "psi_u",
            "psi_u field near the flat torus; ratio is -psi_u/(|x|^(m/2)+|phi|^(m/(m+2)))",
            &["x", "phi", "psi_u", "gap_bound", "ratio"],
        );
        match model.profile().order() {
            Some(m) => {
                let env = scaling_check(model, m, &pts, &set).map_err(|e| numerical(st, e))?;
                for q in &env.samples {
                    s.push(vec![q.x, q.phi, q.psi_u, q.gap_bound, q.ratio]);
                }
                let spread = env.q_high / env.q_low;
                if !(env.q_low > 0.0 && spread.is_finite() && spread < p.max_ratio) {
                    report.violate(format!(
                        "{st}: scaling envelope [{:e}, {:e}] exceeds ratio {}",
                        env.q_low, env.q_high, p.max_ratio
                    ));
                }
                report
                    .summary
                    .push(format!("scaling envelope Q_low = {:.6e}, Q_high = {:.6e}", env.q_low, env.q_high));
                result.insert("scaling".into(), json!({ "m": m, "Q_low": env.q_low, "Q_high": env.q_high, "samples": env.samples.len() }));
            }
            None => {
                let rows: Vec<(f64, f64, f64, f64)> = pts
                    .par_iter()
                    .map(|&(x, phi)| {
                        psi_u(model, &PhaseState::new(0.0, x, phi), &set).map(|q| (x, phi, q.psi_u, q.gap_bound))
                    })
                    .collect::<Result<_, _>>()
                    .map_err(|e| numerical(st, e))?;
                let (lo, hi) = rows
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.2), b.max(r.2)));
                for r in &rows {
                    s.push(vec![r.0, r.1, r.2, r.3, f64::NAN]);
                }
                report.summary.push(format!("psi_u in [{lo:.16e}, {hi:.16e}]"));
                result.insert("psi_range".into(), json!([lo, hi]));
            }
        }
        report.series.push(s);
    }
    report.result = Value::Object(result);
    Ok(())
}

fn decay_regime(model: &MetricModel) -> Regime {
    if model.is_s_independent() {
        Regime::Type1Bouncing
    } else {
        Regime::Type2Shadowing
    }
}

fn decay(cfg: &ExperimentConfig, model: &MetricModel, report: &mut Report) -> Result<(), RunError> {
    let p = cfg.decay.as_ref().unwrap();
    let st = "decay";
    let regime = cfg.regime()?;
    let m = model.profile().order().unwrap();
    let opts = DecayOptions {
        tol: p.tol,
        window: p.window.map(|w| (w[0], w[1])),
        q_limit: p.q_limit,
        ..Default::default()
    };
    let (rep, doubled) = if p.check_doubling {
        match route(report, st, check_t_independence(model, m, regime, p.t, p.r, &opts))? {
            Some(ti) => {
                if !ti.stable {
                    report.violate(format!(
                        "{st}: Q_min changes by a factor {:.3} from t = {} to {}",
                        ti.ratio,
                        p.t,
                        2.0 * p.t
                    ));
                }
                (Some(ti.at_t.clone()), Some(ti))
            }
            None => (None, None),
        }
    } else {
        (route(report, st, verify_decay_bounds(model, m, regime, p.t, p.r, &opts))?, None)
    };
    if let Some(rep) = &rep {
        let ro = regime_orbit(model, m, regime, p.t, p.r, p.tol).map_err(|e| numerical(st, e))?;
        let grid = sandwich_grid(ro.end, 1000);
        let path = ro.orbit.sample(model, &grid, p.tol.min(1e-10)).map_err(|e| numerical(st, e))?;
        let mut s = Series::new("decay", "orbit samples on the sandwich grid", &["tau", "x", "phi"]);
        for q in &path {
            s.push(vec![q.tau, q.x, q.phi]);
        }
        report.series.push(s);
        report.summary.push(format!(
            "{:?}: Q_min = {:.6e} at tau = {:.6e}; fit_x = {:.6} +- {:.1e}; fit_phi = {:.6} +- {:.1e}",
            regime, rep.q_min, rep.witness, rep.fit_x.slope, rep.fit_x.stderr, rep.fit_phi.slope, rep.fit_phi.stderr
        ));
    }
    report.result = json!({
        "report": rep,
        "doubling": doubled.map(|d| json!({ "Q_min_2t": d.at_2t.q_min, "ratio": d.ratio, "stable": d.stable })),
    });
    Ok(())
}

fn potential_spec(p: &PotentialParams, r: f64, m: u32) -> Result<PotentialSpec, RunError> {
    PotentialSpec::power_law(p.c0, p.c, p.a, p.b, p.r_cut.unwrap_or(r), m)
        .map_err(|e| RunError::Config(ConfigError::new("potential", e.to_string())))
}

fn key_inequality(cfg: &ExperimentConfig, model: &MetricModel, report: &mut Report) -> Result<(), RunError> {
    let p = cfg.key_inequality.as_ref().unwrap();
    let st = "key-inequality";
    let m = model.profile().order().unwrap_or(2);
    let spec = potential_spec(&p.potential, p.r, m)?;
    let pert = Perturbations {
        count: p.perturbations,
        seed: cfg.seed,
        max_tries: 20,
    };
    let ki = key_inequality_integral(model, &spec, &p.t_list, p.r, p.delta, &pert, p.tol)
        .map_err(|e| numerical(st, e))?;
    let region = classify_potential_region(spec.a, spec.b, m);
    if region == Region::HasGap && !ki.bounded {
        report.violate(format!("{st}: integrals vary by {:.3} between the two largest t", ki.variation));
    }
    let mut s = Series::new(
        "key_inequality",
        "potential integrals per segment length",
        &["t", "shadow", "min", "accepted", "rejected"],
    );
    for r in &ki.rows {
        s.push(vec![r.t, r.shadow, r.min, r.perturbed.len() as f64, r.rejected as f64]);
    }
    report.series.push(s);
    report.summary.push(format!(
        "region {:?}: lower envelope = {:.6e}, variation = {:.4}, slope vs ln t = {:.4}, bounded = {}",
        region, ki.lower_envelope, ki.variation, ki.log_slope, ki.bounded
    ));
    report.result = json!({ "region": region, "spec": spec, "report": ki });
    Ok(())
}

fn pressure_gap(cfg: &ExperimentConfig, model: &MetricModel, report: &mut Report) -> Result<(), RunError> {
    let p = cfg.pressure_gap.as_ref().unwrap();
    let st = "pressure-gap";
    let m = model.profile().order().unwrap();
    let spec = potential_spec(&p.potential, p.r, m)?;
    let region = classify_potential_region(spec.a, spec.b, m);
    if region != Region::HasGap {
        report.summary.push(format!("region {region:?}: no certificate is issued"));
        report.result = json!({ "region": region, "spec": spec, "certificate": null });
        return Ok(());
    }
    let pert = Perturbations {
        count: p.perturbations,
        seed: cfg.seed,
        max_tries: 20,
    };
    let ki = key_inequality_integral(model, &spec, &p.t_list, p.r, p.delta, &pert, p.tol)
        .map_err(|e| numerical("key-inequality", e))?;
    if !ki.bounded {
        report.violate(format!(
            "key-inequality: integrals vary by {:.3} between the two largest t",
            ki.variation
        ));
        report.result = json!({ "region": region, "spec": spec, "key_inequality": ki, "certificate": null });
        return Ok(());
    }
    let regime = decay_regime(model);
    let decay_opts = DecayOptions {
        tol: p.tol,
        ..Default::default()
    };
    let dr = verify_decay_bounds(model, m, regime, p.escape_t_list[0], p.r, &decay_opts);
    let Some(dr) = route(report, "decay", dr)? else {
        report.result = json!({ "region": region, "spec": spec, "certificate": null });
        return Ok(());
    };
    let eps = p.eps.unwrap_or(0.5 * p.r);
    let s0: Vec<f64> = (0..p.escape_seeds)
        .map(|i| model.period() * i as f64 / p.escape_seeds as f64)
        .collect();
    let esc = escape_time_l(model, eps, p.r, &p.escape_t_list, &s0, Some((dr.q_x_upper, m)), p.tol)
        .map_err(|e| numerical("escape", e))?;
    let c_key = (-ki.lower_envelope).max(0.0);
    let norm = phi_norm(&spec, model);
    let mut cert = gap_lower_bound(c_key, norm, p.transition_time, esc.l).map_err(|e| numerical(st, e))?;
    cert.model_hash = Some(model.hash());
    cert.spec = Some(spec);
    let (alpha_grid, gap_grid) = gap_grid_search(cert.c, cert.xi, 100_001);
    if !(cert.gap > 0.0) {
        report.violate(format!("{st}: gap = {:e} is not positive", cert.gap));
    }
    report.summary.push(format!(
        "gap = {:.16e} (xi = {:.6e}, c = {:.6e}, alpha_opt = {:.6e}); grid search gap = {:.16e}",
        cert.gap, cert.xi, cert.c, cert.alpha_opt, gap_grid
    ));
    report.summary.push(format!(
        "L = {:.6e} (predicted {:.6e}), C_key = {:.6e}, phi_norm = {:.6e}, P(Sing) = {}",
        esc.l,
        esc.predicted.unwrap_or(f64::NAN),
        c_key,
        norm,
        sing_pressure(&spec)
    ));
    report.result = json!({
        "region": region,
        "spec": spec,
        "key_inequality": ki,
        "decay": dr,
        "escape": esc,
        "sing_pressure": sing_pressure(&spec),
        "certificate": cert,
        "grid_search": { "alpha": alpha_grid, "gap": gap_grid },
    });
    Ok(())
}

fn lambda_seeds(cfg: &ExperimentConfig, model: &MetricModel, seed: u64) -> Vec<PhaseState> {
    let p = cfg.lambda.as_ref().unwrap();
    let g0 = model.period();
    let lin = |n: usize, half: f64, i: usize| {
        if n == 1 {
            0.0
        } else {
            -half + 2.0 * half * i as f64 / (n - 1) as f64
        }
    };
    match p.layout {
        SeedLayout::Sing => (0..p.n_s)
            .map(|i| PhaseState::new(g0 * i as f64 / p.n_s as f64, 0.0, 0.0))
            .collect(),
        SeedLayout::Grid => {
            let mut out = Vec::with_capacity(p.n_s * p.n_x * p.n_phi);
            for i in 0..p.n_s {
                for j in 0..p.n_x {
                    for k in 0..p.n_phi {
                        out.push(PhaseState::new(
                            g0 * i as f64 / p.n_s as f64,
                            lin(p.n_x, p.x_max, j),
                            lin(p.n_phi, p.phi_max, k),
                        ));
                    }
                }
            }
            out
        }
        SeedLayout::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..p.n_s * p.n_x * p.n_phi)
                .map(|_| {
                    let s = rng.gen_range(0.0..g0);
                    let x = if p.x_max > 0.0 { rng.gen_range(-p.x_max..=p.x_max) } else { 0.0 };
                    let phi = if p.phi_max > 0.0 { rng.gen_range(-p.phi_max..=p.phi_max) } else { 0.0 };
                    PhaseState::new(s, x, phi)
                })
                .collect()
        }
    }
}

fn lambda(cfg: &ExperimentConfig, model: &MetricModel, seed: u64, report: &mut Report) -> Result<(), RunError> {
    let p = cfg.lambda.as_ref().unwrap();
    let st = "lambda";
    let spec = potential_spec(&p.potential, model.half_width(), model.profile().order().unwrap_or(2))?;
    let seeds = lambda_seeds(cfg, model, seed);
    let est = lambda_estimate(model, &spec, p.delta, p.t, &seeds, p.tol).map_err(|e| numerical(st, e))?;
    let mut s = Series::new("separated_set", "greedily selected seeds", &["index", "s", "x", "phi"]);
    for &i in &est.selected {
        s.push(vec![i as f64, seeds[i].s, seeds[i].x, seeds[i].phi]);
    }
    report.series.push(s);
    report.summary.push(format!(
        "count = {} of {} seeds ({} dropped), P_hat = {:.16e}, P(Sing) = {}",
        est.count,
        seeds.len(),
        est.dropped,
        est.p_hat,
        sing_pressure(&spec)
    ));
    report.result = json!({ "estimate": est, "sing_pressure": sing_pressure(&spec), "seeds": seeds.len() });
    Ok(())
}
