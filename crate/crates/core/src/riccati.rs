//! Scalar Riccati equations for unstable Jacobi data, the auxiliary
//! potential `ψᵘ` and the comparison bounds that control it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesics::{flow, no_aux, FlowSpec, GeodesicError, PhaseState};
use crate::geometry::{curvature_from_warp, GeometryError, MetricModel};
use crate::ode::{Control, OdeError, Solver};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiccatiError {
    #[error("R = {r} exceeds the comparison domain R0 = {r0}")]
    DomainTooWide { r: f64, r0: f64 },
    #[error("sandwich violated at x = {x}: {lower:e} <= {value:e} <= {upper:e} fails")]
    SandwichViolated { x: f64, value: f64, lower: f64, upper: f64 },
    #[error("backward limit not converged: u(0) = {u_prev:e} then {u_last:e} at lookback {t_back:e}")]
    NotConverged { u_prev: f64, u_last: f64, t_back: f64 },
    #[error("Riccati solution left [0, inf) at lookback {t_back:e}")]
    BlowUp { t_back: f64 },
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("degenerate sample at x = {x}, phi = {phi}")]
    DegenerateSample { x: f64, phi: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error("integration failed: {0}")]
    Ode(#[from] OdeError),
}

pub type Result<T> = std::result::Result<T, RiccatiError>;

/// Solution of `λ′ + λ² − Cx^m = 0`, `λ(0) = 0`, with its sandwich.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCurve {
    pub c: f64,
    pub m: u32,
    pub r: f64,
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// `((m+1)²/(2C))^(1/(m+2))`.
pub fn comparison_domain(c: f64, m: u32) -> f64 {
    let mf = m as f64;
    ((mf + 1.0).powi(2) / (2.0 * c)).powf(1.0 / (mf + 2.0))
}

const COMPARISON_GRID: usize = 257;

/// Works with the scaled deficit `p = 1 − λ(m+1)/(Cx^(m+1))`, which obeys
/// `p′ = −(m+1)p/x + Cx^(m+1)(1−p)²/(m+1)` and starts as
/// `p ≈ Cx^(m+2)/((m+1)(2m+3))`. The sandwich is `0 ≤ p ≤ 1/2`, so both
/// margins are resolved to full relative precision even near 0.
pub fn solve_comparison_riccati(c: f64, m: u32, r: f64) -> Result<ComparisonCurve> {
    if !(c >= 0.0 && c.is_finite()) || m == 0 || !(r > 0.0) {
        return Err(RiccatiError::InvalidInput(format!("C = {c}, m = {m}, R = {r}")));
    }
    let xs: Vec<f64> = (0..COMPARISON_GRID)
        .map(|i| r * i as f64 / (COMPARISON_GRID - 1) as f64)
        .collect();
    if c == 0.0 {
        let z = vec![0.0; xs.len()];
        return Ok(ComparisonCurve {
            c,
            m,
            r,
            x: xs,
            lambda: z.clone(),
            lower: z.clone(),
            upper: z,
        });
    }
    let r0 = comparison_domain(c, m);
    if r > r0 {
        return Err(RiccatiError::DomainTooWide { r, r0 });
    }
    let mf = m as f64;
    let x0 = r * 1e-6;
    let p0 = c * x0.powf(mf + 2.0) / ((mf + 1.0) * (2.0 * mf + 3.0));
    let rhs = |x: f64, p: &[f64; 1]| [-(mf + 1.0) * p[0] / x + c * x.powf(mf + 1.0) * (1.0 - p[0]).powi(2) / (mf + 1.0)];
    let mut ps = vec![0.0; xs.len()];
    let mut k = 1;
    let solver = Solver::new(1e-13).with_atol(1e-300);
    solver.run(&rhs, x0, [p0], r, |st| {
        while k < xs.len() && xs[k] <= st.t1 {
            ps[k] = st.eval(xs[k])[0];
            k += 1;
        }
        Control::Continue
    })?;
    let mut curve = ComparisonCurve {
        c,
        m,
        r,
        x: xs.clone(),
        lambda: Vec::with_capacity(xs.len()),
        lower: Vec::with_capacity(xs.len()),
        upper: Vec::with_capacity(xs.len()),
    };
    for (x, p) in xs.iter().zip(&ps) {
        let up = c * x.powf(mf + 1.0) / (mf + 1.0);
        let lam = up * (1.0 - p);
        curve.lambda.push(lam);
        curve.lower.push(0.5 * up);
        curve.upper.push(up);
        if !(*p >= 0.0 && *p <= 0.5) {
            return Err(RiccatiError::SandwichViolated {
                x: *x,
                value: lam,
                lower: 0.5 * up,
                upper: up,
            });
        }
    }
    Ok(curve)
}

/// Limit solution of `u′ = −u² − K(γ(τ))` along a geodesic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiCurve {
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
    pub converged: bool,
    pub t_back: f64,
    /// Largest `|u′ + u² + K|` found on the grid by finite differences.
    pub residual: f64,
}

/// Settings of the backward-seed limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitSettings {
    pub t_back: f64,
    pub u_seed: f64,
    pub t_max: f64,
    /// Convergence threshold on `|Δu(0)|` between lookbacks `T` and `2T`.
    pub threshold: f64,
    pub tol: f64,
}

impl Default for LimitSettings {
    fn default() -> Self {
        LimitSettings {
            t_back: 10.0,
            u_seed: 1e3,
            t_max: 1e9,
            threshold: 1e-8,
            tol: 1e-12,
        }
    }
}

/// Replay checkpoints on `[−t_back, 0]`, ascending: geometric with ratio
/// `2^(1/4)` down to `τ = −1`, then uniform with spacing `1/4`.
fn checkpoints(t_back: f64) -> Vec<f64> {
    let mut out = vec![0.0, -0.25, -0.5, -0.75];
    let mut t = 1.0;
    while t < t_back {
        out.push(-t);
        t *= 2f64.powf(0.25);
    }
    out.push(-t_back);
    out.reverse();
    out.dedup();
    out
}

/// `u(0)` of the unstable limit solution along the geodesic through `v`,
/// forced by `curv(s, x, φ)`. Doubles the lookback until `u(0)` settles and
/// returns it with the lookback used.
pub fn riccati_limit_with<K>(model: &MetricModel, v: &PhaseState, set: &LimitSettings, curv: K) -> Result<(f64, f64)>
where
    K: Fn(f64, f64, f64) -> f64 + Sync,
{
    if !(set.u_seed >= 0.0 && set.t_back > 0.0) {
        return Err(RiccatiError::InvalidInput(format!(
            "u_seed = {}, t_back = {}",
            set.u_seed, set.t_back
        )));
    }
    // The past of `v` is taken from a backward pass and then replayed
    // forward segment by segment from checkpoints. A single forward pass
    // from the far end would drift off the host near the asymptotic set.
    let once = |t_back: f64| -> Result<f64> {
        let ck = checkpoints(t_back);
        let back_times: Vec<f64> = ck.iter().rev().cloned().collect();
        let spec = FlowSpec {
            outputs: &back_times,
            ..Default::default()
        };
        let back = flow(model, set.tol, 0.0, [v.s, v.x, v.phi], 0.0, -t_back, &spec, no_aux)?;
        let states: Vec<[f64; 3]> = back.outputs.iter().rev().map(|(p, _)| [p.s, p.x, p.phi]).collect();
        let aux = |_t: f64, y: &[f64], u: f64| -u * u - curv(y[0], y[1], y[2]);
        let mut u = set.u_seed;
        for k in 0..ck.len() - 1 {
            let seg = flow(model, set.tol, ck[k], states[k], u, ck[k + 1], &FlowSpec::default(), aux)?;
            u = seg.aux;
            if !(u.is_finite() && u >= -1e-12) {
                return Err(RiccatiError::BlowUp { t_back });
            }
        }
        Ok(u.max(0.0))
    };
    let mut t = set.t_back;
    let mut prev = once(t)?;
    loop {
        let nt = 2.0 * t;
        let cur = once(nt)?;
        if (cur - prev).abs() < set.threshold {
            return Ok((cur, nt));
        }
        if nt > set.t_max {
            return Err(RiccatiError::NotConverged {
                u_prev: prev,
                u_last: cur,
                t_back: nt,
            });
        }
        prev = cur;
        t = nt;
    }
}

/// The unstable Riccati solution along the surface geodesic through `v`,
/// sampled on `grid` (times `≥ 0`, ascending).
pub fn unstable_riccati_limit(
    model: &MetricModel,
    v: &PhaseState,
    grid: &[f64],
    set: &LimitSettings,
) -> Result<RiccatiCurve> {
    model.eval_metric(v.s, v.x)?;
    let curv = |s: f64, x: f64| model.surface_curvature(s, x);
    let (u0, t_back) = riccati_limit_with(model, v, set, |s, x, _| curv(s, x))?;
    let mut times: Vec<f64> = grid.iter().cloned().filter(|t| *t >= 0.0).collect();
    if times.first() != Some(&0.0) {
        times.insert(0, 0.0);
    }
    let aux = |_t: f64, y: &[f64], u: f64| -u * u - curv(y[0], y[1]);
    let spec = FlowSpec {
        outputs: &times,
        ..Default::default()
    };
    let t_end = *times.last().unwrap();
    let fr = flow(model, set.tol, 0.0, [v.s, v.x, v.phi], u0, t_end, &spec, aux)?;
    let u: Vec<f64> = fr.outputs.iter().map(|p| p.1).collect();
    if u.iter().any(|x| !(x.is_finite() && *x >= -1e-12)) {
        return Err(RiccatiError::BlowUp { t_back });
    }
    // residual check by centered differences on the sampled curve
    let mut residual: f64 = 0.0;
    for i in 1..times.len().saturating_sub(1) {
        let (ta, tb) = (times[i - 1], times[i + 1]);
        if tb - ta > 1e-2 {
            continue;
        }
        let du = (u[i + 1] - u[i - 1]) / (tb - ta);
        let st = fr.outputs[i].0;
        let r = (du + u[i] * u[i] + curv(st.s, st.x)).abs();
        residual = residual.max(r);
    }
    Ok(RiccatiCurve {
        grid: times,
        u,
        converged: true,
        t_back,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSample {
    pub psi_u: f64,
    pub gap_bound: f64,
    pub lambda_reg: f64,
    pub ric: f64,
    /// Enclosure of `−ψᵘ` when it is only known through trace bounds.
    pub bracket: Option<(f64, f64)>,
}

/// Ricci curvature of the unit vector `v`. Its angle to `∂/∂x` is `π/2 − φ`.
pub fn ricci_of(model: &MetricModel, v: &PhaseState) -> Result<f64> {
    let w = model.eval_metric(v.s, v.x)?;
    let theta = std::f64::consts::FRAC_PI_2 - v.phi;
    Ok(curvature_from_warp(&w, theta, model.n()).ric)
}

/// `ψᵘ(v) = −tr U(v)`. Exact on surfaces. For `n > 2` the trace is
/// enclosed by the limits of `w′ = −w² − Ric` and `(n−1)ū` with
/// `ū′ = −ū² − Ric/(n−1)`, and the midpoint is reported.
pub fn psi_u(model: &MetricModel, v: &PhaseState, set: &LimitSettings) -> Result<PotentialSample> {
    let ric = ricci_of(model, v)?;
    let gap = |psi: f64| -psi * (psi * psi - ric);
    if model.n() == 2 {
        let (u0, _) = riccati_limit_with(model, v, set, |s, x, _| model.surface_curvature(s, x))?;
        let psi = -u0;
        return Ok(PotentialSample {
            psi_u: psi,
            gap_bound: gap(psi).max(0.0),
            lambda_reg: u0,
            ric,
            bracket: None,
        });
    }
    if !model.is_s_independent() {
        return Err(RiccatiError::InvalidInput("SDependent profiles are surfaces".into()));
    }
    let nf = model.n() as f64;
    let theta_ric = |s: f64, x: f64, phi: f64| {
        let w = model.warp(s, x);
        curvature_from_warp(&w, std::f64::consts::FRAC_PI_2 - phi, model.n()).ric
    };
    let (w0, _) = riccati_limit_with(model, v, set, theta_ric)?;
    let (ub0, _) = riccati_limit_with(model, v, set, |s, x, p| theta_ric(s, x, p) / (nf - 1.0))?;
    let lo = w0.min((nf - 1.0) * ub0);
    let hi = w0.max((nf - 1.0) * ub0);
    let psi = -0.5 * (lo + hi);
    Ok(PotentialSample {
        psi_u: psi,
        gap_bound: gap(psi).max(0.0),
        lambda_reg: ub0,
        ric,
        bracket: Some((lo, hi)),
    })
}

/// Which closed form of the trace-comparison lemma to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TraceCase {
    /// Curvature pinched in `[−K₁², −k₁²]` (scaled) over the whole window.
    One,
    /// Second window with constants `(k₃, K₃)`.
    Two { k3: f64, big_k3: f64 },
}

/// Lower and upper bounds on the unstable trace from the comparison lemma.
pub fn trace_comparison_bounds(k1: f64, big_k1: f64, t: f64, case: TraceCase, n: usize) -> Result<(f64, f64)> {
    if !(k1 > 0.0 && big_k1 >= k1 && t > 0.0) || n < 2 {
        return Err(RiccatiError::InvalidCase(format!(
            "need K1 >= k1 > 0, T > 0, n >= 2 (k1 = {k1}, K1 = {big_k1}, T = {t}, n = {n})"
        )));
    }
    let nf = n as f64;
    match case {
        TraceCase::One => Ok((k1 * k1.tanh() / t, (nf - 1.0) * big_k1 / big_k1.tanh() / t)),
        TraceCase::Two { k3, big_k3 } => {
            if !(k3 > 0.0) {
                return Err(RiccatiError::InvalidCase(format!("k3 = {k3} must be positive")));
            }
            if !(big_k3 > big_k1) {
                return Err(RiccatiError::InvalidCase(format!(
                    "K3 = {big_k3} must exceed K1 = {big_k1} (arccoth domain)"
                )));
            }
            let y = big_k3 / big_k1;
            let acoth = 0.5 * ((y + 1.0) / (y - 1.0)).ln();
            let big_k4 = (nf - 1.0) * big_k1 / acoth.tanh();
            let k4 = 1.0 / (k1 + 1.0 / k3);
            Ok((k4 / t, big_k4 / t))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingSample {
    pub x: f64,
    pub phi: f64,
    pub psi_u: f64,
    pub gap_bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingEnvelope {
    pub m: u32,
    pub q_low: f64,
    pub q_high: f64,
    pub samples: Vec<ScalingSample>,
}

/// Rectangular neighborhood of the singular set in `(x, φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub x_min: f64,
    pub x_max: f64,
    pub phi_max: f64,
}

/// Grid of `nx` log-spaced heights by `nphi` evenly spaced angles, both
/// including their endpoints.
pub fn neighborhood_grid(nb: &Neighborhood, nx: usize, nphi: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(nx * nphi);
    for i in 0..nx {
        let x = if nx == 1 {
            nb.x_min
        } else {
            nb.x_min * (nb.x_max / nb.x_min).powf(i as f64 / (nx - 1) as f64)
        };
        for j in 0..nphi {
            let phi = if nphi == 1 {
                0.0
            } else {
                -nb.phi_max + 2.0 * nb.phi_max * j as f64 / (nphi - 1) as f64
            };
            out.push((x, phi));
        }
    }
    out
}

/// Envelope of `−ψᵘ(v)/(|x|^(m/2) + |φ|^(m/(m+2)))` over `points`.
pub fn scaling_check(
    model: &MetricModel,
    m: u32,
    points: &[(f64, f64)],
    set: &LimitSettings,
) -> Result<ScalingEnvelope> {
    if model.n() != 2 {
        return Err(RiccatiError::InvalidInput("scaling check runs on surfaces".into()));
    }
    let mf = m as f64;
    let samples: Vec<ScalingSample> = points
        .par_iter()
        .map(|&(x, phi)| {
            let den = x.abs().powf(0.5 * mf) + phi.abs().powf(mf / (mf + 2.0));
            if den < 1e-12 {
                return Err(RiccatiError::DegenerateSample { x, phi });
            }
            let ps = psi_u(model, &PhaseState::new(0.0, x, phi), set)?;
            Ok(ScalingSample {
                x,
                phi,
                psi_u: ps.psi_u,
                gap_bound: ps.gap_bound,
                ratio: -ps.psi_u / den,
            })
        })
        .collect::<Result<_>>()?;
    let q_low = samples.iter().map(|s| s.ratio).fold(f64::INFINITY, f64::min);
    let q_high = samples.iter().map(|s| s.ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(ScalingEnvelope {
        m,
        q_low,
        q_high,
        samples,
    })
}

/// Time a horizontal launch at height `x0` spends with `x ∈ [x0/2, 2x0]`.
pub fn residence_time(model: &MetricModel, x0: f64, tol: f64) -> Result<f64> {
    model.eval_metric(0.0, x0)?;
    let spec = FlowSpec {
        halt_radius: Some(2.0 * x0),
        ..Default::default()
    };
    let horizon = 1e12;
    let fwd = flow(model, tol, 0.0, [0.0, x0, 0.0], 0.0, horizon, &spec, no_aux)?;
    let bwd = flow(model, tol, 0.0, [0.0, x0, 0.0], 0.0, -horizon, &spec, no_aux)?;
    if fwd.halted.is_none() || bwd.halted.is_none() {
        return Err(RiccatiError::Geodesic(GeodesicError::Inconclusive(
            "launch never left [x0/2, 2x0]".into(),
        )));
    }
    Ok(fwd.t - bwd.t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ProfileSpec;

    #[test]
    fn comparison_example() {
        let cv = solve_comparison_riccati(1.0, 2, 0.5).unwrap();
        let last = *cv.lambda.last().unwrap();
        assert!(last > 0.02083 && last < 0.04167);
        assert!((last - 0.0414).abs() < 5e-4);
    }

    #[test]
    fn comparison_domain_checked() {
        let r0 = comparison_domain(1.0, 2);
        assert!(matches!(
            solve_comparison_riccati(1.0, 2, 1.01 * r0),
            Err(RiccatiError::DomainTooWide { .. })
        ));
    }

    #[test]
    fn zero_forcing() {
        let cv = solve_comparison_riccati(0.0, 2, 0.5).unwrap();
        assert!(cv.lambda.iter().all(|l| *l == 0.0));
    }

    #[test]
    fn trace_case_one() {
        let (lo, hi) = trace_comparison_bounds(1.0, 1.0, 1.0, TraceCase::One, 2).unwrap();
        assert!((lo - 0.761594).abs() < 1e-6);
        assert!((hi - 1.313035).abs() < 1e-6);
    }

    #[test]
    fn trace_case_two() {
        let (lo, hi) = trace_comparison_bounds(1.0, 1.0, 1.0, TraceCase::Two { k3: 1.0, big_k3: 2.0 }, 2).unwrap();
        assert!((lo - 0.5).abs() < 1e-15);
        assert!((hi - 2.0).abs() < 1e-12);
        assert!(trace_comparison_bounds(1.0, 1.0, 1.0, TraceCase::Two { k3: 1.0, big_k3: 1.0 }, 2).is_err());
    }

    #[test]
    fn constant_curvature_fixed_point() {
        let md = MetricModel::new(ProfileSpec::ConstantCurvature { k: 1.0 }, 2, 1.0, 1.0).unwrap();
        let ps = psi_u(&md, &PhaseState::new(0.0, 0.3, 0.2), &LimitSettings::default()).unwrap();
        assert!((ps.psi_u + 1.0).abs() < 1e-6);
        assert!((ps.gap_bound - 2.0).abs() < 1e-5);
    }
}
