//! Power-law decay certificates for orbits near the flat torus, the
//! discontinuous-ODE comparison lemma, and potential integrals along
//! shadowing orbits and their Bowen-ball neighbours.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesics::{
    flow, no_aux, orbit_distance, shadow_map, FlowSpec, GeodesicError, Orbit, PhaseState,
};
use crate::geometry::{GeometryError, MetricModel, ProfileSpec};
use crate::pressure::{evaluate_power_law, PotentialSpec};
use crate::roots::brent;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalingError {
    #[error("need at least {need} points in the fit window, found {have}")]
    InsufficientData { have: usize, need: usize },
    #[error("{regime:?}: decay bound violated at tau = {witness} (Q = {q:e})")]
    BoundViolated { regime: Regime, witness: f64, q: f64 },
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
    #[error("hypothesis violated at tau = {tau}: {reason}")]
    HypothesisViolated { tau: f64, reason: String },
    #[error("conclusion violated on the {side} side at tau = {tau}")]
    ConclusionViolated { tau: f64, side: &'static str },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, ScalingError>;

/// Least-squares line through `(ln(τ+1), ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Slope of `ln y` against `ln(τ+1)` over the points with `τ` in `window`.
pub fn fit_loglog_exponent(series: &[(f64, f64)], window: (f64, f64)) -> Result<Fit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .map(|&(t, y)| {
            if y > 0.0 {
                Ok(((t + 1.0).ln(), y.ln()))
            } else {
                Err(ScalingError::InvalidInput(format!("y = {y} at tau = {t} is not positive")))
            }
        })
        .collect::<Result<_>>()?;
    if pts.len() < 20 {
        return Err(ScalingError::InsufficientData {
            have: pts.len(),
            need: 20,
        });
    }
    let (slope, stderr) = least_squares(&pts);
    Ok(Fit {
        slope,
        stderr,
        points: pts.len(),
    })
}

/// Slope and its standard error for a straight-line fit.
pub(crate) fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let stderr = if pts.len() > 2 { (ssr / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (slope, stderr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Type1Bouncing,
    Type1Asymptotic,
    Type1Crossing,
    Type2Shadowing,
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "Type1Bouncing" => Ok(Regime::Type1Bouncing),
            "Type1Asymptotic" => Ok(Regime::Type1Asymptotic),
            "Type1Crossing" => Ok(Regime::Type1Crossing),
            "Type2Shadowing" => Ok(Regime::Type2Shadowing),
            _ => Err(format!("unknown regime `{s}`")),
        }
    }
}

/// Knobs for [`verify_decay_bounds`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayOptions {
    /// Shadowing / sampling tolerance.
    pub tol: f64,
    /// Points on the sandwich grid.
    pub grid: usize,
    /// Explicit fit window; by default `[min(100, T/100), min(10⁴, T/10)]`
    /// with `T` the regime's reference time.
    pub window: Option<(f64, f64)>,
    /// `Q_min` above this counts as a violated bound.
    pub q_limit: f64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        DecayOptions {
            tol: 1e-9,
            grid: 1000,
            window: None,
            q_limit: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub m: u32,
    pub regime: Regime,
    #[serde(rename = "Q_min")]
    pub q_min: f64,
    pub fit_x: Fit,
    pub fit_phi: Fit,
    /// Grid time where `Q_min` is attained.
    pub witness: f64,
    /// Segment length, horizon or crossing time, by regime.
    pub t: f64,
    /// Turning time (bouncing, shadowing) or crossing time.
    pub t_ref: f64,
    /// Smallest `Q` with `x ≤ Q(τ+1)^{−2/m}` on the grid.
    pub q_x_upper: f64,
    /// Same certificate on the time-reversed half `[t̃, t]`.
    pub q_min_reversed: Option<f64>,
    /// Largest lower-bound constant required inside `(t̃ − 2√2γ₀, t̃]`,
    /// where no lower bound on `|φ|` is claimed (shadowing regime only).
    pub excluded_phi_lower: Option<f64>,
    pub window: (f64, f64),
}

/// Time grid on `[0, end]`, geometric toward both ends, `n` points.
pub fn sandwich_grid(end: f64, n: usize) -> Vec<f64> {
    let half = (n / 2).max(2);
    let lo = (end * 1e-4).min(1e-2);
    let mid = 0.5 * end;
    let mut out = vec![0.0];
    let r = (mid / lo).powf(1.0 / (half - 1) as f64);
    let mut left = Vec::with_capacity(half);
    let mut t = lo;
    for _ in 0..half {
        left.push(t.min(mid));
        t *= r;
    }
    out.extend(left.iter().copied());
    let gap = end * 1e-4;
    let r2 = (mid / gap).powf(1.0 / (half - 1) as f64);
    let mut right = Vec::with_capacity(half);
    let mut d = gap;
    for _ in 0..half {
        right.push(end - d.min(mid));
        d *= r2;
    }
    right.reverse();
    out.extend(right);
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup();
    out
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let r = (hi / lo).powf(1.0 / (n - 1) as f64);
    (0..n).map(|i| lo * r.powi(i as i32)).collect()
}

/// Tracks the worst constant required by a family of two-sided bounds.
#[derive(Debug, Clone, Copy)]
struct Worst {
    q: f64,
    tau: f64,
}

impl Worst {
    fn new() -> Self {
        Worst { q: 1.0, tau: 0.0 }
    }

    /// `value ≤ Q·bound`.
    fn upper(&mut self, tau: f64, value: f64, bound: f64) {
        self.take(tau, value / bound);
    }

    /// `Q⁻¹·bound ≤ value`.
    fn lower(&mut self, tau: f64, value: f64, bound: f64) {
        self.take(tau, bound / value);
    }

    fn take(&mut self, tau: f64, q: f64) {
        let q = if q.is_nan() { f64::INFINITY } else { q };
        if q > self.q {
            self.q = q;
            self.tau = tau;
        }
    }
}

/// Which inequalities to test at a grid point.
#[derive(Debug, Clone, Copy)]
struct Sandwich {
    /// Exponent `2/m` of the `x` bound.
    px: f64,
    /// Exponent `(m+2)/m` of the `φ` bound.
    pphi: f64,
    /// Subtracted tail in the `φ` bracket (turning time) or `x` bracket
    /// (crossing time).
    tail_phi: Option<f64>,
    tail_x: Option<f64>,
    /// `|φ|` lower bound only for `τ ≤` this.
    phi_lower_until: f64,
}

impl Sandwich {
    fn x_bound(&self, tau: f64) -> f64 {
        let b = (tau + 1.0).powf(-self.px);
        match self.tail_x {
            Some(t0) => b - (t0 + 1.0).powf(-self.px),
            None => b,
        }
    }

    fn phi_bound(&self, tau: f64) -> f64 {
        let b = (tau + 1.0).powf(-self.pphi);
        match self.tail_phi {
            Some(tt) => b - (tt + 1.0).powf(-self.pphi),
            None => b,
        }
    }

    /// Returns `(Q, witness)` over `samples`, the worst lower-bound
    /// constant among points past `phi_lower_until`, and the constant of
    /// the upper `x` bound alone.
    fn measure(&self, samples: &[(f64, f64, f64)]) -> (Worst, Worst, Worst) {
        let mut all = Worst::new();
        let mut excluded = Worst::new();
        let mut x_up = Worst { q: 0.0, tau: 0.0 };
        for &(tau, x, phi) in samples {
            let xb = self.x_bound(tau);
            let pb = self.phi_bound(tau);
            let aphi = phi.abs();
            if x <= 0.0 && xb > 0.0 {
                all.take(tau, f64::INFINITY);
                continue;
            }
            if xb > 0.0 {
                x_up.upper(tau, x, xb);
                all.upper(tau, x, xb);
                all.lower(tau, x, xb);
            }
            if pb > 0.0 {
                all.upper(tau, aphi, pb);
                if tau <= self.phi_lower_until {
                    all.lower(tau, aphi, pb);
                } else {
                    excluded.lower(tau, aphi, pb);
                }
            }
        }
        (all, excluded, x_up)
    }
}

/// Orbit starting at height `R` that approaches the torus and turns at
/// height `x_min`; the turning point is the anchor.
fn turning_orbit(model: &MetricModel, x_min: f64, r: f64, tol: f64) -> Result<(Orbit, f64)> {
    let spec = FlowSpec {
        halt_radius: Some(r),
        ..Default::default()
    };
    let fr = flow(model, tol, 0.0, [0.0, x_min, 0.0], 0.0, -1e12, &spec, no_aux).map_err(GeodesicError::from)?;
    if fr.halted.is_none() {
        return Err(ScalingError::InvalidInput("turning orbit never reaches R".into()));
    }
    let half = -fr.t;
    let anchor = PhaseState {
        s: -fr.y[0],
        x: x_min,
        phi: 0.0,
        tau: half,
    };
    Ok((
        Orbit {
            anchor,
            t_start: 0.0,
            t_end: 2.0 * half,
        },
        half,
    ))
}

/// Approximates an asymptotic vector at height `R` by a bounce whose
/// turning time exceeds `100·horizon`.
pub fn asymptotic_orbit(model: &MetricModel, m: u32, r: f64, horizon: f64, tol: f64) -> Result<Orbit> {
    let p = 2.0 / m as f64;
    let target = 100.0 * horizon;
    let mut x_min = r * (target + 1.0).powf(-p);
    for _ in 0..60 {
        let (orbit, half) = turning_orbit(model, x_min, r, tol)?;
        if half >= target {
            return Ok(Orbit {
                t_end: horizon,
                ..orbit
            });
        }
        x_min *= (0.5 * half / target).powf(p).min(0.5);
    }
    Err(ScalingError::InvalidInput("could not build an asymptotic approximation".into()))
}

/// Crossing orbit from height `R` that reaches `x = 0` at time `t0`,
/// parametrized by its angle at the crossing.
pub fn crossing_orbit(model: &MetricModel, r: f64, t0: f64, tol: f64) -> Result<Orbit> {
    if !(t0 > 0.0) {
        return Err(ScalingError::InvalidInput(format!("crossing time {t0}")));
    }
    let spec = FlowSpec {
        halt_radius: Some(r),
        ..Default::default()
    };
    let reach = |la: f64| -> Result<f64> {
        let y0 = [0.0, 0.0, -la.exp()];
        let fr = flow(model, tol, 0.0, y0, 0.0, -(1e3 * t0 + 1e3), &spec, no_aux).map_err(GeodesicError::from)?;
        Ok(if fr.halted.is_some() { -fr.t } else { f64::INFINITY })
    };
    let g = |la: f64| -> Result<f64> {
        let t = reach(la)?;
        Ok(if t.is_finite() { t.ln() - t0.ln() } else { 50.0 })
    };
    // Bracket in ln α, starting from a one-radian crossing.
    let hi = 0.0;
    let g_hi = g(hi)?;
    if g_hi > 0.0 {
        return Err(ScalingError::InvalidInput(format!("crossing time {t0} too short for R = {r}")));
    }
    let mut lo = hi - 2.0;
    let mut g_lo = g(lo)?;
    while g_lo < 0.0 {
        lo -= 2.0;
        if lo < -700.0 {
            return Err(ScalingError::InvalidInput("crossing angle underflow".into()));
        }
        g_lo = g(lo)?;
    }
    let mut err = None;
    let la = brent(
        |v| match g(v) {
            Ok(f) => f,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        },
        lo,
        hi,
        g_lo,
        g_hi,
        1e-14,
        300,
    );
    if let Some(e) = err {
        return Err(e);
    }
    let t_real = reach(la)?;
    let fr = flow(model, tol, 0.0, [0.0, 0.0, -la.exp()], 0.0, -t_real, &FlowSpec::default(), no_aux)
        .map_err(GeodesicError::from)?;
    Ok(Orbit {
        anchor: PhaseState {
            s: -fr.y[0],
            x: 0.0,
            phi: -la.exp(),
            tau: t_real,
        },
        t_start: 0.0,
        t_end: t_real,
    })
}

/// The orbit a regime is certified on, with its reference time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeOrbit {
    pub orbit: Orbit,
    /// Turning time, horizon or crossing time.
    pub t_ref: f64,
    /// Right end of the sandwich interval.
    pub end: f64,
    pub tail_phi: Option<f64>,
    pub tail_x: Option<f64>,
}

/// Shadowing orbit for bouncing and Type 2 regimes, a long bounce for the
/// asymptotic regime and a crossing orbit with crossing time `t`.
pub fn regime_orbit(model: &MetricModel, m: u32, regime: Regime, t: f64, r: f64, tol: f64) -> Result<RegimeOrbit> {
    Ok(match regime {
        Regime::Type1Bouncing | Regime::Type2Shadowing => {
            // Shooting on s-dependent warps has a residual floor near 1e-7.
            let shadow_tol = if regime == Regime::Type2Shadowing { tol.max(1e-6) } else { tol };
            let sh = shadow_map(model, 0.0, t, r, shadow_tol)?;
            RegimeOrbit {
                orbit: sh.orbit,
                t_ref: sh.t_turn,
                end: sh.t_turn,
                tail_phi: Some(sh.t_turn),
                tail_x: None,
            }
        }
        Regime::Type1Asymptotic => RegimeOrbit {
            orbit: asymptotic_orbit(model, m, r, t, tol)?,
            t_ref: t,
            end: t,
            tail_phi: None,
            tail_x: None,
        },
        Regime::Type1Crossing => {
            let o = crossing_orbit(model, r, t, tol)?;
            RegimeOrbit {
                orbit: o,
                t_ref: o.t_end,
                end: o.t_end,
                tail_phi: None,
                tail_x: Some(o.t_end),
            }
        }
    })
}

fn default_window(t_ref: f64) -> (f64, f64) {
    ((t_ref / 100.0).min(100.0), (t_ref / 10.0).min(1e4))
}

fn check_regime(model: &MetricModel, m: u32, regime: Regime) -> Result<()> {
    let type2 = matches!(model.profile(), ProfileSpec::SDependent { .. });
    let type1 = matches!(
        model.profile(),
        ProfileSpec::Power { .. } | ProfileSpec::CappedPower { .. }
    );
    match regime {
        Regime::Type2Shadowing if !type2 => {
            return Err(ScalingError::RegimeMismatch(format!(
                "Type2Shadowing needs an SDependent surface, got {}",
                model.profile().name()
            )))
        }
        Regime::Type1Bouncing | Regime::Type1Asymptotic | Regime::Type1Crossing if !type1 => {
            return Err(ScalingError::RegimeMismatch(format!(
                "{regime:?} needs a Power or CappedPower profile, got {}",
                model.profile().name()
            )))
        }
        _ => {}
    }
    if model.profile().order() != Some(m) {
        return Err(ScalingError::RegimeMismatch(format!(
            "order m = {m} does not match the profile order {:?}",
            model.profile().order()
        )));
    }
    Ok(())
}

/// Builds the regime's orbit on `[0, t]` and certifies the power-law
/// sandwich for `x` and `|φ|` with the smallest constant `Q_min`.
pub fn verify_decay_bounds(
    model: &MetricModel,
    m: u32,
    regime: Regime,
    t: f64,
    r: f64,
    opts: &DecayOptions,
) -> Result<DecayReport> {
    check_regime(model, m, regime)?;
    if !(t > 0.0 && t.is_finite()) || !(r > 0.0 && r <= model.half_width()) {
        return Err(ScalingError::InvalidInput(format!("t = {t}, R = {r}")));
    }
    let mf = m as f64;
    let mut sw = Sandwich {
        px: 2.0 / mf,
        pphi: (mf + 2.0) / mf,
        tail_phi: None,
        tail_x: None,
        phi_lower_until: f64::INFINITY,
    };
    let built = regime_orbit(model, m, regime, t, r, opts.tol)?;
    let (orbit, t_ref, end) = (built.orbit, built.t_ref, built.end);
    sw.tail_phi = built.tail_phi;
    sw.tail_x = built.tail_x;
    if regime == Regime::Type2Shadowing {
        sw.phi_lower_until = t_ref - 2.0 * 2f64.sqrt() * model.period();
    }
    let sample_tol = opts.tol.min(1e-10);
    let grid = sandwich_grid(end, opts.grid);
    let states = orbit.sample(model, &grid, sample_tol)?;
    let pts: Vec<(f64, f64, f64)> = states.iter().map(|p| (p.tau, p.x, p.phi)).collect();
    let (all, excluded, x_up) = sw.measure(&pts);
    let q_min_reversed = match regime {
        Regime::Type1Bouncing | Regime::Type2Shadowing => {
            let rev_turn = t - t_ref;
            let mut rsw = sw;
            rsw.tail_phi = Some(rev_turn);
            if regime == Regime::Type2Shadowing {
                rsw.phi_lower_until = rev_turn - 2.0 * 2f64.sqrt() * model.period();
            }
            let rgrid = sandwich_grid(rev_turn, opts.grid);
            let times: Vec<f64> = rgrid.iter().rev().map(|g| t - g).collect();
            let rs = orbit.sample(model, &times, sample_tol)?;
            let rpts: Vec<(f64, f64, f64)> = rs.iter().rev().map(|p| (t - p.tau, p.x, p.phi)).collect();
            Some(rsw.measure(&rpts).0.q)
        }
        _ => None,
    };
    let window = opts.window.unwrap_or_else(|| default_window(t_ref));
    let ftimes = geometric(window.0, window.1, 200);
    let fs = orbit.sample(model, &ftimes, sample_tol)?;
    let fit_x = fit_loglog_exponent(&fs.iter().map(|p| (p.tau, p.x)).collect::<Vec<_>>(), window)?;
    let fit_phi = fit_loglog_exponent(&fs.iter().map(|p| (p.tau, p.phi.abs())).collect::<Vec<_>>(), window)?;
    if !(all.q <= opts.q_limit) {
        return Err(ScalingError::BoundViolated {
            regime,
            witness: all.tau,
            q: all.q,
        });
    }
    Ok(DecayReport {
        m,
        regime,
        q_min: all.q,
        fit_x,
        fit_phi,
        witness: all.tau,
        t,
        t_ref,
        q_x_upper: x_up.q,
        q_min_reversed,
        excluded_phi_lower: (regime == Regime::Type2Shadowing).then_some(excluded.q),
        window,
    })
}

/// `Q_min` at `t` and `2t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TIndependence {
    pub at_t: DecayReport,
    pub at_2t: DecayReport,
    pub ratio: f64,
    pub stable: bool,
}

pub fn check_t_independence(
    model: &MetricModel,
    m: u32,
    regime: Regime,
    t: f64,
    r: f64,
    opts: &DecayOptions,
) -> Result<TIndependence> {
    let (a, b) = rayon::join(
        || verify_decay_bounds(model, m, regime, t, r, opts),
        || verify_decay_bounds(model, m, regime, 2.0 * t, r, opts),
    );
    let (a, b) = (a?, b?);
    let ratio = b.q_min / a.q_min;
    Ok(TIndependence {
        stable: ratio > 0.5 && ratio < 2.0,
        at_t: a,
        at_2t: b,
        ratio,
    })
}

/// One smooth piece of a sampled function: times, values and derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothPiece {
    pub tau: Vec<f64>,
    pub f: Vec<f64>,
    pub df: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaParams {
    pub alpha: f64,
    pub beta: f64,
    pub q1: f64,
    pub q2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub q0: f64,
    /// Smallest `bound/f` for the upper bound (≥ 1 when it holds).
    pub upper_margin: f64,
    /// Smallest `f/bound` for the lower bound, when it was checked.
    pub lower_margin: Option<f64>,
    pub jumps: usize,
}

/// `Q₀ = B(β, 1−β)^{1/(αβ−1)}`, with `B(β, 1−β) = Γ(β)Γ(1−β) = π/sin(πβ)`
/// by the reflection formula. At `β = 1/2` this is `π` to the last bit.
pub fn lemma_q0(alpha: f64, beta: f64) -> f64 {
    let b = std::f64::consts::PI / (std::f64::consts::PI * beta).sin();
    b.powf(1.0 / (alpha * beta - 1.0))
}

const LEMMA_SLACK: f64 = 1e-9;

/// Checks the derivative envelope of a piecewise smooth decreasing `f` on
/// `[a, b]` and then the power-law sandwich it implies.
///
/// The lower half of the sandwich integrates `f′` across the whole
/// interval, so it is only asserted when `f` has no jumps.
pub fn check_ode_discont_lemma(pieces: &[SmoothPiece], p: &LemmaParams) -> Result<LemmaReport> {
    if !(p.beta > 0.0 && p.beta < 1.0 && p.alpha * p.beta > 1.0 && p.q1 > 0.0 && p.q1 < p.q2) {
        return Err(ScalingError::InvalidInput(format!("{p:?}")));
    }
    let all: Vec<(f64, f64, f64)> = pieces
        .iter()
        .flat_map(|pc| pc.tau.iter().zip(&pc.f).zip(&pc.df).map(|((&t, &f), &d)| (t, f, d)))
        .collect();
    if all.len() < 2 || pieces.iter().any(|pc| pc.tau.len() != pc.f.len() || pc.f.len() != pc.df.len()) {
        return Err(ScalingError::InvalidInput("malformed samples".into()));
    }
    let (a, fa) = (all[0].0, all[0].1);
    let fb = all[all.len() - 1].1;
    if !(fb > 0.0) {
        return Err(ScalingError::HypothesisViolated {
            tau: all[all.len() - 1].0,
            reason: "f(b) must be positive".into(),
        });
    }
    for w in all.windows(2) {
        if !(w[1].0 > w[0].0 && w[1].1 < w[0].1) {
            return Err(ScalingError::HypothesisViolated {
                tau: w[1].0,
                reason: "f is not strictly decreasing".into(),
            });
        }
    }
    let fba = fb.powf(p.alpha);
    for &(t, f, d) in &all {
        let h = (f.powf(p.alpha) - fba).max(0.0).powf(p.beta);
        let hi = -p.q1 * h;
        let lo = -p.q2 * h;
        let slack = LEMMA_SLACK * h.max(d.abs());
        if d > hi + slack || d < lo - slack {
            return Err(ScalingError::HypothesisViolated {
                tau: t,
                reason: format!("f' = {d:e} outside [{lo:e}, {hi:e}]"),
            });
        }
    }
    let jumps = pieces
        .windows(2)
        .filter(|w| {
            let (l, r) = (&w[0], &w[1]);
            match (l.f.last(), r.f.first()) {
                (Some(x), Some(y)) => l.tau.last() != r.tau.first() || x != y,
                _ => false,
            }
        })
        .count();
    let k = p.alpha * p.beta - 1.0;
    let q0 = lemma_q0(p.alpha, p.beta);
    let ea = fa.powf(-k);
    let mut upper_margin = f64::INFINITY;
    let mut lower_margin = f64::INFINITY;
    for &(t, f, _) in &all {
        let up = q0 * (ea + p.q1 * k * (t - a)).powf(-1.0 / k);
        let lo = (ea + p.q2 * k * (t - a)).powf(-1.0 / k);
        upper_margin = upper_margin.min(up / f);
        lower_margin = lower_margin.min(f / lo);
        if f > up * (1.0 + LEMMA_SLACK) {
            return Err(ScalingError::ConclusionViolated { tau: t, side: "upper" });
        }
        if jumps == 0 && f < lo * (1.0 - LEMMA_SLACK) {
            return Err(ScalingError::ConclusionViolated { tau: t, side: "lower" });
        }
    }
    Ok(LemmaReport {
        q0,
        upper_margin,
        lower_margin: (jumps == 0).then_some(lower_margin),
        jumps,
    })
}

/// Tightest `(Q₁, Q₂)` for which `samples` satisfy the derivative envelope
/// with `f(b)` the last value. Points where the envelope vanishes are
/// skipped.
pub fn envelope_constants(pieces: &[SmoothPiece], alpha: f64, beta: f64) -> Option<(f64, f64)> {
    let fb = *pieces.last()?.f.last()?;
    let fba = fb.powf(alpha);
    let mut q1 = f64::INFINITY;
    let mut q2: f64 = 0.0;
    for pc in pieces {
        for (&f, &d) in pc.f.iter().zip(&pc.df) {
            let h = (f.powf(alpha) - fba).powf(beta);
            if h > 0.0 && h.is_finite() {
                let q = -d / h;
                q1 = q1.min(q);
                q2 = q2.max(q);
            }
        }
    }
    (q1 > 0.0 && q2.is_finite() && q1 <= q2).then_some((q1, q2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyInequalityRow {
    pub t: f64,
    /// Integral along the shadowing orbit itself.
    pub shadow: f64,
    /// Integrals along accepted perturbations.
    pub perturbed: Vec<f64>,
    pub rejected: usize,
    pub min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyInequalityReport {
    pub t_list: Vec<f64>,
    pub rows: Vec<KeyInequalityRow>,
    pub lower_envelope: f64,
    /// Relative change of the per-`t` minimum between the two largest `t`.
    pub variation: f64,
    /// Slope of the per-`t` minimum against `ln t`.
    pub log_slope: f64,
    pub bounded: bool,
}

/// Perturbation budget for the Bowen-ball sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbations {
    pub count: usize,
    pub seed: u64,
    /// Candidate draws per accepted perturbation before giving up.
    pub max_tries: usize,
}

/// `∫₀ᵗ (φ(f_τ u) − C₀) dτ` for `u = Π_{t,R}(0)` and for nearby orbits
/// inside the Bowen ball `B_t(u, δ)`.
///
/// Neighbours are drawn as shadowing orbits with perturbed height, base
/// point, length and time origin, each by at most `δ/2`, and kept when
/// their `d_t` distance to `u` stays below `δ`.
pub fn key_inequality_integral(
    model: &MetricModel,
    potential: &PotentialSpec,
    t_list: &[f64],
    r: f64,
    delta: f64,
    pert: &Perturbations,
    tol: f64,
) -> Result<KeyInequalityReport> {
    if t_list.len() < 2 || !(delta > 0.0) {
        return Err(ScalingError::InvalidInput("need two or more t values and delta > 0".into()));
    }
    if r + delta > model.half_width() {
        return Err(ScalingError::InvalidInput(format!("R + delta exceeds X = {}", model.half_width())));
    }
    let c0 = potential.c0;
    let integrand = |_: f64, y: &[f64]| evaluate_power_law(potential, y[1], y[2]) - c0;
    let rows: Vec<KeyInequalityRow> = t_list
        .par_iter()
        .enumerate()
        .map(|(ti, &t)| -> Result<KeyInequalityRow> {
            let base = shadow_map(model, 0.0, t, r, tol)?;
            let shadow = base.orbit.integral(model, tol, integrand)?;
            let mut rng = ChaCha8Rng::seed_from_u64(pert.seed ^ (ti as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let step = (t / 512.0).min(delta);
            let mut perturbed = Vec::with_capacity(pert.count);
            let mut rejected = 0;
            let mut tries = 0;
            while perturbed.len() < pert.count && tries < pert.count * pert.max_tries.max(1) {
                tries += 1;
                let mut d = || rng.gen_range(-0.5 * delta..0.5 * delta);
                let (dr, ds, dt, dtau) = (d(), d(), d(), d());
                let cand = shadow_map(model, ds, t + dt, r + dr, tol)?.orbit.shifted(dtau);
                let u = Orbit {
                    t_start: 0.0,
                    t_end: t,
                    ..cand
                };
                let dist = orbit_distance(model, &base.orbit, &u, t, step, tol)?;
                if dist < delta {
                    perturbed.push(u.integral(model, tol, integrand)?);
                } else {
                    rejected += 1;
                }
            }
            let min = perturbed.iter().copied().fold(shadow, f64::min);
            Ok(KeyInequalityRow {
                t,
                shadow,
                perturbed,
                rejected,
                min,
            })
        })
        .collect::<Result<_>>()?;
    let lower_envelope = rows.iter().map(|r| r.min).fold(f64::INFINITY, f64::min);
    let mut by_t: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.min)).collect();
    by_t.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let (a, b) = (by_t[by_t.len() - 2].1, by_t[by_t.len() - 1].1);
    let scale = a.abs().max(b.abs());
    let variation = if scale == 0.0 { 0.0 } else { (b - a).abs() / scale };
    let log_slope = least_squares(&by_t.iter().map(|&(t, v)| (t.ln(), v)).collect::<Vec<_>>()).0;
    Ok(KeyInequalityReport {
        t_list: t_list.to_vec(),
        rows,
        lower_envelope,
        variation,
        log_slope,
        bounded: variation < 0.05,
    })
}

/// Splits sampled `x(τ)` on `[0, t̃]` of a bouncing orbit into a single
/// smooth piece for [`check_ode_discont_lemma`] with `f = x`, `f′ = sin φ`.
/// The last sample sits at `t̃` itself, where `f′ = 0` by definition.
pub fn bounce_as_lemma_input(model: &MetricModel, orbit: &Orbit, t_turn: f64, n: usize, tol: f64) -> Result<SmoothPiece> {
    let mut times = sandwich_grid(t_turn, n);
    times.push(t_turn);
    let st = orbit.sample(model, &times, tol)?;
    let mut pc = SmoothPiece {
        tau: Vec::with_capacity(st.len()),
        f: Vec::with_capacity(st.len()),
        df: Vec::with_capacity(st.len()),
    };
    for p in st {
        pc.tau.push(p.tau);
        pc.f.push(p.x);
        pc.df.push(p.phi.sin());
    }
    if let Some(d) = pc.df.last_mut() {
        *d = 0.0;
    }
    Ok(pc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let s: Vec<(f64, f64)> = geometric(1.0, 1e3, 50).into_iter().map(|t| (t, (t + 1.0).powi(-1))).collect();
        let f = fit_loglog_exponent(&s, (1.0, 1e3)).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12 && f.stderr < 1e-12);
        let s: Vec<(f64, f64)> = s.iter().map(|&(t, _)| (t, 3.0 * (t + 1.0).powi(-2))).collect();
        let f = fit_loglog_exponent(&s, (1.0, 1e3)).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let s = vec![(1.0, 1.0); 5];
        assert!(matches!(
            fit_loglog_exponent(&s, (0.0, 10.0)),
            Err(ScalingError::InsufficientData { have: 5, .. })
        ));
    }

    #[test]
    fn grid_shape() {
        let g = sandwich_grid(200.0, 1000);
        assert_eq!(g[0], 0.0);
        assert!((g[g.len() - 1] - 200.0 * (1.0 - 1e-4)).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(g.len() >= 990);
    }

    #[test]
    fn q0_for_half() {
        assert!((lemma_q0(4.0, 0.5) - std::f64::consts::PI).abs() < 1e-12);
    }
}
