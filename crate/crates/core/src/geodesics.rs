//! Unit-speed geodesics in Fermi coordinates `(s, x, φ)`, their events,
//! the bouncing/asymptotic/crossing trichotomy, the shadowing map and the
//! Bowen-type distance `d_t`.

use std::f64::consts::FRAC_PI_2;
use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, MetricModel};
use crate::ode::{Control, OdeError, Solver};
use crate::roots::brent;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeodesicError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("integration failed: {0}")]
    StepFailure(#[from] OdeError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shooting did not converge (residual {residual:e} after {iterations} iterations)")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("shadowing angle {phi} reaches pi/4: R is too wide")]
    StripTooWide { phi: f64 },
    #[error("operation not supported for {0} profiles")]
    Unsupported(&'static str),
    #[error("classification inconclusive: {0}")]
    Inconclusive(String),
    #[error("separation violated at {stage} between entries {i} and {j}: d_t = {distance:e} < {threshold:e}")]
    SeparationViolated {
        stage: &'static str,
        i: usize,
        j: usize,
        distance: f64,
        threshold: f64,
    },
}

pub type Result<T> = std::result::Result<T, GeodesicError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub s: f64,
    pub x: f64,
    pub phi: f64,
    pub tau: f64,
}

impl PhaseState {
    pub fn new(s: f64, x: f64, phi: f64) -> Self {
        PhaseState { s, x, phi, tau: 0.0 }
    }

    pub(crate) fn from_y(tau: f64, y: &[f64]) -> Self {
        PhaseState {
            s: y[0],
            x: y[1],
            phi: y[2],
            tau,
        }
    }

    pub(crate) fn y(&self) -> [f64; 3] {
        [self.s, self.x, self.phi]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    EnterStrip,
    ExitStrip,
    Turning,
    ZeroCrossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<PhaseState>,
    pub events: Vec<Event>,
    pub clairaut_drift: Option<f64>,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum VectorKind {
    Bouncing { t_turn: f64 },
    Asymptotic,
    Crossing { t0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VectorClass {
    pub kind: VectorKind,
    /// Backward time to leave `N_R`, if it happened before the horizon.
    pub t1: Option<f64>,
    /// Forward time to leave `N_R`.
    pub t2: Option<f64>,
}

fn check_state(model: &MetricModel, st: &PhaseState) -> Result<()> {
    if !(st.s.is_finite() && st.x.is_finite() && st.phi.is_finite()) {
        return Err(GeodesicError::InvalidInput("non-finite state".into()));
    }
    if st.phi.abs() > FRAC_PI_2 {
        return Err(GeodesicError::InvalidInput(format!("|phi| = {} exceeds pi/2", st.phi.abs())));
    }
    model.eval_metric(st.s, st.x)?;
    Ok(())
}

#[inline]
pub(crate) fn field(model: &MetricModel, y: &[f64]) -> [f64; 3] {
    let w = model.warp(y[0], y[1]);
    let (sp, cp) = y[2].sin_cos();
    [cp / w.g, sp, w.gx / w.g * cp]
}

/// `(ds/dτ, dx/dτ, dφ/dτ) = (cosφ/G, sinφ, (G_x/G)cosφ)`.
pub fn geodesic_rhs(model: &MetricModel, state: &PhaseState) -> Result<[f64; 3]> {
    model.eval_metric(state.s, state.x)?;
    Ok(field(model, &state.y()))
}

/// `G(x)·cosφ`, conserved along geodesics of s-independent warps.
pub fn clairaut_invariant(model: &MetricModel, state: &PhaseState) -> Result<f64> {
    if !model.is_s_independent() {
        return Err(GeodesicError::Unsupported("SDependent"));
    }
    Ok(model.eval_metric(state.s, state.x)?.g * state.phi.cos())
}

pub(crate) fn solver_tol(tol: f64) -> f64 {
    tol.clamp(1e-15, 1e-6)
}

/// Options for [`flow`].
#[derive(Debug, Clone, Default)]
pub(crate) struct FlowSpec<'a> {
    /// Terminal when `|x|` rises through this radius.
    pub halt_radius: Option<f64>,
    pub halt_on_zero: bool,
    pub halt_on_turn: bool,
    /// Record (non-terminal) crossings of `x = level`.
    pub level: Option<f64>,
    /// Times to sample through dense output, ordered along the direction of
    /// integration.
    pub outputs: &'a [f64],
    pub record_steps: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct FlowResult {
    pub t: f64,
    pub y: [f64; 3],
    /// Final value of the auxiliary component.
    pub aux: f64,
    pub halted: Option<EventKind>,
    pub events: Vec<Event>,
    pub level_hits: Vec<f64>,
    pub outputs: Vec<(PhaseState, f64)>,
    pub steps: Vec<PhaseState>,
}

/// Integrates the geodesic together with one auxiliary scalar `a` driven by
/// `a′ = aux(τ, (s, x, φ), a)`.
pub(crate) fn flow<A>(
    model: &MetricModel,
    tol: f64,
    t0: f64,
    y0: [f64; 3],
    a0: f64,
    t_end: f64,
    spec: &FlowSpec<'_>,
    aux: A,
) -> std::result::Result<FlowResult, OdeError>
where
    A: Fn(f64, &[f64], f64) -> f64,
{
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut res = FlowResult {
        t: t0,
        y: y0,
        aux: a0,
        halted: None,
        events: Vec::new(),
        level_hits: Vec::new(),
        outputs: Vec::with_capacity(spec.outputs.len()),
        steps: Vec::new(),
    };
    let mut oi = 0;
    while oi < spec.outputs.len() && spec.outputs[oi] == t0 {
        res.outputs.push((PhaseState::from_y(t0, &y0), a0));
        oi += 1;
    }
    if spec.record_steps {
        res.steps.push(PhaseState::from_y(t0, &y0));
    }
    if let Some(r) = spec.halt_radius {
        if y0[1].abs() >= r {
            let (sp, _) = y0[2].sin_cos();
            let w = model.warp(y0[0], y0[1]);
            let outward = y0[1] * dir * sp > 0.0 || (sp == 0.0 && y0[1] * w.gx > 0.0);
            if outward {
                res.halted = Some(boundary_kind(dir));
                res.events.push(Event {
                    kind: boundary_kind(dir),
                    tau: t0,
                });
                return Ok(res);
            }
        }
    }
    let rhs = |t: f64, y: &[f64; 4]| -> [f64; 4] {
        let f = field(model, y);
        [f[0], f[1], f[2], aux(t, &y[..3], y[3])]
    };
    // States near the flat torus are tiny in x and φ, so error control is
    // essentially relative.
    let solver = Solver::new(solver_tol(tol)).with_atol(solver_tol(tol) * 1e-10);
    let outputs = spec.outputs;
    let out = solver.run(&rhs, t0, [y0[0], y0[1], y0[2], a0], t_end, |st| {
        let mut cands: Vec<(f64, EventKind, bool)> = Vec::new();
        if let Some(t) = st.locate(|y| y[1]) {
            cands.push((t, EventKind::ZeroCrossing, spec.halt_on_zero));
        }
        if let Some(t) = st.locate(|y| y[2]) {
            cands.push((t, EventKind::Turning, spec.halt_on_turn));
        }
        if let Some(r) = spec.halt_radius {
            let g = |y: &[f64; 4]| r * r - y[1] * y[1];
            if g(&st.y0) > 0.0 {
                if let Some(t) = st.locate(g) {
                    cands.push((t, boundary_kind(dir), true));
                }
            }
        }
        cands.sort_by(|a, b| (dir * a.0).partial_cmp(&(dir * b.0)).unwrap());
        let mut stop = None;
        for (t, kind, terminal) in cands {
            res.events.push(Event { kind, tau: t });
            if terminal {
                stop = Some((t, kind));
                break;
            }
        }
        let t_lim = stop.map(|s| s.0).unwrap_or(st.t1);
        if let Some(level) = spec.level {
            if let Some(t) = st.locate(|y| y[1] - level) {
                if dir * (t - t_lim) <= 0.0 {
                    res.level_hits.push(t);
                }
            }
        }
        while oi < outputs.len() && dir * (outputs[oi] - t_lim) <= 0.0 {
            let y = st.eval(outputs[oi]);
            res.outputs.push((PhaseState::from_y(outputs[oi], &y), y[3]));
            oi += 1;
        }
        if spec.record_steps && stop.is_none() {
            res.steps.push(PhaseState::from_y(st.t1, &st.y1));
        }
        match stop {
            Some((t, kind)) => {
                res.halted = Some(kind);
                Control::Stop(t)
            }
            None => Control::Continue,
        }
    })?;
    res.t = out.t;
    res.y = [out.y[0], out.y[1], out.y[2]];
    res.aux = out.y[3];
    if spec.record_steps && out.stopped {
        res.steps.push(PhaseState::from_y(out.t, &out.y));
    }
    Ok(res)
}

fn boundary_kind(dir: f64) -> EventKind {
    if dir > 0.0 {
        EventKind::ExitStrip
    } else {
        EventKind::EnterStrip
    }
}

pub(crate) fn no_aux(_t: f64, _y: &[f64], _a: f64) -> f64 {
    0.0
}

/// Forward integration to `t_max`, halting when `|x|` leaves the strip.
pub fn integrate(model: &MetricModel, state0: &PhaseState, t_max: f64, tol: f64) -> Result<Trajectory> {
    check_state(model, state0)?;
    if !(t_max >= 0.0 && t_max.is_finite()) {
        return Err(GeodesicError::InvalidInput(format!("t_max = {t_max}")));
    }
    if !(1e-14..=1e-6).contains(&tol) {
        return Err(GeodesicError::InvalidInput(format!("tol = {tol:e} outside [1e-14, 1e-6]")));
    }
    let spec = FlowSpec {
        halt_radius: Some(model.half_width()),
        record_steps: true,
        ..Default::default()
    };
    let t0 = state0.tau;
    let fr = flow(model, tol, t0, state0.y(), 0.0, t0 + t_max, &spec, no_aux)?;
    let clairaut_drift = if model.is_s_independent() {
        let c0 = model.warp(state0.s, state0.x).g * state0.phi.cos();
        let drift = fr
            .steps
            .iter()
            .map(|p| (model.warp(p.s, p.x).g * p.phi.cos() - c0).abs())
            .fold(0.0, f64::max);
        Some(drift)
    } else {
        None
    };
    let mut samples = fr.steps;
    samples.dedup_by(|b, a| b.tau <= a.tau);
    Ok(Trajectory {
        samples,
        events: fr.events,
        clairaut_drift,
        tol,
    })
}

const CLASSIFY_TOL: f64 = 1e-12;

/// Bouncing / asymptotic / crossing classification relative to `N_R`.
pub fn classify_vector(model: &MetricModel, state0: &PhaseState, r: f64, horizon: f64) -> Result<VectorClass> {
    check_state(model, state0)?;
    if !(state0.x > 0.0 && state0.x <= r && r <= model.half_width()) {
        return Err(GeodesicError::InvalidInput(format!(
            "need 0 < x = {} <= R = {r} <= X",
            state0.x
        )));
    }
    if !(horizon > 0.0) {
        return Err(GeodesicError::InvalidInput(format!("horizon = {horizon}")));
    }
    let spec = FlowSpec {
        halt_radius: Some(r),
        ..Default::default()
    };
    let y0 = state0.y();
    let fwd = flow(model, CLASSIFY_TOL, 0.0, y0, 0.0, horizon, &spec, no_aux)?;
    let bwd = flow(model, CLASSIFY_TOL, 0.0, y0, 0.0, -horizon, &spec, no_aux)?;
    let exit_time = |fr: &FlowResult| fr.halted.map(|_| fr.t.abs());
    let t2 = exit_time(&fwd);
    let t1 = exit_time(&bwd);
    let first = |fr: &FlowResult, k: EventKind| fr.events.iter().find(|e| e.kind == k).map(|e| e.tau);
    if let Some(t0) = first(&fwd, EventKind::ZeroCrossing).or_else(|| first(&bwd, EventKind::ZeroCrossing)) {
        return Ok(VectorClass {
            kind: VectorKind::Crossing { t0 },
            t1,
            t2,
        });
    }
    if let (Some(_), Some(_)) = (t1, t2) {
        let t_turn = if state0.phi < 0.0 {
            first(&fwd, EventKind::Turning).unwrap_or(0.0)
        } else {
            0.0
        };
        return Ok(VectorClass {
            kind: VectorKind::Bouncing { t_turn },
            t1,
            t2,
        });
    }
    // Decay signature in whichever direction stayed inside: x moves toward
    // 0 and |x′| shrinks.
    let decays = |dir: f64| -> Result<bool> {
        let times = [dir * 0.5 * horizon, dir * horizon];
        let sp = FlowSpec {
            outputs: &times,
            ..Default::default()
        };
        let fr = flow(model, CLASSIFY_TOL, 0.0, y0, 0.0, dir * horizon, &sp, no_aux)?;
        let (a, b) = (fr.outputs[0].0, fr.outputs[1].0);
        let toward = dir * b.phi < 0.0 && dir * a.phi < 0.0;
        Ok(toward && b.phi.abs() < a.phi.abs() && b.x < a.x)
    };
    let ok = match (t1, t2) {
        (_, None) => decays(1.0)?,
        (None, Some(_)) => decays(-1.0)?,
        _ => unreachable!(),
    };
    if ok {
        Ok(VectorClass {
            kind: VectorKind::Asymptotic,
            t1,
            t2,
        })
    } else {
        Err(GeodesicError::Inconclusive(
            "horizon reached without a monotone decay signature".into(),
        ))
    }
}

/// A geodesic segment on `[t_start, t_end]`, represented by one state at
/// `anchor_time`. Sampling integrates outward from the anchor, which keeps
/// long bouncing segments well conditioned when the anchor is the turning
/// point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub anchor: PhaseState,
    pub t_start: f64,
    pub t_end: f64,
}

impl Orbit {
    pub fn length(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Same geodesic with time origin moved forward by `dt`.
    pub fn shifted(&self, dt: f64) -> Orbit {
        let mut anchor = self.anchor;
        anchor.tau -= dt;
        Orbit {
            anchor,
            t_start: self.t_start - dt,
            t_end: self.t_end - dt,
        }
    }

    /// States at ascending `times`.
    pub fn sample(&self, model: &MetricModel, times: &[f64], tol: f64) -> Result<Vec<PhaseState>> {
        Ok(self.sample_aux(model, times, tol, |_, _| 0.0)?.into_iter().map(|p| p.0).collect())
    }

    /// States at ascending `times` together with `∫_{anchor}^{τ} f`.
    pub(crate) fn sample_aux<F>(
        &self,
        model: &MetricModel,
        times: &[f64],
        tol: f64,
        f: F,
    ) -> Result<Vec<(PhaseState, f64)>>
    where
        F: Fn(f64, &[f64]) -> f64,
    {
        let ta = self.anchor.tau;
        let split = times.partition_point(|&t| t < ta);
        let mut back: Vec<f64> = times[..split].to_vec();
        back.reverse();
        let fwd = &times[split..];
        let aux = |t: f64, y: &[f64], _a: f64| f(t, y);
        let mut out = Vec::with_capacity(times.len());
        if !back.is_empty() {
            let sp = FlowSpec {
                outputs: &back,
                ..Default::default()
            };
            let fr = flow(model, tol, ta, self.anchor.y(), 0.0, back[back.len() - 1], &sp, aux)?;
            out.extend(fr.outputs.into_iter().rev());
        }
        if !fwd.is_empty() {
            let sp = FlowSpec {
                outputs: fwd,
                ..Default::default()
            };
            let fr = flow(model, tol, ta, self.anchor.y(), 0.0, fwd[fwd.len() - 1], &sp, aux)?;
            out.extend(fr.outputs);
        }
        Ok(out)
    }

    /// `∫_{t_start}^{t_end} f(τ, state) dτ`.
    pub fn integral<F>(&self, model: &MetricModel, tol: f64, f: F) -> Result<f64>
    where
        F: Fn(f64, &[f64]) -> f64,
    {
        let ta = self.anchor.tau;
        let aux = |t: f64, y: &[f64], _a: f64| f(t, y);
        let spec = FlowSpec::default();
        let mut total = 0.0;
        if self.t_start < ta {
            let fr = flow(model, tol, ta, self.anchor.y(), 0.0, self.t_start, &spec, aux)?;
            total -= fr.aux;
        }
        if self.t_end > ta {
            let fr = flow(model, tol, ta, self.anchor.y(), 0.0, self.t_end, &spec, aux)?;
            total += fr.aux;
        }
        Ok(total)
    }

    /// Crossings of `x = level` inside `[t_start, t_end]`, ascending.
    pub fn level_crossings(&self, model: &MetricModel, level: f64, tol: f64) -> Result<Vec<f64>> {
        let ta = self.anchor.tau;
        let spec = FlowSpec {
            level: Some(level),
            ..Default::default()
        };
        let mut hits = Vec::new();
        if self.t_start < ta {
            let fr = flow(model, tol, ta, self.anchor.y(), 0.0, self.t_start, &spec, no_aux)?;
            hits.extend(fr.level_hits);
        }
        if self.t_end > ta {
            let fr = flow(model, tol, ta, self.anchor.y(), 0.0, self.t_end, &spec, no_aux)?;
            hits.extend(fr.level_hits);
        }
        hits.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(hits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowResult {
    pub w: PhaseState,
    pub t: f64,
    pub s1: f64,
    pub residual: f64,
    pub iterations: usize,
    /// First minimizer of `x` along the segment.
    pub t_turn: f64,
    /// Well-conditioned description of the segment `[0, t]`.
    pub orbit: Orbit,
}

/// Shadowing map `Π_{t,R}`: the geodesic segment of length `t` from height
/// `R` back to height `R` that dips toward the flat torus.
pub fn shadow_map(model: &MetricModel, s0: f64, t: f64, r: f64, tol: f64) -> Result<ShadowResult> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(GeodesicError::InvalidInput(format!("segment length t = {t}")));
    }
    if !(r > 0.0 && r <= model.half_width()) {
        return Err(GeodesicError::InvalidInput(format!("need 0 < R = {r} <= X")));
    }
    if !(tol > 0.0) {
        return Err(GeodesicError::InvalidInput(format!("tol = {tol}")));
    }
    let res = if model.is_flat() {
        let w = PhaseState::new(s0, r, 0.0);
        ShadowResult {
            w,
            t,
            s1: s0 + t,
            residual: 0.0,
            iterations: 0,
            t_turn: 0.0,
            orbit: Orbit {
                anchor: w,
                t_start: 0.0,
                t_end: t,
            },
        }
    } else if model.is_s_independent() {
        shadow_symmetric(model, s0, t, r, tol)?
    } else {
        shadow_shooting(model, s0, t, r, tol)?
    };
    if res.w.phi.abs() >= FRAC_PI_4 {
        return Err(GeodesicError::StripTooWide { phi: res.w.phi });
    }
    Ok(res)
}

const SHOOT_TOL: f64 = 1e-14;

fn inner_tol(tol: f64) -> f64 {
    (tol * 1e-3).clamp(1e-13, 1e-8)
}

/// For s-independent warps the solution is symmetric about its turning
/// point, so solve for the turning height `x_min` such that the half orbit
/// from `(·, x_min, 0)` reaches height `R` after exactly `t/2`.
fn shadow_symmetric(model: &MetricModel, s0: f64, t: f64, r: f64, tol: f64) -> Result<ShadowResult> {
    let itol = inner_tol(tol);
    let half = 0.5 * t;
    let ceiling = (2.0 * r).min(model.half_width().max(r * 1.5));
    let spec = FlowSpec {
        halt_radius: Some(ceiling),
        ..Default::default()
    };
    let mut iterations = 0usize;
    // Continuous and increasing in x_min: x(half) − R, extended past the
    // ceiling by the unused time.
    let mut excess = |lx: f64| -> Result<f64> {
        iterations += 1;
        let fr = flow(model, itol, 0.0, [0.0, lx.exp(), 0.0], 0.0, half, &spec, no_aux)?;
        Ok(match fr.halted {
            Some(_) => (ceiling - r) + (half - fr.t),
            None => fr.y[1] - r,
        })
    };
    let hi = r.ln();
    let f_hi = excess(hi)?;
    let mut lo = hi - std::f64::consts::LN_2;
    let mut f_lo = excess(lo)?;
    while f_lo >= 0.0 {
        lo -= 2.0 * std::f64::consts::LN_2;
        if lo < -600.0 {
            return Err(GeodesicError::NoConvergence {
                residual: f_lo,
                iterations,
            });
        }
        f_lo = excess(lo)?;
    }
    let mut err = None;
    let lx = brent(
        |v| match excess(v) {
            Ok(f) => f,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        },
        lo,
        hi,
        f_lo,
        f_hi,
        1e-15,
        300,
    );
    if let Some(e) = err {
        return Err(e);
    }
    let x_min = lx.exp();
    let fwd = flow(model, itol, 0.0, [0.0, x_min, 0.0], 0.0, half, &FlowSpec::default(), no_aux)?;
    let bwd = flow(model, itol, 0.0, [0.0, x_min, 0.0], 0.0, -half, &FlowSpec::default(), no_aux)?;
    let residual = (fwd.y[1] - r).abs().max((bwd.y[1] - r).abs());
    if !(residual <= tol) {
        return Err(GeodesicError::NoConvergence { residual, iterations });
    }
    let shift = s0 - bwd.y[0];
    let w = PhaseState {
        s: s0,
        x: r,
        phi: bwd.y[2],
        tau: 0.0,
    };
    Ok(ShadowResult {
        w,
        t,
        s1: fwd.y[0] + shift,
        residual,
        iterations,
        t_turn: half,
        orbit: Orbit {
            anchor: PhaseState {
                s: shift,
                x: x_min,
                phi: 0.0,
                tau: half,
            },
            t_start: 0.0,
            t_end: t,
        },
    })
}

/// General case: shoot on the launch angle from `(s0, R)`.
fn shadow_shooting(model: &MetricModel, s0: f64, t: f64, r: f64, tol: f64) -> Result<ShadowResult> {
    // The endpoint is very sensitive to the launch angle, so integration
    // error, not the bracket width, sets the attainable residual.
    let itol = SHOOT_TOL;
    let spec = FlowSpec {
        halt_radius: Some(r),
        halt_on_zero: true,
        ..Default::default()
    };
    // true when the launch is too shallow (returns to R before t)
    let shallow = |phi0: f64| -> Result<bool> {
        let fr = flow(model, itol, 0.0, [s0, r, phi0], 0.0, t, &spec, no_aux)?;
        Ok(matches!(fr.halted, Some(EventKind::ExitStrip)) && fr.t < t)
    };
    let mut lo = -FRAC_PI_2 + 1e-6;
    let mut hi = 0.0;
    if shallow(lo)? {
        return Err(GeodesicError::NoConvergence {
            residual: f64::INFINITY,
            iterations: 1,
        });
    }
    let mut iterations = 1;
    while hi - lo > 1e-16 * lo.abs().max(1e-3) && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        iterations += 1;
        if shallow(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let end_x = |phi0: f64| -> Result<f64> {
        let fr = flow(model, itol, 0.0, [s0, r, phi0], 0.0, t, &FlowSpec::default(), no_aux)?;
        Ok(fr.y[1])
    };
    // Secant polish on x(t) − R using the bracket ends.
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (end_x(a)? - r, end_x(b)? - r);
    for _ in 0..8 {
        if fb == fa {
            break;
        }
        let c = b - fb * (b - a) / (fb - fa);
        if !(c > lo - 1e-9 && c < hi + 1e-9) || c == b {
            break;
        }
        let fc = end_x(c)? - r;
        iterations += 1;
        a = b;
        fa = fb;
        b = c;
        fb = fc;
    }
    let (phi0, residual) = [(lo, end_x(lo)? - r), (hi, end_x(hi)? - r), (a, fa), (b, fb)]
        .into_iter()
        .map(|(p, f)| (p, f.abs()))
        .fold((lo, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
    if !(residual <= tol) {
        return Err(GeodesicError::NoConvergence { residual, iterations });
    }
    let w = PhaseState::new(s0, r, phi0);
    let tspec = FlowSpec {
        halt_on_turn: true,
        ..Default::default()
    };
    let turn = flow(model, itol, 0.0, w.y(), 0.0, t, &tspec, no_aux)?;
    let t_turn = if turn.halted == Some(EventKind::Turning) { turn.t } else { t };
    let end = flow(model, itol, 0.0, w.y(), 0.0, t, &FlowSpec::default(), no_aux)?;
    Ok(ShadowResult {
        w,
        t,
        s1: end.y[0],
        residual,
        iterations,
        t_turn,
        orbit: Orbit {
            anchor: w,
            t_start: 0.0,
            t_end: t,
        },
    })
}

/// `max(|Δs mod γ₀|, |Δx|, |Δφ|)`.
pub fn phase_distance(model: &MetricModel, a: &PhaseState, b: &PhaseState) -> f64 {
    let p = model.period();
    let r = (a.s - b.s).abs().rem_euclid(p);
    r.min(p - r).max((a.x - b.x).abs()).max((a.phi - b.phi).abs())
}

fn sample_times(t: f64, step: f64) -> Vec<f64> {
    let n = (t / step).floor() as usize;
    let mut ts: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
    if ts.last().is_none_or(|&l| l < t) {
        ts.push(t);
    }
    ts
}

const DT_TOL: f64 = 1e-12;

/// `d_t(v₁, v₂)` sampled every `step` on `[0, t]`.
pub fn dt_distance(model: &MetricModel, v1: &PhaseState, v2: &PhaseState, t: f64, step: f64) -> Result<f64> {
    check_state(model, v1)?;
    check_state(model, v2)?;
    if !(step > 0.0 && t >= 0.0) {
        return Err(GeodesicError::InvalidInput(format!("t = {t}, step = {step}")));
    }
    let o1 = Orbit {
        anchor: PhaseState { tau: 0.0, ..*v1 },
        t_start: 0.0,
        t_end: t,
    };
    let o2 = Orbit {
        anchor: PhaseState { tau: 0.0, ..*v2 },
        t_start: 0.0,
        t_end: t,
    };
    orbit_distance(model, &o1, &o2, t, step, DT_TOL)
}

/// `d_t` between two orbit descriptions over `[0, t]`.
pub fn orbit_distance(model: &MetricModel, o1: &Orbit, o2: &Orbit, t: f64, step: f64, tol: f64) -> Result<f64> {
    let ts = sample_times(t, step);
    let a = o1.sample(model, &ts, tol)?;
    let b = o2.sample(model, &ts, tol)?;
    Ok(a.iter().zip(&b).map(|(p, q)| phase_distance(model, p, q)).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub pairs_checked: usize,
    pub threshold: f64,
    pub worst_pair: (usize, usize),
    pub worst_distance: f64,
    pub passed: bool,
}

/// Maps a `(t, δ)`-separated set of singular orbits through `Π_{t,R}` and
/// checks that the images stay `(t, δ/4)`-separated.
pub fn separated_preservation_check(
    model: &MetricModel,
    seeds: &[f64],
    t: f64,
    delta: f64,
    r: f64,
) -> Result<SeparationReport> {
    use rayon::prelude::*;
    if seeds.len() < 2 {
        return Err(GeodesicError::InvalidInput("need at least two seeds".into()));
    }
    let step = (t / 512.0).min(delta);
    for i in 0..seeds.len() {
        for j in i + 1..seeds.len() {
            let d = dt_distance(
                model,
                &PhaseState::new(seeds[i], 0.0, 0.0),
                &PhaseState::new(seeds[j], 0.0, 0.0),
                t,
                step,
            )?;
            if d < delta {
                return Err(GeodesicError::SeparationViolated {
                    stage: "input",
                    i,
                    j,
                    distance: d,
                    threshold: delta,
                });
            }
        }
    }
    let ts = sample_times(t, step);
    let paths: Vec<Vec<PhaseState>> = seeds
        .par_iter()
        .map(|&s0| {
            let sh = shadow_map(model, s0, t, r, 1e-9)?;
            sh.orbit.sample(model, &ts, 1e-12)
        })
        .collect::<Result<_>>()?;
    let threshold = 0.25 * delta;
    let mut worst = (0, 1, f64::INFINITY);
    let mut pairs = 0;
    for i in 0..paths.len() {
        for j in i + 1..paths.len() {
            pairs += 1;
            let d = paths[i]
                .iter()
                .zip(&paths[j])
                .map(|(p, q)| phase_distance(model, p, q))
                .fold(0.0, f64::max);
            if d < worst.2 {
                worst = (i, j, d);
            }
        }
    }
    if worst.2 < threshold {
        return Err(GeodesicError::SeparationViolated {
            stage: "image",
            i: worst.0,
            j: worst.1,
            distance: worst.2,
            threshold,
        });
    }
    Ok(SeparationReport {
        pairs_checked: pairs,
        threshold,
        worst_pair: (worst.0, worst.1),
        worst_distance: worst.2,
        passed: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ProfileSpec;

    fn power() -> MetricModel {
        MetricModel::new(ProfileSpec::Power { m: 2, c: 1.0 }, 2, 1.0, 1.0).unwrap()
    }

    #[test]
    fn rhs_values() {
        let f = geodesic_rhs(&power(), &PhaseState::new(0.0, 0.5, 0.0)).unwrap();
        assert!((f[0] - 1.0 / 1.0625).abs() < 1e-15);
        assert_eq!(f[1], 0.0);
        assert!((f[2] - 0.5 / 1.0625).abs() < 1e-15);
        let v = geodesic_rhs(&power(), &PhaseState::new(0.0, 0.5, FRAC_PI_2)).unwrap();
        assert!(v[0].abs() < 1e-16 && (v[1] - 1.0).abs() < 1e-16 && v[2].abs() < 1e-16);
    }

    #[test]
    fn flat_line() {
        let md = MetricModel::new(ProfileSpec::Flat, 2, 1.0, 1.0).unwrap();
        let tr = integrate(&md, &PhaseState::new(0.0, 0.5, -std::f64::consts::FRAC_PI_6), 1.0, 1e-12).unwrap();
        let last = tr.samples.last().unwrap();
        assert!((last.tau - 1.0).abs() < 1e-14);
        assert!(last.x.abs() < 1e-12);
    }

    #[test]
    fn turning_event_power() {
        let tr = integrate(&power(), &PhaseState::new(0.0, 0.4, -0.05), 1e3, 1e-12).unwrap();
        let turns = tr.events.iter().filter(|e| e.kind == EventKind::Turning).count();
        assert_eq!(turns, 1);
        assert!(tr.clairaut_drift.unwrap() < 1e-9);
    }

    #[test]
    fn flat_shadow() {
        let md = MetricModel::new(ProfileSpec::Flat, 2, 1.0, 1.0).unwrap();
        let sh = shadow_map(&md, 0.0, 5.0, 0.5, 1e-9).unwrap();
        assert_eq!(sh.w.phi, 0.0);
        assert_eq!(sh.s1, 5.0);
    }

    #[test]
    fn short_shadow_is_nearly_tangent() {
        let sh = shadow_map(&power(), 0.0, 1e-3, 0.3, 1e-10).unwrap();
        assert!(sh.w.phi < 0.0 && sh.w.phi.abs() < 1e-3);
    }

    #[test]
    fn distance_is_periodic() {
        let md = power();
        let a = PhaseState::new(0.05, 0.0, 0.0);
        let b = PhaseState::new(0.95, 0.0, 0.0);
        assert!((phase_distance(&md, &a, &b) - 0.1).abs() < 1e-12);
    }
}
