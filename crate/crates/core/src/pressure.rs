//! Potentials vanishing to a power near the flat torus, escape times,
//! the binomial-counting pressure-gap bound and separated-set pressure
//! estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesics::{phase_distance, shadow_map, GeodesicError, Orbit, PhaseState};
use crate::geometry::{GeometryError, MetricModel};
use crate::riccati::{psi_u, LimitSettings, RiccatiError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PressureError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("orbit (t = {t}, s0 = {s0}) never descends below eps = {eps}")]
    EscapeNotObserved { t: f64, s0: f64, eps: f64 },
    #[error("{0}")]
    Unsupported(&'static str),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, PressureError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PotentialKind {
    PowerLaw,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub c0: f64,
    pub c: f64,
    pub a: f64,
    pub b: f64,
    pub r_cut: f64,
    pub m: u32,
}

impl PotentialSpec {
    pub fn power_law(c0: f64, c: f64, a: f64, b: f64, r_cut: f64, m: u32) -> Result<Self> {
        let s = PotentialSpec {
            kind: PotentialKind::PowerLaw,
            c0,
            c,
            a,
            b,
            r_cut,
            m,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.c0.is_finite()
            && self.c > 0.0
            && self.a > 0.0
            && self.b > 0.0
            && self.r_cut > 0.0
            && self.m >= 1
            && self.c.is_finite()
            && self.a.is_finite()
            && self.b.is_finite()
            && self.r_cut.is_finite();
        if ok {
            Ok(())
        } else {
            Err(PressureError::InvalidInput(format!("{self:?}")))
        }
    }

    /// Saturation scale: twice `ρ` at `|x| = |φ| = R_cut`.
    pub fn rho_cut(&self) -> f64 {
        2.0 * (self.r_cut.powf(self.a) + self.r_cut.powf(self.b))
    }
}

/// Identity up to 1/2, then a C¹ exponential approach to 1.
fn saturate(y: f64) -> f64 {
    if y <= 0.5 {
        y
    } else {
        1.0 - 0.5 * (-(2.0 * y - 1.0)).exp()
    }
}

/// `C₀ − C(|x|ᵃ + |φ|ᵇ)` near the torus, frozen smoothly far from it.
pub fn evaluate_power_law(spec: &PotentialSpec, x: f64, phi: f64) -> f64 {
    let rho = x.abs().powf(spec.a) + phi.abs().powf(spec.b);
    let rc = spec.rho_cut();
    spec.c0 - spec.c * rc * saturate(rho / rc)
}

pub fn evaluate_potential(spec: &PotentialSpec, model: &MetricModel, v: &PhaseState) -> Result<f64> {
    match spec.kind {
        PotentialKind::PowerLaw => Ok(evaluate_power_law(spec, v.x, v.phi)),
        PotentialKind::Geometric => {
            if model.n() != 2 {
                return Err(PressureError::Unsupported("the geometric potential needs a surface"));
            }
            Ok(psi_u(model, v, &LimitSettings::default())?.psi_u)
        }
    }
}

/// `sup |φ|` over the model.
pub fn phi_norm(spec: &PotentialSpec, model: &MetricModel) -> f64 {
    match spec.kind {
        PotentialKind::PowerLaw => spec.c0.abs().max((spec.c0 - spec.c * spec.rho_cut()).abs()),
        // |ψᵘ| never exceeds the square root of the largest |K|.
        PotentialKind::Geometric => {
            let x_max = model.half_width();
            let ns = if model.is_s_independent() { 1 } else { 64 };
            let mut k: f64 = 0.0;
            for i in 0..ns {
                let s = model.period() * i as f64 / ns as f64;
                for j in 0..=512 {
                    let w = model.warp(s, x_max * j as f64 / 512.0);
                    k = k.max(w.gxx / w.g);
                }
            }
            k.sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    HasGap,
    BoundaryVertex,
    Boundary,
    Outside,
}

/// Position of the exponents `(a, b)` relative to the corner
/// `(m/2, m/(m+2))`.
pub fn classify_potential_region(a: f64, b: f64, m: u32) -> Region {
    let mf = m as f64;
    let (a0, b0) = (mf / 2.0, mf / (mf + 2.0));
    let eq = |u: f64, v: f64| (u - v).abs() <= 1e-12 * v.max(1.0);
    let (ea, eb) = (eq(a, a0), eq(b, b0));
    match (ea, eb) {
        (true, true) => Region::BoundaryVertex,
        (true, false) if b > b0 => Region::Boundary,
        (false, true) if a > a0 => Region::Boundary,
        (false, false) if a > a0 && b > b0 => Region::HasGap,
        _ => Region::Outside,
    }
}

/// Pressure of the singular set: zero entropy plus the constant value.
pub fn sing_pressure(spec: &PotentialSpec) -> f64 {
    match spec.kind {
        PotentialKind::PowerLaw => spec.c0,
        PotentialKind::Geometric => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeSample {
    pub t: f64,
    pub s0: f64,
    pub first: f64,
    pub last: f64,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeReport {
    pub eps: f64,
    pub r: f64,
    pub l: f64,
    pub samples: Vec<EscapeSample>,
    /// `(Q/ε)^{m/2}` when a decay constant was supplied.
    pub predicted: Option<f64>,
}

/// Measured time for shadowing orbits to come within `ε` of the torus, at
/// both ends of the segment.
pub fn escape_time_l(
    model: &MetricModel,
    eps: f64,
    r: f64,
    t_list: &[f64],
    s0_list: &[f64],
    q: Option<(f64, u32)>,
    tol: f64,
) -> Result<EscapeReport> {
    if !(eps > 0.0 && r > 0.0 && r <= model.half_width()) {
        return Err(PressureError::InvalidInput(format!("eps = {eps}, R = {r}")));
    }
    let predicted = q.map(|(q, m)| (q / eps).powf(m as f64 / 2.0));
    if eps >= r {
        return Ok(EscapeReport {
            eps,
            r,
            l: 0.0,
            samples: Vec::new(),
            predicted,
        });
    }
    let cells: Vec<(f64, f64)> = t_list.iter().flat_map(|&t| s0_list.iter().map(move |&s| (t, s))).collect();
    let samples: Vec<EscapeSample> = cells
        .par_iter()
        .map(|&(t, s0)| -> Result<EscapeSample> {
            let sh = shadow_map(model, s0, t, r, tol)?;
            let hits = sh.orbit.level_crossings(model, eps, tol.min(1e-10))?;
            let (first, last) = match (hits.first(), hits.last()) {
                (Some(&f), Some(&l)) => (f, l),
                _ => return Err(PressureError::EscapeNotObserved { t, s0, eps }),
            };
            let l = first.max(t - last);
            if l > 0.5 * t {
                return Err(PressureError::EscapeNotObserved { t, s0, eps });
            }
            Ok(EscapeSample { t, s0, first, last, l })
        })
        .collect::<Result<_>>()?;
    let l = samples.iter().map(|s| s.l).fold(0.0, f64::max);
    Ok(EscapeReport {
        eps,
        r,
        l,
        samples,
        predicted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCertificate {
    pub transition_time: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub xi: f64,
    pub c_key: f64,
    pub phi_norm: f64,
    /// `𝒯·‖φ‖ + C_key`.
    pub c: f64,
    pub alpha_opt: f64,
    pub gap: f64,
    pub model_hash: Option<String>,
    pub spec: Option<PotentialSpec>,
}

/// `sup_α [H(α) − αc]/ξ = ln(1 + e^{−c})/ξ`, attained at `α = 1/(1 + e^c)`.
pub fn gap_lower_bound(c_key: f64, phi_norm: f64, transition_time: f64, l: f64) -> Result<GapCertificate> {
    if !(c_key >= 0.0 && phi_norm >= 0.0 && l >= 0.0 && transition_time > 0.0)
        || ![c_key, phi_norm, l, transition_time].iter().all(|v| v.is_finite())
    {
        return Err(PressureError::InvalidInput(format!(
            "C_key = {c_key}, phi_norm = {phi_norm}, T = {transition_time}, L = {l}"
        )));
    }
    let xi = transition_time + 2.0 * l;
    let c = transition_time * phi_norm + c_key;
    Ok(GapCertificate {
        transition_time,
        l,
        xi,
        c_key,
        phi_norm,
        c,
        alpha_opt: 1.0 / (1.0 + c.exp()),
        gap: (-c).exp().ln_1p() / xi,
        model_hash: None,
        spec: None,
    })
}

/// Entropy of a two-letter distribution.
pub fn binary_entropy(a: f64) -> f64 {
    let h = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    h(a) + h(1.0 - a)
}

/// Brute-force `max_α [H(α) − αc]/ξ` on a log-spaced grid in `[10⁻¹², 1/2]`.
pub fn gap_grid_search(c: f64, xi: f64, points: usize) -> (f64, f64) {
    let (lo, hi): (f64, f64) = (1e-12, 0.5);
    let r = (hi / lo).ln() / (points - 1) as f64;
    (0..points)
        .map(|i| {
            let a = lo * (r * i as f64).exp();
            (a, (binary_entropy(a) - a * c) / xi)
        })
        .fold((0.0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatedSetEstimate {
    pub delta: f64,
    pub t: f64,
    pub count: usize,
    pub lambda: f64,
    pub p_hat: f64,
    /// Indices of the chosen seeds.
    pub selected: Vec<usize>,
    /// Seeds whose orbit left the strip before `t`.
    pub dropped: usize,
}

/// Greedy `(t, δ)`-separated subset of `seeds`, in seed order, and the
/// partition sum `Σ exp ∫₀ᵗ φ` over it.
pub fn lambda_estimate(
    model: &MetricModel,
    spec: &PotentialSpec,
    delta: f64,
    t: f64,
    seeds: &[PhaseState],
    tol: f64,
) -> Result<SeparatedSetEstimate> {
    if !(delta > 0.0 && t > 0.0) || seeds.is_empty() {
        return Err(PressureError::InvalidInput("need delta > 0, t > 0 and seeds".into()));
    }
    if spec.kind != PotentialKind::PowerLaw {
        return Err(PressureError::Unsupported("separated-set sums use PowerLaw potentials"));
    }
    let step = (t / 256.0).min(delta);
    let mut times: Vec<f64> = (0..).map(|k| k as f64 * step).take_while(|&s| s < t).collect();
    times.push(t);
    let x_max = model.half_width();
    let orbits: Vec<Option<(Vec<PhaseState>, f64)>> = seeds
        .par_iter()
        .map(|v| -> Result<Option<(Vec<PhaseState>, f64)>> {
            let o = Orbit {
                anchor: PhaseState { tau: 0.0, ..*v },
                t_start: 0.0,
                t_end: t,
            };
            let path = o.sample(model, &times, tol)?;
            if path.iter().any(|p| p.x.abs() > x_max) {
                return Ok(None);
            }
            let integral = o.integral(model, tol, |_, y| evaluate_power_law(spec, y[1], y[2]))?;
            Ok(Some((path, integral)))
        })
        .collect::<Result<_>>()?;
    let mut selected: Vec<usize> = Vec::new();
    for (i, o) in orbits.iter().enumerate() {
        let Some((path, _)) = o else { continue };
        let separated = selected.iter().all(|&j| {
            let other = &orbits[j].as_ref().unwrap().0;
            path.iter().zip(other).map(|(p, q)| phase_distance(model, p, q)).fold(0.0, f64::max) >= delta
        });
        if separated {
            selected.push(i);
        }
    }
    let sums: Vec<f64> = selected.iter().map(|&i| orbits[i].as_ref().unwrap().1).collect();
    let top = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_lambda = top + sums.iter().map(|s| (s - top).exp()).sum::<f64>().ln();
    Ok(SeparatedSetEstimate {
        delta,
        t,
        count: selected.len(),
        lambda: log_lambda.exp(),
        p_hat: log_lambda / t,
        selected,
        dropped: orbits.iter().filter(|o| o.is_none()).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturation_is_c1() {
        let h = 1e-7;
        let d = (saturate(0.5 + h) - saturate(0.5)) / h;
        assert!((d - 1.0).abs() < 1e-6);
        assert!(saturate(5.0) < 1.0 && saturate(50.0) <= 1.0);
    }

    #[test]
    fn regions() {
        assert_eq!(classify_potential_region(1.5, 0.7, 2), Region::HasGap);
        assert_eq!(classify_potential_region(1.0, 0.5, 2), Region::BoundaryVertex);
        assert_eq!(classify_potential_region(1.0, 0.7, 2), Region::Boundary);
        assert_eq!(classify_potential_region(0.5, 0.5, 2), Region::Outside);
        assert_eq!(classify_potential_region(1.0, 0.4, 2), Region::Outside);
    }

    #[test]
    fn pure_entropy_gap() {
        let g = gap_lower_bound(0.0, 0.0, 1.0, 0.0).unwrap();
        assert!((g.gap - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g.alpha_opt, 0.5);
    }
}
