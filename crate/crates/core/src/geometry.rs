//! Warped-product metrics `dx² + G(s,x)² ds²` near a flat torus at `x = 0`,
//! with analytic derivatives of the warp and the curvature quantities built
//! from them.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("|x| = {x} lies outside the strip of half-width {half_width}")]
    OutOfStrip { x: f64, half_width: f64 },
    #[error("operation not supported for {0} profiles")]
    Unsupported(&'static str),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("curvature order mismatch for m = {m}: {reason}")]
    OrderMismatch { m: u32, reason: String },
}

/// Warp-factor family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ProfileSpec {
    Flat,
    /// `G = 1 + c|x|^(m+2)`.
    Power { m: u32, c: f64 },
    /// Power profile glued C² to a cosh cap at `|x| = x_cap`.
    CappedPower { m: u32, c: f64, x_cap: f64 },
    /// `G = 1 + c·b(s)|x|^(m+2)` with `b` a smooth periodic bump equal to 1
    /// on `[0, gamma1]` and 0 away from it. `c_min` is the floor of the
    /// coefficient on `[0, gamma1]`.
    SDependent { m: u32, c: f64, c_min: f64, gamma1: f64 },
    /// `G = cosh(kx)`.
    ConstantCurvature { k: f64 },
}

impl ProfileSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProfileSpec::Flat => "Flat",
            ProfileSpec::Power { .. } => "Power",
            ProfileSpec::CappedPower { .. } => "CappedPower",
            ProfileSpec::SDependent { .. } => "SDependent",
            ProfileSpec::ConstantCurvature { .. } => "ConstantCurvature",
        }
    }

    /// Curvature-vanishing order, if the family has one.
    pub fn order(&self) -> Option<u32> {
        match *self {
            ProfileSpec::Power { m, .. }
            | ProfileSpec::CappedPower { m, .. }
            | ProfileSpec::SDependent { m, .. } => Some(m),
            _ => None,
        }
    }
}

/// Warp factor and its first two x-derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Warp {
    pub g: f64,
    pub gx: f64,
    pub gxx: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSample {
    pub k_perp: f64,
    pub k_sigma: f64,
    pub ric: f64,
}

/// Cosh cap `alpha·cosh(beta(|x| − x0))` used beyond `x_cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cap {
    pub alpha: f64,
    pub beta: f64,
    pub x0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricModel {
    profile: ProfileSpec,
    n: usize,
    half_width: f64,
    period: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    cap: Option<Cap>,
}

impl MetricModel {
    /// Validates the parameters and precomputes the cap for `CappedPower`.
    pub fn new(profile: ProfileSpec, n: usize, half_width: f64, period: f64) -> Result<Self, GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidModel(msg));
        if n < 2 {
            return bad(format!("dimension n = {n} must be at least 2"));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return bad(format!("strip half-width X = {half_width} must be positive"));
        }
        if !(period > 0.0 && period.is_finite()) {
            return bad(format!("period gamma0 = {period} must be positive"));
        }
        let pos = |name: &str, v: f64| -> Result<(), GeometryError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(GeometryError::InvalidModel(format!("{name} = {v} must be positive")))
            }
        };
        let order = |m: u32| -> Result<(), GeometryError> {
            if (1..=64).contains(&m) {
                Ok(())
            } else {
                Err(GeometryError::InvalidModel(format!("order m = {m} must lie in 1..=64")))
            }
        };
        let mut cap = None;
        match profile {
            ProfileSpec::Flat => {}
            ProfileSpec::Power { m, c } => {
                order(m)?;
                pos("c", c)?;
            }
            ProfileSpec::CappedPower { m, c, x_cap } => {
                order(m)?;
                pos("c", c)?;
                pos("x_cap", x_cap)?;
                cap = Some(solve_cap(m, c, x_cap)?);
            }
            ProfileSpec::SDependent { m, c, c_min, gamma1 } => {
                order(m)?;
                pos("c", c)?;
                pos("c_min", c_min)?;
                pos("gamma1", gamma1)?;
                if n != 2 {
                    return bad(format!("SDependent profiles are surfaces, got n = {n}"));
                }
                if c_min > c {
                    return bad(format!("c_min = {c_min} exceeds the bump height c = {c}"));
                }
                if gamma1 >= period {
                    return bad(format!("gamma1 = {gamma1} must be smaller than gamma0 = {period}"));
                }
            }
            ProfileSpec::ConstantCurvature { k } => pos("k", k)?,
        }
        Ok(MetricModel {
            profile,
            n,
            half_width,
            period,
            cap,
        })
    }

    pub fn profile(&self) -> &ProfileSpec {
        &self.profile
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn cap(&self) -> Option<Cap> {
        self.cap
    }

    pub fn is_s_independent(&self) -> bool {
        !matches!(self.profile, ProfileSpec::SDependent { .. })
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.profile, ProfileSpec::Flat)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("model serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check(&self, x: f64) -> Result<(), GeometryError> {
        if x.abs() <= self.half_width {
            Ok(())
        } else {
            Err(GeometryError::OutOfStrip {
                x,
                half_width: self.half_width,
            })
        }
    }

    /// Warp without the strip check. The formulas stay valid past `X`, which
    /// the integrators rely on when a step straddles the strip edge.
    pub fn warp(&self, s: f64, x: f64) -> Warp {
        let ax = x.abs();
        let sg = if x < 0.0 { -1.0 } else { 1.0 };
        match self.profile {
            ProfileSpec::Flat => Warp { g: 1.0, gx: 0.0, gxx: 0.0 },
            ProfileSpec::Power { m, c } => power_warp(m, c, ax, sg),
            ProfileSpec::CappedPower { m, c, x_cap } => {
                if ax <= x_cap {
                    power_warp(m, c, ax, sg)
                } else {
                    let Cap { alpha, beta, x0 } = self.cap.expect("cap solved at construction");
                    let u = beta * (ax - x0);
                    Warp {
                        g: alpha * u.cosh(),
                        gx: sg * alpha * beta * u.sinh(),
                        gxx: alpha * beta * beta * u.cosh(),
                    }
                }
            }
            ProfileSpec::SDependent { m, c, gamma1, .. } => {
                power_warp(m, c * bump(s, gamma1, self.period), ax, sg)
            }
            ProfileSpec::ConstantCurvature { k } => Warp {
                g: (k * x).cosh(),
                gx: k * (k * x).sinh(),
                gxx: k * k * (k * x).cosh(),
            },
        }
    }

    pub fn eval_metric(&self, s: f64, x: f64) -> Result<Warp, GeometryError> {
        self.check(x)?;
        Ok(self.warp(s, x))
    }

    /// `K⊥ = −G_xx/G`.
    pub fn normal_curvature(&self, s: f64, x: f64) -> Result<f64, GeometryError> {
        let w = self.eval_metric(s, x)?;
        Ok(-w.gxx / w.g)
    }

    /// Sectional curvature of a plane at angle `theta` to `∂/∂x`, and the Ricci
    /// curvature of a unit vector at that angle.
    pub fn sectional_and_ricci(&self, x: f64, theta: f64) -> Result<CurvatureSample, GeometryError> {
        if !self.is_s_independent() {
            return Err(GeometryError::Unsupported("SDependent"));
        }
        let w = self.eval_metric(0.0, x)?;
        Ok(curvature_from_warp(&w, theta, self.n))
    }

    /// All principal curvatures of the level set `{x = const}` equal `G_x/G`.
    pub fn principal_curvatures(&self, s: f64, x: f64) -> Result<Vec<f64>, GeometryError> {
        let w = self.eval_metric(s, x)?;
        Ok(vec![w.gx / w.g; self.n - 1])
    }

    /// Gaussian curvature of the surface spanned by `∂/∂s, ∂/∂x` at `(s, x)`.
    pub(crate) fn surface_curvature(&self, s: f64, x: f64) -> f64 {
        let w = self.warp(s, x);
        -w.gxx / w.g
    }
}

pub(crate) fn curvature_from_warp(w: &Warp, theta: f64, n: usize) -> CurvatureSample {
    let kp = -w.gxx / w.g;
    let h = w.gx / w.g;
    let (sn, cs) = theta.sin_cos();
    let k_sigma = kp * cs * cs - h * h * sn * sn;
    CurvatureSample {
        k_perp: kp,
        k_sigma,
        ric: kp + (n as f64 - 2.0) * k_sigma,
    }
}

fn power_warp(m: u32, c: f64, ax: f64, sg: f64) -> Warp {
    let mf = m as f64;
    let pm = ax.powi(m as i32);
    Warp {
        g: 1.0 + c * pm * ax * ax,
        gx: sg * c * (mf + 2.0) * pm * ax,
        gxx: c * (mf + 2.0) * (mf + 1.0) * pm,
    }
}

fn solve_cap(m: u32, c: f64, x_cap: f64) -> Result<Cap, GeometryError> {
    let w = power_warp(m, c, x_cap, 1.0);
    // A cosh cap matching (G, G_x, G_xx) needs G_x² < G·G_xx, which for the
    // power profile reduces to c·x_cap^(m+2) < m+1.
    let disc = w.gxx * w.g;
    if !(w.gx * w.gx < disc) {
        return Err(GeometryError::InvalidModel(format!(
            "x_cap = {x_cap} too large for a cosh cap (need c·x_cap^(m+2) < m+1)"
        )));
    }
    let beta = (w.gxx / w.g).sqrt();
    let u = (w.gx / disc.sqrt()).atanh() / beta;
    Ok(Cap {
        alpha: w.g / (beta * u).cosh(),
        beta,
        x0: x_cap - u,
    })
}

fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / u).exp();
    let b = (-1.0 / (1.0 - u)).exp();
    a / (a + b)
}

/// Periodic C^∞ bump: 1 on `[0, gamma1]`, ramps of width `(period − gamma1)/4`
/// on either side, 0 in between.
pub fn bump(s: f64, gamma1: f64, period: f64) -> f64 {
    let sig = s.rem_euclid(period);
    let ramp = 0.25 * (period - gamma1);
    if sig <= gamma1 {
        1.0
    } else if sig < gamma1 + ramp {
        1.0 - smooth_step((sig - gamma1) / ramp)
    } else if sig < period - ramp {
        0.0
    } else {
        smooth_step((sig - (period - ramp)) / ramp)
    }
}

/// Which envelope a curvature-order certificate inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvelopeQuantity {
    /// `G − 1` against `|x|^(m+2)`.
    WarpExcess,
    /// `−K⊥` against `|x|^m`.
    NormalCurvature,
    /// `−Ric` of the vertical direction against `|x|^m`.
    VerticalRicci,
}

/// Empirical sandwich constants `C2_hat ≤ ratio ≤ C1_hat` over the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderEnvelope {
    pub quantity: EnvelopeQuantity,
    pub m: u32,
    pub c1_hat: f64,
    pub c2_hat: f64,
}

/// Log-log slope above which the ratio counts as degenerating.
const DRIFT_LIMIT: f64 = 0.5;

/// Certifies `C2|x|^p ≤ q(x) ≤ C1|x|^p` on a geometric grid over `x_range`,
/// with `p = m` for curvatures and `p = m + 2` for the warp excess. Values
/// are taken at `s = 0`. The ratio
/// must stay positive and show no power-law drift on the lower half of the
/// grid, where the leading order dominates.
pub fn verify_curvature_order(
    model: &MetricModel,
    m: u32,
    quantity: EnvelopeQuantity,
    x_range: (f64, f64),
    grid: usize,
) -> Result<OrderEnvelope, GeometryError> {
    let (lo, hi) = x_range;
    if !(lo > 0.0 && hi > lo && hi <= model.half_width) {
        return Err(GeometryError::InvalidModel(format!(
            "x_range ({lo}, {hi}) must lie in (0, X]"
        )));
    }
    if grid < 16 {
        return Err(GeometryError::InvalidModel(format!("grid size {grid} below 16")));
    }
    let p = match quantity {
        EnvelopeQuantity::WarpExcess => m as f64 + 2.0,
        _ => m as f64,
    };
    let mut xs = Vec::with_capacity(grid);
    let mut ratios = Vec::with_capacity(grid);
    for i in 0..grid {
        let x = lo * (hi / lo).powf(i as f64 / (grid - 1) as f64);
        let w = model.eval_metric(0.0, x)?;
        let q = match quantity {
            EnvelopeQuantity::WarpExcess => w.g - 1.0,
            EnvelopeQuantity::NormalCurvature => w.gxx / w.g,
            EnvelopeQuantity::VerticalRicci => -curvature_from_warp(&w, 0.0, model.n).ric,
        };
        xs.push(x);
        ratios.push(q / x.powf(p));
    }
    let mismatch = |reason: String| Err(GeometryError::OrderMismatch { m, reason });
    if let Some(i) = ratios.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
        return mismatch(format!("ratio {} at x = {}", ratios[i], xs[i]));
    }
    let half = grid / 2;
    let (lx, lr): (Vec<f64>, Vec<f64>) = xs[..half]
        .iter()
        .zip(&ratios[..half])
        .map(|(x, r)| (x.ln(), r.ln()))
        .unzip();
    let slope = ls_slope(&lx, &lr);
    if slope.abs() > DRIFT_LIMIT {
        return mismatch(format!("ratio drifts like |x|^{slope:.3} near 0"));
    }
    let c1_hat = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let c2_hat = ratios.iter().cloned().fold(f64::MAX, f64::min);
    Ok(OrderEnvelope {
        quantity,
        m,
        c1_hat,
        c2_hat,
    })
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
