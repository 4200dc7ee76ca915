//! Experiment configuration files (TOML).
//!
//! Scientific parameters live in the file so runs can be archived; paths,
//! seed and thread count may be overridden from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{MetricModel, ProfileSpec};
use crate::scaling::Regime;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("config error in `{stage}`: {message}")]
pub struct ConfigError {
    pub stage: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(stage: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            stage: stage.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Curvature,
    Geodesic,
    Shadow,
    Riccati,
    Decay,
    KeyInequality,
    PressureGap,
    Lambda,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Curvature => "curvature",
            ExperimentKind::Geodesic => "geodesic",
            ExperimentKind::Shadow => "shadow",
            ExperimentKind::Riccati => "riccati",
            ExperimentKind::Decay => "decay",
            ExperimentKind::KeyInequality => "key-inequality",
            ExperimentKind::PressureGap => "pressure-gap",
            ExperimentKind::Lambda => "lambda",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileTable {
    pub kind: String,
    pub m: Option<u32>,
    pub c: Option<f64>,
    pub x_cap: Option<f64>,
    #[serde(default = "one")]
    pub gamma0: f64,
    pub gamma1: Option<f64>,
    pub c_min: Option<f64>,
    pub k: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelTable {
    #[serde(default = "two")]
    pub n: usize,
    #[serde(rename = "X")]
    pub x: f64,
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvatureParams {
    pub x_min: f64,
    pub x_max: f64,
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Plane angle for the sectional curvature column.
    #[serde(default)]
    pub theta: f64,
}

fn default_grid() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicParams {
    #[serde(default)]
    pub s: f64,
    pub x: f64,
    pub phi: f64,
    pub t_max: f64,
    #[serde(default = "tight")]
    pub tol: f64,
    /// Classify the start vector relative to this strip radius.
    #[serde(rename = "R")]
    pub r: Option<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn tight() -> f64 {
    1e-12
}

fn default_horizon() -> f64 {
    1e5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadowParams {
    #[serde(default)]
    pub s0: f64,
    pub t: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(default = "shadow_tol")]
    pub tol: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Number of equispaced singular seeds for the separation check.
    pub separation_seeds: Option<usize>,
    /// Separation scale; defaults to `gamma0/16`.
    pub delta: Option<f64>,
}

fn shadow_tol() -> f64 {
    1e-9
}

fn default_samples() -> usize {
    513
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonParams {
    #[serde(rename = "C")]
    pub c: f64,
    pub m: u32,
    #[serde(rename = "R")]
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiccatiParams {
    pub comparison: Option<ComparisonParams>,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub phi_max: Option<f64>,
    #[serde(default = "default_nx")]
    pub nx: usize,
    #[serde(default = "default_nphi")]
    pub nphi: usize,
    #[serde(default = "default_ratio")]
    pub max_ratio: f64,
}

fn default_nx() -> usize {
    10
}

fn default_nphi() -> usize {
    20
}

fn default_ratio() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayParams {
    pub regime: String,
    pub t: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(default = "shadow_tol")]
    pub tol: f64,
    #[serde(default = "default_q_limit")]
    pub q_limit: f64,
    /// Also run at `2t` and require `Q_min` to change by less than 2x.
    #[serde(default = "yes")]
    pub check_doubling: bool,
    pub window: Option<[f64; 2]>,
}

fn default_q_limit() -> f64 {
    1e3
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialParams {
    #[serde(rename = "C0", default)]
    pub c0: f64,
    #[serde(rename = "C", default = "one")]
    pub c: f64,
    pub a: f64,
    pub b: f64,
    /// Defaults to the strip radius `R` of the experiment.
    pub r_cut: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyInequalityParams {
    pub potential: PotentialParams,
    pub t_list: Vec<f64>,
    #[serde(rename = "R")]
    pub r: f64,
    pub delta: f64,
    #[serde(default = "default_perturbations")]
    pub perturbations: usize,
    #[serde(default = "shadow_tol")]
    pub tol: f64,
}

fn default_perturbations() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureGapParams {
    pub potential: PotentialParams,
    #[serde(rename = "R")]
    pub r: f64,
    /// Escape threshold; defaults to `R/2`.
    pub eps: Option<f64>,
    #[serde(default = "one")]
    pub transition_time: f64,
    pub t_list: Vec<f64>,
    pub delta: f64,
    #[serde(default = "default_perturbations")]
    pub perturbations: usize,
    pub escape_t_list: Vec<f64>,
    #[serde(default = "default_escape_seeds")]
    pub escape_seeds: usize,
    #[serde(default = "shadow_tol")]
    pub tol: f64,
}

fn default_escape_seeds() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedLayout {
    /// Equispaced points on the singular set.
    Sing,
    /// Uniform grid in `(s, x, φ)`.
    Grid,
    /// Uniform random draws, from the experiment seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaParams {
    pub potential: PotentialParams,
    pub delta: f64,
    pub t: f64,
    pub layout: SeedLayout,
    pub n_s: usize,
    #[serde(default = "one_usize")]
    pub n_x: usize,
    #[serde(default = "one_usize")]
    pub n_phi: usize,
    #[serde(default)]
    pub x_max: f64,
    #[serde(default)]
    pub phi_max: f64,
    #[serde(default = "tight_lambda")]
    pub tol: f64,
}

fn one_usize() -> usize {
    1
}

fn tight_lambda() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub profile: ProfileTable,
    pub model: ModelTable,
    pub curvature: Option<CurvatureParams>,
    pub geodesic: Option<GeodesicParams>,
    pub shadow: Option<ShadowParams>,
    pub riccati: Option<RiccatiParams>,
    pub decay: Option<DecayParams>,
    #[serde(rename = "key-inequality")]
    pub key_inequality: Option<KeyInequalityParams>,
    #[serde(rename = "pressure-gap")]
    pub pressure_gap: Option<PressureGapParams>,
    pub lambda: Option<LambdaParams>,
}

fn need<T: Copy>(v: Option<T>, key: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| ConfigError::new("profile", format!("missing `profile.{key}`")))
}

impl ProfileTable {
    pub fn to_spec(&self) -> Result<ProfileSpec, ConfigError> {
        let extra = |keys: &[(&str, bool)]| -> Result<(), ConfigError> {
            for (k, set) in keys {
                if *set {
                    return Err(ConfigError::new(
                        "profile",
                        format!("`profile.{k}` does not apply to kind {}", self.kind),
                    ));
                }
            }
            Ok(())
        };
        let spec = match self.kind.as_str() {
            "Flat" => {
                extra(&[("m", self.m.is_some()), ("c", self.c.is_some()), ("k", self.k.is_some())])?;
                ProfileSpec::Flat
            }
            "Power" => {
                extra(&[("k", self.k.is_some()), ("x_cap", self.x_cap.is_some())])?;
                ProfileSpec::Power {
                    m: need(self.m, "m")?,
                    c: need(self.c, "c")?,
                }
            }
            "CappedPower" => {
                extra(&[("k", self.k.is_some())])?;
                ProfileSpec::CappedPower {
                    m: need(self.m, "m")?,
                    c: need(self.c, "c")?,
                    x_cap: need(self.x_cap, "x_cap")?,
                }
            }
            "SDependent" => {
                extra(&[("k", self.k.is_some()), ("x_cap", self.x_cap.is_some())])?;
                ProfileSpec::SDependent {
                    m: need(self.m, "m")?,
                    c: need(self.c, "c")?,
                    c_min: need(self.c_min, "c_min")?,
                    gamma1: need(self.gamma1, "gamma1")?,
                }
            }
            "ConstantCurvature" => {
                extra(&[("m", self.m.is_some()), ("c", self.c.is_some())])?;
                ProfileSpec::ConstantCurvature { k: need(self.k, "k")? }
            }
            other => return Err(ConfigError::new("profile", format!("unknown profile.kind `{other}`"))),
        };
        if self.kind != "SDependent" && (self.gamma1.is_some() || self.c_min.is_some()) {
            return Err(ConfigError::new(
                "profile",
                "`profile.gamma1` and `profile.c_min` apply to SDependent only",
            ));
        }
        Ok(spec)
    }
}

fn positive(stage: &str, key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(stage, format!("`{key}` must be positive and finite, got {v}")))
    }
}

fn within_strip(stage: &str, key: &str, v: f64, x: f64) -> Result<(), ConfigError> {
    positive(stage, key, v)?;
    if v > x {
        return Err(ConfigError::new(stage, format!("`{key}` = {v} exceeds model.X = {x}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::new("parse", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("parse", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn model(&self) -> Result<MetricModel, ConfigError> {
        let spec = self.profile.to_spec()?;
        MetricModel::new(spec, self.model.n, self.model.x, self.profile.gamma0)
            .map_err(|e| ConfigError::new("model", e.to_string()))
    }

    pub fn regime(&self) -> Result<Regime, ConfigError> {
        let d = self.decay.as_ref().ok_or_else(|| ConfigError::new("decay", "missing [decay] table"))?;
        d.regime.parse().map_err(|e: String| ConfigError::new("decay", e))
    }

    /// Checks everything that can be checked before computing.
    pub fn validate(&self) -> Result<MetricModel, ConfigError> {
        let model = self.model()?;
        let x = model.half_width();
        if let Some(j) = self.jobs {
            if j == 0 {
                return Err(ConfigError::new("run", "`jobs` must be at least 1"));
            }
        }
        let present: Vec<&str> = [
            ("curvature", self.curvature.is_some()),
            ("geodesic", self.geodesic.is_some()),
            ("shadow", self.shadow.is_some()),
            ("riccati", self.riccati.is_some()),
            ("decay", self.decay.is_some()),
            ("key-inequality", self.key_inequality.is_some()),
            ("pressure-gap", self.pressure_gap.is_some()),
            ("lambda", self.lambda.is_some()),
        ]
        .into_iter()
        .filter_map(|(k, p)| p.then_some(k))
        .collect();
        let kind = self.experiment.name();
        if present != [kind] {
            return Err(ConfigError::new(
                kind,
                format!("expected exactly the [{kind}] parameter table, found {present:?}"),
            ));
        }
        match self.experiment {
            ExperimentKind::Curvature => {
                let p = self.curvature.as_ref().unwrap();
                within_strip(kind, "x_max", p.x_max, x)?;
                positive(kind, "x_min", p.x_min)?;
                if p.x_min >= p.x_max || p.grid < 16 {
                    return Err(ConfigError::new(kind, "need 0 < x_min < x_max and grid >= 16"));
                }
            }
            ExperimentKind::Geodesic => {
                let p = self.geodesic.as_ref().unwrap();
                if p.x.abs() > x || p.phi.abs() > std::f64::consts::FRAC_PI_2 {
                    return Err(ConfigError::new(kind, "start state outside the strip"));
                }
                positive(kind, "t_max", p.t_max)?;
                if !(1e-14..=1e-6).contains(&p.tol) {
                    return Err(ConfigError::new(kind, "`tol` must lie in [1e-14, 1e-6]"));
                }
                if let Some(r) = p.r {
                    within_strip(kind, "R", r, x)?;
                    if !(p.x > 0.0 && p.x <= r) {
                        return Err(ConfigError::new(kind, "classification needs 0 < x <= R"));
                    }
                }
                positive(kind, "horizon", p.horizon)?;
            }
            ExperimentKind::Shadow => {
                let p = self.shadow.as_ref().unwrap();
                positive(kind, "t", p.t)?;
                within_strip(kind, "R", p.r, x)?;
                positive(kind, "tol", p.tol)?;
                if p.samples < 2 {
                    return Err(ConfigError::new(kind, "`samples` must be at least 2"));
                }
                if let Some(n) = p.separation_seeds {
                    if n < 2 {
                        return Err(ConfigError::new(kind, "`separation_seeds` must be at least 2"));
                    }
                }
                if let Some(d) = p.delta {
                    positive(kind, "delta", d)?;
                }
            }
            ExperimentKind::Riccati => {
                let p = self.riccati.as_ref().unwrap();
                if let Some(c) = &p.comparison {
                    positive(kind, "comparison.C", c.c)?;
                    if c.m == 0 {
                        return Err(ConfigError::new(kind, "`comparison.m` must be at least 1"));
                    }
                    if let Some(r) = c.r {
                        positive(kind, "comparison.R", r)?;
                    }
                }
                let field = [p.x_min, p.x_max, p.phi_max];
                if field.iter().any(|v| v.is_some()) {
                    if field.iter().any(|v| v.is_none()) {
                        return Err(ConfigError::new(kind, "x_min, x_max and phi_max go together"));
                    }
                    let (lo, hi) = (p.x_min.unwrap(), p.x_max.unwrap());
                    positive(kind, "x_min", lo)?;
                    within_strip(kind, "x_max", hi, x)?;
                    if lo >= hi {
                        return Err(ConfigError::new(kind, "need x_min < x_max"));
                    }
                    if !(p.phi_max.unwrap() >= 0.0) || p.nx < 2 || p.nphi < 2 {
                        return Err(ConfigError::new(kind, "need phi_max >= 0, nx >= 2, nphi >= 2"));
                    }
                    if model.profile().order().is_none() && !matches!(model.profile(), ProfileSpec::ConstantCurvature { .. }) {
                        return Err(ConfigError::new(kind, "the psi field needs a curved profile"));
                    }
                    if model.n() != 2 {
                        return Err(ConfigError::new(kind, "the psi field runs on surfaces (model.n = 2)"));
                    }
                } else if p.comparison.is_none() {
                    return Err(ConfigError::new(kind, "nothing to compute: give [riccati.comparison] or a psi field"));
                }
            }
            ExperimentKind::Decay => {
                let p = self.decay.as_ref().unwrap();
                self.regime()?;
                positive(kind, "t", p.t)?;
                within_strip(kind, "R", p.r, x)?;
                positive(kind, "tol", p.tol)?;
                if !(p.q_limit >= 1.0) {
                    return Err(ConfigError::new(kind, "`q_limit` must be at least 1"));
                }
                if let Some([a, b]) = p.window {
                    if !(a > 0.0 && b > a) {
                        return Err(ConfigError::new(kind, "`window` must be [lo, hi] with 0 < lo < hi"));
                    }
                }
                if model.profile().order().is_none() {
                    return Err(ConfigError::new(kind, "decay needs a profile with an order m"));
                }
            }
            ExperimentKind::KeyInequality => {
                let p = self.key_inequality.as_ref().unwrap();
                self.check_potential(kind, &p.potential)?;
                within_strip(kind, "R", p.r, x)?;
                positive(kind, "delta", p.delta)?;
                if p.r + p.delta > x {
                    return Err(ConfigError::new(kind, "R + delta exceeds model.X"));
                }
                if p.t_list.len() < 2 || p.t_list.iter().any(|t| !(*t > 0.0)) {
                    return Err(ConfigError::new(kind, "`t_list` needs two or more positive values"));
                }
            }
            ExperimentKind::PressureGap => {
                let p = self.pressure_gap.as_ref().unwrap();
                self.check_potential(kind, &p.potential)?;
                within_strip(kind, "R", p.r, x)?;
                positive(kind, "delta", p.delta)?;
                positive(kind, "transition_time", p.transition_time)?;
                if p.r + p.delta > x {
                    return Err(ConfigError::new(kind, "R + delta exceeds model.X"));
                }
                if let Some(e) = p.eps {
                    positive(kind, "eps", e)?;
                }
                if p.t_list.len() < 2 || p.escape_t_list.is_empty() || p.escape_seeds == 0 {
                    return Err(ConfigError::new(
                        kind,
                        "need two or more t_list values, escape_t_list and escape_seeds >= 1",
                    ));
                }
                if model.profile().order().is_none() {
                    return Err(ConfigError::new(kind, "pressure-gap needs a profile with an order m"));
                }
            }
            ExperimentKind::Lambda => {
                let p = self.lambda.as_ref().unwrap();
                self.check_potential(kind, &p.potential)?;
                positive(kind, "delta", p.delta)?;
                positive(kind, "t", p.t)?;
                if p.n_s == 0 || p.n_x == 0 || p.n_phi == 0 {
                    return Err(ConfigError::new(kind, "seed counts must be positive"));
                }
                if p.x_max > x || p.x_max < 0.0 || p.phi_max < 0.0 {
                    return Err(ConfigError::new(kind, "need 0 <= x_max <= model.X and phi_max >= 0"));
                }
            }
        }
        Ok(model)
    }

    fn check_potential(&self, stage: &str, p: &PotentialParams) -> Result<(), ConfigError> {
        positive(stage, "C", p.c)?;
        positive(stage, "a", p.a)?;
        positive(stage, "b", p.b)?;
        if !p.c0.is_finite() {
            return Err(ConfigError::new(stage, "`C0` must be finite"));
        }
        if let Some(r) = p.r_cut {
            positive(stage, "r_cut", r)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
experiment = "curvature"
[profile]
kind = "Power"
m = 2
c = 1.0
[model]
X = 1.0
[curvature]
x_min = 0.01
x_max = 0.3
"#;

    #[test]
    fn parses_and_validates() {
        let cfg = ExperimentConfig::parse(BASE).unwrap();
        let m = cfg.validate().unwrap();
        assert_eq!(m.n(), 2);
        assert_eq!(cfg.profile.gamma0, 1.0);
    }

    #[test]
    fn unknown_key_rejected() {
        let text = BASE.replace("c = 1.0", "c = 1.0\nwidth = 3");
        let e = ExperimentConfig::parse(&text).unwrap_err();
        assert_eq!(e.stage, "parse");
    }

    #[test]
    fn missing_coefficient_named() {
        let text = BASE.replace("c = 1.0\n", "");
        let e = ExperimentConfig::parse(&text).unwrap().validate().unwrap_err();
        assert_eq!(e.stage, "profile");
        assert!(e.message.contains("profile.c"));
    }
}
