//! JSON run configuration and the system definitions it can reference.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::casestudies::{self, CaseStudy, PlantFn};
use crate::dynamics::StabilityCertificate;
use crate::error::{Error, Result};
use crate::homogeneity::{DegreeFunction, DilationField};
use crate::integrator::IntegratorOptions;
use crate::poly::{PolyField, ScalarPoly};
use crate::polyhom::homogenize;
use crate::simloop::{DisturbanceConfig, NoiseConfig, PlantModel, SimConfig};

/// A polynomial closed loop given inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    pub n: usize,
    /// One expression per component in `x1..xn, e1..en`.
    pub closed_loop: Vec<String>,
    pub lyapunov: String,
    pub p: f64,
    pub q: f64,
    #[serde(default = "default_degree")]
    pub degree: u32,
    pub level: f64,
    #[serde(default)]
    pub operation_radius: Option<f64>,
    /// Degree function `num/den`; its presence selects the homogeneous law.
    #[serde(default)]
    pub xi: Option<RationalSpec>,
    /// Dilation weight for the homogeneous law (standard dilation).
    #[serde(default)]
    pub r: Option<f64>,
}

fn default_degree() -> u32 {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RationalSpec {
    pub num: String,
    pub den: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Builtin(String),
    Inline(InlineSystem),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    Periodic,
    EventOracle,
    SelfTrigger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyName,
    /// Periodic `T`; derived from the self-trigger law when absent.
    #[serde(default)]
    pub period: Option<f64>,
    /// `τ*` or `τ̃*` for the self-trigger law; computed when absent.
    #[serde(default)]
    pub tau_bound: Option<f64>,
    #[serde(default = "default_tau_min")]
    pub tau_min: f64,
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
}

fn default_tau_min() -> f64 {
    crate::triggers::DEFAULT_TAU_MIN
}

fn default_tau_max() -> f64 {
    crate::triggers::DEFAULT_TAU_MAX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub t_end: f64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub disturbance: DisturbanceConfig,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
}

fn default_rtol() -> f64 {
    1e-9
}

fn default_atol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_n_ic")]
    pub n_ic: usize,
    /// Radius of the initial-condition sphere; the operation radius when absent.
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub sigmas: Vec<f64>,
}

fn default_n_ic() -> usize {
    50
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { n_ic: default_n_ic(), radius: None, sigmas: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub trace: Option<String>,
    #[serde(default)]
    pub metrics: Option<String>,
    #[serde(default)]
    pub summary: Option<String>,
    #[serde(default = "default_decimation")]
    pub decimation: f64,
}

fn default_decimation() -> f64 {
    1e-3
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { trace: None, metrics: None, summary: None, decimation: default_decimation() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    #[serde(default)]
    pub sigma: Option<f64>,
    pub policy: PolicySpec,
    pub sim: SimSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field spelled out, so re-parsing gives an identical config.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::Config(format!("sigma must lie in (0, 1), got {s}")));
            }
        }
        let p = &self.policy;
        if !(p.tau_min > 0.0 && p.tau_min <= p.tau_max && p.tau_max.is_finite()) {
            return Err(Error::Config(format!("need 0 < tau_min <= tau_max, got {} and {}", p.tau_min, p.tau_max)));
        }
        for (name, v) in [("period", p.period), ("tau_bound", p.tau_bound)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if !(self.sim.rtol > 0.0 && self.sim.atol > 0.0) {
            return Err(Error::Config("integrator tolerances must be positive".into()));
        }
        if !(self.output.decimation > 0.0) {
            return Err(Error::Config("output decimation must be positive".into()));
        }
        if let Some(sw) = &self.sweep {
            if sw.n_ic == 0 {
                return Err(Error::Config("sweep needs n_ic >= 1".into()));
            }
            if let Some(s) = sw.sigmas.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
                return Err(Error::Config(format!("sweep sigma must lie in (0, 1), got {s}")));
            }
        }
        self.sim_config(vec![0.0]).validate()
    }

    pub fn integrator(&self) -> IntegratorOptions {
        IntegratorOptions::with_tolerances(self.sim.rtol, self.sim.atol)
    }

    pub fn sim_config(&self, x0: Vec<f64>) -> SimConfig {
        SimConfig {
            x0,
            t_end: self.sim.t_end,
            noise: self.sim.noise,
            disturbance: self.sim.disturbance,
            seed: self.seed,
            output_dt: Some(self.output.decimation),
            integrator: self.integrator(),
        }
    }
}

/// Resolve a system spec into a case study at the given `σ`.
pub fn build_system(spec: &SystemSpec, sigma: Option<f64>) -> Result<CaseStudy> {
    match spec {
        SystemSpec::Builtin(id) => casestudies::by_id(id, sigma),
        SystemSpec::Inline(def) => build_inline(def, sigma.unwrap_or(0.3)),
    }
}

/// An inline loop treats the full measured state as its input, `u = x + e`.
pub fn build_inline(def: &InlineSystem, sigma: f64) -> Result<CaseStudy> {
    let n = def.n;
    if n == 0 || n > 8 {
        return Err(Error::Config(format!("inline system dimension must be 1..=8, got {n}")));
    }
    let poly = Arc::new(PolyField::from_expressions(n, &def.closed_loop)?);
    let v = ScalarPoly::parse(n, &def.lyapunov)?;
    let certificate = StabilityCertificate::new(v.clone(), def.p, def.q, def.degree, sigma, def.level)?;
    let (dilation, xi, homogenized) = match &def.xi {
        Some(x) => (
            Some(DilationField::standard(n, def.r.unwrap_or(1.0))?),
            Some(DegreeFunction::rational(n, &x.num, &x.den)?),
            None,
        ),
        // A linear loop is homogeneous of degree zero already.
        None if poly.max_degree() <= 1 => {
            (Some(DilationField::standard(n, 1.0)?), Some(DegreeFunction::Constant(0.0)), None)
        }
        None => (None, None, Some(homogenize(poly.as_ref())?)),
    };
    let f = poly.clone();
    let plant: PlantFn = Arc::new(move |x: &[f64], u: &[f64]| {
        let e: Vec<f64> = u.iter().zip(x).map(|(a, b)| a - b).collect();
        let mut out = vec![0.0; x.len()];
        f.eval_into(x, &e, &mut out);
        out
    });
    let model = PlantModel {
        name: "inline".into(),
        closed_loop: poly.clone(),
        lyapunov: v,
        input: Arc::new(|x: &[f64]| x.to_vec()),
        n_inputs: n,
        disturbance_direction: Arc::new(move |_x: &[f64]| {
            let mut d = vec![0.0; n];
            d[0] = 1.0;
            d
        }),
        output_map: None,
    };
    let radius = def.operation_radius.unwrap_or(certificate.gamma_radius);
    Ok(CaseStudy {
        id: "inline",
        closed_loop: poly,
        plant,
        feedback: Arc::new(|x: &[f64]| x.to_vec()),
        certificate,
        operation_radius: radius,
        dilation,
        xi,
        homogenized,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "system": "jet-engine",
        "policy": {"kind": "self-trigger"},
        "sim": {"t_end": 3.0, "x0": [5.37, 0.34]}
    }"#;

    #[test]
    fn parse_and_round_trip() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        let again = RunConfig::from_json(&cfg.canonical_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.canonical_json(), again.canonical_json());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("\"t_end\"", "\"tend\": 1, \"t_end\"");
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config(_))));
        let bad = MINIMAL.replace("\"sim\"", "\"extra\": 1, \"sim\"");
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = MINIMAL.replace("\"system\"", "\"sigma\": 1.5, \"system\"");
        assert!(RunConfig::from_json(&bad).is_err());
        let bad = MINIMAL.replace("3.0", "-1.0");
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn inline_system_builds() {
        let def = InlineSystem {
            n: 1,
            closed_loop: vec!["-x1 - e1".into()],
            lyapunov: "0.5*x1^2".into(),
            p: 1.0,
            q: 1.0,
            degree: 2,
            level: 2.0,
            operation_radius: None,
            xi: None,
            r: None,
        };
        let cs = build_inline(&def, 0.5).unwrap();
        assert_eq!(cs.xi.as_ref().unwrap().as_constant(), Some(0.0));
        let mut quad = def.clone();
        quad.closed_loop = vec!["-x1 - x1^3 - e1".into()];
        assert_eq!(build_inline(&quad, 0.5).unwrap().homogenized.unwrap().l(), 3);
        let spec: SystemSpec = serde_json::from_str(&serde_json::to_string(&SystemSpec::Inline(def)).unwrap()).unwrap();
        assert!(matches!(spec, SystemSpec::Inline(_)));
    }
}
