//! Model parameters and the cavity-QED relations that feed them.
//!
//! All rates share one time unit. Unless a configuration says otherwise the
//! collective decay rate sets that unit, `gamma_c = 1`.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Atom number, collective decay rate and repump rate.
///
/// Instances are validated on construction and immutable afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    n: usize,
    gamma_c: f64,
    w: f64,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    #[serde(rename = "N")]
    n: usize,
    gamma_c: f64,
    w: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ModelParams::new(raw.n, raw.gamma_c, raw.w)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams { n: p.n, gamma_c: p.gamma_c, w: p.w }
    }
}

impl ModelParams {
    pub fn new(n: usize, gamma_c: f64, w: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::validation("N", "atom number must be at least 1"));
        }
        if !(gamma_c.is_finite() && gamma_c > 0.0) {
            return Err(Error::validation("gamma_c", format!("must be finite and > 0, got {gamma_c}")));
        }
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::validation("w", format!("must be finite and >= 0, got {w}")));
        }
        Ok(ModelParams { n, gamma_c, w })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gamma_c(&self) -> f64 {
        self.gamma_c
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn n_f64(&self) -> f64 {
        self.n as f64
    }

    /// Same atoms and decay rate at a different repump rate.
    pub fn with_w(&self, w: f64) -> Result<Self> {
        ModelParams::new(self.n, self.gamma_c, w)
    }

    pub fn regime(&self) -> Regime {
        Regime::classify(self.n, self.gamma_c, self.w)
    }
}

/// Pumping regime relative to the single-atom and collective decay rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// `w < gamma_c`
    Weak,
    /// `gamma_c <= w < N gamma_c`
    Intermediate,
    /// `w >= N gamma_c`
    Strong,
}

impl Regime {
    pub fn classify(n: usize, gamma_c: f64, w: f64) -> Regime {
        if w < gamma_c {
            Regime::Weak
        } else if w < n as f64 * gamma_c {
            Regime::Intermediate
        } else {
            Regime::Strong
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Weak => "weak",
            Regime::Intermediate => "intermediate",
            Regime::Strong => "strong",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Validated parameters together with their regime label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CheckedParams {
    pub params: ModelParams,
    pub regime: Regime,
}

/// Re-checks every invariant and attaches the regime label.
pub fn validate(params: ModelParams) -> Result<CheckedParams> {
    let params = ModelParams::new(params.n, params.gamma_c, params.w)?;
    Ok(CheckedParams { params, regime: params.regime() })
}

/// Cavity-QED quantities derived from the single-photon coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CqedParams {
    pub g: f64,
    pub kappa: f64,
    #[serde(rename = "Gamma")]
    pub gamma: f64,
    pub gamma_aux: f64,
    pub cooperativity: f64,
    pub gamma_c: f64,
    pub n0: f64,
    pub m0: f64,
}

fn positive(field: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be finite and > 0, got {value}")))
    }
}

/// `C = g^2/(Gamma kappa)`, `Gamma_c = C Gamma = g^2/kappa`, `n0 = 1/C`,
/// `m0 = gamma_aux^2/g^2`.
pub fn derive_cqed(g: f64, kappa: f64, gamma: f64, gamma_aux: f64) -> Result<CqedParams> {
    positive("g", g)?;
    positive("kappa", kappa)?;
    positive("Gamma", gamma)?;
    positive("gamma_aux", gamma_aux)?;
    let g2 = g * g;
    Ok(CqedParams {
        g,
        kappa,
        gamma,
        gamma_aux,
        cooperativity: g2 / (gamma * kappa),
        gamma_c: g2 / kappa,
        n0: kappa * gamma / g2,
        m0: gamma_aux * gamma_aux / g2,
    })
}

/// Cavity mode geometry and atomic line quality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityGeometry {
    /// Mode cross-section area.
    #[serde(rename = "A")]
    pub area: f64,
    /// Cavity finesse.
    #[serde(rename = "F")]
    pub finesse: f64,
    /// Resonant wavelength.
    pub lambda0: f64,
    /// Atomic transition quality factor.
    #[serde(rename = "Q")]
    pub quality: f64,
    /// Effective mode volume.
    #[serde(rename = "V_eff")]
    pub v_eff: f64,
}

impl CavityGeometry {
    /// Resonant absorption cross section `3 lambda0^2 / (2 pi)`.
    pub fn sigma_res(&self) -> f64 {
        3.0 * self.lambda0 * self.lambda0 / (2.0 * PI)
    }

    /// `V_eff / lambda0^3`, which cannot physically drop below one.
    pub fn volume_ratio(&self) -> f64 {
        self.v_eff / self.lambda0.powi(3)
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let ratio = self.volume_ratio();
        if ratio < 1.0 {
            out.push(format!("V_eff/lambda0^3 = {ratio} is below unity"));
        }
        out
    }
}

/// Geometric forms `n0 = 2 pi A/(F sigma)` and `m0 = 4 pi^2 V_eff/(Q lambda0^3)`.
pub fn geometric_critical_numbers(geom: &CavityGeometry) -> Result<(f64, f64)> {
    positive("A", geom.area)?;
    positive("F", geom.finesse)?;
    positive("lambda0", geom.lambda0)?;
    positive("Q", geom.quality)?;
    positive("V_eff", geom.v_eff)?;
    let n0 = 2.0 * PI * geom.area / (geom.finesse * geom.sigma_res());
    let m0 = 4.0 * PI * PI * geom.v_eff / (geom.quality * geom.lambda0.powi(3));
    Ok((n0, m0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CqedInput {
    pub g: f64,
    pub kappa: f64,
    #[serde(rename = "Gamma")]
    pub gamma: f64,
    pub gamma_aux: f64,
}

/// The JSON configuration document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(rename = "N")]
    pub n: usize,
    pub gamma_c: f64,
    pub w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cqed: Option<CqedInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<CavityGeometry>,
}

/// A configuration with everything derivable from it filled in.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedConfig {
    pub params: ModelParams,
    pub regime: Regime,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cqed: Option<CqedParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<ResolvedGeometry>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolvedGeometry {
    #[serde(flatten)]
    pub geometry: CavityGeometry,
    pub sigma_res: f64,
    pub n0: f64,
    pub m0: f64,
}

impl Config {
    pub fn from_params(params: &ModelParams) -> Config {
        Config { n: params.n(), gamma_c: params.gamma_c(), w: params.w(), cqed: None, geometry: None }
    }

    pub fn from_json(text: &str) -> Result<Config> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::from_json(&text)
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.n, self.gamma_c, self.w)
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let checked = validate(self.params()?)?;
        let mut warnings = Vec::new();
        let cqed = match &self.cqed {
            Some(c) => {
                let derived = derive_cqed(c.g, c.kappa, c.gamma, c.gamma_aux)?;
                let rel = (derived.gamma_c - self.gamma_c).abs() / self.gamma_c;
                if rel > 1e-9 {
                    warnings.push(format!(
                        "gamma_c = {} differs from g^2/kappa = {}; solvers use gamma_c",
                        self.gamma_c, derived.gamma_c
                    ));
                }
                Some(derived)
            }
            None => None,
        };
        let geometry = match &self.geometry {
            Some(geom) => {
                let (n0, m0) = geometric_critical_numbers(geom)?;
                warnings.extend(geom.warnings());
                Some(ResolvedGeometry { geometry: *geom, sigma_res: geom.sigma_res(), n0, m0 })
            }
            None => None,
        };
        Ok(ResolvedConfig { params: checked.params, regime: checked.regime, cqed, geometry, warnings })
    }
}
