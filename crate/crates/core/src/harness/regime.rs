use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeTag {
    RegimeI,
    RegimeII,
}

impl RegimeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeTag::RegimeI => "regime-i",
            RegimeTag::RegimeII => "regime-ii",
        }
    }
}

/// Which moderate-deviation regime `(m, eta, delta)` falls in, with the scale
/// of the admissible deviation range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub tag: RegimeTag,
    /// `eta^{-13/8} delta^{-9/8}`; regime i when `m` is at most this.
    pub boundary: f64,
    /// Evaluated validity scale for `x` (not a hard cutoff).
    pub validity_scale: f64,
    pub validity_note: String,
    pub m_eta: f64,
    pub m_eta_squared: f64,
    pub warnings: Vec<String>,
}

pub fn theorem_regime(m: usize, eta: f64, delta: f64) -> Regime {
    let mf = m as f64;
    let boundary = eta.powf(-13.0 / 8.0) * delta.powf(-9.0 / 8.0);
    let (tag, validity_scale, validity_note) = if mf <= boundary {
        (RegimeTag::RegimeI, (delta / eta).powf(1.0 / 12.0), "x = o(eta^(-1/12) delta^(1/12))".to_string())
    } else {
        let a = (mf * eta * delta).powf(1.0 / 6.0);
        let b = 1.0 / (mf.sqrt() * eta * delta);
        (RegimeTag::RegimeII, a.min(b), "x = o(min((m eta delta)^(1/6), (sqrt(m) eta delta)^(-1)))".to_string())
    };
    let mut warnings = Vec::new();
    if mf * eta < 1.0 {
        warnings.push(format!("m*eta = {:.3} is small; the time horizon should grow", mf * eta));
    }
    if mf * eta * eta > 1.0 {
        warnings.push(format!("m*eta^2 = {:.3} exceeds 1; m should be o(eta^-2)", mf * eta * eta));
    }
    Regime { tag, boundary, validity_scale, validity_note, m_eta: mf * eta, m_eta_squared: mf * eta * eta, warnings }
}
