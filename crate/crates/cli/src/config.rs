//! JSON configuration with explicit units.
//!
//! Every physical quantity is written as `{"value": 3.9e9, "unit": "Pa"}`;
//! dimensionless quantities use the unit `"1"`.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Invalid or unreadable configuration (exit code 4).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Stress,
    Length,
    One,
}

impl Dimension {
    fn factor(self, unit: &str) -> Option<f64> {
        match (self, unit) {
            (Dimension::Stress, "Pa") => Some(1.0),
            (Dimension::Stress, "kPa") => Some(1e3),
            (Dimension::Stress, "MPa") => Some(1e6),
            (Dimension::Stress, "GPa") => Some(1e9),
            (Dimension::Length, "m") => Some(1.0),
            (Dimension::Length, "cm") => Some(1e-2),
            (Dimension::Length, "mm") => Some(1e-3),
            (Dimension::One, "1") => Some(1.0),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dimension::Stress => "a stress (Pa, kPa, MPa, GPa)",
            Dimension::Length => "a length (m, cm, mm)",
            Dimension::One => "dimensionless (\"1\")",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantity {
    pub value: f64,
    pub unit: String,
}

impl Quantity {
    pub fn new(value: f64, unit: &str) -> Self {
        Self { value, unit: unit.to_owned() }
    }

    pub fn one(value: f64) -> Self {
        Self::new(value, "1")
    }

    /// Value in SI units, checked to be finite and of the right dimension.
    pub fn si(&self, dim: Dimension, name: &str) -> Result<f64, ConfigError> {
        let factor = dim
            .factor(&self.unit)
            .ok_or_else(|| ConfigError(format!("{name}: unit '{}' is not {}", self.unit, dim.name())))?;
        if !self.value.is_finite() {
            return Err(ConfigError(format!("{name}: value must be finite")));
        }
        Ok(self.value * factor)
    }

    pub fn positive(&self, dim: Dimension, name: &str) -> Result<f64, ConfigError> {
        let v = self.si(dim, name)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(ConfigError(format!("{name}: must be positive, got {v}")))
        }
    }
}

/// Reads a config file, or returns the defaults when no path is given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, ConfigError> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}

/// SHA-256 of the effective configuration in canonical JSON.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let text = serde_json::to_string(cfg).expect("configs serialise");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeData {
    pub b: Quantity,
    pub y_min: Quantity,
    pub y_max: Quantity,
}

impl Default for EnvelopeData {
    fn default() -> Self {
        Self { b: Quantity::one(0.095), y_min: Quantity::one(-0.058), y_max: Quantity::one(0.00107) }
    }
}

impl EnvelopeData {
    pub fn params(&self) -> Result<relaxplast::EnvelopeParams, ConfigError> {
        let b = self.b.si(Dimension::One, "b")?;
        let lo = self.y_min.si(Dimension::One, "y_min")?;
        let hi = self.y_max.si(Dimension::One, "y_max")?;
        relaxplast::EnvelopeParams::new(b, lo, hi).map_err(|e| ConfigError(e.to_string()))
    }
}

/// Elastic moduli plus the dimensionless envelope of the relaxed material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialData {
    pub bulk_modulus: Quantity,
    pub shear_modulus: Quantity,
    pub envelope: EnvelopeData,
}

impl Default for MaterialData {
    fn default() -> Self {
        Self {
            bulk_modulus: Quantity::new(3.9, "GPa"),
            shear_modulus: Quantity::new(2.8, "GPa"),
            envelope: EnvelopeData::default(),
        }
    }
}

impl MaterialData {
    pub fn material(&self) -> Result<relaxplast::model3d::RelaxedMaterial, ConfigError> {
        let k = self.bulk_modulus.positive(Dimension::Stress, "bulk_modulus")?;
        let mu = self.shear_modulus.positive(Dimension::Stress, "shear_modulus")?;
        relaxplast::model3d::RelaxedMaterial::from_envelope(k, mu, &self.envelope.params()?)
            .map_err(|e| ConfigError(e.to_string()))
    }
}
