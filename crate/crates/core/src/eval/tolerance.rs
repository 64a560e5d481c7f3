use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToleranceMode {
    /// Fraction of the image diagonal.
    Ratio,
    /// Euclidean radius in pixels, independent of resolution.
    Pixels,
}

impl FromStr for ToleranceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio" => Ok(Self::Ratio),
            "pixels" | "px" => Ok(Self::Pixels),
            _ => Err(Error::Config(format!("tolerance mode must be ratio or pixels, got {s:?}"))),
        }
    }
}

impl fmt::Display for ToleranceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ratio => "ratio",
            Self::Pixels => "pixels",
        })
    }
}

/// Maximum distance at which a predicted pixel may match a ground-truth pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSpec {
    pub mode: ToleranceMode,
    pub value: f64,
}

impl ToleranceSpec {
    pub fn new(mode: ToleranceMode, value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive and finite, got {value}")));
        }
        Ok(Self { mode, value })
    }

    pub fn ratio(value: f64) -> Result<Self> {
        Self::new(ToleranceMode::Ratio, value)
    }

    pub fn pixels(value: f64) -> Result<Self> {
        Self::new(ToleranceMode::Pixels, value)
    }

    /// Dataset presets: `brind`, `mdbd`, `biped`, `uded` (all ratio mode).
    pub fn preset(name: &str) -> Result<Self> {
        let v = match name.to_ascii_lowercase().as_str() {
            "brind" => 0.003,
            "mdbd" | "biped" => 0.001,
            "uded" => 0.004,
            _ => return Err(Error::Config(format!("unknown tolerance preset {name:?}"))),
        };
        Self::ratio(v)
    }

    pub fn to_pixels(&self, width: usize, height: usize) -> f64 {
        match self.mode {
            ToleranceMode::Pixels => self.value,
            ToleranceMode::Ratio => (width as f64).hypot(height as f64) * self.value,
        }
    }
}
