//! JSON parameter files for fitted sequences.
//!
//! Lobes are stored as realized `(μ, λ, u, n, c)` values, never as the
//! optimizer's internal log or unnormalized seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asg::{mixture_from_realized, realized_lobes, AsgMixture, RealizedLobe};
use crate::error::{Error, Result};
use crate::optim::FitConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    pub lobes: Vec<RealizedLobe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<FitConfig>,
    pub frames: Vec<FrameParams>,
}

impl ParamsFile {
    pub fn from_mixtures(mixtures: &[AsgMixture], config: Option<FitConfig>) -> Result<Self> {
        let frames = mixtures
            .iter()
            .map(|m| {
                Ok(FrameParams {
                    lobes: realized_lobes(m)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let file = ParamsFile {
            format_version: FORMAT_VERSION,
            config,
            frames,
        };
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Usage(format!(
                "unsupported params format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let Some(first) = self.frames.first() else {
            return Ok(());
        };
        for (t, f) in self.frames.iter().enumerate() {
            if f.lobes.len() != first.lobes.len() {
                return Err(Error::dims(
                    format!("{} lobes", first.lobes.len()),
                    format!("{} lobes in frame {t}", f.lobes.len()),
                ));
            }
            if f.lobes.iter().any(|l| !l.slots().iter().all(|v| v.is_finite())) {
                return Err(Error::NonFinite(format!("frame {t} has a non-finite parameter")));
            }
        }
        Ok(())
    }

    pub fn mixture(&self, frame: usize) -> Result<AsgMixture> {
        let f = self
            .frames
            .get(frame)
            .ok_or_else(|| Error::Usage(format!("frame {frame} out of range ({} frames)", self.frames.len())))?;
        Ok(mixture_from_realized(&f.lobes))
    }

    pub fn mixtures(&self) -> Vec<AsgMixture> {
        self.frames.iter().map(|f| mixture_from_realized(&f.lobes)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ParamsFile = serde_json::from_str(s)?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
