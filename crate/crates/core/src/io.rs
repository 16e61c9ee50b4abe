//! File formats: Radiance RGBE, PFM and JSON parameter files.

pub mod hdr;
pub mod params;
pub mod pfm;

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{EnvMap, SourceInfo};

pub use hdr::{read_hdr, write_hdr};
pub use params::ParamsFile;
pub use pfm::{read_pfm, write_pfm};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Hdr,
    Pfm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("hdr") | Some("pic") => Ok(ImageFormat::Hdr),
            Some("pfm") => Ok(ImageFormat::Pfm),
            _ => Err(Error::Usage(format!(
                "{}: expected a .hdr or .pfm file",
                path.display()
            ))),
        }
    }
}

/// Loads an environment map, choosing the codec by extension.
pub fn load_env(path: &Path) -> Result<EnvMap> {
    let format = ImageFormat::from_path(path)?;
    let bytes = std::fs::read(path)?;
    let env = match format {
        ImageFormat::Hdr => read_hdr(&bytes),
        ImageFormat::Pfm => read_pfm(&bytes),
    }
    .map_err(|e| match e {
        Error::Parse { offset, message } => Error::Parse {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })?;
    let original = env.dims();
    Ok(env.with_source(SourceInfo {
        path: Some(path.to_path_buf()),
        original,
    }))
}

pub fn encode_env(env: &EnvMap, format: ImageFormat) -> Vec<u8> {
    match format {
        ImageFormat::Hdr => write_hdr(env),
        ImageFormat::Pfm => write_pfm(env),
    }
}

pub fn save_env(path: &Path, env: &EnvMap) -> Result<()> {
    let bytes = encode_env(env, ImageFormat::from_path(path)?);
    std::fs::write(path, bytes)?;
    Ok(())
}
