use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_version, json_error, read_text, write_text, FORMAT_VERSION};
use crate::baselines::{IcpConfig, IcpVariant};
use crate::error::{Error, Result};
use crate::fitting::{FitConfig, Variant};

/// EM settings as stored in a manifest (defaults as in [`FitConfig::new`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub variant: String,
    pub eta: f64,
    #[serde(default = "defaults::max_outer_iters")]
    pub max_outer_iters: usize,
    #[serde(default = "defaults::outer_tol")]
    pub outer_tol: f64,
    #[serde(default = "defaults::qn_max_iters")]
    pub qn_max_iters: usize,
    #[serde(default = "defaults::qn_grad_tol")]
    pub qn_grad_tol: f64,
    #[serde(default)]
    pub sigma2_floor: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpSettings {
    pub variant: String,
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::icp_max_iters")]
    pub max_iters: usize,
    #[serde(default = "defaults::icp_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn max_outer_iters() -> usize {
        200
    }
    pub fn outer_tol() -> f64 {
        1e-8
    }
    pub fn qn_max_iters() -> usize {
        50
    }
    pub fn qn_grad_tol() -> f64 {
        1e-6
    }
    pub fn eta() -> f64 {
        1.0
    }
    pub fn icp_max_iters() -> usize {
        100
    }
    pub fn icp_tol() -> f64 {
        1e-8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ManifestConfig {
    Fit(FitSettings),
    Icp(IcpSettings),
}

/// A complete, reproducible description of one fitting run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: String,
    pub model: PathBuf,
    pub points: PathBuf,
    pub output: PathBuf,
    pub config: ManifestConfig,
}

impl FitSettings {
    pub fn to_config(&self) -> Result<FitConfig> {
        let variant: Variant = self.variant.parse()?;
        let mut c = FitConfig::new(variant, self.eta);
        c.max_outer_iters = self.max_outer_iters;
        c.outer_tol = self.outer_tol;
        c.qn_max_iters = self.qn_max_iters;
        c.qn_grad_tol = self.qn_grad_tol;
        c.sigma2_floor = self.sigma2_floor;
        c.seed = self.seed;
        c.validate()?;
        Ok(c)
    }
}

impl IcpSettings {
    pub fn to_config(&self) -> Result<IcpConfig> {
        let variant: IcpVariant = self.variant.parse()?;
        Ok(IcpConfig {
            variant,
            eta: self.eta,
            max_iters: self.max_iters,
            tol: self.tol,
            seed: self.seed,
        })
    }
}

impl RunManifest {
    /// Checks the version, the embedded configuration and that the input
    /// files exist.
    pub fn validate(&self) -> Result<()> {
        check_version(&self.format_version)?;
        match &self.config {
            ManifestConfig::Fit(f) => {
                f.to_config()?;
            }
            ManifestConfig::Icp(i) => {
                i.to_config()?;
            }
        }
        for p in [&self.model, &self.points] {
            if !p.is_file() {
                return Err(Error::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist"),
                });
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let text = read_text(path)?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| json_error(path, &text, e))?;
    m.validate()?;
    Ok(m)
}

pub fn save_manifest(manifest: &RunManifest, path: &Path) -> Result<()> {
    let mut m = manifest.clone();
    m.format_version = FORMAT_VERSION.to_owned();
    write_text(path, &serde_json::to_string_pretty(&m).expect("manifest is serialisable"))
}
