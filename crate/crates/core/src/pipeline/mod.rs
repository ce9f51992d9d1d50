//! Per-case orchestration: manifests, the synthetic phantom case and the
//! `register`, `fuse`, `evaluate` and `stats` commands. All file output
//! goes below one directory:
//!
//! ```text
//! <out>/reports/*.json
//! <out>/dvh/*.csv
//! <out>/composite/*.pgm (+ .json sidecars)
//! ```

mod case;
mod commands;
mod phantom_case;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dosimetry::{DoseAtVolumeMode, DEFAULT_BIN_WIDTH_GY};
use crate::error::{Error, Result};
use crate::fusion::QuadrantLayout;
use crate::registration::RegistrationConfig;
use crate::stats::ZeroMethod;

pub use case::{Landmarks, LoadedCase, PatientCase, StructurePaths};
pub use commands::{
    cmd_evaluate, cmd_fuse, cmd_register, cmd_stats, CaseReport, CheckResult, ColumnRef,
    FuseReport, FusedImage, MappingSummary, RegisterReport, SpearmanReport, StatsReport,
    TableStats,
};
pub use phantom_case::{write_phantom_case, PhantomCase, PhantomCaseConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub bin_width_gy: f64,
    /// Isotropic spacing of the dose / DVH grid.
    pub dose_spacing_mm: f64,
    /// Extra margin of the dose grid around all structures.
    pub dose_margin_mm: f64,
    pub d90_mode: DoseAtVolumeMode,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            bin_width_gy: DEFAULT_BIN_WIDTH_GY,
            dose_spacing_mm: 1.0,
            dose_margin_mm: 2.0,
            d90_mode: DoseAtVolumeMode::Exact,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub layout: QuadrantLayout,
    pub fill: f64,
    /// Cursor positions `[u, v]`; empty means the image centre.
    pub cursors: Vec<[usize; 2]>,
    /// TRUS slice indices to fuse; empty means all.
    pub slices: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub zero_method: ZeroMethod,
    /// Columns correlated by Spearman's ρ; defaults to the first table's
    /// `diff` against the second table's `percent`.
    pub spearman: Option<[ColumnRef; 2]>,
}

/// Everything a command can be tuned with; read from `--config`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub registration: RegistrationConfig,
    pub evaluate: EvaluateConfig,
    pub fusion: FusionConfig,
    pub stats: StatsConfig,
    pub phantom: PhantomCaseConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.registration.validate()?;
        let e = &self.evaluate;
        for (name, v) in [
            ("bin_width_gy", e.bin_width_gy),
            ("dose_spacing_mm", e.dose_spacing_mm),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "evaluate.{name} must be positive, got {v}"
                )));
            }
        }
        if !(e.dose_margin_mm >= 0.0) {
            return Err(Error::InvalidParameter(
                "evaluate.dose_margin_mm must be non-negative".into(),
            ));
        }
        self.phantom.validate()
    }
}

/// Output directory tree of a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        OutputLayout { root: root.into() }
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn dvh(&self) -> PathBuf {
        self.root.join("dvh")
    }

    pub fn composite(&self) -> PathBuf {
        self.root.join("composite")
    }

    pub(crate) fn ensure(dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }

    /// Writes `value` as pretty JSON to `reports/<name>.json`.
    pub fn write_report<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let dir = self.reports();
        Self::ensure(&dir)?;
        let path = dir.join(format!("{name}.json"));
        write_json(&path, value)?;
        Ok(path)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

#[cfg(test)]
mod tests;
