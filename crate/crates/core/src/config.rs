//! Run configuration read from a TOML file, with a stable hash for report
//! provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::Schema;
use crate::convert::ConvertConfig;
use crate::error::{Error, Result};
use crate::eval::CvConfig;
use crate::forecast::SourceOptions;
use crate::gp::OptimizeOptions;
use crate::preprocess::PreprocessConfig;
use crate::synth::CohortSpec;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Cohort file to ingest. Without it, `pipeline` generates a synthetic cohort.
    pub input: Option<PathBuf>,
    /// Column-mapping schema for `input`.
    pub schema: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub budget: usize,
    pub grad_tol: f64,
    pub max_optimize_rows: usize,
    pub max_log_step: f64,
    pub log_bound: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        let s = SourceOptions::default();
        GpConfig {
            budget: s.optimize.budget,
            grad_tol: s.optimize.grad_tol,
            max_optimize_rows: s.max_optimize_rows,
            max_log_step: s.optimize.max_log_step,
            log_bound: s.optimize.log_bound,
        }
    }
}

impl GpConfig {
    pub fn source_options(&self) -> SourceOptions {
        SourceOptions {
            hyper_init: None,
            optimize: OptimizeOptions {
                budget: self.budget,
                grad_tol: self.grad_tol,
                max_log_step: self.max_log_step,
                log_bound: self.log_bound,
            },
            max_optimize_rows: self.max_optimize_rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection { folds: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub max_iterations: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 3,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for every stochastic step. `[synth].seed` is overwritten by it.
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    pub synth: CohortSpec,
    pub preprocess: PreprocessConfig,
    pub gp: GpConfig,
    pub cv: CvSection,
    pub cluster: ClusterConfig,
    pub convert: ConvertConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Structural checks plus existence of every referenced input file.
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.preprocess.validate()?;
        self.convert.validate()?;
        if self.cv.folds < 2 {
            return Err(Error::Config("cv.folds must be at least 2".into()));
        }
        if self.cluster.k == 0 || self.cluster.max_iterations == 0 {
            return Err(Error::Config("cluster.k and cluster.max_iterations must be positive".into()));
        }
        if self.gp.budget == 0 || self.gp.max_optimize_rows == 0 {
            return Err(Error::Config("gp.budget and gp.max_optimize_rows must be positive".into()));
        }
        for p in [&self.paths.input, &self.paths.schema].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required: set `seed` in the config or pass --seed".into()))
    }

    pub fn schema(&self) -> Result<Schema> {
        match &self.paths.schema {
            Some(p) => Schema::load(p).map_err(|e| match e {
                Error::Config(_) => e,
                other => Error::Config(other.to_string()),
            }),
            None => Ok(Schema::default()),
        }
    }

    pub fn report_dir(&self) -> PathBuf {
        self.paths.report_dir.clone().unwrap_or_else(|| PathBuf::from("reports"))
    }

    pub fn cv_config(&self, seed: u64) -> CvConfig {
        CvConfig {
            k: self.cv.folds,
            seed,
            normalize_scope: self.preprocess.normalize_scope,
            source: self.gp.source_options(),
        }
    }

    /// SHA-256 of the canonical serialization, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths.report_dir = None;
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(c.validate().is_ok());
        assert!(c.require_seed().unwrap_err().is_config());
    }

    #[test]
    fn round_trip_and_hash() {
        let text = "seed = 9\n[cv]\nfolds = 5\n[synth]\nn_patients = 30\n[convert]\nc = 2.0\n";
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.cv.folds, 5);
        assert_eq!(c.synth.n_patients, 30);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);

        let mut moved = c.clone();
        moved.paths.report_dir = Some("elsewhere".into());
        assert_eq!(moved.hash(), c.hash());
        let mut other = c.clone();
        other.seed = Some(10);
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(RunConfig::from_toml("sede = 1").unwrap_err().is_config());
        let c = RunConfig::from_toml("[cv]\nfolds = 1").unwrap();
        assert!(c.validate().unwrap_err().is_config());
        let c = RunConfig::from_toml("[paths]\ninput = \"/nonexistent/file.csv\"").unwrap();
        assert!(c.validate().unwrap_err().is_config());
    }
}
