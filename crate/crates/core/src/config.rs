//! Declarative experiment configuration: JSON presets describing the
//! corpus source, conditioning chain, projection, PLDA data selection,
//! clustering, calibration and metric parameters for one sub-system, plus
//! fusion configs combining several sub-systems.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calfuse::CalibrationStrategy;
use crate::corpus::{Domain, SynthConfig};
use crate::error::{config_err, Error, Result};
use crate::metrics::{CostParams, OperatingPoint};
use crate::preprocess::{validate_chain, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlabeledSet {
    Minor,
    Major,
}

impl UnlabeledSet {
    pub fn domain(self) -> Domain {
        match self {
            UnlabeledSet::Minor => Domain::InDomainMinor,
            UnlabeledSet::Major => Domain::InDomainMajor,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UnlabeledSet::Minor => "minor",
            UnlabeledSet::Major => "major",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialGenSpec {
    pub enroll_segments: usize,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub seed: u64,
}

/// Corpus input: either a seeded synthetic source (trial lists generated
/// alongside) or paths to existing corpus/trial files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorpusSource {
    Synth {
        synth: SynthConfig,
        dev_trials: Option<TrialGenSpec>,
        eval_trials: Option<TrialGenSpec>,
    },
    Paths {
        corpus: PathBuf,
        dev_trials: Option<PathBuf>,
        eval_trials: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    Lda,
    Svda,
    SvdaLdaCascade,
}

/// Which speaker-labeled data trains the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainDataSelector {
    /// Filtered out-of-domain labeled data only.
    Labeled,
    /// Labeled data plus cluster-labeled unlabeled sets.
    LabeledPlusClustered,
}

fn default_ridge() -> f64 {
    1e-6
}

fn default_svm_c() -> f64 {
    1.0
}

fn default_svm_tol() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub method: ProjectionMethod,
    pub out_dim: usize,
    /// Intermediate dimension for the SVDA→LDA cascade.
    pub mid_dim: Option<usize>,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_svm_c")]
    pub svm_c: f64,
    #[serde(default = "default_svm_tol")]
    pub svm_tol: f64,
    pub data: TrainDataSelector,
    /// Unlabeled sets folded into SVDA rest classes.
    #[serde(default)]
    pub unlabeled: Vec<UnlabeledSet>,
    /// Cluster-labeled sets appended when `data` is
    /// `labeled_plus_clustered`.
    #[serde(default)]
    pub clustered_sets: Vec<UnlabeledSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PldaDataSelector {
    Labeled,
    LabeledPlusClustered,
    Clustered,
}

fn default_plda_iters() -> usize {
    10
}

fn default_plda_floor() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PldaSpec {
    pub data: PldaDataSelector,
    /// Cluster-labeled sets used when `data` involves clustered data.
    #[serde(default)]
    pub clustered_sets: Vec<UnlabeledSet>,
    #[serde(default = "default_plda_iters")]
    pub iters: usize,
    #[serde(default = "default_plda_floor")]
    pub floor: f64,
}

fn default_restarts() -> usize {
    10
}

fn default_kmeans_iters() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSpec {
    pub k_minor: usize,
    pub k_major: usize,
    pub seed: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_kmeans_iters")]
    pub max_iters: usize,
}

fn default_llr_cap() -> f64 {
    7.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub strategies: Vec<CalibrationStrategy>,
    /// Unlabeled set the synthetic calibration trials are drawn from.
    #[serde(default = "default_unlabeled_source")]
    pub unlabeled_source: UnlabeledSet,
    pub n_target: usize,
    pub n_nontarget: usize,
    #[serde(default = "default_llr_cap")]
    pub llr_cap: f64,
    pub seed: u64,
}

fn default_unlabeled_source() -> UnlabeledSet {
    UnlabeledSet::Minor
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialsTarget {
    Dev,
    Eval,
}

impl TrialsTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialsTarget::Dev => "dev",
            TrialsTarget::Eval => "eval",
        }
    }
}

fn default_metrics() -> CostParams {
    CostParams::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub trials: TrialsTarget,
    pub corpus: CorpusSource,
    #[serde(default)]
    pub filter_min_segments: Option<usize>,
    /// Conditioning chain stage tokens, applied in order.
    pub chain: Vec<String>,
    pub projection: ProjectionSpec,
    pub plda: PldaSpec,
    #[serde(default)]
    pub clustering: Option<ClusteringSpec>,
    pub calibration: CalibrationSpec,
    #[serde(default = "default_metrics")]
    pub metrics: CostParams,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parsed_chain(&self) -> Result<Vec<Stage>> {
        self.chain.iter().map(|t| Stage::parse_token(t)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return config_err("experiment name must not be empty");
        }
        let chain = self.parsed_chain()?;
        validate_chain(&chain)?;
        if !chain.iter().any(|s| matches!(s, Stage::Project)) {
            return config_err("chain must contain a 'project' stage");
        }
        if let Some(min) = self.filter_min_segments {
            if min == 0 {
                return config_err("filter_min_segments must be positive when set");
            }
        }
        match self.projection.method {
            ProjectionMethod::SvdaLdaCascade => {
                let mid = self.projection.mid_dim.ok_or_else(|| {
                    Error::Config("svda_lda_cascade requires mid_dim".into())
                })?;
                if self.projection.out_dim > mid {
                    return config_err(format!(
                        "cascade out_dim {} exceeds mid_dim {mid}",
                        self.projection.out_dim
                    ));
                }
            }
            ProjectionMethod::Lda => {
                if !self.projection.unlabeled.is_empty() {
                    return config_err("projection.unlabeled applies only to SVDA methods");
                }
            }
            ProjectionMethod::Svda => {}
        }
        if self.projection.out_dim == 0 {
            return config_err("projection.out_dim must be positive");
        }
        if !(self.projection.ridge >= 0.0) {
            return config_err("projection.ridge must be non-negative");
        }

        let needs_clustering = self.projection.data == TrainDataSelector::LabeledPlusClustered
            || self.plda.data != PldaDataSelector::Labeled
            || self
                .calibration
                .strategies
                .iter()
                .any(|s| s.uses_unlabeled());
        if needs_clustering && self.clustering.is_none() {
            return config_err(
                "clustering spec required by the projection/plda data selector or calibration strategy",
            );
        }
        if self.plda.data != PldaDataSelector::Labeled && self.plda.clustered_sets.is_empty() {
            return config_err("plda.clustered_sets must name at least one set");
        }
        if self.projection.data == TrainDataSelector::LabeledPlusClustered
            && self.projection.clustered_sets.is_empty()
        {
            return config_err("projection.clustered_sets must name at least one set");
        }
        if self.calibration.strategies.is_empty() {
            return config_err("calibration.strategies must not be empty");
        }
        let mut seen = BTreeMap::new();
        for s in &self.calibration.strategies {
            if seen.insert(*s, ()).is_some() {
                return config_err(format!("duplicate calibration strategy '{}'", s.as_str()));
            }
        }
        if self.plda.iters == 0 {
            return config_err("plda.iters must be positive");
        }
        self.metrics.validate()?;
        if let Some(c) = &self.clustering {
            if c.k_minor == 0 && c.k_major == 0 {
                return config_err("clustering: at least one of k_minor/k_major must be positive");
            }
            if c.restarts == 0 || c.max_iters == 0 {
                return config_err("clustering: restarts and max_iters must be positive");
            }
        }
        Ok(())
    }

    /// Semantic config hash: the JSON value is re-serialized with sorted
    /// keys and no whitespace before hashing, so formatting changes do
    /// not alter it.
    pub fn canonical_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("canonical form");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex_digest(hasher)
    }
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionMember {
    /// Member experiment config path.
    pub config: PathBuf,
    /// Member experiment output directory.
    pub out: PathBuf,
}

fn default_l2() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub name: String,
    pub members: Vec<FusionMember>,
    pub strategy: CalibrationStrategy,
    #[serde(default = "default_l2")]
    pub l2: f64,
    /// Re-fit PAV on the fused scores (post-fusion recalibration) instead
    /// of relying on the logistic output being calibrated.
    #[serde(default)]
    pub recalibrate_fused: bool,
    #[serde(default = "default_metrics")]
    pub metrics: CostParams,
}

impl FusionConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<FusionConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg: FusionConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return config_err("fusion needs at least one member");
        }
        if !(self.l2 >= 0.0) {
            return config_err("fusion l2 penalty must be non-negative");
        }
        self.metrics.validate()?;
        Ok(())
    }

    pub fn canonical_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("canonical form");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex_digest(hasher)
    }
}

/// Operating-point shorthand used by a couple of tests and the README
/// examples: `(p_target, c_miss, c_fa)`.
pub fn operating_point(p_target: f64, c_miss: f64, c_fa: f64) -> OperatingPoint {
    OperatingPoint {
        p_target,
        c_miss,
        c_fa,
    }
}
