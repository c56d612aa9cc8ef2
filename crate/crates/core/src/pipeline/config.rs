//! Study configuration files and pipeline grids.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{default_grid, ClassifierKind};
use crate::connectivity::ConnectivityKind;
use crate::error::{Error, Result};
use crate::evaluate::{Scheme, Subsample};
use crate::parcellation::{AtlasMethod, DEFAULT_ROI_COUNT};
use crate::synthdata::CohortConfig;
use crate::tables;

/// One point of the pipeline grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub atlas_method: AtlasMethod,
    pub smoothing_fwhm_mm: f64,
    /// Regions kept after atlas estimation (the largest ones).
    pub n_regions: usize,
    /// Clusters estimated before selection; `None` estimates exactly `n_regions`.
    pub n_clusters: Option<usize>,
    pub matrix_kind: ConnectivityKind,
    pub classifier: ClassifierKind,
    pub scheme: Scheme,
    pub subsample: Subsample,
    pub master_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            atlas_method: AtlasMethod::KMeans,
            smoothing_fwhm_mm: 6.0,
            n_regions: DEFAULT_ROI_COUNT,
            n_clusters: None,
            matrix_kind: ConnectivityKind::Tangent,
            classifier: ClassifierKind::Ridge,
            scheme: Scheme::InterSite,
            subsample: Subsample::All,
            master_seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn n_clusters(&self) -> usize {
        self.n_clusters.unwrap_or(self.n_regions)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: String| {
            Err(Error::Config {
                path: path.into(),
                message,
            })
        };
        if self.n_regions < 2 {
            return bad(
                "n_regions",
                format!("{} must be at least 2", self.n_regions),
            );
        }
        if self.n_clusters() < self.n_regions {
            return bad(
                "n_clusters",
                format!(
                    "{} clusters cannot supply {} regions",
                    self.n_clusters(),
                    self.n_regions
                ),
            );
        }
        if !(self.smoothing_fwhm_mm >= 0.0 && self.smoothing_fwhm_mm.is_finite()) {
            return bad(
                "smoothing_fwhm_mm",
                format!(
                    "{} must be a finite non-negative width",
                    self.smoothing_fwhm_mm
                ),
            );
        }
        if matches!(self.atlas_method, AtlasMethod::Ica | AtlasMethod::Msdl) {
            return Err(Error::Unimplemented(format!(
                "atlas method `{}`",
                self.atlas_method.name()
            )));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("pipeline config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}

/// Settings shared by every pipeline of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub inner_folds: usize,
    pub hyperparameter_grid: Vec<f64>,
    /// Training fractions for learning curves; empty disables them.
    pub learning_curve_fractions: Vec<f64>,
    pub chance_draws: usize,
    /// PCA components of the voxel profiles fed to clustering.
    pub max_profile_components: usize,
    pub kmeans_restarts: usize,
    /// Also write every fold's feature matrix.
    pub write_features: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            inner_folds: 5,
            hyperparameter_grid: default_grid(),
            learning_curve_fractions: Vec::new(),
            chance_draws: 1000,
            max_profile_components: 100,
            kmeans_restarts: 10,
            write_features: false,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: String| {
            Err(Error::Config {
                path: format!("evaluation.{path}"),
                message,
            })
        };
        if self.inner_folds < 2 {
            return bad("inner_folds", "at least 2 inner folds required".into());
        }
        if self.hyperparameter_grid.is_empty()
            || self
                .hyperparameter_grid
                .iter()
                .any(|h| !(*h > 0.0 && h.is_finite()))
        {
            return bad(
                "hyperparameter_grid",
                "grid must be non-empty with positive finite values".into(),
            );
        }
        if let Some(f) = self
            .learning_curve_fractions
            .iter()
            .find(|f| !(**f > 0.0 && **f <= 1.0))
        {
            return bad(
                "learning_curve_fractions",
                format!("fraction {f} is outside (0, 1]"),
            );
        }
        if self.max_profile_components == 0 || self.kmeans_restarts == 0 {
            return bad(
                "max_profile_components",
                "profile components and k-means restarts must be positive".into(),
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiomarkerConfig {
    pub n_permutations: usize,
    pub dice_threshold: f64,
}

impl Default for BiomarkerConfig {
    fn default() -> Self {
        Self {
            n_permutations: 1000,
            dice_threshold: 0.9,
        }
    }
}

/// Everything the command-line tool reads from `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Cohort directory, relative to the output directory.
    pub cohort_dir: String,
    /// Run directory, relative to the output directory.
    pub run_dir: String,
    pub cohort_seed: u64,
    pub cohort: CohortConfig,
    pub pipeline: PipelineConfig,
    pub evaluation: EvaluationConfig,
    pub biomarkers: BiomarkerConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            cohort_dir: "cohort".into(),
            run_dir: "run".into(),
            cohort_seed: 0,
            cohort: CohortConfig::default(),
            pipeline: PipelineConfig::default(),
            evaluation: EvaluationConfig::default(),
            biomarkers: BiomarkerConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: StudyConfig = tables::parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate().map_err(|e| prefix("cohort", e))?;
        self.pipeline
            .validate()
            .map_err(|e| prefix("pipeline", e))?;
        self.evaluation.validate()?;
        let p = self.cohort.lattice_dims.n_voxels();
        let high_variance = (super::COMPCOR_FRACTION * p as f64 - 1e-9).ceil() as usize;
        if high_variance < super::COMPCOR_COMPONENTS {
            return Err(Error::Config {
                path: "cohort.lattice_dims".into(),
                message: format!(
                    "{p} voxels leave {high_variance} high-variance voxels; CompCor needs {}",
                    super::COMPCOR_COMPONENTS
                ),
            });
        }
        if self.biomarkers.n_permutations < 100 {
            return Err(Error::Config {
                path: "biomarkers.n_permutations".into(),
                message: format!(
                    "{} is below the minimum of 100",
                    self.biomarkers.n_permutations
                ),
            });
        }
        if !(0.0..=1.0).contains(&self.biomarkers.dice_threshold) {
            return Err(Error::Config {
                path: "biomarkers.dice_threshold".into(),
                message: "threshold must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Config { path, message } => Error::Config {
            path: format!("{section}.{path}"),
            message,
        },
        other => other,
    }
}

/// Cartesian product of grid axes applied over `base`.
///
/// The grid is a JSON object mapping pipeline field names to arrays of
/// values. Axes are expanded in field-name order, values in listed order;
/// the result is sorted by configuration hash and deduplicated.
pub fn expand_grid(base: &PipelineConfig, grid_json: &str) -> Result<Vec<PipelineConfig>> {
    let axes: BTreeMap<String, Vec<serde_json::Value>> = tables::parse_json(grid_json)?;
    let base_value = serde_json::to_value(base)?;
    let mut points = vec![base_value];
    for (name, values) in &axes {
        if !base_value_has(base, name) {
            return Err(Error::Config {
                path: name.clone(),
                message: "not a pipeline option".into(),
            });
        }
        if values.is_empty() {
            return Err(Error::Config {
                path: name.clone(),
                message: "grid axis has no values".into(),
            });
        }
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q[name.as_str()] = v.clone();
                    q
                })
            })
            .collect();
    }
    let mut configs = Vec::with_capacity(points.len());
    for p in points {
        let cfg: PipelineConfig = tables::parse_json(&p.to_string())?;
        cfg.validate()?;
        configs.push(cfg);
    }
    configs.sort_by_cached_key(|c| c.hash());
    configs.dedup_by_key(|c| c.hash());
    Ok(configs)
}

fn base_value_has(base: &PipelineConfig, name: &str) -> bool {
    serde_json::to_value(base)
        .ok()
        .and_then(|v| v.as_object().map(|o| o.contains_key(name)))
        .unwrap_or(false)
}
