//! Score table rows and their aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::linalg::{mean, sample_sd};

/// Pipeline options that vary across a grid and enter the effect analysis.
pub const FACTORS: [&str; 5] = [
    "atlas_method",
    "smoothing_fwhm_mm",
    "n_regions",
    "matrix_kind",
    "classifier",
];

/// One fold of one pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub config_hash: String,
    pub atlas_method: String,
    pub smoothing_fwhm_mm: f64,
    pub n_regions: usize,
    pub matrix_kind: String,
    pub classifier: String,
    pub scheme: String,
    pub subsample: u8,
    pub fold: usize,
    pub n_train: usize,
    pub n_cases: usize,
    pub n_controls: usize,
    pub hyperparameter: f64,
    pub accuracy: f64,
    /// Empty when the test fold has no controls.
    pub specificity: Option<f64>,
    /// Empty when the test fold has no cases.
    pub sensitivity: Option<f64>,
}

impl ScoreRecord {
    /// Level of each entry of [`FACTORS`], as text.
    pub fn levels(&self) -> Vec<String> {
        vec![
            self.atlas_method.clone(),
            format!("{}", self.smoothing_fwhm_mm),
            self.n_regions.to_string(),
            self.matrix_kind.clone(),
            self.classifier.clone(),
        ]
    }

    /// `accuracy·(P+N) − (specificity·N + sensitivity·P)`.
    pub fn consistency_residual(&self) -> f64 {
        let n = self.n_controls as f64;
        let p = self.n_cases as f64;
        self.accuracy * (n + p)
            - (self.specificity.unwrap_or(0.0) * n + self.sensitivity.unwrap_or(0.0) * p)
    }
}

/// Mean accuracy of one pipeline over its folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub config_hash: String,
    /// Factor name to level.
    pub options: BTreeMap<String, String>,
    pub mean_accuracy: f64,
    pub n_folds: usize,
}

/// Groups records by configuration, in config-hash order.
pub fn pipeline_means(records: &[ScoreRecord]) -> Vec<PipelineSummary> {
    let mut groups: BTreeMap<&str, Vec<&ScoreRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.config_hash).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(hash, rs)| {
            let acc: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
            PipelineSummary {
                config_hash: hash.to_string(),
                options: FACTORS
                    .iter()
                    .map(|f| f.to_string())
                    .zip(rs[0].levels())
                    .collect(),
                mean_accuracy: mean(&acc),
                n_folds: rs.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileSummary {
    pub factor: String,
    pub level: String,
    pub n_pipelines: usize,
    pub n_kept: usize,
    pub mean: f64,
    pub sd: f64,
}

pub const MIN_DECILE_PIPELINES: usize = 10;

/// For every level of every factor, the best tenth (rounded up) of the
/// pipelines using that level, summarized by mean and sample sd of their
/// mean accuracies. Selection happens within each level separately.
pub fn top_decile(pipelines: &[PipelineSummary]) -> Vec<DecileSummary> {
    let mut by_level: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for p in pipelines {
        for (f, l) in &p.options {
            by_level.entry((f, l)).or_default().push(p.mean_accuracy);
        }
    }
    by_level
        .into_iter()
        .map(|((factor, level), mut acc)| {
            if acc.len() < MIN_DECILE_PIPELINES {
                log::warn!(
                    "{factor}={level} has {} pipelines; keeping only the best",
                    acc.len()
                );
            }
            acc.sort_by(|a, b| b.total_cmp(a));
            let keep = (acc.len() as f64 / 10.0).ceil().max(1.0) as usize;
            let kept = &acc[..keep];
            DecileSummary {
                factor: factor.to_string(),
                level: level.to_string(),
                n_pipelines: acc.len(),
                n_kept: keep,
                mean: mean(kept),
                sd: sample_sd(kept),
            }
        })
        .collect()
}

/// Accuracy of one training fraction in one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub config_hash: String,
    pub scheme: String,
    pub fold: usize,
    pub fraction: f64,
    pub n_train: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub config_hash: String,
    pub fraction: f64,
    pub mean: f64,
    /// Across-fold standard error.
    pub se: f64,
    pub n_folds: usize,
}

/// Mean and standard error per (configuration, fraction).
pub fn curve_summary(records: &[CurveRecord]) -> Vec<CurvePoint> {
    let mut groups: BTreeMap<(&str, u64), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((&r.config_hash, r.fraction.to_bits()))
            .or_default()
            .push(r.accuracy);
    }
    let mut out: Vec<CurvePoint> = groups
        .into_iter()
        .map(|((hash, bits), acc)| CurvePoint {
            config_hash: hash.to_string(),
            fraction: f64::from_bits(bits),
            mean: mean(&acc),
            se: sample_sd(&acc) / (acc.len() as f64).sqrt(),
            n_folds: acc.len(),
        })
        .collect();
    out.sort_by(|a, b| {
        a.config_hash
            .cmp(&b.config_hash)
            .then(a.fraction.total_cmp(&b.fraction))
    });
    out
}
