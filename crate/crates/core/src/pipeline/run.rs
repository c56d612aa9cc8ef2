//! Grid execution over folds, and the files a run leaves behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{run_fold, EvaluationConfig, FoldOutcome, PipelineConfig, Prepared, StageClock};
use crate::classify::LinearModel;
use crate::error::{Error, Result};
use crate::evaluate::{dummy_chance, make_folds, nested_subsets, CurveRecord, ScoreRecord};
use crate::linalg::Matrix;
use crate::par;
use crate::parcellation::Parcellation;
use crate::synthdata::{Cohort, SubjectRecord};
use crate::tables;

pub const SCORES_FILE: &str = "scores.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const CHANCE_FILE: &str = "chance.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Chance level of one pipeline's subsample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceRecord {
    pub config_hash: String,
    pub subsample: u8,
    pub n_cases: usize,
    pub n_controls: usize,
    pub chance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldArtifacts {
    pub fold_id: usize,
    pub atlas: String,
    pub model: String,
    pub features: Option<String>,
    pub region_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineEntry {
    pub config_hash: String,
    pub config: PipelineConfig,
    pub folds: Vec<FoldArtifacts>,
}

/// Seconds of wall-clock time; per-fold stages are summed over jobs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub prepare: f64,
    pub atlas: f64,
    pub features: f64,
    pub classify: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub versions: BTreeMap<String, String>,
    pub cohort_hash: String,
    pub evaluation: EvaluationConfig,
    pub pipelines: Vec<PipelineEntry>,
    pub stage_seconds: StageTimes,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scores: Vec<ScoreRecord>,
    pub curves: Vec<CurveRecord>,
    pub chance: Vec<ChanceRecord>,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, Serialize)]
struct ModelFile<'a> {
    config_hash: &'a str,
    fold_id: usize,
    hyperparameter: f64,
    inner_scores: &'a [f64],
    model: &'a LinearModel,
}

#[derive(Debug, Serialize, Deserialize)]
struct AtlasRow {
    voxel: usize,
    label: Option<usize>,
}

fn pipeline_dir(config_hash: &str) -> PathBuf {
    Path::new("pipelines").join(config_hash)
}

pub fn atlas_path(config_hash: &str, fold: usize) -> PathBuf {
    pipeline_dir(config_hash).join(format!("atlas_fold{fold}.csv"))
}

pub fn write_atlas(path: &Path, atlas: &Parcellation) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for (voxel, &label) in atlas.labels().iter().enumerate() {
        w.serialize(AtlasRow { voxel, label })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an atlas written by [`write_atlas`] onto `dims`.
pub fn read_atlas(path: &Path, dims: crate::lattice::LatticeDims) -> Result<Parcellation> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut labels = Vec::new();
    for (i, row) in r.deserialize::<AtlasRow>().enumerate() {
        let row = row?;
        if row.voxel != i {
            return Err(Error::invalid(format!(
                "{}: voxel rows out of order",
                path.display()
            )));
        }
        labels.push(row.label);
    }
    let k = labels.iter().flatten().max().map_or(0, |m| m + 1);
    Parcellation::new(labels, dims, k)
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

/// Writes the per-fold files of one pipeline under `run_dir`.
fn write_fold(
    run_dir: &Path,
    cfg: &PipelineConfig,
    hash: &str,
    outcome: &FoldOutcome,
    write_features: bool,
) -> Result<FoldArtifacts> {
    let dir = run_dir.join(pipeline_dir(hash));
    tables::create_dir(&dir)?;
    let f = outcome.fold_id;
    let atlas = atlas_path(hash, f);
    write_atlas(&run_dir.join(&atlas), &outcome.atlas)?;
    let model = pipeline_dir(hash).join(format!("model_fold{f}.json"));
    tables::write_json(
        &run_dir.join(&model),
        &ModelFile {
            config_hash: hash,
            fold_id: f,
            hyperparameter: outcome.model.hyperparameter,
            inner_scores: &outcome.inner_scores,
            model: &outcome.model,
        },
    )?;
    let features = if write_features {
        let rel = pipeline_dir(hash).join(format!("features_fold{f}.csv"));
        let ids: Vec<usize> = outcome.train.iter().chain(&outcome.test).copied().collect();
        let d = outcome.features.ncols();
        let table = Matrix::from_fn(ids.len(), d + 1, |i, j| {
            if j == 0 {
                ids[i] as f64
            } else {
                outcome.features[(i, j - 1)]
            }
        });
        let header: Vec<String> = std::iter::once("subject_id".to_string())
            .chain((0..d).map(|j| format!("{}_{j}", cfg.matrix_kind.name())))
            .collect();
        tables::write_matrix(&run_dir.join(&rel), Some(&header), &table)?;
        Some(rel.display().to_string())
    } else {
        None
    };
    Ok(FoldArtifacts {
        fold_id: f,
        atlas: atlas.display().to_string(),
        model: model.display().to_string(),
        features,
        region_sizes: outcome.atlas.region_sizes(),
    })
}

enum Job {
    Fold {
        config: usize,
        fold: usize,
    },
    Curve {
        config: usize,
        fold: usize,
        fraction: f64,
        train: Vec<usize>,
    },
}

enum JobResult {
    Fold(ScoreRecord, FoldArtifacts),
    Curve(CurveRecord),
}

/// Runs every pipeline on every fold of its scheme, writing per-fold
/// artifacts under `run_dir` as folds finish. Rows come back sorted by
/// configuration hash and fold.
pub fn run_pipelines(
    cohort: &Cohort,
    cohort_hash: &str,
    configs: &[PipelineConfig],
    eval: &EvaluationConfig,
    run_dir: &Path,
) -> Result<RunOutput> {
    eval.validate()?;
    for c in configs {
        c.validate()?;
    }
    let total_start = Instant::now();
    let widths: Vec<f64> = configs.iter().map(|c| c.smoothing_fwhm_mm).collect();
    let prep_start = Instant::now();
    let prep = Prepared::new(cohort, &widths)?;
    let prepare_secs = prep_start.elapsed().as_secs_f64();

    let all: Vec<&SubjectRecord> = cohort.subjects.iter().collect();
    let mut plans = Vec::with_capacity(configs.len());
    let mut chance = Vec::with_capacity(configs.len());
    let mut jobs = Vec::new();
    for (ci, cfg) in configs.iter().enumerate() {
        let records = cfg.subsample.select(&all);
        let plan = make_folds(&records, cfg.scheme, cfg.master_seed)?;
        let labels: Vec<f64> = records.iter().map(|r| r.diagnosis.sign()).collect();
        let n_cases = labels.iter().filter(|v| **v > 0.0).count();
        chance.push(ChanceRecord {
            config_hash: cfg.hash(),
            subsample: cfg.subsample.into(),
            n_cases,
            n_controls: labels.len() - n_cases,
            chance: dummy_chance(&labels, cfg.master_seed, eval.chance_draws)?,
        });
        for fold in &plan.folds {
            jobs.push(Job::Fold {
                config: ci,
                fold: fold.fold_id,
            });
            let partial: Vec<f64> = eval
                .learning_curve_fractions
                .iter()
                .copied()
                .filter(|f| *f < 1.0)
                .collect();
            if partial.is_empty() {
                continue;
            }
            let train_recs = fold
                .train
                .iter()
                .map(|&id| prep.record(id))
                .collect::<Result<Vec<_>>>()?;
            let subsets = nested_subsets(&train_recs, &partial, cfg.master_seed, fold.fold_id)?;
            for (fraction, train) in partial.into_iter().zip(subsets) {
                jobs.push(Job::Curve {
                    config: ci,
                    fold: fold.fold_id,
                    fraction,
                    train,
                });
            }
        }
        plans.push(plan);
    }

    let clock = StageClock::default();
    let hashes: Vec<String> = configs.iter().map(|c| c.hash()).collect();
    let results = par::try_map(&jobs, |job| -> Result<JobResult> {
        match job {
            Job::Fold { config, fold } => {
                let cfg = &configs[*config];
                let f = &plans[*config].folds[*fold];
                let out = run_fold(&prep, cfg, eval, f.fold_id, &f.train, &f.test, &clock)
                    .map_err(|e| fold_context(&hashes[*config], f.fold_id, e))?;
                let artifacts =
                    write_fold(run_dir, cfg, &hashes[*config], &out, eval.write_features)?;
                Ok(JobResult::Fold(
                    score_record(cfg, &hashes[*config], &out),
                    artifacts,
                ))
            }
            Job::Curve {
                config,
                fold,
                fraction,
                train,
            } => {
                let cfg = &configs[*config];
                let f = &plans[*config].folds[*fold];
                let out = run_fold(&prep, cfg, eval, f.fold_id, train, &f.test, &clock)
                    .map_err(|e| fold_context(&hashes[*config], f.fold_id, e))?;
                Ok(JobResult::Curve(CurveRecord {
                    config_hash: hashes[*config].clone(),
                    scheme: cfg.scheme.name().into(),
                    fold: f.fold_id,
                    fraction: *fraction,
                    n_train: train.len(),
                    accuracy: out.score.accuracy,
                }))
            }
        }
    })?;

    let mut scores = Vec::new();
    let mut curves = Vec::new();
    let mut artifacts: BTreeMap<String, Vec<FoldArtifacts>> = BTreeMap::new();
    for r in results {
        match r {
            JobResult::Fold(s, a) => {
                if eval.learning_curve_fractions.contains(&1.0) {
                    curves.push(CurveRecord {
                        config_hash: s.config_hash.clone(),
                        scheme: s.scheme.clone(),
                        fold: s.fold,
                        fraction: 1.0,
                        n_train: s.n_train,
                        accuracy: s.accuracy,
                    });
                }
                artifacts.entry(s.config_hash.clone()).or_default().push(a);
                scores.push(s);
            }
            JobResult::Curve(c) => curves.push(c),
        }
    }
    scores.sort_by(|a, b| a.config_hash.cmp(&b.config_hash).then(a.fold.cmp(&b.fold)));
    curves.sort_by(|a, b| {
        a.config_hash
            .cmp(&b.config_hash)
            .then(a.fold.cmp(&b.fold))
            .then(a.fraction.total_cmp(&b.fraction))
    });
    chance.sort_by(|a, b| a.config_hash.cmp(&b.config_hash));

    let secs = |c: &std::sync::atomic::AtomicU64| c.load(Ordering::Relaxed) as f64 * 1e-9;
    let mut pipelines: Vec<PipelineEntry> = configs
        .iter()
        .zip(&hashes)
        .map(|(c, h)| {
            let mut folds = artifacts.remove(h).unwrap_or_default();
            folds.sort_by_key(|f| f.fold_id);
            PipelineEntry {
                config_hash: h.clone(),
                config: c.clone(),
                folds,
            }
        })
        .collect();
    pipelines.sort_by(|a, b| a.config_hash.cmp(&b.config_hash));
    let manifest = RunManifest {
        versions: [(
            "connectome-core".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        )]
        .into(),
        cohort_hash: cohort_hash.to_string(),
        evaluation: eval.clone(),
        pipelines,
        stage_seconds: StageTimes {
            prepare: prepare_secs,
            atlas: secs(&clock.atlas),
            features: secs(&clock.features),
            classify: secs(&clock.classify),
            total: total_start.elapsed().as_secs_f64(),
        },
    };
    Ok(RunOutput {
        scores,
        curves,
        chance,
        manifest,
    })
}

fn fold_context(hash: &str, fold: usize, e: Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("pipeline {hash} fold {fold}: {m}")),
        Error::Degenerate(m) => Error::Degenerate(format!("pipeline {hash} fold {fold}: {m}")),
        Error::SingleClass(m) => Error::SingleClass(format!("pipeline {hash} fold {fold}: {m}")),
        other => other,
    }
}

fn score_record(cfg: &PipelineConfig, hash: &str, out: &FoldOutcome) -> ScoreRecord {
    ScoreRecord {
        config_hash: hash.to_string(),
        atlas_method: cfg.atlas_method.name().into(),
        smoothing_fwhm_mm: cfg.smoothing_fwhm_mm,
        n_regions: cfg.n_regions,
        matrix_kind: cfg.matrix_kind.name().into(),
        classifier: cfg.classifier.name().into(),
        scheme: cfg.scheme.name().into(),
        subsample: cfg.subsample.into(),
        fold: out.fold_id,
        n_train: out.train.len(),
        n_cases: out.score.n_cases,
        n_controls: out.score.n_controls,
        hyperparameter: out.model.hyperparameter,
        accuracy: out.score.accuracy,
        specificity: out.score.specificity,
        sensitivity: out.score.sensitivity,
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the score, curve and chance tables and the manifest.
pub fn write_run(run_dir: &Path, out: &RunOutput) -> Result<()> {
    tables::create_dir(run_dir)?;
    write_rows(&run_dir.join(SCORES_FILE), &out.scores)?;
    write_rows(&run_dir.join(CHANCE_FILE), &out.chance)?;
    if !out.curves.is_empty() {
        write_rows(&run_dir.join(CURVES_FILE), &out.curves)?;
    }
    tables::write_json(&run_dir.join(MANIFEST_FILE), &out.manifest)
}

pub fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    read_rows(path)
}

/// SHA-256 over the names and contents of the files in a cohort directory.
pub fn cohort_hash(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    names.retain(|p| p.is_file() && p.file_name().is_some_and(|n| n != MANIFEST_FILE));
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        h.update(p.file_name().unwrap().to_string_lossy().as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}
