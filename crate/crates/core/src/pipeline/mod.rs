//! End-to-end prediction pipeline: per-subject cleaning, per-fold atlas,
//! connectivity features and classifier, with every fitted artifact checked
//! against the fold's training set before its score is accepted.

mod biomarkers;
mod config;
mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use crate::classify::{nested_select, LinearModel};
use crate::connectivity::{
    fit_tangent_reference, ledoit_wolf, parameterize, regress_out_group_confounds,
    ConnectivityKind, CovarianceMatrix, GroupCovariates,
};
use crate::error::{Error, Result};
use crate::evaluate::{score, Score};
use crate::linalg::Matrix;
use crate::par;
use crate::parcellation::{
    estimate_atlas, gaussian_smooth, select_largest_rois, AtlasSpec, Parcellation, ProfileGram,
};
use crate::provenance::{audit, FoldRoles, Provenance};
use crate::rng::{derive_seed, tag};
use crate::signal::{
    compcor, detrend_standardize, drift_terms, extract_region_signals, friston24, AtlasMaps,
    ConfoundBasis, ConfoundBuilder, VoxelTimeSeries,
};
use crate::synthdata::{Cohort, Diagnosis, SubjectRecord};

pub use biomarkers::{
    load_fold_atlases, run_biomarkers, write_biomarkers, BiomarkerEdge, BiomarkerReport,
};
pub use config::{expand_grid, BiomarkerConfig, EvaluationConfig, PipelineConfig, StudyConfig};
pub use run::{
    cohort_hash, read_rows, read_scores, run_pipelines, write_rows, write_run, ChanceRecord,
    RunManifest, RunOutput, StageTimes, CHANCE_FILE, CURVES_FILE, MANIFEST_FILE, SCORES_FILE,
};

pub const COMPCOR_FRACTION: f64 = 0.02;
pub const COMPCOR_COMPONENTS: usize = 5;

/// Confound regression basis of one subject: drift, CompCor, 24 motion
/// regressors and the noise-ROI signal.
pub fn subject_confounds(
    voxels: &Matrix,
    motion: &Matrix,
    noise: &Matrix,
) -> Result<ConfoundBasis> {
    let n = voxels.nrows();
    let cc = compcor(voxels, COMPCOR_FRACTION, COMPCOR_COMPONENTS)?;
    let c = ConfoundBuilder::new()
        .block("drift", &drift_terms(n))
        .block("compcor", &cc.components)
        .block("motion", &friston24(motion)?)
        .block("noise", noise)
        .build()?;
    Ok(ConfoundBasis::new(&c))
}

/// Region signals after the full cleaning chain: least-squares extraction,
/// confound removal, then per-region detrending and standardization.
pub fn clean_region_signals(
    voxels: &Matrix,
    maps: &AtlasMaps,
    basis: &ConfoundBasis,
) -> Result<Matrix> {
    let u = extract_region_signals(&VoxelTimeSeries::new(voxels.clone())?, maps)?;
    let residual = basis.residualize(u.as_matrix())?;
    Ok(detrend_standardize(&residual)?.data)
}

/// Per-subject work shared by every pipeline and fold.
pub struct Prepared<'a> {
    pub cohort: &'a Cohort,
    index: BTreeMap<usize, usize>,
    bases: Vec<ConfoundBasis>,
    /// Voxel-profile Gram matrices of the cleaned, smoothed series per FWHM.
    grams: BTreeMap<u64, Vec<ProfileGram>>,
}

impl<'a> Prepared<'a> {
    /// Cleans every subject once and builds clustering inputs for each
    /// smoothing width.
    pub fn new(cohort: &'a Cohort, fwhms: &[f64]) -> Result<Self> {
        let index = cohort
            .subjects
            .iter()
            .enumerate()
            .map(|(i, s)| (s.subject_id, i))
            .collect();
        let mut widths: Vec<f64> = fwhms.to_vec();
        widths.sort_by(f64::total_cmp);
        widths.dedup();
        let voxel_size = cohort.config.voxel_size_mm;
        let per_subject = par::try_map(
            &(0..cohort.n_subjects()).collect::<Vec<_>>(),
            |&i| -> Result<(ConfoundBasis, Vec<ProfileGram>)> {
                let voxels = &cohort.voxel_data[i];
                let basis = subject_confounds(
                    voxels,
                    &cohort.subjects[i].motion_params,
                    &cohort.noise_regressors[i],
                )?;
                let cleaned = detrend_standardize(&basis.residualize(voxels)?)?.data;
                let grams = widths
                    .iter()
                    .map(|&w| {
                        let smoothed =
                            gaussian_smooth(&cleaned, cohort.lattice_dims, w, voxel_size)?;
                        ProfileGram::from_series(&smoothed)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((basis, grams))
            },
        )?;
        let mut bases = Vec::with_capacity(per_subject.len());
        let mut grams: BTreeMap<u64, Vec<ProfileGram>> = BTreeMap::new();
        for (basis, gs) in per_subject {
            bases.push(basis);
            for (w, g) in widths.iter().zip(gs) {
                grams.entry(w.to_bits()).or_default().push(g);
            }
        }
        Ok(Self {
            cohort,
            index,
            bases,
            grams,
        })
    }

    fn position(&self, id: usize) -> Result<usize> {
        self.index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("subject {id} is not in the cohort")))
    }

    pub fn record(&self, id: usize) -> Result<&'a SubjectRecord> {
        Ok(&self.cohort.subjects[self.position(id)?])
    }

    pub fn basis(&self, id: usize) -> Result<&ConfoundBasis> {
        Ok(&self.bases[self.position(id)?])
    }

    fn gram(&self, id: usize, fwhm: f64) -> Result<&ProfileGram> {
        let pos = self.position(id)?;
        self.grams
            .get(&fwhm.to_bits())
            .map(|g| &g[pos])
            .ok_or_else(|| Error::invalid(format!("no clustering input prepared at {fwhm} mm")))
    }

    /// Cleaned region signals and their shrunk covariance for each subject.
    pub fn covariances(&self, ids: &[usize], maps: &AtlasMaps) -> Result<Vec<CovarianceMatrix>> {
        par::try_map(ids, |&id| {
            let pos = self.position(id)?;
            let signals =
                clean_region_signals(&self.cohort.voxel_data[pos], maps, &self.bases[pos])?;
            ledoit_wolf(&signals)
        })
    }
}

/// Wall-clock accumulators, in nanoseconds summed over jobs.
#[derive(Debug, Default)]
pub struct StageClock {
    pub atlas: AtomicU64,
    pub features: AtomicU64,
    pub classify: AtomicU64,
}

impl StageClock {
    fn add(counter: &AtomicU64, since: Instant) {
        counter.fetch_add(since.elapsed().as_nanos() as u64, Ordering::Relaxed);
    }
}

/// Everything one fold produced.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold_id: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub predictions: Vec<f64>,
    pub score: Score,
    /// Selected regions, relabelled `0..n_regions` in region-id order.
    pub atlas: Parcellation,
    pub model: LinearModel,
    /// Mean inner-CV accuracy per hyperparameter grid point.
    pub inner_scores: Vec<f64>,
    /// Feature rows for `train` followed by `test`, after confound removal.
    pub features: Matrix,
    pub provenance: Vec<Provenance>,
}

/// Stratum label combining site and diagnosis.
pub fn stratum(r: &SubjectRecord) -> usize {
    2 * r.site_id + (r.diagnosis == Diagnosis::Case) as usize
}

/// Restricts a parcellation to the regions kept in `maps`.
fn selected_atlas(full: &Parcellation, maps: &AtlasMaps) -> Result<Parcellation> {
    let relabel: BTreeMap<usize, usize> = maps
        .region_ids()
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new))
        .collect();
    let labels = full
        .labels()
        .iter()
        .map(|l| l.and_then(|l| relabel.get(&l).copied()))
        .collect();
    Parcellation::new(labels, full.dims(), relabel.len())
}

/// Fits the whole pipeline on `train` and scores it on `test`.
pub fn run_fold(
    prep: &Prepared,
    cfg: &PipelineConfig,
    eval: &EvaluationConfig,
    fold_id: usize,
    train: &[usize],
    test: &[usize],
    clock: &StageClock,
) -> Result<FoldOutcome> {
    let roles = FoldRoles::new(fold_id, train.iter().copied(), test.iter().copied())?;
    let started = Instant::now();
    let grams = train
        .iter()
        .map(|&id| Ok((id, prep.gram(id, cfg.smoothing_fwhm_mm)?)))
        .collect::<Result<Vec<_>>>()?;
    let spec = AtlasSpec {
        method: cfg.atlas_method,
        n_clusters: cfg.n_clusters(),
        max_components: eval.max_profile_components,
        seed: derive_seed(cfg.master_seed, &[tag::KMEANS, fold_id as u64]),
        n_init: eval.kmeans_restarts,
    };
    let atlas = estimate_atlas(&spec, &grams, &roles, prep.cohort.lattice_dims)?;
    let maps = select_largest_rois(&atlas.value, cfg.n_regions)?;
    let selected = selected_atlas(&atlas.value, &maps)?;
    StageClock::add(&clock.atlas, started);

    let started = Instant::now();
    let ids: Vec<usize> = train.iter().chain(test).copied().collect();
    let n_train = train.len();
    let covs = prep.covariances(&ids, &maps)?;
    let mut provenance = vec![atlas.provenance];
    let reference = if cfg.matrix_kind == ConnectivityKind::Tangent {
        provenance.push(roles.ensure_train_only("tangent_reference", train.iter().copied())?);
        let sigmas: Vec<&Matrix> = covs[..n_train].iter().map(|c| &c.sigma).collect();
        Some(fit_tangent_reference(&sigmas)?)
    } else {
        None
    };
    let rows = covs
        .iter()
        .map(|c| parameterize(c, cfg.matrix_kind, reference.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let d = rows[0].len();
    let raw = Matrix::from_fn(ids.len(), d, |i, j| rows[i][j]);
    let records = ids
        .iter()
        .map(|&id| prep.record(id))
        .collect::<Result<Vec<_>>>()?;
    let train_set: BTreeSet<usize> = train.iter().copied().collect();
    let covariates = GroupCovariates::build(&records, &train_set);
    let train_rows: Vec<usize> = (0..n_train).collect();
    provenance.push(roles.ensure_train_only("group_confounds", train.iter().copied())?);
    let (features, _) = regress_out_group_confounds(&raw, &covariates.matrix, &train_rows)?;
    StageClock::add(&clock.features, started);

    let started = Instant::now();
    let labels: Vec<f64> = records.iter().map(|r| r.diagnosis.sign()).collect();
    let strata: Vec<usize> = records[..n_train].iter().map(|r| stratum(r)).collect();
    let x_train = features.rows(0, n_train).into_owned();
    let selection = nested_select(
        &x_train,
        &labels[..n_train],
        &strata,
        cfg.classifier,
        &eval.hyperparameter_grid,
        eval.inner_folds,
        derive_seed(cfg.master_seed, &[tag::INNER_FOLDS, fold_id as u64]),
    )?;
    provenance.push(roles.ensure_train_only("classifier", train.iter().copied())?);
    let refs: Vec<&Provenance> = provenance.iter().collect();
    audit(&roles, &refs)?;
    let x_test = features.rows(n_train, test.len()).into_owned();
    let predictions = selection.model.predict(&x_test)?;
    let score = score(&predictions, &labels[n_train..])?;
    StageClock::add(&clock.classify, started);

    Ok(FoldOutcome {
        fold_id,
        train: train.to_vec(),
        test: test.to_vec(),
        predictions,
        score,
        atlas: selected,
        model: selection.model,
        inner_scores: selection.inner_scores,
        features,
        provenance,
    })
}
