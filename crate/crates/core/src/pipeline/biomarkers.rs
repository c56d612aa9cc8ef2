//! Consensus-atlas connectome biomarkers with permutation significance.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{atlas_path, read_atlas, write_atlas, RunManifest, MANIFEST_FILE};
use super::{stratum, EvaluationConfig, PipelineConfig, Prepared};
use crate::classify::{nested_select, permutation_weight_pvalues};
use crate::connectivity::{
    fit_tangent_reference, parameterize, regress_out_group_confounds, ConnectivityKind,
    GroupCovariates,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::parcellation::{consensus_atlas, Parcellation};
use crate::rng::{derive_seed, tag};
use crate::synthdata::{Cohort, SubjectRecord};
use crate::tables;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerEdge {
    /// Consensus region ids; equal for a diagonal (variance) term.
    pub region_i: usize,
    pub region_j: usize,
    pub weight: f64,
    pub p_value: f64,
    /// `case` when a larger value pushes towards the case label.
    pub direction: String,
    /// 1-based rank by p-value, then by weight magnitude.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerReport {
    pub config_hash: String,
    pub n_fold_atlases: usize,
    pub consensus_regions: usize,
    pub consensus_empty: bool,
    pub n_subjects: usize,
    pub n_permutations: usize,
    pub hyperparameter: f64,
    /// Smallest attainable p-value, `1 / (n_permutations + 1)`.
    pub min_p_value: f64,
    pub edges: Vec<BiomarkerEdge>,
    /// Ground-truth region matched to each consensus region (largest overlap).
    pub region_matches: Vec<usize>,
    /// Planted edges with a matching feature in the top tenth by rank.
    pub planted_recall: Option<f64>,
}

/// Atlases of every fold of a finished run of `cfg`.
pub fn load_fold_atlases(
    run_dir: &Path,
    cfg: &PipelineConfig,
    cohort: &Cohort,
) -> Result<Vec<Parcellation>> {
    let manifest: RunManifest = tables::read_json(&run_dir.join(MANIFEST_FILE))?;
    let hash = cfg.hash();
    let entry = manifest
        .pipelines
        .iter()
        .find(|p| p.config_hash == hash)
        .ok_or_else(|| {
            Error::invalid(format!(
                "run in {} has no pipeline {hash}; run it before extracting biomarkers",
                run_dir.display()
            ))
        })?;
    entry
        .folds
        .iter()
        .map(|f| {
            read_atlas(
                &run_dir.join(atlas_path(&hash, f.fold_id)),
                cohort.lattice_dims,
            )
        })
        .collect()
}

/// Fits the pipeline on every subject of the subsample using the consensus
/// of the fold atlases and tests each connectivity weight by permutation.
pub fn run_biomarkers(
    cohort: &Cohort,
    cfg: &PipelineConfig,
    eval: &EvaluationConfig,
    fold_atlases: &[Parcellation],
    dice_threshold: f64,
    n_permutations: usize,
) -> Result<(BiomarkerReport, Parcellation)> {
    let consensus = consensus_atlas(fold_atlases, dice_threshold)?;
    let mut report = BiomarkerReport {
        config_hash: cfg.hash(),
        n_fold_atlases: fold_atlases.len(),
        consensus_regions: consensus.regions.len(),
        consensus_empty: consensus.is_empty(),
        n_subjects: 0,
        n_permutations,
        hyperparameter: f64::NAN,
        min_p_value: 1.0 / (n_permutations + 1) as f64,
        edges: Vec::new(),
        region_matches: Vec::new(),
        planted_recall: None,
    };
    if consensus.regions.len() < 2 {
        report.consensus_empty = true;
        return Ok((report, consensus.parcellation));
    }
    let atlas = consensus.parcellation;
    let maps = atlas.to_maps()?;

    let all: Vec<&SubjectRecord> = cohort.subjects.iter().collect();
    let records = cfg.subsample.select(&all);
    let ids: Vec<usize> = records.iter().map(|r| r.subject_id).collect();
    report.n_subjects = ids.len();
    let prep = Prepared::new(cohort, &[])?;
    let covs = prep.covariances(&ids, &maps)?;
    let reference = if cfg.matrix_kind == ConnectivityKind::Tangent {
        let sigmas: Vec<&Matrix> = covs.iter().map(|c| &c.sigma).collect();
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
    let everyone: BTreeSet<usize> = ids.iter().copied().collect();
    let covariates = GroupCovariates::build(&records, &everyone);
    let all_rows: Vec<usize> = (0..ids.len()).collect();
    let (x, _) = regress_out_group_confounds(&raw, &covariates.matrix, &all_rows)?;
    let y: Vec<f64> = records.iter().map(|r| r.diagnosis.sign()).collect();
    let strata: Vec<usize> = records.iter().map(|r| stratum(r)).collect();
    let selection = nested_select(
        &x,
        &y,
        &strata,
        cfg.classifier,
        &eval.hyperparameter_grid,
        eval.inner_folds,
        derive_seed(cfg.master_seed, &[tag::INNER_FOLDS, u64::MAX]),
    )?;
    report.hyperparameter = selection.hyperparameter;
    let sig = permutation_weight_pvalues(
        &x,
        &y,
        cfg.classifier,
        selection.hyperparameter,
        n_permutations,
        derive_seed(cfg.master_seed, &[tag::PERMUTATION]),
    )?;

    let k = maps.n_regions();
    let pairs = cfg.matrix_kind.feature_pairs(k);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        sig.p_values[a]
            .total_cmp(&sig.p_values[b])
            .then(
                sig.observed_weights[b]
                    .abs()
                    .total_cmp(&sig.observed_weights[a].abs()),
            )
            .then(a.cmp(&b))
    });
    let mut rank = vec![0; d];
    for (r, &f) in order.iter().enumerate() {
        rank[f] = r + 1;
    }
    report.edges = order
        .iter()
        .map(|&f| {
            let (i, j) = pairs[f];
            let w = sig.observed_weights[f];
            BiomarkerEdge {
                region_i: i,
                region_j: j,
                weight: w,
                p_value: sig.p_values[f],
                direction: if w > 0.0 { "case" } else { "control" }.into(),
                rank: rank[f],
            }
        })
        .collect();

    let truth = &cohort.ground_truth.atlas;
    report.region_matches = match_regions(&atlas, truth);
    let planted = &cohort.ground_truth.discriminative_edges;
    if !planted.is_empty() {
        let cutoff = (d as f64 / 10.0).ceil() as usize;
        let top: BTreeSet<(usize, usize)> = report
            .edges
            .iter()
            .filter(|e| e.rank <= cutoff && e.region_i != e.region_j)
            .map(|e| {
                let (a, b) = (
                    report.region_matches[e.region_i],
                    report.region_matches[e.region_j],
                );
                (a.max(b), a.min(b))
            })
            .collect();
        let hits = planted.iter().filter(|e| top.contains(&(e.i, e.j))).count();
        report.planted_recall = Some(hits as f64 / planted.len() as f64);
    }
    Ok((report, atlas))
}

/// For each region of `atlas`, the region of `truth` it overlaps most
/// (ties to the lower id).
pub fn match_regions(atlas: &Parcellation, truth: &Parcellation) -> Vec<usize> {
    let mut overlap: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); atlas.n_regions()];
    for (a, t) in atlas.labels().iter().zip(truth.labels()) {
        if let (Some(a), Some(t)) = (a, t) {
            *overlap[*a].entry(*t).or_default() += 1;
        }
    }
    overlap
        .iter()
        .map(|m| {
            m.iter()
                .fold(
                    (usize::MAX, 0usize),
                    |best, (&t, &c)| if c > best.1 { (t, c) } else { best },
                )
                .0
        })
        .collect()
}

/// Writes `biomarkers.json`, `edges.csv` and `consensus_atlas.csv` to `dir`.
pub fn write_biomarkers(dir: &Path, report: &BiomarkerReport, atlas: &Parcellation) -> Result<()> {
    tables::create_dir(dir)?;
    tables::write_json(&dir.join("biomarkers.json"), report)?;
    let path = dir.join("edges.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    for e in &report.edges {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_atlas(&dir.join("consensus_atlas.csv"), atlas)
}
