//! Cohort directory layout: `phenotype.csv`, `ground_truth.json`, and per
//! subject `sub-<id>_voxels.csv`, `sub-<id>_motion.csv`, `sub-<id>_noise.csv`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cohort, CohortConfig, Diagnosis, GroundTruth, Handedness, Sex, SubjectRecord};
use crate::error::{Error, Result};
use crate::lattice::LatticeDims;
use crate::tables;

pub const PHENOTYPE_FILE: &str = "phenotype.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Contents of `ground_truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMeta {
    pub master_seed: u64,
    pub lattice_dims: LatticeDims,
    pub config: CohortConfig,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Serialize, Deserialize)]
struct PhenotypeRow {
    subject_id: usize,
    site_id: usize,
    diagnosis: i8,
    age: String,
    sex: Sex,
    handedness: Handedness,
}

pub fn subject_file(subject_id: usize, kind: &str) -> String {
    format!("sub-{subject_id:04}_{kind}.csv")
}

fn motion_header() -> Vec<String> {
    ["trans_x", "trans_y", "trans_z", "rot_x", "rot_y", "rot_z"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    tables::create_dir(dir)?;
    let path = dir.join(PHENOTYPE_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::invalid(e.to_string()))?;
    for s in &cohort.subjects {
        w.serialize(PhenotypeRow {
            subject_id: s.subject_id,
            site_id: s.site_id,
            diagnosis: s.diagnosis.sign() as i8,
            age: tables::format_float(s.age),
            sex: s.sex,
            handedness: s.handedness,
        })?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let meta = CohortMeta {
        master_seed: cohort.master_seed,
        lattice_dims: cohort.lattice_dims,
        config: cohort.config.clone(),
        ground_truth: cohort.ground_truth.clone(),
    };
    tables::write_json(&dir.join(GROUND_TRUTH_FILE), &meta)?;

    let p = cohort.lattice_dims.n_voxels();
    let voxel_header: Vec<String> = (0..p).map(|v| format!("v{v}")).collect();
    for (i, s) in cohort.subjects.iter().enumerate() {
        let id = s.subject_id;
        tables::write_matrix(
            &dir.join(subject_file(id, "voxels")),
            Some(&voxel_header),
            &cohort.voxel_data[i],
        )?;
        tables::write_matrix(
            &dir.join(subject_file(id, "motion")),
            Some(&motion_header()),
            &s.motion_params,
        )?;
        tables::write_matrix(
            &dir.join(subject_file(id, "noise")),
            Some(&["physio".to_string()]),
            &cohort.noise_regressors[i],
        )?;
    }
    Ok(())
}

pub fn read_cohort(dir: &Path) -> Result<Cohort> {
    let meta: CohortMeta = tables::read_json(&dir.join(GROUND_TRUTH_FILE))?;
    let path = dir.join(PHENOTYPE_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::invalid(e.to_string()))?;
    let mut subjects = Vec::new();
    let mut voxel_data = Vec::new();
    let mut noise_regressors = Vec::new();
    let p = meta.lattice_dims.n_voxels();
    for row in r.deserialize() {
        let row: PhenotypeRow = row?;
        let id = row.subject_id;
        let voxels = tables::read_matrix(&dir.join(subject_file(id, "voxels")), true)?;
        let motion = tables::read_matrix(&dir.join(subject_file(id, "motion")), true)?;
        let noise = tables::read_matrix(&dir.join(subject_file(id, "noise")), true)?;
        if voxels.ncols() != p || motion.ncols() != 6 || motion.nrows() != voxels.nrows() {
            return Err(Error::invalid(format!(
                "subject {id}: voxel or motion files do not match the lattice"
            )));
        }
        let diagnosis = match row.diagnosis {
            1 => Diagnosis::Case,
            -1 => Diagnosis::Control,
            d => return Err(Error::invalid(format!("subject {id}: diagnosis {d}"))),
        };
        subjects.push(SubjectRecord {
            subject_id: id,
            site_id: row.site_id,
            diagnosis,
            age: tables::parse_float(&row.age)?,
            sex: row.sex,
            handedness: row.handedness,
            motion_params: motion,
        });
        voxel_data.push(voxels);
        noise_regressors.push(noise);
    }
    Ok(Cohort {
        subjects,
        voxel_data,
        noise_regressors,
        ground_truth: meta.ground_truth,
        lattice_dims: meta.lattice_dims,
        master_seed: meta.master_seed,
        config: meta.config,
    })
}
