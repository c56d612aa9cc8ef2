//! Synthetic multi-site cohorts on a voxel lattice with planted ground truth.
//!
//! Every subject draws region latents from a Gaussian whose covariance is the
//! cohort's base covariance, nudged by the site's connectivity signature and,
//! for cases, by a signed effect on a handful of planted edges. Latents are
//! painted onto the voxels of a Voronoi phantom atlas and corrupted by site
//! gain/offset/noise, linear drift, a rank-1 motion nuisance and a
//! physiological signal concentrated on a few "vessel" voxels.

mod io;

use std::collections::VecDeque;

use nalgebra::Cholesky;
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeDims;
use crate::linalg::{self, Matrix};
use crate::parcellation::Parcellation;
use crate::rng::{self, tag, Rng};
use crate::{par, signal};

pub use io::{read_cohort, write_cohort, CohortMeta};

/// Diagnostic label. Cases encode as +1, controls as −1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnosis {
    Control,
    Case,
}

impl Diagnosis {
    pub fn sign(self) -> f64 {
        match self {
            Diagnosis::Case => 1.0,
            Diagnosis::Control => -1.0,
        }
    }

    pub fn from_sign(s: f64) -> Self {
        if s > 0.0 {
            Diagnosis::Case
        } else {
            Diagnosis::Control
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Handedness {
    #[serde(rename = "R")]
    Right,
    #[serde(rename = "L")]
    Left,
}

/// One phenotype row plus the subject's motion parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: usize,
    pub site_id: usize,
    pub diagnosis: Diagnosis,
    pub age: f64,
    pub sex: Sex,
    pub handedness: Handedness,
    /// n × 6: three translations (mm) then three rotations (rad).
    pub motion_params: Matrix,
}

/// Subjects per site: one count for all sites or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SiteSizes {
    Uniform(usize),
    PerSite(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_sites: usize,
    pub subjects_per_site: SiteSizes,
    pub case_fraction: f64,
    pub n_timepoints: usize,
    pub k_regions: usize,
    pub lattice_dims: LatticeDims,
    pub voxel_size_mm: f64,
    /// Signed covariance shift applied to discriminative edges in cases.
    pub effect_size: f64,
    pub n_discriminative_edges: usize,
    pub site_gain: [f64; 2],
    pub site_offset: [f64; 2],
    pub site_noise_sd: [f64; 2],
    /// Weight in [0, 1) pulling each site's covariance towards its own
    /// random correlation matrix.
    pub site_connectivity_mix: f64,
    pub drift_sd: f64,
    pub motion_amplitude: f64,
    /// Inject the rank-1 motion nuisance into voxel data.
    pub motion_coupling: bool,
    pub motion_nuisance_amplitude: f64,
    /// Multiplies case motion amplitude; 1 keeps motion independent of diagnosis.
    pub motion_case_scale: f64,
    pub physio_amplitude: f64,
    pub age_range: [f64; 2],
    pub male_fraction: f64,
    pub right_handed_fraction: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_sites: 12,
            subjects_per_site: SiteSizes::Uniform(30),
            case_fraction: 0.5,
            n_timepoints: 100,
            k_regions: 20,
            lattice_dims: LatticeDims::new(6, 6, 6),
            voxel_size_mm: 4.0,
            effect_size: 0.1,
            n_discriminative_edges: 8,
            site_gain: [0.8, 1.25],
            site_offset: [-1.0, 1.0],
            site_noise_sd: [0.5, 1.0],
            site_connectivity_mix: 0.2,
            drift_sd: 0.5,
            motion_amplitude: 0.3,
            motion_coupling: true,
            motion_nuisance_amplitude: 0.5,
            motion_case_scale: 1.0,
            physio_amplitude: 2.0,
            age_range: [7.0, 40.0],
            male_fraction: 0.8,
            right_handed_fraction: 0.85,
        }
    }
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl CohortConfig {
    pub fn site_sizes(&self) -> Vec<usize> {
        match &self.subjects_per_site {
            SiteSizes::Uniform(m) => vec![*m; self.n_sites],
            SiteSizes::PerSite(v) => v.clone(),
        }
    }

    pub fn n_subjects(&self) -> usize {
        self.site_sizes().iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 {
            return Err(config_error("n_sites", "must be at least 1"));
        }
        let sizes = self.site_sizes();
        if sizes.len() != self.n_sites {
            return Err(config_error(
                "subjects_per_site",
                format!("{} sizes listed for {} sites", sizes.len(), self.n_sites),
            ));
        }
        if sizes.contains(&0) {
            return Err(config_error(
                "subjects_per_site",
                "every site needs a subject",
            ));
        }
        if !(self.case_fraction > 0.0 && self.case_fraction < 1.0) {
            return Err(config_error(
                "case_fraction",
                format!("{} is outside (0, 1)", self.case_fraction),
            ));
        }
        if self.n_timepoints < 16 {
            return Err(config_error("n_timepoints", "must be at least 16"));
        }
        self.lattice_dims
            .validate()
            .map_err(|e| config_error("lattice_dims", e.to_string()))?;
        let p = self.lattice_dims.n_voxels();
        if self.k_regions < 2 || self.k_regions > p {
            return Err(config_error(
                "k_regions",
                format!("{} must lie in [2, {p}]", self.k_regions),
            ));
        }
        let max_edges = self.k_regions * (self.k_regions - 1) / 2;
        if self.n_discriminative_edges > max_edges {
            return Err(config_error(
                "n_discriminative_edges",
                format!(
                    "{} exceeds the {max_edges} region pairs",
                    self.n_discriminative_edges
                ),
            ));
        }
        for (name, r) in [
            ("site_gain", self.site_gain),
            ("site_offset", self.site_offset),
            ("site_noise_sd", self.site_noise_sd),
            ("age_range", self.age_range),
        ] {
            if !(r[0] <= r[1]) || !r.iter().all(|v| v.is_finite()) {
                return Err(config_error(name, format!("range {r:?} is not ordered")));
            }
        }
        if !(0.0..1.0).contains(&self.site_connectivity_mix) {
            return Err(config_error(
                "site_connectivity_mix",
                "mixing weight must lie in [0, 1)",
            ));
        }
        if self.site_gain[0] <= 0.0 {
            return Err(config_error("site_gain", "gains must be positive"));
        }
        if self.site_noise_sd[0] < 0.0 {
            return Err(config_error("site_noise_sd", "noise must be non-negative"));
        }
        for (name, v) in [
            ("voxel_size_mm", self.voxel_size_mm),
            ("drift_sd", self.drift_sd),
            ("motion_amplitude", self.motion_amplitude),
            ("motion_nuisance_amplitude", self.motion_nuisance_amplitude),
            ("motion_case_scale", self.motion_case_scale),
            ("physio_amplitude", self.physio_amplitude),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_error(
                    name,
                    format!("{v} must be finite and non-negative"),
                ));
            }
        }
        if self.voxel_size_mm <= 0.0 {
            return Err(config_error("voxel_size_mm", "must be positive"));
        }
        for (name, v) in [
            ("male_fraction", self.male_fraction),
            ("right_handed_fraction", self.right_handed_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_error(name, format!("{v} is outside [0, 1]")));
            }
        }
        if !self.effect_size.is_finite() {
            return Err(config_error("effect_size", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminativeEdge {
    pub i: usize,
    pub j: usize,
    /// Covariance shift added in cases.
    pub effect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteProfile {
    pub gain: f64,
    pub offset: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub atlas: Parcellation,
    #[serde(with = "linalg::serde_rows")]
    pub base_covariance: Matrix,
    pub discriminative_edges: Vec<DiscriminativeEdge>,
    pub site_profiles: Vec<SiteProfile>,
    /// Per-site symmetric zero-diagonal perturbations of the base covariance.
    #[serde(with = "serde_matrix_list")]
    pub site_connectivity: Vec<Matrix>,
    /// Mixing of the six motion parameters into the nuisance time course.
    pub motion_weights: [f64; 6],
    /// Voxel loadings of the motion nuisance.
    pub motion_pattern: Vec<f64>,
    /// Voxels carrying the physiological signal.
    pub vessel_voxels: Vec<usize>,
}

impl GroundTruth {
    /// Covariance used to sample a subject of `site` with `diagnosis`.
    pub fn group_covariance(&self, site: usize, diagnosis: Diagnosis) -> Matrix {
        let mut s = &self.base_covariance + &self.site_connectivity[site];
        if diagnosis == Diagnosis::Case {
            for e in &self.discriminative_edges {
                s[(e.i, e.j)] += e.effect;
                s[(e.j, e.i)] += e.effect;
            }
        }
        s
    }
}

mod serde_matrix_list {
    use super::Matrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ms: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Vec<f64>>> = ms
            .iter()
            .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix>, D::Error> {
        let raw: Vec<Vec<Vec<f64>>> = Vec::deserialize(d)?;
        raw.into_iter()
            .map(|rows| {
                let nr = rows.len();
                let nc = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != nc) {
                    return Err(serde::de::Error::custom("ragged matrix rows"));
                }
                Ok(Matrix::from_row_iterator(
                    nr,
                    nc,
                    rows.into_iter().flatten(),
                ))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub subjects: Vec<SubjectRecord>,
    /// Per subject, n × p.
    pub voxel_data: Vec<Matrix>,
    /// Per subject, n × 1 ground-truth physiological regressor.
    pub noise_regressors: Vec<Matrix>,
    pub ground_truth: GroundTruth,
    pub lattice_dims: LatticeDims,
    pub master_seed: u64,
    pub config: CohortConfig,
}

impl Cohort {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.diagnosis.sign()).collect()
    }
}

/// Voronoi phantom: `k` distinct seed voxels grow by breadth-first search
/// over face neighbours; each voxel joins the seed that reaches it first.
pub fn generate_atlas_phantom(dims: LatticeDims, k: usize, seed: u64) -> Result<Parcellation> {
    dims.validate()?;
    let p = dims.n_voxels();
    if k < 2 && p > 1 {
        return Err(Error::invalid("phantom atlas needs at least 2 regions"));
    }
    if k > p {
        return Err(Error::invalid(format!(
            "{k} regions requested on a lattice of {p} voxels"
        )));
    }
    let mut g = rng::stream(seed, &[tag::ATLAS]);
    let mut seeds = sample(&mut g, p, k).into_vec();
    seeds.sort_unstable();
    let mut labels = vec![usize::MAX; p];
    let mut queue = VecDeque::new();
    for (r, &s) in seeds.iter().enumerate() {
        labels[s] = r;
        queue.push_back(s);
    }
    while let Some(v) = queue.pop_front() {
        for u in dims.neighbors(v) {
            if labels[u] == usize::MAX {
                labels[u] = labels[v];
                queue.push_back(u);
            }
        }
    }
    Parcellation::from_labels(labels, dims)
}

/// Unit-diagonal SPD matrix with moderate off-diagonal correlations.
fn base_covariance(k: usize, g: &mut Rng) -> Matrix {
    let rank = (k / 4).max(2);
    let s = (1.0 / rank as f64).sqrt();
    let l = Matrix::from_fn(k, rank, |_, _| s * rng::normal(g));
    let raw = &l * l.transpose() + Matrix::identity(k, k);
    let d: Vec<f64> = (0..k).map(|i| raw[(i, i)].sqrt()).collect();
    linalg::symmetrize(&Matrix::from_fn(k, k, |i, j| raw[(i, j)] / (d[i] * d[j])))
}

/// Disjoint region pairs while they last, then further distinct pairs.
fn discriminative_edges(k: usize, n: usize, delta: f64, g: &mut Rng) -> Vec<DiscriminativeEdge> {
    let mut order: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        let j = g.random_range(0..=i);
        order.swap(i, j);
    }
    let mut pairs: Vec<(usize, usize)> = order
        .chunks_exact(2)
        .map(|c| (c[0].max(c[1]), c[0].min(c[1])))
        .take(n)
        .collect();
    while pairs.len() < n {
        let a = g.random_range(0..k);
        let b = g.random_range(0..k);
        let pair = (a.max(b), a.min(b));
        if a != b && !pairs.contains(&pair) {
            pairs.push(pair);
        }
    }
    pairs
        .into_iter()
        .map(|(i, j)| {
            let sign = if g.random_bool(0.5) { 1.0 } else { -1.0 };
            DiscriminativeEdge {
                i,
                j,
                effect: sign * delta,
            }
        })
        .collect()
}

fn uniform(g: &mut Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        g.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn ground_truth(config: &CohortConfig, master_seed: u64) -> Result<GroundTruth> {
    let dims = config.lattice_dims;
    let p = dims.n_voxels();
    let k = config.k_regions;
    let atlas = generate_atlas_phantom(dims, k, master_seed)?;

    let mut g = rng::stream(master_seed, &[tag::COHORT, 0]);
    let base = base_covariance(k, &mut g);
    let edges = discriminative_edges(k, config.n_discriminative_edges, config.effect_size, &mut g);

    let mut g = rng::stream(master_seed, &[tag::COHORT, 1]);
    let site_profiles = (0..config.n_sites)
        .map(|_| SiteProfile {
            gain: uniform(&mut g, config.site_gain),
            offset: uniform(&mut g, config.site_offset),
            noise_sd: uniform(&mut g, config.site_noise_sd),
        })
        .collect();
    // A convex mix of correlation matrices stays positive definite.
    let site_connectivity = (0..config.n_sites)
        .map(|_| (base_covariance(k, &mut g) - &base) * config.site_connectivity_mix)
        .collect();

    let mut g = rng::stream(master_seed, &[tag::COHORT, 2]);
    let mut motion_weights = [0.0; 6];
    for w in &mut motion_weights {
        *w = rng::normal(&mut g);
    }
    let norm = motion_weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    motion_weights.iter_mut().for_each(|w| *w /= norm);
    // Loading grows towards the lattice boundary, like edge-of-brain motion artefacts.
    let motion_pattern = (0..p)
        .map(|v| {
            let (x, y, z) = dims.coords(v);
            let edge = |c: usize, n: usize| {
                if n < 2 {
                    0.0
                } else {
                    (2.0 * c as f64 / (n - 1) as f64 - 1.0).abs()
                }
            };
            edge(x, dims.nx).max(edge(y, dims.ny)).max(edge(z, dims.nz))
        })
        .collect();
    let n_vessels = ((0.02 * p as f64).ceil() as usize).max(5).min(p);
    let mut vessel_voxels = sample(&mut g, p, n_vessels).into_vec();
    vessel_voxels.sort_unstable();

    let truth = GroundTruth {
        atlas,
        base_covariance: base,
        discriminative_edges: edges,
        site_profiles,
        site_connectivity,
        motion_weights,
        motion_pattern,
        vessel_voxels,
    };
    for site in 0..config.n_sites {
        for d in [Diagnosis::Control, Diagnosis::Case] {
            let s = truth.group_covariance(site, d);
            linalg::check_spd(&s, &format!("{d:?} covariance at site {site}"))?;
        }
    }
    Ok(truth)
}

/// AR(1) series with unit marginal variance.
fn ar1(n: usize, phi: f64, g: &mut Rng) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut x = Vec::with_capacity(n);
    let mut prev = rng::normal(g);
    for _ in 0..n {
        x.push(prev);
        prev = phi * prev + innov * rng::normal(g);
    }
    x
}

struct SubjectPlan {
    subject_id: usize,
    site_id: usize,
    diagnosis: Diagnosis,
}

fn subject_plans(config: &CohortConfig, master_seed: u64) -> Vec<SubjectPlan> {
    let mut g = rng::stream(master_seed, &[tag::COHORT, 3]);
    let mut plans = Vec::with_capacity(config.n_subjects());
    for (site, &m) in config.site_sizes().iter().enumerate() {
        let n_cases = ((config.case_fraction * m as f64).round() as usize).min(m);
        let mut diag: Vec<Diagnosis> = (0..m)
            .map(|i| {
                if i < n_cases {
                    Diagnosis::Case
                } else {
                    Diagnosis::Control
                }
            })
            .collect();
        for i in (1..m).rev() {
            let j = g.random_range(0..=i);
            diag.swap(i, j);
        }
        for d in diag {
            plans.push(SubjectPlan {
                subject_id: plans.len(),
                site_id: site,
                diagnosis: d,
            });
        }
    }
    plans
}

struct Generated {
    record: SubjectRecord,
    voxels: Matrix,
    physio: Matrix,
}

fn generate_subject(
    config: &CohortConfig,
    truth: &GroundTruth,
    factors: &[[Matrix; 2]],
    plan: &SubjectPlan,
    master_seed: u64,
) -> Generated {
    let n = config.n_timepoints;
    let p = config.lattice_dims.n_voxels();
    let k = config.k_regions;
    let mut g = rng::stream(master_seed, &[tag::SUBJECT, plan.subject_id as u64]);

    let age = uniform(&mut g, config.age_range);
    let sex = if g.random_bool(config.male_fraction) {
        Sex::Male
    } else {
        Sex::Female
    };
    let handedness = if g.random_bool(config.right_handed_fraction) {
        Handedness::Right
    } else {
        Handedness::Left
    };

    let l = &factors[plan.site_id][(plan.diagnosis == Diagnosis::Case) as usize];
    let white = Matrix::from_fn(n, k, |_, _| rng::normal(&mut g));
    let latents = white * l.transpose();

    let scale = config.motion_amplitude
        * if plan.diagnosis == Diagnosis::Case {
            config.motion_case_scale
        } else {
            1.0
        };
    let mut motion = Matrix::zeros(n, 6);
    for c in 0..6 {
        // Rotations in radians are about fifty times smaller than translations in mm.
        let unit = if c < 3 { 1.0 } else { 0.02 };
        for (t, v) in ar1(n, 0.9, &mut g).into_iter().enumerate() {
            motion[(t, c)] = scale * unit * v;
        }
    }
    let nuisance: Vec<f64> = (0..n)
        .map(|t| {
            (0..6)
                .map(|c| truth.motion_weights[c] * motion[(t, c)] / if c < 3 { 1.0 } else { 0.02 })
                .sum()
        })
        .collect();
    let physio = ar1(n, 0.5, &mut g);

    let site = truth.site_profiles[plan.site_id];
    let slopes: Vec<f64> = (0..p)
        .map(|_| config.drift_sd * rng::normal(&mut g))
        .collect();
    let drift = signal::drift_terms(n);
    let mut is_vessel = vec![false; p];
    for &v in &truth.vessel_voxels {
        is_vessel[v] = true;
    }
    let labels = truth.atlas.labels();
    let mut y = Matrix::zeros(n, p);
    for v in 0..p {
        let r = labels[v].expect("phantom atlas covers the lattice");
        for t in 0..n {
            let mut val = site.gain * latents[(t, r)]
                + site.offset
                + site.noise_sd * rng::normal(&mut g)
                + slopes[v] * drift[(t, 1)];
            if config.motion_coupling {
                val += config.motion_nuisance_amplitude * nuisance[t] * truth.motion_pattern[v];
            }
            if is_vessel[v] {
                val += config.physio_amplitude * physio[t];
            }
            y[(t, v)] = val;
        }
    }

    Generated {
        record: SubjectRecord {
            subject_id: plan.subject_id,
            site_id: plan.site_id,
            diagnosis: plan.diagnosis,
            age,
            sex,
            handedness,
            motion_params: motion,
        },
        voxels: y,
        physio: Matrix::from_vec(n, 1, physio),
    }
}

/// Generates a full cohort. The result depends only on `(config, master_seed)`;
/// subjects draw from independent streams and are generated in parallel.
pub fn generate_cohort(config: &CohortConfig, master_seed: u64) -> Result<Cohort> {
    config.validate()?;
    let truth = ground_truth(config, master_seed)?;
    let mut factors = Vec::with_capacity(config.n_sites);
    for site in 0..config.n_sites {
        let chol = |d: Diagnosis| {
            Cholesky::new(truth.group_covariance(site, d))
                .map(|c| c.l())
                .ok_or_else(|| Error::NotSpd(format!("{d:?} covariance at site {site}")))
        };
        factors.push([chol(Diagnosis::Control)?, chol(Diagnosis::Case)?]);
    }
    let plans = subject_plans(config, master_seed);
    let generated = par::map(&plans, |plan| {
        generate_subject(config, &truth, &factors, plan, master_seed)
    });

    let mut subjects = Vec::with_capacity(generated.len());
    let mut voxel_data = Vec::with_capacity(generated.len());
    let mut noise_regressors = Vec::with_capacity(generated.len());
    for s in generated {
        subjects.push(s.record);
        voxel_data.push(s.voxels);
        noise_regressors.push(s.physio);
    }
    Ok(Cohort {
        subjects,
        voxel_data,
        noise_regressors,
        ground_truth: truth,
        lattice_dims: config.lattice_dims,
        master_seed,
        config: config.clone(),
    })
}
