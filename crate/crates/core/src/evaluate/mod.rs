//! Cross-validation plans, scores, and the statistics run on score tables.

mod stats;
mod summary;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::synthdata::{Diagnosis, Handedness, Sex, SubjectRecord};

pub use stats::{
    anova_effects, holm, ks_uniform, spearman, wilcoxon_pairwise, EffectEstimate, Wilcoxon,
};
pub use summary::{
    curve_summary, pipeline_means, top_decile, CurvePoint, CurveRecord, DecileSummary,
    PipelineSummary, ScoreRecord, FACTORS,
};

pub const N_FOLDS: usize = 10;
pub const MIN_INTER_SITE_SITES: usize = 10;
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    InterSite,
    IntraSite,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::InterSite => "inter_site",
            Scheme::IntraSite => "intra_site",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub fold_id: usize,
    /// Subject ids, sorted.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub scheme: Scheme,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Sites ordered by decreasing subject count, ties to the lower site id.
pub fn sites_by_size(records: &[&SubjectRecord]) -> Vec<(usize, usize)> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.site_id).or_default() += 1;
    }
    let mut v: Vec<(usize, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

/// Builds the ten folds of `scheme`.
///
/// Inter-site folds each hold out one of the ten largest sites; training
/// uses every other subject. Intra-site folds are stratified shuffle splits
/// holding out a fifth of every (site, diagnosis) cell.
pub fn make_folds(records: &[&SubjectRecord], scheme: Scheme, seed: u64) -> Result<FoldPlan> {
    let ids: BTreeSet<usize> = records.iter().map(|r| r.subject_id).collect();
    if ids.len() != records.len() {
        return Err(Error::invalid("subject ids are not unique"));
    }
    let folds = match scheme {
        Scheme::InterSite => {
            let sites = sites_by_size(records);
            if sites.len() < MIN_INTER_SITE_SITES {
                return Err(Error::TooFewSites { found: sites.len() });
            }
            let mut held: Vec<usize> = sites[..N_FOLDS].iter().map(|s| s.0).collect();
            held.sort_unstable();
            held.iter()
                .enumerate()
                .map(|(f, &site)| {
                    let (test, train): (Vec<&SubjectRecord>, Vec<&SubjectRecord>) =
                        records.iter().partition(|r| r.site_id == site);
                    Fold {
                        fold_id: f,
                        train: sorted_ids(&train),
                        test: sorted_ids(&test),
                    }
                })
                .collect()
        }
        Scheme::IntraSite => {
            let mut cells: BTreeMap<(usize, Diagnosis), Vec<usize>> = BTreeMap::new();
            for r in records {
                cells
                    .entry((r.site_id, r.diagnosis))
                    .or_default()
                    .push(r.subject_id);
            }
            if let Some(((site, d), m)) = cells.iter().find(|(_, m)| m.len() < 2) {
                return Err(Error::invalid(format!(
                    "intra-site splits need at least 2 subjects per (site, diagnosis) cell; \
                     site {site} {d:?} has {}",
                    m.len()
                )));
            }
            (0..N_FOLDS)
                .map(|f| {
                    let mut g = rng::stream(seed, &[tag::FOLDS, f as u64]);
                    let mut test = Vec::new();
                    for members in cells.values() {
                        let mut m = members.clone();
                        m.sort_unstable();
                        m.shuffle(&mut g);
                        let k = ((TEST_FRACTION * m.len() as f64).round() as usize)
                            .clamp(1, m.len() - 1);
                        test.extend_from_slice(&m[..k]);
                    }
                    test.sort_unstable();
                    let test_set: BTreeSet<usize> = test.iter().copied().collect();
                    let train = ids
                        .iter()
                        .copied()
                        .filter(|i| !test_set.contains(i))
                        .collect();
                    Fold {
                        fold_id: f,
                        train,
                        test,
                    }
                })
                .collect()
        }
    };
    Ok(FoldPlan {
        scheme,
        seed,
        folds,
    })
}

fn sorted_ids(rs: &[&SubjectRecord]) -> Vec<usize> {
    let mut v: Vec<usize> = rs.iter().map(|r| r.subject_id).collect();
    v.sort_unstable();
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub accuracy: f64,
    /// Correct controls over controls; `None` without controls.
    pub specificity: Option<f64>,
    /// Correct cases over cases; `None` without cases.
    pub sensitivity: Option<f64>,
    pub n_cases: usize,
    pub n_controls: usize,
}

/// Accuracy, specificity and sensitivity of ±1 predictions.
pub fn score(predictions: &[f64], truth: &[f64]) -> Result<Score> {
    if predictions.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("cannot score zero predictions"));
    }
    if truth
        .iter()
        .chain(predictions)
        .any(|v| *v != 1.0 && *v != -1.0)
    {
        return Err(Error::invalid("labels must be ±1"));
    }
    let mut hits = [0usize; 2];
    let mut counts = [0usize; 2];
    for (p, t) in predictions.iter().zip(truth) {
        let c = (*t > 0.0) as usize;
        counts[c] += 1;
        hits[c] += (p == t) as usize;
    }
    let frac = |c: usize| (counts[c] > 0).then(|| hits[c] as f64 / counts[c] as f64);
    Ok(Score {
        accuracy: (hits[0] + hits[1]) as f64 / truth.len() as f64,
        specificity: frac(0),
        sensitivity: frac(1),
        n_cases: counts[1],
        n_controls: counts[0],
    })
}

/// Chance level: the larger of the majority-class accuracy and the mean
/// accuracy of `n_draws` random predictors drawing labels with the observed
/// class frequencies.
pub fn dummy_chance(labels: &[f64], seed: u64, n_draws: usize) -> Result<f64> {
    let n = labels.len();
    let cases = labels.iter().filter(|v| **v > 0.0).count();
    if cases == 0 || cases == n {
        return Err(Error::SingleClass("chance level needs both classes".into()));
    }
    let p = cases as f64 / n as f64;
    let majority = p.max(1.0 - p);
    if n_draws == 0 {
        return Ok(majority);
    }
    let mut g = rng::stream(seed, &[tag::CHANCE]);
    let mut total = 0.0;
    for _ in 0..n_draws {
        let hits = labels
            .iter()
            .filter(|&&t| g.random_bool(p) == (t > 0.0))
            .count();
        total += hits as f64 / n as f64;
    }
    Ok(majority.max(total / n_draws as f64))
}

/// Subject selections mirroring the study's five subsamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Subsample {
    /// Everyone.
    All = 1,
    /// Sites with at least 30 subjects.
    LargestSites = 2,
    RightHandedMales = 3,
    /// Right-handed males aged 9 to 18.
    YoungRightHandedMales = 4,
    /// Subsample 4 restricted to its three largest sites.
    ThreeSites = 5,
}

impl TryFrom<u8> for Subsample {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Ok(match v {
            1 => Subsample::All,
            2 => Subsample::LargestSites,
            3 => Subsample::RightHandedMales,
            4 => Subsample::YoungRightHandedMales,
            5 => Subsample::ThreeSites,
            _ => return Err(format!("subsample {v} is not one of 1-5")),
        })
    }
}

impl From<Subsample> for u8 {
    fn from(s: Subsample) -> u8 {
        s as u8
    }
}

pub const MIN_SITE_SIZE: usize = 30;

impl Subsample {
    /// Records passing the subsample's inclusion criteria, in input order.
    pub fn select<'a>(&self, records: &[&'a SubjectRecord]) -> Vec<&'a SubjectRecord> {
        let rhm = |r: &SubjectRecord| r.sex == Sex::Male && r.handedness == Handedness::Right;
        let young = |r: &SubjectRecord| (9.0..=18.0).contains(&r.age);
        match self {
            Subsample::All => records.to_vec(),
            Subsample::LargestSites => {
                let big: BTreeSet<usize> = sites_by_size(records)
                    .into_iter()
                    .filter(|s| s.1 >= MIN_SITE_SIZE)
                    .map(|s| s.0)
                    .collect();
                records
                    .iter()
                    .filter(|r| big.contains(&r.site_id))
                    .copied()
                    .collect()
            }
            Subsample::RightHandedMales => records.iter().filter(|r| rhm(r)).copied().collect(),
            Subsample::YoungRightHandedMales => records
                .iter()
                .filter(|r| rhm(r) && young(r))
                .copied()
                .collect(),
            Subsample::ThreeSites => {
                let base = Subsample::YoungRightHandedMales.select(records);
                let top: BTreeSet<usize> = sites_by_size(&base)
                    .into_iter()
                    .take(3)
                    .map(|s| s.0)
                    .collect();
                base.into_iter()
                    .filter(|r| top.contains(&r.site_id))
                    .collect()
            }
        }
    }
}

/// Nested training subsets for a learning curve.
///
/// Each (site, diagnosis) stratum of `train` is shuffled once; the subset
/// for fraction `f` takes the first `round(f · size)` members of every
/// stratum, so smaller fractions are contained in larger ones. Fraction 1
/// returns the whole pool. Subsets are sorted by subject id.
pub fn nested_subsets(
    train: &[&SubjectRecord],
    fractions: &[f64],
    seed: u64,
    fold_id: usize,
) -> Result<Vec<Vec<usize>>> {
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::invalid(format!("fraction {f} is outside (0, 1]")));
    }
    let mut strata: BTreeMap<(usize, Diagnosis), Vec<usize>> = BTreeMap::new();
    for r in train {
        strata
            .entry((r.site_id, r.diagnosis))
            .or_default()
            .push(r.subject_id);
    }
    let mut g = rng::stream(seed, &[tag::CURVE, fold_id as u64]);
    for m in strata.values_mut() {
        m.sort_unstable();
        m.shuffle(&mut g);
    }
    let diag: BTreeMap<usize, Diagnosis> =
        train.iter().map(|r| (r.subject_id, r.diagnosis)).collect();
    fractions
        .iter()
        .map(|&f| {
            let mut ids: Vec<usize> = strata
                .values()
                .flat_map(|m| {
                    let k = ((f * m.len() as f64).round() as usize).min(m.len());
                    m[..k].iter().copied()
                })
                .collect();
            ids.sort_unstable();
            let cases = ids.iter().filter(|i| diag[i] == Diagnosis::Case).count();
            if cases == 0 || cases == ids.len() {
                return Err(Error::SingleClass(format!(
                    "training fraction {f} leaves {} subjects of one class",
                    ids.len()
                )));
            }
            Ok(ids)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn rec(id: usize, site: usize, case: bool) -> SubjectRecord {
        SubjectRecord {
            subject_id: id,
            site_id: site,
            diagnosis: if case {
                Diagnosis::Case
            } else {
                Diagnosis::Control
            },
            age: 10.0 + (id % 12) as f64,
            sex: if id % 5 == 0 { Sex::Female } else { Sex::Male },
            handedness: if id % 7 == 0 {
                Handedness::Left
            } else {
                Handedness::Right
            },
            motion_params: Matrix::zeros(1, 6),
        }
    }

    fn cohort(sites: usize, per_site: usize) -> Vec<SubjectRecord> {
        (0..sites * per_site)
            .map(|i| rec(i, i / per_site, i % 2 == 0))
            .collect()
    }

    #[test]
    fn inter_site_needs_ten_sites() {
        let c = cohort(3, 10);
        let refs: Vec<&SubjectRecord> = c.iter().collect();
        let err = make_folds(&refs, Scheme::InterSite, 0).unwrap_err();
        assert!(matches!(err, Error::TooFewSites { found: 3 }));
        assert!(err.to_string().contains("at least 10 acquisition sites"));
    }

    #[test]
    fn inter_site_holds_out_largest_whole_sites() {
        let mut c = cohort(12, 5);
        // Site 11 grows so that it outranks the others; site 10 stays smallest.
        c.extend((60..63).map(|i| rec(i, 11, true)));
        c.retain(|r| !(r.site_id == 10 && r.subject_id % 5 == 4));
        let refs: Vec<&SubjectRecord> = c.iter().collect();
        let plan = make_folds(&refs, Scheme::InterSite, 0).unwrap();
        assert_eq!(plan.folds.len(), 10);
        let mut held = BTreeSet::new();
        for f in &plan.folds {
            let sites: BTreeSet<usize> = f
                .test
                .iter()
                .map(|&id| c.iter().find(|r| r.subject_id == id).unwrap().site_id)
                .collect();
            assert_eq!(sites.len(), 1);
            assert!(held.insert(*sites.iter().next().unwrap()));
            assert_eq!(f.train.len() + f.test.len(), c.len());
        }
        assert!(!held.contains(&10));
        assert!(held.contains(&11));
    }

    #[test]
    fn intra_site_preserves_cells() {
        let c = cohort(2, 50);
        let refs: Vec<&SubjectRecord> = c.iter().collect();
        let plan = make_folds(&refs, Scheme::IntraSite, 3).unwrap();
        assert_eq!(plan.folds.len(), 10);
        for f in &plan.folds {
            assert_eq!(f.test.len(), 20);
            for site in 0..2 {
                for case in [true, false] {
                    let n = f
                        .test
                        .iter()
                        .filter(|&&i| {
                            c[i].site_id == site && (c[i].diagnosis == Diagnosis::Case) == case
                        })
                        .count();
                    assert_eq!(n, 5);
                }
            }
            let t: BTreeSet<_> = f.train.iter().collect();
            assert!(f.test.iter().all(|i| !t.contains(i)));
        }
        assert_ne!(plan.folds[0].test, plan.folds[1].test);
    }

    #[test]
    fn score_arithmetic() {
        let s = score(&[1.0, -1.0, -1.0, -1.0], &[1.0, 1.0, -1.0, -1.0]).unwrap();
        assert_eq!(s.accuracy, 0.75);
        assert_eq!(s.specificity, Some(1.0));
        assert_eq!(s.sensitivity, Some(0.5));
        let truth: Vec<f64> = (0..871).map(|i| if i < 403 { 1.0 } else { -1.0 }).collect();
        let s = score(&vec![-1.0; 871], &truth).unwrap();
        assert!((s.accuracy - 468.0 / 871.0).abs() < 1e-15);
        let s = score(&[1.0], &[1.0]).unwrap();
        assert_eq!(
            (s.accuracy, s.specificity, s.sensitivity),
            (1.0, None, Some(1.0))
        );
        assert!(score(&[], &[]).is_err());
    }

    #[test]
    fn chance_levels() {
        let labels: Vec<f64> = (0..871).map(|i| if i < 403 { 1.0 } else { -1.0 }).collect();
        assert!((dummy_chance(&labels, 0, 1000).unwrap() - 0.5373).abs() < 1e-4);
        let even: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let c = dummy_chance(&even, 0, 1000).unwrap();
        assert!((0.5..0.52).contains(&c));
        let skewed: Vec<f64> = (0..100).map(|i| if i < 90 { 1.0 } else { -1.0 }).collect();
        assert!(dummy_chance(&skewed, 0, 1000).unwrap() >= 0.9);
        assert!(dummy_chance(&[1.0, 1.0], 0, 10).is_err());
    }

    #[test]
    fn subsample_filters() {
        let mut c = cohort(5, 40);
        c.extend((200..220).map(|i| rec(i, 7, i % 2 == 0)));
        let refs: Vec<&SubjectRecord> = c.iter().collect();
        assert_eq!(Subsample::All.select(&refs).len(), 220);
        assert!(Subsample::LargestSites
            .select(&refs)
            .iter()
            .all(|r| r.site_id != 7));
        let rhm = Subsample::RightHandedMales.select(&refs);
        assert!(rhm
            .iter()
            .all(|r| r.sex == Sex::Male && r.handedness == Handedness::Right));
        let young = Subsample::YoungRightHandedMales.select(&refs);
        assert!(young.iter().all(|r| (9.0..=18.0).contains(&r.age)));
        let three = Subsample::ThreeSites.select(&refs);
        let sites: BTreeSet<usize> = three.iter().map(|r| r.site_id).collect();
        assert_eq!(sites.len(), 3);
        assert!(Subsample::try_from(6).is_err());
    }

    #[test]
    fn curve_subsets_are_nested() {
        let c = cohort(4, 20);
        let refs: Vec<&SubjectRecord> = c.iter().collect();
        let subsets = nested_subsets(&refs, &[0.25, 0.5, 0.75, 1.0], 1, 0).unwrap();
        for w in subsets.windows(2) {
            let big: BTreeSet<_> = w[1].iter().collect();
            assert!(w[0].iter().all(|i| big.contains(i)));
        }
        assert_eq!(subsets[3].len(), 80);
        assert!(nested_subsets(&refs, &[0.0], 1, 0).is_err());
        assert!(nested_subsets(&refs, &[1.5], 1, 0).is_err());
    }
}
