use std::collections::BTreeSet;

use connectome_core::evaluate::{make_folds, nested_subsets, Scheme};
use connectome_core::par::{with_execution, Execution};
use connectome_core::pipeline::{
    run_fold, run_pipelines, EvaluationConfig, PipelineConfig, Prepared, StageClock,
};
use connectome_core::provenance::{audit, FoldRoles};
use connectome_core::synthdata::{generate_cohort, Cohort, CohortConfig, SiteSizes, SubjectRecord};
use tempfile::TempDir;

fn cohort() -> Cohort {
    let cfg = CohortConfig {
        n_sites: 11,
        subjects_per_site: SiteSizes::Uniform(12),
        k_regions: 10,
        effect_size: 0.2,
        ..CohortConfig::default()
    };
    generate_cohort(&cfg, 3).unwrap()
}

fn eval() -> EvaluationConfig {
    EvaluationConfig {
        max_profile_components: 30,
        kmeans_restarts: 2,
        chance_draws: 200,
        learning_curve_fractions: vec![0.5, 1.0],
        ..EvaluationConfig::default()
    }
}

#[test]
fn run_matches_across_execution_modes_and_curves_end_at_the_cv_score() {
    let cohort = cohort();
    let cfg = PipelineConfig {
        n_regions: 10,
        ..PipelineConfig::default()
    };
    let seq_dir = TempDir::new().unwrap();
    let par_dir = TempDir::new().unwrap();
    let seq = with_execution(Execution::Sequential, || {
        run_pipelines(&cohort, "h", &[cfg.clone()], &eval(), seq_dir.path()).unwrap()
    });
    let par = with_execution(Execution::Parallel, || {
        run_pipelines(&cohort, "h", &[cfg.clone()], &eval(), par_dir.path()).unwrap()
    });
    assert_eq!(seq.scores, par.scores);
    assert_eq!(seq.curves, par.curves);
    assert_eq!(seq.scores.len(), 10);
    assert_eq!(seq.curves.len(), 20);

    for s in &seq.scores {
        let points: Vec<_> = seq.curves.iter().filter(|c| c.fold == s.fold).collect();
        assert_eq!(points.len(), 2);
        assert_eq!(points[1].fraction, 1.0);
        assert_eq!(points[1].accuracy, s.accuracy);
        assert_eq!(points[1].n_train, s.n_train);
        assert!(points[0].n_train < points[1].n_train);
    }
}

#[test]
fn curve_subsets_nest_inside_the_training_fold() {
    let cohort = cohort();
    let records: Vec<&SubjectRecord> = cohort.subjects.iter().collect();
    let plan = make_folds(&records, Scheme::InterSite, 0).unwrap();
    for fold in &plan.folds {
        let train: Vec<&SubjectRecord> = records
            .iter()
            .copied()
            .filter(|r| fold.train.binary_search(&r.subject_id).is_ok())
            .collect();
        let subsets = nested_subsets(&train, &[0.25, 0.5, 1.0], 0, fold.fold_id).unwrap();
        assert_eq!(subsets[2], fold.train);
        let small: BTreeSet<usize> = subsets[0].iter().copied().collect();
        let mid: BTreeSet<usize> = subsets[1].iter().copied().collect();
        assert!(small.is_subset(&mid));
        assert!(mid.iter().all(|id| fold.train.binary_search(id).is_ok()));
    }
}

#[test]
fn fold_artifacts_are_fitted_on_training_subjects_only() {
    let cohort = cohort();
    let prep = Prepared::new(&cohort, &[6.0]).unwrap();
    let records: Vec<&SubjectRecord> = cohort.subjects.iter().collect();
    let cfg = PipelineConfig {
        n_regions: 10,
        scheme: Scheme::IntraSite,
        ..PipelineConfig::default()
    };
    let plan = make_folds(&records, Scheme::IntraSite, 0).unwrap();
    let clock = StageClock::default();
    for fold in plan.folds.iter().take(2) {
        let out = run_fold(
            &prep,
            &cfg,
            &eval(),
            fold.fold_id,
            &fold.train,
            &fold.test,
            &clock,
        )
        .unwrap();
        assert!(!out.provenance.is_empty());
        let roles = FoldRoles::new(
            fold.fold_id,
            fold.train.iter().copied(),
            fold.test.iter().copied(),
        )
        .unwrap();
        let refs: Vec<_> = out.provenance.iter().collect();
        audit(&roles, &refs).unwrap();
        assert_eq!(out.predictions.len(), fold.test.len());
        let again = run_fold(
            &prep,
            &cfg,
            &eval(),
            fold.fold_id,
            &fold.train,
            &fold.test,
            &clock,
        )
        .unwrap();
        assert_eq!(out.predictions, again.predictions);
    }
}
