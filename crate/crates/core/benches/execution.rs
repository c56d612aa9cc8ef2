//! Sequential against rayon execution of the per-subject and per-fold stages.

use connectome_core::evaluate::{make_folds, Scheme};
use connectome_core::par::{with_execution, Execution};
use connectome_core::pipeline::{run_fold, EvaluationConfig, PipelineConfig, Prepared, StageClock};
use connectome_core::synthdata::{generate_cohort, CohortConfig, SubjectRecord};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn small_cohort() -> CohortConfig {
    CohortConfig {
        n_sites: 10,
        subjects_per_site: connectome_core::synthdata::SiteSizes::Uniform(12),
        ..CohortConfig::default()
    }
}

fn stages(c: &mut Criterion) {
    let cohort = generate_cohort(&small_cohort(), 0).expect("cohort");
    let mut group = c.benchmark_group("execution");
    group.sample_size(10);

    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new("generate", name), |b| {
            b.iter(|| with_execution(mode, || generate_cohort(&small_cohort(), 0).unwrap()))
        });
        group.bench_function(BenchmarkId::new("prepare", name), |b| {
            b.iter(|| {
                with_execution(mode, || {
                    Prepared::new(&cohort, &[6.0]).unwrap().cohort.n_subjects()
                })
            })
        });
    }

    let prep = Prepared::new(&cohort, &[6.0]).expect("prepared");
    let records: Vec<&SubjectRecord> = cohort.subjects.iter().collect();
    let plan = make_folds(&records, Scheme::IntraSite, 0).expect("folds");
    let fold = &plan.folds[0];
    let cfg = PipelineConfig {
        n_regions: 20,
        ..PipelineConfig::default()
    };
    let eval = EvaluationConfig {
        kmeans_restarts: 3,
        ..EvaluationConfig::default()
    };
    let clock = StageClock::default();
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new("fold", name), |b| {
            b.iter(|| {
                with_execution(mode, || {
                    run_fold(&prep, &cfg, &eval, 0, &fold.train, &fold.test, &clock)
                        .unwrap()
                        .score
                        .accuracy
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
