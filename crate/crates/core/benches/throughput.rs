//! Throughput benchmarks for the two feature-sensitive pipelines: dataset
//! synthesis and suite evaluation.
//!
//! Group names carry the active mode, so runs with and without the
//! `parallel` feature land side by side in the criterion report:
//!
//! ```text
//! cargo bench -p causaltest-core
//! cargo bench -p causaltest-core --no-default-features
//! ```

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use causaltest_core::estimation::TermSpec;
use causaltest_core::synth::{builtin_spec, generate, BuiltinName, RE1_PENALTIES};
use causaltest_core::testing::{
    run_suite, CausalTestCase, EstimatorConfig, OlsConfig, Oracle,
};

fn mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}

fn bench_generate(c: &mut Criterion) {
    let mut group = c.benchmark_group(format!("generate/{}", mode()));
    for n in [1_000usize, 10_000, 100_000] {
        let spec = builtin_spec(BuiltinName::Re3, n, 11);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &spec, |b, spec| {
            b.iter(|| black_box(generate(spec).unwrap()));
        });
    }
    group.finish();
}

fn bench_run_suite(c: &mut Criterion) {
    let spec = builtin_spec(BuiltinName::Re1, 20_000, 11);
    let d = generate(&spec).unwrap();

    // Independent stratified fits; parallelism is across cases.
    let cases: Vec<CausalTestCase> = (0..32)
        .map(|i| {
            let (level, penalty) = RE1_PENALTIES[i % RE1_PENALTIES.len()];
            CausalTestCase {
                id: format!("case-{i}"),
                treatment: "CompletionScore".to_string(),
                outcome: "DrivingScore".to_string(),
                oracle: Oracle::ExactValue {
                    value: penalty,
                    tolerance: 0.05,
                },
                estimator: EstimatorConfig::Ols(OlsConfig {
                    terms: vec![
                        TermSpec::Intercept,
                        TermSpec::Linear("CompletionScore".to_string()),
                        TermSpec::Interaction(
                            "CompletionScore".to_string(),
                            "OutsideLane".to_string(),
                        ),
                    ],
                    stratify_by: Some("Infraction".to_string()),
                    stratum: Some(level.to_string()),
                    treatment_level: None,
                    allow_biased: false,
                }),
                group_by: None,
            }
        })
        .collect();

    let mut group = c.benchmark_group(format!("run_suite/{}", mode()));
    group.throughput(Throughput::Elements(cases.len() as u64));
    group.bench_function("re1-32-stratified-fits", |b| {
        b.iter(|| black_box(run_suite(&spec.dag, &d, &cases).unwrap()));
    });
    group.finish();
}

criterion_group!(benches, bench_generate, bench_run_suite);
criterion_main!(benches);
