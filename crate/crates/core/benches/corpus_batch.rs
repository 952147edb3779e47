use criterion::{criterion_group, criterion_main, Criterion};
use fluxvm::batch::{map_jobs, map_jobs_sequential, PARALLEL};
use fluxvm::corpus::{self, CorpusEntry};
use fluxvm::isa::Value;

fn jobs() -> Vec<(CorpusEntry, Vec<Value>)> {
    let entries = corpus::entries();
    (0..4)
        .flat_map(|_| entries.iter())
        .flat_map(|e| e.cases.iter().map(move |c| (e.clone(), c.args.clone())))
        .collect()
}

fn diff(job: &(CorpusEntry, Vec<Value>)) -> bool {
    let (e, args) = job;
    let a = corpus::execute(e.module(), &e.entry, args.clone(), false);
    let b = corpus::execute(e.module(), &e.entry, args.clone(), true);
    match (a, b) {
        (Ok(a), Ok(b)) => a.output == b.output && a.return_value == b.return_value,
        _ => false,
    }
}

fn corpus_diff(c: &mut Criterion) {
    let jobs = jobs();
    let mut group = c.benchmark_group("corpus_diff");
    group.sample_size(20);
    let label = if PARALLEL { "rayon" } else { "map_jobs (sequential build)" };
    group.bench_function(label, |b| b.iter(|| map_jobs(&jobs, diff)));
    group.bench_function("sequential", |b| b.iter(|| map_jobs_sequential(&jobs, diff)));
    group.finish();
}

criterion_group!(benches, corpus_diff);
criterion_main!(benches);
