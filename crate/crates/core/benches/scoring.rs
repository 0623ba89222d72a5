//! Sequential vs rayon score-matrix computation on an untrained model.

use criterion::{criterion_group, criterion_main, Criterion};
use fss_core::config::RunConfig;
use fss_core::fssnet::{vocabulary, FssNet};
use fss_core::par::Exec;
use fss_core::synth::generate;

fn score_matrix(c: &mut Criterion) {
    let mut cfg = RunConfig::default();
    cfg.corpus.n_train = 4;
    cfg.corpus.n_dev = 4;
    cfg.corpus.n_test = 16;
    let corpus = generate(&cfg.corpus).unwrap();
    let net = FssNet::new(corpus.feature_dim(), cfg.matcher_settings(), 1).unwrap();
    let vocab = vocabulary(&corpus.test);
    let mut group = c.benchmark_group("score_matrix");
    group.sample_size(10);
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        group.bench_function(name, |b| b.iter(|| net.score_matrix(&corpus.test, &vocab, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, score_matrix);
criterion_main!(benches);
