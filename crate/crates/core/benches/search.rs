use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tilecast::dse::search::{search, SearchOptions};
use tilecast::{default_aie_ml, default_profile, Exec, ModelSpec};

fn bench_search(c: &mut Criterion) {
    let arch = default_aie_ml();
    let p = default_profile();
    let mut g = c.benchmark_group("search");
    g.sample_size(10);
    for name in ["jsc_xl", "deepsets_64_d"] {
        let m = ModelSpec::load(format!("{}/data/models/{name}.model", env!("CARGO_MANIFEST_DIR"))).unwrap();
        for exec in [Exec::Sequential, Exec::Parallel] {
            let opts = SearchOptions {
                topk: 5,
                exec,
                ..SearchOptions::default()
            };
            g.bench_with_input(BenchmarkId::new(format!("{exec:?}"), name), &m, |b, m| {
                b.iter(|| search(m, &arch, &p, &opts).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, bench_search);
criterion_main!(benches);
