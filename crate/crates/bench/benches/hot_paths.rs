use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vidref_bench::{pair, values};
use vidref_core::baselines::concat_sequence;
use vidref_core::dbst::{generate_sequence, make_alpha_schedule, slerp, DbstPreset, LatentNoise, SyntheticMorphBackend};
use vidref_core::ivos::{MockTracker, MockTrackerConfig, Tracker, TrackerSession};
use vidref_core::ttga::{masked_average_pool, otsu, similarity_map, FeatureMap};
use vidref_core::Mask;

fn bench_slerp(c: &mut Criterion) {
    let n = 4 * 64 * 64;
    let a = LatentNoise::new(vec![4, 64, 64], values(n, 1), 50).unwrap();
    let b = LatentNoise::new(vec![4, 64, 64], values(n, 2), 50).unwrap();
    c.bench_function("slerp 4x64x64", |bench| bench.iter(|| slerp(black_box(&a), black_box(&b), 0.37).unwrap()));
}

fn bench_prototype(c: &mut Criterion) {
    let (h, w, d) = (64, 64, 64);
    let f = FeatureMap::new(h, w, d, 8, values(h * w * d, 3)).unwrap();
    let m = Mask::from_fn(h, w, |y, x| (16..48).contains(&y) && (20..44).contains(&x));
    let p = masked_average_pool(&f, &m).unwrap();
    let s = similarity_map(&f, &p).unwrap();
    c.bench_function("masked average pool 64x64x64", |bench| bench.iter(|| masked_average_pool(black_box(&f), &m).unwrap()));
    c.bench_function("cosine similarity 64x64x64", |bench| bench.iter(|| similarity_map(black_box(&f), &p).unwrap()));
    c.bench_function("otsu 64x64", |bench| bench.iter(|| otsu(black_box(&s.data)).unwrap()));
}

fn bench_mock_tracker(c: &mut Criterion) {
    let mut group = c.benchmark_group("mock tracker propagate");
    for size in [64, 128] {
        let ((ref_img, ref_mask), (tgt, _)) = pair(size);
        let seq = concat_sequence(&ref_img, &ref_mask, &tgt).unwrap();
        let session = TrackerSession::open(seq).unwrap();
        let mut tracker = MockTracker::new(MockTrackerConfig::for_resolution(size));
        group.bench_with_input(BenchmarkId::from_parameter(size), &session, |bench, s| {
            bench.iter(|| tracker.propagate(black_box(s)).unwrap())
        });
    }
    group.finish();
}

fn bench_sequence(c: &mut Criterion) {
    let ((ref_img, _), (tgt, _)) = pair(128);
    let schedule = make_alpha_schedule(9, 0.2, 0.8).unwrap();
    let preset = DbstPreset::fast();
    c.bench_function("generate sequence 128px 9 frames", |bench| {
        bench.iter(|| {
            let mut backend = SyntheticMorphBackend::new(0);
            generate_sequence(black_box(&ref_img), &tgt, &schedule, &mut backend, &preset).unwrap()
        })
    });
}

criterion_group!(benches, bench_slerp, bench_prototype, bench_mock_tracker, bench_sequence);
criterion_main!(benches);
