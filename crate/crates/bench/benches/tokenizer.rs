use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use igc_core::data::build_vocab;
use std::hint::black_box;

fn bench_tokenizer(c: &mut Criterion) {
    let vocab = build_vocab();
    let texts: Vec<String> = (0..1024)
        .map(|i| {
            format!(
                "What is {} + {}?",
                1_234_567_890u64.wrapping_mul(i + 1) % 10_000_000_000,
                987_654_321u64.wrapping_mul(i + 7) % 10_000_000_000
            )
        })
        .collect();
    let mut g = c.benchmark_group("tokenizer");
    g.throughput(Throughput::Elements(texts.len() as u64));
    g.bench_function("tokenize_roundtrip_1024", |b| {
        b.iter(|| {
            for t in &texts {
                let ids = vocab.tokenize(black_box(t)).unwrap();
                black_box(vocab.detokenize(&ids).unwrap());
            }
        })
    });
    g.finish();
}

criterion_group!(benches, bench_tokenizer);
criterion_main!(benches);
