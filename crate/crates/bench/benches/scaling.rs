use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mmsurv_bench::{attention_self_baseline, AttentionParams};
use mmsurv_core::fusion::{FusionConfig, FusionTrunk};
use mmsurv_core::init::randn;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn bench_fusion_vs_attention(c: &mut Criterion) {
    let dim = 32;
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let trunk = FusionTrunk::init(
        FusionConfig {
            d_model: dim,
            n_liam: 2,
            n_giem: 1,
            ..FusionConfig::default()
        },
        &mut rng,
    );
    let attn = AttentionParams::init(dim, &mut rng);

    let mut group = c.benchmark_group("forward_scaling");
    group.sample_size(10);
    for &len in &[64usize, 256, 1024] {
        let f_h = randn(&mut rng, len, dim, 1.0);
        let f_p = randn(&mut rng, len, dim, 1.0);
        group.bench_with_input(BenchmarkId::new("fusion_trunk", len), &len, |b, _| {
            b.iter(|| trunk.forward(&f_h, &f_p).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("self_attention", len), &len, |b, _| {
            b.iter(|| attention_self_baseline(&attn, &f_h).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_fusion_vs_attention);
criterion_main!(benches);
