use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use splitguard::protocol::{
    decode_frame, encode_frame, verify_branch, BranchSelector, FrameMessage,
};
use splitguard_bench::fixture;

fn codec(c: &mut Criterion) {
    let (model, img) = fixture(8);
    let t = model.trunk_forward(&img).unwrap();
    let set = FrameMessage::branch_set(42, model.all_branches(&t).unwrap());
    let tensor = FrameMessage::tensor(42, t);
    let set_bytes = encode_frame(&set).unwrap();
    let tensor_bytes = encode_frame(&tensor).unwrap();
    let mut g = c.benchmark_group("wire");
    g.bench_function("encode_tensor_t", |b| {
        b.iter(|| encode_frame(black_box(&tensor)).unwrap())
    });
    g.bench_function("decode_tensor_t", |b| {
        b.iter(|| decode_frame(black_box(&tensor_bytes)).unwrap())
    });
    g.bench_function("encode_branch_set", |b| {
        b.iter(|| encode_frame(black_box(&set)).unwrap())
    });
    g.bench_function("decode_branch_set", |b| {
        b.iter(|| decode_frame(black_box(&set_bytes)).unwrap())
    });
    g.finish();
}

fn verification(c: &mut Criterion) {
    let (model, img) = fixture(8);
    let t = model.trunk_forward(&img).unwrap();
    let local = model.branch_forward(3, &t).unwrap();
    let remote = local.clone();
    c.bench_function("verify_branch", |b| {
        b.iter(|| verify_branch(black_box(&local), black_box(&remote)))
    });
    c.bench_function("select_n8", |b| {
        b.iter_batched(
            || BranchSelector::from_u64(7),
            |mut s| s.select(black_box(8)),
            BatchSize::SmallInput,
        )
    });
    let mut s = BranchSelector::from_u64(7);
    c.bench_function("select_n6_stream", |b| b.iter(|| s.select(black_box(6))));
}

criterion_group!(benches, codec, verification);
criterion_main!(benches);
