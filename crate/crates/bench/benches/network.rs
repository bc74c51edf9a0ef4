use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mrvox::mrcnn::{embed_backward, embed_forward, MrcnnModel};
use mrvox::multires::voxelize_multires;
use mrvox::nn::{conv3d_backward, conv3d_forward, softmax_cross_entropy, Rng, Tensor};
use mrvox::{compute_aabb, VoxelizeOptions};
use mrvox_bench::uv_sphere;

fn ramp(shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|i| ((i * 7919) % 97) as f32 / 97.0 - 0.5).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let x = ramp(&[1, 32, 32, 32]);
    let w = ramp(&[16, 1, 3, 3, 3]);
    let bias = ramp(&[16]);
    let out = conv3d_forward(&x, &w, &bias, 1, 1).unwrap();
    let dout = ramp(out.shape());
    let mut g = c.benchmark_group("conv3d_1x16_32cubed");
    g.sample_size(20);
    g.bench_function("forward", |b| b.iter(|| conv3d_forward(black_box(&x), &w, &bias, 1, 1).unwrap()));
    g.bench_function("backward", |b| {
        b.iter(|| conv3d_backward(black_box(&x), &w, &bias, 1, 1, &dout, true).unwrap())
    });
    g.finish();
}

fn mrcnn(c: &mut Criterion) {
    let mesh = uv_sphere(24, 48);
    let bbox = compute_aabb(&mesh, 0.02).unwrap();
    let mr = voxelize_multires(&mesh, bbox, [8; 3], 4, &VoxelizeOptions::default()).unwrap();
    let model = MrcnnModel::<f32>::with_default_architecture([8; 3], 4, 2, &mut Rng::new(1)).unwrap();
    let (logits, cache) = embed_forward(&model, &mr).unwrap();
    let (_, dl) = softmax_cross_entropy(&logits, 0).unwrap();

    let mut g = c.benchmark_group("mrcnn_8x4_sphere");
    g.bench_function("embed_forward", |b| b.iter(|| embed_forward(&model, black_box(&mr)).unwrap()));
    g.bench_function("embed_backward", |b| b.iter(|| embed_backward(&model, &cache, black_box(&dl), false).unwrap()));
    g.finish();
}

criterion_group!(benches, conv, mrcnn);
criterion_main!(benches);
