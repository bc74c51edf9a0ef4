//! Finite-difference checks of individual layers.

use mrvox::nn::{finite_difference_grad, max_rel_error, softmax_cross_entropy, Layer, LayerSpec, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use super::rng;

pub const H: f64 = 1e-5;
pub const FLOOR: f64 = 1e-6;

fn random_tensor(r: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values spaced at least 0.01 apart so no finite-difference probe crosses a
/// ReLU kink or reorders a pooling window.
fn spread_tensor(r: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * 0.02 + r.gen_range(-0.004..0.004)).collect();
    v.shuffle(r);
    Tensor::from_vec(shape, v).unwrap()
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Max relative error over input, weight and bias gradients for the loss
/// `sum(r * layer(x))` with a random `r`.
pub fn layer_error(layer: &Layer<f64>, x: &Tensor<f64>, seed: u64) -> f64 {
    let mut r = rng(seed);
    let (y, cache) = layer.forward(x).unwrap();
    let dout = random_tensor(&mut r, y.shape());
    let (dx, dp) = layer.backward(&cache, &dout, true).unwrap();
    let fd_x = finite_difference_grad(|xp| weighted_sum(&layer.forward(xp).unwrap().0, &dout), x, H);
    let mut worst = max_rel_error(dx.unwrap().data(), fd_x.data(), FLOOR);
    if let Some((dw, db)) = dp {
        let fd_w = finite_difference_grad(
            |wp| {
                let mut l = layer.clone();
                l.weight = wp.clone();
                weighted_sum(&l.forward(x).unwrap().0, &dout)
            },
            &layer.weight,
            H,
        );
        let fd_b = finite_difference_grad(
            |bp| {
                let mut l = layer.clone();
                l.bias = bp.clone();
                weighted_sum(&l.forward(x).unwrap().0, &dout)
            },
            &layer.bias,
            H,
        );
        worst = worst
            .max(max_rel_error(dw.data(), fd_w.data(), FLOOR))
            .max(max_rel_error(db.data(), fd_b.data(), FLOOR));
    }
    worst
}

fn with_random_params(spec: LayerSpec, r: &mut impl Rng) -> Layer<f64> {
    let (ws, bs) = spec.param_shapes().unwrap();
    Layer {
        spec,
        weight: random_tensor(r, &ws),
        bias: random_tensor(r, &bs),
    }
}

pub fn conv_instance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let in_ch = r.gen_range(1..3);
    let out_ch = r.gen_range(1..4);
    let kernel = r.gen_range(1..4);
    let stride = r.gen_range(1..3);
    let pad = r.gen_range(0..2);
    let spec = LayerSpec::Conv3d { in_ch, out_ch, kernel, stride, pad };
    // Valid lengths satisfy len + 2*pad - kernel = stride * m.
    let dims: Vec<usize> = (0..3)
        .map(|_| {
            let mut m = r.gen_range(0..3);
            while stride * m + kernel < 2 * pad + 1 {
                m += 1;
            }
            stride * m + kernel - 2 * pad
        })
        .collect();
    let layer = with_random_params(spec, &mut r);
    let x = random_tensor(&mut r, &[in_ch, dims[0], dims[1], dims[2]]);
    layer_error(&layer, &x, seed + 1)
}

pub fn dense_instance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (inputs, outputs) = (r.gen_range(1..20), r.gen_range(1..8));
    let layer = with_random_params(LayerSpec::dense(inputs, outputs), &mut r);
    let x = random_tensor(&mut r, &[inputs]);
    layer_error(&layer, &x, seed + 1)
}

fn paramless(spec: LayerSpec) -> Layer<f64> {
    Layer {
        spec,
        weight: Tensor::zeros(&[0]),
        bias: Tensor::zeros(&[0]),
    }
}

pub fn relu_instance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = [r.gen_range(1..3), r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5)];
    let x = spread_tensor(&mut r, &shape);
    layer_error(&paramless(LayerSpec::Relu), &x, seed + 1)
}

pub fn maxpool_instance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let window = r.gen_range(1..4);
    let shape = [r.gen_range(1..3), r.gen_range(window..7), r.gen_range(window..7), r.gen_range(window..7)];
    let x = spread_tensor(&mut r, &shape);
    layer_error(&paramless(LayerSpec::MaxPool3d { window }), &x, seed + 1)
}

pub fn flatten_instance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = [r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..4)];
    let x = random_tensor(&mut r, &shape);
    layer_error(&paramless(LayerSpec::Flatten), &x, seed + 1)
}

pub fn cross_entropy_instance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let k = r.gen_range(2..8);
    let label = r.gen_range(0..k);
    let logits = Tensor::from_vec(&[k], (0..k).map(|_| r.gen_range(-3.0..3.0)).collect()).unwrap();
    let (_, grad) = softmax_cross_entropy(&logits, label).unwrap();
    let fd = finite_difference_grad(|l| softmax_cross_entropy(l, label).unwrap().0, &logits, H);
    max_rel_error(grad.data(), fd.data(), FLOOR)
}

/// Named per-layer checks, each run over `instances` seeds. Returns the
/// worst error per layer kind.
pub fn all_layer_errors(instances: u64) -> Vec<(&'static str, f64)> {
    let checks: [(&str, fn(u64) -> f64); 6] = [
        ("conv3d", conv_instance),
        ("relu", relu_instance),
        ("maxpool3d", maxpool_instance),
        ("flatten", flatten_instance),
        ("dense", dense_instance),
        ("softmax_cross_entropy", cross_entropy_instance),
    ];
    checks
        .iter()
        .map(|(name, f)| (*name, (0..instances).map(|s| f(1000 * s + 17)).fold(0.0, f64::max)))
        .collect()
}
