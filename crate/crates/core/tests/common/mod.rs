//! Fixtures and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

pub mod layers;

use std::fs;
use std::path::Path;

use mrvox::mrcnn::MrcnnModel;
use mrvox::multires::MultiResGrid;
use mrvox::nalgebra::{Point3, UnitQuaternion, Vector3};
use mrvox::nn::{LayerSpec, Network, Tensor};
use mrvox::{build_prefix_index, Aabb, CellState, GridSpec, TriangleMesh, VoxelGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CUBE_OFF: &str = "OFF
8 12 0
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
3 0 2 1
3 0 3 2
3 4 5 6
3 4 6 7
3 0 1 5
3 0 5 4
3 2 3 7
3 2 7 6
3 1 2 6
3 1 6 5
3 0 4 7
3 0 7 3
";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cube_mesh() -> TriangleMesh {
    mrvox::parse_off(CUBE_OFF.as_bytes()).unwrap()
}

pub fn unit_box() -> Aabb {
    Aabb::new(Point3::origin(), Point3::new(1.0, 1.0, 1.0))
}

/// `n` independent triangles with vertices in the unit cube.
pub fn random_soup(seed: u64, n: usize) -> TriangleMesh {
    let mut r = rng(seed);
    let mut vertices = Vec::new();
    let mut tris = Vec::new();
    for t in 0..n {
        let c = Vector3::new(r.gen::<f64>(), r.gen(), r.gen());
        for _ in 0..3 {
            let j = Vector3::new(r.gen::<f64>() - 0.5, r.gen::<f64>() - 0.5, r.gen::<f64>() - 0.5) * 0.6;
            vertices.push(Point3::from((c + j).map(|x| x.clamp(0.0, 1.0))));
        }
        let b = 3 * t as u32;
        tris.push([b, b + 1, b + 2]);
    }
    TriangleMesh::new(vertices, tris, None).unwrap()
}

pub fn random_point(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> Point3<f64> {
    Point3::new(r.gen_range(lo..hi), r.gen_range(lo..hi), r.gen_range(lo..hi))
}

pub fn random_triangle(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> [Point3<f64>; 3] {
    [random_point(r, lo, hi), random_point(r, lo, hi), random_point(r, lo, hi)]
}

pub fn random_box(r: &mut ChaCha8Rng, lo: f64, hi: f64, max_size: f64) -> Aabb {
    let min = random_point(r, lo, hi);
    let size = Vector3::new(
        r.gen_range(0.01..max_size),
        r.gen_range(0.01..max_size),
        r.gen_range(0.01..max_size),
    );
    Aabb::new(min, min + size)
}

/// Oracle: whether any of `n` seeded uniform points of the triangle lies
/// in the closed box.
pub fn sampled_hit(tri: &[Point3<f64>; 3], b: &Aabb, n: usize, seed: u64) -> bool {
    let mut r = rng(seed);
    (0..n).any(|_| {
        let (mut u, mut v): (f64, f64) = (r.gen(), r.gen());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let p = tri[0] + (tri[1] - tri[0]) * u + (tri[2] - tri[0]) * v;
        (0..3).all(|a| p[a] >= b.min[a] && p[a] <= b.max[a])
    })
}

/// UV sphere of radius 1 at the origin.
pub fn uv_sphere(rings: usize, segments: usize) -> TriangleMesh {
    use std::f64::consts::PI;
    let mut v = vec![Point3::new(0.0, 0.0, 1.0)];
    for i in 1..rings {
        let t = PI * i as f64 / rings as f64;
        for s in 0..segments {
            let p = 2.0 * PI * s as f64 / segments as f64;
            v.push(Point3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos()));
        }
    }
    v.push(Point3::new(0.0, 0.0, -1.0));
    let south = (v.len() - 1) as u32;
    let at = |i: usize, s: usize| (1 + (i - 1) * segments + s % segments) as u32;
    let mut t = Vec::new();
    for s in 0..segments {
        t.push([0, at(1, s), at(1, s + 1)]);
        t.push([south, at(rings - 1, s + 1), at(rings - 1, s)]);
    }
    for i in 1..rings - 1 {
        for s in 0..segments {
            t.push([at(i, s), at(i + 1, s), at(i + 1, s + 1)]);
            t.push([at(i, s), at(i + 1, s + 1), at(i, s + 1)]);
        }
    }
    TriangleMesh::new(v, t, None).unwrap()
}

/// Axis-aligned box shell with the given half extents, centered at the
/// origin.
pub fn box_mesh(h: Vector3<f64>) -> TriangleMesh {
    let mut m = cube_mesh();
    for p in &mut m.vertices {
        *p = Point3::from((p.coords * 2.0 - Vector3::repeat(1.0)).component_mul(&h));
    }
    m
}

/// Random rotation followed by per-axis scaling.
pub fn transform(mut m: TriangleMesh, r: &mut ChaCha8Rng, scale: Vector3<f64>) -> TriangleMesh {
    let q = UnitQuaternion::from_euler_angles(
        r.gen_range(0.0..std::f64::consts::TAU),
        r.gen_range(0.0..std::f64::consts::TAU),
        r.gen_range(0.0..std::f64::consts::TAU),
    );
    for p in &mut m.vertices {
        *p = Point3::from(q * p.coords.component_mul(&scale));
    }
    m
}

/// Appends an axis-aligned box shell to `mesh`.
fn push_box(mesh: &mut (Vec<Point3<f64>>, Vec<[u32; 3]>), center: Vector3<f64>, half: Vector3<f64>) {
    let cube = cube_mesh();
    let base = mesh.0.len() as u32;
    for p in &cube.vertices {
        mesh.0.push(Point3::from((p.coords * 2.0 - Vector3::repeat(1.0)).component_mul(&half) + center));
    }
    mesh.1.extend(cube.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
}

/// Table (`chair == false`) or chair built from boxes: a slab on four legs,
/// plus a backrest for chairs. Proportions are randomized and the result
/// is rotated about the vertical axis.
pub fn furniture(r: &mut ChaCha8Rng, chair: bool) -> TriangleMesh {
    let mut m = (Vec::new(), Vec::new());
    let w = r.gen_range(0.35..0.6);
    let d = r.gen_range(0.35..0.6);
    let h = r.gen_range(0.35..0.7);
    let leg = r.gen_range(0.025..0.05);
    let slab = r.gen_range(0.02..0.04);
    push_box(&mut m, Vector3::new(0.0, 0.0, h), Vector3::new(w, d, slab));
    for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
        let c = Vector3::new(sx * (w - leg), sy * (d - leg), (h - slab) / 2.0);
        push_box(&mut m, c, Vector3::new(leg, leg, (h - slab) / 2.0));
    }
    if chair {
        let back = r.gen_range(0.3..0.6);
        push_box(&mut m, Vector3::new(0.0, -(d - slab), h + slab + back / 2.0), Vector3::new(w, slab, back / 2.0));
    }
    let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), r.gen_range(0.0..std::f64::consts::TAU));
    let vertices = m.0.into_iter().map(|p| Point3::from(q * p.coords)).collect();
    TriangleMesh::new(vertices, m.1, None).unwrap()
}

pub const PROXY_CLASSES: [&str; 2] = ["chair", "table"];

/// Synthetic two-class stand-in for a ModelNet-style tree: randomized
/// chairs and tables written as OFF files under
/// `<root>/<class>/{train,test}/`.
pub fn write_proxy_dataset(root: &Path, train: usize, test: usize, seed: u64) {
    let mut r = rng(seed);
    for (c, class) in PROXY_CLASSES.iter().enumerate() {
        for (split, count) in [("train", train), ("test", test)] {
            let dir = root.join(class).join(split);
            fs::create_dir_all(&dir).unwrap();
            for i in 0..count {
                let m = furniture(&mut r, c == 0);
                fs::write(dir.join(format!("{class}_{i:04}.off")), m.to_off()).unwrap();
            }
        }
    }
}

/// Random coarse grid with states drawn per cell and random fine blocks
/// under each Boundary cell.
pub fn random_multires(seed: u64, n: usize, f: usize, p_boundary: f64, p_inside: f64) -> MultiResGrid {
    let mut r = rng(seed);
    let spec = GridSpec::cubic(n, unit_box()).unwrap();
    let mut coarse = VoxelGrid::new(spec);
    for c in &mut coarse.cells {
        let u: f64 = r.gen();
        *c = if u < p_boundary {
            CellState::Boundary
        } else if u < p_boundary + p_inside {
            CellState::Inside
        } else {
            CellState::Outside
        };
    }
    let index = build_prefix_index(&coarse);
    let fine_cells = (0..index.total as usize * f * f * f)
        .map(|_| match r.gen_range(0..3) {
            0 => CellState::Outside,
            1 => CellState::Inside,
            _ => CellState::Boundary,
        })
        .collect();
    MultiResGrid {
        coarse,
        fine_factor: f,
        index,
        fine_cells,
        fine_normals: None,
        inside_filled: true,
    }
}

/// Small MRCNN for gradient checks: coarse `n³` input, fine `f³`, `k`
/// classes. Biases are randomized too so they are exercised.
pub fn small_model(seed: u64, n: usize, f: usize, k: usize) -> MrcnnModel<f64> {
    let mut r = mrvox::nn::Rng::new(seed);
    let coarse = Network::new(
        &[1, n, n, n],
        &[
            LayerSpec::conv(1, 2, 3, 1),
            LayerSpec::Relu,
            LayerSpec::MaxPool3d { window: 2 },
            LayerSpec::Flatten,
            LayerSpec::dense(2 * (n / 2).pow(3), k),
        ],
        &mut r,
    )
    .unwrap();
    let fine = Network::new(
        &[1, f, f, f],
        &[
            LayerSpec::conv(1, 2, 3, 1),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::dense(2 * f * f * f, 1),
        ],
        &mut r,
    )
    .unwrap();
    let mut m = MrcnnModel::new(coarse, fine).unwrap();
    let mut br = rng(seed ^ 0x5eed);
    for net in [&mut m.coarse_net, &mut m.fine_net] {
        for l in net.layers_mut() {
            for b in l.bias.data_mut() {
                *b = br.gen_range(-0.3..0.3);
            }
        }
    }
    m
}

// Straight-line reference network evaluation. Tensors are flat vectors
// with an explicit [channels, d, h, w] shape.

fn ref_conv(x: &[f64], s: [usize; 4], w: &[f64], b: &[f64], out_ch: usize, k: usize, pad: usize) -> (Vec<f64>, [usize; 4]) {
    let [c_in, d, h, wd] = s;
    let (od, oh, ow) = (d + 2 * pad + 1 - k, h + 2 * pad + 1 - k, wd + 2 * pad + 1 - k);
    let mut y = vec![0.0; out_ch * od * oh * ow];
    for o in 0..out_ch {
        for z in 0..od {
            for yy in 0..oh {
                for xx in 0..ow {
                    let mut acc = b[o];
                    for c in 0..c_in {
                        for a in 0..k {
                            for bb in 0..k {
                                for cc in 0..k {
                                    let (iz, iy, ix) = (
                                        z as isize + a as isize - pad as isize,
                                        yy as isize + bb as isize - pad as isize,
                                        xx as isize + cc as isize - pad as isize,
                                    );
                                    if iz < 0 || iy < 0 || ix < 0 {
                                        continue;
                                    }
                                    let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                    if iz >= d || iy >= h || ix >= wd {
                                        continue;
                                    }
                                    let wi = (((o * c_in + c) * k + a) * k + bb) * k + cc;
                                    acc += w[wi] * x[((c * d + iz) * h + iy) * wd + ix];
                                }
                            }
                        }
                    }
                    y[((o * od + z) * oh + yy) * ow + xx] = acc;
                }
            }
        }
    }
    (y, [out_ch, od, oh, ow])
}

fn ref_pool(x: &[f64], s: [usize; 4], p: usize) -> (Vec<f64>, [usize; 4]) {
    let [c, d, h, w] = s;
    let (od, oh, ow) = (d / p, h / p, w / p);
    let mut y = vec![f64::NEG_INFINITY; c * od * oh * ow];
    for ch in 0..c {
        for z in 0..od * p {
            for yy in 0..oh * p {
                for xx in 0..ow * p {
                    let o = ((ch * od + z / p) * oh + yy / p) * ow + xx / p;
                    y[o] = y[o].max(x[((ch * d + z) * h + yy) * w + xx]);
                }
            }
        }
    }
    (y, [c, od, oh, ow])
}

/// Evaluates `net` on a `[1, d, h, w]` input without using the library's
/// layer code.
pub fn ref_network(net: &Network<f64>, x: &[f64]) -> Vec<f64> {
    let is = net.input_shape();
    let mut shape = [is[0], is[1], is[2], is[3]];
    let mut v = x.to_vec();
    for l in net.layers() {
        match l.spec {
            LayerSpec::Conv3d {
                out_ch, kernel, pad, stride, ..
            } => {
                assert_eq!(stride, 1, "reference conv supports stride 1 only");
                (v, shape) = ref_conv(&v, shape, l.weight.data(), l.bias.data(), out_ch, kernel, pad);
            }
            LayerSpec::Relu => v.iter_mut().for_each(|a| *a = a.max(0.0)),
            LayerSpec::MaxPool3d { window } => (v, shape) = ref_pool(&v, shape, window),
            LayerSpec::Flatten => {}
            LayerSpec::Dense { inputs, outputs } => {
                let w = l.weight.data();
                v = (0..outputs)
                    .map(|o| l.bias.data()[o] + (0..inputs).map(|i| w[o * inputs + i] * v[i]).sum::<f64>())
                    .collect();
            }
        }
    }
    v
}

/// Reference MRCNN composition: sequential loop over coarse cells, fine
/// network on each Boundary cell's block, sigmoid, coarse network.
pub fn ref_mrcnn_logits(model: &MrcnnModel<f64>, mr: &MultiResGrid) -> Vec<f64> {
    let occ = |c: &CellState| if *c == CellState::Outside { 0.0 } else { 1.0 };
    let bl = mr.fine_factor.pow(3);
    let mut next_block = 0;
    let x1: Vec<f64> = mr
        .coarse
        .cells
        .iter()
        .map(|c| match c {
            CellState::Outside => 0.0,
            CellState::Inside => 1.0,
            CellState::Boundary => {
                let block: Vec<f64> = mr.fine_cells[next_block * bl..(next_block + 1) * bl].iter().map(occ).collect();
                next_block += 1;
                let g = ref_network(&model.fine_net, &block)[0];
                1.0 / (1.0 + (-g).exp())
            }
        })
        .collect();
    ref_network(&model.coarse_net, &x1)
}

/// Cross-entropy of reference logits.
pub fn ref_cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Max relative error between `embed_backward` and central differences of
/// the cross-entropy loss through the whole composition, over every
/// coarse and fine parameter. Coarse 4³, F = 2, three classes.
pub fn composed_gradient_error(seed: u64) -> f64 {
    use mrvox::mrcnn::{embed_backward, embed_forward};
    use mrvox::nn::{rel_error, softmax_cross_entropy};

    let h = 1e-5;
    let mut model = small_model(10 + seed, 4, 2, 3);
    let mr = random_multires(20 + seed, 4, 2, 0.4, 0.2);
    assert!(mr.boundary_count() > 0);
    let y = (seed % 3) as usize;
    let loss = |m: &MrcnnModel<f64>| softmax_cross_entropy(&embed_forward(m, &mr).unwrap().0, y).unwrap().0;

    let (logits, cache) = embed_forward(&model, &mr).unwrap();
    let (_, dl) = softmax_cross_entropy(&logits, y).unwrap();
    let g = embed_backward(&model, &cache, &dl, false).unwrap();
    assert!(!g.fine.is_zero());
    let analytic: Vec<f64> = g.coarse.flat().into_iter().chain(g.fine.flat()).collect();

    let mut numeric = Vec::with_capacity(analytic.len());
    for fine in [false, true] {
        let shapes: Vec<usize> = {
            let net = if fine { &model.fine_net } else { &model.coarse_net };
            net.params().iter().map(|t| t.len()).collect()
        };
        for (p, len) in shapes.into_iter().enumerate() {
            for i in 0..len {
                let nudge = |m: &mut MrcnnModel<f64>, d: f64| {
                    let net = if fine { &mut m.fine_net } else { &mut m.coarse_net };
                    net.params_mut()[p].data_mut()[i] += d;
                };
                nudge(&mut model, h);
                let up = loss(&model);
                nudge(&mut model, -2.0 * h);
                let down = loss(&model);
                nudge(&mut model, h);
                numeric.push((up - down) / (2.0 * h));
            }
        }
    }
    assert_eq!(numeric.len(), analytic.len());
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_error(*a, *n, 1e-6))
        .fold(0.0, f64::max)
}

/// Coarse occupancy with every Boundary cell set to `boundary_value`.
pub fn coarse_input(mr: &MultiResGrid, boundary_value: f64) -> Tensor<f64> {
    let n = mr.coarse.spec.dims;
    let data = mr
        .coarse
        .cells
        .iter()
        .map(|c| match c {
            CellState::Outside => 0.0,
            CellState::Inside => 1.0,
            CellState::Boundary => boundary_value,
        })
        .collect();
    Tensor::from_vec(&[1, n[0], n[1], n[2]], data).unwrap()
}
