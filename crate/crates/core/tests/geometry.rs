mod common;

use common::*;
use mrvox::nalgebra::{Point3, Vector3};
use mrvox::voxel::{classify_boundary, voxelize};
use mrvox::{
    flatten_index, parse_off, point_to_cell, tri_box_intersect, Aabb, CellState, GridSpec, TriangleMesh,
    VoxelizeOptions,
};
use proptest::prelude::*;

/// Coordinates on a 1/1024 lattice so translations by multiples of 1/4 are
/// exact in floating point.
fn lattice() -> impl Strategy<Value = f64> {
    (-2048i32..2048).prop_map(|v| v as f64 / 1024.0)
}

fn lattice_point() -> impl Strategy<Value = Point3<f64>> {
    (lattice(), lattice(), lattice()).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn lattice_box() -> impl Strategy<Value = Aabb> {
    (lattice_point(), 1i32..1024, 1i32..1024, 1i32..1024).prop_map(|(p, a, b, c)| {
        Aabb::new(p, p + Vector3::new(a as f64, b as f64, c as f64) / 1024.0)
    })
}

/// Brute force: every cell tested against every triangle.
fn brute_force_boundary(mesh: &TriangleMesh, spec: &GridSpec) -> Vec<bool> {
    let [nx, ny, nz] = spec.dims;
    let mut out = vec![false; spec.cell_count()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let b = spec.cell_box(i, j, k);
                out[(k * ny + j) * nx + i] = (0..mesh.triangles.len()).any(|t| tri_box_intersect(&mesh.triangle(t), &b));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sat_is_translation_invariant(
        a in lattice_point(), b in lattice_point(), c in lattice_point(),
        bx in lattice_box(),
        t in (-16i32..16, -16i32..16, -16i32..16),
    ) {
        let shift = Vector3::new(t.0 as f64, t.1 as f64, t.2 as f64) / 4.0;
        let moved = [a + shift, b + shift, c + shift];
        let moved_box = Aabb::new(bx.min + shift, bx.max + shift);
        prop_assert_eq!(tri_box_intersect(&[a, b, c], &bx), tri_box_intersect(&moved, &moved_box));
    }

    #[test]
    fn sat_never_misses_sampled_points(seed in any::<u64>()) {
        let mut r = rng(seed);
        let tri = random_triangle(&mut r, 0.0, 1.0);
        let bx = random_box(&mut r, 0.0, 1.0, 0.5);
        if sampled_hit(&tri, &bx, 1000, seed) {
            prop_assert!(tri_box_intersect(&tri, &bx));
        }
    }

    #[test]
    fn sat_is_symmetric_in_vertex_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let [a, b, c] = random_triangle(&mut r, 0.0, 1.0);
        let bx = random_box(&mut r, 0.0, 1.0, 0.4);
        let want = tri_box_intersect(&[a, b, c], &bx);
        for tri in [[b, c, a], [c, a, b], [b, a, c], [a, c, b], [c, b, a]] {
            prop_assert_eq!(tri_box_intersect(&tri, &bx), want);
        }
    }

    #[test]
    fn classification_matches_brute_force(seed in any::<u64>(), n in 1usize..30, res in 2usize..9) {
        let mesh = random_soup(seed, n);
        let spec = GridSpec::cubic(res, unit_box()).unwrap();
        let (grid, buffer) = classify_boundary(&mesh, &spec, 1024).unwrap();
        let brute = brute_force_boundary(&mesh, &spec);
        for v in 0..spec.cell_count() {
            prop_assert_eq!(grid.cells[v] == CellState::Boundary, brute[v], "cell {}", v);
            let [i, j, k] = spec.unflatten(v);
            let b = spec.cell_box(i, j, k);
            let expected: Vec<u32> = (0..mesh.triangles.len() as u32)
                .filter(|&t| tri_box_intersect(&mesh.triangle(t as usize), &b))
                .collect();
            prop_assert_eq!(buffer.entries(v), expected.as_slice());
        }
    }

    #[test]
    fn classification_ignores_triangle_order(seed in any::<u64>(), n in 2usize..30) {
        let mesh = random_soup(seed, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        perm.rotate_left(seed as usize % n);
        let shuffled = TriangleMesh::new(
            mesh.vertices.clone(),
            perm.iter().map(|&t| mesh.triangles[t]).collect(),
            None,
        ).unwrap();
        let spec = GridSpec::cubic(6, unit_box()).unwrap();
        let opts = VoxelizeOptions { inside_fill: true, ..Default::default() };
        let (a, _) = voxelize(&mesh, &spec, &opts).unwrap();
        let (b, _) = voxelize(&shuffled, &spec, &opts).unwrap();
        prop_assert_eq!(a.cells, b.cells);
    }

    #[test]
    fn point_cell_flatten_round_trip(x in 0.0f64..=1.0, y in 0.0f64..=1.0, z in 0.0f64..=1.0, n in 1usize..20) {
        let spec = GridSpec::cubic(n, unit_box()).unwrap();
        let [i, j, k] = point_to_cell(&Point3::new(x, y, z), &spec).unwrap();
        prop_assert!(i < n && j < n && k < n);
        let v = flatten_index(i, j, k, &spec).unwrap();
        prop_assert_eq!(spec.unflatten(v), [i, j, k]);
        prop_assert!(spec.cell_box(i, j, k).contains(&Point3::new(x, y, z)));
    }

    #[test]
    fn fan_triangulation_preserves_area(n in 3usize..12, rx in 0.2f64..3.0, ry in 0.2f64..3.0, z in -5.0f64..5.0) {
        // Convex polygon: points on an ellipse.
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                (rx * t.cos(), ry * t.sin())
            })
            .collect();
        let shoelace = 0.5 * (0..n)
            .map(|i| {
                let (a, b) = (pts[i], pts[(i + 1) % n]);
                a.0 * b.1 - b.0 * a.1
            })
            .sum::<f64>()
            .abs();
        let mut off = format!("OFF\n{n} 1 0\n");
        for (x, y) in &pts {
            off += &format!("{x:?} {y:?} {z:?}\n");
        }
        off += &format!("{n}");
        for i in 0..n {
            off += &format!(" {i}");
        }
        off += "\n";
        let mesh = parse_off(off.as_bytes()).unwrap();
        prop_assert_eq!(mesh.triangles.len(), n - 2);
        let area: f64 = (0..mesh.triangles.len()).map(|t| mesh.triangle_area(t)).sum();
        prop_assert!((area - shoelace).abs() <= 1e-9 * shoelace.max(1.0));
    }

    #[test]
    fn off_round_trip(seed in any::<u64>(), n in 1usize..40) {
        let mesh = random_soup(seed, n);
        let again = parse_off(mesh.to_off().as_bytes()).unwrap();
        prop_assert_eq!(again.vertices, mesh.vertices);
        prop_assert_eq!(again.triangles, mesh.triangles);
    }
}

#[test]
fn sphere_shell_encloses_inside_cells() {
    let mesh = uv_sphere(24, 48);
    let bbox = mrvox::compute_aabb(&mesh, 0.02).unwrap();
    let spec = GridSpec::cubic(16, bbox).unwrap();
    let opts = VoxelizeOptions { inside_fill: true, ..Default::default() };
    let (grid, _) = voxelize(&mesh, &spec, &opts).unwrap();
    for v in 0..spec.cell_count() {
        let [i, j, k] = spec.unflatten(v);
        let c = spec.cell_center(i, j, k);
        let r = c.coords.norm();
        let h = spec.cell_size().norm();
        match grid.cells[v] {
            CellState::Inside => assert!(r < 1.0, "inside cell {v} at radius {r}"),
            CellState::Outside => assert!(r > 1.0 - h, "outside cell {v} at radius {r}"),
            CellState::Boundary => assert!((r - 1.0).abs() <= h, "boundary cell {v} at radius {r}"),
        }
    }
    assert!(grid.cells.contains(&CellState::Inside));
}
