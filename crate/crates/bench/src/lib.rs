//! Shared inputs for the criterion benchmarks.

use mrvox::mesh::TriangleMesh;

/// UV sphere with `rings × segments` quads, radius 1 centered at the origin.
pub fn uv_sphere(rings: usize, segments: usize) -> TriangleMesh {
    use std::f64::consts::PI;
    let mut vertices = vec![mrvox::nalgebra::Point3::new(0.0, 0.0, 1.0)];
    for r in 1..rings {
        let theta = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = 2.0 * PI * s as f64 / segments as f64;
            vertices.push(mrvox::nalgebra::Point3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()));
        }
    }
    vertices.push(mrvox::nalgebra::Point3::new(0.0, 0.0, -1.0));
    let south = (vertices.len() - 1) as u32;
    let ring = |r: usize, s: usize| (1 + (r - 1) * segments + s % segments) as u32;
    let mut tris = Vec::new();
    for s in 0..segments {
        tris.push([0, ring(1, s), ring(1, s + 1)]);
        tris.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            tris.push([ring(r, s), ring(r + 1, s), ring(r + 1, s + 1)]);
            tris.push([ring(r, s), ring(r + 1, s + 1), ring(r, s + 1)]);
        }
    }
    TriangleMesh::new(vertices, tris, None).expect("valid sphere")
}
