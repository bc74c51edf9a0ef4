use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::{Aabb, TriangleMesh};

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

/// Outward-oriented unit cube shell on [0,1]³.
pub fn cube_mesh() -> TriangleMesh {
    crate::mesh::parse_off(CUBE_OFF.as_bytes()).unwrap()
}

pub fn quad_mesh(p: [Point3<f64>; 4]) -> TriangleMesh {
    TriangleMesh::new(p.to_vec(), vec![[0, 1, 2], [0, 2, 3]], None).unwrap()
}

pub fn point_in_unit_cube(p: &Point3<f64>) -> bool {
    (0..3).all(|a| p[a] > 0.0 && p[a] < 1.0)
}

/// Oracle: does any of `n` uniformly sampled triangle points fall in the box?
pub fn sampled_hits(tri: &[Point3<f64>; 3], b: &Aabb, n: usize) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    (0..n).any(|_| {
        let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let p = tri[0] + (tri[1] - tri[0]) * u + (tri[2] - tri[0]) * v;
        b.contains(&p)
    })
}

/// Random triangle soup inside the unit cube.
pub fn random_soup(seed: u64, n: usize) -> TriangleMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices = Vec::new();
    let mut tris = Vec::new();
    for t in 0..n {
        let c = Point3::new(rng.gen::<f64>(), rng.gen(), rng.gen());
        for _ in 0..3 {
            let jitter = nalgebra::Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 0.6;
            let p = c + jitter;
            vertices.push(p.map(|x| x.clamp(0.0, 1.0)));
        }
        let b = 3 * t as u32;
        tris.push([b, b + 1, b + 2]);
    }
    TriangleMesh::new(vertices, tris, None).unwrap()
}
