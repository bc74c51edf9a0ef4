//! Coarse-level voxelization: grid index math, the separating-axis
//! triangle/box test, boundary classification with per-voxel triangle
//! buffers, ray-parity inside fill and per-voxel normal averaging.

use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::mesh::{Aabb, TriangleMesh};

/// Initial per-voxel triangle capacity.
pub const DEFAULT_CAPACITY: usize = 32;
/// Number of capacity increases attempted after an overflow.
pub const MAX_RETRIES: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum VoxelError {
    #[error("point {0:?} lies outside the grid box")]
    OutOfBounds([f64; 3]),
    #[error("cell index ({i}, {j}, {k}) out of range for dims {dims:?}")]
    Index {
        i: usize,
        j: usize,
        k: usize,
        dims: [usize; 3],
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("triangle buffer overflowed: a voxel holds {max_count} triangles, capacity {capacity}")]
    Overflow { max_count: usize, capacity: usize },
    #[error("triangle buffer overflowed; re-run classification with a larger capacity")]
    OverflowedBuffer,
}

/// Grid resolution plus the box it covers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub bbox: Aabb,
}

impl GridSpec {
    pub fn new(dims: [usize; 3], bbox: Aabb) -> Result<Self, VoxelError> {
        if dims.contains(&0) {
            return Err(VoxelError::InvalidGrid(format!("dims must be >= 1, got {dims:?}")));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
        if (0..3).any(|a| !(bbox.min[a] < bbox.max[a])) {
            return Err(VoxelError::InvalidGrid("box min must be < max on every axis".into()));
        }
        Ok(Self { dims, bbox })
    }

    pub fn cubic(n: usize, bbox: Aabb) -> Result<Self, VoxelError> {
        Self::new([n, n, n], bbox)
    }

    pub fn cell_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Same box, every axis subdivided `factor` times finer.
    pub fn refined(&self, factor: usize) -> GridSpec {
        GridSpec {
            dims: self.dims.map(|d| d * factor),
            bbox: self.bbox,
        }
    }

    /// Coordinate of the lower face of cell `idx` on `axis` (`idx == dims`
    /// gives the upper face of the grid). Computed from the ratio
    /// `idx / dims` so that nested grids share bit-identical cell faces.
    pub fn face(&self, axis: usize, idx: usize) -> f64 {
        let n = self.dims[axis];
        if idx == 0 {
            self.bbox.min[axis]
        } else if idx >= n {
            self.bbox.max[axis]
        } else {
            let t = idx as f64 / n as f64;
            self.bbox.min[axis] + t * (self.bbox.max[axis] - self.bbox.min[axis])
        }
    }

    pub fn cell_box(&self, i: usize, j: usize, k: usize) -> Aabb {
        Aabb {
            min: Point3::new(self.face(0, i), self.face(1, j), self.face(2, k)),
            max: Point3::new(self.face(0, i + 1), self.face(1, j + 1), self.face(2, k + 1)),
        }
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.cell_box(i, j, k).center()
    }

    pub fn cell_size(&self) -> Vector3<f64> {
        let e = self.bbox.extent();
        Vector3::new(
            e.x / self.dims[0] as f64,
            e.y / self.dims[1] as f64,
            e.z / self.dims[2] as f64,
        )
    }

    pub fn unflatten(&self, v: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [v % nx, (v / nx) % ny, v / (nx * ny)]
    }
}

/// Cell containing `p`: `floor(N * (p - min) / (max - min))` per axis,
/// clamped to `[0, N-1]`.
pub fn point_to_cell(p: &Point3<f64>, spec: &GridSpec) -> Result<[usize; 3], VoxelError> {
    if !spec.bbox.contains(p) {
        return Err(VoxelError::OutOfBounds([p.x, p.y, p.z]));
    }
    let mut out = [0; 3];
    for a in 0..3 {
        let n = spec.dims[a];
        let t = (p[a] - spec.bbox.min[a]) / (spec.bbox.max[a] - spec.bbox.min[a]);
        let idx = (n as f64 * t).floor();
        out[a] = if idx <= 0.0 { 0 } else { (idx as usize).min(n - 1) };
    }
    Ok(out)
}

/// `k * Ny * Nx + j * Nx + i`.
pub fn flatten_index(i: usize, j: usize, k: usize, spec: &GridSpec) -> Result<usize, VoxelError> {
    let [nx, ny, nz] = spec.dims;
    if i >= nx || j >= ny || k >= nz {
        return Err(VoxelError::Index {
            i,
            j,
            k,
            dims: spec.dims,
        });
    }
    Ok(k * ny * nx + j * nx + i)
}

/// Separating-axis overlap test between a triangle and a closed box.
///
/// Tests the three box face normals, the triangle normal and the nine
/// edge-by-axis cross products. All comparisons are inclusive, so a triangle
/// that merely touches the box counts as intersecting. Degenerate triangles
/// fall out of the same test as segments or points.
pub fn tri_box_intersect(tri: &[Point3<f64>; 3], bbox: &Aabb) -> bool {
    let c = bbox.center();
    let h = (bbox.max - bbox.min) * 0.5;
    let v = [tri[0] - c, tri[1] - c, tri[2] - c];

    // Box face normals.
    for a in 0..3 {
        let lo = v[0][a].min(v[1][a]).min(v[2][a]);
        let hi = v[0][a].max(v[1][a]).max(v[2][a]);
        if lo > h[a] || hi < -h[a] {
            return false;
        }
    }

    let edges = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];

    // Edge x box-axis cross products.
    for e in &edges {
        for a in 0..3 {
            let mut axis = Vector3::zeros();
            axis[a] = 1.0;
            let ax = axis.cross(e);
            if separated_on(&ax, &v, &h) {
                return false;
            }
        }
    }

    // Triangle plane.
    let n = edges[0].cross(&edges[1]);
    !separated_on(&n, &v, &h)
}

#[inline]
fn separated_on(axis: &Vector3<f64>, v: &[Vector3<f64>; 3], h: &Vector3<f64>) -> bool {
    let p0 = axis.dot(&v[0]);
    let p1 = axis.dot(&v[1]);
    let p2 = axis.dot(&v[2]);
    let r = h.x * axis.x.abs() + h.y * axis.y.abs() + h.z * axis.z.abs();
    p0.min(p1).min(p2) > r || p0.max(p1).max(p2) < -r
}

/// Occupancy state of a voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(u8)]
pub enum CellState {
    #[default]
    Outside = 0,
    Inside = 1,
    Boundary = 2,
}

impl CellState {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Outside),
            1 => Some(Self::Inside),
            2 => Some(Self::Boundary),
            _ => None,
        }
    }

    pub fn is_boundary(self) -> bool {
        self == Self::Boundary
    }

    /// Occupancy encoding: Boundary and Inside are occupied.
    pub fn occupancy(self) -> f64 {
        match self {
            Self::Outside => 0.0,
            Self::Inside | Self::Boundary => 1.0,
        }
    }
}

/// Dense voxel grid in `k * Ny * Nx + j * Nx + i` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    pub cells: Vec<CellState>,
    /// Per-cell unit normals, meaningful only at Boundary cells.
    pub normals: Option<Vec<[f32; 3]>>,
}

impl VoxelGrid {
    pub fn new(spec: GridSpec) -> Self {
        Self {
            cells: vec![CellState::Outside; spec.cell_count()],
            spec,
            normals: None,
        }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> CellState {
        let [nx, ny, _] = self.spec.dims;
        self.cells[k * ny * nx + j * nx + i]
    }

    pub fn boundary_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_boundary()).count()
    }

    pub fn boundary_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_boundary())
            .map(|(v, _)| v)
    }
}

/// Fixed-capacity per-voxel triangle lists filled by [`classify_boundary`].
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleBuffer {
    pub capacity: usize,
    /// Number of triangles that tried to append to each voxel. May exceed
    /// `capacity`, in which case `overflowed` is set.
    pub counts: Vec<u32>,
    entries: Vec<u32>,
    pub overflowed: bool,
    /// Largest per-voxel count observed.
    pub max_count: usize,
}

impl TriangleBuffer {
    /// Triangle indices stored for voxel `v`, ascending.
    pub fn entries(&self, v: usize) -> &[u32] {
        let n = (self.counts[v] as usize).min(self.capacity);
        &self.entries[v * self.capacity..v * self.capacity + n]
    }
}

/// Voxel index range touched by a triangle's vertices, widened so that every
/// cell whose closed box (grown by `grow` per axis) touches the triangle's
/// bounding box is included.
fn candidate_range(
    tri: &[Point3<f64>; 3],
    spec: &GridSpec,
    grow: &Vector3<f64>,
) -> Result<[[usize; 2]; 3], VoxelError> {
    let lo = tri[0].inf(&tri[1]).inf(&tri[2]);
    let hi = tri[0].sup(&tri[1]).sup(&tri[2]);
    let cmin = point_to_cell(&lo, spec)?;
    let cmax = point_to_cell(&hi, spec)?;
    let mut out = [[0; 2]; 3];
    for a in 0..3 {
        let (mut i0, mut i1) = (cmin[a], cmax[a]);
        while i0 > 0 && spec.face(a, i0) + grow[a] >= lo[a] {
            i0 -= 1;
        }
        while i1 + 1 < spec.dims[a] && spec.face(a, i1 + 1) - grow[a] <= hi[a] {
            i1 += 1;
        }
        out[a] = [i0, i1];
    }
    Ok(out)
}

/// Marks every voxel intersected by a mesh triangle as Boundary and records
/// which triangles touch it.
///
/// Triangles are processed in parallel; each intersecting voxel gets the
/// triangle index appended through an atomic slot counter. Appends past
/// `capacity` are counted but dropped, and `overflowed` is set so the caller
/// can re-run with `max_count` as the capacity. Stored lists are sorted
/// afterwards, so the result is independent of scheduling.
pub fn classify_boundary(
    mesh: &TriangleMesh,
    spec: &GridSpec,
    capacity: usize,
) -> Result<(VoxelGrid, TriangleBuffer), VoxelError> {
    classify_with_slack(mesh, spec, capacity, 0.0)
}

/// Like [`classify_boundary`], but each cell box is grown by `slack` times
/// the cell size on every side before testing. The result is a superset of
/// the exact classification, which makes it a safe candidate filter for
/// finer grids nested inside these cells: floating-point SAT is not exactly
/// monotone under box containment, and the slack absorbs that rounding.
pub fn classify_boundary_conservative(
    mesh: &TriangleMesh,
    spec: &GridSpec,
    capacity: usize,
    slack: f64,
) -> Result<(VoxelGrid, TriangleBuffer), VoxelError> {
    classify_with_slack(mesh, spec, capacity, slack)
}

fn grown_box(b: Aabb, grow: &Vector3<f64>) -> Aabb {
    Aabb::new(b.min - grow, b.max + grow)
}

fn classify_with_slack(
    mesh: &TriangleMesh,
    spec: &GridSpec,
    capacity: usize,
    slack: f64,
) -> Result<(VoxelGrid, TriangleBuffer), VoxelError> {
    if capacity == 0 {
        return Err(VoxelError::InvalidGrid("triangle capacity must be positive".into()));
    }
    let n_cells = spec.cell_count();
    let counts: Vec<AtomicU32> = (0..n_cells).map(|_| AtomicU32::new(0)).collect();
    let entries: Vec<AtomicU32> = (0..n_cells * capacity).map(|_| AtomicU32::new(0)).collect();
    let overflowed = AtomicBool::new(false);
    let [nx, ny, _] = spec.dims;
    let grow = spec.cell_size() * slack;

    (0..mesh.triangles.len())
        .into_par_iter()
        .try_for_each(|t| -> Result<(), VoxelError> {
            let tri = mesh.triangle(t);
            let [[i0, i1], [j0, j1], [k0, k1]] = candidate_range(&tri, spec, &grow)?;
            for k in k0..=k1 {
                for j in j0..=j1 {
                    for i in i0..=i1 {
                        let cell = spec.cell_box(i, j, k);
                        let cell = if slack > 0.0 { grown_box(cell, &grow) } else { cell };
                        if tri_box_intersect(&tri, &cell) {
                            let v = k * ny * nx + j * nx + i;
                            let slot = counts[v].fetch_add(1, Ordering::Relaxed) as usize;
                            if slot < capacity {
                                entries[v * capacity + slot].store(t as u32, Ordering::Relaxed);
                            } else {
                                overflowed.store(true, Ordering::Relaxed);
                            }
                        }
                    }
                }
            }
            Ok(())
        })?;

    let counts: Vec<u32> = counts.into_iter().map(AtomicU32::into_inner).collect();
    let mut entries: Vec<u32> = entries.into_iter().map(AtomicU32::into_inner).collect();
    entries
        .par_chunks_mut(capacity)
        .zip(counts.par_iter())
        .for_each(|(chunk, &c)| chunk[..(c as usize).min(capacity)].sort_unstable());

    let mut grid = VoxelGrid::new(*spec);
    for (cell, &c) in grid.cells.iter_mut().zip(&counts) {
        if c > 0 {
            *cell = CellState::Boundary;
        }
    }
    let max_count = counts.iter().copied().max().unwrap_or(0) as usize;
    let buffer = TriangleBuffer {
        capacity,
        counts,
        entries,
        overflowed: overflowed.into_inner(),
        max_count,
    };
    Ok((grid, buffer))
}

/// [`classify_boundary`] with the overflow re-run loop: on overflow the
/// capacity grows to at least double (and at least the observed maximum),
/// up to [`MAX_RETRIES`] times.
pub fn classify_boundary_with_retry(
    mesh: &TriangleMesh,
    spec: &GridSpec,
    initial_capacity: usize,
) -> Result<(VoxelGrid, TriangleBuffer), VoxelError> {
    classify_with_retry(mesh, spec, initial_capacity, 0.0)
}

pub(crate) fn classify_with_retry(
    mesh: &TriangleMesh,
    spec: &GridSpec,
    initial_capacity: usize,
    slack: f64,
) -> Result<(VoxelGrid, TriangleBuffer), VoxelError> {
    let mut capacity = initial_capacity.max(1);
    for attempt in 0..=MAX_RETRIES {
        let (grid, buffer) = classify_with_slack(mesh, spec, capacity, slack)?;
        if !buffer.overflowed {
            return Ok((grid, buffer));
        }
        log::warn!(
            "triangle buffer overflow (max {} > capacity {capacity}), retry {}",
            buffer.max_count,
            attempt + 1
        );
        if attempt == MAX_RETRIES {
            return Err(VoxelError::Overflow {
                max_count: buffer.max_count,
                capacity,
            });
        }
        capacity = (capacity * 2).max(buffer.max_count);
    }
    unreachable!()
}

/// Threshold on barycentric coordinates below which a ray is treated as
/// grazing a triangle edge.
const EDGE_EPS: f64 = 1e-9;
/// Ray origin shift, as a fraction of the cell size, applied on edge hits.
const RAY_NUDGE: f64 = 1e-7;

/// Triangles projected onto the yz plane for +x ray casting.
pub(crate) struct ParityCaster<'m> {
    mesh: &'m TriangleMesh,
    /// Indices of triangles with non-zero projected area.
    active: Vec<usize>,
}

impl<'m> ParityCaster<'m> {
    pub(crate) fn new(mesh: &'m TriangleMesh) -> Self {
        let active = (0..mesh.triangles.len())
            .filter(|&t| {
                let [a, b, c] = mesh.triangle(t);
                edge_fn(a.y, a.z, b.y, b.z, c.y, c.z) != 0.0
            })
            .collect();
        Self { mesh, active }
    }

    /// Sorted x coordinates where the line `(y, z)` pierces the mesh. When
    /// the line grazes an edge the origin is nudged by a small fraction of
    /// `cell` and cast again.
    pub(crate) fn crossings(&self, y: f64, z: f64, cell: &Vector3<f64>) -> Vec<f64> {
        let mut hits = Vec::new();
        for attempt in 0..8u32 {
            let yy = y + attempt as f64 * RAY_NUDGE * cell.y;
            let zz = z + attempt as f64 * 0.7 * RAY_NUDGE * cell.z;
            hits.clear();
            if self.cast(yy, zz, &mut hits) {
                break;
            }
        }
        hits.sort_by(f64::total_cmp);
        hits
    }

    /// Returns false if the line grazed an edge.
    fn cast(&self, y: f64, z: f64, hits: &mut Vec<f64>) -> bool {
        let mut clean = true;
        for &t in &self.active {
            let [a, b, c] = self.mesh.triangle(t);
            let ymin = a.y.min(b.y).min(c.y);
            let ymax = a.y.max(b.y).max(c.y);
            let zmin = a.z.min(b.z).min(c.z);
            let zmax = a.z.max(b.z).max(c.z);
            if y < ymin || y > ymax || z < zmin || z > zmax {
                continue;
            }
            let area = edge_fn(a.y, a.z, b.y, b.z, c.y, c.z);
            let l0 = edge_fn(b.y, b.z, c.y, c.z, y, z) / area;
            let l1 = edge_fn(c.y, c.z, a.y, a.z, y, z) / area;
            let l2 = 1.0 - l0 - l1;
            let lmin = l0.min(l1).min(l2);
            if lmin < -EDGE_EPS {
                continue;
            }
            if lmin <= EDGE_EPS {
                clean = false;
            }
            hits.push(l0 * a.x + l1 * b.x + l2 * c.x);
        }
        clean
    }
}

#[inline]
fn edge_fn(ay: f64, az: f64, by: f64, bz: f64, py: f64, pz: f64) -> f64 {
    (by - ay) * (pz - az) - (bz - az) * (py - ay)
}

/// Marks each non-Boundary cell Inside when the +x ray from its center
/// crosses the mesh an odd number of times, Outside otherwise. Boundary
/// cells are left alone. Non-watertight meshes give best-effort results.
pub fn fill_inside(grid: &mut VoxelGrid, mesh: &TriangleMesh) {
    let spec = grid.spec;
    let [nx, ny, _] = spec.dims;
    let cell = spec.cell_size();
    let caster = ParityCaster::new(mesh);
    grid.cells.par_chunks_mut(nx).enumerate().for_each(|(row, cells)| {
        if cells.iter().all(|c| c.is_boundary()) {
            return;
        }
        let (j, k) = (row % ny, row / ny);
        let center = spec.cell_center(0, j, k);
        let hits = caster.crossings(center.y, center.z, &cell);
        for (i, c) in cells.iter_mut().enumerate() {
            if c.is_boundary() {
                continue;
            }
            let x = spec.cell_center(i, j, k).x;
            let beyond = hits.len() - hits.partition_point(|&h| h <= x);
            *c = if beyond % 2 == 1 {
                CellState::Inside
            } else {
                CellState::Outside
            };
        }
    });
}

/// Normalized mean of the unit normals of `tris`; zero if the mean is
/// (nearly) the zero vector.
pub fn mean_normal(mesh: &TriangleMesh, tris: &[u32]) -> [f32; 3] {
    let sum: Vector3<f64> = tris.iter().map(|&t| mesh.unit_normal(t as usize)).sum();
    if tris.is_empty() {
        return [0.0; 3];
    }
    let mean = sum / tris.len() as f64;
    let len = mean.norm();
    if len < 1e-12 {
        [0.0; 3]
    } else {
        let n = mean / len;
        [n.x as f32, n.y as f32, n.z as f32]
    }
}

/// Stores the averaged triangle normal at every Boundary cell.
pub fn average_normals(mesh: &TriangleMesh, buffer: &TriangleBuffer, grid: &mut VoxelGrid) {
    let normals = grid
        .cells
        .par_iter()
        .enumerate()
        .map(|(v, c)| {
            if c.is_boundary() {
                mean_normal(mesh, buffer.entries(v))
            } else {
                [0.0; 3]
            }
        })
        .collect();
    grid.normals = Some(normals);
}

/// Options for single-level voxelization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelizeOptions {
    pub capacity: usize,
    pub inside_fill: bool,
    pub normals: bool,
}

impl Default for VoxelizeOptions {
    fn default() -> Self {
        Self {
            capacity: DEFAULT_CAPACITY,
            inside_fill: false,
            normals: true,
        }
    }
}

/// Full single-level voxelization: boundary classification with overflow
/// retry, then optional inside fill and normal averaging.
pub fn voxelize(
    mesh: &TriangleMesh,
    spec: &GridSpec,
    opts: &VoxelizeOptions,
) -> Result<(VoxelGrid, TriangleBuffer), VoxelError> {
    let (mut grid, buffer) = classify_boundary_with_retry(mesh, spec, opts.capacity)?;
    if opts.inside_fill {
        fill_inside(&mut grid, mesh);
    }
    if opts.normals {
        average_normals(mesh, &buffer, &mut grid);
    }
    Ok((grid, buffer))
}
