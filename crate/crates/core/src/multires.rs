//! Two-level voxel structure: a coarse grid, an exclusive prefix sum over its
//! Boundary cells, and one packed `F×F×F` block of fine cells per Boundary
//! cell.
//!
//! Fine block `b` (the `b`-th Boundary cell in flat-index order) lives at
//! `fine_cells[b * F³ .. (b + 1) * F³]`, and `index.offsets[v] == b` for that
//! cell `v`. Inside a block, cells use the coarse layout (x fastest, then y,
//! then z).

use rayon::prelude::*;

use crate::format::{ByteReader, ByteWriter, FormatError, FLAG_INSIDE_FILL, FLAG_NORMALS};
use crate::mesh::{Aabb, TriangleMesh};
use crate::voxel::{
    self, mean_normal, tri_box_intersect, CellState, GridSpec, ParityCaster, TriangleBuffer,
    VoxelError, VoxelGrid, VoxelizeOptions,
};

/// Exclusive prefix sum of the Boundary indicator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixSumIndex {
    pub offsets: Vec<u32>,
    pub total: u32,
}

/// Below this length the scan runs sequentially.
const SCAN_CHUNK: usize = 4096;

/// Exclusive scan over 0/1 flags: per-chunk sums, a scan over the chunk
/// sums, then independent local scans seeded with the chunk offsets.
pub fn exclusive_scan(flags: &[bool]) -> PrefixSumIndex {
    let chunk_sums: Vec<u32> = flags
        .par_chunks(SCAN_CHUNK)
        .map(|c| c.iter().filter(|&&f| f).count() as u32)
        .collect();
    let mut seeds = Vec::with_capacity(chunk_sums.len());
    let mut acc = 0u32;
    for s in &chunk_sums {
        seeds.push(acc);
        acc += s;
    }
    let mut offsets = vec![0u32; flags.len()];
    offsets
        .par_chunks_mut(SCAN_CHUNK)
        .zip(flags.par_chunks(SCAN_CHUNK))
        .zip(seeds.par_iter())
        .for_each(|((out, fl), &seed)| {
            let mut run = seed;
            for (o, &f) in out.iter_mut().zip(fl) {
                *o = run;
                run += f as u32;
            }
        });
    PrefixSumIndex { offsets, total: acc }
}

pub fn build_prefix_index(grid: &VoxelGrid) -> PrefixSumIndex {
    let flags: Vec<bool> = grid.cells.iter().map(|c| c.is_boundary()).collect();
    exclusive_scan(&flags)
}

/// Coarse grid plus packed fine blocks under each Boundary cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiResGrid {
    pub coarse: VoxelGrid,
    pub fine_factor: usize,
    pub index: PrefixSumIndex,
    pub fine_cells: Vec<CellState>,
    /// Per fine cell, meaningful only at fine Boundary cells.
    pub fine_normals: Option<Vec<[f32; 3]>>,
    pub inside_filled: bool,
}

impl MultiResGrid {
    pub fn block_len(&self) -> usize {
        self.fine_factor.pow(3)
    }

    pub fn boundary_count(&self) -> usize {
        self.index.total as usize
    }

    /// Fine block of the `b`-th Boundary cell.
    pub fn block(&self, b: usize) -> &[CellState] {
        let n = self.block_len();
        &self.fine_cells[b * n..(b + 1) * n]
    }

    /// Fine block of coarse cell `v`, if it is a Boundary cell.
    pub fn block_of_cell(&self, v: usize) -> Option<&[CellState]> {
        self.coarse.cells[v]
            .is_boundary()
            .then(|| self.block(self.index.offsets[v] as usize))
    }

    /// Resolution of the equivalent dense grid.
    pub fn fine_spec(&self) -> GridSpec {
        self.coarse.spec.refined(self.fine_factor)
    }

    /// Cells actually stored: coarse cells plus one fine block per Boundary cell.
    pub fn stored_cell_count(&self) -> usize {
        self.coarse.cells.len() + self.boundary_count() * self.block_len()
    }

    /// Coarse Boundary cells paired with their block ordinals, ascending.
    pub fn boundary_blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.coarse
            .boundary_indices()
            .map(|v| (v, self.index.offsets[v] as usize))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FineOptions {
    /// Ray-parity fill of non-Boundary fine cells; otherwise they stay Outside.
    pub inside_fill: bool,
    pub normals: bool,
}

/// Slack, in coarse cell sizes, used by the coarse pass of
/// [`voxelize_multires`].
pub const COARSE_SLACK: f64 = 1e-6;

/// Fine-level classification: each fine cell of each Boundary coarse cell
/// is tested only against the triangles listed for that coarse cell.
/// Blocks are independent and processed in parallel.
///
/// A coarse Boundary cell whose block ends up without any fine Boundary cell
/// is demoted (its block is dropped, its normal zeroed) so that coarse
/// Boundary always means at least one fine Boundary cell. With
/// `inside_fill`, non-Boundary coarse cells are then parity-filled as well.
pub fn voxelize_fine(
    mesh: &TriangleMesh,
    mut coarse: VoxelGrid,
    buffer: &TriangleBuffer,
    fine_factor: usize,
    opts: &FineOptions,
) -> Result<MultiResGrid, VoxelError> {
    if buffer.overflowed {
        return Err(VoxelError::OverflowedBuffer);
    }
    if fine_factor == 0 {
        return Err(VoxelError::InvalidGrid("fine factor must be >= 1".into()));
    }
    if buffer.counts.len() != coarse.cells.len() {
        return Err(VoxelError::InvalidGrid("triangle buffer does not match the coarse grid".into()));
    }
    let f = fine_factor;
    let block = f * f * f;
    let fine_spec = coarse.spec.refined(f);
    let cell = fine_spec.cell_size();
    let caster = opts.inside_fill.then(|| ParityCaster::new(mesh));
    let boundary: Vec<usize> = coarse.boundary_indices().collect();

    let mut fine_cells = vec![CellState::Outside; boundary.len() * block];
    let mut fine_normals = vec![[0.0f32; 3]; if opts.normals { boundary.len() * block } else { 0 }];
    let mut normal_chunks: Vec<&mut [[f32; 3]]> = if opts.normals {
        fine_normals.chunks_mut(block).collect()
    } else {
        (0..boundary.len()).map(|_| &mut [][..]).collect()
    };

    fine_cells
        .par_chunks_mut(block)
        .zip(normal_chunks.par_iter_mut())
        .zip(boundary.par_iter())
        .for_each(|((cells, normals), &v)| {
            let [ci, cj, ck] = coarse.spec.unflatten(v);
            let tris = buffer.entries(v);
            let mut hit = Vec::with_capacity(tris.len());
            for c in 0..f {
                for b in 0..f {
                    for a in 0..f {
                        let local = c * f * f + b * f + a;
                        let bbox = fine_spec.cell_box(ci * f + a, cj * f + b, ck * f + c);
                        hit.clear();
                        hit.extend(
                            tris.iter()
                                .copied()
                                .filter(|&t| tri_box_intersect(&mesh.triangle(t as usize), &bbox)),
                        );
                        if !hit.is_empty() {
                            cells[local] = CellState::Boundary;
                            if !normals.is_empty() {
                                normals[local] = mean_normal(mesh, &hit);
                            }
                        }
                    }
                }
            }
            if let Some(caster) = &caster {
                for c in 0..f {
                    for b in 0..f {
                        let row = &mut cells[(c * f + b) * f..(c * f + b + 1) * f];
                        if row.iter().all(|s| s.is_boundary()) {
                            continue;
                        }
                        let (gj, gk) = (cj * f + b, ck * f + c);
                        let center = fine_spec.cell_center(0, gj, gk);
                        let hits = caster.crossings(center.y, center.z, &cell);
                        for (a, s) in row.iter_mut().enumerate() {
                            if s.is_boundary() {
                                continue;
                            }
                            let x = fine_spec.cell_center(ci * f + a, gj, gk).x;
                            let beyond = hits.len() - hits.partition_point(|&h| h <= x);
                            if beyond % 2 == 1 {
                                *s = CellState::Inside;
                            }
                        }
                    }
                }
            }
        });
    drop(normal_chunks);

    let keep: Vec<bool> = fine_cells
        .chunks(block)
        .map(|c| c.iter().any(|s| s.is_boundary()))
        .collect();
    if keep.contains(&false) {
        for (&v, _) in boundary.iter().zip(&keep).filter(|(_, k)| !**k) {
            coarse.cells[v] = CellState::Outside;
            if let Some(n) = coarse.normals.as_mut() {
                n[v] = [0.0; 3];
            }
        }
        fine_cells = retain_blocks(fine_cells, block, &keep);
        if opts.normals {
            fine_normals = retain_blocks(fine_normals, block, &keep);
        }
    }
    if opts.inside_fill {
        voxel::fill_inside(&mut coarse, mesh);
    }
    let index = build_prefix_index(&coarse);

    Ok(MultiResGrid {
        coarse,
        fine_factor: f,
        index,
        fine_cells,
        fine_normals: opts.normals.then_some(fine_normals),
        inside_filled: opts.inside_fill,
    })
}

fn retain_blocks<T: Copy>(data: Vec<T>, block: usize, keep: &[bool]) -> Vec<T> {
    data.chunks(block)
        .zip(keep)
        .filter(|(_, k)| **k)
        .flat_map(|(c, _)| c.iter().copied())
        .collect()
}

/// Coarse voxelization over `bbox` followed by [`voxelize_fine`]. The
/// inside-fill flag applies to both levels.
///
/// The coarse pass is conservative (see
/// [`voxel::classify_boundary_conservative`]), so the fine level sees every
/// triangle a direct dense voxelization at `coarse × F` would, and the
/// flattened result matches it exactly.
pub fn voxelize_multires(
    mesh: &TriangleMesh,
    bbox: Aabb,
    coarse_dims: [usize; 3],
    fine_factor: usize,
    opts: &VoxelizeOptions,
) -> Result<MultiResGrid, VoxelError> {
    let spec = GridSpec::new(coarse_dims, bbox)?;
    let (mut coarse, buffer) = voxel::classify_with_retry(mesh, &spec, opts.capacity, COARSE_SLACK)?;
    if opts.normals {
        voxel::average_normals(mesh, &buffer, &mut coarse);
    }
    voxelize_fine(
        mesh,
        coarse,
        &buffer,
        fine_factor,
        &FineOptions {
            inside_fill: opts.inside_fill,
            normals: opts.normals,
        },
    )
}

/// Expands to a dense grid at `coarse × F`: fine states under Boundary
/// cells, replicated coarse states elsewhere.
pub fn flatten_to_dense(mr: &MultiResGrid) -> VoxelGrid {
    let f = mr.fine_factor;
    let spec = mr.fine_spec();
    let [nx, ny, _] = spec.dims;
    let mut dense = VoxelGrid::new(spec);
    let with_normals = mr.coarse.normals.is_some() && mr.fine_normals.is_some();
    let mut normals = vec![[0.0f32; 3]; if with_normals { spec.cell_count() } else { 0 }];
    for (v, &state) in mr.coarse.cells.iter().enumerate() {
        let [ci, cj, ck] = mr.coarse.spec.unflatten(v);
        let block = state.is_boundary().then(|| mr.index.offsets[v] as usize);
        for c in 0..f {
            for b in 0..f {
                for a in 0..f {
                    let local = c * f * f + b * f + a;
                    let d = (ck * f + c) * ny * nx + (cj * f + b) * nx + (ci * f + a);
                    match block {
                        Some(blk) => {
                            let src = blk * f * f * f + local;
                            dense.cells[d] = mr.fine_cells[src];
                            if with_normals {
                                normals[d] = mr.fine_normals.as_ref().unwrap()[src];
                            }
                        }
                        None => dense.cells[d] = state,
                    }
                }
            }
        }
    }
    if with_normals {
        dense.normals = Some(normals);
    }
    dense
}

pub const MRVX_MAGIC: &[u8; 4] = b"MRVX";
pub const MRVX_VERSION: u32 = 1;

/// Encodes the `MRVX` binary format (little-endian throughout).
pub fn serialize(mr: &MultiResGrid) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MRVX_MAGIC);
    w.u32(MRVX_VERSION);
    for d in mr.coarse.spec.dims {
        w.len_u32(d);
    }
    w.aabb(&mr.coarse.spec.bbox);
    w.len_u32(mr.fine_factor);
    let normals = match (&mr.coarse.normals, &mr.fine_normals) {
        (Some(c), Some(f)) => Some((c, f)),
        _ => None,
    };
    let mut flags = 0;
    if normals.is_some() {
        flags |= FLAG_NORMALS;
    }
    if mr.inside_filled {
        flags |= FLAG_INSIDE_FILL;
    }
    w.u32(flags);
    w.cells(&mr.coarse.cells);
    for &o in &mr.index.offsets {
        w.u32(o);
    }
    w.u32(mr.index.total);
    w.cells(&mr.fine_cells);
    if let Some((coarse_n, fine_n)) = normals {
        for v in mr.coarse.boundary_indices() {
            for c in coarse_n[v] {
                w.f32(c);
            }
        }
        let fine_ids: Vec<usize> = (0..mr.fine_cells.len()).filter(|&i| mr.fine_cells[i].is_boundary()).collect();
        w.len_u32(fine_ids.len());
        for i in fine_ids {
            for c in fine_n[i] {
                w.f32(c);
            }
        }
    }
    w.buf
}

/// Decodes and validates an `MRVX` byte stream.
pub fn deserialize(bytes: &[u8]) -> Result<MultiResGrid, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(MRVX_MAGIC)?;
    r.version(MRVX_VERSION)?;
    let spec = r.grid_spec()?;
    let f = r.u32("fine factor")? as usize;
    if f == 0 {
        return Err(FormatError::new("fine factor", "must be >= 1"));
    }
    let flags = r.u32("flags")?;
    let n = spec.cell_count();
    let cells = r.cells(n, "coarse cells")?;
    let raw = r.take(4 * n, "prefix offsets")?;
    let offsets: Vec<u32> = raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    let total = r.u32("total")?;
    let mut coarse = VoxelGrid {
        spec,
        cells,
        normals: None,
    };
    let index = build_prefix_index(&coarse);
    if index.offsets != offsets {
        return Err(FormatError::new("prefix offsets", "offsets are not the exclusive scan of the boundary flags"));
    }
    if index.total != total {
        return Err(FormatError::new(
            "total",
            format!("stored total {total} differs from boundary count {}", index.total),
        ));
    }
    let block = f * f * f;
    let fine_len = (total as usize).checked_mul(block).ok_or_else(|| FormatError::new("fine cells", "size overflow"))?;
    let fine_cells = r.cells(fine_len, "fine cells")?;

    let mut fine_normals = None;
    if flags & FLAG_NORMALS != 0 {
        let mut cn = vec![[0.0f32; 3]; n];
        for v in coarse.boundary_indices().collect::<Vec<_>>() {
            cn[v] = r.normal("coarse normals")?;
        }
        coarse.normals = Some(cn);
        let count = r.u32("fine normals")? as usize;
        let ids: Vec<usize> = (0..fine_len).filter(|&i| fine_cells[i].is_boundary()).collect();
        if count != ids.len() {
            return Err(FormatError::new(
                "fine normals",
                format!("count {count} differs from fine boundary count {}", ids.len()),
            ));
        }
        let mut fnrm = vec![[0.0f32; 3]; fine_len];
        for i in ids {
            fnrm[i] = r.normal("fine normals")?;
        }
        fine_normals = Some(fnrm);
    }
    r.finish()?;
    Ok(MultiResGrid {
        coarse,
        fine_factor: f,
        index,
        fine_cells,
        fine_normals,
        inside_filled: flags & FLAG_INSIDE_FILL != 0,
    })
}
