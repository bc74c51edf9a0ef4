//! Little-endian byte encoding helpers shared by the on-disk formats, and the
//! `VXGD` dense-grid file.
//!
//! `VXGD` layout (little-endian): magic `VXGD`; version u32 = 1; dims 3×u32;
//! AABB 6×f64 (min xyz, max xyz); flags u32 (bit0 normals present, bit1
//! inside fill applied); cells u8 × N; if normals: boundary count u32, then
//! 3×f32 per Boundary cell in flat-index order.

use nalgebra::Point3;
use thiserror::Error;

use crate::mesh::Aabb;
use crate::voxel::{CellState, GridSpec, VoxelGrid};

#[derive(Debug, Error, PartialEq)]
#[error("format error in section `{section}`: {msg}")]
pub struct FormatError {
    pub section: &'static str,
    pub msg: String,
}

impl FormatError {
    pub fn new(section: &'static str, msg: impl Into<String>) -> Self {
        Self {
            section,
            msg: msg.into(),
        }
    }
}

pub const FLAG_NORMALS: u32 = 1;
pub const FLAG_INSIDE_FILL: u32 = 2;

#[derive(Default)]
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn len_u32(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("length exceeds u32"));
    }
    pub fn aabb(&mut self, b: &Aabb) {
        for a in 0..3 {
            self.f64(b.min[a]);
        }
        for a in 0..3 {
            self.f64(b.max[a]);
        }
    }
    pub fn cells(&mut self, cells: &[CellState]) {
        self.buf.extend(cells.iter().map(|&c| c as u8));
    }
}

pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| {
            FormatError::new(
                section,
                format!("truncated: need {n} bytes at offset {}, {} available", self.pos, self.data.len() - self.pos),
            )
        })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self, section: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, section)?[0])
    }
    pub fn u32(&mut self, section: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }
    pub fn u64(&mut self, section: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }
    pub fn f32(&mut self, section: &'static str) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }
    pub fn f64(&mut self, section: &'static str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    pub fn magic(&mut self, want: &[u8; 4]) -> Result<(), FormatError> {
        let got = self.take(4, "magic")?;
        if got != want {
            return Err(FormatError::new(
                "magic",
                format!("expected {:?}, found {:?}", String::from_utf8_lossy(want), String::from_utf8_lossy(got)),
            ));
        }
        Ok(())
    }

    pub fn version(&mut self, want: u32) -> Result<(), FormatError> {
        let v = self.u32("version")?;
        if v != want {
            return Err(FormatError::new("version", format!("unsupported version {v}, expected {want}")));
        }
        Ok(())
    }

    pub fn grid_spec(&mut self) -> Result<GridSpec, FormatError> {
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = self.u32("dims")? as usize;
        }
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for v in &mut lo {
            *v = self.f64("aabb")?;
        }
        for v in &mut hi {
            *v = self.f64("aabb")?;
        }
        let bbox = Aabb::new(Point3::from(lo), Point3::from(hi));
        GridSpec::new(dims, bbox).map_err(|e| FormatError::new("dims", e.to_string()))
    }

    pub fn cells(&mut self, n: usize, section: &'static str) -> Result<Vec<CellState>, FormatError> {
        self.take(n, section)?
            .iter()
            .map(|&b| CellState::from_u8(b).ok_or_else(|| FormatError::new(section, format!("invalid cell state {b}"))))
            .collect()
    }

    pub fn normal(&mut self, section: &'static str) -> Result<[f32; 3], FormatError> {
        Ok([self.f32(section)?, self.f32(section)?, self.f32(section)?])
    }

    pub fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.data.len() {
            return Err(FormatError::new(
                "trailer",
                format!("{} unexpected trailing bytes", self.data.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub const VXGD_MAGIC: &[u8; 4] = b"VXGD";
pub const VXGD_VERSION: u32 = 1;

/// Encodes a dense grid as `VXGD`.
pub fn write_dense(grid: &VoxelGrid, inside_filled: bool) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(VXGD_MAGIC);
    w.u32(VXGD_VERSION);
    for d in grid.spec.dims {
        w.len_u32(d);
    }
    w.aabb(&grid.spec.bbox);
    let mut flags = 0;
    if grid.normals.is_some() {
        flags |= FLAG_NORMALS;
    }
    if inside_filled {
        flags |= FLAG_INSIDE_FILL;
    }
    w.u32(flags);
    w.cells(&grid.cells);
    if let Some(normals) = &grid.normals {
        let ids: Vec<usize> = grid.boundary_indices().collect();
        w.len_u32(ids.len());
        for v in ids {
            for c in normals[v] {
                w.f32(c);
            }
        }
    }
    w.buf
}

/// Decodes a `VXGD` file. Returns the grid and its inside-fill flag.
pub fn read_dense(bytes: &[u8]) -> Result<(VoxelGrid, bool), FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(VXGD_MAGIC)?;
    r.version(VXGD_VERSION)?;
    let spec = r.grid_spec()?;
    let flags = r.u32("flags")?;
    let cells = r.cells(spec.cell_count(), "cells")?;
    let mut grid = VoxelGrid {
        spec,
        cells,
        normals: None,
    };
    if flags & FLAG_NORMALS != 0 {
        let n = r.u32("normals")? as usize;
        let ids: Vec<usize> = grid.boundary_indices().collect();
        if n != ids.len() {
            return Err(FormatError::new(
                "normals",
                format!("count {n} differs from boundary cell count {}", ids.len()),
            ));
        }
        let mut normals = vec![[0.0f32; 3]; spec.cell_count()];
        for v in ids {
            normals[v] = r.normal("normals")?;
        }
        grid.normals = Some(normals);
    }
    r.finish()?;
    Ok((grid, flags & FLAG_INSIDE_FILL != 0))
}
