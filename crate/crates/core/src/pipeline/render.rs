use std::fs;
use std::path::{Path, PathBuf};

use super::PipelineError;
use crate::format::read_dense;
use crate::multires::{self, flatten_to_dense};
use crate::voxel::{CellState, VoxelGrid};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Binary PGM (P5) encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

pub fn shade(c: CellState) -> u8 {
    match c {
        CellState::Outside => 0,
        CellState::Inside => 128,
        CellState::Boundary => 255,
    }
}

/// Parses an axis name (`x`, `y`, `z`) into 0, 1, 2.
pub fn parse_axis(s: &str) -> Option<usize> {
    match s {
        "x" | "X" => Some(0),
        "y" | "Y" => Some(1),
        "z" | "Z" => Some(2),
        _ => None,
    }
}

/// One image per index along `axis`. Slicing along z gives `Nx × Ny`
/// images; along y, `Nx × Nz`; along x, `Ny × Nz`.
pub fn slice_images(grid: &VoxelGrid, axis: usize) -> Vec<GrayImage> {
    let dims = grid.spec.dims;
    let (u, v) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    (0..dims[axis])
        .map(|s| {
            let mut pixels = Vec::with_capacity(dims[u] * dims[v]);
            for b in 0..dims[v] {
                for a in 0..dims[u] {
                    let mut ijk = [0; 3];
                    ijk[axis] = s;
                    ijk[u] = a;
                    ijk[v] = b;
                    pixels.push(shade(grid.get(ijk[0], ijk[1], ijk[2])));
                }
            }
            GrayImage {
                width: dims[u],
                height: dims[v],
                pixels,
            }
        })
        .collect()
}

/// Loads an MRVX (flattened) or VXGD file as a dense grid.
pub fn load_grid(path: &Path) -> Result<VoxelGrid, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    if bytes.starts_with(multires::MRVX_MAGIC) {
        let mr = multires::deserialize(&bytes).map_err(crate::Error::from)?;
        Ok(flatten_to_dense(&mr))
    } else {
        Ok(read_dense(&bytes).map_err(crate::Error::from)?.0)
    }
}

/// Writes `slice_<axis>_<index>.pgm` files for `input` into `out_dir`.
pub fn render_slices(input: &Path, axis: usize, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let grid = load_grid(input)?;
    fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let name = ["x", "y", "z"][axis.min(2)];
    slice_images(&grid, axis)
        .into_iter()
        .enumerate()
        .map(|(i, img)| {
            let path = out_dir.join(format!("slice_{name}_{i}.pgm"));
            fs::write(&path, img.to_pgm()).map_err(|e| PipelineError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
