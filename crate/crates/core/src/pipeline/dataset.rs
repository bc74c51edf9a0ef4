use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use super::PipelineError;
use crate::format::write_dense;
use crate::mesh::{compute_aabb, load_mesh, DEFAULT_PAD_FRACTION};
use crate::multires::{self, voxelize_multires};
use crate::voxel::{voxelize, GridSpec, VoxelizeOptions};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DatasetError {
    #[error("class directory {0:?} not found")]
    MissingClass(String),
    #[error("class {0:?} has no usable files")]
    EmptyClass(String),
    #[error("{failed} of {total} meshes failed to voxelize, above the configured threshold")]
    TooManyFailures { failed: usize, total: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    /// Index into [`Manifest::classes`].
    pub label: usize,
    pub split: Split,
}

/// Files of a `<root>/<class>/{train,test}/` tree, sorted by class order,
/// then split, then file name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    /// Files with an accepted extension that could not be opened.
    pub unreadable: Vec<PathBuf>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Keeps the first `limit` entries per (class, split); 0 keeps all.
    pub fn limit_per_class(&mut self, train: usize, test: usize) {
        let mut seen = std::collections::HashMap::new();
        self.entries.retain(|e| {
            let cap = match e.split {
                Split::Train => train,
                Split::Test => test,
            };
            let n = seen.entry((e.label, e.split)).or_insert(0usize);
            *n += 1;
            cap == 0 || *n <= cap
        });
    }
}

pub const MESH_EXTENSIONS: &[&str] = &["off", "stl"];
pub const VOXEL_EXTENSIONS: &[&str] = &["mrvx", "vxgd"];

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

/// Scans a tree for files with one of `exts`. Other files are skipped with
/// a warning.
pub fn scan_tree(root: &Path, classes: &[String], exts: &[&str]) -> Result<Manifest, PipelineError> {
    let mut manifest = Manifest {
        classes: classes.to_vec(),
        ..Default::default()
    };
    for (label, class) in classes.iter().enumerate() {
        let class_dir = root.join(class);
        if !class_dir.is_dir() {
            return Err(DatasetError::MissingClass(class.clone()).into());
        }
        let mut found = 0;
        for split in Split::ALL {
            let dir = class_dir.join(split.dir_name());
            if !dir.is_dir() {
                continue;
            }
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| PipelineError::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for path in files {
                if !has_extension(&path, exts) {
                    if has_extension(&path, MESH_EXTENSIONS) || has_extension(&path, VOXEL_EXTENSIONS) {
                        log::debug!("skipping {}: not requested here", path.display());
                    } else {
                        log::warn!("skipping {}: unsupported extension", path.display());
                    }
                    continue;
                }
                if fs::File::open(&path).is_err() {
                    log::warn!("skipping {}: unreadable", path.display());
                    manifest.unreadable.push(path);
                    continue;
                }
                found += 1;
                manifest.entries.push(ManifestEntry { path, label, split });
            }
        }
        if found == 0 {
            return Err(DatasetError::EmptyClass(class.clone()).into());
        }
    }
    Ok(manifest)
}

/// Scans a mesh dataset (`.off` and `.stl` files).
pub fn scan_dataset(root: &Path, classes: &[String]) -> Result<Manifest, PipelineError> {
    scan_tree(root, classes, MESH_EXTENSIONS)
}

/// What [`voxelize_dataset`] produces per mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelizeJob {
    pub coarse: usize,
    pub fine: usize,
    /// Also write a direct dense voxelization at `coarse × fine`.
    pub dense: bool,
    pub inside_fill: bool,
    pub normals: bool,
    pub out_dir: PathBuf,
    pub failure_threshold: f64,
    /// Leave existing outputs untouched.
    pub skip_existing: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VoxelizeSummary {
    pub written: Vec<PathBuf>,
    pub skipped: usize,
    pub failures: Vec<(PathBuf, String)>,
}

/// Output path `<out>/<class>/<split>/<stem>.<ext>` for a manifest entry.
pub fn output_path(out_dir: &Path, manifest: &Manifest, entry: &ManifestEntry, ext: &str) -> PathBuf {
    let stem = entry.path.file_stem().unwrap_or_default();
    out_dir
        .join(&manifest.classes[entry.label])
        .join(entry.split.dir_name())
        .join(stem)
        .with_extension(ext)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| PipelineError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

/// Voxelizes one mesh into MRVX (and VXGD when dense output is requested)
/// bytes, each model in its own padded bounding box.
pub fn voxelize_mesh_file(path: &Path, job: &VoxelizeJob) -> Result<(Vec<u8>, Option<Vec<u8>>), crate::Error> {
    let mesh = load_mesh(path)?;
    let bbox = compute_aabb(&mesh, DEFAULT_PAD_FRACTION)?;
    let opts = VoxelizeOptions {
        inside_fill: job.inside_fill,
        normals: job.normals,
        ..Default::default()
    };
    let mr = voxelize_multires(&mesh, bbox, [job.coarse; 3], job.fine, &opts)?;
    let dense = if job.dense {
        let spec = GridSpec::cubic(job.coarse * job.fine, bbox)?;
        let (grid, _) = voxelize(&mesh, &spec, &opts)?;
        Some(write_dense(&grid, job.inside_fill))
    } else {
        None
    };
    Ok((multires::serialize(&mr), dense))
}

/// Voxelizes every manifest entry in parallel. Failures are logged and
/// collected; the call errors only when the failed fraction exceeds
/// `job.failure_threshold`.
pub fn voxelize_dataset(manifest: &Manifest, job: &VoxelizeJob) -> Result<VoxelizeSummary, PipelineError> {
    enum Outcome {
        Written(Vec<PathBuf>),
        Skipped,
        Failed(PathBuf, String),
    }
    let outcomes: Vec<Result<Outcome, PipelineError>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let mrvx = output_path(&job.out_dir, manifest, entry, "mrvx");
            let vxgd = output_path(&job.out_dir, manifest, entry, "vxgd");
            if job.skip_existing && mrvx.is_file() && (!job.dense || vxgd.is_file()) {
                return Ok(Outcome::Skipped);
            }
            match voxelize_mesh_file(&entry.path, job) {
                Ok((mr_bytes, dense_bytes)) => {
                    write_atomic(&mrvx, &mr_bytes)?;
                    let mut written = vec![mrvx];
                    if let Some(b) = dense_bytes {
                        write_atomic(&vxgd, &b)?;
                        written.push(vxgd);
                    }
                    Ok(Outcome::Written(written))
                }
                Err(e) => {
                    log::warn!("failed to voxelize {}: {e}", entry.path.display());
                    Ok(Outcome::Failed(entry.path.clone(), e.to_string()))
                }
            }
        })
        .collect();
    let mut summary = VoxelizeSummary::default();
    for o in outcomes {
        match o? {
            Outcome::Written(p) => summary.written.extend(p),
            Outcome::Skipped => summary.skipped += 1,
            Outcome::Failed(p, msg) => summary.failures.push((p, msg)),
        }
    }
    let total = manifest.entries.len();
    let failed = summary.failures.len();
    if total > 0 && failed as f64 > job.failure_threshold * total as f64 {
        return Err(DatasetError::TooManyFailures { failed, total }.into());
    }
    Ok(summary)
}
