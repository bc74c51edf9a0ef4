//! End-to-end harness: dataset scanning, batch voxelization, training and
//! evaluation of the coarse, dense and multires configurations, analytic
//! memory accounting and slice rendering.

use std::path::{Path, PathBuf};

use thiserror::Error;

mod config;
mod dataset;
mod render;
mod report;
mod train;

pub use config::{ExperimentConfig, Mode, Precision};
pub use dataset::{
    output_path, scan_dataset, scan_tree, voxelize_dataset, voxelize_mesh_file, DatasetError, Manifest,
    ManifestEntry, Split, VoxelizeJob, VoxelizeSummary, MESH_EXTENSIONS, VOXEL_EXTENSIONS,
};
pub use render::{load_grid, parse_axis, render_slices, shade, slice_images, GrayImage};
pub use report::{mode_memory, memory_report, representation_stats, MemoryReport, ModeMemory, RepresentationStats};
pub use train::{
    ensure_voxelized, eval_checkpoint, evaluate, load_sample, load_split, run_experiment, voxel_manifest,
    CheckpointInfo, EpochRecord, EvalMetrics, LabeledSet, Model, Sample, TrainRun, CHECKPOINT_FILE, METRICS_FILE,
    METRICS_HEADER, TIMING_FILE,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Core(#[from] crate::Error),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<crate::nn::NnError> for PipelineError {
    fn from(e: crate::nn::NnError) -> Self {
        PipelineError::Core(e.into())
    }
}

impl From<crate::mrcnn::MrcnnError> for PipelineError {
    fn from(e: crate::mrcnn::MrcnnError) -> Self {
        PipelineError::Core(e.into())
    }
}

/// Environment variable capping worker threads; 0 or unset means one per
/// core.
pub const THREADS_ENV: &str = "MRVOX_THREADS";

/// Configures the global worker pool from [`THREADS_ENV`]. Returns the
/// thread count in effect. Safe to call more than once; only the first
/// call takes effect.
pub fn init_thread_pool() -> usize {
    let requested = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(requested).build_global() {
        log::debug!("thread pool already initialized: {e}");
    }
    rayon::current_num_threads()
}
