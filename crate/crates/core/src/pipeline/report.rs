use std::fmt::Write;
use std::fs;
use std::path::Path;

use super::config::{ExperimentConfig, Mode};
use super::dataset::scan_tree;
use super::train::Model;
use super::PipelineError;
use crate::multires;
use crate::nn::Rng;

/// Exact parameter and per-sample activation element counts for one
/// configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMemory {
    pub mode: Mode,
    /// Input resolution per axis of the (coarse) network.
    pub resolution: usize,
    pub params: usize,
    /// Peak live activations at batch size 1. For multires this is the
    /// coarse network plus one fine-network evaluation.
    pub activations: usize,
    /// Activations of a single fine-network evaluation (multires only).
    pub fine_activations: Option<usize>,
}

/// Stored cell counts of voxelized MRVX files.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationStats {
    pub coarse_cells: usize,
    pub block_cells: usize,
    pub dense_cells: usize,
    /// Boundary cell count per file, in manifest order.
    pub boundary_counts: Vec<usize>,
}

impl RepresentationStats {
    pub fn stored(&self) -> impl Iterator<Item = usize> + '_ {
        self.boundary_counts.iter().map(|b| self.coarse_cells + b * self.block_cells)
    }

    /// Fraction of files whose stored cell count is at most `frac` of the
    /// dense cell count.
    pub fn fraction_within(&self, frac: f64) -> f64 {
        if self.boundary_counts.is_empty() {
            return 0.0;
        }
        let limit = frac * self.dense_cells as f64;
        self.stored().filter(|&s| s as f64 <= limit).count() as f64 / self.boundary_counts.len() as f64
    }

    pub fn max_boundary(&self) -> usize {
        self.boundary_counts.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryReport {
    pub modes: Vec<ModeMemory>,
    pub representation: Option<RepresentationStats>,
}

impl MemoryReport {
    pub fn mode(&self, mode: Mode) -> Option<&ModeMemory> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    /// `activations(a) / activations(b)`.
    pub fn activation_ratio(&self, a: Mode, b: Mode) -> Option<f64> {
        Some(self.mode(a)?.activations as f64 / self.mode(b)?.activations as f64)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("mode,resolution,params,activations,fine_activations\n");
        for m in &self.modes {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                m.mode,
                m.resolution,
                m.params,
                m.activations,
                m.fine_activations.map_or(String::new(), |v| v.to_string())
            );
        }
        if let (Some(d), Some(mr)) = (self.mode(Mode::Dense), self.mode(Mode::Multires)) {
            let _ = writeln!(
                s,
                "dense/multires activation ratio: {:.3}",
                d.activations as f64 / mr.activations as f64
            );
        }
        if let Some(r) = &self.representation {
            let n = r.boundary_counts.len();
            let mean = r.stored().sum::<usize>() as f64 / n.max(1) as f64;
            let _ = writeln!(
                s,
                "representation: {n} files, coarse {} + {} per boundary cell, dense {}, mean stored {mean:.1}, \
                 max boundary {}, fraction <= half dense {:.3}",
                r.coarse_cells,
                r.block_cells,
                r.dense_cells,
                r.max_boundary(),
                r.fraction_within(0.5)
            );
            if let Some(mr) = self.mode(Mode::Multires) {
                let all = mr.activations + mr.fine_activations.unwrap_or(0) * r.max_boundary().saturating_sub(1);
                let _ = writeln!(s, "multires activations with every fine evaluation retained (max file): {all}");
            }
        }
        s
    }
}

/// Counts for one config's default architecture.
pub fn mode_memory(config: &ExperimentConfig) -> Result<ModeMemory, PipelineError> {
    let model = Model::<f32>::build(config, &mut Rng::new(config.seed))?;
    Ok(match &model {
        Model::Plain(net) => ModeMemory {
            mode: config.mode,
            resolution: config.input_resolution(),
            params: net.param_count(),
            activations: net.activation_count(),
            fine_activations: None,
        },
        Model::Multires(m) => ModeMemory {
            mode: config.mode,
            resolution: config.coarse,
            params: model.param_count(),
            activations: m.coarse_net.activation_count() + m.fine_net.activation_count(),
            fine_activations: Some(m.fine_net.activation_count()),
        },
    })
}

/// Reads every MRVX file under `data_dir` and collects stored cell counts.
pub fn representation_stats(data_dir: &Path, classes: &[String]) -> Result<RepresentationStats, PipelineError> {
    let manifest = scan_tree(data_dir, classes, &["mrvx"])?;
    let mut stats: Option<RepresentationStats> = None;
    for e in &manifest.entries {
        let bytes = fs::read(&e.path).map_err(|err| PipelineError::io(&e.path, err))?;
        let mr = multires::deserialize(&bytes).map_err(crate::Error::from)?;
        let coarse_cells = mr.coarse.spec.cell_count();
        let block_cells = mr.block_len();
        let s = stats.get_or_insert_with(|| RepresentationStats {
            coarse_cells,
            block_cells,
            dense_cells: coarse_cells * block_cells,
            boundary_counts: Vec::new(),
        });
        if s.coarse_cells != coarse_cells || s.block_cells != block_cells {
            return Err(PipelineError::Mismatch(format!(
                "{} uses a different grid layout",
                e.path.display()
            )));
        }
        debug_assert_eq!(mr.stored_cell_count(), coarse_cells + mr.boundary_count() * block_cells);
        s.boundary_counts.push(mr.boundary_count());
    }
    stats.ok_or_else(|| PipelineError::Mismatch(format!("no MRVX files under {}", data_dir.display())))
}

/// Analytic memory report over several configs. Representation counts come
/// from the first config whose data directory holds MRVX files.
pub fn memory_report(configs: &[ExperimentConfig]) -> Result<MemoryReport, PipelineError> {
    let modes = configs.iter().map(mode_memory).collect::<Result<_, _>>()?;
    let representation = configs
        .iter()
        .find_map(|c| representation_stats(&c.data_dir, &c.classes).ok());
    Ok(MemoryReport { modes, representation })
}
