use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mrvox::pipeline::{
    self, eval_checkpoint, memory_report, parse_axis, render_slices, run_experiment, scan_dataset, voxelize_dataset,
    voxelize_mesh_file, ExperimentConfig, Split, VoxelizeJob,
};

/// Two-level sparse voxelization and multi-resolution CNN training.
#[derive(Debug, Parser)]
#[command(name = "mrvox", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Voxelize a mesh file or a `<class>/{train,test}/` mesh tree.
    Voxelize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 8)]
        coarse: usize,
        #[arg(long, default_value_t = 4)]
        fine: usize,
        /// Also write a direct dense grid at coarse × fine.
        #[arg(long)]
        dense: bool,
        #[arg(long)]
        inside_fill: bool,
        /// Store averaged surface normals.
        #[arg(long)]
        normals: bool,
        /// Comma-separated classes; defaults to every subdirectory.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        #[arg(long, default_value_t = 0.1)]
        failure_threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the model described by a key = value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a voxelized data tree.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Print exact parameter and activation counts for one or more configs.
    ReportMemory {
        #[arg(long, required = true, num_args = 1..)]
        config: Vec<PathBuf>,
    },
    /// Write one PGM per slice of an MRVX or dense grid file.
    RenderSlices {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "z")]
        axis: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn subdirectories(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    Ok(names)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let threads = pipeline::init_thread_pool();
    log::debug!("using {threads} worker threads");

    match Cli::parse().command {
        Command::Voxelize {
            input,
            coarse,
            fine,
            dense,
            inside_fill,
            normals,
            classes,
            failure_threshold,
            out,
        } => {
            let job = VoxelizeJob {
                coarse,
                fine,
                dense,
                inside_fill,
                normals,
                out_dir: out.clone(),
                failure_threshold,
                skip_existing: false,
            };
            if input.is_file() {
                let (mr, grid) = voxelize_mesh_file(&input, &job)?;
                let stem = input.file_stem().context("input has no file name")?;
                let base = out.join(stem);
                write_file(&base.with_extension("mrvx"), &mr)?;
                if let Some(g) = grid {
                    write_file(&base.with_extension("vxgd"), &g)?;
                }
                println!("wrote {}", base.with_extension("mrvx").display());
            } else {
                let classes = if classes.is_empty() { subdirectories(&input)? } else { classes };
                if classes.is_empty() {
                    bail!("no class directories under {}", input.display());
                }
                let manifest = scan_dataset(&input, &classes)?;
                let summary = voxelize_dataset(&manifest, &job)?;
                println!(
                    "wrote {} files for {} meshes; {} failed",
                    summary.written.len(),
                    manifest.entries.len(),
                    summary.failures.len()
                );
                for (p, msg) in &summary.failures {
                    println!("  failed: {}: {msg}", p.display());
                }
            }
        }
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let run = run_experiment(&cfg)?;
            match run.records.last() {
                Some(r) => println!(
                    "{} epochs; final train loss {:.4}, val loss {:.4}, val accuracy {:.4}",
                    run.records.len(),
                    r.train_loss,
                    r.val_loss,
                    r.val_accuracy
                ),
                None => println!("0 epochs; initial checkpoint written"),
            }
            println!("metrics: {}", run.metrics.display());
            println!("checkpoint: {}", run.checkpoint.display());
        }
        Command::Eval { checkpoint, data, split } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let m = eval_checkpoint(&checkpoint, &data, split)?;
            println!("samples {}\nloss {}\naccuracy {}", m.samples, m.loss, m.accuracy);
            for (truth, row) in m.confusion.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
                println!("confusion[{truth}] {}", cells.join(" "));
            }
        }
        Command::ReportMemory { config } => {
            let configs = config
                .iter()
                .map(|p| ExperimentConfig::load(p))
                .collect::<Result<Vec<_>, _>>()?;
            print!("{}", memory_report(&configs)?.to_text());
        }
        Command::RenderSlices { input, axis, out } => {
            let Some(a) = parse_axis(&axis) else {
                bail!("axis must be x, y or z, got {axis:?}");
            };
            let files = render_slices(&input, a, &out)?;
            println!("wrote {} slices to {}", files.len(), out.display());
        }
    }
    Ok(())
}
