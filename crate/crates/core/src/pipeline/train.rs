use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Mode, Precision};
use super::dataset::{scan_dataset, scan_tree, voxelize_dataset, Manifest, Split, VoxelizeJob};
use super::PipelineError;
use crate::format::read_dense;
use crate::mrcnn::{self, argmax, coarse_cnn_specs, embed_forward, MrcnnModel};
use crate::multires::{self, MultiResGrid};
use crate::nn::{
    checkpoint_width, read_checkpoint, softmax_cross_entropy, write_checkpoint, Checkpoint, Network, Rng, Scalar,
    Tensor,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.mrck";
pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,val_accuracy,seconds";

/// One network input, already in the form its model consumes.
#[derive(Debug, Clone)]
pub enum Sample<T> {
    Grid(Tensor<T>),
    Multi(MultiResGrid),
}

#[derive(Debug, Clone)]
pub struct LabeledSet<T> {
    pub samples: Vec<Sample<T>>,
    pub labels: Vec<usize>,
}

impl<T> LabeledSet<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A trainable model for any [`Mode`].
#[derive(Debug, Clone, PartialEq)]
pub enum Model<T> {
    Plain(Network<T>),
    Multires(MrcnnModel<T>),
}

impl<T: Scalar> Model<T> {
    /// Default architecture for the config's mode.
    pub fn build(config: &ExperimentConfig, rng: &mut Rng) -> Result<Self, PipelineError> {
        let k = config.classes.len();
        Ok(match config.mode {
            Mode::Multires => Model::Multires(MrcnnModel::with_default_architecture(
                [config.coarse; 3],
                config.fine,
                k,
                rng,
            )?),
            Mode::Coarse | Mode::Dense => {
                let n = config.input_resolution();
                Model::Plain(Network::new(&[1, n, n, n], &coarse_cnn_specs([n; 3], k), rng)?)
            }
        })
    }

    pub fn networks(&self) -> Vec<&Network<T>> {
        match self {
            Model::Plain(n) => vec![n],
            Model::Multires(m) => vec![&m.coarse_net, &m.fine_net],
        }
    }

    pub fn param_count(&self) -> usize {
        self.networks().iter().map(|n| n.param_count()).sum()
    }

    pub fn logits(&self, sample: &Sample<T>) -> Result<Tensor<T>, PipelineError> {
        match (self, sample) {
            (Model::Plain(net), Sample::Grid(x)) => Ok(net.forward(x)?.0),
            (Model::Multires(m), Sample::Multi(mr)) => Ok(embed_forward(m, mr)?.0),
            _ => Err(PipelineError::Mismatch("sample kind does not match the model".into())),
        }
    }

    /// One SGD step over the batch; returns the mean loss.
    pub fn train_batch(&mut self, batch: &[(&Sample<T>, usize)], lr: T) -> Result<f64, PipelineError> {
        match self {
            Model::Plain(net) => {
                let owned: Vec<(Tensor<T>, usize)> = batch
                    .iter()
                    .map(|(s, y)| match s {
                        Sample::Grid(x) => Ok((x.clone(), *y)),
                        Sample::Multi(_) => Err(PipelineError::Mismatch("plain model given a multires sample".into())),
                    })
                    .collect::<Result<_, _>>()?;
                Ok(crate::nn::train_step(net, &owned, lr)?)
            }
            Model::Multires(m) => {
                let grids: Vec<(&MultiResGrid, usize)> = batch
                    .iter()
                    .map(|(s, y)| match s {
                        Sample::Multi(mr) => Ok((mr, *y)),
                        Sample::Grid(_) => Err(PipelineError::Mismatch("multires model given a dense sample".into())),
                    })
                    .collect::<Result<_, _>>()?;
                Ok(mrcnn::train_step(m, &grids, lr)?)
            }
        }
    }

    pub fn to_checkpoint(&self, config: &ExperimentConfig, epoch: usize) -> Checkpoint<T> {
        Checkpoint {
            seed: config.seed,
            networks: self.networks().into_iter().cloned().collect(),
            meta: vec![
                ("mode".into(), config.mode.to_string()),
                ("classes".into(), config.classes.join(",")),
                ("coarse".into(), config.coarse.to_string()),
                ("fine".into(), config.fine.to_string()),
                ("epoch".into(), epoch.to_string()),
                ("learning_rate".into(), config.learning_rate.to_string()),
                ("inside_fill".into(), config.inside_fill.to_string()),
            ],
        }
    }

    pub fn from_checkpoint(ck: Checkpoint<T>) -> Result<(Self, CheckpointInfo), PipelineError> {
        let info = CheckpointInfo::from_meta(|k| ck.meta(k).map(str::to_string))?;
        let mut nets = ck.networks.into_iter();
        let model = match (info.mode, nets.next(), nets.next(), nets.next()) {
            (Mode::Multires, Some(c), Some(f), None) => Model::Multires(MrcnnModel::new(c, f)?),
            (Mode::Coarse | Mode::Dense, Some(n), None, None) => Model::Plain(n),
            _ => {
                return Err(PipelineError::Mismatch(format!(
                    "checkpoint network count does not fit mode {}",
                    info.mode
                )))
            }
        };
        Ok((model, info))
    }
}

/// Run metadata stored alongside a checkpoint's networks.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInfo {
    pub mode: Mode,
    pub classes: Vec<String>,
    pub coarse: usize,
    pub fine: usize,
    pub epoch: usize,
}

impl CheckpointInfo {
    fn from_meta(get: impl Fn(&str) -> Option<String>) -> Result<Self, PipelineError> {
        let need = |k: &str| get(k).ok_or_else(|| PipelineError::Mismatch(format!("checkpoint lacks {k:?}")));
        let num = |k: &str| -> Result<usize, PipelineError> {
            need(k)?
                .parse()
                .map_err(|_| PipelineError::Mismatch(format!("checkpoint field {k:?} is not a number")))
        };
        Ok(Self {
            mode: need("mode")?.parse().map_err(PipelineError::Mismatch)?,
            classes: need("classes")?.split(',').map(str::to_string).collect(),
            coarse: num("coarse")?,
            fine: num("fine")?,
            epoch: num("epoch")?,
        })
    }
}

/// Loss, accuracy and confusion counts over a labelled set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub samples: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Evaluates every sample in parallel and reduces in sample order.
pub fn evaluate<T: Scalar>(model: &Model<T>, set: &LabeledSet<T>, classes: usize) -> Result<EvalMetrics, PipelineError> {
    let per: Vec<Result<(f64, usize), PipelineError>> = set
        .samples
        .par_iter()
        .zip(&set.labels)
        .map(|(s, &y)| {
            let logits = model.logits(s)?;
            let (loss, _) = softmax_cross_entropy(&logits, y)?;
            Ok((loss.to_f64(), argmax(logits.data())))
        })
        .collect();
    let mut confusion = vec![vec![0; classes]; classes];
    let mut loss = 0.0;
    let mut correct = 0;
    for (r, &y) in per.into_iter().zip(&set.labels) {
        let (l, p) = r?;
        loss += l;
        correct += usize::from(p == y);
        if y < classes && p < classes {
            confusion[y][p] += 1;
        }
    }
    let n = set.len();
    let denom = n.max(1) as f64;
    Ok(EvalMetrics {
        samples: n,
        loss: loss / denom,
        accuracy: correct as f64 / denom,
        confusion,
    })
}

fn occupancy<T: Scalar>(cells: &[crate::voxel::CellState], n: [usize; 3]) -> Tensor<T> {
    mrcnn::occupancy_tensor(cells, n)
}

/// Loads one voxel file as the sample kind `mode` trains on.
pub fn load_sample<T: Scalar>(path: &Path, mode: Mode, coarse: usize, fine: usize) -> Result<Sample<T>, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    let check = |dims: [usize; 3], want: usize| {
        if dims != [want; 3] {
            Err(PipelineError::Mismatch(format!(
                "{}: grid dims {dims:?}, expected {want}^3",
                path.display()
            )))
        } else {
            Ok(())
        }
    };
    match mode {
        Mode::Dense => {
            let (grid, _) = read_dense(&bytes).map_err(crate::Error::from)?;
            check(grid.spec.dims, coarse * fine)?;
            Ok(Sample::Grid(occupancy(&grid.cells, grid.spec.dims)))
        }
        Mode::Coarse | Mode::Multires => {
            let mr = multires::deserialize(&bytes).map_err(crate::Error::from)?;
            check(mr.coarse.spec.dims, coarse)?;
            if mode == Mode::Coarse {
                return Ok(Sample::Grid(occupancy(&mr.coarse.cells, mr.coarse.spec.dims)));
            }
            if mr.fine_factor != fine {
                return Err(PipelineError::Mismatch(format!(
                    "{}: fine factor {}, expected {fine}",
                    path.display(),
                    mr.fine_factor
                )));
            }
            Ok(Sample::Multi(mr))
        }
    }
}

fn voxel_extension(mode: Mode) -> &'static str {
    match mode {
        Mode::Dense => "vxgd",
        Mode::Coarse | Mode::Multires => "mrvx",
    }
}

/// Voxel-file manifest under `data_dir` for `mode`, with per-class limits.
pub fn voxel_manifest(config: &ExperimentConfig) -> Result<Manifest, PipelineError> {
    let mut m = scan_tree(&config.data_dir, &config.classes, &[voxel_extension(config.mode)])?;
    m.limit_per_class(config.max_train_per_class, config.max_test_per_class);
    Ok(m)
}

pub fn load_split<T: Scalar>(config: &ExperimentConfig, manifest: &Manifest, split: Split) -> Result<LabeledSet<T>, PipelineError> {
    let entries: Vec<_> = manifest.split(split).collect();
    let samples = entries
        .par_iter()
        .map(|e| load_sample(&e.path, config.mode, config.coarse, config.fine))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabeledSet {
        samples,
        labels: entries.iter().map(|e| e.label).collect(),
    })
}

/// Voxelizes any meshes under `dataset_root` whose outputs are missing.
pub fn ensure_voxelized(config: &ExperimentConfig) -> Result<(), PipelineError> {
    let Some(root) = &config.dataset_root else {
        return Ok(());
    };
    let mut manifest = scan_dataset(root, &config.classes)?;
    manifest.limit_per_class(config.max_train_per_class, config.max_test_per_class);
    let summary = voxelize_dataset(
        &manifest,
        &VoxelizeJob {
            coarse: config.coarse,
            fine: config.fine,
            dense: config.mode == Mode::Dense,
            inside_fill: config.inside_fill,
            normals: false,
            out_dir: config.data_dir.clone(),
            failure_threshold: config.failure_threshold,
            skip_existing: true,
        },
    )?;
    log::info!(
        "voxelized {} files ({} up to date, {} failed)",
        summary.written.len(),
        summary.skipped,
        summary.failures.len()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub config: ExperimentConfig,
    pub records: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

impl TrainRun {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.val_accuracy)
    }
}

fn create(path: &Path) -> Result<fs::File, PipelineError> {
    fs::File::create(path).map_err(|e| PipelineError::io(path, e))
}

fn save_checkpoint<T: Scalar>(model: &Model<T>, config: &ExperimentConfig, epoch: usize, path: &Path) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, write_checkpoint(&model.to_checkpoint(config, epoch))).map_err(|e| PipelineError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

/// Trains the config's model, evaluating on the test split after each
/// epoch. Metrics rows and the checkpoint are written as each epoch ends,
/// so an interrupted run leaves its completed epochs on disk.
pub fn run_experiment(config: &ExperimentConfig) -> Result<TrainRun, PipelineError> {
    config.validate()?;
    match config.precision {
        Precision::F32 => run_typed::<f32>(config),
        Precision::F64 => run_typed::<f64>(config),
    }
}

fn run_typed<T: Scalar>(config: &ExperimentConfig) -> Result<TrainRun, PipelineError> {
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    fs::write(out.join("config.txt"), config.to_text()).map_err(|e| PipelineError::io(out, e))?;
    ensure_voxelized(config)?;

    let mut rng = Rng::new(config.seed);
    let mut model = Model::<T>::build(config, &mut rng)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    save_checkpoint(&model, config, 0, &checkpoint)?;

    let metrics_path = out.join(METRICS_FILE);
    let mut metrics = create(&metrics_path)?;
    let mut timing = create(&out.join(TIMING_FILE))?;
    writeln!(metrics, "{METRICS_HEADER}").map_err(|e| PipelineError::io(&metrics_path, e))?;
    writeln!(timing, "epoch,seconds").map_err(|e| PipelineError::io(&metrics_path, e))?;

    let mut records = Vec::new();
    if config.epochs == 0 {
        return Ok(TrainRun {
            config: config.clone(),
            records,
            checkpoint,
            metrics: metrics_path,
        });
    }

    let manifest = voxel_manifest(config)?;
    let train = load_split::<T>(config, &manifest, Split::Train)?;
    let test = load_split::<T>(config, &manifest, Split::Test)?;
    if train.is_empty() || test.is_empty() {
        return Err(PipelineError::Mismatch(format!(
            "need both splits: {} train and {} test samples found under {}",
            train.len(),
            test.len(),
            config.data_dir.display()
        )));
    }
    log::info!(
        "{} run: {} train / {} test samples, {} parameters",
        config.mode,
        train.len(),
        test.len(),
        model.param_count()
    );

    let lr = T::from_f64(config.learning_rate);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64)));
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&Sample<T>, usize)> = chunk.iter().map(|&i| (&train.samples[i], train.labels[i])).collect();
            total += model.train_batch(&batch, lr)? * chunk.len() as f64;
        }
        let val = evaluate(&model, &test, config.classes.len())?;
        let seconds = start.elapsed().as_secs_f64();
        let rec = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            seconds,
        };
        let shown = if config.record_wall_clock { seconds } else { 0.0 };
        writeln!(
            metrics,
            "{},{},{},{},{}",
            rec.epoch, rec.train_loss, rec.val_loss, rec.val_accuracy, shown
        )
        .and_then(|_| metrics.flush())
        .map_err(|e| PipelineError::io(&metrics_path, e))?;
        writeln!(timing, "{epoch},{seconds}").map_err(|e| PipelineError::io(out, e))?;
        save_checkpoint(&model, config, epoch, &checkpoint)?;
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4} acc {:.3} ({seconds:.1}s)",
            rec.train_loss,
            rec.val_loss,
            rec.val_accuracy
        );
        records.push(rec);
    }
    Ok(TrainRun {
        config: config.clone(),
        records,
        checkpoint,
        metrics: metrics_path,
    })
}

/// Evaluates a checkpoint on the given split of a voxelized data tree.
pub fn eval_checkpoint(checkpoint: &Path, data_dir: &Path, split: Split) -> Result<EvalMetrics, PipelineError> {
    let bytes = fs::read(checkpoint).map_err(|e| PipelineError::io(checkpoint, e))?;
    match checkpoint_width(&bytes)? {
        4 => eval_typed::<f32>(&bytes, data_dir, split),
        _ => eval_typed::<f64>(&bytes, data_dir, split),
    }
}

fn eval_typed<T: Scalar>(bytes: &[u8], data_dir: &Path, split: Split) -> Result<EvalMetrics, PipelineError> {
    let (model, info) = Model::<T>::from_checkpoint(read_checkpoint::<T>(bytes)?)?;
    let config = ExperimentConfig {
        data_dir: data_dir.to_path_buf(),
        classes: info.classes.clone(),
        coarse: info.coarse,
        fine: info.fine,
        mode: info.mode,
        ..Default::default()
    };
    let manifest = voxel_manifest(&config)?;
    let set = load_split::<T>(&config, &manifest, split)?;
    evaluate(&model, &set, info.classes.len())
}
