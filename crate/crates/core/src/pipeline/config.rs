use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::PipelineError;

/// Which model family an experiment trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Plain CNN on the coarse grid.
    Coarse,
    /// Plain CNN on the dense grid at `coarse × fine`.
    Dense,
    /// Coarse CNN fed by a shared fine CNN at Boundary cells.
    Multires,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Coarse => "coarse",
            Mode::Dense => "dense",
            Mode::Multires => "multires",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "coarse" | "coarse-only" => Ok(Mode::Coarse),
            "dense" => Ok(Mode::Dense),
            "multires" | "multi-res" | "mrcnn" => Ok(Mode::Multires),
            _ => Err(format!("unknown mode {s:?} (expected coarse, dense or multires)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            _ => Err(format!("unknown precision {s:?} (expected f32 or f64)")),
        }
    }
}

/// Everything one training run needs. Parsed from a flat `key = value`
/// file; `#` starts a comment.
///
/// Recognized keys: `dataset_root`, `data_dir`, `out_dir`, `classes`
/// (comma separated), `split` (only `dataset`), `coarse`, `fine`, `mode`,
/// `epochs`, `batch_size`, `learning_rate`, `seed`, `inside_fill`,
/// `precision`, `max_train_per_class`, `max_test_per_class`,
/// `failure_threshold`, `record_wall_clock`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Mesh tree laid out as `<root>/<class>/{train,test}/*.off`.
    pub dataset_root: Option<PathBuf>,
    /// Voxelized tree with the same layout. Defaults to `<out_dir>/voxels`.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub classes: Vec<String>,
    pub coarse: usize,
    pub fine: usize,
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub inside_fill: bool,
    pub precision: Precision,
    /// 0 means no limit.
    pub max_train_per_class: usize,
    pub max_test_per_class: usize,
    /// Largest tolerated fraction of meshes that fail to voxelize.
    pub failure_threshold: f64,
    /// Write measured seconds into the metrics CSV. Off by default so the
    /// CSV is reproducible; timings always go to `timing.csv`.
    pub record_wall_clock: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_root: None,
            data_dir: PathBuf::from("run/voxels"),
            out_dir: PathBuf::from("run"),
            classes: Vec::new(),
            coarse: 8,
            fine: 4,
            mode: Mode::Multires,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 0,
            inside_fill: false,
            precision: Precision::F64,
            max_train_per_class: 0,
            max_test_per_class: 0,
            failure_threshold: 0.1,
            record_wall_clock: false,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, PipelineError>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e: T::Err| PipelineError::Config {
        line,
        msg: format!("{key}: {e}"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, PipelineError> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(PipelineError::Config {
            line,
            msg: format!("{key}: expected a boolean, got {v:?}"),
        }),
    }
}

impl ExperimentConfig {
    /// Parses config text. Relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut c = ExperimentConfig::default();
        let mut data_dir_set = false;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| PipelineError::Config {
                line,
                msg: format!("expected key = value, got {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let path = || base_dir.join(value);
            match key {
                "dataset_root" => c.dataset_root = Some(path()),
                "data_dir" => {
                    c.data_dir = path();
                    data_dir_set = true;
                }
                "out_dir" => c.out_dir = path(),
                "classes" => {
                    c.classes = value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                }
                "split" => {
                    if value != "dataset" {
                        return Err(PipelineError::Config {
                            line,
                            msg: format!("split: only \"dataset\" is supported, got {value:?}"),
                        });
                    }
                }
                "coarse" => c.coarse = parse_value(line, key, value)?,
                "fine" => c.fine = parse_value(line, key, value)?,
                "mode" => c.mode = parse_value(line, key, value)?,
                "epochs" => c.epochs = parse_value(line, key, value)?,
                "batch_size" => c.batch_size = parse_value(line, key, value)?,
                "learning_rate" => c.learning_rate = parse_value(line, key, value)?,
                "seed" => c.seed = parse_value(line, key, value)?,
                "inside_fill" => c.inside_fill = parse_bool(line, key, value)?,
                "precision" => c.precision = parse_value(line, key, value)?,
                "max_train_per_class" => c.max_train_per_class = parse_value(line, key, value)?,
                "max_test_per_class" => c.max_test_per_class = parse_value(line, key, value)?,
                "failure_threshold" => c.failure_threshold = parse_value(line, key, value)?,
                "record_wall_clock" => c.record_wall_clock = parse_bool(line, key, value)?,
                _ => {
                    return Err(PipelineError::Config {
                        line,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        if !data_dir_set {
            c.data_dir = c.out_dir.join("voxels");
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::Config { line: 0, msg });
        if self.classes.len() < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes.len()));
        }
        if self.coarse < 2 || !self.coarse.is_multiple_of(2) {
            return bad(format!("coarse resolution must be even and >= 2, got {}", self.coarse));
        }
        if self.fine == 0 {
            return bad("fine factor must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return bad(format!("failure_threshold must lie in [0, 1], got {}", self.failure_threshold));
        }
        Ok(())
    }

    /// Resolution the mode's network sees along each axis.
    pub fn input_resolution(&self) -> usize {
        match self.mode {
            Mode::Dense => self.coarse * self.fine,
            Mode::Coarse | Mode::Multires => self.coarse,
        }
    }

    /// Serializes back to the key = value form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(r) = &self.dataset_root {
            s += &format!("dataset_root = {}\n", r.display());
        }
        s += &format!("data_dir = {}\n", self.data_dir.display());
        s += &format!("out_dir = {}\n", self.out_dir.display());
        s += &format!("classes = {}\n", self.classes.join(","));
        s += "split = dataset\n";
        s += &format!("coarse = {}\nfine = {}\nmode = {}\n", self.coarse, self.fine, self.mode);
        s += &format!(
            "epochs = {}\nbatch_size = {}\nlearning_rate = {}\nseed = {}\n",
            self.epochs, self.batch_size, self.learning_rate, self.seed
        );
        s += &format!(
            "inside_fill = {}\nprecision = {}\nmax_train_per_class = {}\nmax_test_per_class = {}\n",
            self.inside_fill,
            self.precision.as_str(),
            self.max_train_per_class,
            self.max_test_per_class
        );
        s += &format!(
            "failure_threshold = {}\nrecord_wall_clock = {}\n",
            self.failure_threshold, self.record_wall_clock
        );
        s
    }
}
