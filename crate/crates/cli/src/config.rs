//! Run configuration: a flat `key=value` file over the model and training
//! hyperparameters, plus output-path resolution and the run manifest.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use ecg_mamba_core::checkpoint::CheckpointError;
use ecg_mamba_core::data::DataError;
use ecg_mamba_core::metrics::MetricsError;
use ecg_mamba_core::model::{ModelConfig, ModelError};
use ecg_mamba_core::preprocess::PreprocessError;
use ecg_mamba_core::tensor::TensorError;
use ecg_mamba_core::train::{TrainConfig, TrainError};

use crate::OUT_ROOT_ENV;

/// Usage errors exit with status 2, runtime errors with status 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

macro_rules! runtime_from {
    ($($t:ty),* $(,)?) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    std::io::Error,
    DataError,
    TrainError,
    ModelError,
    CheckpointError,
    MetricsError,
    TensorError,
    PreprocessError,
);

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Resolved settings for a training run. `n_classes` defaults to whatever
/// the corpus label map declares; setting it explicitly in the config file
/// pins it, and a mismatch with the corpus is then an error.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Fraction of records held out as the test partition.
    pub test_frac: f64,
    pub n_classes_explicit: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            test_frac: 0.2,
            n_classes_explicit: false,
        }
    }
}

impl RunSettings {
    /// Parse a config file: one `key=value` per line, `#` comments and
    /// blank lines ignored. Keys are the bare field names of the model and
    /// schedule configs (`d_model`, `peak_lr`, ...) plus `test_frac`;
    /// unknown keys are usage errors so typos cannot silently fall back to
    /// defaults.
    pub fn from_file(path: &Path) -> Result<RunSettings, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut s = RunSettings::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                usage(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            s.set(key, value).map_err(|e| match e {
                CliError::Usage(msg) => {
                    usage(format!("{}:{}: {msg}", path.display(), lineno + 1))
                }
                other => other,
            })?;
        }
        Ok(s)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
            value
                .parse()
                .map_err(|_| usage(format!("bad value for {key}: {value:?}")))
        }
        match key {
            "in_channels" => self.model.in_channels = parse(key, value)?,
            "seq_len" => self.model.seq_len = parse(key, value)?,
            "d_model" => self.model.d_model = parse(key, value)?,
            "conv_kernel" => self.model.conv_kernel = parse(key, value)?,
            "conv_stride" => self.model.conv_stride = parse(key, value)?,
            "conv_padding" => self.model.conv_padding = parse(key, value)?,
            "n_blocks" => self.model.n_blocks = parse(key, value)?,
            "state_dim" => self.model.state_dim = parse(key, value)?,
            "expand" => self.model.expand = parse(key, value)?,
            "dw_kernel" => self.model.dw_kernel = parse(key, value)?,
            "n_classes" => {
                self.model.n_classes = parse(key, value)?;
                self.n_classes_explicit = true;
            }
            "ln_eps" => self.model.ln_eps = parse(key, value)?,
            "peak_lr" => self.train.peak_lr = parse(key, value)?,
            "warmup_start_lr" => self.train.warmup_start_lr = parse(key, value)?,
            "min_lr" => self.train.min_lr = parse(key, value)?,
            "warmup_epochs" => self.train.warmup_epochs = parse(key, value)?,
            "cosine_epochs" => self.train.cosine_epochs = parse(key, value)?,
            "beta1" => self.train.betas.0 = parse(key, value)?,
            "beta2" => self.train.betas.1 = parse(key, value)?,
            "eps" => self.train.eps = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "total_epochs" => self.train.total_epochs = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            "test_frac" => self.test_frac = parse(key, value)?,
            _ => return Err(usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// `key=value` lines for the manifest: model fields under `model.`,
    /// schedule fields under `train.`, the split fraction bare.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for line in self.model.to_kv().lines() {
            out.push_str("model.");
            out.push_str(line);
            out.push('\n');
        }
        let t = &self.train;
        out.push_str(&format!("train.peak_lr={}\n", t.peak_lr));
        out.push_str(&format!("train.warmup_start_lr={}\n", t.warmup_start_lr));
        out.push_str(&format!("train.min_lr={}\n", t.min_lr));
        out.push_str(&format!("train.warmup_epochs={}\n", t.warmup_epochs));
        out.push_str(&format!("train.cosine_epochs={}\n", t.cosine_epochs));
        out.push_str(&format!("train.beta1={}\n", t.betas.0));
        out.push_str(&format!("train.beta2={}\n", t.betas.1));
        out.push_str(&format!("train.eps={}\n", t.eps));
        out.push_str(&format!("train.batch_size={}\n", t.batch_size));
        out.push_str(&format!("train.total_epochs={}\n", t.total_epochs));
        out.push_str(&format!("train.seed={}\n", t.seed));
        out.push_str(&format!("test_frac={}\n", self.test_frac));
        out
    }
}

/// Pick the output directory: the flag if given, else `$ECGM_OUT/<name>`.
pub fn resolve_out(flag: Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match env::var_os(OUT_ROOT_ENV) {
        Some(root) => Ok(PathBuf::from(root).join(name)),
        None => Err(usage(format!(
            "no --out given and {OUT_ROOT_ENV} is not set"
        ))),
    }
}

/// Write `manifest.kv` into `dir` before any real work happens, so every
/// output directory records the exact invocation that produced it. `body`
/// is additional `key=value` lines from the caller.
pub fn write_manifest(dir: &Path, command: &str, body: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut out = String::new();
    out.push_str(&format!("command={command}\n"));
    out.push_str(&format!("version={}\n", env!("CARGO_PKG_VERSION")));
    out.push_str(body);
    fs::write(dir.join("manifest.kv"), out)?;
    Ok(())
}
