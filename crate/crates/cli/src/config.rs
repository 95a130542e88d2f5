//! Flat key/value run configuration.
//!
//! The file format is one `key = value` pair per line, `#` for comments.
//! Every key mirrors a library knob; command-line flags override file
//! values. Unknown keys are rejected by name so typos cannot silently fall
//! back to defaults.

use std::path::{Path, PathBuf};

use bmvr::SystemConfig;

use crate::CliError;

/// All recognized keys with their file spellings.
pub const KEYS: &[&str] = &[
    "train_dir",
    "ref_dir",
    "query_dir",
    "model_path",
    "output_dir",
    "neurons",
    "baseline_dropout",
    "baseline_epochs",
    "models",
    "kernel_width",
    "merger_dropout",
    "merger_epochs",
    "copies_per_frame",
    "seed",
    "tolerance",
    "threads",
    "save_latents",
];

#[derive(Debug, Default, Clone)]
pub struct RunConfig {
    pub train_dir: Option<PathBuf>,
    pub ref_dir: Option<PathBuf>,
    pub query_dir: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub neurons: Option<usize>,
    pub baseline_dropout: Option<f64>,
    pub baseline_epochs: Option<usize>,
    pub models: Option<usize>,
    pub kernel_width: Option<usize>,
    pub merger_dropout: Option<f64>,
    pub merger_epochs: Option<usize>,
    pub copies_per_frame: Option<usize>,
    pub seed: Option<u64>,
    pub tolerance: Option<usize>,
    pub threads: Option<usize>,
    pub save_latents: Option<bool>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(format!(
                    "{}:{}: expected `key = value`, got `{line}`",
                    path.display(),
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| CliError::config(format!("config key `{key}`: bad value `{value}`: {e}")))
        }
        match key {
            "train_dir" => self.train_dir = Some(PathBuf::from(value)),
            "ref_dir" => self.ref_dir = Some(PathBuf::from(value)),
            "query_dir" => self.query_dir = Some(PathBuf::from(value)),
            "model_path" => self.model_path = Some(PathBuf::from(value)),
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "neurons" => self.neurons = Some(parse(key, value)?),
            "baseline_dropout" => self.baseline_dropout = Some(parse(key, value)?),
            "baseline_epochs" => self.baseline_epochs = Some(parse(key, value)?),
            "models" => self.models = Some(parse(key, value)?),
            "kernel_width" => self.kernel_width = Some(parse(key, value)?),
            "merger_dropout" => self.merger_dropout = Some(parse(key, value)?),
            "merger_epochs" => self.merger_epochs = Some(parse(key, value)?),
            "copies_per_frame" => self.copies_per_frame = Some(parse(key, value)?),
            "seed" => self.seed = Some(parse(key, value)?),
            "tolerance" => self.tolerance = Some(parse(key, value)?),
            "threads" => self.threads = Some(parse(key, value)?),
            "save_latents" => self.save_latents = Some(parse(key, value)?),
            other => {
                return Err(CliError::config(format!(
                    "unknown config key `{other}` (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Folds `other` over `self`: any value set in `other` wins. Used to
    /// apply command-line flags on top of the file.
    pub fn overridden_by(mut self, other: RunConfig) -> RunConfig {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            train_dir, ref_dir, query_dir, model_path, output_dir, neurons, baseline_dropout,
            baseline_epochs, models, kernel_width, merger_dropout, merger_epochs,
            copies_per_frame, seed, tolerance, threads, save_latents
        );
        self
    }

    /// The library-side training configuration with every unset knob at
    /// its default.
    pub fn system_config(&self) -> SystemConfig {
        let d = SystemConfig::default();
        SystemConfig {
            neurons: self.neurons.unwrap_or(d.neurons),
            baseline_dropout: self.baseline_dropout.unwrap_or(d.baseline_dropout),
            baseline_epochs: self.baseline_epochs.unwrap_or(d.baseline_epochs),
            models: self.models.unwrap_or(d.models),
            kernel_width: self.kernel_width.unwrap_or(d.kernel_width),
            merger_dropout: self.merger_dropout.unwrap_or(d.merger_dropout),
            merger_epochs: self.merger_epochs.unwrap_or(d.merger_epochs),
            copies_per_frame: self.copies_per_frame.unwrap_or(d.copies_per_frame),
            base_seed: self.seed.unwrap_or(d.base_seed),
            retain_latents: self.save_latents.unwrap_or(d.retain_latents),
        }
    }

    pub fn require(&self, key: &str) -> Result<PathBuf, CliError> {
        let slot = match key {
            "train_dir" => &self.train_dir,
            "ref_dir" => &self.ref_dir,
            "query_dir" => &self.query_dir,
            "model_path" => &self.model_path,
            _ => unreachable!("require called with unknown key"),
        };
        slot.clone()
            .ok_or_else(|| CliError::config(format!("missing required key `{key}`")))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}
