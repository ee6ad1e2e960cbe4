//! Run configuration: model, training and data settings as a flat
//! `key = value` file. Command-line flags are applied on top with the same
//! keys.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::opticnet::config::DEFAULT_RES_CONV_MID_KERNEL;
use crate::opticnet::{ModelConfig, Variant};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub input_size: usize,
    pub mid_kernel: usize,
    pub train: TrainConfig,
    /// Image tree; either `<data>/<class>/...` or `<data>/train/<class>/...`
    /// with an optional `<data>/test/<class>/...`.
    pub data: Option<PathBuf>,
    pub val: Option<PathBuf>,
    /// Stratified hold-out fraction of the training set used for validation.
    pub val_fraction: f64,
    /// Cross-validation folds; 0 trains once.
    pub kfold: usize,
    pub synthetic: bool,
    pub synth_classes: usize,
    pub synth_per_class: usize,
    /// `oct2017`, a grid file, or empty for none.
    pub penalties: String,
    pub run_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::OpticNet71,
            input_size: 224,
            mid_kernel: DEFAULT_RES_CONV_MID_KERNEL,
            train: TrainConfig::default(),
            data: None,
            val: None,
            val_fraction: 0.0,
            kfold: 0,
            synthetic: false,
            synth_classes: 4,
            synth_per_class: 16,
            penalties: String::new(),
            run_dir: None,
        }
    }
}

pub const KEYS: [&str; 23] = [
    "variant",
    "input_size",
    "mid_kernel",
    "batch_size",
    "epochs",
    "lr",
    "gamma",
    "patience",
    "lr_min",
    "beta1",
    "beta2",
    "seed",
    "max_steps",
    "data",
    "val",
    "val_fraction",
    "kfold",
    "synthetic",
    "synth_classes",
    "synth_per_class",
    "penalties",
    "run_dir",
    "classes",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(format!(
            "`{key}`: expected true or false, got `{value}`"
        ))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Sets one key. Unknown keys and unparsable values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key.trim() {
            "variant" => self.variant = value.parse()?,
            "input_size" => self.input_size = parse(key, value)?,
            "mid_kernel" => self.mid_kernel = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "gamma" => t.gamma = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "lr_min" => t.lr_min = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "max_steps" => {
                t.max_steps = if value.is_empty() {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "data" => self.data = opt_path(value),
            "val" => self.val = opt_path(value),
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "kfold" => self.kfold = parse(key, value)?,
            "synthetic" => self.synthetic = parse_bool(key, value)?,
            "synth_classes" => self.synth_classes = parse(key, value)?,
            "synth_per_class" => self.synth_per_class = parse(key, value)?,
            "penalties" => self.penalties = value.to_string(),
            "run_dir" => self.run_dir = opt_path(value),
            // The class count always comes from the data; accepted so saved
            // configs document it.
            "classes" => {
                parse::<usize>(key, value)?;
            }
            other => {
                return Err(Error::config(format!(
                    "unknown configuration key `{other}`"
                )))
            }
        }
        Ok(())
    }

    /// Applies a `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key, value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config(format!(
                "val_fraction {} must lie in [0, 1)",
                self.val_fraction
            )));
        }
        if self.kfold == 1 {
            return Err(Error::config("kfold must be 0 (off) or at least 2"));
        }
        if self.synthetic && self.data.is_some() {
            return Err(Error::config("choose either synthetic data or a data path"));
        }
        Ok(())
    }

    pub fn model_config(&self, classes: usize) -> ModelConfig {
        ModelConfig::variant_with_mid_kernel(
            self.variant,
            self.input_size,
            classes,
            self.mid_kernel,
        )
    }

    /// Every key with its current value, loadable by [`RunConfig::load`].
    pub fn to_text(&self, classes: Option<usize>) -> String {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or(String::new(), |p| p.display().to_string())
        };
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("variant", self.variant.to_string());
        kv("input_size", self.input_size.to_string());
        kv("mid_kernel", self.mid_kernel.to_string());
        if let Some(k) = classes {
            kv("classes", k.to_string());
        }
        kv("batch_size", t.batch_size.to_string());
        kv("epochs", t.epochs.to_string());
        kv("lr", format!("{:e}", t.lr));
        kv("gamma", t.gamma.to_string());
        kv("patience", t.patience.to_string());
        kv("lr_min", format!("{:e}", t.lr_min));
        kv("beta1", t.beta1.to_string());
        kv("beta2", t.beta2.to_string());
        kv("seed", t.seed.to_string());
        kv(
            "max_steps",
            t.max_steps.map_or(String::new(), |s| s.to_string()),
        );
        kv("data", path(&self.data));
        kv("val", path(&self.val));
        kv("val_fraction", self.val_fraction.to_string());
        kv("kfold", self.kfold.to_string());
        kv("synthetic", self.synthetic.to_string());
        kv("synth_classes", self.synth_classes.to_string());
        kv("synth_per_class", self.synth_per_class.to_string());
        kv("penalties", self.penalties.clone());
        kv("run_dir", path(&self.run_dir));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("variant = opticnet47\ninput_size=64 # small\nlr = 3e-4\nmax_steps = 300\nsynthetic = true\n")
            .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(Some(4))).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(back.train.max_steps, Some(300));
    }

    #[test]
    fn every_documented_key_is_accepted() {
        let text = RunConfig::default().to_text(Some(4));
        let keys: Vec<&str> = text
            .lines()
            .map(|l| l.split('=').next().unwrap().trim())
            .collect();
        for k in KEYS {
            assert!(keys.contains(&k), "{k}");
        }
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = RunConfig::default()
            .apply_text("lerning_rate = 1")
            .unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("lerning_rate")));
    }

    #[test]
    fn defaults_follow_the_training_recipe() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.variant, Variant::OpticNet71);
        assert_eq!(cfg.input_size, 224);
    }
}
