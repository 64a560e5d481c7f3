//! Layered `key=value` settings: built-in defaults, then a config file, then
//! `--set` pairs, then dedicated flags. Every key is listed in [`KEYS`].

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use sdped_core::augment::DEFAULT_MAX_SIDE;
use sdped_core::eval::{BenchmarkOptions, ToleranceMode, ToleranceSpec};
use sdped_core::train::TrainConfig;
use sdped_core::{Error, ModelConfig, Result};

/// Recognised keys with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("model", "architecture preset: default or micro"),
    ("n_csdb", "number of cascaded blocks"),
    ("stem_channels", "width of the first stem conv"),
    ("growth", "channels added by each dense conv"),
    ("trunk_channels", "trunk width"),
    ("side_channels", "channels per side tap"),
    ("fuse_channels", "fusing block widths, three comma-separated values"),
    ("leaky_slope", "negative slope of the leaky ReLU"),
    ("ablation_no_skipping", "drop dense and residual connections inside blocks"),
    ("ablation_single_fuse", "replace the fusing block with one 1x1 conv"),
    ("base_lr", "initial learning rate"),
    ("weight_decay", "L2 weight decay"),
    ("batch_size", "samples per optimizer step"),
    ("lambda", "extra weight on the negative loss term"),
    ("crop", "training crop side"),
    ("epochs", "training epochs"),
    ("refresh_period", "epochs between crop redraws"),
    ("clamp_eps", "probability clamp inside the loss"),
    ("seed", "seed for initialization, shuffling and crops"),
    ("tol_mode", "tolerance unit: ratio or pixels"),
    ("tol", "tolerance value"),
    ("tol_preset", "dataset tolerance preset: brind, mdbd, biped, uded"),
    ("n_thresholds", "number of evaluation thresholds"),
    ("thin", "thin predictions before matching"),
    ("max_side", "tiles are split until both sides are below this"),
    ("noiseless", "add every label as an input of its own"),
];

#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Parses one `key=value` pair.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    /// Reads a file of `key=value` lines; `#` starts a comment.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line)
                .map_err(|e| Error::Config(format!("{} line {}: {e}", path.display(), n + 1)))?;
        }
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::Config(format!("invalid value {v:?} for {key}"))))
            .transpose()
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        self.values
            .get(key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => Ok(true),
                "0" | "false" | "no" | "off" => Ok(false),
                _ => Err(Error::Config(format!("invalid boolean {v:?} for {key}"))),
            })
            .transpose()
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut c = match self.values.get("model").map(String::as_str) {
            None | Some("default") => ModelConfig::default(),
            Some("micro") => ModelConfig::micro(),
            Some(other) => return Err(Error::Config(format!("unknown model preset {other:?}"))),
        };
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = self.get(stringify!($field))? {
                    c.$field = v;
                }
            )*};
        }
        apply!(n_csdb, stem_channels, growth, trunk_channels, side_channels, leaky_slope);
        if let Some(v) = self.values.get("fuse_channels") {
            let widths: Vec<usize> = v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("invalid fuse_channels {v:?}")))?;
            c.fuse_channels = widths
                .try_into()
                .map_err(|_| Error::Config(format!("fuse_channels needs three values, got {v:?}")))?;
        }
        if let Some(v) = self.flag("ablation_no_skipping")? {
            c.ablation_no_skipping = v;
        }
        if let Some(v) = self.flag("ablation_single_fuse")? {
            c.ablation_single_fuse = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = self.get(stringify!($field))? {
                    c.$field = v;
                }
            )*};
        }
        apply!(base_lr, weight_decay, batch_size, lambda, crop, epochs, refresh_period, clamp_eps, seed);
        c.validate()?;
        Ok(c)
    }

    /// Preset if given, else `tol_mode`/`tol` (default ratio 0.0075).
    pub fn tolerance(&self) -> Result<ToleranceSpec> {
        if let Some(p) = self.values.get("tol_preset") {
            if self.contains("tol") || self.contains("tol_mode") {
                return Err(Error::Config("tol_preset cannot be combined with tol or tol_mode".into()));
            }
            return ToleranceSpec::preset(p);
        }
        let mode: ToleranceMode = self.get("tol_mode")?.unwrap_or(ToleranceMode::Ratio);
        ToleranceSpec::new(mode, self.get("tol")?.unwrap_or(0.0075))
    }

    pub fn bench_options(&self) -> Result<BenchmarkOptions> {
        let mut o = BenchmarkOptions::default();
        if let Some(n) = self.get("n_thresholds")? {
            o.n_thresholds = n;
        }
        if let Some(t) = self.flag("thin")? {
            o.thin_predictions = t;
        }
        if o.n_thresholds == 0 {
            return Err(Error::Config("n_thresholds must be at least 1".into()));
        }
        Ok(o)
    }

    pub fn max_side(&self) -> Result<usize> {
        Ok(self.get("max_side")?.unwrap_or(DEFAULT_MAX_SIDE))
    }

    pub fn noiseless(&self) -> Result<bool> {
        Ok(self.flag("noiseless")?.unwrap_or(false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let mut s = Settings::default();
        assert!(s.set_pair("lamda=1.0").is_err());
        assert!(s.set_pair("lambda").is_err());
        s.set_pair(" lambda = 2.5 ").unwrap();
        assert_eq!(s.train_config().unwrap().lambda, 2.5);
    }

    #[test]
    fn later_layers_win() {
        let mut s = Settings::default();
        s.set("epochs", "4").unwrap();
        s.set("epochs", "7").unwrap();
        assert_eq!(s.train_config().unwrap().epochs, 7);
    }

    #[test]
    fn model_overrides() {
        let mut s = Settings::default();
        s.set("model", "micro").unwrap();
        s.set("ablation_single_fuse", "true").unwrap();
        s.set("fuse_channels", "8,8,1").unwrap();
        let c = s.model_config().unwrap();
        assert!(c.ablation_single_fuse);
        assert_eq!(c.fuse_channels, [8, 8, 1]);
        s.set("fuse_channels", "8,1").unwrap();
        assert!(s.model_config().is_err());
    }

    #[test]
    fn tolerance_layers() {
        let mut s = Settings::default();
        assert_eq!(s.tolerance().unwrap(), ToleranceSpec::ratio(0.0075).unwrap());
        s.set("tol_mode", "pixels").unwrap();
        s.set("tol", "1.42").unwrap();
        assert_eq!(s.tolerance().unwrap().to_pixels(100, 100), 1.42);
        s.set("tol_preset", "brind").unwrap();
        assert!(s.tolerance().is_err());
    }
}
