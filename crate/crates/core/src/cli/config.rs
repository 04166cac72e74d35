use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataio::{LabelScheme, SplitSpec};
use crate::model::ModelConfig;
use crate::signal::{
    DEFAULT_HIGH_HZ, DEFAULT_LOW_HZ, DEFAULT_REJECT_UV, DEFAULT_SAMPLE_RATE_HZ, DEFAULT_STRIDE_SAMPLES,
    DEFAULT_WINDOW_SAMPLES,
};
use crate::train::TrainConfig;
use crate::{Error, Result};

/// Environment variable read as the global seed when no file or flag sets one.
pub const SEED_ENV: &str = "EEGFORMER_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct SignalConfig {
    pub sample_rate_hz: f64,
    pub low_hz: f64,
    pub high_hz: f64,
    pub window_samples: usize,
    pub stride_samples: usize,
    pub reject_uv: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            low_hz: DEFAULT_LOW_HZ,
            high_hz: DEFAULT_HIGH_HZ,
            window_samples: DEFAULT_WINDOW_SAMPLES,
            stride_samples: DEFAULT_STRIDE_SAMPLES,
            reject_uv: DEFAULT_REJECT_UV,
        }
    }
}

/// Everything a run needs, as flat namespaced `key = value` settings.
///
/// `num_classes`, `window_samples` and `num_channels` of the model are not
/// settable; they follow the scheme, `signal.window` and the data.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub scheme: LabelScheme,
    pub split: SplitSpec,
    pub signal: SignalConfig,
    pub model: ModelConfig,
    /// Explicit head count; otherwise 8 for `age6` and 4 for the rest.
    pub num_heads: Option<usize>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            scheme: LabelScheme::Load2,
            split: SplitSpec::default(),
            signal: SignalConfig::default(),
            model: ModelConfig::default(),
            num_heads: None,
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parameter(format!("cannot parse {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parameter(format!("cannot parse {value:?} for {key} (expected true or false)"))),
    }
}

/// Splits `key = value`; `None` for blank and `#` lines.
fn split_line(line: &str) -> Option<std::result::Result<(String, String), String>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return None;
    }
    Some(match line.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(format!("expected `key = value`, found {line:?}")),
    })
}

impl RunConfig {
    /// Defaults, then the seed environment variable, then `file`, then `flags`.
    pub fn resolve(file: Option<&Path>, flags: &[(String, String)]) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        if let Ok(seed) = std::env::var(SEED_ENV) {
            pairs.push(("seed".into(), seed));
        }
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            pairs.extend(Self::parse_pairs(&text, path)?);
        }
        pairs.extend(flags.iter().cloned());
        let mut cfg = Self::default();
        cfg.apply(&pairs)?;
        Ok(cfg)
    }

    pub fn parse_pairs(text: &str, source: &Path) -> Result<Vec<(String, String)>> {
        text.lines()
            .enumerate()
            .filter_map(|(i, line)| {
                split_line(line).map(|r| {
                    r.map_err(|msg| Error::Parameter(format!("{}:{}: {msg}", source.display(), i + 1)))
                })
            })
            .collect()
    }

    /// Applies settings in order; the last value of a key wins and a global
    /// `seed` never overrides a namespaced seed.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs.iter().filter(|(k, _)| k == "seed") {
            let seed: u64 = parse(k, v)?;
            self.split.seed = seed;
            self.model.seed = seed;
            self.train.seed = seed;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "seed") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match key {
            "data" => self.data = Some(PathBuf::from(v)),
            "scheme" => self.scheme = v.parse()?,
            "split.mode" => self.split.mode = v.parse()?,
            "split.train_frac" => self.split.train_frac = parse(k, v)?,
            "split.val_frac" => self.split.val_frac = parse(k, v)?,
            "split.test_frac" => self.split.test_frac = parse(k, v)?,
            "split.seed" => self.split.seed = parse(k, v)?,
            "signal.sample_rate_hz" => self.signal.sample_rate_hz = parse(k, v)?,
            "signal.low_hz" => self.signal.low_hz = parse(k, v)?,
            "signal.high_hz" => self.signal.high_hz = parse(k, v)?,
            "signal.window" => self.signal.window_samples = parse(k, v)?,
            "signal.stride" => self.signal.stride_samples = parse(k, v)?,
            "signal.reject_uv" => self.signal.reject_uv = parse(k, v)?,
            "model.d_model" => self.model.d_model = parse(k, v)?,
            "model.num_heads" => self.num_heads = Some(parse(k, v)?),
            "model.d_ff" => self.model.d_ff = parse(k, v)?,
            "model.num_encoders" => self.model.num_encoders = parse(k, v)?,
            "model.dropout" => self.model.dropout_p = parse(k, v)?,
            "model.positional_encoding" => self.model.positional_encoding = parse_bool(k, v)?,
            "model.seed" => self.model.seed = parse(k, v)?,
            "train.batch_size" => self.train.batch_size = parse(k, v)?,
            "train.max_epochs" => self.train.max_epochs = parse(k, v)?,
            "train.patience" => self.train.patience = parse(k, v)?,
            "train.lr" => self.train.lr = parse(k, v)?,
            "train.beta1" => self.train.beta1 = parse(k, v)?,
            "train.beta2" => self.train.beta2 = parse(k, v)?,
            "train.eps" => self.train.eps = parse(k, v)?,
            "train.seed" => self.train.seed = parse(k, v)?,
            "train.shuffle" => self.train.shuffle = parse_bool(k, v)?,
            "seed" => self.apply(&[(key.to_string(), v.to_string())])?,
            _ => return Err(Error::Parameter(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn resolved_num_heads(&self) -> usize {
        self.num_heads
            .unwrap_or(if self.scheme == LabelScheme::Age6 { 8 } else { 4 })
    }

    /// The model configuration for data with `num_channels` channels.
    pub fn model_config(&self, num_channels: usize) -> ModelConfig {
        ModelConfig {
            num_heads: self.resolved_num_heads(),
            num_classes: self.scheme.num_classes(),
            window_samples: self.signal.window_samples,
            num_channels,
            ..self.model.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.train.validate()?;
        let s = &self.signal;
        if s.window_samples == 0 || s.stride_samples == 0 {
            return Err(Error::Parameter("signal.window and signal.stride must be at least 1".into()));
        }
        if !(s.sample_rate_hz > 0.0) || !(s.reject_uv > 0.0) {
            return Err(Error::Parameter("signal.sample_rate_hz and signal.reject_uv must be positive".into()));
        }
        if !(0.0 < s.low_hz && s.low_hz < s.high_hz && s.high_hz < s.sample_rate_hz / 2.0) {
            return Err(Error::Parameter(format!(
                "band edges must satisfy 0 < low < high < fs/2, got {} and {}",
                s.low_hz, s.high_hz
            )));
        }
        self.model_config(1).validate()
    }

    /// Every resolved setting, one per line, readable by [`RunConfig::resolve`].
    pub fn to_text(&self) -> String {
        let (s, m, t, p) = (&self.signal, &self.model, &self.train, &self.split);
        let mut out = String::from("# resolved run configuration\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(d) = &self.data {
            kv("data", d.display().to_string());
        }
        kv("scheme", self.scheme.to_string());
        kv("split.mode", p.mode.to_string());
        kv("split.train_frac", p.train_frac.to_string());
        kv("split.val_frac", p.val_frac.to_string());
        kv("split.test_frac", p.test_frac.to_string());
        kv("split.seed", p.seed.to_string());
        kv("signal.sample_rate_hz", s.sample_rate_hz.to_string());
        kv("signal.low_hz", s.low_hz.to_string());
        kv("signal.high_hz", s.high_hz.to_string());
        kv("signal.window", s.window_samples.to_string());
        kv("signal.stride", s.stride_samples.to_string());
        kv("signal.reject_uv", s.reject_uv.to_string());
        kv("model.d_model", m.d_model.to_string());
        kv("model.num_heads", self.resolved_num_heads().to_string());
        kv("model.d_ff", m.d_ff.to_string());
        kv("model.num_encoders", m.num_encoders.to_string());
        kv("model.dropout", m.dropout_p.to_string());
        kv("model.positional_encoding", m.positional_encoding.to_string());
        kv("model.seed", m.seed.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.max_epochs", t.max_epochs.to_string());
        kv("train.patience", t.patience.to_string());
        kv("train.lr", t.lr.to_string());
        kv("train.beta1", t.beta1.to_string());
        kv("train.beta2", t.beta2.to_string());
        kv("train.eps", t.eps.to_string());
        kv("train.seed", t.seed.to_string());
        kv("train.shuffle", t.shuffle.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn age6_gets_eight_heads_unless_set() {
        let mut c = RunConfig::default();
        c.apply(&pairs(&[("scheme", "age6")])).unwrap();
        assert_eq!(c.model_config(14).num_heads, 8);
        assert_eq!(c.model_config(14).num_classes, 6);
        c.apply(&pairs(&[("model.num_heads", "2")])).unwrap();
        assert_eq!(c.model_config(14).num_heads, 2);
        assert_eq!(RunConfig::default().model_config(14).num_heads, 4);
    }

    #[test]
    fn later_values_win_and_seed_fans_out() {
        let mut c = RunConfig::default();
        c.apply(&pairs(&[("train.seed", "5"), ("seed", "11"), ("train.lr", "0.1"), ("train.lr", "0.2")]))
            .unwrap();
        assert_eq!((c.split.seed, c.model.seed, c.train.seed), (11, 11, 5));
        assert_eq!(c.train.lr, 0.2);
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.txt");
        fs::write(&path, "# comment\nsignal.window = 128\n\ntrain.max_epochs = 3\n").unwrap();
        let c = RunConfig::resolve(Some(&path), &pairs(&[("train.max_epochs", "4")])).unwrap();
        assert_eq!(c.signal.window_samples, 128);
        assert_eq!(c.train.max_epochs, 4);
        assert_eq!(c.model_config(14).window_samples, 128);
    }

    #[test]
    fn text_round_trips() {
        let mut c = RunConfig::default();
        c.apply(&pairs(&[("scheme", "load3"), ("split.mode", "subject"), ("train.lr", "0.0005"), ("data", "d/m.txt")]))
            .unwrap();
        let back_pairs = RunConfig::parse_pairs(&c.to_text(), Path::new("x")).unwrap();
        let mut back = RunConfig::default();
        back.apply(&back_pairs).unwrap();
        assert_eq!(back.model_config(14), c.model_config(14));
        assert_eq!((back.split, back.signal, back.train, back.scheme, back.data), (c.split, c.signal, c.train, c.scheme, c.data));
    }

    #[test]
    fn bad_settings_are_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("model.width", "3").is_err());
        assert!(c.set("train.lr", "fast").is_err());
        assert!(c.set("model.positional_encoding", "maybe").is_err());
        assert!(RunConfig::parse_pairs("novalue\n", Path::new("f")).is_err());
        c.set("signal.high_hz", "70").unwrap();
        assert!(matches!(c.validate(), Err(Error::Parameter(_))));
        let mut c = RunConfig::default();
        c.set("model.num_heads", "5").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
