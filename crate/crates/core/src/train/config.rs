use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::DEFAULT_CHANNELS;

/// The four experimental training configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConfigId {
    /// 1: supervised on the target domain only.
    TargetSupervised,
    /// 2: supervised on the source domain only.
    SourceSupervised,
    /// 3: labeled source + unlabeled target, adversarial domain loss.
    UnsupervisedDa,
    /// 4: labeled source + partially labeled target, adversarial domain loss.
    SemiSupervisedDa,
}

impl ConfigId {
    pub fn number(self) -> u8 {
        match self {
            ConfigId::TargetSupervised => 1,
            ConfigId::SourceSupervised => 2,
            ConfigId::UnsupervisedDa => 3,
            ConfigId::SemiSupervisedDa => 4,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(ConfigId::TargetSupervised),
            2 => Ok(ConfigId::SourceSupervised),
            3 => Ok(ConfigId::UnsupervisedDa),
            4 => Ok(ConfigId::SemiSupervisedDa),
            _ => Err(Error::Config(format!("configuration id must be 1-4, got {n}"))),
        }
    }

    pub fn is_adaptation(self) -> bool {
        matches!(self, ConfigId::UnsupervisedDa | ConfigId::SemiSupervisedDa)
    }

    pub fn uses_source(self) -> bool {
        self != ConfigId::TargetSupervised
    }

    pub fn uses_target(self) -> bool {
        self != ConfigId::SourceSupervised
    }
}

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub config: ConfigId,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the domain loss.
    pub lambda_domain: f64,
    /// Gradient-reversal factor: the domain gradient reaching the features is
    /// multiplied by `-lambda_grl`.
    pub lambda_grl: f64,
    /// Fraction of target references that keep their labels (config 4).
    pub labeled_target_fraction: f64,
    pub seed: u64,
    /// Sliding-window stride used to cut training patches.
    pub stride: usize,
    /// Trunk width of a freshly built model.
    pub channels: usize,
}

pub const KEYS: [&str; 10] = [
    "config",
    "lr",
    "epochs",
    "batch_size",
    "lambda_domain",
    "lambda_grl",
    "labeled_target_fraction",
    "seed",
    "stride",
    "channels",
];

impl TrainConfig {
    pub fn new(config: ConfigId) -> Self {
        Self {
            config,
            lr: 5e-4,
            epochs: 100,
            batch_size: 16,
            lambda_domain: 1.0,
            lambda_grl: 1.0,
            labeled_target_fraction: 0.5,
            seed: 0,
            stride: 32,
            channels: DEFAULT_CHANNELS,
        }
    }

    /// Domain-loss weight actually applied: zero for the supervised configs.
    pub fn effective_lambda_domain(&self) -> f64 {
        if self.config.is_adaptation() {
            self.lambda_domain
        } else {
            0.0
        }
    }

    /// Labeled share of target references actually applied.
    pub fn effective_labeled_fraction(&self) -> f64 {
        match self.config {
            ConfigId::TargetSupervised => 1.0,
            ConfigId::SourceSupervised | ConfigId::UnsupervisedDa => 0.0,
            ConfigId::SemiSupervisedDa => self.labeled_target_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 || (self.config.is_adaptation() && self.batch_size < 2) {
            return bad(format!("batch size {} too small for config {}", self.batch_size, self.config));
        }
        if !(self.lambda_domain >= 0.0 && self.lambda_domain.is_finite()) {
            return bad(format!("lambda_domain must be >= 0, got {}", self.lambda_domain));
        }
        if !self.lambda_grl.is_finite() {
            return bad("lambda_grl must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.labeled_target_fraction) {
            return bad(format!("labeled_target_fraction must lie in [0,1], got {}", self.labeled_target_fraction));
        }
        if self.stride == 0 {
            return bad("stride must be positive".into());
        }
        if self.channels == 0 || !self.channels.is_multiple_of(8) {
            return bad(format!("channels must be a positive multiple of 8, got {}", self.channels));
        }
        Ok(())
    }

    /// Sets one field from its textual `key = value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
        }
        match key {
            "config" => self.config = ConfigId::from_number(num(key, value)?)?,
            "lr" => self.lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lambda_domain" => self.lambda_domain = num(key, value)?,
            "lambda_grl" => self.lambda_grl = num(key, value)?,
            "labeled_target_fraction" => self.labeled_target_fraction = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "stride" => self.stride = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "config = {}\nlr = {}\nepochs = {}\nbatch_size = {}\nlambda_domain = {}\nlambda_grl = {}\n\
             labeled_target_fraction = {}\nseed = {}\nstride = {}\nchannels = {}\n",
            self.config,
            self.lr,
            self.epochs,
            self.batch_size,
            self.lambda_domain,
            self.lambda_grl,
            self.labeled_target_fraction,
            self.seed,
            self.stride,
            self.channels
        )
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped,
/// unknown keys are rejected.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key {k:?}", i + 1)));
        }
        out.push((k.to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}
