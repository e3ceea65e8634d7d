//! Flat `key = value` run configuration, one entry per line, `#` starts a
//! comment. Every key is optional; unknown or repeated keys are errors.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pcsr::losses::LossToggles;
use pcsr::trainer::{AdaptConfig, Arch, LrSchedule, PretrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line of the offending entry, if it came from a file.
    pub line: Option<usize>,
    pub key: String,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: `{}`: {}", self.key, self.msg),
            None => write!(f, "config `{}`: {}", self.key, self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    /// Seeds for `sweep`; each one pretrains and adapts independently.
    pub seeds: Vec<u64>,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub pretrain: PretrainConfig,
    pub adapt: AdaptConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = Arch::standard(1);
        Self {
            source: None,
            target: None,
            model: None,
            out: None,
            metrics: None,
            seeds: vec![0, 1, 2, 3, 4],
            hidden: arch.hidden,
            feature_dim: arch.feature_dim,
            pretrain: PretrainConfig::default(),
            adapt: AdaptConfig::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "source",
    "target",
    "model",
    "out",
    "metrics",
    "seed",
    "seeds",
    "hidden",
    "feature_dim",
    "pretrain_epochs",
    "pretrain_lr",
    "pretrain_momentum",
    "pretrain_weight_decay",
    "pretrain_batch_size",
    "test_fraction",
    "label_smoothing",
    "lr",
    "momentum",
    "weight_decay",
    "batch_size",
    "epochs",
    "ratio",
    "centers_per_class",
    "rounds",
    "alpha",
    "beta",
    "normalize_features",
    "losses",
    "freeze_classifier",
    "schedule",
    "schedule_gamma",
    "schedule_power",
];

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            key: "--config".into(),
            msg: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    /// Parses and validates. The result is always a runnable configuration.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        let mut schedule = ScheduleKeys::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |key: &str, msg: String| ConfigError {
                line: Some(i + 1),
                key: key.to_string(),
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(line, "expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(key, "unknown key".into()));
            }
            if !seen.insert(key.to_string()) {
                return Err(err(key, "given more than once".into()));
            }
            cfg.set(key, value, &mut schedule).map_err(|m| err(key, m))?;
        }
        cfg.adapt.schedule = schedule.build().map_err(|(key, msg)| ConfigError {
            line: None,
            key: key.into(),
            msg,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str, schedule: &mut ScheduleKeys) -> Result<(), String> {
        let a = &mut self.adapt;
        let p = &mut self.pretrain;
        match key {
            "source" => self.source = Some(path(v)?),
            "target" => self.target = Some(path(v)?),
            "model" => self.model = Some(path(v)?),
            "out" => self.out = Some(path(v)?),
            "metrics" => self.metrics = Some(path(v)?),
            "seed" => self.set_seed(num(v)?),
            "seeds" => self.seeds = list(v)?,
            "hidden" => self.hidden = if v.is_empty() { Vec::new() } else { list(v)? },
            "feature_dim" => self.feature_dim = num(v)?,
            "pretrain_epochs" => p.epochs = num(v)?,
            "pretrain_lr" => p.lr = num(v)?,
            "pretrain_momentum" => p.momentum = num(v)?,
            "pretrain_weight_decay" => p.weight_decay = num(v)?,
            "pretrain_batch_size" => p.batch_size = num(v)?,
            "test_fraction" => p.test_fraction = num(v)?,
            "label_smoothing" => p.label_smoothing = num(v)?,
            "lr" => a.lr = num(v)?,
            "momentum" => a.momentum = num(v)?,
            "weight_decay" => a.weight_decay = num(v)?,
            "batch_size" => a.batch_size = num(v)?,
            "epochs" => a.epochs = num(v)?,
            "ratio" => a.ratio = num(v)?,
            "centers_per_class" => a.centers_per_class = num(v)?,
            "rounds" => a.rounds = num(v)?,
            "alpha" => a.alpha = num(v)?,
            "beta" => a.beta = num(v)?,
            "normalize_features" => a.normalize_features = flag(v)?,
            "losses" => a.toggles = parse_toggles(v)?,
            "freeze_classifier" => a.freeze_classifier = flag(v)?,
            "schedule" => schedule.kind = Some(v.to_string()),
            "schedule_gamma" => schedule.gamma = Some(num(v)?),
            "schedule_power" => schedule.power = Some(num(v)?),
            _ => unreachable!("key list and match arms disagree on {key}"),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.adapt.seed = seed;
        self.pretrain.seed = seed;
    }

    pub fn arch(&self, class_count: usize) -> Arch {
        Arch {
            hidden: self.hidden.clone(),
            feature_dim: self.feature_dim,
            class_count,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let named = |e: pcsr::Error| {
            let key = match &e {
                pcsr::Error::InvalidParam { name, .. } => name.to_string(),
                _ => "config".to_string(),
            };
            ConfigError {
                line: None,
                key,
                msg: e.to_string(),
            }
        };
        self.adapt.validate().map_err(named)?;
        self.pretrain.validate().map_err(named)?;
        if self.feature_dim == 0 || self.hidden.contains(&0) {
            return Err(ConfigError {
                line: None,
                key: if self.feature_dim == 0 { "feature_dim" } else { "hidden" }.into(),
                msg: "layer sizes must be >= 1".into(),
            });
        }
        if self.seeds.is_empty() {
            return Err(ConfigError {
                line: None,
                key: "seeds".into(),
                msg: "need at least one seed".into(),
            });
        }
        Ok(())
    }
}

#[derive(Default)]
struct ScheduleKeys {
    kind: Option<String>,
    gamma: Option<f64>,
    power: Option<f64>,
}

impl ScheduleKeys {
    fn build(self) -> Result<LrSchedule, (&'static str, String)> {
        match self.kind.as_deref().unwrap_or("constant") {
            "constant" => {
                if self.gamma.is_some() || self.power.is_some() {
                    return Err(("schedule", "gamma/power given for a constant schedule".into()));
                }
                Ok(LrSchedule::Constant)
            }
            "inverse" => Ok(LrSchedule::InverseDecay {
                gamma: self.gamma.unwrap_or(10.0),
                power: self.power.unwrap_or(0.75),
            }),
            other => Err(("schedule", format!("expected `constant` or `inverse`, got `{other}`"))),
        }
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>, String> {
    v.split(',').map(|s| num(s.trim())).collect()
}

fn flag(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(format!("expected true/false, got `{v}`")),
    }
}

fn path(v: &str) -> Result<PathBuf, String> {
    if v.is_empty() {
        return Err("empty path".into());
    }
    Ok(PathBuf::from(v))
}

/// Comma-separated subset of `im,pcc,mix`; the listed terms are enabled.
pub fn parse_toggles(v: &str) -> Result<LossToggles, String> {
    let mut t = LossToggles {
        im: false,
        pcc: false,
        mix: false,
    };
    for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let slot = match name {
            "im" => &mut t.im,
            "pcc" => &mut t.pcc,
            "mix" => &mut t.mix,
            _ => return Err(format!("unknown loss term `{name}` (expected im, pcc, mix)")),
        };
        if *slot {
            return Err(format!("loss term `{name}` listed twice"));
        }
        *slot = true;
    }
    if !t.any() {
        return Err("at least one loss term must be enabled".into());
    }
    Ok(t)
}
