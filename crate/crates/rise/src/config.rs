//! Flat key=value config files (one key per line, `#` comments) for
//! training runs and synthetic-corpus specs.

use indexmap::IndexMap;

use crate::encoders::{EncoderKind, EncoderSpec};
use crate::error::{Result, RiseError};
use crate::rise::{InstanceKind, Objective, RiseConfig};

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<IndexMap<String, String>> {
    let mut map = IndexMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            RiseError::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(map: &IndexMap<String, String>, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| RiseError::Config(format!("invalid value `{v}` for key `{key}`"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPolicy {
    BySeries,
    ByTime,
}

impl SplitPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "by_series" => Ok(SplitPolicy::BySeries),
            "by_time" => Ok(SplitPolicy::ByTime),
            other => Err(RiseError::Config(format!(
                "unknown split policy `{other}` (expected by_series|by_time)"
            ))),
        }
    }
}

/// Everything a training run needs beyond the data itself.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Candidate L2 coefficients; more than one triggers validation over the grid.
    pub l2: Vec<f64>,
    /// Global gradient-norm clip applied before each optimizer step.
    pub clip: f64,
    pub d: usize,
    pub d_d: usize,
    pub d_h: usize,
    pub n_layers: usize,
    pub n_classes: usize,
    pub n_bin: usize,
    pub precision: usize,
    pub seed: u64,
    pub objective: Objective,
    pub split: SplitPolicy,
    pub train_frac: f64,
    pub val_frac: f64,
    /// Evaluation gate: minimum number of prior observed values.
    pub min_prior: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 1e-3,
            l2: vec![1e-3],
            clip: 5.0,
            d: 64,
            d_d: 64,
            d_h: 512,
            n_layers: 2,
            n_classes: 128,
            n_bin: 10,
            precision: 2,
            seed: 0,
            objective: Objective::Classification,
            split: SplitPolicy::BySeries,
            train_frac: 0.8,
            val_frac: 0.1,
            min_prior: 10,
        }
    }
}

impl TrainConfig {
    pub fn from_kv(map: &IndexMap<String, String>) -> Result<Self> {
        const KNOWN: [&str; 17] = [
            "epochs", "lr", "l2", "clip", "d", "d_d", "d_h", "n_layers", "n_classes", "n_bin",
            "precision", "seed", "objective", "split", "train_frac", "val_frac", "min_prior",
        ];
        for key in map.keys() {
            if !KNOWN.contains(&key.as_str()) {
                return Err(RiseError::Config(format!("unknown config key `{key}`")));
            }
        }
        let def = TrainConfig::default();
        let l2 = match map.get("l2") {
            None => def.l2.clone(),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| {
                        RiseError::Config(format!("invalid l2 value `{p}`"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?,
        };
        if l2.is_empty() || l2.iter().any(|&v| v < 0.0) {
            return Err(RiseError::Config("l2 values must be nonnegative".into()));
        }
        let cfg = TrainConfig {
            epochs: parse_num(map, "epochs", def.epochs)?,
            lr: parse_num(map, "lr", def.lr)?,
            l2,
            clip: parse_num(map, "clip", def.clip)?,
            d: parse_num(map, "d", def.d)?,
            d_d: parse_num(map, "d_d", def.d_d)?,
            d_h: parse_num(map, "d_h", def.d_h)?,
            n_layers: parse_num(map, "n_layers", def.n_layers)?,
            n_classes: parse_num(map, "n_classes", def.n_classes)?,
            n_bin: parse_num(map, "n_bin", def.n_bin)?,
            precision: parse_num(map, "precision", def.precision)?,
            seed: parse_num(map, "seed", def.seed)?,
            objective: match map.get("objective") {
                None => def.objective,
                Some(v) => Objective::parse(v)?,
            },
            split: match map.get("split") {
                None => def.split,
                Some(v) => SplitPolicy::parse(v)?,
            },
            train_frac: parse_num(map, "train_frac", def.train_frac)?,
            val_frac: parse_num(map, "val_frac", def.val_frac)?,
            min_prior: parse_num(map, "min_prior", def.min_prior)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_kv(&parse_kv(text)?)
    }

    fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(RiseError::Config("lr must be positive".into()));
        }
        if self.d == 0 || self.d_d == 0 || self.d_h == 0 || self.n_layers == 0 {
            return Err(RiseError::Config("dimensions must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(RiseError::Config("n_classes must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.train_frac)
            || !(0.0..1.0).contains(&self.val_frac)
            || self.train_frac + self.val_frac >= 1.0
            || self.train_frac <= 0.0
        {
            return Err(RiseError::Config("split fractions must leave room for all three splits".into()));
        }
        Ok(())
    }

    pub fn encoder_spec(&self, kind: EncoderKind) -> EncoderSpec {
        EncoderSpec {
            kind,
            d: self.d,
            d_d: self.d_d,
            n_bin: self.n_bin,
            precision: self.precision,
        }
    }

    pub fn rise_config(&self, instance: InstanceKind, encoder: EncoderKind) -> RiseConfig {
        RiseConfig {
            instance,
            encoder: self.encoder_spec(encoder),
            d_h: self.d_h,
            n_layers: self.n_layers,
            n_classes: self.n_classes,
            objective: self.objective,
        }
    }
}
