use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::graph::{ChannelSet, SimilarityConfig};
use crate::losses::Reduction;
use crate::lpn::AttentionKind;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("bad value '{value}' for '{key}': {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// The five model settings compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    /// MLP head on the raw concatenated embeddings.
    Baseline,
    /// GCN stack plus head, trained on the initial prediction only.
    FcnOnly,
    /// GCN and signed label propagation, no domain term.
    FcnLpnNoMmd,
    /// Full objective with a single non-negative attention weight per edge.
    LpnAlpha,
    /// GCN, signed label propagation and the class-wise MMD term.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::FcnOnly,
        Variant::FcnLpnNoMmd,
        Variant::LpnAlpha,
        Variant::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::FcnOnly => "fcn-only",
            Variant::FcnLpnNoMmd => "fcn-lpn-no-mmd",
            Variant::LpnAlpha => "lpn-alpha",
            Variant::Full => "full",
        }
    }

    /// Roman-numeral row label used in ablation tables.
    pub fn row(self) -> &'static str {
        match self {
            Variant::Baseline => "(i)",
            Variant::FcnOnly => "(ii)",
            Variant::FcnLpnNoMmd => "(iii)",
            Variant::LpnAlpha => "(iv)",
            Variant::Full => "(v)",
        }
    }

    pub fn uses_gcn(self) -> bool {
        self != Variant::Baseline
    }

    pub fn attention(self) -> Option<AttentionKind> {
        match self {
            Variant::Baseline | Variant::FcnOnly => None,
            Variant::FcnLpnNoMmd | Variant::Full => Some(AttentionKind::Signed),
            Variant::LpnAlpha => Some(AttentionKind::Scalar),
        }
    }

    pub fn uses_mmd(self) -> bool {
        matches!(self, Variant::LpnAlpha | Variant::Full)
    }

    /// Whether unseen nodes join the cross-entropy terms by default.
    pub fn merges_unseen(self) -> bool {
        self != Variant::Full
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v = match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "baseline" | "i" => Variant::Baseline,
            "fcn-only" | "fcnonly" | "ii" => Variant::FcnOnly,
            "fcn-lpn-no-mmd" | "fcnlpnnommd" | "iii" => Variant::FcnLpnNoMmd,
            "lpn-alpha" | "lpnalpha" | "iv" => Variant::LpnAlpha,
            "full" | "v" => Variant::Full,
            _ => return Err(format!("unknown variant '{s}'")),
        };
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub tau: f64,
    pub channels: ChannelSet,
    pub strict_channels: bool,
    pub lambda: f64,
    pub mu: f64,
    pub lr: f64,
    pub epochs: usize,
    pub gcn_layers: usize,
    pub la_layers: usize,
    pub hidden: usize,
    pub seed: u64,
    pub runs: usize,
    pub adamw: AdamWConfig,
    pub variant: Variant,
    /// Train on the graph over every node instead of only the training nodes.
    pub transductive_train: bool,
    pub shared_self_weight: bool,
    pub mean_reduction: bool,
    /// Overrides [`Variant::merges_unseen`].
    pub merge_unseen: Option<bool>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.9,
            channels: ChannelSet::ALL,
            strict_channels: false,
            lambda: 1.0,
            mu: 1.0,
            lr: 1e-4,
            epochs: 500,
            gcn_layers: 4,
            la_layers: 2,
            hidden: 256,
            seed: 0,
            runs: 5,
            adamw: AdamWConfig::default(),
            variant: Variant::Full,
            transductive_train: false,
            shared_self_weight: false,
            mean_reduction: false,
            merge_unseen: None,
        }
    }
}

const KEYS: &[&str] = &[
    "tau",
    "channels",
    "strict_channels",
    "lambda",
    "mu",
    "lr",
    "epochs",
    "gcn_layers",
    "la_layers",
    "hidden",
    "seed",
    "runs",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "variant",
    "transductive_train",
    "shared_self_weight",
    "mean_reduction",
    "merge_unseen",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl TrainConfig {
    pub fn similarity(&self) -> SimilarityConfig {
        SimilarityConfig {
            tau: self.tau,
            channels_enabled: self.channels,
            strict_channels: self.strict_channels,
        }
    }

    pub fn reduction(&self) -> Reduction {
        if self.mean_reduction {
            Reduction::Mean
        } else {
            Reduction::Sum
        }
    }

    pub fn merges_unseen(&self) -> bool {
        self.merge_unseen.unwrap_or(self.variant.merges_unseen())
    }

    /// Seed of run `k` in a multi-run protocol.
    pub fn run_seed(&self, k: usize) -> u64 {
        self.seed.wrapping_add(k as u64)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        self.similarity()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if self.hidden < 2 {
            return bad("hidden must be at least 2".into());
        }
        if self.la_layers == 0 {
            return bad("la_layers must be at least 1".into());
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        let a = &self.adamw;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return bad("adamw betas must be in [0, 1)".into());
        }
        if !(a.eps > 0.0) || !(a.weight_decay >= 0.0) {
            return bad("adamw eps must be positive and weight_decay non-negative".into());
        }
        Ok(())
    }

    /// Sets one field from its textual key and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "tau" => self.tau = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "strict_channels" => self.strict_channels = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "mu" => self.mu = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "gcn_layers" => self.gcn_layers = parse(key, value)?,
            "la_layers" => self.la_layers = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "runs" => self.runs = parse(key, value)?,
            "beta1" => self.adamw.beta1 = parse(key, value)?,
            "beta2" => self.adamw.beta2 = parse(key, value)?,
            "eps" => self.adamw.eps = parse(key, value)?,
            "weight_decay" => self.adamw.weight_decay = parse(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "transductive_train" => self.transductive_train = parse(key, value)?,
            "shared_self_weight" => self.shared_self_weight = parse(key, value)?,
            "mean_reduction" => self.mean_reduction = parse(key, value)?,
            "merge_unseen" => {
                self.merge_unseen = match value {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.trim().to_string())),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: n + 1 })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    /// Every field as `key = value`, one per line, in a fixed order.
    /// Floats use the shortest representation that parses back exactly.
    pub fn to_kv(&self) -> String {
        let merge = self
            .merge_unseen
            .map_or_else(|| "auto".to_string(), |b| b.to_string());
        let values: Vec<String> = vec![
            self.tau.to_string(),
            self.channels.to_string(),
            self.strict_channels.to_string(),
            self.lambda.to_string(),
            self.mu.to_string(),
            self.lr.to_string(),
            self.epochs.to_string(),
            self.gcn_layers.to_string(),
            self.la_layers.to_string(),
            self.hidden.to_string(),
            self.seed.to_string(),
            self.runs.to_string(),
            self.adamw.beta1.to_string(),
            self.adamw.beta2.to_string(),
            self.adamw.eps.to_string(),
            self.adamw.weight_decay.to_string(),
            self.variant.to_string(),
            self.transductive_train.to_string(),
            self.shared_self_weight.to_string(),
            self.mean_reduction.to_string(),
            merge,
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
