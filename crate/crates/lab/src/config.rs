//! Sweep configuration (TOML) and model identifiers.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ponlab_core::baselines::{CnnConfig, DnnConfig, SatoConfig};
use ponlab_core::channel::LinkConfig;
use ponlab_core::fconvnet::FConvNetConfig;
use ponlab_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::LabError;

/// How the `trials` recordings of one ROP are fed to training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialMode {
    /// Each recording is windowed and split on its own; the splits are pooled.
    #[default]
    Batched,
    /// Recordings are joined end to end into one sequence before windowing.
    Concatenated,
}

fn default_trials() -> usize {
    1
}

fn default_target_ber() -> f64 {
    ponlab_core::metrics::TARGET_BER
}

fn default_one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub rops_dbm: Vec<f64>,
    pub models: Vec<String>,
    pub symbols: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub trial_mode: TrialMode,
    /// Fresh recordings used only for BER counting.
    #[serde(default)]
    pub extra_eval_sequences: usize,
    #[serde(default = "default_target_ber")]
    pub target_ber: f64,
    /// Training window stride of the center-symbol detectors (DNN, CNN).
    #[serde(default = "default_one")]
    pub center_train_stride: usize,
    #[serde(default)]
    pub link: LinkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub fconvnet: FConvNetConfig,
    #[serde(default)]
    pub dnn: DnnConfig,
    #[serde(default)]
    pub cnn: CnnConfig,
    #[serde(default)]
    pub sato: SatoConfig,
}

impl SweepConfig {
    pub fn parse(text: &str) -> Result<Self, LabError> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |m: String| Err(LabError::Config(m));
        if self.rops_dbm.is_empty() || self.rops_dbm.windows(2).any(|w| !(w[0] < w[1])) {
            return bad(format!("ROP list must be non-empty and strictly increasing: {:?}", self.rops_dbm));
        }
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        for m in &self.models {
            m.parse::<ModelId>()?;
        }
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return bad(format!("duplicate model in {:?}", self.models));
        }
        if self.symbols < 1 << 12 {
            return bad(format!("at least 4096 symbols per ROP are required, got {}", self.symbols));
        }
        if self.trials == 0 || self.center_train_stride == 0 {
            return bad("trials and center_train_stride must be at least 1".into());
        }
        if !(self.target_ber > 0.0 && self.target_ber < 0.5) {
            return bad(format!("target BER {} outside (0, 0.5)", self.target_ber));
        }
        self.link.validate()?;
        self.train.validate()?;
        self.fconvnet.validate()?;
        self.dnn.validate()?;
        self.cnn.validate()?;
        self.sato.validate()?;
        Ok(())
    }

    pub fn model_ids(&self) -> Vec<ModelId> {
        self.models.iter().map(|m| m.parse().expect("validated")).collect()
    }

    /// Every setting after defaults are filled in.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Loaded config together with its verbatim text and SHA-256.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: SweepConfig,
    pub text: String,
    pub hash: String,
}

impl LoadedConfig {
    pub fn from_text(text: String) -> Result<Self, LabError> {
        let config = SweepConfig::parse(&text)?;
        let hash = hex::encode(Sha256::digest(text.as_bytes()));
        Ok(Self { config, text, hash })
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_text(text)
    }
}

/// One equalizer variant of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelId {
    FConvNet(usize),
    Sato(usize),
    Dnn,
    Cnn,
}

impl FromStr for ModelId {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self, LabError> {
        let sized = |prefix: &str| -> Option<usize> { s.strip_prefix(prefix)?.parse().ok().filter(|&n| n > 0) };
        match s {
            "dnn" => Ok(Self::Dnn),
            "cnn" => Ok(Self::Cnn),
            _ => sized("fconvnet-")
                .map(Self::FConvNet)
                .or_else(|| sized("sato-").map(Self::Sato))
                .ok_or_else(|| LabError::Config(format!("unknown model {s:?}; expected fconvnet-<ws>, sato-<taps>, dnn or cnn"))),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FConvNet(ws) => write!(f, "fconvnet-{ws}"),
            Self::Sato(taps) => write!(f, "sato-{taps}"),
            Self::Dnn => f.write_str("dnn"),
            Self::Cnn => f.write_str("cnn"),
        }
    }
}
