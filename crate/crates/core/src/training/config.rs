use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::iqa::DEFAULT_PATCH;
use crate::losses::{LossKind, LossWeights};
use crate::network::NetConfig;

/// Everything that shapes a training run. Read from JSON; unknown keys are
/// rejected and missing keys take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub decay_factor: f64,
    /// Epochs without a validation SSIM gain of at least `plateau_threshold`
    /// before the learning rate decays.
    pub patience: usize,
    pub min_lr: f64,
    pub plateau_threshold: f64,
    /// Epoch budget per phase.
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossWeights,
    /// Objective that is minimized; `total` unless running an ablation.
    pub objective: LossKind,
    pub augment: bool,
    /// Admission slack above `N_a`. Accepts the string `"inf"`.
    #[serde(serialize_with = "ser_tau", deserialize_with = "de_tau")]
    pub tau: f64,
    pub max_rounds: usize,
    pub val_fraction: f64,
    /// A phase ends once this many learning-rate decays have fired.
    pub stop_after_decays: Option<usize>,
    pub niqe_patch: usize,
    /// Architecture. Its seed is replaced by the `init` sub-seed of `seed`.
    pub network: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 1e-4,
            decay_factor: 0.5,
            patience: 5,
            min_lr: 1e-6,
            plateau_threshold: 1e-4,
            epochs: 100,
            seed: 0,
            loss: LossWeights::default(),
            objective: LossKind::Total,
            augment: true,
            tau: 0.5,
            max_rounds: 5,
            val_fraction: 0.1,
            stop_after_decays: Some(2),
            niqe_patch: DEFAULT_PATCH,
            network: NetConfig::default(),
        }
    }
}

fn ser_tau<S: Serializer>(tau: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if tau.is_infinite() && *tau > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*tau)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TauRepr {
    Number(f64),
    Text(String),
}

fn de_tau<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    match TauRepr::deserialize(d)? {
        TauRepr::Number(v) => Ok(v),
        TauRepr::Text(s) => parse_tau(&s).map_err(serde::de::Error::custom),
    }
}

/// Parses a threshold, accepting `inf`, `+inf` and `infinity`.
pub fn parse_tau(s: &str) -> Result<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Ok(f64::INFINITY),
        other => other
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("invalid tau `{s}`"))),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        positive("lr", self.lr)?;
        positive("min_lr", self.min_lr)?;
        positive("decay_factor", self.decay_factor)?;
        if self.decay_factor >= 1.0 {
            return Err(Error::Config("decay_factor must be below 1".into()));
        }
        if self.min_lr > self.lr {
            return Err(Error::Config("min_lr exceeds lr".into()));
        }
        if !(self.plateau_threshold >= 0.0) {
            return Err(Error::Config("plateau_threshold must be non-negative".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if self.niqe_patch < 4 {
            return Err(Error::Config("niqe_patch must be at least 4".into()));
        }
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.network.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The network configuration with the derived initialization seed.
    pub fn net_config(&self) -> NetConfig {
        self.network
            .clone()
            .with_seed(crate::seeds::derive(self.seed, crate::seeds::INIT, 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(TrainConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
        assert_eq!(TrainConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = TrainConfig::from_json(r#"{"batch": 4}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn tau_accepts_inf() {
        let cfg = TrainConfig::from_json(r#"{"tau": "inf"}"#).unwrap();
        assert!(cfg.tau.is_infinite());
        assert!(cfg.to_json().unwrap().contains("\"inf\""));
        assert_eq!(TrainConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
        assert!(TrainConfig::from_json(r#"{"tau": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"tau": "soon"}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            r#"{"batch_size": 0}"#,
            r#"{"lr": -1}"#,
            r#"{"decay_factor": 1.5}"#,
            r#"{"min_lr": 1}"#,
            r#"{"val_fraction": 1}"#,
        ] {
            assert!(TrainConfig::from_json(text).is_err(), "{text}");
        }
    }
}
