//! Flat `key = value` run configuration. Every key is also a command-line
//! flag (`--key-name`); flags win over the config file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mining::IndexMode;
use crate::noiser::NoiseConfig;
use crate::seqmodel::ModelConfig;
use crate::tokenizer::BpeModel;
use crate::trainer::{DaeConfig, TrainConfig};

macro_rules! settings {
    ($( $(#[doc = $doc:literal])* $name:ident : $ty:ty = $default:expr ),* $(,)?) => {
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct Settings {
            $( $(#[doc = $doc])* pub $name: $ty, )*
        }

        impl Default for Settings {
            fn default() -> Self {
                Settings { $( $name: $default, )* }
            }
        }

        #[derive(clap::Args, Clone, Debug, Default)]
        pub struct Overrides {
            $( $(#[doc = $doc])* #[arg(long, global = true, value_name = "V")] pub $name: Option<$ty>, )*
        }

        impl Settings {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($name), )*];

            /// Sets one key from its text form. Dashes in keys read as
            /// underscores.
            pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), SettingError> {
                let key = key.replace('-', "_");
                match key.as_str() {
                    $( stringify!($name) => {
                        self.$name = value.parse().map_err(|_| SettingError::BadValue {
                            key: key.clone(),
                            value: value.to_string(),
                        })?;
                    } )*
                    _ => return Err(SettingError::UnknownKey(key)),
                }
                Ok(())
            }

            pub fn apply(&mut self, o: &Overrides) {
                $( if let Some(v) = &o.$name { self.$name = v.clone(); } )*
            }
        }
    };
}

settings! {
    /// Master seed; every random stream derives from it.
    seed: u64 = 0,
    /// Worker threads (0 = all cores). Results do not depend on it.
    threads: usize = 0,
    style_a: String = "pos".to_string(),
    style_b: String = "neg".to_string(),

    /// Synthetic corpus size per style (train split).
    n_per_style: usize = 2000,
    dev_size: usize = 200,
    test_size: usize = 200,

    min_words: usize = 5,
    max_words: usize = 25,
    merges: usize = 500,

    embed_dim: usize = 64,
    hidden_dim: usize = 64,
    /// Longest sequence in subwords, including the style tag and EOS.
    max_len: usize = 100,
    learning_rate: f64 = 0.01,
    clip_norm: f64 = 5.0,
    init_scale: f64 = 0.3,

    dae_steps: usize = 2000,
    dae_batch_size: usize = 50,
    dae_log_every: usize = 100,
    /// Mean noise span length.
    lambda: f64 = 3.5,
    mask_ratio: f64 = 0.35,
    insert_masks: usize = 1,
    permute: bool = true,

    batch_size: usize = 50,
    spe_k: usize = 4,
    /// `exact` or `approximate`.
    mining_mode: String = "exact".to_string(),
    /// Approximate mining: cells (0 = square root of the side size).
    ivf_lists: usize = 0,
    ivf_probe: usize = 8,
    use_spe: bool = true,
    use_bt: bool = true,
    use_dae: bool = true,
    patience: usize = 5,
    checkpoint_every: usize = 500,
    max_steps: usize = 20000,
    bt_sample_rate: f64 = 1.0,
    dev_limit: usize = 500,
    /// Learning rate for joint training (0 keeps the model's own rate).
    train_learning_rate: f64 = 0.0,
}

#[derive(Debug, thiserror::Error)]
pub enum SettingError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    Syntax(String),
}

impl Settings {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_flat(&mut self, text: &str) -> std::result::Result<(), SettingError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(SettingError::Syntax(format!("line {}: expected key = value", i + 1)));
            };
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Reads a flat config file, or the `config` object of a run manifest.
    pub fn load(path: &Path) -> std::result::Result<Self, SettingError> {
        let text = std::fs::read_to_string(path).map_err(|e| SettingError::Syntax(format!("{}: {e}", path.display())))?;
        if text.trim_start().starts_with('{') {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| SettingError::Syntax(format!("{}: {e}", path.display())))?;
            let cfg = v.get("config").cloned().unwrap_or(v);
            return serde_json::from_value(cfg).map_err(|e| SettingError::Syntax(format!("{}: {e}", path.display())));
        }
        let mut s = Settings::default();
        s.parse_flat(&text)?;
        Ok(s)
    }

    /// The flat text form, one key per line, in declaration order.
    pub fn to_flat(&self) -> String {
        let v = serde_json::to_value(self).expect("settings serialize");
        let mut out = String::new();
        for k in Settings::KEYS {
            let x = &v[*k];
            let text = x.as_str().map(String::from).unwrap_or_else(|| x.to_string());
            out.push_str(&format!("{k} = {text}\n"));
        }
        out
    }

    pub fn model_config(&self, bpe: &BpeModel) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            max_len: self.max_len,
            learning_rate: self.learning_rate,
            clip_norm: self.clip_norm,
            init_scale: self.init_scale,
            seed: self.seed,
            ..ModelConfig::new(bpe.vocab_size(), bpe.num_specials())
        }
    }

    pub fn dae_config(&self, bpe: &BpeModel) -> DaeConfig {
        DaeConfig {
            steps: self.dae_steps,
            batch_size: self.dae_batch_size,
            noise: NoiseConfig {
                lambda: self.lambda,
                mask_ratio: self.mask_ratio,
                insert_masks: self.insert_masks,
                permute: self.permute,
                seed: self.seed,
            },
            boundaries: bpe.punctuation_ids(),
            log_every: self.dae_log_every,
            dev_limit: self.dev_limit,
        }
    }

    /// Index mode for sides of (at most) `n` sentences.
    pub fn mining_mode(&self, n: usize) -> IndexMode {
        match self.mining_mode.as_str() {
            "approximate" => IndexMode::Approximate {
                lists: if self.ivf_lists > 0 {
                    self.ivf_lists
                } else {
                    ((n as f64).sqrt().round() as usize).max(1)
                },
                probe: self.ivf_probe,
            },
            _ => IndexMode::Exact,
        }
    }

    pub fn train_config(&self, n: usize) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_len: self.max_len,
            dae_steps: self.dae_steps,
            spe_k: self.spe_k,
            mining_mode: self.mining_mode(n),
            use_spe: self.use_spe,
            use_bt: self.use_bt,
            use_dae: self.use_dae,
            patience: self.patience,
            checkpoint_every: self.checkpoint_every,
            max_steps: self.max_steps,
            bt_sample_rate: self.bt_sample_rate,
            dev_limit: self.dev_limit,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.style_a == self.style_b {
            return Err(Error::InvalidArgument("style_a and style_b must differ".into()));
        }
        if !matches!(self.mining_mode.as_str(), "exact" | "approximate") {
            return Err(Error::InvalidArgument(format!(
                "mining_mode must be exact or approximate, got {:?}",
                self.mining_mode
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip() {
        let mut s = Settings::default();
        s.parse_flat("# desk\nseed = 7\nuse-spe=false\nmining_mode = approximate # ivf\n\n").unwrap();
        assert_eq!(s.seed, 7);
        assert!(!s.use_spe);
        assert_eq!(s.mining_mode, "approximate");
        let mut t = Settings::default();
        t.parse_flat(&s.to_flat()).unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut s = Settings::default();
        assert!(matches!(s.parse_flat("sed = 1"), Err(SettingError::UnknownKey(_))));
        assert!(matches!(s.parse_flat("seed = x"), Err(SettingError::BadValue { .. })));
        assert!(matches!(s.parse_flat("seed"), Err(SettingError::Syntax(_))));
    }

    #[test]
    fn overrides_win() {
        let mut s = Settings::default();
        s.parse_flat("patience = 9\nbatch_size = 10").unwrap();
        s.apply(&Overrides {
            patience: Some(2),
            ..Overrides::default()
        });
        assert_eq!(s.patience, 2);
        assert_eq!(s.batch_size, 10);
    }
}
