use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::Wiring;
use crate::optim::AdamConfig;
use crate::text::EncoderConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Word and sentence encoder sizes; `encoder.out_dim` is the model width `d`.
    pub encoder: EncoderConfig,
    /// Hidden width of the comparison head.
    pub d2: usize,
    pub ggnn_layers: usize,
    /// One graph network for both graph families instead of one each.
    pub share_ggnn: bool,
    /// Softmax-normalize the cross-graph map weights.
    pub normalize_map: bool,
    pub wiring: Wiring,
    /// Share `x` of the `2d` representation width given to the history
    /// path. `None` keeps both paths at `d` without projections; `0` removes
    /// the history path, `1` the text path.
    pub global_dim_ratio: Option<f64>,
    /// Dropout on the comparison-head input during training.
    pub dropout: f64,
    /// Standard deviation of the Gaussian parameter initialization.
    pub init_std: f64,
}

impl ModelConfig {
    pub fn reference() -> Self {
        Self {
            encoder: EncoderConfig::reference(),
            d2: 512,
            ggnn_layers: 1,
            share_ggnn: false,
            normalize_map: false,
            wiring: Wiring::Cross,
            global_dim_ratio: None,
            dropout: 0.5,
            init_std: 0.1,
        }
    }

    pub fn desk() -> Self {
        Self {
            encoder: EncoderConfig::desk(),
            d2: 32,
            dropout: 0.2,
            ..Self::reference()
        }
    }

    pub fn d(&self) -> usize {
        self.encoder.out_dim
    }

    pub fn dims(&self) -> Dims {
        let d = self.d();
        match self.global_dim_ratio {
            None => Dims {
                local: d,
                global: d,
                projected: false,
            },
            Some(x) => {
                let global = (x.clamp(0.0, 1.0) * 2.0 * d as f64).round() as usize;
                Dims {
                    local: 2 * d - global,
                    global,
                    projected: true,
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Infeasible(m.to_string()));
        if self.d() == 0 || self.d2 == 0 || self.encoder.word_dim == 0 || self.encoder.hidden == 0 {
            return bad("model dimensions must be positive");
        }
        if self.ggnn_layers == 0 {
            return bad("at least one graph layer is needed");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if let Some(x) = self.global_dim_ratio {
            if !(0.0..=1.0).contains(&x) {
                return bad("global dimension ratio must lie in [0, 1]");
            }
        }
        if self.encoder.cell != "gru" {
            return bad("only the gru cell is implemented");
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::reference()
    }
}

/// Widths of the text (local) and history (global) parts of each side's
/// representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub local: usize,
    pub global: usize,
    pub projected: bool,
}

impl Dims {
    pub fn side(&self) -> usize {
        self.local + self.global
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayMode {
    /// `lr · factor^k` after `k` decay periods.
    Multiply,
    /// `max(lr − factor · k, 0)`.
    Subtract,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs per decay period; 0 keeps the rate constant.
    pub lr_decay_every: usize,
    pub decay_mode: DecayMode,
    pub adam: AdamConfig,
    /// Decision threshold on `Ŷ`.
    pub threshold: f64,
}

impl TrainConfig {
    pub fn reference() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            lr_decay: 0.1,
            lr_decay_every: 2,
            decay_mode: DecayMode::Multiply,
            adam: AdamConfig::default(),
            threshold: 0.5,
        }
    }

    pub fn desk() -> Self {
        Self {
            epochs: 30,
            lr: 3e-3,
            lr_decay: 0.5,
            lr_decay_every: 10,
            ..Self::reference()
        }
    }

    /// Learning rate used throughout `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_decay_every == 0 {
            return self.lr;
        }
        let k = (epoch / self.lr_decay_every) as i32;
        match self.decay_mode {
            DecayMode::Multiply => self.lr * self.lr_decay.powi(k),
            DecayMode::Subtract => (self.lr - self.lr_decay * k as f64).max(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Infeasible("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Infeasible("learning rate must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::reference()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let t = TrainConfig {
            lr: 0.1,
            ..TrainConfig::reference()
        };
        assert_eq!(t.lr_at(0), 0.1);
        assert_eq!(t.lr_at(1), 0.1);
        assert!((t.lr_at(2) - 0.01).abs() < 1e-15);
        assert!((t.lr_at(5) - 0.001).abs() < 1e-15);
        let s = TrainConfig {
            decay_mode: DecayMode::Subtract,
            lr: 0.25,
            ..t
        };
        assert!((s.lr_at(2) - 0.15).abs() < 1e-15);
        assert_eq!(s.lr_at(100), 0.0);
    }

    #[test]
    fn dimension_split() {
        let mut m = ModelConfig::desk();
        assert_eq!(
            m.dims(),
            Dims {
                local: 32,
                global: 32,
                projected: false
            }
        );
        m.global_dim_ratio = Some(0.2);
        // round(0.2 · 64) = 13
        assert_eq!(
            m.dims(),
            Dims {
                local: 51,
                global: 13,
                projected: true
            }
        );
        m.global_dim_ratio = Some(0.0);
        assert_eq!(m.dims().global, 0);
        m.global_dim_ratio = Some(1.0);
        assert_eq!(m.dims().local, 0);
        assert_eq!(ModelConfig::reference().dims().side() * 3, 6 * 200);
    }

    #[test]
    fn configs_round_trip_through_toml() {
        let m = ModelConfig::desk();
        let back: ModelConfig = toml::from_str(&toml::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        let partial: TrainConfig = toml::from_str("epochs = 3\nlr = 0.1").unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.batch_size, 16);
        assert!(toml::from_str::<TrainConfig>("epoch = 3").is_err());
    }
}
