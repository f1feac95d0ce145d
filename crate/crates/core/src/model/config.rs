use serde::{Deserialize, Serialize};

use super::ModelError;

fn default_gcn_dims() -> Vec<usize> {
    vec![128, 64]
}

fn default_lstm_dims() -> Vec<usize> {
    vec![128, 64]
}

fn default_true() -> bool {
    true
}

/// Architecture and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// News embedding width.
    pub d: usize,
    #[serde(default = "default_gcn_dims")]
    pub gcn_dims: Vec<usize>,
    /// Hidden width of the attention projection.
    #[serde(default = "ModelConfig::default_attn_w")]
    pub attn_w: usize,
    #[serde(default = "default_lstm_dims")]
    pub lstm_dims: Vec<usize>,
    /// Look-back window in trading days; each window spans `lookback + 1`
    /// days.
    #[serde(default = "ModelConfig::default_lookback", alias = "T")]
    pub lookback: usize,
    /// Label horizon in trading days.
    #[serde(default = "ModelConfig::default_delta_t")]
    pub delta_t: usize,
    #[serde(default = "ModelConfig::default_lr")]
    pub lr: f64,
    #[serde(default = "ModelConfig::default_beta1")]
    pub beta1: f64,
    #[serde(default = "ModelConfig::default_beta2")]
    pub beta2: f64,
    #[serde(default = "ModelConfig::default_eps")]
    pub eps: f64,
    #[serde(default = "ModelConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default = "ModelConfig::default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Return the best dev-loss epoch rather than the last one.
    #[serde(default = "default_true")]
    pub select_best_dev: bool,
}

impl ModelConfig {
    fn default_attn_w() -> usize {
        64
    }
    fn default_lookback() -> usize {
        20
    }
    fn default_delta_t() -> usize {
        1
    }
    fn default_lr() -> f64 {
        1e-3
    }
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_eps() -> f64 {
        1e-8
    }
    fn default_epochs() -> usize {
        10
    }
    fn default_batch_size() -> usize {
        32
    }

    /// Full-scale defaults for embedding width `d`.
    pub fn new(d: usize) -> Self {
        Self {
            d,
            gcn_dims: default_gcn_dims(),
            attn_w: Self::default_attn_w(),
            lstm_dims: default_lstm_dims(),
            lookback: Self::default_lookback(),
            delta_t: Self::default_delta_t(),
            lr: Self::default_lr(),
            beta1: Self::default_beta1(),
            beta2: Self::default_beta2(),
            eps: Self::default_eps(),
            epochs: Self::default_epochs(),
            batch_size: Self::default_batch_size(),
            seed: 0,
            select_best_dev: true,
        }
    }

    /// Width of the fused graph output `f_L`.
    pub fn graph_out_dim(&self) -> usize {
        *self.gcn_dims.last().expect("validated non-empty")
    }

    /// Width of each LSTM input step: news features plus graph output.
    pub fn lstm_input_dim(&self) -> usize {
        self.d + self.graph_out_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        *self.lstm_dims.last().expect("validated non-empty")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.d == 0 || self.attn_w == 0 {
            return bad("d and attn_w must be >= 1");
        }
        if self.gcn_dims.is_empty() || self.gcn_dims.contains(&0) {
            return bad("gcn_dims must be non-empty with widths >= 1");
        }
        if self.lstm_dims.is_empty() || self.lstm_dims.contains(&0) {
            return bad("lstm_dims must be non-empty with widths >= 1");
        }
        if self.delta_t == 0 || self.batch_size == 0 {
            return bad("delta_t and batch_size must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("Adam betas must be in [0, 1) and eps > 0");
        }
        Ok(())
    }
}
