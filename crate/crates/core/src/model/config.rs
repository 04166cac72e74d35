use crate::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub num_encoders: usize,
    pub num_classes: usize,
    pub window_samples: usize,
    pub num_channels: usize,
    pub dropout_p: f64,
    pub seed: u64,
    /// Add the sinusoidal table after the channel embedding.
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            num_heads: 4,
            d_ff: 64,
            num_encoders: 4,
            num_classes: 2,
            window_samples: 256,
            num_channels: 14,
            dropout_p: 0.1,
            seed: 7,
            positional_encoding: true,
        }
    }
}

impl ModelConfig {
    /// Defaults for a `num_classes` problem: 8 heads for the six-class age task, 4 otherwise.
    pub fn for_classes(num_classes: usize) -> Self {
        Self {
            num_classes,
            num_heads: if num_classes == 6 { 8 } else { 4 },
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("d_ff", self.d_ff),
            ("num_encoders", self.num_encoders),
            ("window_samples", self.window_samples),
            ("num_channels", self.num_channels),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be at least 2, got {}", self.num_classes)));
        }
        if self.d_model % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config(format!("d_model must be even for the positional table, got {}", self.d_model)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p)));
        }
        Ok(())
    }

    /// Number of trainable scalars implied by the configuration.
    pub fn parameter_count(&self) -> usize {
        let (c, d, f, k) = (self.num_channels, self.d_model, self.d_ff, self.num_classes);
        let embed = c * d + d;
        let attention = 4 * d * d + 4 * d;
        let ffn = d * f + f + f * d + d;
        let norms = 2 * 2 * d;
        let head = d * k + k;
        embed + self.num_encoders * (attention + ffn + norms) + head
    }
}
