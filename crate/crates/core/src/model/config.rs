use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Tanh approximation, known as `gelu_new` in GPT2 checkpoints.
    #[default]
    #[serde(alias = "gelu_new")]
    GeluTanhApprox,
    /// `x * Phi(x)` with the exact error function.
    #[serde(alias = "gelu")]
    GeluExact,
}

fn default_ln_eps() -> f32 {
    1e-5
}

/// Architecture constants of a GPT2-style decoder with learned absolute positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layer: usize,
    pub n_head: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub d_vocab: usize,
    pub n_ctx: usize,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f32,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub tied_embeddings: bool,
    /// Set once layer norms are folded and writing weights centered.
    #[serde(default)]
    pub preprocessed: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layer", self.n_layer),
            ("n_head", self.n_head),
            ("d_model", self.d_model),
            ("d_mlp", self.d_mlp),
            ("d_vocab", self.d_vocab),
            ("n_ctx", self.n_ctx),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("{name} must be at least 1")));
        }
        if self.d_model % self.n_head != 0 {
            return Err(Error::Invalid(format!(
                "d_model {} is not divisible by n_head {}",
                self.d_model, self.n_head
            )));
        }
        if !(self.ln_eps > 0.0 && self.ln_eps.is_finite()) {
            return Err(Error::Invalid("ln_eps must be a small positive number".into()));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_head
    }

    pub fn n_neurons(&self) -> usize {
        self.n_layer * self.d_mlp
    }
}
