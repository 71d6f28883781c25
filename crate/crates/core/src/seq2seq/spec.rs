use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Encoder plus a decoder that reconstructs the input in reverse order.
    Autoencoder,
    /// Encoder plus a decoder that predicts the frames that follow.
    FuturePredictor,
    /// One encoder feeding both decoders; the branch losses are summed.
    Composite,
}

impl Variant {
    pub fn has_recon(self) -> bool {
        matches!(self, Variant::Autoencoder | Variant::Composite)
    }

    pub fn has_future(self) -> bool {
        matches!(self, Variant::FuturePredictor | Variant::Composite)
    }
}

/// Output nonlinearity of the decoder readouts; it also fixes the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputUnit {
    /// Logistic outputs trained with cross-entropy.
    Logistic,
    /// Identity outputs trained with squared error.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Recon,
    Future,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Conditional decoders read the ground-truth previous frame.
    Train,
    /// Conditional decoders read their own previous output.
    Generate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub layers: usize,
    pub hidden_dim: usize,
    /// Flattened frame size.
    pub input_dim: usize,
    pub t_in: usize,
    /// Ignored by the autoencoder.
    pub t_future: usize,
    pub conditional_recon: bool,
    pub conditional_future: bool,
    pub output_unit: OutputUnit,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 || self.input_dim == 0 {
            bail!(
                Parameter,
                "layers, hidden_dim and input_dim must be positive ({}, {}, {})",
                self.layers,
                self.hidden_dim,
                self.input_dim
            );
        }
        if self.t_in == 0 {
            bail!(Parameter, "t_in must be at least 1");
        }
        if self.variant == Variant::FuturePredictor && self.t_future == 0 {
            bail!(Parameter, "a future predictor needs t_future >= 1");
        }
        Ok(())
    }

    /// Number of frames the future branch emits (zero without one).
    pub fn future_len(&self) -> usize {
        if self.variant.has_future() {
            self.t_future
        } else {
            0
        }
    }

    pub fn conditional(&self, branch: Branch) -> bool {
        match branch {
            Branch::Recon => self.conditional_recon,
            Branch::Future => self.conditional_future,
        }
    }

    /// 32×32 canvas, 128 units, 10 frames in and 10 predicted.
    pub fn desk(variant: Variant) -> Self {
        Self {
            variant,
            layers: 1,
            hidden_dim: 128,
            input_dim: 32 * 32,
            t_in: 10,
            t_future: 10,
            conditional_recon: false,
            conditional_future: false,
            output_unit: OutputUnit::Logistic,
        }
    }

    /// Single-layer, 2048-unit moving-digits configuration on 64×64 frames.
    pub fn paper_moving_mnist(variant: Variant) -> Self {
        Self {
            hidden_dim: 2048,
            input_dim: 64 * 64,
            ..Self::desk(variant)
        }
    }

    /// Two-layer, 2048-unit composite over 4096-d percepts, 16 in and 13 out.
    pub fn paper_action_pretraining() -> Self {
        Self {
            variant: Variant::Composite,
            layers: 2,
            hidden_dim: 2048,
            input_dim: 4096,
            t_in: 16,
            t_future: 13,
            conditional_recon: false,
            conditional_future: false,
            output_unit: OutputUnit::Linear,
        }
    }
}
