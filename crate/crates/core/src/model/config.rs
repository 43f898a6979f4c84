use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::envgym::NUM_ACTIONS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    /// One-hot symbolic grids through two 3×3 convolutions.
    Grid20,
    /// 84×84 RGB frames through the 8/4/3 strided stack.
    Pixel3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelector {
    First,
    /// Layer `n_layers / 2`.
    Middle,
    Last,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadSelector {
    /// Head 0 only.
    Single,
    All,
}

/// Which attention maps receive the memory loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub layer: LayerSelector,
    pub heads: HeadSelector,
}

impl Placement {
    pub const DEFAULT: Placement = Placement { layer: LayerSelector::First, heads: HeadSelector::Single };

    /// The six layer × head combinations.
    pub fn all() -> [Placement; 6] {
        let mut out = [Self::DEFAULT; 6];
        let layers = [LayerSelector::First, LayerSelector::Middle, LayerSelector::Last];
        for (i, layer) in layers.into_iter().enumerate() {
            out[2 * i] = Placement { layer, heads: HeadSelector::Single };
            out[2 * i + 1] = Placement { layer, heads: HeadSelector::All };
        }
        out
    }
}

impl Default for Placement {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let layer = match self.layer {
            LayerSelector::First => "first",
            LayerSelector::Middle => "middle",
            LayerSelector::Last => "last",
        };
        let heads = match self.heads {
            HeadSelector::Single => "single",
            HeadSelector::All => "all",
        };
        write!(f, "{layer}-{heads}")
    }
}

impl FromStr for Placement {
    type Err = ModelError;

    /// Parses `layer-heads`, e.g. `first-single` or `last-all`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (l, h) = s.split_once(['-', ':', '/']).ok_or(ModelError::Config("placement must be layer-heads"))?;
        let layer = match l {
            "first" => LayerSelector::First,
            "middle" => LayerSelector::Middle,
            "last" => LayerSelector::Last,
            _ => return Err(ModelError::Config("placement layer must be first, middle or last")),
        };
        let heads = match h {
            "single" => HeadSelector::Single,
            "all" => HeadSelector::All,
            _ => return Err(ModelError::Config("placement heads must be single or all")),
        };
        Ok(Placement { layer, heads })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub ff_width: usize,
    pub embedder: EmbedderKind,
    pub n_actions: usize,
    /// Longest trajectory, in timesteps, the model accepts.
    pub max_steps: usize,
    pub placement: Placement,
}

impl ModelConfig {
    pub fn full() -> Self {
        Self::with_width(512, 4, 160)
    }

    pub fn desk() -> Self {
        Self::with_width(64, 2, 64)
    }

    fn with_width(d_model: usize, n_layers: usize, max_steps: usize) -> Self {
        Self {
            d_model,
            n_layers,
            n_heads: 2,
            dropout: 0.1,
            ff_width: 4 * d_model,
            embedder: EmbedderKind::Grid20,
            n_actions: NUM_ACTIONS,
            max_steps,
            placement: Placement::DEFAULT,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config("d_model must be a positive multiple of n_heads"));
        }
        if self.n_layers == 0 || self.ff_width == 0 || self.max_steps == 0 {
            return Err(ModelError::Config("layers, feedforward width and max_steps must be positive"));
        }
        if self.n_actions == 0 {
            return Err(ModelError::Config("n_actions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn supervised_layer(&self) -> usize {
        match self.placement.layer {
            LayerSelector::First => 0,
            LayerSelector::Middle => self.n_layers / 2,
            LayerSelector::Last => self.n_layers - 1,
        }
    }

    pub fn supervised_heads(&self) -> Vec<usize> {
        match self.placement.heads {
            HeadSelector::Single => alloc::vec![0],
            HeadSelector::All => (0..self.n_heads).collect(),
        }
    }
}
