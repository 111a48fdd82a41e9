//! Run configuration. Every struct deserializes from a flat key-value TOML
//! table with missing keys falling back to defaults, so one config file can
//! feed all commands.

use serde::{Deserialize, Serialize};

use crate::error::TensorError;

/// Order in which the two segment boundaries are probed during perusing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Extend left until rejected, then right.
    LeftThenRight,
    /// Extend right until rejected, then left.
    RightThenLeft,
    /// Probe both boundaries against the same state each round.
    #[default]
    LeftWhileRight,
}

impl Direction {
    pub const ALL: [Direction; 3] = [
        Direction::LeftThenRight,
        Direction::RightThenLeft,
        Direction::LeftWhileRight,
    ];
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left-then-right" => Ok(Self::LeftThenRight),
            "right-then-left" => Ok(Self::RightThenLeft),
            "left-while-right" => Ok(Self::LeftWhileRight),
            _ => Err(format!("unknown direction {s:?}")),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LeftThenRight => "left-then-right",
            Self::RightThenLeft => "right-then-left",
            Self::LeftWhileRight => "left-while-right",
        })
    }
}

/// Which accepted frame is absorbed first when both sides accept in one
/// `LeftWhileRight` round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SideOrder {
    #[default]
    LeftFirst,
    RightFirst,
}

/// How an accepted frame is merged into the running segment state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateStrategy {
    /// Learned reset/update gates.
    #[default]
    Gated,
    /// Elementwise maximum of state and frame (ablation).
    MaxPool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Raw per-frame and per-word feature width.
    pub d_in: usize,
    /// Encoded feature width `D`.
    pub d_model: usize,
    pub heads: usize,
    /// Graph convolution layers over the frame graph (ablation knob).
    pub graph_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 32,
            d_model: 32,
            heads: 8,
            graph_layers: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |m: String| Err(TensorError::Contract(m));
        if self.d_in == 0 {
            return bad("d_in must be positive".into());
        }
        if self.d_model < 4 || self.d_model % 4 != 0 {
            return bad(format!("d_model {} must be a positive multiple of 4", self.d_model));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        Ok(())
    }
}

/// Synthetic corpus shape and noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Frames per video `T`.
    pub frames: usize,
    /// Words per query `N`.
    pub words: usize,
    pub d_in: usize,
    /// Number of distinct activity codes.
    pub vocab: usize,
    pub noise_sigma: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            frames: 48,
            words: 4,
            d_in: 32,
            vocab: 16,
            noise_sigma: 0.25,
            min_len: 4,
            max_len: 16,
            seed: 7,
        }
    }
}

/// Hyperparameters for training and inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub epochs_stage3: usize,
    pub lr: f64,
    /// Epochs without sufficient relative improvement before dividing lr by 10.
    pub plateau_window: usize,
    pub plateau_min_rel: f64,
    pub batch_size: usize,
    /// Anchor frames taken from the frame classifier.
    pub k: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Acceptance threshold on the matching score.
    pub theta: f64,
    pub seed: u64,
    pub triplets_per_example: usize,
    pub weight_class: f64,
    pub weight_match: f64,
    pub weight_conf: f64,
    pub direction: Direction,
    pub side_order: SideOrder,
    pub update_strategy: UpdateStrategy,
    /// Reject NaN/Inf at every tape op.
    pub check_finite: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Full-length schedule: 50/50/100 epochs.
    pub fn full() -> Self {
        Self {
            epochs_stage1: 50,
            epochs_stage2: 50,
            epochs_stage3: 100,
            lr: 1e-4,
            plateau_window: 5,
            plateau_min_rel: 1e-3,
            batch_size: 1,
            k: 5,
            alpha1: 0.6,
            alpha2: 0.4,
            beta1: 0.2,
            beta2: 0.2,
            gamma1: 1.0,
            gamma2: 0.5,
            theta: 0.75,
            seed: 7,
            triplets_per_example: 4,
            weight_class: 1.0,
            weight_match: 1.0,
            weight_conf: 1.0,
            direction: Direction::LeftWhileRight,
            side_order: SideOrder::LeftFirst,
            update_strategy: UpdateStrategy::Gated,
            check_finite: false,
        }
    }

    /// Desk-scale schedule: the full epoch counts divided by five.
    pub fn desk() -> Self {
        let p = Self::full();
        Self {
            epochs_stage1: p.epochs_stage1 / 5,
            epochs_stage2: p.epochs_stage2 / 5,
            epochs_stage3: p.epochs_stage3 / 5,
            ..p
        }
    }

    pub fn epochs(&self, stage: u8) -> usize {
        match stage {
            1 => self.epochs_stage1,
            2 => self.epochs_stage2,
            _ => self.epochs_stage3,
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |m: &str| Err(TensorError::Contract(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.k == 0 || self.plateau_window == 0 {
            return bad("batch_size, k and plateau_window must be positive");
        }
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 {
            return bad("alpha weights must be non-negative");
        }
        if self.beta1 < 0.0 || self.beta2 < 0.0 {
            return bad("margins must be non-negative");
        }
        if self.gamma1 < 0.0 || self.gamma2 < 0.0 {
            return bad("gamma weights must be non-negative");
        }
        if !(-1.0..=1.0).contains(&self.theta) {
            return bad("theta must lie in [-1, 1]");
        }
        if self.weight_class < 0.0 || self.weight_match < 0.0 || self.weight_conf < 0.0 {
            return bad("loss weights must be non-negative");
        }
        Ok(())
    }
}
