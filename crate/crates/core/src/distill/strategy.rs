use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::vlm::TokenStrategy;

/// Student training recipes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Exo renders with keystep-narration ground truth.
    ExoBaseline,
    /// Ego and exo renders, both with narration ground truth.
    EgoPlusExo,
    /// Exo renders with teacher-generated answers.
    SeqDist,
    /// Exo renders with the token bank, narration ground truth.
    EgoTokensOnly,
    /// Teacher answers plus the token bank.
    SeqDistPlusTokens,
    /// Narration ground truth plus MSE between pooled visual features (teacher on ego, student on exo).
    FeatureMse,
    /// Ego-bank outputs of an ego-trained model fed as extra decoder inputs during training.
    LlavidalStyle,
    /// MSE between the student's and an ego-trained model's bank outputs `Ẽ`.
    EgoadaVis,
    /// MSE between the student's and an ego-trained model's connected bank outputs `φ_ego(Ẽ)`.
    EgoadaLang,
    /// Full recipe, tokens appended to the encoder's self-attention instead of cross-attending.
    VeSelfAttention,
    /// Full recipe, bank initialised from an ego-trained model.
    PretrainedCa,
}

impl Strategy {
    pub const ALL: [Strategy; 11] = [
        Strategy::ExoBaseline,
        Strategy::EgoPlusExo,
        Strategy::SeqDist,
        Strategy::EgoTokensOnly,
        Strategy::SeqDistPlusTokens,
        Strategy::FeatureMse,
        Strategy::LlavidalStyle,
        Strategy::EgoadaVis,
        Strategy::EgoadaLang,
        Strategy::VeSelfAttention,
        Strategy::PretrainedCa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::ExoBaseline => "exo_baseline",
            Strategy::EgoPlusExo => "ego_plus_exo",
            Strategy::SeqDist => "seq_dist",
            Strategy::EgoTokensOnly => "ego_tokens_only",
            Strategy::SeqDistPlusTokens => "seq_dist_plus_tokens",
            Strategy::FeatureMse => "feature_mse",
            Strategy::LlavidalStyle => "llavidal_style",
            Strategy::EgoadaVis => "egoada_vis",
            Strategy::EgoadaLang => "egoada_lang",
            Strategy::VeSelfAttention => "ve_self_attention",
            Strategy::PretrainedCa => "pretrained_ca",
        }
    }

    pub fn valid_names() -> String {
        Strategy::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
    }

    /// Trained on teacher-generated answers rather than script ground truth.
    pub fn uses_teacher_answers(self) -> bool {
        matches!(
            self,
            Strategy::SeqDist | Strategy::SeqDistPlusTokens | Strategy::VeSelfAttention | Strategy::PretrainedCa
        )
    }

    /// Student carries ego-token slots in its decoder prefix.
    pub fn uses_bank(self) -> bool {
        !matches!(self, Strategy::ExoBaseline | Strategy::EgoPlusExo | Strategy::SeqDist | Strategy::FeatureMse)
    }

    pub fn token_strategy(self) -> TokenStrategy {
        match self {
            Strategy::VeSelfAttention => TokenStrategy::VeSelfAttention,
            Strategy::PretrainedCa => TokenStrategy::PretrainedCa,
            _ => TokenStrategy::CrossAttention,
        }
    }

    /// Needs the ego-trained bank model (targets, inputs or initialisation).
    pub fn needs_ego_bank(self) -> bool {
        matches!(self, Strategy::LlavidalStyle | Strategy::EgoadaVis | Strategy::EgoadaLang | Strategy::PretrainedCa)
    }

    /// Reads ego renders of training clips.
    pub fn reads_train_ego(self) -> bool {
        matches!(self, Strategy::EgoPlusExo | Strategy::FeatureMse) || self.needs_ego_bank()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Strategy::ALL
            .iter()
            .copied()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`; valid strategies: {}", Strategy::valid_names())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub strategy: Strategy,
    /// Weight of the auxiliary MSE term (feature_mse, egoada_*).
    pub mse_weight: f64,
    /// Pooling of visual features for feature_mse.
    pub pooling: Pooling,
    /// Number of ego tokens (when the strategy uses a bank).
    pub k_tokens: usize,
}

impl StrategySpec {
    pub fn new(strategy: Strategy) -> Self {
        StrategySpec { strategy, mse_weight: 1.0, pooling: Pooling::Mean, k_tokens: 4 }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k_tokens = k;
        self
    }
}
