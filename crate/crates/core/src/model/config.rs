use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where MixPool blocks are inserted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixPoolPlacement {
    None,
    /// After every encoder and decoder stage.
    AllStages,
    /// First encoder stage and last decoder stage only.
    #[serde(rename = "e1_d4")]
    E1D4,
}

/// The four ablation configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ablation {
    /// Baseline: no MixPool, no feedback.
    B1,
    /// MixPool everywhere, single Otsu-seeded pass at inference.
    B2,
    /// MixPool at E1 and D4 with iterative feedback.
    B3,
    /// Full network: MixPool everywhere with iterative feedback.
    B4,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::B1, Ablation::B2, Ablation::B3, Ablation::B4];

    pub fn description(self) -> &'static str {
        match self {
            Ablation::B1 => "Baseline",
            Ablation::B2 => "Baseline + MixPool",
            Ablation::B3 => "Baseline + MixPool(E1, D4) + feedback",
            Ablation::B4 => "Baseline + MixPool + feedback",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "B1" => Ok(Ablation::B1),
            "B2" => Ok(Ablation::B2),
            "B3" => Ok(Ablation::B3),
            "B4" => Ok(Ablation::B4),
            other => Err(Error::Config(format!("unknown ablation `{other}` (expected B1..B4)"))),
        }
    }
}

/// Architecture knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub in_channels: usize,
    /// Number of encoder stages (and decoder stages).
    pub depth: usize,
    /// Channel width of each encoder stage, shallowest first.
    pub base_widths: Vec<usize>,
    pub se_reduction: usize,
    pub se_blocks_per_stage: usize,
    pub mixpool_placement: MixPoolPlacement,
    /// Keep the untouched-feature branch of the MixPool concatenation.
    pub mixpool_use_fl_branch: bool,
    /// Iterate predictions through the network at inference time.
    pub feedback_at_inference: bool,
    pub binarize_threshold: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            depth: 4,
            base_widths: vec![24, 48, 96, 192],
            se_reduction: 16,
            se_blocks_per_stage: 2,
            mixpool_placement: MixPoolPlacement::AllStages,
            mixpool_use_fl_branch: true,
            feedback_at_inference: true,
            binarize_threshold: 0.5,
        }
    }
}

impl NetworkConfig {
    pub fn with_widths(mut self, widths: &[usize]) -> Self {
        self.depth = widths.len();
        self.base_widths = widths.to_vec();
        self
    }

    /// Applies one of the ablation presets to this configuration.
    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        let (placement, feedback) = match ablation {
            Ablation::B1 => (MixPoolPlacement::None, false),
            Ablation::B2 => (MixPoolPlacement::AllStages, false),
            Ablation::B3 => (MixPoolPlacement::E1D4, true),
            Ablation::B4 => (MixPoolPlacement::AllStages, true),
        };
        self.mixpool_placement = placement;
        self.feedback_at_inference = feedback;
        self
    }

    /// The ablation preset this configuration corresponds to, if any.
    pub fn ablation(&self) -> Option<Ablation> {
        match (self.mixpool_placement, self.feedback_at_inference) {
            (MixPoolPlacement::None, _) => Some(Ablation::B1),
            (MixPoolPlacement::AllStages, false) => Some(Ablation::B2),
            (MixPoolPlacement::E1D4, true) => Some(Ablation::B3),
            (MixPoolPlacement::AllStages, true) => Some(Ablation::B4),
            (MixPoolPlacement::E1D4, false) => None,
        }
    }

    /// Whether the network consumes a previous mask at all.
    pub fn uses_mask(&self) -> bool {
        self.mixpool_placement != MixPoolPlacement::None
    }

    pub fn encoder_has_mixpool(&self, stage: usize) -> bool {
        match self.mixpool_placement {
            MixPoolPlacement::None => false,
            MixPoolPlacement::AllStages => true,
            MixPoolPlacement::E1D4 => stage == 0,
        }
    }

    /// `stage` counts from the deepest decoder (0) to the full-resolution one.
    pub fn decoder_has_mixpool(&self, stage: usize) -> bool {
        match self.mixpool_placement {
            MixPoolPlacement::None => false,
            MixPoolPlacement::AllStages => true,
            MixPoolPlacement::E1D4 => stage + 1 == self.depth,
        }
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.in_channels == 0 {
            return fail("in_channels must be positive".into());
        }
        if self.depth == 0 || self.depth > 8 {
            return fail(format!("depth {} out of range 1..=8", self.depth));
        }
        if self.base_widths.len() != self.depth {
            return fail(format!(
                "{} base widths given for depth {}",
                self.base_widths.len(),
                self.depth
            ));
        }
        if self.base_widths.contains(&0) {
            return fail("base widths must be positive".into());
        }
        if self.se_reduction == 0 {
            return fail("se_reduction must be positive".into());
        }
        if !(1..=4).contains(&self.se_blocks_per_stage) {
            return fail(format!(
                "se_blocks_per_stage {} out of range 1..=4",
                self.se_blocks_per_stage
            ));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return fail(format!("binarize_threshold {} not in (0, 1)", self.binarize_threshold));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_presets_classify_back() {
        for ab in Ablation::ALL {
            assert_eq!(NetworkConfig::default().with_ablation(ab).ablation(), Some(ab));
        }
    }

    #[test]
    fn e1_d4_places_two_blocks() {
        let cfg = NetworkConfig::default().with_ablation(Ablation::B3);
        let enc: Vec<bool> = (0..4).map(|s| cfg.encoder_has_mixpool(s)).collect();
        let dec: Vec<bool> = (0..4).map(|s| cfg.decoder_has_mixpool(s)).collect();
        assert_eq!(enc, [true, false, false, false]);
        assert_eq!(dec, [false, false, false, true]);
    }

    #[test]
    fn validation_catches_bad_knobs() {
        assert!(NetworkConfig::default().validate().is_ok());
        let cfg = NetworkConfig {
            se_blocks_per_stage: 5,
            ..NetworkConfig::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = NetworkConfig::default();
        cfg.base_widths.pop();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_uses_field_names() {
        let text = toml::to_string(&NetworkConfig::default()).unwrap();
        assert!(text.contains("mixpool_placement = \"all_stages\""));
        let back: NetworkConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, NetworkConfig::default());
        assert!("B3".parse::<Ablation>().is_ok());
        assert!("B5".parse::<Ablation>().is_err());
    }
}
