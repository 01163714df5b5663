use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::TtExecution;
use crate::ttcore::make_plan;

/// Which residual extractors a stage runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ExtractorMode {
    #[default]
    Both,
    LocalOnly,
    GlobalOnly,
}

impl ExtractorMode {
    pub fn uses_local(self) -> bool {
        self != ExtractorMode::GlobalOnly
    }

    pub fn uses_global(self) -> bool {
        self != ExtractorMode::LocalOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            ExtractorMode::Both => "both",
            ExtractorMode::LocalOnly => "local_only",
            ExtractorMode::GlobalOnly => "global_only",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct StageConfig {
    pub num_groups: usize,
    pub neighbors: usize,
    /// Width of the grouped features and of the local blocks.
    pub in_channels: usize,
    /// Width after the lift, used by the global blocks.
    pub out_channels: usize,
    pub local_blocks: usize,
    pub global_blocks: usize,
}

impl StageConfig {
    pub fn new(num_groups: usize, neighbors: usize, in_channels: usize, out_channels: usize) -> Self {
        Self { num_groups, neighbors, in_channels, out_channels, local_blocks: 1, global_blocks: 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub name: String,
    pub num_points: usize,
    pub embed_channels: usize,
    pub stages: Vec<StageConfig>,
    /// 0 builds every residual projection densely.
    pub rank: usize,
    /// Hidden widths followed by the class count.
    pub classifier_dims: Vec<usize>,
    pub num_classes: usize,
    pub extractor_mode: ExtractorMode,
    /// First farthest-point-sampling pick in every stage.
    pub fps_start: usize,
    pub tt_execution: TtExecution,
}

pub const REFERENCE_NAME: &str = "ttpoint-ref-v1";
pub const NUM_STAGES: usize = 4;

impl Default for ModelConfig {
    fn default() -> Self {
        Self::reference(11)
    }
}

impl ModelConfig {
    /// The reference architecture at TT rank 8.
    pub fn reference(num_classes: usize) -> Self {
        Self {
            name: REFERENCE_NAME.into(),
            num_points: 1024,
            embed_channels: 32,
            stages: vec![
                StageConfig::new(512, 24, 32, 64),
                StageConfig::new(256, 24, 64, 128),
                StageConfig::new(128, 24, 128, 256),
                StageConfig::new(64, 24, 256, 256),
            ],
            rank: 8,
            classifier_dims: vec![128, num_classes],
            num_classes,
            extractor_mode: ExtractorMode::Both,
            fps_start: 0,
            tt_execution: TtExecution::Auto,
        }
    }

    /// A small four-stage network for tests and quick experiments.
    pub fn tiny(num_points: usize, num_classes: usize) -> Self {
        let s1 = (num_points / 2).max(4);
        Self {
            name: "ttpoint-tiny".into(),
            num_points,
            embed_channels: 16,
            stages: vec![
                StageConfig::new(s1, 8.min(num_points), 16, 16),
                StageConfig::new(s1 / 2, 8.min(s1), 16, 32),
                StageConfig::new(s1 / 4, 4.min(s1 / 2), 32, 32),
                StageConfig::new(s1 / 8, 4.min(s1 / 4), 32, 32),
            ],
            rank: 4,
            classifier_dims: vec![32, num_classes],
            num_classes,
            extractor_mode: ExtractorMode::Both,
            fps_start: 0,
            tt_execution: TtExecution::Auto,
        }
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = rank;
        self
    }

    pub fn with_mode(mut self, mode: ExtractorMode) -> Self {
        self.extractor_mode = mode;
        self
    }

    pub fn feature_dim(&self) -> usize {
        self.stages.last().map_or(self.embed_channels, |s| s.out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.stages.len() != NUM_STAGES {
            return bad(format!("expected {NUM_STAGES} stages, got {}", self.stages.len()));
        }
        if self.num_points == 0 || self.embed_channels == 0 {
            return bad("num_points and embed_channels must be positive".into());
        }
        if self.classifier_dims.last() != Some(&self.num_classes) || self.num_classes == 0 {
            return bad(format!(
                "classifier_dims {:?} must end in num_classes {}",
                self.classifier_dims, self.num_classes
            ));
        }
        if self.classifier_dims.contains(&0) {
            return bad("classifier widths must be positive".into());
        }
        let mut available = self.num_points;
        for (i, s) in self.stages.iter().enumerate() {
            if s.num_groups == 0 || s.num_groups > available {
                return bad(format!("stage {i}: {} groups from {available} points", s.num_groups));
            }
            if s.neighbors == 0 || s.neighbors > available {
                return bad(format!("stage {i}: {} neighbors from {available} points", s.neighbors));
            }
            if s.in_channels == 0 || s.out_channels == 0 {
                return bad(format!("stage {i}: channel widths must be positive"));
            }
            if self.fps_start >= available {
                return bad(format!("fps_start {} outside {available} points", self.fps_start));
            }
            if self.rank > 0 {
                if self.extractor_mode.uses_local() && s.local_blocks > 0 && make_plan(s.in_channels, s.in_channels).is_err()
                {
                    return Err(Error::Unplannable(s.in_channels));
                }
                if self.extractor_mode.uses_global()
                    && s.global_blocks > 0
                    && make_plan(s.out_channels, s.out_channels).is_err()
                {
                    return Err(Error::Unplannable(s.out_channels));
                }
            }
            available = s.num_groups;
        }
        Ok(())
    }
}
