//! Resolved parameter tree for a whole pipeline run.
//!
//! Every section has defaults; unknown keys are rejected when deserializing.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::analyze::{ElbowParams, MdsParams, PanelParams};
use crate::features::IntensityChannel;
use crate::learn::{ClassifierParams, PruneConfig};
use crate::segment::EnhancementParams;
use crate::stain::{LabStats, StainMatrix};
use crate::synth::GroupSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StainSection {
    /// Explicit LAB target statistics; wins over `reference_image`.
    pub target: Option<LabStats>,
    /// Manifest image id whose statistics serve as the target. Tiles are
    /// normalized only when this or `target` is set.
    pub reference_image: Option<String>,
    pub hematoxylin: [f64; 3],
    pub eosin: [f64; 3],
}

impl Default for StainSection {
    fn default() -> Self {
        let m = StainMatrix::default();
        StainSection {
            target: None,
            reference_image: None,
            hematoxylin: m.hematoxylin,
            eosin: m.eosin,
        }
    }
}

impl StainSection {
    pub fn normalizes(&self) -> bool {
        self.target.is_some() || self.reference_image.is_some()
    }

    pub fn stain_matrix(&self) -> Result<StainMatrix> {
        StainMatrix::new(self.hematoxylin, self.eosin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub channel: IntensityChannel,
    pub bins: usize,
    /// Histogram range used when `channel` is the Hematoxylin concentration.
    pub hematoxylin_range: [f64; 2],
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection {
            channel: IntensityChannel::Luma,
            bins: 64,
            hematoxylin_range: [0.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnSection {
    pub vote_thresholds: Vec<usize>,
    pub final_unanimity: bool,
    pub folds: usize,
    pub early_stop: bool,
    pub classifiers: ClassifierParams,
}

impl Default for LearnSection {
    fn default() -> Self {
        let p = PruneConfig::default();
        LearnSection {
            vote_thresholds: p.vote_thresholds,
            final_unanimity: p.final_unanimity,
            folds: p.folds,
            early_stop: p.early_stop,
            classifiers: ClassifierParams::default(),
        }
    }
}

impl LearnSection {
    pub fn prune_config(&self, seed: u64) -> PruneConfig {
        PruneConfig {
            vote_thresholds: self.vote_thresholds.clone(),
            final_unanimity: self.final_unanimity,
            folds: self.folds,
            seed,
            early_stop: self.early_stop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub mds: MdsParams,
    /// Larger cohorts are subsampled (stratified by group) before MDS.
    pub max_mds_points: usize,
    pub elbow: ElbowParams,
    pub panel: PanelParams,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection {
            mds: MdsParams::default(),
            max_mds_points: 2000,
            elbow: ElbowParams::default(),
            panel: PanelParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub groups: Vec<GroupSpec>,
    /// Tiles per group.
    pub n_images: usize,
    pub image_size: [u32; 2],
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            groups: vec![GroupSpec::mut_preset(), GroupSpec::wt_preset()],
            n_images: 20,
            image_size: [512, 512],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub stain: StainSection,
    pub segment: EnhancementParams,
    pub features: FeaturesSection,
    pub learn: LearnSection,
    pub analyze: AnalyzeSection,
    pub synth: SynthSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out: PathBuf::from("out"),
            stain: StainSection::default(),
            segment: EnhancementParams::default(),
            features: FeaturesSection::default(),
            learn: LearnSection::default(),
            analyze: AnalyzeSection::default(),
            synth: SynthSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Check every section; the first problem found is reported.
    pub fn validate(&self) -> Result<()> {
        self.stain.stain_matrix()?.unmixing_rows()?;
        if let Some(t) = &self.stain.target {
            LabStats::new(t.mean, t.std)?;
        }
        self.segment.validate()?;
        if self.features.bins == 0 {
            return Err(Error::InvalidParameter(
                "features.bins must be positive".into(),
            ));
        }
        let [lo, hi] = self.features.hematoxylin_range;
        if !(hi > lo) {
            return Err(Error::InvalidParameter(
                "features.hematoxylin_range must be increasing".into(),
            ));
        }
        self.learn.prune_config(self.seed).validate()?;
        if self.analyze.max_mds_points < 2 {
            return Err(Error::InvalidParameter(
                "analyze.max_mds_points must be >= 2".into(),
            ));
        }
        if self.analyze.elbow.k_max == 0 || self.analyze.elbow.restarts == 0 {
            return Err(Error::InvalidParameter(
                "analyze.elbow needs k_max and restarts >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.analyze.elbow.threshold) {
            return Err(Error::InvalidParameter(
                "analyze.elbow.threshold must lie in [0, 1)".into(),
            ));
        }
        let size = (self.synth.image_size[0], self.synth.image_size[1]);
        for g in &self.synth.groups {
            g.validate(size)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = r#"{"seed": 1, "segment": {"alpha": 0.5, "gamma": 2}}"#;
        assert!(serde_json::from_str::<PipelineConfig>(bad).is_err());
        let bad = r#"{"sed": 1}"#;
        assert!(serde_json::from_str::<PipelineConfig>(bad).is_err());
        let ok = r#"{"seed": 1, "segment": {"alpha": 0.4}}"#;
        let c: PipelineConfig = serde_json::from_str(ok).unwrap();
        assert_eq!(c.segment.alpha, 0.4);
        assert_eq!(c.segment.t_low, EnhancementParams::default().t_low);
    }

    #[test]
    fn round_trips_through_json() {
        let c = PipelineConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&s).unwrap(), c);
    }

    #[test]
    fn invalid_sections_reported() {
        let mut c = PipelineConfig::default();
        c.learn.vote_thresholds = vec![3, 2];
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.stain.eosin = c.stain.hematoxylin;
        assert!(c.validate().is_err());
    }
}
