//! End-to-end detection on one grayscale image.

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::eval::image_level_decision;
use crate::imaging::{entropy_map, scaling_factor, upscale_by, EntropyMap, GrayImage};
use crate::keypoints::{detect_with, KeypointSet};
use crate::localization::{localize, Localization};
use crate::mask::TamperMask;
use crate::matching::{match_pipeline, MatchSet, MatchStats};

/// Everything computed before localization, in upscaled coordinates.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub scale: u32,
    pub original_width: u32,
    pub original_height: u32,
    pub upscaled: GrayImage,
    pub entropy: EntropyMap,
    pub keypoints: KeypointSet,
    pub matches: MatchSet,
    pub match_stats: MatchStats,
}

/// Upscales, measures entropy, detects keypoints and matches them.
pub fn analyze(gray: &GrayImage, cfg: &PipelineConfig) -> Result<Analysis> {
    cfg.validate()?;
    let scale = cfg
        .scale_override
        .unwrap_or_else(|| scaling_factor(gray.height, gray.width));
    let upscaled = upscale_by(gray, scale, cfg.pixel_budget)?;
    let entropy = entropy_map(&upscaled, cfg.entropy_window)?;
    let keypoints = detect_with(&upscaled, &cfg.sift())?;
    let (matches, match_stats) = match_pipeline(
        &keypoints,
        &upscaled,
        &entropy,
        &cfg.cluster(),
        &cfg.group(),
        &cfg.g2nn(),
        cfg.stages(),
    )?;
    Ok(Analysis {
        scale,
        original_width: gray.width,
        original_height: gray.height,
        upscaled,
        entropy,
        keypoints,
        matches,
        match_stats,
    })
}

impl Analysis {
    /// Localization with the localization/geometry settings of `cfg`.
    pub fn localize(&self, cfg: &PipelineConfig) -> Result<Localization> {
        localize(
            &self.matches,
            &self.keypoints,
            &self.upscaled,
            &cfg.ransac(),
            &cfg.localization(),
            self.scale,
            self.original_width,
            self.original_height,
            cfg.rng_seed,
        )
    }
}

/// Outcome of a full detection run.
#[derive(Debug, Clone)]
pub struct Detection {
    pub decision: bool,
    pub mask: TamperMask,
    pub analysis: Analysis,
    pub localization: Localization,
}

impl Detection {
    pub fn iterations(&self) -> usize {
        self.localization.traces.len()
    }

    pub fn accepted_models(&self) -> usize {
        self.localization.accepted_models()
    }
}

/// Runs the whole pipeline on an original-resolution grayscale image.
pub fn detect(gray: &GrayImage, cfg: &PipelineConfig) -> Result<Detection> {
    let analysis = analyze(gray, cfg)?;
    let localization = analysis.localize(cfg)?;
    let mask = localization.mask.clone();
    Ok(Detection {
        decision: image_level_decision(&mask, cfg.min_pixels),
        mask,
        analysis,
        localization,
    })
}
