//! Flat pipeline configuration, loadable from TOML or JSON.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::RansacParams;
use crate::imaging::DEFAULT_PIXEL_BUDGET;
use crate::keypoints::SiftParams;
use crate::localization::LocalizationParams;
use crate::matching::{ClusterParams, G2nnParams, GroupParams, MatchStages};

/// Every tunable of the pipeline, with its default.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub contrast_threshold: f64,
    pub edge_threshold: f64,
    pub entropy_window: u32,
    /// Replaces the size-based upscaling factor when set.
    pub scale_override: Option<u32>,
    pub pixel_budget: u64,

    pub step1: f64,
    pub step2: f64,
    pub step3: f64,
    pub step4: f64,
    pub step5: usize,
    pub beta: f64,
    pub t_match: f64,
    pub min_spatial: f64,
    pub gray_clustering: bool,
    pub entropy_clustering: bool,
    pub lexicographic_grouping: bool,

    pub t_in: f64,
    pub ransac_max_iters: usize,
    pub confidence: f64,
    pub theta_tol: f64,

    pub r_sam: f64,
    pub n_in: usize,
    pub region_gamma: f64,
    pub max_iters: usize,
    pub morph_radius: u32,

    pub min_pixels: usize,
    pub rng_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let sift = SiftParams::default();
        let cp = ClusterParams::default();
        let gp = GroupParams::default();
        let g2 = G2nnParams::default();
        let rp = RansacParams::default();
        let lp = LocalizationParams::default();
        Self {
            contrast_threshold: sift.contrast_threshold,
            edge_threshold: sift.edge_threshold,
            entropy_window: 9,
            scale_override: None,
            pixel_budget: DEFAULT_PIXEL_BUDGET,
            step1: cp.step1,
            step2: cp.step2,
            step3: cp.step3,
            step4: cp.step4,
            step5: gp.step5,
            beta: gp.beta,
            t_match: g2.t_match,
            min_spatial: g2.min_spatial,
            gray_clustering: true,
            entropy_clustering: true,
            lexicographic_grouping: true,
            t_in: rp.t_in,
            ransac_max_iters: rp.max_iters,
            confidence: rp.confidence,
            theta_tol: rp.theta_tol,
            r_sam: lp.r_sam,
            n_in: lp.n_in,
            region_gamma: lp.region_gamma,
            max_iters: lp.max_iters,
            morph_radius: lp.morph_radius,
            min_pixels: 1,
            rng_seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Reads a config file: JSON when the extension is `.json`, TOML
    /// otherwise. Missing keys keep their defaults; unknown keys are
    /// rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let is_json = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: PipelineConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sift(&self) -> SiftParams {
        SiftParams::with_thresholds(self.contrast_threshold, self.edge_threshold)
    }

    pub fn cluster(&self) -> ClusterParams {
        ClusterParams {
            step1: self.step1,
            step2: self.step2,
            step3: self.step3,
            step4: self.step4,
        }
    }

    pub fn group(&self) -> GroupParams {
        GroupParams {
            step5: self.step5,
            beta: self.beta,
        }
    }

    pub fn g2nn(&self) -> G2nnParams {
        G2nnParams {
            t_match: self.t_match,
            min_spatial: self.min_spatial,
        }
    }

    pub fn stages(&self) -> MatchStages {
        MatchStages {
            gray: self.gray_clustering,
            entropy: self.entropy_clustering,
            lexicographic: self.lexicographic_grouping,
        }
    }

    pub fn ransac(&self) -> RansacParams {
        RansacParams {
            t_in: self.t_in,
            max_iters: self.ransac_max_iters,
            confidence: self.confidence,
            theta_tol: self.theta_tol,
        }
    }

    pub fn localization(&self) -> LocalizationParams {
        LocalizationParams {
            r_sam: self.r_sam,
            n_in: self.n_in,
            region_gamma: self.region_gamma,
            max_iters: self.max_iters,
            morph_radius: self.morph_radius,
        }
    }

    /// Disables the named matching stages (`gray`, `entropy`, `lg`, or
    /// `all`).
    pub fn ablate(&mut self, stages: &[String]) -> Result<()> {
        for s in stages {
            match s.trim().to_ascii_lowercase().as_str() {
                "gray" | "g" => self.gray_clustering = false,
                "entropy" | "e" => self.entropy_clustering = false,
                "lg" | "lexicographic" => self.lexicographic_grouping = false,
                "all" => {
                    self.gray_clustering = false;
                    self.entropy_clustering = false;
                    self.lexicographic_grouping = false;
                }
                "" => {}
                other => return Err(Error::Config(format!("unknown ablation stage '{other}'"))),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.contrast_threshold >= 0.0) || !(self.edge_threshold > 0.0) {
            return Err(Error::InvalidParameter(
                "contrast_threshold must be >= 0 and edge_threshold > 0".into(),
            ));
        }
        if self.entropy_window == 0 || self.entropy_window % 2 == 0 {
            return Err(Error::InvalidParameter("entropy_window must be odd".into()));
        }
        if let Some(s) = self.scale_override {
            if s == 0 {
                return Err(Error::InvalidParameter("scale_override must be >= 1".into()));
            }
        }
        if self.min_pixels < 1 {
            return Err(Error::InvalidParameter("min_pixels must be >= 1".into()));
        }
        self.cluster().validate()?;
        self.group().validate()?;
        self.g2nn().validate()?;
        self.ransac().validate()?;
        self.localization().validate()
    }
}
