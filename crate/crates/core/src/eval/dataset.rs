//! Per-entry pipeline runs over a manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{aggregate_f_scores, pixel_confusion, ConfusionCounts, Level, MetricsReport};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::imaging::{load_image, to_gray};
use crate::mask::TamperMask;
use crate::pipeline::detect;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    #[serde(default)]
    pub ground_truth_mask_path: Option<PathBuf>,
    pub is_tampered: bool,
}

/// List of images to evaluate. Relative paths resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            entries,
            base_dir: PathBuf::new(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Reads a JSON array of entries; relative paths are taken relative to
    /// the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let entries: Vec<ManifestEntry> =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let m = Self {
            entries,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            match (e.is_tampered, &e.ground_truth_mask_path) {
                (true, None) => {
                    return Err(Error::Manifest(format!("entry {i}: tampered image without a mask path")));
                }
                (false, Some(_)) => {
                    return Err(Error::Manifest(format!("entry {i}: authentic image with a mask path")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// One line of the per-image report. Outcome fields are empty when the entry
/// failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub image_path: String,
    pub is_tampered: bool,
    pub decision: Option<bool>,
    pub tp: Option<u64>,
    pub fp: Option<u64>,
    #[serde(rename = "fn")]
    pub fn_: Option<u64>,
    pub tn: Option<u64>,
    pub f1: Option<f64>,
    pub runtime_ms: u64,
    pub error: Option<String>,
}

impl ImageRow {
    fn confusion(&self) -> Option<ConfusionCounts> {
        Some(ConfusionCounts {
            tp: self.tp?,
            fp: self.fp?,
            fn_: self.fn_?,
            tn: self.tn?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub config: PipelineConfig,
    pub n_images: usize,
    pub n_errors: usize,
    /// Image-level outcomes over successfully processed entries.
    pub image_counts: ConfusionCounts,
    pub image: MetricsReport,
    pub f_i: Option<f64>,
    /// Pixel counts summed over the tampered entries.
    pub pixel_counts: ConfusionCounts,
    pub f_p: Option<f64>,
    pub f_measure: Option<f64>,
    pub rows: Vec<ImageRow>,
}

fn run_entry(manifest: &DatasetManifest, e: &ManifestEntry, cfg: &PipelineConfig) -> Result<(bool, ConfusionCounts)> {
    let raster = load_image(&manifest.resolve(&e.image_path))?;
    let gray = to_gray(&raster);
    let truth = match &e.ground_truth_mask_path {
        Some(p) => TamperMask::load_png(&manifest.resolve(p))?,
        None => TamperMask::new(gray.width, gray.height),
    };
    let det = detect(&gray, cfg)?;
    Ok((det.decision, pixel_confusion(&det.mask, &truth)?))
}

/// Runs the pipeline on every entry, in manifest order. A failing entry is
/// recorded in its row and left out of the aggregates.
pub fn run_dataset(manifest: &DatasetManifest, cfg: &PipelineConfig) -> Result<DatasetReport> {
    manifest.validate()?;
    cfg.validate()?;
    let mut rows = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let start = Instant::now();
        let outcome = run_entry(manifest, e, cfg);
        let runtime_ms = start.elapsed().as_millis() as u64;
        let image_path = e.image_path.display().to_string();
        rows.push(match outcome {
            Ok((decision, c)) => ImageRow {
                image_path,
                is_tampered: e.is_tampered,
                decision: Some(decision),
                tp: Some(c.tp),
                fp: Some(c.fp),
                fn_: Some(c.fn_),
                tn: Some(c.tn),
                f1: c.f1(),
                runtime_ms,
                error: None,
            },
            Err(err) => ImageRow {
                image_path,
                is_tampered: e.is_tampered,
                decision: None,
                tp: None,
                fp: None,
                fn_: None,
                tn: None,
                f1: None,
                runtime_ms,
                error: Some(err.to_string()),
            },
        });
    }
    Ok(summarize(rows, cfg.clone()))
}

fn summarize(rows: Vec<ImageRow>, config: PipelineConfig) -> DatasetReport {
    let mut image_counts = ConfusionCounts::default();
    let mut tampered_pixels = Vec::new();
    for r in &rows {
        if let Some(d) = r.decision {
            image_counts.record(d, r.is_tampered);
        }
        if r.is_tampered {
            tampered_pixels.extend(r.confusion());
        }
    }
    let (f_p, f_measure) = aggregate_f_scores(&tampered_pixels);
    DatasetReport {
        config,
        n_images: rows.len(),
        n_errors: rows.iter().filter(|r| r.error.is_some()).count(),
        image_counts,
        image: MetricsReport::from_counts(Level::Image, &image_counts),
        f_i: image_counts.f1(),
        pixel_counts: tampered_pixels.iter().copied().sum(),
        f_p,
        f_measure,
        rows,
    }
}

impl DatasetReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source: std::io::Error| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| io(e.into()))?;
        }
        w.flush().map_err(io)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(p: &str, gt: Option<&str>, t: bool) -> ManifestEntry {
        ManifestEntry {
            image_path: p.into(),
            ground_truth_mask_path: gt.map(Into::into),
            is_tampered: t,
        }
    }

    #[test]
    fn manifest_mask_rules() {
        assert!(DatasetManifest::new(vec![entry("a.png", None, true)]).is_err());
        assert!(DatasetManifest::new(vec![entry("a.png", Some("m.png"), false)]).is_err());
        assert!(DatasetManifest::new(vec![entry("a.png", Some("m.png"), true), entry("b.png", None, false)]).is_ok());
    }

    #[test]
    fn manifest_json_unknown_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, r#"[{"image_path": "a.png", "is_tampered": false, "extra": 1}]"#).unwrap();
        assert!(matches!(DatasetManifest::load(&p), Err(Error::Manifest(_))));
        std::fs::write(&p, r#"[{"image_path": "a.png", "is_tampered": false}]"#).unwrap();
        let m = DatasetManifest::load(&p).unwrap();
        assert_eq!(m.resolve(Path::new("a.png")), dir.path().join("a.png"));
    }

    #[test]
    fn empty_manifest_gives_empty_report() {
        let r = run_dataset(&DatasetManifest::default(), &PipelineConfig::default()).unwrap();
        assert_eq!((r.n_images, r.n_errors), (0, 0));
        assert_eq!(r.image.tpr, None);
        assert_eq!(r.f_p, None);
    }

    #[test]
    fn missing_files_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            entries: vec![entry("nope.png", None, false)],
            base_dir: dir.path().to_path_buf(),
        };
        let r = run_dataset(&m, &PipelineConfig::default()).unwrap();
        assert_eq!(r.n_errors, 1);
        assert!(r.rows[0].error.as_deref().unwrap().contains("nope.png"));
        assert_eq!(r.image_counts.total(), 0);
    }

    #[test]
    fn aggregates_sum_rows() {
        let row = |t: bool, d: bool, c: (u64, u64, u64, u64)| ImageRow {
            image_path: String::new(),
            is_tampered: t,
            decision: Some(d),
            tp: Some(c.0),
            fp: Some(c.1),
            fn_: Some(c.2),
            tn: Some(c.3),
            f1: None,
            runtime_ms: 0,
            error: None,
        };
        let rows = vec![
            row(true, true, (100, 0, 0, 900)),
            row(true, false, (0, 0, 100, 900)),
            row(false, false, (0, 0, 0, 1000)),
        ];
        let r = summarize(rows, PipelineConfig::default());
        assert_eq!(r.image_counts, ConfusionCounts { tp: 1, fp: 0, fn_: 1, tn: 1 });
        assert_eq!(r.pixel_counts, ConfusionCounts { tp: 100, fp: 0, fn_: 100, tn: 1800 });
        assert!((r.f_p.unwrap() - 200.0 / 300.0).abs() < 1e-12);
        assert_eq!(r.f_measure, Some(0.5));
        assert_eq!(r.image.fpr, Some(0.0));
    }
}
