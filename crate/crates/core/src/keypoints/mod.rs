//! Scale-space keypoint detection for the excessive keypoint strategy.
//!
//! This is a SIFT detector/descriptor (3 scales per octave, `sigma0 = 1.6`,
//! edge ratio 10) with a configurable contrast threshold that the pipeline
//! sets to zero. Detection starts at the resolution it is given: the
//! pipeline's own upscaling replaces SIFT's usual internal doubling.

mod descriptor;
mod pyramid;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::GrayImage;

pub use descriptor::DESCRIPTOR_LEN;
use descriptor::{compute_descriptor, dominant_orientations, orientation_histogram, Gradients};
use pyramid::{build_octave, gaussian_blur, Plane};

/// Smallest image side the detector accepts.
pub const MIN_IMAGE_SIDE: u32 = 16;

const IMAGE_BORDER: usize = 5;
const MAX_INTERP_STEPS: usize = 5;
/// Blur assumed to be present in the input image.
const INPUT_SIGMA: f64 = 0.5;

/// A detected keypoint in the coordinates of the image it was detected on.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Scale in pixels.
    pub sigma: f64,
    /// Dominant orientation in degrees, `[0, 360)`.
    pub theta: f64,
}

/// Unit-norm 128-dimensional gradient histogram.
#[derive(Clone, PartialEq)]
pub struct Descriptor(pub [f32; DESCRIPTOR_LEN]);

impl Descriptor {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
    }

    /// Squared Euclidean distance.
    #[inline]
    pub fn distance_sq(&self, other: &Descriptor) -> f32 {
        let mut acc = [0f32; 8];
        for (a, b) in self.0.chunks_exact(8).zip(other.0.chunks_exact(8)) {
            for k in 0..8 {
                let d = a[k] - b[k];
                acc[k] += d * d;
            }
        }
        acc.iter().sum()
    }
}

impl std::fmt::Debug for Descriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Descriptor(norm={:.6}, head={:?})", self.norm(), &self.0[..4])
    }
}

/// Keypoints and their descriptors, index-aligned.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeypointSet {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    /// Writes `x,y,sigma,theta` rows with a header line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        writeln!(w, "x,y,sigma,theta").map_err(io_err)?;
        for k in &self.keypoints {
            writeln!(w, "{},{},{},{}", k.x, k.y, k.sigma, k.theta).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }
}

/// Detector settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SiftParams {
    pub contrast_threshold: f64,
    pub edge_threshold: f64,
    pub scales_per_octave: usize,
    pub sigma0: f64,
}

impl Default for SiftParams {
    fn default() -> Self {
        Self {
            contrast_threshold: 0.0,
            edge_threshold: 10.0,
            scales_per_octave: 3,
            sigma0: 1.6,
        }
    }
}

impl SiftParams {
    pub fn with_thresholds(contrast_threshold: f64, edge_threshold: f64) -> Self {
        Self {
            contrast_threshold,
            edge_threshold,
            ..Self::default()
        }
    }
}

/// Detects keypoints with the default octave layout and the given
/// thresholds.
pub fn detect_keypoints(
    img: &GrayImage,
    contrast_threshold: f64,
    edge_threshold: f64,
) -> Result<KeypointSet> {
    detect_with(img, &SiftParams::with_thresholds(contrast_threshold, edge_threshold))
}

struct RawKeypoint {
    octave: usize,
    layer: usize,
    kp: Keypoint,
    desc: [f32; DESCRIPTOR_LEN],
}

pub fn detect_with(img: &GrayImage, params: &SiftParams) -> Result<KeypointSet> {
    if img.width < MIN_IMAGE_SIDE || img.height < MIN_IMAGE_SIDE {
        return Err(Error::InputTooSmall {
            width: img.width,
            height: img.height,
        });
    }
    if !(params.contrast_threshold >= 0.0) || !(params.edge_threshold > 0.0) {
        return Err(Error::InvalidParameter(
            "contrast threshold must be >= 0 and edge threshold > 0".into(),
        ));
    }
    if params.scales_per_octave == 0 || !(params.sigma0 > INPUT_SIGMA) {
        return Err(Error::InvalidParameter("invalid octave layout".into()));
    }
    let min_side = img.width.min(img.height) as f64;
    let n_octaves = ((min_side.log2().floor() as i64) - 2).max(1) as usize;

    let mut input = Plane::new(img.width as usize, img.height as usize);
    for (d, &s) in input.data.iter_mut().zip(&img.data) {
        *d = s as f32 / 255.0;
    }
    let seed_sigma = (params.sigma0 * params.sigma0 - INPUT_SIGMA * INPUT_SIGMA).sqrt();
    let mut base = gaussian_blur(&input, seed_sigma);
    drop(input);

    let scales = params.scales_per_octave;
    let mut raw = Vec::new();
    for octave in 0..n_octaves {
        if base.w < 2 * IMAGE_BORDER + 3 || base.h < 2 * IMAGE_BORDER + 3 {
            break;
        }
        let oct = build_octave(base, scales, params.sigma0);
        detect_in_octave(&oct, octave, params, &mut raw);
        base = oct.gauss[scales].half();
    }

    raw.sort_by(|a, b| {
        (a.octave, a.layer)
            .cmp(&(b.octave, b.layer))
            .then(a.kp.y.total_cmp(&b.kp.y))
            .then(a.kp.x.total_cmp(&b.kp.x))
            .then(a.kp.theta.total_cmp(&b.kp.theta))
    });
    let (w, h) = (img.width as f64, img.height as f64);
    let mut set = KeypointSet::default();
    for r in raw {
        if r.kp.x < 0.0 || r.kp.y < 0.0 || r.kp.x >= w || r.kp.y >= h {
            continue;
        }
        set.keypoints.push(r.kp);
        set.descriptors.push(Descriptor(r.desc));
    }
    Ok(set)
}

fn detect_in_octave(oct: &pyramid::Octave, octave: usize, params: &SiftParams, out: &mut Vec<RawKeypoint>) {
    let scales = params.scales_per_octave;
    let dog = &oct.dog;
    let (w, h) = (dog[0].w, dog[0].h);
    let prefilter = (0.5 * params.contrast_threshold / scales as f64) as f32;
    let octave_factor = 2f64.powi(octave as i32);
    // gradients are only needed for layers that host keypoints
    let mut gradients: Vec<Option<Gradients>> = (0..oct.gauss.len()).map(|_| None).collect();

    for layer in 1..=scales {
        let (prev, cur, next) = (&dog[layer - 1], &dog[layer], &dog[layer + 1]);
        for y in IMAGE_BORDER..h - IMAGE_BORDER {
            for x in IMAGE_BORDER..w - IMAGE_BORDER {
                let v = cur.at(x, y);
                if !(v.abs() > prefilter) || !is_extremum(prev, cur, next, x, y, v) {
                    continue;
                }
                let Some(ext) = interpolate(dog, layer, x, y, scales) else {
                    continue;
                };
                if (ext.contrast.abs() * scales as f32) < params.contrast_threshold as f32 {
                    continue;
                }
                if on_edge(&dog[ext.layer], ext.x, ext.y, params.edge_threshold as f32) {
                    continue;
                }
                let sigma_oct =
                    params.sigma0 * 2f64.powf((ext.layer as f64 + ext.offset[0] as f64) / scales as f64);
                let grad = gradients[ext.layer].get_or_insert_with(|| Gradients::of(&oct.gauss[ext.layer]));
                let hist = orientation_histogram(grad, ext.x, ext.y, sigma_oct as f32);
                let ox = ext.x as f32 + ext.offset[2];
                let oy = ext.y as f32 + ext.offset[1];
                for theta in dominant_orientations(&hist) {
                    let Some(desc) = compute_descriptor(grad, ox, oy, sigma_oct as f32, theta) else {
                        continue;
                    };
                    out.push(RawKeypoint {
                        octave,
                        layer: ext.layer,
                        kp: Keypoint {
                            x: ox as f64 * octave_factor,
                            y: oy as f64 * octave_factor,
                            sigma: sigma_oct * octave_factor,
                            theta,
                        },
                        desc,
                    });
                }
            }
        }
    }
}

#[inline]
fn is_extremum(prev: &Plane, cur: &Plane, next: &Plane, x: usize, y: usize, v: f32) -> bool {
    let w = cur.w;
    let i = y * w + x;
    let offsets = [
        i - w - 1,
        i - w,
        i - w + 1,
        i - 1,
        i + 1,
        i + w - 1,
        i + w,
        i + w + 1,
    ];
    if v > 0.0 {
        offsets.iter().all(|&j| v >= cur.data[j])
            && offsets.iter().all(|&j| v >= prev.data[j] && v >= next.data[j])
            && v >= prev.data[i]
            && v >= next.data[i]
    } else {
        offsets.iter().all(|&j| v <= cur.data[j])
            && offsets.iter().all(|&j| v <= prev.data[j] && v <= next.data[j])
            && v <= prev.data[i]
            && v <= next.data[i]
    }
}

struct Extremum {
    layer: usize,
    x: usize,
    y: usize,
    /// (scale, row, col) offsets in `[-0.5, 0.5]`.
    offset: [f32; 3],
    contrast: f32,
}

/// Sub-pixel refinement by fitting a quadratic to the DoG stack.
fn interpolate(dog: &[Plane], mut layer: usize, mut x: usize, mut y: usize, scales: usize) -> Option<Extremum> {
    let (w, h) = (dog[0].w, dog[0].h);
    for _ in 0..MAX_INTERP_STEPS {
        let (p, c, n) = (&dog[layer - 1], &dog[layer], &dog[layer + 1]);
        let g = [
            (n.at(x, y) - p.at(x, y)) * 0.5,
            (c.at(x, y + 1) - c.at(x, y - 1)) * 0.5,
            (c.at(x + 1, y) - c.at(x - 1, y)) * 0.5,
        ];
        let v2 = c.at(x, y) * 2.0;
        let h11 = n.at(x, y) + p.at(x, y) - v2;
        let h22 = c.at(x, y + 1) + c.at(x, y - 1) - v2;
        let h33 = c.at(x + 1, y) + c.at(x - 1, y) - v2;
        let h12 = (n.at(x, y + 1) - n.at(x, y - 1) - p.at(x, y + 1) + p.at(x, y - 1)) * 0.25;
        let h13 = (n.at(x + 1, y) - n.at(x - 1, y) - p.at(x + 1, y) + p.at(x - 1, y)) * 0.25;
        let h23 = (c.at(x + 1, y + 1) - c.at(x - 1, y + 1) - c.at(x + 1, y - 1) + c.at(x - 1, y - 1)) * 0.25;

        let det = h11 * (h22 * h33 - h23 * h23) - h12 * (h12 * h33 - h23 * h13) + h13 * (h12 * h23 - h22 * h13);
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let i11 = (h22 * h33 - h23 * h23) / det;
        let i12 = (h13 * h23 - h12 * h33) / det;
        let i13 = (h12 * h23 - h13 * h22) / det;
        let i22 = (h11 * h33 - h13 * h13) / det;
        let i23 = (h12 * h13 - h11 * h23) / det;
        let i33 = (h11 * h22 - h12 * h12) / det;
        let off = [
            -(i11 * g[0] + i12 * g[1] + i13 * g[2]),
            -(i12 * g[0] + i22 * g[1] + i23 * g[2]),
            -(i13 * g[0] + i23 * g[1] + i33 * g[2]),
        ];
        if !off.iter().all(|o| o.is_finite()) {
            return None;
        }
        if off.iter().all(|o| o.abs() < 0.5) {
            let contrast = c.at(x, y) + 0.5 * (g[0] * off[0] + g[1] * off[1] + g[2] * off[2]);
            return Some(Extremum {
                layer,
                x,
                y,
                offset: off,
                contrast,
            });
        }
        if off.iter().any(|o| o.abs() > (i32::MAX / 3) as f32) {
            return None;
        }
        let nl = layer as isize + off[0].round() as isize;
        let ny = y as isize + off[1].round() as isize;
        let nx = x as isize + off[2].round() as isize;
        if nl < 1
            || nl > scales as isize
            || nx < IMAGE_BORDER as isize
            || nx >= (w - IMAGE_BORDER) as isize
            || ny < IMAGE_BORDER as isize
            || ny >= (h - IMAGE_BORDER) as isize
        {
            return None;
        }
        layer = nl as usize;
        x = nx as usize;
        y = ny as usize;
    }
    None
}

/// Principal curvature ratio test on the 2x2 spatial Hessian.
fn on_edge(d: &Plane, x: usize, y: usize, r: f32) -> bool {
    let v2 = d.at(x, y) * 2.0;
    let dxx = d.at(x + 1, y) + d.at(x - 1, y) - v2;
    let dyy = d.at(x, y + 1) + d.at(x, y - 1) - v2;
    let dxy = (d.at(x + 1, y + 1) - d.at(x - 1, y + 1) - d.at(x + 1, y - 1) + d.at(x - 1, y - 1)) * 0.25;
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det
}

/// Fraction of pixels of a `width x height` grid whose `window x window`
/// neighbourhood (clipped at the borders) contains at least `min_count`
/// keypoints. Keypoints must be in the coordinates of that grid.
pub fn coverage_rate(kps: &KeypointSet, width: u32, height: u32, window: u32, min_count: u32) -> f64 {
    let (w, h) = (width as usize, height as usize);
    if w == 0 || h == 0 || kps.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0u32; w * h];
    for k in &kps.keypoints {
        let x = (k.x.round().max(0.0) as usize).min(w - 1);
        let y = (k.y.round().max(0.0) as usize).min(h - 1);
        counts[y * w + x] += 1;
    }
    // summed-area table with a zero row/column
    let mut sat = vec![0u64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += counts[y * w + x] as u64;
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let before = (window / 2) as usize;
    let after = window as usize - before;
    let mut covered = 0usize;
    for y in 0..h {
        let y0 = y.saturating_sub(before);
        let y1 = (y + after).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(before);
            let x1 = (x + after).min(w);
            let n = sat[y1 * (w + 1) + x1] + sat[y0 * (w + 1) + x0]
                - sat[y0 * (w + 1) + x1]
                - sat[y1 * (w + 1) + x0];
            if n >= min_count as u64 {
                covered += 1;
            }
        }
    }
    covered as f64 / (w * h) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(size: u32, cx: f64, cy: f64, sigma: f64) -> GrayImage {
        GrayImage::from_fn(size, size, |x, y| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            (40.0 + 180.0 * (-d2 / (2.0 * sigma * sigma)).exp()).round() as u8
        })
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        let kps = detect_keypoints(&GrayImage::filled(64, 64, 128), 0.0, 10.0).unwrap();
        assert!(kps.is_empty());
    }

    #[test]
    fn rejects_tiny_images() {
        assert!(matches!(
            detect_keypoints(&GrayImage::filled(15, 40, 0), 0.0, 10.0),
            Err(Error::InputTooSmall { .. })
        ));
    }

    #[test]
    fn gaussian_blob_is_localized() {
        let img = blob(64, 31.0, 33.0, 4.0);
        let kps = detect_keypoints(&img, 0.0, 10.0).unwrap();
        let hit = kps.keypoints.iter().any(|k| {
            let d = ((k.x - 31.0).powi(2) + (k.y - 33.0).powi(2)).sqrt();
            d < 2.0 && k.sigma > 2.0 && k.sigma < 8.0
        });
        assert!(hit, "{:?}", kps.keypoints);
    }

    #[test]
    fn coverage_edge_cases() {
        let empty = KeypointSet::default();
        assert_eq!(coverage_rate(&empty, 32, 32, 16, 4), 0.0);
        let mut full = KeypointSet::default();
        for y in 0..32 {
            for x in 0..32 {
                full.keypoints.push(Keypoint {
                    x: x as f64,
                    y: y as f64,
                    sigma: 1.0,
                    theta: 0.0,
                });
            }
        }
        assert_eq!(coverage_rate(&full, 32, 32, 16, 4), 1.0);
    }

    #[test]
    fn coverage_of_single_cluster() {
        let mut set = KeypointSet::default();
        for _ in 0..4 {
            set.keypoints.push(Keypoint {
                x: 10.0,
                y: 10.0,
                sigma: 1.0,
                theta: 0.0,
            });
        }
        // window 4 -> offsets -2..=1: pixels 9..=12 in each axis see the cluster
        let c = coverage_rate(&set, 20, 20, 4, 4);
        assert!((c - 16.0 / 400.0).abs() < 1e-12);
    }
}
