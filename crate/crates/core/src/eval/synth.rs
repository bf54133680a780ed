//! Synthetic copy-move forgeries and procedural test images.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::imaging::{GrayImage, RasterImage};
use crate::mask::TamperMask;

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + (self.width as f64 - 1.0) / 2.0,
            self.y as f64 + (self.height as f64 - 1.0) / 2.0,
        )
    }
}

/// One geometric step applied to the patch. Rotation and scaling act about
/// the patch's current centre.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformStep {
    Translate { dx: f64, dy: f64 },
    Rotate { degrees: f64 },
    Scale { factor: f64 },
}

/// Whole-image edits applied after pasting.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PostProcess {
    /// Added to every sample.
    pub brightness: Option<f64>,
    /// Linear remap of `[0, 255]` onto `[lo, hi]`.
    pub contrast: Option<(f64, f64)>,
    /// Number of gray levels kept per channel.
    pub levels: Option<u32>,
    /// Amplitude of uniform noise drawn from the generator seed.
    pub noise: Option<f64>,
}

/// Recipe for one synthetic forgery.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticForgerySpec {
    pub patch: Rect,
    /// Steps composed in order. Copy `k` (1-based) scales every translation
    /// by `k`, so several copies land at distinct offsets along the same
    /// direction.
    pub transform: Vec<TransformStep>,
    pub copies: u32,
    #[serde(default)]
    pub post_process: PostProcess,
}

impl SyntheticForgerySpec {
    pub fn translation(patch: Rect, dx: f64, dy: f64) -> Self {
        Self {
            patch,
            transform: vec![TransformStep::Translate { dx, dy }],
            copies: 1,
            post_process: PostProcess::default(),
        }
    }

    /// Homography taking source pixels to copy `k` (1-based).
    pub fn copy_homography(&self, k: u32) -> Result<Homography> {
        let mut h = Homography::identity();
        let (cx, cy) = self.patch.center();
        for step in &self.transform {
            let c = h.apply(cx, cy)?;
            let about = |m: Homography| -> Result<Homography> {
                Homography::translation(c.0, c.1)
                    .compose(&m)?
                    .compose(&Homography::translation(-c.0, -c.1))
            };
            let step_h = match *step {
                TransformStep::Translate { dx, dy } => Homography::translation(dx * k as f64, dy * k as f64),
                TransformStep::Rotate { degrees } => about(Homography::similarity(degrees, 1.0, 0.0, 0.0))?,
                TransformStep::Scale { factor } => {
                    if !(factor > 0.0) {
                        return Err(Error::ForgerySpec("scale factor must be positive".into()));
                    }
                    about(Homography::similarity(0.0, factor, 0.0, 0.0))?
                }
            };
            h = step_h.compose(&h)?;
        }
        Ok(h)
    }
}

/// Pastes the transformed patch copies into `source` and returns the forged
/// image with its ground truth (source rectangle plus every pasted
/// footprint).
pub fn generate_forgery(source: &RasterImage, spec: &SyntheticForgerySpec, rng_seed: u64) -> Result<(RasterImage, TamperMask)> {
    let (w, h) = (source.width, source.height);
    let p = spec.patch;
    if spec.copies < 1 {
        return Err(Error::ForgerySpec("copies must be >= 1".into()));
    }
    if p.width == 0 || p.height == 0 || p.x + p.width > w || p.y + p.height > h {
        return Err(Error::ForgerySpec("patch rectangle outside the image".into()));
    }
    let c = source.channels as usize;
    let mut out = source.data.clone();
    let mut mask = TamperMask::new(w, h);
    for y in p.y..p.y + p.height {
        for x in p.x..p.x + p.width {
            mask.set(x, y, true);
        }
    }

    for k in 1..=spec.copies {
        let fwd = spec.copy_homography(k)?;
        let inv = fwd.inverse()?;
        // the patch covers whole pixels: [x - 0.5, x + width - 0.5]
        let (l, t) = (p.x as f64 - 0.5, p.y as f64 - 0.5);
        let (r, b) = (l + p.width as f64, t + p.height as f64);
        let mut bx = (f64::INFINITY, f64::NEG_INFINITY);
        let mut by = (f64::INFINITY, f64::NEG_INFINITY);
        for (cx, cy) in [(l, t), (r, t), (l, b), (r, b)] {
            let (u, v) = fwd.apply(cx, cy)?;
            bx = (bx.0.min(u), bx.1.max(u));
            by = (by.0.min(v), by.1.max(v));
        }
        let eps = 1e-9;
        if bx.0 < -0.5 - eps || by.0 < -0.5 - eps || bx.1 > w as f64 - 0.5 + eps || by.1 > h as f64 - 0.5 + eps {
            return Err(Error::ForgerySpec(format!("copy {k} falls outside the image")));
        }
        let (x0, x1) = (bx.0.floor().max(0.0) as u32, (bx.1.ceil().max(0.0) as u32).min(w - 1));
        let (y0, y1) = (by.0.floor().max(0.0) as u32, (by.1.ceil().max(0.0) as u32).min(h - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (sx, sy) = inv.apply(x as f64, y as f64)?;
                if !(sx >= l && sx < r && sy >= t && sy < b) {
                    continue;
                }
                let sx = sx.clamp(p.x as f64, (p.x + p.width - 1) as f64);
                let sy = sy.clamp(p.y as f64, (p.y + p.height - 1) as f64);
                mask.set(x, y, true);
                let at = (y as usize * w as usize + x as usize) * c;
                for ch in 0..c {
                    out[at + ch] = bilinear_channel(source, ch, sx, sy).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }

    apply_post_process(&mut out, &spec.post_process, rng_seed);
    Ok((RasterImage::new(w, h, source.channels, out)?, mask))
}

fn bilinear_channel(img: &RasterImage, ch: usize, x: f64, y: f64) -> f64 {
    let c = img.channels as usize;
    let w = img.width as usize;
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width as usize - 1);
    let y1 = (y0 + 1).min(img.height as usize - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v = |xx: usize, yy: usize| img.data[(yy * w + xx) * c + ch] as f64;
    let top = v(x0, y0) * (1.0 - fx) + v(x1, y0) * fx;
    let bottom = v(x0, y1) * (1.0 - fx) + v(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn apply_post_process(data: &mut [u8], pp: &PostProcess, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in data.iter_mut() {
        let mut f = *v as f64;
        if let Some(b) = pp.brightness {
            f += b;
        }
        if let Some((lo, hi)) = pp.contrast {
            f = lo + f.clamp(0.0, 255.0) * (hi - lo) / 255.0;
        }
        if let Some(n) = pp.levels {
            if n >= 2 {
                let step = 255.0 / (n - 1) as f64;
                f = (f.clamp(0.0, 255.0) / step).round() * step;
            }
        }
        if let Some(a) = pp.noise {
            if a > 0.0 {
                f += rng.random_range(-a..=a);
            }
        }
        *v = f.round().clamp(0.0, 255.0) as u8;
    }
}

/// Lattice of uniform random values, sampled with a smooth (cubic Hermite)
/// blend.
struct ValueNoise {
    period: f64,
    cols: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(width: u32, height: u32, period: f64, rng: &mut ChaCha8Rng) -> Self {
        let cols = (width as f64 / period).ceil() as usize + 2;
        let rows = (height as f64 / period).ceil() as usize + 2;
        let values = (0..cols * rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { period, cols, values }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.period, y / self.period);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(gx - ix as f64), smooth(gy - iy as f64));
        let v = |cx: usize, cy: usize| self.values[cy * self.cols + cx];
        let top = v(ix, iy) * (1.0 - tx) + v(ix + 1, iy) * tx;
        let bottom = v(ix, iy + 1) * (1.0 - tx) + v(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Non-repeating fractal texture in roughly `[20, 235]`: value noise at
/// periods 64 down to 2 plus per-pixel grain.
pub fn procedural_texture(width: u32, height: u32, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers: Vec<(ValueNoise, f64)> = [(64.0, 1.0), (32.0, 0.7), (16.0, 0.5), (8.0, 0.4), (4.0, 0.3), (2.0, 0.2)]
        .iter()
        .map(|&(p, a)| (ValueNoise::new(width, height, p, &mut rng), a))
        .collect();
    let total: f64 = layers.iter().map(|l| l.1).sum();
    let mut grain = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    GrayImage::from_fn(width, height, |x, y| {
        let v: f64 = layers.iter().map(|(n, a)| a * n.sample(x as f64, y as f64)).sum::<f64>() / total;
        let g = grain.random_range(-6.0..6.0);
        (127.5 + 150.0 * v + g).round().clamp(20.0, 235.0) as u8
    })
}

/// Authentic image with repeated but distinct structures: a grid of 64 px
/// tiles, each holding a small checkered motif on its own background
/// texture. Every motif appears in exactly two tiles, at different offsets
/// and with independent noise and brightness, so twins share a handful of
/// keypoints and nothing else.
pub fn sgo_texture(width: u32, height: u32, seed: u64) -> GrayImage {
    const TILE: u32 = 64;
    const CELL: u32 = 4;
    const CELLS: u32 = 5;
    const DETAIL: f64 = 6.0;
    let motif = CELL * CELLS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tiles_x = width / TILE;
    let tiles_y = height / TILE;
    let n = (tiles_x * tiles_y) as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut motif_of = vec![0usize; n];
    for (k, &t) in order.iter().enumerate() {
        motif_of[t] = k / 2;
    }
    let motifs: Vec<Vec<f64>> = (0..n.div_ceil(2))
        .map(|_| (0..CELLS * CELLS).map(|_| rng.random_range(40.0..220.0)).collect())
        .collect();
    let offset: Vec<(u32, u32)> = (0..n)
        .map(|_| (rng.random_range(4..TILE - motif - 4), rng.random_range(4..TILE - motif - 4)))
        .collect();
    let shift: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
    let detail: Vec<ValueNoise> = (0..n).map(|_| ValueNoise::new(TILE, TILE, 3.0, &mut rng)).collect();
    let texture: Vec<ValueNoise> = (0..n).map(|_| ValueNoise::new(TILE, TILE, 6.0, &mut rng)).collect();
    let mut grain = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));

    GrayImage::from_fn(width, height, |x, y| {
        let g = grain.random_range(-3.0..3.0);
        let (tx, ty) = (x / TILE, y / TILE);
        if tx >= tiles_x || ty >= tiles_y {
            return (128.0f64 + g).round() as u8;
        }
        let t = (ty * tiles_x + tx) as usize;
        let (lx, ly) = (x % TILE, y % TILE);
        let (ox, oy) = offset[t];
        let v = if (ox..ox + motif).contains(&lx) && (oy..oy + motif).contains(&ly) {
            let cell = ((ly - oy) / CELL * CELLS + (lx - ox) / CELL) as usize;
            motifs[motif_of[t]][cell] + shift[t] + DETAIL * detail[t].sample(lx as f64, ly as f64)
        } else {
            128.0 + 60.0 * texture[t].sample(lx as f64, ly as f64)
        };
        (v + g).round().clamp(0.0, 255.0) as u8
    })
}
