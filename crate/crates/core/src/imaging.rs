//! Image ingestion, luma conversion, integer upscaling and local entropy.
//!
//! Everything downstream of [`load_image`] works on 8-bit single-channel
//! [`GrayImage`]s. The detector runs on an upscaled copy of the input whose
//! factor comes from [`scaling_factor`]; the [`EntropyMap`] is computed on
//! that same upscaled grid.

use std::path::Path;

use image::{DynamicImage, ImageError};

use crate::error::{Error, Result};

/// Default upper bound on the number of pixels an upscaled image may hold.
pub const DEFAULT_PIXEL_BUDGET: u64 = 64 * 1024 * 1024;

/// Decoded raster, 8 bits per channel, row-major and interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    /// 1 (luma) or 3 (RGB).
    pub channels: u8,
    pub data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "raster must have 1 or 3 channels, got {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "raster data holds {} samples, expected {expected}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_gray(gray: &GrayImage) -> Self {
        Self {
            width: gray.width,
            height: gray.height,
            channels: 1,
            data: gray.data.clone(),
        }
    }

    /// Writes the raster as PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width,
            self.height,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| map_image_error(path, e))
    }
}

/// Single-channel 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::Shape(format!(
                "gray data holds {} samples, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    /// Gray value at the nearest pixel to a sub-pixel position, clamped to
    /// the image.
    #[inline]
    pub fn at_rounded(&self, x: f64, y: f64) -> u8 {
        let xi = (x.round().max(0.0) as u32).min(self.width - 1);
        let yi = (y.round().max(0.0) as u32).min(self.height - 1);
        self.get(xi, yi)
    }

    /// Bilinear sample; `None` outside `[0, w-1] x [0, h-1]`.
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let maxx = (self.width - 1) as f64;
        let maxy = (self.height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= maxx && y <= maxy) {
            return None;
        }
        let x0 = x.floor() as u32;
        let y0 = y.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
        let bottom = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        RasterImage::from_gray(self).save_png(path)
    }
}

/// Size category used to group images for per-category parameter tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolutionClass {
    Small,
    Medium,
    Large,
}

impl ResolutionClass {
    pub fn classify(height: u32, width: u32) -> Self {
        match height.max(width) {
            0..=1023 => ResolutionClass::Small,
            1024..=2047 => ResolutionClass::Medium,
            _ => ResolutionClass::Large,
        }
    }
}

/// Per-pixel Shannon entropy (bits) of the local gray-level histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl EntropyMap {
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn at_rounded(&self, x: f64, y: f64) -> f32 {
        let xi = (x.round().max(0.0) as u32).min(self.width - 1);
        let yi = (y.round().max(0.0) as u32).min(self.height - 1);
        self.get(xi, yi)
    }
}

fn map_image_error(path: &Path, err: ImageError) -> Error {
    match err {
        ImageError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Decodes PNG, JPEG, BMP or TIFF. Alpha is dropped and 16-bit samples are
/// scaled to 8 bits.
pub fn load_image(path: &Path) -> Result<RasterImage> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let decoded = reader.decode().map_err(|e| map_image_error(path, e))?;
    Ok(from_dynamic(decoded))
}

fn from_dynamic(img: DynamicImage) -> RasterImage {
    let (width, height) = (img.width(), img.height());
    match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => RasterImage {
            width,
            height,
            channels: 1,
            data: img.to_luma8().into_raw(),
        },
        other => RasterImage {
            width,
            height,
            channels: 3,
            data: other.to_rgb8().into_raw(),
        },
    }
}

/// BT.601 luma, rounded to nearest.
pub fn to_gray(img: &RasterImage) -> GrayImage {
    let data = if img.channels == 1 {
        img.data.clone()
    } else {
        img.data
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect()
    };
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Upscaling factor for an `h x w` input: 4 below a mean side of 1024, else 2.
pub fn scaling_factor(height: u32, width: u32) -> u32 {
    if (height as u64 + width as u64) < 2048 {
        4
    } else {
        2
    }
}

/// Bicubic upscaling by the pipeline factor `s`, which must be 2 or 4.
pub fn upscale(img: &GrayImage, s: u32, pixel_budget: u64) -> Result<GrayImage> {
    if s != 2 && s != 4 {
        return Err(Error::InvalidParameter(format!(
            "upscale factor must be 2 or 4, got {s}"
        )));
    }
    upscale_by(img, s, pixel_budget)
}

/// Bicubic upscaling by any positive integer factor.
///
/// Output pixel `(X, Y)` samples the source at `(X / s, Y / s)`, so every
/// `s`-th output sample reproduces a source pixel exactly and integer
/// translations of the source become integer translations of the output.
/// Borders replicate the edge pixels.
pub fn upscale_by(img: &GrayImage, s: u32, pixel_budget: u64) -> Result<GrayImage> {
    if s == 0 {
        return Err(Error::InvalidParameter("upscale factor must be positive".into()));
    }
    let out_w = img.width as u64 * s as u64;
    let out_h = img.height as u64 * s as u64;
    if out_w * out_h > pixel_budget {
        return Err(Error::PixelBudget {
            requested: out_w * out_h,
            budget: pixel_budget,
        });
    }
    if s == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width as usize, img.height as usize);
    let s = s as usize;
    let (ow, oh) = (out_w as usize, out_h as usize);
    let weights: Vec<[f32; 4]> = (0..s).map(|j| cubic_weights(j as f32 / s as f32)).collect();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    // horizontal pass into an h x ow float buffer
    let mut tmp = vec![0f32; h * ow];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        let out = &mut tmp[y * ow..(y + 1) * ow];
        for x in 0..w {
            let taps = [
                row[clamp(x as isize - 1, w)] as f32,
                row[x] as f32,
                row[clamp(x as isize + 1, w)] as f32,
                row[clamp(x as isize + 2, w)] as f32,
            ];
            for (j, wt) in weights.iter().enumerate() {
                out[x * s + j] =
                    taps[0] * wt[0] + taps[1] * wt[1] + taps[2] * wt[2] + taps[3] * wt[3];
            }
        }
    }

    let mut data = vec![0u8; oh * ow];
    for y in 0..h {
        let rows = [
            clamp(y as isize - 1, h),
            y,
            clamp(y as isize + 1, h),
            clamp(y as isize + 2, h),
        ];
        for (j, wt) in weights.iter().enumerate() {
            let out = &mut data[(y * s + j) * ow..(y * s + j + 1) * ow];
            let r0 = &tmp[rows[0] * ow..(rows[0] + 1) * ow];
            let r1 = &tmp[rows[1] * ow..(rows[1] + 1) * ow];
            let r2 = &tmp[rows[2] * ow..(rows[2] + 1) * ow];
            let r3 = &tmp[rows[3] * ow..(rows[3] + 1) * ow];
            for x in 0..ow {
                let v = r0[x] * wt[0] + r1[x] * wt[1] + r2[x] * wt[2] + r3[x] * wt[3];
                out[x] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(GrayImage {
        width: ow as u32,
        height: oh as u32,
        data,
    })
}

/// Keys cubic convolution weights (a = -0.5) for taps at offsets -1, 0, 1, 2
/// from the sample floor, with fractional position `t`.
fn cubic_weights(t: f32) -> [f32; 4] {
    fn kernel(x: f32) -> f32 {
        const A: f32 = -0.5;
        let x = x.abs();
        if x <= 1.0 {
            (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
        } else if x < 2.0 {
            A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
        } else {
            0.0
        }
    }
    [kernel(1.0 + t), kernel(t), kernel(1.0 - t), kernel(2.0 - t)]
}

/// Mirror index with the edge sample repeated (`-1 -> 0`, `n -> n-1`).
#[inline]
fn symmetric_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Local entropy over a `window x window` neighbourhood with symmetric
/// padding: `E = -sum p_i log2 p_i` over the 256 gray levels.
pub fn entropy_map(img: &GrayImage, window: u32) -> Result<EntropyMap> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "entropy window must be odd, got {window}"
        )));
    }
    let (w, h) = (img.width as usize, img.height as usize);
    let r = (window / 2) as isize;
    let n = (window * window) as usize;
    // c * log2(c) for every count a window can hold
    let clog: Vec<f64> = (0..=n)
        .map(|c| if c == 0 { 0.0 } else { c as f64 * (c as f64).log2() })
        .collect();
    let log_n = (n as f64).log2();
    let inv_n = 1.0 / n as f64;

    let mut data = vec![0f32; w * h];
    let mut hist = [0u32; 256];
    for y in 0..h {
        let rows: Vec<usize> = (-r..=r).map(|d| symmetric_index(y as isize + d, h) * w).collect();
        hist.iter_mut().for_each(|c| *c = 0);
        let mut acc = 0f64;
        let bump = |hist: &mut [u32; 256], acc: &mut f64, v: u8, add: bool| {
            let c = hist[v as usize] as usize;
            let c2 = if add { c + 1 } else { c - 1 };
            *acc += clog[c2] - clog[c];
            hist[v as usize] = c2 as u32;
        };
        for dx in -r..=r {
            let col = symmetric_index(dx, w);
            for &row in &rows {
                bump(&mut hist, &mut acc, img.data[row + col], true);
            }
        }
        for x in 0..w {
            if x > 0 {
                let out_col = symmetric_index(x as isize - r - 1, w);
                let in_col = symmetric_index(x as isize + r, w);
                for &row in &rows {
                    bump(&mut hist, &mut acc, img.data[row + out_col], false);
                    bump(&mut hist, &mut acc, img.data[row + in_col], true);
                }
            }
            let e = log_n - acc * inv_n;
            data[y * w + x] = if e < 1e-9 { 0.0 } else { e.min(log_n) as f32 };
        }
    }
    Ok(EntropyMap {
        width: img.width,
        height: img.height,
        data,
    })
}
