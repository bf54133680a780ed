//! Binary tamper masks, their PNG form and the cleanup applied to the final
//! localization map.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{load_image, GrayImage};

/// Per-pixel tamper flags, `true` = tampered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TamperMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl TamperMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::Shape(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    /// Number of tampered pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// In-place union with a mask of the same size.
    pub fn union_with(&mut self, other: &TamperMask) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Shape("mask sizes differ".into()));
        }
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// 0/255 gray rendering.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray().save_png(path)
    }

    /// Reads a mask image; any nonzero gray value is tampered.
    pub fn load_png(path: &Path) -> Result<Self> {
        let raster = load_image(path)?;
        let c = raster.channels as usize;
        let bits = raster.data.chunks_exact(c).map(|px| px.iter().any(|&v| v != 0)).collect();
        Self::from_bits(raster.width, raster.height, bits)
    }

    /// Block-majority reduction to `width x height`: output pixel `(x, y)`
    /// is tampered when more than half of the `s x s` block of upscaled
    /// pixels around `(s x, s y)` is marked. The block is clipped at the
    /// border and the majority is taken over its in-bounds part.
    pub fn downscale(&self, s: u32, width: u32, height: u32) -> Result<TamperMask> {
        if s == 0 {
            return Err(Error::InvalidParameter("downscale factor must be positive".into()));
        }
        if s == 1 {
            if (self.width, self.height) != (width, height) {
                return Err(Error::Shape("mask size does not match target".into()));
            }
            return Ok(self.clone());
        }
        // summed-area table for O(1) block counts
        let (w, h) = (self.width as usize, self.height as usize);
        let mut sat = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += self.bits[y * w + x] as u32;
                sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
            }
        }
        let half = (s / 2) as i64;
        let span = |c: u32, n: usize| {
            let lo = (c as i64 * s as i64 - half).clamp(0, n as i64) as usize;
            let hi = (c as i64 * s as i64 - half + s as i64).clamp(0, n as i64) as usize;
            (lo, hi)
        };
        let mut out = TamperMask::new(width, height);
        for y in 0..height {
            let (y0, y1) = span(y, h);
            for x in 0..width {
                let (x0, x1) = span(x, w);
                let area = ((y1 - y0) * (x1 - x0)) as u32;
                if area == 0 {
                    continue;
                }
                let marked = sat[y1 * (w + 1) + x1] + sat[y0 * (w + 1) + x0]
                    - sat[y0 * (w + 1) + x1]
                    - sat[y1 * (w + 1) + x0];
                if 2 * marked > area {
                    out.set(x, y, true);
                }
            }
        }
        Ok(out)
    }

    /// Dilation by a disk; pixels outside the image count as unmarked.
    pub fn dilate(&self, radius: u32) -> TamperMask {
        self.morph(radius, true)
    }

    /// Erosion by a disk; only in-bounds neighbours are required to be set.
    pub fn erode(&self, radius: u32) -> TamperMask {
        self.morph(radius, false)
    }

    pub fn close(&self, radius: u32) -> TamperMask {
        self.dilate(radius).erode(radius)
    }

    pub fn open(&self, radius: u32) -> TamperMask {
        self.erode(radius).dilate(radius)
    }

    fn morph(&self, radius: u32, dilate: bool) -> TamperMask {
        let offsets = disk_offsets(radius);
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = TamperMask::new(self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                let hit = |&(dx, dy): &(i64, i64)| {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx < 0 || yy < 0 || xx >= w || yy >= h {
                        return !dilate;
                    }
                    self.bits[(yy * w + xx) as usize]
                };
                let v = if dilate {
                    offsets.iter().any(hit)
                } else {
                    offsets.iter().all(hit)
                };
                out.bits[(y * w + x) as usize] = v;
            }
        }
        out
    }
}

/// Integer offsets within a disk of the given radius.
pub fn disk_offsets(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                v.push((dx, dy));
            }
        }
    }
    v
}
