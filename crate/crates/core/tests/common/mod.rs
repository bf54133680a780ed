#![allow(dead_code)]

use cmfd::eval::pixel_confusion;
use cmfd::eval::synth::{generate_forgery, procedural_texture, sgo_texture, Rect, SyntheticForgerySpec, TransformStep};
use cmfd::imaging::{to_gray, GrayImage, RasterImage};
use cmfd::mask::TamperMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub image: GrayImage,
    pub truth: TamperMask,
    pub spec: Option<SyntheticForgerySpec>,
}

fn forge(size: u32, texture_seed: u64, spec: SyntheticForgerySpec) -> Fixture {
    let src = RasterImage::from_gray(&procedural_texture(size, size, texture_seed));
    let (img, truth) = generate_forgery(&src, &spec, texture_seed).expect("fixture in bounds");
    Fixture {
        image: to_gray(&img),
        truth,
        spec: Some(spec),
    }
}

fn disjoint(a: &Rect, b: &Rect, gap: u32) -> bool {
    a.x + a.width + gap <= b.x || b.x + b.width + gap <= a.x || a.y + a.height + gap <= b.y || b.y + b.height + gap <= a.y
}

/// Seeded translation forgery: square patch of 64..=128 px moved to a
/// non-overlapping spot of a `size x size` texture.
pub fn translation(seed: u64, size: u32) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = rng.random_range(64..=128u32).min(size / 3);
    loop {
        let src = Rect::new(rng.random_range(0..=size - side), rng.random_range(0..=size - side), side, side);
        let dst = Rect::new(rng.random_range(0..=size - side), rng.random_range(0..=size - side), side, side);
        if disjoint(&src, &dst, 8) {
            let spec = SyntheticForgerySpec::translation(src, dst.x as f64 - src.x as f64, dst.y as f64 - src.y as f64);
            return forge(size, seed, spec);
        }
    }
}

/// A 96 px patch rotated by `degrees` and/or scaled by `factor`, pasted far
/// from its source.
pub fn transformed(seed: u64, degrees: f64, factor: f64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let patch = Rect::new(rng.random_range(40..80), rng.random_range(40..80), 96, 96);
    let spec = SyntheticForgerySpec {
        patch,
        transform: vec![
            TransformStep::Scale { factor },
            TransformStep::Rotate { degrees },
            TransformStep::Translate {
                dx: rng.random_range(220.0..260.0),
                dy: rng.random_range(200.0..250.0),
            },
        ],
        copies: 1,
        post_process: Default::default(),
    };
    forge(512, seed + 500, spec)
}

/// An 80 px patch copied `copies` times along one direction.
pub fn one_to_many(seed: u64, copies: u32) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
    let patch = Rect::new(rng.random_range(20..40), rng.random_range(20..40), 80, 80);
    let step = if copies >= 3 { 125.0 } else { 180.0 };
    let spec = SyntheticForgerySpec {
        patch,
        transform: vec![TransformStep::Translate {
            dx: step,
            dy: rng.random_range(0.8..1.0) * step,
        }],
        copies,
        post_process: Default::default(),
    };
    forge(512, seed + 900, spec)
}

pub fn authentic(seed: u64, size: u32) -> Fixture {
    let image = procedural_texture(size, size, 10_000 + seed);
    Fixture {
        truth: TamperMask::new(size, size),
        image,
        spec: None,
    }
}

pub fn sgo(seed: u64) -> Fixture {
    Fixture {
        image: sgo_texture(512, 512, seed),
        truth: TamperMask::new(512, 512),
        spec: None,
    }
}

/// Pixel F1 of `predicted` against `truth`, 0 when undefined.
pub fn f1(predicted: &TamperMask, truth: &TamperMask) -> f64 {
    pixel_confusion(predicted, truth).unwrap().f1().unwrap_or(0.0)
}

/// Forward-mapped footprint of copy `k` (exact for translations).
pub fn footprint(spec: &SyntheticForgerySpec, k: u32, w: u32, h: u32) -> TamperMask {
    let hom = spec.copy_homography(k).unwrap();
    let mut m = TamperMask::new(w, h);
    let p = spec.patch;
    for y in p.y..p.y + p.height {
        for x in p.x..p.x + p.width {
            let (xx, yy) = hom.apply(x as f64, y as f64).unwrap();
            let (xx, yy) = (xx.round(), yy.round());
            if xx >= 0.0 && yy >= 0.0 && (xx as u32) < w && (yy as u32) < h {
                m.set(xx as u32, yy as u32, true);
            }
        }
    }
    m
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}
