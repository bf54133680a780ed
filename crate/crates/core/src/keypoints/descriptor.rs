//! Dominant orientations and 4x4x8 gradient-histogram descriptors.
//!
//! Angles follow image coordinates: `theta = atan2(dy, dx)` with `y` pointing
//! down, in degrees `[0, 360)`. Under an image rotation by `phi` (same
//! convention) the orientation of a keypoint shifts by `+phi`.

use super::pyramid::Plane;

pub(crate) const ORI_BINS: usize = 36;
const ORI_RADIUS_FACTOR: f32 = 3.0 * ORI_SIGMA_FACTOR;
const ORI_SIGMA_FACTOR: f32 = 1.5;
pub(crate) const ORI_PEAK_RATIO: f32 = 0.8;

const DESCR_WIDTH: usize = 4;
const DESCR_BINS: usize = 8;
const DESCR_SCALE: f32 = 3.0;
const DESCR_CLAMP: f32 = 0.2;
pub const DESCRIPTOR_LEN: usize = DESCR_WIDTH * DESCR_WIDTH * DESCR_BINS;

/// Gradient magnitude and angle (radians, `[-pi, pi]`) of one Gaussian layer.
/// Border pixels hold zero magnitude.
pub(crate) struct Gradients {
    pub w: usize,
    pub h: usize,
    pub mag: Vec<f32>,
    pub ang: Vec<f32>,
}

impl Gradients {
    pub fn of(img: &Plane) -> Self {
        let (w, h) = (img.w, img.h);
        let mut mag = vec![0f32; w * h];
        let mut ang = vec![0f32; w * h];
        for y in 1..h.saturating_sub(1) {
            let up = img.row(y - 1);
            let mid = img.row(y);
            let down = img.row(y + 1);
            for x in 1..w - 1 {
                let dx = mid[x + 1] - mid[x - 1];
                let dy = down[x] - up[x];
                mag[y * w + x] = (dx * dx + dy * dy).sqrt();
                ang[y * w + x] = dy.atan2(dx);
            }
        }
        Self { w, h, mag, ang }
    }
}

/// Smoothed orientation histogram around `(x, y)` at octave-relative scale
/// `sigma`.
pub(crate) fn orientation_histogram(g: &Gradients, x: usize, y: usize, sigma: f32) -> [f32; ORI_BINS] {
    let radius = (ORI_RADIUS_FACTOR * sigma).round() as isize;
    let wsig = ORI_SIGMA_FACTOR * sigma;
    let expf = -1.0 / (2.0 * wsig * wsig);
    let mut raw = [0f32; ORI_BINS + 4];
    for dy in -radius..=radius {
        let yy = y as isize + dy;
        if yy <= 0 || yy >= g.h as isize - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let xx = x as isize + dx;
            if xx <= 0 || xx >= g.w as isize - 1 {
                continue;
            }
            let idx = yy as usize * g.w + xx as usize;
            let weight = (((dx * dx + dy * dy) as f32) * expf).exp();
            let mut bin = (ORI_BINS as f32 * (g.ang[idx] / std::f32::consts::TAU)).round() as isize;
            bin = bin.rem_euclid(ORI_BINS as isize);
            raw[bin as usize + 2] += weight * g.mag[idx];
        }
    }
    // circular [1 4 6 4 1] / 16 smoothing
    raw[1] = raw[ORI_BINS + 1];
    raw[0] = raw[ORI_BINS];
    raw[ORI_BINS + 2] = raw[2];
    raw[ORI_BINS + 3] = raw[3];
    let mut hist = [0f32; ORI_BINS];
    for (i, h) in hist.iter_mut().enumerate() {
        let j = i + 2;
        *h = (raw[j - 2] + raw[j + 2]) * (1.0 / 16.0)
            + (raw[j - 1] + raw[j + 1]) * (4.0 / 16.0)
            + raw[j] * (6.0 / 16.0);
    }
    hist
}

/// Orientations (degrees) of all histogram peaks within `ORI_PEAK_RATIO` of
/// the maximum, refined by a parabola through the neighbouring bins.
pub(crate) fn dominant_orientations(hist: &[f32; ORI_BINS]) -> Vec<f64> {
    let max = hist.iter().copied().fold(0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let threshold = max * ORI_PEAK_RATIO;
    let mut out = Vec::new();
    for k in 0..ORI_BINS {
        let l = hist[(k + ORI_BINS - 1) % ORI_BINS];
        let r = hist[(k + 1) % ORI_BINS];
        let c = hist[k];
        if c > l && c > r && c >= threshold {
            let offset = 0.5 * (l - r) / (l - 2.0 * c + r);
            let mut bin = k as f32 + offset;
            if bin < 0.0 {
                bin += ORI_BINS as f32;
            } else if bin >= ORI_BINS as f32 {
                bin -= ORI_BINS as f32;
            }
            let mut deg = bin as f64 * (360.0 / ORI_BINS as f64);
            if deg >= 360.0 {
                deg -= 360.0;
            }
            out.push(deg);
        }
    }
    out
}

/// Descriptor at octave-relative position `(x, y)` and scale `sigma`, rotated
/// to `theta_deg`. Returns `None` when no gradient falls inside the patch.
pub(crate) fn compute_descriptor(
    g: &Gradients,
    x: f32,
    y: f32,
    sigma: f32,
    theta_deg: f64,
) -> Option<[f32; DESCRIPTOR_LEN]> {
    let d = DESCR_WIDTH;
    let n = DESCR_BINS;
    let theta = (theta_deg as f32).to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let hist_width = DESCR_SCALE * sigma;
    let max_radius = ((g.w * g.w + g.h * g.h) as f32).sqrt();
    let radius = (hist_width * std::f32::consts::SQRT_2 * (d as f32 + 1.0) * 0.5)
        .round()
        .min(max_radius) as isize;
    let cos_n = cos_t / hist_width;
    let sin_n = sin_t / hist_width;
    let exp_scale = -1.0 / (d as f32 * d as f32 * 0.5);
    let bins_per_rad = n as f32 / std::f32::consts::TAU;
    let half = d as f32 / 2.0 - 0.5;

    // the Gaussian weight only depends on i^2 + j^2, so it factors per axis
    let axis_weight: Vec<f32> = (-radius..=radius)
        .map(|k| ((k * k) as f32 * exp_scale / (hist_width * hist_width)).exp())
        .collect();
    let xi = x.round() as isize;
    let yi = y.round() as isize;
    let stride_r = (d + 2) * (n + 2);
    let stride_c = n + 2;
    let mut hist = vec![0f32; (d + 2) * (d + 2) * (n + 2)];

    for i in -radius..=radius {
        let yy = yi + i;
        if yy <= 0 || yy >= g.h as isize - 1 {
            continue;
        }
        for j in -radius..=radius {
            let xx = xi + j;
            if xx <= 0 || xx >= g.w as isize - 1 {
                continue;
            }
            // rotate into the keypoint frame (x axis along theta)
            let c_rot = j as f32 * cos_n + i as f32 * sin_n;
            let r_rot = -(j as f32) * sin_n + i as f32 * cos_n;
            let rbin = r_rot + half;
            let cbin = c_rot + half;
            if rbin <= -1.0 || rbin >= d as f32 || cbin <= -1.0 || cbin >= d as f32 {
                continue;
            }
            let idx = yy as usize * g.w + xx as usize;
            let mag = g.mag[idx];
            if mag == 0.0 {
                continue;
            }
            let weight = axis_weight[(i + radius) as usize] * axis_weight[(j + radius) as usize];
            let mut obin = (g.ang[idx] - theta) * bins_per_rad;
            if obin < 0.0 {
                obin += n as f32;
            }
            if obin >= n as f32 {
                obin -= n as f32;
            }
            let v = mag * weight;

            // rbin, cbin > -1 and obin >= 0, so truncation of the shifted
            // values is a floor
            let r0 = ((rbin + 1.0) as isize - 1).min(d as isize - 1);
            let c0 = ((cbin + 1.0) as isize - 1).min(d as isize - 1);
            let o0 = (obin as usize).min(n - 1);
            let (dr, dc, dobin) = (rbin - r0 as f32, cbin - c0 as f32, obin - o0 as f32);

            let v_r1 = v * dr;
            let v_r0 = v - v_r1;
            let v_rc11 = v_r1 * dc;
            let v_rc10 = v_r1 - v_rc11;
            let v_rc01 = v_r0 * dc;
            let v_rc00 = v_r0 - v_rc01;
            let corners = [
                (0usize, 0usize, v_rc00),
                (0, 1, v_rc01),
                (1, 0, v_rc10),
                (1, 1, v_rc11),
            ];
            for (ro, co, vv) in corners {
                let base = ((r0 + 1) as usize + ro) * stride_r + ((c0 + 1) as usize + co) * stride_c;
                let v1 = vv * dobin;
                hist[base + o0] += vv - v1;
                hist[base + o0 + 1] += v1;
            }
        }
    }

    let mut out = [0f32; DESCRIPTOR_LEN];
    for r in 0..d {
        for c in 0..d {
            let base = (r + 1) * stride_r + (c + 1) * stride_c;
            // fold the wrap-around orientation bin back to bin 0
            let mut bins = [0f32; DESCR_BINS];
            bins.copy_from_slice(&hist[base..base + n]);
            bins[0] += hist[base + n];
            bins[1] += hist[base + n + 1];
            out[(r * d + c) * n..(r * d + c + 1) * n].copy_from_slice(&bins);
        }
    }

    if !normalize(&mut out) {
        return None;
    }
    let clamp = DESCR_CLAMP;
    out.iter_mut().for_each(|v| *v = v.min(clamp));
    if !normalize(&mut out) {
        return None;
    }
    Some(out)
}

fn normalize(v: &mut [f32]) -> bool {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm <= 1e-12 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    true
}
