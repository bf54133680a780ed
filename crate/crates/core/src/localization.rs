//! Iterative localization: densest-sample RANSAC, inlier removal, the
//! minimum-inlier gate, and grayscale verification inside scale-sized
//! disks around the inliers.
//!
//! Everything here runs in upscaled coordinates; only the final mask is
//! reduced to the original resolution.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{ransac_homography, validate_orientation, Correspondence, Homography, RansacParams};
use crate::imaging::GrayImage;
use crate::keypoints::{Keypoint, KeypointSet};
use crate::mask::TamperMask;
use crate::matching::{DirectedMatch, MatchSet};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LocalizationParams {
    /// Sampling radius in upscaled pixels.
    pub r_sam: f64,
    /// A model is accepted only with strictly more inliers than this.
    pub n_in: usize,
    /// Suspicious-region disk radius as a multiple of keypoint scale.
    pub region_gamma: f64,
    pub max_iters: usize,
    /// Disk radius of the closing/opening applied to the final mask;
    /// 0 disables the cleanup.
    pub morph_radius: u32,
}

impl Default for LocalizationParams {
    fn default() -> Self {
        Self {
            r_sam: 64.0,
            n_in: 20,
            region_gamma: 16.0,
            max_iters: 200,
            morph_radius: 3,
        }
    }
}

impl LocalizationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_sam > 0.0) {
            return Err(Error::InvalidParameter("r_sam must be > 0".into()));
        }
        if !(self.region_gamma > 0.0) {
            return Err(Error::InvalidParameter("region_gamma must be > 0".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("localization max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Diagnostics of one localization iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub iter: usize,
    pub seed_match: DirectedMatch,
    pub sample_size: usize,
    pub inlier_count: usize,
    pub accepted: bool,
    pub homography: Option<Homography>,
}

#[derive(serde::Serialize)]
struct TraceLine {
    iter: usize,
    seed: [usize; 2],
    sample_size: usize,
    inliers: usize,
    accepted: bool,
    homography: Option<[f64; 9]>,
}

/// Writes one JSON object per iteration.
pub fn write_traces(traces: &[IterationTrace], path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for t in traces {
        let line = TraceLine {
            iter: t.iter,
            seed: [t.seed_match.left, t.seed_match.right],
            sample_size: t.sample_size,
            inliers: t.inlier_count,
            accepted: t.accepted,
            homography: t.homography.map(|h| h.to_row_major()),
        };
        let s = serde_json::to_string(&line).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(w, "{s}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn dist2(a: &Keypoint, b: &Keypoint) -> f64 {
    (a.x - b.x).powi(2) + (a.y - b.y).powi(2)
}

/// Uniform grid over match endpoints for radius queries.
struct EndpointGrid {
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<(usize, Keypoint)>>,
}

impl EndpointGrid {
    fn new(matches: &[DirectedMatch], kps: &KeypointSet, cell: f64) -> Self {
        let (mut max_x, mut max_y) = (0f64, 0f64);
        for m in matches {
            for k in [&kps.keypoints[m.left], &kps.keypoints[m.right]] {
                max_x = max_x.max(k.x);
                max_y = max_y.max(k.y);
            }
        }
        let cols = (max_x.max(0.0) / cell) as usize + 1;
        let rows = (max_y.max(0.0) / cell) as usize + 1;
        let mut buckets = vec![Vec::new(); cols * rows];
        for (i, m) in matches.iter().enumerate() {
            for k in [kps.keypoints[m.left], kps.keypoints[m.right]] {
                let (cx, cy) = Self::cell_of(&k, cell, cols, rows);
                buckets[cy * cols + cx].push((i, k));
            }
        }
        Self {
            cell,
            cols,
            rows,
            buckets,
        }
    }

    fn cell_of(k: &Keypoint, cell: f64, cols: usize, rows: usize) -> (usize, usize) {
        (
            ((k.x.max(0.0) / cell) as usize).min(cols - 1),
            ((k.y.max(0.0) / cell) as usize).min(rows - 1),
        )
    }

    /// Calls `f` with the index of every match having an endpoint within
    /// `r` of `q` (possibly more than once per match).
    fn for_each_near(&self, q: &Keypoint, r: f64, mut f: impl FnMut(usize)) {
        let (cx, cy) = Self::cell_of(q, self.cell, self.cols, self.rows);
        let r2 = r * r;
        for y in cy.saturating_sub(1)..=(cy + 1).min(self.rows - 1) {
            for x in cx.saturating_sub(1)..=(cx + 1).min(self.cols - 1) {
                for (i, k) in &self.buckets[y * self.cols + x] {
                    if dist2(k, q) <= r2 {
                        f(*i);
                    }
                }
            }
        }
    }
}

/// The unvisited match with the most unvisited matches near either of its
/// endpoints (a match counts when either of its own endpoints is within
/// `r_sam`), and that neighbourhood. Ties go to the lowest index.
pub fn densest_sampling_set(
    unvisited: &[DirectedMatch],
    kps: &KeypointSet,
    r_sam: f64,
) -> Result<(DirectedMatch, Vec<DirectedMatch>)> {
    if unvisited.is_empty() {
        return Err(Error::EmptyInput("unvisited match set"));
    }
    let grid = EndpointGrid::new(unvisited, kps, r_sam);
    let mut stamp = vec![usize::MAX; unvisited.len()];
    let neighbourhood = |i: usize, stamp: &mut Vec<usize>, out: Option<&mut Vec<usize>>| -> usize {
        let m = unvisited[i];
        let mut count = 0;
        let mut members = Vec::new();
        for q in [&kps.keypoints[m.left], &kps.keypoints[m.right]] {
            grid.for_each_near(q, r_sam, |j| {
                if stamp[j] != i {
                    stamp[j] = i;
                    count += 1;
                    members.push(j);
                }
            });
        }
        if let Some(out) = out {
            members.sort_unstable();
            *out = members;
        }
        count
    };
    let mut best = (0usize, 0usize);
    for i in 0..unvisited.len() {
        let c = neighbourhood(i, &mut stamp, None);
        if c > best.1 {
            best = (i, c);
        }
    }
    stamp.iter_mut().for_each(|s| *s = usize::MAX);
    let mut members = Vec::new();
    neighbourhood(best.0, &mut stamp, Some(&mut members));
    Ok((unvisited[best.0], members.into_iter().map(|j| unvisited[j]).collect()))
}

/// Transfer error of `src -> dst` under `h`, checked forward and backward.
fn symmetric_error(h: &Homography, inv: &Homography, src: &Keypoint, dst: &Keypoint) -> f64 {
    let fwd = Correspondence::new((src.x, src.y), (dst.x, dst.y)).error(h);
    let bwd = Correspondence::new((dst.x, dst.y), (src.x, src.y)).error(inv);
    fwd.min(bwd)
}

/// Matches of the full set consistent with `h`. A match is tested in both
/// orientations, since the canonical order says nothing about which side
/// is the copy; each returned match is oriented so that `h` maps its
/// `left` keypoint onto its `right` one.
pub fn select_inliers(h: &Homography, all: &MatchSet, kps: &KeypointSet, t_in: f64) -> Result<Vec<DirectedMatch>> {
    let inv = h.inverse()?;
    let mut out = Vec::new();
    for m in &all.matches {
        let (l, r) = (&kps.keypoints[m.left], &kps.keypoints[m.right]);
        let forward = symmetric_error(h, &inv, l, r);
        let backward = symmetric_error(h, &inv, r, l);
        if forward < t_in && forward <= backward {
            out.push(*m);
        } else if backward < t_in {
            out.push(DirectedMatch {
                left: m.right,
                right: m.left,
            });
        }
    }
    Ok(out)
}

fn unordered(m: &DirectedMatch) -> (usize, usize) {
    (m.left.min(m.right), m.left.max(m.right))
}

/// Set difference, comparing matches regardless of orientation.
pub fn remove_inliers(unvisited: &[DirectedMatch], inliers: &[DirectedMatch]) -> Vec<DirectedMatch> {
    let gone: HashSet<(usize, usize)> = inliers.iter().map(unordered).collect();
    unvisited.iter().filter(|m| !gone.contains(&unordered(m))).copied().collect()
}

/// Minimum-inlier gate (strict).
pub fn gate_sgo(inlier_count: usize, n_in: usize) -> bool {
    inlier_count > n_in
}

fn paint_disk(mask: &mut TamperMask, cx: f64, cy: f64, radius: f64) {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let r2 = radius * radius;
    let y0 = ((cy - radius).floor() as i64).max(0);
    let y1 = ((cy + radius).ceil() as i64).min(h - 1);
    for y in y0..=y1 {
        let dy = y as f64 - cy;
        let span = r2 - dy * dy;
        if span < 0.0 {
            continue;
        }
        let half = span.sqrt();
        let x0 = ((cx - half).ceil() as i64).max(0);
        let x1 = ((cx + half).floor() as i64).min(w - 1);
        for x in x0..=x1 {
            mask.bits[(y * w + x) as usize] = true;
        }
    }
}

/// Disks of radius `gamma * sigma` around the left and right inlier
/// keypoints, clipped to `width x height`.
pub fn suspicious_regions(
    inliers: &[DirectedMatch],
    kps: &KeypointSet,
    gamma: f64,
    width: u32,
    height: u32,
) -> (TamperMask, TamperMask) {
    let mut sr_l = TamperMask::new(width, height);
    let mut sr_r = TamperMask::new(width, height);
    for m in inliers {
        let (l, r) = (&kps.keypoints[m.left], &kps.keypoints[m.right]);
        paint_disk(&mut sr_l, l.x, l.y, gamma * l.sigma);
        paint_disk(&mut sr_r, r.x, r.y, gamma * r.sigma);
    }
    (sr_l, sr_r)
}

/// Quantile by linear interpolation between order statistics at position
/// `(n - 1) q` of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Gray differences `I(left) - I(right)` at the rounded inlier positions,
/// reduced to their range after discarding values outside the
/// `1.5 IQR` fences.
pub fn robust_diff_bounds(inliers: &[DirectedMatch], kps: &KeypointSet, gray: &GrayImage) -> Result<(f64, f64)> {
    if inliers.is_empty() {
        return Err(Error::EmptyInput("inlier list"));
    }
    let diffs: Vec<f64> = inliers
        .iter()
        .map(|m| {
            let (l, r) = (&kps.keypoints[m.left], &kps.keypoints[m.right]);
            gray.at_rounded(l.x, l.y) as f64 - gray.at_rounded(r.x, r.y) as f64
        })
        .collect();
    Ok(iqr_range(&diffs))
}

/// `(min, max)` of the values within `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]`, or of
/// all values if none survive.
pub fn iqr_range(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let kept: Vec<f64> = sorted.iter().copied().filter(|v| *v >= lo && *v <= hi).collect();
    let pool = if kept.is_empty() { &sorted } else { &kept };
    (pool[0], pool[pool.len() - 1])
}

fn mark(mask: &mut TamperMask, x: f64, y: f64) {
    let (xi, yi) = (x.round(), y.round());
    if xi >= 0.0 && yi >= 0.0 && xi < mask.width as f64 && yi < mask.height as f64 {
        mask.set(xi as u32, yi as u32, true);
    }
}

/// Pixels of the suspicious regions whose gray difference to their
/// transformed counterpart falls in `[d_l, d_h]`, together with those
/// counterparts. The counterpart's gray value is the bilinear sample
/// rounded to an integer level.
pub fn verify_regions(
    sr_l: &TamperMask,
    sr_r: &TamperMask,
    h: &Homography,
    gray: &GrayImage,
    d_l: f64,
    d_h: f64,
) -> Result<TamperMask> {
    let inv = h.inverse()?;
    let (w, hgt) = (gray.width, gray.height);
    let mut out = TamperMask::new(w, hgt);
    for (region, map, sign) in [(sr_l, h, 1.0), (sr_r, &inv, -1.0)] {
        for y in 0..hgt {
            for x in 0..w {
                if !region.get(x, y) {
                    continue;
                }
                let Ok((u, v)) = map.apply(x as f64, y as f64) else {
                    continue;
                };
                let Some(other) = gray.bilinear(u, v) else {
                    continue;
                };
                // left minus right in both passes
                let diff = sign * (gray.get(x, y) as f64 - other.round());
                if diff >= d_l && diff <= d_h {
                    out.set(x, y, true);
                    mark(&mut out, u, v);
                }
            }
        }
    }
    Ok(out)
}

/// Result of [`localize`].
#[derive(Debug, Clone)]
pub struct Localization {
    /// Final mask at the original resolution.
    pub mask: TamperMask,
    /// Accumulated mask before reduction, in upscaled coordinates.
    pub upscaled: TamperMask,
    pub traces: Vec<IterationTrace>,
}

impl Localization {
    pub fn accepted_models(&self) -> usize {
        self.traces.iter().filter(|t| t.accepted).count()
    }
}

/// Runs the full iterative localization over `matches` and reduces the
/// accumulated map to `original_width x original_height`.
#[allow(clippy::too_many_arguments)]
pub fn localize(
    matches: &MatchSet,
    kps: &KeypointSet,
    gray: &GrayImage,
    geo: &RansacParams,
    p: &LocalizationParams,
    s: u32,
    original_width: u32,
    original_height: u32,
    rng_seed: u64,
) -> Result<Localization> {
    geo.validate()?;
    p.validate()?;
    let mut acc = TamperMask::new(gray.width, gray.height);
    let mut traces = Vec::new();
    let mut unvisited = matches.matches.clone();
    let mut iter = 0;
    while !unvisited.is_empty() && iter < p.max_iters {
        let (seed, sample) = densest_sampling_set(&unvisited, kps, p.r_sam)?;
        let mut trace = IterationTrace {
            iter,
            seed_match: seed,
            sample_size: sample.len(),
            inlier_count: 0,
            accepted: false,
            homography: None,
        };
        let seed_seed = rng_seed.wrapping_add(iter as u64);
        iter += 1;
        let fitted = if sample.len() < 4 {
            None
        } else {
            let pairs = oriented_sample(&seed, &sample, kps);
            ransac_homography(&pairs, geo, seed_seed).ok().map(|r| r.0)
        };
        let Some(h) = fitted else {
            unvisited.retain(|m| *m != seed);
            traces.push(trace);
            continue;
        };
        trace.homography = Some(h);
        let inliers = match select_inliers(&h, matches, kps, geo.t_in) {
            Ok(v) => v,
            Err(_) => Vec::new(),
        };
        trace.inlier_count = inliers.len();
        unvisited = remove_inliers(&unvisited, &inliers);
        // the seed goes too, even when the model does not cover it
        unvisited.retain(|m| *m != seed);
        let pairs: Vec<(Keypoint, Keypoint)> = inliers
            .iter()
            .map(|m| (kps.keypoints[m.left], kps.keypoints[m.right]))
            .collect();
        if !gate_sgo(inliers.len(), p.n_in) || !validate_orientation(&h, &pairs, geo.theta_tol) {
            traces.push(trace);
            continue;
        }
        let (sr_l, sr_r) = suspicious_regions(&inliers, kps, p.region_gamma, gray.width, gray.height);
        let (d_l, d_h) = robust_diff_bounds(&inliers, kps, gray)?;
        let found = verify_regions(&sr_l, &sr_r, &h, gray, d_l, d_h)?;
        acc.union_with(&found)?;
        trace.accepted = true;
        traces.push(trace);
    }
    let mut mask = acc.downscale(s, original_width, original_height)?;
    if p.morph_radius > 0 {
        mask = mask.close(p.morph_radius).open(p.morph_radius);
    }
    Ok(Localization {
        mask,
        upscaled: acc,
        traces,
    })
}

/// Correspondences for RANSAC, each oriented so its source keypoint lies on
/// the seed's left side (closer to the seed's left keypoint than to its
/// right one).
fn oriented_sample(seed: &DirectedMatch, sample: &[DirectedMatch], kps: &KeypointSet) -> Vec<Correspondence> {
    let (sl, sr) = (&kps.keypoints[seed.left], &kps.keypoints[seed.right]);
    sample
        .iter()
        .map(|m| {
            let (a, b) = (&kps.keypoints[m.left], &kps.keypoints[m.right]);
            let keep = dist2(a, sl).min(dist2(b, sr)) <= dist2(b, sl).min(dist2(a, sr));
            let (src, dst) = if keep { (a, b) } else { (b, a) };
            Correspondence::new((src.x, src.y), (dst.x, dst.y))
        })
        .collect()
}
