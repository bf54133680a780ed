//! Projective transforms: evaluation, 4-point DLT, RANSAC and the
//! dominant-orientation consistency check.

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::keypoints::Keypoint;

const DET_EPS: f64 = 1e-12;

/// 3x3 projective transform acting on column vectors `(x, y, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    /// Builds a homography, scaling so that `m[2][2] = 1` when it is nonzero.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        let mut m = m;
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate);
        }
        if m[2][2].abs() > DET_EPS {
            let s = m[2][2];
            m.iter_mut().flatten().for_each(|v| *v /= s);
        }
        let h = Self { m };
        if h.det().abs() <= DET_EPS {
            return Err(Error::Degenerate);
        }
        Ok(h)
    }

    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            m: [[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]],
        }
    }

    /// Rotation by `angle_deg` (image coordinates), uniform scale, then
    /// translation.
    pub fn similarity(angle_deg: f64, scale: f64, dx: f64, dy: f64) -> Self {
        let (s, c) = angle_deg.to_radians().sin_cos();
        Self {
            m: [
                [scale * c, -scale * s, dx],
                [scale * s, scale * c, dy],
                [0.0, 0.0, 1.0],
            ],
        }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = to_matrix3(self).try_inverse().ok_or(Error::Degenerate)?;
        Self::new(from_matrix3(&inv))
    }

    /// `self` after `other`: maps `p` to `self(other(p))`.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Self::new(from_matrix3(&(to_matrix3(self) * to_matrix3(other))))
    }

    pub fn apply(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        apply(self, x, y)
    }

    /// Angle (degrees) of the rotation factor in the polar decomposition of
    /// the upper-left 2x2 block.
    pub fn rotation_deg(&self) -> f64 {
        let m = &self.m;
        let det2 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det2 >= 0.0 {
            (m[1][0] - m[0][1]).atan2(m[0][0] + m[1][1]).to_degrees()
        } else {
            // orthogonal factor is a reflection; report the angle of its
            // rotation part composed with a flip of the x axis
            (m[1][0] + m[0][1]).atan2(m[0][0] - m[1][1]).to_degrees()
        }
    }
}

fn to_matrix3(h: &Homography) -> Matrix3<f64> {
    let m = &h.m;
    Matrix3::new(
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
    )
}

fn from_matrix3(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

/// Maps `(x, y)` through `h`.
pub fn apply(h: &Homography, x: f64, y: f64) -> Result<(f64, f64)> {
    let m = &h.m;
    let d = m[2][0] * x + m[2][1] * y + m[2][2];
    if d.abs() <= DET_EPS {
        return Err(Error::PointAtInfinity);
    }
    Ok((
        (m[0][0] * x + m[0][1] * y + m[0][2]) / d,
        (m[1][0] * x + m[1][1] * y + m[1][2]) / d,
    ))
}

/// A point pair `src -> dst`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub src: (f64, f64),
    pub dst: (f64, f64),
}

impl Correspondence {
    pub fn new(src: (f64, f64), dst: (f64, f64)) -> Self {
        Self { src, dst }
    }

    /// Forward reprojection error `|H src - dst|`, infinite for points at
    /// infinity.
    pub fn error(&self, h: &Homography) -> f64 {
        match h.apply(self.src.0, self.src.1) {
            Ok((x, y)) => ((x - self.dst.0).powi(2) + (y - self.dst.1).powi(2)).sqrt(),
            Err(_) => f64::INFINITY,
        }
    }
}

/// Similarity taking the points to zero mean and mean distance sqrt(2).
fn normalizer(points: impl Iterator<Item = (f64, f64)> + Clone) -> Result<[[f64; 3]; 3]> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points.map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return Err(Error::Degenerate);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]])
}

fn transform(t: &[[f64; 3]; 3], p: (f64, f64)) -> (f64, f64) {
    (t[0][0] * p.0 + t[0][2], t[1][1] * p.1 + t[1][2])
}

fn has_collinear_triple(points: &[(f64, f64)]) -> bool {
    let scale = points
        .iter()
        .flat_map(|p| [p.0.abs(), p.1.abs()])
        .fold(1.0f64, f64::max);
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (points[i], points[j], points[k]);
                let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
                if area.abs() <= 1e-9 * scale * scale {
                    return true;
                }
            }
        }
    }
    false
}

/// Normalized DLT with `h22 = 1`: least squares over `2n` equations in the
/// remaining 8 entries. Exact for 4 non-degenerate pairs.
pub fn estimate_dlt(pairs: &[Correspondence]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: pairs.len(),
        });
    }
    if pairs.len() == 4 {
        let src: Vec<_> = pairs.iter().map(|p| p.src).collect();
        let dst: Vec<_> = pairs.iter().map(|p| p.dst).collect();
        if has_collinear_triple(&src) || has_collinear_triple(&dst) {
            return Err(Error::Degenerate);
        }
    }
    let ts = normalizer(pairs.iter().map(|p| p.src))?;
    let td = normalizer(pairs.iter().map(|p| p.dst))?;

    let n = pairs.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 8);
    let mut b = DVector::<f64>::zeros(2 * n);
    for (i, p) in pairs.iter().enumerate() {
        let (x, y) = transform(&ts, p.src);
        let (u, v) = transform(&td, p.dst);
        let r = 2 * i;
        a[(r, 0)] = x;
        a[(r, 1)] = y;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -u * x;
        a[(r, 7)] = -u * y;
        b[r] = u;
        a[(r + 1, 3)] = x;
        a[(r + 1, 4)] = y;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -v * x;
        a[(r + 1, 7)] = -v * y;
        b[r + 1] = v;
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin / smax < 1e-10 {
        return Err(Error::Degenerate);
    }
    let h = svd.solve(&b, 1e-14).map_err(|_| Error::Degenerate)?;
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    let ts_m = Matrix3::from_row_slice(&ts.concat());
    let td_inv = Matrix3::from_row_slice(&td.concat())
        .try_inverse()
        .ok_or(Error::Degenerate)?;
    Homography::new(from_matrix3(&(td_inv * hn * ts_m)))
}

/// RANSAC settings. `theta_tol` is used by [`validate_orientation`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RansacParams {
    /// Inlier reprojection threshold in pixels.
    pub t_in: f64,
    pub max_iters: usize,
    pub confidence: f64,
    /// Orientation validation tolerance in degrees.
    pub theta_tol: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            t_in: 3.0,
            max_iters: 2000,
            confidence: 0.995,
            theta_tol: 10.0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_in > 0.0) {
            return Err(Error::InvalidParameter("t_in must be > 0".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("RANSAC max_iters must be >= 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidParameter("confidence must be in (0, 1)".into()));
        }
        if !(self.theta_tol >= 0.0) {
            return Err(Error::InvalidParameter("theta_tol must be >= 0".into()));
        }
        Ok(())
    }
}

fn inliers_of(h: &Homography, pairs: &[Correspondence], t_in: f64) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.error(h) < t_in)
        .map(|(i, _)| i)
        .collect()
}

fn draw_sample(rng: &mut ChaCha8Rng, n: usize) -> [usize; 4] {
    let mut s = [0usize; 4];
    let mut k = 0;
    while k < 4 {
        let c = rng.random_range(0..n);
        if !s[..k].contains(&c) {
            s[k] = c;
            k += 1;
        }
    }
    s
}

/// A homography fitted to a minimal sample must keep all sample points on
/// the same side of its line at infinity; otherwise the quadrilateral folds.
fn preserves_orientation(h: &Homography, sample: &[Correspondence]) -> bool {
    let m = &h.m;
    let signs = sample
        .iter()
        .map(|p| (m[2][0] * p.src.0 + m[2][1] * p.src.1 + m[2][2]).signum());
    let first = m[2][2].signum();
    signs.into_iter().all(|s| s == first)
}

/// Robust homography from `src -> dst` correspondences.
///
/// A hypothesis needs at least 4 inliers and, when more than 4
/// correspondences are available, at least one inlier outside its own
/// minimal sample. The winner is re-fitted on all its inliers; the returned
/// inlier list is recomputed under the returned model.
pub fn ransac_homography(
    pairs: &[Correspondence],
    params: &RansacParams,
    rng_seed: u64,
) -> Result<(Homography, Vec<usize>)> {
    params.validate()?;
    let n = pairs.len();
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let min_support = if n == 4 { 4 } else { 5 };
    let mut best: Option<(Homography, usize)> = None;
    let mut budget = params.max_iters;
    let mut iter = 0;
    while iter < budget {
        iter += 1;
        let sample = draw_sample(&mut rng, n);
        let subset: Vec<_> = sample.iter().map(|&i| pairs[i]).collect();
        let Ok(h) = estimate_dlt(&subset) else {
            continue;
        };
        if !preserves_orientation(&h, &subset) {
            continue;
        }
        let front = h.m[2][2].signum();
        let count = pairs
            .iter()
            .filter(|p| {
                let m = &h.m;
                (m[2][0] * p.src.0 + m[2][1] * p.src.1 + m[2][2]).signum() == front && p.error(&h) < params.t_in
            })
            .count();
        if count < min_support {
            continue;
        }
        if best.map_or(true, |(_, c)| count > c) {
            best = Some((h, count));
            let ratio = count as f64 / n as f64;
            let p_good = ratio.powi(4);
            let needed = if p_good >= 1.0 - 1e-12 {
                1.0
            } else {
                (1.0 - params.confidence).ln() / (1.0 - p_good).ln()
            };
            if needed.is_finite() {
                budget = budget.min((needed.ceil() as usize).max(iter));
            }
        }
    }
    let (best_h, best_count) = best.ok_or(Error::NoModel)?;
    let best_inliers = inliers_of(&best_h, pairs, params.t_in);
    let refit: Vec<_> = best_inliers.iter().map(|&i| pairs[i]).collect();
    if let Ok(h) = estimate_dlt(&refit) {
        let inl = inliers_of(&h, pairs, params.t_in);
        if inl.len() >= best_count {
            return Ok((h, inl));
        }
    }
    Ok((best_h, best_inliers))
}

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_deg(a: f64) -> f64 {
    let mut r = a.rem_euclid(360.0);
    if r > 180.0 {
        r -= 360.0;
    }
    r
}

/// Median of angles (degrees), computed after unwrapping every angle to
/// within 180 degrees of the circular mean.
pub fn circular_median_deg(angles: &[f64]) -> Option<f64> {
    if angles.is_empty() {
        return None;
    }
    let (s, c) = angles.iter().fold((0.0, 0.0), |(s, c), a| {
        let r = a.to_radians();
        (s + r.sin(), c + r.cos())
    });
    let mean = if s.abs() < 1e-12 && c.abs() < 1e-12 {
        angles[0]
    } else {
        s.atan2(c).to_degrees()
    };
    let mut unwrapped: Vec<f64> = angles.iter().map(|a| mean + wrap_deg(a - mean)).collect();
    unwrapped.sort_by(f64::total_cmp);
    let k = unwrapped.len();
    let med = if k % 2 == 1 {
        unwrapped[k / 2]
    } else {
        0.5 * (unwrapped[k / 2 - 1] + unwrapped[k / 2])
    };
    Some(wrap_deg(med))
}

/// Checks that the rotation implied by `h` agrees with the circular median
/// of the orientation changes `theta_right - theta_left` of the matched
/// keypoints, within `tol` degrees.
pub fn validate_orientation(h: &Homography, inliers: &[(Keypoint, Keypoint)], tol: f64) -> bool {
    let deltas: Vec<f64> = inliers.iter().map(|(l, r)| wrap_deg(r.theta - l.theta)).collect();
    let Some(median) = circular_median_deg(&deltas) else {
        return false;
    };
    wrap_deg(h.rotation_deg() - median).abs() <= tol
}
