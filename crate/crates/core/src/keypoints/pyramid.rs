//! Gaussian and difference-of-Gaussian scale space on `f32` planes.

/// Row-major float image.
#[derive(Debug, Clone)]
pub(crate) struct Plane {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            data: vec![0.0; w * h],
        }
    }

    #[inline(always)]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    #[inline(always)]
    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.w..(y + 1) * self.w]
    }

    /// Keeps every second sample in both directions.
    pub fn half(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut out = Plane::new(w, h);
        for y in 0..h {
            let src = self.row(2 * y);
            for (x, v) in out.data[y * w..(y + 1) * w].iter_mut().enumerate() {
                *v = src[2 * x];
            }
        }
        out
    }

    pub fn sub(&self, other: &Plane) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    // reflect-101: -1 -> 1, n -> n-2
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = ((sigma * 4.0).ceil() as usize).max(1);
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable Gaussian blur with reflected borders.
pub(crate) fn gaussian_blur(src: &Plane, sigma: f64) -> Plane {
    let k = gaussian_kernel(sigma);
    let r = k.len() / 2;
    let (w, h) = (src.w, src.h);

    let mut tmp = Plane::new(w, h);
    let mut padded = vec![0f32; w + 2 * r];
    for y in 0..h {
        let row = src.row(y);
        for (i, p) in padded.iter_mut().enumerate() {
            *p = row[reflect(i as isize - r as isize, w)];
        }
        let out = &mut tmp.data[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let window = &padded[x..x + k.len()];
            *o = window.iter().zip(&k).map(|(a, b)| a * b).sum();
        }
    }

    let mut out = Plane::new(w, h);
    for y in 0..h {
        let dst = &mut out.data[y * w..(y + 1) * w];
        for (i, &kv) in k.iter().enumerate() {
            let sy = reflect(y as isize + i as isize - r as isize, h);
            let srow = &tmp.data[sy * w..(sy + 1) * w];
            for (d, s) in dst.iter_mut().zip(srow) {
                *d += kv * s;
            }
        }
    }
    out
}

/// One octave: `scales + 3` Gaussian layers and `scales + 2` DoG layers.
pub(crate) struct Octave {
    pub gauss: Vec<Plane>,
    pub dog: Vec<Plane>,
}

/// Builds the octave whose first layer is `base` (already at blur `sigma0`).
pub(crate) fn build_octave(base: Plane, scales: usize, sigma0: f64) -> Octave {
    let k = 2f64.powf(1.0 / scales as f64);
    let mut gauss = Vec::with_capacity(scales + 3);
    gauss.push(base);
    for i in 1..scales + 3 {
        let prev = sigma0 * k.powi(i as i32 - 1);
        let total = prev * k;
        let inc = (total * total - prev * prev).sqrt();
        let next = gaussian_blur(gauss.last().expect("non-empty"), inc);
        gauss.push(next);
    }
    let dog = gauss.windows(2).map(|p| p[1].sub(&p[0])).collect();
    Octave { gauss, dog }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_sums_to_one() {
        for s in [0.8, 1.226, 3.1] {
            let k = gaussian_kernel(s);
            let sum: f32 = k.iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn blur_preserves_constant() {
        let mut p = Plane::new(7, 5);
        p.data.iter_mut().for_each(|v| *v = 0.25);
        let b = gaussian_blur(&p, 2.0);
        assert!(b.data.iter().all(|v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(0, 1), 0);
        assert_eq!(reflect(-7, 3), 1);
    }

    #[test]
    fn blur_variance_matches_sigma() {
        let n = 101;
        let mut p = Plane::new(n, 1);
        p.data[50] = 1.0;
        let b = gaussian_blur(&p, 3.0);
        let var: f64 = b
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v as f64 * (i as f64 - 50.0).powi(2))
            .sum();
        assert!((var.sqrt() - 3.0).abs() < 0.02);
    }
}
