//! Separable filtering helpers shared by the distortion, metric and VDP code.

use crate::imgio::Plane;

/// Half-sample symmetric reflection: `-1 -> 0`, `n -> n - 1`.
///
/// Valid for offsets up to `n` outside the range, which callers guarantee.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - i - 1
    } else {
        i
    };
    debug_assert!((0..n).contains(&r), "reflection out of range");
    r as usize
}

/// Sampled Gaussian with radius `ceil(3 sigma)`, normalized to unit sum.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    gaussian_kernel_with_radius(sigma, radius)
}

pub(crate) fn gaussian_kernel_with_radius(sigma: f64, radius: usize) -> Vec<f64> {
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / denom).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Convolve rows then columns with an odd-length kernel, mirroring at edges.
pub(crate) fn convolve_separable_mirror(src: &Plane, kernel: &[f64]) -> Plane {
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (src.width, src.height);
    let mut tmp = Plane::zeros(w, h);
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                acc += k * row[reflect(x as isize + t as isize - radius, w)];
            }
            tmp.data[y * w + x] = acc;
        }
    }
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        for (t, &k) in kernel.iter().enumerate() {
            let sy = reflect(y as isize + t as isize - radius, h);
            let src_row = &tmp.data[sy * w..(sy + 1) * w];
            let dst_row = &mut out.data[y * w..(y + 1) * w];
            for (d, &s) in dst_row.iter_mut().zip(src_row) {
                *d += k * s;
            }
        }
    }
    out
}

/// "Valid" separable correlation: output shrinks by `kernel.len() - 1` per axis.
pub(crate) fn filter_valid(src: &Plane, kernel: &[f64]) -> Plane {
    let k = kernel.len();
    let (w, h) = (src.width, src.height);
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut tmp = Plane::zeros(ow, h);
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp.data[y * ow + x] = kernel.iter().zip(&row[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = Plane::zeros(ow, oh);
    for y in 0..oh {
        for (t, &kv) in kernel.iter().enumerate() {
            let src_row = &tmp.data[(y + t) * ow..(y + t + 1) * ow];
            let dst_row = &mut out.data[y * ow..(y + 1) * ow];
            for (d, &s) in dst_row.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Average 2x2 blocks and keep one sample per block (odd edges dropped).
pub(crate) fn downsample_mean2(src: &Plane) -> Plane {
    let (w, h) = (src.width / 2, src.height / 2);
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let s = src.at(2 * x, 2 * y)
                + src.at(2 * x + 1, 2 * y)
                + src.at(2 * x, 2 * y + 1)
                + src.at(2 * x + 1, 2 * y + 1);
            out.data[y * w + x] = s / 4.0;
        }
    }
    out
}

pub(crate) fn elementwise(a: &Plane, b: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    Plane::new(a.width, a.height, data)
}
