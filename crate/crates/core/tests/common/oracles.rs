//! Direct loop implementations of the built-in metrics.
//!
//! These deliberately share nothing with the library: weights are built
//! here, every window is visited explicitly and statistics are computed in
//! centered form.

use iqa_ambiguity::imgio::PixelImage;

fn plane(img: &PixelImage) -> (usize, usize, Vec<f64>) {
    (
        img.width(),
        img.height(),
        img.data().iter().map(|&v| v as f64).collect(),
    )
}

fn window_2d() -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    w
}

struct WindowStats {
    mx: f64,
    my: f64,
    vx: f64,
    vy: f64,
    cxy: f64,
}

fn window_stats(w: usize, x: &[f64], y: &[f64], ox: usize, oy: usize, win: &[Vec<f64>]) -> WindowStats {
    let (mut mx, mut my) = (0.0, 0.0);
    for i in 0..11 {
        for j in 0..11 {
            let idx = (oy + i) * w + ox + j;
            mx += win[i][j] * x[idx];
            my += win[i][j] * y[idx];
        }
    }
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for i in 0..11 {
        for j in 0..11 {
            let idx = (oy + i) * w + ox + j;
            let (dx, dy) = (x[idx] - mx, y[idx] - my);
            vx += win[i][j] * dx * dx;
            vy += win[i][j] * dy * dy;
            cxy += win[i][j] * dx * dy;
        }
    }
    WindowStats { mx, my, vx, vy, cxy }
}

/// Returns (mean SSIM, mean CS) over valid windows.
fn ssim_raw(w: usize, h: usize, x: &[f64], y: &[f64], c1: f64, c2: f64) -> (f64, f64) {
    let win = window_2d();
    let (mut s, mut c, mut n) = (0.0, 0.0, 0.0);
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let st = window_stats(w, x, y, ox, oy, &win);
            let l = (2.0 * st.mx * st.my + c1) / (st.mx * st.mx + st.my * st.my + c1);
            let cs = (2.0 * st.cxy + c2) / (st.vx + st.vy + c2);
            s += l * cs;
            c += cs;
            n += 1.0;
        }
    }
    (s / n, c / n)
}

pub fn psnr(a: &PixelImage, b: &PixelImage) -> f64 {
    let mut mse = 0.0;
    for (p, q) in a.data().iter().zip(b.data()) {
        let d = *p as f64 - *q as f64;
        mse += d * d;
    }
    mse /= a.data().len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

pub fn ssim(a: &PixelImage, b: &PixelImage) -> f64 {
    let (w, h, x) = plane(a);
    let (_, _, y) = plane(b);
    ssim_raw(w, h, &x, &y, (0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2)).0
}

pub fn uqi(a: &PixelImage, b: &PixelImage) -> f64 {
    let (w, h, x) = plane(a);
    let (_, _, y) = plane(b);
    let win = window_2d();
    let (mut s, mut n) = (0.0, 0.0);
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let st = window_stats(w, &x, &y, ox, oy, &win);
            let m = st.mx * st.mx + st.my * st.my;
            let v = st.vx + st.vy;
            if m < 1e-8 || v < 1e-8 {
                continue;
            }
            s += 4.0 * st.cxy * st.mx * st.my / (m * v);
            n += 1.0;
        }
    }
    s / n
}

fn halve(w: usize, h: usize, p: &[f64]) -> (usize, usize, Vec<f64>) {
    let (nw, nh) = (w / 2, h / 2);
    let mut out = vec![0.0; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            out[y * nw + x] = (p[2 * y * w + 2 * x]
                + p[2 * y * w + 2 * x + 1]
                + p[(2 * y + 1) * w + 2 * x]
                + p[(2 * y + 1) * w + 2 * x + 1])
                / 4.0;
        }
    }
    (nw, nh, out)
}

pub fn ms_ssim(a: &PixelImage, b: &PixelImage) -> f64 {
    let weights = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let (mut w, mut h, mut x) = plane(a);
    let (_, _, mut y) = plane(b);
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut result = 1.0;
    for (scale, wt) in weights.iter().enumerate() {
        let (s, cs) = ssim_raw(w, h, &x, &y, c1, c2);
        let term: f64 = if scale == 4 { s } else { cs };
        result *= term.max(0.0).powf(*wt);
        let (nw, nh, nx) = halve(w, h, &x);
        let (_, _, ny) = halve(w, h, &y);
        w = nw;
        h = nh;
        x = nx;
        y = ny;
    }
    result
}

pub fn gmsd(a: &PixelImage, b: &PixelImage) -> f64 {
    let (w, h, x) = plane(a);
    let (_, _, y) = plane(b);
    let (dw, dh, dx) = halve(w, h, &x);
    let (_, _, dy) = halve(w, h, &y);
    let grad = |p: &[f64], cx: usize, cy: usize| {
        let at = |xx: usize, yy: usize| p[yy * dw + xx];
        let mut gx = 0.0;
        let mut gy = 0.0;
        for k in 0..3 {
            // Prewitt: left column minus right column, top row minus bottom row
            gx += (at(cx - 1, cy - 1 + k) - at(cx + 1, cy - 1 + k)) / 3.0;
            gy += (at(cx - 1 + k, cy - 1) - at(cx - 1 + k, cy + 1)) / 3.0;
        }
        (gx * gx + gy * gy).sqrt()
    };
    let mut vals = Vec::new();
    for cy in 1..dh - 1 {
        for cx in 1..dw - 1 {
            let (m1, m2) = (grad(&dx, cx, cy), grad(&dy, cx, cy));
            vals.push((2.0 * m1 * m2 + 170.0) / (m1 * m1 + m2 * m2 + 170.0));
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}
