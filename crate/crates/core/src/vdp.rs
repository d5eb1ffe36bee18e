//! A compact Daly-style visible difference predictor.
//!
//! Given a reference and a test luminance image and the viewing conditions,
//! [`vdp`] returns a *perceivableness map*: for each pixel, the probability
//! that the difference there is visible. The stages are:
//!
//! 1. Optical blur of the luminance field by the eye's modulation transfer
//!    function (intra-ocular scatter), for a fixed pupil diameter.
//! 2. Laplacian pyramid of the blurred field with `pyramid_levels` bands.
//!    Band `b` lives at resolution `2^-b` and peaks at `ppd / 2^(b+2)`
//!    cycles per degree.
//! 3. Local band-limited contrast: each band value divided by
//!    `|local lowpass| + ε`, where the lowpass is the expanded next-coarser
//!    Gaussian level. Dividing by local mean luminance gives Weber-law
//!    luminance masking.
//! 4. Contrast sensitivity: band weight `S(f_b) = A(f_b) / max A` with
//!    `A(f) = 2.6 (0.0192 + 0.114 f) exp(-(0.114 f)^1.1)`.
//! 5. Contrast masking by the reference:
//!    `T_b = (T0 / S(f_b)) * max(1, |C_ref| / s)^w`.
//! 6. Psychometric function per band:
//!    `P_b = 1 - exp(-(|C_test - C_ref| / T_b)^β)`.
//! 7. Probability summation over bands after nearest-neighbor upsampling:
//!    `P = 1 - Π (1 - P_b)`, evaluated as `1 - exp(-Σ (|ΔC_b| / T_b)^β)`.
//!
//! The reference image is always the first argument; masking depends on it,
//! so `vdp(a, b)` and `vdp(b, a)` generally differ.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::display::{display_model, LuminanceImage, ViewingConditions};
use crate::error::{Error, Result};
use crate::filter::reflect;
use crate::imgio::{PixelImage, Plane};

/// Guard added to the lowpass magnitude in the contrast division.
pub const CONTRAST_EPSILON: f64 = 1e-4;

/// Detection probability separating "seen" from "not seen".
pub const DETECTION_THRESHOLD: f64 = 0.5;

/// Base threshold obtained from [`calibrate_base_threshold`] under default
/// viewing conditions and default parameters.
pub const DEFAULT_BASE_THRESHOLD: f64 = 0.005_852_211_186_965;

/// Coefficients of `A(f) = amplitude (offset + slope f) exp(-(slope f)^exponent)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsfParams {
    pub amplitude: f64,
    pub offset: f64,
    pub slope: f64,
    pub exponent: f64,
}

impl Default for CsfParams {
    fn default() -> Self {
        Self {
            amplitude: 2.6,
            offset: 0.0192,
            slope: 0.114,
            exponent: 1.1,
        }
    }
}

impl CsfParams {
    /// Unnormalized sensitivity at `f` cycles per degree.
    pub fn raw(&self, f: f64) -> f64 {
        self.amplitude * (self.offset + self.slope * f) * (-(self.slope * f).powf(self.exponent)).exp()
    }

    /// Frequency and value of the sensitivity peak (golden-section search).
    pub fn peak(&self) -> (f64, f64) {
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (1e-3, 200.0);
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        for _ in 0..200 {
            if self.raw(c) > self.raw(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - phi * (b - a);
            d = a + phi * (b - a);
        }
        let f = 0.5 * (a + b);
        (f, self.raw(f))
    }

    /// Sensitivity normalized to unit peak.
    pub fn normalized(&self, f: f64) -> f64 {
        self.raw(f) / self.peak().1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VdpParameters {
    pub pyramid_levels: usize,
    pub csf: CsfParams,
    /// Masking exponent `w`.
    pub masking_exponent: f64,
    /// Masking knee `s`: reference contrast at which masking starts.
    pub masking_knee: f64,
    /// Psychometric slope `β`.
    pub psychometric_slope: f64,
    /// Base contrast threshold `T0` at peak sensitivity.
    pub base_threshold: f64,
    /// Pupil diameter in mm for the optical transfer function; `0` disables
    /// the optics stage.
    pub pupil_diameter: f64,
}

impl Default for VdpParameters {
    fn default() -> Self {
        Self {
            pyramid_levels: 5,
            csf: CsfParams::default(),
            masking_exponent: 0.7,
            masking_knee: 0.1,
            psychometric_slope: 3.5,
            base_threshold: DEFAULT_BASE_THRESHOLD,
            pupil_diameter: DEFAULT_PUPIL_DIAMETER,
        }
    }
}

impl VdpParameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidVdpParameters(m));
        if self.pyramid_levels < 2 || self.pyramid_levels > 16 {
            return bad(format!("pyramid_levels must be in 2..=16, got {}", self.pyramid_levels));
        }
        if !(self.psychometric_slope > 0.0) {
            return bad(format!(
                "psychometric slope must be positive, got {}",
                self.psychometric_slope
            ));
        }
        if !(self.base_threshold > 0.0 && self.base_threshold.is_finite()) {
            return bad(format!("base threshold must be positive, got {}", self.base_threshold));
        }
        if !(0.0..=1.0).contains(&self.masking_exponent) {
            return bad(format!(
                "masking exponent must be in [0, 1], got {}",
                self.masking_exponent
            ));
        }
        if !(self.masking_knee > 0.0) {
            return bad(format!("masking knee must be positive, got {}", self.masking_knee));
        }
        if !(self.pupil_diameter == 0.0 || (2.0..=8.0).contains(&self.pupil_diameter)) {
            return bad(format!(
                "pupil diameter must be 0 or in [2, 8] mm, got {}",
                self.pupil_diameter
            ));
        }
        let c = &self.csf;
        if !(c.amplitude > 0.0 && c.slope > 0.0 && c.offset >= 0.0 && c.exponent > 0.0) {
            return bad("CSF coefficients must be positive".into());
        }
        Ok(())
    }
}

pub const DEFAULT_PUPIL_DIAMETER: f64 = 3.5;

/// Modulation transfer of the eye's optics at `f` cycles per degree for a
/// pupil of `d` mm (Deeley, Drasdo and Charman).
pub fn optical_mtf(f: f64, d: f64) -> f64 {
    (-(f / (20.9 - 2.1 * d)).powf(1.3 - 0.07 * d)).exp()
}

/// Per-pixel detection probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceivablenessMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl PerceivablenessMap {
    pub fn from_probabilities(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidImage("map size does not match dimensions".into()));
        }
        if data.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidImage("probabilities must lie in [0, 1]".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Pixels with probability strictly above 0.5.
    pub fn count_above_threshold(&self) -> usize {
        self.data.iter().filter(|&&p| p > DETECTION_THRESHOLD).count()
    }

    pub fn fraction_above_threshold(&self) -> f64 {
        self.count_above_threshold() as f64 / self.data.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Probabilities scaled to 0..=255 as a grayscale image.
    pub fn to_image(&self) -> PixelImage {
        let data = self.data.iter().map(|p| (p * 255.0).round() as u8).collect();
        PixelImage::gray(self.width, self.height, data).expect("consistent dimensions")
    }
}

/// Two images are distinguishable when more than a fraction `k` of the pixels
/// is detected with probability above 0.5.
pub fn distinguishable(map: &PerceivablenessMap, k: f64) -> bool {
    exceeds_fraction(map.count_above_threshold(), map.data.len(), k)
}

/// `count / total > k` evaluated without rounding surprises at the boundary.
pub fn exceeds_fraction(count: usize, total: usize, k: f64) -> bool {
    count as f64 > k * total as f64
}

/// Band contrasts (and, for references, inverse thresholds) of one image.
#[derive(Clone, Debug)]
pub struct PreparedImage {
    width: usize,
    height: usize,
    contrast: Vec<Plane>,
    inv_threshold: Vec<Plane>,
}

impl PreparedImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// VDP bound to one set of viewing conditions and parameters.
///
/// Preparing images once and comparing many pairs is how ladder scans reuse
/// work: every rung is decomposed a single time per viewing condition.
#[derive(Clone, Debug)]
pub struct VdpModel {
    conditions: ViewingConditions,
    params: VdpParameters,
    /// `S(f_b) / T0` per band.
    band_gain: Vec<f64>,
}

impl VdpModel {
    pub fn new(conditions: ViewingConditions, params: VdpParameters) -> Result<Self> {
        conditions.validate()?;
        params.validate()?;
        let ppd = conditions.pixels_per_degree();
        let peak = params.csf.peak().1;
        let band_gain = (0..params.pyramid_levels)
            .map(|b| {
                let f = band_frequency(ppd, b);
                params.csf.raw(f) / peak / params.base_threshold
            })
            .collect();
        Ok(Self {
            conditions,
            params,
            band_gain,
        })
    }

    pub fn conditions(&self) -> &ViewingConditions {
        &self.conditions
    }

    pub fn params(&self) -> &VdpParameters {
        &self.params
    }

    /// Normalized CSF weight of each band.
    pub fn band_sensitivities(&self) -> Vec<f64> {
        self.band_gain.iter().map(|g| g * self.params.base_threshold).collect()
    }

    fn check_size(&self, width: usize, height: usize) -> Result<()> {
        let min = 1usize << self.params.pyramid_levels;
        if width.min(height) < min {
            return Err(Error::ImageTooSmall(format!(
                "{} pyramid levels need at least {min}x{min}, got {width}x{height}",
                self.params.pyramid_levels
            )));
        }
        Ok(())
    }

    pub fn prepare(&self, image: &LuminanceImage) -> Result<PreparedImage> {
        self.check_size(image.width(), image.height())?;
        let mut plane = image.plane();
        if self.params.pupil_diameter > 0.0 {
            let ppd = self.conditions.pixels_per_degree();
            let d = self.params.pupil_diameter;
            plane = filter_frequency(&plane, |f| optical_mtf(f * ppd, d));
        }
        let contrast = band_contrasts(&plane, self.params.pyramid_levels);
        let knee = self.params.masking_knee;
        let w = self.params.masking_exponent;
        let inv_threshold = contrast
            .iter()
            .zip(&self.band_gain)
            .map(|(c, &gain)| {
                let data = c
                    .data
                    .iter()
                    .map(|&v| gain / (v.abs() / knee).max(1.0).powf(w))
                    .collect();
                Plane::new(c.width, c.height, data)
            })
            .collect();
        Ok(PreparedImage {
            width: image.width(),
            height: image.height(),
            contrast,
            inv_threshold,
        })
    }

    /// Convenience: display model plus [`VdpModel::prepare`].
    pub fn prepare_pixels(&self, image: &PixelImage) -> Result<PreparedImage> {
        self.prepare(&display_model(image, &self.conditions)?)
    }

    /// Summed detection energy `Σ_b (α |ΔC_b| / T_b)^β` at full resolution.
    fn energy(&self, reference: &PreparedImage, test: &PreparedImage, alpha: f64) -> Result<Vec<f64>> {
        if (reference.width, reference.height) != (test.width, test.height) {
            return Err(Error::DimensionMismatch {
                left: (reference.width, reference.height, 1),
                right: (test.width, test.height, 1),
            });
        }
        let (w, h) = (reference.width, reference.height);
        let beta = self.params.psychometric_slope;
        let mut energy = vec![0.0f64; w * h];
        for (b, ((cr, ct), inv_t)) in reference
            .contrast
            .iter()
            .zip(&test.contrast)
            .zip(&reference.inv_threshold)
            .enumerate()
        {
            let band: Vec<f64> = cr
                .data
                .iter()
                .zip(&ct.data)
                .zip(&inv_t.data)
                .map(|((&r, &t), &g)| {
                    let d = (t - r).abs() * g * alpha;
                    if d == 0.0 {
                        0.0
                    } else {
                        d.powf(beta)
                    }
                })
                .collect();
            let bw = cr.width;
            for y in 0..h {
                let row = &band[(y >> b) * bw..(y >> b) * bw + bw];
                let out = &mut energy[y * w..(y + 1) * w];
                for (x, e) in out.iter_mut().enumerate() {
                    *e += row[x >> b];
                }
            }
        }
        Ok(energy)
    }

    pub fn compare(&self, reference: &PreparedImage, test: &PreparedImage) -> Result<PerceivablenessMap> {
        self.compare_scaled(reference, test, 1.0)
    }

    /// Map obtained when every band difference is multiplied by `alpha`,
    /// thresholds unchanged.
    pub fn compare_scaled(
        &self,
        reference: &PreparedImage,
        test: &PreparedImage,
        alpha: f64,
    ) -> Result<PerceivablenessMap> {
        let energy = self.energy(reference, test, alpha)?;
        let data = energy.iter().map(|&e| -(-e).exp_m1()).collect();
        Ok(PerceivablenessMap {
            width: reference.width,
            height: reference.height,
            data,
        })
    }

    /// Number of pixels detected with probability above 0.5.
    ///
    /// `1 - exp(-E) > 0.5` is decided on the energy directly; the result equals
    /// `compare(..).count_above_threshold()` up to rounding at the boundary.
    pub fn count_above_threshold(&self, reference: &PreparedImage, test: &PreparedImage) -> Result<usize> {
        let map = self.compare(reference, test)?;
        Ok(map.count_above_threshold())
    }
}

/// Peak frequency of pyramid band `b` in cycles per degree.
pub fn band_frequency(pixels_per_degree: f64, band: usize) -> f64 {
    pixels_per_degree / (1u64 << (band + 2)) as f64
}

/// Perceivableness map of `test` against `reference`.
pub fn vdp(
    reference: &LuminanceImage,
    test: &LuminanceImage,
    conditions: &ViewingConditions,
    params: &VdpParameters,
) -> Result<PerceivablenessMap> {
    if (reference.width(), reference.height()) != (test.width(), test.height()) {
        return Err(Error::DimensionMismatch {
            left: (reference.width(), reference.height(), 1),
            right: (test.width(), test.height(), 1),
        });
    }
    let model = VdpModel::new(*conditions, *params)?;
    let r = model.prepare(reference)?;
    let t = model.prepare(test)?;
    model.compare(&r, &t)
}

/// Zero-phase filtering with gain `h(f)`, `f` in cycles per pixel.
///
/// The plane is mirrored to twice its size so the periodic transform sees no
/// seams; the result is cropped back.
fn filter_frequency(p: &Plane, h: impl Fn(f64) -> f64) -> Plane {
    let (w, h_) = (p.width, p.height);
    let (ew, eh) = (2 * w, 2 * h_);
    let mut buf: Vec<Complex<f64>> = (0..eh)
        .flat_map(|y| {
            let sy = if y < h_ { y } else { eh - 1 - y };
            (0..ew).map(move |x| (x, sy))
        })
        .map(|(x, sy)| {
            let sx = if x < w { x } else { ew - 1 - x };
            Complex::new(p.at(sx, sy), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let row_fwd = planner.plan_fft_forward(ew);
    let row_inv = planner.plan_fft_inverse(ew);
    let col_fwd = planner.plan_fft_forward(eh);
    let col_inv = planner.plan_fft_inverse(eh);
    row_fwd.process(&mut buf);
    let mut col = vec![Complex::new(0.0, 0.0); eh];
    let fx: Vec<f64> = (0..ew).map(|u| u.min(ew - u) as f64 / ew as f64).collect();
    let fy: Vec<f64> = (0..eh).map(|v| v.min(eh - v) as f64 / eh as f64).collect();
    for x in 0..ew {
        for (y, c) in col.iter_mut().enumerate() {
            *c = buf[y * ew + x];
        }
        col_fwd.process(&mut col);
        for (y, c) in col.iter_mut().enumerate() {
            *c *= h(fx[x].hypot(fy[y]));
        }
        col_inv.process(&mut col);
        for (y, c) in col.iter().enumerate() {
            buf[y * ew + x] = *c;
        }
    }
    row_inv.process(&mut buf);
    let scale = 1.0 / (ew * eh) as f64;
    let mut out = Plane::zeros(w, h_);
    for y in 0..h_ {
        for x in 0..w {
            out.data[y * w + x] = buf[y * ew + x].re * scale;
        }
    }
    out
}

const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Blur with the 5-tap binomial kernel and keep even samples.
fn reduce(p: &Plane) -> Plane {
    let (w, h) = (p.width, p.height);
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut rows = Plane::zeros(nw, h);
    for y in 0..h {
        for x in 0..nw {
            let cx = 2 * x as isize;
            rows.data[y * nw + x] = BINOMIAL5
                .iter()
                .enumerate()
                .map(|(t, k)| k * p.at(reflect(cx + t as isize - 2, w), y))
                .sum();
        }
    }
    let mut out = Plane::zeros(nw, nh);
    for y in 0..nh {
        let cy = 2 * y as isize;
        for x in 0..nw {
            out.data[y * nw + x] = BINOMIAL5
                .iter()
                .enumerate()
                .map(|(t, k)| k * rows.at(x, reflect(cy + t as isize - 2, h)))
                .sum();
        }
    }
    out
}

/// Linear interpolation from a coarse level back to `w x h`; coarse sample
/// `k` sits on fine sample `2k`.
fn expand(coarse: &Plane, w: usize, h: usize) -> Plane {
    let interp = |n: usize, i: usize| -> (usize, usize) {
        let a = i / 2;
        if i.is_multiple_of(2) {
            (a, a)
        } else {
            (a, (a + 1).min(n - 1))
        }
    };
    let mut rows = Plane::zeros(w, coarse.height);
    for y in 0..coarse.height {
        for x in 0..w {
            let (a, b) = interp(coarse.width, x);
            rows.data[y * w + x] = 0.5 * (coarse.at(a, y) + coarse.at(b, y));
        }
    }
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        let (a, b) = interp(coarse.height, y);
        for x in 0..w {
            out.data[y * w + x] = 0.5 * (rows.at(x, a) + rows.at(x, b));
        }
    }
    out
}

/// Local band-limited contrast for `levels` bands.
fn band_contrasts(luminance: &Plane, levels: usize) -> Vec<Plane> {
    let mut gaussian = vec![luminance.clone()];
    for _ in 0..levels {
        let next = reduce(gaussian.last().expect("non-empty"));
        gaussian.push(next);
    }
    (0..levels)
        .map(|b| {
            let fine = &gaussian[b];
            let low = expand(&gaussian[b + 1], fine.width, fine.height);
            let data = fine
                .data
                .iter()
                .zip(&low.data)
                .map(|(&f, &l)| (f - l) / (l.abs() + CONTRAST_EPSILON))
                .collect();
            Plane::new(fine.width, fine.height, data)
        })
        .collect()
}

/// Calibration stimulus: mid-gray field with a centered square one code
/// brighter, covering a quarter of the area.
pub fn calibration_stimulus(size: usize) -> (PixelImage, PixelImage) {
    let reference = PixelImage::filled(size, size, 128).expect("non-zero size");
    let data = (0..size * size)
        .map(|i| {
            let (x, y) = (i % size, i / size);
            let inside = (size / 4..3 * size / 4).contains(&x) && (size / 4..3 * size / 4).contains(&y);
            if inside {
                129
            } else {
                128
            }
        })
        .collect();
    (reference, PixelImage::gray(size, size, data).expect("consistent size"))
}

pub const CALIBRATION_SIZE: usize = 128;

/// Base threshold `T0` for which the most visible pixel of the calibration
/// stimulus is detected with probability exactly 0.5.
///
/// Detection energy scales as `T0^-β`, so the threshold follows in closed
/// form from the energy computed at `T0 = 1`.
pub fn calibrate_base_threshold(conditions: &ViewingConditions, params: &VdpParameters) -> Result<f64> {
    let unit = VdpParameters {
        base_threshold: 1.0,
        ..*params
    };
    let model = VdpModel::new(*conditions, unit)?;
    let (reference, test) = calibration_stimulus(CALIBRATION_SIZE);
    let r = model.prepare_pixels(&reference)?;
    let t = model.prepare_pixels(&test)?;
    let max_energy = model.energy(&r, &t, 1.0)?.into_iter().fold(0.0, f64::max);
    Ok((max_energy / std::f64::consts::LN_2).powf(1.0 / params.psychometric_slope))
}
