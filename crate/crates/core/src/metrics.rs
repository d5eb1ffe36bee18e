//! Full-reference quality metrics and externally computed score tables.
//!
//! Scores leave this module in *canonical* form: higher always means better.
//! Lower-is-better metrics (GMSD, or any ingested metric declared `lower`)
//! are negated.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::degrade::{csv_err, DistortionKind};
use crate::error::{Error, Result};
use crate::filter::{downsample_mean2, elementwise, filter_valid, gaussian_kernel_with_radius};
use crate::imgio::{PixelImage, Plane};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    HigherIsBetter,
    LowerIsBetter,
}

impl Polarity {
    /// Map a native score to the canonical higher-is-better scale.
    pub fn canonical(self, native: f64) -> f64 {
        match self {
            Polarity::HigherIsBetter => native,
            Polarity::LowerIsBetter => -native,
        }
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "higher" => Ok(Polarity::HigherIsBetter),
            "lower" => Ok(Polarity::LowerIsBetter),
            other => Err(Error::Schema(format!(
                "polarity must be `higher` or `lower`, got `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricDescriptor {
    pub name: String,
    pub polarity: Polarity,
    pub native_range: Option<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BuiltinMetric {
    Psnr,
    Ssim,
    MsSsim,
    Uqi,
    Gmsd,
}

impl BuiltinMetric {
    pub const ALL: [BuiltinMetric; 5] = [
        BuiltinMetric::Psnr,
        BuiltinMetric::Ssim,
        BuiltinMetric::MsSsim,
        BuiltinMetric::Uqi,
        BuiltinMetric::Gmsd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinMetric::Psnr => "psnr",
            BuiltinMetric::Ssim => "ssim",
            BuiltinMetric::MsSsim => "ms-ssim",
            BuiltinMetric::Uqi => "uqi",
            BuiltinMetric::Gmsd => "gmsd",
        }
    }

    pub fn descriptor(self) -> MetricDescriptor {
        let (polarity, native_range) = match self {
            BuiltinMetric::Psnr => (Polarity::HigherIsBetter, None),
            BuiltinMetric::Ssim | BuiltinMetric::Uqi => (Polarity::HigherIsBetter, Some((-1.0, 1.0))),
            BuiltinMetric::MsSsim => (Polarity::HigherIsBetter, Some((0.0, 1.0))),
            BuiltinMetric::Gmsd => (Polarity::LowerIsBetter, Some((0.0, 1.0))),
        };
        MetricDescriptor {
            name: self.name().to_string(),
            polarity,
            native_range,
        }
    }

    /// Native (un-negated) score.
    pub fn native(self, reference: &PixelImage, test: &PixelImage) -> Result<f64> {
        match self {
            BuiltinMetric::Psnr => psnr(reference, test),
            BuiltinMetric::Ssim => ssim(reference, test),
            BuiltinMetric::MsSsim => ms_ssim(reference, test),
            BuiltinMetric::Uqi => uqi(reference, test),
            BuiltinMetric::Gmsd => gmsd(reference, test),
        }
    }
}

impl fmt::Display for BuiltinMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psnr" => Ok(BuiltinMetric::Psnr),
            "ssim" => Ok(BuiltinMetric::Ssim),
            "ms-ssim" | "msssim" | "ms_ssim" => Ok(BuiltinMetric::MsSsim),
            "uqi" => Ok(BuiltinMetric::Uqi),
            "gmsd" => Ok(BuiltinMetric::Gmsd),
            _ => Err(Error::UnknownMetric(s.to_string())),
        }
    }
}

/// PSNR in dB over all samples; identical inputs give `f64::INFINITY`.
pub fn psnr(reference: &PixelImage, test: &PixelImage) -> Result<f64> {
    reference.ensure_same_dims(test)?;
    let sse: f64 = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / reference.data().len() as f64;
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const GMSD_C: f64 = 170.0;
/// Windows whose summed means or summed variances fall below this are
/// treated as 0/0 by [`uqi`]. Any genuine 8-bit variation inside an 11x11
/// Gaussian window exceeds it by orders of magnitude.
pub const UQI_DEGENERATE_EPS: f64 = 1e-8;

fn ssim_window() -> Vec<f64> {
    gaussian_kernel_with_radius(SSIM_SIGMA, SSIM_WINDOW / 2)
}

fn gray_pair(reference: &PixelImage, test: &PixelImage) -> Result<(Plane, Plane)> {
    reference.ensure_same_dims(test)?;
    if !reference.is_gray() {
        return Err(Error::InvalidImage("metric expects grayscale images".into()));
    }
    Ok((reference.plane(), test.plane()))
}

/// Local statistics of a pair under the SSIM window ("valid" positions).
struct LocalMoments {
    mu_x: Plane,
    mu_y: Plane,
    var_x: Plane,
    var_y: Plane,
    cov: Plane,
}

fn local_moments(x: &Plane, y: &Plane) -> LocalMoments {
    let k = ssim_window();
    let mu_x = filter_valid(x, &k);
    let mu_y = filter_valid(y, &k);
    let xx = filter_valid(&elementwise(x, x, |a, b| a * b), &k);
    let yy = filter_valid(&elementwise(y, y, |a, b| a * b), &k);
    let xy = filter_valid(&elementwise(x, y, |a, b| a * b), &k);
    let var_x = elementwise(&xx, &mu_x, |s, m| s - m * m);
    let var_y = elementwise(&yy, &mu_y, |s, m| s - m * m);
    let cov = Plane::new(
        xy.width,
        xy.height,
        (0..xy.data.len())
            .map(|i| xy.data[i] - mu_x.data[i] * mu_y.data[i])
            .collect(),
    );
    LocalMoments {
        mu_x,
        mu_y,
        var_x,
        var_y,
        cov,
    }
}

/// Mean luminance term and mean contrast-structure term, plus mean SSIM.
fn ssim_terms(x: &Plane, y: &Plane, c1: f64, c2: f64) -> (f64, f64) {
    let m = local_moments(x, y);
    let n = m.mu_x.data.len() as f64;
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..m.mu_x.data.len() {
        let (mx, my) = (m.mu_x.data[i], m.mu_y.data[i]);
        let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        let cs = (2.0 * m.cov.data[i] + c2) / (m.var_x.data[i] + m.var_y.data[i] + c2);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    (ssim_sum / n, cs_sum / n)
}

fn ensure_min_dim(p: &Plane, min: usize, what: &str) -> Result<()> {
    if p.width.min(p.height) < min {
        return Err(Error::ImageTooSmall(format!(
            "{what} needs at least {min}x{min}, got {}x{}",
            p.width, p.height
        )));
    }
    Ok(())
}

/// Mean SSIM with an 11x11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03,
/// over window positions fully inside the image.
pub fn ssim(reference: &PixelImage, test: &PixelImage) -> Result<f64> {
    let (x, y) = gray_pair(reference, test)?;
    ensure_min_dim(&x, SSIM_WINDOW, "SSIM")?;
    let c1 = (SSIM_K1 * 255.0).powi(2);
    let c2 = (SSIM_K2 * 255.0).powi(2);
    Ok(ssim_terms(&x, &y, c1, c2).0)
}

/// Five-scale MS-SSIM.
///
/// Scales 1-4 contribute their mean contrast-structure term, scale 5 its mean
/// SSIM. Between scales both images are reduced by 2x2 block averaging.
/// Per-scale terms are clamped at zero before exponentiation so the result
/// stays in `[0, 1]`.
pub fn ms_ssim(reference: &PixelImage, test: &PixelImage) -> Result<f64> {
    let (x, y) = gray_pair(reference, test)?;
    ensure_min_dim(&x, SSIM_WINDOW << 4, "MS-SSIM")?;
    Ok(ms_ssim_combine(&ms_ssim_scale_terms(x, y)))
}

/// Per-scale terms `[cs1, cs2, cs3, cs4, ssim5]` of [`ms_ssim`].
pub fn ms_ssim_terms(reference: &PixelImage, test: &PixelImage) -> Result<[f64; 5]> {
    let (x, y) = gray_pair(reference, test)?;
    ensure_min_dim(&x, SSIM_WINDOW << 4, "MS-SSIM")?;
    Ok(ms_ssim_scale_terms(x, y))
}

fn ms_ssim_scale_terms(mut x: Plane, mut y: Plane) -> [f64; 5] {
    let c1 = (SSIM_K1 * 255.0).powi(2);
    let c2 = (SSIM_K2 * 255.0).powi(2);
    let mut terms = [0.0; 5];
    for (scale, term) in terms.iter_mut().enumerate() {
        let (s, cs) = ssim_terms(&x, &y, c1, c2);
        *term = if scale == 4 { s } else { cs };
        if scale < 4 {
            x = downsample_mean2(&x);
            y = downsample_mean2(&y);
        }
    }
    terms
}

/// Weighted geometric combination of per-scale terms.
///
/// The published exponents sum to 1.0001, so equal terms `c` combine to
/// `c^1.0001` rather than exactly `c`.
pub fn ms_ssim_combine(terms: &[f64; 5]) -> f64 {
    terms
        .iter()
        .zip(MS_SSIM_WEIGHTS)
        .map(|(&t, w)| t.max(0.0).powf(w))
        .product()
}

/// Universal quality index: SSIM with `C1 = C2 = 0` under the same window.
///
/// Windows where `μx² + μy²` or `σx² + σy²` is below [`UQI_DEGENERATE_EPS`]
/// have an undefined 0/0 index and are left out of the mean.
pub fn uqi(reference: &PixelImage, test: &PixelImage) -> Result<f64> {
    let (x, y) = gray_pair(reference, test)?;
    ensure_min_dim(&x, SSIM_WINDOW, "UQI")?;
    let m = local_moments(&x, &y);
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..m.mu_x.data.len() {
        let (mx, my) = (m.mu_x.data[i], m.mu_y.data[i]);
        let mean_term = mx * mx + my * my;
        let var_term = m.var_x.data[i] + m.var_y.data[i];
        if mean_term < UQI_DEGENERATE_EPS || var_term < UQI_DEGENERATE_EPS {
            continue;
        }
        sum += (4.0 * m.cov.data[i] * mx * my) / (mean_term * var_term);
        count += 1;
    }
    if count == 0 {
        return Err(Error::AllWindowsDegenerate);
    }
    Ok(sum / count as f64)
}

/// Prewitt gradient magnitude over interior pixels.
fn gradient_magnitude(p: &Plane) -> Plane {
    let (w, h) = (p.width - 2, p.height - 2);
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for t in 0..3 {
                gx += p.at(x, y + t) - p.at(x + 2, y + t);
                gy += p.at(x + t, y) - p.at(x + t, y + 2);
            }
            gx /= 3.0;
            gy /= 3.0;
            out.data[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Gradient magnitude similarity deviation (lower is better).
///
/// Both images are 2x2-mean downsampled; the similarity map uses 3x3 Prewitt
/// gradients on interior pixels with stabilizer `c = 170`; the score is the
/// population standard deviation of that map.
pub fn gmsd(reference: &PixelImage, test: &PixelImage) -> Result<f64> {
    let (x, y) = gray_pair(reference, test)?;
    ensure_min_dim(&x, 6, "GMSD")?;
    let gx = gradient_magnitude(&downsample_mean2(&x));
    let gy = gradient_magnitude(&downsample_mean2(&y));
    let gms: Vec<f64> = gx
        .data
        .iter()
        .zip(&gy.data)
        .map(|(&a, &b)| (2.0 * a * b + GMSD_C) / (a * a + b * b + GMSD_C))
        .collect();
    let n = gms.len() as f64;
    let mean = gms.iter().sum::<f64>() / n;
    let var = gms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Identifies one ladder rung: `(content, distortion, level)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RungKey {
    pub content: String,
    pub distortion: String,
    pub level: usize,
}

impl fmt::Display for RungKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.content, self.distortion, self.level)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScoreKey {
    pub rung: RungKey,
    pub metric: String,
}

/// Externally computed scores, stored natively with declared polarity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    entries: BTreeMap<ScoreKey, f64>,
    polarity: BTreeMap<String, Polarity>,
}

pub const SCORE_CSV_HEADER: [&str; 6] = ["content", "distortion", "level", "metric", "polarity", "score"];

#[derive(Deserialize)]
struct ScoreRow {
    content: String,
    distortion: String,
    level: usize,
    metric: String,
    polarity: String,
    score: f64,
}

/// Canonical spelling for distortion names that match a built-in kind.
pub(crate) fn canonical_distortion(name: &str) -> String {
    name.parse::<DistortionKind>()
        .map(|k| k.name().to_string())
        .unwrap_or_else(|_| name.to_string())
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn metrics(&self) -> impl Iterator<Item = (&str, Polarity)> {
        self.polarity.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn polarity(&self, metric: &str) -> Option<Polarity> {
        self.polarity.get(metric).copied()
    }

    pub fn insert(&mut self, key: ScoreKey, polarity: Polarity, native: f64) -> Result<()> {
        if !native.is_finite() {
            return Err(Error::NonFiniteScore(format!("{} / {}", key.rung, key.metric)));
        }
        match self.polarity.get(&key.metric) {
            Some(&p) if p != polarity => {
                return Err(Error::Schema(format!(
                    "metric `{}` declared with conflicting polarities",
                    key.metric
                )))
            }
            Some(_) => {}
            None => {
                self.polarity.insert(key.metric.clone(), polarity);
            }
        }
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateKey(format!("{} / {}", key.rung, key.metric)));
        }
        self.entries.insert(key, native);
        Ok(())
    }

    pub fn native(&self, rung: &RungKey, metric: &str) -> Option<f64> {
        self.entries
            .get(&ScoreKey {
                rung: rung.clone(),
                metric: metric.to_string(),
            })
            .copied()
    }

    /// Polarity-normalized score.
    pub fn canonical(&self, rung: &RungKey, metric: &str) -> Result<f64> {
        let native = self
            .native(rung, metric)
            .ok_or_else(|| Error::MissingScore(format!("{rung} / {metric}")))?;
        Ok(self.polarity[metric].canonical(native))
    }

    /// Merge another table, rejecting duplicate keys.
    pub fn extend(&mut self, other: ScoreTable) -> Result<()> {
        for (key, value) in other.entries {
            let polarity = other.polarity[&key.metric];
            self.insert(key, polarity, value)?;
        }
        Ok(())
    }
}

/// Read a score CSV (`content,distortion,level,metric,polarity,score`).
pub fn ingest_scores(path: impl AsRef<Path>) -> Result<ScoreTable> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::UnreadableFile {
        path: path.as_ref().to_path_buf(),
        reason: e.to_string(),
    })?;
    ingest_scores_from_reader(file)
}

pub fn ingest_scores_from_reader(reader: impl std::io::Read) -> Result<ScoreTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?;
    if headers.iter().ne(SCORE_CSV_HEADER) {
        return Err(Error::Schema(format!(
            "expected header `{}`, got `{}`",
            SCORE_CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut table = ScoreTable::new();
    for (line, row) in rdr.deserialize::<ScoreRow>().enumerate() {
        let row = row.map_err(|e| Error::Schema(format!("row {}: {e}", line + 2)))?;
        let polarity: Polarity = row.polarity.parse()?;
        let key = ScoreKey {
            rung: RungKey {
                content: row.content,
                distortion: canonical_distortion(&row.distortion),
                level: row.level,
            },
            metric: row.metric,
        };
        table.insert(key, polarity, row.score)?;
    }
    Ok(table)
}

/// A metric usable by the pipeline.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricRef {
    Builtin(BuiltinMetric),
    External(String),
}

impl MetricRef {
    /// Resolve a name against the built-ins first, then the table.
    pub fn resolve(name: &str, table: Option<&ScoreTable>) -> Result<Self> {
        if let Ok(b) = name.parse::<BuiltinMetric>() {
            return Ok(MetricRef::Builtin(b));
        }
        match table {
            Some(t) if t.polarity(name).is_some() => Ok(MetricRef::External(name.to_string())),
            _ => Err(Error::UnknownMetric(name.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            MetricRef::Builtin(b) => b.name(),
            MetricRef::External(n) => n,
        }
    }
}

impl fmt::Display for MetricRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Canonical (higher-is-better) quality of `test` against `reference`.
///
/// Built-ins are computed; external metrics are looked up by `rung`.
pub fn measure_quality(
    metric: &MetricRef,
    reference: &PixelImage,
    test: &PixelImage,
    rung: &RungKey,
    table: Option<&ScoreTable>,
) -> Result<f64> {
    match metric {
        MetricRef::Builtin(b) => Ok(b.descriptor().polarity.canonical(b.native(reference, test)?)),
        MetricRef::External(name) => match table {
            Some(t) if t.polarity(name).is_some() => t.canonical(rung, name),
            _ => Err(Error::UnknownMetric(name.clone())),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{degrade_image, DistortionKind};
    use crate::imgio::{make_fixture, FixtureKind};

    fn natural(size: usize, seed: u64) -> PixelImage {
        make_fixture(FixtureKind::NaturalProxy, size, size, seed).unwrap()
    }

    fn offset(img: &PixelImage, delta: i16) -> PixelImage {
        let data = img
            .data()
            .iter()
            .map(|&v| (i16::from(v) + delta).clamp(0, 255) as u8)
            .collect();
        PixelImage::gray(img.width(), img.height(), data).unwrap()
    }

    #[test]
    fn psnr_reference_values() {
        let a = PixelImage::filled(8, 8, 100).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        // MSE = 1 -> 20 log10(255) = 48.1308
        let b = PixelImage::filled(8, 8, 101).unwrap();
        assert!((psnr(&a, &b).unwrap() - 48.130_803_608).abs() < 1e-8);
        let black = PixelImage::filled(8, 8, 0).unwrap();
        let white = PixelImage::filled(8, 8, 255).unwrap();
        assert_eq!(psnr(&black, &white).unwrap(), 0.0);
        let small = PixelImage::filled(4, 8, 0).unwrap();
        assert!(matches!(psnr(&black, &small), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn ideal_values_on_identical_inputs() {
        let img = natural(256, 1);
        assert_eq!(ssim(&img, &img).unwrap(), 1.0);
        assert!((ms_ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
        assert!((uqi(&img, &img).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(gmsd(&img, &img).unwrap(), 0.0);
    }

    #[test]
    fn ssim_orders_inversion_below_mild_noise() {
        let img = natural(64, 2);
        let inverted = PixelImage::gray(64, 64, img.data().iter().map(|&v| 255 - v).collect()).unwrap();
        let noisy = degrade_image(
            &img,
            &DistortionKind::WhiteGaussianNoise.with_default_schedule(),
            5,
            100,
            1,
        )
        .unwrap();
        assert!(ssim(&img, &inverted).unwrap() < ssim(&img, &noisy).unwrap());
    }

    #[test]
    fn size_preconditions() {
        let small = PixelImage::filled(10, 40, 3).unwrap();
        assert!(matches!(ssim(&small, &small), Err(Error::ImageTooSmall(_))));
        let mid = natural(128, 1);
        assert!(matches!(ms_ssim(&mid, &mid), Err(Error::ImageTooSmall(_))));
        let ok = natural(176, 1);
        assert!(ms_ssim(&ok, &ok).is_ok());
    }

    #[test]
    fn ms_ssim_combination_of_equal_terms() {
        let total: f64 = MS_SSIM_WEIGHTS.iter().sum();
        for c in [0.2, 0.5, 0.9, 1.0] {
            let combined = ms_ssim_combine(&[c; 5]);
            assert!((combined - c.powf(total)).abs() < 1e-14);
            assert!((combined - c).abs() < 2e-4);
        }
    }

    #[test]
    fn uqi_degenerate_and_identity() {
        let a = PixelImage::filled(32, 32, 90).unwrap();
        let b = PixelImage::filled(32, 32, 200).unwrap();
        assert!(matches!(uqi(&a, &b), Err(Error::AllWindowsDegenerate)));
        let img = make_fixture(FixtureKind::Checkerboard, 64, 64, 0).unwrap();
        assert!((uqi(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gmsd_polarity_reverses_ordering() {
        let img = natural(64, 3);
        let mild = offset(&img, 0);
        let d = DistortionKind::WhiteGaussianNoise.with_default_schedule();
        let light = degrade_image(&mild, &d, 5, 100, 1).unwrap();
        let heavy = degrade_image(&mild, &d, 60, 100, 1).unwrap();
        let rung = RungKey {
            content: "x".into(),
            distortion: "wn".into(),
            level: 1,
        };
        let m = MetricRef::Builtin(BuiltinMetric::Gmsd);
        let native_light = gmsd(&img, &light).unwrap();
        let native_heavy = gmsd(&img, &heavy).unwrap();
        assert!(native_light < native_heavy);
        let canon_light = measure_quality(&m, &img, &light, &rung, None).unwrap();
        let canon_heavy = measure_quality(&m, &img, &heavy, &rung, None).unwrap();
        assert_eq!(canon_light, -native_light);
        assert!(canon_light > canon_heavy);
    }

    #[test]
    fn symmetric_metrics() {
        let a = natural(64, 4);
        let b = degrade_image(&a, &DistortionKind::GaussianBlur.with_default_schedule(), 10, 100, 0).unwrap();
        for m in [
            BuiltinMetric::Psnr,
            BuiltinMetric::Ssim,
            BuiltinMetric::Uqi,
            BuiltinMetric::Gmsd,
        ] {
            let ab = m.native(&a, &b).unwrap();
            let ba = m.native(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12, "{m}: {ab} vs {ba}");
        }
    }

    #[test]
    fn ingest_header_only_and_duplicates() {
        let empty = ingest_scores_from_reader("content,distortion,level,metric,polarity,score\n".as_bytes()).unwrap();
        assert!(empty.is_empty());

        let dup = "content,distortion,level,metric,polarity,score\n\
                   a,wn,1,vif,higher,0.9\n\
                   a,white-gaussian-noise,1,vif,higher,0.8\n";
        assert!(matches!(
            ingest_scores_from_reader(dup.as_bytes()),
            Err(Error::DuplicateKey(_))
        ));

        let bad_header = "content,level,metric,score\n";
        assert!(matches!(
            ingest_scores_from_reader(bad_header.as_bytes()),
            Err(Error::Schema(_))
        ));

        let nan = "content,distortion,level,metric,polarity,score\na,wn,1,vif,higher,NaN\n";
        assert!(matches!(
            ingest_scores_from_reader(nan.as_bytes()),
            Err(Error::NonFiniteScore(_))
        ));

        let bad_polarity = "content,distortion,level,metric,polarity,score\na,wn,1,vif,up,1\n";
        assert!(matches!(
            ingest_scores_from_reader(bad_polarity.as_bytes()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn ingested_three_rung_ladder_is_queryable() {
        let csv = "content,distortion,level,metric,polarity,score\n\
                   lena,gb,1,mad,lower,10.5\n\
                   lena,gb,2,mad,lower,20.25\n\
                   lena,gb,3,mad,lower,41\n";
        let table = ingest_scores_from_reader(csv.as_bytes()).unwrap();
        assert_eq!(table.len(), 3);
        let rung = |level| RungKey {
            content: "lena".into(),
            distortion: "gaussian-blur".into(),
            level,
        };
        assert_eq!(table.native(&rung(2), "mad"), Some(20.25));
        assert_eq!(table.canonical(&rung(3), "mad").unwrap(), -41.0);
        assert!(matches!(table.canonical(&rung(4), "mad"), Err(Error::MissingScore(_))));

        let img = PixelImage::filled(16, 16, 0).unwrap();
        let mad = MetricRef::resolve("mad", Some(&table)).unwrap();
        assert_eq!(
            measure_quality(&mad, &img, &img, &rung(1), Some(&table)).unwrap(),
            -10.5
        );
        assert!(matches!(
            MetricRef::resolve("vif", Some(&table)),
            Err(Error::UnknownMetric(_))
        ));
    }
}
