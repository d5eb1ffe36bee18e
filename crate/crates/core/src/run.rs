//! Batch runs: configuration, ladders, scores, intervals and reports.
//!
//! A run is described by one TOML file with the sections `contents`,
//! `distortions`, `metrics`, `display`, `vdp` and `run`. Every section and
//! key is optional; [`RunConfig::default`] is a desk-scale experiment with
//! three synthetic contents, 50-rung ladders and viewing distances of 2, 4
//! and 6 picture heights.
//!
//! Output layout under the output directory:
//!
//! ```text
//! run.toml                              effective configuration
//! ladders/manifest.csv                  content,kind,level,file,seed
//! ladders/<content>/<kind>/<level>.pgm
//! d<distance>/intervals/<metric>_<distortion>.csv
//! d<distance>/summary.csv               pooled widths
//! d<distance>/summary_sides.csv         lower and upper widths separately
//! d<distance>/benchmark/...             accuracy.csv, width_tests.csv, *.svg
//! cache/pairs-<key>.csv                 memoized VDP pixel counts
//! ```
//!
//! Each report file has a `<file>.meta.toml` sidecar with the tool version,
//! the configuration digest and the file digest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ambiguity::{normalize_widths, summarize_widths, AmbiguityInterval, ScoreRange, VdpOracle};
use crate::degrade::{
    build_ladder, csv_err, export_ladder, write_manifest, Distortion, DistortionKind, DistortionLadder, ManifestRow,
    DEFAULT_BLUR_SIGMA_STEP, DEFAULT_DCT_SCALE_STEP, DEFAULT_NOISE_SIGMA_STEP, DEFAULT_POISSON_LAMBDA0, NOMINAL_LEVELS,
};
use crate::display::{display_model, ViewingConditions};
use crate::error::{Error, Result};
use crate::imgio::{load_image, make_fixture, save_png, to_grayscale, ContentId, FixtureKind, PixelImage};
use crate::metrics::{ingest_scores, measure_quality, MetricRef, RungKey, ScoreTable};
use crate::stats::{accuracy_svg, benchmark, ingest_subjective, BenchmarkReport, MetricSample};
use crate::vdp::{vdp, VdpModel, VdpParameters};

pub const TOOL_NAME: &str = "iqa-ambiguity";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl FixtureSpec {
    pub fn content_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("{}-{}", self.kind.name(), self.seed))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentsConfig {
    /// Side length of generated fixtures.
    pub size: usize,
    pub fixtures: Vec<FixtureSpec>,
    /// Image files (PGM or PNG); RGB is converted to luma.
    pub images: Vec<PathBuf>,
}

impl Default for ContentsConfig {
    fn default() -> Self {
        Self {
            size: 256,
            fixtures: (1..=3)
                .map(|seed| FixtureSpec {
                    kind: FixtureKind::NaturalProxy,
                    seed,
                    name: None,
                })
                .collect(),
            images: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionsConfig {
    pub kinds: Vec<String>,
    pub levels: usize,
    pub seed: u64,
    pub blur_sigma_step: f64,
    pub noise_sigma_step: f64,
    pub poisson_lambda0: f64,
    pub dct_scale_step: f64,
}

impl Default for DistortionsConfig {
    fn default() -> Self {
        Self {
            kinds: DistortionKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            levels: 50,
            seed: 1,
            blur_sigma_step: DEFAULT_BLUR_SIGMA_STEP,
            noise_sigma_step: DEFAULT_NOISE_SIGMA_STEP,
            poisson_lambda0: DEFAULT_POISSON_LAMBDA0,
            dct_scale_step: DEFAULT_DCT_SCALE_STEP,
        }
    }
}

impl DistortionsConfig {
    pub fn distortions(&self) -> Result<Vec<Distortion>> {
        self.kinds
            .iter()
            .map(|name| {
                let d = match name.parse::<DistortionKind>()? {
                    DistortionKind::GaussianBlur => Distortion::GaussianBlur {
                        sigma_step: self.blur_sigma_step,
                    },
                    DistortionKind::WhiteGaussianNoise => Distortion::WhiteGaussianNoise {
                        sigma_step: self.noise_sigma_step,
                    },
                    DistortionKind::PoissonNoise => Distortion::PoissonNoise {
                        lambda0: self.poisson_lambda0,
                    },
                    DistortionKind::BlockDctQuantization => Distortion::BlockDctQuantization {
                        scale_step: self.dct_scale_step,
                    },
                };
                d.validate()?;
                Ok(d)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Built-in metric names or metrics defined by `score_files`.
    pub names: Vec<String>,
    /// Score CSVs: `content,distortion,level,metric,polarity,score`.
    pub score_files: Vec<PathBuf>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            names: ["psnr", "ssim", "ms-ssim", "uqi", "gmsd"].map(String::from).to_vec(),
            score_files: Vec::new(),
        }
    }
}

/// Display photometry shared by all viewing distances of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisplayConfig {
    pub display_height: f64,
    pub vertical_resolution: u32,
    pub peak_luminance: f64,
    pub black_level: f64,
    pub gamma: f64,
    /// Viewing distances as multiples of the display height.
    pub distances: Vec<f64>,
}

impl Default for DisplayConfig {
    fn default() -> Self {
        let vc = ViewingConditions::default();
        Self {
            display_height: vc.display_height,
            vertical_resolution: vc.vertical_resolution,
            peak_luminance: vc.peak_luminance,
            black_level: vc.black_level,
            gamma: vc.gamma,
            distances: vec![2.0, 4.0, 6.0],
        }
    }
}

impl DisplayConfig {
    pub fn conditions(&self, distance: f64) -> ViewingConditions {
        ViewingConditions {
            display_height: self.display_height,
            vertical_resolution: self.vertical_resolution,
            peak_luminance: self.peak_luminance,
            black_level: self.black_level,
            gamma: self.gamma,
            distance_multiple: distance,
        }
    }
}

/// Which scores define the range widths are normalized by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationScope {
    /// All rungs of all ladders of the run, per metric.
    #[default]
    Metric,
    /// All rungs of the ladders of one distortion, per metric.
    MetricDistortion,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LadderFormat {
    #[default]
    Pgm,
    Png,
}

impl LadderFormat {
    pub fn extension(self) -> &'static str {
        match self {
            LadderFormat::Pgm => "pgm",
            LadderFormat::Png => "png",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Fraction of pixels that must be visibly different.
    pub k: f64,
    pub alpha: f64,
    pub normalization: NormalizationScope,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subjective: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    pub ladder_format: LadderFormat,
    /// Persist VDP pixel counts under `cache/` and reuse them.
    pub cache: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            k: 0.01,
            alpha: crate::stats::DEFAULT_ALPHA,
            normalization: NormalizationScope::Metric,
            subjective: None,
            jobs: None,
            ladder_format: LadderFormat::Pgm,
            cache: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub contents: ContentsConfig,
    pub distortions: DistortionsConfig,
    pub metrics: MetricsConfig,
    pub display: DisplayConfig,
    pub vdp: VdpParameters,
    pub run: RunSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::UnreadableFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    /// SHA-256 of the effective configuration.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn conditions(&self) -> Vec<ViewingConditions> {
        self.display
            .distances
            .iter()
            .map(|&d| self.display.conditions(d))
            .collect()
    }

    /// Check everything that can be checked without running the pipeline.
    pub fn validate(&self) -> Result<()> {
        let c = &self.contents;
        if c.fixtures.is_empty() && c.images.is_empty() {
            return Err(Error::Config("at least one content is required".into()));
        }
        if !c.fixtures.is_empty() && c.size < 32 {
            return Err(Error::Config(format!(
                "fixture size must be at least 32, got {}",
                c.size
            )));
        }
        for p in &c.images {
            let path = self.resolve(p);
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "content image {} does not exist",
                    path.display()
                )));
            }
        }
        let mut names: Vec<String> = c.fixtures.iter().map(FixtureSpec::content_name).collect();
        names.extend(c.images.iter().map(|p| image_content_name(p)));
        let mut sorted = names.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate content name `{}`", w[0])));
        }
        if self.distortions.kinds.is_empty() {
            return Err(Error::Config("at least one distortion is required".into()));
        }
        let distortions = self.distortions.distortions()?;
        let mut kinds: Vec<DistortionKind> = distortions.iter().map(Distortion::kind).collect();
        kinds.sort();
        if kinds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate distortion kind".into()));
        }
        if let Some(sigma) = distortions.iter().find_map(|d| match d {
            Distortion::GaussianBlur { sigma_step } => Some(sigma_step * NOMINAL_LEVELS),
            _ => None,
        }) {
            // the last rung's kernel of radius ceil(3 sigma) must fit every content
            let taps = 2 * (3.0 * sigma).ceil() as usize + 1;
            let mut sides: Vec<(String, usize)> = c.fixtures.iter().map(|f| (f.content_name(), c.size)).collect();
            for p in &c.images {
                let img = load_image(self.resolve(p))?;
                sides.push((image_content_name(p), img.width().min(img.height())));
            }
            if let Some((name, side)) = sides.into_iter().find(|(_, side)| *side < taps) {
                return Err(Error::Config(format!(
                    "content `{name}` is {side} px on its short side; the strongest blur needs {taps}"
                )));
            }
        }
        if self.distortions.levels < 2 {
            return Err(Error::Config(format!(
                "ladders need at least 2 levels, got {}",
                self.distortions.levels
            )));
        }
        if self.metrics.names.is_empty() {
            return Err(Error::Config("at least one metric is required".into()));
        }
        for p in &self.metrics.score_files {
            let path = self.resolve(p);
            if !path.is_file() {
                return Err(Error::Config(format!("score file {} does not exist", path.display())));
            }
        }
        let table = self.load_score_table()?;
        self.resolve_metrics(table.as_ref())?;
        if self.display.distances.is_empty() {
            return Err(Error::Config("at least one viewing distance is required".into()));
        }
        for vc in self.conditions() {
            vc.validate()?;
        }
        self.vdp.validate()?;
        if !(0.0..=1.0).contains(&self.run.k) {
            return Err(Error::Config(format!("k must be in [0, 1], got {}", self.run.k)));
        }
        if !(self.run.alpha > 0.0 && self.run.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must be in (0, 1), got {}",
                self.run.alpha
            )));
        }
        if let Some(p) = &self.run.subjective {
            let path = self.resolve(p);
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "subjective file {} does not exist",
                    path.display()
                )));
            }
        }
        if self.run.jobs == Some(0) {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn load_score_table(&self) -> Result<Option<ScoreTable>> {
        if self.metrics.score_files.is_empty() {
            return Ok(None);
        }
        let mut table = ScoreTable::new();
        for p in &self.metrics.score_files {
            table.extend(ingest_scores(self.resolve(p))?)?;
        }
        Ok(Some(table))
    }

    pub fn resolve_metrics(&self, table: Option<&ScoreTable>) -> Result<Vec<MetricRef>> {
        let mut out: Vec<MetricRef> = Vec::new();
        for name in &self.metrics.names {
            let m = MetricRef::resolve(name, table)?;
            if out.contains(&m) {
                return Err(Error::Config(format!("metric `{name}` listed twice")));
            }
            out.push(m);
        }
        Ok(out)
    }
}

fn image_content_name(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

/// A source image with its identity.
#[derive(Clone, Debug)]
pub struct Content {
    pub id: ContentId,
    pub image: PixelImage,
}

/// Fixtures first, then image files, each in configuration order.
pub fn load_contents(cfg: &RunConfig) -> Result<Vec<Content>> {
    let c = &cfg.contents;
    let mut out = Vec::new();
    for f in &c.fixtures {
        let image = make_fixture(f.kind, c.size, c.size, f.seed)?;
        out.push(Content {
            id: ContentId::new(f.content_name(), &image),
            image,
        });
    }
    for p in &c.images {
        let mut image = load_image(cfg.resolve(p))?;
        if !image.is_gray() {
            image = to_grayscale(&image);
        }
        out.push(Content {
            id: ContentId::new(image_content_name(p), &image),
            image,
        });
    }
    Ok(out)
}

/// Per-ladder seed: distinct for every (content, kind) of a run.
pub fn ladder_seed(base: u64, content_index: usize, kind: DistortionKind) -> u64 {
    let kind_index = DistortionKind::ALL.iter().position(|&k| k == kind).unwrap_or(0) as u64;
    base.wrapping_add(1000 * content_index as u64 + kind_index)
}

/// Ladders in (content, distortion) configuration order.
pub fn build_ladders(cfg: &RunConfig, contents: &[Content]) -> Result<Vec<DistortionLadder>> {
    let distortions = cfg.distortions.distortions()?;
    let mut out = Vec::with_capacity(contents.len() * distortions.len());
    for (ci, content) in contents.iter().enumerate() {
        for d in &distortions {
            let seed = ladder_seed(cfg.distortions.seed, ci, d.kind());
            info!("building ladder {} / {}", content.id.name, d);
            out.push(build_ladder(
                content.id.clone(),
                &content.image,
                d,
                cfg.distortions.levels,
                seed,
            )?);
        }
    }
    Ok(out)
}

/// Canonical per-rung scores of every metric for one ladder.
pub type LadderScores = BTreeMap<String, Vec<f64>>;

pub fn score_ladder(
    ladder: &DistortionLadder,
    metrics: &[MetricRef],
    table: Option<&ScoreTable>,
) -> Result<LadderScores> {
    use rayon::prelude::*;
    let mut out = LadderScores::new();
    for m in metrics {
        let scores = ladder
            .images()
            .par_iter()
            .enumerate()
            .map(|(i, img)| {
                let rung = RungKey {
                    content: ladder.content.name.clone(),
                    distortion: ladder.distortion.kind().name().to_string(),
                    level: i + 1,
                };
                measure_quality(m, &ladder.source, img, &rung, table)
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(m.name().to_string(), scores);
    }
    Ok(out)
}

/// One row of an interval CSV; widths in canonical metric units.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalRow {
    pub content: String,
    pub distortion: String,
    pub metric: String,
    pub level: usize,
    pub score: f64,
    pub lower_width: f64,
    pub upper_width: f64,
    pub lower_censored: bool,
    pub upper_censored: bool,
}

/// Pooled normalized widths of one (metric, distortion).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub metric: String,
    pub distortion: String,
    pub mean: Option<f64>,
    pub max: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
    pub range_min: f64,
    pub range_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SideSummaryRow {
    pub metric: String,
    pub distortion: String,
    pub side: &'static str,
    pub mean: Option<f64>,
    pub max: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceResult {
    pub distance: f64,
    /// Sorted by metric, distortion, content, level.
    pub intervals: Vec<IntervalRow>,
    /// Sorted by metric, distortion.
    pub summaries: Vec<SummaryRow>,
    pub sides: Vec<SideSummaryRow>,
}

impl DistanceResult {
    pub fn summary(&self, metric: &str, distortion: &str) -> Option<&SummaryRow> {
        self.summaries
            .iter()
            .find(|s| s.metric == metric && s.distortion == distortion)
    }

    /// Normalized, uncensored, finite widths of one (metric, distortion).
    pub fn normalized_widths(&self, metric: &str, distortion: &str) -> Vec<f64> {
        let Some(s) = self.summary(metric, distortion) else {
            return Vec::new();
        };
        let span = s.range_max - s.range_min;
        self.intervals
            .iter()
            .filter(|r| r.metric == metric && r.distortion == distortion)
            .flat_map(|r| [(r.lower_width, r.lower_censored), (r.upper_width, r.upper_censored)])
            .filter(|&(w, c)| !c && w.is_finite())
            .map(|(w, _)| w / span)
            .collect()
    }
}

fn cache_key(ladder: &DistortionLadder, vc: &ViewingConditions, params: &VdpParameters) -> String {
    let mut h = Sha256::new();
    h.update(ladder.content.digest.as_bytes());
    h.update(format!("|{:?}|{}|{}|", ladder.distortion, ladder.levels(), ladder.seed).as_bytes());
    h.update(toml::to_string(vc).expect("serializable").as_bytes());
    h.update(toml::to_string(params).expect("serializable").as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

fn read_pair_cache(path: &Path) -> Result<Vec<(usize, usize, usize)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Schema(format!("{}: {e}", path.display()))))
        .collect()
}

fn write_pair_cache(path: &Path, counts: &[(usize, usize, usize)]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp).map_err(csv_err)?;
        w.write_record(["i", "j", "count"]).map_err(csv_err)?;
        for (i, j, c) in counts {
            w.write_record([i.to_string(), j.to_string(), c.to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// Raw intervals for every ladder, metric and viewing distance.
///
/// Indexed as `[distance][ladder]`, each a map from metric to intervals.
pub type RawIntervals = Vec<Vec<BTreeMap<String, Vec<AmbiguityInterval>>>>;

/// Run the interval scans. Ladders are processed one at a time so only one
/// ladder's decomposed rungs are held in memory.
pub fn scan_ladders(
    cfg: &RunConfig,
    ladders: &[DistortionLadder],
    scores: &[LadderScores],
    cache_dir: Option<&Path>,
) -> Result<RawIntervals> {
    if let Some(dir) = cache_dir {
        fs::create_dir_all(dir)?;
    }
    let mut out: RawIntervals = vec![Vec::with_capacity(ladders.len()); cfg.display.distances.len()];
    for (li, ladder) in ladders.iter().enumerate() {
        for (di, vc) in cfg.conditions().iter().enumerate() {
            let model = VdpModel::new(*vc, cfg.vdp)?;
            let oracle = VdpOracle::new(model, ladder)?;
            let cache_file = cache_dir.map(|d| d.join(format!("pairs-{}.csv", cache_key(ladder, vc, &cfg.vdp))));
            if let Some(path) = cache_file.as_ref().filter(|p| p.is_file()) {
                match read_pair_cache(path) {
                    Ok(counts) => oracle.preload(counts)?,
                    Err(e) => warn!("ignoring unreadable cache {}: {e}", path.display()),
                }
            }
            let mut per_metric = BTreeMap::new();
            for (metric, s) in &scores[li] {
                per_metric.insert(metric.clone(), oracle.intervals(s, cfg.run.k)?);
            }
            if let Some(path) = &cache_file {
                write_pair_cache(path, &oracle.known_counts())?;
            }
            info!(
                "intervals {} / {} at {}H done ({}/{})",
                ladder.content.name,
                ladder.distortion,
                vc.distance_multiple,
                li + 1,
                ladders.len()
            );
            out[di].push(per_metric);
        }
    }
    Ok(out)
}

fn score_range<'a>(
    cfg: &RunConfig,
    ladders: &'a [DistortionLadder],
    scores: &'a [LadderScores],
    metric: &str,
    kind: DistortionKind,
) -> Result<ScoreRange> {
    let values = ladders.iter().zip(scores).filter(|(l, _)| match cfg.run.normalization {
        NormalizationScope::Metric => true,
        NormalizationScope::MetricDistortion => l.distortion.kind() == kind,
    });
    ScoreRange::from_scores(values.flat_map(|(_, s)| s[metric].iter().copied()))
}

/// Normalize and summarize raw intervals into report rows.
pub fn assemble(
    cfg: &RunConfig,
    ladders: &[DistortionLadder],
    scores: &[LadderScores],
    raw: &RawIntervals,
) -> Result<Vec<DistanceResult>> {
    let mut results = Vec::with_capacity(raw.len());
    for (di, per_ladder) in raw.iter().enumerate() {
        let mut intervals = Vec::new();
        let mut summaries = Vec::new();
        let mut sides = Vec::new();
        let mut keys: Vec<(String, DistortionKind)> = Vec::new();
        for (li, ladder) in ladders.iter().enumerate() {
            for metric in per_ladder[li].keys() {
                keys.push((metric.clone(), ladder.distortion.kind()));
            }
        }
        keys.sort();
        keys.dedup();
        for (metric, kind) in keys {
            let range = score_range(cfg, ladders, scores, &metric, kind)?;
            let mut normalized = Vec::new();
            for (li, ladder) in ladders.iter().enumerate() {
                if ladder.distortion.kind() != kind {
                    continue;
                }
                let ivs = &per_ladder[li][&metric];
                for iv in ivs {
                    intervals.push(IntervalRow {
                        content: ladder.content.name.clone(),
                        distortion: kind.name().to_string(),
                        metric: metric.clone(),
                        level: iv.level,
                        score: iv.score,
                        lower_width: iv.lower_width,
                        upper_width: iv.upper_width,
                        lower_censored: iv.lower_censored,
                        upper_censored: iv.upper_censored,
                    });
                }
                normalized.extend(normalize_widths(ivs, range)?);
            }
            let lower: Vec<(f64, bool)> = normalized
                .iter()
                .map(|iv| (iv.lower_width, iv.lower_censored))
                .collect();
            let upper: Vec<(f64, bool)> = normalized
                .iter()
                .map(|iv| (iv.upper_width, iv.upper_censored))
                .collect();
            let pooled = summarize_widths(lower.iter().chain(&upper).copied());
            if pooled.is_err() {
                warn!("{metric} / {kind}: every width is censored");
            }
            let stats = pooled.as_ref().ok();
            summaries.push(SummaryRow {
                metric: metric.clone(),
                distortion: kind.name().to_string(),
                mean: stats.map(|s| s.mean),
                max: stats.map(|s| s.max),
                std: stats.map(|s| s.std),
                n: stats.map_or(0, |s| s.n),
                range_min: range.min,
                range_max: range.max,
            });
            for (side, widths) in [("lower", lower), ("upper", upper)] {
                let s = summarize_widths(widths).ok();
                sides.push(SideSummaryRow {
                    metric: metric.clone(),
                    distortion: kind.name().to_string(),
                    side,
                    mean: s.map(|s| s.mean),
                    max: s.map(|s| s.max),
                    std: s.map(|s| s.std),
                    n: s.map_or(0, |s| s.n),
                });
            }
        }
        intervals.sort_by(|a, b| {
            (&a.metric, &a.distortion, &a.content, a.level).cmp(&(&b.metric, &b.distortion, &b.content, b.level))
        });
        results.push(DistanceResult {
            distance: cfg.display.distances[di],
            intervals,
            summaries,
            sides,
        });
    }
    Ok(results)
}

/// Everything computed by an intervals run.
pub struct Experiment {
    pub contents: Vec<Content>,
    pub ladders: Vec<DistortionLadder>,
    pub scores: Vec<LadderScores>,
    pub raw: RawIntervals,
    pub results: Vec<DistanceResult>,
}

/// Ladders, scores and intervals for a validated configuration.
pub fn run_experiment(cfg: &RunConfig, cache_dir: Option<&Path>) -> Result<Experiment> {
    cfg.validate()?;
    let table = cfg.load_score_table()?;
    let metrics = cfg.resolve_metrics(table.as_ref())?;
    let contents = load_contents(cfg)?;
    let ladders = build_ladders(cfg, &contents)?;
    let scores = ladders
        .iter()
        .map(|l| score_ladder(l, &metrics, table.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let raw = scan_ladders(cfg, &ladders, &scores, cache_dir)?;
    let results = assemble(cfg, &ladders, &scores, &raw)?;
    Ok(Experiment {
        contents,
        ladders,
        scores,
        raw,
        results,
    })
}

/// Shortest `%g`-style rendering with 9 significant digits.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

/// Write `<path>.meta.toml` next to an output file.
pub fn write_sidecar(path: &Path, config_digest: &str) -> Result<()> {
    #[derive(Serialize)]
    struct Meta<'a> {
        tool: &'a str,
        version: &'a str,
        config_sha256: &'a str,
        file: String,
        file_sha256: String,
    }
    let bytes = fs::read(path)?;
    let meta = Meta {
        tool: TOOL_NAME,
        version: TOOL_VERSION,
        config_sha256: config_digest,
        file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        file_sha256: hex::encode(Sha256::digest(&bytes)),
    };
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.toml");
    fs::write(PathBuf::from(name), toml::to_string(&meta).expect("serializable"))?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>, digest: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
    }
    write_sidecar(path, digest)
}

fn write_text(path: &Path, text: &str, digest: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    write_sidecar(path, digest)
}

pub const INTERVAL_CSV_HEADER: [&str; 9] = [
    "content",
    "distortion",
    "metric",
    "level",
    "score",
    "lower_width",
    "upper_width",
    "lower_censored",
    "upper_censored",
];

pub const SUMMARY_CSV_HEADER: [&str; 8] = [
    "metric",
    "distortion",
    "mean",
    "max",
    "std",
    "n",
    "range_min",
    "range_max",
];

/// Directory name of one viewing distance, e.g. `d4` or `d1.5`.
pub fn distance_dir(distance: f64) -> String {
    format!("d{}", format_float(distance))
}

fn write_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_text(&out.join("run.toml"), &cfg.to_toml(), &cfg.digest())
}

/// Generate and export every ladder of the run.
pub fn cmd_ladder(cfg: &RunConfig, out: &Path) -> Result<Vec<ManifestRow>> {
    cfg.validate()?;
    let contents = load_contents(cfg)?;
    let ladders = build_ladders(cfg, &contents)?;
    fs::create_dir_all(out)?;
    write_config(cfg, out)?;
    let dir = out.join("ladders");
    let mut rows = Vec::new();
    for ladder in &ladders {
        rows.extend(export_ladder(ladder, &dir, cfg.run.ladder_format.extension())?);
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&rows, &manifest)?;
    write_sidecar(&manifest, &cfg.digest())?;
    info!("wrote {} rungs to {}", rows.len(), dir.display());
    Ok(rows)
}

/// Interval and summary CSVs for every viewing distance.
pub fn cmd_intervals(cfg: &RunConfig, out: &Path) -> Result<Vec<DistanceResult>> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let cache = cfg.run.cache.then(|| out.join("cache"));
    let exp = run_experiment(cfg, cache.as_deref())?;
    write_config(cfg, out)?;
    let digest = cfg.digest();
    for result in &exp.results {
        write_distance(out, result, &digest)?;
    }
    Ok(exp.results)
}

fn write_distance(out: &Path, result: &DistanceResult, digest: &str) -> Result<()> {
    let dir = out.join(distance_dir(result.distance));
    let mut groups: BTreeMap<(&str, &str), Vec<&IntervalRow>> = BTreeMap::new();
    for r in &result.intervals {
        groups.entry((&r.metric, &r.distortion)).or_default().push(r);
    }
    for ((metric, distortion), rows) in groups {
        let path = dir.join("intervals").join(format!("{metric}_{distortion}.csv"));
        let records = rows.into_iter().map(|r| {
            vec![
                r.content.clone(),
                r.distortion.clone(),
                r.metric.clone(),
                r.level.to_string(),
                format_float(r.score),
                format_float(r.lower_width),
                format_float(r.upper_width),
                r.lower_censored.to_string(),
                r.upper_censored.to_string(),
            ]
        });
        write_csv(&path, &INTERVAL_CSV_HEADER, records, digest)?;
    }
    let summary = result.summaries.iter().map(|s| {
        vec![
            s.metric.clone(),
            s.distortion.clone(),
            opt(s.mean),
            opt(s.max),
            opt(s.std),
            s.n.to_string(),
            format_float(s.range_min),
            format_float(s.range_max),
        ]
    });
    write_csv(&dir.join("summary.csv"), &SUMMARY_CSV_HEADER, summary, digest)?;
    let sides = result.sides.iter().map(|s| {
        vec![
            s.metric.clone(),
            s.distortion.clone(),
            s.side.to_string(),
            opt(s.mean),
            opt(s.max),
            opt(s.std),
            s.n.to_string(),
        ]
    });
    write_csv(
        &dir.join("summary_sides.csv"),
        &["metric", "distortion", "side", "mean", "max", "std", "n"],
        sides,
        digest,
    )
}

/// Distortion label for the group pooling every distortion.
pub const ALL_DISTORTIONS: &str = "all";

/// Benchmark samples of one viewing distance.
///
/// Only rungs with a subjective rating take part in the accuracy measures;
/// widths come from every rung.
pub fn benchmark_samples(
    exp: &Experiment,
    result: &DistanceResult,
    subjective: &crate::stats::SubjectiveScores,
) -> Result<Vec<MetricSample>> {
    let mut rated: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut known = std::collections::BTreeSet::new();
    for (ladder, scores) in exp.ladders.iter().zip(&exp.scores) {
        for (metric, values) in scores {
            for (i, &q) in values.iter().enumerate() {
                let key = RungKey {
                    content: ladder.content.name.clone(),
                    distortion: ladder.distortion.kind().name().to_string(),
                    level: i + 1,
                };
                known.insert(key.clone());
                let Some(&s) = subjective.get(&key) else { continue };
                if !q.is_finite() {
                    continue;
                }
                for group in [key.distortion.clone(), ALL_DISTORTIONS.to_string()] {
                    let e = rated.entry((metric.clone(), group)).or_default();
                    e.0.push(q);
                    e.1.push(s);
                }
            }
        }
    }
    let missing: Vec<String> = subjective
        .keys()
        .filter(|k| !known.contains(*k))
        .take(5)
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingScore(format!(
            "subjective ratings for stimuli outside the run, e.g. {}",
            missing.join(", ")
        )));
    }
    let mut samples = Vec::new();
    for ((metric, distortion), (objective, subjective)) in rated {
        let widths = if distortion == ALL_DISTORTIONS {
            let mut kinds: Vec<&str> = result.summaries.iter().map(|s| s.distortion.as_str()).collect();
            kinds.dedup();
            kinds
                .into_iter()
                .flat_map(|d| result.normalized_widths(&metric, d))
                .collect()
        } else {
            result.normalized_widths(&metric, &distortion)
        };
        samples.push(MetricSample {
            metric,
            distortion,
            objective,
            subjective,
            widths,
        });
    }
    Ok(samples)
}

/// Accuracy and ambiguity report per viewing distance.
pub fn cmd_benchmark(cfg: &RunConfig, subjective: Option<&Path>, out: &Path) -> Result<Vec<(f64, BenchmarkReport)>> {
    cfg.validate()?;
    let subjective_path = match (subjective, &cfg.run.subjective) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => cfg.resolve(p),
        (None, None) => return Err(Error::Config("benchmark needs subjective scores".into())),
    };
    if !subjective_path.is_file() {
        return Err(Error::Config(format!(
            "subjective file {} does not exist",
            subjective_path.display()
        )));
    }
    let ratings = ingest_subjective(&subjective_path)?;
    fs::create_dir_all(out)?;
    let cache = cfg.run.cache.then(|| out.join("cache"));
    let exp = run_experiment(cfg, cache.as_deref())?;
    write_config(cfg, out)?;
    let digest = cfg.digest();
    let mut reports = Vec::new();
    for result in &exp.results {
        write_distance(out, result, &digest)?;
        let samples = benchmark_samples(&exp, result, &ratings)?;
        let report = benchmark(&samples, cfg.run.alpha)?;
        write_report(
            &out.join(distance_dir(result.distance)).join("benchmark"),
            &report,
            &digest,
        )?;
        reports.push((result.distance, report));
    }
    Ok(reports)
}

fn write_report(dir: &Path, report: &BenchmarkReport, digest: &str) -> Result<()> {
    let accuracy = report.accuracy.iter().map(|r| {
        vec![
            r.distortion.clone(),
            r.metric.clone(),
            r.n.to_string(),
            format_float(r.plcc),
            format_float(r.srocc),
            format_float(r.rmse),
            format_float(r.fit.beta[0]),
            format_float(r.fit.beta[1]),
            format_float(r.fit.beta[2]),
            format_float(r.fit.beta[3]),
            r.fit.converged.to_string(),
            format_float(r.versus_best.statistic),
            format_float(r.versus_best.p_value),
            r.top_group.to_string(),
            opt(r.mean_width),
            opt(r.max_width),
            opt(r.std_width),
        ]
    });
    write_csv(
        &dir.join("accuracy.csv"),
        &[
            "distortion",
            "metric",
            "n",
            "plcc",
            "srocc",
            "rmse",
            "beta1",
            "beta2",
            "beta3",
            "beta4",
            "converged",
            "z_vs_best",
            "p_vs_best",
            "top_group",
            "mean_width",
            "max_width",
            "std_width",
        ],
        accuracy,
        digest,
    )?;
    let tests = report.comparisons.iter().map(|c| {
        vec![
            c.distortion.clone(),
            c.metric_a.clone(),
            c.metric_b.clone(),
            c.n_a.to_string(),
            c.n_b.to_string(),
            format_float(c.test.statistic),
            format_float(c.test.p_value),
            c.test.significant().to_string(),
            c.test.method.name().to_string(),
        ]
    });
    write_csv(
        &dir.join("width_tests.csv"),
        &[
            "distortion",
            "metric_a",
            "metric_b",
            "n_a",
            "n_b",
            "u",
            "p",
            "significant",
            "method",
        ],
        tests,
        digest,
    )?;
    let mut by_distortion: BTreeMap<&str, Vec<&crate::stats::AccuracyRow>> = BTreeMap::new();
    for r in &report.accuracy {
        by_distortion.entry(&r.distortion).or_default().push(r);
    }
    for (distortion, rows) in by_distortion {
        let svg = accuracy_svg(&format!("PLCC and mean ambiguity interval: {distortion}"), &rows);
        write_text(&dir.join(format!("accuracy_{distortion}.svg")), &svg, digest)?;
    }
    Ok(())
}

/// Summary of a single perceivableness map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VdpMapSummary {
    pub mean: f64,
    pub max: f64,
    pub fraction_above: f64,
}

/// Compare two image files and write `vdpmap.png` and `vdpmap.csv`.
pub fn cmd_vdpmap(
    reference: &Path,
    test: &Path,
    vc: &ViewingConditions,
    params: &VdpParameters,
    out: &Path,
) -> Result<VdpMapSummary> {
    vc.validate()?;
    params.validate()?;
    let load = |p: &Path| -> Result<PixelImage> {
        let img = load_image(p)?;
        Ok(if img.is_gray() { img } else { to_grayscale(&img) })
    };
    let (r, t) = (load(reference)?, load(test)?);
    r.ensure_same_dims(&t)?;
    let map = vdp(&display_model(&r, vc)?, &display_model(&t, vc)?, vc, params)?;
    let summary = VdpMapSummary {
        mean: map.mean(),
        max: map.max(),
        fraction_above: map.fraction_above_threshold(),
    };
    fs::create_dir_all(out)?;
    let digest = {
        let mut h = Sha256::new();
        h.update(toml::to_string(vc).expect("serializable").as_bytes());
        h.update(toml::to_string(params).expect("serializable").as_bytes());
        hex::encode(h.finalize())
    };
    let png = out.join("vdpmap.png");
    save_png(&map.to_image(), &png)?;
    write_sidecar(&png, &digest)?;
    write_csv(
        &out.join("vdpmap.csv"),
        &["mean", "max", "fraction_above"],
        [vec![
            format_float(summary.mean),
            format_float(summary.max),
            format_float(summary.fraction_above),
        ]],
        &digest,
    )?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_examples() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.000012345, "1.2345e-05"),
            (0.00012345, "0.00012345"),
            (9.9999999999, "10"),
            (f64::INFINITY, "inf"),
        ];
        for (x, want) in cases {
            assert_eq!(format_float(x), want, "{x}");
        }
        assert_eq!(distance_dir(4.0), "d4");
        assert_eq!(distance_dir(1.5), "d1.5");
    }

    #[test]
    fn default_config_round_trips_and_validates() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        assert_eq!(cfg.contents.fixtures.len(), 3);
        assert_eq!(cfg.distortions.levels, 50);
        assert_eq!(cfg.display.distances, vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_toml("[run]\nk = 0.05\n[distortions]\nkinds = [\"gb\"]\n").unwrap();
        assert_eq!(cfg.run.k, 0.05);
        assert_eq!(cfg.distortions.levels, 50);
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_errors() {
        assert!(RunConfig::from_toml("[run]\nbogus = 1\n").is_err());
        let bad = |edit: fn(&mut RunConfig)| {
            let mut cfg = RunConfig::default();
            edit(&mut cfg);
            cfg.validate().unwrap_err()
        };
        assert!(matches!(
            bad(|c| c.distortions.kinds = vec!["sharpen".into()]),
            Error::UnknownDistortion(_)
        ));
        assert!(matches!(
            bad(|c| c.metrics.names = vec!["vif".into()]),
            Error::UnknownMetric(_)
        ));
        assert!(matches!(bad(|c| c.contents.fixtures.clear()), Error::Config(_)));
        assert!(matches!(bad(|c| c.display.distances.clear()), Error::Config(_)));
        assert!(matches!(bad(|c| c.run.k = 1.5), Error::Config(_)));
        assert!(matches!(bad(|c| c.distortions.levels = 1), Error::Config(_)));
        assert!(matches!(bad(|c| c.contents.size = 64), Error::Config(_)));
        assert!(matches!(
            bad(|c| c.vdp.pyramid_levels = 1),
            Error::InvalidVdpParameters(_)
        ));
        assert!(matches!(
            bad(|c| c.display.gamma = -1.0),
            Error::InvalidViewingConditions(_)
        ));
        assert!(matches!(
            bad(|c| c.contents.images = vec!["/nonexistent.png".into()]),
            Error::Config(_)
        ));
    }

    #[test]
    fn ladder_seeds_are_distinct() {
        let mut seeds: Vec<u64> = (0..5)
            .flat_map(|c| DistortionKind::ALL.map(|k| ladder_seed(7, c, k)))
            .collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 20);
    }
}
