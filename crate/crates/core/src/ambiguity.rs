//! Ambiguity intervals along a distortion ladder and their summary measures.
//!
//! For every rung `i` with score `Q_i`, two scans look for the first rung the
//! observer can tell apart from `I_i`: downward (`j = i+1 ..= N`, more
//! degraded) and upward (`j = i-1 ..= 1`, less degraded). The rungs before
//! the crossing are indistinguishable from `I_i`; the score spread they cover
//! is the lower and upper width of the interval.
//!
//! Widths are measured from `Q_i` to the most extreme score among the
//! indistinguishable rungs. On a ladder whose scores decrease monotonically
//! this is exactly `Q_i - Q_{j-1}` and `Q_{j+1} - Q_i`; on a metric that
//! wobbles along the ladder it keeps the widths non-negative.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::Serialize;

use crate::degrade::DistortionLadder;
use crate::error::{Error, Result};
use crate::vdp::{exceeds_fraction, PreparedImage, VdpModel};

/// Interval around the score of one rung.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AmbiguityInterval {
    /// 1-based rung index.
    pub level: usize,
    pub score: f64,
    pub lower_width: f64,
    pub upper_width: f64,
    pub lower_censored: bool,
    pub upper_censored: bool,
    /// Most degraded rung still indistinguishable from this one.
    pub lower_rung: usize,
    /// Least degraded rung still indistinguishable from this one.
    pub upper_rung: usize,
}

/// Distance from `q` down to `lo` (or up to `hi`), with the score sentinel
/// `+inf` mapped to an infinite width.
fn span(from: f64, to: f64) -> f64 {
    if from == to {
        0.0
    } else {
        let d = from - to;
        if d.is_nan() {
            f64::INFINITY
        } else {
            d
        }
    }
}

fn interval_from_bounds(scores: &[f64], i: usize, lower: (usize, bool), upper: (usize, bool)) -> AmbiguityInterval {
    let q = scores[i - 1];
    let lo = scores[i - 1..lower.0].iter().copied().fold(q, f64::min);
    let hi = scores[upper.0 - 1..i].iter().copied().fold(q, f64::max);
    AmbiguityInterval {
        level: i,
        score: q,
        lower_width: span(q, lo),
        upper_width: span(hi, q),
        lower_censored: lower.1,
        upper_censored: upper.1,
        lower_rung: lower.0,
        upper_rung: upper.0,
    }
}

fn scan_one<F>(scores: &[f64], i: usize, oracle: &F) -> Result<AmbiguityInterval>
where
    F: Fn(usize, usize) -> Result<bool>,
{
    let n = scores.len();
    let mut lower = (n, true);
    for j in i + 1..=n {
        if oracle(i, j)? {
            lower = (j - 1, false);
            break;
        }
    }
    let mut upper = (1, true);
    for j in (1..i).rev() {
        if oracle(i, j)? {
            upper = (j + 1, false);
            break;
        }
    }
    Ok(interval_from_bounds(scores, i, lower, upper))
}

/// Run the interval scan for every rung.
///
/// `oracle(i, j)` answers "is rung `j` distinguishable from rung `i`" with
/// 1-based indices and `i` as the reference. With `parallel` the rungs are
/// scanned on the rayon pool; results are identical either way.
pub fn scan_intervals<F>(scores: &[f64], oracle: F, parallel: bool) -> Result<Vec<AmbiguityInterval>>
where
    F: Fn(usize, usize) -> Result<bool> + Sync,
{
    if scores.is_empty() {
        return Ok(Vec::new());
    }
    let n = scores.len();
    if parallel {
        (1..=n).into_par_iter().map(|i| scan_one(scores, i, &oracle)).collect()
    } else {
        (1..=n).map(|i| scan_one(scores, i, &oracle)).collect()
    }
}

/// Intervals for a ladder given its per-rung canonical scores.
pub fn ambiguity_intervals<F>(ladder: &DistortionLadder, scores: &[f64], oracle: F) -> Result<Vec<AmbiguityInterval>>
where
    F: Fn(usize, usize) -> Result<bool> + Sync,
{
    if scores.len() != ladder.levels() {
        return Err(Error::LengthMismatch {
            scores: scores.len(),
            rungs: ladder.levels(),
        });
    }
    scan_intervals(scores, oracle, true)
}

/// VDP-backed distinguishability for one ladder under one viewing condition.
///
/// Every rung is decomposed once. The number of pixels detected above 0.5
/// for an ordered pair does not depend on `k`, so it is memoized and shared
/// by all rungs' scans and by every `k` asked afterwards.
pub struct VdpOracle {
    model: VdpModel,
    prepared: Vec<PreparedImage>,
    counts: Vec<OnceLock<usize>>,
    pixels: usize,
}

impl VdpOracle {
    pub fn new(model: VdpModel, ladder: &DistortionLadder) -> Result<Self> {
        let prepared = ladder
            .images()
            .par_iter()
            .map(|img| model.prepare_pixels(img))
            .collect::<Result<Vec<_>>>()?;
        let n = prepared.len();
        let pixels = ladder.source.width() * ladder.source.height();
        Ok(Self {
            model,
            prepared,
            counts: (0..n * n).map(|_| OnceLock::new()).collect(),
            pixels,
        })
    }

    pub fn levels(&self) -> usize {
        self.prepared.len()
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels
    }

    /// Pixels of the map `vdp(I_i, I_j)` above 0.5.
    pub fn count(&self, i: usize, j: usize) -> Result<usize> {
        let slot = &self.counts[(i - 1) * self.levels() + (j - 1)];
        if let Some(&c) = slot.get() {
            return Ok(c);
        }
        let c = self
            .model
            .count_above_threshold(&self.prepared[i - 1], &self.prepared[j - 1])?;
        Ok(*slot.get_or_init(|| c))
    }

    pub fn distinguishable(&self, i: usize, j: usize, k: f64) -> Result<bool> {
        Ok(exceeds_fraction(self.count(i, j)?, self.pixels, k))
    }

    /// Memoized pair counts as `(i, j, count)`, sorted.
    pub fn known_counts(&self) -> Vec<(usize, usize, usize)> {
        let n = self.levels();
        self.counts
            .iter()
            .enumerate()
            .filter_map(|(idx, slot)| slot.get().map(|&c| (idx / n + 1, idx % n + 1, c)))
            .collect()
    }

    /// Seed the memo with previously computed counts.
    pub fn preload(&self, counts: impl IntoIterator<Item = (usize, usize, usize)>) -> Result<()> {
        let n = self.levels();
        for (i, j, c) in counts {
            if !(1..=n).contains(&i) || !(1..=n).contains(&j) {
                return Err(Error::LevelOutOfRange {
                    level: i.max(j),
                    levels: n,
                });
            }
            let _ = self.counts[(i - 1) * n + (j - 1)].set(c);
        }
        Ok(())
    }

    /// Scan every rung at sensitivity `k`.
    pub fn intervals(&self, scores: &[f64], k: f64) -> Result<Vec<AmbiguityInterval>> {
        if scores.len() != self.levels() {
            return Err(Error::LengthMismatch {
                scores: scores.len(),
                rungs: self.levels(),
            });
        }
        scan_intervals(scores, |i, j| self.distinguishable(i, j, k), true)
    }
}

/// Observed output range of a metric, used to make widths dimensionless.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScoreRange {
    pub min: f64,
    pub max: f64,
}

impl ScoreRange {
    /// Range of the finite scores; `+inf` sentinels are ignored.
    pub fn from_scores(scores: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (min, max) = scores
            .into_iter()
            .filter(|s| s.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
        if min > max {
            return Err(Error::EmptySample);
        }
        let range = Self { min, max };
        range.span()?;
        Ok(range)
    }

    pub fn span(&self) -> Result<f64> {
        if self.max > self.min {
            Ok(self.max - self.min)
        } else {
            Err(Error::DegenerateRange(self.min))
        }
    }
}

/// Divide both widths of every interval by the range span.
pub fn normalize_widths(intervals: &[AmbiguityInterval], range: ScoreRange) -> Result<Vec<AmbiguityInterval>> {
    let span = range.span()?;
    Ok(intervals
        .iter()
        .map(|iv| AmbiguityInterval {
            lower_width: iv.lower_width / span,
            upper_width: iv.upper_width / span,
            ..*iv
        })
        .collect())
}

/// Mean, maximum and population standard deviation of a width sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WidthStats {
    pub mean: f64,
    pub max: f64,
    pub std: f64,
    pub n: usize,
}

/// Statistics over the uncensored, finite widths of `(width, censored)` pairs.
pub fn summarize_widths(widths: impl IntoIterator<Item = (f64, bool)>) -> Result<WidthStats> {
    let kept: Vec<f64> = widths
        .into_iter()
        .filter(|&(w, censored)| !censored && w.is_finite())
        .map(|(w, _)| w)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let var = kept.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
    Ok(WidthStats {
        mean,
        max: kept.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        std: var.sqrt(),
        n: kept.len(),
    })
}

/// Summary of normalized intervals for one metric and distortion.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AmbiguitySummary {
    pub metric: String,
    pub distortion: String,
    pub contents: Vec<String>,
    /// Upper and lower widths pooled.
    pub pooled: WidthStats,
    pub lower: Option<WidthStats>,
    pub upper: Option<WidthStats>,
    pub range: ScoreRange,
}

/// Summarize already normalized intervals.
pub fn summarize(
    metric: &str,
    distortion: &str,
    contents: Vec<String>,
    normalized: &[AmbiguityInterval],
    range: ScoreRange,
) -> Result<AmbiguitySummary> {
    let lower: Vec<(f64, bool)> = normalized
        .iter()
        .map(|iv| (iv.lower_width, iv.lower_censored))
        .collect();
    let upper: Vec<(f64, bool)> = normalized
        .iter()
        .map(|iv| (iv.upper_width, iv.upper_censored))
        .collect();
    let pooled = summarize_widths(lower.iter().chain(&upper).copied())?;
    Ok(AmbiguitySummary {
        metric: metric.to_string(),
        distortion: distortion.to_string(),
        contents,
        pooled,
        lower: summarize_widths(lower).ok(),
        upper: summarize_widths(upper).ok(),
        range,
    })
}
