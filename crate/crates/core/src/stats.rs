//! Accuracy measures and significance tests for metric benchmarking.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::degrade::csv_err;
use crate::error::{Error, Result};
use crate::metrics::{canonical_distortion, RungKey};

/// Significance level used when none is configured.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// `Q' = β1 + (β2 − β1) / (1 + exp(−(Q − β3) / β4))`.
pub fn logistic(q: f64, beta: &[f64; 4]) -> f64 {
    let [b1, b2, b3, b4] = *beta;
    b1 + (b2 - b1) / (1.0 + (-(q - b3) / b4).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogisticFit {
    pub beta: [f64; 4],
    /// `sqrt(Σ (Q' − S)²)` at `beta`.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticFit {
    pub fn map(&self, q: f64) -> f64 {
        logistic(q, &self.beta)
    }
}

const MAX_ITERATIONS: usize = 500;
const RELATIVE_TOLERANCE: f64 = 1e-10;

fn sse(q: &[f64], s: &[f64], beta: &[f64; 4]) -> f64 {
    q.iter().zip(s).map(|(&x, &y)| (logistic(x, beta) - y).powi(2)).sum()
}

fn median(v: &[f64]) -> f64 {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Levenberg-Marquardt from one starting point.
fn levenberg_marquardt(q: &[f64], s: &[f64], start: [f64; 4]) -> LogisticFit {
    let mut beta = start;
    let mut cost = sse(q, s, &beta);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        let [b1, b2, b3, b4] = beta;
        for (&x, &y) in q.iter().zip(s) {
            let u = (x - b3) / b4;
            let g = 1.0 / (1.0 + (-u).exp());
            let dg = g * (1.0 - g);
            let r = b1 + (b2 - b1) * g - y;
            let j = Vector4::new(1.0 - g, g, -(b2 - b1) * dg / b4, -(b2 - b1) * dg * u / b4);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for d in 0..4 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = [
                beta[0] + step[0],
                beta[1] + step[1],
                beta[2] + step[2],
                beta[3] + step[3],
            ];
            let new_cost = sse(q, s, &candidate);
            if candidate[3] != 0.0 && new_cost.is_finite() && new_cost < cost {
                let change = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                beta = candidate;
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if change < RELATIVE_TOLERANCE || cost < 1e-28 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step left at any damping: a stationary point
            converged = true;
        }
        if converged {
            break;
        }
    }
    LogisticFit {
        beta,
        residual_norm: cost.sqrt(),
        converged,
        iterations,
    }
}

/// Fit the logistic mapping from objective scores `q` to subjective `s`.
///
/// Starts from `β1 = max S, β2 = min S, β3 = median Q, β4 = (max Q − min Q)/4`
/// and also from the same point with `β1`, `β2` swapped, so both decreasing
/// and increasing relations are reachable; the better fit is returned.
pub fn logistic_fit(q: &[f64], s: &[f64]) -> Result<(LogisticFit, Vec<f64>)> {
    if q.len() != s.len() {
        return Err(Error::Precondition(format!(
            "{} scores vs {} subjective values",
            q.len(),
            s.len()
        )));
    }
    if q.len() < 5 {
        return Err(Error::Precondition(format!(
            "logistic fit needs at least 5 points, got {}",
            q.len()
        )));
    }
    if q.iter().chain(s).any(|v| !v.is_finite()) {
        return Err(Error::Precondition("logistic fit needs finite inputs".into()));
    }
    let (qmin, qmax) = min_max(q);
    if qmax <= qmin {
        return Err(Error::Precondition("objective scores are all equal".into()));
    }
    let (smin, smax) = min_max(s);
    let start = [smax, smin, median(q), (qmax - qmin) / 4.0];
    let mut best = levenberg_marquardt(q, s, start);
    let swapped = levenberg_marquardt(q, s, [smin, smax, start[2], start[3]]);
    if swapped.residual_norm < best.residual_norm {
        best = swapped;
    }
    let mapped = q.iter().map(|&x| best.map(x)).collect();
    Ok((best, mapped))
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Precondition(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(Error::Precondition(format!("need at least 3 samples, got {}", a.len())));
    }
    Ok(())
}

/// Pearson linear correlation.
pub fn plcc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Precondition("zero variance".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation.
pub fn srocc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    plcc(&average_ranks(a), &average_ranks(b))
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Precondition(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok((a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    FisherZ,
    MannWhitneyExact,
    MannWhitneyNormal,
}

impl TestMethod {
    pub fn name(self) -> &'static str {
        match self {
            TestMethod::FisherZ => "fisher-z",
            TestMethod::MannWhitneyExact => "mann-whitney-exact",
            TestMethod::MannWhitneyNormal => "mann-whitney-normal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub method: TestMethod,
}

impl TestResult {
    pub fn significant(&self) -> bool {
        self.p_value < self.alpha
    }
}

/// Two-sided tail probability of a standard normal beyond `|z|`.
pub fn two_sided_normal_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Compare two independent correlation coefficients via Fisher's z.
pub fn fisher_z_test(r1: f64, n1: usize, r2: f64, n2: usize, alpha: f64) -> Result<TestResult> {
    for (r, n) in [(r1, n1), (r2, n2)] {
        if !(r.abs() < 1.0) {
            return Err(Error::Precondition(format!("correlation {r} has no Fisher transform")));
        }
        if n < 4 {
            return Err(Error::Precondition(format!("sample size {n} below 4")));
        }
    }
    let se = (1.0 / (n1 - 3) as f64 + 1.0 / (n2 - 3) as f64).sqrt();
    let z = (r1.atanh() - r2.atanh()) / se;
    Ok(TestResult {
        statistic: z,
        p_value: two_sided_normal_p(z),
        alpha,
        method: TestMethod::FisherZ,
    })
}

/// How the Mann-Whitney p-value is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MannWhitneyMethod {
    /// Exact when `n_x · n_y ≤ 400`, normal approximation otherwise.
    Auto,
    Exact,
    Normal,
}

pub const EXACT_LIMIT: usize = 400;

/// `U_x`: number of pairs with `x > y`, ties counting one half.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = average_ranks(&pooled);
    let rx: f64 = ranks[..x.len()].iter().sum();
    rx - (x.len() * (x.len() + 1)) as f64 / 2.0
}

/// Two-sided Wilcoxon–Mann-Whitney rank-sum test; the statistic is `U_x`.
pub fn mann_whitney(x: &[f64], y: &[f64], method: MannWhitneyMethod, alpha: f64) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Precondition("Mann-Whitney needs two non-empty samples".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Precondition("Mann-Whitney samples contain NaN".into()));
    }
    let (nx, ny) = (x.len(), y.len());
    let exact = match method {
        MannWhitneyMethod::Auto => nx * ny <= EXACT_LIMIT,
        MannWhitneyMethod::Exact => true,
        MannWhitneyMethod::Normal => false,
    };
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = average_ranks(&pooled);
    let u = ranks[..nx].iter().sum::<f64>() - (nx * (nx + 1)) as f64 / 2.0;
    let p = if exact {
        exact_p(&ranks, nx, u)
    } else {
        normal_p(&pooled, nx, ny, u)
    };
    Ok(TestResult {
        statistic: u,
        p_value: p,
        alpha,
        method: if exact {
            TestMethod::MannWhitneyExact
        } else {
            TestMethod::MannWhitneyNormal
        },
    })
}

/// Permutation distribution of the rank sum given the observed tie pattern.
fn exact_p(ranks: &[f64], nx: usize, u: f64) -> f64 {
    // doubled midranks are integers
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // counts[j][s]: subsets of size j with doubled rank sum s
    let mut counts = vec![vec![0.0f64; total + 1]; nx + 1];
    counts[0][0] = 1.0;
    for &r in &doubled {
        for j in (1..=nx).rev() {
            let (lo, hi) = counts.split_at_mut(j);
            for s in (r..=total).rev() {
                hi[0][s] += lo[j - 1][s - r];
            }
        }
    }
    let n = ranks.len();
    let offset = (nx * (nx + 1)) as f64; // doubled nx(nx+1)/2
    let mean_u = (nx * (n - nx)) as f64 / 2.0;
    let observed = (u - mean_u).abs();
    let all: f64 = counts[nx].iter().sum();
    let extreme: f64 = counts[nx]
        .iter()
        .enumerate()
        .filter(|&(s, &c)| c > 0.0 && ((s as f64 - offset) / 2.0 - mean_u).abs() >= observed - 1e-9)
        .map(|(_, &c)| c)
        .sum();
    (extreme / all).clamp(0.0, 1.0)
}

fn normal_p(pooled: &[f64], nx: usize, ny: usize, u: f64) -> f64 {
    let n = (nx + ny) as f64;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let (fx, fy) = (nx as f64, ny as f64);
    let var = fx * fy / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)).max(1.0));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - fx * fy / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    two_sided_normal_p(z)
}

/// Objective scores, subjective scores and normalized interval widths of one
/// metric on one distortion type.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSample {
    pub metric: String,
    pub distortion: String,
    pub objective: Vec<f64>,
    /// Higher-is-better subjective scores aligned with `objective`.
    pub subjective: Vec<f64>,
    /// Pooled normalized, uncensored widths.
    pub widths: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub distortion: String,
    pub metric: String,
    pub n: usize,
    pub plcc: f64,
    pub srocc: f64,
    pub rmse: f64,
    pub fit: LogisticFit,
    /// Fisher-z comparison against the best PLCC of the distortion group.
    pub versus_best: TestResult,
    pub top_group: bool,
    pub mean_width: Option<f64>,
    pub max_width: Option<f64>,
    pub std_width: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WidthComparison {
    pub distortion: String,
    pub metric_a: String,
    pub metric_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub test: TestResult,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BenchmarkReport {
    /// Sorted by distortion, then descending PLCC, then metric name.
    pub accuracy: Vec<AccuracyRow>,
    pub comparisons: Vec<WidthComparison>,
}

/// Accuracy, top groups and pairwise width comparisons per distortion.
pub fn benchmark(samples: &[MetricSample], alpha: f64) -> Result<BenchmarkReport> {
    let mut distortions: Vec<&str> = samples.iter().map(|s| s.distortion.as_str()).collect();
    distortions.sort_unstable();
    distortions.dedup();
    let mut report = BenchmarkReport::default();
    for distortion in distortions {
        let mut group: Vec<&MetricSample> = samples.iter().filter(|s| s.distortion == distortion).collect();
        group.sort_by(|a, b| a.metric.cmp(&b.metric));
        let mut rows = Vec::with_capacity(group.len());
        for s in &group {
            let (fit, mapped) = logistic_fit(&s.objective, &s.subjective)?;
            let stats = crate::ambiguity::summarize_widths(s.widths.iter().map(|&w| (w, false))).ok();
            rows.push(AccuracyRow {
                distortion: distortion.to_string(),
                metric: s.metric.clone(),
                n: s.objective.len(),
                plcc: plcc(&mapped, &s.subjective)?,
                srocc: srocc(&s.objective, &s.subjective)?,
                rmse: rmse(&mapped, &s.subjective)?,
                fit,
                versus_best: TestResult {
                    statistic: 0.0,
                    p_value: 1.0,
                    alpha,
                    method: TestMethod::FisherZ,
                },
                top_group: true,
                mean_width: stats.map(|w| w.mean),
                max_width: stats.map(|w| w.max),
                std_width: stats.map(|w| w.std),
            });
        }
        rows.sort_by(|a, b| b.plcc.total_cmp(&a.plcc).then_with(|| a.metric.cmp(&b.metric)));
        if let Some(best) = rows.first().cloned() {
            for row in &mut rows {
                if row.metric == best.metric {
                    continue;
                }
                // a perfect correlation has no Fisher transform; treat as infinitely separated
                let test = if best.plcc.abs() < 1.0 && row.plcc.abs() < 1.0 {
                    fisher_z_test(best.plcc, best.n, row.plcc, row.n, alpha)?
                } else {
                    let equal = best.plcc == row.plcc;
                    TestResult {
                        statistic: if equal { 0.0 } else { f64::INFINITY },
                        p_value: if equal { 1.0 } else { 0.0 },
                        alpha,
                        method: TestMethod::FisherZ,
                    }
                };
                row.top_group = !test.significant();
                row.versus_best = test;
            }
        }
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                if a.widths.is_empty() || b.widths.is_empty() {
                    continue;
                }
                report.comparisons.push(WidthComparison {
                    distortion: distortion.to_string(),
                    metric_a: a.metric.clone(),
                    metric_b: b.metric.clone(),
                    n_a: a.widths.len(),
                    n_b: b.widths.len(),
                    test: mann_whitney(&a.widths, &b.widths, MannWhitneyMethod::Auto, alpha)?,
                });
            }
        }
        report.accuracy.extend(rows);
    }
    Ok(report)
}

pub const SUBJECTIVE_CSV_HEADER: [&str; 5] = ["content", "distortion", "level", "score", "score_type"];

#[derive(Deserialize)]
struct SubjectiveRow {
    content: String,
    distortion: String,
    level: usize,
    score: f64,
    score_type: String,
}

/// Subjective ratings keyed by rung, higher-is-better (DMOS is negated).
pub type SubjectiveScores = BTreeMap<RungKey, f64>;

pub fn ingest_subjective(path: impl AsRef<Path>) -> Result<SubjectiveScores> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::UnreadableFile {
        path: path.as_ref().to_path_buf(),
        reason: e.to_string(),
    })?;
    ingest_subjective_from_reader(file)
}

pub fn ingest_subjective_from_reader(reader: impl std::io::Read) -> Result<SubjectiveScores> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?;
    if headers.iter().ne(SUBJECTIVE_CSV_HEADER) {
        return Err(Error::Schema(format!(
            "expected header `{}`, got `{}`",
            SUBJECTIVE_CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = SubjectiveScores::new();
    for (line, row) in rdr.deserialize::<SubjectiveRow>().enumerate() {
        let row = row.map_err(|e| Error::Schema(format!("row {}: {e}", line + 2)))?;
        if !row.score.is_finite() {
            return Err(Error::NonFiniteScore(format!("subjective row {}", line + 2)));
        }
        let score = match row.score_type.to_ascii_lowercase().as_str() {
            "mos" => row.score,
            "dmos" => -row.score,
            other => return Err(Error::Schema(format!("row {}: unknown score_type `{other}`", line + 2))),
        };
        let key = RungKey {
            content: row.content,
            distortion: canonical_distortion(&row.distortion),
            level: row.level,
        };
        if out.insert(key.clone(), score).is_some() {
            return Err(Error::DuplicateKey(format!("subjective {key}")));
        }
    }
    Ok(out)
}

/// Grouped bar chart: PLCC (blue) next to mean interval width (green) per
/// metric, metrics in the order given; top-group metrics sit on a gray box.
pub fn accuracy_svg(title: &str, rows: &[&AccuracyRow]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 360.0;
    const LEFT: f64 = 60.0;
    const BOTTOM: f64 = 300.0;
    const TOP: f64 = 40.0;
    let max_width = rows
        .iter()
        .filter_map(|r| r.mean_width)
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let slot = (W - LEFT - 60.0) / rows.len().max(1) as f64;
    let plot_h = BOTTOM - TOP;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        xml_escape(title)
    );
    for (i, row) in rows.iter().enumerate() {
        let x0 = LEFT + i as f64 * slot;
        if row.top_group {
            let _ = writeln!(
                svg,
                r##"<rect x="{:.2}" y="{TOP}" width="{:.2}" height="{plot_h}" fill="#e0e0e0"/>"##,
                x0 + 2.0,
                slot - 4.0
            );
        }
        let bar = (slot - 8.0) / 2.0;
        let hp = row.plcc.max(0.0) * plot_h;
        let _ = writeln!(
            svg,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4"/>"##,
            x0 + 4.0,
            BOTTOM - hp,
            bar,
            hp
        );
        if let Some(w) = row.mean_width {
            let hw = w / max_width * plot_h;
            let _ = writeln!(
                svg,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#2ca02c"/>"##,
                x0 + 4.0 + bar,
                BOTTOM - hw,
                bar,
                hw
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" transform="rotate(-45 {:.2} {:.2})">{}</text>"#,
            x0 + slot / 2.0,
            BOTTOM + 14.0,
            x0 + slot / 2.0,
            BOTTOM + 14.0,
            xml_escape(&row.metric)
        );
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{BOTTOM}" x2="{}" y2="{BOTTOM}" stroke="black"/>"#,
        W - 60.0
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{BOTTOM}" stroke="black"/>"#
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{TOP}" text-anchor="end">1</text>"#, LEFT - 4.0);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{BOTTOM}" text-anchor="end">0</text>"#,
        LEFT - 4.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{TOP}" text-anchor="start">{:.4}</text>"#,
        W - 56.0,
        max_width
    );
    let _ = writeln!(svg, r##"<text x="{LEFT}" y="{}" fill="#1f77b4">PLCC</text>"##, H - 10.0);
    let _ = writeln!(
        svg,
        r##"<text x="{}" y="{}" fill="#2ca02c">mean interval width</text>"##,
        LEFT + 60.0,
        H - 10.0
    );
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn subjective_ingestion_negates_dmos() {
        let text = "content,distortion,level,score,score_type\na,gb,1,70,mos\na,wn,2,30,dmos\n";
        let s = ingest_subjective_from_reader(text.as_bytes()).unwrap();
        let key = |d: &str, level| RungKey {
            content: "a".into(),
            distortion: d.into(),
            level,
        };
        assert_eq!(s[&key("gaussian-blur", 1)], 70.0);
        assert_eq!(s[&key("white-gaussian-noise", 2)], -30.0);
        assert!(ingest_subjective_from_reader("content,level\n".as_bytes()).is_err());
        let bad = "content,distortion,level,score,score_type\na,gb,1,70,zzz\n";
        assert!(ingest_subjective_from_reader(bad.as_bytes()).is_err());
    }

    #[test]
    fn correlation_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b: Vec<f64> = a.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((plcc(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert!((srocc(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((plcc(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        let r = srocc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-15);
        assert!(plcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(plcc(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(rmse(&[1.0, 3.0], &[1.0, 1.0]).unwrap(), 2f64.sqrt());
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn fisher_examples() {
        let t = fisher_z_test(0.95, 100, 0.90, 100, DEFAULT_ALPHA).unwrap();
        assert!((t.statistic - 2.504).abs() < 1e-3, "{}", t.statistic);
        assert!((t.p_value - 0.0123).abs() < 1e-3, "{}", t.p_value);
        let same = fisher_z_test(0.8, 50, 0.8, 70, DEFAULT_ALPHA).unwrap();
        assert_eq!((same.statistic, same.p_value), (0.0, 1.0));
        assert!(fisher_z_test(1.0, 10, 0.5, 10, DEFAULT_ALPHA).is_err());
        assert!(fisher_z_test(0.5, 3, 0.5, 10, DEFAULT_ALPHA).is_err());
    }

    #[test]
    fn mann_whitney_examples() {
        let t = mann_whitney(&[1.0, 2.0], &[3.0, 4.0], MannWhitneyMethod::Auto, 0.05).unwrap();
        assert_eq!(t.statistic, 0.0);
        let x = [1.0, 2.0, 3.0, 4.0];
        let t = mann_whitney(&x, &x, MannWhitneyMethod::Auto, 0.05).unwrap();
        assert_eq!(t.statistic, 8.0);
        assert!(t.p_value > 0.99);
        let t = mann_whitney(&x, &x, MannWhitneyMethod::Normal, 0.05).unwrap();
        assert!(t.p_value > 0.99);
        assert!(mann_whitney(&[], &x, MannWhitneyMethod::Auto, 0.05).is_err());
        let all_tied = mann_whitney(&[1.0; 3], &[1.0; 4], MannWhitneyMethod::Normal, 0.05).unwrap();
        assert_eq!(all_tied.p_value, 1.0);
    }

    #[test]
    fn fit_recovers_generating_parameters() {
        let beta = [90.0, 10.0, 0.5, 0.1];
        let q: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let s: Vec<f64> = q.iter().map(|&x| logistic(x, &beta)).collect();
        let (fit, _) = logistic_fit(&q, &s).unwrap();
        for (got, want) in fit.beta.iter().zip(beta) {
            assert!((got - want).abs() < 1e-3, "{:?}", fit.beta);
        }
        assert!(fit.residual_norm < 1e-6);
        assert!(fit.converged);
    }

    #[test]
    fn fit_approximates_linear_data() {
        let q: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let s: Vec<f64> = q.iter().map(|&x| 3.0 + 0.5 * x).collect();
        let (_, mapped) = logistic_fit(&q, &s).unwrap();
        assert!(rmse(&mapped, &s).unwrap() < 1e-4, "{}", rmse(&mapped, &s).unwrap());
    }

    #[test]
    fn fit_preconditions() {
        assert!(logistic_fit(&[1.0; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).is_err());
        assert!(logistic_fit(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn benchmark_trivial_cases() {
        let q: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let s: Vec<f64> = q.iter().map(|x| 10.0 * x).collect();
        let one = MetricSample {
            metric: "m".into(),
            distortion: "d".into(),
            objective: q.clone(),
            subjective: s.clone(),
            widths: vec![0.1, 0.2],
        };
        let r = benchmark(std::slice::from_ref(&one), DEFAULT_ALPHA).unwrap();
        assert!(r.accuracy[0].plcc > 0.999_999);
        assert!(r.accuracy[0].top_group);

        let noisy: Vec<f64> = s.iter().enumerate().map(|(i, v)| v + [3.0, -4.0, 1.0][i % 3]).collect();
        let twin = |name: &str| MetricSample {
            metric: name.into(),
            subjective: noisy.clone(),
            ..one.clone()
        };
        let r = benchmark(&[twin("a"), twin("b")], DEFAULT_ALPHA).unwrap();
        assert_eq!(r.accuracy[1].versus_best.p_value, 1.0);
        assert!(r.accuracy.iter().all(|row| row.top_group));
        assert_eq!(r.comparisons.len(), 1);
    }

    #[test]
    fn benchmark_flags_shifted_width_distributions() {
        let q: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let s: Vec<f64> = q.iter().map(|x| x * x).collect();
        let narrow: Vec<f64> = (0..20).map(|i| 0.01 + 0.001 * i as f64).collect();
        let wide: Vec<f64> = narrow.iter().map(|w| w + 0.015).collect();
        let mk = |name: &str, widths: Vec<f64>| MetricSample {
            metric: name.into(),
            distortion: "gb".into(),
            objective: q.clone(),
            subjective: s.clone(),
            widths,
        };
        let r = benchmark(&[mk("narrow", narrow), mk("wide", wide)], DEFAULT_ALPHA).unwrap();
        let cmp = &r.comparisons[0];
        assert!(cmp.test.significant(), "p {}", cmp.test.p_value);
        assert_eq!(cmp.test.method, TestMethod::MannWhitneyExact);
    }

    proptest! {
        #[test]
        fn correlations_are_transform_invariant(
            a in prop::collection::vec(-100.0f64..100.0, 3..30),
            noise in prop::collection::vec(-1.0f64..1.0, 30),
            scale in 0.1f64..10.0,
            shift in -50.0f64..50.0,
        ) {
            let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x + 20.0 * e).collect();
            let (Ok(r), Ok(rs)) = (plcc(&a, &b), srocc(&a, &b)) else { return Ok(()) };
            let affine: Vec<f64> = a.iter().map(|x| scale * x + shift).collect();
            prop_assert!((plcc(&affine, &b).unwrap() - r).abs() < 1e-9);
            let cubed: Vec<f64> = a.iter().map(|x| x * x * x + shift).collect();
            prop_assert!((srocc(&cubed, &b).unwrap() - rs).abs() < 1e-12);
        }

        #[test]
        fn fisher_is_antisymmetric(r1 in -0.99f64..0.99, r2 in -0.99f64..0.99, n1 in 4usize..500, n2 in 4usize..500) {
            let a = fisher_z_test(r1, n1, r2, n2, 0.01).unwrap();
            let b = fisher_z_test(r2, n2, r1, n1, 0.01).unwrap();
            prop_assert_eq!(a.statistic, -b.statistic);
            prop_assert_eq!(a.p_value, b.p_value);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }

        #[test]
        fn exact_and_normal_agree_for_15_vs_15(x in prop::collection::hash_set(0u32..100_000, 30)) {
            let v: Vec<f64> = x.into_iter().map(f64::from).collect();
            let (a, b) = v.split_at(15);
            let exact = mann_whitney(a, b, MannWhitneyMethod::Exact, 0.05).unwrap();
            let normal = mann_whitney(a, b, MannWhitneyMethod::Normal, 0.05).unwrap();
            prop_assert!((exact.p_value - normal.p_value).abs() < 0.02, "{} vs {}", exact.p_value, normal.p_value);
            prop_assert_eq!(exact.statistic, normal.statistic);
        }

        #[test]
        fn fit_never_worse_than_initialization(
            q in prop::collection::vec(0.0f64..10.0, 5..40),
            noise in prop::collection::vec(-5.0f64..5.0, 40),
        ) {
            let s: Vec<f64> = q.iter().zip(&noise).map(|(x, e)| 10.0 * x + e).collect();
            let (qmin, qmax) = min_max(&q);
            prop_assume!(qmax > qmin);
            let (smin, smax) = min_max(&s);
            let init = [smax, smin, median(&q), (qmax - qmin) / 4.0];
            let (fit, _) = logistic_fit(&q, &s).unwrap();
            prop_assert!(fit.residual_norm <= sse(&q, &s, &init).sqrt() + 1e-12);
        }
    }
}
