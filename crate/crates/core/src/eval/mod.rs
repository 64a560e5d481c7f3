//! Boundary benchmark: threshold sweep, thinning, tolerance matching and
//! the ODS / OIS / AP summary scores.

mod matching;
mod thin;
mod tolerance;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{EdgeMap, SoftEdgeMap};

pub use matching::{match_tolerance, match_tolerance_min_cost, MatchResult};
pub use thin::{count_components, thin};
pub use tolerance::{ToleranceMode, ToleranceSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

impl From<&MatchResult> for Counts {
    fn from(m: &MatchResult) -> Self {
        Counts { tp: m.tp, fp: m.fp, fn_: m.fn_ }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Precision, recall and F-beta from match counts.
///
/// With nothing predicted precision is 0, except when the ground truth is
/// empty too: then there is nothing to get wrong and both scores are 1.
pub fn pr_f(c: Counts, beta: f64) -> (f64, f64, f64) {
    let predicted = c.tp + c.fp;
    let actual = c.tp + c.fn_;
    if predicted == 0 && actual == 0 {
        return (1.0, 1.0, 1.0);
    }
    let p = if predicted == 0 { 0.0 } else { c.tp as f64 / predicted as f64 };
    let r = if actual == 0 { 0.0 } else { c.tp as f64 / actual as f64 };
    (p, r, f_beta(p, r, beta))
}

pub fn f_beta(p: f64, r: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * p + r;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / denom
    }
}

fn pr_point(threshold: f64, c: Counts, beta: f64) -> PrPoint {
    let (precision, recall, f) = pr_f(c, beta);
    PrPoint { threshold, tp: c.tp, fp: c.fp, fn_: c.fn_, precision, recall, f }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    pub n_thresholds: usize,
    pub thin_predictions: bool,
    pub beta: f64,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self { n_thresholds: 99, thin_predictions: true, beta: 1.0 }
    }
}

impl BenchmarkOptions {
    /// `k / (n + 1)` for `k = 1..=n`.
    pub fn thresholds(&self) -> Vec<f64> {
        let n = self.n_thresholds;
        (1..=n).map(|k| k as f64 / (n + 1) as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub tolerance_pixels: f64,
    pub best_threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub ods: f64,
    pub ods_threshold: f64,
    pub ois: f64,
    pub ap: f64,
    pub tolerance: ToleranceSpec,
    /// Resolved radius when it is the same for every image.
    pub tolerance_pixels: Option<f64>,
    pub options: BenchmarkOptions,
    pub curve: Vec<PrPoint>,
    pub images: Vec<ImageScore>,
}

/// Per-image counts at every threshold.
pub fn sweep_image(
    pred: &SoftEdgeMap,
    gt: &EdgeMap,
    tol_px: f64,
    thresholds: &[f64],
    thin_predictions: bool,
) -> Result<Vec<Counts>> {
    if pred.dims() != gt.dims() {
        return Err(Error::Shape(format!(
            "prediction is {:?} but ground truth is {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let mut out = Vec::with_capacity(thresholds.len());
    let mut last: Option<(EdgeMap, Counts)> = None;
    for &t in thresholds {
        let bin = pred.binarize(t);
        if let Some((prev, c)) = &last {
            if *prev == bin {
                out.push(*c);
                continue;
            }
        }
        let shown = if thin_predictions { thin(&bin) } else { bin.clone() };
        let c = Counts::from(&match_tolerance(&shown, gt, tol_px)?);
        out.push(c);
        last = Some((bin, c));
    }
    Ok(out)
}

/// Benchmark with ids `0, 1, ...`.
pub fn benchmark(
    preds: &[SoftEdgeMap],
    gts: &[EdgeMap],
    tolerance: ToleranceSpec,
    opts: &BenchmarkOptions,
) -> Result<BenchmarkReport> {
    let ids: Vec<String> = (0..preds.len()).map(|i| i.to_string()).collect();
    benchmark_with_ids(&ids, preds, gts, tolerance, opts)
}

pub fn benchmark_with_ids(
    ids: &[String],
    preds: &[SoftEdgeMap],
    gts: &[EdgeMap],
    tolerance: ToleranceSpec,
    opts: &BenchmarkOptions,
) -> Result<BenchmarkReport> {
    if preds.len() != gts.len() || ids.len() != preds.len() {
        return Err(Error::Data(format!(
            "{} ids, {} predictions and {} ground truths",
            ids.len(),
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data("nothing to evaluate: empty dataset".into()));
    }
    if gts.iter().all(|g| g.count() == 0) {
        return Err(Error::Data("every ground-truth map is empty".into()));
    }
    if opts.n_thresholds == 0 {
        return Err(Error::Config("n_thresholds must be at least 1".into()));
    }
    let thresholds = opts.thresholds();
    let tols: Vec<f64> = gts.iter().map(|g| tolerance.to_pixels(g.width(), g.height())).collect();

    let per_image: Vec<Vec<Counts>> = preds
        .par_iter()
        .zip(gts.par_iter())
        .zip(tols.par_iter())
        .enumerate()
        .map(|(i, ((p, g), &tol))| {
            sweep_image(p, g, tol, &thresholds, opts.thin_predictions)
                .map_err(|e| Error::Data(format!("image {}: {e}", ids[i])))
        })
        .collect::<Result<_>>()?;

    let curve: Vec<PrPoint> = thresholds
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let total = per_image.iter().fold(Counts::default(), |acc, c| acc + c[k]);
            pr_point(t, total, opts.beta)
        })
        .collect();

    // First threshold wins ties.
    let best = curve.iter().fold(None::<&PrPoint>, |b, p| match b {
        Some(b) if b.f >= p.f => Some(b),
        _ => Some(p),
    });
    let best = best.expect("at least one threshold");

    let mut images = Vec::with_capacity(ids.len());
    let mut ois_total = Counts::default();
    for (i, counts) in per_image.iter().enumerate() {
        let mut pick = 0;
        let mut pick_f = f64::NEG_INFINITY;
        for (k, &c) in counts.iter().enumerate() {
            let f = pr_f(c, opts.beta).2;
            if f > pick_f {
                pick = k;
                pick_f = f;
            }
        }
        let c = counts[pick];
        ois_total = ois_total + c;
        images.push(ImageScore {
            id: ids[i].clone(),
            tolerance_pixels: tols[i],
            best_threshold: thresholds[pick],
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            f: pick_f,
        });
    }
    let ois = pr_f(ois_total, opts.beta).2;

    let uniform = tols.iter().all(|&t| t == tols[0]).then_some(tols[0]);
    Ok(BenchmarkReport {
        ods: best.f,
        ods_threshold: best.threshold,
        ois,
        ap: average_precision(&curve),
        tolerance,
        tolerance_pixels: uniform,
        options: *opts,
        curve,
        images,
    })
}

/// Trapezoidal area under the precision-recall curve. Points are ordered by
/// recall (higher threshold first on ties) and the curve starts at recall 0
/// with the best precision seen; past the largest recall precision is 0.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    // Thresholds with nothing predicted carry no precision information.
    let mut pts: Vec<(f64, f64, f64)> = curve
        .iter()
        .filter(|p| p.tp + p.fp > 0)
        .map(|p| (p.recall, p.threshold, p.precision))
        .collect();
    if pts.is_empty() {
        return 0.0;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let max_p = pts.iter().map(|p| p.2).fold(0.0, f64::max);
    let mut area = 0.0;
    let (mut r0, mut p0) = (0.0, max_p);
    for (r, _, p) in pts {
        area += (r - r0) * (p + p0) / 2.0;
        (r0, p0) = (r, p);
    }
    area
}

impl BenchmarkReport {
    pub fn summary(&self) -> String {
        format!("ODS {:.3} OIS {:.3} AP {:.3}", self.ods, self.ois, self.ap)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("bad report: {e}")))
    }

    /// The PR curve as tab-separated rows for plotting.
    pub fn curve_tsv(&self) -> String {
        let mut s = String::from("threshold\ttp\tfp\tfn\tprecision\trecall\tf\n");
        for p in &self.curve {
            let _ = writeln!(
                s,
                "{:.6}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
                p.threshold, p.tp, p.fp, p.fn_, p.precision, p.recall, p.f
            );
        }
        s
    }
}
