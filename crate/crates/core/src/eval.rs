//! Benchmark metrics: reconstruction accuracy, completeness and F-score
//! after similarity alignment; per-frame relative pose errors and quality at
//! paired thresholds; grouped mean/std reports.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::umeyama;
use crate::error::{Error, Result};
use crate::geom::{geodesic_angle, PoseSequence, RigidTransform, Rotation, SimilarityTransform, TriangleMesh, Vec3};
use crate::handcam::median;
use crate::spatial::{sample_surface_points, KdTree};

/// Area-uniform surface samples, deterministic per seed.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    Ok(sample_surface_points(mesh, n, seed)?
        .into_iter()
        .map(|s| s.position)
        .collect())
}

/// One line of a flat report: `metric`, optional threshold label, value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub threshold: String,
    pub value: f64,
}

impl MetricRecord {
    fn new(metric: &str, threshold: impl Into<String>, value: f64) -> Self {
        Self {
            metric: metric.to_string(),
            threshold: threshold.into(),
            value,
        }
    }
}

fn mm_label(meters: f64) -> String {
    format!("{}mm", meters * 1e3)
}

#[derive(Clone, Debug)]
pub struct ReconConfig {
    pub n_samples: usize,
    /// Meters.
    pub thresholds: Vec<f64>,
    pub seed: u64,
    /// Run the similarity pre-alignment.
    pub align: bool,
    pub procrustes_rounds: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            n_samples: 30_000,
            thresholds: vec![0.005],
            seed: 0,
            align: true,
            procrustes_rounds: 3,
        }
    }
}

/// Distances in centimeters, ratios and F-scores in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    pub acc_cm: f64,
    pub comp_cm: f64,
    pub acc_ratio_at: Vec<f64>,
    pub comp_ratio_at: Vec<f64>,
    pub fscore_at: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    /// 100 when a mesh was produced, 0 otherwise.
    pub rec_rate: f64,
    pub thresholds: Vec<f64>,
    /// Absent for failed reconstructions.
    pub metrics: Option<ReconMetrics>,
}

impl ReconReport {
    pub fn failed(thresholds: &[f64]) -> Self {
        Self {
            rec_rate: 0.0,
            thresholds: thresholds.to_vec(),
            metrics: None,
        }
    }

    pub fn records(&self) -> Vec<MetricRecord> {
        let mut out = vec![MetricRecord::new("rec_rate", "", self.rec_rate)];
        if let Some(m) = &self.metrics {
            out.push(MetricRecord::new("acc_cm", "", m.acc_cm));
            out.push(MetricRecord::new("comp_cm", "", m.comp_cm));
            for (i, &t) in self.thresholds.iter().enumerate() {
                out.push(MetricRecord::new("acc_ratio", mm_label(t), m.acc_ratio_at[i]));
                out.push(MetricRecord::new("comp_ratio", mm_label(t), m.comp_ratio_at[i]));
                out.push(MetricRecord::new("fscore", mm_label(t), m.fscore_at[i]));
            }
        }
        out
    }
}

/// Nearest-neighbor distance from every query to `target`.
pub fn nn_distances(queries: &[Vec3], target: &KdTree) -> Vec<f64> {
    queries
        .par_iter()
        .map(|q| target.nearest(q).map_or(f64::INFINITY, |(_, d2)| d2.sqrt()))
        .collect()
}

fn percent_within(d: &[f64], t: f64) -> f64 {
    100.0 * d.iter().filter(|&&x| x <= t).count() as f64 / d.len().max(1) as f64
}

/// Harmonic mean of two percentages; 0 when both are 0.
pub fn fscore(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Metrics between already aligned point sets.
pub fn point_set_metrics(pred: &[Vec3], gt: &[Vec3], thresholds: &[f64]) -> Result<ReconMetrics> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::InvalidInput("empty point set".into()));
    }
    let acc_d = nn_distances(pred, &KdTree::new(gt.to_vec()));
    let comp_d = nn_distances(gt, &KdTree::new(pred.to_vec()));
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let acc_ratio_at: Vec<f64> = thresholds.iter().map(|&t| percent_within(&acc_d, t)).collect();
    let comp_ratio_at: Vec<f64> = thresholds.iter().map(|&t| percent_within(&comp_d, t)).collect();
    let fscore_at = acc_ratio_at
        .iter()
        .zip(&comp_ratio_at)
        .map(|(&p, &r)| fscore(p, r))
        .collect();
    Ok(ReconMetrics {
        acc_cm: 100.0 * mean(&acc_d),
        comp_cm: 100.0 * mean(&comp_d),
        acc_ratio_at,
        comp_ratio_at,
        fscore_at,
    })
}

fn centroid(p: &[Vec3]) -> Vec3 {
    p.iter().sum::<Vec3>() / p.len() as f64
}

fn rms_radius(p: &[Vec3], c: &Vec3) -> f64 {
    (p.iter().map(|x| (x - c).norm_squared()).sum::<f64>() / p.len() as f64).sqrt()
}

/// Similarity mapping `pred` onto `gt`. Starts from whichever of the
/// identity and the centroid/RMS-scale match gives the lower median
/// pred-to-gt distance, then runs `rounds` of Umeyama on mutual nearest
/// neighbors.
pub fn align_point_sets(pred: &[Vec3], gt: &[Vec3], rounds: usize) -> Result<SimilarityTransform> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::InvalidInput("empty point set".into()));
    }
    let gt_tree = KdTree::new(gt.to_vec());
    let median_acc = |t: &SimilarityTransform| {
        let moved = t.apply_to_points(pred);
        median(&mut nn_distances(&moved, &gt_tree))
    };
    let (cp, cg) = (centroid(pred), centroid(gt));
    let (rp, rg) = (rms_radius(pred, &cp), rms_radius(gt, &cg));
    let mut t = SimilarityTransform::identity();
    if rp > 0.0 && rg > 0.0 {
        let s = rg / rp;
        let moved = SimilarityTransform::new(s, Rotation::identity(), cg - cp * s)?;
        if median_acc(&moved) < median_acc(&t) {
            t = moved;
        }
    }
    for _ in 0..rounds {
        let moved = t.apply_to_points(pred);
        let pred_tree = KdTree::new(moved.clone());
        let fwd: Vec<usize> = moved
            .par_iter()
            .map(|q| gt_tree.nearest(q).map(|(i, _)| i).unwrap_or(0))
            .collect();
        let (src, dst): (Vec<Vec3>, Vec<Vec3>) = fwd
            .iter()
            .enumerate()
            .filter(|&(i, &j)| pred_tree.nearest(&gt[j]).map(|(k, _)| k) == Some(i))
            .map(|(i, &j)| (pred[i], gt[j]))
            .unzip();
        match umeyama(&src, &dst, true) {
            Ok(next) => t = next,
            Err(_) => break,
        }
    }
    Ok(t)
}

/// Evaluation of a predicted mesh against ground truth; also returns the
/// pre-alignment applied to the prediction.
pub fn eval_recon_detailed(
    pred: &TriangleMesh,
    gt: &TriangleMesh,
    cfg: &ReconConfig,
) -> Result<(ReconReport, SimilarityTransform)> {
    let pred_pts = sample_surface(pred, cfg.n_samples, cfg.seed)?;
    let gt_pts = sample_surface(gt, cfg.n_samples, cfg.seed)?;
    if pred_pts.is_empty() {
        return Err(Error::InvalidInput("n_samples must be positive".into()));
    }
    let align = if cfg.align {
        align_point_sets(&pred_pts, &gt_pts, cfg.procrustes_rounds)?
    } else {
        SimilarityTransform::identity()
    };
    let aligned = align.apply_to_points(&pred_pts);
    let metrics = point_set_metrics(&aligned, &gt_pts, &cfg.thresholds)?;
    Ok((
        ReconReport {
            rec_rate: 100.0,
            thresholds: cfg.thresholds.clone(),
            metrics: Some(metrics),
        },
        align,
    ))
}

pub fn eval_recon(pred: &TriangleMesh, gt: &TriangleMesh, cfg: &ReconConfig) -> Result<ReconReport> {
    eval_recon_detailed(pred, gt, cfg).map(|(r, _)| r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelativeMode {
    /// Each frame relative to the reference frame.
    FrameZero,
    /// Each frame relative to its predecessor.
    Consecutive,
}

#[derive(Clone, Debug)]
pub struct PoseEvalConfig {
    /// (meters, degrees) pairs ordered by inclusion.
    pub pairs: Vec<(f64, f64)>,
    pub relative: RelativeMode,
    /// Estimate a global scale for the prediction even if it is not flagged scale-free.
    pub force_scale: bool,
}

impl Default for PoseEvalConfig {
    fn default() -> Self {
        Self {
            pairs: vec![(0.02, 4.0), (0.05, 10.0), (0.10, 20.0)],
            relative: RelativeMode::FrameZero,
            force_scale: false,
        }
    }
}

/// Relative slack for the inclusive threshold comparisons.
const THRESHOLD_SLACK: f64 = 1e-9;

pub fn within(value: f64, threshold: f64) -> bool {
    value <= threshold * (1.0 + THRESHOLD_SLACK)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseReport {
    /// Per frame; `None` where the frame is the reference or was not evaluated.
    pub rot_error_deg: Vec<Option<f64>>,
    /// Euclidean translation error, meters.
    pub trans_error_m: Vec<Option<f64>>,
    pub det_rate: f64,
    pub pairs: Vec<(f64, f64)>,
    pub quality_at: Vec<f64>,
    pub mean_rot_error_deg: f64,
    /// Mean squared translation error, m².
    pub trans_mse_m2: f64,
    pub trans_rmse_m: f64,
    /// Scale applied to the predicted translations.
    pub gauge_scale: f64,
    pub evaluated_frames: usize,
}

impl PoseReport {
    pub fn records(&self) -> Vec<MetricRecord> {
        let mut out = vec![
            MetricRecord::new("det_rate", "", self.det_rate),
            MetricRecord::new("rot_error_deg", "", self.mean_rot_error_deg),
            MetricRecord::new("trans_mse_m2", "", self.trans_mse_m2),
            MetricRecord::new("trans_rmse_m", "", self.trans_rmse_m),
        ];
        for (&(t, r), &q) in self.pairs.iter().zip(&self.quality_at) {
            out.push(MetricRecord::new(
                "quality",
                format!("{}cm&{}deg", t * 100.0, r),
                q,
            ));
        }
        out
    }
}

/// Global scale taking the predicted camera centers onto the ground truth.
fn gauge_scale(pred: &PoseSequence, gt: &PoseSequence) -> f64 {
    let (p, g): (Vec<Vec3>, Vec<Vec3>) = (0..pred.len())
        .filter(|&i| pred.valid[i] && gt.valid[i])
        .map(|i| (pred.poses[i].center(), gt.poses[i].center()))
        .unzip();
    if p.len() < 2 {
        return 1.0;
    }
    if let Ok(s) = umeyama(&p, &g, true) {
        return s.scale();
    }
    let (cp, cg) = (centroid(&p), centroid(&g));
    let (rp, rg) = (rms_radius(&p, &cp), rms_radius(&g, &cg));
    if rp > 0.0 && rg > 0.0 {
        rg / rp
    } else {
        1.0
    }
}

fn relative(a: &RigidTransform, reference: &RigidTransform) -> RigidTransform {
    a.compose(&reference.inverse())
}

/// Per-frame relative pose errors, detection rate and quality percentages.
pub fn eval_poses(pred: &PoseSequence, gt: &PoseSequence, cfg: &PoseEvalConfig) -> Result<PoseReport> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    let n = gt.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty pose sequence".into()));
    }
    let scale = if pred.scale_free || cfg.force_scale {
        gauge_scale(pred, gt)
    } else {
        1.0
    };
    let scaled = |t: &RigidTransform| RigidTransform::new(t.rotation, t.translation * scale);
    let both = |i: usize| pred.valid[i] && gt.valid[i];
    let reference = (0..n).find(|&i| both(i));

    let mut rot = vec![None; n];
    let mut trans = vec![None; n];
    for i in 0..n {
        if !both(i) {
            continue;
        }
        let r = match cfg.relative {
            RelativeMode::FrameZero => match reference {
                Some(r) if r != i => r,
                _ => continue,
            },
            RelativeMode::Consecutive => {
                if i == 0 || !both(i - 1) {
                    continue;
                }
                i - 1
            }
        };
        let p = relative(&scaled(&pred.poses[i]), &scaled(&pred.poses[r]));
        let g = relative(&gt.poses[i], &gt.poses[r]);
        rot[i] = Some(geodesic_angle(&p.rotation, &g.rotation).to_degrees());
        trans[i] = Some((p.translation - g.translation).norm());
    }

    let evaluated: Vec<(f64, f64)> = rot
        .iter()
        .zip(&trans)
        .filter_map(|(r, t)| Some((r.as_ref().copied()?, t.as_ref().copied()?)))
        .collect();
    let m = evaluated.len();
    let quality_at = cfg
        .pairs
        .iter()
        .map(|&(tt, tr)| {
            let hits = evaluated
                .iter()
                .filter(|&&(r, t)| within(t, tt) && within(r, tr))
                .count();
            if m == 0 {
                0.0
            } else {
                100.0 * hits as f64 / m as f64
            }
        })
        .collect();
    let mean = |f: &dyn Fn(&(f64, f64)) -> f64| {
        if m == 0 {
            0.0
        } else {
            evaluated.iter().map(f).sum::<f64>() / m as f64
        }
    };
    let mse = mean(&|e| e.1 * e.1);
    Ok(PoseReport {
        rot_error_deg: rot,
        trans_error_m: trans,
        det_rate: 100.0 * pred.valid_count() as f64 / n as f64,
        pairs: cfg.pairs.clone(),
        quality_at,
        mean_rot_error_deg: mean(&|e| e.0),
        trans_mse_m2: mse,
        trans_rmse_m: mse.sqrt(),
        gauge_scale: scale,
        evaluated_frames: m,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Stat {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

/// Per-tag statistics keyed by `(metric, threshold)`.
pub type GroupedReport = BTreeMap<String, BTreeMap<(String, String), Stat>>;

/// Mean and population std of every metric per tag. Non-finite values are
/// skipped. `tags` lists groups that must be present (`EmptyGroup` otherwise);
/// when empty, every tag found is reported.
pub fn grouped_report(items: &[(String, Vec<MetricRecord>)], tags: &[String]) -> Result<GroupedReport> {
    let mut values: BTreeMap<String, BTreeMap<(String, String), Vec<f64>>> = BTreeMap::new();
    for tag in tags {
        values.entry(tag.clone()).or_default();
    }
    for (tag, records) in items {
        if !tags.is_empty() && !tags.contains(tag) {
            continue;
        }
        let group = values.entry(tag.clone()).or_default();
        for r in records {
            let slot = group.entry((r.metric.clone(), r.threshold.clone())).or_default();
            if r.value.is_finite() {
                slot.push(r.value);
            }
        }
    }
    let mut out = GroupedReport::new();
    for (tag, metrics) in values {
        if metrics.is_empty() {
            return Err(Error::EmptyGroup(tag));
        }
        let stats = metrics
            .into_iter()
            .filter_map(|(k, v)| Stat::of(&v).map(|s| (k, s)))
            .collect();
        out.insert(tag, stats);
    }
    Ok(out)
}
