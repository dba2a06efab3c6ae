//! Pose matching and accuracy metrics (MPJPE, PCK, AP, center error).

use std::collections::BTreeMap;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{joint_group, Skeleton3D, NUM_JOINTS};

/// Default PCK threshold (mm).
pub const PCK_THRESHOLD_MM: f64 = 50.0;
pub const AP_THRESHOLDS_MM: [f64; 3] = [25.0, 50.0, 100.0];

/// Curve thresholds 0, 10, ..., 100 mm.
pub fn sweep_thresholds() -> Vec<f64> {
    (0..=10).map(|k| 10.0 * k as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    /// Index into the estimate list.
    pub estimate: usize,
    /// Index into the ground-truth list.
    pub gt: usize,
    pub estimate_id: u32,
    pub gt_id: u32,
    pub score: f64,
    pub distances_mm: [f64; NUM_JOINTS],
}

impl MatchedPair {
    pub fn mpjpe(&self) -> f64 {
        self.distances_mm.iter().sum::<f64>() / NUM_JOINTS as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    /// Unmatched estimates as `(index, score)`.
    pub false_positives: Vec<(usize, f64)>,
    /// Unmatched ground-truth indices.
    pub misses: Vec<usize>,
    pub gt_count: usize,
}

fn mean_distance(a: &Skeleton3D, b: &Skeleton3D) -> f64 {
    a.joints.iter().zip(&b.joints).map(|(p, q)| (p - q).norm()).sum::<f64>() / NUM_JOINTS as f64
}

/// Index of the closest ground truth by mean joint distance (first on ties).
pub fn nearest_gt(estimate: &Skeleton3D, gt: &[Skeleton3D]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (g, s) in gt.iter().enumerate() {
        let d = mean_distance(estimate, s);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((g, d));
        }
    }
    best.map(|(g, _)| g)
}

/// Every estimate claims its nearest ground truth; when several claim the same
/// one, the highest score wins (earlier index on ties) and the rest are false
/// positives.
pub fn match_poses(estimates: &[Skeleton3D], gt: &[Skeleton3D]) -> MatchResult {
    let mut owner: Vec<Option<usize>> = vec![None; gt.len()];
    let mut false_positives = Vec::new();
    for (e, est) in estimates.iter().enumerate() {
        let Some(g) = nearest_gt(est, gt) else {
            false_positives.push((e, est.score()));
            continue;
        };
        match owner[g] {
            Some(prev) if estimates[prev].score() >= est.score() => false_positives.push((e, est.score())),
            Some(prev) => {
                false_positives.push((prev, estimates[prev].score()));
                owner[g] = Some(e);
            }
            None => owner[g] = Some(e),
        }
    }
    false_positives.sort_by_key(|&(e, _)| e);
    let mut pairs = Vec::new();
    let mut misses = Vec::new();
    for (g, o) in owner.iter().enumerate() {
        match *o {
            Some(e) => {
                let mut distances_mm = [0.0; NUM_JOINTS];
                for (j, d) in distances_mm.iter_mut().enumerate() {
                    *d = (estimates[e].joints[j] - gt[g].joints[j]).norm() * 1e3;
                }
                pairs.push(MatchedPair { estimate: e, gt: g, estimate_id: estimates[e].id, gt_id: gt[g].id, score: estimates[e].score(), distances_mm });
            }
            None => misses.push(g),
        }
    }
    pairs.sort_by_key(|p| p.estimate);
    MatchResult { pairs, false_positives, misses, gt_count: gt.len() }
}

impl MatchResult {
    pub fn estimate_count(&self) -> usize {
        self.pairs.len() + self.false_positives.len()
    }

    /// Mean joint error over all matched pairs (mm).
    pub fn mpjpe(&self) -> Result<f64> {
        mpjpe(std::slice::from_ref(self))
    }

    pub fn pck(&self, threshold_mm: f64) -> f64 {
        pck(std::slice::from_ref(self), threshold_mm)
    }
}

/// Mean joint error pooled over frames (mm).
pub fn mpjpe(results: &[MatchResult]) -> Result<f64> {
    let (sum, n) = results.iter().flat_map(|r| &r.pairs).fold((0.0, 0usize), |(s, n), p| (s + p.distances_mm.iter().sum::<f64>(), n + NUM_JOINTS));
    if n == 0 {
        return Err(Error::NoMatches);
    }
    Ok(sum / n as f64)
}

/// Percentage of ground-truth joints estimated strictly closer than `threshold_mm`,
/// restricted to `joints`. Joints of missed people count as incorrect.
fn pck_over(results: &[MatchResult], threshold_mm: f64, joints: &[usize]) -> f64 {
    let total: usize = results.iter().map(|r| r.gt_count).sum::<usize>() * joints.len();
    if total == 0 {
        return 0.0;
    }
    let hits: usize = results.iter().flat_map(|r| &r.pairs).map(|p| joints.iter().filter(|&&j| p.distances_mm[j] < threshold_mm).count()).sum();
    100.0 * hits as f64 / total as f64
}

pub fn pck(results: &[MatchResult], threshold_mm: f64) -> f64 {
    let all: Vec<usize> = (0..NUM_JOINTS).collect();
    pck_over(results, threshold_mm, &all)
}

pub fn pck_per_joint(results: &[MatchResult], threshold_mm: f64) -> [f64; NUM_JOINTS] {
    std::array::from_fn(|j| pck_over(results, threshold_mm, &[j]))
}

/// Joints sharing a group name (left and right merged), in first-appearance order.
pub fn joint_groups() -> Vec<(&'static str, Vec<usize>)> {
    let mut groups: Vec<(&'static str, Vec<usize>)> = Vec::new();
    for j in 0..NUM_JOINTS {
        let name = joint_group(j);
        match groups.iter_mut().find(|(n, _)| *n == name) {
            Some((_, v)) => v.push(j),
            None => groups.push((name, vec![j])),
        }
    }
    groups
}

pub fn pck_per_group(results: &[MatchResult], threshold_mm: f64) -> BTreeMap<String, f64> {
    joint_groups().into_iter().map(|(name, joints)| (name.to_string(), pck_over(results, threshold_mm, &joints))).collect()
}

/// `(threshold, pck)` for every threshold.
pub fn pck_sweep(results: &[MatchResult], thresholds: &[f64]) -> Vec<(f64, f64)> {
    thresholds.iter().map(|&t| (t, pck(results, t))).collect()
}

/// Estimates ranked by score over all frames; a matched estimate whose MPJPE is
/// below the threshold is a true positive. Area under the precision/recall
/// curve with all-point interpolation, in percent.
pub fn average_precision(results: &[MatchResult], threshold_mm: f64) -> f64 {
    let positives: usize = results.iter().map(|r| r.gt_count).sum();
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    for r in results {
        let mut frame: Vec<(usize, f64, bool)> = r.pairs.iter().map(|p| (p.estimate, p.score, p.mpjpe() < threshold_mm)).collect();
        frame.extend(r.false_positives.iter().map(|&(e, s)| (e, s, false)));
        frame.sort_by_key(|&(e, _, _)| e);
        ranked.extend(frame.into_iter().map(|(_, s, tp)| (s, tp)));
    }
    if positives == 0 || ranked.is_empty() {
        return 0.0;
    }
    // stable: equal scores keep frame and index order
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(ranked.len());
    for (k, &(_, hit)) in ranked.iter().enumerate() {
        tp += hit as usize;
        curve.push((tp as f64 / positives as f64, tp as f64 / (k + 1) as f64));
    }
    let mut best = 0.0f64;
    for point in curve.iter_mut().rev() {
        best = best.max(point.1);
        point.1 = best;
    }
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for &(recall, precision) in &curve {
        ap += (recall - last_recall) * precision;
        last_recall = recall;
    }
    100.0 * ap
}

/// Mean distance between matched pelvises (mm). Pairs are taken greedily by
/// increasing distance, each point used once. `None` when either side is empty.
pub fn center_error(estimated: &[Point3<f64>], gt: &[Point3<f64>]) -> Option<f64> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (e, p) in estimated.iter().enumerate() {
        for (g, q) in gt.iter().enumerate() {
            cand.push(((p - q).norm(), e, g));
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut used_e, mut used_g) = (vec![false; estimated.len()], vec![false; gt.len()]);
    let mut dists = Vec::new();
    for (d, e, g) in cand {
        if !used_e[e] && !used_g[g] {
            used_e[e] = true;
            used_g[g] = true;
            dists.push(d);
        }
    }
    (!dists.is_empty()).then(|| 1e3 * dists.iter().sum::<f64>() / dists.len() as f64)
}

/// Everything reported for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub gt_poses: usize,
    pub estimated_poses: usize,
    pub matched_poses: usize,
    pub mpjpe_mm: Option<f64>,
    pub pck_threshold_mm: f64,
    pub pck: f64,
    /// `(threshold_mm, ap)`.
    pub average_precision: Vec<(f64, f64)>,
    pub per_joint_pck: BTreeMap<String, f64>,
    pub per_group_pck: BTreeMap<String, f64>,
    pub sweep: Vec<(f64, f64)>,
    pub group_sweeps: BTreeMap<String, Vec<(f64, f64)>>,
}

pub fn report(results: &[MatchResult], pck_threshold_mm: f64, thresholds: &[f64]) -> EvalReport {
    let per_joint = pck_per_joint(results, pck_threshold_mm);
    EvalReport {
        frames: results.len(),
        gt_poses: results.iter().map(|r| r.gt_count).sum(),
        estimated_poses: results.iter().map(|r| r.estimate_count()).sum(),
        matched_poses: results.iter().map(|r| r.pairs.len()).sum(),
        mpjpe_mm: mpjpe(results).ok(),
        pck_threshold_mm,
        pck: pck(results, pck_threshold_mm),
        average_precision: AP_THRESHOLDS_MM.iter().map(|&t| (t, average_precision(results, t))).collect(),
        per_joint_pck: crate::skeleton::JOINT_NAMES.iter().zip(per_joint).map(|(n, v)| (n.to_string(), v)).collect(),
        per_group_pck: pck_per_group(results, pck_threshold_mm),
        sweep: pck_sweep(results, thresholds),
        group_sweeps: joint_groups()
            .into_iter()
            .map(|(name, joints)| (name.to_string(), thresholds.iter().map(|&t| (t, pck_over(results, t, &joints))).collect()))
            .collect(),
    }
}
