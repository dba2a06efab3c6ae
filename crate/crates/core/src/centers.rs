//! Per-frame recovery of every person's pelvis and neck anchors.
//!
//! Anchors come either from greedy score-ordered triangulation of heatmap peaks
//! or, for sequences, by re-projecting the previous frame's anchors and snapping
//! them to nearby peaks.

use nalgebra::{Point2, Point3};

use crate::geometry::{project, reprojection_error, triangulate, CameraParams, HeatmapStack};
use crate::skeleton::{NECK, PELVIS};

/// Thresholds shared by detection and tracking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterConfig {
    /// Reprojection gate in full-resolution image pixels.
    pub gate_px: f64,
    /// Minimum heatmap response of a candidate peak.
    pub tau_score: f64,
    /// Admissible pelvis-to-neck distance (meters).
    pub neck_distance: (f64, f64),
    /// A lost track is revived by a re-detection within this distance (meters).
    pub reacquire_radius: f64,
}

impl Default for CenterConfig {
    fn default() -> Self {
        Self { gate_px: 15.0, tau_score: 0.3, neck_distance: (0.15, 0.8), reacquire_radius: 0.5 }
    }
}

/// Heatmap peak in one view, in image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate2D {
    pub view: usize,
    pub position: Point2<f64>,
    pub score: f64,
    pub joint: usize,
}

/// One triangulated anchor joint (pelvis or neck) of an unknown person.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPoint {
    pub joint: usize,
    pub point: Point3<f64>,
    /// Indices into the candidate list that support this point.
    pub support: Vec<usize>,
    pub views: Vec<usize>,
    pub mean_error: f64,
    pub score: f64,
}

/// Pelvis and neck of one person.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonAnchors {
    pub id: u32,
    pub pelvis: Point3<f64>,
    pub neck: Point3<f64>,
    pub views: Vec<usize>,
    /// Mean reprojection error over the supporting observations (pixels).
    pub mean_error: f64,
    pub score: f64,
}

impl PersonAnchors {
    pub fn new(id: u32, pelvis: Point3<f64>, neck: Point3<f64>) -> Self {
        Self { id, pelvis, neck, views: Vec::new(), mean_error: 0.0, score: 1.0 }
    }
}

/// Local maxima of one joint's maps above `tau_score`, refined to sub-pixel
/// precision and sorted by descending score.
pub fn extract_candidates(heatmaps: &HeatmapStack, cams: &[CameraParams<f64>], joint: usize, tau_score: f64) -> Vec<Candidate2D> {
    let mut out = Vec::new();
    for (view, cam) in cams.iter().enumerate().take(heatmaps.num_views()) {
        let map = heatmaps.map(view, joint);
        let (w, h) = (map.width, map.height);
        let at = |x: isize, y: isize| -> f32 {
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                0.0
            } else {
                map.data[y as usize * w + x as usize]
            }
        };
        for y in 0..h as isize {
            for x in 0..w as isize {
                let v = at(x, y);
                if (v as f64) < tau_score || v <= 0.0 {
                    continue;
                }
                // plateaus resolve to their first node in raster order
                let is_peak = (-1..=1).all(|dy| {
                    (-1..=1).all(|dx| {
                        if dx == 0 && dy == 0 {
                            return true;
                        }
                        let n = at(x + dx, y + dy);
                        let before = dy < 0 || (dy == 0 && dx < 0);
                        if before {
                            v > n
                        } else {
                            v >= n
                        }
                    })
                });
                if !is_peak {
                    continue;
                }
                let mut patch = [[0.0f64; 3]; 3];
                for (j, row) in patch.iter_mut().enumerate() {
                    for (i, cell) in row.iter_mut().enumerate() {
                        *cell = at(x + i as isize - 1, y + j as isize - 1) as f64;
                    }
                }
                let (ox, oy) = quadratic_peak_offset(&patch);
                let hm = Point2::new(x as f64 + ox, y as f64 + oy);
                out.push(Candidate2D { view, position: cam.from_heatmap(&hm), score: v as f64, joint });
            }
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out
}

/// Sub-pixel offset of a 3x3 peak from a least-squares quadratic fit to the
/// log-responses (exact for Gaussian blobs). Offsets are clamped to half a pixel.
fn quadratic_peak_offset(patch: &[[f64; 3]; 3]) -> (f64, f64) {
    let (mut b, mut c, mut d, mut e, mut f) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (j, row) in patch.iter().enumerate() {
        for (i, &val) in row.iter().enumerate() {
            let (x, y) = (i as f64 - 1.0, j as f64 - 1.0);
            let l = val.max(1e-6).ln();
            b += x * l / 6.0;
            c += y * l / 6.0;
            d += (x * x - 2.0 / 3.0) * l / 2.0;
            f += (y * y - 2.0 / 3.0) * l / 2.0;
            e += x * y * l / 4.0;
        }
    }
    // l ~ a + b x + c y + d x^2 + e x y + f y^2; stationary point solves H [x y] = -[b c]
    let (hxx, hxy, hyy) = (2.0 * d, e, 2.0 * f);
    let det = hxx * hyy - hxy * hxy;
    if !(hxx < 0.0 && det > 1e-12) {
        return (0.0, 0.0);
    }
    let ox = (-b * hyy + c * hxy) / det;
    let oy = (-c * hxx + b * hxy) / det;
    (ox.clamp(-0.5, 0.5), oy.clamp(-0.5, 0.5))
}

/// Nearest unused candidate of `view` within `gate` pixels of `target`.
fn nearest_unused(candidates: &[Candidate2D], used: &[bool], view: usize, target: &Point2<f64>, gate: f64) -> Option<(usize, f64)> {
    candidates
        .iter()
        .enumerate()
        .filter(|(i, c)| !used[*i] && c.view == view)
        .map(|(i, c)| (i, (c.position - target).norm()))
        .filter(|(_, d)| *d <= gate)
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

fn observations(candidates: &[Candidate2D], support: &[usize]) -> Vec<(usize, Point2<f64>)> {
    support.iter().map(|&i| (candidates[i].view, candidates[i].position)).collect()
}

/// Re-triangulate from all supporters, shedding the worst one while any error
/// exceeds the gate. Returns `None` when fewer than two views remain.
fn refine(candidates: &[Candidate2D], mut support: Vec<usize>, cams: &[CameraParams<f64>], gate: f64) -> Option<(Point3<f64>, Vec<usize>, f64)> {
    loop {
        if support.len() < 2 {
            return None;
        }
        let obs = observations(candidates, &support);
        let point = triangulate(&obs, cams).ok()?;
        let errors = reprojection_error(&point, &obs, cams);
        let (worst, worst_err) = errors.iter().copied().enumerate().max_by(|a, b| a.1.total_cmp(&b.1))?;
        if worst_err <= gate {
            let mean = errors.iter().sum::<f64>() / errors.len() as f64;
            return Some((point, support, mean));
        }
        support.remove(worst);
    }
}

/// Greedy score-ordered triangulation of one joint's candidates.
///
/// Candidates are visited in descending score order. For each seed the partner
/// from another view whose triangulated point gathers the most views (nearest
/// unused candidate within `gate_px` of its projection) is kept, the point is
/// re-triangulated from all supporters and the supporters are consumed. Seeds
/// without any consistent partner are skipped.
pub fn greedy_reconstruct(candidates: &[Candidate2D], cams: &[CameraParams<f64>], gate_px: f64) -> Vec<AnchorPoint> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[b].score.total_cmp(&candidates[a].score).then(a.cmp(&b)));
    let mut used = vec![false; candidates.len()];
    let mut out = Vec::new();
    for &seed in &order {
        if used[seed] {
            continue;
        }
        // (support, views supported, summed score, mean error)
        let mut best: Option<(Vec<usize>, usize, f64, f64)> = None;
        for &partner in &order {
            if used[partner] || partner == seed || candidates[partner].view == candidates[seed].view {
                continue;
            }
            let pair = [seed, partner];
            let obs = observations(candidates, &pair);
            let Ok(point) = triangulate(&obs, cams) else { continue };
            let errs = reprojection_error(&point, &obs, cams);
            if errs.iter().any(|e| *e > gate_px) {
                continue;
            }
            let mut support = pair.to_vec();
            for view in 0..cams.len() {
                if view == candidates[seed].view || view == candidates[partner].view {
                    continue;
                }
                let Ok(p) = project(&point, &cams[view]) else { continue };
                if let Some((i, _)) = nearest_unused(candidates, &used, view, &p, gate_px) {
                    support.push(i);
                }
            }
            let score: f64 = support.iter().map(|&i| candidates[i].score).sum();
            let mean_err = reprojection_error(&point, &observations(candidates, &support), cams).iter().sum::<f64>() / support.len() as f64;
            let better = match &best {
                None => true,
                Some((_, n, s, e)) => support.len() > *n || (support.len() == *n && (score > *s || (score == *s && mean_err < *e))),
            };
            if better {
                best = Some((support.clone(), support.len(), score, mean_err));
            }
        }
        let Some((support, ..)) = best else { continue };
        let Some((point, support, mean_error)) = refine(candidates, support, cams, gate_px) else { continue };
        if !support.contains(&seed) {
            continue;
        }
        for &i in &support {
            used[i] = true;
        }
        let mut views: Vec<usize> = support.iter().map(|&i| candidates[i].view).collect();
        views.sort_unstable();
        let score = support.iter().map(|&i| candidates[i].score).sum::<f64>() / support.len() as f64;
        out.push(AnchorPoint { joint: candidates[seed].joint, point, support, views, mean_error, score });
    }
    out
}

/// Greedy nearest-neighbour pairing of pelvis and neck points within the
/// anatomical distance bounds. Unpaired pelvises are dropped; ids follow
/// descending pelvis score.
pub fn pair_anchors(pelvis: &[AnchorPoint], neck: &[AnchorPoint], bounds: (f64, f64)) -> Vec<PersonAnchors> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pelvis.iter().enumerate() {
        for (j, n) in neck.iter().enumerate() {
            let d = (n.point - p.point).norm();
            if d >= bounds.0 && d <= bounds.1 {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pelvis_taken = vec![false; pelvis.len()];
    let mut neck_taken = vec![false; neck.len()];
    let mut matched = Vec::new();
    for (_, i, j) in pairs {
        if pelvis_taken[i] || neck_taken[j] {
            continue;
        }
        pelvis_taken[i] = true;
        neck_taken[j] = true;
        matched.push((i, j));
    }
    matched.sort_by(|a, b| pelvis[b.0].score.total_cmp(&pelvis[a.0].score).then(a.0.cmp(&b.0)));
    matched
        .into_iter()
        .enumerate()
        .map(|(id, (i, j))| combine(id as u32, &pelvis[i], &neck[j]))
        .collect()
}

fn combine(id: u32, pelvis: &AnchorPoint, neck: &AnchorPoint) -> PersonAnchors {
    let mut views = pelvis.views.clone();
    views.extend(&neck.views);
    views.sort_unstable();
    views.dedup();
    let n = (pelvis.support.len() + neck.support.len()) as f64;
    let mean_error = (pelvis.mean_error * pelvis.support.len() as f64 + neck.mean_error * neck.support.len() as f64) / n;
    PersonAnchors { id, pelvis: pelvis.point, neck: neck.point, views, mean_error, score: 0.5 * (pelvis.score + neck.score) }
}

/// Anchors of every person from one frame's candidates, without temporal context.
pub fn detect_from_candidates(pelvis: &[Candidate2D], neck: &[Candidate2D], cams: &[CameraParams<f64>], config: &CenterConfig) -> Vec<PersonAnchors> {
    let p = greedy_reconstruct(pelvis, cams, config.gate_px);
    let n = greedy_reconstruct(neck, cams, config.gate_px);
    pair_anchors(&p, &n, config.neck_distance)
}

pub fn detect_anchors(heatmaps: &HeatmapStack, cams: &[CameraParams<f64>], config: &CenterConfig) -> Vec<PersonAnchors> {
    let pelvis = extract_candidates(heatmaps, cams, PELVIS, config.tau_score);
    let neck = extract_candidates(heatmaps, cams, NECK, config.tau_score);
    detect_from_candidates(&pelvis, &neck, cams, config)
}

/// Snap a previous 3D anchor onto the current frame's candidates.
fn track_point(prev: &Point3<f64>, candidates: &[Candidate2D], used: &mut [bool], cams: &[CameraParams<f64>], gate: f64) -> Option<AnchorPoint> {
    let mut support = Vec::new();
    for (view, cam) in cams.iter().enumerate() {
        let Ok(p) = project(prev, cam) else { continue };
        if let Some((i, _)) = nearest_unused(candidates, used, view, &p, gate) {
            support.push(i);
        }
    }
    let (point, support, mean_error) = refine(candidates, support, cams, gate)?;
    for &i in &support {
        used[i] = true;
    }
    let mut views: Vec<usize> = support.iter().map(|&i| candidates[i].view).collect();
    views.sort_unstable();
    let score = support.iter().map(|&i| candidates[i].score).sum::<f64>() / support.len() as f64;
    Some(AnchorPoint { joint: candidates[support[0]].joint, point, support, views, mean_error, score })
}

/// Propagate the previous frame's people onto the current candidates.
///
/// People whose pelvis or neck cannot be snapped in at least two views are
/// re-detected greedily from the leftover candidates; a re-detection close to a
/// lost person's previous pelvis inherits that id, others get fresh ids.
pub fn track_from_candidates(
    previous: &[PersonAnchors],
    pelvis: &[Candidate2D],
    neck: &[Candidate2D],
    cams: &[CameraParams<f64>],
    config: &CenterConfig,
) -> Vec<PersonAnchors> {
    let mut used_p = vec![false; pelvis.len()];
    let mut used_n = vec![false; neck.len()];
    let mut out = Vec::new();
    let mut lost = Vec::new();
    for person in previous {
        let snapshot = (used_p.clone(), used_n.clone());
        let tp = track_point(&person.pelvis, pelvis, &mut used_p, cams, config.gate_px);
        let tn = track_point(&person.neck, neck, &mut used_n, cams, config.gate_px);
        match (tp, tn) {
            (Some(p), Some(n)) if (n.point - p.point).norm() >= config.neck_distance.0 && (n.point - p.point).norm() <= config.neck_distance.1 => {
                out.push(combine(person.id, &p, &n));
            }
            _ => {
                // release whatever this person claimed
                (used_p, used_n) = snapshot;
                lost.push(person);
            }
        }
    }
    let leftover_p: Vec<Candidate2D> = pelvis.iter().zip(&used_p).filter(|(_, u)| !**u).map(|(c, _)| *c).collect();
    let leftover_n: Vec<Candidate2D> = neck.iter().zip(&used_n).filter(|(_, u)| !**u).map(|(c, _)| *c).collect();
    let mut next_id = previous.iter().map(|p| p.id + 1).max().unwrap_or(0);
    let mut lost_taken = vec![false; lost.len()];
    for mut person in detect_from_candidates(&leftover_p, &leftover_n, cams, config) {
        let revived = lost
            .iter()
            .enumerate()
            .filter(|(k, _)| !lost_taken[*k])
            .map(|(k, l)| (k, (l.pelvis - person.pelvis).norm()))
            .filter(|(_, d)| *d <= config.reacquire_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match revived {
            Some((k, _)) => {
                lost_taken[k] = true;
                person.id = lost[k].id;
            }
            None => {
                person.id = next_id;
                next_id += 1;
            }
        }
        out.push(person);
    }
    out.sort_by_key(|p| p.id);
    out
}

pub fn track_anchors(previous: &[PersonAnchors], heatmaps: &HeatmapStack, cams: &[CameraParams<f64>], config: &CenterConfig) -> Vec<PersonAnchors> {
    let pelvis = extract_candidates(heatmaps, cams, PELVIS, config.tau_score);
    let neck = extract_candidates(heatmaps, cams, NECK, config.tau_score);
    track_from_candidates(previous, &pelvis, &neck, cams, config)
}

/// Frame-by-frame anchor estimation: greedy detection on the first frame,
/// tracking afterwards when enabled.
#[derive(Debug, Clone)]
pub struct AnchorTracker {
    pub config: CenterConfig,
    pub tracking: bool,
    previous: Option<Vec<PersonAnchors>>,
}

impl AnchorTracker {
    pub fn new(config: CenterConfig, tracking: bool) -> Self {
        Self { config, tracking, previous: None }
    }

    /// Whether the next frame will be tracked rather than detected.
    pub fn will_track(&self) -> bool {
        self.tracking && self.previous.is_some()
    }

    pub fn update(&mut self, heatmaps: &HeatmapStack, cams: &[CameraParams<f64>]) -> Vec<PersonAnchors> {
        let anchors = match (&self.previous, self.tracking) {
            (Some(prev), true) => track_anchors(prev, heatmaps, cams, &self.config),
            _ => detect_anchors(heatmaps, cams, &self.config),
        };
        self.previous = Some(anchors.clone());
        anchors
    }
}
