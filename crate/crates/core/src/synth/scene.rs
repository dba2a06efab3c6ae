//! Pose pool, rig layout and multi-person scene composition.

use std::f64::consts::TAU;

use log::info;
use nalgebra::{Point3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::corpus::MoCapClip;
use super::render::render_heatmaps;
use super::AugmentConfig;
use crate::centers::PersonAnchors;
use crate::error::{Error, Result};
use crate::geometry::{project, CameraParams, HeatmapStack};
use crate::posenet::loss::DEFAULT_HEATMAP_SIGMA;
use crate::posenet::{GtHeatmap, TrainingSample};
use crate::scalar::Scalar;
use crate::skeleton::{Skeleton3D, NUM_JOINTS};
use crate::volumes::{build_anchor_volumes, build_keypoint_volume, unpose_from_points, VolumeGrid, ANCHOR_SIGMA};

pub const DEFAULT_MIN_MOVE: f64 = 0.05;

/// Drop near-duplicate frames: a frame is kept when some joint moved at least
/// `min_move` meters since the last kept frame of its clip.
pub fn filter_poses(clips: &[MoCapClip], min_move: f64) -> Result<Vec<Skeleton3D>> {
    let mut pool = Vec::new();
    for clip in clips {
        let mut last: Option<&Skeleton3D> = None;
        for f in &clip.frames {
            if last.is_none_or(|l| f.max_displacement(l) >= min_move) {
                pool.push(f.clone());
                last = Some(f);
            }
        }
    }
    let total: usize = clips.iter().map(|c| c.frames.len()).sum();
    info!("pose pool: kept {} of {} frames from {} clips", pool.len(), total, clips.len());
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    Ok(pool)
}

/// Cameras evenly spaced on a circle around the capture area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingRig {
    pub views: usize,
    pub radius: f64,
    pub height: f64,
    /// Height of the common look-at point above the origin.
    pub target_height: f64,
    pub focal: f64,
    pub image_size: (u32, u32),
    pub heatmap_downscale: u32,
    /// Azimuth of the first camera (radians).
    pub phase: f64,
}

impl Default for RingRig {
    fn default() -> Self {
        Self { views: 4, radius: 4.5, height: 2.5, target_height: 1.0, focal: 450.0, image_size: (512, 512), heatmap_downscale: 4, phase: TAU / 8.0 }
    }
}

pub fn ring_rig(spec: &RingRig) -> Result<Vec<CameraParams<f64>>> {
    (0..spec.views)
        .map(|k| {
            let a = spec.phase + TAU * k as f64 / spec.views as f64;
            let pos = Point3::new(spec.radius * a.cos(), spec.radius * a.sin(), spec.height);
            CameraParams::look_at(k, pos, Point3::new(0.0, 0.0, spec.target_height), spec.focal, spec.image_size, spec.heatmap_downscale)
        })
        .collect()
}

/// Axis-aligned ground rectangle where pelvises may be placed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureBounds {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl CaptureBounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x.0..=self.x.1).contains(&x) && (self.y.0..=self.y.1).contains(&y)
    }

    fn sample(&self, rng: &mut (impl Rng + ?Sized)) -> Vector2<f64> {
        Vector2::new(self.x.0 + (self.x.1 - self.x.0) * rng.random::<f64>(), self.y.0 + (self.y.1 - self.y.0) * rng.random::<f64>())
    }

    /// Common shift bringing both points inside, when they fit side by side.
    fn recenter(&self, a: Vector2<f64>, b: Vector2<f64>) -> Vector2<f64> {
        let axis = |lo: f64, hi: f64, p: f64, q: f64| {
            let (min, max) = (p.min(q), p.max(q));
            if min < lo {
                lo - min
            } else if max > hi {
                hi - max
            } else {
                0.0
            }
        };
        Vector2::new(axis(self.x.0, self.x.1, a.x, b.x), axis(self.y.0, self.y.1, a.y, b.y))
    }
}

/// Largest square of pelvis positions around the rig's center for which a body
/// (`reach` meters around the pelvis horizontally, up to `top` meters tall) stays
/// inside every image.
pub fn capture_bounds(cams: &[CameraParams<f64>], reach: f64, top: f64) -> Result<CaptureBounds> {
    if cams.is_empty() {
        return Err(Error::InvalidInput("capture bounds need at least one camera".into()));
    }
    let c = cams.iter().map(|c| c.center().coords.xy()).sum::<Vector2<f64>>() / cams.len() as f64;
    let fits = |half: f64| {
        let r = half + reach;
        [(-r, -r), (-r, r), (r, -r), (r, r)].iter().all(|&(dx, dy)| {
            [0.0, top].iter().all(|&z| {
                let p = Point3::new(c.x + dx, c.y + dy, z);
                cams.iter().all(|cam| project(&p, cam).is_ok_and(|px| cam.in_image(&px)))
            })
        })
    };
    if !fits(0.0) {
        return Err(Error::InvalidInput("no common visible region for the requested body extent".into()));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while fits(hi) && hi < 1e3 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CaptureBounds { x: (c.x - lo, c.x + lo), y: (c.y - lo, c.y + lo) })
}

/// A pair of people pulled to a sampled horizontal pelvis distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attraction {
    pub first: usize,
    pub second: usize,
    pub distance: f64,
}

/// Rigid placement `x -> rotation * x + shift`.
#[derive(Debug, Clone, Copy)]
struct Placement {
    rotation: Rotation3<f64>,
    shift: Vector3<f64>,
}

/// Random yaw, pelvis inside `bounds`, feet on the floor, then attraction of
/// consecutive pairs. Placements are derived from the reference poses.
fn place(reference: &[Skeleton3D], bounds: &CaptureBounds, augment: &AugmentConfig, rng: &mut (impl Rng + ?Sized)) -> (Vec<Placement>, Vec<Attraction>) {
    let mut placements: Vec<Placement> = reference
        .iter()
        .map(|s| {
            let rotation = Rotation3::from_axis_angle(&Vector3::z_axis(), TAU * rng.random::<f64>());
            let target = bounds.sample(rng);
            let pelvis = rotation * s.pelvis();
            Placement { rotation, shift: Vector3::new(target.x - pelvis.x, target.y - pelvis.y, -s.lowest_z()) }
        })
        .collect();
    let pelvis_xy = |k: usize, pl: &[Placement]| (pl[k].rotation * reference[k].pelvis() + pl[k].shift).coords.xy();
    let mut attractions = Vec::new();
    for first in (0..reference.len().saturating_sub(1)).step_by(2) {
        let second = first + 1;
        if !(augment.attraction_probability > 0.0 && rng.random_bool(augment.attraction_probability)) {
            continue;
        }
        let (lo, hi) = augment.attraction_range;
        let distance = lo + (hi - lo) * rng.random::<f64>();
        let (a, b) = (pelvis_xy(first, &placements), pelvis_xy(second, &placements));
        let dir = match (b - a).try_normalize(1e-12) {
            Some(d) => d,
            None => {
                let t = TAU * rng.random::<f64>();
                Vector2::new(t.cos(), t.sin())
            }
        };
        let mid = 0.5 * (a + b);
        let (na, nb) = (mid - 0.5 * distance * dir, mid + 0.5 * distance * dir);
        let fix = bounds.recenter(na, nb);
        for (k, from, to) in [(first, a, na + fix), (second, b, nb + fix)] {
            let d = to - from;
            placements[k].shift += Vector3::new(d.x, d.y, 0.0);
        }
        attractions.push(Attraction { first, second, distance });
    }
    (placements, attractions)
}

/// `n` poses drawn uniformly from `pool` and placed in the capture area.
/// Person ids are `0..n`.
pub fn compose_scene(
    pool: &[Skeleton3D],
    bounds: &CaptureBounds,
    n: usize,
    augment: &AugmentConfig,
    rng: &mut (impl Rng + ?Sized),
) -> Result<(Vec<Skeleton3D>, Vec<Attraction>)> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let picked: Vec<Skeleton3D> = (0..n).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect();
    let (placements, attractions) = place(&picked, bounds, augment, rng);
    let people = picked
        .iter()
        .zip(&placements)
        .enumerate()
        .map(|(k, (s, pl))| Skeleton3D { id: k as u32, ..s.transformed(&pl.rotation, &pl.shift) })
        .collect();
    Ok((people, attractions))
}

/// One synthetic multi-view frame.
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub rig: Vec<CameraParams<f64>>,
    pub people: Vec<Skeleton3D>,
    pub heatmaps: HeatmapStack,
    /// Ground-truth pelvis and neck of every person.
    pub anchors: Vec<PersonAnchors>,
    pub dropped_views: Vec<usize>,
    pub attractions: Vec<Attraction>,
}

fn finish(rig: &[CameraParams<f64>], people: Vec<Skeleton3D>, attractions: Vec<Attraction>, augment: &AugmentConfig, rng: &mut (impl Rng + ?Sized)) -> SceneSample {
    let (heatmaps, dropped_views) = render_heatmaps(&people, rig, augment, rng);
    let anchors = people.iter().map(|s| PersonAnchors::new(s.id, s.pelvis(), s.neck())).collect();
    SceneSample { rig: rig.to_vec(), people, heatmaps, anchors, dropped_views, attractions }
}

/// Generator for sample `index` of a dataset seeded with `seed`; independent of
/// the order in which samples are produced.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Scene `index` of the dataset defined by `augment.seed`. The returned generator
/// continues the sample's stream (for anchor jitter).
pub fn generate_scene(
    pool: &[Skeleton3D],
    rig: &[CameraParams<f64>],
    bounds: &CaptureBounds,
    n: usize,
    augment: &AugmentConfig,
    index: u64,
) -> Result<(SceneSample, ChaCha8Rng)> {
    augment.validate()?;
    let mut rng = sample_rng(augment.seed, index);
    let (people, attractions) = compose_scene(pool, bounds, n, augment, &mut rng)?;
    Ok((finish(rig, people, attractions, augment, &mut rng), rng))
}

/// `frames` consecutive frames: every person follows one clip (chosen uniformly,
/// random start) under a fixed placement computed on its first frame.
#[allow(clippy::too_many_arguments)]
pub fn generate_sequence(
    clips: &[MoCapClip],
    rig: &[CameraParams<f64>],
    bounds: &CaptureBounds,
    n: usize,
    augment: &AugmentConfig,
    frames: usize,
    sequence: u64,
) -> Result<Vec<SceneSample>> {
    augment.validate()?;
    let usable: Vec<&MoCapClip> = clips.iter().filter(|c| c.frames.len() >= frames && frames > 0).collect();
    if usable.is_empty() {
        return Err(Error::InvalidInput(format!("no clip has {frames} frames")));
    }
    let mut rng = sample_rng(augment.seed, sequence);
    let tracks: Vec<&[Skeleton3D]> = (0..n)
        .map(|_| {
            let clip = usable[rng.random_range(0..usable.len())];
            let start = rng.random_range(0..=clip.frames.len() - frames);
            &clip.frames[start..start + frames]
        })
        .collect();
    let first: Vec<Skeleton3D> = tracks.iter().map(|t| t[0].clone()).collect();
    let (placements, attractions) = place(&first, bounds, augment, &mut rng);
    Ok((0..frames)
        .map(|f| {
            let people = tracks
                .iter()
                .zip(&placements)
                .enumerate()
                .map(|(k, (t, pl))| Skeleton3D { id: k as u32, ..t[f].transformed(&pl.rotation, &pl.shift) })
                .collect();
            finish(rig, people, attractions.clone(), augment, &mut rng)
        })
        .collect())
}

/// Network inputs and supervision for `person` of `scene`. Anchors of all
/// people receive isotropic Gaussian jitter of std `augment.center_jitter`.
pub fn make_training_sample<T: Scalar>(
    scene: &SceneSample,
    person: usize,
    augment: &AugmentConfig,
    grid: &VolumeGrid,
    rng: &mut (impl Rng + ?Sized),
) -> Result<TrainingSample<T>> {
    let noise = Normal::new(0.0, augment.center_jitter).map_err(|e| Error::InvalidInput(format!("center jitter: {e}")))?;
    let mut jitter = |p: Point3<f64>| p + Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
    let anchors: Vec<PersonAnchors> = scene.anchors.iter().map(|a| PersonAnchors::new(a.id, jitter(a.pelvis), jitter(a.neck))).collect();
    let own = &anchors[person];
    let others: Vec<PersonAnchors> = anchors.iter().enumerate().filter(|(k, _)| *k != person).map(|(_, a)| a.clone()).collect();
    let unpose = unpose_from_points(&own.pelvis, &own.neck)?;
    let features = build_keypoint_volume::<T>(grid, &unpose, &scene.heatmaps, &scene.rig, own.id)?;
    let (z, z_other) = build_anchor_volumes::<T>(grid, &unpose, own, &others, ANCHOR_SIGMA)?;
    let standard: Vec<Vec<Point3<f64>>> = scene.people.iter().map(|s| s.joints.iter().map(|p| unpose.apply(p)).collect()).collect();
    Ok(TrainingSample {
        features: features.values,
        anchor_own: z.values,
        anchor_others: z_other.values,
        heatmap: GtHeatmap::new(grid, &standard, NUM_JOINTS, DEFAULT_HEATMAP_SIGMA),
        target: scene.people[person].joints.to_vec(),
        unpose,
    })
}
