//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any of them fails.
//!
//! `VOLMOCAP_ACCEPTANCE=1,5,8` restricts the run to the listed criteria.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{Point2, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volmocap::centers::{detect_anchors, CenterConfig, PersonAnchors};
use volmocap::eval::{center_error, match_poses, mpjpe, pck, MatchResult, PCK_THRESHOLD_MM};
use volmocap::geometry::{project, reprojection_error, triangulate, CameraParams, HeatmapStack};
use volmocap::posenet::layers::{ConvKind, VoxelConv};
use volmocap::posenet::tensor::VoxelTensor;
use volmocap::posenet::{infer_frame, soft_argmax, temporal_filter, train, GtHeatmap, InferenceOptions, LossConfig, NetConfig, PoseNet, TrainConfig, TrainingSample};
use volmocap::skeleton::{Skeleton3D, NUM_JOINTS};
use volmocap::synth::{builtin_corpus, capture_bounds, filter_poses, generate_scene, generate_sequence, make_training_sample, ring_rig, AugmentConfig, CaptureBounds, RingRig, SceneSample, DEFAULT_MIN_MOVE};
use volmocap::volumes::{anchor_response, build_anchor_volumes, build_keypoint_volume, compute_unpose, unpose_from_points, FeatureVolume, UnposeTransform, VolumeGrid, VolumeKind, ANCHOR_SIGMA};
use volmocap::Camera;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const PITCH_MM: f64 = 62.5;
const TEMPORAL_RADIUS: f64 = 0.05;

// sample-stream seeds; training and test sets never share one
const SEED_TRAIN: u64 = 11;
const SEED_TEST: u64 = 12;
const SEED_NOISY: u64 = 13;
const SEED_CLOSE_TRAIN: u64 = 21;
const SEED_CLOSE_TEST: u64 = 22;
const SEED_SEQUENCE: u64 = 31;

const SINGLE_TRAIN: usize = 500;
const SINGLE_TEST: usize = 100;
const CLOSE_TRAIN: usize = 200;
const CLOSE_TEST: usize = 60;
const CLOSE_EPOCHS: usize = 25;
const VIEW_FRAMES: usize = 200;
const SEQUENCE_FRAMES: usize = 30;

/// Adam settings for the desk-scale training sets: a few hundred samples
/// need more and larger steps than the default schedule provides.
fn train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig { learning_rate: 1e-3, batch_size: 8, epochs, seed, ..TrainConfig::default() }
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Shared fixtures and lazily trained models.
struct Lab {
    pool: Vec<Skeleton3D>,
    rig: Vec<Camera>,
    bounds: CaptureBounds,
    grid: VolumeGrid,
    single: Option<(PoseNet<f32>, f64)>,
    close: Option<(PoseNet<f32>, PoseNet<f32>)>,
}

impl Lab {
    fn new() -> Self {
        let rig = ring_rig(&RingRig::default()).expect("default ring");
        let bounds = capture_bounds(&rig, 0.6, 2.1).expect("capture area");
        let pool = filter_poses(&builtin_corpus(), DEFAULT_MIN_MOVE).expect("pose pool");
        Self { pool, rig, bounds, grid: VolumeGrid::default(), single: None, close: None }
    }

    fn scenes(&self, rig: &[Camera], people: usize, augment: &AugmentConfig, count: usize) -> Vec<SceneSample> {
        (0..count as u64).map(|k| generate_scene(&self.pool, rig, &self.bounds, people, augment, k).expect("scene").0).collect()
    }

    fn samples(&self, people: usize, augment: &AugmentConfig, count: usize) -> Vec<TrainingSample<f32>> {
        let mut out = Vec::new();
        for k in 0..count as u64 {
            let (scene, mut rng) = generate_scene(&self.pool, &self.rig, &self.bounds, people, augment, k).expect("scene");
            for i in 0..people {
                out.push(make_training_sample(&scene, i, augment, &self.grid, &mut rng).expect("sample"));
            }
        }
        out
    }

    fn fit(&self, config: NetConfig, samples: &[TrainingSample<f32>], epochs: usize) -> (PoseNet<f32>, f64) {
        let mut net = PoseNet::new(config, &mut ChaCha8Rng::seed_from_u64(7));
        let history = train(&mut net, samples, &[], &self.grid, &train_config(epochs, 7), |s| {
            eprintln!("  epoch {:2}  loss {:.4}  train MPJPE {:.1} mm", s.epoch, s.mean_loss, s.train_mpjpe * 1e3)
        })
        .expect("training");
        let last = history.last().map_or(f64::NAN, |s| s.train_mpjpe * 1e3);
        (net, last)
    }

    /// Single-person model trained on mildly augmented heatmaps.
    fn single(&mut self) -> &PoseNet<f32> {
        if self.single.is_none() {
            eprintln!("training the single-person model ({SINGLE_TRAIN} samples, 50 epochs)");
            let samples = self.samples(1, &mild(SEED_TRAIN), SINGLE_TRAIN);
            self.single = Some(self.fit(NetConfig::default(), &samples, 50));
        }
        &self.single.as_ref().expect("trained").0
    }

    /// Conditioned and ablated models trained on the same close-interaction pairs.
    fn close(&mut self) -> &(PoseNet<f32>, PoseNet<f32>) {
        if self.close.is_none() {
            eprintln!("training conditioned and ablated models ({CLOSE_TRAIN} pair scenes, {CLOSE_EPOCHS} epochs)");
            let samples = self.samples(2, &close_pairs(SEED_CLOSE_TRAIN), CLOSE_TRAIN);
            let full = self.fit(NetConfig::default(), &samples, CLOSE_EPOCHS).0;
            let ablated = self.fit(NetConfig { conditioned: false, ..NetConfig::default() }, &samples, CLOSE_EPOCHS).0;
            self.close = Some((full, ablated));
        }
        self.close.as_ref().expect("trained")
    }
}

fn mild(seed: u64) -> AugmentConfig {
    AugmentConfig::mild().with_seed(seed)
}

fn close_pairs(seed: u64) -> AugmentConfig {
    AugmentConfig { attraction_probability: 1.0, attraction_range: (0.2, 0.5), ..AugmentConfig::mild() }.with_seed(seed)
}

struct Scores {
    results: Vec<MatchResult>,
    center_mm: Vec<f64>,
}

impl Scores {
    fn mpjpe(&self) -> f64 {
        mpjpe(&self.results).unwrap_or(f64::INFINITY)
    }

    fn pck(&self) -> f64 {
        pck(&self.results, PCK_THRESHOLD_MM)
    }

    fn center(&self) -> f64 {
        self.center_mm.iter().sum::<f64>() / self.center_mm.len().max(1) as f64
    }
}

/// Full pipeline on each scene: anchors detected from the heatmaps, then the
/// network per person. `views` selects a subset of the scene's rig.
fn run_pipeline(net: &PoseNet<f32>, grid: &VolumeGrid, scenes: &[SceneSample], views: Option<&[usize]>) -> Scores {
    let config = CenterConfig::default();
    let mut scores = Scores { results: Vec::new(), center_mm: Vec::new() };
    for scene in scenes {
        let (heatmaps, cams): (HeatmapStack, Vec<Camera>) = match views {
            Some(v) => (scene.heatmaps.select_views(v), v.iter().enumerate().map(|(k, &i)| with_id(&scene.rig[i], k)).collect()),
            None => (scene.heatmaps.clone(), scene.rig.clone()),
        };
        let anchors = detect_anchors(&heatmaps, &cams, &config);
        let estimates: Vec<Skeleton3D> =
            infer_frame(net, grid, &heatmaps, &cams, &anchors, &[], &InferenceOptions::default()).into_iter().filter_map(|e| e.outcome.ok()).collect();
        scores.results.push(match_poses(&estimates, &scene.people));
        let pelvis: Vec<Point3<f64>> = anchors.iter().map(|a| a.pelvis).collect();
        let truth: Vec<Point3<f64>> = scene.people.iter().map(|s| s.pelvis()).collect();
        if let Some(c) = center_error(&pelvis, &truth) {
            scores.center_mm.push(c);
        }
    }
    scores
}

fn with_id(cam: &Camera, id: usize) -> Camera {
    Camera { id, ..cam.clone() }
}

fn mean_joint_error_mm(a: &Skeleton3D, b: &Skeleton3D) -> f64 {
    a.joints.iter().zip(&b.joints).map(|(p, q)| (p - q).norm()).sum::<f64>() / NUM_JOINTS as f64 * 1e3
}

// ---------------------------------------------------------------- criterion 1

fn random_camera(id: usize, rng: &mut impl Rng) -> Camera {
    let az = rng.random_range(0.0..std::f64::consts::TAU);
    let radius = rng.random_range(3.0..7.0);
    let eye = Point3::new(radius * az.cos(), radius * az.sin(), rng.random_range(0.5..4.0));
    let target = Point3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.5..1.5));
    let focal = rng.random_range(300.0..1200.0);
    CameraParams::look_at(id, eye, target, focal, (rng.random_range(320..1920), rng.random_range(240..1080)), 4).expect("camera")
}

fn geometry_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let views = rng.random_range(2..=6);
        let cams: Vec<Camera> = (0..views).map(|i| random_camera(i, &mut rng)).collect();
        let point = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0));
        let obs: Vec<(usize, Point2<f64>)> = cams.iter().map(|c| (c.id, project(&point, c).expect("in front"))).collect();
        let back = triangulate(&obs, &cams).expect("triangulation");
        worst = reprojection_error(&back, &obs, &cams).into_iter().fold(worst, f64::max);
    }
    let elapsed = start.elapsed();
    Outcome::new(worst < 1e-6 && elapsed < Duration::from_secs(5), format!("max reprojection {worst:.2e} px over 1000 rigs (< 1e-6), {elapsed:.2?} (< 5 s)"))
}

// ---------------------------------------------------------------- criterion 2

const FD_STEP: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn random_tensor(side: usize, channels: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> VoxelTensor<f64> {
    VoxelTensor::from_vec(side, channels, (0..side * side * side * channels).map(|_| rng.random_range(lo..hi)).collect())
}

/// Worst relative error of one layer's weight, bias and input gradients
/// under the loss `sum(w * y)`.
fn layer_gradient_error(kind: ConvKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = VoxelConv::<f64>::new(kind, 2, 3, &mut rng);
    layer.bias.value.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    let x = random_tensor(4, 2, -1.0, 1.0, &mut rng);
    let w = random_tensor(kind.output_side(4), 3, -1.0, 1.0, &mut rng);
    let loss = |l: &VoxelConv<f64>, x: &VoxelTensor<f64>| l.forward(x).0.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>();
    let (_, cache) = layer.forward(&x);
    let dx = layer.backward(&cache, &w, true).expect("input gradient");
    let mut worst: f64 = 0.0;
    for which in 0..2 {
        for i in 0..layer.params()[which].len() {
            let analytic = layer.params()[which].grad[i];
            let (mut plus, mut minus) = (layer.clone(), layer.clone());
            plus.params_mut()[which].value[i] += FD_STEP;
            minus.params_mut()[which].value[i] -= FD_STEP;
            worst = worst.max(rel_err(analytic, (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * FD_STEP)));
        }
    }
    for i in 0..x.data().len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data_mut()[i] += FD_STEP;
        xm.data_mut()[i] -= FD_STEP;
        worst = worst.max(rel_err(dx.data()[i], (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * FD_STEP)));
    }
    worst
}

/// Central difference, or second-order one-sided differences when a ReLU
/// kink sits inside the central stencil. The rounding error of each
/// quotient, a few ulps of the loss over the step, is forgiven.
fn kink_aware_error(analytic: f64, f: &impl Fn(f64) -> f64) -> f64 {
    let h = FD_STEP;
    let (f0, fp, fm) = (f(0.0), f(h), f(-h));
    let noise = 8.0 * f64::EPSILON * f0.abs().max(1.0) / h;
    let err = |n: f64| ((analytic - n).abs() - noise).max(0.0) / analytic.abs().max(n.abs()).max(1e-6);
    let central = err((fp - fm) / (2.0 * h));
    if central < 1e-4 {
        return central;
    }
    let forward = (-3.0 * f0 + 4.0 * fp - f(2.0 * h)) / (2.0 * h);
    let backward = (3.0 * f0 - 4.0 * fm + f(-2.0 * h)) / (2.0 * h);
    central.min(err(forward)).min(err(backward))
}

/// Worst relative error of the end-to-end loss gradient on a micro-network.
fn composite_gradient_error(conditioned: bool, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = VolumeGrid::new(2.0, 8);
    let joints = 2;
    let mut net = PoseNet::<f64>::new(NetConfig { joints, widths: [1, 1, 1], conditioned }, &mut rng);
    for p in net.params_mut() {
        if p.len() <= 2 {
            p.value.iter_mut().for_each(|b| *b += rng.random_range(-0.3..0.3));
        }
    }
    let point = |r: &mut ChaCha8Rng| Point3::new(r.random_range(-0.8..0.8), r.random_range(-0.8..0.8), r.random_range(-0.8..0.8));
    let people: Vec<Vec<Point3<f64>>> = (0..2).map(|_| (0..joints).map(|_| point(&mut rng)).collect()).collect();
    let sample = TrainingSample {
        features: random_tensor(8, joints, 0.0, 1.0, &mut rng),
        anchor_own: random_tensor(8, 2, 0.0, 1.0, &mut rng),
        anchor_others: random_tensor(8, 2, 0.0, 1.0, &mut rng),
        heatmap: GtHeatmap::new(&grid, &people, joints, 1.5),
        target: (0..joints).map(|_| point(&mut rng)).collect(),
        unpose: unpose_from_points(&Point3::new(0.3, -0.2, 0.9), &Point3::new(0.5, -0.1, 1.4)).expect("anchors"),
    };
    let cfg = LossConfig::default();
    net.zero_grad();
    net.accumulate(&sample, &grid, &cfg, 1.0).expect("forward");
    let grads: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();
    let (mut worst, mut checked) = (0.0f64, 0);
    for (pi, g) in grads.iter().enumerate() {
        for (i, &analytic) in g.iter().enumerate() {
            let at = |offset: f64| {
                let mut shifted = net.clone();
                shifted.params_mut()[pi].value[i] += offset;
                shifted.evaluate(&sample, &grid, &cfg).expect("forward").total
            };
            worst = worst.max(kink_aware_error(analytic, &at));
            checked += 1;
        }
    }
    (worst, checked)
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let kinds = [ConvKind::Same3, ConvKind::Down2, ConvKind::Up2, ConvKind::Pointwise];
    let layer_worst = kinds.iter().enumerate().map(|(k, &kind)| layer_gradient_error(kind, 40 + k as u64)).fold(0.0, f64::max);
    let (full, n_full) = composite_gradient_error(true, 149);
    let (ablated, n_ablated) = composite_gradient_error(false, 49);
    let worst = layer_worst.max(full).max(ablated);
    let elapsed = start.elapsed();
    Outcome::new(
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!("4 layer kinds {layer_worst:.1e}, loss on micro-nets {:.1e} ({} params); worst {worst:.1e} (< 1e-4), {elapsed:.2?} (< 60 s)", full.max(ablated), n_full + n_ablated),
    )
}

// ---------------------------------------------------------------- criterion 3

fn probability_contract(lab: &Lab) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let grid = lab.grid;
    let mut worst_sum: f64 = 0.0;
    for trial in 0..3u64 {
        let net = PoseNet::<f32>::new(NetConfig::default(), &mut rng);
        let (scene, mut srng) = generate_scene(&lab.pool, &lab.rig, &lab.bounds, 2, &mild(300 + trial), trial).expect("scene");
        let s = make_training_sample::<f32>(&scene, 0, &mild(300), &grid, &mut srng).expect("sample");
        let wrap = |kind, values| FeatureVolume { kind, person: 0, values };
        let heat = net.hem_forward(&wrap(VolumeKind::KeypointFeature, s.features)).expect("hem");
        let prob = net.klm_forward(&heat, &wrap(VolumeKind::AnchorPositive, s.anchor_own), &wrap(VolumeKind::AnchorNegative, s.anchor_others)).expect("klm");
        for j in 0..NUM_JOINTS {
            worst_sum = worst_sum.max((prob.channel_sum(j) - 1.0).abs());
        }
    }
    // delta volumes: one random voxel per joint
    let mut exact = true;
    for _ in 0..20 {
        let mut values = VoxelTensor::<f32>::zeros(grid.resolution, NUM_JOINTS);
        let targets: Vec<usize> = (0..NUM_JOINTS).map(|_| rng.random_range(0..grid.voxels())).collect();
        for (j, &v) in targets.iter().enumerate() {
            values.set(v, j, 1.0);
        }
        let s = soft_argmax(&FeatureVolume { kind: VolumeKind::Probability, person: 0, values }, &grid, &UnposeTransform::identity());
        exact &= targets.iter().enumerate().all(|(j, &v)| s.joints[j] == grid.center_standard(v) && s.confidence[j] == 1.0);
    }
    Outcome::new(worst_sum <= 1e-6 && exact, format!("max |sum - 1| {worst_sum:.1e} over 45 channels (<= 1e-6); delta read-out exact: {exact}"))
}

// ---------------------------------------------------------------- criterion 4

fn anchor_field_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let sigma = ANCHOR_SIGMA;
    let mut peak_ok = true;
    let mut worst_sigma: f64 = 0.0;
    for _ in 0..1000 {
        let a = Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..2.0));
        peak_ok &= anchor_response(&a, &a, sigma) == 1.0;
        let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        worst_sigma = worst_sigma.max((anchor_response(&(a + dir * sigma), &a, sigma) - (-0.5f64).exp()).abs());
    }
    // volumes: own anchors on voxel centers peak at exactly one; Z_o is the max of the individual fields
    let grid = VolumeGrid::new(2.0, 16);
    let mut max_ok = true;
    for _ in 0..10 {
        let pelvis = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.8..1.1));
        let neck = pelvis + Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.5);
        let unpose = unpose_from_points(&pelvis, &neck).expect("anchors");
        let (pv, nv) = (rng.random_range(0..grid.voxels()), rng.random_range(0..grid.voxels()));
        let own = PersonAnchors::new(0, grid.center_world(pv, &unpose), grid.center_world(nv, &unpose));
        let others: Vec<PersonAnchors> = (1..=rng.random_range(1..=4))
            .map(|id| {
                let p = pelvis + Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.2..0.2));
                PersonAnchors::new(id, p, p + Vector3::new(0.0, 0.0, 0.5))
            })
            .collect();
        let (z, z_other) = build_anchor_volumes::<f64>(&grid, &unpose, &own, &others, sigma).expect("fields");
        peak_ok &= z.get(0, pv) == 1.0 && z.get(1, nv) == 1.0;
        let singles: Vec<FeatureVolume<f64>> = others.iter().map(|o| build_anchor_volumes::<f64>(&grid, &unpose, o, &[], sigma).expect("fields").0).collect();
        for v in 0..grid.voxels() {
            for c in 0..2 {
                let expected = singles.iter().map(|s| s.get(c, v)).fold(0.0, f64::max);
                max_ok &= z_other.get(c, v) == expected;
            }
        }
    }
    Outcome::new(
        peak_ok && worst_sigma <= 1e-9 && max_ok,
        format!("peak 1.0 at anchors: {peak_ok}; |value at sigma - exp(-1/2)| max {worst_sigma:.1e} (<= 1e-9); Z_o equals max of others on 10 scenes: {max_ok}"),
    )
}

// ---------------------------------------------------------------- criterion 5

fn closed_loop_single(lab: &mut Lab) -> Outcome {
    let start = Instant::now();
    lab.single();
    let test = lab.scenes(&lab.rig, 1, &mild(SEED_TEST), SINGLE_TEST);
    let scores = run_pipeline(&lab.single.as_ref().expect("trained").0, &lab.grid, &test, None);
    let elapsed = start.elapsed();
    let (m, p) = (scores.mpjpe(), scores.pck());
    Outcome::new(
        m < PITCH_MM && p > 80.0 && elapsed < Duration::from_secs(7200),
        format!("{SINGLE_TRAIN} train / {SINGLE_TEST} test, 50 epochs: MPJPE {m:.1} mm (< 62.5), PCK@50 {p:.1}% (> 80), {:.1} min (< 120)", elapsed.as_secs_f64() / 60.0),
    )
}

// ---------------------------------------------------------------- criterion 6

fn closed_loop_close_interaction(lab: &mut Lab) -> Outcome {
    lab.close();
    let test = lab.scenes(&lab.rig, 2, &close_pairs(SEED_CLOSE_TEST), CLOSE_TEST);
    let distances: Vec<f64> = test.iter().map(|s| (s.people[0].pelvis() - s.people[1].pelvis()).xy().norm()).collect();
    let in_range = distances.iter().all(|d| (0.2 - 1e-9..=0.5 + 1e-9).contains(d));
    let (full, ablated) = lab.close.as_ref().expect("trained");
    let f = run_pipeline(full, &lab.grid, &test, None);
    let a = run_pipeline(ablated, &lab.grid, &test, None);
    let gap = f.pck() - a.pck();
    Outcome::new(
        in_range && gap >= 10.0,
        format!(
            "{CLOSE_TEST} pair scenes, pelvis distance in [0.2, 0.5] m: {in_range}; PCK@50 full {:.1}% vs ablated {:.1}% (gap {gap:.1} >= 10); MPJPE {:.1} vs {:.1} mm",
            f.pck(),
            a.pck(),
            f.mpjpe(),
            a.mpjpe()
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn augmentation_ablation(lab: &mut Lab) -> Outcome {
    lab.single();
    eprintln!("training without heatmap augmentation ({SINGLE_TRAIN} samples, 50 epochs)");
    let clean = mild(SEED_TRAIN).without_heatmap_augmentation();
    let samples = lab.samples(1, &clean, SINGLE_TRAIN);
    let (plain, _) = lab.fit(NetConfig::default(), &samples, 50);
    drop(samples);
    let noisy = AugmentConfig::default().with_seed(SEED_NOISY);
    let test = lab.scenes(&lab.rig, 1, &noisy, SINGLE_TEST);
    let with = run_pipeline(&lab.single.as_ref().expect("trained").0, &lab.grid, &test, None);
    let without = run_pipeline(&plain, &lab.grid, &test, None);
    Outcome::new(
        without.pck() < with.pck(),
        format!(
            "noisy test set: PCK@50 without augmentation {:.1}% < with {:.1}%; MPJPE {:.1} vs {:.1} mm",
            without.pck(),
            with.pck(),
            without.mpjpe(),
            with.mpjpe()
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

/// Max-composite a Gaussian blob (std 1.5 voxels, peak `amplitude`) into one channel.
fn inject_peak(heat: &mut FeatureVolume<f32>, grid: &VolumeGrid, channel: usize, center: usize, amplitude: f32) {
    let (cx, cy, cz) = grid.voxel_coords(center);
    for v in 0..grid.voxels() {
        let (x, y, z) = grid.voxel_coords(v);
        let d2 = [(x, cx), (y, cy), (z, cz)].iter().map(|&(a, b)| (a as f64 - b as f64).powi(2)).sum::<f64>();
        let g = amplitude * (-d2 / (2.0 * 1.5 * 1.5)).exp() as f32;
        let cell = &mut heat.values.data_mut()[v * NUM_JOINTS + channel];
        *cell = cell.max(g);
    }
}

fn temporal_filter_sequence(lab: &mut Lab) -> Outcome {
    lab.single();
    let net = &lab.single.as_ref().expect("trained").0;
    let grid = lab.grid;
    let clips = builtin_corpus();
    let frames = generate_sequence(&clips, &lab.rig, &lab.bounds, 1, &mild(SEED_SEQUENCE), SEQUENCE_FRAMES, 0).expect("sequence");
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let config = CenterConfig::default();
    let mut previous: Option<Skeleton3D> = None;
    let (mut worse, mut sum_f, mut sum_u) = (Vec::new(), 0.0, 0.0);
    for (k, scene) in frames.iter().enumerate() {
        let truth = &scene.people[0];
        let anchors = detect_anchors(&scene.heatmaps, &scene.rig, &config);
        let Some(own) = anchors.iter().min_by(|a, b| (a.pelvis - truth.pelvis()).norm().total_cmp(&(b.pelvis - truth.pelvis()).norm())) else {
            worse.push(k);
            continue;
        };
        let others: Vec<PersonAnchors> = anchors.iter().filter(|a| a.id != own.id).cloned().collect();
        let unpose = compute_unpose(own).expect("anchors");
        let features = build_keypoint_volume::<f32>(&grid, &unpose, &scene.heatmaps, &scene.rig, own.id).expect("features");
        let (z, z_other) = build_anchor_volumes::<f32>(&grid, &unpose, own, &others, ANCHOR_SIGMA).expect("fields");
        let mut heat = net.hem_forward(&features).expect("hem");
        // one spurious peak, 0.3 to 0.6 m from the true joint
        let joint = k % NUM_JOINTS;
        let far: Vec<usize> = (0..grid.voxels())
            .filter(|&v| (0.3..0.6).contains(&(grid.center_world(v, &unpose) - truth.joints[joint]).norm()))
            .collect();
        let spot = far[rng.random_range(0..far.len())];
        inject_peak(&mut heat, &grid, joint, spot, 1.0);
        let read = |h: &FeatureVolume<f32>| soft_argmax(&net.klm_forward(h, &z, &z_other).expect("klm"), &grid, &unpose);
        let unfiltered = read(&heat);
        let filtered = match &previous {
            Some(prev) => read(&temporal_filter(&heat, &grid, &unpose, prev, TEMPORAL_RADIUS)),
            None => unfiltered.clone(),
        };
        let (ef, eu) = (mean_joint_error_mm(&filtered, truth), mean_joint_error_mm(&unfiltered, truth));
        eprintln!("  frame {k:2}: filtered {ef:6.1} mm, unfiltered {eu:6.1} mm");
        if ef > eu {
            worse.push(k);
        }
        sum_f += ef;
        sum_u += eu;
        previous = Some(filtered);
    }
    let n = frames.len() as f64;
    Outcome::new(
        worse.is_empty(),
        format!("{SEQUENCE_FRAMES} frames, r = 0.05 m: mean MPJPE filtered {:.1} mm vs unfiltered {:.1} mm; frames where filtering is worse: {worse:?}", sum_f / n, sum_u / n),
    )
}

// ---------------------------------------------------------------- criterion 9

fn view_count_monotonicity(lab: &mut Lab) -> Outcome {
    lab.single();
    let rig8 = ring_rig(&RingRig { views: 8, ..RingRig::default() }).expect("ring");
    let noisy = AugmentConfig::default().with_seed(SEED_NOISY);
    let test = lab.scenes(&rig8, 1, &noisy, VIEW_FRAMES);
    let net = &lab.single.as_ref().expect("trained").0;
    let subsets: [(usize, Vec<usize>); 3] = [(8, (0..8).collect()), (6, vec![0, 1, 2, 4, 5, 6]), (4, vec![0, 2, 4, 6])];
    let scores: Vec<(usize, f64, f64)> = subsets
        .iter()
        .map(|(n, views)| {
            let s = run_pipeline(net, &lab.grid, &test, Some(views));
            (*n, s.center(), s.mpjpe())
        })
        .collect();
    let monotone = scores.windows(2).all(|w| w[0].1 <= w[1].1 && w[0].2 <= w[1].2);
    let table: Vec<String> = scores.iter().map(|(n, c, m)| format!("{n} views: center {c:.1} mm, MPJPE {m:.1} mm")).collect();
    Outcome::new(monotone, format!("{VIEW_FRAMES} noisy frames; {}", table.join("; ")))
}

// --------------------------------------------------------------- criterion 10

fn determinism() -> Outcome {
    use volmocap_cli::commands;
    use volmocap_cli::config::PipelineConfig;
    let run = || -> Vec<(std::path::PathBuf, Vec<u8>)> {
        let dir = tempfile::tempdir().expect("temp dir");
        let root = dir.path();
        std::fs::copy(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ring4.toml"), root.join("rig.toml")).expect("rig");
        std::fs::write(
            root.join("pipeline.toml"),
            "schema_version = 1\nrig = \"rig.toml\"\ndataset = \"data\"\ncheckpoint = \"model.mvck\"\noutput = \"out\"\nseed = 42\n\
             [synth]\ncount = 6\npeople = 2\nsequence = true\n[train]\nepochs = 2\nbatch_size = 4\nlearning_rate = 1e-3\n\
             [inference]\ntemporal_filter = true\n[model]\nresolution = 16\n",
        )
        .expect("config");
        let cfg = PipelineConfig::load(&root.join("pipeline.toml")).expect("config");
        commands::synth(&cfg).expect("synth");
        commands::train(&cfg).expect("train");
        commands::infer(&cfg, &cfg.dataset, &root.join("out/estimates.jsonl"), Some(&root.join("out/volumes"))).expect("infer");
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).expect("listing") {
                let p = e.expect("entry").path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push((p.strip_prefix(root).expect("prefix").to_path_buf(), std::fs::read(&p).expect("read")));
                }
            }
        }
        files.sort();
        files
    };
    let (a, b) = (run(), run());
    let differing: Vec<String> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.display().to_string()).collect();
    Outcome::new(a.len() == b.len() && differing.is_empty() && !a.is_empty(), format!("synth, train and infer twice: {} files, differing {differing:?}", a.len()))
}

// --------------------------------------------------------------- criterion 11

fn random_person(rng: &mut impl Rng, id: u32) -> Skeleton3D {
    let base = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0);
    let mut s = Skeleton3D::new(id, std::array::from_fn(|_| base + Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.0..1.8))));
    s.confidence = [rng.random_range(0.0..1.0); NUM_JOINTS];
    s
}

fn pose_distance(a: &Skeleton3D, b: &Skeleton3D) -> f64 {
    (0..NUM_JOINTS).map(|j| (a.joints[j] - b.joints[j]).norm()).sum::<f64>() / NUM_JOINTS as f64
}

/// Every partial injective map from estimates to ground truth that respects
/// nearest-GT claims won by the highest score; the cheapest one.
fn brute_force(est: &[Skeleton3D], gt: &[Skeleton3D]) -> Vec<(usize, usize)> {
    let g = gt.len();
    let nearest: Vec<Option<usize>> =
        est.iter().map(|e| (0..g).min_by(|&a, &b| pose_distance(e, &gt[a]).total_cmp(&pose_distance(e, &gt[b])).then(a.cmp(&b)))).collect();
    let winner = |t: usize| {
        (0..est.len()).filter(|&e| nearest[e] == Some(t)).fold(None, |best: Option<usize>, e| match best {
            Some(b) if est[b].score() >= est[e].score() => Some(b),
            _ => Some(e),
        })
    };
    let choices = g + 1;
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    for code in 0..choices.pow(est.len() as u32) {
        let mut c = code;
        let map: Vec<Option<usize>> = (0..est.len())
            .map(|_| {
                let v = c % choices;
                c /= choices;
                (v < g).then_some(v)
            })
            .collect();
        let mut used = vec![false; g];
        if !map.iter().flatten().all(|&t| !std::mem::replace(&mut used[t], true)) {
            continue;
        }
        if !(0..g).all(|t| map.iter().position(|m| *m == Some(t)) == winner(t)) {
            continue;
        }
        let pairs: Vec<(usize, usize)> = map.iter().enumerate().filter_map(|(e, m)| m.map(|t| (e, t))).collect();
        let total: f64 = pairs.iter().map(|&(e, t)| pose_distance(&est[e], &gt[t])).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, pairs));
        }
    }
    best.map(|(_, p)| p).unwrap_or_default()
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut disagreements = 0;
    for _ in 0..1000 {
        let est: Vec<_> = (0..rng.random_range(0..=4)).map(|k| random_person(&mut rng, k)).collect();
        let gt: Vec<_> = (0..rng.random_range(0..=4)).map(|k| random_person(&mut rng, 10 + k)).collect();
        let got: Vec<_> = match_poses(&est, &gt).pairs.iter().map(|p| (p.estimate, p.gt)).collect();
        if got != brute_force(&est, &gt) {
            disagreements += 1;
        }
    }
    let mut non_monotone = 0;
    for _ in 0..200 {
        let results: Vec<MatchResult> = (0..rng.random_range(1..5))
            .map(|_| {
                let est: Vec<_> = (0..rng.random_range(0..=4)).map(|k| random_person(&mut rng, k)).collect();
                let gt: Vec<_> = (0..rng.random_range(1..=4)).map(|k| random_person(&mut rng, k)).collect();
                match_poses(&est, &gt)
            })
            .collect();
        let mut thresholds: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1500.0)).collect();
        thresholds.sort_by(f64::total_cmp);
        let curve: Vec<f64> = thresholds.iter().map(|&t| pck(&results, t)).collect();
        if curve.windows(2).any(|w| w[1] < w[0]) {
            non_monotone += 1;
        }
    }
    Outcome::new(
        disagreements == 0 && non_monotone == 0,
        format!("matching vs brute force: {disagreements}/1000 disagreements; PCK non-monotone in threshold: {non_monotone}/200"),
    )
}

// ------------------------------------------------------ trained-model checks

/// Behaviour of the trained networks on hand-built inputs.
fn trained_model_checks(lab: &mut Lab) -> Vec<(&'static str, Outcome)> {
    let mut out = Vec::new();
    let grid = lab.grid;
    let clean = mild(SEED_TEST).without_heatmap_augmentation();
    let scenes = lab.scenes(&lab.rig.clone(), 1, &AugmentConfig { center_jitter: 0.0, ..clean }, 20);
    let net = lab.single().clone();

    // HEM argmax on clean single-person features, and suppression of an injected peak
    let (mut near, mut total, mut suppressed, mut trials) = (0, 0, 0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for scene in &scenes {
        let unpose = compute_unpose(&scene.anchors[0]).expect("anchors");
        let mut features = build_keypoint_volume::<f32>(&grid, &unpose, &scene.heatmaps, &scene.rig, 0).expect("features");
        let heat = net.hem_forward(&features).expect("hem");
        for (j, p) in scene.people[0].joints.iter().enumerate() {
            let Some(v) = grid.locate(&unpose.apply(p)) else { continue };
            let (a, b) = (grid.voxel_coords(heat.argmax(j)), grid.voxel_coords(v));
            let cheb = [(a.0, b.0), (a.1, b.1), (a.2, b.2)].iter().map(|&(x, y)| x.abs_diff(y)).max().unwrap_or(0);
            near += usize::from(cheb <= 1);
            total += 1;
        }
        // a copy of one joint's true feature peak, 0.6 m or more away
        let joint = rng.random_range(0..NUM_JOINTS);
        let Some(true_voxel) = grid.locate(&unpose.apply(&scene.people[0].joints[joint])) else { continue };
        let far: Vec<usize> = (0..grid.voxels()).filter(|&v| (grid.center_standard(v) - grid.center_standard(true_voxel)).norm() >= 0.6).collect();
        let spot = far[rng.random_range(0..far.len())];
        let peak = (0..grid.voxels()).map(|v| features.get(joint, v)).fold(0.0f32, f32::max);
        let mut fv = FeatureVolume { kind: VolumeKind::Heatmap3D, person: 0, values: std::mem::replace(&mut features.values, VoxelTensor::zeros(1, 1)) };
        inject_peak(&mut fv, &grid, joint, spot, peak);
        let perturbed = net.hem_forward(&FeatureVolume { kind: VolumeKind::KeypointFeature, ..fv }).expect("hem");
        let true_value = perturbed.get(joint, perturbed.argmax_near(joint, true_voxel, &grid));
        suppressed += usize::from(perturbed.get(joint, spot) < 0.5 * true_value);
        trials += 1;
    }
    let rate = near as f64 / total.max(1) as f64;
    out.push(("hem argmax", Outcome::new(rate == 1.0, format!("clean features: {near}/{total} joint argmaxes within one voxel of the truth"))));
    out.push(("hem spurious peak", Outcome::new(suppressed == trials, format!("{suppressed}/{trials} injected distant peaks below half the true peak"))));

    // clean single-person pipeline
    let single = run_pipeline(&net, &grid, &scenes, None);
    out.push(("clean single person", Outcome::new(single.mpjpe() < PITCH_MM, format!("MPJPE {:.1} mm (< 62.5) on 20 clean frames", single.mpjpe()))));

    // close pairs: ownership and the anchor swap
    let (full, _) = lab.close().clone();
    let hug = AugmentConfig { attraction_range: (0.3, 0.3), center_jitter: 0.0, ..close_pairs(SEED_CLOSE_TEST + 1).without_heatmap_augmentation() };
    let pairs = lab.scenes(&lab.rig.clone(), 2, &hug, 10);
    let (mut own_ok, mut swap_ok, mut people) = (0, 0, 0);
    for scene in &pairs {
        let est = infer_frame(&full, &grid, &scene.heatmaps, &scene.rig, &scene.anchors, &[], &InferenceOptions::default());
        let swapped_anchors = vec![
            PersonAnchors { id: scene.anchors[0].id, ..scene.anchors[1].clone() },
            PersonAnchors { id: scene.anchors[1].id, ..scene.anchors[0].clone() },
        ];
        let swapped = infer_frame(&full, &grid, &scene.heatmaps, &scene.rig, &swapped_anchors, &[], &InferenceOptions::default());
        for i in 0..2 {
            let (Ok(s), Ok(t)) = (&est[i].outcome, &swapped[1 - i].outcome) else { continue };
            let own = (s.pelvis() - scene.people[i].pelvis()).norm();
            let other = (s.pelvis() - scene.people[1 - i].pelvis()).norm();
            own_ok += usize::from(own < 0.1 && own < other);
            swap_ok += usize::from(mean_joint_error_mm(s, t) < 0.5 * mean_joint_error_mm(s, &scene.people[1 - i]));
            people += 1;
        }
    }
    out.push(("hug ownership", Outcome::new(own_ok == people && people > 0, format!("pairs 0.3 m apart: {own_ok}/{people} pelvises within 0.1 m of their own truth and closer to it"))));
    out.push(("anchor swap", Outcome::new(swap_ok == people && people > 0, format!("{swap_ok}/{people} estimates follow their anchors when the anchors are exchanged"))));
    out
}

trait NearestPeak {
    fn argmax_near(&self, channel: usize, center: usize, grid: &VolumeGrid) -> usize;
}

impl NearestPeak for FeatureVolume<f32> {
    /// Largest voxel of `channel` within one voxel of `center`.
    fn argmax_near(&self, channel: usize, center: usize, grid: &VolumeGrid) -> usize {
        let (cx, cy, cz) = grid.voxel_coords(center);
        (0..grid.voxels())
            .filter(|&v| {
                let (x, y, z) = grid.voxel_coords(v);
                x.abs_diff(cx) <= 1 && y.abs_diff(cy) <= 1 && z.abs_diff(cz) <= 1
            })
            .max_by(|&a, &b| self.get(channel, a).total_cmp(&self.get(channel, b)))
            .unwrap_or(center)
    }
}

fn main() -> ExitCode {
    let selected: Option<Vec<usize>> = std::env::var("VOLMOCAP_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |k: usize| selected.as_ref().is_none_or(|s| s.contains(&k));
    let mut lab = Lab::new();
    type Criterion = fn(&mut Lab) -> Outcome;
    let criteria: [(usize, &str, Criterion); 11] = [
        (1, "geometry oracle", |_| geometry_round_trip()),
        (2, "gradient correctness", |_| gradient_check()),
        (3, "probability contract", |lab| probability_contract(lab)),
        (4, "anchor-field contract", |_| anchor_field_contract()),
        (5, "closed-loop single person", closed_loop_single),
        (6, "closed-loop close interaction", closed_loop_close_interaction),
        (7, "augmentation ablation", augmentation_ablation),
        (8, "temporal filter", temporal_filter_sequence),
        (9, "view-count monotonicity", view_count_monotonicity),
        (10, "determinism", |_| determinism()),
        (11, "metric oracle", |_| metric_oracle()),
    ];
    let mut failed = Vec::new();
    for (k, name, run) in criteria {
        if !wanted(k) {
            continue;
        }
        let start = Instant::now();
        let outcome = run(&mut lab);
        println!("[{}] criterion {k:2} {name}: {} ({:.1} s)", if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail, start.elapsed().as_secs_f64());
        if !outcome.pass {
            failed.push(k.to_string());
        }
    }
    if wanted(12) {
        for (name, outcome) in trained_model_checks(&mut lab) {
            println!("[{}] trained model {name}: {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
            if !outcome.pass {
                failed.push(name.to_string());
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected checks passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
