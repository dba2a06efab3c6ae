//! Subcommand implementations.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use volmocap::centers::AnchorTracker;
use volmocap::eval::{center_error, match_poses, report, EvalReport, MatchResult};
use volmocap::posenet::checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta};
use volmocap::posenet::loss::DEFAULT_HEATMAP_SIGMA;
use volmocap::posenet::{infer_person, train as train_net, EpochStats, InferenceOptions, PoseNet, TrainingSample};
use volmocap::synth::{builtin_corpus, capture_bounds, filter_poses, generate_scene, generate_sequence, make_training_sample, sample_rng, SceneSample};
use volmocap::volumes::ANCHOR_SIGMA;
use volmocap::{Camera, Skeleton3D};

use crate::config::{load_rig, read_toml, write_toml, PipelineConfig, RigFile};
use crate::error::{io_err, schema, CliError, Result};
use crate::formats::*;
use crate::plots::{line_chart, Series};

/// Horizontal reach and height of a body used to derive the capture area.
pub const BODY_REACH: f64 = 0.6;
pub const BODY_TOP: f64 = 2.1;

/// Anchor jitter draws come from a stream separate from scene generation.
const JITTER_STREAM_SALT: u64 = 0x6a09_e667_f3bc_c908;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSummary {
    pub dataset: PathBuf,
    pub count: usize,
    pub people: usize,
    pub seed: u64,
    pub pool_size: usize,
}

/// Render the dataset described by `cfg` into `cfg.dataset`.
pub fn synth(cfg: &PipelineConfig) -> Result<SynthSummary> {
    let rig = load_rig(&cfg.rig)?;
    let clips = match &cfg.synth.mocap {
        Some(dir) => read_mocap_dir(dir)?,
        None => builtin_corpus(),
    };
    let pool = filter_poses(&clips, cfg.synth.min_move)?;
    let bounds = capture_bounds(&rig, BODY_REACH, BODY_TOP)?;
    let dir = &cfg.dataset;
    fs::create_dir_all(dir.join("samples")).map_err(io_err(dir))?;
    write_toml(&dir.join("rig.toml"), &RigFile::from_cameras(&rig))?;

    let (n, count) = (cfg.synth.people, cfg.synth.count);
    let scenes: Box<dyn Iterator<Item = Result<SceneSample>>> = if cfg.synth.sequence && count > 0 {
        let seq = generate_sequence(&clips, &rig, &bounds, n, &cfg.augment, count, 0)?;
        Box::new(seq.into_iter().map(Ok))
    } else {
        Box::new((0..count as u64).map(|k| Ok(generate_scene(&pool, &rig, &bounds, n, &cfg.augment, k)?.0)))
    };
    let mut gt = Sequence::default();
    for (index, scene) in scenes.enumerate() {
        let scene = scene?;
        let index = index as u64;
        let stem = sample_stem(index);
        let hm_name = format!("{stem}.heatmaps.bin");
        write_heatmaps(&dir.join(&hm_name), &scene.heatmaps)?;
        let people: Vec<PersonRecord> = scene.people.iter().map(PersonRecord::ok).collect();
        let rec = SampleRecord {
            index,
            heatmaps: hm_name,
            people: people.clone(),
            anchors: scene.anchors.iter().map(AnchorRecord::from_anchors).collect(),
            dropped_views: scene.dropped_views.clone(),
        };
        let json_path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&rec).map_err(|e| schema(&json_path, e.to_string()))?;
        fs::write(&json_path, text + "\n").map_err(io_err(&json_path))?;
        gt.frames.push(FrameRecord { frame: index, anchors: None, people });
    }
    write_sequence(&dir.join(GROUND_TRUTH), &gt)?;
    let manifest = Manifest {
        schema_version: crate::config::SCHEMA_VERSION,
        rig: "rig.toml".into(),
        people: n,
        count,
        seed: cfg.augment.seed,
        sequence: cfg.synth.sequence,
        min_move: cfg.synth.min_move,
        pool_size: pool.len(),
        augment: cfg.augment,
    };
    write_toml(&dir.join(MANIFEST), &manifest)?;
    Ok(SynthSummary { dataset: dir.clone(), count, people: n, seed: cfg.augment.seed, pool_size: pool.len() })
}

/// Manifest, rig and every record of a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<Camera>, Vec<SceneSample>)> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(CliError::Missing(manifest_path));
    }
    let manifest: Manifest = read_toml(&manifest_path)?;
    if manifest.schema_version != crate::config::SCHEMA_VERSION {
        return Err(schema(&manifest_path, format!("schema_version: unsupported version {}", manifest.schema_version)));
    }
    let rig = load_rig(&dir.join(&manifest.rig))?;
    let scenes = (0..manifest.count as u64)
        .map(|k| {
            let (rec, heatmaps) = read_sample(dir, k)?;
            heatmaps.check_rig(&rig)?;
            let people: Vec<Skeleton3D> = rec.people.iter().filter_map(PersonRecord::skeleton).collect();
            Ok(SceneSample {
                rig: rig.clone(),
                people,
                heatmaps,
                anchors: rec.anchors.iter().map(AnchorRecord::anchors).collect(),
                dropped_views: rec.dropped_views,
                attractions: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, rig, scenes))
}

/// One network sample per person of every scene; anchor jitter follows `augment`.
pub fn training_samples(scenes: &[SceneSample], cfg: &PipelineConfig, first_index: u64) -> Result<Vec<TrainingSample<f32>>> {
    let grid = cfg.model.grid();
    let mut out = Vec::new();
    for (k, scene) in scenes.iter().enumerate() {
        let mut rng = sample_rng(cfg.train.seed ^ JITTER_STREAM_SALT, first_index + k as u64);
        for i in 0..scene.people.len() {
            out.push(make_training_sample::<f32>(scene, i, &cfg.augment, &grid, &mut rng)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub samples: usize,
    pub holdout: usize,
    pub epochs: Vec<EpochStats>,
}

pub fn checkpoint_meta(cfg: &PipelineConfig) -> CheckpointMeta {
    CheckpointMeta { resolution: cfg.model.resolution as u32, anchor_sigma: ANCHOR_SIGMA, heatmap_sigma: DEFAULT_HEATMAP_SIGMA, lambda: cfg.train.lambda }
}

pub fn save_checkpoint(path: &Path, net: &PoseNet<f32>, meta: &CheckpointMeta) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(net, meta, &mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Train on `cfg.dataset`; the last tenth of the scenes (when there are at
/// least ten) is held out for the epoch log.
pub fn train(cfg: &PipelineConfig) -> Result<TrainSummary> {
    let (_, _, scenes) = load_dataset(&cfg.dataset)?;
    let held = if scenes.len() >= 10 { scenes.len() / 10 } else { 0 };
    let split = scenes.len() - held;
    let samples = training_samples(&scenes[..split], cfg, 0)?;
    let holdout = training_samples(&scenes[split..], cfg, split as u64)?;
    drop(scenes);
    if samples.is_empty() && cfg.train.epochs > 0 {
        return Err(schema(&cfg.dataset, "dataset has no training samples"));
    }
    info!("training on {} samples, {} held out", samples.len(), holdout.len());

    let mut net = PoseNet::<f32>::new(cfg.model.net(), &mut ChaCha8Rng::seed_from_u64(cfg.train.seed));
    fs::create_dir_all(&cfg.output).map_err(io_err(&cfg.output))?;
    let log_path = cfg.output.join("train_log.jsonl");
    let mut log = BufWriter::new(fs::File::create(&log_path).map_err(io_err(&log_path))?);
    let mut write_err = None;
    let history = train_net(&mut net, &samples, &holdout, &cfg.model.grid(), &cfg.train, |s| {
        let line = serde_json::to_string(s).expect("epoch stats serialize");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(&log_path)(e));
    }
    save_checkpoint(&cfg.checkpoint, &net, &checkpoint_meta(cfg))?;
    Ok(TrainSummary { checkpoint: cfg.checkpoint.clone(), log: log_path, samples: samples.len(), holdout: holdout.len(), epochs: history })
}

pub fn load_checkpoint(path: &Path) -> Result<(PoseNet<f32>, CheckpointMeta)> {
    require(path)?;
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(read_checkpoint::<f32>(std::io::BufReader::new(file)).map_err(|e| schema(path, e.to_string()))?)
}

/// Sorted heatmap files of an input directory (a dataset or a bare `samples/` folder).
pub fn heatmap_frames(input: &Path) -> Result<Vec<PathBuf>> {
    let dir = if input.join("samples").is_dir() { input.join("samples") } else { input.to_path_buf() };
    require(&dir)?;
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".heatmaps.bin"))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferSummary {
    pub output: PathBuf,
    pub frames: usize,
    pub people: usize,
    pub failures: usize,
}

/// Per frame: anchors (tracked when enabled), then the network per person.
/// Person failures are written in-band and never stop the sequence.
pub fn infer(cfg: &PipelineConfig, input: &Path, output: &Path, dump: Option<&Path>) -> Result<InferSummary> {
    let (net, meta) = load_checkpoint(&cfg.checkpoint)?;
    let rig = load_rig(&cfg.rig)?;
    let frames = heatmap_frames(input)?;
    if meta.resolution as usize != cfg.model.resolution {
        warn!("checkpoint volume resolution {} overrides the configured {}", meta.resolution, cfg.model.resolution);
    }
    let grid = volmocap::volumes::VolumeGrid::new(cfg.model.side, meta.resolution as usize);
    let opts = InferenceOptions { anchor_sigma: meta.anchor_sigma, ..cfg.inference.options() };
    let mut tracker = AnchorTracker::new(cfg.inference.centers(), cfg.inference.tracking);
    if let Some(d) = dump {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }

    let mut seq = Sequence::default();
    let mut previous: Vec<Skeleton3D> = Vec::new();
    let (mut people, mut failures) = (0, 0);
    for (k, path) in frames.iter().enumerate() {
        let heatmaps = read_heatmaps(path)?;
        heatmaps.check_rig(&rig)?;
        let source = if tracker.will_track() { "tracked" } else { "detected" };
        let anchors = tracker.update(&heatmaps, &rig);
        let mut record = FrameRecord { frame: k as u64, anchors: Some(source.into()), people: Vec::new() };
        let mut current = Vec::new();
        for i in 0..anchors.len() {
            let prev = previous.iter().find(|s| s.id == anchors[i].id);
            match infer_person(&net, &grid, &heatmaps, &rig, &anchors, i, prev, &opts) {
                Ok((skeleton, volumes)) => {
                    if let Some(d) = dump {
                        let path = d.join(format!("frame{k:06}_person{}.bin", skeleton.id));
                        let mut w = BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
                        for v in [&volumes.features, &volumes.anchor_own, &volumes.anchor_others, &volumes.heat, &volumes.prob] {
                            write_volume(&mut w, v).map_err(io_err(&path))?;
                        }
                        w.flush().map_err(io_err(&path))?;
                    }
                    record.people.push(PersonRecord::ok(&skeleton));
                    current.push(skeleton);
                }
                Err(e) => {
                    warn!("frame {k}, person {}: {e}", anchors[i].id);
                    failures += 1;
                    record.people.push(PersonRecord::failed(anchors[i].id, e));
                }
            }
        }
        people += record.people.len();
        previous = current;
        seq.frames.push(record);
    }
    write_sequence(output, &seq)?;
    Ok(InferSummary { output: output.to_path_buf(), frames: frames.len(), people, failures })
}

/// Metrics written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub metrics: EvalReport,
    pub center_error_mm: Option<f64>,
}

pub fn match_sequences(estimates: &Sequence, gt: &Sequence) -> Result<(Vec<MatchResult>, Option<f64>)> {
    let est_ids: BTreeSet<u64> = estimates.frames.iter().map(|f| f.frame).collect();
    let gt_ids: BTreeSet<u64> = gt.frames.iter().map(|f| f.frame).collect();
    if est_ids != gt_ids || est_ids.len() != estimates.frames.len() || gt_ids.len() != gt.frames.len() {
        let only_e: Vec<u64> = est_ids.difference(&gt_ids).copied().collect();
        let only_g: Vec<u64> = gt_ids.difference(&est_ids).copied().collect();
        return Err(CliError::FrameMismatch { only_estimates: only_e.len(), first_estimate: only_e.first().copied(), only_gt: only_g.len(), first_gt: only_g.first().copied() });
    }
    let mut results = Vec::new();
    let (mut center_sum, mut center_n) = (0.0, 0usize);
    for g in &gt.frames {
        let e = estimates.frames.iter().find(|f| f.frame == g.frame).expect("frame sets are equal");
        let (es, gs) = (e.skeletons(), g.skeletons());
        results.push(match_poses(&es, &gs));
        let pel = |v: &[Skeleton3D]| v.iter().map(|s| s.pelvis()).collect::<Vec<_>>();
        if let Some(c) = center_error(&pel(&es), &pel(&gs)) {
            center_sum += c;
            center_n += 1;
        }
    }
    Ok((results, (center_n > 0).then(|| center_sum / center_n as f64)))
}

pub fn eval(estimates: &Path, gt: &Path, pck_threshold: f64, thresholds: &[f64], out_dir: &Path) -> Result<EvalOutput> {
    let est = read_sequence(estimates)?;
    let truth = read_sequence(gt)?;
    let (results, center) = match_sequences(&est, &truth)?;
    let out = EvalOutput { metrics: report(&results, pck_threshold, thresholds), center_error_mm: center };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = out_dir.join("report.json");
    let text = serde_json::to_string_pretty(&out).map_err(|e| schema(&path, e.to_string()))?;
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    write_plots(&out.metrics, out_dir)?;
    Ok(out)
}

fn write_plots(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let overall = line_chart("3D PCK", "threshold (mm)", "PCK (%)", &[Series { name: "all joints".into(), points: report.sweep.clone() }]);
    let groups: Vec<Series> = report.group_sweeps.iter().map(|(n, p)| Series { name: n.clone(), points: p.clone() }).collect();
    let by_group = line_chart("3D PCK per joint", "threshold (mm)", "PCK (%)", &groups);
    let mut written = Vec::new();
    for (name, svg) in [("pck_sweep.svg", overall), ("pck_per_joint.svg", by_group)] {
        let path = out_dir.join(name);
        fs::write(&path, svg).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Re-draw the plots of an existing report.
pub fn export_plots(report_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(report_path).map_err(io_err(report_path))?;
    let out: EvalOutput = serde_json::from_str(&text).map_err(|e| schema(report_path, e.to_string()))?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_plots(&out.metrics, out_dir)
}
