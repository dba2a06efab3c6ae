mod common;

use std::fs;
use std::process::Command;

use common::{repo_root, setup, snapshot};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use volmocap::centers::AnchorTracker;
use volmocap::posenet::PoseNet;
use volmocap::synth::builtin_corpus;
use volmocap_cli::commands::{self, load_checkpoint, load_dataset};
use volmocap_cli::config::PipelineConfig;
use volmocap_cli::formats::{clip_to_sequence, read_heatmaps, read_mocap_dir, read_sequence, write_sequence, Manifest, Sequence, MANIFEST};
use volmocap_cli::CliError;

#[test]
fn bundled_corpus_matches_builtin() {
    let dir = repo_root().join("data/mocap");
    let mut expected = builtin_corpus();
    if std::env::var_os("VOLMOCAP_WRITE_CORPUS").is_some() {
        fs::create_dir_all(&dir).unwrap();
        for clip in &expected {
            write_sequence(&dir.join(format!("{}_{}.jsonl", clip.subject, clip.motion)), &clip_to_sequence(clip)).unwrap();
        }
    }
    let clips = read_mocap_dir(&dir).unwrap();
    assert!(clips.len() >= 10);
    expected.sort_by_key(|c| format!("{}_{}", c.subject, c.motion));
    assert_eq!(clips, expected);
}

#[test]
fn synth_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let extra = "seed = 7\n[synth]\ncount = 10\npeople = 2\n";
    let (ca, cb) = (setup(a.path(), extra), setup(b.path(), extra));
    let s = commands::synth(&ca).unwrap();
    assert_eq!((s.count, s.people, s.seed), (10, 2, 7));
    commands::synth(&cb).unwrap();
    let (sa, sb) = (snapshot(&ca.dataset), snapshot(&cb.dataset));
    assert_eq!(sa.iter().filter(|(p, _)| p.to_string_lossy().ends_with(".json")).count(), 10);
    assert_eq!(sa, sb);

    let (manifest, rig, scenes) = load_dataset(&ca.dataset).unwrap();
    assert_eq!((manifest.count, manifest.people, rig.len(), scenes.len()), (10, 2, 4, 10));
    assert!(scenes.iter().all(|s| s.people.len() == 2 && s.anchors.len() == 2));
}

#[test]
fn synth_count_zero_writes_valid_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "[synth]\ncount = 0\n");
    commands::synth(&cfg).unwrap();
    let m: Manifest = toml::from_str(&fs::read_to_string(cfg.dataset.join(MANIFEST)).unwrap()).unwrap();
    assert_eq!(m.count, 0);
    let (_, _, scenes) = load_dataset(&cfg.dataset).unwrap();
    assert!(scenes.is_empty());
    assert!(read_sequence(&cfg.dataset.join("ground_truth.jsonl")).unwrap().frames.is_empty());
}

#[test]
fn invalid_rig_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), "");
    let rig = dir.path().join("rig.toml");
    let camera = "[[camera]]\nid = {id}\nintrinsics = [[450.0, 0.0, 256.0], [0.0, 450.0, 256.0], [0.0, 0.0, 1.0]]\n\
        rotation = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]\ntranslation = [0.0, 0.0, 5.0]\n\
        image_size = [512, 512]\nheatmap_downscale = 4\n";
    let good = camera.replace("{id}", "0");
    let singular = camera.replace("{id}", "1").replace("[0.0, 0.0, 1.0]]\nrotation", "[0.0, 0.0, 0.0]]\nrotation");
    fs::write(&rig, format!("schema_version = 1\n{good}\n{singular}")).unwrap();
    let err = PipelineConfig::load(&dir.path().join("pipeline.toml")).and_then(|c| commands::synth(&c).map(|_| ()));
    let msg = err.unwrap_err().to_string();
    assert!(msg.contains("camera[1]"), "{msg}");

    fs::write(&rig, "schema_version = 1\n[ring]\nviews = 1\nradius = 4.0\nheight = 2.0\nfocal = 400.0\nimage_size = [512, 512]\nheatmap_downscale = 4\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_volmocap")).args(["synth", "-c"]).arg(dir.path().join("pipeline.toml")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ring.views"));

    fs::write(&rig, "schema_version = 1\n[ring]\nviews = 4\nradius = 4.0\nheight = 2.0\nfocal = 400.0\nimage_size = [512, 512]\nheatmap_downscale = 4\nfov = 3\n").unwrap();
    let msg = commands::synth(&PipelineConfig::load(&dir.path().join("pipeline.toml")).unwrap()).unwrap_err().to_string();
    assert!(msg.contains("fov"), "{msg}");
}

#[test]
fn train_with_zero_epochs_writes_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "seed = 5\n[synth]\ncount = 2\n[train]\nepochs = 0\n");
    commands::synth(&cfg).unwrap();
    let s = commands::train(&cfg).unwrap();
    assert!(s.epochs.is_empty());
    assert_eq!(fs::read(&s.log).unwrap(), b"");
    let (net, meta) = load_checkpoint(&cfg.checkpoint).unwrap();
    assert_eq!(meta.resolution, 16);
    let fresh = PoseNet::<f32>::new(cfg.model.net(), &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(net, fresh);
}

#[test]
fn train_is_reproducible() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), "seed = 11\n[synth]\ncount = 4\n[train]\nepochs = 2\nbatch_size = 2\nlearning_rate = 1e-3\n");
        commands::synth(&cfg).unwrap();
        commands::train(&cfg).unwrap();
        (fs::read(&cfg.checkpoint).unwrap(), fs::read(cfg.output.join("train_log.jsonl")).unwrap())
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a.1).unwrap().lines().count(), 2);
}

#[test]
fn divergence_is_reported_with_last_finite_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "[synth]\ncount = 2\n[train]\nepochs = 3\nbatch_size = 1\nlearning_rate = 1e30\n");
    commands::synth(&cfg).unwrap();
    match commands::train(&cfg) {
        Err(CliError::Core(volmocap::Error::DivergedLoss { epoch, last_finite_epoch })) => {
            assert_eq!(last_finite_epoch, epoch.checked_sub(1));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
    let out = Command::new(env!("CARGO_BIN_EXE_volmocap")).args(["train", "-c"]).arg(dir.path().join("pipeline.toml")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("last finite epoch"));
}

#[test]
fn toy_training_lowers_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(
        dir.path(),
        "seed = 2\n[synth]\ncount = 200\n[train]\nepochs = 50\nbatch_size = 32\nlearning_rate = 3e-3\n[augment]\nview_dropout = 0.0\nkeypoint_dropout = 0.0\nfalse_positive_rate = 0.0\n",
    );
    commands::synth(&cfg).unwrap();
    let s = commands::train(&cfg).unwrap();
    assert_eq!(s.epochs.len(), 50);
    let (first, last) = (s.epochs[0].mean_loss, s.epochs[49].mean_loss);
    assert!(last < first, "loss {first} -> {last}");
}

#[test]
fn infer_fails_fast_without_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    let err = commands::infer(&cfg, &dir.path().join("nowhere"), &dir.path().join("est.jsonl"), None).unwrap_err();
    assert!(matches!(&err, CliError::Missing(p) if p == &cfg.checkpoint), "{err}");
}

fn trained_sequence(dir: &std::path::Path, tracking: bool) -> PipelineConfig {
    let cfg = setup(dir, &format!("seed = 4\n[synth]\ncount = 10\npeople = 2\nsequence = true\n[train]\nepochs = 1\n[inference]\ntracking = {tracking}\n"));
    commands::synth(&cfg).unwrap();
    commands::train(&cfg).unwrap();
    cfg
}

#[test]
fn infer_tracks_after_the_first_frame() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained_sequence(dir.path(), true);
    let out = dir.path().join("est.jsonl");
    let s = commands::infer(&cfg, &cfg.dataset, &out, None).unwrap();
    assert_eq!(s.frames, 10);
    let seq = read_sequence(&out).unwrap();
    let sources: Vec<_> = seq.frames.iter().map(|f| f.anchors.clone().unwrap()).collect();
    assert_eq!(sources[0], "detected");
    assert!(sources[1..].iter().all(|s| s == "tracked"));
    // ids persist across a smooth sequence
    let ids = |f: &volmocap_cli::formats::FrameRecord| f.people.iter().map(|p| p.id).collect::<Vec<_>>();
    assert!(seq.frames.iter().all(|f| ids(f) == ids(&seq.frames[0])));
}

#[test]
fn infer_without_tracking_is_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained_sequence(dir.path(), false);
    let out = dir.path().join("est.jsonl");
    commands::infer(&cfg, &cfg.dataset, &out, None).unwrap();
    let seq = read_sequence(&out).unwrap();
    let frames = commands::heatmap_frames(&cfg.dataset).unwrap();
    for (k, path) in frames.iter().enumerate() {
        let single = dir.path().join(format!("single{k}"));
        fs::create_dir_all(&single).unwrap();
        fs::copy(path, single.join(path.file_name().unwrap())).unwrap();
        let one = single.join("est.jsonl");
        commands::infer(&cfg, &single, &one, None).unwrap();
        let alone = read_sequence(&one).unwrap();
        assert_eq!(alone.frames[0].people, seq.frames[k].people, "frame {k}");
        assert_eq!(seq.frames[k].anchors.as_deref(), Some("detected"));
    }
    // and the tracker never tracks
    let mut t = AnchorTracker::new(cfg.inference.centers(), false);
    let rig = volmocap_cli::config::load_rig(&cfg.rig).unwrap();
    t.update(&read_heatmaps(&frames[0]).unwrap(), &rig);
    assert!(!t.will_track());
}

#[test]
fn infer_output_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained_sequence(dir.path(), true);
    let out = dir.path().join("est.jsonl");
    commands::infer(&cfg, &cfg.dataset, &out, Some(&dir.path().join("volumes"))).unwrap();
    let seq = read_sequence(&out).unwrap();
    let again = dir.path().join("again.jsonl");
    write_sequence(&again, &seq).unwrap();
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
    assert_eq!(read_sequence(&again).unwrap(), seq);

    let dump = fs::read_dir(dir.path().join("volumes")).unwrap().count();
    assert_eq!(dump, 20);
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "seed = 9\n[synth]\ncount = 5\npeople = 2\n");
    commands::synth(&cfg).unwrap();
    let gt = cfg.dataset.join("ground_truth.jsonl");
    let r = commands::eval(&gt, &gt, 50.0, &[25.0, 50.0, 100.0], &dir.path().join("eval")).unwrap();
    assert_eq!(r.metrics.mpjpe_mm, Some(0.0));
    assert_eq!(r.metrics.pck, 100.0);
    assert!(r.metrics.sweep.iter().all(|&(_, p)| p == 100.0));
    assert!(r.metrics.average_precision.iter().all(|&(_, ap)| ap == 100.0));
    assert_eq!(r.center_error_mm, Some(0.0));
    for f in ["report.json", "pck_sweep.svg", "pck_per_joint.svg"] {
        assert!(dir.path().join("eval").join(f).exists());
    }
    let plots = commands::export_plots(&dir.path().join("eval/report.json"), &dir.path().join("plots")).unwrap();
    assert_eq!(plots.len(), 2);
}

#[test]
fn eval_ignores_person_ids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "seed = 9\n[synth]\ncount = 6\npeople = 2\n");
    commands::synth(&cfg).unwrap();
    let gt_path = cfg.dataset.join("ground_truth.jsonl");
    let gt = read_sequence(&gt_path).unwrap();
    let mut est = gt.clone();
    for (k, f) in est.frames.iter_mut().enumerate() {
        for p in &mut f.people {
            for j in &mut p.joints {
                j[0] += 0.01 * (k as f64 + 1.0);
            }
        }
    }
    let ordered = dir.path().join("ordered.jsonl");
    write_sequence(&ordered, &est).unwrap();
    for (k, f) in est.frames.iter_mut().enumerate() {
        let n = f.people.len() as u32;
        for (i, p) in f.people.iter_mut().enumerate() {
            p.id = 100 + (i as u32 + k as u32 + 1) % n;
        }
    }
    let shuffled = dir.path().join("shuffled.jsonl");
    write_sequence(&shuffled, &est).unwrap();
    let a = commands::eval(&shuffled, &gt_path, 50.0, &[25.0, 50.0, 100.0], &dir.path().join("a")).unwrap();
    let b = commands::eval(&ordered, &gt_path, 50.0, &[25.0, 50.0, 100.0], &dir.path().join("b")).unwrap();
    assert_eq!(a, b);
    assert!(a.metrics.mpjpe_mm.unwrap() > 0.0);
}

#[test]
fn eval_rejects_missing_frames() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "seed = 9\n[synth]\ncount = 4\n");
    commands::synth(&cfg).unwrap();
    let gt_path = cfg.dataset.join("ground_truth.jsonl");
    let mut est: Sequence = read_sequence(&gt_path).unwrap();
    est.frames.remove(2);
    let path = dir.path().join("est.jsonl");
    write_sequence(&path, &est).unwrap();
    match commands::eval(&path, &gt_path, 50.0, &[50.0], &dir.path().join("e")) {
        Err(CliError::FrameMismatch { only_estimates: 0, only_gt: 1, first_gt: Some(2), .. }) => {}
        other => panic!("expected a frame mismatch, got {other:?}"),
    }
}
