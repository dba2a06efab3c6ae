//! Procedural MoCap clips: a parametric 15-joint body driven by periodic
//! joint-angle curves.

use std::f64::consts::{PI, TAU};

use nalgebra::{Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::*;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoCapClip {
    pub subject: String,
    pub motion: String,
    pub fps: f64,
    pub frames: Vec<Skeleton3D>,
}

impl MoCapClip {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(Error::InvalidInput(format!("clip {}/{}: fps must be positive", self.subject, self.motion)));
        }
        if let Some(k) = self.frames.iter().position(|f| !f.is_finite()) {
            return Err(Error::InvalidInput(format!("clip {}/{}: frame {k} has non-finite joints", self.subject, self.motion)));
        }
        Ok(())
    }
}

/// Joint angles (radians) and root motion of one body configuration.
#[derive(Debug, Clone, Copy, Default)]
struct Angles {
    yaw: f64,
    torso_pitch: f64,
    torso_roll: f64,
    head_pitch: f64,
    // [left, right]
    hip_flex: [f64; 2],
    hip_abd: [f64; 2],
    knee: [f64; 2],
    shoulder_flex: [f64; 2],
    shoulder_abd: [f64; 2],
    elbow: [f64; 2],
    /// Added after floor contact (walking, jumping).
    offset: [f64; 3],
}

fn rx(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), a)
}

fn ry(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), a)
}

fn rz(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), a)
}

/// Body facing +y, left side towards -x; lowest joint on the floor.
fn pose(a: &Angles, scale: f64) -> [Point3<f64>; NUM_JOINTS] {
    let s = scale;
    let root = rz(a.yaw);
    let torso = root * rx(-a.torso_pitch) * ry(a.torso_roll);
    let down = Vector3::new(0.0, 0.0, -1.0);
    let mut j = [Point3::origin(); NUM_JOINTS];
    let pelvis = Point3::origin();
    j[PELVIS] = pelvis;
    j[NECK] = pelvis + torso * Vector3::new(0.0, 0.0, 0.52 * s);
    j[NOSE] = j[NECK] + torso * rx(-a.head_pitch) * Vector3::new(0.0, 0.09 * s, 0.13 * s);
    let sides = [(-1.0, L_HIP, L_KNEE, L_ANKLE, L_SHOULDER, L_ELBOW, L_WRIST), (1.0, R_HIP, R_KNEE, R_ANKLE, R_SHOULDER, R_ELBOW, R_WRIST)];
    for (k, &(sign, hip, knee, ankle, sho, elb, wri)) in sides.iter().enumerate() {
        // abduction moves the limb away from the midline on either side
        let abd_leg = ry(-sign * a.hip_abd[k]);
        j[hip] = pelvis + root * Vector3::new(sign * 0.1 * s, 0.0, 0.0);
        j[knee] = j[hip] + root * rx(a.hip_flex[k]) * abd_leg * (down * 0.42 * s);
        j[ankle] = j[knee] + root * rx(a.hip_flex[k] - a.knee[k]) * abd_leg * (down * 0.42 * s);
        let abd_arm = ry(-sign * a.shoulder_abd[k]);
        j[sho] = j[NECK] + torso * Vector3::new(sign * 0.19 * s, 0.0, -0.03 * s);
        j[elb] = j[sho] + torso * rx(a.shoulder_flex[k]) * abd_arm * (down * 0.28 * s);
        j[wri] = j[elb] + torso * rx(a.shoulder_flex[k]) * abd_arm * rx(a.elbow[k]) * (down * 0.25 * s);
    }
    let floor = j.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let shift = Vector3::new(a.offset[0], a.offset[1], a.offset[2] - floor);
    j.iter_mut().for_each(|p| *p += shift);
    j
}

fn ramp(phase: f64) -> f64 {
    0.5 * (1.0 - phase.cos())
}

type Motion = fn(f64) -> Angles;

fn walk(t: f64) -> Angles {
    let ph = TAU * 0.9 * t;
    let swing = 0.45 * ph.sin();
    Angles {
        hip_flex: [swing, -swing],
        knee: [0.1 + 0.6 * (-ph.cos()).max(0.0), 0.1 + 0.6 * ph.cos().max(0.0)],
        shoulder_flex: [-0.35 * ph.sin(), 0.35 * ph.sin()],
        elbow: [0.3, 0.3],
        offset: [0.0, 1.1 * t, 0.0],
        ..Default::default()
    }
}

fn wave(t: f64) -> Angles {
    let ph = TAU * 1.5 * t;
    Angles {
        shoulder_abd: [0.1, 2.4],
        elbow: [0.1, 0.9 + 0.5 * ph.sin()],
        torso_roll: 0.08 * ph.sin(),
        head_pitch: 0.1,
        ..Default::default()
    }
}

fn squat(t: f64) -> Angles {
    let d = ramp(TAU * 0.5 * t);
    Angles {
        hip_flex: [1.3 * d; 2],
        knee: [2.4 * d; 2],
        torso_pitch: 0.45 * d,
        shoulder_flex: [1.4 * d; 2],
        ..Default::default()
    }
}

fn jump(t: f64) -> Angles {
    let ph = TAU * 0.8 * t;
    let air = ph.sin().max(0.0);
    let crouch = (-ph.sin()).max(0.0);
    Angles {
        hip_flex: [0.7 * crouch; 2],
        knee: [1.3 * crouch; 2],
        torso_pitch: 0.3 * crouch,
        shoulder_flex: [2.6 * air - 0.5 * crouch; 2],
        offset: [0.0, 0.0, 0.35 * air],
        ..Default::default()
    }
}

fn reach(t: f64) -> Angles {
    let d = ramp(TAU * 0.4 * t);
    Angles {
        torso_pitch: 0.8 * d,
        shoulder_flex: [1.6 * d, 1.2 * d],
        elbow: [0.2, 0.4],
        hip_flex: [0.3 * d; 2],
        head_pitch: -0.3 * d,
        ..Default::default()
    }
}

fn turn(t: f64) -> Angles {
    let ph = TAU * 1.2 * t;
    Angles {
        yaw: 1.4 * t,
        hip_flex: [0.2 * ph.sin(), -0.2 * ph.sin()],
        knee: [0.2 * (-ph.cos()).max(0.0), 0.2 * ph.cos().max(0.0)],
        shoulder_abd: [0.3, 0.3],
        ..Default::default()
    }
}

fn kick(t: f64) -> Angles {
    let ph = TAU * 0.7 * t;
    let k = ph.sin().max(0.0);
    Angles {
        hip_flex: [0.0, 1.4 * k],
        knee: [0.1, 1.2 * (1.0 - k) * (ph.cos() > 0.0) as u8 as f64],
        torso_pitch: -0.15 * k,
        shoulder_abd: [0.6 * k, 0.6 * k],
        ..Default::default()
    }
}

fn clap(t: f64) -> Angles {
    let open = ramp(TAU * 1.2 * t);
    Angles {
        shoulder_flex: [1.3; 2],
        shoulder_abd: [0.9 * open - 0.25; 2],
        elbow: [0.4; 2],
        ..Default::default()
    }
}

fn bow(t: f64) -> Angles {
    let d = ramp(TAU * 0.5 * t);
    Angles { torso_pitch: 1.1 * d, head_pitch: 0.4 * d, shoulder_flex: [0.3 * d; 2], ..Default::default() }
}

fn jumping_jacks(t: f64) -> Angles {
    let d = ramp(TAU * 1.0 * t);
    Angles {
        shoulder_abd: [2.8 * d; 2],
        hip_abd: [0.35 * d; 2],
        offset: [0.0, 0.0, 0.12 * (TAU * 2.0 * t).sin().abs()],
        ..Default::default()
    }
}

fn boxing(t: f64) -> Angles {
    let ph = TAU * 1.5 * t;
    Angles {
        shoulder_flex: [1.3 + 0.2 * ph.sin(), 1.3 - 0.2 * ph.sin()],
        elbow: [1.8 * ramp(ph), 1.8 * ramp(ph + PI)],
        hip_flex: [0.25, -0.1],
        knee: [0.35, 0.3],
        torso_pitch: 0.15,
        yaw: 0.2 * ph.sin(),
        ..Default::default()
    }
}

fn lunge(t: f64) -> Angles {
    let d = ramp(TAU * 0.5 * t);
    Angles {
        hip_flex: [1.0 * d, -0.4 * d],
        knee: [1.3 * d, 1.2 * d],
        shoulder_abd: [0.3, 0.3],
        elbow: [0.5, 0.5],
        ..Default::default()
    }
}

fn sidestep(t: f64) -> Angles {
    let ph = TAU * 0.8 * t;
    Angles {
        hip_abd: [0.3 * ph.sin().max(0.0), 0.3 * (-ph.sin()).max(0.0)],
        knee: [0.15; 2],
        shoulder_abd: [0.25; 2],
        offset: [0.5 * t, 0.0, 0.0],
        ..Default::default()
    }
}

const MOTIONS: [(&str, Motion); 12] = [
    ("walk", walk),
    ("wave", wave),
    ("squat", squat),
    ("jump", jump),
    ("reach", reach),
    ("turn", turn),
    ("kick", kick),
    ("clap", clap),
    ("bow", bow),
    ("jumping_jacks", jumping_jacks),
    ("boxing", boxing),
    ("lunge", lunge),
];

const SUBJECTS: [(&str, f64); 3] = [("s01", 1.0), ("s02", 0.92), ("s03", 1.08)];

pub const CORPUS_FPS: f64 = 30.0;

/// One clip per motion; subjects (body scale) rotate through the list.
pub fn builtin_corpus() -> Vec<MoCapClip> {
    let extra: [(&str, Motion); 1] = [("sidestep", sidestep)];
    MOTIONS
        .iter()
        .chain(extra.iter())
        .enumerate()
        .map(|(k, &(name, motion))| {
            let (subject, scale) = SUBJECTS[k % SUBJECTS.len()];
            let frames = (0..120)
                .map(|f| {
                    let t = f as f64 / CORPUS_FPS;
                    Skeleton3D::new(0, pose(&motion(t), scale))
                })
                .collect();
            MoCapClip { subject: subject.to_string(), motion: name.to_string(), fps: CORPUS_FPS, frames }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_valid() {
        let clips = builtin_corpus();
        assert!(clips.len() >= 10);
        for c in &clips {
            c.validate().unwrap();
            let bones0 = c.frames[0].bone_lengths();
            for f in &c.frames {
                assert!(f.lowest_z() >= -1e-12);
                // rigid segments
                for (a, b) in f.bone_lengths().iter().zip(&bones0) {
                    assert!((a - b).abs() < 1e-9, "{}: bone {a} vs {b}", c.motion);
                }
            }
            let h = c.frames[0].neck().z - c.frames[0].lowest_z();
            assert!((1.0..2.0).contains(&h), "{} neck height {h}", c.motion);
        }
    }

    #[test]
    fn standing_pose_is_upright() {
        let j = pose(&Angles::default(), 1.0);
        assert!((j[NECK] - j[PELVIS]).normalize().dot(&Vector3::z()) > 0.999);
        assert!(j[L_HIP].x < 0.0 && j[R_HIP].x > 0.0);
        assert!(j[NOSE].y > j[NECK].y);
    }
}
