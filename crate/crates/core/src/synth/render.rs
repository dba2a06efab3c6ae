//! Gaussian keypoint heatmaps rendered through the rig.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;

use super::AugmentConfig;
use crate::geometry::{project, CameraParams, HeatmapStack};
use crate::skeleton::{Skeleton3D, NUM_JOINTS};

/// Base std of a rendered keypoint (heatmap pixels).
pub const RENDER_SIGMA: f64 = 2.0;

/// Elliptical Gaussian splat, max-composited into `map`.
#[derive(Debug, Clone, Copy)]
struct Splat {
    cx: f64,
    cy: f64,
    amplitude: f64,
    sx: f64,
    sy: f64,
    angle: f64,
}

impl Splat {
    fn round(cx: f64, cy: f64, amplitude: f64) -> Self {
        Self { cx, cy, amplitude, sx: RENDER_SIGMA, sy: RENDER_SIGMA, angle: 0.0 }
    }

    fn draw(&self, map: &mut [f32], width: usize, height: usize) {
        let reach = 4.0 * self.sx.max(self.sy);
        let x0 = (self.cx - reach).floor().max(0.0) as usize;
        let y0 = (self.cy - reach).floor().max(0.0) as usize;
        let x1 = (self.cx + reach).ceil().min(width as f64 - 1.0);
        let y1 = (self.cy + reach).ceil().min(height as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            return;
        }
        let (s, c) = self.angle.sin_cos();
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let (dx, dy) = (x as f64 - self.cx, y as f64 - self.cy);
                let u = (c * dx + s * dy) / self.sx;
                let v = (-s * dx + c * dy) / self.sy;
                let val = (self.amplitude * (-0.5 * (u * u + v * v)).exp()) as f32;
                let cell = &mut map[y * width + x];
                *cell = cell.max(val);
            }
        }
    }
}

fn uniform(rng: &mut (impl Rng + ?Sized), (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn symmetric(rng: &mut (impl Rng + ?Sized), half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        half * (2.0 * rng.random::<f64>() - 1.0)
    }
}

/// Clean render of one person into the maps of one view.
pub fn render_person(skeleton: &Skeleton3D, cam: &CameraParams<f64>, maps: &mut [f32]) {
    let (w, h) = cam.heatmap_size();
    for (j, p) in skeleton.joints.iter().enumerate() {
        let Ok(px) = project(p, cam) else { continue };
        if !cam.in_image(&px) {
            continue;
        }
        let hp = cam.to_heatmap(&px);
        Splat::round(hp.x, hp.y, 1.0).draw(&mut maps[j * w * h..(j + 1) * w * h], w, h);
    }
}

/// Render every person in every view, composited by per-pixel max, then
/// apply the configured 2D augmentations. Returns the maps and the dropped views.
///
/// Random draws happen in a fixed order (dropout, then per view, person and
/// joint), so a seeded generator reproduces the output exactly.
pub fn render_heatmaps(people: &[Skeleton3D], cams: &[CameraParams<f64>], augment: &AugmentConfig, rng: &mut (impl Rng + ?Sized)) -> (HeatmapStack, Vec<usize>) {
    let (w, h) = cams.first().map(|c| c.heatmap_size()).unwrap_or((0, 0));
    let plane = w * h;
    let mut stack = HeatmapStack::zeros(cams.len(), NUM_JOINTS, w, h);

    let mut dropped: Vec<usize> = (0..cams.len()).filter(|_| augment.view_dropout > 0.0 && rng.random_bool(augment.view_dropout)).collect();
    if cams.len() - dropped.len() < 2 {
        dropped.shuffle(rng);
        let keep = (2usize.min(cams.len())).saturating_sub(cams.len() - dropped.len());
        dropped.drain(..keep);
    }
    dropped.sort_unstable();

    for (v, cam) in cams.iter().enumerate() {
        debug_assert_eq!(cam.heatmap_size(), (w, h), "rig views must share the heatmap size");
        let maps = stack.view_mut(v);
        for person in people {
            for (j, p) in person.joints.iter().enumerate() {
                if augment.keypoint_dropout > 0.0 && rng.random_bool(augment.keypoint_dropout) {
                    continue;
                }
                let Ok(px) = project(p, cam) else { continue };
                if !cam.in_image(&px) {
                    continue;
                }
                let hp = cam.to_heatmap(&px);
                let splat = Splat {
                    cx: hp.x + symmetric(rng, augment.position_jitter),
                    cy: hp.y + symmetric(rng, augment.position_jitter),
                    amplitude: uniform(rng, augment.peak_scale),
                    sx: RENDER_SIGMA * (1.0 + symmetric(rng, augment.anisotropy)),
                    sy: RENDER_SIGMA * (1.0 + symmetric(rng, augment.anisotropy)),
                    angle: if augment.anisotropy > 0.0 { PI * rng.random::<f64>() } else { 0.0 },
                };
                splat.draw(&mut maps[j * plane..(j + 1) * plane], w, h);
            }
        }
        for j in 0..NUM_JOINTS {
            if augment.false_positive_rate > 0.0 && rng.random_bool(augment.false_positive_rate) {
                let splat = Splat::round(rng.random::<f64>() * (w as f64 - 1.0), rng.random::<f64>() * (h as f64 - 1.0), uniform(rng, augment.false_positive_amplitude));
                splat.draw(&mut maps[j * plane..(j + 1) * plane], w, h);
            }
        }
    }
    for &v in &dropped {
        stack.view_mut(v).iter_mut().for_each(|x| *x = 0.0);
    }
    (stack, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Point3, Vector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam(id: usize) -> CameraParams<f64> {
        let k = Matrix3::new(400.0, 0.0, 256.0, 0.0, 400.0, 256.0, 0.0, 0.0, 1.0);
        CameraParams::new(id, k, Matrix3::identity(), Vector3::new(0.0, 0.0, 5.0), (512, 512), 4).unwrap()
    }

    fn person(offset: f64) -> Skeleton3D {
        let mut joints = [Point3::origin(); NUM_JOINTS];
        for (j, p) in joints.iter_mut().enumerate() {
            *p = Point3::new(offset + 0.1 * (j % 5) as f64 - 0.2, 0.12 * (j / 5) as f64 - 0.1, 0.03 * j as f64);
        }
        Skeleton3D::new(0, joints)
    }

    #[test]
    fn clean_peak_on_pixel() {
        // the principal point lands on heatmap pixel (64, 64)
        let mut s = person(0.0);
        s.joints[0] = Point3::new(0.0, 0.0, 0.0);
        let (stack, dropped) = render_heatmaps(&[s], &[cam(0), cam(1)], &AugmentConfig::none(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(dropped.is_empty());
        let m = stack.map(0, 0);
        assert_eq!(m.at(64, 64), 1.0);
        assert!(m.data.iter().all(|&v| v <= 1.0));
    }

    #[test]
    fn argmax_within_half_pixel() {
        let c = cam(0);
        let s = person(0.05);
        let (stack, _) = render_heatmaps(&[s.clone()], &[c.clone(), c.clone()], &AugmentConfig::none(), &mut ChaCha8Rng::seed_from_u64(0));
        for j in 0..NUM_JOINTS {
            let m = stack.map(0, j);
            let (k, _) = m.data.iter().enumerate().fold((0, f32::MIN), |b, (k, &v)| if v > b.1 { (k, v) } else { b });
            let hp = c.to_heatmap(&project(&s.joints[j], &c).unwrap());
            let (x, y) = ((k % m.width) as f64, (k / m.width) as f64);
            assert!((x - hp.x).abs() <= 0.5 + 1e-9 && (y - hp.y).abs() <= 0.5 + 1e-9, "joint {j}");
        }
    }

    #[test]
    fn full_keypoint_dropout_is_blank() {
        let aug = AugmentConfig { keypoint_dropout: 1.0, ..AugmentConfig::none() };
        let (stack, _) = render_heatmaps(&[person(0.0)], &[cam(0), cam(1), cam(2)], &aug, &mut ChaCha8Rng::seed_from_u64(1));
        for v in 0..3 {
            assert!(stack.view(v).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn overlap_composites_by_max() {
        let cams = [cam(0), cam(1)];
        let (a, b) = (person(0.0), person(0.04));
        let (both, _) = render_heatmaps(&[a.clone(), b.clone()], &cams, &AugmentConfig::none(), &mut ChaCha8Rng::seed_from_u64(0));
        let (w, h) = cams[0].heatmap_size();
        let mut ma = vec![0.0f32; NUM_JOINTS * w * h];
        let mut mb = ma.clone();
        render_person(&a, &cams[0], &mut ma);
        render_person(&b, &cams[0], &mut mb);
        let expect: Vec<f32> = ma.iter().zip(&mb).map(|(x, y)| x.max(*y)).collect();
        assert_eq!(both.view(0), expect.as_slice());
        assert!(ma != expect && mb != expect);
    }

    #[test]
    fn at_least_two_views_survive() {
        let cams: Vec<_> = (0..5).map(cam).collect();
        let aug = AugmentConfig { view_dropout: 0.9, ..AugmentConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let (stack, dropped) = render_heatmaps(&[person(0.0)], &cams, &aug, &mut rng);
            assert!(cams.len() - dropped.len() >= 2);
            for &v in &dropped {
                assert!(stack.view(v).iter().all(|&x| x == 0.0));
            }
        }
        let aug = AugmentConfig { view_dropout: 1.0, ..AugmentConfig::default() };
        let (_, dropped) = render_heatmaps(&[person(0.0)], &cams[..2], &aug, &mut rng);
        assert!(dropped.is_empty());
    }

    #[test]
    fn augmentations_stay_in_unit_range() {
        let cams: Vec<_> = (0..3).map(cam).collect();
        let aug = AugmentConfig { false_positive_rate: 1.0, ..AugmentConfig::default() };
        let (stack, _) = render_heatmaps(&[person(0.0), person(0.3)], &cams, &aug, &mut ChaCha8Rng::seed_from_u64(4));
        for v in 0..3 {
            assert!(stack.view(v).iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
