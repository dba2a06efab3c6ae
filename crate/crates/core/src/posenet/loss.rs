//! Training objective: penalty-reduced focal loss on the 3D heatmaps plus a
//! per-joint L1 term on the read-out coordinates.

use nalgebra::{Point3, Vector3};

use super::tensor::VoxelTensor;
use crate::scalar::Scalar;
use crate::volumes::VolumeGrid;

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the focal loss.
pub const EPS: f64 = 1e-6;
pub const DEFAULT_HEATMAP_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 1.0, alpha: 2.0, beta: 4.0 }
    }
}

/// Target 3D heatmap: per joint, Gaussians (std `sigma` voxels) centred on the
/// voxel nearest to each in-volume occurrence of that joint, fused by max.
#[derive(Debug, Clone, PartialEq)]
pub struct GtHeatmap {
    pub sigma: f64,
    /// Per joint, the voxel coordinates of every occurrence inside the volume.
    pub peaks: Vec<Vec<[usize; 3]>>,
}

impl GtHeatmap {
    /// `people[k][j]` is joint `j` of person `k` in the standard frame.
    pub fn new(grid: &VolumeGrid, people: &[Vec<Point3<f64>>], joints: usize, sigma: f64) -> Self {
        let mut peaks = vec![Vec::new(); joints];
        for person in people {
            for (j, p) in person.iter().enumerate().take(joints) {
                if let Some(v) = grid.locate(p) {
                    let (x, y, z) = grid.voxel_coords(v);
                    peaks[j].push([x, y, z]);
                }
            }
        }
        Self { sigma, peaks }
    }

    pub fn joints(&self) -> usize {
        self.peaks.len()
    }

    pub fn dense<T: Scalar>(&self, grid: &VolumeGrid) -> VoxelTensor<T> {
        let n = grid.resolution;
        let c = self.peaks.len();
        let mut out = VoxelTensor::zeros(n, c);
        let reach = (4.0 * self.sigma).ceil().max(1.0) as isize;
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        let data = out.data_mut();
        for (j, peaks) in self.peaks.iter().enumerate() {
            for p in peaks {
                for dx in -reach..=reach {
                    for dy in -reach..=reach {
                        for dz in -reach..=reach {
                            let (x, y, z) = (p[0] as isize + dx, p[1] as isize + dy, p[2] as isize + dz);
                            if x < 0 || y < 0 || z < 0 || x >= n as isize || y >= n as isize || z >= n as isize {
                                continue;
                            }
                            let d2 = (dx * dx + dy * dy + dz * dz) as f64;
                            let g = if d2 == 0.0 { 1.0 } else { (-d2 * inv).exp() };
                            let idx = ((x as usize * n + y as usize) * n + z as usize) * c + j;
                            let g = T::lit(g);
                            if g > data[idx] {
                                data[idx] = g;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// `x^a`, multiplying out the small integer exponents used in practice.
#[inline]
fn pow(x: f64, a: f64) -> f64 {
    match a {
        0.0 => 1.0,
        1.0 => x,
        2.0 => x * x,
        3.0 => x * x * x,
        4.0 => {
            let s = x * x;
            s * s
        }
        _ => x.powf(a),
    }
}

/// Loss and derivative with respect to the probability for one voxel.
fn focal_term(p: f64, y: f64, alpha: f64, beta: f64) -> (f64, f64) {
    let clamped = !(EPS..=1.0 - EPS).contains(&p);
    let p = p.clamp(EPS, 1.0 - EPS);
    let (loss, dp) = if y == 1.0 {
        let loss = -pow(1.0 - p, alpha) * p.ln();
        let dp = alpha * pow(1.0 - p, alpha - 1.0) * p.ln() - pow(1.0 - p, alpha) / p;
        (loss, dp)
    } else {
        let w = pow(1.0 - y, beta);
        let loss = -w * pow(p, alpha) * (1.0 - p).ln();
        let dp = -w * (alpha * pow(p, alpha - 1.0) * (1.0 - p).ln() - pow(p, alpha) / (1.0 - p));
        (loss, dp)
    };
    (loss, if clamped { 0.0 } else { dp })
}

fn positives<T: Scalar>(target: &VoxelTensor<T>) -> usize {
    target.data().iter().filter(|y| **y == T::one()).count()
}

/// Focal loss of probabilities `p` (already in `[0, 1]`) against `target`,
/// normalized by the number of voxels where the target equals one.
pub fn focal_loss_probs<T: Scalar>(p: &VoxelTensor<T>, target: &VoxelTensor<T>, cfg: &LossConfig) -> f64 {
    let norm = positives(target).max(1) as f64;
    p.data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| focal_term(p.to_f64_lossy(), y.to_f64_lossy(), cfg.alpha, cfg.beta).0)
        .sum::<f64>()
        / norm
}

/// Focal loss from sigmoid logits; returns the loss and its gradient with
/// respect to the logits.
pub fn focal_loss_logits<T: Scalar>(logits: &VoxelTensor<T>, target: &VoxelTensor<T>, cfg: &LossConfig) -> (f64, VoxelTensor<T>) {
    assert_eq!((logits.side(), logits.channels()), (target.side(), target.channels()), "focal loss shape mismatch");
    let norm = positives(target).max(1) as f64;
    let (alpha, beta) = (cfg.alpha, cfg.beta);
    // below this logit the probability is clamped to EPS: constant loss, no gradient
    let z_min = (EPS / (1.0 - EPS)).ln();
    let floor = -pow(EPS, alpha) * (-EPS).ln_1p();
    let mut grad = VoxelTensor::zeros(logits.side(), logits.channels());
    let mut total = 0.0;
    for ((g, &z), &y) in grad.data_mut().iter_mut().zip(logits.data()).zip(target.data()) {
        let (z, y) = (z.to_f64_lossy(), y.to_f64_lossy());
        if y == 1.0 || z > -z_min {
            let p = sigmoid(z);
            let (l, dp) = focal_term(p, y, alpha, beta);
            total += l;
            *g = T::lit(dp * p * (1.0 - p) / norm);
            continue;
        }
        let w = pow(1.0 - y, beta);
        if z < z_min {
            total += w * floor;
            continue;
        }
        // negatives in closed form: -ln(1 - p) is softplus(z)
        let e = (-z.abs()).exp();
        let (p, softplus) = if z >= 0.0 { (1.0 / (1.0 + e), z + e.ln_1p()) } else { (e / (1.0 + e), e.ln_1p()) };
        let pa = pow(p, alpha);
        total += w * pa * softplus;
        *g = T::lit(w * pa * (alpha * (1.0 - p) * softplus + p) / norm);
    }
    (total / norm, grad)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `lambda / J * sum_j |pred_j - gt_j|_1` and its gradient per predicted joint.
pub fn l1_loss(pred: &[Point3<f64>], gt: &[Point3<f64>], lambda: f64) -> (f64, Vec<Vector3<f64>>) {
    assert_eq!(pred.len(), gt.len(), "joint count mismatch");
    let scale = lambda / pred.len().max(1) as f64;
    let mut loss = 0.0;
    let grads = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = p - g;
            loss += d.abs().sum();
            d.map(|v| if v > 0.0 { scale } else if v < 0.0 { -scale } else { 0.0 })
        })
        .collect();
    (loss * scale, grads)
}
