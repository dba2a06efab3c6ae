//! Voxel convolutions lowered to gather + GEMM + scatter.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::VoxelTensor;
use crate::scalar::Scalar;

/// Trainable buffer with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Spatial behaviour of a [`VoxelConv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    /// 3x3x3 kernel, stride 1, zero padding 1.
    Same3,
    /// 2x2x2 kernel, stride 2: halves the side.
    Down2,
    /// Transposed 2x2x2 kernel, stride 2: doubles the side.
    Up2,
    /// 1x1x1 kernel.
    Pointwise,
}

impl ConvKind {
    /// Number of kernel taps.
    pub fn taps(self) -> usize {
        match self {
            ConvKind::Same3 => 27,
            ConvKind::Down2 | ConvKind::Up2 => 8,
            ConvKind::Pointwise => 1,
        }
    }

    pub fn output_side(self, input_side: usize) -> usize {
        match self {
            ConvKind::Same3 | ConvKind::Pointwise => input_side,
            ConvKind::Down2 => input_side / 2,
            ConvKind::Up2 => input_side * 2,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            ConvKind::Same3 => "c3",
            ConvKind::Down2 => "d2",
            ConvKind::Up2 => "u2",
            ConvKind::Pointwise => "p1",
        }
    }
}

/// Saved forward state needed by [`VoxelConv::backward`].
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    input_side: usize,
    /// Im2col matrix for gathering kinds, the raw input for `Up2` and `Pointwise`.
    columns: Vec<T>,
}

/// One voxel convolution layer.
///
/// Weights are stored as a `(taps * cin) x cout` matrix for the gathering kinds
/// and as `cin x (8 * cout)` for `Up2`; in both cases the tap index is the
/// slow axis of the tap/channel pair.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelConv<T> {
    pub kind: ConvKind,
    pub cin: usize,
    pub cout: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

const OFFSETS_2: [(usize, usize, usize); 8] = [
    (0, 0, 0),
    (0, 0, 1),
    (0, 1, 0),
    (0, 1, 1),
    (1, 0, 0),
    (1, 0, 1),
    (1, 1, 0),
    (1, 1, 1),
];

impl<T: Scalar> VoxelConv<T> {
    /// He-normal initialisation over the fan-in, zero bias.
    pub fn new(kind: ConvKind, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let fan_in = match kind {
            ConvKind::Up2 => cin,
            _ => kind.taps() * cin,
        };
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weight = (0..kind.taps() * cin * cout).map(|_| T::lit(normal.sample(rng))).collect();
        Self { kind, cin, cout, weight: Param::new(weight), bias: Param::new(vec![T::zero(); cout]) }
    }

    pub fn zeroed(kind: ConvKind, cin: usize, cout: usize) -> Self {
        Self {
            kind,
            cin,
            cout,
            weight: Param::new(vec![T::zero(); kind.taps() * cin * cout]),
            bias: Param::new(vec![T::zero(); cout]),
        }
    }

    /// Short architecture descriptor, e.g. `c3:8>8`.
    pub fn descriptor(&self) -> String {
        format!("{}:{}>{}", self.kind.tag(), self.cin, self.cout)
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn forward(&self, x: &VoxelTensor<T>) -> (VoxelTensor<T>, ConvCache<T>) {
        assert_eq!(x.channels(), self.cin, "{}: input channel mismatch", self.descriptor());
        let s_in = x.side();
        let s_out = self.kind.output_side(s_in);
        let mut out = VoxelTensor::zeros(s_out, self.cout);
        match self.kind {
            ConvKind::Same3 | ConvKind::Down2 | ConvKind::Pointwise => {
                let columns = match self.kind {
                    ConvKind::Same3 => im2col_same3(x),
                    ConvKind::Down2 => im2col_down2(x),
                    _ => x.data().to_vec(),
                };
                let m = s_out * s_out * s_out;
                let k = self.kind.taps() * self.cin;
                let n = self.cout;
                let data = out.data_mut();
                for row in data.chunks_exact_mut(n) {
                    row.copy_from_slice(&self.bias.value);
                }
                T::gemm(m, k, n, T::one(), &columns, (k as isize, 1), &self.weight.value, (n as isize, 1), T::one(), data, (n as isize, 1));
                (out, ConvCache { input_side: s_in, columns })
            }
            ConvKind::Up2 => {
                let m = s_in * s_in * s_in;
                let n = 8 * self.cout;
                let mut spread = vec![T::zero(); m * n];
                T::gemm(m, self.cin, n, T::one(), x.data(), (self.cin as isize, 1), &self.weight.value, (n as isize, 1), T::zero(), &mut spread, (n as isize, 1));
                scatter_up2(&spread, s_in, self.cout, &self.bias.value, &mut out);
                (out, ConvCache { input_side: s_in, columns: x.data().to_vec() })
            }
        }
    }

    /// Accumulate parameter gradients; returns the input gradient when requested.
    pub fn backward(&mut self, cache: &ConvCache<T>, grad_out: &VoxelTensor<T>, need_input_grad: bool) -> Option<VoxelTensor<T>> {
        let s_in = cache.input_side;
        let s_out = self.kind.output_side(s_in);
        assert_eq!((grad_out.side(), grad_out.channels()), (s_out, self.cout), "{}: gradient shape mismatch", self.descriptor());
        let go = grad_out.data();
        for row in go.chunks_exact(self.cout) {
            for (b, &g) in self.bias.grad.iter_mut().zip(row) {
                *b += g;
            }
        }
        match self.kind {
            ConvKind::Same3 | ConvKind::Down2 | ConvKind::Pointwise => {
                let m = s_out * s_out * s_out;
                let k = self.kind.taps() * self.cin;
                let n = self.cout;
                // dW += cols^T * dY
                T::gemm(k, m, n, T::one(), &cache.columns, (1, k as isize), go, (n as isize, 1), T::one(), &mut self.weight.grad, (n as isize, 1));
                if !need_input_grad {
                    return None;
                }
                // dcols = dY * W^T
                let mut dcols = vec![T::zero(); m * k];
                T::gemm(m, n, k, T::one(), go, (n as isize, 1), &self.weight.value, (1, n as isize), T::zero(), &mut dcols, (k as isize, 1));
                let mut gin = VoxelTensor::zeros(s_in, self.cin);
                match self.kind {
                    ConvKind::Same3 => col2im_same3(&dcols, &mut gin),
                    ConvKind::Down2 => col2im_down2(&dcols, &mut gin),
                    _ => gin.data_mut().copy_from_slice(&dcols),
                }
                Some(gin)
            }
            ConvKind::Up2 => {
                let m = s_in * s_in * s_in;
                let n = 8 * self.cout;
                let spread = gather_up2(grad_out, s_in);
                T::gemm(self.cin, m, n, T::one(), &cache.columns, (1, self.cin as isize), &spread, (n as isize, 1), T::one(), &mut self.weight.grad, (n as isize, 1));
                if !need_input_grad {
                    return None;
                }
                let mut gin = VoxelTensor::zeros(s_in, self.cin);
                T::gemm(m, n, self.cin, T::one(), &spread, (n as isize, 1), &self.weight.value, (1, n as isize), T::zero(), gin.data_mut(), (self.cin as isize, 1));
                Some(gin)
            }
        }
    }
}

fn im2col_same3<T: Scalar>(x: &VoxelTensor<T>) -> Vec<T> {
    let s = x.side();
    let c = x.channels();
    let k = 27 * c;
    let mut cols = vec![T::zero(); s * s * s * k];
    let src = x.data();
    let mut row = 0;
    for ix in 0..s {
        for iy in 0..s {
            for iz in 0..s {
                let dst = &mut cols[row * k..(row + 1) * k];
                let mut tap = 0;
                for dx in 0..3 {
                    for dy in 0..3 {
                        for dz in 0..3 {
                            let (nx, ny, nz) = (ix + dx, iy + dy, iz + dz);
                            if nx >= 1 && ny >= 1 && nz >= 1 && nx <= s && ny <= s && nz <= s {
                                let v = ((nx - 1) * s + (ny - 1)) * s + (nz - 1);
                                dst[tap * c..(tap + 1) * c].copy_from_slice(&src[v * c..(v + 1) * c]);
                            }
                            tap += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im_same3<T: Scalar>(dcols: &[T], gin: &mut VoxelTensor<T>) {
    let s = gin.side();
    let c = gin.channels();
    let k = 27 * c;
    let dst = gin.data_mut();
    let mut row = 0;
    for ix in 0..s {
        for iy in 0..s {
            for iz in 0..s {
                let src = &dcols[row * k..(row + 1) * k];
                let mut tap = 0;
                for dx in 0..3 {
                    for dy in 0..3 {
                        for dz in 0..3 {
                            let (nx, ny, nz) = (ix + dx, iy + dy, iz + dz);
                            if nx >= 1 && ny >= 1 && nz >= 1 && nx <= s && ny <= s && nz <= s {
                                let v = ((nx - 1) * s + (ny - 1)) * s + (nz - 1);
                                for (d, &g) in dst[v * c..(v + 1) * c].iter_mut().zip(&src[tap * c..(tap + 1) * c]) {
                                    *d += g;
                                }
                            }
                            tap += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn im2col_down2<T: Scalar>(x: &VoxelTensor<T>) -> Vec<T> {
    let s = x.side();
    let h = s / 2;
    let c = x.channels();
    let k = 8 * c;
    let mut cols = vec![T::zero(); h * h * h * k];
    let src = x.data();
    let mut row = 0;
    for ix in 0..h {
        for iy in 0..h {
            for iz in 0..h {
                for (tap, &(dx, dy, dz)) in OFFSETS_2.iter().enumerate() {
                    let v = ((2 * ix + dx) * s + (2 * iy + dy)) * s + (2 * iz + dz);
                    cols[row * k + tap * c..row * k + (tap + 1) * c].copy_from_slice(&src[v * c..(v + 1) * c]);
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im_down2<T: Scalar>(dcols: &[T], gin: &mut VoxelTensor<T>) {
    let s = gin.side();
    let h = s / 2;
    let c = gin.channels();
    let k = 8 * c;
    let dst = gin.data_mut();
    let mut row = 0;
    for ix in 0..h {
        for iy in 0..h {
            for iz in 0..h {
                for (tap, &(dx, dy, dz)) in OFFSETS_2.iter().enumerate() {
                    let v = ((2 * ix + dx) * s + (2 * iy + dy)) * s + (2 * iz + dz);
                    dst[v * c..(v + 1) * c].copy_from_slice(&dcols[row * k + tap * c..row * k + (tap + 1) * c]);
                }
                row += 1;
            }
        }
    }
}

fn scatter_up2<T: Scalar>(spread: &[T], s_in: usize, cout: usize, bias: &[T], out: &mut VoxelTensor<T>) {
    let s = 2 * s_in;
    let n = 8 * cout;
    let dst = out.data_mut();
    let mut row = 0;
    for ix in 0..s_in {
        for iy in 0..s_in {
            for iz in 0..s_in {
                for (tap, &(dx, dy, dz)) in OFFSETS_2.iter().enumerate() {
                    let v = ((2 * ix + dx) * s + (2 * iy + dy)) * s + (2 * iz + dz);
                    let src = &spread[row * n + tap * cout..row * n + (tap + 1) * cout];
                    for ((d, &a), &b) in dst[v * cout..(v + 1) * cout].iter_mut().zip(src).zip(bias) {
                        *d = a + b;
                    }
                }
                row += 1;
            }
        }
    }
}

fn gather_up2<T: Scalar>(grad_out: &VoxelTensor<T>, s_in: usize) -> Vec<T> {
    let s = 2 * s_in;
    let cout = grad_out.channels();
    let n = 8 * cout;
    let src = grad_out.data();
    let mut spread = vec![T::zero(); s_in * s_in * s_in * n];
    let mut row = 0;
    for ix in 0..s_in {
        for iy in 0..s_in {
            for iz in 0..s_in {
                for (tap, &(dx, dy, dz)) in OFFSETS_2.iter().enumerate() {
                    let v = ((2 * ix + dx) * s + (2 * iy + dy)) * s + (2 * iz + dz);
                    spread[row * n + tap * cout..row * n + (tap + 1) * cout].copy_from_slice(&src[v * cout..(v + 1) * cout]);
                }
                row += 1;
            }
        }
    }
    spread
}
