//! Voxel-to-voxel encoder-decoder stages and the two-stage pose network.

use rand::Rng;

use super::layers::{ConvCache, ConvKind, Param, VoxelConv};
use super::tensor::VoxelTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Channel widths at the 1/2, 1/4 and 1/8 resolution levels.
pub type Widths = [usize; 3];

pub const DEFAULT_WIDTHS: Widths = [8, 16, 32];

// layer slots, in parameter order
const D1: usize = 0;
const E1: usize = 1;
const D2: usize = 2;
const E2: usize = 3;
const D3: usize = 4;
const E3: usize = 5;
const U3: usize = 6;
const F2: usize = 7;
const U2: usize = 8;
const F1: usize = 9;
const U1: usize = 10;
const SKIP: usize = 11;

/// Three-level voxel encoder-decoder producing unnormalized logits.
///
/// Each level downsamples with a strided 2x2x2 convolution followed by a 3x3x3
/// convolution; the decoder upsamples with transposed 2x2x2 convolutions and adds
/// the matching encoder features. A pointwise projection of the input is added
/// to the full-resolution output.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderDecoder<T> {
    pub cin: usize,
    pub cout: usize,
    pub widths: Widths,
    layers: Vec<VoxelConv<T>>,
}

/// Forward state kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StageCache<T> {
    convs: Vec<ConvCache<T>>,
    // post-ReLU activations, in forward order: a1 s1 a2 s2 a3 b3 g2 h2 g1 h1
    acts: Vec<VoxelTensor<T>>,
}

fn relu<T: Scalar>(mut x: VoxelTensor<T>) -> VoxelTensor<T> {
    x.data_mut().iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero();
        }
    });
    x
}

/// Zero the gradient where the activation was clipped.
fn relu_mask<T: Scalar>(grad: &mut VoxelTensor<T>, act: &VoxelTensor<T>) {
    for (g, &a) in grad.data_mut().iter_mut().zip(act.data()) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

impl<T: Scalar> EncoderDecoder<T> {
    pub fn new(cin: usize, cout: usize, widths: Widths, rng: &mut impl Rng) -> Self {
        Self::build(cin, cout, widths, |kind, i, o| VoxelConv::new(kind, i, o, rng))
    }

    pub fn zeroed(cin: usize, cout: usize, widths: Widths) -> Self {
        Self::build(cin, cout, widths, VoxelConv::zeroed)
    }

    fn build(cin: usize, cout: usize, widths: Widths, mut make: impl FnMut(ConvKind, usize, usize) -> VoxelConv<T>) -> Self {
        let [c1, c2, c3] = widths;
        let plan = [
            (ConvKind::Down2, cin, c1),
            (ConvKind::Same3, c1, c1),
            (ConvKind::Down2, c1, c2),
            (ConvKind::Same3, c2, c2),
            (ConvKind::Down2, c2, c3),
            (ConvKind::Same3, c3, c3),
            (ConvKind::Up2, c3, c2),
            (ConvKind::Same3, c2, c2),
            (ConvKind::Up2, c2, c1),
            (ConvKind::Same3, c1, c1),
            (ConvKind::Up2, c1, cout),
            (ConvKind::Pointwise, cin, cout),
        ];
        let layers = plan.into_iter().map(|(k, i, o)| make(k, i, o)).collect();
        Self { cin, cout, widths, layers }
    }

    pub fn layers(&self) -> &[VoxelConv<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [VoxelConv<T>] {
        &mut self.layers
    }

    /// Set the pointwise input projection to `gain * I` on the first
    /// `min(cin, cout)` channels with a constant bias, and shrink the decoder
    /// output so the stage starts close to that affine map.
    pub fn init_skip(&mut self, gain: f64, bias: f64, decoder_scale: f64) {
        let (cin, cout) = (self.cin, self.cout);
        let skip = &mut self.layers[SKIP];
        skip.weight.value.iter_mut().for_each(|w| *w = T::zero());
        for c in 0..cin.min(cout) {
            skip.weight.value[c * cout + c] = T::lit(gain);
        }
        skip.bias.value.iter_mut().for_each(|b| *b = T::lit(bias));
        self.layers[U1].weight.value.iter_mut().for_each(|w| *w *= T::lit(decoder_scale));
    }

    /// Zero the layers that produce the output (decoder head and input projection).
    pub fn zero_output(&mut self) {
        for slot in [U1, SKIP] {
            for p in self.layers[slot].params_mut() {
                p.value.iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn descriptor(&self) -> String {
        self.layers.iter().map(|l| l.descriptor()).collect::<Vec<_>>().join(",")
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn check_input(&self, x: &VoxelTensor<T>) -> Result<()> {
        if x.channels() != self.cin || x.side() % 8 != 0 || x.side() == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} channels, side divisible by 8", self.cin),
                actual: format!("{} channels, side {}", x.channels(), x.side()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &VoxelTensor<T>) -> (VoxelTensor<T>, StageCache<T>) {
        let l = &self.layers;
        let mut convs = Vec::with_capacity(self.layers.len());
        let mut acts = Vec::with_capacity(10);
        let run = |slot: usize, input: &VoxelTensor<T>, convs: &mut Vec<ConvCache<T>>| {
            let (y, c) = l[slot].forward(input);
            convs.push(c);
            y
        };
        let a1 = relu(run(D1, x, &mut convs));
        let s1 = relu(run(E1, &a1, &mut convs));
        let a2 = relu(run(D2, &s1, &mut convs));
        let s2 = relu(run(E2, &a2, &mut convs));
        let a3 = relu(run(D3, &s2, &mut convs));
        let b3 = relu(run(E3, &a3, &mut convs));
        let mut g2 = run(U3, &b3, &mut convs);
        g2.add_assign(&s2);
        let g2 = relu(g2);
        let h2 = relu(run(F2, &g2, &mut convs));
        let mut g1 = run(U2, &h2, &mut convs);
        g1.add_assign(&s1);
        let g1 = relu(g1);
        let h1 = relu(run(F1, &g1, &mut convs));
        let mut out = run(U1, &h1, &mut convs);
        let skip = run(SKIP, x, &mut convs);
        out.add_assign(&skip);
        acts.extend([a1, s1, a2, s2, a3, b3, g2, h2, g1, h1]);
        (out, StageCache { convs, acts })
    }

    /// Accumulate parameter gradients for `grad_out` (gradient of the logits).
    pub fn backward(&mut self, cache: &StageCache<T>, grad_out: &VoxelTensor<T>, need_input_grad: bool) -> Option<VoxelTensor<T>> {
        let [a1, s1, a2, s2, a3, b3, g2, h2, g1, h1] = cache.acts.iter().collect::<Vec<_>>()[..] else {
            unreachable!("cache holds ten activations")
        };
        let c = &cache.convs;
        let l = &mut self.layers;
        let back = |l: &mut Vec<VoxelConv<T>>, slot: usize, grad: &VoxelTensor<T>| l[slot].backward(&c[slot], grad, true).expect("input gradient requested");

        let skip_grad = l[SKIP].backward(&c[SKIP], grad_out, need_input_grad);
        let mut d_h1 = back(l, U1, grad_out);
        relu_mask(&mut d_h1, h1);
        let mut d_g1 = back(l, F1, &d_h1);
        relu_mask(&mut d_g1, g1);
        let mut d_h2 = back(l, U2, &d_g1);
        let mut d_s1 = d_g1;
        relu_mask(&mut d_h2, h2);
        let mut d_g2 = back(l, F2, &d_h2);
        relu_mask(&mut d_g2, g2);
        let mut d_b3 = back(l, U3, &d_g2);
        let mut d_s2 = d_g2;
        relu_mask(&mut d_b3, b3);
        let mut d_a3 = back(l, E3, &d_b3);
        relu_mask(&mut d_a3, a3);
        d_s2.add_assign(&back(l, D3, &d_a3));
        relu_mask(&mut d_s2, s2);
        let mut d_a2 = back(l, E2, &d_s2);
        relu_mask(&mut d_a2, a2);
        d_s1.add_assign(&back(l, D2, &d_a2));
        relu_mask(&mut d_s1, s1);
        let mut d_a1 = back(l, E1, &d_s1);
        relu_mask(&mut d_a1, a1);
        let d_x = l[D1].backward(&c[D1], &d_a1, need_input_grad);
        match (d_x, skip_grad) {
            (Some(mut d), Some(s)) => {
                d.add_assign(&s);
                Some(d)
            }
            _ => None,
        }
    }
}

/// Architecture of a [`PoseNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub joints: usize,
    pub widths: Widths,
    /// Whether the localization stage receives the anchor fields.
    pub conditioned: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { joints: crate::skeleton::NUM_JOINTS, widths: DEFAULT_WIDTHS, conditioned: true }
    }
}

impl NetConfig {
    pub fn klm_inputs(&self) -> usize {
        if self.conditioned {
            self.joints + 4
        } else {
            self.joints
        }
    }
}

/// Heatmap estimation stage followed by the keypoint localization stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseNet<T> {
    pub config: NetConfig,
    pub hem: EncoderDecoder<T>,
    pub klm: EncoderDecoder<T>,
}

impl<T: Scalar> PoseNet<T> {
    /// Random initialization. Both stages start near an affine map of their
    /// heatmap input so early training sees sensible localizations.
    pub fn new(config: NetConfig, rng: &mut impl Rng) -> Self {
        let j = config.joints;
        let mut hem = EncoderDecoder::new(j, j, config.widths, rng);
        let mut klm = EncoderDecoder::new(config.klm_inputs(), j, config.widths, rng);
        hem.init_skip(6.0, -3.0, 0.1);
        klm.init_skip(30.0, 0.0, 0.1);
        Self { config, hem, klm }
    }

    /// All parameters zero; a shell to load weights into.
    pub fn zeroed(config: NetConfig) -> Self {
        let j = config.joints;
        Self { config, hem: EncoderDecoder::zeroed(j, j, config.widths), klm: EncoderDecoder::zeroed(config.klm_inputs(), j, config.widths) }
    }

    pub fn num_params(&self) -> usize {
        self.hem.num_params() + self.klm.num_params()
    }

    /// Stable textual description of the architecture.
    pub fn descriptor(&self) -> String {
        format!(
            "posenet/j{}/w{}-{}-{}/{}|hem[{}]|klm[{}]",
            self.config.joints,
            self.config.widths[0],
            self.config.widths[1],
            self.config.widths[2],
            if self.config.conditioned { "cond" } else { "plain" },
            self.hem.descriptor(),
            self.klm.descriptor()
        )
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.hem.params();
        p.extend(self.klm.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.hem.params_mut();
        p.extend(self.klm.params_mut());
        p
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    /// Localization-stage input: `[H, Z, -Z_o]`, or `H` alone when unconditioned.
    pub fn klm_input(&self, heat: &VoxelTensor<T>, z: &VoxelTensor<T>, z_other: &VoxelTensor<T>) -> Result<VoxelTensor<T>> {
        let side = heat.side();
        if heat.channels() != self.config.joints {
            return Err(Error::ShapeMismatch { expected: format!("{} heatmap channels", self.config.joints), actual: heat.channels().to_string() });
        }
        if !self.config.conditioned {
            return Ok(heat.clone());
        }
        for (name, v) in [("Z", z), ("Z_o", z_other)] {
            if v.channels() != 2 || v.side() != side {
                return Err(Error::ShapeMismatch { expected: format!("{name}: 2 channels at side {side}"), actual: format!("{} channels at side {}", v.channels(), v.side()) });
            }
        }
        let negated = z_other.map(|v| -v);
        Ok(VoxelTensor::concat(&[heat, z, &negated]))
    }
}
