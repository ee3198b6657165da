//! The policy network: three 3×3 conv layers, `C+1 → 16 → 16 → 2`.
//!
//! conv1 (stride 1, ReLU) → conv2 (stride 2, ReLU) → nearest ×2 up →
//! conv3 (stride 1) giving a background and a foreground logit per cell.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::conv::{conv3x3_backward, conv3x3_forward, upsample2, upsample2_backward, Shape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::Tensor;

pub const HIDDEN: usize = 16;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_POLICY_LR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<F = f32> {
    /// `[out, in, 3, 3]`
    pub weight: Tensor<F>,
    /// `[out]`
    pub bias: Tensor<F>,
    pub stride: usize,
}

impl<F: Scalar> ConvLayer<F> {
    fn zeros(out_c: usize, in_c: usize, stride: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![out_c, in_c, 3, 3]),
            bias: Tensor::zeros(vec![out_c]),
            stride,
        }
    }

    fn he(out_c: usize, in_c: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / (in_c * 9) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let mut layer = Self::zeros(out_c, in_c, stride);
        for w in layer.weight.data_mut() {
            *w = F::lit(normal.sample(rng));
        }
        layer
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<F = f32> {
    pub conv1: ConvLayer<F>,
    pub conv2: ConvLayer<F>,
    pub conv3: ConvLayer<F>,
    pub temperature: F,
    pub learning_rate: F,
    pub rng_seed: u64,
    /// Number of applied REINFORCE updates.
    pub updates: u64,
    /// Moving-average reward baseline; `None` disables it.
    pub baseline: Option<F>,
}

impl<F: Scalar> PolicyParams<F> {
    /// He-initialised hidden layers, zero output layer (uniform policy).
    pub fn new(image_channels: usize, rng_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let in_c = image_channels + 1;
        Self {
            conv1: ConvLayer::he(HIDDEN, in_c, 1, &mut rng),
            conv2: ConvLayer::he(HIDDEN, HIDDEN, 2, &mut rng),
            conv3: ConvLayer::zeros(2, HIDDEN, 1),
            temperature: F::lit(DEFAULT_TEMPERATURE),
            learning_rate: F::lit(DEFAULT_POLICY_LR),
            rng_seed,
            updates: 0,
            baseline: None,
        }
    }

    /// Every layer randomly initialised; used by gradient checks.
    pub fn random(image_channels: usize, rng_seed: u64) -> Self {
        let mut p = Self::new(image_channels, rng_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x9e37_79b9_7f4a_7c15);
        p.conv3 = ConvLayer::he(2, HIDDEN, 1, &mut rng);
        let normal = Normal::new(0.0, 0.1).unwrap();
        for layer in p.layers_mut() {
            for b in layer.bias.data_mut() {
                *b = F::lit(normal.sample(&mut rng));
            }
        }
        p
    }

    pub fn input_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn layers(&self) -> [&ConvLayer<F>; 3] {
        [&self.conv1, &self.conv2, &self.conv3]
    }

    pub fn layers_mut(&mut self) -> [&mut ConvLayer<F>; 3] {
        [&mut self.conv1, &mut self.conv2, &mut self.conv3]
    }

    /// Parameter blocks in a fixed order: w1, b1, w2, b2, w3, b3.
    pub fn blocks(&self) -> Vec<&Tensor<F>> {
        self.layers()
            .into_iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let [a, b, c] = self.layers_mut();
        vec![
            &mut a.weight,
            &mut a.bias,
            &mut b.weight,
            &mut b.bias,
            &mut c.weight,
            &mut c.bias,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|t| t.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> PolicyParams<G> {
        let layer = |l: &ConvLayer<F>| ConvLayer {
            weight: l.weight.cast(),
            bias: l.bias.cast(),
            stride: l.stride,
        };
        PolicyParams {
            conv1: layer(&self.conv1),
            conv2: layer(&self.conv2),
            conv3: layer(&self.conv3),
            temperature: G::lit(self.temperature.as_f64()),
            learning_rate: G::lit(self.learning_rate.as_f64()),
            rng_seed: self.rng_seed,
            updates: self.updates,
            baseline: self.baseline.map(|b| G::lit(b.as_f64())),
        }
    }
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct ForwardCache<F> {
    x: Vec<F>,
    xs: Shape,
    a1: Vec<F>,
    s1: Shape,
    a2: Vec<F>,
    s2: Shape,
    up: Vec<F>,
    su: Shape,
    pub logits: Vec<F>,
    pub sl: Shape,
}

pub(crate) fn forward_cached<F: Scalar>(
    params: &PolicyParams<F>,
    state: &Tensor<F>,
) -> Result<ForwardCache<F>> {
    let [c, h, w] = *state.dims() else {
        return Err(Error::Shape(format!("agent state must be C×H×W, got {:?}", state.dims())));
    };
    if c != params.input_channels() {
        return Err(Error::Shape(format!(
            "state has {c} channels, policy expects {}",
            params.input_channels()
        )));
    }
    let xs = Shape { c, h, w };
    let x = state.data().to_vec();
    let l1 = &params.conv1;
    let (mut a1, s1) = conv3x3_forward(&x, xs, l1.weight.data(), l1.bias.data(), HIDDEN, l1.stride);
    relu(&mut a1);
    let l2 = &params.conv2;
    let (mut a2, s2) = conv3x3_forward(&a1, s1, l2.weight.data(), l2.bias.data(), HIDDEN, l2.stride);
    relu(&mut a2);
    let (up, su) = upsample2(&a2, s2, h, w);
    let l3 = &params.conv3;
    let (logits, sl) = conv3x3_forward(&up, su, l3.weight.data(), l3.bias.data(), 2, l3.stride);
    Ok(ForwardCache {
        x,
        xs,
        a1,
        s1,
        a2,
        s2,
        up,
        su,
        logits,
        sl,
    })
}

fn relu<F: Scalar>(v: &mut [F]) {
    v.iter_mut().for_each(|x| {
        if *x < F::zero() {
            *x = F::zero()
        }
    });
}

/// Backpropagates a gradient on the logits, accumulating into `grads`
/// (same block order as [`PolicyParams::blocks`]).
pub(crate) fn backward<F: Scalar>(
    params: &PolicyParams<F>,
    cache: &ForwardCache<F>,
    dlogits: &[F],
    grads: &mut [Vec<F>],
) {
    let [gw1, gb1, gw2, gb2, gw3, gb3] = grads else {
        panic!("policy gradient needs 6 blocks");
    };
    let dup = conv3x3_backward(
        &cache.up,
        cache.su,
        params.conv3.weight.data(),
        dlogits,
        cache.sl,
        params.conv3.stride,
        gw3,
        gb3,
        true,
    )
    .expect("dx requested");
    let mut da2 = upsample2_backward(&dup, cache.su, cache.s2);
    mask_relu(&mut da2, &cache.a2);
    let mut da1 = conv3x3_backward(
        &cache.a1,
        cache.s1,
        params.conv2.weight.data(),
        &da2,
        cache.s2,
        params.conv2.stride,
        gw2,
        gb2,
        true,
    )
    .expect("dx requested");
    mask_relu(&mut da1, &cache.a1);
    conv3x3_backward(
        &cache.x,
        cache.xs,
        params.conv1.weight.data(),
        &da1,
        cache.s1,
        params.conv1.stride,
        gw1,
        gb1,
        false,
    );
}

fn mask_relu<F: Scalar>(grad: &mut [F], activation: &[F]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= F::zero() {
            *g = F::zero();
        }
    }
}
