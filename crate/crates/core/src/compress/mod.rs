//! Compression-model interface, rate and distortion terms, and the built-in
//! reference codecs.

pub mod checkpoint;
pub mod hyperprior;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use hyperprior::HyperpriorCodec;

use ndarray::IxDyn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::types::ImageArray;

/// Smallest likelihood fed to the rate estimate.
pub const LIKELIHOOD_BOUND: f64 = 1e-9;

/// Named trainable tensors, stored in `f64` and cast into the graph's precision.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<f64>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<f64>] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn zeros_like(&self) -> Self {
        Self { names: self.names.clone(), values: self.values.iter().map(|v| Tensor::zeros(v.raw_dim())).collect() }
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Tracked leaves on `g`, in parameter order.
    pub fn bind<'g, F: Real>(&self, g: &'g Graph<F>) -> Vec<Var<'g, F>> {
        self.values.iter().map(|v| g.leaf(v.mapv(F::lit))).collect()
    }

    /// Same values as untracked constants.
    pub fn bind_frozen<'g, F: Real>(&self, g: &'g Graph<F>) -> Vec<Var<'g, F>> {
        self.values.iter().map(|v| g.constant(v.mapv(F::lit))).collect()
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Config("parameter names differ from the model".into()));
        }
        for (a, b) in self.values.iter().zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch { expected: a.shape().to_vec(), got: b.shape().to_vec() });
            }
        }
        Ok(())
    }
}

/// How latents are quantized in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantization {
    /// Additive uniform noise in `[-0.5, 0.5)` drawn from the given seed.
    Noise(u64),
    /// Rounding to the nearest integer.
    Round,
}

impl Quantization {
    /// Applies the quantizer to `y`; the noise is seeded per call site via `salt`.
    pub fn apply<'g, F: Real>(&self, y: Var<'g, F>, salt: u64) -> Var<'g, F> {
        use rand::Rng;
        match *self {
            Quantization::Noise(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let shape = y.shape();
                let noise = Tensor::from_shape_simple_fn(IxDyn(&shape), || F::lit(rng.random_range(-0.5..0.5)));
                y.add(y.graph().constant(noise))
            }
            Quantization::Round => y.graph().constant(y.value().mapv(|v| v.round())),
        }
    }
}

/// Result of one forward pass on a single `1 x 3 x H x W` image.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput<'g, F: Real> {
    /// Reconstruction, same shape as the input.
    pub x_hat: Var<'g, F>,
    /// Estimated bits for the main latents.
    pub bits_y: Var<'g, F>,
    /// Estimated bits for the hyper-latents.
    pub bits_z: Var<'g, F>,
}

/// A learned codec trained through the text-aware objective.
pub trait CompressionModel {
    fn spec(&self) -> ModelSpec;

    fn params(&self) -> &ParamSet;

    fn params_mut(&mut self) -> &mut ParamSet;

    /// `params` are the model's parameters bound on the same graph as `x`.
    fn forward<'g, F: Real>(&self, params: &[Var<'g, F>], x: Var<'g, F>, q: Quantization) -> Result<ForwardOutput<'g, F>>;
}

/// Serializable description from which a model can be rebuilt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Hyperprior { channels: usize, latent: usize, hyper: usize },
    Identity { bits_per_pixel: f64 },
}

impl Default for ModelSpec {
    fn default() -> Self {
        HyperpriorCodec::DEFAULT_SPEC
    }
}

/// Any built-in model, selected by [`ModelSpec`].
#[derive(Clone, Debug)]
pub enum Model {
    Hyperprior(HyperpriorCodec),
    Identity(IdentityCodec),
}

impl Model {
    /// Fresh model with seeded initialization.
    pub fn from_spec(spec: &ModelSpec, seed: u64) -> Result<Self> {
        match *spec {
            ModelSpec::Hyperprior { channels, latent, hyper } => {
                Ok(Model::Hyperprior(HyperpriorCodec::new(channels, latent, hyper, seed)?))
            }
            ModelSpec::Identity { bits_per_pixel } => Ok(Model::Identity(IdentityCodec::new(bits_per_pixel)?)),
        }
    }
}

impl CompressionModel for Model {
    fn spec(&self) -> ModelSpec {
        match self {
            Model::Hyperprior(m) => m.spec(),
            Model::Identity(m) => m.spec(),
        }
    }

    fn params(&self) -> &ParamSet {
        match self {
            Model::Hyperprior(m) => m.params(),
            Model::Identity(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Model::Hyperprior(m) => m.params_mut(),
            Model::Identity(m) => m.params_mut(),
        }
    }

    fn forward<'g, F: Real>(&self, params: &[Var<'g, F>], x: Var<'g, F>, q: Quantization) -> Result<ForwardOutput<'g, F>> {
        match self {
            Model::Hyperprior(m) => m.forward(params, x, q),
            Model::Identity(m) => m.forward(params, x, q),
        }
    }
}

/// Lossless pass-through charging a fixed rate; a perfect-reconstruction stub.
#[derive(Clone, Debug)]
pub struct IdentityCodec {
    bits_per_pixel: f64,
    params: ParamSet,
}

impl IdentityCodec {
    pub fn new(bits_per_pixel: f64) -> Result<Self> {
        if !(bits_per_pixel.is_finite() && bits_per_pixel >= 0.0) {
            return Err(Error::Config(format!("bits_per_pixel {bits_per_pixel}")));
        }
        Ok(Self { bits_per_pixel, params: ParamSet::new() })
    }
}

impl CompressionModel for IdentityCodec {
    fn spec(&self) -> ModelSpec {
        ModelSpec::Identity { bits_per_pixel: self.bits_per_pixel }
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward<'g, F: Real>(&self, _: &[Var<'g, F>], x: Var<'g, F>, _: Quantization) -> Result<ForwardOutput<'g, F>> {
        let s = x.shape();
        let pixels = (s[s.len() - 2] * s[s.len() - 1]) as f64;
        let g = x.graph();
        Ok(ForwardOutput { x_hat: x, bits_y: g.scalar(F::lit(self.bits_per_pixel * pixels)), bits_z: g.scalar(F::zero()) })
    }
}

/// Rate accounting for one image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub total_bits: f64,
    pub pixel_count: usize,
    pub bpp: f64,
}

impl RateReport {
    pub fn new(total_bits: f64, height: usize, width: usize) -> Result<Self> {
        Ok(Self { total_bits, pixel_count: height * width, bpp: bpp(total_bits, height, width)? })
    }
}

/// Mean squared error over all entries, on the `[0, 1]` scale.
pub fn distortion(x: &ImageArray, x_hat: &ImageArray) -> Result<f64> {
    crate::metrics::mse(x, x_hat)
}

/// Differentiable mean squared error between equally shaped tensors.
pub fn distortion_var<'g, F: Real>(x: Var<'g, F>, x_hat: Var<'g, F>) -> Result<Var<'g, F>> {
    if x.shape() != x_hat.shape() {
        return Err(Error::ShapeMismatch { expected: x.shape(), got: x_hat.shape() });
    }
    Ok(x_hat.sub(x).square().mean())
}

/// `-sum(log2(p))` over likelihoods in `(0, 1]`.
pub fn rate_loss(likelihoods: &[f64]) -> Result<f64> {
    let mut bits = 0.0;
    for &p in likelihoods {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidLikelihood(p));
        }
        bits -= p.log2();
    }
    Ok(bits)
}

/// Differentiable counterpart of [`rate_loss`]; likelihoods are bounded below
/// by [`LIKELIHOOD_BOUND`].
pub fn rate_bits<'g, F: Real>(likelihoods: Var<'g, F>) -> Var<'g, F> {
    likelihoods.clamp_min(F::lit(LIKELIHOOD_BOUND)).ln().sum().scale(F::lit(-std::f64::consts::LOG2_E))
}

pub fn bpp(total_bits: f64, height: usize, width: usize) -> Result<f64> {
    let n = height * width;
    if n == 0 {
        return Err(Error::ZeroPixels);
    }
    Ok(total_bits / n as f64)
}
