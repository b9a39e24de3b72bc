//! Tiny scale-hyperprior codec.
//!
//! Analysis: two stride-2 5x5 convolutions with GDN after each, then a 5x5
//! convolution to the latent `y` at 1/4 resolution. The hyper-analysis maps
//! `|y|` through a 3x3 convolution and a stride-2 5x5 convolution, so the
//! total stride is 8. Synthesis is a convolution on `y` followed by two
//! rounds of nearest upsampling and convolution, with ReLU in between. `z`
//! uses a per-channel factorized logistic prior; `y` uses a zero-mean
//! logistic whose scale is predicted from `z`.

use ndarray::{Array4, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rate_bits, CompressionModel, ForwardOutput, ModelSpec, ParamSet, Quantization};
use crate::autodiff::{Real, Tensor, Var};
use crate::error::{Error, Result};

/// Total downsampling factor of the latent pyramid.
pub const STRIDE: usize = 8;
/// Lower bound added to predicted scales.
const SCALE_FLOOR: f64 = 0.11;
const GDN_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct HyperpriorCodec {
    channels: usize,
    latent: usize,
    hyper: usize,
    params: ParamSet,
}

struct Init<'a> {
    rng: ChaCha8Rng,
    params: &'a mut ParamSet,
}

impl Init<'_> {
    fn conv(&mut self, name: &str, out_c: usize, in_c: usize, k: usize) {
        self.conv_scaled(name, out_c, in_c, k, 1.0, 0.0);
    }

    fn conv_scaled(&mut self, name: &str, out_c: usize, in_c: usize, k: usize, gain: f64, bias: f64) {
        let bound = gain * (3.0 / (in_c * k * k) as f64).sqrt();
        let w = Tensor::from_shape_simple_fn(IxDyn(&[out_c, in_c, k, k]), || self.rng.random_range(-bound..bound));
        self.params.push(format!("{name}.weight"), w);
        self.params.push(format!("{name}.bias"), Tensor::from_elem(IxDyn(&[1, out_c, 1, 1]), bias));
    }

    fn gdn(&mut self, name: &str, c: usize) {
        self.params.push(format!("{name}.beta"), Tensor::from_elem(IxDyn(&[1, c, 1, 1]), 1.0));
        let gamma = Array4::from_shape_fn((c, c, 1, 1), |(i, j, _, _)| if i == j { 0.1f64.sqrt() } else { 0.0 });
        self.params.push(format!("{name}.gamma"), gamma.into_dyn());
    }
}

/// Cursor over bound parameters in declaration order.
struct Params<'p, 'g, F: Real> {
    vars: &'p [Var<'g, F>],
    next: usize,
}

impl<'g, F: Real> Params<'_, 'g, F> {
    fn take(&mut self) -> Var<'g, F> {
        let v = self.vars[self.next];
        self.next += 1;
        v
    }

    fn conv(&mut self, x: Var<'g, F>, stride: usize) -> Var<'g, F> {
        let (w, b) = (self.take(), self.take());
        let k = w.shape()[2];
        x.conv2d(w, stride, k / 2).add(b)
    }

    fn gdn(&mut self, x: Var<'g, F>) -> Var<'g, F> {
        let beta = self.take().square().add_scalar(F::lit(GDN_EPS));
        let gamma = self.take().square();
        x.div(x.square().conv2d(gamma, 1, 0).add(beta).sqrt())
    }
}

/// Discretized logistic likelihood of integer-centred bins around `value`.
fn logistic_likelihood<'g, F: Real>(value: Var<'g, F>, loc: Var<'g, F>, scale: Var<'g, F>) -> Var<'g, F> {
    let d = value.sub(loc).abs();
    let upper = d.neg().add_scalar(F::lit(0.5)).div(scale).sigmoid();
    let lower = d.neg().add_scalar(F::lit(-0.5)).div(scale).sigmoid();
    upper.sub(lower)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

impl HyperpriorCodec {
    pub const DEFAULT_SPEC: ModelSpec = ModelSpec::Hyperprior { channels: 16, latent: 16, hyper: 8 };

    pub fn new(channels: usize, latent: usize, hyper: usize, seed: u64) -> Result<Self> {
        if channels == 0 || latent == 0 || hyper == 0 || channels > 64 || latent > 64 || hyper > 64 {
            return Err(Error::Config(format!("hyperprior widths ({channels}, {latent}, {hyper}) must be in 1..=64")));
        }
        let mut params = ParamSet::new();
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed), params: &mut params };
        let (c, m, k) = (channels, latent, hyper);
        init.conv("g_a.0", c, 3, 5);
        init.gdn("g_a.1", c);
        init.conv("g_a.2", c, c, 5);
        init.gdn("g_a.3", c);
        init.conv("g_a.4", m, c, 5);
        init.conv("h_a.0", k, m, 3);
        init.conv("h_a.1", k, k, 5);
        init.conv("h_s.0", k, k, 3);
        init.conv("h_s.1", m, k, 3);
        init.conv("g_s.0", c, m, 5);
        init.conv("g_s.1", c, c, 5);
        // starts from near-flat mid-gray reconstructions
        init.conv_scaled("g_s.2", 3, c, 5, 0.1, 0.5);
        params.push("z_prior.loc", Tensor::zeros(IxDyn(&[1, k, 1, 1])));
        params.push("z_prior.log_scale", Tensor::zeros(IxDyn(&[1, k, 1, 1])));
        Ok(Self { channels, latent, hyper, params })
    }

    /// Reflection-pads an untracked `(1, 3, H, W)` input to stride multiples.
    fn pad<'g, F: Real>(x: Var<'g, F>) -> Result<Var<'g, F>> {
        let s = x.shape();
        let (h, w) = (s[2], s[3]);
        let (ph, pw) = (h.div_ceil(STRIDE) * STRIDE, w.div_ceil(STRIDE) * STRIDE);
        if (ph, pw) == (h, w) {
            return Ok(x);
        }
        if x.is_tracked() {
            return Err(Error::Config("padding a tracked input is not supported".into()));
        }
        let v = x.value();
        let padded = Tensor::from_shape_fn(IxDyn(&[s[0], s[1], ph, pw]), |i| {
            v[[i[0], i[1], reflect(i[2] as isize, h), reflect(i[3] as isize, w)]]
        });
        Ok(x.graph().constant(padded))
    }
}

impl CompressionModel for HyperpriorCodec {
    fn spec(&self) -> ModelSpec {
        ModelSpec::Hyperprior { channels: self.channels, latent: self.latent, hyper: self.hyper }
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward<'g, F: Real>(&self, params: &[Var<'g, F>], x: Var<'g, F>, q: Quantization) -> Result<ForwardOutput<'g, F>> {
        let s = x.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 {
            return Err(Error::ShapeMismatch { expected: vec![1, 3, 0, 0], got: s });
        }
        if params.len() != self.params.len() {
            return Err(Error::Config(format!("expected {} parameters, got {}", self.params.len(), params.len())));
        }
        let (h, w) = (s[2], s[3]);
        let mut p = Params { vars: params, next: 0 };

        let mut t = Self::pad(x)?;
        t = p.conv(t, 2);
        t = p.gdn(t);
        t = p.conv(t, 2);
        t = p.gdn(t);
        let y = p.conv(t, 1);

        let mut t = p.conv(y.abs(), 1).relu();
        let z = p.conv(t, 2);
        let z_hat = q.apply(z, 1);

        t = p.conv(z_hat.upsample_nearest(2), 1).relu();
        let scale = p.conv(t, 1).softplus().add_scalar(F::lit(SCALE_FLOOR));
        let y_hat = q.apply(y, 2);

        t = p.conv(y_hat, 1).relu();
        t = p.conv(t.upsample_nearest(2), 1).relu();
        let x_hat = p.conv(t.upsample_nearest(2), 1);

        let (loc, log_scale) = (p.take(), p.take());
        debug_assert_eq!(p.next, params.len());
        let bits_z = rate_bits(logistic_likelihood(z_hat, loc, log_scale.exp()));
        let zero = x.graph().scalar(F::zero());
        let bits_y = rate_bits(logistic_likelihood(y_hat, zero, scale));

        let x_hat = if x_hat.shape()[2..] == [h, w] { x_hat } else { x_hat.slice(&[(0, 1), (0, 3), (0, h), (0, w)]) };
        Ok(ForwardOutput { x_hat, bits_y, bits_z })
    }
}
