use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lpmm::ParamVector;
use crate::surrogate::LatentVector;

/// ELU with `alpha = 1`.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Three dense layers `k -> 2k -> 4k -> w`, ELU after the first two, plus a
/// residual head: the output is `mean_latent + d`.
///
/// All weights and biases live in one flat vector, layer by layer, each
/// layer as its row-major `out x in` weight matrix followed by its bias.
/// Gradients and optimizer state use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptorNet {
    widths: [usize; 4],
    params: Vec<f64>,
    mean_latent: LatentVector,
}

/// Gradient of a scalar loss with respect to every parameter of an
/// [`AdaptorNet`], in the net's flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptorGrads {
    widths: [usize; 4],
    values: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct Trace {
    input: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    pub(crate) d: Vec<f64>,
}

fn layer_offsets(widths: &[usize; 4]) -> [(usize, usize, usize, usize); 3] {
    let mut out = [(0, 0, 0, 0); 3];
    let mut off = 0;
    for (l, slot) in out.iter_mut().enumerate() {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        *slot = (off, fan_in, fan_out, off + fan_in * fan_out);
        off += fan_in * fan_out + fan_out;
    }
    out
}

fn param_count(widths: &[usize; 4]) -> usize {
    (0..3).map(|l| widths[l] * widths[l + 1] + widths[l + 1]).sum()
}

/// Width chain `(k, 2k, 4k, w)`.
pub fn width_chain(k: usize, w: usize) -> [usize; 4] {
    [k, 2 * k, 4 * k, w]
}

/// `out = W x + b` for a row-major `W`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.chunks_exact(x.len())
        .zip(b)
        .map(|(row, bi)| row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + bi)
        .collect()
}

impl AdaptorNet {
    /// Net with every weight and bias zero, so `forward(p) == mean_latent`.
    pub fn zeroed(k: usize, mean_latent: LatentVector) -> Result<Self> {
        let widths = width_chain(k, mean_latent.w());
        Self::from_params(widths, vec![0.0; param_count(&widths)], mean_latent)
    }

    pub fn from_params(widths: [usize; 4], params: Vec<f64>, mean_latent: LatentVector) -> Result<Self> {
        let (k, w) = (widths[0], widths[3]);
        if k == 0 || w == 0 || widths != width_chain(k, w) {
            return Err(Error::InvalidArgument(format!(
                "width chain must be (k, 2k, 4k, w), got {widths:?}"
            )));
        }
        if mean_latent.w() != w {
            return Err(Error::DimensionMismatch {
                what: "mean latent",
                expected: w,
                found: mean_latent.w(),
            });
        }
        if params.len() != param_count(&widths) {
            return Err(Error::DimensionMismatch {
                what: "adaptor parameters",
                expected: param_count(&widths),
                found: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("adaptor weights"));
        }
        Ok(Self {
            widths,
            params,
            mean_latent,
        })
    }

    /// Builds a net from per-layer row-major weights and biases.
    pub fn from_layers(weights: [Vec<f64>; 3], biases: [Vec<f64>; 3], mean_latent: LatentVector) -> Result<Self> {
        let widths = [biases[0].len() / 2, biases[0].len(), biases[1].len(), biases[2].len()];
        let mut params = Vec::with_capacity(param_count(&widths));
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.len() != widths[l] * widths[l + 1] {
                return Err(Error::DimensionMismatch {
                    what: "layer weights",
                    expected: widths[l] * widths[l + 1],
                    found: w.len(),
                });
            }
            params.extend_from_slice(w);
            params.extend_from_slice(b);
        }
        Self::from_params(widths, params, mean_latent)
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    pub fn k(&self) -> usize {
        self.widths[0]
    }

    pub fn w(&self) -> usize {
        self.widths[3]
    }

    pub fn mean_latent(&self) -> &LatentVector {
        &self.mean_latent
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Row-major weights of layer `l` (0-based).
    pub fn layer_weights(&self, l: usize) -> &[f64] {
        let (off, _, _, b) = layer_offsets(&self.widths)[l];
        &self.params[off..b]
    }

    pub fn layer_bias(&self, l: usize) -> &[f64] {
        let (_, _, fan_out, b) = layer_offsets(&self.widths)[l];
        &self.params[b..b + fan_out]
    }

    fn check_degree(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.k() {
            return Err(Error::DegreeMismatch {
                expected: self.k(),
                found: p.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn trace(&self, p: &[f64]) -> Trace {
        let z1 = affine(self.layer_weights(0), self.layer_bias(0), p);
        let h1: Vec<f64> = z1.iter().map(|&x| elu(x)).collect();
        let z2 = affine(self.layer_weights(1), self.layer_bias(1), &h1);
        let h2: Vec<f64> = z2.iter().map(|&x| elu(x)).collect();
        let d = affine(self.layer_weights(2), self.layer_bias(2), &h2);
        Trace {
            input: p.to_vec(),
            z1,
            h1,
            z2,
            h2,
            d,
        }
    }

    /// The residual `d` before the mean latent is added.
    pub fn residual(&self, p: &ParamVector) -> Result<Vec<f64>> {
        self.check_degree(p.as_slice())?;
        Ok(self.trace(p.as_slice()).d)
    }

    /// `mean_latent + d(p)`.
    pub fn forward(&self, p: &ParamVector) -> Result<LatentVector> {
        let d = self.residual(p)?;
        LatentVector::new(d.iter().zip(self.mean_latent.as_slice()).map(|(a, b)| a + b).collect())
    }

    /// Accumulates `dL/dparams` into `grads` given `dL/dd` for one traced
    /// input.
    pub(crate) fn backward(&self, trace: &Trace, grad_d: &[f64], grads: &mut AdaptorGrads) {
        let offsets = layer_offsets(&self.widths);
        let inputs = [&trace.input, &trace.h1, &trace.h2];
        let pre = [&trace.z1, &trace.z2];
        let mut upstream = grad_d.to_vec();
        for l in (0..3).rev() {
            let (off, fan_in, _, b) = offsets[l];
            let x = inputs[l];
            for (o, &g) in upstream.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grads.values[b + o] += g;
                let row = &mut grads.values[off + o * fan_in..off + (o + 1) * fan_in];
                for (gw, xi) in row.iter_mut().zip(x.iter()) {
                    *gw += g * xi;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..b];
            let mut down = vec![0.0; fan_in];
            for (row, &g) in w.chunks_exact(fan_in).zip(&upstream) {
                for (dv, wv) in down.iter_mut().zip(row) {
                    *dv += g * wv;
                }
            }
            for (dv, z) in down.iter_mut().zip(pre[l - 1].iter()) {
                *dv *= elu_grad(*z);
            }
            upstream = down;
        }
    }
}

impl AdaptorGrads {
    pub fn zeros_like(net: &AdaptorNet) -> Self {
        Self {
            widths: net.widths,
            values: vec![0.0; net.params.len()],
        }
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn layer_weights(&self, l: usize) -> &[f64] {
        let (off, _, _, b) = layer_offsets(&self.widths)[l];
        &self.values[off..b]
    }

    pub fn layer_bias(&self, l: usize) -> &[f64] {
        let (_, _, fan_out, b) = layer_offsets(&self.widths)[l];
        &self.values[b..b + fan_out]
    }
}

/// Weights `~ U(-sqrt(1/fan_in), sqrt(1/fan_in))` from a seeded stream,
/// biases zero.
pub fn init_adaptor(k: usize, w: usize, mean_latent: LatentVector, seed: u64) -> Result<AdaptorNet> {
    if k == 0 || w == 0 {
        return Err(Error::InvalidArgument("adaptor needs k >= 1 and w >= 1".into()));
    }
    let widths = width_chain(k, w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(param_count(&widths));
    for l in 0..3 {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let bound = (1.0 / fan_in as f64).sqrt();
        params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)));
        params.extend(std::iter::repeat_n(0.0, fan_out));
    }
    AdaptorNet::from_params(widths, params, mean_latent)
}
