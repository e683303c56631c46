use serde::{Deserialize, Serialize};

use super::net::{AdaptorGrads, AdaptorNet};
use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;
use crate::lpmm::{fit_params, LpmmModel, ParamVector};
use crate::surrogate::{render_points, LatentVector, SurrogateStack};

/// Space in which the reconstruction term is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// ℓ1 between rendered rasters.
    #[default]
    Rgb,
    /// ℓ1 between latent codes.
    Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Parameter degree fed to the adaptor.
    pub k: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lambda_rgb: f64,
    pub lambda_pose_reg: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub loss_variant: LossVariant,
    pub pose_reg_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 8,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lambda_rgb: 1.0,
            lambda_pose_reg: 1.0,
            batch_size: 32,
            steps: 2000,
            seed: 0,
            loss_variant: LossVariant::Rgb,
            pose_reg_enabled: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        let nonneg = |x: f64| x >= 0.0 && x.is_finite();
        if !nonneg(self.lambda_rgb) || !nonneg(self.lambda_pose_reg) {
            return bad("loss weights must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }
}

/// Loss terms; `total = lambda_rgb * rgb + lambda_pose_reg * pose_reg`.
///
/// `rgb` holds the reconstruction term of whichever [`LossVariant`] was used.
/// Both terms are per-element means. `pose_reg` is zero when the
/// regularizer is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rgb: f64,
    pub pose_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(rgb: f64, pose_reg: f64, lambda_rgb: f64, lambda_pose_reg: f64) -> Self {
        Self {
            rgb,
            pose_reg,
            total: lambda_rgb * rgb + lambda_pose_reg * pose_reg,
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `p̄ = fit_params(decode(v̄), k)`: the parameters of the average pose.
pub fn average_pose_params(model: &LpmmModel, stack: &SurrogateStack, mean_latent: &LatentVector, k: usize) -> Result<ParamVector> {
    fit_params(model, &stack.decode_latent(mean_latent)?, k)
}

/// Mean absolute residual `‖d(p̄)‖₁ / w`.
pub fn pose_residual(net: &AdaptorNet, p_bar: &ParamVector) -> Result<f64> {
    let d = net.residual(p_bar)?;
    Ok(d.iter().map(|x| x.abs()).sum::<f64>() / d.len() as f64)
}

struct Sample {
    p: Vec<f64>,
    v: Vec<f64>,
    target: Option<Vec<f64>>,
}

/// Precomputed frozen quantities (fitted parameters, encodings, target
/// rasters, `p̄`) for a set of training faces.
pub(crate) struct Objective<'a> {
    stack: &'a SurrogateStack,
    cfg: &'a TrainConfig,
    p_bar: ParamVector,
    samples: Vec<Sample>,
}

fn check_compatible(net: &AdaptorNet, model: &LpmmModel, stack: &SurrogateStack) -> Result<()> {
    if net.w() != stack.w() {
        return Err(Error::DimensionMismatch {
            what: "adaptor output vs surrogate latent",
            expected: stack.w(),
            found: net.w(),
        });
    }
    if stack.n() != model.n() {
        return Err(Error::DimensionMismatch {
            what: "surrogate landmark count",
            expected: model.n(),
            found: stack.n(),
        });
    }
    if net.k() > model.m() {
        return Err(Error::DegreeOutOfRange {
            k: net.k(),
            max: model.m(),
        });
    }
    Ok(())
}

impl<'a> Objective<'a> {
    pub(crate) fn new<'l>(
        net: &AdaptorNet,
        model: &LpmmModel,
        stack: &'a SurrogateStack,
        faces: impl IntoIterator<Item = &'l LandmarkSet>,
        cfg: &'a TrainConfig,
    ) -> Result<Self> {
        check_compatible(net, model, stack)?;
        let k = net.k();
        let samples = faces
            .into_iter()
            .map(|l| {
                let p = fit_params(model, l, k)?.into_vec();
                let v = stack.encode_landmarks(l)?;
                let target = match cfg.loss_variant {
                    LossVariant::Rgb => Some(stack.render_raster(&v)?.pixels),
                    LossVariant::Latent => None,
                };
                Ok(Sample {
                    p,
                    v: v.into_vec(),
                    target,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if samples.is_empty() {
            return Err(Error::InvalidArgument("batch must be non-empty".into()));
        }
        Ok(Self {
            stack,
            cfg,
            p_bar: average_pose_params(model, stack, net.mean_latent(), k)?,
            samples,
        })
    }

    pub(crate) fn len(&self) -> usize {
        self.samples.len()
    }

    pub(crate) fn p_bar(&self) -> &ParamVector {
        &self.p_bar
    }

    /// Loss over the samples at `indices`; accumulates gradients into
    /// `grads` when given.
    pub(crate) fn evaluate(&self, net: &AdaptorNet, indices: &[usize], mut grads: Option<&mut AdaptorGrads>) -> Result<LossBreakdown> {
        let cfg = self.cfg;
        let batch = indices.len() as f64;
        let vbar = net.mean_latent().as_slice();
        let mut rgb_sum = 0.0;
        let elements = match cfg.loss_variant {
            LossVariant::Rgb => self.stack.raster_config().pixel_count(),
            LossVariant::Latent => net.w(),
        } as f64;
        let scale = cfg.lambda_rgb / (batch * elements);

        for &i in indices {
            let s = &self.samples[i];
            let trace = net.trace(&s.p);
            let vhat: Vec<f64> = trace.d.iter().zip(vbar).map(|(d, m)| d + m).collect();
            match cfg.loss_variant {
                LossVariant::Rgb => {
                    let target = s.target.as_ref().expect("rgb objective renders targets");
                    let jac = self.stack.render_jacobian(&LatentVector::new(vhat)?)?;
                    let raster = render_points(self.stack.raster_config(), jac.decoded_coords());
                    let mut cot = grads.is_some().then(|| Vec::with_capacity(target.len()));
                    for (a, b) in raster.pixels.iter().zip(target) {
                        let diff = a - b;
                        rgb_sum += diff.abs();
                        if let Some(c) = cot.as_mut() {
                            c.push(scale * sign(diff));
                        }
                    }
                    if let (Some(g), Some(c)) = (grads.as_deref_mut(), cot) {
                        let gd = jac.vjp(&c)?;
                        net.backward(&trace, &gd, g);
                    }
                }
                LossVariant::Latent => {
                    let mut gd = Vec::with_capacity(vhat.len());
                    for (a, b) in vhat.iter().zip(&s.v) {
                        let diff = a - b;
                        rgb_sum += diff.abs();
                        gd.push(scale * sign(diff));
                    }
                    if let Some(g) = grads.as_deref_mut() {
                        net.backward(&trace, &gd, g);
                    }
                }
            }
        }
        let rgb = rgb_sum / (batch * elements);

        let pose_reg = if cfg.pose_reg_enabled {
            let trace = net.trace(self.p_bar.as_slice());
            let w = trace.d.len() as f64;
            if let Some(g) = grads {
                let gd: Vec<f64> = trace.d.iter().map(|&d| cfg.lambda_pose_reg * sign(d) / w).collect();
                net.backward(&trace, &gd, g);
            }
            trace.d.iter().map(|d| d.abs()).sum::<f64>() / w
        } else {
            0.0
        };
        Ok(LossBreakdown::combine(rgb, pose_reg, cfg.lambda_rgb, cfg.lambda_pose_reg))
    }
}

/// Loss of `net` on `batch` against the surrogate's encodings.
pub fn compute_losses(net: &AdaptorNet, stack: &SurrogateStack, model: &LpmmModel, batch: &[LandmarkSet], cfg: &TrainConfig) -> Result<LossBreakdown> {
    let obj = Objective::new(net, model, stack, batch, cfg)?;
    let all: Vec<usize> = (0..obj.len()).collect();
    obj.evaluate(net, &all, None)
}

/// Exact (sub)gradient of the total loss with respect to every weight and
/// bias, together with the loss itself. ℓ1 kinks use `sign(0) = 0`.
pub fn compute_gradients(
    net: &AdaptorNet,
    stack: &SurrogateStack,
    model: &LpmmModel,
    batch: &[LandmarkSet],
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, AdaptorGrads)> {
    let obj = Objective::new(net, model, stack, batch, cfg)?;
    let all: Vec<usize> = (0..obj.len()).collect();
    let mut grads = AdaptorGrads::zeros_like(net);
    let loss = obj.evaluate(net, &all, Some(&mut grads))?;
    Ok((loss, grads))
}
