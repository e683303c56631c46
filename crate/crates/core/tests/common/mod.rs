//! Oracles shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use lpmm_core::adaptor::average_pose_params;
use lpmm_core::synthetic::{SyntheticFaces, SyntheticSpec};
use lpmm_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub model: LpmmModel,
    pub stack: SurrogateStack,
    pub batch: Vec<LandmarkSet>,
    pub net: AdaptorNet,
    pub cfg: TrainConfig,
}

pub fn faces(samples: usize, seed: u64, noise: f64) -> LandmarkDataset {
    SyntheticFaces::new(SyntheticSpec {
        samples,
        seed,
        point_noise: noise,
        ..Default::default()
    })
    .dataset()
}

/// Net with every weight and bias drawn from `U(-scale, scale)`.
pub fn random_net(k: usize, w: usize, mean_latent: LatentVector, scale: f64, rng: &mut impl Rng) -> AdaptorNet {
    let widths = adaptor::width_chain(k, w);
    let count: usize = (0..3).map(|l| widths[l] * widths[l + 1] + widths[l + 1]).sum();
    let params = (0..count).map(|_| rng.random_range(-scale..scale)).collect();
    AdaptorNet::from_params(widths, params, mean_latent).unwrap()
}

/// A small random problem: `k <= 5`, `w <= 6`, raster at most 16x16.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=5);
    let w = rng.random_range(1..=6);
    let raster = RasterConfig {
        height: rng.random_range(8..=16),
        width: rng.random_range(8..=16),
        sigma: rng.random_range(0.04..0.12),
    };
    let data = faces(12, seed, 0.004);
    let model = build_lpmm(&data, ComponentCount::Auto).unwrap();
    let stack = make_surrogate(seed, w, model.n(), raster, &model.mean_landmarks()).unwrap();
    let batch: Vec<LandmarkSet> = data.landmarks().take(rng.random_range(1..=4)).cloned().collect();
    let vbar = stack.mean_latent(&data).unwrap();
    let net = random_net(k, w, vbar, 0.4, &mut rng);
    let cfg = TrainConfig {
        k,
        lambda_rgb: rng.random_range(0.5..2.0),
        lambda_pose_reg: rng.random_range(0.5..2.0),
        loss_variant: if rng.random_bool(0.5) { LossVariant::Rgb } else { LossVariant::Latent },
        pose_reg_enabled: rng.random_bool(0.7),
        ..Default::default()
    };
    Instance { model, stack, batch, net, cfg }
}

/// Every argument of an absolute value in the total loss.
pub fn l1_arguments(inst: &Instance, net: &AdaptorNet) -> Vec<f64> {
    let k = net.k();
    let mut out = Vec::new();
    for l in &inst.batch {
        let p = fit_params(&inst.model, l, k).unwrap();
        let v = inst.stack.encode_landmarks(l).unwrap();
        let vhat = net.forward(&p).unwrap();
        match inst.cfg.loss_variant {
            LossVariant::Rgb => {
                let a = inst.stack.render_raster(&vhat).unwrap();
                let b = inst.stack.render_raster(&v).unwrap();
                out.extend(a.pixels.iter().zip(&b.pixels).map(|(x, y)| x - y));
            }
            LossVariant::Latent => out.extend(vhat.as_slice().iter().zip(v.as_slice()).map(|(x, y)| x - y)),
        }
    }
    if inst.cfg.pose_reg_enabled {
        let p_bar = average_pose_params(&inst.model, &inst.stack, net.mean_latent(), k).unwrap();
        out.extend(net.residual(&p_bar).unwrap());
    }
    out
}

fn sgn(x: f64) -> i8 {
    (x > 0.0) as i8 - (x < 0.0) as i8
}

fn with_param(net: &AdaptorNet, j: usize, value: f64) -> AdaptorNet {
    let mut params = net.params().to_vec();
    params[j] = value;
    AdaptorNet::from_params(net.widths(), params, net.mean_latent().clone()).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct FdOutcome {
    pub checked: usize,
    pub excluded: usize,
    pub max_rel_err: f64,
}

pub const FD_STEP: f64 = 1e-6;
pub const KINK_TOL: f64 = 1e-7;
/// Denominator floor for the relative error, below FD round-off noise.
pub const REL_FLOOR: f64 = 1e-7;

/// Central differences of `compute_losses` against `compute_gradients`.
///
/// A coordinate is excluded when some ℓ1 argument changes sign across the
/// stencil, or sits within `KINK_TOL` of zero and close enough that the
/// stencil could reach the kink.
pub fn finite_difference_check(inst: &Instance) -> FdOutcome {
    let (_, grads) = compute_gradients(&inst.net, &inst.stack, &inst.model, &inst.batch, &inst.cfg).unwrap();
    let base_args = l1_arguments(inst, &inst.net);
    let mut out = FdOutcome {
        checked: 0,
        excluded: 0,
        max_rel_err: 0.0,
    };
    for (j, &theta) in inst.net.params().iter().enumerate() {
        let plus = with_param(&inst.net, j, theta + FD_STEP);
        let minus = with_param(&inst.net, j, theta - FD_STEP);
        let (ap, am) = (l1_arguments(inst, &plus), l1_arguments(inst, &minus));
        let kink = base_args.iter().zip(ap.iter().zip(&am)).any(|(&a0, (&a1, &a2))| {
            let reach = (a1 - a0).abs().max((a2 - a0).abs());
            reach > 0.0 && (sgn(a1) != sgn(a0) || sgn(a2) != sgn(a0) || (a0.abs() < KINK_TOL && a0.abs() <= 2.0 * reach))
        });
        if kink {
            out.excluded += 1;
            continue;
        }
        let lp = compute_losses(&plus, &inst.stack, &inst.model, &inst.batch, &inst.cfg).unwrap().total;
        let lm = compute_losses(&minus, &inst.stack, &inst.model, &inst.batch, &inst.cfg).unwrap().total;
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let g = grads.as_slice()[j];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(REL_FLOOR);
        out.max_rel_err = out.max_rel_err.max(rel);
        out.checked += 1;
    }
    out
}

/// Adaptor reproducing the surrogate encoding exactly for faces inside the
/// span of the first `k` components: `d(p) = E B_k p + E(mean - anchor) - v̄`.
/// Hidden layers pass `p` through on the positive branch of the ELU.
pub fn affine_oracle_net(model: &LpmmModel, stack: &SurrogateStack, k: usize, mean_latent: LatentVector) -> AdaptorNet {
    let shift = 10.0;
    let w = stack.w();
    let e = stack.encode_matrix();
    let a = e * model.basis().columns(0, k);
    let c = e * (model.mean() - stack.anchor());
    let (h1, h2) = (2 * k, 4 * k);

    let mut w1 = vec![0.0; h1 * k];
    let mut b1 = vec![0.0; h1];
    for i in 0..k {
        w1[i * k + i] = 1.0;
    }
    b1.iter_mut().for_each(|b| *b = shift);

    let mut w2 = vec![0.0; h2 * h1];
    for i in 0..k {
        w2[i * h1 + i] = 1.0;
    }
    let b2 = vec![0.0; h2];

    let mut w3 = vec![0.0; w * h2];
    let mut b3 = vec![0.0; w];
    for r in 0..w {
        let mut shifted = 0.0;
        for i in 0..k {
            w3[r * h2 + i] = a[(r, i)];
            shifted += a[(r, i)] * shift;
        }
        b3[r] = c[r] - mean_latent.as_slice()[r] - shifted;
    }
    AdaptorNet::from_layers([w1, w2, w3], [b1, b2, b3], mean_latent).unwrap()
}

/// Largest principal angle between the column spaces of two orthonormal
/// `d x r` matrices.
pub fn max_principal_angle(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    let m = a.transpose() * b;
    let s = m.svd(false, false).singular_values;
    let smallest = s.iter().copied().fold(f64::INFINITY, f64::min).min(1.0);
    // acos loses precision near 1; use the sine from the complement.
    let proj = b - a * (a.transpose() * b);
    let sine = proj.svd(false, false).singular_values.iter().copied().fold(0.0, f64::max);
    sine.asin().max(if smallest < 0.9 { smallest.acos() } else { 0.0 })
}
