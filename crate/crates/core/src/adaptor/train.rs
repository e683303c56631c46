use std::ops::ControlFlow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{pose_residual, LossBreakdown, Objective, TrainConfig};
use super::net::{init_adaptor, AdaptorGrads, AdaptorNet};
use crate::error::{Error, Result};
use crate::landmarks::LandmarkDataset;
use crate::lpmm::LpmmModel;
use crate::surrogate::{LatentVector, SurrogateStack};

/// Batch loss recorded before the update of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: TrainConfig,
    pub surrogate_seed: u64,
    pub samples: usize,
    pub dataset_fingerprint: String,
    /// How `mean_latent` was estimated.
    pub mean_latent_source: String,
    pub mean_latent: LatentVector,
    /// Parameters of the average pose, where the pose regularizer is applied.
    pub average_pose_params: Vec<f64>,
    /// Reduction used by both loss terms.
    pub reduction: String,
    /// Full-dataset loss of the initialized net.
    pub initial: LossBreakdown,
    /// Full-dataset loss after the last step; absent when no step ran.
    pub final_loss: Option<LossBreakdown>,
    /// `‖d(p̄)‖₁ / w` before and after training, whether or not the
    /// regularizer was enabled.
    pub initial_pose_residual: f64,
    pub final_pose_residual: f64,
    pub loss_curve: Vec<StepRecord>,
    pub steps_completed: usize,
    pub cancelled: bool,
    pub wall_time_secs: f64,
}

/// Progress snapshot handed to the observer after every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub step: usize,
    pub total_steps: usize,
    pub loss: LossBreakdown,
}

/// Trains a freshly initialized adaptor. See [`train_adaptor_with`].
pub fn train_adaptor(
    model: &LpmmModel,
    stack: &SurrogateStack,
    dataset: &LandmarkDataset,
    cfg: &TrainConfig,
) -> Result<(AdaptorNet, TrainingReport)> {
    train_adaptor_with(model, stack, dataset, cfg, |_| ControlFlow::Continue(()))
}

/// Trains an adaptor with the surrogate frozen.
///
/// The mean latent is the average encoding of `dataset`. Batches are drawn
/// from a seeded shuffle, reshuffled every epoch. The observer runs after
/// each step and may stop training early by returning `Break`.
pub fn train_adaptor_with(
    model: &LpmmModel,
    stack: &SurrogateStack,
    dataset: &LandmarkDataset,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&Progress) -> ControlFlow<()>,
) -> Result<(AdaptorNet, TrainingReport)> {
    cfg.validate()?;
    if !dataset.is_canonical() {
        return Err(Error::InvalidArgument("training dataset must be canonical".into()));
    }
    let started = Instant::now();
    let mean_latent = stack.mean_latent(dataset)?;
    let mut net = init_adaptor(cfg.k, stack.w(), mean_latent.clone(), cfg.seed)?;
    let objective = Objective::new(&net, model, stack, dataset.landmarks(), cfg)?;
    let p_bar = objective.p_bar().clone();

    let all: Vec<usize> = (0..objective.len()).collect();
    let initial = objective.evaluate(&net, &all, None)?;
    if !initial.total.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    let initial_pose_residual = pose_residual(&net, &p_bar)?;

    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        epsilon: cfg.epsilon,
    };
    let mut state = AdamState::for_net(&net);
    // separate stream from the weight initialization
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order = all.clone();
    let mut cursor = order.len();
    let batch_size = cfg.batch_size.min(order.len());
    let mut batch = Vec::with_capacity(batch_size);
    let mut loss_curve = Vec::with_capacity(cfg.steps);
    let mut cancelled = false;

    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let mut grads = AdaptorGrads::zeros_like(&net);
        let loss = objective.evaluate(&net, &batch, Some(&mut grads))?;
        if !loss.total.is_finite() || grads.as_slice().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        adam_step(&mut net, &grads, &mut state, &adam)?;
        if net.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        loss_curve.push(StepRecord { step, loss });
        let progress = Progress {
            step: step + 1,
            total_steps: cfg.steps,
            loss,
        };
        if observer(&progress).is_break() {
            cancelled = true;
            break;
        }
    }

    let steps_completed = loss_curve.len();
    let final_loss = if steps_completed > 0 {
        Some(objective.evaluate(&net, &all, None)?)
    } else {
        None
    };
    let report = TrainingReport {
        config: cfg.clone(),
        surrogate_seed: stack.seed(),
        samples: dataset.len(),
        dataset_fingerprint: dataset.fingerprint(),
        mean_latent_source: format!("mean surrogate encoding over the {} training samples", dataset.len()),
        mean_latent,
        average_pose_params: p_bar.as_slice().to_vec(),
        reduction: "mean".into(),
        initial,
        final_loss,
        initial_pose_residual,
        final_pose_residual: pose_residual(&net, &p_bar)?,
        loss_curve,
        steps_completed,
        cancelled,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((net, report))
}
