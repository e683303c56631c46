use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use lpmm_core::{train_adaptor_with, AdaptorArtifact, LossBreakdown, TrainConfig};
use serde::Serialize;

use crate::error::{ApiError, ApiResult};
use crate::state::Service;

/// Training job state as reported by `GET /adaptor/status`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum JobStatus {
    Idle,
    Running {
        job_id: String,
        step: usize,
        total_steps: usize,
        losses: Option<LossBreakdown>,
    },
    Done {
        job_id: String,
        step: usize,
        total_steps: usize,
        losses: Option<LossBreakdown>,
        initial: LossBreakdown,
        pose_residual: f64,
        cancelled: bool,
        wall_time_secs: f64,
    },
    Failed {
        job_id: String,
        step: usize,
        reason: String,
    },
}

impl JobStatus {
    pub fn step(&self) -> usize {
        match self {
            JobStatus::Idle => 0,
            JobStatus::Running { step, .. } | JobStatus::Done { step, .. } | JobStatus::Failed { step, .. } => *step,
        }
    }
}

impl Service {
    pub fn job_status(&self) -> JobStatus {
        self.job().status.clone()
    }

    /// Starts a background training run against the active model,
    /// surrogate and dataset. Only one run may be active at a time.
    pub fn start_training(&self, cfg: TrainConfig) -> ApiResult<String> {
        cfg.validate()?;
        let (model, stack, dataset) = {
            let s = self.read();
            (s.model()?.clone(), s.surrogate()?.clone(), s.dataset()?.clone())
        };
        if cfg.k > model.m() {
            return Err(lpmm_core::Error::DegreeOutOfRange { k: cfg.k, max: model.m() }.into());
        }

        let mut slot = self.job();
        if matches!(slot.status, JobStatus::Running { .. }) {
            return Err(ApiError::job_running());
        }
        if let Some(h) = slot.handle.take() {
            let _ = h.join();
        }
        let job_id = format!("job-{}", self.inner.next_job.fetch_add(1, Ordering::SeqCst));
        let cancel = Arc::new(AtomicBool::new(false));
        slot.status = JobStatus::Running {
            job_id: job_id.clone(),
            step: 0,
            total_steps: cfg.steps,
            losses: None,
        };
        slot.cancel = Some(cancel.clone());

        let service = self.clone();
        let id = job_id.clone();
        slot.handle = Some(std::thread::spawn(move || {
            let result = train_adaptor_with(&model, &stack, &dataset, &cfg, |p| {
                if let JobStatus::Running { step, losses, .. } = &mut service.job().status {
                    *step = p.step;
                    *losses = Some(p.loss);
                }
                if cancel.load(Ordering::SeqCst) {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            });
            let status = match result {
                Ok((net, report)) => {
                    let artifact = AdaptorArtifact {
                        net,
                        train_config: cfg.clone(),
                        surrogate_seed: stack.seed(),
                        model_fingerprint: model.fingerprint().into(),
                    };
                    match service.install_adaptor(artifact) {
                        Ok(()) => JobStatus::Done {
                            job_id: id,
                            step: report.steps_completed,
                            total_steps: cfg.steps,
                            losses: report.final_loss,
                            initial: report.initial,
                            pose_residual: report.final_pose_residual,
                            cancelled: report.cancelled,
                            wall_time_secs: report.wall_time_secs,
                        },
                        Err(e) => JobStatus::Failed {
                            job_id: id,
                            step: report.steps_completed,
                            reason: e.message,
                        },
                    }
                }
                Err(e) => {
                    let step = service.job().status.step();
                    JobStatus::Failed {
                        job_id: id,
                        step,
                        reason: e.to_string(),
                    }
                }
            };
            log::info!("training finished: {status:?}");
            let mut slot = service.job();
            slot.status = status;
            slot.cancel = None;
        }));
        Ok(job_id)
    }
}
