//! The improvement MDP and n-step REINFORCE training.
//!
//! [`train`] writes three files to its output directory: `best.json` (the
//! checkpoint with the lowest validation makespan so far), `last.json` (the
//! latest checkpoint, with optimizer state for resuming) and
//! `train_log.csv` with columns
//! `instances_seen,mean_validation_makespan,mean_cumulative_reward,wall_seconds`.

mod env;
mod train;

pub use env::{
    env_reset, env_reset_from, env_step, rollout, Driver, EnvError, EnvState, Rollout, Selection,
};
pub use train::{
    compute_returns, reinforce_update, train, validate_policy, validation_set, window_gradient,
    LogRow, StepRecord, TrainConfig, TrainError, TrainOutcome, BEST_FILE, LAST_FILE, LOG_FILE,
};

#[cfg(test)]
mod tests;
