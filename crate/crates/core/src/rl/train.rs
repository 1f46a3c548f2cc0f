use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::env::{env_reset, env_step, rollout, Driver, EnvState, Selection};
use crate::instance::{generate_taillard, Instance, Time};
use crate::n5::MoveSet;
use crate::nn::{apply_norm_stats, average_norm_stats, Adam, Mode};
use crate::policy::{
    sample_action, Action, CheckpointError, PolicyConfig, PolicyInput, PolicyNet, TrainingState,
};
use crate::seed::derive_seed;

/// Undiscounted return-to-go: `R_t = sum of r_tau for tau >= t`.
pub fn compute_returns(rewards: &[Time]) -> Vec<Time> {
    let mut out = vec![0; rewards.len()];
    let mut acc = 0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc += r;
        *o = acc;
    }
    out
}

/// What the trainer keeps of one transition until the end of its window.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub input: PolicyInput,
    pub moves: MoveSet,
    pub action: Action,
    pub reward: Time,
}

/// Adds `sum_t R_t * grad log pi(a_t | s_t)` over one window to `grads`.
/// Forward passes are recomputed with the current weights, and only for
/// steps with a non-zero return.
pub fn window_gradient(net: &PolicyNet, window: &[StepRecord], grads: &mut [f64]) {
    let rewards: Vec<Time> = window.iter().map(|s| s.reward).collect();
    let returns = compute_returns(&rewards);
    for (rec, &ret) in window.iter().zip(&returns) {
        if ret == 0 || rec.action == Action::Dummy {
            continue;
        }
        let fwd = net.forward(Mode::Train, &rec.input);
        net.log_prob_grad(
            net.params.values(),
            &rec.input,
            &fwd,
            &rec.moves,
            rec.action,
            ret as f64,
            grads,
        );
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite policy gradient (component {index}) at batch {batch}")]
    NonFinite { batch: u64, index: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("log error: {0}")]
    Csv(#[from] csv::Error),
}

/// Mean over instances of each window's policy gradient; one Adam ascent
/// step. Returns the gradient norm. An all-zero gradient leaves weights and
/// optimizer state untouched.
pub fn reinforce_update(
    net: &mut PolicyNet,
    opt: &mut Adam,
    windows: &[Vec<StepRecord>],
    batch: u64,
) -> Result<f64, TrainError> {
    if windows.is_empty() {
        return Ok(0.0);
    }
    let frozen = &*net;
    let parts: Vec<Vec<f64>> = windows
        .par_iter()
        .map(|w| {
            let mut g = frozen.params.zeros();
            window_gradient(frozen, w, &mut g);
            g
        })
        .collect();
    let mut grad = net.params.zeros();
    for part in &parts {
        grad.iter_mut().zip(part).for_each(|(a, b)| *a += b);
    }
    let scale = 1.0 / windows.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(TrainError::NonFinite { batch, index });
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > 0.0 {
        let ascent: Vec<f64> = grad.iter().map(|g| -g).collect();
        opt.step(net.params.values_mut(), &ascent);
    }
    Ok(norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_jobs: usize,
    pub num_machines: usize,
    pub batch_size: usize,
    pub step_limit: usize,
    pub window: usize,
    pub learning_rate: f64,
    pub total_instances: usize,
    pub validation_size: usize,
    pub validation_every: usize,
    pub validation_steps: usize,
    pub seed: u64,
    pub policy: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_jobs: 10,
            num_machines: 10,
            batch_size: 64,
            step_limit: 500,
            window: 10,
            learning_rate: 5e-5,
            total_instances: 128_000,
            validation_size: 100,
            validation_every: 10,
            validation_steps: 50,
            seed: 0,
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("num_jobs", self.num_jobs),
            ("num_machines", self.num_machines),
            ("batch_size", self.batch_size),
            ("step_limit", self.step_limit),
            ("window", self.window),
            ("total_instances", self.total_instances),
            ("validation_size", self.validation_size),
            ("validation_every", self.validation_every),
            ("validation_steps", self.validation_steps),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.window > self.step_limit {
            return Err(format!(
                "window ({}) must not exceed step_limit ({})",
                self.window, self.step_limit
            ));
        }
        if self.total_instances < self.batch_size {
            return Err(format!(
                "total_instances ({}) is smaller than one batch ({})",
                self.total_instances, self.batch_size
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        self.policy.validate()
    }

    pub fn num_batches(&self) -> u64 {
        (self.total_instances / self.batch_size) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub instances_seen: u64,
    pub mean_validation_makespan: f64,
    pub mean_cumulative_reward: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<LogRow>,
    pub best_validation: Option<f64>,
    pub best_path: PathBuf,
    pub last_path: PathBuf,
    pub log_path: PathBuf,
}

pub const BEST_FILE: &str = "best.json";
pub const LAST_FILE: &str = "last.json";
pub const LOG_FILE: &str = "train_log.csv";

const TAG_TRAIN: u64 = 1;
const TAG_ROLLOUT: u64 = 2;
const TAG_VALIDATION: u64 = 3;
const TAG_VALIDATION_RUN: u64 = 4;
const TAG_INIT: u64 = 5;

pub fn validation_set(cfg: &TrainConfig) -> Vec<Instance> {
    (0..cfg.validation_size as u64)
        .map(|i| {
            generate_taillard(
                cfg.num_jobs,
                cfg.num_machines,
                derive_seed(cfg.seed, &[TAG_VALIDATION, i]),
            )
        })
        .collect()
}

/// Mean incumbent makespan after `steps` sampled policy steps per instance.
pub fn validate_policy(net: &PolicyNet, instances: &[Instance], steps: usize, seed: u64) -> f64 {
    let incumbents: Vec<Time> = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_VALIDATION_RUN, i as u64]));
            let driver = Driver::Policy {
                net,
                selection: Selection::Sample,
            };
            rollout(inst, driver, steps, &mut rng).incumbent
        })
        .collect();
    incumbents.iter().sum::<Time>() as f64 / incumbents.len().max(1) as f64
}

struct Worker {
    inst: Instance,
    rng: ChaCha8Rng,
    state: EnvState,
    window: Vec<StepRecord>,
}

/// Trains a policy; see the module docs for files written to `out_dir`.
/// With `resume`, continues from `out_dir/last.json` when it exists.
pub fn train(
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: bool,
    mut progress: impl FnMut(&LogRow),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    std::fs::create_dir_all(out_dir)?;
    let best_path = out_dir.join(BEST_FILE);
    let last_path = out_dir.join(LAST_FILE);
    let log_path = out_dir.join(LOG_FILE);

    let mut net = PolicyNet::new(cfg.policy.clone(), derive_seed(cfg.seed, &[TAG_INIT]));
    let mut training = TrainingState {
        instances_seen: 0,
        batches: 0,
        best_validation: None,
        wall_seconds: 0.0,
        optimizer: Adam::new(net.params.len(), cfg.learning_rate),
    };
    let mut rows: Vec<LogRow> = Vec::new();
    if resume && last_path.exists() {
        let ck = crate::policy::Checkpoint::load(&last_path)?;
        if ck.config != cfg.policy {
            return Err(TrainError::Config(
                "checkpoint policy config differs from the training config".into(),
            ));
        }
        net = PolicyNet::from_checkpoint(&ck)?;
        training = ck
            .training
            .ok_or_else(|| TrainError::Config("checkpoint carries no training state".into()))?;
        if log_path.exists() {
            let mut reader = csv::Reader::from_path(&log_path)?;
            for row in reader.deserialize::<LogRow>() {
                let row = row?;
                if row.instances_seen <= training.instances_seen {
                    rows.push(row);
                }
            }
        }
    }
    {
        let mut w = csv::Writer::from_path(&log_path)?;
        if rows.is_empty() {
            w.write_record([
                "instances_seen",
                "mean_validation_makespan",
                "mean_cumulative_reward",
                "wall_seconds",
            ])?;
        }
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }

    let validation = validation_set(cfg);
    let start = Instant::now();
    let wall_offset = training.wall_seconds;
    let total_batches = cfg.num_batches();
    let mut reward_sum = 0.0;
    let mut reward_count = 0usize;

    for batch in training.batches..total_batches {
        let mut workers: Vec<Worker> = (0..cfg.batch_size as u64)
            .into_par_iter()
            .map(|i| {
                let inst = generate_taillard(
                    cfg.num_jobs,
                    cfg.num_machines,
                    derive_seed(cfg.seed, &[TAG_TRAIN, batch, i]),
                );
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TAG_ROLLOUT, batch, i]));
                let state = env_reset(&inst, &mut rng);
                Worker {
                    inst,
                    rng,
                    state,
                    window: Vec::with_capacity(cfg.window),
                }
            })
            .collect();

        for t in 0..cfg.step_limit {
            let frozen = &net;
            let stats: Vec<_> = workers
                .par_iter_mut()
                .map(|w| {
                    if w.state.absorbing {
                        env_step(&w.inst, &mut w.state, Action::Dummy, &mut w.rng)
                            .expect("dummy in absorbing state");
                        return None;
                    }
                    let input = w.state.policy_input();
                    let fwd = frozen.forward(Mode::Train, &input);
                    let probs = frozen.move_probabilities(&fwd, &w.state.moves);
                    let action = sample_action(&probs, &mut w.rng);
                    let moves = w.state.moves.clone();
                    let reward = env_step(&w.inst, &mut w.state, action, &mut w.rng)
                        .expect("sampled moves are feasible");
                    w.window.push(StepRecord {
                        input,
                        moves,
                        action,
                        reward,
                    });
                    Some(fwd.stats)
                })
                .collect();
            let stats: Vec<_> = stats.into_iter().flatten().collect();
            if !stats.is_empty() {
                apply_norm_stats(&mut net.buffers, &average_norm_stats(&stats));
            }
            if (t + 1) % cfg.window == 0 || t + 1 == cfg.step_limit {
                let windows: Vec<Vec<StepRecord>> = workers
                    .iter_mut()
                    .map(|w| std::mem::take(&mut w.window))
                    .collect();
                reinforce_update(&mut net, &mut training.optimizer, &windows, batch)?;
            }
        }
        for w in &workers {
            reward_sum += w.state.improvement() as f64;
            reward_count += 1;
        }
        training.batches = batch + 1;
        training.instances_seen += cfg.batch_size as u64;

        if training.batches.is_multiple_of(cfg.validation_every as u64)
            || training.batches == total_batches
        {
            let mean = validate_policy(&net, &validation, cfg.validation_steps, cfg.seed);
            training.wall_seconds = wall_offset + start.elapsed().as_secs_f64();
            let row = LogRow {
                instances_seen: training.instances_seen,
                mean_validation_makespan: mean,
                mean_cumulative_reward: reward_sum / reward_count.max(1) as f64,
                wall_seconds: training.wall_seconds,
            };
            reward_sum = 0.0;
            reward_count = 0;
            if training.best_validation.is_none_or(|b| mean < b) {
                training.best_validation = Some(mean);
                net.to_checkpoint(None).save(&best_path)?;
            }
            let file = OpenOptions::new().append(true).open(&log_path)?;
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(file);
            w.serialize(&row)?;
            w.flush()?;
            net.to_checkpoint(Some(training.clone())).save(&last_path)?;
            progress(&row);
            rows.push(row);
        }
    }
    if !last_path.exists() {
        net.to_checkpoint(Some(training.clone())).save(&last_path)?;
    }
    if !best_path.exists() {
        net.to_checkpoint(None).save(&best_path)?;
    }
    Ok(TrainOutcome {
        rows,
        best_validation: training.best_validation,
        best_path,
        last_path,
        log_path,
    })
}
