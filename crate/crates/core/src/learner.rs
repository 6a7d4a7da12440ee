//! Parameter-shared Double DQN training loop.
//!
//! Every agent acts epsilon-greedily from one shared online network; all
//! transitions land in one shared replay buffer; each environment step is
//! followed by a fixed number of gradient updates (sample, Double-DQN
//! targets, Huber backward, clip, Adam, Polyak). Greedy evaluation runs on
//! a separate rng stream and touches neither parameters nor the buffer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{self, Action, DoneReason, GridConfig, GridError, ACTION_COUNT};
use crate::nn::{self, AdamState, NetError, NetParams, GRAD_CLIP_NORM};
use crate::replay::{ReplayBuffer, ReplayError, Transition};
use crate::seeding::RngStreams;
use rand::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
}

/// All training hyperparameters. Defaults are the standard experiment
/// settings; config files may override any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub episodes: usize,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub eps_start: f64,
    pub eps_min: f64,
    pub eps_decay: f64,
    pub batch: usize,
    pub warm_up: usize,
    pub buffer_capacity: usize,
    /// Episodes between greedy evaluation points.
    pub eval_every: usize,
    /// Greedy episodes per evaluation point.
    pub eval_episodes: usize,
    pub updates_per_env_step: usize,
    /// Width of both hidden layers.
    pub hidden: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            episodes: 1_500,
            lr: 1.5e-4,
            gamma: 0.95,
            tau: 1e-3,
            eps_start: 1.0,
            eps_min: 0.01,
            eps_decay: 0.98,
            batch: 64,
            warm_up: 1_500,
            buffer_capacity: 100_000,
            eval_every: 10,
            eval_episodes: 5,
            updates_per_env_step: 1,
            hidden: 128,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let positive = [
            ("episodes", self.episodes),
            ("batch", self.batch),
            ("buffer_capacity", self.buffer_capacity),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
            ("hidden", self.hidden),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(LearnerError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(LearnerError::InvalidConfig("lr must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(LearnerError::InvalidConfig("gamma must lie in (0, 1)".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(LearnerError::InvalidConfig("tau must lie in (0, 1]".into()));
        }
        if !(self.eps_min >= 0.0 && self.eps_min <= self.eps_start && self.eps_start <= 1.0) {
            return Err(LearnerError::InvalidConfig(
                "need 0 <= eps_min <= eps_start <= 1".into(),
            ));
        }
        if !(self.eps_decay > 0.0 && self.eps_decay <= 1.0) {
            return Err(LearnerError::InvalidConfig("eps_decay must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Exploration rate for an episode: max(eps_min, eps_start * decay^episode).
pub fn epsilon(episode_index: usize, cfg: &TrainerConfig) -> f64 {
    (cfg.eps_start * cfg.eps_decay.powi(episode_index as i32)).max(cfg.eps_min)
}

/// Greedy argmax with lowest-index tie-break.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy action selection over the Q-values.
pub fn select_action<R: Rng>(q_values: &[f64], eps: f64, rng: &mut R) -> usize {
    if eps > 0.0 && rng.gen::<f64>() < eps {
        rng.gen_range(0..q_values.len())
    } else {
        argmax(q_values)
    }
}

/// Double-DQN targets: the online net picks the next action, the target
/// net values it. y = r + gamma * (1 - d) * Q_target(s', argmax Q_online).
pub fn compute_targets(
    batch: &[&Transition],
    online: &NetParams,
    target: &NetParams,
    gamma: f64,
) -> Result<Vec<f64>, NetError> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                Ok(t.reward)
            } else {
                let next_online = nn::forward(online, &t.next_obs)?;
                let a = argmax(&next_online);
                let next_target = nn::forward(target, &t.next_obs)?;
                Ok(t.reward + gamma * next_target[a])
            }
        })
        .collect()
}

/// Per-episode training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode_index: usize,
    /// Every per-sample TD residual from every update this episode.
    pub td_error_samples: Vec<f64>,
    /// Pre-clip global gradient norms, one per update.
    pub grad_norm_samples: Vec<f64>,
    pub arrival_steps: Vec<Option<usize>>,
    pub episode_return: f64,
    pub steps: usize,
    pub done_reason: DoneReason,
}

/// One greedy evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub all_reached: bool,
    pub arrival_steps: Vec<Option<usize>>,
    pub episode_return: f64,
    pub steps: usize,
}

/// Evaluation block attached to a training episode index.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub after_episode: usize,
    pub records: Vec<EvalRecord>,
}

/// Run one training episode and return its log.
///
/// All agents act from the online parameters as they stand at the start of
/// each step; updates only run after the environment transition, so the
/// per-step snapshot is shared by construction.
#[allow(clippy::too_many_arguments)]
pub fn train_episode(
    grid: &GridConfig,
    episode_index: usize,
    online: &mut NetParams,
    target: &mut NetParams,
    adam: &mut AdamState,
    buffer: &mut ReplayBuffer,
    cfg: &TrainerConfig,
    rngs: &mut RngStreams,
) -> Result<EpisodeLog, LearnerError> {
    let eps = epsilon(episode_index, cfg);
    let n = grid.agents;
    let mut state = gridworld::reset(grid, &mut rngs.env)?;
    let mut log = EpisodeLog {
        episode_index,
        td_error_samples: Vec::new(),
        grad_norm_samples: Vec::new(),
        arrival_steps: vec![None; n],
        episode_return: 0.0,
        steps: 0,
        done_reason: DoneReason::Horizon,
    };

    let mut joint = vec![Action::Stay; n];
    while !state.is_done() {
        let mut stepped: Vec<(usize, Vec<f64>, usize)> = Vec::new();
        for i in 0..n {
            if state.reached[i] {
                joint[i] = Action::Stay;
                continue;
            }
            let obs = gridworld::observe(&state, i, grid)?;
            let q = nn::forward(online, &obs)?;
            let a = select_action(&q, eps, &mut rngs.action);
            joint[i] = Action::from_index(a).expect("action index in range");
            stepped.push((i, obs, a));
        }

        let outcome = gridworld::step(&mut state, grid, &joint, &mut rngs.env)?;
        for (i, obs, action) in stepped {
            let next_obs = gridworld::observe(&state, i, grid)?;
            buffer.push(Transition {
                obs,
                action,
                reward: outcome.rewards[i],
                next_obs,
                done: state.reached[i] || outcome.done.is_some(),
                agent_index: i,
            });
        }

        if buffer.is_warm() {
            for _ in 0..cfg.updates_per_env_step {
                let batch = buffer.sample(cfg.batch, &mut rngs.replay)?;
                let targets = compute_targets(&batch, online, target, cfg.gamma)?;
                let views: Vec<(&[f64], usize)> =
                    batch.iter().map(|t| (t.obs.as_slice(), t.action)).collect();
                let out = nn::backward(online, &views, &targets)?;
                log.td_error_samples.extend_from_slice(&out.residuals);
                let mut grads = out.grads;
                let pre_clip = nn::clip_gradients(&mut grads, GRAD_CLIP_NORM);
                log.grad_norm_samples.push(pre_clip);
                nn::adam_step(online, adam, &grads, cfg.lr)?;
                nn::polyak_update(target, online, cfg.tau);
            }
        }
    }

    log.arrival_steps = state.arrival_step.clone();
    log.episode_return = state.accumulated_reward;
    log.steps = state.step_count;
    log.done_reason = state.done.expect("loop exits only on done");
    Ok(log)
}

/// Run `episodes` greedy episodes with no learning and no buffer writes.
pub fn evaluate<R: Rng>(
    online: &NetParams,
    grid: &GridConfig,
    episodes: usize,
    rng: &mut R,
) -> Result<Vec<EvalRecord>, LearnerError> {
    let n = grid.agents;
    let mut records = Vec::with_capacity(episodes);
    let mut joint = vec![Action::Stay; n];
    for _ in 0..episodes {
        let mut state = gridworld::reset(grid, rng)?;
        while !state.is_done() {
            for i in 0..n {
                joint[i] = if state.reached[i] {
                    Action::Stay
                } else {
                    let obs = gridworld::observe(&state, i, grid)?;
                    let q = nn::forward(online, &obs)?;
                    Action::from_index(argmax(&q)).expect("action index in range")
                };
            }
            gridworld::step(&mut state, grid, &joint, rng)?;
        }
        records.push(EvalRecord {
            all_reached: state.reached.iter().all(|r| *r),
            arrival_steps: state.arrival_step.clone(),
            episode_return: state.accumulated_reward,
            steps: state.step_count,
        });
    }
    Ok(records)
}

/// Everything a finished run hands to the orchestrator.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub episodes: Vec<EpisodeLog>,
    pub eval_points: Vec<EvalPoint>,
    pub online: NetParams,
}

/// Full training run: fresh nets, buffer and rng streams from the master
/// seed, `cfg.episodes` training episodes with periodic greedy evaluation.
pub fn run_training(
    grid: &GridConfig,
    cfg: &TrainerConfig,
    master_seed: u64,
) -> Result<RunOutput, LearnerError> {
    cfg.validate()?;
    let mut rngs = RngStreams::from_master(master_seed);
    let mut online = NetParams::init(grid.obs_dim(), cfg.hidden, ACTION_COUNT, &mut rngs.init);
    let mut target = online.clone();
    let mut adam = AdamState::new(&online);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, cfg.warm_up);

    let mut episodes = Vec::with_capacity(cfg.episodes);
    let mut eval_points = Vec::new();
    for episode_index in 0..cfg.episodes {
        let log = train_episode(
            grid,
            episode_index,
            &mut online,
            &mut target,
            &mut adam,
            &mut buffer,
            cfg,
            &mut rngs,
        )?;
        episodes.push(log);
        if (episode_index + 1) % cfg.eval_every == 0 {
            let records = evaluate(&online, grid, cfg.eval_episodes, &mut rngs.eval)?;
            eval_points.push(EvalPoint { after_episode: episode_index, records });
        }
    }
    Ok(RunOutput { episodes, eval_points, online })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> TrainerConfig {
        TrainerConfig {
            episodes: 4,
            warm_up: 16,
            buffer_capacity: 512,
            batch: 8,
            hidden: 8,
            eval_every: 2,
            eval_episodes: 2,
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn epsilon_schedule_fixtures() {
        let cfg = TrainerConfig::default();
        assert_eq!(epsilon(0, &cfg), 1.0);
        assert!((epsilon(1, &cfg) - 0.98).abs() < 1e-15);
        assert_eq!(epsilon(1000, &cfg), 0.01);
        let eps: Vec<f64> = (0..200).map(|e| epsilon(e, &cfg)).collect();
        assert!(eps.windows(2).all(|w| w[1] <= w[0]), "epsilon must not increase");
    }

    #[test]
    fn greedy_selection_and_tie_break() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&[0.0, 1.0, 0.0, 0.0, 0.0], 0.0, &mut rng), 1);
        assert_eq!(select_action(&[0.5; 5], 0.0, &mut rng), 0);
        assert_eq!(select_action(&[1.0, 2.0, 2.0, 0.0, -1.0], 0.0, &mut rng), 1);
    }

    #[test]
    fn target_fixtures() {
        // Constant-output nets realize hand-built Q tables: zero weights,
        // biases = the table row.
        let mut online = NetParams::zeros(4, 4, 5);
        online.b3 = vec![0.0, 1.0, 0.0, 0.0, 0.0]; // argmax -> action 1
        let mut target = NetParams::zeros(4, 4, 5);
        target.b3 = vec![0.3, 0.5, 0.2, 0.1, 0.0]; // value read -> 0.5

        let t = Transition {
            obs: vec![0.0; 4],
            action: 0,
            reward: 0.1,
            next_obs: vec![0.0; 4],
            done: false,
            agent_index: 0,
        };
        let y = compute_targets(&[&t], &online, &target, 0.95).unwrap();
        assert!((y[0] - 0.575).abs() < 1e-12);

        let done = Transition { done: true, reward: -0.25, ..t.clone() };
        assert_eq!(compute_targets(&[&done], &online, &target, 0.95).unwrap(), vec![-0.25]);

        let y0 = compute_targets(&[&t], &online, &target, 0.0).unwrap();
        assert_eq!(y0, vec![0.1]);
    }

    #[test]
    fn identical_nets_degenerate_to_vanilla_dqn() {
        let mut shared = NetParams::zeros(4, 4, 5);
        shared.b3 = vec![0.3, 0.5, 0.2, 0.1, 0.0];
        let t = Transition {
            obs: vec![0.0; 4],
            action: 0,
            reward: 0.0,
            next_obs: vec![0.0; 4],
            done: false,
            agent_index: 0,
        };
        let y = compute_targets(&[&t], &shared, &shared, 1.0 - 1e-12).unwrap();
        let max_q = shared.b3.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((y[0] - (1.0 - 1e-12) * max_q).abs() < 1e-12);
    }

    #[test]
    fn before_warm_up_nothing_learns() {
        let grid = GridConfig::with_agents(5, 2, true).unwrap();
        let cfg = TrainerConfig { warm_up: 1_000_000, ..tiny_config() };
        let mut rngs = seeding::RngStreams::from_master(42);
        let mut online = NetParams::init(grid.obs_dim(), cfg.hidden, ACTION_COUNT, &mut rngs.init);
        let mut target = online.clone();
        let before_online = online.clone();
        let before_target = target.clone();
        let mut adam = AdamState::new(&online);
        let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, cfg.warm_up);
        let log = train_episode(
            &grid, 0, &mut online, &mut target, &mut adam, &mut buffer, &cfg, &mut rngs,
        )
        .unwrap();
        assert!(log.td_error_samples.is_empty());
        assert!(log.grad_norm_samples.is_empty());
        assert_eq!(online, before_online);
        assert_eq!(target, before_target);
        assert_eq!(adam.t, 0);
        assert!(!buffer.is_empty(), "transitions still accumulate");
    }

    #[test]
    fn update_count_matches_steps_after_warm_up() {
        let grid = GridConfig::with_agents(5, 2, true).unwrap();
        let cfg = TrainerConfig {
            warm_up: 0,
            updates_per_env_step: 2,
            ..tiny_config()
        };
        let mut rngs = seeding::RngStreams::from_master(7);
        let mut online = NetParams::init(grid.obs_dim(), cfg.hidden, ACTION_COUNT, &mut rngs.init);
        let mut target = online.clone();
        let mut adam = AdamState::new(&online);
        let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, cfg.warm_up);
        // Pre-seed so the very first step already samples.
        let t = Transition {
            obs: vec![0.0; grid.obs_dim()],
            action: 0,
            reward: 0.0,
            next_obs: vec![0.0; grid.obs_dim()],
            done: false,
            agent_index: 0,
        };
        for _ in 0..4 {
            buffer.push(t.clone());
        }
        let log = train_episode(
            &grid, 0, &mut online, &mut target, &mut adam, &mut buffer, &cfg, &mut rngs,
        )
        .unwrap();
        assert_eq!(log.grad_norm_samples.len(), 2 * log.steps);
        assert_eq!(log.td_error_samples.len(), 2 * log.steps * cfg.batch);
        assert_eq!(adam.t as usize, 2 * log.steps);
        assert!(log.td_error_samples.iter().all(|d| d.is_finite()));
    }

    #[test]
    fn identical_seeds_reproduce_identical_runs() {
        let grid = GridConfig::with_agents(5, 2, true).unwrap();
        let cfg = tiny_config();
        let a = run_training(&grid, &cfg, 99).unwrap();
        let b = run_training(&grid, &cfg, 99).unwrap();
        assert_eq!(a.episodes, b.episodes);
        assert_eq!(a.eval_points, b.eval_points);
        assert_eq!(a.online, b.online);
    }

    #[test]
    fn evaluation_is_pure_and_deterministic() {
        let grid = GridConfig::with_agents(5, 2, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let online = NetParams::init(grid.obs_dim(), 8, ACTION_COUNT, &mut rng);
        let snapshot = online.clone();
        let a = evaluate(&online, &grid, 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = evaluate(&online, &grid, 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(online, snapshot);
    }

    /// Hand-built weights that walk straight toward the goal: the first
    /// four inputs pass through both ReLU layers unchanged (coordinates are
    /// non-negative), and the output head scores each move by the signed
    /// coordinate difference it would shrink.
    fn goal_seeking_params(obs_dim: usize) -> NetParams {
        let mut p = NetParams::zeros(obs_dim, 8, ACTION_COUNT);
        for k in 0..4 {
            p.w1[k * obs_dim + k] = 1.0;
            p.w2[k * p.hidden + k] = 1.0;
        }
        // inputs: [row, col, goal_row, goal_col]
        let head = [
            [0.0, 0.0, 0.0, 0.0],   // stay
            [1.0, 0.0, -1.0, 0.0],  // up: positive when goal is above
            [-1.0, 0.0, 1.0, 0.0],  // down
            [0.0, 1.0, 0.0, -1.0],  // left
            [0.0, -1.0, 0.0, 1.0],  // right
        ];
        for (a, row) in head.iter().enumerate() {
            for (k, w) in row.iter().enumerate() {
                p.w3[a * p.hidden + k] = *w;
            }
        }
        p
    }

    #[test]
    fn constructed_policy_reaches_the_goal_every_episode() {
        let grid = GridConfig::with_agents(8, 1, false).unwrap();
        let params = goal_seeking_params(grid.obs_dim());
        let records =
            evaluate(&params, &grid, 20, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(records.iter().all(|r| r.all_reached));
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = TrainerConfig::default();
        cfg.gamma = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainerConfig::default();
        cfg.eps_min = 0.5;
        cfg.eps_start = 0.1;
        assert!(cfg.validate().is_err());
        assert!(TrainerConfig::default().validate().is_ok());
    }
}
