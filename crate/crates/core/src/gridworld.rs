//! L x L multi-agent navigation environment.
//!
//! N agents and a single goal are placed on distinct cells. Agents move
//! simultaneously, pay a small step penalty, earn +1 on reaching the goal,
//! and hold there afterwards without occupying space. The episode ends when
//! the accumulated team reward hits the target score (0.8 per agent) or the
//! horizon of 8L steps runs out.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reward paid to every active agent on every step.
pub const STEP_PENALTY: f64 = -0.005;
/// Reward added on the step an agent reaches the goal.
pub const GOAL_REWARD: f64 = 1.0;
/// Grid sides covered by the sweep conditions.
pub const SUPPORTED_SIDES: [usize; 4] = [8, 16, 24, 32];
/// Agent densities covered by the sweep conditions.
pub const SUPPORTED_DENSITIES: [f64; 5] = [0.03125, 0.0625, 0.125, 0.25, 0.5];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error(
        "unsupported condition (L={side}, rho={density}); supported: L in [8, 16, 24, 32], \
         rho in [0.03125, 0.0625, 0.125, 0.25, 0.5], excluding (L=32, rho=0.5)"
    )]
    UnsupportedCondition { side: usize, density: f64 },
    #[error("invalid grid config: {0}")]
    InvalidConfig(String),
    #[error("step called on a terminal state")]
    StepAfterDone,
    #[error("agent index {index} out of range for {count} agents")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("joint action has {got} entries, expected {expected}")]
    WrongActionCount { expected: usize, got: usize },
}

/// The five selectable actions. Reached agents are forced to hold and
/// ignore whatever is supplied for them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Stay = 0,
    Up = 1,
    Down = 2,
    Left = 3,
    Right = 4,
}

/// Number of selectable actions; also the Q-network output width.
pub const ACTION_COUNT: usize = 5;

impl Action {
    pub const ALL: [Action; ACTION_COUNT] =
        [Action::Stay, Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// (row delta, col delta); moves off the grid leave the agent in place.
    fn delta(self) -> (isize, isize) {
        match self {
            Action::Stay => (0, 0),
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoneReason {
    TargetReached,
    Horizon,
}

/// Static description of one environment condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub side: usize,
    pub density: f64,
    pub agents: usize,
    /// 8 * side steps.
    pub horizon: usize,
    /// 0.8 * agents, in team-reward units.
    pub target_score: f64,
    /// When set, observations carry a one-hot agent identifier.
    pub id_enabled: bool,
    /// When set, the goal sits on this cell every episode instead of being
    /// re-randomized at reset.
    pub fixed_goal: Option<(usize, usize)>,
}

/// Exact agent count for a supported (side, density) condition.
pub fn density_to_count(side: usize, density: f64) -> Result<usize, GridError> {
    let supported = SUPPORTED_SIDES.contains(&side)
        && SUPPORTED_DENSITIES.contains(&density)
        && !(side == 32 && density == 0.5);
    if !supported {
        return Err(GridError::UnsupportedCondition { side, density });
    }
    let count = density * (side * side) as f64;
    debug_assert_eq!(count.fract(), 0.0);
    Ok(count as usize)
}

impl GridConfig {
    /// Build a config for one of the supported sweep conditions.
    pub fn from_density(side: usize, density: f64, id_enabled: bool) -> Result<Self, GridError> {
        let agents = density_to_count(side, density)?;
        Self::with_agents(side, agents, id_enabled)
    }

    /// Build a config from an explicit agent count (useful for small test
    /// grids outside the sweep conditions).
    pub fn with_agents(side: usize, agents: usize, id_enabled: bool) -> Result<Self, GridError> {
        if side == 0 {
            return Err(GridError::InvalidConfig("side must be positive".into()));
        }
        if agents == 0 {
            return Err(GridError::InvalidConfig("agent count must be positive".into()));
        }
        if agents + 1 > side * side {
            return Err(GridError::InvalidConfig(format!(
                "{} agents plus goal do not fit on a {side}x{side} grid",
                agents
            )));
        }
        Ok(Self {
            side,
            density: agents as f64 / (side * side) as f64,
            agents,
            horizon: 8 * side,
            target_score: 0.8 * agents as f64,
            id_enabled,
            fixed_goal: None,
        })
    }

    pub fn with_fixed_goal(mut self, goal: (usize, usize)) -> Result<Self, GridError> {
        if goal.0 >= self.side || goal.1 >= self.side {
            return Err(GridError::InvalidConfig(format!(
                "fixed goal {goal:?} outside a {0}x{0} grid",
                self.side
            )));
        }
        self.fixed_goal = Some(goal);
        Ok(self)
    }

    /// Observation vector length: 4 normalized coordinates plus the
    /// optional one-hot identifier.
    pub fn obs_dim(&self) -> usize {
        if self.id_enabled {
            4 + self.agents
        } else {
            4
        }
    }
}

/// Mutable episode state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub agent_positions: Vec<(usize, usize)>,
    pub goal: (usize, usize),
    pub reached: Vec<bool>,
    pub arrival_step: Vec<Option<usize>>,
    pub step_count: usize,
    pub accumulated_reward: f64,
    pub done: Option<DoneReason>,
}

impl EnvState {
    pub fn is_done(&self) -> bool {
        self.done.is_some()
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    pub done: Option<DoneReason>,
}

/// Place N agents and the goal on distinct cells, uniformly without
/// replacement. Deterministic given the rng state.
pub fn reset<R: Rng>(cfg: &GridConfig, rng: &mut R) -> Result<EnvState, GridError> {
    let cells = cfg.side * cfg.side;
    if cfg.agents + 1 > cells {
        return Err(GridError::InvalidConfig(format!(
            "{} agents plus goal do not fit on a {0}x{0} grid",
            cfg.side
        )));
    }

    let mut pool: Vec<usize> = (0..cells).collect();
    let goal = match cfg.fixed_goal {
        Some((r, c)) => {
            if r >= cfg.side || c >= cfg.side {
                return Err(GridError::InvalidConfig(format!(
                    "fixed goal ({r}, {c}) outside the grid"
                )));
            }
            pool.swap_remove(r * cfg.side + c);
            (r, c)
        }
        None => {
            let k = rng.gen_range(0..pool.len());
            let cell = pool.swap_remove(k);
            (cell / cfg.side, cell % cfg.side)
        }
    };

    // Partial Fisher-Yates over the remaining cells.
    let mut agent_positions = Vec::with_capacity(cfg.agents);
    for i in 0..cfg.agents {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
        agent_positions.push((pool[i] / cfg.side, pool[i] % cfg.side));
    }

    Ok(EnvState {
        agent_positions,
        goal,
        reached: vec![false; cfg.agents],
        arrival_step: vec![None; cfg.agents],
        step_count: 0,
        accumulated_reward: 0.0,
        done: None,
    })
}

fn clamped_move(pos: (usize, usize), action: Action, side: usize) -> (usize, usize) {
    let (dr, dc) = action.delta();
    let r = pos.0 as isize + dr;
    let c = pos.1 as isize + dc;
    if r < 0 || c < 0 || r as usize >= side || c as usize >= side {
        pos
    } else {
        (r as usize, c as usize)
    }
}

/// Simultaneous move resolution. Moves onto the goal always succeed
/// (arrivals never block each other); everywhere else a move into the cell
/// of a holding agent is cancelled, swaps are cancelled pairwise, and
/// same-cell contention picks one uniform winner. Cancellations cascade
/// until the assignment is stable.
fn resolve_conflicts<R: Rng>(
    state: &EnvState,
    cfg: &GridConfig,
    target: &mut [(usize, usize)],
    rng: &mut R,
) {
    let side = cfg.side;
    let n = cfg.agents;
    let cell = |p: (usize, usize)| p.0 * side + p.1;

    // Occupancy of active agents; positions do not change during resolution.
    let mut occupant: Vec<Option<usize>> = vec![None; side * side];
    for i in 0..n {
        if !state.reached[i] {
            occupant[cell(state.agent_positions[i])] = Some(i);
        }
    }

    let mut claims: Vec<Vec<usize>> = vec![Vec::new(); side * side];
    loop {
        let mut changed = false;

        for i in 0..n {
            if state.reached[i] {
                continue;
            }
            let from = state.agent_positions[i];
            let to = target[i];
            if to == from || to == state.goal {
                continue;
            }
            if let Some(j) = occupant[cell(to)] {
                let j_from = state.agent_positions[j];
                if target[j] == j_from {
                    // Destination holder is not moving: cancel.
                    target[i] = from;
                    changed = true;
                } else if target[j] == from {
                    // Swap: cancel both.
                    target[i] = from;
                    target[j] = j_from;
                    changed = true;
                }
            }
        }

        for group in claims.iter_mut() {
            group.clear();
        }
        for i in 0..n {
            if state.reached[i] {
                continue;
            }
            let to = target[i];
            if to != state.agent_positions[i] && to != state.goal {
                claims[cell(to)].push(i);
            }
        }
        for group in claims.iter() {
            if group.len() >= 2 {
                let winner = group[rng.gen_range(0..group.len())];
                for &i in group {
                    if i != winner {
                        target[i] = state.agent_positions[i];
                    }
                }
                changed = true;
            }
        }

        if !changed {
            break;
        }
    }
}

/// Advance the environment by one simultaneous step.
pub fn step<R: Rng>(
    state: &mut EnvState,
    cfg: &GridConfig,
    joint_action: &[Action],
    rng: &mut R,
) -> Result<StepOutcome, GridError> {
    if state.is_done() {
        return Err(GridError::StepAfterDone);
    }
    let n = cfg.agents;
    if joint_action.len() != n {
        return Err(GridError::WrongActionCount { expected: n, got: joint_action.len() });
    }

    let mut target: Vec<(usize, usize)> = state.agent_positions.clone();
    for i in 0..n {
        if !state.reached[i] {
            target[i] = clamped_move(state.agent_positions[i], joint_action[i], cfg.side);
        }
    }
    resolve_conflicts(state, cfg, &mut target, rng);

    let new_step = state.step_count + 1;
    let mut rewards = vec![0.0; n];
    for i in 0..n {
        if state.reached[i] {
            continue;
        }
        state.agent_positions[i] = target[i];
        rewards[i] = STEP_PENALTY;
        if target[i] == state.goal {
            rewards[i] += GOAL_REWARD;
            state.reached[i] = true;
            state.arrival_step[i] = Some(new_step);
        }
    }

    state.step_count = new_step;
    state.accumulated_reward += rewards.iter().sum::<f64>();
    if state.accumulated_reward >= cfg.target_score {
        state.done = Some(DoneReason::TargetReached);
    } else if state.step_count >= cfg.horizon {
        state.done = Some(DoneReason::Horizon);
    }

    debug_assert!(occupancy_exclusive(state), "active agents share a cell");
    Ok(StepOutcome { rewards, done: state.done })
}

/// True when no two active (non-reached) agents share a cell.
pub fn occupancy_exclusive(state: &EnvState) -> bool {
    let mut seen = std::collections::HashSet::new();
    state
        .agent_positions
        .iter()
        .zip(&state.reached)
        .filter(|(_, reached)| !**reached)
        .all(|(pos, _)| seen.insert(*pos))
}

/// Observation for one agent: own and goal coordinates normalized by L,
/// plus a one-hot identifier when IDs are enabled.
pub fn observe(
    state: &EnvState,
    agent_index: usize,
    cfg: &GridConfig,
) -> Result<Vec<f64>, GridError> {
    if agent_index >= cfg.agents {
        return Err(GridError::IndexOutOfRange { index: agent_index, count: cfg.agents });
    }
    let l = cfg.side as f64;
    let (r, c) = state.agent_positions[agent_index];
    let (gr, gc) = state.goal;
    let mut obs = Vec::with_capacity(cfg.obs_dim());
    obs.extend_from_slice(&[r as f64 / l, c as f64 / l, gr as f64 / l, gc as f64 / l]);
    if cfg.id_enabled {
        obs.resize(4 + cfg.agents, 0.0);
        obs[4 + agent_index] = 1.0;
    }
    Ok(obs)
}
