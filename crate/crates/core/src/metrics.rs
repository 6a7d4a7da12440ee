//! Condition-level statistics: CSR, TD-error variance and stability index,
//! gradient-norm variance and its alternate index, arrival-time spread,
//! co-reach rate, and effective throughput.
//!
//! Everything here is a pure function of serialized per-episode rows, so
//! reports can be recomputed offline from the run records bit-for-bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::DoneReason;
use crate::learner::{EpisodeLog, EvalPoint, EvalRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty aggregation window")]
    EmptyWindow,
    #[error("degenerate normalizer: maximum variance across conditions is zero")]
    DegenerateNormalizer,
}

/// Population mean. Empty input yields NaN; callers gate on emptiness.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (denominator N).
pub fn population_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

pub fn population_std(values: &[f64]) -> f64 {
    population_variance(values).sqrt()
}

/// Per-episode aggregate row as serialized into run records.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub episode: usize,
    pub steps: usize,
    pub episode_return: f64,
    pub done_reason: DoneReason,
    pub td_mean: Option<f64>,
    /// Population variance of this episode's TD residuals; `None` when the
    /// episode produced fewer than two samples.
    pub td_var: Option<f64>,
    pub td_count: usize,
    pub grad_mean: Option<f64>,
    pub grad_var: Option<f64>,
    pub grad_count: usize,
    /// Arrival-time spread over training arrivals, unreached imputed at the
    /// horizon.
    pub spread: f64,
    pub co_reach: f64,
}

impl EpisodeRow {
    pub fn from_log(log: &EpisodeLog, horizon: usize) -> Self {
        let td_count = log.td_error_samples.len();
        let grad_count = log.grad_norm_samples.len();
        Self {
            episode: log.episode_index,
            steps: log.steps,
            episode_return: log.episode_return,
            done_reason: log.done_reason,
            td_mean: (td_count >= 1).then(|| mean(&log.td_error_samples)),
            td_var: (td_count >= 2).then(|| population_variance(&log.td_error_samples)),
            td_count,
            grad_mean: (grad_count >= 1).then(|| mean(&log.grad_norm_samples)),
            grad_var: (grad_count >= 2).then(|| population_variance(&log.grad_norm_samples)),
            grad_count,
            spread: arrival_spread(&log.arrival_steps, horizon),
            co_reach: co_reach(&log.arrival_steps),
        }
    }
}

/// Greedy evaluation row as serialized into run records.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub after_episode: usize,
    pub eval_index: usize,
    pub all_reached: bool,
    pub episode_return: f64,
    pub steps: usize,
    pub arrival_steps: Vec<Option<usize>>,
}

impl EvalRow {
    pub fn from_point(point: &EvalPoint) -> Vec<EvalRow> {
        point
            .records
            .iter()
            .enumerate()
            .map(|(k, r)| EvalRow {
                after_episode: point.after_episode,
                eval_index: k,
                all_reached: r.all_reached,
                episode_return: r.episode_return,
                steps: r.steps,
                arrival_steps: r.arrival_steps.clone(),
            })
            .collect()
    }

    pub fn to_record(&self) -> EvalRecord {
        EvalRecord {
            all_reached: self.all_reached,
            arrival_steps: self.arrival_steps.clone(),
            episode_return: self.episode_return,
            steps: self.steps,
        }
    }
}

/// Number of episodes in the trailing aggregation window.
pub fn window_len(total_episodes: usize, window_frac: f64) -> usize {
    ((window_frac * total_episodes as f64).ceil() as usize).min(total_episodes)
}

/// First episode index inside the trailing window.
pub fn window_start(total_episodes: usize, window_frac: f64) -> usize {
    total_episodes - window_len(total_episodes, window_frac)
}

/// Cooperative success rate: fraction of evaluation episodes in which every
/// agent reached the goal.
pub fn csr(eval_rows: &[&EvalRow]) -> Result<f64, MetricsError> {
    if eval_rows.is_empty() {
        return Err(MetricsError::EmptyWindow);
    }
    let hits = eval_rows.iter().filter(|r| r.all_reached).count();
    Ok(hits as f64 / eval_rows.len() as f64)
}

/// Mean of per-episode TD-error variances; episodes with fewer than two
/// samples are skipped.
pub fn td_variance(rows: &[&EpisodeRow]) -> Result<f64, MetricsError> {
    let vars: Vec<f64> = rows.iter().filter_map(|r| r.td_var).collect();
    if vars.is_empty() {
        return Err(MetricsError::EmptyWindow);
    }
    Ok(mean(&vars))
}

/// Mean of per-episode gradient-norm variances.
pub fn grad_norm_variance(rows: &[&EpisodeRow]) -> Result<f64, MetricsError> {
    let vars: Vec<f64> = rows.iter().filter_map(|r| r.grad_var).collect();
    if vars.is_empty() {
        return Err(MetricsError::EmptyWindow);
    }
    Ok(mean(&vars))
}

/// S = 1 - v / v_max, in [0, 1].
pub fn stability_index(v: f64, v_max: f64) -> Result<f64, MetricsError> {
    if v_max <= 0.0 {
        return Err(MetricsError::DegenerateNormalizer);
    }
    Ok(1.0 - v / v_max)
}

/// Population standard deviation of arrival times; unreached agents are
/// imputed at the horizon.
pub fn arrival_spread(arrival_steps: &[Option<usize>], horizon: usize) -> f64 {
    let times: Vec<f64> =
        arrival_steps.iter().map(|a| a.unwrap_or(horizon) as f64).collect();
    population_std(&times)
}

/// Fraction of agents that reached the goal.
pub fn co_reach(arrival_steps: &[Option<usize>]) -> f64 {
    let hits = arrival_steps.iter().filter(|a| a.is_some()).count();
    hits as f64 / arrival_steps.len() as f64
}

/// Effective coordinated throughput rho * CSR.
pub fn rho_eff(rho: f64, csr: f64) -> f64 {
    rho * csr
}

/// Mean with a normal-approximation 95% interval over seed-level values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci95: f64,
}

impl MeanCi {
    pub fn from_values(values: &[f64]) -> Self {
        let m = mean(values);
        let ci = if values.len() > 1 {
            1.96 * population_std(values) / (values.len() as f64).sqrt()
        } else {
            0.0
        };
        Self { mean: m, ci95: ci }
    }
}

/// Cross-seed time series point for one training episode index.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub episode: usize,
    pub seeds: usize,
    pub td_mean: Option<MeanCi>,
    pub td_var: Option<MeanCi>,
    pub grad_mean: Option<MeanCi>,
    pub grad_var: Option<MeanCi>,
    pub spread: MeanCi,
    pub co_reach: MeanCi,
    pub episode_return: MeanCi,
}

/// Which episodes feed the condition-level spread/co-reach means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpreadSource {
    Evaluation,
    Training,
}

/// One seed's rows, borrowed from a run record.
#[derive(Debug, Clone, Copy)]
pub struct SeedRun<'a> {
    pub episodes: &'a [EpisodeRow],
    pub evals: &'a [EvalRow],
}

/// Everything the reports need for one (L, rho) condition.
#[derive(Debug, Clone)]
pub struct ConditionStats {
    pub side: usize,
    pub rho: f64,
    pub agents: usize,
    pub id_enabled: bool,
    pub seeds: usize,
    pub csr: f64,
    /// Window mean of per-episode TD-error variances.
    pub td_var: f64,
    pub td_mean: Option<f64>,
    pub grad_var: f64,
    pub grad_mean: Option<f64>,
    /// Filled by [`attach_stability`] once the sweep-wide maxima are known.
    pub s: Option<f64>,
    pub s_grad: Option<f64>,
    pub spread_mean: f64,
    pub co_reach_mean: f64,
    pub rho_eff: f64,
    /// Instrumentation: episode rows actually used by the window.
    pub window_episodes: usize,
    /// Instrumentation: evaluation rows actually used by the window.
    pub window_eval_records: usize,
    pub series: Vec<SeriesPoint>,
}

/// Aggregate one condition over its seeds. Window discipline: only the
/// trailing `window_frac` of each seed's episodes (and the evaluation
/// points attached to them) feed the summary statistics.
pub fn condition_stats(
    side: usize,
    rho: f64,
    agents: usize,
    id_enabled: bool,
    runs: &[SeedRun<'_>],
    window_frac: f64,
    spread_source: SpreadSource,
) -> Result<ConditionStats, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::EmptyWindow);
    }
    let horizon = 8 * side;

    let mut window_rows: Vec<&EpisodeRow> = Vec::new();
    let mut window_evals: Vec<&EvalRow> = Vec::new();
    for run in runs {
        let start = window_start(run.episodes.len(), window_frac);
        window_rows.extend(run.episodes.iter().filter(|r| r.episode >= start));
        window_evals.extend(run.evals.iter().filter(|e| e.after_episode >= start));
    }

    let csr_value = csr(&window_evals)?;
    let v = td_variance(&window_rows)?;
    let g = grad_norm_variance(&window_rows)?;
    let td_means: Vec<f64> = window_rows.iter().filter_map(|r| r.td_mean).collect();
    let grad_means: Vec<f64> = window_rows.iter().filter_map(|r| r.grad_mean).collect();

    let (spread_mean, co_reach_mean) = match spread_source {
        SpreadSource::Evaluation => {
            let spreads: Vec<f64> = window_evals
                .iter()
                .map(|e| arrival_spread(&e.arrival_steps, horizon))
                .collect();
            let reach: Vec<f64> =
                window_evals.iter().map(|e| co_reach(&e.arrival_steps)).collect();
            (mean(&spreads), mean(&reach))
        }
        SpreadSource::Training => {
            let spreads: Vec<f64> = window_rows.iter().map(|r| r.spread).collect();
            let reach: Vec<f64> = window_rows.iter().map(|r| r.co_reach).collect();
            (mean(&spreads), mean(&reach))
        }
    };

    Ok(ConditionStats {
        side,
        rho,
        agents,
        id_enabled,
        seeds: runs.len(),
        csr: csr_value,
        td_var: v,
        td_mean: (!td_means.is_empty()).then(|| mean(&td_means)),
        grad_var: g,
        grad_mean: (!grad_means.is_empty()).then(|| mean(&grad_means)),
        s: None,
        s_grad: None,
        spread_mean,
        co_reach_mean,
        rho_eff: rho_eff(rho, csr_value),
        window_episodes: window_rows.len(),
        window_eval_records: window_evals.len(),
        series: build_series(runs),
    })
}

fn build_series(runs: &[SeedRun<'_>]) -> Vec<SeriesPoint> {
    let max_len = runs.iter().map(|r| r.episodes.len()).max().unwrap_or(0);
    let mut series = Vec::with_capacity(max_len);
    for episode in 0..max_len {
        let rows: Vec<&EpisodeRow> = runs
            .iter()
            .filter_map(|r| r.episodes.iter().find(|row| row.episode == episode))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let collect = |f: &dyn Fn(&EpisodeRow) -> Option<f64>| -> Option<MeanCi> {
            let vals: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
            (!vals.is_empty()).then(|| MeanCi::from_values(&vals))
        };
        series.push(SeriesPoint {
            episode,
            seeds: rows.len(),
            td_mean: collect(&|r| r.td_mean),
            td_var: collect(&|r| r.td_var),
            grad_mean: collect(&|r| r.grad_mean),
            grad_var: collect(&|r| r.grad_var),
            spread: MeanCi::from_values(&rows.iter().map(|r| r.spread).collect::<Vec<f64>>()),
            co_reach: MeanCi::from_values(
                &rows.iter().map(|r| r.co_reach).collect::<Vec<f64>>(),
            ),
            episode_return: MeanCi::from_values(
                &rows.iter().map(|r| r.episode_return).collect::<Vec<f64>>(),
            ),
        });
    }
    series
}

/// Compute the sweep-wide maxima and fill `s`/`s_grad` on every condition.
/// Returns (v_max, grad_var_max).
pub fn attach_stability(stats: &mut [ConditionStats]) -> Result<(f64, f64), MetricsError> {
    if stats.is_empty() {
        return Err(MetricsError::EmptyWindow);
    }
    let v_max = stats.iter().map(|s| s.td_var).fold(f64::NEG_INFINITY, f64::max);
    let g_max = stats.iter().map(|s| s.grad_var).fold(f64::NEG_INFINITY, f64::max);
    for s in stats.iter_mut() {
        s.s = Some(stability_index(s.td_var, v_max)?);
        s.s_grad = Some(stability_index(s.grad_var, g_max)?);
    }
    Ok((v_max, g_max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(episode: usize, td_var: Option<f64>, grad_var: Option<f64>) -> EpisodeRow {
        EpisodeRow {
            episode,
            steps: 10,
            episode_return: 0.0,
            done_reason: DoneReason::Horizon,
            td_mean: td_var.map(|_| 0.0),
            td_var,
            td_count: td_var.map_or(0, |_| 2),
            grad_mean: grad_var.map(|_| 1.0),
            grad_var,
            grad_count: grad_var.map_or(0, |_| 2),
            spread: 0.0,
            co_reach: 0.0,
        }
    }

    fn eval_row(after_episode: usize, all_reached: bool) -> EvalRow {
        EvalRow {
            after_episode,
            eval_index: 0,
            all_reached,
            episode_return: 0.0,
            steps: 10,
            arrival_steps: vec![Some(10)],
        }
    }

    #[test]
    fn csr_counts_all_reached_episodes() {
        let rows: Vec<EvalRow> = [true, true, false, true]
            .iter()
            .enumerate()
            .map(|(i, &b)| eval_row(i, b))
            .collect();
        let refs: Vec<&EvalRow> = rows.iter().collect();
        assert_eq!(csr(&refs).unwrap(), 0.75);
        assert_eq!(csr(&[]), Err(MetricsError::EmptyWindow));

        let all: Vec<EvalRow> = (0..10).map(|i| eval_row(i, true)).collect();
        let refs: Vec<&EvalRow> = all.iter().collect();
        assert_eq!(csr(&refs).unwrap(), 1.0);
        let none: Vec<EvalRow> = (0..10).map(|i| eval_row(i, false)).collect();
        let refs: Vec<&EvalRow> = none.iter().collect();
        assert_eq!(csr(&refs).unwrap(), 0.0);
    }

    #[test]
    fn per_episode_variance_uses_population_convention() {
        let log = EpisodeLog {
            episode_index: 0,
            td_error_samples: vec![-1.0, 1.0],
            grad_norm_samples: vec![0.5, 0.5],
            arrival_steps: vec![Some(12), Some(12)],
            episode_return: 1.0,
            steps: 12,
            done_reason: DoneReason::TargetReached,
        };
        let r = EpisodeRow::from_log(&log, 64);
        assert_eq!(r.td_var, Some(1.0));
        assert_eq!(r.grad_var, Some(0.0));
        assert_eq!(r.spread, 0.0);
        assert_eq!(r.co_reach, 1.0);
    }

    #[test]
    fn td_variance_averages_per_episode_variances() {
        let rows = [row(0, Some(0.0), None), row(1, Some(1.0), None), row(2, None, None)];
        let refs: Vec<&EpisodeRow> = rows.iter().collect();
        assert_eq!(td_variance(&refs).unwrap(), 0.5);
        let empty = [row(0, None, None)];
        let refs: Vec<&EpisodeRow> = empty.iter().collect();
        assert_eq!(td_variance(&refs), Err(MetricsError::EmptyWindow));
    }

    #[test]
    fn stability_index_fixtures() {
        assert_eq!(stability_index(2.0, 2.0).unwrap(), 0.0);
        assert_eq!(stability_index(0.0, 2.0).unwrap(), 1.0);
        assert_eq!(stability_index(1.0, 2.0).unwrap(), 0.5);
        assert_eq!(stability_index(0.0, 0.0), Err(MetricsError::DegenerateNormalizer));
    }

    #[test]
    fn spread_fixtures() {
        assert_eq!(arrival_spread(&[Some(12), Some(12), Some(12)], 64), 0.0);
        assert_eq!(arrival_spread(&[Some(10), Some(30)], 64), 10.0);
        assert_eq!(arrival_spread(&[Some(10), None], 64), 27.0);
    }

    #[test]
    fn co_reach_fixtures() {
        assert_eq!(co_reach(&[Some(1), Some(2), Some(3), Some(4)]), 1.0);
        assert_eq!(co_reach(&[None, None]), 0.0);
        assert_eq!(co_reach(&[Some(1), Some(2), Some(3), None]), 0.75);
    }

    #[test]
    fn rho_eff_fixtures() {
        assert_eq!(rho_eff(0.25, 0.0), 0.0);
        assert!((rho_eff(0.125, 0.8) - 0.1).abs() < 1e-12);
        assert_eq!(rho_eff(0.0625, 1.0), 0.0625);
    }

    #[test]
    fn window_is_the_trailing_quarter() {
        assert_eq!(window_len(400, 0.25), 100);
        assert_eq!(window_start(400, 0.25), 300);
        assert_eq!(window_len(401, 0.25), 101);
        assert_eq!(window_start(10, 0.25), 7);
        assert_eq!(window_len(3, 1.0), 3);
    }

    #[test]
    fn condition_stats_respect_the_window() {
        // 400 episodes: td_var 1.0 before the window, 5.0 inside it.
        let episodes: Vec<EpisodeRow> = (0..400)
            .map(|e| row(e, Some(if e >= 300 { 5.0 } else { 1.0 }), Some(1.0)))
            .collect();
        let evals: Vec<EvalRow> =
            (0..40).map(|k| eval_row(k * 10 + 9, k * 10 + 9 >= 300)).collect();
        let run = SeedRun { episodes: &episodes, evals: &evals };
        let stats = condition_stats(
            8,
            0.03125,
            2,
            true,
            &[run],
            0.25,
            SpreadSource::Evaluation,
        )
        .unwrap();
        assert_eq!(stats.window_episodes, 100);
        assert_eq!(stats.window_eval_records, 10);
        assert_eq!(stats.td_var, 5.0);
        assert_eq!(stats.csr, 1.0, "only in-window evals count");
        assert!((stats.rho_eff - 0.03125).abs() < 1e-15);
    }

    #[test]
    fn stability_ranks_can_disagree_between_td_and_grad() {
        // Condition A: calm TD, noisy gradients. Condition B: the reverse.
        let a_rows: Vec<EpisodeRow> = (0..4).map(|e| row(e, Some(1.0), Some(4.0))).collect();
        let b_rows: Vec<EpisodeRow> = (0..4).map(|e| row(e, Some(2.0), Some(1.0))).collect();
        let a_evals = vec![eval_row(3, true)];
        let b_evals = vec![eval_row(3, true)];
        let mut stats = vec![
            condition_stats(
                8,
                0.03125,
                2,
                true,
                &[SeedRun { episodes: &a_rows, evals: &a_evals }],
                1.0,
                SpreadSource::Evaluation,
            )
            .unwrap(),
            condition_stats(
                8,
                0.0625,
                4,
                true,
                &[SeedRun { episodes: &b_rows, evals: &b_evals }],
                1.0,
                SpreadSource::Evaluation,
            )
            .unwrap(),
        ];
        attach_stability(&mut stats).unwrap();
        let (s_a, s_b) = (stats[0].s.unwrap(), stats[1].s.unwrap());
        let (g_a, g_b) = (stats[0].s_grad.unwrap(), stats[1].s_grad.unwrap());
        assert!(s_a > s_b, "TD index ranks A above B");
        assert!(g_a < g_b, "gradient index ranks B above A");
        // Exactly one condition sits at S = 0 (the v_max holder).
        assert_eq!(stats.iter().filter(|s| s.s == Some(0.0)).count(), 1);
    }

    #[test]
    fn spread_source_flag_switches_inputs() {
        let episodes: Vec<EpisodeRow> = (0..4)
            .map(|e| {
                let mut r = row(e, Some(1.0), Some(1.0));
                r.spread = 7.0;
                r.co_reach = 0.25;
                r
            })
            .collect();
        let evals = vec![EvalRow {
            after_episode: 3,
            eval_index: 0,
            all_reached: true,
            episode_return: 1.0,
            steps: 5,
            arrival_steps: vec![Some(5), Some(5)],
        }];
        let run = SeedRun { episodes: &episodes, evals: &evals };
        let from_eval =
            condition_stats(8, 0.03125, 2, true, &[run], 1.0, SpreadSource::Evaluation).unwrap();
        assert_eq!(from_eval.spread_mean, 0.0);
        assert_eq!(from_eval.co_reach_mean, 1.0);
        let from_train =
            condition_stats(8, 0.03125, 2, true, &[run], 1.0, SpreadSource::Training).unwrap();
        assert_eq!(from_train.spread_mean, 7.0);
        assert_eq!(from_train.co_reach_mean, 0.25);
    }
}
