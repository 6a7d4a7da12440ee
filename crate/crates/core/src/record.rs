//! Run records: the delimited-text artifact produced for every
//! (condition, seed) run and consumed by the report stage.
//!
//! A record is a `# key: value` metadata head followed by a `[train]`
//! section (one row per training episode) and an `[eval]` section (one row
//! per greedy evaluation episode). Floats are written in shortest
//! round-trip form, so parsing reproduces the in-memory values exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{DoneReason, GridConfig};
use crate::learner::{RunOutput, TrainerConfig};
use crate::metrics::{EpisodeRow, EvalRow, SeedRun};

pub const FORMAT_TAG: &str = "gridphase-run v1";

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("record parse error: {0}")]
    Parse(String),
    #[error("record metadata error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Identity of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCondition {
    pub side: usize,
    pub rho: f64,
    pub agents: usize,
    pub seed: u64,
    pub id_enabled: bool,
}

impl RunCondition {
    pub fn run_id(&self) -> String {
        format!(
            "L{}_rho{}_seed{}_{}",
            self.side,
            self.rho,
            self.seed,
            if self.id_enabled { "id" } else { "noid" }
        )
    }
}

/// Full contents of one run record.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub condition: RunCondition,
    pub trainer: TrainerConfig,
    pub obs_dim: usize,
    pub episode_rows: Vec<EpisodeRow>,
    pub eval_rows: Vec<EvalRow>,
    pub checkpoint: Option<String>,
}

impl RunData {
    pub fn from_output(
        condition: RunCondition,
        trainer: &TrainerConfig,
        grid: &GridConfig,
        output: &RunOutput,
    ) -> Self {
        let episode_rows =
            output.episodes.iter().map(|log| EpisodeRow::from_log(log, grid.horizon)).collect();
        let eval_rows = output.eval_points.iter().flat_map(EvalRow::from_point).collect();
        Self {
            condition,
            trainer: trainer.clone(),
            obs_dim: grid.obs_dim(),
            episode_rows,
            eval_rows,
            checkpoint: None,
        }
    }

    pub fn seed_run(&self) -> SeedRun<'_> {
        SeedRun { episodes: &self.episode_rows, evals: &self.eval_rows }
    }

    pub fn to_text(&self) -> Result<String, RecordError> {
        let mut out = String::new();
        out.push_str(&format!("# {FORMAT_TAG}\n"));
        out.push_str(&format!("# condition: {}\n", serde_json::to_string(&self.condition)?));
        out.push_str(&format!("# trainer: {}\n", serde_json::to_string(&self.trainer)?));
        out.push_str(&format!("# obs_dim: {}\n", self.obs_dim));
        out.push_str(&format!("# episodes: {}\n", self.episode_rows.len()));
        if let Some(ck) = &self.checkpoint {
            out.push_str(&format!("# checkpoint: {ck}\n"));
        }
        out.push_str("[train]\n");
        out.push_str(
            "episode,steps,return,done_reason,td_mean,td_var,td_count,grad_mean,grad_var,grad_count,spread,co_reach\n",
        );
        for r in &self.episode_rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.episode,
                r.steps,
                fmt_f64(r.episode_return),
                done_reason_label(r.done_reason),
                fmt_opt(r.td_mean),
                fmt_opt(r.td_var),
                r.td_count,
                fmt_opt(r.grad_mean),
                fmt_opt(r.grad_var),
                r.grad_count,
                fmt_f64(r.spread),
                fmt_f64(r.co_reach),
            ));
        }
        out.push_str("[eval]\n");
        out.push_str("after_episode,eval_index,all_reached,return,steps,arrivals\n");
        for e in &self.eval_rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.after_episode,
                e.eval_index,
                e.all_reached,
                fmt_f64(e.episode_return),
                e.steps,
                fmt_arrivals(&e.arrival_steps),
            ));
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self, RecordError> {
        let mut lines = text.lines().enumerate();
        let (_, first) =
            lines.next().ok_or_else(|| RecordError::Parse("empty record".into()))?;
        if first.trim() != format!("# {FORMAT_TAG}") {
            return Err(RecordError::Parse(format!("unexpected format tag {first:?}")));
        }

        let mut condition: Option<RunCondition> = None;
        let mut trainer: Option<TrainerConfig> = None;
        let mut obs_dim: Option<usize> = None;
        let mut checkpoint: Option<String> = None;
        let mut episode_rows = Vec::new();
        let mut eval_rows = Vec::new();

        #[derive(PartialEq)]
        enum Section {
            Head,
            Train,
            Eval,
        }
        let mut section = Section::Head;
        let mut expect_header = false;

        for (lineno, raw) in lines {
            let line = raw.trim_end();
            if line.is_empty() {
                continue;
            }
            let fail = |msg: String| RecordError::Parse(format!("line {}: {msg}", lineno + 1));
            if line == "[train]" {
                section = Section::Train;
                expect_header = true;
                continue;
            }
            if line == "[eval]" {
                section = Section::Eval;
                expect_header = true;
                continue;
            }
            if expect_header {
                expect_header = false; // column header line; fixed layout
                continue;
            }
            match section {
                Section::Head => {
                    let body = line
                        .strip_prefix("# ")
                        .ok_or_else(|| fail(format!("expected metadata line, got {line:?}")))?;
                    let (key, value) = body
                        .split_once(':')
                        .ok_or_else(|| fail(format!("metadata without key: {body:?}")))?;
                    let value = value.trim();
                    match key.trim() {
                        "condition" => condition = Some(serde_json::from_str(value)?),
                        "trainer" => trainer = Some(serde_json::from_str(value)?),
                        "obs_dim" => {
                            obs_dim =
                                Some(value.parse().map_err(|_| fail("bad obs_dim".into()))?)
                        }
                        "checkpoint" => checkpoint = Some(value.to_string()),
                        "episodes" => {}
                        other => return Err(fail(format!("unknown metadata key {other:?}"))),
                    }
                }
                Section::Train => {
                    episode_rows.push(parse_episode_row(line).map_err(fail)?)
                }
                Section::Eval => eval_rows.push(parse_eval_row(line).map_err(fail)?),
            }
        }

        let condition =
            condition.ok_or_else(|| RecordError::Parse("missing condition metadata".into()))?;
        let trainer =
            trainer.ok_or_else(|| RecordError::Parse("missing trainer metadata".into()))?;
        let obs_dim =
            obs_dim.ok_or_else(|| RecordError::Parse("missing obs_dim metadata".into()))?;
        if episode_rows.len() > trainer.episodes {
            return Err(RecordError::Parse(format!(
                "{} episode rows exceed the configured maximum {}",
                episode_rows.len(),
                trainer.episodes
            )));
        }
        for e in &eval_rows {
            if !episode_rows.iter().any(|r| r.episode == e.after_episode) {
                return Err(RecordError::Parse(format!(
                    "eval row references unknown episode {}",
                    e.after_episode
                )));
            }
        }
        Ok(Self { condition, trainer, obs_dim, episode_rows, eval_rows, checkpoint })
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn fmt_arrivals(arrivals: &[Option<usize>]) -> String {
    arrivals
        .iter()
        .map(|a| a.map(|s| s.to_string()).unwrap_or_default())
        .collect::<Vec<_>>()
        .join(";")
}

fn done_reason_label(reason: DoneReason) -> &'static str {
    match reason {
        DoneReason::TargetReached => "target",
        DoneReason::Horizon => "horizon",
    }
}

fn parse_done_reason(s: &str) -> Result<DoneReason, String> {
    match s {
        "target" => Ok(DoneReason::TargetReached),
        "horizon" => Ok(DoneReason::Horizon),
        other => Err(format!("unknown done reason {other:?}")),
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse().map_err(|_| format!("bad float {s:?}"))
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.parse().map_err(|_| format!("bad integer {s:?}"))
}

fn parse_opt_f64(s: &str) -> Result<Option<f64>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s).map(Some)
    }
}

fn parse_episode_row(line: &str) -> Result<EpisodeRow, String> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() != 12 {
        return Err(format!("expected 12 train columns, got {}", parts.len()));
    }
    Ok(EpisodeRow {
        episode: parse_usize(parts[0])?,
        steps: parse_usize(parts[1])?,
        episode_return: parse_f64(parts[2])?,
        done_reason: parse_done_reason(parts[3])?,
        td_mean: parse_opt_f64(parts[4])?,
        td_var: parse_opt_f64(parts[5])?,
        td_count: parse_usize(parts[6])?,
        grad_mean: parse_opt_f64(parts[7])?,
        grad_var: parse_opt_f64(parts[8])?,
        grad_count: parse_usize(parts[9])?,
        spread: parse_f64(parts[10])?,
        co_reach: parse_f64(parts[11])?,
    })
}

fn parse_eval_row(line: &str) -> Result<EvalRow, String> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() != 6 {
        return Err(format!("expected 6 eval columns, got {}", parts.len()));
    }
    let arrivals = parts[5]
        .split(';')
        .map(|s| if s.is_empty() { Ok(None) } else { parse_usize(s).map(Some) })
        .collect::<Result<Vec<Option<usize>>, String>>()?;
    Ok(EvalRow {
        after_episode: parse_usize(parts[0])?,
        eval_index: parse_usize(parts[1])?,
        all_reached: parts[2].parse().map_err(|_| format!("bad bool {:?}", parts[2]))?,
        episode_return: parse_f64(parts[3])?,
        steps: parse_usize(parts[4])?,
        arrival_steps: arrivals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_data() -> RunData {
        RunData {
            condition: RunCondition {
                side: 8,
                rho: 0.03125,
                agents: 2,
                seed: 3,
                id_enabled: true,
            },
            trainer: TrainerConfig { episodes: 4, ..TrainerConfig::default() },
            obs_dim: 6,
            episode_rows: vec![
                EpisodeRow {
                    episode: 0,
                    steps: 64,
                    episode_return: -0.64,
                    done_reason: DoneReason::Horizon,
                    td_mean: None,
                    td_var: None,
                    td_count: 0,
                    grad_mean: None,
                    grad_var: None,
                    grad_count: 0,
                    spread: 27.0,
                    co_reach: 0.0,
                },
                EpisodeRow {
                    episode: 1,
                    steps: 12,
                    episode_return: 1.87,
                    done_reason: DoneReason::TargetReached,
                    td_mean: Some(0.1234567890123456),
                    td_var: Some(1.0 / 3.0),
                    td_count: 128,
                    grad_mean: Some(0.5),
                    grad_var: Some(2.0 / 7.0),
                    grad_count: 12,
                    spread: 1.0,
                    co_reach: 1.0,
                },
            ],
            eval_rows: vec![EvalRow {
                after_episode: 1,
                eval_index: 0,
                all_reached: false,
                episode_return: 0.875,
                steps: 64,
                arrival_steps: vec![Some(11), None],
            }],
            checkpoint: Some("checkpoints/L8_rho0.03125_seed3_id.qnet".into()),
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let data = sample_data();
        let text = data.to_text().unwrap();
        let parsed = RunData::parse(&text).unwrap();
        assert_eq!(parsed, data);
        // Serialization is canonical: a second pass is byte-identical.
        assert_eq!(parsed.to_text().unwrap(), text);
    }

    #[test]
    fn run_id_encodes_the_condition() {
        let data = sample_data();
        assert_eq!(data.condition.run_id(), "L8_rho0.03125_seed3_id");
        let noid = RunCondition { id_enabled: false, ..data.condition };
        assert_eq!(noid.run_id(), "L8_rho0.03125_seed3_noid");
    }

    #[test]
    fn parse_rejects_corrupted_records() {
        let data = sample_data();
        let text = data.to_text().unwrap();
        assert!(RunData::parse(&text.replace("# gridphase-run v1", "# other v9")).is_err());
        assert!(RunData::parse(&text.replace("target", "banana")).is_err());
        // Eval row pointing at a non-existent training episode.
        let broken = text.replace("\n1,0,false", "\n3,0,false");
        assert!(RunData::parse(&broken).is_err());
    }

    #[test]
    fn parse_rejects_too_many_rows() {
        let mut data = sample_data();
        data.trainer.episodes = 1;
        let text = data.to_text().unwrap();
        assert!(matches!(RunData::parse(&text), Err(RecordError::Parse(_))));
    }
}
