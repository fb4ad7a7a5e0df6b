//! Success rate, success weighted by path length, success weighted by
//! action count, and the evaluation loop that produces them.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::env::{Action, EpisodeSpec, GridEnv, Observation, VisualConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub success: bool,
    /// Geodesic distance from start to goal.
    pub geodesic_len: f64,
    /// Cells actually moved.
    pub path_len: f64,
    pub action_count: u32,
    pub scenario_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sr: f64,
    pub spl: f64,
    pub sna: f64,
    pub n: usize,
}

impl MetricsReport {
    pub fn from_records(records: &[EpisodeRecord]) -> Result<Self> {
        Ok(MetricsReport {
            sr: sr(records)?,
            spl: spl(records)?,
            sna: sna(records)?,
            n: records.len(),
        })
    }

    /// Percentages rounded to one decimal.
    pub fn percentages(&self) -> (f64, f64, f64) {
        let p = |v: f64| (v * 1000.0).round() / 10.0;
        (p(self.sr), p(self.spl), p(self.sna))
    }
}

fn non_empty(records: &[EpisodeRecord], what: &str) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Contract(format!("{what} of an empty record set")));
    }
    Ok(records.len() as f64)
}

pub fn sr(records: &[EpisodeRecord]) -> Result<f64> {
    let n = non_empty(records, "sr")?;
    Ok(records.iter().filter(|r| r.success).count() as f64 / n)
}

/// Start-on-goal successes (`l = p = 0`) count as 1.
pub fn spl(records: &[EpisodeRecord]) -> Result<f64> {
    let n = non_empty(records, "spl")?;
    let total = records
        .iter()
        .filter(|r| r.success)
        .map(|r| {
            let denom = r.path_len.max(r.geodesic_len);
            if denom == 0.0 {
                1.0
            } else {
                r.geodesic_len / denom
            }
        })
        .fold(0.0, |acc, t| acc + t);
    Ok(total / n)
}

pub fn sna(records: &[EpisodeRecord]) -> Result<f64> {
    let n = non_empty(records, "sna")?;
    let mut total = 0.0;
    for r in records.iter().filter(|r| r.success) {
        if r.action_count == 0 {
            return Err(Error::Data(format!(
                "successful record `{}` has zero actions",
                r.scenario_id
            )));
        }
        total += r.geodesic_len / r.action_count as f64;
    }
    Ok(total / n)
}

/// A controller that can be evaluated on scenarios.
pub trait Agent {
    fn name(&self) -> String;
    /// Called once per episode with the initial observation.
    fn reset(&mut self, spec: &EpisodeSpec, obs: &Observation) -> Result<()>;
    fn act(&mut self, obs: &Observation) -> Result<Action>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub x: i32,
    pub y: i32,
    /// Number of actions taken when the agent entered this cell.
    pub step: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub record: EpisodeRecord,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Set when the episode aborted; the record then counts as a failure.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub episodes: Vec<EpisodeResult>,
}

impl Evaluation {
    pub fn records(&self) -> Vec<EpisodeRecord> {
        self.episodes.iter().map(|e| e.record.clone()).collect()
    }
}

/// Runs `agent` once on one scenario.
pub fn run_episode(agent: &mut dyn Agent, id: &str, spec: &EpisodeSpec, visual: &VisualConfig) -> EpisodeResult {
    let mut env = GridEnv::new(*visual);
    let mut trajectory = Vec::new();
    let outcome = (|| -> Result<()> {
        let mut obs = env.reset(spec.clone())?;
        let start = env.pose()?.cell();
        trajectory.push(TrajectoryPoint {
            x: start.x,
            y: start.y,
            step: 0,
        });
        agent.reset(spec, &obs)?;
        let mut step = 0;
        while !env.is_done() {
            let before = env.pose()?.cell();
            let action = agent.act(&obs)?;
            let res = env.step(action)?;
            step += 1;
            let after = env.pose()?.cell();
            if after != before {
                trajectory.push(TrajectoryPoint {
                    x: after.x,
                    y: after.y,
                    step,
                });
            }
            obs = res.obs;
        }
        Ok(())
    })();
    let (record, error) = match (outcome, env.record(id)) {
        (Ok(()), Ok(rec)) => (rec, None),
        (Err(e), Ok(mut rec)) => {
            rec.success = false;
            (rec, Some(e.to_string()))
        }
        (outcome, Err(_)) => {
            // The episode never started; keep the geodesic if it exists.
            let l = crate::env::geodesic(&spec.map, spec.start.cell(), spec.goal)
                .ok()
                .and_then(|g| g.distance)
                .unwrap_or(0);
            let rec = EpisodeRecord {
                success: false,
                geodesic_len: l as f64,
                path_len: 0.0,
                action_count: 0,
                scenario_id: id.to_string(),
            };
            (rec, Some(outcome.err().map_or_else(|| "episode not started".into(), |e| e.to_string())))
        }
    };
    EpisodeResult {
        record,
        trajectory,
        error,
    }
}

/// Runs every scenario once, in order.
pub fn evaluate(agent: &mut dyn Agent, scenarios: &[(String, EpisodeSpec)], visual: &VisualConfig) -> Result<Evaluation> {
    let episodes: Vec<EpisodeResult> = scenarios
        .iter()
        .map(|(id, spec)| run_episode(agent, id, spec, visual))
        .collect();
    let records: Vec<EpisodeRecord> = episodes.iter().map(|e| e.record.clone()).collect();
    Ok(Evaluation {
        report: MetricsReport::from_records(&records)?,
        episodes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResults {
    pub heard: Evaluation,
    pub unheard: Evaluation,
}

/// Evaluates the heard condition (training sounds) and the unheard
/// condition (sounds never seen in training). Fails with a data error if
/// the split is violated.
pub fn evaluate_conditions(
    agent: &mut dyn Agent,
    heard: &[(String, EpisodeSpec)],
    unheard: &[(String, EpisodeSpec)],
    training_ids: &HashSet<String>,
    visual: &VisualConfig,
) -> Result<ConditionResults> {
    for (id, spec) in heard {
        if !training_ids.contains(spec.signature.id()) {
            return Err(Error::Data(format!(
                "heard scenario `{id}` uses `{}`, which is not a training sound",
                spec.signature.id()
            )));
        }
    }
    for (id, spec) in unheard {
        if training_ids.contains(spec.signature.id()) {
            return Err(Error::Data(format!(
                "unheard scenario `{id}` uses training sound `{}`",
                spec.signature.id()
            )));
        }
    }
    Ok(ConditionResults {
        heard: evaluate(agent, heard, visual)?,
        unheard: evaluate(agent, unheard, visual)?,
    })
}
