use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::map::{Cell, DistanceField, GridMap, Pose};
use crate::env::render::{render_audio, render_visual, Binaural, VisualConfig};
use crate::env::sound::SoundSignature;
use crate::error::{Error, Result};
use crate::metrics::EpisodeRecord;

pub const STEP_PENALTY: f64 = 0.01;
pub const SUCCESS_REWARD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Forward, Action::TurnLeft, Action::TurnRight, Action::Stop];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    pub map: Arc<GridMap>,
    pub start: Pose,
    pub goal: Cell,
    pub signature: SoundSignature,
    pub max_steps: u32,
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Normalized ray depths, left to right.
    pub visual: Vec<f64>,
    pub audio: Binaural,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub geodesic_distance: f64,
    pub success: bool,
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug)]
struct Episode {
    spec: EpisodeSpec,
    field: DistanceField,
    pose: Pose,
    rng: ChaCha8Rng,
    steps: u32,
    path_len: u32,
    done: bool,
    success: bool,
    initial_distance: u32,
    trajectory: Vec<Cell>,
}

/// Single-episode grid world. Not thread-safe to share; run one per thread.
#[derive(Debug)]
pub struct GridEnv {
    visual: VisualConfig,
    episode: Option<Episode>,
}

impl Default for GridEnv {
    fn default() -> Self {
        GridEnv::new(VisualConfig::default())
    }
}

impl GridEnv {
    pub fn new(visual: VisualConfig) -> Self {
        GridEnv { visual, episode: None }
    }

    pub fn visual_config(&self) -> &VisualConfig {
        &self.visual
    }

    pub fn validate_spec(spec: &EpisodeSpec) -> Result<DistanceField> {
        spec.map.validate()?;
        if spec.max_steps == 0 {
            return Err(Error::Validation("max_steps must be at least 1".into()));
        }
        if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
            return Err(Error::Validation(format!("noise_std {} invalid", spec.noise_std)));
        }
        if !spec.map.is_free(spec.start.cell()) {
            return Err(Error::Validation(format!("start {} is not free", spec.start.cell())));
        }
        if !spec.map.is_free(spec.goal) {
            return Err(Error::Validation(format!("goal {} is not free", spec.goal)));
        }
        let field = DistanceField::new(&spec.map, spec.goal)?;
        if field.distance(spec.start.cell()).is_none() {
            return Err(Error::Validation(format!(
                "goal {} unreachable from start {}",
                spec.goal,
                spec.start.cell()
            )));
        }
        Ok(field)
    }

    pub fn reset(&mut self, spec: EpisodeSpec) -> Result<Observation> {
        let field = Self::validate_spec(&spec)?;
        let initial_distance = field.distance(spec.start.cell()).unwrap();
        let mut ep = Episode {
            pose: spec.start,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            field,
            steps: 0,
            path_len: 0,
            done: false,
            success: false,
            initial_distance,
            trajectory: vec![spec.start.cell()],
            spec,
        };
        let obs = observe(&self.visual, &mut ep)?;
        self.episode = Some(ep);
        Ok(obs)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        let ep = self
            .episode
            .as_mut()
            .ok_or_else(|| Error::Contract("step called before reset".into()))?;
        if ep.done {
            return Err(Error::Contract("step called after episode end".into()));
        }
        let d_prev = ep.field.distance(ep.pose.cell()).unwrap() as f64;
        let mut collided = false;
        let mut success = false;
        match action {
            Action::Forward => {
                let next = ep.pose.cell().step(ep.pose.heading);
                if ep.spec.map.is_free(next) {
                    ep.pose.x = next.x;
                    ep.pose.y = next.y;
                    ep.path_len += 1;
                    ep.trajectory.push(next);
                } else {
                    collided = true;
                }
            }
            Action::TurnLeft => ep.pose.heading = ep.pose.heading.left(),
            Action::TurnRight => ep.pose.heading = ep.pose.heading.right(),
            Action::Stop => {
                ep.done = true;
                success = ep.pose.cell() == ep.spec.goal;
                ep.success = success;
            }
        }
        ep.steps += 1;
        if ep.steps >= ep.spec.max_steps {
            ep.done = true;
        }
        let d_new = ep.field.distance(ep.pose.cell()).unwrap() as f64;
        let reward = (d_prev - d_new) - STEP_PENALTY + if success { SUCCESS_REWARD } else { 0.0 };
        let obs = observe(&self.visual, ep)?;
        Ok(StepResult {
            obs,
            reward,
            done: ep.done,
            info: StepInfo {
                geodesic_distance: d_new,
                success,
                collided,
            },
        })
    }

    fn ep(&self) -> Result<&Episode> {
        self.episode
            .as_ref()
            .ok_or_else(|| Error::Contract("no active episode".into()))
    }

    pub fn pose(&self) -> Result<Pose> {
        Ok(self.ep()?.pose)
    }

    pub fn spec(&self) -> Result<&EpisodeSpec> {
        Ok(&self.ep()?.spec)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_none_or(|e| e.done)
    }

    pub fn geodesic_distance(&self) -> Result<u32> {
        let ep = self.ep()?;
        Ok(ep.field.distance(ep.pose.cell()).unwrap())
    }

    /// Cells occupied by the agent, one entry per position change.
    pub fn trajectory(&self) -> Result<&[Cell]> {
        Ok(&self.ep()?.trajectory)
    }

    /// Episode accounting: success, initial geodesic length, cells moved,
    /// and actions taken.
    pub fn record(&self, scenario_id: &str) -> Result<EpisodeRecord> {
        let ep = self.ep()?;
        Ok(EpisodeRecord {
            success: ep.success,
            geodesic_len: ep.initial_distance as f64,
            path_len: ep.path_len as f64,
            action_count: ep.steps,
            scenario_id: scenario_id.to_string(),
        })
    }
}

fn observe(visual: &VisualConfig, ep: &mut Episode) -> Result<Observation> {
    Ok(Observation {
        visual: render_visual(&ep.spec.map, ep.pose, visual),
        audio: render_audio(&ep.field, ep.pose, &ep.spec.signature, ep.spec.noise_std, &mut ep.rng)?,
    })
}
