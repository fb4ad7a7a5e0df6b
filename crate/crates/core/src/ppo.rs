//! PPO with GAE over a single environment stream.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Graph, Value};
use crate::env::{EpisodeSpec, GridEnv, Observation, TrainingTask, VisualConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::policy::{act, evaluate_actions, ActMode, AgentState, Policy, PolicyAgent, StepBatch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub ppo_epochs: usize,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    pub rollout_len: usize,
    pub num_updates: usize,
    pub seed: u64,
    pub max_grad_norm: f64,
    /// Minibatches per epoch; 1 means full-batch updates.
    pub num_minibatches: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            ppo_epochs: 4,
            clip_eps: 0.1,
            value_coef: 0.5,
            gamma: 0.99,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            lr: 2.5e-4,
            rollout_len: 128,
            num_updates: 500,
            seed: 0,
            max_grad_norm: 0.5,
            num_minibatches: 1,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.clip_eps > 0.0) {
            return bad(format!("clip_eps must be > 0, got {}", self.clip_eps));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda must be in [0, 1], got {}", self.gae_lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.rollout_len == 0 || self.ppo_epochs == 0 {
            return bad("rollout_len and ppo_epochs must be positive".into());
        }
        if self.num_minibatches == 0 || self.num_minibatches > self.rollout_len {
            return bad(format!(
                "num_minibatches must be in [1, rollout_len], got {}",
                self.num_minibatches
            ));
        }
        if !(self.max_grad_norm > 0.0) {
            return bad(format!("max_grad_norm must be > 0, got {}", self.max_grad_norm));
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return bad("loss coefficients must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    /// Observations, input hidden states and actions.
    pub steps: StepBatch,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// True when the episode ended on this transition.
    pub dones: Vec<bool>,
    pub bootstrap_value: f64,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Recursive GAE. Returns raw advantages and `A + V`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let t_len = rewards.len();
    let mut adv = vec![0.0; t_len];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..t_len).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts to mean 0 and scales to std 1 (population), with the std
/// floored at `1e-8`.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Per-batch constants of the PPO objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTargets {
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Value,
    pub policy: Value,
    pub value: Value,
    pub entropy: Value,
}

/// `L_clip + c_v·L_v − c_e·mean(H)` from per-step log-probs, values and
/// entropies, each of shape `[B]`.
pub fn ppo_objective(
    g: &mut Graph,
    log_probs: Value,
    values: Value,
    entropies: Value,
    targets: &LossTargets,
    cfg: &PpoConfig,
) -> Result<LossParts> {
    let b = targets.advantages.len();
    if targets.old_log_probs.len() != b || targets.returns.len() != b {
        return Err(Error::shape(
            "ppo_objective",
            &[targets.old_log_probs.len(), targets.returns.len()],
            &[b, b],
        ));
    }
    let old = g.constant(&[b], targets.old_log_probs.clone())?;
    let adv = g.constant(&[b], targets.advantages.clone())?;
    let ret = g.constant(&[b], targets.returns.clone())?;

    let log_ratio = g.sub(log_probs, old)?;
    let ratio = g.exp(log_ratio);
    let surr1 = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let surr2 = g.mul(clipped, adv)?;
    let surr = g.minimum(surr1, surr2)?;
    let mean_surr = g.mean(surr);
    let policy = g.affine(mean_surr, -1.0, 0.0);

    let err = g.sub(values, ret)?;
    let sq = g.mul(err, err)?;
    let value = g.mean(sq);

    let entropy = g.mean(entropies);

    let v_term = g.affine(value, cfg.value_coef, 0.0);
    let e_term = g.affine(entropy, cfg.entropy_coef, 0.0);
    let total = g.add(policy, v_term)?;
    let total = g.sub(total, e_term)?;
    Ok(LossParts {
        total,
        policy,
        value,
        entropy,
    })
}

/// Builds the PPO loss for `batch` under the current policy.
pub fn ppo_loss(
    g: &mut Graph,
    policy: &Policy,
    batch: &StepBatch,
    targets: &LossTargets,
    cfg: &PpoConfig,
) -> Result<LossParts> {
    let eval = evaluate_actions(g, policy, batch)?;
    let parts = ppo_objective(g, eval.log_probs, eval.values, eval.entropies, targets, cfg)?;
    let total = g.scalar(parts.total);
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "PPO loss is {total} (policy {}, value {}, entropy {})",
            g.scalar(parts.policy),
            g.scalar(parts.value),
            g.scalar(parts.entropy)
        )));
    }
    Ok(parts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub update: usize,
    /// Fusion weights at the start of this update.
    pub beta_v: Option<f64>,
    pub beta_a: Option<f64>,
    /// Mean return of episodes finished during this rollout.
    pub mean_episode_return: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub sr: Option<f64>,
    pub spl: Option<f64>,
    pub sna: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

pub const BETA_CURVE_HEADER: &str = "update,beta_v,beta_a";

/// CSV with one row per update. Variants without fusion weights leave the
/// β cells empty.
pub fn export_beta_curve(log: &TrainLog) -> String {
    let mut out = String::from(BETA_CURVE_HEADER);
    out.push('\n');
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in &log.records {
        out.push_str(&format!("{},{},{}\n", r.update, cell(r.beta_v), cell(r.beta_a)));
    }
    out
}

/// Held-out scenarios evaluated greedily every `every` updates.
#[derive(Debug, Clone)]
pub struct PeriodicEval {
    pub scenarios: Vec<(String, EpisodeSpec)>,
    pub every: usize,
}

pub struct Trainer {
    cfg: PpoConfig,
    policy: Policy,
    task: TrainingTask,
    env: GridEnv,
    obs: Observation,
    state: AgentState,
    rng: ChaCha8Rng,
    episode_return: f64,
    update: usize,
    eval: Option<PeriodicEval>,
    log: TrainLog,
}

impl Trainer {
    pub fn new(policy: Policy, task: TrainingTask, cfg: PpoConfig, visual: VisualConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut env = GridEnv::new(visual);
        let obs = env.reset(task.sample(&mut rng)?)?;
        policy.check_observation(&obs)?;
        let state = policy.initial_state();
        Ok(Trainer {
            cfg,
            policy,
            task,
            env,
            obs,
            state,
            rng,
            episode_return: 0.0,
            update: 0,
            eval: None,
            log: TrainLog::default(),
        })
    }

    pub fn with_eval(mut self, eval: PeriodicEval) -> Self {
        self.eval = Some(eval);
        self
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn into_policy(self) -> Policy {
        self.policy
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn updates_done(&self) -> usize {
        self.update
    }

    /// Collects `rollout_len` transitions, auto-resetting finished episodes.
    /// Returns the buffer and the returns of episodes that ended.
    pub fn collect_rollout(&mut self) -> Result<(RolloutBuffer, Vec<f64>)> {
        let mut buf = RolloutBuffer::default();
        let mut finished = Vec::new();
        for _ in 0..self.cfg.rollout_len {
            let out = self.policy.step(&self.obs, &self.state)?;
            let (action, logp) = act(&out.logits, ActMode::Sample(&mut self.rng))?;
            buf.steps.push(&self.obs, &self.state.hidden, action);
            buf.log_probs.push(logp);
            buf.values.push(out.value);
            let res = self.env.step(action)?;
            buf.rewards.push(res.reward);
            buf.dones.push(res.done);
            self.episode_return += res.reward;
            if res.done {
                finished.push(self.episode_return);
                self.episode_return = 0.0;
                let spec = self.task.sample(&mut self.rng)?;
                self.obs = self.env.reset(spec)?;
                self.state = self.policy.initial_state();
            } else {
                self.obs = res.obs;
                self.state.hidden = out.next_hidden;
                self.state.step_index += 1;
            }
        }
        buf.bootstrap_value = self.policy.step(&self.obs, &self.state)?.value;
        Ok((buf, finished))
    }

    /// `ppo_epochs` passes over the buffer. Returns the mean policy loss,
    /// value loss and entropy of the final epoch.
    pub fn optimize(&mut self, buf: &RolloutBuffer) -> Result<(f64, f64, f64)> {
        let (mut adv, returns) = compute_gae(
            &buf.rewards,
            &buf.values,
            &buf.dones,
            buf.bootstrap_value,
            self.cfg.gamma,
            self.cfg.gae_lambda,
        );
        normalize_advantages(&mut adv);
        let n = buf.len();
        let mut order: Vec<usize> = (0..n).collect();
        let adam = AdamConfig::with_lr(self.cfg.lr);
        let mb = self.cfg.num_minibatches;
        let mut stats = (0.0, 0.0, 0.0);
        for _ in 0..self.cfg.ppo_epochs {
            if mb > 1 {
                order.shuffle(&mut self.rng);
            }
            stats = (0.0, 0.0, 0.0);
            for chunk in 0..mb {
                let idx = &order[chunk * n / mb..(chunk + 1) * n / mb];
                let batch = if mb == 1 {
                    buf.steps.clone()
                } else {
                    buf.steps.select(idx, self.policy.config())
                };
                let targets = LossTargets {
                    old_log_probs: idx.iter().map(|&i| buf.log_probs[i]).collect(),
                    advantages: idx.iter().map(|&i| adv[i]).collect(),
                    returns: idx.iter().map(|&i| returns[i]).collect(),
                };
                let mut g = Graph::new();
                let parts = ppo_loss(&mut g, &self.policy, &batch, &targets, &self.cfg)?;
                g.backward(parts.total)?;
                let store = self.policy.store_mut();
                store.zero_grad();
                g.write_param_grads(store);
                let norm = store.clip_grad_norm(self.cfg.max_grad_norm);
                if !norm.is_finite() {
                    return Err(Error::Numeric(format!(
                        "gradient norm {norm} at update {}",
                        self.update
                    )));
                }
                store.adam_step(adam);
                stats.0 += g.scalar(parts.policy) / mb as f64;
                stats.1 += g.scalar(parts.value) / mb as f64;
                stats.2 += g.scalar(parts.entropy) / mb as f64;
            }
        }
        Ok(stats)
    }

    /// One full update: rollout, optimization, optional evaluation, log.
    pub fn step_update(&mut self) -> Result<&TrainRecord> {
        let betas = self.policy.betas();
        let (buf, finished) = self.collect_rollout()?;
        let (policy_loss, value_loss, entropy) = self.optimize(&buf)?;
        let index = self.update;
        self.update += 1;
        let mut report: Option<MetricsReport> = None;
        if let Some(ev) = &self.eval {
            if ev.every > 0 && self.update.is_multiple_of(ev.every) && !ev.scenarios.is_empty() {
                let mut agent = PolicyAgent::greedy(self.policy.clone());
                report = Some(evaluate(&mut agent, &ev.scenarios, self.env.visual_config())?.report);
            }
        }
        let mean_episode_return =
            (!finished.is_empty()).then(|| finished.iter().sum::<f64>() / finished.len() as f64);
        self.log.records.push(TrainRecord {
            update: index,
            beta_v: betas.map(|b| b.0),
            beta_a: betas.map(|b| b.1),
            mean_episode_return,
            policy_loss,
            value_loss,
            entropy,
            sr: report.map(|r| r.sr),
            spl: report.map(|r| r.spl),
            sna: report.map(|r| r.sna),
        });
        Ok(self.log.records.last().unwrap())
    }

    /// Runs the remaining updates up to `num_updates`.
    pub fn train(&mut self) -> Result<&TrainLog> {
        while self.update < self.cfg.num_updates {
            self.step_update()?;
        }
        Ok(&self.log)
    }
}
