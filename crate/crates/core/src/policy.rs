//! Recurrent actor-critic: modality encoders, fusion, GRU, policy and value
//! heads.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{log_softmax_row, Graph, Init, ParamId, ParamStore, Value};
use crate::env::{Action, Binaural, EpisodeSpec, Observation, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::metrics::Agent;
use crate::fusion::{FusedPair, FusionParams, FusionVariant, DEFAULT_BETA_INIT};
use crate::nn::{Encoder, Linear};

pub const NUM_ACTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub visual_dim: usize,
    pub audio_bins: usize,
    /// Encoder output and fusion width `d`.
    pub feature_dim: usize,
    /// Fused feature width fed to the GRU.
    pub joint_dim: usize,
    pub hidden_dim: usize,
    pub variant: FusionVariant,
    pub beta_init: f64,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            visual_dim: 9,
            audio_bins: DEFAULT_BINS,
            feature_dim: 64,
            joint_dim: 128,
            hidden_dim: 128,
            variant: FusionVariant::Crfn,
            beta_init: DEFAULT_BETA_INIT,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_z: Linear,
    pub w_r: Linear,
    pub w_h: Linear,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
}

impl GruParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let mut recurrent = |name: &str| {
            store.make_param(
                &format!("gru.{name}"),
                &[hidden, hidden],
                Init::ScaledUniform { fan_in: hidden },
                rng,
            )
        };
        let (u_z, u_r, u_h) = (recurrent("u_z")?, recurrent("u_r")?, recurrent("u_h")?);
        Ok(GruParams {
            w_z: Linear::new(store, "gru.w_z", input, hidden, rng)?,
            w_r: Linear::new(store, "gru.w_r", input, hidden, rng)?,
            w_h: Linear::new(store, "gru.w_h", input, hidden, rng)?,
            u_z,
            u_r,
            u_h,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PolicyParams {
    pub vis_encoder: Encoder,
    pub aud_encoder: Encoder,
    pub fusion: FusionParams,
    pub gru: GruParams,
    pub actor: Linear,
    pub critic: Linear,
}

/// Per-episode recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub hidden: Vec<f64>,
    pub step_index: u32,
}

impl AgentState {
    pub fn new(hidden_dim: usize) -> Self {
        AgentState {
            hidden: vec![0.0; hidden_dim],
            step_index: 0,
        }
    }
}

/// Fusion internals exposed for analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionAux {
    pub v_hat: Vec<f64>,
    pub a_hat: Vec<f64>,
    pub h_interact: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub value: f64,
    pub next_hidden: Vec<f64>,
    pub aux: FusionAux,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub logits: Value,
    pub values: Value,
    pub next_hidden: Value,
    pub fused: FusedPair,
}

/// Reference level of the audio log-compression.
pub const AUDIO_REF: f64 = 0.01;

/// Network input for a binaural observation: `ln(1 + x / AUDIO_REF)` per
/// entry, left row then right row.
pub fn audio_features(audio: &Binaural) -> Vec<f64> {
    audio.flatten().into_iter().map(|x| (x / AUDIO_REF).ln_1p()).collect()
}

pub fn encode_visual(g: &mut Graph, store: &ParamStore, params: &PolicyParams, x: Value) -> Result<Value> {
    params.vis_encoder.forward(g, store, x)
}

/// Expects the binaural matrix flattened row-major (`[left; right]`).
pub fn encode_audio(g: &mut Graph, store: &ParamStore, params: &PolicyParams, x: Value) -> Result<Value> {
    params.aud_encoder.forward(g, store, x)
}

/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// h~ = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h~
/// ```
pub fn gru_step(g: &mut Graph, store: &ParamStore, p: &GruParams, x: Value, h: Value) -> Result<Value> {
    let gate = |g: &mut Graph, w: &Linear, u: ParamId, hin: Value| -> Result<Value> {
        let xw = w.forward(g, store, x)?;
        let uu = g.param(store, u);
        let hu = g.matmul(hin, uu)?;
        g.add(xw, hu)
    };
    let z_pre = gate(g, &p.w_z, p.u_z, h)?;
    let z = g.sigmoid(z_pre);
    let r_pre = gate(g, &p.w_r, p.u_r, h)?;
    let r = g.sigmoid(r_pre);
    let rh = g.mul(r, h)?;
    let cand_pre = gate(g, &p.w_h, p.u_h, rh)?;
    let cand = g.tanh(cand_pre);
    let delta = g.sub(cand, h)?;
    let step = g.mul(z, delta)?;
    g.add(h, step)
}

impl PolicyParams {
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        visual: Value,
        audio: Value,
        hidden: Value,
    ) -> Result<Forward> {
        let v = encode_visual(g, store, self, visual)?;
        let a = encode_audio(g, store, self, audio)?;
        let fused = self.fusion.fuse(g, store, v, a)?;
        let next_hidden = gru_step(g, store, &self.gru, fused.joint, hidden)?;
        let logits = self.actor.forward(g, store, next_hidden)?;
        let values = self.critic.forward(g, store, next_hidden)?;
        Ok(Forward {
            logits,
            values,
            next_hidden,
            fused,
        })
    }

    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &PolicyConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.feature_dim;
        Ok(PolicyParams {
            vis_encoder: Encoder::new(store, "vis", cfg.visual_dim, d, rng)?,
            aud_encoder: Encoder::new(store, "aud", 2 * cfg.audio_bins, d, rng)?,
            fusion: FusionParams::new(cfg.variant, store, d, cfg.joint_dim, cfg.beta_init, rng)?,
            gru: GruParams::new(store, cfg.joint_dim, cfg.hidden_dim, rng)?,
            actor: Linear::new(store, "actor", cfg.hidden_dim, NUM_ACTIONS, rng)?,
            critic: Linear::new(store, "critic", cfg.hidden_dim, 1, rng)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Policy {
    config: PolicyConfig,
    params: PolicyParams,
    store: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: PolicyConfig,
    params: serde_json::Value,
}

impl Policy {
    pub fn new(config: PolicyConfig) -> Result<Self> {
        for (name, v) in [
            ("visual_dim", config.visual_dim),
            ("audio_bins", config.audio_bins),
            ("feature_dim", config.feature_dim),
            ("joint_dim", config.joint_dim),
            ("hidden_dim", config.hidden_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("policy {name} must be positive")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let params = PolicyParams::new(&mut store, &config, &mut rng)?;
        Ok(Policy { config, params, store })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn variant(&self) -> FusionVariant {
        self.config.variant
    }

    pub fn betas(&self) -> Option<(f64, f64)> {
        self.params.fusion.betas(&self.store)
    }

    pub fn initial_state(&self) -> AgentState {
        AgentState::new(self.config.hidden_dim)
    }

    /// Full pipeline on graph inputs: `visual [B, R]`, `audio [B, 2F]`,
    /// `hidden [B, H]` (or rank-1 for a single step).
    pub fn forward(&self, g: &mut Graph, visual: Value, audio: Value, hidden: Value) -> Result<Forward> {
        self.params.forward(g, &self.store, visual, audio, hidden)
    }

    pub fn check_observation(&self, obs: &Observation) -> Result<()> {
        if obs.visual.len() != self.config.visual_dim {
            return Err(Error::shape("observation.visual", &[obs.visual.len()], &[self.config.visual_dim]));
        }
        let f = self.config.audio_bins;
        if obs.audio.left.len() != f || obs.audio.right.len() != f {
            return Err(Error::shape("observation.audio", &[2, obs.audio.left.len()], &[2, f]));
        }
        Ok(())
    }

    pub fn step(&self, obs: &Observation, state: &AgentState) -> Result<PolicyOutput> {
        self.check_observation(obs)?;
        if state.hidden.len() != self.config.hidden_dim {
            return Err(Error::shape("hidden", &[state.hidden.len()], &[self.config.hidden_dim]));
        }
        let mut g = Graph::new();
        let vis = g.vector(obs.visual.clone());
        let aud = g.vector(audio_features(&obs.audio));
        let h = g.vector(state.hidden.clone());
        let out = self.forward(&mut g, vis, aud, h)?;
        let logits = g.data(out.logits).to_vec();
        let value = g.scalar(out.values);
        if logits.iter().any(|l| !l.is_finite()) || !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite policy output: {logits:?}, {value}")));
        }
        Ok(PolicyOutput {
            logits,
            value,
            next_hidden: g.data(out.next_hidden).to_vec(),
            aux: FusionAux {
                v_hat: g.data(out.fused.v_hat).to_vec(),
                a_hat: g.data(out.fused.a_hat).to_vec(),
                h_interact: out.fused.h_interact.map(|h| g.data(h).to_vec()),
            },
        })
    }

    pub fn to_checkpoint(&self) -> serde_json::Value {
        serde_json::to_value(Checkpoint {
            config: self.config,
            params: self.store.to_json(),
        })
        .expect("checkpoint serializes")
    }

    pub fn from_checkpoint(value: serde_json::Value) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_value(value)?;
        let mut policy = Policy::new(ck.config)?;
        let stored = ParamStore::from_json(ck.params)?;
        if stored.len() != policy.store.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} parameters, expected {}",
                stored.len(),
                policy.store.len()
            )));
        }
        policy.store.load_values(&stored)?;
        Ok(policy)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

/// Greedy action and its log-probability.
pub fn act_greedy(logits: &[f64]) -> Result<(Action, f64)> {
    act::<ChaCha8Rng>(logits, ActMode::Greedy)
}

pub enum ActMode<'a, R: Rng + ?Sized> {
    Greedy,
    Sample(&'a mut R),
}

/// Picks an action from logits and returns it with its log-probability.
/// Greedy ties go to the lowest index.
pub fn act<R: Rng + ?Sized>(logits: &[f64], mode: ActMode<'_, R>) -> Result<(Action, f64)> {
    if logits.len() != NUM_ACTIONS {
        return Err(Error::shape("act", &[logits.len()], &[NUM_ACTIONS]));
    }
    if logits.iter().any(|l| l.is_nan()) {
        return Err(Error::Numeric(format!("NaN logits {logits:?}")));
    }
    let mut logp = logits.to_vec();
    log_softmax_row(&mut logp);
    let idx = match mode {
        ActMode::Greedy => {
            let mut best = 0;
            for i in 1..logits.len() {
                if logits[i] > logits[best] {
                    best = i;
                }
            }
            best
        }
        ActMode::Sample(rng) => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = logp.len() - 1;
            for (i, l) in logp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        }
    };
    Ok((Action::from_index(idx).unwrap(), logp[idx]))
}

/// Stored per-step policy inputs, row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepBatch {
    pub visual: Vec<f64>,
    pub audio: Vec<f64>,
    pub hidden: Vec<f64>,
    pub actions: Vec<usize>,
}

impl StepBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn push(&mut self, obs: &Observation, hidden: &[f64], action: Action) {
        self.visual.extend_from_slice(&obs.visual);
        self.audio.extend(audio_features(&obs.audio));
        self.hidden.extend_from_slice(hidden);
        self.actions.push(action.index());
    }

    /// Rows `idx` as a new batch.
    pub fn select(&self, idx: &[usize], cfg: &PolicyConfig) -> StepBatch {
        let (r, f2, h) = (cfg.visual_dim, 2 * cfg.audio_bins, cfg.hidden_dim);
        let mut out = StepBatch::default();
        for &i in idx {
            out.visual.extend_from_slice(&self.visual[i * r..(i + 1) * r]);
            out.audio.extend_from_slice(&self.audio[i * f2..(i + 1) * f2]);
            out.hidden.extend_from_slice(&self.hidden[i * h..(i + 1) * h]);
            out.actions.push(self.actions[i]);
        }
        out
    }
}

/// Graph handles for a re-evaluated batch, each of length `B`.
#[derive(Debug, Clone, Copy)]
pub struct ActionEval {
    pub log_probs: Value,
    pub values: Value,
    pub entropies: Value,
}

/// Re-runs the policy on stored inputs, with the stored hidden states
/// standing in for the recurrence.
pub fn evaluate_actions(g: &mut Graph, policy: &Policy, batch: &StepBatch) -> Result<ActionEval> {
    evaluate_actions_with(g, policy.params(), policy.config(), policy.store(), batch)
}

/// [`evaluate_actions`] against an explicit parameter store.
pub fn evaluate_actions_with(
    g: &mut Graph,
    params: &PolicyParams,
    cfg: &PolicyConfig,
    store: &ParamStore,
    batch: &StepBatch,
) -> Result<ActionEval> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::Contract("evaluate_actions on an empty batch".into()));
    }
    let (r, f2, h) = (cfg.visual_dim, 2 * cfg.audio_bins, cfg.hidden_dim);
    if batch.visual.len() != b * r || batch.audio.len() != b * f2 || batch.hidden.len() != b * h {
        return Err(Error::shape(
            "evaluate_actions",
            &[batch.visual.len(), batch.audio.len(), batch.hidden.len()],
            &[b * r, b * f2, b * h],
        ));
    }
    let vis = g.constant(&[b, r], batch.visual.clone())?;
    let aud = g.constant(&[b, f2], batch.audio.clone())?;
    let hid = g.constant(&[b, h], batch.hidden.clone())?;
    let out = params.forward(g, store, vis, aud, hid)?;
    let logp = g.log_softmax(out.logits);
    let log_probs = g.gather(logp, &batch.actions)?;
    let entropies = g.entropy(logp);
    // [B, 1] -> [B]
    let values = g.gather(out.values, &vec![0; b])?;
    Ok(ActionEval {
        log_probs,
        values,
        entropies,
    })
}

/// Runs a policy as an evaluation agent. Greedy by default; sampling
/// reseeds from each episode's seed.
#[derive(Debug, Clone)]
pub struct PolicyAgent {
    policy: Policy,
    state: AgentState,
    sample: Option<ChaCha8Rng>,
    sampling: bool,
}

impl PolicyAgent {
    pub fn greedy(policy: Policy) -> Self {
        let state = policy.initial_state();
        PolicyAgent {
            policy,
            state,
            sample: None,
            sampling: false,
        }
    }

    pub fn sampling(policy: Policy) -> Self {
        PolicyAgent {
            sampling: true,
            ..Self::greedy(policy)
        }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }
}

impl Agent for PolicyAgent {
    fn name(&self) -> String {
        format!("policy:{}", self.policy.variant())
    }

    fn reset(&mut self, spec: &EpisodeSpec, obs: &Observation) -> Result<()> {
        self.policy.check_observation(obs)?;
        self.state = self.policy.initial_state();
        self.sample = self.sampling.then(|| ChaCha8Rng::seed_from_u64(spec.seed));
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        let out = self.policy.step(obs, &self.state)?;
        let (action, _) = match self.sample.as_mut() {
            Some(rng) => act(&out.logits, ActMode::Sample(rng))?,
            None => act::<ChaCha8Rng>(&out.logits, ActMode::Greedy)?,
        };
        self.state.hidden = out.next_hidden;
        self.state.step_index += 1;
        Ok(action)
    }
}
