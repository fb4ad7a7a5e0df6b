//! TOML run configuration and the training setup derived from it.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    generate_scenarios, EpisodeSpec, GridMap, MapCache, ScenarioSet, SoundLibrary, SoundSignature, TrainingTask,
    VisualConfig, DEFAULT_MAX_STEPS, DEFAULT_NOISE_STD,
};
use crate::error::{Error, Result};
use crate::fusion::{FusionVariant, DEFAULT_BETA_INIT};
use crate::policy::PolicyConfig;
use crate::ppo::PpoConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    /// Map files used for training and held-out scenario generation.
    pub maps: Vec<PathBuf>,
    /// Sound library JSON; generated from `library_seed` when absent.
    pub library: Option<PathBuf>,
    pub library_seed: u64,
    /// Number of training-split sounds to train on; 0 means all.
    pub train_signatures: usize,
    pub noise_std: f64,
    /// Episode cap for evaluation.
    pub max_steps: u32,
    /// Episode cap during training rollouts; defaults to `max_steps`.
    pub train_max_steps: Option<u32>,
    /// Minimum start-goal geodesic distance of sampled episodes.
    pub min_distance: u32,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            maps: Vec::new(),
            library: None,
            library_seed: 0,
            train_signatures: 0,
            noise_std: DEFAULT_NOISE_STD,
            max_steps: DEFAULT_MAX_STEPS,
            train_max_steps: None,
            min_distance: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub variant: FusionVariant,
    pub beta_init: f64,
    /// Encoder output and fusion width.
    pub d: usize,
    /// Fused width fed to the GRU.
    pub d_out: usize,
    pub hidden: usize,
}

impl Default for FusionSection {
    fn default() -> Self {
        let p = PolicyConfig::default();
        FusionSection {
            variant: p.variant,
            beta_init: DEFAULT_BETA_INIT,
            d: p.feature_dim,
            d_out: p.joint_dim,
            hidden: p.hidden_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Held-out scenario file; generated from the training maps when absent.
    pub scenarios: Option<PathBuf>,
    /// Greedy evaluation period in updates; 0 disables periodic evaluation.
    pub every_k_updates: usize,
    pub held_out: usize,
    pub held_out_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            scenarios: None,
            every_k_updates: 25,
            held_out: 20,
            held_out_seed: 999,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckpointSection {
    /// Checkpoint period in updates; a final checkpoint is always written.
    pub every_k_updates: usize,
}

impl Default for CheckpointSection {
    fn default() -> Self {
        CheckpointSection { every_k_updates: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub variants: Vec<FusionVariant>,
    /// Swept for variants that have fusion weights.
    pub beta_inits: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            variants: vec![FusionVariant::Crfn, FusionVariant::NoFc, FusionVariant::Concat],
            beta_inits: vec![0.1, 0.2, 0.3],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub env: EnvSection,
    pub visual: VisualConfig,
    pub fusion: FusionSection,
    pub ppo: PpoConfig,
    pub eval: EvalSection,
    pub checkpoint: CheckpointSection,
    pub ablation: AblationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs/default"),
            env: EnvSection::default(),
            visual: VisualConfig::default(),
            fusion: FusionSection::default(),
            ppo: PpoConfig::default(),
            eval: EvalSection::default(),
            checkpoint: CheckpointSection::default(),
            ablation: AblationSection::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.rebase(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        rebase(base, &mut self.output_dir);
        for m in &mut self.env.maps {
            rebase(base, m);
        }
        if let Some(l) = &mut self.env.library {
            rebase(base, l);
        }
        if let Some(s) = &mut self.eval.scenarios {
            rebase(base, s);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.env.maps.is_empty() {
            return Err(Error::Config("env.maps must list at least one map".into()));
        }
        let mut files: Vec<&PathBuf> = self.env.maps.iter().collect();
        files.extend(self.env.library.iter());
        files.extend(self.eval.scenarios.iter());
        for f in files {
            if !f.is_file() {
                return Err(Error::Config(format!("referenced file {} does not exist", f.display())));
            }
        }
        if self.env.max_steps == 0 || self.env.train_max_steps == Some(0) {
            return Err(Error::Config("episode caps must be >= 1".into()));
        }
        if !(self.env.noise_std >= 0.0) {
            return Err(Error::Config(format!("noise_std must be >= 0, got {}", self.env.noise_std)));
        }
        if self.fusion.d == 0 || self.fusion.d_out == 0 || self.fusion.hidden == 0 {
            return Err(Error::Config("network widths must be >= 1".into()));
        }
        if self.visual.rays == 0 {
            return Err(Error::Config("visual.rays must be >= 1".into()));
        }
        Ok(())
    }

    /// Overrides the training seed, which also seeds initialization.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.ppo.seed = seed;
        self
    }

    pub fn policy_config(&self, library: &SoundLibrary) -> PolicyConfig {
        let bins = library.all().next().map_or(crate::env::DEFAULT_BINS, SoundSignature::bins);
        PolicyConfig {
            visual_dim: self.visual.rays,
            audio_bins: bins,
            feature_dim: self.fusion.d,
            joint_dim: self.fusion.d_out,
            hidden_dim: self.fusion.hidden,
            variant: self.fusion.variant,
            beta_init: self.fusion.beta_init,
            init_seed: self.ppo.seed,
        }
    }

    pub fn library(&self) -> Result<SoundLibrary> {
        match &self.env.library {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                SoundLibrary::from_json_str(&text)
            }
            None => SoundLibrary::default_split(self.env.library_seed),
        }
    }

    /// Loads maps and sounds and builds the training task and held-out set.
    pub fn prepare(&self) -> Result<Prepared> {
        let library = self.library()?;
        let mut cache = MapCache::new(Path::new(""));
        let maps: Vec<(String, Arc<GridMap>)> = self
            .env
            .maps
            .iter()
            .map(|p| {
                let key = p.to_string_lossy().into_owned();
                Ok((key.clone(), cache.get(&key)?))
            })
            .collect::<Result<_>>()?;
        let n = match self.env.train_signatures {
            0 => library.train.len(),
            k => k.min(library.train.len()),
        };
        let signatures: Vec<SoundSignature> = library.train[..n].to_vec();
        if signatures.is_empty() {
            return Err(Error::Config("no training sounds available".into()));
        }
        let task = TrainingTask {
            maps: maps.iter().map(|(_, m)| m.clone()).collect(),
            signatures: signatures.clone(),
            noise_std: self.env.noise_std,
            max_steps: self.env.train_max_steps.unwrap_or(self.env.max_steps),
            min_distance: self.env.min_distance,
        };
        let held_out = match &self.eval.scenarios {
            Some(path) => {
                let (set, base) = ScenarioSet::load(path)?;
                set.resolve(&base)?
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.eval.held_out_seed);
                generate_scenarios(
                    &maps,
                    &signatures,
                    self.eval.held_out,
                    self.env.min_distance,
                    self.env.noise_std,
                    self.env.max_steps,
                    "held",
                    &mut rng,
                )?
                .into_iter()
                .map(|s| {
                    let map = maps.iter().find(|(k, _)| *k == s.map).unwrap().1.clone();
                    Ok((s.id.clone(), s.to_spec(map, &library)?))
                })
                .collect::<Result<_>>()?
            }
        };
        Ok(Prepared {
            policy: self.policy_config(&library),
            training_ids: signatures.iter().map(|s| s.id().to_string()).collect(),
            library,
            task,
            held_out,
        })
    }
}

/// Everything a training run needs, resolved from a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub library: SoundLibrary,
    pub task: TrainingTask,
    pub held_out: Vec<(String, EpisodeSpec)>,
    pub training_ids: HashSet<String>,
    pub policy: PolicyConfig,
}
