//! Scenario files and random episode sampling.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::episode::EpisodeSpec;
use crate::env::map::{Cell, DistanceField, GridMap, Heading, Pose};
use crate::env::sound::{SoundLibrary, SoundSignature};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_STEPS: u32 = 500;
pub const DEFAULT_NOISE_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    /// Map file, relative to the scenario file.
    pub map: String,
    pub start: Pose,
    pub goal: Cell,
    pub signature: String,
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
}

fn default_noise() -> f64 {
    DEFAULT_NOISE_STD
}

fn default_max_steps() -> u32 {
    DEFAULT_MAX_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    /// Sound library file, relative to the scenario file.
    pub library: String,
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: ScenarioSet = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((set, base))
    }

    /// Loads every referenced map and the sound library, and builds
    /// validated episode specs in file order.
    pub fn resolve(&self, base: &Path) -> Result<Vec<(String, EpisodeSpec)>> {
        let lib_path = base.join(&self.library);
        let text = std::fs::read_to_string(&lib_path).map_err(|e| Error::io(&lib_path, e))?;
        let library = SoundLibrary::from_json_str(&text)?;
        let mut maps = MapCache::new(base);
        self.scenarios
            .iter()
            .map(|s| {
                let map = maps.get(&s.map)?;
                let spec = s.to_spec(map, &library)?;
                Ok((s.id.clone(), spec))
            })
            .collect()
    }
}

impl Scenario {
    pub fn to_spec(&self, map: Arc<GridMap>, library: &SoundLibrary) -> Result<EpisodeSpec> {
        let signature = library
            .find(&self.signature)
            .ok_or_else(|| Error::Data(format!("unknown signature id `{}`", self.signature)))?
            .clone();
        let spec = EpisodeSpec {
            map,
            start: self.start,
            goal: self.goal,
            signature,
            max_steps: self.max_steps,
            noise_std: self.noise_std,
            seed: self.seed,
        };
        crate::env::GridEnv::validate_spec(&spec)?;
        Ok(spec)
    }
}

/// Loads map files once each, keyed by their relative path.
pub struct MapCache {
    base: PathBuf,
    maps: HashMap<String, Arc<GridMap>>,
}

impl MapCache {
    pub fn new(base: &Path) -> Self {
        MapCache {
            base: base.to_path_buf(),
            maps: HashMap::new(),
        }
    }

    pub fn get(&mut self, rel: &str) -> Result<Arc<GridMap>> {
        if let Some(m) = self.maps.get(rel) {
            return Ok(m.clone());
        }
        let path = self.base.join(rel);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let name = Path::new(rel)
            .file_stem()
            .map_or_else(|| rel.to_string(), |s| s.to_string_lossy().into_owned());
        let parsed = GridMap::parse(&name, &text)?;
        parsed.map.validate()?;
        let m = Arc::new(parsed.map);
        self.maps.insert(rel.to_string(), m.clone());
        Ok(m)
    }
}

/// Uniform start pose and goal with geodesic distance at least `min_distance`.
pub fn sample_start_goal<R: Rng + ?Sized>(map: &GridMap, min_distance: u32, rng: &mut R) -> Result<(Pose, Cell)> {
    let free = map.free_cells();
    if free.is_empty() {
        return Err(Error::Validation(format!("map `{}` has no free cells", map.name())));
    }
    for _ in 0..1000 {
        let goal = *free.choose(rng).unwrap();
        let field = DistanceField::new(map, goal)?;
        let start = *free.choose(rng).unwrap();
        match field.distance(start) {
            Some(d) if d >= min_distance => {
                let heading = Heading::from_index(rng.random_range(0..4));
                return Ok((Pose::new(start.x, start.y, heading), goal));
            }
            _ => continue,
        }
    }
    Err(Error::Validation(format!(
        "no start/goal pair at distance >= {min_distance} on `{}`",
        map.name()
    )))
}

/// Generates `n` reproducible scenarios on the given maps, cycling through
/// `signatures`.
pub fn generate_scenarios<R: Rng + ?Sized>(
    maps: &[(String, Arc<GridMap>)],
    signatures: &[SoundSignature],
    n: usize,
    min_distance: u32,
    noise_std: f64,
    max_steps: u32,
    prefix: &str,
    rng: &mut R,
) -> Result<Vec<Scenario>> {
    if maps.is_empty() || signatures.is_empty() {
        return Err(Error::Config("scenario generation needs maps and signatures".into()));
    }
    (0..n)
        .map(|i| {
            let (path, map) = &maps[i % maps.len()];
            let (start, goal) = sample_start_goal(map, min_distance, rng)?;
            Ok(Scenario {
                id: format!("{prefix}-{i:03}"),
                map: path.clone(),
                start,
                goal,
                signature: signatures[i % signatures.len()].id().to_string(),
                seed: rng.random(),
                noise_std,
                max_steps,
            })
        })
        .collect()
}

/// Source of training episodes: random maps, poses, goals and sounds.
#[derive(Debug, Clone)]
pub struct TrainingTask {
    pub maps: Vec<Arc<GridMap>>,
    pub signatures: Vec<SoundSignature>,
    pub noise_std: f64,
    pub max_steps: u32,
    pub min_distance: u32,
}

impl TrainingTask {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EpisodeSpec> {
        let map = self
            .maps
            .choose(rng)
            .ok_or_else(|| Error::Config("training task has no maps".into()))?
            .clone();
        let signature = self
            .signatures
            .choose(rng)
            .ok_or_else(|| Error::Config("training task has no sounds".into()))?
            .clone();
        let (start, goal) = sample_start_goal(&map, self.min_distance, rng)?;
        Ok(EpisodeSpec {
            map,
            start,
            goal,
            signature,
            max_steps: self.max_steps,
            noise_std: self.noise_std,
            seed: rng.random(),
        })
    }
}
