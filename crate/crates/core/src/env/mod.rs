//! Occupancy-grid world with ray-depth vision and geodesic binaural audio.

mod episode;
mod map;
mod render;
mod scenario;
mod sound;

pub use episode::{Action, EpisodeSpec, GridEnv, Observation, StepInfo, StepResult, STEP_PENALTY, SUCCESS_REWARD};
pub use map::{geodesic, Cell, DistanceField, Geodesic, GridMap, Heading, ParsedMap, Pose};
pub use render::{
    lateral_sine, ray_direction, render_audio, render_visual, trace_ray, trace_rays, Binaural, RayTrace,
    VisualConfig,
};
pub use scenario::{
    generate_scenarios, sample_start_goal, MapCache, Scenario, ScenarioSet, TrainingTask, DEFAULT_MAX_STEPS,
    DEFAULT_NOISE_STD,
};
pub use sound::{SoundLibrary, SoundSignature, DEFAULT_BINS};
