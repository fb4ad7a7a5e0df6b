//! Egocentric observations: ray depths and a binaural spectrum.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::map::{Cell, DistanceField, GridMap, Heading, Pose};
use crate::env::sound::SoundSignature;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisualConfig {
    /// Number of rays in the frontal fan.
    pub rays: usize,
    /// Depth cap in cells.
    pub range: f64,
    /// Full fan width in degrees.
    pub fov_deg: f64,
}

impl Default for VisualConfig {
    fn default() -> Self {
        VisualConfig {
            rays: 9,
            range: 10.0,
            fov_deg: 90.0,
        }
    }
}

impl VisualConfig {
    /// Ray offsets in degrees, left to right. Rays sit at the centers of
    /// equal sub-sectors, so no ray runs exactly along a grid diagonal.
    pub fn offsets_deg(&self) -> Vec<f64> {
        let n = self.rays as f64;
        (0..self.rays)
            .map(|i| -self.fov_deg / 2.0 + self.fov_deg * (i as f64 + 0.5) / n)
            .collect()
    }
}

/// Unit direction of one ray in world coordinates (y grows southwards).
pub fn ray_direction(heading: Heading, offset_deg: f64) -> (f64, f64) {
    let (fx, fy) = heading.delta();
    let (rx, ry) = heading.right().delta();
    let a = offset_deg.to_radians();
    let (s, c) = if offset_deg == 0.0 { (0.0, 1.0) } else { a.sin_cos() };
    (fx as f64 * c + rx as f64 * s, fy as f64 * c + ry as f64 * s)
}

/// Cells seen by one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayTrace {
    /// Free cells crossed before the hit, in order, excluding the origin cell.
    pub free: Vec<Cell>,
    /// First blocked cell entered within range, if any. May lie outside
    /// the map.
    pub hit: Option<Cell>,
    /// Normalized depth in `[0, 1]`.
    pub depth: f64,
}

/// Walks one ray with an Amanatides–Woo traversal. A cell is seen when the
/// ray enters it at parameter `t <= range`. Depth is the distance between
/// the origin and hit cell centers, capped at `range`.
pub fn trace_ray(map: &GridMap, origin: Cell, dir: (f64, f64), range: f64) -> RayTrace {
    let (dx, dy) = dir;
    let step_x = if dx > 0.0 { 1 } else { -1 };
    let step_y = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
    // Origin is the cell center, so the first boundary is half a cell away.
    let mut t_max_x = 0.5 * t_delta_x;
    let mut t_max_y = 0.5 * t_delta_y;
    let mut cell = origin;
    let mut free = Vec::new();
    loop {
        let t_enter;
        if t_max_x < t_max_y {
            t_enter = t_max_x;
            cell.x += step_x;
            t_max_x += t_delta_x;
        } else {
            t_enter = t_max_y;
            cell.y += step_y;
            t_max_y += t_delta_y;
        }
        if t_enter > range {
            return RayTrace {
                free,
                hit: None,
                depth: 1.0,
            };
        }
        if !map.is_free(cell) {
            let cx = (cell.x - origin.x) as f64;
            let cy = (cell.y - origin.y) as f64;
            let dist = (cx * cx + cy * cy).sqrt().min(range);
            return RayTrace {
                free,
                hit: Some(cell),
                depth: dist / range,
            };
        }
        free.push(cell);
    }
}

pub fn trace_rays(map: &GridMap, pose: Pose, cfg: &VisualConfig) -> Vec<RayTrace> {
    cfg.offsets_deg()
        .into_iter()
        .map(|off| trace_ray(map, pose.cell(), ray_direction(pose.heading, off), cfg.range))
        .collect()
}

pub fn render_visual(map: &GridMap, pose: Pose, cfg: &VisualConfig) -> Vec<f64> {
    trace_rays(map, pose, cfg).into_iter().map(|r| r.depth).collect()
}

/// Received binaural spectrum, row 0 left and row 1 right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binaural {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl Binaural {
    pub fn left_sum(&self) -> f64 {
        self.left.iter().sum()
    }

    pub fn right_sum(&self) -> f64 {
        self.right.iter().sum()
    }

    /// Row-major `[left; right]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.left.clone();
        v.extend_from_slice(&self.right);
        v
    }
}

/// `sin θ` of the relative bearing from a heading to a world direction:
/// ahead 0, right +1, behind 0, left −1.
pub fn lateral_sine(heading: Heading, dir: Option<Heading>) -> f64 {
    match dir.map(|d| heading.relative(d)) {
        Some(1) => 1.0,
        Some(3) => -1.0,
        _ => 0.0,
    }
}

/// Geodesically propagated source with `1/(1+d)` attenuation and sine-law
/// panning on the bearing of the first shortest-path step.
pub fn render_audio<R: Rng + ?Sized>(
    field: &DistanceField,
    pose: Pose,
    sig: &SoundSignature,
    noise_std: f64,
    rng: &mut R,
) -> Result<Binaural> {
    let d = field.distance(pose.cell()).ok_or_else(|| {
        Error::Contract(format!(
            "goal {} unreachable from {}",
            field.target(),
            pose.cell()
        ))
    })?;
    let sin_theta = lateral_sine(pose.heading, field.first_step(pose.cell()));
    let g = 1.0 / (1.0 + d as f64);
    let gl = (1.0 - sin_theta) / 2.0;
    let gr = (1.0 + sin_theta) / 2.0;
    let mut left: Vec<f64> = sig.spectrum().iter().map(|s| g * gl * s).collect();
    let mut right: Vec<f64> = sig.spectrum().iter().map(|s| g * gr * s).collect();
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std)
            .map_err(|e| Error::Config(format!("noise_std {noise_std}: {e}")))?;
        for v in left.iter_mut().chain(right.iter_mut()) {
            *v = (*v + normal.sample(rng)).max(0.0);
        }
    }
    Ok(Binaural { left, right })
}
