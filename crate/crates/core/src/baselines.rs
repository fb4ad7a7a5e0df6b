//! Scripted comparison agents: random, direction follower, frontier
//! waypoints, and a geodesic oracle for tests.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    trace_rays, Action, Binaural, Cell, DistanceField, EpisodeSpec, GridMap, Heading, Observation, Pose,
    VisualConfig,
};
use crate::error::{Error, Result};
use crate::metrics::Agent;

/// Lateral index threshold separating "ahead" from a side.
pub const DOA_THRESHOLD: f64 = 0.2;
/// Waypoint distance of the direction follower, in cells.
pub const WAYPOINT_DISTANCE: i32 = 3;
/// Stop when both channels exceed this fraction of the spectrum's L1 norm.
/// At the source each channel carries half of it.
pub const STOP_FRACTION: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    /// World-frame bearing of the source.
    pub bearing: Heading,
    pub confidence: f64,
    /// `(R − L) / (R + L)`.
    pub lateral: f64,
}

impl DoaEstimate {
    /// True when the channels are balanced, so the source is ahead or behind.
    pub fn is_frontal(&self, heading: Heading) -> bool {
        self.bearing == heading
    }
}

pub fn estimate_doa(audio: &Binaural, heading: Heading) -> DoaEstimate {
    let l = audio.left_sum();
    let r = audio.right_sum();
    let lateral = (r - l) / (r + l + 1e-9);
    let bearing = if lateral > DOA_THRESHOLD {
        heading.right()
    } else if lateral < -DOA_THRESHOLD {
        heading.left()
    } else {
        heading
    };
    DoaEstimate {
        bearing,
        confidence: (r + l).min(1.0),
        lateral,
    }
}

/// Near-source test shared by the scripted agents.
pub fn at_source(audio: &Binaural, spectrum_l1: f64) -> bool {
    let thr = STOP_FRACTION * spectrum_l1;
    audio.left_sum() >= thr && audio.right_sum() >= thr
}

/// Action that turns `heading` toward `target`, or moves forward if
/// already aligned. Reversals turn right.
pub fn turn_toward(heading: Heading, target: Heading) -> Action {
    match heading.relative(target) {
        0 => Action::Forward,
        3 => Action::TurnLeft,
        _ => Action::TurnRight,
    }
}

/// Pose update for an action on a known map.
pub fn dead_reckon(map: &GridMap, pose: Pose, action: Action) -> Pose {
    match action {
        Action::Forward => {
            let next = pose.cell().step(pose.heading);
            if map.is_free(next) {
                Pose::new(next.x, next.y, pose.heading)
            } else {
                pose
            }
        }
        Action::TurnLeft => Pose::new(pose.x, pose.y, pose.heading.left()),
        Action::TurnRight => Pose::new(pose.x, pose.y, pose.heading.right()),
        Action::Stop => pose,
    }
}

/// Uniform over all four actions, Stop included.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        RandomAgent {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self) -> Action {
        Action::ALL[self.rng.random_range(0..4)]
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> String {
        "random".into()
    }

    fn reset(&mut self, _spec: &EpisodeSpec, _obs: &Observation) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, _obs: &Observation) -> Result<Action> {
        Ok(self.sample())
    }
}

/// Follows the geodesic with full knowledge of the goal.
#[derive(Debug, Default)]
pub struct OptimalAgent {
    state: Option<(Arc<GridMap>, DistanceField, Pose)>,
}

impl OptimalAgent {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Agent for OptimalAgent {
    fn name(&self) -> String {
        "optimal".into()
    }

    fn reset(&mut self, spec: &EpisodeSpec, _obs: &Observation) -> Result<()> {
        let field = DistanceField::new(&spec.map, spec.goal)?;
        self.state = Some((spec.map.clone(), field, spec.start));
        Ok(())
    }

    fn act(&mut self, _obs: &Observation) -> Result<Action> {
        let (map, field, pose) = self
            .state
            .as_mut()
            .ok_or_else(|| Error::Contract("act before reset".into()))?;
        let action = match field.first_step(pose.cell()) {
            None => Action::Stop,
            Some(dir) => turn_toward(pose.heading, dir),
        };
        *pose = dead_reckon(map, *pose, action);
        Ok(action)
    }
}

/// BFS over cells accepted by `passable`; returns the first move from
/// `from` toward `to` (N, E, S, W neighbor order).
fn plan_first_step(from: Cell, to: Cell, width: usize, height: usize, passable: impl Fn(Cell) -> bool) -> Option<Heading> {
    if from == to {
        return None;
    }
    let idx = |c: Cell| c.y as usize * width + c.x as usize;
    let inside = |c: Cell| c.x >= 0 && c.y >= 0 && (c.x as usize) < width && (c.y as usize) < height;
    let mut dist = vec![u32::MAX; width * height];
    let mut queue = VecDeque::new();
    dist[idx(to)] = 0;
    queue.push_back(to);
    while let Some(c) = queue.pop_front() {
        if c == from {
            break;
        }
        for h in Heading::ALL {
            let n = c.step(h);
            if inside(n) && dist[idx(n)] == u32::MAX && (passable(n) || n == from) {
                dist[idx(n)] = dist[idx(c)] + 1;
                queue.push_back(n);
            }
        }
    }
    let d = dist[idx(from)];
    if d == u32::MAX {
        return None;
    }
    Heading::ALL.into_iter().find(|&h| {
        let n = from.step(h);
        inside(n) && dist[idx(n)] != u32::MAX && dist[idx(n)] + 1 == d
    })
}

/// Ahead/behind disambiguation for a frontal DoA using the known map and
/// the distance implied by the received loudness. Returns `Some(true)` when
/// only sources behind are consistent, `Some(false)` when only sources
/// ahead are, `None` when both or neither are.
fn frontal_side_from_map(map: &GridMap, pose: Pose, loudness: f64, spectrum_l1: f64) -> Option<bool> {
    if loudness <= 0.0 {
        return None;
    }
    let d_est = spectrum_l1 / loudness - 1.0;
    let tol = (0.25 * d_est).max(1.0);
    let here = DistanceField::new(map, pose.cell()).ok()?;
    let (mut ahead, mut behind) = (false, false);
    for c in map.free_cells() {
        let Some(d) = here.distance(c) else { continue };
        if d == 0 || (d as f64 - d_est).abs() > tol {
            continue;
        }
        let Ok(field) = DistanceField::new(map, c) else { continue };
        match field.first_step(pose.cell()) {
            Some(h) if h == pose.heading => ahead = true,
            Some(h) if h == pose.heading.reverse() => behind = true,
            _ => {}
        }
        if ahead && behind {
            return None;
        }
    }
    match (ahead, behind) {
        (false, true) => Some(true),
        (true, false) => Some(false),
        _ => None,
    }
}

/// Tracks loudness across steps to flag sources that fall behind.
#[derive(Debug, Clone, Default)]
struct LoudnessMemory {
    last: Option<f64>,
    moved: bool,
}

impl LoudnessMemory {
    /// True if the last successful Forward made the source quieter.
    fn receding(&self, now: f64) -> bool {
        self.moved && self.last.is_some_and(|l| now < l)
    }

    fn record(&mut self, now: f64, moved: bool) {
        self.last = Some(now);
        self.moved = moved;
    }
}

/// DoA-driven waypoints over a known map.
#[derive(Debug, Default)]
pub struct DirectionFollower {
    map: Option<Arc<GridMap>>,
    pose: Option<Pose>,
    spectrum_l1: f64,
    waypoint: Option<Cell>,
    memory: LoudnessMemory,
}

impl DirectionFollower {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn waypoint(&self) -> Option<Cell> {
        self.waypoint
    }

    /// Free cell up to `WAYPOINT_DISTANCE` cells along `bearing`.
    fn place_waypoint(map: &GridMap, from: Cell, bearing: Heading) -> Cell {
        let mut wp = from;
        for _ in 0..WAYPOINT_DISTANCE {
            let next = wp.step(bearing);
            if !map.is_free(next) {
                break;
            }
            wp = next;
        }
        wp
    }

    fn bearing(&self, map: &GridMap, pose: Pose, audio: &Binaural) -> Heading {
        let doa = estimate_doa(audio, pose.heading);
        if !doa.is_frontal(pose.heading) {
            return doa.bearing;
        }
        let loud = audio.left_sum() + audio.right_sum();
        let behind = match frontal_side_from_map(map, pose, loud, self.spectrum_l1) {
            Some(b) => b,
            None => self.memory.receding(loud) || !map.is_free(pose.cell().step(pose.heading)),
        };
        if behind {
            pose.heading.reverse()
        } else {
            pose.heading
        }
    }
}

impl Agent for DirectionFollower {
    fn name(&self) -> String {
        "direction_follower".into()
    }

    fn reset(&mut self, spec: &EpisodeSpec, _obs: &Observation) -> Result<()> {
        self.map = Some(spec.map.clone());
        self.pose = Some(spec.start);
        self.spectrum_l1 = spec.signature.l1();
        self.waypoint = None;
        self.memory = LoudnessMemory::default();
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        let map = self.map.clone().ok_or_else(|| Error::Contract("act before reset".into()))?;
        let pose = self.pose.unwrap();
        if at_source(&obs.audio, self.spectrum_l1) {
            return Ok(Action::Stop);
        }
        let loud = obs.audio.left_sum() + obs.audio.right_sum();
        let here = pose.cell();
        if self.waypoint.is_none_or(|w| w == here) || self.memory.receding(loud) {
            let bearing = self.bearing(&map, pose, &obs.audio);
            let wp = Self::place_waypoint(&map, here, bearing);
            self.waypoint = Some(wp);
        }
        let wp = self.waypoint.unwrap();
        let action = match plan_first_step(here, wp, map.width(), map.height(), |c| map.is_free(c)) {
            Some(dir) => turn_toward(pose.heading, dir),
            None => {
                // The bearing is walled off right here; look elsewhere.
                self.waypoint = None;
                Action::TurnRight
            }
        };
        let next = dead_reckon(&map, pose, action);
        self.memory.record(loud, next.cell() != here);
        self.pose = Some(next);
        Ok(action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellStatus {
    Unknown,
    Free,
    Blocked,
}

/// Occupancy knowledge gathered from the agent's own rays.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationMap {
    width: usize,
    height: usize,
    cells: Vec<CellStatus>,
    trace: Vec<Cell>,
}

impl ExplorationMap {
    pub fn new(width: usize, height: usize) -> Self {
        ExplorationMap {
            width,
            height,
            cells: vec![CellStatus::Unknown; width * height],
            trace: Vec::new(),
        }
    }

    fn inside(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    pub fn status(&self, c: Cell) -> CellStatus {
        if self.inside(c) {
            self.cells[c.y as usize * self.width + c.x as usize]
        } else {
            CellStatus::Blocked
        }
    }

    fn set(&mut self, c: Cell, s: CellStatus) {
        if self.inside(c) {
            self.cells[c.y as usize * self.width + c.x as usize] = s;
        }
    }

    pub fn trace(&self) -> &[Cell] {
        &self.trace
    }

    /// Marks the agent's cell and every ray-traced cell from `pose`.
    pub fn observe(&mut self, map: &GridMap, pose: Pose, visual: &VisualConfig) {
        self.set(pose.cell(), CellStatus::Free);
        if self.trace.last() != Some(&pose.cell()) {
            self.trace.push(pose.cell());
        }
        for ray in trace_rays(map, pose, visual) {
            for c in ray.free {
                self.set(c, CellStatus::Free);
            }
            if let Some(h) = ray.hit {
                self.set(h, CellStatus::Blocked);
            }
        }
    }

    pub fn is_frontier(&self, c: Cell) -> bool {
        self.status(c) == CellStatus::Free
            && Heading::ALL
                .iter()
                .any(|&h| self.inside(c.step(h)) && self.status(c.step(h)) == CellStatus::Unknown)
    }

    pub fn frontier(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                let c = Cell::new(x, y);
                if self.is_frontier(c) {
                    out.push(c);
                }
            }
        }
        out
    }

    pub fn known_free(&self, c: Cell) -> bool {
        self.status(c) == CellStatus::Free
    }
}

/// Waypoints where the DoA ray meets the exploration frontier.
#[derive(Debug)]
pub struct FrontierWaypoints {
    visual: VisualConfig,
    rng: ChaCha8Rng,
    map: Option<Arc<GridMap>>,
    pose: Option<Pose>,
    spectrum_l1: f64,
    explored: Option<ExplorationMap>,
    waypoint: Option<Cell>,
    memory: LoudnessMemory,
    wander_steps: u32,
}

impl FrontierWaypoints {
    pub fn new(visual: VisualConfig, seed: u64) -> Self {
        FrontierWaypoints {
            visual,
            rng: ChaCha8Rng::seed_from_u64(seed),
            map: None,
            pose: None,
            spectrum_l1: 0.0,
            explored: None,
            waypoint: None,
            memory: LoudnessMemory::default(),
            wander_steps: 0,
        }
    }

    pub fn exploration(&self) -> Option<&ExplorationMap> {
        self.explored.as_ref()
    }

    /// Steps spent wandering with no frontier left.
    pub fn wander_steps(&self) -> u32 {
        self.wander_steps
    }

    /// First frontier cell within one cell of the ray from `from` along
    /// `bearing`, else the frontier cell nearest by known-free BFS.
    pub fn choose_waypoint(explored: &ExplorationMap, from: Cell, bearing: Heading) -> Option<Cell> {
        let frontier = explored.frontier();
        if frontier.is_empty() {
            return None;
        }
        let (bx, by) = bearing.delta();
        let on_ray = frontier
            .iter()
            .filter_map(|&f| {
                let (dx, dy) = (f.x - from.x, f.y - from.y);
                let along = dx * bx + dy * by;
                let perp = dx * by - dy * bx;
                (along >= 1 && perp.abs() <= 1).then_some((along, perp.abs(), perp, f))
            })
            .min_by_key(|&(along, abs_perp, perp, _)| (along, abs_perp, perp));
        if let Some((.., f)) = on_ray {
            return Some(f);
        }
        nearest_by_bfs(explored, from, &frontier)
    }
}

fn nearest_by_bfs(explored: &ExplorationMap, from: Cell, targets: &[Cell]) -> Option<Cell> {
    let (w, h) = (explored.width, explored.height);
    let mut seen = vec![false; w * h];
    let idx = |c: Cell| c.y as usize * w + c.x as usize;
    let mut queue = VecDeque::from([from]);
    seen[idx(from)] = true;
    while let Some(c) = queue.pop_front() {
        if targets.contains(&c) {
            return Some(c);
        }
        for hd in Heading::ALL {
            let n = c.step(hd);
            if explored.known_free(n) && !seen[idx(n)] {
                seen[idx(n)] = true;
                queue.push_back(n);
            }
        }
    }
    None
}

impl Agent for FrontierWaypoints {
    fn name(&self) -> String {
        "frontier".into()
    }

    fn reset(&mut self, spec: &EpisodeSpec, _obs: &Observation) -> Result<()> {
        let mut explored = ExplorationMap::new(spec.map.width(), spec.map.height());
        explored.observe(&spec.map, spec.start, &self.visual);
        self.map = Some(spec.map.clone());
        self.pose = Some(spec.start);
        self.spectrum_l1 = spec.signature.l1();
        self.explored = Some(explored);
        self.waypoint = None;
        self.memory = LoudnessMemory::default();
        self.wander_steps = 0;
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        let map = self.map.clone().ok_or_else(|| Error::Contract("act before reset".into()))?;
        let pose = self.pose.unwrap();
        let explored = self.explored.as_mut().unwrap();
        explored.observe(&map, pose, &self.visual);
        if at_source(&obs.audio, self.spectrum_l1) {
            return Ok(Action::Stop);
        }
        let here = pose.cell();
        let loud = obs.audio.left_sum() + obs.audio.right_sum();
        let stale = self
            .waypoint
            .is_none_or(|w| w == here || !explored.is_frontier(w) || self.memory.receding(loud));
        if stale {
            let doa = estimate_doa(&obs.audio, pose.heading);
            let bearing = if doa.is_frontal(pose.heading)
                && (self.memory.receding(loud) || !map.is_free(here.step(pose.heading)))
            {
                pose.heading.reverse()
            } else {
                doa.bearing
            };
            self.waypoint = Self::choose_waypoint(explored, here, bearing);
        }
        let planned = self.waypoint.and_then(|wp| {
            let ex = &*explored;
            plan_first_step(here, wp, ex.width, ex.height, |c| ex.known_free(c))
        });
        let action = match planned {
            Some(dir) => turn_toward(pose.heading, dir),
            None => {
                self.waypoint = None;
                self.wander_steps += 1;
                [Action::Forward, Action::TurnLeft, Action::TurnRight][self.rng.random_range(0..3)]
            }
        };
        let next = dead_reckon(&map, pose, action);
        self.memory.record(loud, next.cell() != here);
        self.pose = Some(next);
        Ok(action)
    }
}

/// Builds a scripted agent by CLI name.
pub fn scripted_agent(name: &str, seed: u64, visual: VisualConfig) -> Result<Box<dyn Agent>> {
    Ok(match name {
        "random" => Box::new(RandomAgent::new(seed)),
        "direction_follower" => Box::new(DirectionFollower::new()),
        "frontier" => Box::new(FrontierWaypoints::new(visual, seed)),
        "optimal" => Box::new(OptimalAgent::new()),
        other => return Err(Error::Config(format!("unknown agent `{other}`"))),
    })
}
