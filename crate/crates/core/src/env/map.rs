use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn step(self, h: Heading) -> Cell {
        let (dx, dy) = h.delta();
        Cell::new(self.x + dx, self.y + dy)
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Compass heading. Rows grow southwards, so north is `y - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    /// Clockwise order, also the BFS tie-break order.
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Heading {
        Heading::ALL[i % 4]
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }

    pub fn right(self) -> Heading {
        Heading::from_index(self.index() + 1)
    }

    pub fn left(self) -> Heading {
        Heading::from_index(self.index() + 3)
    }

    pub fn reverse(self) -> Heading {
        Heading::from_index(self.index() + 2)
    }

    /// Quarter turns clockwise from `self` to `other`: 0 ahead, 1 right,
    /// 2 behind, 3 left.
    pub fn relative(self, other: Heading) -> usize {
        (other.index() + 4 - self.index()) % 4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub x: i32,
    pub y: i32,
    pub heading: Heading,
}

impl Pose {
    pub fn new(x: i32, y: i32, heading: Heading) -> Self {
        Pose { x, y, heading }
    }

    pub fn cell(&self) -> Cell {
        Cell::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    width: usize,
    height: usize,
    blocked: Vec<bool>,
    name: String,
}

/// A parsed map plus any `S` / `G` markers found in the text.
#[derive(Debug, Clone)]
pub struct ParsedMap {
    pub map: GridMap,
    pub start: Option<Cell>,
    pub goal: Option<Cell>,
}

impl GridMap {
    pub fn new(name: &str, width: usize, height: usize, blocked: Vec<bool>) -> Result<Self> {
        if blocked.len() != width * height {
            return Err(Error::shape("GridMap::new", &[height, width], &[blocked.len()]));
        }
        Ok(GridMap {
            width,
            height,
            blocked,
            name: name.to_string(),
        })
    }

    pub fn open(name: &str, width: usize, height: usize) -> Self {
        GridMap {
            width,
            height,
            blocked: vec![false; width * height],
            name: name.to_string(),
        }
    }

    /// Parses an ASCII grid: `#` blocked, `.` free, `S` start, `G` goal.
    /// Trailing empty lines are ignored; all other rows must have equal width.
    pub fn parse(name: &str, text: &str) -> Result<ParsedMap> {
        let rows: Vec<&str> = text.trim_end_matches(['\n', '\r']).split('\n').collect();
        let rows: Vec<&str> = rows.iter().map(|r| r.strip_suffix('\r').unwrap_or(r)).collect();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if width == 0 {
            return Err(Error::Parse {
                row: 0,
                col: 0,
                msg: "empty map".into(),
            });
        }
        let mut blocked = Vec::with_capacity(width * rows.len());
        let (mut start, mut goal) = (None, None);
        for (y, row) in rows.iter().enumerate() {
            let n = row.chars().count();
            if n != width {
                return Err(Error::Parse {
                    row: y,
                    col: n.min(width),
                    msg: format!("ragged row: expected {width} columns, found {n}"),
                });
            }
            for (x, ch) in row.chars().enumerate() {
                let cell = Cell::new(x as i32, y as i32);
                match ch {
                    '#' => blocked.push(true),
                    '.' => blocked.push(false),
                    'S' | 'G' => {
                        let slot = if ch == 'S' { &mut start } else { &mut goal };
                        if slot.is_some() {
                            return Err(Error::Parse {
                                row: y,
                                col: x,
                                msg: format!("second `{ch}` marker"),
                            });
                        }
                        *slot = Some(cell);
                        blocked.push(false);
                    }
                    other => {
                        return Err(Error::Parse {
                            row: y,
                            col: x,
                            msg: format!("unknown character {other:?}"),
                        })
                    }
                }
            }
        }
        let map = GridMap::new(name, width, rows.len(), blocked)?;
        Ok(ParsedMap { map, start, goal })
    }

    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                s.push(if self.blocked[y * self.width + x] { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    /// Out-of-bounds cells count as blocked.
    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.blocked[self.idx(c)]
    }

    pub fn set_blocked(&mut self, c: Cell, blocked: bool) {
        let i = self.idx(c);
        self.blocked[i] = blocked;
    }

    pub(crate) fn idx(&self, c: Cell) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Cell::new(x as i32, y as i32);
                if self.is_free(c) {
                    out.push(c);
                }
            }
        }
        out
    }

    pub fn free_count(&self) -> usize {
        self.blocked.iter().filter(|b| !**b).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.free_count() == 0 {
            return Err(Error::Validation(format!("map `{}` has no free cells", self.name)));
        }
        Ok(())
    }
}

/// BFS distance field towards a target cell over 4-connected free cells.
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: usize,
    target: Cell,
    dist: Vec<Option<u32>>,
}

impl DistanceField {
    pub fn new(map: &GridMap, target: Cell) -> Result<Self> {
        if !map.is_free(target) {
            return Err(Error::Contract(format!("geodesic target {target} is blocked")));
        }
        let mut dist = vec![None; map.width() * map.height()];
        let mut queue = VecDeque::new();
        dist[map.idx(target)] = Some(0);
        queue.push_back(target);
        while let Some(c) = queue.pop_front() {
            let d = dist[map.idx(c)].unwrap();
            for h in Heading::ALL {
                let n = c.step(h);
                if map.is_free(n) && dist[map.idx(n)].is_none() {
                    dist[map.idx(n)] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        Ok(DistanceField {
            width: map.width(),
            target,
            dist,
        })
    }

    pub fn target(&self) -> Cell {
        self.target
    }

    /// `None` when unreachable or outside the map.
    pub fn distance(&self, c: Cell) -> Option<u32> {
        if c.x < 0 || c.y < 0 || c.x as usize >= self.width {
            return None;
        }
        self.dist.get(c.y as usize * self.width + c.x as usize).copied().flatten()
    }

    /// First move along a shortest path from `from`, preferring N, E, S, W.
    /// `None` at the target or when unreachable.
    pub fn first_step(&self, from: Cell) -> Option<Heading> {
        let d = self.distance(from)?;
        if d == 0 {
            return None;
        }
        Heading::ALL
            .into_iter()
            .find(|h| self.distance(from.step(*h)) == Some(d - 1))
    }

    /// Cells of the tie-broken shortest path, both endpoints included.
    pub fn path_from(&self, from: Cell) -> Option<Vec<Cell>> {
        self.distance(from)?;
        let mut path = vec![from];
        let mut c = from;
        while let Some(h) = self.first_step(c) {
            c = c.step(h);
            path.push(c);
        }
        Some(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geodesic {
    /// Shortest path length in cells, `None` if unreachable.
    pub distance: Option<u32>,
    pub first_step: Option<Heading>,
}

pub fn geodesic(map: &GridMap, from: Cell, to: Cell) -> Result<Geodesic> {
    if !map.is_free(from) {
        return Err(Error::Contract(format!("geodesic source {from} is blocked")));
    }
    let field = DistanceField::new(map, to)?;
    Ok(Geodesic {
        distance: field.distance(from),
        first_step: field.first_step(from),
    })
}
