//! The Cleanup gridworld: a river that fills with waste, an orchard whose
//! apples only regrow while the river is clean enough, and agents that can
//! clean, harvest or punish.

mod env;
mod episode;

pub use env::{AgentPose, Cell, CleanupEnv, GridState, Orientation, StepOutcome, CHANNELS};
pub use episode::{
    run_episode, run_episode_logged, CleanupPolicy, Constant, RandomPolicy, Role, Scripted, TrajectoryLog,
    TRAJECTORY_HEADER,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static ground type of a map cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Terrain {
    Empty,
    River,
    Orchard,
    Wall,
}

/// Axis-aligned, inclusive cell range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..=self.row1).contains(&row) && (self.col0..=self.col1).contains(&col)
    }
}

/// Map geometry. Parsed from text with one character per cell: `R` river,
/// `O` orchard, `W` wall, space empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MapLayout {
    width: usize,
    height: usize,
    terrain: Vec<Terrain>,
}

pub const SMALL_MAP: &str = "\
WWWWWWWWWWWWWWWWWW
WRRRRRR    OOOOOOW
WRRRRRR    OOOOOOW
WRRRRRR    OOOOOOW
WRRRRRR    OOOOOOW
WRRRRRR    OOOOOOW
WRRRRRR    OOOOOOW
WRRRRRR    OOOOOOW
WWWWWWWWWWWWWWWWWW";

impl MapLayout {
    /// The default 18x9 map: river on the left, orchard on the right, an
    /// empty strip between them.
    pub fn small() -> Self {
        SMALL_MAP.parse().expect("built-in map parses")
    }

    /// Builds a walled map of `width x height` from two regions.
    pub fn from_regions(width: usize, height: usize, river: Rect, orchard: Rect) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(Error::Layout(format!(
                "{width}x{height} leaves no room inside the walls"
            )));
        }
        for (name, r) in [("river", river), ("orchard", orchard)] {
            if r.row0 > r.row1
                || r.col0 > r.col1
                || r.row0 == 0
                || r.col0 == 0
                || r.row1 >= height - 1
                || r.col1 >= width - 1
            {
                return Err(Error::Layout(format!(
                    "{name} region {r:?} is empty or not inside the walls"
                )));
            }
        }
        let mut terrain = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                let border = row == 0 || col == 0 || row == height - 1 || col == width - 1;
                let t = match (border, river.contains(row, col), orchard.contains(row, col)) {
                    (true, _, _) => Terrain::Wall,
                    (false, true, true) => {
                        return Err(Error::Layout(format!("river and orchard overlap at ({row}, {col})")));
                    }
                    (false, true, false) => Terrain::River,
                    (false, false, true) => Terrain::Orchard,
                    (false, false, false) => Terrain::Empty,
                };
                terrain.push(t);
            }
        }
        MapLayout { width, height, terrain }.checked()
    }

    fn checked(self) -> Result<Self> {
        if self.count(Terrain::River) == 0 {
            return Err(Error::Layout("map has no river cells".into()));
        }
        if self.count(Terrain::Orchard) == 0 {
            return Err(Error::Layout("map has no orchard cells".into()));
        }
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn terrain(&self, row: usize, col: usize) -> Terrain {
        self.terrain[row * self.width + col]
    }

    pub(crate) fn terrain_at(&self, idx: usize) -> Terrain {
        self.terrain[idx]
    }

    pub fn count(&self, t: Terrain) -> usize {
        self.terrain.iter().filter(|&&x| x == t).count()
    }

    /// Row-major indices of every cell with terrain `t`.
    pub fn cells_of(&self, t: Terrain) -> Vec<usize> {
        (0..self.terrain.len()).filter(|&i| self.terrain[i] == t).collect()
    }
}

impl FromStr for MapLayout {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let width = rows.iter().map(|r| r.chars().count()).max().unwrap_or(0);
        if rows.is_empty() || width == 0 {
            return Err(Error::Layout("empty map".into()));
        }
        let mut terrain = Vec::with_capacity(width * rows.len());
        for (r, line) in rows.iter().enumerate() {
            let mut chars: Vec<char> = line.chars().collect();
            // trailing spaces are often stripped by editors
            chars.resize(width, ' ');
            for (c, ch) in chars.into_iter().enumerate() {
                terrain.push(match ch {
                    'R' => Terrain::River,
                    'O' => Terrain::Orchard,
                    'W' => Terrain::Wall,
                    ' ' => Terrain::Empty,
                    other => return Err(Error::Layout(format!("unknown cell {other:?} at row {r}, column {c}"))),
                });
            }
        }
        MapLayout {
            width,
            height: rows.len(),
            terrain,
        }
        .checked()
    }
}

impl fmt::Display for MapLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in 0..self.height {
            let line: String = (0..self.width)
                .map(|col| match self.terrain(row, col) {
                    Terrain::River => 'R',
                    Terrain::Orchard => 'O',
                    Terrain::Wall => 'W',
                    Terrain::Empty => ' ',
                })
                .collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CleanupConfig {
    pub layout: MapLayout,
    /// Per empty river cell, per timestep.
    pub waste_spawn_prob: f64,
    pub apple_respawn_base: f64,
    /// Waste density above which no apples spawn.
    pub depletion_threshold: f64,
    pub clean_beam_length: usize,
    pub beam_width: usize,
    pub view_window: usize,
    pub episode_length: usize,
    pub punish_fine: f64,
    pub punish_cost: f64,
    pub n_agents: usize,
    /// Fraction of river cells holding waste at reset.
    pub initial_waste: f64,
    /// Fraction of orchard cells holding an apple at reset.
    pub initial_apples: f64,
}

impl Default for CleanupConfig {
    fn default() -> Self {
        CleanupConfig {
            layout: MapLayout::small(),
            waste_spawn_prob: 0.05,
            apple_respawn_base: 0.05,
            depletion_threshold: 0.4,
            clean_beam_length: 5,
            beam_width: 3,
            view_window: 15,
            episode_length: 1000,
            punish_fine: -50.0,
            punish_cost: -1.0,
            n_agents: 6,
            initial_waste: 0.0,
            initial_apples: 0.0,
        }
    }
}

impl CleanupConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, p) in [
            ("waste_spawn_prob", self.waste_spawn_prob),
            ("apple_respawn_base", self.apple_respawn_base),
            ("depletion_threshold", self.depletion_threshold),
            ("initial_waste", self.initial_waste),
            ("initial_apples", self.initial_apples),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.view_window.is_multiple_of(2) {
            return bad(format!("view_window must be odd, got {}", self.view_window));
        }
        if self.episode_length == 0 {
            return bad("episode_length must be positive".into());
        }
        if self.n_agents == 0 {
            return bad("n_agents must be positive".into());
        }
        if !(self.punish_fine.is_finite() && self.punish_cost.is_finite()) {
            return bad("punish_fine and punish_cost must be finite".into());
        }
        let walkable = self.layout.terrain.iter().filter(|&&t| t != Terrain::Wall).count();
        if self.n_agents > walkable {
            return bad(format!(
                "{} agents do not fit on {walkable} walkable cells",
                self.n_agents
            ));
        }
        Ok(())
    }

    /// Length of the flat observation vector.
    pub fn observation_len(&self) -> usize {
        self.view_window * self.view_window * CHANNELS
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CleanupAction {
    MoveUp,
    MoveDown,
    MoveLeft,
    MoveRight,
    Stay,
    TurnLeft,
    TurnRight,
    Clean,
    Punish,
}

impl CleanupAction {
    pub const COUNT: usize = 9;

    pub const ALL: [CleanupAction; 9] = [
        CleanupAction::MoveUp,
        CleanupAction::MoveDown,
        CleanupAction::MoveLeft,
        CleanupAction::MoveRight,
        CleanupAction::Stay,
        CleanupAction::TurnLeft,
        CleanupAction::TurnRight,
        CleanupAction::Clean,
        CleanupAction::Punish,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<CleanupAction> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CleanupAction::MoveUp => "up",
            CleanupAction::MoveDown => "down",
            CleanupAction::MoveLeft => "left",
            CleanupAction::MoveRight => "right",
            CleanupAction::Stay => "stay",
            CleanupAction::TurnLeft => "turn_left",
            CleanupAction::TurnRight => "turn_right",
            CleanupAction::Clean => "clean",
            CleanupAction::Punish => "punish",
        }
    }
}

impl fmt::Display for CleanupAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
