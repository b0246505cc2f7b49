use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{CleanupAction, CleanupConfig, Terrain};
use crate::error::{Error, Result};
use crate::learn::Features;
use crate::team::{RewardVector, TeamPartition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cell {
    Empty,
    River,
    Waste,
    Apple,
    Wall,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Orientation {
    North,
    East,
    South,
    West,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::North,
        Orientation::East,
        Orientation::South,
        Orientation::West,
    ];

    /// `(row, col)` step of one cell in this direction.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Orientation::North => (-1, 0),
            Orientation::East => (0, 1),
            Orientation::South => (1, 0),
            Orientation::West => (0, -1),
        }
    }

    pub fn right(self) -> Orientation {
        Self::ALL[(self as usize + 1) % 4]
    }

    pub fn left(self) -> Orientation {
        Self::ALL[(self as usize + 3) % 4]
    }

    pub fn opposite(self) -> Orientation {
        Self::ALL[(self as usize + 2) % 4]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentPose {
    pub row: usize,
    pub col: usize,
    pub orientation: Orientation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    pub width: usize,
    pub height: usize,
    /// Row-major.
    pub cells: Vec<Cell>,
    pub agents: Vec<AgentPose>,
    pub timestep: usize,
}

impl GridState {
    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    pub fn agent_at(&self, row: usize, col: usize) -> Option<usize> {
        self.agents.iter().position(|a| a.row == row && a.col == col)
    }

    pub fn count(&self, cell: Cell) -> usize {
        self.cells.iter().filter(|&&c| c == cell).count()
    }

    /// Cell `steps` away from `(row, col)` in direction `dir`, if on the map.
    pub fn offset(&self, row: usize, col: usize, dir: Orientation, steps: isize) -> Option<(usize, usize)> {
        let (dr, dc) = dir.delta();
        let r = row as isize + dr * steps;
        let c = col as isize + dc * steps;
        (r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width)
            .then_some((r as usize, c as usize))
    }

    /// Cells covered by a beam fired from `pose`: `width` parallel lanes
    /// centred on the agent, each running `length` cells ahead and stopping
    /// at the first wall.
    pub fn beam_cells(&self, pose: &AgentPose, length: usize, width: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(length * width);
        let half = (width / 2) as isize;
        let right = pose.orientation.right();
        for lateral in -half..=half {
            let Some((r0, c0)) = self.offset(pose.row, pose.col, right, lateral) else {
                continue;
            };
            if self.cell(r0, c0) == Cell::Wall {
                continue;
            }
            for d in 1..=length as isize {
                match self.offset(r0, c0, pose.orientation, d) {
                    Some((r, c)) if self.cell(r, c) != Cell::Wall => out.push((r, c)),
                    _ => break,
                }
            }
        }
        out
    }
}

/// Result of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub raw: RewardVector,
    /// Per agent, 0 or 1.
    pub apples: Vec<u32>,
    pub cleans: Vec<u32>,
    pub punishes: Vec<u32>,
    /// Apple cells emptied by consumption, counted on the grid.
    pub apples_consumed: u32,
    pub waste_removed: u32,
    pub waste_spawned: u32,
    pub apples_spawned: u32,
    /// Waste density the apple spawn was gated on.
    pub waste_density: f64,
    pub done: bool,
}

/// Channels of the observation, per view cell: wall, river, waste, apple,
/// empty orchard, teammate, other agent. Plain empty ground sets none.
pub const CHANNELS: usize = 7;

const CH_WALL: usize = 0;
const CH_RIVER: usize = 1;
const CH_WASTE: usize = 2;
const CH_APPLE: usize = 3;
const CH_ORCHARD: usize = 4;
const CH_TEAMMATE: usize = 5;
const CH_OTHER: usize = 6;

const NOBODY: usize = usize::MAX;

#[derive(Clone, Debug)]
pub struct CleanupEnv {
    config: CleanupConfig,
    state: GridState,
    river: Vec<usize>,
    orchard: Vec<usize>,
    occupant: Vec<usize>,
    waste_count: usize,
    order: Vec<usize>,
}

impl CleanupEnv {
    /// Builds and resets an environment.
    pub fn new<R: Rng + ?Sized>(config: CleanupConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = &config.layout;
        let n_cells = layout.width() * layout.height();
        let mut env = CleanupEnv {
            river: layout.cells_of(Terrain::River),
            orchard: layout.cells_of(Terrain::Orchard),
            state: GridState {
                width: layout.width(),
                height: layout.height(),
                cells: vec![Cell::Empty; n_cells],
                agents: Vec::new(),
                timestep: 0,
            },
            occupant: vec![NOBODY; n_cells],
            waste_count: 0,
            order: (0..config.n_agents).collect(),
            config,
        };
        env.reset(rng);
        Ok(env)
    }

    pub fn config(&self) -> &CleanupConfig {
        &self.config
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    pub fn river_capacity(&self) -> usize {
        self.river.len()
    }

    pub fn waste_density(&self) -> f64 {
        self.waste_count as f64 / self.river.len() as f64
    }

    pub fn is_done(&self) -> bool {
        self.state.timestep >= self.config.episode_length
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let layout = &self.config.layout;
        self.waste_count = 0;
        for (i, cell) in self.state.cells.iter_mut().enumerate() {
            *cell = match layout.terrain_at(i) {
                Terrain::Wall => Cell::Wall,
                Terrain::Empty => Cell::Empty,
                Terrain::River if rng.gen_bool(self.config.initial_waste) => {
                    self.waste_count += 1;
                    Cell::Waste
                }
                Terrain::River => Cell::River,
                Terrain::Orchard if rng.gen_bool(self.config.initial_apples) => Cell::Apple,
                Terrain::Orchard => Cell::Empty,
            };
        }
        // agents start on plain ground when there is room, else anywhere walkable
        let mut spawn = layout.cells_of(Terrain::Empty);
        if spawn.len() < self.config.n_agents {
            spawn = (0..self.state.cells.len())
                .filter(|&i| layout.terrain_at(i) != Terrain::Wall)
                .collect();
        }
        let picks = index::sample(rng, spawn.len(), self.config.n_agents);
        self.occupant.fill(NOBODY);
        self.state.agents.clear();
        for (agent, k) in picks.into_iter().enumerate() {
            let idx = spawn[k];
            self.occupant[idx] = agent;
            if self.state.cells[idx] == Cell::Apple {
                self.state.cells[idx] = Cell::Empty;
            }
            self.state.agents.push(AgentPose {
                row: idx / self.state.width,
                col: idx % self.state.width,
                orientation: Orientation::ALL[rng.gen_range(0..4)],
            });
        }
        self.state.timestep = 0;
    }

    /// Every empty river cell independently turns to waste.
    pub fn spawn_waste<R: Rng + ?Sized>(&mut self, rng: &mut R) -> u32 {
        let p = self.config.waste_spawn_prob;
        if p <= 0.0 {
            return 0;
        }
        let mut spawned = 0;
        for &i in &self.river {
            if self.state.cells[i] == Cell::River && rng.gen_bool(p) {
                self.state.cells[i] = Cell::Waste;
                spawned += 1;
            }
        }
        self.waste_count += spawned as usize;
        spawned
    }

    /// Apples regrow on free orchard cells with probability
    /// `apple_respawn_base * (1 - waste_density)`, and not at all once the
    /// density exceeds the depletion threshold.
    pub fn spawn_apples<R: Rng + ?Sized>(&mut self, rng: &mut R) -> u32 {
        let density = self.waste_density();
        if density > self.config.depletion_threshold {
            return 0;
        }
        let p = self.config.apple_respawn_base * (1.0 - density);
        if p <= 0.0 {
            return 0;
        }
        let mut spawned = 0;
        for &i in &self.orchard {
            if self.state.cells[i] == Cell::Empty && self.occupant[i] == NOBODY && rng.gen_bool(p) {
                self.state.cells[i] = Cell::Apple;
                spawned += 1;
            }
        }
        spawned
    }

    /// Advances one timestep: turns, moves, beams, consumption, spawning.
    pub fn step<R: Rng + ?Sized>(&mut self, actions: &[CleanupAction], rng: &mut R) -> Result<StepOutcome> {
        let n = self.config.n_agents;
        if actions.len() != n {
            return Err(Error::ActionCount {
                got: actions.len(),
                expected: n,
            });
        }
        if self.is_done() {
            return Err(Error::EpisodeFinished(self.state.timestep));
        }
        let width = self.state.width;

        for (pose, a) in self.state.agents.iter_mut().zip(actions) {
            match a {
                CleanupAction::TurnLeft => pose.orientation = pose.orientation.left(),
                CleanupAction::TurnRight => pose.orientation = pose.orientation.right(),
                _ => {}
            }
        }

        // moves are relative to facing; a random priority order settles
        // contested cells, losers stay put
        self.order.shuffle(rng);
        for k in 0..n {
            let agent = self.order[k];
            let pose = self.state.agents[agent];
            let dir = match actions[agent] {
                CleanupAction::MoveUp => pose.orientation,
                CleanupAction::MoveDown => pose.orientation.opposite(),
                CleanupAction::MoveLeft => pose.orientation.left(),
                CleanupAction::MoveRight => pose.orientation.right(),
                _ => continue,
            };
            let Some((r, c)) = self.state.offset(pose.row, pose.col, dir, 1) else {
                continue;
            };
            let target = r * width + c;
            if self.state.cells[target] == Cell::Wall || self.occupant[target] != NOBODY {
                continue;
            }
            self.occupant[pose.row * width + pose.col] = NOBODY;
            self.occupant[target] = agent;
            let p = &mut self.state.agents[agent];
            p.row = r;
            p.col = c;
        }

        let mut raw = vec![0.0; n];
        let mut cleans = vec![0; n];
        let mut punishes = vec![0; n];
        let mut waste_removed = 0;
        let (length, bw) = (self.config.clean_beam_length, self.config.beam_width);
        for agent in 0..n {
            let fire = actions[agent];
            if fire != CleanupAction::Clean && fire != CleanupAction::Punish {
                continue;
            }
            let pose = self.state.agents[agent];
            let hit = self.state.beam_cells(&pose, length, bw);
            if fire == CleanupAction::Clean {
                cleans[agent] = 1;
                for (r, c) in hit {
                    let cell = &mut self.state.cells[r * width + c];
                    if *cell == Cell::Waste {
                        *cell = Cell::River;
                        waste_removed += 1;
                    }
                }
            } else {
                punishes[agent] = 1;
                raw[agent] += self.config.punish_cost;
                for (r, c) in hit {
                    let target = self.occupant[r * width + c];
                    if target != NOBODY && target != agent {
                        raw[target] += self.config.punish_fine;
                    }
                }
            }
        }
        self.waste_count -= waste_removed as usize;

        let mut apples = vec![0; n];
        let mut apples_consumed = 0;
        for (agent, pose) in self.state.agents.iter().enumerate() {
            let cell = &mut self.state.cells[pose.row * width + pose.col];
            if *cell == Cell::Apple {
                *cell = Cell::Empty;
                apples[agent] = 1;
                raw[agent] += 1.0;
                apples_consumed += 1;
            }
        }

        let waste_spawned = self.spawn_waste(rng);
        let waste_density = self.waste_density();
        let apples_spawned = self.spawn_apples(rng);
        self.state.timestep += 1;

        Ok(StepOutcome {
            raw: RewardVector(raw),
            apples,
            cleans,
            punishes,
            apples_consumed,
            waste_removed,
            waste_spawned,
            apples_spawned,
            waste_density,
            done: self.is_done(),
        })
    }

    /// Egocentric view of `agent`, rotated so that it faces the top row.
    pub fn observe(&self, agent: usize, partition: &TeamPartition) -> Features {
        let mut f = Features::default();
        self.observe_into(agent, partition, &mut f);
        f
    }

    pub fn observe_into(&self, agent: usize, partition: &TeamPartition, out: &mut Features) {
        let v = self.config.view_window;
        let half = (v / 2) as isize;
        out.dim = v * v * CHANNELS;
        out.index.clear();
        out.value.clear();
        let pose = self.state.agents[agent];
        let (fr, fc) = pose.orientation.delta();
        let (rr, rc) = pose.orientation.right().delta();
        let (h, w) = (self.state.height as isize, self.state.width as isize);
        let mut push = |cell: usize, ch: usize| {
            out.index.push((cell * CHANNELS + ch) as u32);
            out.value.push(1.0);
        };
        for vr in 0..v as isize {
            let ahead = half - vr;
            for vc in 0..v as isize {
                let side = vc - half;
                let r = pose.row as isize + ahead * fr + side * rr;
                let c = pose.col as isize + ahead * fc + side * rc;
                let cell = (vr * v as isize + vc) as usize;
                if r < 0 || c < 0 || r >= h || c >= w {
                    push(cell, CH_WALL);
                    continue;
                }
                let idx = (r * w + c) as usize;
                match self.state.cells[idx] {
                    Cell::Wall => push(cell, CH_WALL),
                    Cell::River => push(cell, CH_RIVER),
                    Cell::Waste => push(cell, CH_WASTE),
                    Cell::Apple => push(cell, CH_APPLE),
                    Cell::Empty if self.config.layout.terrain_at(idx) == Terrain::Orchard => push(cell, CH_ORCHARD),
                    Cell::Empty => {}
                }
                let other = self.occupant[idx];
                if other != NOBODY && other != agent {
                    let ch = if partition.same_team(agent, other) {
                        CH_TEAMMATE
                    } else {
                        CH_OTHER
                    };
                    push(cell, ch);
                }
            }
        }
    }
}
