use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, RngCore};

use super::env::{Cell, CleanupEnv, GridState, Orientation};
use super::{CleanupAction, CleanupConfig};
use crate::error::{Error, Result};
use crate::learn::Features;
use crate::record::CleanupEpisodeStats;
use crate::team::{EqualShare, TeamPartition, TeamRewardFn};

/// Per-agent behaviour in Cleanup. One object drives the whole population.
pub trait CleanupPolicy {
    /// Picks an action for `agent`. `obs` is the agent's egocentric view;
    /// it is left empty when [`CleanupPolicy::wants_observation`] is false.
    /// The full `state` is there for scripted baselines; learners should
    /// only read `obs`.
    fn act(&mut self, agent: usize, obs: &Features, state: &GridState, rng: &mut dyn RngCore) -> CleanupAction;

    /// Team reward of the last action.
    fn reward(&mut self, _agent: usize, _team_reward: f64, _done: bool) {}

    fn wants_observation(&self) -> bool {
        true
    }
}

/// Uniform over the nine actions.
pub struct RandomPolicy;

impl CleanupPolicy for RandomPolicy {
    fn act(&mut self, _: usize, _: &Features, _: &GridState, rng: &mut dyn RngCore) -> CleanupAction {
        CleanupAction::ALL[rng.gen_range(0..CleanupAction::COUNT)]
    }

    fn wants_observation(&self) -> bool {
        false
    }
}

/// Every agent repeats one action.
pub struct Constant(pub CleanupAction);

impl CleanupPolicy for Constant {
    fn act(&mut self, _: usize, _: &Features, _: &GridState, _: &mut dyn RngCore) -> CleanupAction {
        self.0
    }

    fn wants_observation(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Walks to the nearest apple.
    Picker,
    /// Walks to the nearest waste and fires the clean beam at it.
    Cleaner,
    Idle,
}

/// Hand-written baseline with full map access, one role per agent.
pub struct Scripted {
    pub roles: Vec<Role>,
    pub beam_length: usize,
    pub beam_width: usize,
}

impl Scripted {
    pub fn new(roles: Vec<Role>, config: &CleanupConfig) -> Self {
        Scripted {
            roles,
            beam_length: config.clean_beam_length,
            beam_width: config.beam_width,
        }
    }

    fn clean(&self, agent: usize, state: &GridState) -> CleanupAction {
        let pose = state.agents[agent];
        let hits = |o: Orientation| {
            let p = super::AgentPose { orientation: o, ..pose };
            state
                .beam_cells(&p, self.beam_length, self.beam_width)
                .into_iter()
                .any(|(r, c)| state.cell(r, c) == Cell::Waste)
        };
        if hits(pose.orientation) {
            CleanupAction::Clean
        } else if hits(pose.orientation.left()) {
            CleanupAction::TurnLeft
        } else if hits(pose.orientation.right()) || hits(pose.orientation.opposite()) {
            CleanupAction::TurnRight
        } else {
            step_towards(state, agent, Cell::Waste)
        }
    }
}

impl CleanupPolicy for Scripted {
    fn act(&mut self, agent: usize, _: &Features, state: &GridState, _: &mut dyn RngCore) -> CleanupAction {
        match self.roles[agent] {
            Role::Picker => step_towards(state, agent, Cell::Apple),
            Role::Cleaner => self.clean(agent, state),
            Role::Idle => CleanupAction::Stay,
        }
    }

    fn wants_observation(&self) -> bool {
        false
    }
}

/// First move of a shortest walk to the nearest cell of kind `goal`,
/// expressed relative to the agent's facing. Stays put if none is reachable.
fn step_towards(state: &GridState, agent: usize, goal: Cell) -> CleanupAction {
    let pose = state.agents[agent];
    let w = state.width;
    let start = pose.row * w + pose.col;
    let mut first: Vec<Option<Orientation>> = vec![None; state.cells.len()];
    let mut seen = vec![false; state.cells.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(at) = queue.pop_front() {
        if at != start && state.cells[at] == goal {
            let dir = first[at].expect("reached cells carry a first step");
            return relative_move(pose.orientation, dir);
        }
        for dir in Orientation::ALL {
            let Some((r, c)) = state.offset(at / w, at % w, dir, 1) else {
                continue;
            };
            let next = r * w + c;
            if seen[next] || state.cells[next] == Cell::Wall {
                continue;
            }
            seen[next] = true;
            first[next] = first[at].or(Some(dir));
            queue.push_back(next);
        }
    }
    CleanupAction::Stay
}

fn relative_move(facing: Orientation, dir: Orientation) -> CleanupAction {
    if dir == facing {
        CleanupAction::MoveUp
    } else if dir == facing.opposite() {
        CleanupAction::MoveDown
    } else if dir == facing.left() {
        CleanupAction::MoveLeft
    } else {
        CleanupAction::MoveRight
    }
}

pub const TRAJECTORY_HEADER: [&str; 8] = [
    "timestep",
    "agent",
    "action",
    "raw_reward",
    "team_reward",
    "apples_cum",
    "cleans_cum",
    "punishes_cum",
];

/// Per-step, per-agent CSV log of an episode.
pub struct TrajectoryLog<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> TrajectoryLog<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(TRAJECTORY_HEADER)?;
        Ok(TrajectoryLog { writer })
    }

    fn write_step(
        &mut self,
        timestep: usize,
        actions: &[CleanupAction],
        raw: &[f64],
        team: &[f64],
        stats: &CleanupEpisodeStats,
    ) -> Result<()> {
        for (agent, a) in actions.iter().enumerate() {
            self.writer.write_record([
                timestep.to_string(),
                agent.to_string(),
                a.as_str().to_string(),
                raw[agent].to_string(),
                team[agent].to_string(),
                stats.apples[agent].to_string(),
                stats.cleans[agent].to_string(),
                stats.punishes[agent].to_string(),
            ])?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.writer.flush().map_err(|e| Error::io("trajectory log", e))?;
        self.writer
            .into_inner()
            .map_err(|e| Error::io("trajectory log", e.into_error()))
    }
}

/// Plays one episode from a fresh reset. Raw rewards are turned into team
/// rewards at every timestep before the policy sees them.
pub fn run_episode(
    config: &CleanupConfig,
    partition: &TeamPartition,
    policy: &mut dyn CleanupPolicy,
    rng: &mut dyn RngCore,
) -> Result<CleanupEpisodeStats> {
    let mut env = CleanupEnv::new(config.clone(), rng)?;
    run_episode_logged::<std::io::Sink>(&mut env, partition, policy, rng, None)
}

/// Resets `env` and plays one episode, optionally logging every step.
pub fn run_episode_logged<W: Write>(
    env: &mut CleanupEnv,
    partition: &TeamPartition,
    policy: &mut dyn CleanupPolicy,
    rng: &mut dyn RngCore,
    mut log: Option<&mut TrajectoryLog<W>>,
) -> Result<CleanupEpisodeStats> {
    let n = env.config().n_agents;
    if partition.num_agents() != n {
        return Err(Error::StructureMismatch {
            notation: partition.notation(),
            covered: partition.num_agents(),
            n_agents: n,
        });
    }
    env.reset(rng);
    let mut stats = CleanupEpisodeStats::new(n);
    let mut obs = Features::default();
    let mut actions = vec![CleanupAction::Stay; n];
    let mut team = vec![0.0; n];
    let observe = policy.wants_observation();
    loop {
        for (agent, slot) in actions.iter_mut().enumerate() {
            if observe {
                env.observe_into(agent, partition, &mut obs);
            }
            *slot = policy.act(agent, &obs, env.state(), rng);
        }
        let timestep = env.state().timestep;
        let out = env.step(&actions, rng)?;
        EqualShare.transform(partition, &out.raw.0, &mut team);
        for agent in 0..n {
            stats.apples[agent] += out.apples[agent];
            stats.cleans[agent] += out.cleans[agent];
            stats.punishes[agent] += out.punishes[agent];
            stats.raw_reward[agent] += out.raw[agent];
            stats.team_reward[agent] += team[agent];
            policy.reward(agent, team[agent], out.done);
        }
        stats.apples_consumed += out.apples_consumed;
        stats.clean_beams += out.cleans.iter().sum::<u32>();
        stats.apples_spawned += out.apples_spawned;
        stats.waste_spawned += out.waste_spawned;
        if let Some(log) = log.as_deref_mut() {
            log.write_step(timestep, &actions, &out.raw.0, &team, &stats)?;
        }
        if out.done {
            return Ok(stats);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::team::parse_structure;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn short(len: usize) -> CleanupConfig {
        CleanupConfig {
            episode_length: len,
            ..CleanupConfig::default()
        }
    }

    #[test]
    fn custom_map_from_text() {
        let map: super::super::MapLayout = "WWWWWW\nWRR OW\nWRR OW\nWWWWWW".parse().unwrap();
        let config = CleanupConfig {
            layout: map,
            n_agents: 2,
            view_window: 5,
            episode_length: 50,
            ..CleanupConfig::default()
        };
        let partition = parse_structure("1/2", 2).unwrap();
        let mut policy = Scripted::new(vec![Role::Cleaner, Role::Picker], &config);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stats = run_episode(&config, &partition, &mut policy, &mut rng).unwrap();
        assert_eq!(stats.team_reward[0], stats.team_reward[1]);
        assert!((stats.team_reward.iter().sum::<f64>() - stats.population_reward()).abs() < 1e-12);
    }

    #[test]
    fn all_stay_earns_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = short(200);
        let p = parse_structure("6/1", 6).unwrap();
        let stats = run_episode(&cfg, &p, &mut Constant(CleanupAction::Stay), &mut rng).unwrap();
        assert_eq!(stats.population_reward(), 0.0);
        assert!(stats.waste_spawned > 0);
    }

    #[test]
    fn scripted_cleaner_and_pickers_earn_apples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = short(1000);
        let p = parse_structure("1/6", 6).unwrap();
        let roles = vec![
            Role::Cleaner,
            Role::Cleaner,
            Role::Picker,
            Role::Picker,
            Role::Picker,
            Role::Picker,
        ];
        let mut policy = Scripted::new(roles, &cfg);
        let stats = run_episode(&cfg, &p, &mut policy, &mut rng).unwrap();
        assert!(stats.population_reward() > 0.0);
        // cleaners never pick, pickers never clean
        assert_eq!(&stats.apples[..2], &[0, 0]);
        assert!(stats.cleans[2..].iter().all(|&c| c == 0));
        assert!(stats.cleans[0] > 0);
        // bookkeeping agrees with the environment's own counters
        assert_eq!(stats.apples.iter().sum::<u32>(), stats.apples_consumed);
        assert_eq!(stats.cleans.iter().sum::<u32>(), stats.clean_beams);
        assert_eq!(stats.population_reward(), stats.apples_consumed as f64);
    }

    #[test]
    fn cleaning_pays_off_for_the_population() {
        let cfg = short(1000);
        let p = parse_structure("1/6", 6).unwrap();
        let mut with = 0.0;
        let mut without = 0.0;
        for seed in 0..4 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let roles = [
                Role::Cleaner,
                Role::Cleaner,
                Role::Cleaner,
                Role::Picker,
                Role::Picker,
                Role::Picker,
            ];
            with += run_episode(&cfg, &p, &mut Scripted::new(roles.to_vec(), &cfg), &mut rng)
                .unwrap()
                .population_reward();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            without += run_episode(&cfg, &p, &mut Scripted::new(vec![Role::Picker; 6], &cfg), &mut rng)
                .unwrap()
                .population_reward();
        }
        assert!(with > 2.0 * without, "{with} vs {without}");
    }

    #[test]
    fn single_team_shares_every_step() {
        struct Check {
            last: Vec<f64>,
        }
        impl CleanupPolicy for Check {
            fn act(&mut self, agent: usize, _: &Features, _: &GridState, rng: &mut dyn RngCore) -> CleanupAction {
                if agent == 0 {
                    let first = self.last[0];
                    assert!(self.last.iter().all(|&r| r == first), "{:?}", self.last);
                }
                CleanupAction::ALL[rng.gen_range(0..9)]
            }
            fn reward(&mut self, agent: usize, team_reward: f64, _: bool) {
                self.last[agent] = team_reward;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = CleanupConfig {
            initial_apples: 0.5,
            ..short(300)
        };
        let p = parse_structure("1/6", 6).unwrap();
        let stats = run_episode(&cfg, &p, &mut Check { last: vec![0.0; 6] }, &mut rng).unwrap();
        let t0 = stats.team_reward[0];
        assert!(stats.team_reward.iter().all(|&t| (t - t0).abs() < 1e-9));
        assert!((stats.team_reward.iter().sum::<f64>() - stats.population_reward()).abs() < 1e-9);
    }

    #[test]
    fn structure_must_cover_the_population() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = parse_structure("2/2", 4).unwrap();
        let err = run_episode(&short(5), &p, &mut RandomPolicy, &mut rng).unwrap_err();
        assert!(err.is_config_error());
    }

    #[test]
    fn trajectory_log_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = short(10);
        let p = parse_structure("3/2", 6).unwrap();
        let mut env = CleanupEnv::new(cfg, &mut rng).unwrap();
        let mut log = TrajectoryLog::new(Vec::new()).unwrap();
        run_episode_logged(&mut env, &p, &mut RandomPolicy, &mut rng, Some(&mut log)).unwrap();
        let text = String::from_utf8(log.finish().unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRAJECTORY_HEADER.join(","));
        assert_eq!(lines.count(), 60);
    }
}
