//! One seeded trial of either environment.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::cleanup::{run_episode_logged, CleanupAction, CleanupEnv, CleanupPolicy, GridState, TrajectoryLog};
use crate::error::{Error, Result};
use crate::ipd::{run_episode, Action, InteractionLog, IpdConfig, TeamSignal};
use crate::learn::{q_select, q_update, Features, PolicyValueNet, PpoLearner, QTable, Transition};
use crate::record::{CleanupRecord, CoopTally, IpdRecord};
use crate::team::TeamPartition;

pub struct IpdTrial {
    pub record: IpdRecord,
    pub q_tables: Vec<QTable>,
}

/// Independent Q-learners on the iterated dilemma.
///
/// Every action an agent takes, as focal agent or as counterpart, is one
/// learning step. Its state is the counterpart's team signal and its reward
/// is that game's share of the agent's team reward: the two payoffs of the
/// game restricted to the agent's team, divided by the team size. Summed over
/// all games of an episode these shares are exactly the team reward. The
/// next state is the signal seen at the agent's next action, so a transition
/// stays open until then.
pub fn run_ipd_trial<W: Write>(
    cfg: &ExperimentConfig,
    partition: &TeamPartition,
    benefit: f64,
    seed: u64,
    mut log: Option<&mut InteractionLog<W>>,
) -> Result<IpdTrial> {
    let ipd = IpdConfig::new(partition.clone(), benefit, cfg.cost, cfg.pairing_mode, cfg.episodes)?;
    let n = ipd.n_agents;
    let schedule = cfg.epsilon_schedule()?;
    let mut tables = (0..n)
        .map(|_| QTable::new(partition.num_teams(), cfg.q_params(), schedule.value(0)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut record = IpdRecord {
        structure: partition.notation(),
        b: benefit,
        c: cfg.cost,
        seed,
        config_hash: cfg.config_hash(),
        actions_per_episode: 0,
        population_raw: Vec::with_capacity(cfg.episodes),
        population_team: Vec::with_capacity(cfg.episodes),
        tallies: Vec::with_capacity(cfg.episodes),
        agent_raw_total: vec![0.0; n],
        agent_team_total: vec![0.0; n],
        agent_interactions: vec![0; n],
    };
    // actions of the current episode, per agent, in the order taken
    let mut taken: Vec<Vec<(usize, Action)>> = vec![Vec::new(); n];
    let mut open: Vec<Option<(usize, usize, f64)>> = vec![None; n];
    let size = partition.team_size() as f64;

    for episode in 0..cfg.episodes {
        let eps = schedule.value(episode);
        for t in &mut tables {
            t.epsilon = eps;
        }
        taken.iter_mut().for_each(Vec::clear);
        let ep = {
            let tables = &tables;
            let taken = &mut taken;
            let mut policy = |agent: usize, signal: TeamSignal, rng: &mut dyn RngCore| {
                let a = q_select(&tables[agent], signal.0, rng);
                taken[agent].push((signal.0, a));
                a
            };
            run_episode(&ipd, &mut policy, &mut rng)?
        };

        // rewards per action, consumed in the same order the actions were taken
        let mut rewards: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut tally = CoopTally::default();
        for it in &ep.interactions {
            let same = partition.same_team(it.focal, it.counterpart);
            let (share_focal, share_counterpart) = if same {
                let s = (it.payoff_focal + it.payoff_counterpart) / size;
                (s, s)
            } else {
                (it.payoff_focal / size, it.payoff_counterpart / size)
            };
            rewards[it.focal].push(share_focal);
            rewards[it.counterpart].push(share_counterpart);
            tally.add(same, it.action_focal == Action::Cooperate);
            tally.add(same, it.action_counterpart == Action::Cooperate);
            record.agent_interactions[it.focal] += 1;
            record.agent_interactions[it.counterpart] += 1;
        }
        for agent in 0..n {
            for (&(state, action), &r) in taken[agent].iter().zip(&rewards[agent]) {
                if let Some((s, a, pr)) = open[agent] {
                    q_update(
                        &mut tables[agent],
                        &Transition {
                            observation: s,
                            action: a,
                            team_reward: pr,
                            next_observation: state,
                            done: false,
                        },
                    );
                }
                open[agent] = Some((state, action.index(), r));
            }
            record.agent_raw_total[agent] += ep.raw[agent];
            record.agent_team_total[agent] += ep.team[agent];
        }
        if !ep.team.0.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("team reward in episode {episode}")));
        }
        record.actions_per_episode = 2 * ep.interactions.len();
        record.population_raw.push(ep.raw.sum());
        record.population_team.push(ep.team.sum());
        record.tallies.push(tally);
        if let Some(log) = log.as_deref_mut() {
            if cfg.log_every > 0 && episode % cfg.log_every == 0 {
                log.write_episode(episode, partition, &ep)?;
            }
        }
    }
    Ok(IpdTrial {
        record,
        q_tables: tables,
    })
}

/// One PPO learner per agent. Each learner updates after every episode in
/// which its rollout reached `rollout_length` steps.
pub struct PpoPopulation {
    pub learners: Vec<PpoLearner>,
    pending: Vec<Option<(Features, usize)>>,
    rollout_length: usize,
    update_rng: ChaCha8Rng,
    failure: Option<Error>,
}

impl PpoPopulation {
    pub fn new(cfg: &ExperimentConfig, input_dim: usize, n_agents: usize, rng: &mut ChaCha8Rng) -> Self {
        let learners = (0..n_agents)
            .map(|_| {
                let net = PolicyValueNet::new(input_dim, &cfg.hidden, CleanupAction::COUNT, rng);
                PpoLearner::new(net, cfg.ppo_config())
            })
            .collect();
        PpoPopulation {
            learners,
            pending: vec![None; n_agents],
            rollout_length: cfg.rollout_length,
            update_rng: ChaCha8Rng::seed_from_u64(rand::Rng::gen(rng)),
            failure: None,
        }
    }

    /// The first update failure, if any, cleared on read.
    pub fn take_failure(&mut self) -> Option<Error> {
        self.failure.take()
    }
}

impl CleanupPolicy for PpoPopulation {
    fn act(&mut self, agent: usize, obs: &Features, _: &GridState, rng: &mut dyn RngCore) -> CleanupAction {
        let a = self.learners[agent].act(obs, rng);
        self.pending[agent] = Some((obs.clone(), a));
        CleanupAction::from_index(a).expect("policy head has nine outputs")
    }

    fn reward(&mut self, agent: usize, team_reward: f64, done: bool) {
        let Some((obs, a)) = self.pending[agent].take() else {
            return;
        };
        let learner = &mut self.learners[agent];
        learner.record(obs, a, team_reward, done);
        if done && learner.rollout.len() >= self.rollout_length && self.failure.is_none() {
            if let Err(e) = learner.update(&mut self.update_rng) {
                self.failure = Some(match e {
                    Error::NonFinite(m) => Error::NonFinite(format!("agent {agent}: {m}")),
                    other => other,
                });
            }
        }
    }
}

pub struct CleanupTrial {
    pub record: CleanupRecord,
    pub population: PpoPopulation,
}

/// PPO agents on Cleanup for `timesteps / episode_length` episodes. Episodes
/// whose index is a multiple of `log_every` are logged step by step when a
/// log sink is given.
pub fn run_cleanup_trial<W: Write>(
    cfg: &ExperimentConfig,
    partition: &TeamPartition,
    seed: u64,
    mut log: Option<&mut TrajectoryLog<W>>,
) -> Result<CleanupTrial> {
    let env_cfg = cfg.cleanup_config()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = CleanupEnv::new(env_cfg.clone(), &mut rng)?;
    let mut population = PpoPopulation::new(cfg, env_cfg.observation_len(), env_cfg.n_agents, &mut rng);
    let episodes = cfg.cleanup_episodes();
    let mut record = CleanupRecord {
        structure: partition.notation(),
        seed,
        config_hash: cfg.config_hash(),
        episode_length: env_cfg.episode_length,
        episodes: Vec::with_capacity(episodes),
    };
    for episode in 0..episodes {
        let sink = match log.as_deref_mut() {
            Some(l) if cfg.log_every > 0 && episode % cfg.log_every == 0 => Some(l),
            _ => None,
        };
        let stats = run_episode_logged(&mut env, partition, &mut population, &mut rng, sink)?;
        if let Some(e) = population.take_failure() {
            return Err(e);
        }
        record.episodes.push(stats);
    }
    Ok(CleanupTrial { record, population })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::Environment;
    use crate::team::parse_structure;

    fn ipd_cfg(episodes: usize) -> ExperimentConfig {
        ExperimentConfig {
            episodes,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn ipd_record_shapes() {
        let cfg = ipd_cfg(50);
        let p = parse_structure("5/6", 30).unwrap();
        let t = run_ipd_trial::<Vec<u8>>(&cfg, &p, 5.0, 7, None).unwrap();
        assert_eq!(t.record.episodes(), 50);
        assert_eq!(t.record.actions_per_episode, 60);
        assert!(t.record.tallies.iter().all(|x| x.total() == 60));
        assert_eq!(t.q_tables.len(), 30);
        assert_eq!(t.q_tables[0].n_states(), 5);
        // the transform conserves the population sum every episode
        for (r, tr) in t.record.population_raw.iter().zip(&t.record.population_team) {
            assert!((r - tr).abs() < 1e-9);
        }
        assert_eq!(t.record.agent_interactions.iter().sum::<u64>(), 50 * 60);
    }

    #[test]
    fn ipd_trial_is_deterministic() {
        let cfg = ipd_cfg(200);
        let p = parse_structure("3/10", 30).unwrap();
        let a = run_ipd_trial::<Vec<u8>>(&cfg, &p, 5.0, 3, None).unwrap();
        let b = run_ipd_trial::<Vec<u8>>(&cfg, &p, 5.0, 3, None).unwrap();
        assert_eq!(a.record.population_raw, b.record.population_raw);
        assert_eq!(a.q_tables, b.q_tables);
        let c = run_ipd_trial::<Vec<u8>>(&cfg, &p, 5.0, 4, None).unwrap();
        assert_ne!(a.record.population_raw, c.record.population_raw);
    }

    #[test]
    fn single_team_learns_to_cooperate() {
        let cfg = ipd_cfg(3000);
        let p = parse_structure("1/30", 30).unwrap();
        let t = run_ipd_trial::<Vec<u8>>(&cfg, &p, 5.0, 1, None).unwrap();
        let last = crate::metrics::last_quartile_tally(&t.record.tallies);
        assert!(last.teammate_coop as f64 / last.teammate_total as f64 > 0.9);
    }

    #[test]
    fn interaction_log_follows_sampling_rate() {
        let cfg = ExperimentConfig {
            log_every: 10,
            ..ipd_cfg(30)
        };
        let p = parse_structure("2/15", 30).unwrap();
        let mut log = InteractionLog::new(Vec::new()).unwrap();
        run_ipd_trial(&cfg, &p, 2.0, 0, Some(&mut log)).unwrap();
        let text = String::from_utf8(log.finish().unwrap()).unwrap();
        // three logged episodes of 30 interactions
        assert_eq!(text.lines().count(), 1 + 3 * 30);
    }

    #[test]
    fn cleanup_trial_runs_and_learns_shapes() {
        let cfg = ExperimentConfig {
            environment: Environment::Cleanup,
            structures: vec!["2/3".into()],
            episode_length: 50,
            timesteps: 150,
            rollout_length: 50,
            ppo_minibatch: 25,
            hidden: vec![8],
            view_window: 5,
            ..ExperimentConfig::default()
        };
        let p = parse_structure("2/3", 6).unwrap();
        let t = run_cleanup_trial::<Vec<u8>>(&cfg, &p, 5, None).unwrap();
        assert_eq!(t.record.episodes.len(), 3);
        assert_eq!(t.population.learners.len(), 6);
        assert!(t.population.learners.iter().all(|l| l.rollout.is_empty()));
        let again = run_cleanup_trial::<Vec<u8>>(&cfg, &p, 5, None).unwrap();
        assert_eq!(t.record.episodes, again.record.episodes);
        assert_eq!(t.population.learners[3].net, again.population.learners[3].net);
    }
}
