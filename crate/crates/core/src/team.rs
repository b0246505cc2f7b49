//! Team partitions and the team reward transform.
//!
//! A population of `N` agents is split a priori into `k` disjoint teams of
//! equal size `m` (written `k/m`). Each agent learns from its team reward,
//! the equal-share mean of its teammates' raw rewards.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type AgentId = usize;
pub type TeamId = usize;

/// How counterparts are drawn in the prisoner's dilemma population.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Every agent is focal once per episode; the counterpart's team is drawn
    /// uniformly over all teams, then a member uniformly within that team.
    #[default]
    TeamFirst,
    /// A uniform random perfect matching over the whole population.
    UniformMatching,
}

impl fmt::Display for PairingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairingMode::TeamFirst => "team_first",
            PairingMode::UniformMatching => "uniform_matching",
        })
    }
}

impl FromStr for PairingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "team_first" => Ok(PairingMode::TeamFirst),
            "uniform_matching" => Ok(PairingMode::UniformMatching),
            other => Err(Error::Config(format!(
                "unknown pairing mode {other:?} (expected team_first or uniform_matching)"
            ))),
        }
    }
}

/// A disjoint cover of agents `0..N` by equal-size teams.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TeamPartition {
    assignment: Vec<TeamId>,
    teams: Vec<Vec<AgentId>>,
}

impl TeamPartition {
    /// Builds `num_teams` teams of `team_size` consecutive agent ids.
    pub fn blocks(num_teams: usize, team_size: usize) -> Result<Self> {
        if num_teams == 0 || team_size == 0 {
            return Err(Error::InvalidPartition(format!(
                "{num_teams}/{team_size} has an empty dimension"
            )));
        }
        let teams: Vec<Vec<AgentId>> = (0..num_teams)
            .map(|t| (t * team_size..(t + 1) * team_size).collect())
            .collect();
        let assignment = (0..num_teams * team_size).map(|a| a / team_size).collect();
        Ok(TeamPartition { assignment, teams })
    }

    /// Builds a partition from an explicit list of teams, checking that the
    /// teams are non-empty, equal in size, disjoint and cover `0..N`.
    pub fn from_teams(teams: Vec<Vec<AgentId>>) -> Result<Self> {
        let n: usize = teams.iter().map(Vec::len).sum();
        let size = teams.first().map(Vec::len).unwrap_or(0);
        if size == 0 {
            return Err(Error::InvalidPartition("no members".into()));
        }
        if teams.iter().any(|t| t.len() != size) {
            return Err(Error::InvalidPartition("teams differ in size".into()));
        }
        let mut assignment = vec![usize::MAX; n];
        for (t, members) in teams.iter().enumerate() {
            for &a in members {
                if a >= n {
                    return Err(Error::AgentOutOfRange { agent: a, n_agents: n });
                }
                if assignment[a] != usize::MAX {
                    return Err(Error::InvalidPartition(format!("agent {a} is in two teams")));
                }
                assignment[a] = t;
            }
        }
        Ok(TeamPartition { assignment, teams })
    }

    pub fn num_agents(&self) -> usize {
        self.assignment.len()
    }

    pub fn num_teams(&self) -> usize {
        self.teams.len()
    }

    pub fn team_size(&self) -> usize {
        self.teams[0].len()
    }

    pub fn teams(&self) -> &[Vec<AgentId>] {
        &self.teams
    }

    pub fn members(&self, team: TeamId) -> &[AgentId] {
        &self.teams[team]
    }

    pub fn team_of(&self, agent: AgentId) -> Result<TeamId> {
        self.assignment.get(agent).copied().ok_or(Error::AgentOutOfRange {
            agent,
            n_agents: self.num_agents(),
        })
    }

    /// Unchecked lookup for hot loops where ids are already validated.
    #[inline]
    pub(crate) fn team_index(&self, agent: AgentId) -> TeamId {
        self.assignment[agent]
    }

    pub fn same_team(&self, a: AgentId, b: AgentId) -> bool {
        self.assignment[a] == self.assignment[b]
    }

    /// The `k/m` label used in configs and output files.
    pub fn notation(&self) -> String {
        format!("{}/{}", self.num_teams(), self.team_size())
    }
}

impl fmt::Display for TeamPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num_teams(), self.team_size())
    }
}

/// Parses `"k/m"` into `k` teams of `m` consecutive agents.
pub fn parse_structure(notation: &str, n_agents: usize) -> Result<TeamPartition> {
    let malformed = || Error::MalformedStructure(notation.to_string());
    let (k, m) = notation.trim().split_once('/').ok_or_else(malformed)?;
    let k: usize = k.trim().parse().map_err(|_| malformed())?;
    let m: usize = m.trim().parse().map_err(|_| malformed())?;
    if k == 0 || m == 0 {
        return Err(malformed());
    }
    let covered = k.checked_mul(m).ok_or_else(malformed)?;
    if covered != n_agents {
        return Err(Error::StructureMismatch {
            notation: notation.trim().to_string(),
            covered,
            n_agents,
        });
    }
    TeamPartition::blocks(k, m)
}

/// All `k/m` structures of a population of `n`, ordered by team count.
pub fn all_structures(n: usize) -> Vec<TeamPartition> {
    (1..=n)
        .filter(|k| n.is_multiple_of(*k))
        .map(|k| TeamPartition::blocks(k, n / k).expect("divisor pair"))
        .collect()
}

/// Per-agent rewards for one step or episode.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardVector(pub Vec<f64>);

impl RewardVector {
    pub fn zeros(n: usize) -> Self {
        RewardVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn validate_for(&self, partition: &TeamPartition) -> Result<()> {
        if self.0.len() != partition.num_agents() {
            return Err(Error::RewardLength {
                got: self.0.len(),
                expected: partition.num_agents(),
            });
        }
        if let Some(i) = self.0.iter().position(|r| !r.is_finite()) {
            return Err(Error::NonFinite(format!("reward of agent {i} is {}", self.0[i])));
        }
        Ok(())
    }
}

impl From<Vec<f64>> for RewardVector {
    fn from(v: Vec<f64>) -> Self {
        RewardVector(v)
    }
}

impl std::ops::Index<AgentId> for RewardVector {
    type Output = f64;
    fn index(&self, i: AgentId) -> &f64 {
        &self.0[i]
    }
}

/// Maps raw rewards to the reward each agent actually learns from.
///
/// Environments only see this trait, so other sharing rules can be plugged
/// in next to [`EqualShare`].
pub trait TeamRewardFn: Send + Sync {
    fn transform(&self, partition: &TeamPartition, raw: &[f64], out: &mut [f64]);
}

/// Teammates split their summed reward equally.
#[derive(Clone, Copy, Debug, Default)]
pub struct EqualShare;

impl TeamRewardFn for EqualShare {
    fn transform(&self, partition: &TeamPartition, raw: &[f64], out: &mut [f64]) {
        for members in partition.teams() {
            let mean = members.iter().map(|&j| raw[j]).sum::<f64>() / members.len() as f64;
            for &j in members {
                out[j] = mean;
            }
        }
    }
}

/// Team reward of a single agent.
pub fn team_reward(partition: &TeamPartition, rewards: &RewardVector, agent: AgentId) -> Result<f64> {
    rewards.validate_for(partition)?;
    let team = partition.team_of(agent)?;
    let members = partition.members(team);
    Ok(members.iter().map(|&j| rewards[j]).sum::<f64>() / members.len() as f64)
}

/// Team reward of every agent under the equal-share rule.
pub fn apply_team_transform(partition: &TeamPartition, rewards: &RewardVector) -> Result<RewardVector> {
    apply_transform_with(&EqualShare, partition, rewards)
}

pub fn apply_transform_with(
    rule: &dyn TeamRewardFn,
    partition: &TeamPartition,
    rewards: &RewardVector,
) -> Result<RewardVector> {
    rewards.validate_for(partition)?;
    let mut out = vec![0.0; rewards.len()];
    rule.transform(partition, rewards.as_slice(), &mut out);
    Ok(RewardVector(out))
}

/// Probability that a focal agent's counterpart is a teammate.
///
/// Team-first pairing gives `1/|teams|`, except for singleton teams where an
/// own-team draw is redrawn and the probability is zero. Uniform matching
/// gives `(|team| - 1) / (N - 1)`.
pub fn teammate_probability(partition: &TeamPartition, mode: PairingMode) -> f64 {
    let n = partition.num_agents();
    let size = partition.team_size();
    if n < 2 {
        return 0.0;
    }
    match mode {
        PairingMode::TeamFirst if size < 2 => 0.0,
        PairingMode::TeamFirst => 1.0 / partition.num_teams() as f64,
        PairingMode::UniformMatching => (size - 1) as f64 / (n - 1) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_bookend_structures() {
        let common = parse_structure("1/30", 30).unwrap();
        assert_eq!(common.num_teams(), 1);
        assert_eq!(common.team_size(), 30);

        let mixed = parse_structure("30/1", 30).unwrap();
        assert_eq!(mixed.num_teams(), 30);
        assert!(mixed.teams().iter().all(|t| t.len() == 1));
    }

    #[test]
    fn consecutive_blocks() {
        let p = parse_structure("5/6", 30).unwrap();
        assert_eq!(p.members(0), &[0, 1, 2, 3, 4, 5]);
        assert_eq!(p.members(1), &[6, 7, 8, 9, 10, 11]);
        assert_eq!(p.team_of(29).unwrap(), 4);
        assert_eq!(p.notation(), "5/6");
    }

    #[test]
    fn mismatch_names_both_values() {
        let err = parse_structure("4/7", 30).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("28") && msg.contains("30"), "{msg}");
        assert!(matches!(
            err,
            Error::StructureMismatch {
                covered: 28,
                n_agents: 30,
                ..
            }
        ));
    }

    #[test]
    fn malformed_text() {
        for bad in ["", "5", "5/", "/6", "a/b", "0/30", "30/0", "5/6/1", "-5/6"] {
            assert!(
                matches!(parse_structure(bad, 30), Err(Error::MalformedStructure(_))),
                "{bad:?} accepted"
            );
        }
    }

    #[test]
    fn from_teams_rejects_bad_covers() {
        assert!(TeamPartition::from_teams(vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(TeamPartition::from_teams(vec![vec![0, 1], vec![2]]).is_err());
        assert!(TeamPartition::from_teams(vec![vec![0, 5], vec![2, 3]]).is_err());
        let p = TeamPartition::from_teams(vec![vec![3, 0], vec![1, 2]]).unwrap();
        assert!(p.same_team(0, 3));
    }

    #[test]
    fn team_reward_examples() {
        let p = TeamPartition::blocks(1, 3).unwrap();
        let r = RewardVector(vec![3.0, 0.0, 0.0]);
        for a in 0..3 {
            assert_eq!(team_reward(&p, &r, a).unwrap(), 1.0);
        }

        let single = TeamPartition::blocks(1, 1).unwrap();
        assert_eq!(team_reward(&single, &RewardVector(vec![-2.5]), 0).unwrap(), -2.5);

        // mutual payoffs of a cooperate/defect pair with b = 2, c = 1
        let (b, c) = (2.0, 1.0);
        let pair = TeamPartition::blocks(1, 2).unwrap();
        let r = RewardVector(vec![b - c, -c]);
        assert_eq!(team_reward(&pair, &r, 0).unwrap(), 0.0);
        assert_eq!(team_reward(&pair, &r, 1).unwrap(), 0.0);

        assert!(matches!(
            team_reward(&pair, &r, 2),
            Err(Error::AgentOutOfRange { agent: 2, .. })
        ));
    }

    #[test]
    fn transform_examples() {
        let r = RewardVector(vec![4.0, 0.0, 1.0, 3.0]);
        let p = TeamPartition::blocks(2, 2).unwrap();
        assert_eq!(apply_team_transform(&p, &r).unwrap().0, vec![2.0, 2.0, 2.0, 2.0]);

        let all = TeamPartition::blocks(1, 4).unwrap();
        assert_eq!(apply_team_transform(&all, &r).unwrap().0, vec![2.0; 4]);

        let solo = TeamPartition::blocks(4, 1).unwrap();
        assert_eq!(apply_team_transform(&solo, &r).unwrap(), r);
    }

    #[test]
    fn transform_rejects_bad_vectors() {
        let p = TeamPartition::blocks(2, 2).unwrap();
        assert!(matches!(
            apply_team_transform(&p, &RewardVector(vec![1.0; 3])),
            Err(Error::RewardLength { got: 3, expected: 4 })
        ));
        assert!(matches!(
            apply_team_transform(&p, &RewardVector(vec![1.0, f64::NAN, 0.0, 0.0])),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn teammate_probability_examples() {
        let p = parse_structure("5/6", 30).unwrap();
        assert!((teammate_probability(&p, PairingMode::TeamFirst) - 0.2).abs() < 1e-15);
        assert!((teammate_probability(&p, PairingMode::UniformMatching) - 5.0 / 29.0).abs() < 1e-15);
        let common = parse_structure("1/30", 30).unwrap();
        assert_eq!(teammate_probability(&common, PairingMode::TeamFirst), 1.0);
        assert_eq!(teammate_probability(&common, PairingMode::UniformMatching), 1.0);
        let mixed = parse_structure("30/1", 30).unwrap();
        assert_eq!(teammate_probability(&mixed, PairingMode::TeamFirst), 0.0);
        assert_eq!(teammate_probability(&mixed, PairingMode::UniformMatching), 0.0);
    }

    #[test]
    fn teammate_probability_over_divisors_of_30() {
        let structures = all_structures(30);
        assert_eq!(structures.len(), 8);
        let mut last = -1.0;
        for p in &structures {
            let nu = teammate_probability(p, PairingMode::TeamFirst);
            if p.team_size() > 1 {
                assert!(nu > 0.0 && nu <= 1.0, "{p}: {nu}");
            }
            // all_structures runs from 1 team to 30 teams, so team size shrinks
            assert!(last < 0.0 || nu < last, "{p}: {nu} not below {last}");
            last = nu;
        }
    }

    fn partition_and_rewards() -> impl Strategy<Value = (TeamPartition, Vec<f64>)> {
        (1usize..7, 1usize..7).prop_flat_map(|(k, m)| {
            let p = TeamPartition::blocks(k, m).unwrap();
            (Just(p), prop::collection::vec(-100.0f64..100.0, k * m))
        })
    }

    proptest! {
        #[test]
        fn transform_conserves_total((p, r) in partition_and_rewards()) {
            let r = RewardVector(r);
            let tr = apply_team_transform(&p, &r).unwrap();
            prop_assert!((tr.sum() - r.sum()).abs() < 1e-9);
        }

        #[test]
        fn transform_is_idempotent((p, r) in partition_and_rewards()) {
            let once = apply_team_transform(&p, &RewardVector(r)).unwrap();
            let twice = apply_team_transform(&p, &once).unwrap();
            for (a, b) in once.0.iter().zip(&twice.0) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn transform_is_bounded((p, r) in partition_and_rewards()) {
            let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tr = apply_team_transform(&p, &RewardVector(r)).unwrap();
            for v in tr.0 {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn within_team_permutation_changes_nothing(
            (p, r) in partition_and_rewards(),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut permuted = r.clone();
            for members in p.teams() {
                let mut shuffled = members.clone();
                shuffled.shuffle(&mut rng);
                for (&from, &to) in members.iter().zip(&shuffled) {
                    permuted[to] = r[from];
                }
            }
            let a = apply_team_transform(&p, &RewardVector(r)).unwrap();
            let b = apply_team_transform(&p, &RewardVector(permuted)).unwrap();
            for (x, y) in a.0.iter().zip(&b.0) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
