use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cleanup::{CleanupConfig, MapLayout};
use crate::error::{Error, Result};
use crate::learn::{EpsilonSchedule, PpoConfig, QParams};
use crate::team::{parse_structure, PairingMode, TeamPartition};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    #[default]
    Ipd,
    Cleanup,
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Environment::Ipd => "ipd",
            Environment::Cleanup => "cleanup",
        })
    }
}

impl FromStr for Environment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ipd" => Ok(Environment::Ipd),
            "cleanup" => Ok(Environment::Cleanup),
            other => Err(Error::Config(format!(
                "unknown environment {other:?} (expected ipd or cleanup)"
            ))),
        }
    }
}

/// Everything a run depends on. Read from a flat TOML file; every key is
/// optional and falls back to the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: Environment,
    /// Team structures as `teams/size`; `run` runs each in turn.
    pub structures: Vec<String>,
    /// Population size of the dilemma. Cleanup uses `cleanup_agents`.
    pub n_agents: usize,
    pub benefit: f64,
    pub cost: f64,
    /// Extra benefit values swept by `grid`, each paired with `cost`.
    pub grid_benefits: Vec<f64>,
    pub pairing_mode: PairingMode,
    /// Dilemma episodes per trial.
    pub episodes: usize,
    /// Cleanup environment steps per trial.
    pub timesteps: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    /// Write a detailed log for every n-th episode; 0 disables it.
    pub log_every: usize,
    /// Episodes per point of the cooperation series.
    pub coop_window: usize,
    /// Worker threads for trials; 0 lets the pool decide.
    pub threads: usize,

    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which epsilon decays.
    pub epsilon_decay_fraction: f64,

    pub map_file: Option<PathBuf>,
    pub waste_spawn_prob: f64,
    pub apple_respawn_base: f64,
    pub depletion_threshold: f64,
    pub clean_beam_length: usize,
    pub beam_width: usize,
    pub view_window: usize,
    pub episode_length: usize,
    pub punish_fine: f64,
    pub punish_cost: f64,
    pub cleanup_agents: usize,
    pub initial_waste: f64,
    pub initial_apples: f64,

    pub hidden: Vec<usize>,
    pub ppo_clip: f64,
    pub ppo_epochs: usize,
    pub ppo_minibatch: usize,
    pub ppo_discount: f64,
    pub ppo_learning_rate: f64,
    pub ppo_value_coef: f64,
    pub ppo_entropy_coef: f64,
    /// Gradient-norm cap; 0 disables it.
    pub ppo_max_grad_norm: f64,
    pub ppo_normalize_advantages: bool,
    /// Steps collected per agent between updates.
    pub rollout_length: usize,
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let cleanup = CleanupConfig::default();
        let ppo = PpoConfig::default();
        ExperimentConfig {
            environment: Environment::Ipd,
            structures: vec!["5/6".into()],
            n_agents: 30,
            benefit: 5.0,
            cost: 1.0,
            grid_benefits: vec![2.0, 5.0, 10.0],
            pairing_mode: PairingMode::TeamFirst,
            episodes: 100_000,
            timesteps: 2_000_000,
            trials: 5,
            base_seed: 0,
            output_dir: PathBuf::from("results"),
            log_every: 0,
            coop_window: 2000,
            threads: 0,

            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_fraction: 0.1,

            map_file: None,
            waste_spawn_prob: cleanup.waste_spawn_prob,
            apple_respawn_base: cleanup.apple_respawn_base,
            depletion_threshold: cleanup.depletion_threshold,
            clean_beam_length: cleanup.clean_beam_length,
            beam_width: cleanup.beam_width,
            view_window: cleanup.view_window,
            episode_length: cleanup.episode_length,
            punish_fine: cleanup.punish_fine,
            punish_cost: cleanup.punish_cost,
            cleanup_agents: cleanup.n_agents,
            initial_waste: cleanup.initial_waste,
            initial_apples: cleanup.initial_apples,

            hidden: vec![64, 64],
            ppo_clip: ppo.clip,
            ppo_epochs: ppo.epochs,
            ppo_minibatch: ppo.minibatch_size,
            ppo_discount: ppo.discount,
            ppo_learning_rate: ppo.learning_rate,
            ppo_value_coef: ppo.value_coef,
            ppo_entropy_coef: ppo.entropy_coef,
            ppo_max_grad_norm: ppo.max_grad_norm.unwrap_or(0.0),
            ppo_normalize_advantages: ppo.normalize_advantages,
            rollout_length: 1000,
            save_checkpoints: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // a relative map file is relative to the config that names it
        if let (Some(map), Some(dir)) = (&cfg.map_file, path.parent()) {
            if map.is_relative() {
                cfg.map_file = Some(dir.join(map));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Applies `key=value` overrides. Values are read as TOML literals, and
    /// fall back to plain strings, so `structures=["1/6","6/1"]`,
    /// `benefit=2` and `output_dir=out` all work.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).expect("config serialises to a table");
        for item in overrides {
            let item = item.as_ref();
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let key = key.trim();
            let value = value.trim();
            let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.to_string()));
            // structures given as a bare "a/b" string are a one-element list
            let parsed = match (key, parsed) {
                ("structures", toml::Value::String(s)) => toml::Value::Array(
                    s.split(',')
                        .map(|x| toml::Value::String(x.trim().to_string()))
                        .collect(),
                ),
                (_, v) => v,
            };
            table.insert(key.to_string(), parsed);
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override: {}", e.message())))
    }

    pub fn partitions(&self) -> Result<Vec<TeamPartition>> {
        let n = match self.environment {
            Environment::Ipd => self.n_agents,
            Environment::Cleanup => self.cleanup_agents,
        };
        self.structures.iter().map(|s| parse_structure(s, n)).collect()
    }

    pub fn epsilon_schedule(&self) -> Result<EpsilonSchedule> {
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return Err(Error::Config(format!(
                "epsilon_decay_fraction must lie in [0, 1], got {}",
                self.epsilon_decay_fraction
            )));
        }
        let steps = (self.episodes as f64 * self.epsilon_decay_fraction).round() as usize;
        EpsilonSchedule::new(self.epsilon_start, self.epsilon_end, steps)
    }

    pub fn q_params(&self) -> QParams {
        QParams {
            alpha: self.alpha,
            gamma: self.gamma,
        }
    }

    pub fn cleanup_config(&self) -> Result<CleanupConfig> {
        let layout = match &self.map_file {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|e| Error::io(path, e))?
                .parse::<MapLayout>()?,
            None => MapLayout::small(),
        };
        let cfg = CleanupConfig {
            layout,
            waste_spawn_prob: self.waste_spawn_prob,
            apple_respawn_base: self.apple_respawn_base,
            depletion_threshold: self.depletion_threshold,
            clean_beam_length: self.clean_beam_length,
            beam_width: self.beam_width,
            view_window: self.view_window,
            episode_length: self.episode_length,
            punish_fine: self.punish_fine,
            punish_cost: self.punish_cost,
            n_agents: self.cleanup_agents,
            initial_waste: self.initial_waste,
            initial_apples: self.initial_apples,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            clip: self.ppo_clip,
            epochs: self.ppo_epochs,
            minibatch_size: self.ppo_minibatch,
            discount: self.ppo_discount,
            learning_rate: self.ppo_learning_rate,
            value_coef: self.ppo_value_coef,
            entropy_coef: self.ppo_entropy_coef,
            max_grad_norm: (self.ppo_max_grad_norm > 0.0).then_some(self.ppo_max_grad_norm),
            normalize_advantages: self.ppo_normalize_advantages,
        }
    }

    /// Cleanup episodes per trial.
    pub fn cleanup_episodes(&self) -> usize {
        self.timesteps / self.episode_length.max(1)
    }

    /// Checks everything the chosen environment depends on, before any
    /// output is written.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return bad("trials must be positive".into());
        }
        if self.coop_window == 0 {
            return bad("coop_window must be positive".into());
        }
        if self.structures.is_empty() {
            return bad("no team structure given".into());
        }
        self.partitions()?;
        match self.environment {
            Environment::Ipd => {
                crate::ipd::check_payoffs(self.benefit, self.cost)?;
                for &b in &self.grid_benefits {
                    crate::ipd::check_payoffs(b, self.cost)?;
                }
                if self.episodes == 0 {
                    return bad("episodes must be positive".into());
                }
                if self.pairing_mode == PairingMode::UniformMatching && self.n_agents % 2 == 1 {
                    return Err(Error::OddPopulation(self.n_agents));
                }
                crate::learn::QTable::new(1, self.q_params(), self.epsilon_start)?;
                self.epsilon_schedule()?;
            }
            Environment::Cleanup => {
                self.cleanup_config()?;
                self.ppo_config().validate()?;
                if self.cleanup_episodes() == 0 {
                    return bad(format!(
                        "timesteps ({}) is shorter than one episode ({})",
                        self.timesteps, self.episode_length
                    ));
                }
                if self.rollout_length == 0 {
                    return bad("rollout_length must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the settings that determine the numbers, i.e. everything
    /// except where the results go and how many threads produce them.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.threads = 0;
        let text = serde_json::to_string(&canonical).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
