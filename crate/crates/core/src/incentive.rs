//! Stage-game incentives under team structure.
//!
//! With probability `nu` the counterpart is a teammate. The expected
//! utilities of cooperating and defecting differ by
//! `nu (b - c) / 2 - (1 - nu) c`, whatever the counterpart's strategy, so
//! cooperation is the incentivized action exactly when
//! `nu >= 2c / (b + c)`.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipd::check_payoffs;
use crate::team::{parse_structure, teammate_probability, PairingMode, TeamPartition};

/// Cooperation probabilities of the counterpart towards a teammate and
/// towards a member of another team.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrategyProfile {
    pub sigma_teammate: f64,
    pub sigma_other: f64,
}

impl StrategyProfile {
    pub fn new(sigma_teammate: f64, sigma_other: f64) -> Result<Self> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(sigma_teammate) || !unit(sigma_other) {
            return Err(Error::Config(format!(
                "strategy probabilities must lie in [0, 1], got ({sigma_teammate}, {sigma_other})"
            )));
        }
        Ok(StrategyProfile {
            sigma_teammate,
            sigma_other,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Incentive {
    Cooperate,
    Defect,
}

impl Incentive {
    pub fn as_str(self) -> &'static str {
        match self {
            Incentive::Cooperate => "cooperate",
            Incentive::Defect => "defect",
        }
    }
}

pub fn expected_utility_cooperate(nu: f64, sigma: StrategyProfile, b: f64, c: f64) -> f64 {
    nu * (b - c) * (sigma.sigma_teammate + 1.0) / 2.0 + (1.0 - nu) * (sigma.sigma_other * b - c)
}

pub fn expected_utility_defect(nu: f64, sigma: StrategyProfile, b: f64, c: f64) -> f64 {
    nu * sigma.sigma_teammate * (b - c) / 2.0 + (1.0 - nu) * sigma.sigma_other * b
}

/// Smallest teammate probability at which cooperating is incentivized.
pub fn cooperation_threshold(b: f64, c: f64) -> Result<f64> {
    check_payoffs(b, c)?;
    Ok(2.0 * c / (b + c))
}

// Margins this close to zero are rounding residue of an exact tie.
const TIE_EPS: f64 = 1e-12;

/// `nu - 2c/(b+c)`; non-negative means cooperation is incentivized.
pub fn incentive_margin(nu: f64, b: f64, c: f64) -> Result<f64> {
    let margin = nu - cooperation_threshold(b, c)?;
    Ok(if margin.abs() < TIE_EPS { 0.0 } else { margin })
}

pub fn incentivized_action(margin: f64) -> Incentive {
    if margin >= 0.0 {
        Incentive::Cooperate
    } else {
        Incentive::Defect
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IncentiveEntry {
    pub structure: String,
    pub b: f64,
    pub c: f64,
    pub nu: f64,
    pub margin: f64,
    pub incentivized_action: Incentive,
}

impl IncentiveEntry {
    pub fn new(partition: &TeamPartition, b: f64, c: f64, nu: f64) -> Result<Self> {
        let margin = incentive_margin(nu, b, c)?;
        Ok(IncentiveEntry {
            structure: partition.notation(),
            b,
            c,
            nu,
            margin,
            incentivized_action: incentivized_action(margin),
        })
    }
}

/// Options for [`incentive_table`].
#[derive(Clone, Debug)]
pub struct TableOptions {
    pub n_agents: usize,
    /// Keep the `1/N` and `N/1` structures if they are in the list.
    pub include_bookends: bool,
    pub pairing_mode: PairingMode,
    /// Fixed teammate probability for every structure (sensitivity studies).
    pub nu_override: Option<f64>,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            n_agents: 30,
            include_bookends: false,
            pairing_mode: PairingMode::TeamFirst,
            nu_override: None,
        }
    }
}

/// One entry per `(structure, (b, c))`, ordered by payoff pair and then by
/// structure as given.
pub fn incentive_table(
    structures: &[&str],
    bc_pairs: &[(f64, f64)],
    opts: &TableOptions,
) -> Result<Vec<IncentiveEntry>> {
    let n = opts.n_agents;
    let mut partitions = Vec::with_capacity(structures.len());
    for s in structures {
        let p = parse_structure(s, n)?;
        let bookend = p.num_teams() == 1 || p.team_size() == 1;
        if opts.include_bookends || !bookend {
            partitions.push(p);
        }
    }
    let mut entries = Vec::with_capacity(partitions.len() * bc_pairs.len());
    for &(b, c) in bc_pairs {
        for p in &partitions {
            let nu = opts
                .nu_override
                .unwrap_or_else(|| teammate_probability(p, opts.pairing_mode));
            entries.push(IncentiveEntry::new(p, b, c, nu)?);
        }
    }
    Ok(entries)
}

pub fn count_defect(entries: &[IncentiveEntry]) -> usize {
    entries
        .iter()
        .filter(|e| e.incentivized_action == Incentive::Defect)
        .count()
}

pub const INCENTIVE_CSV_HEADER: [&str; 6] = ["structure", "b", "c", "nu", "margin", "incentivized_action"];

pub fn write_csv<W: Write>(entries: &[IncentiveEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(INCENTIVE_CSV_HEADER)?;
    for e in entries {
        w.write_record([
            e.structure.clone(),
            e.b.to_string(),
            e.c.to_string(),
            e.nu.to_string(),
            e.margin.to_string(),
            e.incentivized_action.as_str().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("incentive table", e))?;
    Ok(())
}

/// Aligned text table: one row per structure, one margin column per
/// benefit, highest benefit first.
pub fn render_text(entries: &[IncentiveEntry]) -> String {
    let mut benefits: Vec<(f64, f64)> = Vec::new();
    let mut structures: Vec<String> = Vec::new();
    for e in entries {
        if !benefits.contains(&(e.b, e.c)) {
            benefits.push((e.b, e.c));
        }
        if !structures.contains(&e.structure) {
            structures.push(e.structure.clone());
        }
    }
    benefits.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.total_cmp(&y.1)));

    let mut out = String::new();
    let _ = write!(out, "{:<10}{:>8}", "structure", "nu");
    for (b, c) in &benefits {
        let _ = write!(out, "{:>16}", format!("b={b},c={c}"));
    }
    out.push('\n');
    for s in &structures {
        let nu = entries
            .iter()
            .find(|e| &e.structure == s)
            .map(|e| e.nu)
            .unwrap_or(f64::NAN);
        let _ = write!(out, "{:<10}{:>8.4}", s, nu);
        for (b, c) in &benefits {
            match entries.iter().find(|e| &e.structure == s && e.b == *b && e.c == *c) {
                Some(e) => {
                    let tag = match e.incentivized_action {
                        Incentive::Cooperate => 'C',
                        Incentive::Defect => 'D',
                    };
                    let _ = write!(out, "{:>16}", format!("{:+.4} {}", e.margin, tag));
                }
                None => {
                    let _ = write!(out, "{:>16}", "-");
                }
            }
        }
        out.push('\n');
    }
    let defect = count_defect(entries);
    let _ = writeln!(
        out,
        "defection incentivized in {} of {} scenarios",
        defect,
        entries.len()
    );
    out
}

/// The six intermediate structures of a 30-agent population.
pub const INTERMEDIATE_30: [&str; 6] = ["2/15", "3/10", "5/6", "6/5", "10/3", "15/2"];
