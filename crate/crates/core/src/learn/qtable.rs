//! Tabular Q-learning over the counterpart's team signal.

use std::io::Write;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::ipd::Action;

/// A single experience tuple for a tabular learner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition<S> {
    pub observation: S,
    pub action: usize,
    pub team_reward: f64,
    pub next_observation: S,
    pub done: bool,
}

/// Linear decay from `start` to `end` over `decay_steps`, then flat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: usize,
}

impl EpsilonSchedule {
    pub fn new(start: f64, end: f64, decay_steps: usize) -> Result<Self> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(start) || !unit(end) || end > start {
            return Err(Error::Config(format!(
                "epsilon schedule needs 1 >= start >= end >= 0, got {start} -> {end}"
            )));
        }
        Ok(EpsilonSchedule {
            start,
            end,
            decay_steps,
        })
    }

    pub fn constant(eps: f64) -> Self {
        EpsilonSchedule {
            start: eps,
            end: eps,
            decay_steps: 0,
        }
    }

    pub fn value(&self, step: usize) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for QParams {
    fn default() -> Self {
        QParams { alpha: 0.1, gamma: 0.9 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    values: Vec<[f64; 2]>,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl QTable {
    pub fn new(n_states: usize, params: QParams, epsilon: f64) -> Result<Self> {
        if !(params.alpha > 0.0 && params.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {}", params.alpha)));
        }
        if !(0.0..1.0).contains(&params.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", params.gamma)));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Config(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        Ok(QTable {
            values: vec![[0.0; 2]; n_states],
            alpha: params.alpha,
            gamma: params.gamma,
            epsilon,
        })
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, state: usize, action: Action) -> f64 {
        self.values[state][action.index()]
    }

    pub fn set(&mut self, state: usize, action: Action, value: f64) {
        self.values[state][action.index()] = value;
    }

    pub fn row(&self, state: usize) -> [f64; 2] {
        self.values[state]
    }

    pub fn max_value(&self, state: usize) -> f64 {
        let [c, d] = self.values[state];
        c.max(d)
    }

    /// Greedy action with uniform tie-breaking.
    pub fn greedy<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> Action {
        let [c, d] = self.values[state];
        if c > d {
            Action::Cooperate
        } else if d > c {
            Action::Defect
        } else {
            Action::from_index(rng.gen_range(0..2))
        }
    }

    pub fn dump_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "action", "value"])?;
        for (s, row) in self.values.iter().enumerate() {
            for a in Action::ALL {
                w.write_record([s.to_string(), a.as_char().to_string(), row[a.index()].to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("q-table", e))?;
        Ok(())
    }
}

/// Epsilon-greedy selection.
pub fn q_select(table: &QTable, state: usize, rng: &mut dyn RngCore) -> Action {
    if table.epsilon > 0.0 && rng.gen::<f64>() < table.epsilon {
        Action::from_index(rng.gen_range(0..2))
    } else {
        table.greedy(state, rng)
    }
}

/// One-step Q-learning backup towards `r + gamma * max_a' Q(s', a')`.
pub fn q_update(table: &mut QTable, t: &Transition<usize>) {
    let bootstrap = if t.done {
        0.0
    } else {
        table.gamma * table.max_value(t.next_observation)
    };
    let q = &mut table.values[t.observation][t.action];
    *q += table.alpha * (t.team_reward + bootstrap - *q);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(alpha: f64, gamma: f64, eps: f64) -> QTable {
        QTable::new(3, QParams { alpha, gamma }, eps).unwrap()
    }

    fn step(s: usize, a: Action, r: f64, next: usize) -> Transition<usize> {
        Transition {
            observation: s,
            action: a.index(),
            team_reward: r,
            next_observation: next,
            done: false,
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(QTable::new(1, QParams { alpha: 0.0, gamma: 0.5 }, 0.1).is_err());
        assert!(QTable::new(1, QParams { alpha: 1.5, gamma: 0.5 }, 0.1).is_err());
        assert!(QTable::new(1, QParams { alpha: 0.5, gamma: 1.0 }, 0.1).is_err());
        assert!(QTable::new(1, QParams { alpha: 0.5, gamma: 0.5 }, 1.1).is_err());
        assert!(EpsilonSchedule::new(0.1, 0.5, 10).is_err());
    }

    #[test]
    fn greedy_choice() {
        let mut q = table(0.1, 0.9, 0.0);
        q.set(0, Action::Cooperate, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(q_select(&q, 0, &mut rng), Action::Cooperate);
        }
    }

    #[test]
    fn full_exploration_is_a_fair_coin() {
        let mut q = table(0.1, 0.9, 1.0);
        q.set(0, Action::Defect, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let coop = (0..n)
            .filter(|_| q_select(&q, 0, &mut rng) == Action::Cooperate)
            .count();
        let f = coop as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.02, "{f}");
    }

    #[test]
    fn ties_are_broken_both_ways() {
        let q = table(0.1, 0.9, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let picks: Vec<Action> = (0..64).map(|_| q_select(&q, 1, &mut rng)).collect();
        assert!(picks.contains(&Action::Cooperate) && picks.contains(&Action::Defect));
    }

    #[test]
    fn update_examples() {
        let mut q = table(1.0, 0.0, 0.0);
        q.set(2, Action::Defect, 7.0);
        q_update(&mut q, &step(0, Action::Cooperate, 3.5, 2));
        assert_eq!(q.get(0, Action::Cooperate), 3.5);

        let mut q = table(0.5, 0.9, 0.0);
        q.set(1, Action::Cooperate, 1.0);
        q_update(&mut q, &step(0, Action::Defect, 1.0, 1));
        assert!((q.get(0, Action::Defect) - 0.95).abs() < 1e-15);

        let mut done = step(0, Action::Defect, 2.0, 1);
        done.done = true;
        let mut q = table(1.0, 0.9, 0.0);
        q.set(1, Action::Cooperate, 100.0);
        q_update(&mut q, &done);
        assert_eq!(q.get(0, Action::Defect), 2.0);
    }

    #[test]
    fn tiny_alpha_barely_moves() {
        // alpha is strictly positive by construction; the limit alpha -> 0
        // leaves the table unchanged, so the move is bounded by alpha * target
        let mut q = table(f64::MIN_POSITIVE, 0.9, 0.0);
        q.set(0, Action::Cooperate, 0.25);
        let before = q.clone();
        q_update(&mut q, &step(0, Action::Cooperate, 1.0, 1));
        assert_eq!(q.get(0, Action::Cooperate), 0.25);
        assert_eq!(q.row(1), before.row(1));
    }

    #[test]
    fn values_stay_within_discounted_bound() {
        let gamma = 0.9;
        let mut q = table(0.3, gamma, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r_max = 5.0;
        for _ in 0..20_000 {
            let s = rng.gen_range(0..3);
            let a = Action::from_index(rng.gen_range(0..2));
            let r = rng.gen_range(-r_max..=r_max);
            q_update(&mut q, &step(s, a, r, rng.gen_range(0..3)));
        }
        let bound = r_max / (1.0 - gamma);
        for s in 0..3 {
            for a in Action::ALL {
                assert!(q.get(s, a).abs() <= bound + 1e-9);
            }
        }
    }

    #[test]
    fn schedule_is_monotone_and_reaches_floor() {
        let e = EpsilonSchedule::new(1.0, 0.01, 500).unwrap();
        let mut prev = f64::INFINITY;
        for s in 0..1000 {
            let v = e.value(s);
            assert!(v <= prev);
            prev = v;
        }
        assert_eq!(e.value(0), 1.0);
        assert_eq!(e.value(500), 0.01);
        assert_eq!(e.value(999), 0.01);
        assert_eq!(EpsilonSchedule::constant(0.3).value(7), 0.3);
    }

    // With gamma = 0 and a fixed opponent the table is a contraction towards
    // the expected one-shot payoff, so the greedy action becomes the myopic
    // best response.
    #[test]
    fn myopic_best_response() {
        use crate::ipd::stage_payoff;
        let (b, c) = (5.0, 1.0);
        let mut q = QTable::new(
            1,
            QParams {
                alpha: 0.01,
                gamma: 0.0,
            },
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let a = q_select(&q, 0, &mut rng);
            // opponent cooperates 70% of the time
            let opp = if rng.gen_bool(0.7) {
                Action::Cooperate
            } else {
                Action::Defect
            };
            let (r, _) = stage_payoff(a, opp, b, c);
            q_update(&mut q, &step(0, a, r, 0));
        }
        assert_eq!(q.greedy(0, &mut rng), Action::Defect);
        let gap = q.get(0, Action::Defect) - q.get(0, Action::Cooperate);
        assert!(gap > 0.0 && (gap - c).abs() < 0.75, "{gap}");
    }

    #[test]
    fn csv_dump() {
        let mut q = table(0.1, 0.9, 0.0);
        q.set(1, Action::Defect, -0.5);
        let mut buf = Vec::new();
        q.dump_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.contains("1,D,-0.5"));
    }
}
