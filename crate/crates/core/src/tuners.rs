//! Trial bookkeeping and the three search strategies.
//!
//! The [`Oracle`] owns the trial history, the best-trial pointer and the
//! set of assignment fingerprints already proposed. A [`Tuner`] reads the
//! oracle and registers the next trial. Scores are minimized.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{expected_improvement, GaussianProcess};
use crate::hash::rng_for;
use crate::space::{Assignment, HyperSpace};

pub const MAX_DUP_RETRIES: usize = 100;
pub const MUTATION_PROB: f64 = 0.2;
pub const N_CANDIDATES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TunerError {
    #[error("unknown trial {0}")]
    UnknownTrial(usize),
    #[error("trial {id} is {status}, expected {expected}")]
    BadStatus {
        id: usize,
        status: TrialStatus,
        expected: TrialStatus,
    },
    #[error("unknown tuner `{0}`; expected random, greedy or bayesian")]
    UnknownTuner(String),
    #[error("trial {0} already exists")]
    DuplicateTrial(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Pending,
    Running,
    Completed,
    Failed,
}

impl fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pending => "pending",
            Self::Running => "running",
            Self::Completed => "completed",
            Self::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub id: usize,
    pub assignment: Assignment,
    pub status: TrialStatus,
    /// Validation score, present iff completed.
    pub score: Option<f64>,
}

impl Trial {
    /// Score used for ranking; failed and unfinished trials rank last.
    pub fn rank_score(&self) -> f64 {
        self.score.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Completed(f64),
    Failed,
}

/// What a tuner produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proposal {
    Trial(usize),
    /// No unseen assignment found within the retry budget.
    Exhausted,
    /// `max_trials` already proposed.
    BudgetSpent,
}

#[derive(Debug, Clone)]
pub struct Oracle {
    space: HyperSpace,
    trials: Vec<Trial>,
    best: Option<usize>,
    seen: HashSet<u64>,
    rng: ChaCha8Rng,
    pub max_trials: usize,
    pub max_dup_retries: usize,
}

impl Oracle {
    pub fn new(space: HyperSpace, seed: u64, max_trials: usize) -> Self {
        Self {
            space,
            trials: Vec::new(),
            best: None,
            seen: HashSet::new(),
            rng: rng_for(seed, "tuner"),
            max_trials,
            max_dup_retries: MAX_DUP_RETRIES,
        }
    }

    pub fn space(&self) -> &HyperSpace {
        &self.space
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn trial(&self, id: usize) -> Option<&Trial> {
        self.trials.iter().find(|t| t.id == id)
    }

    pub fn best(&self) -> Option<&Trial> {
        self.best.and_then(|id| self.trial(id))
    }

    pub fn is_seen(&self, a: &Assignment) -> bool {
        self.seen.contains(&a.fingerprint())
    }

    fn budget_left(&self) -> bool {
        self.trials.len() < self.max_trials
    }

    fn next_id(&self) -> usize {
        self.trials
            .iter()
            .map(|t| t.id + 1)
            .max()
            .unwrap_or(1)
            .max(1)
    }

    /// Registers a pending trial; the caller has checked the fingerprint.
    fn register(&mut self, assignment: Assignment) -> usize {
        let id = self.next_id();
        self.seen.insert(assignment.fingerprint());
        self.trials.push(Trial {
            id,
            assignment,
            status: TrialStatus::Pending,
            score: None,
        });
        id
    }

    fn trial_mut(&mut self, id: usize) -> Result<&mut Trial, TunerError> {
        self.trials
            .iter_mut()
            .find(|t| t.id == id)
            .ok_or(TunerError::UnknownTrial(id))
    }

    pub fn mark_running(&mut self, id: usize) -> Result<(), TunerError> {
        let t = self.trial_mut(id)?;
        if t.status != TrialStatus::Pending {
            return Err(TunerError::BadStatus {
                id,
                status: t.status,
                expected: TrialStatus::Pending,
            });
        }
        t.status = TrialStatus::Running;
        Ok(())
    }

    /// Records a finished trial. The best pointer moves only on strict
    /// improvement, so ties keep the earlier trial.
    pub fn report_completion(&mut self, id: usize, outcome: Outcome) -> Result<(), TunerError> {
        let t = self.trial_mut(id)?;
        if t.status != TrialStatus::Running {
            return Err(TunerError::BadStatus {
                id,
                status: t.status,
                expected: TrialStatus::Running,
            });
        }
        match outcome {
            Outcome::Completed(s) if s.is_finite() => {
                t.status = TrialStatus::Completed;
                t.score = Some(s);
            }
            _ => {
                t.status = TrialStatus::Failed;
                t.score = None;
            }
        }
        self.update_best(id);
        Ok(())
    }

    fn update_best(&mut self, id: usize) {
        let Some(score) = self.trial(id).and_then(|t| t.score) else {
            return;
        };
        let current = self.best().map_or(f64::INFINITY, Trial::rank_score);
        if score < current {
            self.best = Some(id);
        }
    }

    /// Re-inserts a finished trial from a log, e.g. to resume a search.
    pub fn restore(
        &mut self,
        id: usize,
        assignment: Assignment,
        outcome: Outcome,
    ) -> Result<(), TunerError> {
        if self.trial(id).is_some() {
            return Err(TunerError::DuplicateTrial(id));
        }
        self.seen.insert(assignment.fingerprint());
        self.trials.push(Trial {
            id,
            assignment,
            status: TrialStatus::Running,
            score: None,
        });
        self.report_completion(id, outcome)
    }

    fn completed(&self) -> impl Iterator<Item = &Trial> {
        self.trials
            .iter()
            .filter(|t| t.status == TrialStatus::Completed)
    }

    /// Draws until an unseen assignment turns up.
    fn propose_random(&mut self) -> Proposal {
        for _ in 0..=self.max_dup_retries {
            let a = self.space.sample(&mut self.rng);
            if !self.is_seen(&a) {
                return Proposal::Trial(self.register(a));
            }
        }
        Proposal::Exhausted
    }

    fn propose_greedy(&mut self, mutation_prob: f64) -> Proposal {
        let Some(base) = self.best().map(|t| t.assignment.clone()) else {
            return self.propose_random();
        };
        let searchable: Vec<String> = base
            .iter()
            .filter(|(n, _)| self.space.get(n).is_some_and(|d| d.kind.is_searchable()))
            .map(|(n, _)| n.to_string())
            .collect();
        if searchable.is_empty() {
            return Proposal::Exhausted;
        }
        for _ in 0..=self.max_dup_retries {
            let mask = mutation_mask(searchable.len(), mutation_prob, &mut self.rng);
            let chosen: HashSet<&str> = searchable
                .iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .map(|(n, _)| n.as_str())
                .collect();
            let a = self
                .space
                .resample(&base, |n| chosen.contains(n), &mut self.rng);
            if !self.is_seen(&a) {
                return Proposal::Trial(self.register(a));
            }
        }
        Proposal::Exhausted
    }

    fn propose_bayesian(&mut self, n_candidates: usize) -> Proposal {
        let n_init = initial_random_trials(self.space.encoded_dims());
        if self.trials.len() < n_init {
            return self.propose_random();
        }
        let (x, y): (Vec<Vec<f64>>, Vec<f64>) = self
            .completed()
            .map(|t| (self.space.vectorize(&t.assignment), t.rank_score()))
            .unzip();
        if x.is_empty() {
            return self.propose_random();
        }
        let gp = match GaussianProcess::fit(&x, &y) {
            Ok(gp) => gp,
            Err(e) => {
                log::warn!("surrogate fit failed ({e}); proposing at random");
                return self.propose_random();
            }
        };
        let best = y.iter().copied().fold(f64::INFINITY, f64::min);
        let mut scored: Vec<(f64, usize, Assignment)> = (0..n_candidates)
            .map(|i| {
                let a = self.space.sample(&mut self.rng);
                let (mu, sigma) = gp.predict(&self.space.vectorize(&a));
                (expected_improvement(mu, sigma, best), i, a)
            })
            .collect();
        // Highest EI first; ties go to the earliest draw.
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        match scored.into_iter().find(|(_, _, a)| !self.is_seen(a)) {
            Some((_, _, a)) => Proposal::Trial(self.register(a)),
            None => Proposal::Exhausted,
        }
    }
}

/// Number of random trials before the surrogate takes over.
pub fn initial_random_trials(dims: usize) -> usize {
    let root = (dims as f64).sqrt().ceil() as usize;
    root.max(3)
}

/// Independent Bernoulli(`p`) draws over `k` slots; when none fire, one
/// uniformly chosen slot is set instead.
pub fn mutation_mask<R: Rng + ?Sized>(k: usize, p: f64, rng: &mut R) -> Vec<bool> {
    let mut mask: Vec<bool> = (0..k).map(|_| rng.gen_bool(p)).collect();
    if k > 0 && !mask.iter().any(|&m| m) {
        mask[rng.gen_range(0..k)] = true;
    }
    mask
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tuner {
    Random,
    Greedy { mutation_prob: f64 },
    Bayesian { n_candidates: usize },
}

impl Tuner {
    pub fn greedy() -> Self {
        Self::Greedy {
            mutation_prob: MUTATION_PROB,
        }
    }

    pub fn bayesian() -> Self {
        Self::Bayesian {
            n_candidates: N_CANDIDATES,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Greedy { .. } => "greedy",
            Self::Bayesian { .. } => "bayesian",
        }
    }

    /// Proposes and registers the next trial.
    pub fn next_trial(&self, oracle: &mut Oracle) -> Proposal {
        if !oracle.budget_left() {
            return Proposal::BudgetSpent;
        }
        match *self {
            Self::Random => oracle.propose_random(),
            Self::Greedy { mutation_prob } => oracle.propose_greedy(mutation_prob),
            Self::Bayesian { n_candidates } => oracle.propose_bayesian(n_candidates),
        }
    }
}

impl FromStr for Tuner {
    type Err = TunerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "greedy" => Ok(Self::greedy()),
            "bayesian" => Ok(Self::bayesian()),
            other => Err(TunerError::UnknownTuner(other.to_string())),
        }
    }
}

impl fmt::Display for Tuner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Runs a sequential search against a closed-form objective. Returns the
/// oracle with every trial finished.
pub fn minimize(
    tuner: Tuner,
    space: HyperSpace,
    seed: u64,
    max_trials: usize,
    mut objective: impl FnMut(&Assignment) -> Option<f64>,
) -> Oracle {
    let mut oracle = Oracle::new(space, seed, max_trials);
    while let Proposal::Trial(id) = tuner.next_trial(&mut oracle) {
        oracle.mark_running(id).expect("fresh trial is pending");
        let a = oracle.trial(id).expect("registered").assignment.clone();
        let outcome = match objective(&a) {
            Some(s) => Outcome::Completed(s),
            None => Outcome::Failed,
        };
        oracle
            .report_completion(id, outcome)
            .expect("trial is running");
    }
    oracle
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{HpKind, HyperParamDecl};

    fn two_choice() -> HyperSpace {
        let mut s = HyperSpace::new();
        s.declare(HyperParamDecl::new("x", HpKind::choice([1_i64, 2])))
            .unwrap();
        s
    }

    fn run(o: &mut Oracle, id: usize, outcome: Outcome) {
        o.mark_running(id).unwrap();
        o.report_completion(id, outcome).unwrap();
    }

    #[test]
    fn completion_rules() {
        let mut o = Oracle::new(two_choice(), 1, 10);
        let Proposal::Trial(a) = Tuner::Random.next_trial(&mut o) else {
            panic!()
        };
        let Proposal::Trial(b) = Tuner::Random.next_trial(&mut o) else {
            panic!()
        };
        run(&mut o, a, Outcome::Completed(0.5));
        assert_eq!(o.best().unwrap().id, a);
        run(&mut o, b, Outcome::Completed(0.5));
        assert_eq!(o.best().unwrap().id, a);
        assert!(matches!(
            o.report_completion(99, Outcome::Failed),
            Err(TunerError::UnknownTrial(99))
        ));
    }

    #[test]
    fn failure_leaves_best_alone() {
        let mut o = Oracle::new(two_choice(), 1, 10);
        let Proposal::Trial(a) = Tuner::Random.next_trial(&mut o) else {
            panic!()
        };
        let Proposal::Trial(b) = Tuner::Random.next_trial(&mut o) else {
            panic!()
        };
        run(&mut o, a, Outcome::Completed(0.5));
        run(&mut o, b, Outcome::Failed);
        assert_eq!(o.best().unwrap().id, a);
        assert_eq!(o.trial(b).unwrap().score, None);
        assert_eq!(o.trial(b).unwrap().rank_score(), f64::INFINITY);
    }

    #[test]
    fn pigeonhole_exhausts() {
        let mut o = Oracle::new(two_choice(), 3, 10);
        let p1 = Tuner::Random.next_trial(&mut o);
        let p2 = Tuner::Random.next_trial(&mut o);
        assert!(matches!((p1, p2), (Proposal::Trial(_), Proposal::Trial(_))));
        assert_ne!(o.trials()[0].assignment, o.trials()[1].assignment);
        assert_eq!(Tuner::Random.next_trial(&mut o), Proposal::Exhausted);
    }

    #[test]
    fn budget_is_enforced() {
        let mut o = Oracle::new(two_choice(), 3, 1);
        assert!(matches!(
            Tuner::Random.next_trial(&mut o),
            Proposal::Trial(_)
        ));
        assert_eq!(Tuner::Random.next_trial(&mut o), Proposal::BudgetSpent);
    }

    #[test]
    fn initial_schedule() {
        assert_eq!(initial_random_trials(1), 3);
        assert_eq!(initial_random_trials(9), 3);
        assert_eq!(initial_random_trials(10), 4);
        assert_eq!(initial_random_trials(30), 6);
    }

    #[test]
    fn single_hp_mutation_always_resamples_it() {
        let mut rng = rng_for(0, "t");
        for _ in 0..100 {
            assert_eq!(mutation_mask(1, 0.2, &mut rng), vec![true]);
        }
    }
}
