use std::collections::HashSet;

use proptest::prelude::*;
use recsearch::gp::expected_improvement;
use recsearch::hash::rng_for;
use recsearch::space::{Assignment, HpKind, HyperParamDecl, HyperSpace};
use recsearch::tuners::{
    initial_random_trials, minimize, mutation_mask, Oracle, Outcome, Proposal, TrialStatus, Tuner,
    MUTATION_PROB,
};

fn five_hp_space() -> HyperSpace {
    let mut s = HyperSpace::new();
    s.declare(HyperParamDecl::new("kind", HpKind::choice(["a", "b", "c"])))
        .unwrap();
    s.declare(HyperParamDecl::new(
        "depth",
        HpKind::IntRange {
            lo: 1,
            hi: 8,
            step: 1,
        },
    ))
    .unwrap();
    s.declare(HyperParamDecl::new(
        "lr",
        HpKind::FloatRange {
            lo: 1e-4,
            hi: 1e-1,
            log: true,
        },
    ))
    .unwrap();
    s.declare(HyperParamDecl::new("flag", HpKind::Bool))
        .unwrap();
    s.declare(HyperParamDecl::new("width", HpKind::choice([8_i64, 16, 32])).when("kind", "b"))
        .unwrap();
    s
}

fn quadratic_space() -> HyperSpace {
    let mut s = HyperSpace::new();
    s.declare(HyperParamDecl::new(
        "x",
        HpKind::FloatRange {
            lo: 0.0,
            hi: 1.0,
            log: false,
        },
    ))
    .unwrap();
    s
}

fn quadratic(a: &Assignment) -> Option<f64> {
    Some((a.float("x").unwrap() - 0.3).powi(2))
}

/// A smooth objective over the mixed space; fails when `depth == 8`.
fn mixed_objective(a: &Assignment) -> Option<f64> {
    let depth = a.int("depth").unwrap();
    if depth == 8 {
        return None;
    }
    let lr = a.float("lr").unwrap().log10();
    let kind = match a.str("kind").unwrap() {
        "a" => 0.0,
        "b" => 0.3,
        _ => 0.6,
    };
    Some(
        (lr + 2.0).powi(2)
            + 0.1 * (depth as f64 - 3.0).abs()
            + kind
            + f64::from(u8::from(a.bool("flag").unwrap())),
    )
}

fn best_after(oracle: &Oracle, n: usize) -> f64 {
    oracle.trials()[..n]
        .iter()
        .filter_map(|t| t.score)
        .fold(f64::INFINITY, f64::min)
}

const TUNERS: [&str; 3] = ["random", "greedy", "bayesian"];

#[test]
fn random_trials_have_distinct_fingerprints() {
    let o = minimize(Tuner::Random, five_hp_space(), 3, 10, mixed_objective);
    assert_eq!(o.trials().len(), 10);
    let keys: Vec<String> = o
        .trials()
        .iter()
        .map(|t| t.assignment.canonical_key())
        .collect();
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            assert_ne!(keys[i], keys[j]);
        }
    }
}

#[test]
fn no_tuner_repeats_an_assignment() {
    for name in TUNERS {
        let o = minimize(
            name.parse().unwrap(),
            five_hp_space(),
            5,
            30,
            mixed_objective,
        );
        let keys: HashSet<String> = o
            .trials()
            .iter()
            .map(|t| t.assignment.canonical_key())
            .collect();
        assert_eq!(keys.len(), o.trials().len(), "{name}");
    }
}

#[test]
fn fixed_seed_reproduces_every_tuner() {
    for name in TUNERS {
        let run = || {
            minimize(
                name.parse().unwrap(),
                five_hp_space(),
                42,
                15,
                mixed_objective,
            )
            .trials()
            .iter()
            .map(|t| {
                (
                    t.id,
                    t.assignment.canonical_key(),
                    t.score.map(f64::to_bits),
                )
            })
            .collect::<Vec<_>>()
        };
        assert_eq!(run(), run(), "{name}");
    }
}

#[test]
fn best_is_a_monotone_record() {
    for name in TUNERS {
        let tuner: Tuner = name.parse().unwrap();
        let mut o = Oracle::new(five_hp_space(), 9, 25);
        let mut record = f64::INFINITY;
        while let Proposal::Trial(id) = tuner.next_trial(&mut o) {
            o.mark_running(id).unwrap();
            let a = o.trial(id).unwrap().assignment.clone();
            let outcome = mixed_objective(&a).map_or(Outcome::Failed, Outcome::Completed);
            o.report_completion(id, outcome).unwrap();
            let best = o.best().map_or(f64::INFINITY, |t| t.score.unwrap());
            assert!(
                best <= record,
                "{name}: record went from {record} to {best}"
            );
            record = best;
            let min = o
                .trials()
                .iter()
                .filter_map(|t| t.score)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(best, min);
        }
        assert_eq!(o.trials().len(), 25);
    }
}

#[test]
fn failed_trials_count_against_the_budget() {
    let o = minimize(Tuner::bayesian(), five_hp_space(), 2, 20, |a| {
        if a.int("depth").unwrap() > 4 {
            None
        } else {
            mixed_objective(a)
        }
    });
    assert_eq!(o.trials().len(), 20);
    assert!(o.trials().iter().any(|t| t.status == TrialStatus::Failed));
    assert!(o
        .trials()
        .iter()
        .all(|t| t.status != TrialStatus::Failed || t.score.is_none()));
}

#[test]
fn out_of_order_completion() {
    let mut o = Oracle::new(quadratic_space(), 1, 10);
    let ids: Vec<usize> = (0..3)
        .map(|_| match Tuner::Random.next_trial(&mut o) {
            Proposal::Trial(id) => id,
            other => panic!("{other:?}"),
        })
        .collect();
    for &id in &ids {
        o.mark_running(id).unwrap();
    }
    // Pending and running trials take part in dedup.
    assert!(o.is_seen(&o.trial(ids[0]).unwrap().assignment.clone()));
    o.report_completion(ids[2], Outcome::Completed(0.5))
        .unwrap();
    o.report_completion(ids[0], Outcome::Completed(0.2))
        .unwrap();
    o.report_completion(ids[1], Outcome::Completed(0.2))
        .unwrap();
    assert_eq!(o.best().unwrap().id, ids[0]);
}

#[test]
fn greedy_without_history_is_random() {
    let mut g = Oracle::new(five_hp_space(), 77, 5);
    let mut r = Oracle::new(five_hp_space(), 77, 5);
    Tuner::greedy().next_trial(&mut g);
    Tuner::Random.next_trial(&mut r);
    assert_eq!(g.trials()[0].assignment, r.trials()[0].assignment);
}

#[test]
fn greedy_mutates_the_best_trial() {
    let o = minimize(Tuner::greedy(), five_hp_space(), 4, 12, mixed_objective);
    // Every proposal after the first completion starts from the best so far,
    // so it shares at least one searchable value with some earlier trial.
    for (i, t) in o.trials().iter().enumerate().skip(1) {
        let shares = o.trials()[..i].iter().any(|p| {
            t.assignment
                .iter()
                .any(|(n, v)| p.assignment.get(n) == Some(v))
        });
        assert!(shares, "trial {} is unrelated to its predecessors", t.id);
    }
}

#[test]
fn mutation_count_matches_the_forced_bernoulli_mean() {
    let mut rng = rng_for(0, "mask");
    for k in [1usize, 2, 3, 5, 10, 20, 30] {
        let n = 10_000;
        let total: usize = (0..n)
            .map(|_| {
                mutation_mask(k, MUTATION_PROB, &mut rng)
                    .iter()
                    .filter(|&&m| m)
                    .count()
            })
            .sum();
        let mean = total as f64 / n as f64;
        // Each slot fires with p; when none fires exactly one is forced.
        let exact = MUTATION_PROB * k as f64 + (1.0 - MUTATION_PROB).powi(k as i32);
        assert!(
            (mean - exact).abs() <= 0.05 * exact,
            "k={k}: {mean} vs {exact}"
        );
        if k >= 15 {
            let approx = (0.2 * k as f64).max(1.0);
            assert!(
                (mean - approx).abs() <= 0.05 * approx,
                "k={k}: {mean} vs {approx}"
            );
        }
    }
}

#[test]
fn bayesian_schedule_and_exhaustion() {
    assert_eq!(initial_random_trials(1), 3);
    assert_eq!(initial_random_trials(9), 3);
    assert_eq!(initial_random_trials(10), 4);

    let mut s = HyperSpace::new();
    s.declare(HyperParamDecl::new("x", HpKind::choice([1_i64, 2])))
        .unwrap();
    let o = minimize(Tuner::bayesian(), s, 0, 10, |a| {
        Some(a.int("x").unwrap() as f64)
    });
    assert_eq!(o.trials().len(), 2);

    // The first trials match a random search with the same seed.
    let n = initial_random_trials(five_hp_space().encoded_dims());
    let b = minimize(Tuner::bayesian(), five_hp_space(), 6, n, mixed_objective);
    let r = minimize(Tuner::Random, five_hp_space(), 6, n, mixed_objective);
    let keys = |o: &Oracle| {
        o.trials()
            .iter()
            .map(|t| t.assignment.canonical_key())
            .collect::<Vec<_>>()
    };
    assert_eq!(keys(&b), keys(&r));
}

/// Seeds out of ten where the Bayesian best after 20 trials is no worse
/// than the random-search best with the same budget.
fn bayesian_wins() -> usize {
    (0..10)
        .filter(|&seed| {
            let b = minimize(Tuner::bayesian(), quadratic_space(), seed, 20, quadratic);
            let r = minimize(Tuner::Random, quadratic_space(), seed + 1000, 20, quadratic);
            best_after(&b, 20) <= best_after(&r, 20)
        })
        .count()
}

#[test]
fn bayesian_beats_random_on_the_quadratic() {
    let wins = bayesian_wins();
    assert!(wins >= 7, "bayesian won {wins}/10");
}

proptest! {
    #[test]
    fn ei_is_nonnegative(mu in -10.0f64..10.0, sigma in 0.0f64..5.0, best in -10.0f64..10.0) {
        prop_assert!(expected_improvement(mu, sigma, best) >= 0.0);
    }
}

#[test]
fn ei_grows_with_sigma_at_the_incumbent() {
    let mut last = expected_improvement(0.5, 0.0, 0.5);
    for i in 1..=200 {
        let ei = expected_improvement(0.5, i as f64 * 0.05, 0.5);
        assert!(ei > last);
        last = ei;
    }
}
