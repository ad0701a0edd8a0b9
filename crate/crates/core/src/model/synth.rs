//! Randomized small problem instances for verification. Instances are valid
//! by construction, keep the goal-sum heuristic admissible (rewards are paid
//! exactly once, on goal-flip arrivals), and place every consumption value
//! on a half-unit lattice so the exact oracle's forward enumeration stays
//! small and float arithmetic on arrival points is exact.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::pwc::{BoxR, Pwc};

use super::{
    ActionSpec, Branch, DiscreteState, Effect, HybridProblem, OutcomeBranch, ResourceSpace,
    StatePattern,
};

/// Shape of a randomized instance.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub dims: usize,
    pub non_goal_fluents: usize,
    pub goals: usize,
    pub actions: usize,
    pub max_outcomes: usize,
    pub allow_absolute: bool,
    /// Permit effects that return to earlier discrete states, producing
    /// cycles in the discrete projection of the acyclic hybrid space.
    pub allow_cycles: bool,
}

impl SynthConfig {
    /// Draw a configuration from the suite's sampling ranges: 1-2 resource
    /// dimensions, at most 4 non-goal fluents, at most 2 goals, at most 3
    /// outcomes per action.
    pub fn sample(rng: &mut impl Rng) -> SynthConfig {
        SynthConfig {
            dims: rng.random_range(1..=2),
            non_goal_fluents: rng.random_range(1..=4),
            goals: rng.random_range(1..=2),
            actions: rng.random_range(4..=9),
            max_outcomes: rng.random_range(1..=3),
            allow_absolute: rng.random_bool(0.5),
            allow_cycles: rng.random_bool(0.5),
        }
    }
}

const LATTICE: f64 = 0.5;
const XMAX: f64 = 8.0;

/// Generate a random valid instance from a seed.
pub fn random_problem(seed: u64) -> HybridProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SynthConfig::sample(&mut rng);
    random_problem_with(&cfg, &mut rng)
}

/// Generate from an explicit configuration and RNG.
pub fn random_problem_with(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> HybridProblem {
    let d = cfg.dims;
    let goal_mask: u64 = ((1u64 << cfg.goals) - 1) << cfg.non_goal_fluents;
    let xmax = vec![XMAX; d];

    let fluent_names: Vec<String> = (0..cfg.non_goal_fluents)
        .map(|i| format!("f{}", i))
        .chain((0..cfg.goals).map(|g| format!("goal{}", g)))
        .collect();
    let goal_rewards: Vec<f64> = (0..cfg.goals)
        .map(|_| rng.random_range(2..=40) as f64 * 0.5)
        .collect();

    let initial = DiscreteState(rng.random_range(0..(1u64 << cfg.non_goal_fluents)));
    let mut pool: Vec<DiscreteState> = vec![initial];

    let lattice = |rng: &mut dyn RngCore, lo: f64, hi: f64| -> f64 {
        let steps_lo = (lo / LATTICE).round() as i64;
        let steps_hi = (hi / LATTICE).round() as i64;
        rng.random_range(steps_lo..=steps_hi) as f64 * LATTICE
    };

    // Exact dyadic probability composition: k parts in units of 1/8.
    let probabilities = |rng: &mut dyn RngCore, k: usize| -> Vec<f64> {
        let mut units = vec![1u32; k];
        let mut rest = 8 - k as u32;
        for i in 0..k {
            let take = if i == k - 1 { rest } else { rng.random_range(0..=rest) };
            units[i] += take;
            rest -= take;
        }
        units.into_iter().map(|u| u as f64 / 8.0).collect()
    };

    let mut actions = Vec::with_capacity(cfg.actions);
    for ai in 0..cfg.actions {
        let source = pool[rng.random_range(0..pool.len())];

        // Pin every goal bit plus a random subset of non-goal fluents.
        let mut mask = goal_mask;
        for i in 0..cfg.non_goal_fluents {
            if rng.random_bool(0.7) {
                mask |= 1 << i;
            }
        }
        let pattern = StatePattern { mask, value: source.0 & mask };

        // Optionally achieve one currently-unachieved goal.
        let unachieved: Vec<usize> = (0..cfg.goals)
            .filter(|g| !source.get(cfg.non_goal_fluents + g))
            .collect();
        let flip_goal = if !unachieved.is_empty() && rng.random_bool(0.5) {
            Some(unachieved[rng.random_range(0..unachieved.len())])
        } else {
            None
        };

        let applic_lo: Vec<f64> = (0..d).map(|_| lattice(rng, 1.0, 3.0)).collect();
        let applicability = BoxR::new(applic_lo.clone(), xmax.clone());

        // One or two branch regions splitting the applicability box.
        let split = d > 0 && rng.random_bool(0.4);
        let mut branch_boxes = vec![applicability.clone()];
        if split {
            let dim = rng.random_range(0..d);
            let t = lattice(rng, applic_lo[dim] + LATTICE, XMAX - LATTICE);
            if t > applic_lo[dim] && t < XMAX {
                let mut lo_box = applicability.clone();
                lo_box.hi[dim] = t;
                let mut hi_box = applicability.clone();
                hi_box.lo[dim] = t;
                branch_boxes = vec![lo_box, hi_box];
            }
        }

        let successor_for = |rng: &mut ChaCha8Rng, pool: &mut Vec<DiscreteState>| {
            let mut succ = if cfg.allow_cycles && pool.len() > 1 && rng.random_bool(0.3) {
                // Jump back to a known state's non-goal part.
                pool[rng.random_range(0..pool.len())]
            } else {
                source
            };
            // Flip up to two non-goal fluents.
            for _ in 0..rng.random_range(0..=2) {
                let i = rng.random_range(0..cfg.non_goal_fluents);
                succ = succ.with(i, !succ.get(i));
            }
            // Goal bits always come from the source, plus the chosen flip.
            succ = DiscreteState((succ.0 & !goal_mask) | (source.0 & goal_mask));
            if let Some(g) = flip_goal {
                succ = succ.with(cfg.non_goal_fluents + g, true);
            }
            if !pool.contains(&succ) {
                pool.push(succ);
            }
            succ
        };

        let mut branches = Vec::with_capacity(branch_boxes.len());
        let mut rewards: BTreeMap<u64, Pwc<f64>> = BTreeMap::new();
        for bbox in branch_boxes {
            let k = rng.random_range(1..=cfg.max_outcomes);
            let probs = probabilities(rng, k);
            let mut outcomes = Vec::with_capacity(k);
            for p in probs {
                let succ = successor_for(rng, &mut pool);
                let effect = if cfg.allow_absolute && rng.random_bool(0.25) {
                    let point: Vec<f64> = (0..d)
                        .map(|i| lattice(rng, 0.0, (bbox.lo[i] - LATTICE).max(0.0)))
                        .collect();
                    Effect::Absolute(point)
                } else {
                    let delta: Vec<f64> = (0..d)
                        .map(|i| -lattice(rng, LATTICE, bbox.lo[i].min(2.5)))
                        .collect();
                    Effect::Relative(delta)
                };
                if let Some(g) = flip_goal {
                    rewards
                        .entry(succ.0)
                        .or_insert_with(|| Pwc::constant(d, goal_rewards[g]));
                }
                outcomes.push(OutcomeBranch { probability: p, successor: succ, effect });
            }
            branches.push(Branch { region: bbox, outcomes });
        }

        actions.push(ActionSpec {
            name: format!("a{}", ai),
            source: pattern,
            applicability,
            branches,
            rewards,
        });
    }

    let mut problem = HybridProblem {
        space: ResourceSpace::new(xmax.clone()),
        fluent_names,
        goal_rewards,
        heuristic_guards: Vec::new(),
        actions,
        initial_state: initial,
        initial_resources: xmax,
        c_min: super::DEFAULT_C_MIN,
    };
    problem.normalize();
    problem
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_problem;

    #[test]
    fn random_instances_validate_clean() {
        for seed in 0..200 {
            let p = random_problem(seed);
            let report = validate_problem(&p);
            assert!(report.is_empty(), "seed {}: {:?}", seed, report);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(random_problem(42), random_problem(42));
        assert_ne!(random_problem(42), random_problem(43));
    }
}
