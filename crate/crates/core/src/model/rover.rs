//! Synthetic rover exploration domain. A rover navigates a graph of
//! locations, visually tracks rocks, and earns per-rock science rewards by
//! measuring tracked rocks at their locations. Navigation requires tracking
//! a rock that enables the path, costs more the more rocks are tracked, and
//! can randomly lose tracks; a lost rock can never be reacquired. The
//! generated problem grounds one action per (abstract action, reachable
//! discrete state) pair so each outcome's successor state is concrete.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::pwc::{BoxR, Pwc};
use crate::Result;

use super::{
    discretize_normal, ActionSpec, Branch, DiscreteState, Effect, GoalGuard, HybridProblem,
    OutcomeBranch, ResourceSpace, StatePattern,
};

/// Mean and standard deviation of one resource's consumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalSpec {
    pub mean: f64,
    pub stddev: f64,
}

/// One navigable path. `consumption[i]` is the base model for resource `i`;
/// `per_rock_surcharge[i]` is added to the mean once per tracked rock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub from: usize,
    pub to: usize,
    pub consumption: Vec<NormalSpec>,
    pub per_rock_surcharge: Vec<f64>,
    #[serde(default)]
    pub bidirectional: bool,
}

/// A rock, its science reward, the paths it enables, and the probability of
/// losing its track while traversing each path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RockSpec {
    pub location: usize,
    pub reward: f64,
    pub enabling_paths: Vec<usize>,
    #[serde(default)]
    pub loss_prob: Vec<PathLoss>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLoss {
    pub path: usize,
    pub p: f64,
}

/// Parameters for the rover problem generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoverParams {
    pub resource_max: Vec<f64>,
    pub c_min: f64,
    /// Bucket count for the normal-consumption discretization.
    pub buckets: usize,
    pub locations: usize,
    pub initial_location: usize,
    /// Rocks tracked before the rover first moves; defaults to all rocks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_tracked: Option<Vec<usize>>,
    pub paths: Vec<PathSpec>,
    pub rocks: Vec<RockSpec>,
    /// Consumption of the measurement action, per resource.
    pub measure: Vec<NormalSpec>,
    /// When present, enables deterministic stop-tracking actions with this
    /// consumption model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_tracking: Option<Vec<NormalSpec>>,
}

impl RoverParams {
    /// Two locations, one round-trip path, two rocks: R1 at the start worth
    /// 10, R2 across the path worth 20, no stop-tracking actions. Small
    /// enough to solve exactly and interesting enough to branch on both
    /// resource availability and track loss.
    pub fn two_rock_demo() -> RoverParams {
        RoverParams {
            resource_max: vec![10.0, 10.0],
            c_min: 1e-3,
            buckets: 3,
            locations: 2,
            initial_location: 0,
            initial_tracked: None,
            paths: vec![PathSpec {
                from: 0,
                to: 1,
                consumption: vec![
                    NormalSpec { mean: 2.0, stddev: 0.5 },
                    NormalSpec { mean: 1.5, stddev: 0.4 },
                ],
                per_rock_surcharge: vec![0.5, 0.3],
                bidirectional: true,
            }],
            rocks: vec![
                RockSpec {
                    location: 0,
                    reward: 10.0,
                    enabling_paths: vec![0],
                    loss_prob: vec![PathLoss { path: 0, p: 0.2 }],
                },
                RockSpec {
                    location: 1,
                    reward: 20.0,
                    enabling_paths: vec![0],
                    loss_prob: vec![PathLoss { path: 0, p: 0.3 }],
                },
            ],
            measure: vec![NormalSpec { mean: 1.0, stddev: 0.3 }, NormalSpec { mean: 0.8, stddev: 0.2 }],
            stop_tracking: None,
        }
    }

    /// An over-subscribed instance: five rocks spread over four locations
    /// with rewards that cannot all be collected on a tight budget, plus
    /// stop-tracking actions so shedding tracks is part of the trade-off.
    pub fn five_goal_demo() -> RoverParams {
        let nav = |from: usize, to: usize, t: f64, e: f64| PathSpec {
            from,
            to,
            consumption: vec![NormalSpec { mean: t, stddev: 0.25 }, NormalSpec { mean: e, stddev: 0.2 }],
            per_rock_surcharge: vec![0.3, 0.2],
            bidirectional: true,
        };
        RoverParams {
            resource_max: vec![20.0, 20.0],
            c_min: 1e-3,
            buckets: 2,
            locations: 4,
            initial_location: 0,
            initial_tracked: None,
            paths: vec![nav(0, 1, 2.0, 1.5), nav(1, 2, 2.5, 2.0), nav(2, 3, 2.0, 2.5), nav(0, 3, 3.5, 3.0)],
            rocks: vec![
                RockSpec { location: 0, reward: 4.0, enabling_paths: vec![0, 3], loss_prob: vec![] },
                RockSpec {
                    location: 1,
                    reward: 8.0,
                    enabling_paths: vec![0, 1],
                    loss_prob: vec![PathLoss { path: 1, p: 0.25 }],
                },
                RockSpec { location: 2, reward: 12.0, enabling_paths: vec![1, 2], loss_prob: vec![] },
                RockSpec { location: 3, reward: 6.0, enabling_paths: vec![2, 3], loss_prob: vec![] },
                RockSpec { location: 3, reward: 10.0, enabling_paths: vec![3], loss_prob: vec![] },
            ],
            measure: vec![NormalSpec { mean: 1.2, stddev: 0.3 }, NormalSpec { mean: 1.0, stddev: 0.25 }],
            stop_tracking: Some(vec![NormalSpec { mean: 0.2, stddev: 0.0 }, NormalSpec { mean: 0.1, stddev: 0.0 }]),
        }
    }
}

/// Fluent layout of a generated rover problem.
struct Layout {
    locations: usize,
    rocks: usize,
}

impl Layout {
    fn at(&self, loc: usize) -> usize {
        loc
    }
    fn tracked(&self, rock: usize) -> usize {
        self.locations + rock
    }
    fn moved(&self) -> usize {
        self.locations + self.rocks
    }
    fn goal(&self, rock: usize) -> usize {
        self.locations + self.rocks + 1 + rock
    }
    fn width(&self) -> usize {
        self.locations + 2 * self.rocks + 1
    }
}

fn check_params(params: &RoverParams) -> Result<()> {
    let d = params.resource_max.len();
    let err = |msg: String| Err(Error::construction(msg));
    if d == 0 || params.resource_max.iter().any(|m| !(*m > 0.0)) {
        return err("resource_max must be nonempty and positive".to_string());
    }
    if params.buckets == 0 {
        return err("buckets must be at least 1".to_string());
    }
    if !(params.c_min > 0.0) {
        return err("c_min must be positive".to_string());
    }
    if params.initial_location >= params.locations {
        return err(format!("initial location {} out of range", params.initial_location));
    }
    if params.measure.len() != d {
        return err("measure consumption must cover every resource".to_string());
    }
    if let Some(st) = &params.stop_tracking {
        if st.len() != d {
            return err("stop_tracking consumption must cover every resource".to_string());
        }
    }
    for (i, p) in params.paths.iter().enumerate() {
        if p.from >= params.locations || p.to >= params.locations || p.from == p.to {
            return err(format!("path {} endpoints out of range", i));
        }
        if p.consumption.len() != d || p.per_rock_surcharge.len() != d {
            return err(format!("path {} consumption must cover every resource", i));
        }
    }
    for (r, rock) in params.rocks.iter().enumerate() {
        if rock.location >= params.locations {
            return err(format!("rock {} at unknown location {}", r, rock.location));
        }
        if !(rock.reward > 0.0) {
            return err(format!("rock {} reward must be positive", r));
        }
        for e in &rock.enabling_paths {
            if *e >= params.paths.len() {
                return err(format!("rock {} enables unknown path {}", r, e));
            }
        }
        for l in &rock.loss_prob {
            if l.path >= params.paths.len() || !(0.0..=1.0).contains(&l.p) {
                return err(format!("rock {} has a bad loss probability entry", r));
            }
        }
        if let Some(tr) = &params.initial_tracked {
            for t in tr {
                if *t >= params.rocks.len() {
                    return err(format!("initially tracked rock {} does not exist", t));
                }
            }
        }
    }
    Ok(())
}

/// Per-resource consumption vectors for one action instance, discretized
/// into equiprobable buckets. Resources share the bucket index (a slow, hard
/// traverse costs more of everything), so the joint distribution stays at
/// `buckets` outcomes and the last bucket dominates componentwise.
fn consumption_buckets(models: &[(f64, f64)], buckets: usize, c_min: f64) -> Result<Vec<Vec<f64>>> {
    let k_eff = if models.iter().all(|(_, s)| *s == 0.0) { 1 } else { buckets };
    let mut per_resource: Vec<Vec<f64>> = Vec::with_capacity(models.len());
    for (mean, std) in models {
        let masses = discretize_normal(*mean, *std, k_eff, c_min)?;
        let mut vals: Vec<f64> = masses.iter().map(|(v, _)| *v).collect();
        if vals.len() == 1 {
            vals = vec![vals[0]; k_eff];
        }
        per_resource.push(vals);
    }
    Ok((0..k_eff)
        .map(|j| per_resource.iter().map(|vals| vals[j]).collect())
        .collect())
}

/// All loss subsets of the tracked set for a path, with probabilities.
/// Returns pairs of (lost subset bitmask over rock indices, probability);
/// zero-probability subsets are dropped.
fn loss_events(tracked: &[usize], path: usize, rocks: &[RockSpec]) -> Vec<(u64, f64)> {
    let mut events: Vec<(u64, f64)> = vec![(0, 1.0)];
    for &r in tracked {
        let p_lose = rocks[r]
            .loss_prob
            .iter()
            .find(|l| l.path == path)
            .map(|l| l.p)
            .unwrap_or(0.0);
        let mut next = Vec::with_capacity(events.len() * 2);
        for (mask, p) in &events {
            if 1.0 - p_lose > 0.0 {
                next.push((*mask, p * (1.0 - p_lose)));
            }
            if p_lose > 0.0 {
                next.push((mask | 1 << r, p * p_lose));
            }
        }
        events = next;
    }
    events
}

/// Generate the full hybrid problem for a rover instance. Actions are
/// grounded per reachable discrete state; applicability floors sit at the
/// worst-case consumption bucket so every arrival stays inside the
/// hypercube by construction.
pub fn make_rover_problem(params: &RoverParams) -> Result<HybridProblem> {
    check_params(params)?;
    let d = params.resource_max.len();
    let layout = Layout { locations: params.locations, rocks: params.rocks.len() };
    if layout.width() > 64 {
        return Err(Error::construction("instance needs more than 64 fluents"));
    }

    let mut fluent_names = Vec::with_capacity(layout.width());
    for l in 0..params.locations {
        fluent_names.push(format!("at_l{}", l));
    }
    for r in 0..params.rocks.len() {
        fluent_names.push(format!("track_r{}", r));
    }
    fluent_names.push("moved".into());
    for r in 0..params.rocks.len() {
        fluent_names.push(format!("goal_r{}", r));
    }

    let mut initial = DiscreteState(0).with(layout.at(params.initial_location), true);
    let tracked_init: Vec<usize> = params
        .initial_tracked
        .clone()
        .unwrap_or_else(|| (0..params.rocks.len()).collect());
    for &r in &tracked_init {
        initial = initial.with(layout.tracked(r), true);
    }

    // Directed traversals: (from, to, path index).
    let mut traversals = Vec::new();
    for (pi, p) in params.paths.iter().enumerate() {
        traversals.push((p.from, p.to, pi));
        if p.bidirectional {
            traversals.push((p.to, p.from, pi));
        }
    }

    let mut actions = Vec::new();
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::new();
    seen.insert(initial);
    queue.push_back(initial);

    while let Some(n) = queue.pop_front() {
        let loc = (0..params.locations)
            .find(|l| n.get(layout.at(*l)))
            .expect("exactly one location bit set");
        let tracked: Vec<usize> = (0..params.rocks.len()).filter(|r| n.get(layout.tracked(*r))).collect();
        let bits = n.to_hex();
        let mut visit = |s: DiscreteState, queue: &mut VecDeque<DiscreteState>| {
            if seen.insert(s) {
                queue.push_back(s);
            }
        };

        // Navigate along each enabled traversal.
        for &(from, to, pi) in &traversals {
            if from != loc {
                continue;
            }
            let path = &params.paths[pi];
            if !tracked.iter().any(|r| params.rocks[*r].enabling_paths.contains(&pi)) {
                continue;
            }
            let models: Vec<(f64, f64)> = (0..d)
                .map(|i| {
                    (
                        path.consumption[i].mean + path.per_rock_surcharge[i] * tracked.len() as f64,
                        path.consumption[i].stddev,
                    )
                })
                .collect();
            let buckets = consumption_buckets(&models, params.buckets, params.c_min)?;
            let worst = buckets.last().expect("at least one bucket").clone();
            if worst.iter().zip(&params.resource_max).any(|(w, m)| w >= m) {
                continue;
            }
            let losses = loss_events(&tracked, pi, &params.rocks);
            let base_succ = n.with(layout.at(from), false).with(layout.at(to), true).with(layout.moved(), true);
            let mut outcomes = Vec::with_capacity(buckets.len() * losses.len());
            let bucket_p = 1.0 / buckets.len() as f64;
            for c in &buckets {
                for (lost_mask, lp) in &losses {
                    let mut succ = base_succ;
                    for r in 0..params.rocks.len() {
                        if lost_mask >> r & 1 == 1 {
                            succ = succ.with(layout.tracked(r), false);
                        }
                    }
                    outcomes.push(OutcomeBranch {
                        probability: bucket_p * lp,
                        successor: succ,
                        effect: Effect::Relative(c.iter().map(|v| -v).collect()),
                    });
                    visit(succ, &mut queue);
                }
            }
            let applicability = BoxR::new(worst, params.resource_max.clone());
            actions.push(ActionSpec {
                name: format!("nav_l{}_l{}@{}", from, to, bits),
                source: StatePattern::exact(n, layout.width()),
                applicability: applicability.clone(),
                branches: vec![Branch { region: applicability, outcomes }],
                rewards: BTreeMap::new(),
            });
        }

        // Measure each tracked, unanalyzed rock at this location.
        for (r, rock) in params.rocks.iter().enumerate() {
            if rock.location != loc || !n.get(layout.tracked(r)) || n.get(layout.goal(r)) {
                continue;
            }
            let models: Vec<(f64, f64)> = params.measure.iter().map(|m| (m.mean, m.stddev)).collect();
            let buckets = consumption_buckets(&models, params.buckets, params.c_min)?;
            let worst = buckets.last().expect("at least one bucket").clone();
            if worst.iter().zip(&params.resource_max).any(|(w, m)| w >= m) {
                continue;
            }
            let succ = n.with(layout.goal(r), true);
            visit(succ, &mut queue);
            let bucket_p = 1.0 / buckets.len() as f64;
            let outcomes = buckets
                .iter()
                .map(|c| OutcomeBranch {
                    probability: bucket_p,
                    successor: succ,
                    effect: Effect::Relative(c.iter().map(|v| -v).collect()),
                })
                .collect();
            let applicability = BoxR::new(worst, params.resource_max.clone());
            let mut rewards = BTreeMap::new();
            rewards.insert(succ.0, Pwc::constant(d, rock.reward));
            actions.push(ActionSpec {
                name: format!("pic_r{}@{}", r, bits),
                source: StatePattern::exact(n, layout.width()),
                applicability: applicability.clone(),
                branches: vec![Branch { region: applicability, outcomes }],
                rewards,
            });
        }

        // Voluntarily drop a track.
        if let Some(stop) = &params.stop_tracking {
            for &r in &tracked {
                let models: Vec<(f64, f64)> = stop.iter().map(|m| (m.mean, m.stddev)).collect();
                let buckets = consumption_buckets(&models, params.buckets, params.c_min)?;
                let worst = buckets.last().expect("at least one bucket").clone();
                if worst.iter().zip(&params.resource_max).any(|(w, m)| w >= m) {
                    continue;
                }
                let succ = n.with(layout.tracked(r), false);
                visit(succ, &mut queue);
                let bucket_p = 1.0 / buckets.len() as f64;
                let outcomes = buckets
                    .iter()
                    .map(|c| OutcomeBranch {
                        probability: bucket_p,
                        successor: succ,
                        effect: Effect::Relative(c.iter().map(|v| -v).collect()),
                    })
                    .collect();
                let applicability = BoxR::new(worst, params.resource_max.clone());
                actions.push(ActionSpec {
                    name: format!("stop_r{}@{}", r, bits),
                    source: StatePattern::exact(n, layout.width()),
                    applicability: applicability.clone(),
                    branches: vec![Branch { region: applicability, outcomes }],
                    rewards: BTreeMap::new(),
                });
            }
        }
    }

    let heuristic_guards = (0..params.rocks.len())
        .map(|r| GoalGuard { goal: r, flag: layout.moved(), requires: layout.tracked(r) })
        .collect();

    let mut problem = HybridProblem {
        space: ResourceSpace::new(params.resource_max.clone()),
        fluent_names,
        goal_rewards: params.rocks.iter().map(|r| r.reward).collect(),
        heuristic_guards,
        actions,
        initial_state: initial,
        initial_resources: params.resource_max.clone(),
        c_min: params.c_min,
    };
    problem.normalize();
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_problem;

    #[test]
    fn two_rock_demo_has_expected_rewards() {
        let p = make_rover_problem(&RoverParams::two_rock_demo()).unwrap();
        assert_eq!(p.goal_rewards, vec![10.0, 20.0]);
        assert!(validate_problem(&p).is_empty(), "{:?}", validate_problem(&p));
    }

    #[test]
    fn deterministic_variant_validates_clean() {
        let mut params = RoverParams::two_rock_demo();
        for path in &mut params.paths {
            for c in &mut path.consumption {
                c.stddev = 0.0;
            }
        }
        for m in &mut params.measure {
            m.stddev = 0.0;
        }
        for rock in &mut params.rocks {
            rock.loss_prob.clear();
        }
        let p = make_rover_problem(&params).unwrap();
        assert!(validate_problem(&p).is_empty());
        // Every branch has a single deterministic consumption outcome.
        for a in &p.actions {
            for b in &a.branches {
                assert_eq!(b.outcomes.len(), 1);
            }
        }
    }

    #[test]
    fn zero_rocks_means_terminal_start() {
        let mut params = RoverParams::two_rock_demo();
        params.rocks.clear();
        let p = make_rover_problem(&params).unwrap();
        assert!(p.is_terminal(p.initial_state, &p.initial_resources).unwrap());
        assert!(p.actions.is_empty());
    }

    #[test]
    fn unknown_rock_location_is_rejected() {
        let mut params = RoverParams::two_rock_demo();
        params.rocks[0].location = 9;
        assert!(make_rover_problem(&params).is_err());
    }

    #[test]
    fn discrete_reachability_matches_independent_walk() {
        let params = RoverParams::two_rock_demo();
        let p = make_rover_problem(&params).unwrap();
        // States mentioned by the generated problem.
        let mut generated = BTreeSet::new();
        generated.insert(p.initial_state);
        for a in &p.actions {
            generated.insert(DiscreteState(a.source.value));
            for b in &a.branches {
                for o in &b.outcomes {
                    generated.insert(o.successor);
                }
            }
        }
        // Independent fluent-graph walk, written directly against the
        // domain rules rather than the generator's grounding loop.
        let oracle = independent_rover_walk(&params);
        assert_eq!(generated, oracle);
    }

    fn independent_rover_walk(params: &RoverParams) -> BTreeSet<DiscreteState> {
        let l = params.locations;
        let r = params.rocks.len();
        let at = |i: usize| i;
        let tr = |i: usize| l + i;
        let mv = l + r;
        let goal = |i: usize| l + r + 1 + i;

        let mut start = DiscreteState(0).with(at(params.initial_location), true);
        for i in 0..r {
            start = start.with(tr(i), true);
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![start];
        seen.insert(start);
        while let Some(n) = stack.pop() {
            let loc = (0..l).find(|i| n.get(at(*i))).unwrap();
            let mut push = |s: DiscreteState, stack: &mut Vec<DiscreteState>| {
                if seen.insert(s) {
                    stack.push(s);
                }
            };
            for (pi, p) in params.paths.iter().enumerate() {
                for (from, to) in [(p.from, p.to), (p.to, p.from)] {
                    if from != loc || (!p.bidirectional && from == p.to) {
                        continue;
                    }
                    let enabled = (0..r).any(|i| {
                        n.get(tr(i)) && params.rocks[i].enabling_paths.contains(&pi)
                    });
                    if !enabled {
                        continue;
                    }
                    let lossy: Vec<usize> = (0..r)
                        .filter(|i| {
                            n.get(tr(*i))
                                && params.rocks[*i]
                                    .loss_prob
                                    .iter()
                                    .any(|pl| pl.path == pi && pl.p > 0.0 && pl.p < 1.0)
                        })
                        .collect();
                    let certain_mask: u64 = (0..r)
                        .filter(|i| {
                            n.get(tr(*i))
                                && params.rocks[*i].loss_prob.iter().any(|pl| pl.path == pi && pl.p >= 1.0)
                        })
                        .fold(0, |m, i| m | 1 << i);
                    for subset in 0..(1u64 << lossy.len()) {
                        let mut s = n.with(at(from), false).with(at(to), true).with(mv, true);
                        for (bit, rock) in lossy.iter().enumerate() {
                            if subset >> bit & 1 == 1 {
                                s = s.with(tr(*rock), false);
                            }
                        }
                        for rock in 0..r {
                            if certain_mask >> rock & 1 == 1 {
                                s = s.with(tr(rock), false);
                            }
                        }
                        push(s, &mut stack);
                    }
                }
            }
            for (i, rock) in params.rocks.iter().enumerate() {
                if rock.location == loc && n.get(tr(i)) && !n.get(goal(i)) {
                    push(n.with(goal(i), true), &mut stack);
                }
            }
            if params.stop_tracking.is_some() {
                for i in 0..r {
                    if n.get(tr(i)) {
                        push(n.with(tr(i), false), &mut stack);
                    }
                }
            }
        }
        seen
    }
}
