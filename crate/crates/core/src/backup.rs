//! Exact hybrid Bellman backups over piecewise-constant functions. With
//! discrete outcomes (relative shifts and absolute jumps) the continuous
//! integral of the optimality equation collapses to a finite sum: relative
//! outcomes pull successor functions back by their shift, absolute outcomes
//! contribute a constant, and the max over actions is a tagged pointwise
//! max. No quadrature anywhere.

use std::collections::BTreeMap;

use crate::error::Error;
use crate::model::{DiscreteState, Effect, HybridProblem};
use crate::pwc::{affine_combine, pointwise_max_tagged, Pwc, Region};
use crate::{Result, VALUE_TOL};

/// Value of "no action applies here": kept out of all arithmetic, only
/// compared under max.
pub const NOT_APPLICABLE: f64 = f64::NEG_INFINITY;

/// Expected return of one action over a requested region. `q` is finite
/// exactly on the intersection of the region with the action's
/// applicability box; elsewhere it is the [`NOT_APPLICABLE`] sentinel.
pub struct QResult {
    pub action: u32,
    pub q: Pwc<f64>,
}

/// Map from successor fluent word to that successor's current value
/// function. Terminal successors map to the zero function.
pub type SuccessorValues = BTreeMap<u64, Pwc<f64>>;

fn expected_outcome_value(
    problem: &HybridProblem,
    action_id: u32,
    outcomes: &[crate::model::OutcomeBranch],
    successor_values: &SuccessorValues,
    include_reward: bool,
) -> Result<Pwc<f64>> {
    let action = &problem.actions[action_id as usize];
    let grid = problem.grid_max();
    let dims = problem.space.dims;
    let mut terms: Vec<(f64, Pwc<f64>)> = Vec::with_capacity(outcomes.len());
    for out in outcomes {
        let succ_v = successor_values.get(&out.successor.0).ok_or_else(|| {
            Error::contract(format!(
                "missing successor value for {} reached by {}",
                out.successor.to_hex(),
                action.name
            ))
        })?;
        let total = if include_reward {
            action.reward_for(out.successor, dims).overlay(succ_v, |a, b| a + b)
        } else {
            succ_v.clone()
        };
        let term = match &out.effect {
            Effect::Relative(delta) => total.shift(delta, 0.0, &grid),
            Effect::Absolute(point) => Pwc::constant(dims, total.evaluate(point, problem.xmax())?),
        };
        terms.push((out.probability, term));
    }
    let refs: Vec<(f64, &Pwc<f64>)> = terms.iter().map(|(p, t)| (*p, t)).collect();
    Ok(affine_combine(&refs, None))
}

/// Expected return of taking `action_id`, over `region`.
pub fn q_value(
    problem: &HybridProblem,
    n: DiscreteState,
    action_id: u32,
    region: &Region,
    successor_values: &SuccessorValues,
) -> Result<QResult> {
    let action = &problem.actions[action_id as usize];
    if !action.source.matches(n) {
        return Err(Error::contract(format!(
            "action {} does not match discrete state {}",
            action.name,
            n.to_hex()
        )));
    }
    let dims = problem.space.dims;
    let mut q = Pwc::constant(dims, NOT_APPLICABLE);
    for branch in &action.branches {
        // Branch regions live inside the applicability box by contract.
        let target = region.intersect_box(&branch.region);
        if target.is_empty() {
            continue;
        }
        let expected = expected_outcome_value(problem, action_id, &branch.outcomes, successor_values, true)?;
        q = q.patch(&target, &expected);
    }
    Ok(QResult { action: action_id, q })
}

/// One Bellman backup of node `n` over `region`: the tagged pointwise max
/// of all matching actions' Q functions, with value 0 and no action where
/// nothing applies. Returns `(V, policy)` defined on the whole hypercube;
/// callers patch them onto the node over `region`.
pub fn bellman_backup(
    problem: &HybridProblem,
    n: DiscreteState,
    matching_actions: &[u32],
    region: &Region,
    successor_values: &SuccessorValues,
    prev_policy: Option<&Pwc<Option<u32>>>,
) -> Result<(Pwc<f64>, Pwc<Option<u32>>)> {
    let dims = problem.space.dims;
    let mut qs = Vec::with_capacity(matching_actions.len());
    for &aid in matching_actions {
        qs.push(q_value(problem, n, aid, region, successor_values)?);
    }
    if qs.is_empty() {
        return Ok((Pwc::constant(dims, 0.0), Pwc::constant(dims, None)));
    }
    let cands: Vec<(u32, &Pwc<f64>)> = qs.iter().map(|r| (r.action, &r.q)).collect();
    let (maxf, argf) = pointwise_max_tagged(&cands, prev_policy, &problem.grid_max())?;
    // Terminal sub-regions (max is the sentinel) take value 0, no action.
    let value = maxf
        .map(|v| if *v == NOT_APPLICABLE { 0.0 } else { *v })
        .simplify(VALUE_TOL);
    let policy = maxf.overlay(&argf, |v, t| if *v == NOT_APPLICABLE { None } else { *t });
    Ok((value, policy))
}

/// One fixed-policy backup over `region`: each point follows its marked
/// action. Used by the anytime error-bound decomposition, with rewards (the
/// realized-return part) or without (the remaining-heuristic part). Points
/// of `region` with no marked action contribute `fringe_value` there.
pub fn policy_eval_backup(
    problem: &HybridProblem,
    policy: &Pwc<Option<u32>>,
    region: &Region,
    successor_values: &SuccessorValues,
    include_reward: bool,
    fringe: &Pwc<f64>,
) -> Result<Pwc<f64>> {
    let grid = problem.grid_max();
    let mut out = fringe.restrict(region, 0.0);
    let mut tags: Vec<u32> = policy.pieces().iter().filter_map(|(_, t)| *t).collect();
    if let Some(t) = policy.default_value() {
        tags.push(*t);
    }
    tags.sort_unstable();
    tags.dedup();
    for t in tags {
        let marked = policy.region_where(&grid, |m| *m == Some(t)).intersect(region);
        if marked.is_empty() {
            continue;
        }
        let action = &problem.actions[t as usize];
        for branch in &action.branches {
            let target = marked.intersect_box(&branch.region);
            if target.is_empty() {
                continue;
            }
            let expected =
                expected_outcome_value(problem, t, &branch.outcomes, successor_values, include_reward)?;
            out = out.patch(&target, &expected);
        }
    }
    Ok(out.simplify(VALUE_TOL))
}

/// Forward image: every point reachable in the successor's continuous space
/// by taking `action_id` from somewhere in `source` and landing in discrete
/// state `successor`. Relative outcomes translate boxes; absolute outcomes
/// contribute the minimal point cell.
pub fn reach_image(
    problem: &HybridProblem,
    source: &Region,
    action_id: u32,
    successor: DiscreteState,
) -> Region {
    let action = &problem.actions[action_id as usize];
    let grid = problem.grid_max();
    let mut out = Region::empty(problem.space.dims);
    for branch in &action.branches {
        let src = source.intersect_box(&branch.region);
        if src.is_empty() {
            continue;
        }
        for o in &branch.outcomes {
            if o.successor != successor || o.probability <= 0.0 {
                continue;
            }
            match &o.effect {
                Effect::Relative(delta) => {
                    for b in src.boxes() {
                        if let Some(img) = b.translate(delta).clip(&grid) {
                            out.union_box(&img);
                        }
                    }
                }
                Effect::Absolute(point) => {
                    out.union_box(&problem.point_cell(point));
                }
            }
        }
    }
    out.coalesce();
    out
}
