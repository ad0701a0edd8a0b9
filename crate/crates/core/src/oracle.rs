//! Exact ground truth on small instances. Because outcome distributions are
//! discrete and the start point is fixed, the set of hybrid states reachable
//! from `(n0, x0)` is finite: forward enumeration collects it, backward
//! induction in increasing total-resource order values it. Strictly positive
//! consumption makes that order topological, so every successor is valued
//! before its predecessors.
//!
//! The oracle is a verification tool, not a solver; it refuses instances
//! beyond its state cap.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::Error;
use crate::model::{ActionIndex, DiscreteState, HybridProblem};
use crate::pwc::Region;
use crate::Result;

/// Default cap on enumerated hybrid states.
pub const DEFAULT_STATE_CAP: usize = 2_000_000;

/// Exact values for every hybrid state reachable from the start by any
/// action sequence (not only optimal ones).
pub struct OracleTable {
    pub states: Vec<(DiscreteState, Vec<f64>)>,
    pub values: Vec<f64>,
    pub best_action: Vec<Option<u32>>,
    index: HashMap<(u64, Vec<i64>), usize>,
}

/// Point identity for deduplication: exact fluent word plus coordinates
/// quantized at 1e-12.
fn point_key(n: DiscreteState, x: &[f64]) -> (u64, Vec<i64>) {
    (n.0, x.iter().map(|c| (c * 1e12).round() as i64).collect())
}

impl OracleTable {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn lookup(&self, n: DiscreteState, x: &[f64]) -> Option<usize> {
        self.index.get(&point_key(n, x)).copied()
    }

    pub fn value(&self, n: DiscreteState, x: &[f64]) -> Option<f64> {
        self.lookup(n, x).map(|i| self.values[i])
    }

    /// Value at the problem's start state.
    pub fn start_value(&self, problem: &HybridProblem) -> f64 {
        self.value(problem.initial_state, &problem.initial_resources)
            .expect("start state is always enumerated")
    }

    /// CSV dump: `fluents_hex,x_1..x_d,value,action`.
    pub fn to_csv(&self, problem: &HybridProblem) -> String {
        let d = problem.space.dims;
        let mut s = String::from("fluents_hex,");
        for i in 1..=d {
            let _ = write!(s, "x_{},", i);
        }
        s.push_str("value,action\n");
        let mut rows: Vec<usize> = (0..self.states.len()).collect();
        rows.sort_by(|&a, &b| {
            let (na, xa) = &self.states[a];
            let (nb, xb) = &self.states[b];
            (na.0, xa.iter().map(|c| c.to_bits()).collect::<Vec<_>>())
                .cmp(&(nb.0, xb.iter().map(|c| c.to_bits()).collect::<Vec<_>>()))
        });
        for i in rows {
            let (n, x) = &self.states[i];
            let _ = write!(s, "{},", n.to_hex());
            for c in x {
                let _ = write!(s, "{},", c);
            }
            let action = self.best_action[i]
                .map(|a| problem.action_name(a).to_string())
                .unwrap_or_else(|| "terminal".into());
            let _ = writeln!(s, "{},{}", self.values[i], action);
        }
        s
    }
}

/// Forward-enumerate every hybrid state reachable from `(n0, x0)`. Values
/// are left unset (NaN) until [`backward_induction`] runs.
pub fn enumerate_reachable(problem: &HybridProblem, x0: &[f64], cap: usize) -> Result<OracleTable> {
    if !problem.space.contains(x0) {
        return Err(Error::domain(format!("x0 {:?} outside the hypercube", x0)));
    }
    let idx = ActionIndex::new(problem);
    let xmax = problem.xmax();
    let mut table = OracleTable {
        states: Vec::new(),
        values: Vec::new(),
        best_action: Vec::new(),
        index: HashMap::new(),
    };
    let push = |table: &mut OracleTable, n: DiscreteState, x: Vec<f64>| -> Option<usize> {
        let key = point_key(n, &x);
        if table.index.contains_key(&key) {
            return None;
        }
        let id = table.states.len();
        table.states.push((n, x));
        table.values.push(f64::NAN);
        table.best_action.push(None);
        table.index.insert(key, id);
        Some(id)
    };
    push(&mut table, problem.initial_state, x0.to_vec());
    let mut frontier = vec![0usize];
    while let Some(i) = frontier.pop() {
        let (n, x) = table.states[i].clone();
        for aid in idx.matching(n) {
            let action = &problem.actions[aid as usize];
            if !action.applicability.contains(&x, xmax) {
                continue;
            }
            let branch = action
                .branch_at(&x, xmax)
                .ok_or_else(|| Error::contract(format!("action {} has no branch at {:?}", action.name, x)))?;
            for out in &branch.outcomes {
                let arrival = out.effect.arrival(&x);
                if let Some(id) = push(&mut table, out.successor, arrival) {
                    if table.states.len() > cap {
                        return Err(Error::OracleOverflow { cap });
                    }
                    frontier.push(id);
                }
            }
        }
    }
    Ok(table)
}

/// Fill optimal values and greedy actions by backward induction over the
/// enumerated set.
pub fn backward_induction(table: &mut OracleTable, problem: &HybridProblem) -> Result<()> {
    let idx = ActionIndex::new(problem);
    let xmax = problem.xmax();
    let mut order: Vec<usize> = (0..table.states.len()).collect();
    order.sort_by(|&a, &b| {
        let (na, xa) = &table.states[a];
        let (nb, xb) = &table.states[b];
        let sa: f64 = xa.iter().sum();
        let sb: f64 = xb.iter().sum();
        sa.partial_cmp(&sb)
            .unwrap()
            .then(na.0.cmp(&nb.0))
            .then_with(|| {
                xa.iter()
                    .map(|c| c.to_bits())
                    .collect::<Vec<_>>()
                    .cmp(&xb.iter().map(|c| c.to_bits()).collect::<Vec<_>>())
            })
    });
    for i in order {
        let (n, x) = table.states[i].clone();
        let mut best: Option<(f64, u32)> = None;
        for aid in idx.matching(n) {
            let action = &problem.actions[aid as usize];
            if !action.applicability.contains(&x, xmax) {
                continue;
            }
            let branch = action
                .branch_at(&x, xmax)
                .ok_or_else(|| Error::contract(format!("action {} has no branch at {:?}", action.name, x)))?;
            let mut q = 0.0;
            for out in &branch.outcomes {
                let arrival = out.effect.arrival(&x);
                let succ_v = table.value(out.successor, &arrival).ok_or_else(|| {
                    Error::contract(format!(
                        "arrival ({}, {:?}) missing from the enumerated table",
                        out.successor.to_hex(),
                        arrival
                    ))
                })?;
                if succ_v.is_nan() {
                    return Err(Error::contract(
                        "backward induction visited a successor before valuing it",
                    ));
                }
                let reward = action
                    .reward_for(out.successor, problem.space.dims)
                    .evaluate(&arrival, xmax)?;
                q += out.probability * (reward + succ_v);
            }
            if best.is_none_or(|(bv, _)| q > bv) {
                best = Some((q, aid));
            }
        }
        match best {
            Some((v, a)) => {
                table.values[i] = v;
                table.best_action[i] = Some(a);
            }
            None => {
                table.values[i] = 0.0;
                table.best_action[i] = None;
            }
        }
    }
    Ok(())
}

/// Convenience: enumerate then value.
pub fn solve_exact(problem: &HybridProblem, x0: &[f64], cap: usize) -> Result<OracleTable> {
    let mut t = enumerate_reachable(problem, x0, cap)?;
    backward_induction(&mut t, problem)?;
    Ok(t)
}

/// Count of discrete states reachable from `(n0, x0)` under the resource
/// dynamics, via forward propagation of reachable regions per discrete
/// state. Unlike the point oracle this scales with region, not state,
/// counts, so it also serves larger sweep instances.
pub fn count_reachable_discrete(problem: &HybridProblem, x0: &[f64]) -> Result<usize> {
    if !problem.space.contains(x0) {
        return Err(Error::domain(format!("x0 {:?} outside the hypercube", x0)));
    }
    let idx = ActionIndex::new(problem);
    let grid = problem.grid_max();
    let mut regions: HashMap<u64, Region> = HashMap::new();
    let start_cell = Region::from_box(problem.point_cell(x0));
    regions.insert(problem.initial_state.0, start_cell.clone());
    let mut worklist: Vec<(DiscreteState, Region)> = vec![(problem.initial_state, start_cell)];
    while let Some((n, fresh)) = worklist.pop() {
        for aid in idx.matching(n) {
            let action = &problem.actions[aid as usize];
            for branch in &action.branches {
                let src = fresh.intersect_box(&branch.region);
                if src.is_empty() {
                    continue;
                }
                for out in &branch.outcomes {
                    let image = match &out.effect {
                        crate::model::Effect::Relative(delta) => Region::from_boxes(
                            src.dims(),
                            src.boxes().iter().filter_map(|b| b.translate(delta).clip(&grid)),
                        ),
                        crate::model::Effect::Absolute(point) => {
                            Region::from_box(problem.point_cell(point))
                        }
                    };
                    let have = regions.entry(out.successor.0).or_insert_with(|| Region::empty(src.dims()));
                    let added = image.subtract(have);
                    if !added.is_empty() {
                        have.union_with(&added);
                        worklist.push((out.successor, added));
                    }
                }
            }
        }
    }
    Ok(regions.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rover::{make_rover_problem, RoverParams};
    use crate::model::{
        ActionSpec, Branch, DiscreteState, Effect, OutcomeBranch, ResourceSpace, StatePattern,
    };
    use crate::pwc::{BoxR, Pwc};
    use std::collections::BTreeMap;

    fn chain(consumption: f64, min_level: f64) -> HybridProblem {
        let step = ActionSpec {
            name: "step".into(),
            source: StatePattern { mask: 0, value: 0 },
            applicability: BoxR::new(vec![min_level], vec![10.0]),
            branches: vec![Branch {
                region: BoxR::new(vec![min_level], vec![10.0]),
                outcomes: vec![OutcomeBranch {
                    probability: 1.0,
                    successor: DiscreteState(0),
                    effect: Effect::Relative(vec![-consumption]),
                }],
            }],
            rewards: BTreeMap::new(),
        };
        HybridProblem {
            space: ResourceSpace::new(vec![10.0]),
            fluent_names: vec!["f".into()],
            goal_rewards: vec![],
            heuristic_guards: vec![],
            actions: vec![step],
            initial_state: DiscreteState(0),
            initial_resources: vec![10.0],
            c_min: 1e-3,
        }
    }

    #[test]
    fn terminal_initial_state_enumerates_itself() {
        let p = chain(3.0, 3.0);
        let t = enumerate_reachable(&p, &[1.0], DEFAULT_STATE_CAP).unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn one_dimensional_chain_points() {
        // delta = -3 from 10 with applicability >= 3: 10, 7, 4, 1 and stop.
        let p = chain(3.0, 3.0);
        let t = enumerate_reachable(&p, &[10.0], DEFAULT_STATE_CAP).unwrap();
        assert_eq!(t.len(), 4);
        let mut pts: Vec<f64> = t.states.iter().map(|(_, x)| x[0]).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(pts, vec![1.0, 4.0, 7.0, 10.0]);
    }

    #[test]
    fn overflow_is_loud() {
        let p = chain(0.01, 0.01);
        assert!(matches!(
            enumerate_reachable(&p, &[10.0], 100),
            Err(Error::OracleOverflow { cap: 100 })
        ));
    }

    #[test]
    fn all_terminal_table_is_zero() {
        let p = chain(3.0, 3.0);
        let mut t = enumerate_reachable(&p, &[2.0], DEFAULT_STATE_CAP).unwrap();
        backward_induction(&mut t, &p).unwrap();
        assert_eq!(t.values, vec![0.0]);
        assert_eq!(t.best_action, vec![None]);
    }

    #[test]
    fn two_step_chain_sums_rewards() {
        // Two discrete states; step1 pays 5 and flips the bit, step2 pays 3.
        let mut rewards1 = BTreeMap::new();
        rewards1.insert(1, Pwc::constant(1, 5.0));
        let mut rewards2 = BTreeMap::new();
        rewards2.insert(0, Pwc::constant(1, 3.0));
        let actions = vec![
            ActionSpec {
                name: "first".into(),
                source: StatePattern { mask: 1, value: 0 },
                applicability: BoxR::new(vec![3.0], vec![10.0]),
                branches: vec![Branch {
                    region: BoxR::new(vec![3.0], vec![10.0]),
                    outcomes: vec![OutcomeBranch {
                        probability: 1.0,
                        successor: DiscreteState(1),
                        effect: Effect::Relative(vec![-2.0]),
                    }],
                }],
                rewards: rewards1,
            },
            ActionSpec {
                name: "second".into(),
                source: StatePattern { mask: 1, value: 1 },
                applicability: BoxR::new(vec![6.0], vec![10.0]),
                branches: vec![Branch {
                    region: BoxR::new(vec![6.0], vec![10.0]),
                    outcomes: vec![OutcomeBranch {
                        probability: 1.0,
                        successor: DiscreteState(0),
                        effect: Effect::Relative(vec![-6.0]),
                    }],
                }],
                rewards: rewards2,
            },
        ];
        let p = HybridProblem {
            space: ResourceSpace::new(vec![10.0]),
            fluent_names: vec!["phase".into()],
            goal_rewards: vec![],
            heuristic_guards: vec![],
            actions,
            initial_state: DiscreteState(0),
            initial_resources: vec![10.0],
            c_min: 1e-3,
        };
        let t = solve_exact(&p, &[10.0], DEFAULT_STATE_CAP).unwrap();
        assert_eq!(t.start_value(&p), 8.0);
    }

    fn deterministic_toy() -> HybridProblem {
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
        make_rover_problem(&params).unwrap()
    }

    #[test]
    fn deterministic_toy_counts_match_independent_dfs() {
        let p = deterministic_toy();
        let t = enumerate_reachable(&p, &p.initial_resources, DEFAULT_STATE_CAP).unwrap();
        let independent = dfs_count(&p);
        assert_eq!(t.len(), independent);
    }

    #[test]
    fn deterministic_toy_value_is_thirty() {
        let p = deterministic_toy();
        let t = solve_exact(&p, &p.initial_resources, DEFAULT_STATE_CAP).unwrap();
        assert!((t.start_value(&p) - 30.0).abs() < 1e-9, "{}", t.start_value(&p));
    }

    /// Independent recursive enumeration, coded separately from the
    /// breadth-first loop in `enumerate_reachable`.
    fn dfs_count(p: &HybridProblem) -> usize {
        use std::collections::BTreeSet;
        fn go(
            p: &HybridProblem,
            n: DiscreteState,
            x: &[f64],
            seen: &mut BTreeSet<(u64, Vec<i64>)>,
        ) {
            let key = (n.0, x.iter().map(|c| (c * 1e12).round() as i64).collect());
            if !seen.insert(key) {
                return;
            }
            for aid in p.executable_actions(n, x).unwrap() {
                let a = &p.actions[aid as usize];
                let b = a.branch_at(x, p.xmax()).unwrap();
                for o in &b.outcomes {
                    let arr = o.effect.arrival(x);
                    go(p, o.successor, &arr, seen);
                }
            }
        }
        let mut seen = BTreeSet::new();
        go(p, p.initial_state, &p.initial_resources, &mut seen);
        seen.len()
    }

    #[test]
    fn reachable_discrete_count_on_chain() {
        let p = chain(3.0, 3.0);
        assert_eq!(count_reachable_discrete(&p, &[10.0]).unwrap(), 1);
    }
}
