//! Hybrid-state MDP problem definition: discrete states as fluent
//! assignments, actions with executability boxes and discrete-outcome
//! transitions, piecewise-constant arrival rewards, and a continuous
//! resource hypercube that every action strictly consumes from.
//!
//! Problems are immutable after construction and validation; solver and
//! simulator workers share them freely.

mod io;
pub mod rover;
pub mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::Error;
use crate::pwc::{BoxR, Pwc, Region};
use crate::Result;

pub use io::{problem_from_json, problem_to_json};

/// Default minimal per-step resource consumption enforced by the validator
/// when a problem does not declare its own.
pub const DEFAULT_C_MIN: f64 = 1e-3;

/// The continuous component: a hypercube `prod_i [0, max_i]` of resource
/// levels, e.g. seconds remaining and ampere-hours remaining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSpace {
    pub dims: usize,
    pub max: Vec<f64>,
}

impl ResourceSpace {
    pub fn new(max: Vec<f64>) -> Self {
        ResourceSpace { dims: max.len(), max }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims && (0..self.dims).all(|i| (0.0..=self.max[i]).contains(&x[i]))
    }

    pub fn full_region(&self) -> Region {
        Region::full(&self.max)
    }

    pub fn full_box(&self) -> BoxR {
        BoxR::new(vec![0.0; self.dims], self.max.clone())
    }
}

/// A complete assignment of the problem's Boolean fluents, packed into a
/// 64-bit word (bit `i` is fluent `i`). Goal-achieved bits occupy a
/// designated suffix of the fluent vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DiscreteState(pub u64);

impl DiscreteState {
    pub fn get(&self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn with(&self, i: usize, v: bool) -> DiscreteState {
        if v {
            DiscreteState(self.0 | 1 << i)
        } else {
            DiscreteState(self.0 & !(1 << i))
        }
    }

    pub fn to_bitstring(&self, width: usize) -> String {
        (0..width).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }

    pub fn from_bitstring(s: &str) -> Result<DiscreteState> {
        if s.len() > 64 {
            return Err(Error::domain("at most 64 fluents are supported"));
        }
        let mut bits = 0u64;
        for (i, c) in s.chars().enumerate() {
            match c {
                '1' => bits |= 1 << i,
                '0' => {}
                _ => return Err(Error::domain(format!("bad bit character {:?} in state string", c))),
            }
        }
        Ok(DiscreteState(bits))
    }

    pub fn to_hex(&self) -> String {
        format!("{:x}", self.0)
    }
}

/// A partial assignment: fluent `i` must equal bit `i` of `value` wherever
/// bit `i` of `mask` is set; other fluents are unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatePattern {
    pub mask: u64,
    pub value: u64,
}

impl StatePattern {
    pub fn exact(state: DiscreteState, width: usize) -> Self {
        let mask = if width == 64 { u64::MAX } else { (1 << width) - 1 };
        StatePattern { mask, value: state.0 & mask }
    }

    pub fn matches(&self, state: DiscreteState) -> bool {
        state.0 & self.mask == self.value & self.mask
    }
}

/// Continuous effect of one discrete outcome: a relative shift (all
/// components non-positive; consumption) or a jump to a fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Relative(Vec<f64>),
    Absolute(Vec<f64>),
}

impl Effect {
    pub fn arrival(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Effect::Relative(delta) => x.iter().zip(delta).map(|(a, d)| a + d).collect(),
            Effect::Absolute(point) => point.clone(),
        }
    }
}

/// One stochastic outcome of an action within a branch region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeBranch {
    pub probability: f64,
    pub successor: DiscreteState,
    pub effect: Effect,
}

/// A branch ties a sub-region of the applicability box to the outcome
/// distribution that holds there. Branch regions of one action are disjoint
/// and cover the applicability box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub region: BoxR,
    pub outcomes: Vec<OutcomeBranch>,
}

/// Fully specified action: source pattern, minimum-resource executability
/// box, branch-wise outcome distributions and arrival rewards keyed by
/// successor discrete state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub name: String,
    pub source: StatePattern,
    pub applicability: BoxR,
    pub branches: Vec<Branch>,
    /// Reward earned on arrival, keyed by the successor's fluent word.
    pub rewards: BTreeMap<u64, Pwc<f64>>,
}

impl ActionSpec {
    pub fn reward_for(&self, successor: DiscreteState, dims: usize) -> Pwc<f64> {
        self.rewards
            .get(&successor.0)
            .cloned()
            .unwrap_or_else(|| Pwc::constant(dims, 0.0))
    }

    /// Branch whose region owns `x`, if any.
    pub fn branch_at(&self, x: &[f64], xmax: &[f64]) -> Option<&Branch> {
        self.branches.iter().find(|b| b.region.contains(x, xmax))
    }
}

/// Ties a goal to the domain fact that makes it unattainable: once fluent
/// `flag` is set while fluent `requires` is unset, the goal's reward is
/// dropped from the heuristic sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalGuard {
    pub goal: usize,
    pub flag: usize,
    pub requires: usize,
}

/// A complete planning problem over a hybrid state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridProblem {
    pub space: ResourceSpace,
    pub fluent_names: Vec<String>,
    /// Per-goal utilities; goal `g` is fluent `width - goals + g`.
    pub goal_rewards: Vec<f64>,
    pub heuristic_guards: Vec<GoalGuard>,
    pub actions: Vec<ActionSpec>,
    pub initial_state: DiscreteState,
    pub initial_resources: Vec<f64>,
    pub c_min: f64,
}

impl HybridProblem {
    pub fn width(&self) -> usize {
        self.fluent_names.len()
    }

    pub fn goal_count(&self) -> usize {
        self.goal_rewards.len()
    }

    /// Fluent index of goal bit `g`.
    pub fn goal_fluent(&self, g: usize) -> usize {
        self.width() - self.goal_count() + g
    }

    pub fn xmax(&self) -> &[f64] {
        &self.space.max
    }

    /// Indices of actions whose source pattern matches `n`, in declaration
    /// order (resource gating not applied).
    pub fn matching_actions(&self, n: DiscreteState) -> Vec<u32> {
        self.actions
            .iter()
            .enumerate()
            .filter(|(_, a)| a.source.matches(n))
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// Exactly the actions whose pattern matches `n` and whose applicability
    /// box contains `x`. Empty iff `(n, x)` is terminal.
    pub fn executable_actions(&self, n: DiscreteState, x: &[f64]) -> Result<Vec<u32>> {
        if !self.space.contains(x) {
            return Err(Error::domain(format!("resource point {:?} outside the hypercube", x)));
        }
        Ok(self
            .actions
            .iter()
            .enumerate()
            .filter(|(_, a)| a.source.matches(n) && a.applicability.contains(x, self.xmax()))
            .map(|(i, _)| i as u32)
            .collect())
    }

    /// True iff no action is executable in `(n, x)`.
    pub fn is_terminal(&self, n: DiscreteState, x: &[f64]) -> Result<bool> {
        Ok(self.executable_actions(n, x)?.is_empty())
    }

    /// Ceiling used for region algebra: the hypercube padded upward by the
    /// point-cell width. Normalized problems stretch every box that touches
    /// the true ceiling up to this one, so the closed upper face of the
    /// hypercube and the forward images of exact points (start point,
    /// absolute arrivals) stay on ordinary half-open boundaries. Points are
    /// still validated against the true `space.max`.
    pub fn grid_max(&self) -> Vec<f64> {
        let w = self.c_min / 2.0;
        self.space.max.iter().map(|m| m + w).collect()
    }

    /// Full region under the padded ceiling.
    pub fn full_grid_region(&self) -> Region {
        Region::full(&self.grid_max())
    }

    /// Stretch every box whose upper bound sits on the true ceiling up to
    /// the padded one. Loaders and generators call this once; hand-built
    /// problems whose start point avoids the ceiling work either way.
    pub fn normalize(&mut self) {
        let max = self.space.max.clone();
        let grid = self.grid_max();
        let pad = |bx: &mut BoxR| {
            for i in 0..bx.dims() {
                if bx.hi[i] == max[i] {
                    bx.hi[i] = grid[i];
                }
            }
        };
        for action in &mut self.actions {
            pad(&mut action.applicability);
            for branch in &mut action.branches {
                pad(&mut branch.region);
            }
            for reward in action.rewards.values_mut() {
                let mut pieces: Vec<(BoxR, f64)> = reward.pieces().to_vec();
                for (bx, _) in &mut pieces {
                    pad(bx);
                }
                *reward = Pwc::from_pieces(self.space.dims, *reward.default_value(), pieces);
            }
        }
    }

    /// Region of the hypercube where `(n, ·)` is terminal: the complement of
    /// the union of the matching actions' applicability boxes.
    pub fn terminal_region(&self, n: DiscreteState) -> Region {
        let mut applicable = Region::empty(self.space.dims);
        for id in self.matching_actions(n) {
            applicable.union_box(&self.actions[id as usize].applicability);
        }
        self.full_grid_region().subtract(&applicable)
    }

    /// Wrap a point in the minimal-width cell used wherever the solver needs
    /// a point as a region: `[p, p + c_min/2)` per dimension. The point sits
    /// on the cell's closed lower face, and the padded ceiling guarantees
    /// the cell and all its forward images stay representable.
    pub fn point_cell(&self, x: &[f64]) -> BoxR {
        let w = self.c_min / 2.0;
        BoxR::new(x.to_vec(), x.iter().map(|c| c + w).collect())
    }

    pub fn action_name(&self, id: u32) -> &str {
        &self.actions[id as usize].name
    }
}

/// Pattern-match index over a problem's actions, grouped by pattern mask so
/// a lookup costs one hash probe per distinct mask instead of a scan over
/// every action. Built once per solver/oracle/simulator run.
pub struct ActionIndex {
    groups: Vec<(u64, std::collections::HashMap<u64, Vec<u32>>)>,
}

impl ActionIndex {
    pub fn new(problem: &HybridProblem) -> Self {
        let mut groups: Vec<(u64, std::collections::HashMap<u64, Vec<u32>>)> = Vec::new();
        for (i, a) in problem.actions.iter().enumerate() {
            let mask = a.source.mask;
            let entry = match groups.iter_mut().find(|(m, _)| *m == mask) {
                Some((_, map)) => map,
                None => {
                    groups.push((mask, std::collections::HashMap::new()));
                    &mut groups.last_mut().unwrap().1
                }
            };
            entry.entry(a.source.value & mask).or_default().push(i as u32);
        }
        ActionIndex { groups }
    }

    /// Ids of actions whose pattern matches `n`, ascending.
    pub fn matching(&self, n: DiscreteState) -> Vec<u32> {
        let mut out = Vec::new();
        for (mask, map) in &self.groups {
            if let Some(ids) = map.get(&(n.0 & mask)) {
                out.extend_from_slice(ids);
            }
        }
        out.sort_unstable();
        out
    }
}

/// One constraint violation found by [`validate_problem`]. Violations are
/// data, not errors; an empty report certifies the model-side hypotheses of
/// the solver's convergence argument (positive consumption bounded below,
/// normalized branch distributions, arrivals inside the hypercube).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub context: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.context, self.message)
    }
}

pub fn validate_problem(problem: &HybridProblem) -> Vec<Violation> {
    let mut report = Vec::new();
    let mut push = |context: String, message: String| report.push(Violation { context, message });

    let d = problem.space.dims;
    if d == 0 {
        push("space".into(), "at least one resource dimension is required".into());
    }
    for (i, m) in problem.space.max.iter().enumerate() {
        if !(*m > 0.0) {
            push("space".into(), format!("max[{}] = {} must be positive", i, m));
        }
    }
    if !(problem.c_min > 0.0) {
        push("c_min".into(), format!("c_min = {} must be positive", problem.c_min));
    }
    if problem.goal_count() > problem.width() {
        push("goals".into(), "more goal rewards than fluents".into());
    }
    for (g, r) in problem.goal_rewards.iter().enumerate() {
        if *r < 0.0 {
            push(format!("goal {}", g), format!("negative goal reward {}", r));
        }
    }
    if !problem.space.contains(&problem.initial_resources) {
        push("initial".into(), format!("x0 {:?} outside the hypercube", problem.initial_resources));
    }

    let grid = problem.grid_max();
    for action in &problem.actions {
        let ctx = |extra: String| format!("action {}{}", action.name, extra);
        if action.applicability.dims() != d {
            push(ctx(String::new()), "applicability box has wrong dimension".into());
            continue;
        }
        if action.applicability.clip(&grid).as_ref() != Some(&action.applicability) {
            push(ctx(String::new()), "applicability box leaves the hypercube".into());
        }

        // Branch regions: pairwise disjoint, and they cover applicability.
        let mut cover = Region::empty(d);
        for (bi, branch) in action.branches.iter().enumerate() {
            let bctx = ctx(format!(" branch {}", bi));
            if branch.region.is_empty() {
                push(bctx.clone(), "empty branch region".into());
                continue;
            }
            if !cover.intersect_box(&branch.region).is_empty() {
                push(bctx.clone(), "branch regions overlap".into());
            }
            cover.union_box(&branch.region);

            let total: f64 = branch.outcomes.iter().map(|o| o.probability).sum();
            if (total - 1.0).abs() > 1e-9 {
                push(bctx.clone(), format!("probabilities sum to {}", total));
            }
            for (oi, out) in branch.outcomes.iter().enumerate() {
                let octx = ctx(format!(" branch {} outcome {}", bi, oi));
                if !(out.probability > 0.0 && out.probability <= 1.0) {
                    push(octx.clone(), format!("probability {} outside (0, 1]", out.probability));
                }
                match &out.effect {
                    Effect::Relative(delta) => {
                        if delta.len() != d {
                            push(octx.clone(), "delta has wrong dimension".into());
                            continue;
                        }
                        if delta.iter().any(|v| *v > 0.0) {
                            push(octx.clone(), format!("positive delta component in {:?}", delta));
                        }
                        if !delta.iter().any(|v| *v <= -problem.c_min) {
                            push(octx.clone(), format!("zero consumption: delta {:?} never reaches c_min {}", delta, problem.c_min));
                        }
                        for i in 0..d {
                            if branch.region.lo[i] + delta[i] < 0.0 {
                                push(octx.clone(), format!("arrival leaves the hypercube: lo[{}] {} + delta {} < 0", i, branch.region.lo[i], delta[i]));
                            }
                        }
                    }
                    Effect::Absolute(point) => {
                        if point.len() != d {
                            push(octx.clone(), "absolute point has wrong dimension".into());
                            continue;
                        }
                        if !problem.space.contains(point) {
                            push(octx.clone(), format!("arrival leaves the hypercube: absolute point {:?}", point));
                        }
                        if point.iter().zip(&branch.region.lo).any(|(p, l)| p > l) {
                            push(octx.clone(), format!("zero consumption: absolute point {:?} can exceed region floor", point));
                        }
                        if !point.iter().zip(&branch.region.lo).any(|(p, l)| *p <= l - problem.c_min) {
                            push(octx.clone(), format!("zero consumption: absolute point {:?} never consumes c_min from region floor", point));
                        }
                    }
                }
            }
        }
        let uncovered = Region::from_box(action.applicability.clone()).subtract(&cover);
        if !uncovered.is_empty() {
            push(ctx(String::new()), format!("branch regions leave {} of the applicability box uncovered", uncovered.area()));
        }
        let outside = cover.subtract(&Region::from_box(action.applicability.clone()));
        if !outside.is_empty() {
            push(ctx(String::new()), "branch regions extend beyond the applicability box".into());
        }

        for (succ, reward) in &action.rewards {
            if reward.dims() != d {
                push(ctx(format!(" reward for {:x}", succ)), "reward function has wrong dimension".into());
            }
        }
    }
    report
}

/// Discretize a (possibly truncated) normal consumption model into
/// `buckets` equiprobable point masses. Mass below `floor` is cut away and
/// the remainder renormalized; each bucket carries the conditional mean of
/// its quantile slice, so the masses are strictly increasing and their
/// weighted mean matches the truncated distribution's mean.
pub fn discretize_normal(mean: f64, stddev: f64, buckets: usize, floor: f64) -> Result<Vec<(f64, f64)>> {
    if stddev < 0.0 {
        return Err(Error::domain(format!("negative stddev {}", stddev)));
    }
    if buckets == 0 {
        return Err(Error::domain("bucket count must be at least 1"));
    }
    if stddev == 0.0 {
        if mean <= floor {
            return Err(Error::domain(format!(
                "degenerate consumption {} does not exceed floor {}",
                mean, floor
            )));
        }
        return Ok(vec![(mean, 1.0)]);
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let alpha = (floor - mean) / stddev;
    let tail = 1.0 - std_normal.cdf(alpha);
    if tail <= 0.0 {
        return Err(Error::domain(format!(
            "no probability mass above floor {} for N({}, {})",
            floor, mean, stddev
        )));
    }
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let k = buckets;
    let mut out = Vec::with_capacity(k);
    let mut lo_z = alpha;
    let mut lo_cdf = std_normal.cdf(alpha);
    for i in 0..k {
        let hi_cdf = lo_cdf + tail / k as f64;
        let (hi_z, hi_phi) = if i == k - 1 {
            (f64::INFINITY, 0.0)
        } else {
            let z = std_normal.inverse_cdf(hi_cdf.min(1.0));
            (z, phi(z))
        };
        let slice = hi_cdf - lo_cdf;
        // Conditional mean of the standard normal on [lo_z, hi_z].
        let cond = (phi(lo_z) - hi_phi) / slice;
        out.push((mean + stddev * cond, 1.0 / k as f64));
        lo_z = hi_z;
        lo_cdf = hi_cdf;
    }
    Ok(out)
}
