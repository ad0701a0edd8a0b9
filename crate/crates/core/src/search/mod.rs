//! The heuristic search solver. The explicit AND/OR graph keeps one node per
//! discrete state; each node carries piecewise-constant value, policy and
//! open/closed/reachable bookkeeping over the resource hypercube. Search
//! interleaves three phases until no reachable open region remains:
//!
//! 1. depth-k expansion of every reachable open region on the fringe of the
//!    current best partial policy (k = the expansion horizon; unbounded k
//!    degenerates to exhaustive forward exploration),
//! 2. value updates over the touched nodes and their marked-edge ancestors,
//!    processed per strongly connected component of that subgraph in
//!    reverse topological order — cycles in the discrete projection of the
//!    acyclic hybrid space ("phantom loops") converge by fixpoint iteration
//!    because resources strictly decrease around any cycle,
//! 3. recomputation of reachability under the freshly marked policy.
//!
//! With an admissible heuristic the value at the start state is an upper
//! bound on the optimum at every iteration, and equals it on termination.
//! Early stops stay useful: the value decomposes into realized return under
//! the greedy policy (`g`) plus remaining heuristic mass (`h`), and `h` at
//! the start state bounds the regret of executing the current policy with a
//! zero-reward done action at its fringe.

pub mod scc;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backup::{bellman_backup, policy_eval_backup, reach_image, SuccessorValues};
use crate::error::Error;
use crate::model::{validate_problem, ActionIndex, DiscreteState, HybridProblem};
use crate::pwc::{BoxR, Pwc, Region};
use crate::{Result, VALUE_TOL};

pub use scc::scc_decompose;

/// Goal-sum heuristic: total reward of goals not yet achieved in `n`,
/// excluding goals whose guard says they have become unattainable (for the
/// rover: the flag fluent "moved" is set while the rock's track is lost).
/// Constant over the resource hypercube and admissible when every reward in
/// the problem is a once-only goal utility.
pub fn heuristic_value(problem: &HybridProblem, n: DiscreteState) -> f64 {
    let mut h = 0.0;
    'goals: for g in 0..problem.goal_count() {
        if n.get(problem.goal_fluent(g)) {
            continue;
        }
        for guard in &problem.heuristic_guards {
            if guard.goal == g && n.get(guard.flag) && !n.get(guard.requires) {
                continue 'goals;
            }
        }
        h += problem.goal_rewards[g];
    }
    h
}

/// Solver knobs. `expansion_horizon: None` expands to unbounded depth
/// (exhaustive forward exploration before the first value update).
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub expansion_horizon: Option<usize>,
    /// Back up one bounding hyper-rectangle per node covering all regions
    /// expanded this iteration (from the zero floor), caching the pieces so
    /// later-expanded regions reuse them while their successors are
    /// unchanged. Disable for the pure heuristic-search variant.
    pub multiregion: bool,
    /// Override the problem's initial resource point.
    pub x0: Option<Vec<f64>>,
    /// Solve for a whole start region instead of a point (the point or cell
    /// is still used for `value_at_start`). Useful for full value surfaces.
    pub start_region: Option<Region>,
    pub max_iterations: Option<usize>,
    pub max_wall: Option<std::time::Duration>,
    /// Record the per-iteration value and error decomposition. Computing
    /// the decomposition costs one policy-evaluation pass per iteration,
    /// so bulk sweeps may turn it off; the final bound is always computed.
    pub iteration_trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            expansion_horizon: Some(7),
            multiregion: true,
            x0: None,
            start_region: None,
            max_iterations: None,
            max_wall: None,
            iteration_trace: true,
        }
    }
}

/// Counters mirroring the usual planner-benchmark columns.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub nodes_created: usize,
    pub nodes_expanded: usize,
    pub regions_expanded: usize,
    pub backups: usize,
    pub multinode_scc_count: usize,
    pub max_scc_size: usize,
    pub policy_nodes: usize,
    pub policy_branches: usize,
    pub goals_pursued: usize,
    pub wall_ms: u128,
}

/// Per-iteration trace: start-state value and its error decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationStat {
    pub iteration: usize,
    pub value_at_start: f64,
    pub g0: f64,
    pub h0: f64,
    pub nodes_created: usize,
    pub nodes_expanded: usize,
}

/// One node of the solution subgraph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionNode {
    pub discrete: DiscreteState,
    pub value: Pwc<f64>,
    /// Marked actions over the reachable closed regions.
    pub policy: Pwc<Option<u32>>,
    pub closed: Region,
    pub reachable: Region,
}

/// The deliverable of [`solve`]: the best policy subgraph plus the value,
/// error bound and counters at the start state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub value_at_start: f64,
    /// Remaining heuristic mass at the start state; 0 on convergence.
    pub error_bound: f64,
    /// Realized-return lower bound of the current policy at the start.
    pub g0: f64,
    pub converged: bool,
    pub x0: Vec<f64>,
    pub nodes: Vec<SolutionNode>,
    pub stats: SolveStats,
    pub iterations: Vec<IterationStat>,
}

impl Solution {
    pub fn node(&self, n: DiscreteState) -> Option<&SolutionNode> {
        self.nodes.iter().find(|sn| sn.discrete == n)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Solution> {
        Ok(serde_json::from_str(text)?)
    }
}

struct Edge {
    node: usize,
    action: u32,
}

struct BackupCache {
    region: Region,
    value: Pwc<f64>,
    policy: Pwc<Option<u32>>,
    /// Successor fluent words and the node versions their values had when
    /// the cache was computed; `NOT_CREATED` for successors that had no
    /// node yet.
    succ_versions: Vec<(u64, u64)>,
}

const NOT_CREATED: u64 = u64::MAX;

struct Node {
    discrete: DiscreteState,
    heuristic: f64,
    value: Pwc<f64>,
    policy: Pwc<Option<u32>>,
    open: Region,
    closed: Region,
    reachable: Region,
    terminal: Region,
    matching: Vec<u32>,
    parents: Vec<Edge>,
    children: Vec<Edge>,
    version: u64,
    cache: Option<BackupCache>,
}

/// Solve a validated problem. Returns an optimal conditional policy on
/// natural termination; on a cap-triggered stop the returned value is still
/// an upper bound and `error_bound` quantifies the possible regret.
pub fn solve(problem: &HybridProblem, opts: &SolveOptions) -> Result<Solution> {
    let report = validate_problem(problem);
    if !report.is_empty() {
        return Err(Error::domain(format!(
            "problem failed validation with {} violation(s); first: {}",
            report.len(),
            report[0]
        )));
    }
    let x0 = opts.x0.clone().unwrap_or_else(|| problem.initial_resources.clone());
    if !problem.space.contains(&x0) {
        return Err(Error::domain(format!("x0 {:?} outside the hypercube", x0)));
    }
    let solver = Solver::new(problem, x0, opts.clone());
    solver.run()
}

struct Solver<'p> {
    problem: &'p HybridProblem,
    index: ActionIndex,
    opts: SolveOptions,
    x0: Vec<f64>,
    start_region: Region,
    nodes: Vec<Node>,
    by_state: BTreeMap<u64, usize>,
    start: usize,
    expanded_nodes: BTreeSet<usize>,
    expanded_this_iter: BTreeMap<usize, Region>,
    stats: SolveStats,
    iterations: Vec<IterationStat>,
}

impl<'p> Solver<'p> {
    fn new(problem: &'p HybridProblem, x0: Vec<f64>, opts: SolveOptions) -> Self {
        let start_region = opts
            .start_region
            .clone()
            .unwrap_or_else(|| Region::from_box(problem.point_cell(&x0)));
        let mut solver = Solver {
            problem,
            index: ActionIndex::new(problem),
            opts,
            x0,
            start_region,
            nodes: Vec::new(),
            by_state: BTreeMap::new(),
            start: 0,
            expanded_nodes: BTreeSet::new(),
            expanded_this_iter: BTreeMap::new(),
            stats: SolveStats::default(),
            iterations: Vec::new(),
        };
        let start = solver.get_or_create(problem.initial_state);
        solver.start = start;
        let open0 = solver.start_region.subtract(&solver.nodes[start].terminal);
        solver.nodes[start].open = open0;
        solver.nodes[start].reachable = solver.start_region.clone();
        solver
    }

    fn xmax(&self) -> &[f64] {
        self.problem.xmax()
    }

    /// Value function a node starts with (and the stand-in for successors
    /// that have no node yet): the heuristic everywhere except the terminal
    /// region, which is worth exactly 0.
    fn fresh_value(&self, n: DiscreteState, terminal: &Region, h: f64) -> Pwc<f64> {
        let _ = n;
        Pwc::constant(self.problem.space.dims, h)
            .patch(terminal, &Pwc::constant(self.problem.space.dims, 0.0))
    }

    fn get_or_create(&mut self, n: DiscreteState) -> usize {
        if let Some(&id) = self.by_state.get(&n.0) {
            return id;
        }
        let terminal = self.problem.terminal_region(n);
        let h = heuristic_value(self.problem, n);
        let value = self.fresh_value(n, &terminal, h);
        let id = self.nodes.len();
        self.nodes.push(Node {
            discrete: n,
            heuristic: h,
            value,
            policy: Pwc::constant(self.problem.space.dims, None),
            open: Region::empty(self.problem.space.dims),
            closed: Region::empty(self.problem.space.dims),
            reachable: Region::empty(self.problem.space.dims),
            terminal,
            matching: self.index.matching(n),
            parents: Vec::new(),
            children: Vec::new(),
            version: 0,
            cache: None,
        });
        self.by_state.insert(n.0, id);
        self.stats.nodes_created += 1;
        id
    }

    /// Fringe of the best partial policy: nodes whose reachable and open
    /// regions intersect, in discrete-state order.
    fn fringe(&self) -> Vec<(usize, Region)> {
        let mut out = Vec::new();
        for (_, &id) in &self.by_state {
            let node = &self.nodes[id];
            if node.reachable.is_empty() || node.open.is_empty() {
                continue;
            }
            let r = node.reachable.intersect(&node.open);
            if !r.is_empty() {
                out.push((id, r));
            }
        }
        out
    }

    /// Depth-k expansion of the current fringe. Depth 1 expands every
    /// reachable open region; deeper levels expand the regions those
    /// expansions freshly opened, reachability not yet rechecked. Returns
    /// the ids of nodes whose regions were expanded.
    fn expand_step(&mut self, k: Option<usize>) -> BTreeSet<usize> {
        let mut touched = BTreeSet::new();
        self.expanded_this_iter.clear();
        let mut frontier = self.fringe();
        let mut depth = 0;
        while !frontier.is_empty() && k.is_none_or(|k| depth < k) {
            depth += 1;
            let mut opened: BTreeMap<usize, Region> = BTreeMap::new();
            for (id, region) in frontier {
                touched.insert(id);
                self.expanded_nodes.insert(id);
                self.stats.regions_expanded += region.boxes().len();
                let node = &mut self.nodes[id];
                node.open = node.open.subtract(&region);
                node.closed.union_with(&region);
                self.expanded_this_iter
                    .entry(id)
                    .or_insert_with(|| Region::empty(region.dims()))
                    .union_with(&region);

                let matching = self.nodes[id].matching.clone();
                for aid in matching {
                    let action = &self.problem.actions[aid as usize];
                    let mut successors: Vec<DiscreteState> = action
                        .branches
                        .iter()
                        .flat_map(|b| b.outcomes.iter().map(|o| o.successor))
                        .collect();
                    successors.sort_unstable();
                    successors.dedup();
                    for succ_state in successors {
                        let image = reach_image(self.problem, &region, aid, succ_state);
                        if image.is_empty() {
                            continue;
                        }
                        let sid = self.get_or_create(succ_state);
                        if !self.nodes[id].children.iter().any(|e| e.node == sid && e.action == aid) {
                            self.nodes[id].children.push(Edge { node: sid, action: aid });
                            self.nodes[sid].parents.push(Edge { node: id, action: aid });
                        }
                        let succ = &mut self.nodes[sid];
                        let fresh = image
                            .subtract(&succ.terminal)
                            .subtract(&succ.closed)
                            .subtract(&succ.open);
                        if !fresh.is_empty() {
                            succ.open.union_with(&fresh);
                            opened
                                .entry(sid)
                                .or_insert_with(|| Region::empty(fresh.dims()))
                                .union_with(&fresh);
                        }
                    }
                }
            }
            let mut next: Vec<(usize, Region)> = opened.into_iter().collect();
            next.sort_by_key(|(id, _)| self.nodes[*id].discrete.0);
            frontier = next;
        }
        self.stats.nodes_expanded = self.expanded_nodes.len();
        touched
    }

    /// Current value functions of every successor a backup of `id` can
    /// touch; successors without nodes get the fresh heuristic stand-in.
    fn successor_values(&self, id: usize) -> SuccessorValues {
        let mut map = SuccessorValues::new();
        for &aid in &self.nodes[id].matching {
            let action = &self.problem.actions[aid as usize];
            for branch in &action.branches {
                for out in &branch.outcomes {
                    let word = out.successor.0;
                    if map.contains_key(&word) {
                        continue;
                    }
                    let v = match self.by_state.get(&word) {
                        Some(&sid) => self.nodes[sid].value.clone(),
                        None => {
                            let terminal = self.problem.terminal_region(out.successor);
                            let h = heuristic_value(self.problem, out.successor);
                            self.fresh_value(out.successor, &terminal, h)
                        }
                    };
                    map.insert(word, v);
                }
            }
        }
        map
    }

    fn succ_version_snapshot(&self, id: usize) -> Vec<(u64, u64)> {
        let mut words: Vec<u64> = self.nodes[id]
            .matching
            .iter()
            .flat_map(|&aid| {
                self.problem.actions[aid as usize]
                    .branches
                    .iter()
                    .flat_map(|b| b.outcomes.iter().map(|o| o.successor.0))
            })
            .collect();
        words.sort_unstable();
        words.dedup();
        words
            .into_iter()
            .map(|w| {
                let v = self.by_state.get(&w).map(|&sid| self.nodes[sid].version).unwrap_or(NOT_CREATED);
                (w, v)
            })
            .collect()
    }

    fn cache_valid(&self, id: usize) -> bool {
        let Some(cache) = &self.nodes[id].cache else {
            return false;
        };
        cache.succ_versions.iter().all(|(w, ver)| {
            let now = self.by_state.get(w).map(|&sid| self.nodes[sid].version).unwrap_or(NOT_CREATED);
            now == *ver
        })
    }

    /// One value update of `id` over its closed regions (plus, in
    /// multi-region mode, the bounding box of this iteration's expansions,
    /// cached for reuse). Returns the max pointwise change on the applied
    /// region.
    fn backup_node(&mut self, id: usize) -> Result<f64> {
        let apply = self.nodes[id].closed.clone();
        if apply.is_empty() {
            return Ok(0.0);
        }
        let mut compute = apply.clone();
        if self.opts.multiregion {
            if let Some(expanded) = self.expanded_this_iter.get(&id) {
                if let Some(bb) = expanded.bounding_box() {
                    let floor = BoxR::new(vec![0.0; bb.dims()], bb.hi.clone());
                    compute.union_with(&Region::from_box(floor));
                }
            }
        }

        let (v_new, pol_new) = if self.opts.multiregion
            && self.cache_valid(id)
            && compute
                .subtract(&self.nodes[id].cache.as_ref().unwrap().region)
                .is_empty()
        {
            let cache = self.nodes[id].cache.as_ref().unwrap();
            (cache.value.clone(), cache.policy.clone())
        } else {
            let succ_vals = self.successor_values(id);
            let node = &self.nodes[id];
            let (v, p) = bellman_backup(
                self.problem,
                node.discrete,
                &node.matching,
                &compute,
                &succ_vals,
                Some(&node.policy),
            )?;
            self.stats.backups += 1;
            if self.opts.multiregion {
                let snapshot = self.succ_version_snapshot(id);
                self.nodes[id].cache = Some(BackupCache {
                    region: compute.clone(),
                    value: v.clone(),
                    policy: p.clone(),
                    succ_versions: snapshot,
                });
            }
            (v, p)
        };

        let node = &mut self.nodes[id];
        let old = node.value.restrict(&apply, 0.0);
        let new = v_new.restrict(&apply, 0.0);
        let change = old.max_abs_diff(&new);
        node.value = node.value.patch(&apply, &v_new).simplify(VALUE_TOL);
        node.policy = node.policy.patch(&apply, &pol_new);
        if change > 0.0 {
            node.version += 1;
        }
        Ok(change)
    }

    /// True when `parent`'s current policy marks `action` somewhere.
    fn marks(&self, parent: usize, action: u32) -> bool {
        let pol = &self.nodes[parent].policy;
        pol.pieces().iter().any(|(_, t)| *t == Some(action)) || *pol.default_value() == Some(action)
    }

    /// Update values over the touched nodes and their marked-edge
    /// ancestors, component by component in reverse topological order;
    /// multi-node components (phantom loops) iterate to a fixpoint.
    fn update_values(&mut self, touched: &BTreeSet<usize>) -> Result<()> {
        if touched.is_empty() {
            return Ok(());
        }
        let mut z: BTreeSet<usize> = touched.clone();
        let mut stack: Vec<usize> = touched.iter().copied().collect();
        while let Some(id) = stack.pop() {
            let parents: Vec<(usize, u32)> =
                self.nodes[id].parents.iter().map(|e| (e.node, e.action)).collect();
            for (p, a) in parents {
                if !z.contains(&p) && self.marks(p, a) {
                    z.insert(p);
                    stack.push(p);
                }
            }
        }
        let ids: Vec<usize> = z.into_iter().collect();
        let pos: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut adj = vec![Vec::new(); ids.len()];
        for (i, &id) in ids.iter().enumerate() {
            for e in &self.nodes[id].children {
                if let Some(&j) = pos.get(&e.node) {
                    if !adj[i].contains(&j) {
                        adj[i].push(j);
                    }
                }
            }
        }
        let comps = scc_decompose(&adj);
        for comp in comps {
            let members: Vec<usize> = {
                let mut m: Vec<usize> = comp.iter().map(|&i| ids[i]).collect();
                m.sort_by_key(|&id| self.nodes[id].discrete.0);
                m
            };
            let self_loop = comp.len() > 1
                || comp.iter().any(|&i| adj[i].contains(&i));
            if comp.len() > 1 {
                self.stats.multinode_scc_count += 1;
            }
            self.stats.max_scc_size = self.stats.max_scc_size.max(comp.len());
            if !self_loop {
                self.backup_node(members[0])?;
            } else {
                loop {
                    let mut max_change = 0.0f64;
                    for &id in &members {
                        max_change = max_change.max(self.backup_node(id)?);
                    }
                    if max_change < VALUE_TOL {
                        break;
                    }
                }
            }
        }
        Ok(())
    }

    /// Marked outgoing actions of a node, ascending.
    fn marked_tags(&self, id: usize) -> Vec<u32> {
        let pol = &self.nodes[id].policy;
        let mut tags: Vec<u32> = pol.pieces().iter().filter_map(|(_, t)| *t).collect();
        if let Some(t) = pol.default_value() {
            tags.push(*t);
        }
        tags.sort_unstable();
        tags.dedup();
        tags
    }

    /// Adjacency over marked edges only (the current best policy graph).
    fn marked_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for id in 0..self.nodes.len() {
            let tags = self.marked_tags(id);
            for e in &self.nodes[id].children {
                if tags.contains(&e.action) && !adj[id].contains(&e.node) {
                    adj[id].push(e.node);
                }
            }
        }
        adj
    }

    /// Recompute every node's reachable region from scratch: the start
    /// region at the start node, then forward images along marked actions,
    /// in topological order over the marked subgraph's components with a
    /// fixpoint inside each component.
    fn recompute_reachable(&mut self) {
        for node in &mut self.nodes {
            node.reachable = Region::empty(self.problem.space.dims);
        }
        self.nodes[self.start].reachable = self.start_region.clone();
        let adj = self.marked_adjacency();
        let comps = scc_decompose(&adj);
        for comp in comps.iter().rev() {
            let members: Vec<usize> = {
                let mut m = comp.clone();
                m.sort_by_key(|&id| self.nodes[id].discrete.0);
                m
            };
            let cyclic = comp.len() > 1 || comp.iter().any(|&i| adj[i].contains(&i));
            loop {
                let mut changed = false;
                for &id in &members {
                    if self.nodes[id].reachable.is_empty() {
                        continue;
                    }
                    for tag in self.marked_tags(id) {
                        let marked_region = self.nodes[id]
                            .policy
                            .region_where(&self.problem.grid_max(), |t| *t == Some(tag))
                            .intersect(&self.nodes[id].closed);
                        let src = self.nodes[id].reachable.intersect(&marked_region);
                        if src.is_empty() {
                            continue;
                        }
                        let succs: Vec<usize> = self.nodes[id]
                            .children
                            .iter()
                            .filter(|e| e.action == tag)
                            .map(|e| e.node)
                            .collect();
                        for sid in succs {
                            let image =
                                reach_image(self.problem, &src, tag, self.nodes[sid].discrete);
                            if image.is_empty() {
                                continue;
                            }
                            let added = image.subtract(&self.nodes[sid].reachable);
                            if !added.is_empty() {
                                self.nodes[sid].reachable.union_with(&added);
                                changed = true;
                            }
                        }
                    }
                }
                if !changed || !cyclic {
                    break;
                }
            }
        }
    }

    /// The anytime error decomposition at the start state: `g0` is the
    /// value realized by the greedy policy with a zero-reward done action at
    /// its fringe, `h0` the remaining heuristic mass; `g0 + h0` equals the
    /// current start value and `h0` bounds the regret.
    fn error_bound(&self) -> Result<(f64, f64)> {
        let dims = self.problem.space.dims;
        let adj = self.marked_adjacency();
        let comps = scc_decompose(&adj);
        let mut g: BTreeMap<usize, Pwc<f64>> = BTreeMap::new();
        let mut h: BTreeMap<usize, Pwc<f64>> = BTreeMap::new();
        let zero = Pwc::constant(dims, 0.0);
        for comp in &comps {
            let members: Vec<usize> = {
                let mut m = comp.clone();
                m.sort_by_key(|&id| self.nodes[id].discrete.0);
                m
            };
            for &id in &members {
                g.insert(id, zero.clone());
                h.insert(id, zero.clone());
            }
            let cyclic = comp.len() > 1 || comp.iter().any(|&i| adj[i].contains(&i));
            loop {
                let mut max_change = 0.0f64;
                for &id in &members {
                    let node = &self.nodes[id];
                    if node.reachable.is_empty() {
                        continue;
                    }
                    let succ_g = self.collect_gh(id, &g);
                    let succ_h = self.collect_gh(id, &h);
                    // Fringe (open, unexpanded) states realize nothing but
                    // still promise their heuristic; terminal states are
                    // worth exactly zero on both sides.
                    let fringe_g = zero.clone();
                    let fringe_h = Pwc::constant(dims, node.heuristic).patch(&node.terminal, &zero);
                    let g_new = policy_eval_backup(
                        self.problem,
                        &node.policy,
                        &node.reachable,
                        &succ_g,
                        true,
                        &fringe_g,
                    )?;
                    let h_new = policy_eval_backup(
                        self.problem,
                        &node.policy,
                        &node.reachable,
                        &succ_h,
                        false,
                        &fringe_h,
                    )?;
                    max_change = max_change.max(g[&id].max_abs_diff(&g_new));
                    max_change = max_change.max(h[&id].max_abs_diff(&h_new));
                    g.insert(id, g_new);
                    h.insert(id, h_new);
                }
                if !cyclic || max_change < VALUE_TOL {
                    break;
                }
            }
        }
        let g0 = g
            .get(&self.start)
            .map(|f| f.evaluate(&self.x0, self.xmax()))
            .transpose()?
            .unwrap_or(0.0);
        let h0 = h
            .get(&self.start)
            .map(|f| f.evaluate(&self.x0, self.xmax()))
            .transpose()?
            .unwrap_or(0.0);
        Ok((g0, h0))
    }

    /// Successor g or h functions for every outcome of `id`'s actions;
    /// unsolved successors contribute zero (they are never reachable under
    /// the marked policy, or they are fringe states handled by the fringe
    /// clause at their own node).
    fn collect_gh(&self, id: usize, table: &BTreeMap<usize, Pwc<f64>>) -> SuccessorValues {
        let dims = self.problem.space.dims;
        let mut map = SuccessorValues::new();
        for &aid in &self.nodes[id].matching {
            let action = &self.problem.actions[aid as usize];
            for branch in &action.branches {
                for out in &branch.outcomes {
                    map.entry(out.successor.0).or_insert_with(|| {
                        self.by_state
                            .get(&out.successor.0)
                            .and_then(|sid| table.get(sid))
                            .cloned()
                            .unwrap_or_else(|| Pwc::constant(dims, 0.0))
                    });
                }
            }
        }
        map
    }

    fn value_at_start(&self) -> Result<f64> {
        self.nodes[self.start].value.evaluate(&self.x0, self.xmax())
    }

    fn record_iteration(&mut self, iteration: usize) -> Result<()> {
        if !self.opts.iteration_trace {
            return Ok(());
        }
        let (g0, h0) = self.error_bound()?;
        let stat = IterationStat {
            iteration,
            value_at_start: self.value_at_start()?,
            g0,
            h0,
            nodes_created: self.stats.nodes_created,
            nodes_expanded: self.stats.nodes_expanded,
        };
        self.iterations.push(stat);
        Ok(())
    }

    fn run(mut self) -> Result<Solution> {
        let t0 = Instant::now();
        self.record_iteration(0)?;
        let mut iteration = 0;
        let mut converged = true;
        while !self.fringe().is_empty() {
            if self.opts.max_iterations.is_some_and(|cap| iteration >= cap)
                || self.opts.max_wall.is_some_and(|cap| t0.elapsed() >= cap)
            {
                converged = false;
                break;
            }
            iteration += 1;
            let touched = self.expand_step(self.opts.expansion_horizon);
            self.update_values(&touched)?;
            self.recompute_reachable();
            self.record_iteration(iteration)?;
        }
        self.stats.iterations = iteration;
        self.stats.wall_ms = t0.elapsed().as_millis();
        self.finalize(converged)
    }

    fn finalize(mut self, converged: bool) -> Result<Solution> {
        let value_at_start = self.value_at_start()?;
        let (g0, h0) = self.error_bound()?;
        let mut nodes = Vec::new();
        let mut goals_pursued: BTreeSet<usize> = BTreeSet::new();
        for (_, &id) in &self.by_state {
            let node = &self.nodes[id];
            if node.reachable.is_empty() {
                continue;
            }
            let usable = node.reachable.intersect(&node.closed);
            let policy = node.policy.restrict(&usable, None);
            let marked: Vec<u32> = {
                let mut t: Vec<u32> = policy.pieces().iter().filter_map(|(_, t)| *t).collect();
                t.sort_unstable();
                t.dedup();
                t
            };
            self.stats.policy_branches += marked.len().saturating_sub(1);
            for &tag in &marked {
                let action = &self.problem.actions[tag as usize];
                for branch in &action.branches {
                    for out in &branch.outcomes {
                        for gidx in 0..self.problem.goal_count() {
                            let f = self.problem.goal_fluent(gidx);
                            if !node.discrete.get(f) && out.successor.get(f) {
                                goals_pursued.insert(gidx);
                            }
                        }
                    }
                }
            }
            nodes.push(SolutionNode {
                discrete: node.discrete,
                value: node.value.clone(),
                policy,
                closed: node.closed.clone(),
                reachable: node.reachable.clone(),
            });
        }
        self.stats.policy_nodes = nodes.len();
        self.stats.goals_pursued = goals_pursued.len();
        Ok(Solution {
            value_at_start,
            error_bound: h0,
            g0,
            converged,
            x0: self.x0.clone(),
            nodes,
            stats: self.stats,
            iterations: self.iterations,
        })
    }
}

/// Expose the per-iteration internals for tests and diagnostics: run one
/// solve while calling `observer` after every iteration with
/// `(iteration, V(n0,x0), g0, h0, open-closed disjoint, v-eq-h-on-open)`.
pub fn solve_with_observer(
    problem: &HybridProblem,
    opts: &SolveOptions,
    observer: &mut dyn FnMut(usize, f64, f64, f64, bool, bool),
) -> Result<Solution> {
    let report = validate_problem(problem);
    if !report.is_empty() {
        return Err(Error::domain(format!(
            "problem failed validation with {} violation(s); first: {}",
            report.len(),
            report[0]
        )));
    }
    let x0 = opts.x0.clone().unwrap_or_else(|| problem.initial_resources.clone());
    if !problem.space.contains(&x0) {
        return Err(Error::domain(format!("x0 {:?} outside the hypercube", x0)));
    }
    let mut solver = Solver::new(problem, x0, opts.clone());
    let t0 = Instant::now();
    solver.record_iteration(0)?;
    let mut iteration = 0;
    let mut converged = true;
    loop {
        let (g0, h0) = solver.error_bound()?;
        observer(
            iteration,
            solver.value_at_start()?,
            g0,
            h0,
            solver.invariant_open_closed_disjoint(),
            solver.invariant_value_is_heuristic_on_open(),
        );
        if solver.fringe().is_empty() {
            break;
        }
        if solver.opts.max_iterations.is_some_and(|cap| iteration >= cap)
            || solver.opts.max_wall.is_some_and(|cap| t0.elapsed() >= cap)
        {
            converged = false;
            break;
        }
        iteration += 1;
        let touched = solver.expand_step(solver.opts.expansion_horizon);
        solver.update_values(&touched)?;
        solver.recompute_reachable();
        solver.record_iteration(iteration)?;
    }
    solver.stats.iterations = iteration;
    solver.stats.wall_ms = t0.elapsed().as_millis();
    solver.finalize(converged)
}

impl Solver<'_> {
    fn invariant_open_closed_disjoint(&self) -> bool {
        self.nodes.iter().all(|n| n.open.intersect(&n.closed).is_empty())
    }

    fn invariant_value_is_heuristic_on_open(&self) -> bool {
        self.nodes.iter().all(|n| {
            if n.open.is_empty() {
                return true;
            }
            let v = n.value.restrict(&n.open, 0.0);
            let h = Pwc::constant(self.problem.space.dims, n.heuristic).restrict(&n.open, 0.0);
            v.max_abs_diff(&h) <= VALUE_TOL
        })
    }
}
