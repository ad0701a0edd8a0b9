//! Acceptance suite: the exit criteria for the planner, each printed as one
//! pass/fail line. Run with `cargo test -p haostar --test acceptance` (add
//! `-- --nocapture` to see the lines for passing criteria too).
//!
//! Ground truth everywhere is the exact oracle (forward enumeration plus
//! backward induction) on instances small enough for it; trend criteria use
//! the synthetic rover instances.

use haostar::model::rover::{make_rover_problem, RoverParams};
use haostar::model::synth::random_problem;
use haostar::model::{validate_problem, HybridProblem};
use haostar::oracle;
use haostar::search::{solve, solve_with_observer, SolveOptions, Solution};
use haostar::sim;

const TOL: f64 = 1e-9;
const SUITE_SEEDS: std::ops::Range<u64> = 0..20;

fn pass(criterion: &str) {
    println!("acceptance {}: PASS", criterion);
}

fn suite_instance(seed: u64) -> (HybridProblem, f64) {
    let p = random_problem(seed);
    assert!(validate_problem(&p).is_empty(), "seed {} generated an invalid instance", seed);
    let table = oracle::solve_exact(&p, &p.initial_resources, 100_000)
        .unwrap_or_else(|e| panic!("seed {} oracle failed: {}", seed, e));
    let v = table.start_value(&p);
    (p, v)
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

/// Criteria 1-3 share one protocol: solve each suite instance once and
/// inspect the per-iteration trace against the oracle value.
#[test]
fn criteria_1_2_3_oracle_equivalence_and_bounds() {
    for seed in SUITE_SEEDS {
        let (p, want) = suite_instance(seed);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert!(s.converged, "seed {} did not converge", seed);
        // Criterion 1: exact agreement at convergence.
        assert!(
            (s.value_at_start - want).abs() <= TOL,
            "criterion 1 failed on seed {}: search {} vs oracle {}",
            seed,
            s.value_at_start,
            want
        );
        for it in &s.iterations {
            // Criterion 2: the start value never drops below the optimum.
            assert!(
                it.value_at_start >= want - TOL,
                "criterion 2 failed on seed {} iteration {}: {} < {}",
                seed,
                it.iteration,
                it.value_at_start,
                want
            );
            // Criterion 3: the g/h decomposition brackets the optimum and
            // recomposes the current value.
            assert!(
                it.g0 <= want + TOL && want <= it.g0 + it.h0 + TOL,
                "criterion 3 failed on seed {} iteration {}: g0 {} h0 {} oracle {}",
                seed,
                it.iteration,
                it.g0,
                it.h0,
                want
            );
            assert!(
                (it.g0 + it.h0 - it.value_at_start).abs() <= TOL,
                "criterion 3 failed on seed {} iteration {}: g0+h0 {} != V {}",
                seed,
                it.iteration,
                it.g0 + it.h0,
                it.value_at_start
            );
        }
        let last = s.iterations.last().unwrap();
        assert!(last.h0.abs() <= TOL, "criterion 3 failed on seed {}: h0 {} at convergence", seed, last.h0);
    }
    pass("1 (oracle equivalence on 20 randomized instances, |delta| <= 1e-9)");
    pass("2 (anytime upper bound at every iteration)");
    pass("3 (g/h error bound brackets the optimum, h0 = 0 at convergence)");
}

#[test]
fn criterion_4_expansion_horizon_invariance() {
    for seed in SUITE_SEEDS {
        let (p, want) = suite_instance(seed);
        for k in [Some(1), Some(2), Some(5), Some(7), None] {
            for multiregion in [true, false] {
                let s = solve(
                    &p,
                    &SolveOptions {
                        expansion_horizon: k,
                        multiregion,
                        iteration_trace: false,
                        ..Default::default()
                    },
                )
                .unwrap();
                assert!(s.converged);
                assert!(
                    (s.value_at_start - want).abs() <= TOL,
                    "criterion 4 failed on seed {} k {:?} multiregion {}: {} vs {}",
                    seed,
                    k,
                    multiregion,
                    s.value_at_start,
                    want
                );
            }
        }
    }
    pass("4 (converged value identical for k in {1,2,5,7,inf}, multi-region on and off)");
}

#[test]
fn criterion_5_phantom_loops() {
    // Two locations with a round-trip path: the discrete projection cycles
    // while the hybrid space cannot.
    let p = make_rover_problem(&RoverParams::two_rock_demo()).unwrap();
    let table = oracle::solve_exact(&p, &p.initial_resources, oracle::DEFAULT_STATE_CAP).unwrap();
    let want = table.start_value(&p);
    let s = solve(&p, &SolveOptions { expansion_horizon: Some(3), ..Default::default() }).unwrap();
    assert!(s.converged, "phantom-loop instance must terminate");
    assert!(
        s.stats.multinode_scc_count > 0 && s.stats.max_scc_size >= 2,
        "criterion 5 failed: no multi-node component was processed (max size {})",
        s.stats.max_scc_size
    );
    assert!(
        (s.value_at_start - want).abs() <= TOL,
        "criterion 5 failed: {} vs oracle {}",
        s.value_at_start,
        want
    );
    pass("5 (phantom-loop instance forms a multi-node SCC, terminates, matches the oracle)");
}

#[test]
fn criterion_6_toy_two_rock() {
    // Deterministic ample-resource variant is worth exactly both rewards.
    let det = deterministic_toy();
    let s_det = solve(&det, &SolveOptions { expansion_horizon: Some(2), ..Default::default() }).unwrap();
    assert!(
        (s_det.value_at_start - 30.0).abs() <= TOL,
        "criterion 6 failed: deterministic toy worth {}, expected 30",
        s_det.value_at_start
    );

    // Stochastic variant: Monte Carlo agrees with the solved value.
    let p = make_rover_problem(&RoverParams::two_rock_demo()).unwrap();
    let s = solve(&p, &SolveOptions { expansion_horizon: Some(2), ..Default::default() }).unwrap();
    let eval = sim::evaluate_policy(&p, &s, 100_000, 20_260_809).unwrap();
    assert!(
        (eval.mean - s.value_at_start).abs() <= 3.0 * eval.stderr,
        "criterion 6 failed: MC mean {} vs value {} (stderr {})",
        eval.mean,
        s.value_at_start,
        eval.stderr
    );

    // Full value surface: solve over the whole hypercube as the start
    // region; the optimal return never decreases in either resource.
    let surf = solve(
        &p,
        &SolveOptions {
            expansion_horizon: Some(7),
            start_region: Some(p.full_grid_region()),
            ..Default::default()
        },
    )
    .unwrap();
    let start_node = surf.node(p.initial_state).expect("start node in solution");
    let n = 80;
    let xm = p.xmax();
    let sample = |i: usize, j: usize| {
        let x = [
            (i as f64 + 0.5) * xm[0] / n as f64,
            (j as f64 + 0.5) * xm[1] / n as f64,
        ];
        *start_node.value.value_at(&x, xm)
    };
    for i in 0..n {
        for j in 0..n {
            let v = sample(i, j);
            if i + 1 < n {
                assert!(
                    sample(i + 1, j) >= v - TOL,
                    "criterion 6 failed: surface decreases along time at cell ({}, {})",
                    i,
                    j
                );
            }
            if j + 1 < n {
                assert!(
                    sample(i, j + 1) >= v - TOL,
                    "criterion 6 failed: surface decreases along energy at cell ({}, {})",
                    i,
                    j
                );
            }
        }
    }
    pass("6 (toy: deterministic value 30, MC within 3 sigma, monotone value surface)");
}

#[test]
fn criterion_7_pruning_trend() {
    let p = make_rover_problem(&RoverParams::five_goal_demo()).unwrap();
    let energies = [4.0, 6.0, 8.0, 10.0, 12.0, 16.0, 20.0];
    let mut created = Vec::new();
    let mut reachable = Vec::new();
    for &e in &energies {
        let x0 = vec![p.space.max[0], e];
        let r = oracle::count_reachable_discrete(&p, &x0).unwrap();
        let s = solve(
            &p,
            &SolveOptions { x0: Some(x0), iteration_trace: false, ..Default::default() },
        )
        .unwrap();
        assert!(s.converged);
        created.push(s.stats.nodes_created);
        reachable.push(r);
    }
    let mut strict = 0;
    for (i, &e) in energies.iter().enumerate() {
        assert!(
            created[i] <= reachable[i],
            "criterion 7 failed at energy {}: created {} > reachable {}",
            e,
            created[i],
            reachable[i]
        );
        if created[i] < reachable[i] {
            strict += 1;
        }
    }
    assert!(
        strict * 2 >= energies.len(),
        "criterion 7 failed: strict pruning at only {}/{} sweep points (created {:?}, reachable {:?})",
        strict,
        energies.len(),
        created,
        reachable
    );
    for w in created.windows(2) {
        assert!(w[0] <= w[1], "criterion 7 failed: created counts not nondecreasing: {:?}", created);
    }
    for w in reachable.windows(2) {
        assert!(w[0] <= w[1], "criterion 7 failed: reachable counts not nondecreasing: {:?}", reachable);
    }
    pass("7 (over-subscribed sweep: created <= reachable, strictly at half the points, both nondecreasing)");
}

#[test]
fn criterion_8_expansion_horizon_trend() {
    let p = make_rover_problem(&RoverParams::two_rock_demo()).unwrap();
    let reachable = oracle::count_reachable_discrete(&p, &p.initial_resources).unwrap();
    let ks = [Some(1), Some(2), Some(3), Some(5), Some(7), None];
    let mut created = Vec::new();
    for k in ks {
        let s = solve(
            &p,
            &SolveOptions { expansion_horizon: k, iteration_trace: false, ..Default::default() },
        )
        .unwrap();
        assert!(s.converged);
        created.push(s.stats.nodes_created);
    }
    for w in created.windows(2) {
        assert!(
            w[0] <= w[1],
            "criterion 8 failed: created counts not nondecreasing in k: {:?}",
            created
        );
    }
    assert_eq!(
        *created.last().unwrap(),
        reachable,
        "criterion 8 failed: unbounded horizon should level off at the reachable count"
    );
    pass("8 (nodes created nondecreasing in k, leveling off at the reachable count)");
}

#[test]
fn criterion_9_invariant_suite() {
    // Probability normalization, consumption positivity and arrival closure
    // over ten thousand generated instances.
    for seed in 0..10_000u64 {
        let p = random_problem(seed);
        let report = validate_problem(&p);
        assert!(
            report.is_empty(),
            "criterion 9 failed: seed {} violates model invariants: {}",
            seed,
            report[0]
        );
    }

    // Search bookkeeping invariants on a spread of instances, both with and
    // without the multi-region update: open and closed regions stay
    // disjoint and the value function equals the heuristic on open regions
    // at every iteration.
    for seed in 0..60u64 {
        let p = random_problem(seed);
        let opts = SolveOptions { multiregion: seed % 2 == 0, ..Default::default() };
        solve_with_observer(&p, &opts, &mut |iter, _, _, _, disjoint, v_is_h| {
            assert!(disjoint, "criterion 9 failed: open/closed overlap on seed {} iteration {}", seed, iter);
            assert!(v_is_h, "criterion 9 failed: V != H on an open region on seed {} iteration {}", seed, iter);
        })
        .unwrap();
    }

    // Strict resource decrease and seed reproducibility over ten thousand
    // simulated trajectories.
    let mut solutions: Vec<(HybridProblem, Solution)> = Vec::new();
    for seed in 0..40u64 {
        let p = random_problem(seed);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        solutions.push((p, s));
    }
    for (idx, (p, s)) in solutions.iter().enumerate() {
        for trial in 0..250u64 {
            let t = sim::simulate_trajectory(p, s, 1234, trial).unwrap();
            for step in &t.steps {
                let consumed = step
                    .resources
                    .iter()
                    .zip(&step.arrival_resources)
                    .any(|(b, a)| b - a >= p.c_min);
                let none_rose = step
                    .resources
                    .iter()
                    .zip(&step.arrival_resources)
                    .all(|(b, a)| a <= b);
                assert!(
                    consumed && none_rose,
                    "criterion 9 failed: non-consuming step on instance {} trial {}",
                    idx,
                    trial
                );
            }
            if trial == 0 {
                let again = sim::simulate_trajectory(p, s, 1234, 0).unwrap();
                assert_eq!(t.steps.len(), again.steps.len());
                assert!(
                    t.steps
                        .iter()
                        .zip(&again.steps)
                        .all(|(a, b)| a.action == b.action
                            && a.outcome_index == b.outcome_index
                            && a.arrival_resources == b.arrival_resources),
                    "criterion 9 failed: trajectory not reproducible on instance {}",
                    idx
                );
            }
        }
    }
    pass("9 (invariant suite: zero violations across 10^4 generated cases)");
}

/// Spec-level probe beyond the numbered criteria: after convergence on the
/// stochastic toy, the navigate action's expected return at the start point
/// matches the oracle's one-step lookahead exactly.
#[test]
fn toy_navigate_q_matches_oracle_lookahead() {
    use haostar::backup::{q_value, SuccessorValues};
    let p = make_rover_problem(&RoverParams::two_rock_demo()).unwrap();
    let table = oracle::solve_exact(&p, &p.initial_resources, oracle::DEFAULT_STATE_CAP).unwrap();
    let s = solve(&p, &SolveOptions { expansion_horizon: Some(2), ..Default::default() }).unwrap();
    let x0 = &p.initial_resources;
    let idx = haostar::model::ActionIndex::new(&p);
    for aid in idx.matching(p.initial_state) {
        let action = &p.actions[aid as usize];
        if !action.applicability.contains(x0, p.xmax()) {
            continue;
        }
        // Successor values from the converged solution.
        let mut succ = SuccessorValues::new();
        for branch in &action.branches {
            for out in &branch.outcomes {
                let v = s
                    .node(out.successor)
                    .map(|n| n.value.clone())
                    .unwrap_or_else(|| haostar::pwc::Pwc::constant(p.space.dims, 0.0));
                succ.entry(out.successor.0).or_insert(v);
            }
        }
        let region = haostar::pwc::Region::from_box(p.point_cell(x0));
        let q = q_value(&p, p.initial_state, aid, &region, &succ).unwrap();
        let got = q.q.evaluate(x0, p.xmax()).unwrap();
        // Oracle's one-step lookahead with its own optimal values.
        let branch = action.branch_at(x0, p.xmax()).unwrap();
        let mut want = 0.0;
        for out in &branch.outcomes {
            let arrival = out.effect.arrival(x0);
            let r = action.reward_for(out.successor, p.space.dims).evaluate(&arrival, p.xmax()).unwrap();
            let v = table.value(out.successor, &arrival).expect("arrival enumerated");
            want += out.probability * (r + v);
        }
        assert!(
            (got - want).abs() <= TOL,
            "Q mismatch for {}: {} vs {}",
            action.name,
            got,
            want
        );
    }
}
