use haostar::model::rover::{make_rover_problem, RoverParams};
use haostar::oracle;
use haostar::search::{solve, SolveOptions};
use std::time::Instant;

fn main() {
    let p = make_rover_problem(&RoverParams::five_goal_demo()).unwrap();
    println!("five_goal: {} fluents, {} actions", p.width(), p.actions.len());
    for e in [4.0, 8.0, 12.0, 16.0, 20.0] {
        let x0 = vec![p.space.max[0], e];
        let t0 = Instant::now();
        let r = oracle::count_reachable_discrete(&p, &x0).unwrap();
        let t_reach = t0.elapsed();
        let t0 = Instant::now();
        let s = solve(&p, &SolveOptions { x0: Some(x0), iteration_trace: false, ..Default::default() }).unwrap();
        println!(
            "e={} reachable={} ({:?}) created={} value={} iters={} solve={:?}",
            e, r, t_reach, s.stats.nodes_created, s.value_at_start, s.stats.iterations, t0.elapsed()
        );
    }
}
