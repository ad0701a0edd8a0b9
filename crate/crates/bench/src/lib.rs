//! Shared fixtures for the benchmark suite.

use haostar::model::rover::{make_rover_problem, RoverParams};
use haostar::model::HybridProblem;

/// The stochastic two-rock demo instance.
pub fn toy_problem() -> HybridProblem {
    make_rover_problem(&RoverParams::two_rock_demo()).expect("demo params are valid")
}

/// The over-subscribed five-goal instance.
pub fn five_goal_problem() -> HybridProblem {
    make_rover_problem(&RoverParams::five_goal_demo()).expect("demo params are valid")
}
