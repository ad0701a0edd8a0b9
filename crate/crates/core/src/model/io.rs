//! JSON problem files. The on-disk shape favors hand-authoring: source
//! patterns are maps from fluent name to required value, discrete states are
//! bit strings aligned with the `fluents` array (leftmost character is
//! fluent 0), boxes are `{lo: [...], hi: [...]}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::pwc::{BoxR, Pwc};
use crate::Result;

use super::{
    ActionSpec, Branch, DiscreteState, Effect, GoalGuard, HybridProblem, OutcomeBranch,
    ResourceSpace, StatePattern,
};

#[derive(Serialize, Deserialize)]
struct ProblemFile {
    space: SpaceFile,
    fluents: Vec<String>,
    goals: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    heuristic_guards: Vec<GoalGuard>,
    c_min: f64,
    initial: InitialFile,
    actions: Vec<ActionFile>,
}

#[derive(Serialize, Deserialize)]
struct SpaceFile {
    dims: usize,
    max: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct InitialFile {
    state: String,
    x0: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ActionFile {
    name: String,
    source: BTreeMap<String, bool>,
    applicability: BoxR,
    branches: Vec<BranchFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    rewards: Vec<RewardFile>,
}

#[derive(Serialize, Deserialize)]
struct BranchFile {
    region: BoxR,
    outcomes: Vec<OutcomeFile>,
}

#[derive(Serialize, Deserialize)]
struct OutcomeFile {
    p: f64,
    successor: String,
    effect: Effect,
}

#[derive(Serialize, Deserialize)]
struct RewardFile {
    successor: String,
    default: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pieces: Vec<RewardPiece>,
}

#[derive(Serialize, Deserialize)]
struct RewardPiece {
    lo: Vec<f64>,
    hi: Vec<f64>,
    value: f64,
}

fn fluent_index(fluents: &[String], name: &str) -> Result<usize> {
    fluents
        .iter()
        .position(|f| f == name)
        .ok_or_else(|| Error::domain(format!("unknown fluent {:?} in source pattern", name)))
}

/// Parse a problem from its JSON text form.
pub fn problem_from_json(text: &str) -> Result<HybridProblem> {
    let file: ProblemFile = serde_json::from_str(text)?;
    let width = file.fluents.len();
    if width > 64 {
        return Err(Error::domain("at most 64 fluents are supported"));
    }
    if file.space.max.len() != file.space.dims {
        return Err(Error::domain("space.max length does not match space.dims"));
    }
    let parse_state = |s: &str| -> Result<DiscreteState> {
        if s.len() != width {
            return Err(Error::domain(format!(
                "state string {:?} has {} bits, problem has {} fluents",
                s,
                s.len(),
                width
            )));
        }
        DiscreteState::from_bitstring(s)
    };

    let mut actions = Vec::with_capacity(file.actions.len());
    for a in &file.actions {
        let mut pattern = StatePattern { mask: 0, value: 0 };
        for (name, required) in &a.source {
            let i = fluent_index(&file.fluents, name)?;
            pattern.mask |= 1 << i;
            if *required {
                pattern.value |= 1 << i;
            }
        }
        let branches = a
            .branches
            .iter()
            .map(|b| {
                let outcomes = b
                    .outcomes
                    .iter()
                    .map(|o| {
                        Ok(OutcomeBranch {
                            probability: o.p,
                            successor: parse_state(&o.successor)?,
                            effect: o.effect.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Branch { region: b.region.clone(), outcomes })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rewards = BTreeMap::new();
        for r in &a.rewards {
            let succ = parse_state(&r.successor)?;
            let pwc = Pwc::from_pieces(
                file.space.dims,
                r.default,
                r.pieces.iter().map(|p| (BoxR::new(p.lo.clone(), p.hi.clone()), p.value)),
            );
            rewards.insert(succ.0, pwc);
        }
        actions.push(ActionSpec {
            name: a.name.clone(),
            source: pattern,
            applicability: a.applicability.clone(),
            branches,
            rewards,
        });
    }

    let mut problem = HybridProblem {
        space: ResourceSpace::new(file.space.max.clone()),
        fluent_names: file.fluents.clone(),
        goal_rewards: file.goals.clone(),
        heuristic_guards: file.heuristic_guards.clone(),
        actions,
        initial_state: parse_state(&file.initial.state)?,
        initial_resources: file.initial.x0.clone(),
        c_min: file.c_min,
    };
    problem.normalize();
    Ok(problem)
}

/// Render a problem to its JSON text form (pretty-printed). Boxes that the
/// in-memory form stretched up to the padded ceiling come back down to the
/// true hypercube bounds, so the file shape is load/save stable.
pub fn problem_to_json(problem: &HybridProblem) -> Result<String> {
    let width = problem.width();
    let grid = problem.grid_max();
    let state_str = |s: DiscreteState| s.to_bitstring(width);
    let unpad = |bx: &BoxR| {
        let mut b = bx.clone();
        for i in 0..b.dims() {
            if b.hi[i] == grid[i] {
                b.hi[i] = problem.space.max[i];
            }
        }
        b
    };
    let actions = problem
        .actions
        .iter()
        .map(|a| {
            let mut source = BTreeMap::new();
            for i in 0..width {
                if a.source.mask >> i & 1 == 1 {
                    source.insert(problem.fluent_names[i].clone(), a.source.value >> i & 1 == 1);
                }
            }
            ActionFile {
                name: a.name.clone(),
                source,
                applicability: unpad(&a.applicability),
                branches: a
                    .branches
                    .iter()
                    .map(|b| BranchFile {
                        region: unpad(&b.region),
                        outcomes: b
                            .outcomes
                            .iter()
                            .map(|o| OutcomeFile {
                                p: o.probability,
                                successor: state_str(o.successor),
                                effect: o.effect.clone(),
                            })
                            .collect(),
                    })
                    .collect(),
                rewards: a
                    .rewards
                    .iter()
                    .map(|(succ, pwc)| RewardFile {
                        successor: state_str(DiscreteState(*succ)),
                        default: *pwc.default_value(),
                        pieces: pwc
                            .pieces()
                            .iter()
                            .map(|(b, v)| {
                                let b = unpad(b);
                                RewardPiece { lo: b.lo, hi: b.hi, value: *v }
                            })
                            .collect(),
                    })
                    .collect(),
            }
        })
        .collect();
    let file = ProblemFile {
        space: SpaceFile { dims: problem.space.dims, max: problem.space.max.clone() },
        fluents: problem.fluent_names.clone(),
        goals: problem.goal_rewards.clone(),
        heuristic_guards: problem.heuristic_guards.clone(),
        c_min: problem.c_min,
        initial: InitialFile {
            state: state_str(problem.initial_state),
            x0: problem.initial_resources.clone(),
        },
        actions,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}
