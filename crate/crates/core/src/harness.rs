//! Robustness diagnostics: scripted corner experts, greedy corner
//! assignment of trained teammates, and a learner trained against a
//! population mixture then scored on held-out teammates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{pair_gradient_from_probs, return_from_probs};
use crate::game::{Action, Cell, GridWorld, TabularSG};
use crate::optim::Optimizer;
use crate::policy::{init_population, Population, SoftmaxPolicy};
use crate::trainer::{TrainConfig, LEARNER_SEED_OFFSET};

/// Logit given to the expert's chosen action; all others are 0.
pub const EXPERT_LOGIT: f64 = 50.0;

/// The seat a policy occupies in the game.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Agent 1: best responses and learners.
    Agent1,
    /// Agent 2: teammates.
    Agent2,
}

fn expert_action(world: &GridWorld, own: Cell, corner: Cell) -> Action {
    if own.0 > corner.0 {
        Action::Up
    } else if own.0 < corner.0 {
        Action::Down
    } else if own.1 > corner.1 {
        Action::Left
    } else if own.1 < corner.1 {
        Action::Right
    } else {
        // First move that clips in place; corners always have one.
        Action::ALL
            .into_iter()
            .find(|&a| world.spec().move_cell(own, a) == own)
            .unwrap_or(Action::Up)
    }
}

/// A teammate (agent 2) that walks rows-first to `corner`.
pub fn make_corner_expert(world: &GridWorld, corner: Cell) -> Result<SoftmaxPolicy> {
    make_corner_expert_for(world, corner, Role::Agent2)
}

/// Saturated policy for `role` that moves vertically toward `corner`'s row,
/// then horizontally toward its column, then pushes into the border so it
/// stays put. The terminal state plays `Up`.
pub fn make_corner_expert_for(world: &GridWorld, corner: Cell, role: Role) -> Result<SoftmaxPolicy> {
    if !world.spec().is_goal(corner) {
        return Err(Error::config(
            "corner",
            format!("{corner:?} is not a goal cell of this grid"),
        ));
    }
    let mut policy = SoftmaxPolicy::uniform_for(world);
    for s in 0..world.num_states() {
        let action = match world.decode(s) {
            Some((p1, p2)) => expert_action(world, if role == Role::Agent1 { p1 } else { p2 }, corner),
            None => Action::Up,
        };
        policy.row_mut(s)[action.index()] = EXPERT_LOGIT;
    }
    Ok(policy)
}

/// Goal cell occupied by each teammate at the end of a greedy self-play
/// episode with its best response, or `None`.
pub fn corner_assignment(world: &GridWorld, pop: &Population) -> Result<Vec<Option<Cell>>> {
    pop.check_shape(world)?;
    Ok(pop
        .best_responses
        .iter()
        .zip(&pop.teammates)
        .map(|(br, tm)| greedy_endpoint(world, br, tm))
        .map(|cell| cell.filter(|&c| world.spec().is_goal(c)))
        .collect())
}

fn greedy_endpoint(world: &GridWorld, agent1: &SoftmaxPolicy, agent2: &SoftmaxPolicy) -> Option<Cell> {
    let spec = world.spec();
    let mut state = world.initial_state();
    let (_, mut teammate_cell) = world.decode(state)?;
    for _ in 0..world.horizon() {
        let a1 = agent1.greedy_action(state);
        let a2 = agent2.greedy_action(state);
        let moved = spec.move_cell(teammate_cell, Action::from_index(a2)?);
        let (next, _) = world.transition(state, a1, a2);
        teammate_cell = moved;
        if next == world.terminal_state() {
            break;
        }
        state = next;
    }
    Some(teammate_cell)
}

/// True when every teammate ends on a goal cell and together they cover all
/// goal cells.
pub fn is_corner_split(world: &GridWorld, assignment: &[Option<Cell>]) -> bool {
    assignment.iter().all(Option::is_some)
        && world
            .spec()
            .goal_cells
            .iter()
            .all(|g| assignment.contains(&Some(*g)))
}

/// Best achievable team return from the initial state, by backward induction
/// over joint actions.
pub fn optimal_team_return(sg: &TabularSG) -> f64 {
    let n = sg.num_states();
    let a = sg.num_actions();
    let mut next_v = vec![0.0; n];
    let mut v = vec![0.0; n];
    for _ in 0..sg.horizon() {
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a1 in 0..a {
                for a2 in 0..a {
                    let (next, r) = sg.transition(s, a1, a2);
                    best = best.max(r + sg.discount() * next_v[next]);
                }
            }
            v[s] = best;
        }
        std::mem::swap(&mut v, &mut next_v);
    }
    next_v[sg.initial_state()]
}

/// Trains one agent-1 policy to maximise its mean return over `teammates`.
pub fn train_learner(sg: &TabularSG, teammates: &[SoftmaxPolicy], cfg: &TrainConfig) -> Result<SoftmaxPolicy> {
    if teammates.is_empty() {
        return Err(Error::config("teammates", "learner needs at least one teammate"));
    }
    for t in teammates {
        t.check_shape(sg)?;
    }
    let mut learner = init_population(1, sg, cfg.init_scale, cfg.seed_for(LEARNER_SEED_OFFSET))?
        .best_responses
        .remove(0);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.moments);
    let teammate_probs: Vec<Vec<f64>> = teammates.iter().map(SoftmaxPolicy::probs).collect();
    let weight = 1.0 / teammates.len() as f64;
    for iteration in 0..cfg.iterations {
        let probs = learner.probs();
        let mut grad = vec![0.0; probs.len()];
        for tp in &teammate_probs {
            let g = pair_gradient_from_probs(sg, &probs, tp);
            for (acc, x) in grad.iter_mut().zip(&g.grad_a) {
                *acc += weight * x;
            }
        }
        if grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::Training {
                iteration,
                source: Box::new(Error::NonFinite("learner gradient".into())),
            });
        }
        opt.ascend(&mut [learner.logits_mut()], &[grad]);
    }
    Ok(learner)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// Learner's expected return with each held-out teammate, in order.
    pub returns: Vec<f64>,
    /// Minimum of `returns`.
    pub robustness: f64,
    /// Corner reached by each generated teammate, when known.
    #[serde(default)]
    pub corner_assignment: Vec<Option<Cell>>,
}

pub fn evaluate_robustness(
    sg: &TabularSG,
    learner: &SoftmaxPolicy,
    held_out: &[SoftmaxPolicy],
) -> Result<RobustnessReport> {
    if held_out.is_empty() {
        return Err(Error::config("held_out", "need at least one held-out teammate"));
    }
    learner.check_shape(sg)?;
    for h in held_out {
        h.check_shape(sg)?;
    }
    let lp = learner.probs();
    let returns: Vec<f64> = held_out.iter().map(|h| return_from_probs(sg, &lp, &h.probs())).collect();
    let robustness = returns.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(RobustnessReport {
        returns,
        robustness,
        corner_assignment: Vec::new(),
    })
}
