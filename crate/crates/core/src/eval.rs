//! Exact finite-horizon evaluation of joint policies by dynamic programming.
//!
//! Everything here is computed over the full joint state space: backward
//! induction for values, forward propagation for time-indexed occupancies,
//! and the finite-horizon policy-gradient theorem for logit gradients. No
//! sampling is involved anywhere.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::TabularSG;
use crate::policy::{Population, SoftmaxPolicy};

/// Which per-step payoff a dynamic program accumulates.
#[derive(Clone, Copy)]
enum Payoff<'a> {
    /// The game's shared transition reward.
    Reward,
    /// A weight on the state occupied at each step, ignoring game rewards.
    State(&'a [f64]),
}

/// Value-to-go tables `V_t(s)` for `t = 0..=H`, flat `[t * S + s]`.
fn backward_values(sg: &TabularSG, pa: &[f64], pb: &[f64], payoff: Payoff) -> Vec<f64> {
    let s_count = sg.num_states();
    let a_count = sg.num_actions();
    let h = sg.horizon();
    let gamma = sg.discount();
    let mut values = vec![0.0; (h + 1) * s_count];
    for t in (0..h).rev() {
        let (head, tail) = values.split_at_mut((t + 1) * s_count);
        let current = &mut head[t * s_count..];
        let next_v = &tail[..s_count];
        for s in 0..s_count {
            let row_a = &pa[s * a_count..(s + 1) * a_count];
            let row_b = &pb[s * a_count..(s + 1) * a_count];
            let mut v = match payoff {
                Payoff::Reward => 0.0,
                Payoff::State(w) => w[s],
            };
            for (a1, &p1) in row_a.iter().enumerate() {
                let mut inner = 0.0;
                for (a2, &p2) in row_b.iter().enumerate() {
                    let (next, r) = sg.transition(s, a1, a2);
                    let r = match payoff {
                        Payoff::Reward => r,
                        Payoff::State(_) => 0.0,
                    };
                    inner += p2 * (r + gamma * next_v[next]);
                }
                v += p1 * inner;
            }
            current[s] = v;
        }
    }
    values
}

/// State distributions `Pr(s_t = s)` for `t = 0..H`, flat `[t * S + s]`.
fn forward_occupancy(sg: &TabularSG, pa: &[f64], pb: &[f64]) -> Vec<f64> {
    let s_count = sg.num_states();
    let a_count = sg.num_actions();
    let h = sg.horizon();
    let mut occ = vec![0.0; h * s_count];
    occ[sg.initial_state()] = 1.0;
    for t in 0..h.saturating_sub(1) {
        let (head, tail) = occ.split_at_mut((t + 1) * s_count);
        let current = &head[t * s_count..];
        let next_d = &mut tail[..s_count];
        for s in 0..s_count {
            let mass = current[s];
            if mass == 0.0 {
                continue;
            }
            for a1 in 0..a_count {
                let m1 = mass * pa[s * a_count + a1];
                for a2 in 0..a_count {
                    let (next, _) = sg.transition(s, a1, a2);
                    next_d[next] += m1 * pb[s * a_count + a2];
                }
            }
        }
    }
    occ
}

/// Accumulates the exact logit gradients of the quantity whose value tables
/// are `values`, using occupancies `occ`.
fn accumulate_gradients(
    sg: &TabularSG,
    pa: &[f64],
    pb: &[f64],
    values: &[f64],
    occ: &[f64],
    payoff: Payoff,
) -> (Vec<f64>, Vec<f64>) {
    let s_count = sg.num_states();
    let a_count = sg.num_actions();
    let gamma = sg.discount();
    let mut grad_a = vec![0.0; pa.len()];
    let mut grad_b = vec![0.0; pb.len()];
    let mut q = vec![0.0; a_count * a_count];
    let mut qa = vec![0.0; a_count];
    let mut qb = vec![0.0; a_count];
    let mut discount_t = 1.0;
    for t in 0..sg.horizon() {
        let next_v = &values[(t + 1) * s_count..(t + 2) * s_count];
        for s in 0..s_count {
            let weight = discount_t * occ[t * s_count + s];
            if weight == 0.0 {
                continue;
            }
            let row_a = &pa[s * a_count..(s + 1) * a_count];
            let row_b = &pb[s * a_count..(s + 1) * a_count];
            for a1 in 0..a_count {
                for a2 in 0..a_count {
                    let (next, r) = sg.transition(s, a1, a2);
                    let r = match payoff {
                        Payoff::Reward => r,
                        Payoff::State(_) => 0.0,
                    };
                    q[a1 * a_count + a2] = r + gamma * next_v[next];
                }
            }
            qa.fill(0.0);
            qb.fill(0.0);
            for a1 in 0..a_count {
                for a2 in 0..a_count {
                    let v = q[a1 * a_count + a2];
                    qa[a1] += row_b[a2] * v;
                    qb[a2] += row_a[a1] * v;
                }
            }
            let va: f64 = row_a.iter().zip(&qa).map(|(p, v)| p * v).sum();
            let vb: f64 = row_b.iter().zip(&qb).map(|(p, v)| p * v).sum();
            let ga = &mut grad_a[s * a_count..(s + 1) * a_count];
            for a in 0..a_count {
                ga[a] += weight * row_a[a] * (qa[a] - va);
            }
            let gb = &mut grad_b[s * a_count..(s + 1) * a_count];
            for a in 0..a_count {
                gb[a] += weight * row_b[a] * (qb[a] - vb);
            }
        }
        discount_t *= gamma;
    }
    (grad_a, grad_b)
}

fn check_pair(sg: &TabularSG, pi_a: &SoftmaxPolicy, pi_b: &SoftmaxPolicy) -> Result<()> {
    pi_a.check_shape(sg)?;
    pi_b.check_shape(sg)
}

/// Expected discounted return from the initial state when `pi_a` controls
/// agent 1 and `pi_b` controls agent 2.
pub fn evaluate_return(sg: &TabularSG, pi_a: &SoftmaxPolicy, pi_b: &SoftmaxPolicy) -> Result<f64> {
    check_pair(sg, pi_a, pi_b)?;
    Ok(return_from_probs(sg, &pi_a.probs(), &pi_b.probs()))
}

pub(crate) fn return_from_probs(sg: &TabularSG, pa: &[f64], pb: &[f64]) -> f64 {
    backward_values(sg, pa, pb, Payoff::Reward)[sg.initial_state()]
}

/// Return of a joint policy together with its logit gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGradient {
    pub value: f64,
    /// Gradient with respect to agent 1's logits, flat row-major.
    pub grad_a: Vec<f64>,
    /// Gradient with respect to agent 2's logits, flat row-major.
    pub grad_b: Vec<f64>,
}

pub(crate) fn pair_gradient_from_probs(sg: &TabularSG, pa: &[f64], pb: &[f64]) -> PairGradient {
    let values = backward_values(sg, pa, pb, Payoff::Reward);
    let occ = forward_occupancy(sg, pa, pb);
    let (grad_a, grad_b) = accumulate_gradients(sg, pa, pb, &values, &occ, Payoff::Reward);
    PairGradient {
        value: values[sg.initial_state()],
        grad_a,
        grad_b,
    }
}

/// Exact gradient of [`evaluate_return`] with respect to both policies' logits.
pub fn policy_gradient(
    sg: &TabularSG,
    pi_a: &SoftmaxPolicy,
    pi_b: &SoftmaxPolicy,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(sg, pi_a, pi_b)?;
    let g = pair_gradient_from_probs(sg, &pi_a.probs(), &pi_b.probs());
    Ok((g.grad_a, g.grad_b))
}

fn occupancy_norm(sg: &TabularSG) -> f64 {
    let gamma = sg.discount();
    (0..sg.horizon()).map(|t| gamma.powi(t as i32)).sum()
}

pub(crate) fn occupancy_from_probs(sg: &TabularSG, pa: &[f64], pb: &[f64]) -> Vec<f64> {
    let s_count = sg.num_states();
    let occ = forward_occupancy(sg, pa, pb);
    let gamma = sg.discount();
    let mut out = vec![0.0; s_count];
    let mut discount_t = 1.0;
    for d_t in occ.chunks(s_count) {
        for (o, &d) in out.iter_mut().zip(d_t) {
            *o += discount_t * d;
        }
        discount_t *= gamma;
    }
    let z = occupancy_norm(sg);
    for o in &mut out {
        *o /= z;
    }
    out
}

/// Normalised discounted state-visitation distribution over the first `H`
/// steps, terminal state included.
pub fn occupancy_distribution(
    sg: &TabularSG,
    pi_a: &SoftmaxPolicy,
    pi_b: &SoftmaxPolicy,
) -> Result<Vec<f64>> {
    check_pair(sg, pi_a, pi_b)?;
    Ok(occupancy_from_probs(sg, &pi_a.probs(), &pi_b.probs()))
}

pub(crate) fn occupancy_functional_gradient_from_probs(
    sg: &TabularSG,
    pa: &[f64],
    pb: &[f64],
    weights: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let z = occupancy_norm(sg);
    let scaled: Vec<f64> = weights.iter().map(|w| w / z).collect();
    let payoff = Payoff::State(&scaled);
    let values = backward_values(sg, pa, pb, payoff);
    let occ = forward_occupancy(sg, pa, pb);
    accumulate_gradients(sg, pa, pb, &values, &occ, payoff)
}

/// Gradient of `sum_s weights[s] * occupancy_distribution(s)` with respect to
/// both policies' logits.
pub fn occupancy_functional_gradient(
    sg: &TabularSG,
    pi_a: &SoftmaxPolicy,
    pi_b: &SoftmaxPolicy,
    weights: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(sg, pi_a, pi_b)?;
    if weights.len() != sg.num_states() {
        return Err(Error::DimensionMismatch(format!(
            "{} occupancy weights for {} states",
            weights.len(),
            sg.num_states()
        )));
    }
    Ok(occupancy_functional_gradient_from_probs(
        sg,
        &pi_a.probs(),
        &pi_b.probs(),
        weights,
    ))
}

/// Logit gradients of one cross-play entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EntryGradient {
    /// With respect to the best response in the agent-1 role.
    pub best_response: Vec<f64>,
    /// With respect to the teammate in the agent-2 role.
    pub teammate: Vec<f64>,
}

/// `values[i][j]` is the return of best response `i` (agent 1) paired with
/// teammate `j` (agent 2) from the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossPlayMatrix {
    pub values: Vec<Vec<f64>>,
    pub grads: Vec<Vec<EntryGradient>>,
}

impl CrossPlayMatrix {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn trace(&self) -> f64 {
        (0..self.k()).map(|i| self.values[i][i]).sum()
    }
}

/// Evaluates all `K^2` pairings with gradients. Entries are computed in
/// parallel and assembled in fixed row-major order.
pub fn cross_play_matrix(sg: &TabularSG, pop: &Population) -> Result<CrossPlayMatrix> {
    pop.check_shape(sg)?;
    let k = pop.k();
    let br_probs: Vec<Vec<f64>> = pop.best_responses.iter().map(SoftmaxPolicy::probs).collect();
    let tm_probs: Vec<Vec<f64>> = pop.teammates.iter().map(SoftmaxPolicy::probs).collect();
    let entries: Vec<PairGradient> = (0..k * k)
        .into_par_iter()
        .map(|e| pair_gradient_from_probs(sg, &br_probs[e / k], &tm_probs[e % k]))
        .collect();
    let mut values = vec![vec![0.0; k]; k];
    let mut grads = Vec::with_capacity(k);
    let mut iter = entries.into_iter();
    for row in values.iter_mut() {
        let mut grad_row = Vec::with_capacity(k);
        for v in row.iter_mut() {
            let entry = iter.next().expect("k*k entries");
            *v = entry.value;
            grad_row.push(EntryGradient {
                best_response: entry.grad_a,
                teammate: entry.grad_b,
            });
        }
        grads.push(grad_row);
    }
    Ok(CrossPlayMatrix { values, grads })
}

/// Cross-play values only.
pub fn cross_play_values(sg: &TabularSG, pop: &Population) -> Result<Vec<Vec<f64>>> {
    pop.check_shape(sg)?;
    let k = pop.k();
    let br_probs: Vec<Vec<f64>> = pop.best_responses.iter().map(SoftmaxPolicy::probs).collect();
    let tm_probs: Vec<Vec<f64>> = pop.teammates.iter().map(SoftmaxPolicy::probs).collect();
    let flat: Vec<f64> = (0..k * k)
        .into_par_iter()
        .map(|e| return_from_probs(sg, &br_probs[e / k], &tm_probs[e % k]))
        .collect();
    Ok(flat.chunks(k).map(<[f64]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{build_gridworld, Action, GridWorld, GridWorldSpec};

    const GAMMA: f64 = 0.95;

    fn grid() -> GridWorld {
        build_gridworld(&GridWorldSpec::default(), 10, GAMMA).unwrap()
    }

    fn constant(g: &GridWorld, action: Action) -> SoftmaxPolicy {
        let mut p = SoftmaxPolicy::uniform_for(g);
        for s in 0..g.num_states() {
            p.row_mut(s)[action.index()] = 50.0;
        }
        p
    }

    #[test]
    fn always_up_never_scores() {
        let g = grid();
        let up = constant(&g, Action::Up);
        assert!(evaluate_return(&g, &up, &up).unwrap().abs() < 1e-15);
    }

    #[test]
    fn zero_reward_has_zero_gradient() {
        let g = grid().sg().map_rewards(|_| 0.0).unwrap();
        let p = SoftmaxPolicy::from_flat(
            g.num_states(),
            4,
            (0..g.num_states() * 4).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let (ga, gb) = policy_gradient(&g, &p, &p).unwrap();
        assert!(ga.iter().chain(&gb).all(|&x| x == 0.0));
    }

    #[test]
    fn horizon_one_occupancy_is_point_mass() {
        let g = build_gridworld(&GridWorldSpec::default(), 1, GAMMA).unwrap();
        let p = SoftmaxPolicy::uniform_for(&g);
        let d = occupancy_distribution(&g, &p, &p).unwrap();
        assert_eq!(d[g.initial_state()], 1.0);
        assert_eq!(d.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn always_up_occupancy_support() {
        let g = grid();
        let up = constant(&g, Action::Up);
        let d = occupancy_distribution(&g, &up, &up).unwrap();
        let support: Vec<usize> = (0..d.len()).filter(|&s| d[s] > 1e-12).collect();
        let mut expected: Vec<usize> = [(2, 2), (1, 2), (0, 2)]
            .iter()
            .map(|&c| g.encode(c, c).unwrap())
            .collect();
        expected.sort();
        assert_eq!(support, expected);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let g = grid();
        let small = SoftmaxPolicy::zeros(3, 4);
        let ok = SoftmaxPolicy::uniform_for(&g);
        assert!(evaluate_return(&g, &small, &ok).is_err());
        assert!(policy_gradient(&g, &ok, &small).is_err());
        assert!(occupancy_distribution(&g, &small, &small).is_err());
        assert!(occupancy_functional_gradient(&g, &ok, &ok, &[0.0; 3]).is_err());
    }
}
