#![allow(dead_code)]

use brdiv::game::{build_gridworld, GridWorld, GridWorldSpec, TabularSG};
use brdiv::policy::SoftmaxPolicy;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const GAMMA_CUBED: f64 = 0.857375;

pub fn default_world() -> GridWorld {
    build_gridworld(&GridWorldSpec::default(), 10, 0.95).unwrap()
}

pub fn small_spec() -> GridWorldSpec {
    GridWorldSpec {
        width: 3,
        height: 3,
        start: (1, 1),
        goal_cells: vec![(0, 0), (2, 2)],
    }
}

pub fn small_world(horizon: usize) -> GridWorld {
    build_gridworld(&small_spec(), horizon, 0.95).unwrap()
}

pub fn random_policy(sg: &TabularSG, scale: f64, rng: &mut impl Rng) -> SoftmaxPolicy {
    let mut p = SoftmaxPolicy::uniform_for(sg);
    for x in p.logits_mut() {
        *x = rng.gen_range(-scale..=scale);
    }
    p
}

pub fn random_matrix(k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..k).map(|_| (0..k).map(|_| rng.gen::<f64>()).collect()).collect()
}

/// Row-wise action probabilities for one joint state.
pub fn row_probs(p: &SoftmaxPolicy, state: usize) -> Vec<f64> {
    brdiv::policy::softmax_probs(p.row(state)).unwrap()
}

/// Grid dynamics written out directly from the rules, independent of the
/// transition tables: clip at borders, pay 1 on arriving together on a goal.
pub fn rule_step(spec: &GridWorldSpec, p1: (usize, usize), p2: (usize, usize), a1: usize, a2: usize) -> ((usize, usize), (usize, usize), bool) {
    let mv = |(r, c): (usize, usize), a: usize| -> (usize, usize) {
        match a {
            0 => (r.saturating_sub(1), c),
            1 => ((r + 1).min(spec.height - 1), c),
            2 => (r, c.saturating_sub(1)),
            3 => (r, (c + 1).min(spec.width - 1)),
            _ => unreachable!(),
        }
    };
    let n1 = mv(p1, a1);
    let n2 = mv(p2, a2);
    let scored = n1 == n2 && spec.goal_cells.contains(&n1);
    (n1, n2, scored)
}

/// Sums over every joint action sequence of length H, weighting each by its
/// probability under the two policies.
pub fn brute_force_return(world: &GridWorld, pa: &SoftmaxPolicy, pb: &SoftmaxPolicy) -> f64 {
    let spec = world.spec().clone();
    let gamma = world.discount();
    let horizon = world.horizon();
    let sequences = 16usize.pow(horizon as u32);
    let mut total = 0.0;
    for code in 0..sequences {
        let mut pos = Some((spec.start, spec.start));
        let mut weight = 1.0;
        let mut ret = 0.0;
        let mut c = code;
        for t in 0..horizon {
            let a1 = c % 4;
            let a2 = (c / 4) % 4;
            c /= 16;
            let state = match pos {
                Some((p1, p2)) => world.encode(p1, p2).unwrap(),
                None => world.terminal_state(),
            };
            weight *= row_probs(pa, state)[a1] * row_probs(pb, state)[a2];
            if let Some((p1, p2)) = pos {
                let (n1, n2, scored) = rule_step(&spec, p1, p2, a1, a2);
                if scored {
                    ret += gamma.powi(t as i32);
                    pos = None;
                } else {
                    pos = Some((n1, n2));
                }
            }
        }
        total += weight * ret;
    }
    total
}

/// Mean discounted return over sampled episodes and its standard error.
pub fn monte_carlo(world: &GridWorld, pa: &SoftmaxPolicy, pb: &SoftmaxPolicy, episodes: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let spec = world.spec().clone();
    let gamma = world.discount();
    let samplers = |p: &SoftmaxPolicy| -> Vec<WeightedIndex<f64>> {
        (0..world.num_states())
            .map(|s| WeightedIndex::new(row_probs(p, s)).unwrap())
            .collect()
    };
    let (sa, sb) = (samplers(pa), samplers(pb));
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..episodes {
        let (mut p1, mut p2) = (spec.start, spec.start);
        let mut ret = 0.0;
        for t in 0..world.horizon() {
            let s = world.encode(p1, p2).unwrap();
            let (n1, n2, scored) = rule_step(&spec, p1, p2, sa[s].sample(rng), sb[s].sample(rng));
            if scored {
                ret = gamma.powi(t as i32);
                break;
            }
            p1 = n1;
            p2 = n2;
        }
        sum += ret;
        sum_sq += ret * ret;
    }
    let n = episodes as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}
