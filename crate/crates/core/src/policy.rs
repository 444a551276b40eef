//! Tabular softmax policies over joint states and the teammate population.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::TabularSG;

/// Numerically stable softmax of one logit row.
pub fn softmax_probs(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logit row".into()));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// A stochastic policy given by one row of action logits per joint state.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxPolicy {
    num_states: usize,
    num_actions: usize,
    logits: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        SoftmaxPolicy {
            num_states,
            num_actions,
            logits: vec![0.0; num_states * num_actions],
        }
    }

    pub fn uniform_for(sg: &TabularSG) -> Self {
        Self::zeros(sg.num_states(), sg.num_actions())
    }

    /// Builds from a flat row-major `num_states x num_actions` buffer.
    pub fn from_flat(num_states: usize, num_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || logits.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch(format!(
                "{} logits for a {num_states}x{num_actions} policy",
                logits.len()
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("policy logits".into()));
        }
        Ok(SoftmaxPolicy {
            num_states,
            num_actions,
            logits,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let num_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_actions) {
            return Err(Error::DimensionMismatch("ragged logit rows".into()));
        }
        Self::from_flat(rows.len(), num_actions, rows.concat())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.logits.chunks(self.num_actions).map(<[f64]>::to_vec).collect()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.logits[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn row_mut(&mut self, state: usize) -> &mut [f64] {
        &mut self.logits[state * self.num_actions..(state + 1) * self.num_actions]
    }

    /// Action probabilities for every state, flat row-major.
    pub fn probs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.logits.len()];
        for (src, dst) in self
            .logits
            .chunks(self.num_actions)
            .zip(out.chunks_mut(self.num_actions))
        {
            softmax_into(src, dst);
        }
        out
    }

    /// Index of the largest logit in `state`'s row; ties go to the lowest index.
    pub fn greedy_action(&self, state: usize) -> usize {
        let row = self.row(state);
        let mut best = 0;
        for (a, &x) in row.iter().enumerate().skip(1) {
            if x > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn check_shape(&self, sg: &TabularSG) -> Result<()> {
        if self.num_states != sg.num_states() || self.num_actions != sg.num_actions() {
            return Err(Error::DimensionMismatch(format!(
                "policy is {}x{}, game is {}x{}",
                self.num_states,
                self.num_actions,
                sg.num_states(),
                sg.num_actions()
            )));
        }
        Ok(())
    }
}

/// K teammates and the K best-response partners trained alongside them.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub teammates: Vec<SoftmaxPolicy>,
    pub best_responses: Vec<SoftmaxPolicy>,
}

impl Population {
    pub fn new(teammates: Vec<SoftmaxPolicy>, best_responses: Vec<SoftmaxPolicy>) -> Result<Self> {
        if teammates.is_empty() {
            return Err(Error::config("k", "population must contain at least one teammate"));
        }
        if teammates.len() != best_responses.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} teammates but {} best responses",
                teammates.len(),
                best_responses.len()
            )));
        }
        let first = &teammates[0];
        let shape = (first.num_states(), first.num_actions());
        if teammates
            .iter()
            .chain(&best_responses)
            .any(|p| (p.num_states(), p.num_actions()) != shape)
        {
            return Err(Error::DimensionMismatch("population policies differ in shape".into()));
        }
        Ok(Population {
            teammates,
            best_responses,
        })
    }

    pub fn k(&self) -> usize {
        self.teammates.len()
    }

    pub fn check_shape(&self, sg: &TabularSG) -> Result<()> {
        self.teammates
            .iter()
            .chain(&self.best_responses)
            .try_for_each(|p| p.check_shape(sg))
    }
}

/// Draws `2k` policies with logits uniform on `[-init_scale, init_scale]`:
/// all teammates first, then all best responses.
pub fn init_population(k: usize, sg: &TabularSG, init_scale: f64, seed: u64) -> Result<Population> {
    if k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    if !(init_scale.is_finite() && init_scale >= 0.0) {
        return Err(Error::config("init_scale", "must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || random_policy(sg, init_scale, &mut rng);
    let teammates = (0..k).map(|_| draw()).collect();
    let best_responses = (0..k).map(|_| draw()).collect();
    Population::new(teammates, best_responses)
}

pub(crate) fn random_policy(sg: &TabularSG, scale: f64, rng: &mut impl Rng) -> SoftmaxPolicy {
    let mut p = SoftmaxPolicy::uniform_for(sg);
    if scale > 0.0 {
        for x in p.logits_mut() {
            *x = rng.gen_range(-scale..=scale);
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{build_gridworld, GridWorldSpec};
    use proptest::prelude::*;

    #[test]
    fn uniform_row() {
        assert_eq!(softmax_probs(&[0.0; 4]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn saturated_row_does_not_overflow() {
        let p = softmax_probs(&[1000.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p[1..].iter().all(|x| (0.0..1e-300).contains(x)));
    }

    #[test]
    fn ln2_row() {
        let p = softmax_probs(&[std::f64::consts::LN_2, 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(softmax_probs(&[f64::NAN, 0.0]).is_err());
        assert!(softmax_probs(&[f64::INFINITY, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn shift_invariant(row in prop::collection::vec(-30.0f64..30.0, 1..8), c in -100.0f64..100.0) {
            let p = softmax_probs(&row).unwrap();
            let shifted: Vec<f64> = row.iter().map(|x| x + c).collect();
            let q = softmax_probs(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn init_shapes_and_determinism() {
        let g = build_gridworld(&GridWorldSpec::default(), 10, 0.95).unwrap();
        let a = init_population(2, &g, 0.1, 7).unwrap();
        let b = init_population(2, &g, 0.1, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.k(), 2);
        for p in a.teammates.iter().chain(&a.best_responses) {
            assert_eq!((p.num_states(), p.num_actions()), (626, 4));
            assert!(p.logits().iter().all(|x| x.abs() <= 0.1));
        }
        assert_ne!(a.teammates[0], a.teammates[1]);
        assert_ne!(a, init_population(2, &g, 0.1, 8).unwrap());
    }

    #[test]
    fn zero_scale_is_uniform() {
        let g = build_gridworld(&GridWorldSpec::default(), 10, 0.95).unwrap();
        let pop = init_population(3, &g, 0.0, 1).unwrap();
        for p in pop.teammates.iter().chain(&pop.best_responses) {
            assert!(p.probs().iter().all(|&x| x == 0.25));
        }
    }

    #[test]
    fn rejects_empty_population() {
        let g = build_gridworld(&GridWorldSpec::default(), 10, 0.95).unwrap();
        assert!(init_population(0, &g, 0.1, 1).is_err());
        assert!(Population::new(vec![], vec![]).is_err());
    }

    #[test]
    fn greedy_ties_pick_lowest() {
        let p = SoftmaxPolicy::from_flat(1, 4, vec![0.0, 1.0, 1.0, 0.5]).unwrap();
        assert_eq!(p.greedy_action(0), 1);
        assert_eq!(SoftmaxPolicy::zeros(1, 4).greedy_action(0), 0);
    }
}
