//! Joint gradient ascent of a teammate population and its best responses.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diversity::{
    det_grad_wrt_c, jsd_population_score, jsd_population_score_grad, objective, KernelConfig,
};
use crate::error::{Error, Result};
use crate::eval::{
    cross_play_matrix, cross_play_values, occupancy_from_probs,
    occupancy_functional_gradient_from_probs, pair_gradient_from_probs, CrossPlayMatrix,
};
use crate::game::{build_gridworld, GridWorld, GridWorldSpec, TabularSG};
use crate::optim::{MomentConfig, Optimizer, OptimizerKind};
use crate::policy::{init_population, Population, SoftmaxPolicy};

/// Seed offsets from the run's master seed, one per component.
pub const POPULATION_SEED_OFFSET: u64 = 0;
pub const LEARNER_SEED_OFFSET: u64 = 1;
pub const GRADCHECK_SEED_OFFSET: u64 = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    BrDiversity,
    JsdBaseline,
}

/// Which policies receive the diversity term's gradient. The trace term
/// always updates both roles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivGradTargets {
    #[default]
    AllParameters,
    TeammatesOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    pub k: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub moments: MomentConfig,
    pub kernel: KernelConfig,
    pub div_grad_targets: DivGradTargets,
    pub jsd_weight: f64,
    pub seed: u64,
    pub horizon: usize,
    pub discount: f64,
    pub init_scale: f64,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub env: GridWorldSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::BrDiversity,
            k: 2,
            iterations: 2000,
            learning_rate: 0.05,
            optimizer: OptimizerKind::AdaptiveMoments,
            moments: MomentConfig::default(),
            kernel: KernelConfig::default(),
            div_grad_targets: DivGradTargets::AllParameters,
            jsd_weight: 1.0,
            seed: 0,
            horizon: 10,
            discount: 0.95,
            init_scale: 0.1,
            log_every: 1,
            checkpoint_every: 0,
            env: GridWorldSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if self.method == Method::JsdBaseline && self.k < 2 {
            return Err(Error::config("k", "the jsd-baseline method needs k >= 2"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be finite and positive"));
        }
        if !(self.jsd_weight.is_finite() && self.jsd_weight >= 0.0) {
            return Err(Error::config("jsd_weight", "must be finite and non-negative"));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::config("init_scale", "must be finite and non-negative"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every", "must be at least 1"));
        }
        let m = &self.moments;
        if !((0.0..1.0).contains(&m.beta1) && (0.0..1.0).contains(&m.beta2) && m.epsilon > 0.0) {
            return Err(Error::config("moments", "need 0 <= beta < 1 and epsilon > 0"));
        }
        self.kernel.validate()?;
        self.env.validate()?;
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::config("discount", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn build_world(&self) -> Result<GridWorld> {
        build_gridworld(&self.env, self.horizon, self.discount)
    }

    pub fn seed_for(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iteration: usize,
    pub trace: f64,
    /// Determinant term, or the mean pairwise JSD for the baseline.
    pub diversity: f64,
    pub objective: f64,
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub population: Population,
    pub metrics: Vec<MetricRecord>,
    pub cross_play: CrossPlayMatrix,
}

/// Gradient of the training objective for every policy in a population.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationGradient {
    pub teammates: Vec<Vec<f64>>,
    pub best_responses: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveTerms {
    pub trace: f64,
    pub diversity: f64,
    pub total: f64,
}

fn probs_of(policies: &[SoftmaxPolicy]) -> Vec<Vec<f64>> {
    policies.iter().map(SoftmaxPolicy::probs).collect()
}

/// The training objective at `pop`. Median bandwidth is resolved from the
/// current cross-play matrix.
pub fn population_objective(sg: &TabularSG, pop: &Population, cfg: &TrainConfig) -> Result<ObjectiveTerms> {
    match cfg.method {
        Method::BrDiversity => {
            let values = cross_play_values(sg, pop)?;
            let o = objective(&values, &cfg.kernel.resolved(&values))?;
            Ok(ObjectiveTerms {
                trace: o.trace_term,
                diversity: o.det_term,
                total: o.total,
            })
        }
        Method::JsdBaseline => {
            pop.check_shape(sg)?;
            let br = probs_of(&pop.best_responses);
            let tm = probs_of(&pop.teammates);
            let trace: f64 = (0..pop.k())
                .map(|i| crate::eval::return_from_probs(sg, &br[i], &tm[i]))
                .sum();
            let occ: Vec<Vec<f64>> = (0..pop.k())
                .map(|i| occupancy_from_probs(sg, &br[i], &tm[i]))
                .collect();
            let score = jsd_population_score(&occ)?;
            Ok(ObjectiveTerms {
                trace,
                diversity: score,
                total: trace + cfg.jsd_weight * score,
            })
        }
    }
}

/// The objective and its exact gradient with respect to every logit.
pub fn population_gradient(
    sg: &TabularSG,
    pop: &Population,
    cfg: &TrainConfig,
) -> Result<(ObjectiveTerms, PopulationGradient)> {
    let k = pop.k();
    let div_to_br = cfg.div_grad_targets == DivGradTargets::AllParameters;
    match cfg.method {
        Method::BrDiversity => {
            let cp = cross_play_matrix(sg, pop)?;
            let kernel = cfg.kernel.resolved(&cp.values);
            let o = objective(&cp.values, &kernel)?;
            let det_grad = det_grad_wrt_c(&cp.values, &kernel)?;
            let mut grad = PopulationGradient {
                teammates: vec![vec![0.0; pop.teammates[0].logits().len()]; k],
                best_responses: vec![vec![0.0; pop.best_responses[0].logits().len()]; k],
            };
            // Fixed (i, j) order keeps the reduction deterministic.
            for i in 0..k {
                for j in 0..k {
                    let trace_w = if i == j { 1.0 } else { 0.0 };
                    let tm_w = trace_w + det_grad[i][j];
                    let br_w = trace_w + if div_to_br { det_grad[i][j] } else { 0.0 };
                    let entry = &cp.grads[i][j];
                    axpy(&mut grad.teammates[j], tm_w, &entry.teammate);
                    axpy(&mut grad.best_responses[i], br_w, &entry.best_response);
                }
            }
            Ok((
                ObjectiveTerms {
                    trace: o.trace_term,
                    diversity: o.det_term,
                    total: o.total,
                },
                grad,
            ))
        }
        Method::JsdBaseline => {
            pop.check_shape(sg)?;
            let br = probs_of(&pop.best_responses);
            let tm = probs_of(&pop.teammates);
            let self_play: Vec<_> = (0..k)
                .map(|i| pair_gradient_from_probs(sg, &br[i], &tm[i]))
                .collect();
            let occ: Vec<Vec<f64>> = (0..k).map(|i| occupancy_from_probs(sg, &br[i], &tm[i])).collect();
            let score = jsd_population_score(&occ)?;
            let weights = jsd_population_score_grad(&occ)?;
            let mut grad = PopulationGradient {
                teammates: Vec::with_capacity(k),
                best_responses: Vec::with_capacity(k),
            };
            let mut trace = 0.0;
            for i in 0..k {
                let (div_br, div_tm) = occupancy_functional_gradient_from_probs(sg, &br[i], &tm[i], &weights[i]);
                let mut g_tm = self_play[i].grad_b.clone();
                axpy(&mut g_tm, cfg.jsd_weight, &div_tm);
                let mut g_br = self_play[i].grad_a.clone();
                if div_to_br {
                    axpy(&mut g_br, cfg.jsd_weight, &div_br);
                }
                grad.teammates.push(g_tm);
                grad.best_responses.push(g_br);
                trace += self_play[i].value;
            }
            Ok((
                ObjectiveTerms {
                    trace,
                    diversity: score,
                    total: trace + cfg.jsd_weight * score,
                },
                grad,
            ))
        }
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    if a == 0.0 {
        return;
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn find_non_finite(grad: &PopulationGradient) -> Option<String> {
    let check = |blocks: &[Vec<f64>], role: &str| {
        blocks.iter().enumerate().find_map(|(i, g)| {
            g.iter()
                .position(|x| !x.is_finite())
                .map(|p| format!("{role} {i} gradient at logit {p}"))
        })
    };
    check(&grad.teammates, "teammate").or_else(|| check(&grad.best_responses, "best response"))
}

pub fn train_population(cfg: &TrainConfig) -> Result<TrainResult> {
    train_population_with(cfg, |_, _| Ok(()))
}

/// Trains and calls `on_checkpoint(iteration, population)` every
/// `cfg.checkpoint_every` completed iterations (never when it is 0).
pub fn train_population_with(
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &Population) -> Result<()>,
) -> Result<TrainResult> {
    cfg.validate()?;
    let world = cfg.build_world()?;
    let mut pop = init_population(
        cfg.k,
        &world,
        cfg.init_scale,
        cfg.seed_for(POPULATION_SEED_OFFSET),
    )?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.moments);
    let mut metrics = Vec::with_capacity(cfg.iterations / cfg.log_every + 1);
    let start = Instant::now();
    let at = |iteration| move |e: Error| Error::Training {
        iteration,
        source: Box::new(e),
    };

    for iteration in 0..cfg.iterations {
        let (terms, grad) = population_gradient(&world, &pop, cfg).map_err(at(iteration))?;
        if iteration % cfg.log_every == 0 {
            metrics.push(MetricRecord {
                iteration,
                trace: terms.trace,
                diversity: terms.diversity,
                objective: terms.total,
                elapsed_seconds: start.elapsed().as_secs_f64(),
            });
        }
        if let Some(what) = find_non_finite(&grad) {
            return Err(at(iteration)(Error::NonFinite(what)));
        }
        let blocks: Vec<Vec<f64>> = grad.teammates.into_iter().chain(grad.best_responses).collect();
        let mut params: Vec<&mut [f64]> = pop
            .teammates
            .iter_mut()
            .chain(pop.best_responses.iter_mut())
            .map(SoftmaxPolicy::logits_mut)
            .collect();
        opt.ascend(&mut params, &blocks);
        let done = iteration + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.iterations {
            on_checkpoint(done, &pop)?;
        }
    }

    let terms = population_objective(&world, &pop, cfg).map_err(at(cfg.iterations))?;
    metrics.push(MetricRecord {
        iteration: cfg.iterations,
        trace: terms.trace,
        diversity: terms.diversity,
        objective: terms.total,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    });
    let cross_play = cross_play_matrix(&world, &pop)?;
    Ok(TrainResult {
        population: pop,
        metrics,
        cross_play,
    })
}

/// A single logit of one population member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coordinate {
    pub best_response: bool,
    pub member: usize,
    pub state: usize,
    pub action: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub max_rel_error: f64,
    pub argmax: Coordinate,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates_per_trial: usize,
    pub trials: Vec<TrialReport>,
}

/// Central-difference step for [`finite_diff_check`].
pub const FD_STEP: f64 = 1e-5;
/// Coordinates sampled per trial.
pub const FD_COORDINATES: usize = 200;
/// Logit scale of the random populations being checked.
pub const FD_INIT_SCALE: f64 = 1.0;
const FD_REL_TOL: f64 = 1e-4;
const FD_ABS_TOL: f64 = 1e-8;

/// Relative error with an absolute floor: `err <= 1e-4` holds exactly when
/// the difference is within 1e-4 relative or 1e-8 absolute.
pub fn gradcheck_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(FD_ABS_TOL / FD_REL_TOL);
    (analytic - numeric).abs() / scale
}

/// Compares the chained analytic gradient against central differences of the
/// end-to-end objective on the configured grid world.
pub fn finite_diff_check(cfg: &TrainConfig, trials: usize) -> Result<GradCheckReport> {
    cfg.validate()?;
    let world = cfg.build_world()?;
    finite_diff_check_on(&world, cfg, trials)
}

/// As [`finite_diff_check`] on an arbitrary game.
pub fn finite_diff_check_on(sg: &TabularSG, cfg: &TrainConfig, trials: usize) -> Result<GradCheckReport> {
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed_for(GRADCHECK_SEED_OFFSET));
    let mut reports = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut pop = init_population(cfg.k, sg, FD_INIT_SCALE, rng.gen())?;
        // Hold a median bandwidth fixed at the base point. Teammates-only runs
        // follow a partial direction, so the full gradient is what gets checked.
        let values = cross_play_values(sg, &pop)?;
        let fixed = TrainConfig {
            kernel: cfg.kernel.resolved(&values),
            div_grad_targets: DivGradTargets::AllParameters,
            ..cfg.clone()
        };
        let (_, grad) = population_gradient(sg, &pop, &fixed)?;

        let per_policy = pop.teammates[0].logits().len();
        let mut worst: Option<TrialReport> = None;
        for _ in 0..FD_COORDINATES {
            let coord = Coordinate {
                best_response: rng.gen(),
                member: rng.gen_range(0..cfg.k),
                state: 0,
                action: 0,
            };
            let flat = rng.gen_range(0..per_policy);
            let coord = Coordinate {
                state: flat / sg.num_actions(),
                action: flat % sg.num_actions(),
                ..coord
            };
            let analytic = if coord.best_response {
                grad.best_responses[coord.member][flat]
            } else {
                grad.teammates[coord.member][flat]
            };
            let mut eval_at = |delta: f64| -> Result<f64> {
                let logits = if coord.best_response {
                    pop.best_responses[coord.member].logits_mut()
                } else {
                    pop.teammates[coord.member].logits_mut()
                };
                let original = logits[flat];
                logits[flat] = original + delta;
                let out = population_objective(sg, &pop, &fixed).map(|t| t.total);
                let logits = if coord.best_response {
                    pop.best_responses[coord.member].logits_mut()
                } else {
                    pop.teammates[coord.member].logits_mut()
                };
                logits[flat] = original;
                out
            };
            let numeric = (eval_at(FD_STEP)? - eval_at(-FD_STEP)?) / (2.0 * FD_STEP);
            let err = gradcheck_error(analytic, numeric);
            if worst.as_ref().is_none_or(|w| err > w.max_rel_error) {
                worst = Some(TrialReport {
                    max_rel_error: err,
                    argmax: coord,
                    analytic,
                    numeric,
                });
            }
        }
        reports.push(worst.expect("at least one coordinate"));
    }
    Ok(GradCheckReport {
        max_rel_error: reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
        coordinates_per_trial: FD_COORDINATES,
        trials: reports,
    })
}
