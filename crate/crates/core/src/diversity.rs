//! Best-response diversity: trace plus the determinant of an RBF kernel over
//! cross-play rows, its gradient with respect to the cross-play matrix, and
//! the Jensen-Shannon trajectory-diversity baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Determinants below this are treated as roundoff when clamping.
const DET_CLAMP: f64 = 1e-12;
/// Below this determinant the gradient requires a positive jitter.
const SINGULAR_DET: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    /// Use `sigma` as given.
    #[default]
    Fixed,
    /// Set `sigma^2` to the median pairwise squared row distance of the
    /// current matrix, falling back to `sigma` when that median is zero.
    Median,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub sigma: f64,
    pub jitter: f64,
    pub bandwidth: Bandwidth,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            sigma: 0.5,
            jitter: 1e-6,
            bandwidth: Bandwidth::Fixed,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::config("kernel.sigma", "must be finite and positive"));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::config("kernel.jitter", "must be finite and non-negative"));
        }
        Ok(())
    }

    /// A fixed-bandwidth config for `c`. Median mode is evaluated here, so the
    /// returned sigma is held constant by the kernel and its gradient.
    pub fn resolved(&self, c: &[Vec<f64>]) -> KernelConfig {
        let sigma = match self.bandwidth {
            Bandwidth::Fixed => self.sigma,
            Bandwidth::Median => {
                let mut d2: Vec<f64> = Vec::new();
                for m in 0..c.len() {
                    for n in m + 1..c.len() {
                        d2.push(row_dist2(&c[m], &c[n]));
                    }
                }
                d2.sort_by(f64::total_cmp);
                let median = match d2.len() {
                    0 => 0.0,
                    l if l % 2 == 1 => d2[l / 2],
                    l => 0.5 * (d2[l / 2 - 1] + d2[l / 2]),
                };
                if median > 0.0 {
                    median.sqrt()
                } else {
                    self.sigma
                }
            }
        };
        KernelConfig {
            sigma,
            bandwidth: Bandwidth::Fixed,
            ..*self
        }
    }
}

fn row_dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_square(c: &[Vec<f64>], what: &str) -> Result<usize> {
    let k = c.len();
    if k == 0 || c.iter().any(|r| r.len() != k) {
        return Err(Error::DimensionMismatch(format!("{what} must be a non-empty square matrix")));
    }
    if c.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(k)
}

/// RBF similarity between rows of `c`, plus `jitter` on the diagonal.
pub fn kernel_matrix(c: &[Vec<f64>], cfg: &KernelConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let k = check_square(c, "cross-play matrix")?;
    let s2 = cfg.sigma * cfg.sigma;
    let mut kappa = vec![vec![0.0; k]; k];
    for m in 0..k {
        kappa[m][m] = 1.0 + cfg.jitter;
        for n in m + 1..k {
            let v = (-row_dist2(&c[m], &c[n]) / s2).exp();
            kappa[m][n] = v;
            kappa[n][m] = v;
        }
    }
    Ok(kappa)
}

/// `P A P^T = L D L^T` with largest-remaining-diagonal pivoting.
struct Ldl {
    perm: Vec<usize>,
    l: Vec<Vec<f64>>,
    d: Vec<f64>,
}

enum Factored {
    Full(Ldl),
    /// The remaining Schur complement vanished at this step; `det` is zero.
    RankDeficient,
    /// A zero pivot with a non-zero off-diagonal: not semidefinite.
    Indefinite,
}

fn ldl_pivoted(a: &[Vec<f64>]) -> Factored {
    let n = a.len();
    let mut work: Vec<Vec<f64>> = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = vec![vec![0.0; n]; n];
    let mut d = vec![0.0; n];
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| work[i][i].abs().total_cmp(&work[j][j].abs()))
            .expect("non-empty range");
        if p != k {
            work.swap(k, p);
            for row in work.iter_mut() {
                row.swap(k, p);
            }
            l.swap(k, p);
            perm.swap(k, p);
        }
        let pivot = work[k][k];
        if pivot == 0.0 {
            let rest_zero = (k..n).all(|i| (k..n).all(|j| work[i][j] == 0.0));
            return if rest_zero {
                Factored::RankDeficient
            } else {
                Factored::Indefinite
            };
        }
        d[k] = pivot;
        l[k][k] = 1.0;
        for i in k + 1..n {
            l[i][k] = work[i][k] / pivot;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                work[i][j] -= l[i][k] * pivot * l[j][k];
            }
        }
    }
    Factored::Full(Ldl { perm, l, d })
}

fn lu_det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = a.to_vec();
    let mut det = 1.0;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))
            .expect("non-empty range");
        if m[p][k] == 0.0 {
            return 0.0;
        }
        if p != k {
            m.swap(k, p);
            det = -det;
        }
        det *= m[k][k];
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    det
}

impl Ldl {
    fn det(&self) -> f64 {
        self.d.iter().product()
    }

    fn inverse(&self) -> Vec<Vec<f64>> {
        let n = self.d.len();
        let mut inv = vec![vec![0.0; n]; n];
        for col in 0..n {
            // Solve A x = e_col through the permuted factorisation.
            let mut y: Vec<f64> = self.perm.iter().map(|&p| f64::from(u8::from(p == col))).collect();
            for i in 0..n {
                for j in 0..i {
                    y[i] -= self.l[i][j] * y[j];
                }
            }
            for i in 0..n {
                y[i] /= self.d[i];
            }
            for i in (0..n).rev() {
                for j in i + 1..n {
                    y[i] -= self.l[j][i] * y[j];
                }
            }
            for (i, &p) in self.perm.iter().enumerate() {
                inv[p][col] = y[i];
            }
        }
        inv
    }
}

fn check_symmetric(a: &[Vec<f64>]) -> Result<usize> {
    let k = check_square(a, "kernel matrix")?;
    for i in 0..k {
        for j in i + 1..k {
            let gap = (a[i][j] - a[j][i]).abs();
            if gap > 1e-12 * (1.0 + a[i][j].abs()) {
                return Err(Error::Asymmetric { row: i, col: j, gap });
            }
        }
    }
    Ok(k)
}

/// Determinant of a symmetric positive-semidefinite kernel. Roundoff
/// negatives down to `-1e-12` are clamped to zero.
pub fn det_diversity(kappa: &[Vec<f64>]) -> Result<f64> {
    check_symmetric(kappa)?;
    let det = match ldl_pivoted(kappa) {
        Factored::Full(f) => f.det(),
        Factored::RankDeficient => 0.0,
        Factored::Indefinite => lu_det(kappa),
    };
    Ok(if (-DET_CLAMP..0.0).contains(&det) { 0.0 } else { det })
}

/// The objective split into its two terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub trace_term: f64,
    pub det_term: f64,
}

pub fn objective(c: &[Vec<f64>], cfg: &KernelConfig) -> Result<ObjectiveValue> {
    let kappa = kernel_matrix(c, cfg)?;
    let trace_term: f64 = (0..c.len()).map(|i| c[i][i]).sum();
    let det_term = det_diversity(&kappa)?;
    Ok(ObjectiveValue {
        total: trace_term + det_term,
        trace_term,
        det_term,
    })
}

/// Gradient of the determinant term alone with respect to `c`, via Jacobi's
/// formula `d det = det * tr(kappa^-1 d kappa)` and the RBF chain rule.
pub fn det_grad_wrt_c(c: &[Vec<f64>], cfg: &KernelConfig) -> Result<Vec<Vec<f64>>> {
    let kappa = kernel_matrix(c, cfg)?;
    let k = c.len();
    let singular = || Error::SingularKernel {
        det: lu_det(&kappa),
        jitter: cfg.jitter,
    };
    let factor = match ldl_pivoted(&kappa) {
        Factored::Full(f) => f,
        _ => return Err(singular()),
    };
    let det = factor.det();
    if det <= 0.0 || (det < SINGULAR_DET && cfg.jitter == 0.0) {
        return Err(singular());
    }
    let inv = factor.inverse();
    let scale = -4.0 / (cfg.sigma * cfg.sigma);
    let mut grad = vec![vec![0.0; k]; k];
    for i in 0..k {
        for n in 0..k {
            if n == i {
                continue;
            }
            // Off-diagonal kernel entries carry no jitter.
            let w = det * inv[i][n] * kappa[i][n] * scale;
            for j in 0..k {
                grad[i][j] += w * (c[i][j] - c[n][j]);
            }
        }
    }
    if grad.iter().flatten().any(|x| !x.is_finite()) {
        return Err(singular());
    }
    Ok(grad)
}

/// `dO/dC`: identity from the trace plus the determinant gradient.
pub fn objective_grad_wrt_c(c: &[Vec<f64>], cfg: &KernelConfig) -> Result<Vec<Vec<f64>>> {
    let mut grad = det_grad_wrt_c(c, cfg)?;
    for (i, row) in grad.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    Ok(grad)
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidDistribution(format!("{name} has negative or non-finite entries")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidDistribution(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

/// Jensen-Shannon divergence in nats.
pub fn jsd_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).ln();
        }
    }
    Ok(total.max(0.0))
}

/// Mean JSD over all unordered pairs.
pub fn jsd_population_score(occupancies: &[Vec<f64>]) -> Result<f64> {
    let k = occupancies.len();
    if k < 2 {
        return Err(Error::config("k", "JSD population score needs at least two members"));
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += jsd_divergence(&occupancies[i], &occupancies[j])?;
        }
    }
    Ok(total / (k * (k - 1) / 2) as f64)
}

/// Partial derivatives of [`jsd_population_score`] with respect to every
/// entry of every occupancy vector. Defined up to a per-vector constant,
/// which has no effect on normalised distributions.
pub fn jsd_population_score_grad(occupancies: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let score = jsd_population_score(occupancies)?;
    debug_assert!(score.is_finite());
    let k = occupancies.len();
    let pairs = (k * (k - 1) / 2) as f64;
    let mut grads: Vec<Vec<f64>> = occupancies.iter().map(|p| vec![0.0; p.len()]).collect();
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let (p, q) = (&occupancies[i], &occupancies[j]);
            for s in 0..p.len() {
                let m = 0.5 * (p[s] + q[s]);
                if m > 0.0 {
                    grads[i][s] += 0.5 * (p[s].max(f64::MIN_POSITIVE) / m).ln() / pairs;
                }
            }
        }
    }
    Ok(grads)
}
