//! Seeded Monte-Carlo estimation of the ergodic mutual information
//! `I(Q) = E log det(I_r + H Q Hᴴ / σ²)`.
//!
//! Each trial draws from its own RNG stream and per-trial values are reduced
//! with pairwise summation in trial order, so estimates are bit-identical
//! regardless of how rayon schedules the work.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat};
use crate::model::{sample_channel, ChannelModel, CovarianceMatrix};

/// Trial count used by the experiment presets.
pub const DEFAULT_TRIALS: usize = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seed: u64,
}

impl McEstimate {
    /// Unbiased sample variance of the per-trial values.
    pub fn sample_variance(&self) -> f64 {
        self.stderr * self.stderr * self.trials as f64
    }

    /// `sqrt(se₁² + se₂²)`.
    pub fn combined_stderr(&self, other: &McEstimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    pub(crate) fn from_samples(values: &[f64], seed: u64) -> Self {
        let n = values.len();
        // Shift by the first sample so a constant sequence gives exactly zero spread.
        let shift = values[0];
        let shifted: Vec<f64> = values.iter().map(|v| v - shift).collect();
        let offset = pairwise_sum(&shifted) / n as f64;
        let mean = shift + offset;
        let dev: Vec<f64> = shifted.iter().map(|d| (d - offset) * (d - offset)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
            trials: n,
            seed,
        }
    }
}

const PAIRWISE_BLOCK: usize = 32;

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        values.iter().sum()
    } else {
        let (lo, hi) = values.split_at(values.len() / 2);
        pairwise_sum(lo) + pairwise_sum(hi)
    }
}

fn pairwise_sum_matrices(values: &[CMat]) -> CMat {
    match values {
        [] => unreachable!("empty matrix sum"),
        [single] => single.clone(),
        _ => {
            let (lo, hi) = values.split_at(values.len() / 2);
            pairwise_sum_matrices(lo) + pairwise_sum_matrices(hi)
        }
    }
}

fn check_trials(trials: usize) -> Result<()> {
    if trials < 2 {
        return Err(Error::ParameterDomain(format!("need at least 2 trials, got {trials}")));
    }
    Ok(())
}

/// Sample mean and standard error of `f(trial)` over `trials` independent trials.
pub fn estimate<F>(trials: usize, seed: u64, f: F) -> Result<McEstimate>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    check_trials(trials)?;
    let values = (0..trials as u64)
        .into_par_iter()
        .map(&f)
        .collect::<Result<Vec<f64>>>()?;
    Ok(McEstimate::from_samples(&values, seed))
}

/// `log det(I_r + H Q Hᴴ / σ²)`.
pub fn log_det_mi(h: &CMat, q: &CMat, sigma2: f64) -> Result<f64> {
    let mut m = h * q * h.adjoint() * c(1.0 / sigma2);
    for i in 0..m.nrows() {
        m[(i, i)] += c(1.0);
    }
    linalg::log_det_hpd(&m)
}

pub fn mc_emi(
    model: &ChannelModel,
    q: &CovarianceMatrix,
    trials: usize,
    seed: u64,
) -> Result<McEstimate> {
    if q.dim() != model.t() {
        return Err(Error::ParameterDomain(format!(
            "covariance is {0}x{0}, model has t = {1}",
            q.dim(),
            model.t()
        )));
    }
    estimate(trials, seed, |trial| {
        let h = sample_channel(model, seed, trial).h;
        log_det_mi(&h, q.matrix(), model.sigma2())
    })
}

/// Stored channel draws for common-random-numbers comparisons: every
/// covariance is evaluated on exactly the same realizations.
#[derive(Debug, Clone)]
pub struct ChannelEnsemble {
    channels: Vec<CMat>,
    sigma2: f64,
    seed: u64,
}

impl ChannelEnsemble {
    pub fn sample(model: &ChannelModel, trials: usize, seed: u64) -> Result<Self> {
        check_trials(trials)?;
        let channels = (0..trials as u64)
            .into_par_iter()
            .map(|k| sample_channel(model, seed, k).h)
            .collect();
        Ok(Self {
            channels,
            sigma2: model.sigma2(),
            seed,
        })
    }

    pub fn trials(&self) -> usize {
        self.channels.len()
    }

    pub fn emi(&self, q: &CovarianceMatrix) -> Result<McEstimate> {
        let values = self
            .channels
            .par_iter()
            .map(|h| log_det_mi(h, q.matrix(), self.sigma2))
            .collect::<Result<Vec<f64>>>()?;
        Ok(McEstimate::from_samples(&values, self.seed))
    }

    /// EMI estimate and its gradient `E[Hᴴ (I + H Q Hᴴ/σ²)⁻¹ H] / σ²`
    /// (the Hermitian matrix `∇` with `dI = Re Tr(∇ dQ)`).
    pub fn emi_and_gradient(&self, q: &CovarianceMatrix) -> Result<(McEstimate, CMat)> {
        let inv_s2 = 1.0 / self.sigma2;
        let per_trial = self
            .channels
            .par_iter()
            .map(|h| {
                let mut m = h * q.matrix() * h.adjoint() * c(inv_s2);
                for i in 0..m.nrows() {
                    m[(i, i)] += c(1.0);
                }
                let (ld, solved) = linalg::log_det_and_solve(&m, h)?;
                Ok((ld, h.adjoint() * solved))
            })
            .collect::<Result<Vec<(f64, CMat)>>>()?;
        let (values, grads): (Vec<f64>, Vec<CMat>) = per_trial.into_iter().unzip();
        let grad = pairwise_sum_matrices(&grads) * c(inv_s2 / values.len() as f64);
        Ok((
            McEstimate::from_samples(&values, self.seed),
            linalg::hermitian_part(&grad),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::exponential_preset;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&v), v.iter().sum::<f64>());
    }

    #[test]
    fn rejects_single_trial() {
        let m = ChannelModel::rayleigh_iid(2, 2, 1.0).unwrap();
        assert!(mc_emi(&m, &CovarianceMatrix::identity(2), 1, 0).is_err());
    }

    #[test]
    fn los_dominant_limit_is_deterministic() {
        let p = exponential_preset(3, 3, 1e12, 0.5, 0.3, 0.5, 8).unwrap();
        let q = CovarianceMatrix::identity(3);
        let est = mc_emi(&p.model, &q, 200, 1).unwrap();
        let exact = log_det_mi(p.model.los(), q.matrix(), 0.5).unwrap();
        assert!((est.mean - exact).abs() < 1e-4);
        assert!(est.stderr < 1e-4);
    }

    #[test]
    fn estimates_are_reproducible() {
        let p = exponential_preset(2, 2, 1.0, 0.8, 0.3, 1.0, 8).unwrap();
        let q = CovarianceMatrix::identity(2);
        let a = mc_emi(&p.model, &q, 500, 3).unwrap();
        let b = mc_emi(&p.model, &q, 500, 3).unwrap();
        assert_eq!(a, b);
        let ens = ChannelEnsemble::sample(&p.model, 500, 3).unwrap();
        assert_eq!(ens.emi(&q).unwrap(), a);
    }

    #[test]
    fn scalar_rayleigh_matches_exponential_integral() {
        // e·E₁(1) = ∫₀^∞ log(1 + x) e^{−x} dx = 0.5963473623...
        let m = ChannelModel::rayleigh_iid(1, 1, 1.0).unwrap();
        let est = mc_emi(&m, &CovarianceMatrix::identity(1), 1_000_000, 77).unwrap();
        assert!((est.mean - 0.596_347_362_3).abs() < 3.0 * est.stderr);
    }

    #[test]
    fn gradient_matches_common_random_number_differences() {
        let p = exponential_preset(2, 2, 1.0, 0.8, 0.3, 0.5, 8).unwrap();
        let ens = ChannelEnsemble::sample(&p.model, 10_000, 4).unwrap();
        let q = CovarianceMatrix::identity(2);
        let (_, grad) = ens.emi_and_gradient(&q).unwrap();
        // direction: Hermitian, trace zero
        let dir = CMat::from_row_slice(
            2,
            2,
            &[c(0.5), crate::linalg::Complex64::new(0.3, -0.2), crate::linalg::Complex64::new(0.3, 0.2), c(-0.5)],
        );
        let h = 1e-4;
        let plus = CovarianceMatrix::new(q.matrix() + &dir * c(h)).unwrap();
        let minus = CovarianceMatrix::new(q.matrix() - &dir * c(h)).unwrap();
        let fd = (ens.emi(&plus).unwrap().mean - ens.emi(&minus).unwrap().mean) / (2.0 * h);
        let analytic = linalg::inner(&grad, &dir);
        assert!((fd - analytic).abs() <= 1e-3 * analytic.abs(), "{fd} vs {analytic}");
    }

    #[test]
    fn normalized_variance_shrinks_with_size() {
        // Var[(1/r) log det] = O(1/t²): doubling t should divide it by about 4.
        let var = |n: usize| {
            let m = ChannelModel::rayleigh_iid(n, n, 1.0).unwrap();
            let est = estimate(20_000, 5, |k| {
                let h = sample_channel(&m, 5, k).h;
                Ok(log_det_mi(&h, &crate::linalg::identity(n), 1.0)? / n as f64)
            })
            .unwrap();
            est.sample_variance()
        };
        let ratio = var(4) / var(8);
        assert!(ratio > 2.0 && ratio < 8.0, "{ratio}");
    }
}
