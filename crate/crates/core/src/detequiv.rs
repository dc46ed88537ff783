//! Deterministic equivalent for the separable-variance model `Σ = B + Y`,
//! `Y = (1/√t) D^{1/2} X D̃^{1/2}` with `D`, `D̃` diagonal.

use crate::error::{Error, Result};
use crate::fixed_point::{self, CoupledMap, SolveMethod, SolverOptions};
use crate::linalg::{self, c, CMat};
use crate::mc::{self, McEstimate};
use crate::model::{gaussian_matrix, stream_rng, GENERIC_STREAM};

/// Relative slack allowed on `‖T‖ ≤ 1/σ²`.
const NORM_BOUND_SLACK: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct GenericEquivModel {
    pub b: CMat,
    /// Diagonal of `D` (length `r`).
    pub d: Vec<f64>,
    /// Diagonal of `D̃` (length `t`).
    pub d_tilde: Vec<f64>,
    pub sigma2: f64,
}

impl GenericEquivModel {
    pub fn new(b: CMat, d: Vec<f64>, d_tilde: Vec<f64>, sigma2: f64) -> Result<Self> {
        let (r, t) = b.shape();
        if r == 0 || t == 0 {
            return Err(Error::InvalidModel("B must be non-empty".into()));
        }
        if d.len() != r || d_tilde.len() != t {
            return Err(Error::InvalidModel(format!(
                "variance profile lengths ({}, {}) do not match B ({r}x{t})",
                d.len(),
                d_tilde.len()
            )));
        }
        if d.iter().chain(&d_tilde).any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidModel("variance profile entries must be >= 0".into()));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidModel(format!("noise variance must be > 0, got {sigma2}")));
        }
        if !linalg::is_finite(&b) {
            return Err(Error::InvalidModel("B has non-finite entries".into()));
        }
        Ok(Self {
            b,
            d,
            d_tilde,
            sigma2,
        })
    }

    pub fn r(&self) -> usize {
        self.b.nrows()
    }

    pub fn t(&self) -> usize {
        self.b.ncols()
    }

    fn inv_t(&self) -> f64 {
        1.0 / self.t() as f64
    }

    /// `B (I + β D̃)⁻¹ Bᴴ`.
    fn b_weighted(&self, beta: f64) -> CMat {
        let mut bw = self.b.clone();
        for (j, &dt) in self.d_tilde.iter().enumerate() {
            let mut col = bw.column_mut(j);
            col *= c(1.0 / (1.0 + beta * dt));
        }
        linalg::hermitian_part(&(bw * self.b.adjoint()))
    }

    /// `Bᴴ (I + β̃ D)⁻¹ B`.
    fn b_tilde_weighted(&self, beta_tilde: f64) -> CMat {
        let mut bw = self.b.clone();
        for (i, &d) in self.d.iter().enumerate() {
            let mut row = bw.row_mut(i);
            row *= c(1.0 / (1.0 + beta_tilde * d));
        }
        linalg::hermitian_part(&(self.b.adjoint() * bw))
    }

    /// `T = [σ²(I + β̃ D) + B (I + β D̃)⁻¹ Bᴴ]⁻¹`.
    pub fn t_matrix(&self, beta: f64, beta_tilde: f64) -> Result<CMat> {
        let mut m = self.b_weighted(beta);
        for (i, &d) in self.d.iter().enumerate() {
            m[(i, i)] += c(self.sigma2 * (1.0 + beta_tilde * d));
        }
        linalg::inverse_hpd(&m)
    }

    /// `T̃ = [σ²(I + β D̃) + Bᴴ (I + β̃ D)⁻¹ B]⁻¹`.
    pub fn t_tilde_matrix(&self, beta: f64, beta_tilde: f64) -> Result<CMat> {
        let mut m = self.b_tilde_weighted(beta_tilde);
        for (j, &dt) in self.d_tilde.iter().enumerate() {
            m[(j, j)] += c(self.sigma2 * (1.0 + beta * dt));
        }
        linalg::inverse_hpd(&m)
    }

    fn weighted_trace(weights: &[f64], m: &CMat) -> f64 {
        weights.iter().enumerate().map(|(i, &w)| w * m[(i, i)].re).sum()
    }
}

impl CoupledMap for GenericEquivModel {
    fn first(&self, beta: f64, beta_tilde: f64) -> Result<f64> {
        let t = self.t_matrix(beta, beta_tilde)?;
        Ok(self.inv_t() * Self::weighted_trace(&self.d, &t))
    }

    fn second(&self, beta: f64, beta_tilde: f64) -> Result<f64> {
        let tt = self.t_tilde_matrix(beta, beta_tilde)?;
        Ok(self.inv_t() * Self::weighted_trace(&self.d_tilde, &tt))
    }

    fn first_mass(&self) -> f64 {
        self.inv_t() * self.d.iter().sum::<f64>() / self.sigma2
    }

    fn second_mass(&self) -> f64 {
        self.inv_t() * self.d_tilde.iter().sum::<f64>() / self.sigma2
    }

    fn initial_guess(&self) -> (f64, f64) {
        (1.0 / self.sigma2, 1.0 / self.sigma2)
    }
}

#[derive(Debug, Clone)]
pub struct BetaSolution {
    pub beta: f64,
    pub beta_tilde: f64,
    pub t: CMat,
    pub t_tilde: CMat,
    pub residual: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

pub fn solve_beta_system(m: &GenericEquivModel, opts: &SolverOptions) -> Result<BetaSolution> {
    let sol = fixed_point::solve(m, opts)?;
    let t = m.t_matrix(sol.x, sol.y)?;
    let t_tilde = m.t_tilde_matrix(sol.x, sol.y)?;
    let bound = (1.0 + NORM_BOUND_SLACK) / m.sigma2;
    for (name, mat) in [("T", &t), ("T̃", &t_tilde)] {
        let norm = linalg::hermitian_norm(mat)?;
        if norm > bound {
            return Err(Error::numerical(format!(
                "‖{name}‖ = {norm} exceeds 1/σ² = {}",
                1.0 / m.sigma2
            )));
        }
    }
    Ok(BetaSolution {
        beta: sol.x,
        beta_tilde: sol.y,
        t,
        t_tilde,
        residual: sol.residual,
        iterations: sol.iterations,
        method: sol.method,
    })
}

/// `J̄(σ²) = log det[I_r + β̃D + B(I_t + βD̃)⁻¹Bᴴ/σ²] + log det[I_t + βD̃] − σ² t β β̃`.
pub fn j_bar(m: &GenericEquivModel, sol: &BetaSolution) -> Result<f64> {
    let (beta, beta_tilde) = (sol.beta, sol.beta_tilde);
    let mut arg = m.b_weighted(beta) * c(1.0 / m.sigma2);
    for (i, &d) in m.d.iter().enumerate() {
        arg[(i, i)] += c(1.0 + beta_tilde * d);
    }
    let first = linalg::log_det_hpd(&arg)?;
    let second: f64 = m.d_tilde.iter().map(|&dt| (beta * dt).ln_1p()).sum();
    Ok(first + second - m.sigma2 * m.t() as f64 * beta * beta_tilde)
}

/// The transposed form
/// `log det[I_t + βD̃ + Bᴴ(I_r + β̃D)⁻¹B/σ²] + log det[I_r + β̃D] − σ² t β β̃`.
pub fn j_bar_alt(m: &GenericEquivModel, sol: &BetaSolution) -> Result<f64> {
    let (beta, beta_tilde) = (sol.beta, sol.beta_tilde);
    let mut arg = m.b_tilde_weighted(beta_tilde) * c(1.0 / m.sigma2);
    for (j, &dt) in m.d_tilde.iter().enumerate() {
        arg[(j, j)] += c(1.0 + beta * dt);
    }
    let first = linalg::log_det_hpd(&arg)?;
    let second: f64 = m.d.iter().map(|&d| (beta_tilde * d).ln_1p()).sum();
    Ok(first + second - m.sigma2 * m.t() as f64 * beta * beta_tilde)
}

/// Realization of `Σ` for trial `trial` of stream `seed`.
pub fn sample_sigma(m: &GenericEquivModel, seed: u64, trial: u64) -> CMat {
    let mut rng = stream_rng(seed, GENERIC_STREAM, trial);
    let mut y = gaussian_matrix(&mut rng, m.r(), m.t());
    let inv_sqrt_t = 1.0 / (m.t() as f64).sqrt();
    for i in 0..m.r() {
        for j in 0..m.t() {
            y[(i, j)] *= (m.d[i] * m.d_tilde[j]).sqrt() * inv_sqrt_t;
        }
    }
    &m.b + y
}

/// Monte-Carlo estimate of `E log det(I + ΣΣᴴ/σ²)`.
pub fn mc_emi_generic(m: &GenericEquivModel, trials: usize, seed: u64) -> Result<McEstimate> {
    mc::estimate(trials, seed, |trial| {
        let s = sample_sigma(m, seed, trial);
        let mut g = &s * s.adjoint() * c(1.0 / m.sigma2);
        for i in 0..m.r() {
            g[(i, i)] += c(1.0);
        }
        linalg::log_det_hpd(&g)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed_point::MethodChoice;
    use crate::model::{stream_rng, CORPUS_STREAM};
    use rand::Rng;

    fn scalar(sigma2: f64) -> GenericEquivModel {
        GenericEquivModel::new(CMat::zeros(1, 1), vec![1.0], vec![1.0], sigma2).unwrap()
    }

    fn random_generic(rng: &mut impl Rng) -> GenericEquivModel {
        let r = rng.random_range(1..=8);
        let t = rng.random_range(1..=8);
        let b = gaussian_matrix(rng, r, t) * c(rng.random_range(0.0..2.0));
        let d = (0..r).map(|_| rng.random_range(0.1..2.0)).collect();
        let dt = (0..t).map(|_| rng.random_range(0.1..2.0)).collect();
        let sigma2 = 10f64.powf(rng.random_range(-2.0..2.0));
        GenericEquivModel::new(b, d, dt, sigma2).unwrap()
    }

    #[test]
    fn scalar_golden_ratio() {
        let m = scalar(1.0);
        let sol = solve_beta_system(&m, &SolverOptions::default()).unwrap();
        // β = 1/(1 + β)  ⇒  β = (√5 − 1)/2
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        assert!((sol.beta - golden).abs() < 1e-9);
        assert!((sol.beta_tilde - golden).abs() < 1e-9);
        // J̄ = 2 log(1 + β) − β²
        let expected = 2.0 * (1.0 + golden).ln() - golden * golden;
        let j = j_bar(&m, &sol).unwrap();
        assert!((j - expected).abs() < 1e-9);
        assert!((j - 0.580_46).abs() < 1e-4, "{j}");
    }

    #[test]
    fn large_noise_asymptote() {
        let mut rng = stream_rng(5, CORPUS_STREAM, 10);
        let mut m = random_generic(&mut rng);
        m.sigma2 = 1e8;
        let sol = solve_beta_system(&m, &SolverOptions::default()).unwrap();
        let mass = m.d.iter().sum::<f64>() / m.t() as f64 / m.sigma2;
        assert!((sol.beta / mass - 1.0).abs() < 0.01);
    }

    #[test]
    fn residual_self_check_on_random_models() {
        let mut rng = stream_rng(5, CORPUS_STREAM, 11);
        let opts = SolverOptions::default();
        for _ in 0..100 {
            let m = random_generic(&mut rng);
            let sol = solve_beta_system(&m, &opts).unwrap();
            let res = fixed_point::residual(&m, sol.beta, sol.beta_tilde).unwrap();
            assert!(res <= opts.tol, "{res}");
            assert!(sol.beta > 0.0 && sol.beta_tilde > 0.0);
            // β = (1/t) Tr D T, ‖T‖ ≤ 1/σ²
            let tr = GenericEquivModel::weighted_trace(&m.d, &sol.t) / m.t() as f64;
            assert!((tr - sol.beta).abs() <= 10.0 * opts.tol * sol.beta);
            assert!(linalg::hermitian_norm(&sol.t).unwrap() <= 1.0 / m.sigma2 * (1.0 + 1e-12));
            assert!(linalg::hermitian_norm(&sol.t_tilde).unwrap() <= 1.0 / m.sigma2 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn closed_forms_agree() {
        let mut rng = stream_rng(5, CORPUS_STREAM, 12);
        for _ in 0..100 {
            let m = random_generic(&mut rng);
            let sol = solve_beta_system(&m, &SolverOptions::default()).unwrap();
            let a = j_bar(&m, &sol).unwrap();
            let b = j_bar_alt(&m, &sol).unwrap();
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn picard_and_nested_agree() {
        let mut rng = stream_rng(5, CORPUS_STREAM, 13);
        for _ in 0..30 {
            let m = random_generic(&mut rng);
            let p = solve_beta_system(&m, &SolverOptions::default().method(MethodChoice::PicardOnly));
            let n = solve_beta_system(&m, &SolverOptions::default().method(MethodChoice::NestedOnly)).unwrap();
            if let Ok(p) = p {
                assert!((p.beta - n.beta).abs() <= 1e-9 * n.beta);
                assert!((p.beta_tilde - n.beta_tilde).abs() <= 1e-9 * n.beta_tilde);
            }
        }
    }

    #[test]
    fn deterministic_channel_limit() {
        let mut rng = stream_rng(5, CORPUS_STREAM, 14);
        let b = gaussian_matrix(&mut rng, 3, 2);
        let sigma2 = 0.7;
        let expected = {
            let mut g = &b * b.adjoint() * c(1.0 / sigma2);
            for i in 0..3 {
                g[(i, i)] += c(1.0);
            }
            linalg::log_det_hpd(&g).unwrap()
        };
        for (d, dt) in [(vec![0.0; 3], vec![1.0, 0.5]), (vec![1.0, 2.0, 0.5], vec![0.0; 2])] {
            let m = GenericEquivModel::new(b.clone(), d, dt, sigma2).unwrap();
            let sol = solve_beta_system(&m, &SolverOptions::default()).unwrap();
            assert!(sol.beta == 0.0 || sol.beta_tilde == 0.0);
            let j = j_bar(&m, &sol).unwrap();
            assert!((j - expected).abs() < 1e-12, "{j} vs {expected}");
            let est = mc_emi_generic(&m, 16, 1).unwrap();
            assert_eq!(est.stderr, 0.0);
            assert!((est.mean - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_monotonicity() {
        let mut rng = stream_rng(5, CORPUS_STREAM, 15);
        let mut m = random_generic(&mut rng);
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..30 {
            m.sigma2 = 10f64.powf(-2.0 + k as f64 * 0.15);
            let sol = solve_beta_system(&m, &SolverOptions::default()).unwrap();
            if let Some((b, sb)) = prev {
                assert!(sol.beta < b);
                assert!(m.sigma2 * sol.beta > sb);
            }
            prev = Some((sol.beta, m.sigma2 * sol.beta));
        }
    }

    #[test]
    fn inner_map_is_decreasing() {
        let mut rng = stream_rng(5, CORPUS_STREAM, 16);
        let m = random_generic(&mut rng);
        for &y in &[0.01, 0.3, 2.0] {
            let mut prev = f64::INFINITY;
            for k in 1..40 {
                let x = 0.05 * k as f64;
                let g = m.first(x, y).unwrap() / x;
                assert!(g < prev);
                prev = g;
            }
        }
    }

    #[test]
    fn scalar_monte_carlo_matches_exponential_integral() {
        // E log(1 + |x|²) with |x|² ~ Exp(1) equals e·E₁(1); Simpson oracle below.
        let n = 2_000_000;
        let upper = 60.0;
        let h = upper / n as f64;
        let f = |x: f64| (1.0 + x).ln() * (-x).exp();
        let mut acc = f(0.0) + f(upper);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let oracle = acc * h / 3.0;
        assert!((oracle - 0.596_347_362_3).abs() < 1e-9, "{oracle}");
        let est = mc_emi_generic(&scalar(1.0), 1_000_000, 2024).unwrap();
        assert!((est.mean - oracle).abs() < 3.0 * est.stderr, "{} ± {}", est.mean, est.stderr);
    }
}
