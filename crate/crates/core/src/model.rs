//! Channel model types and deterministic generators.
//!
//! The channel is `H = sqrt(K/(K+1)) A + 1/sqrt(K+1) · (1/sqrt(t)) C^{1/2} W C̃^{1/2}`
//! where `W` has i.i.d. standard circular complex Gaussian entries.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, Complex64, HermitianEigen};

/// Absolute tolerance on the trace normalizations.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// RNG domain for channel realizations, indexed by trial.
pub const CHANNEL_STREAM: u64 = 0;
/// RNG domain for line-of-sight angles of experiment presets.
pub const ANGLE_STREAM: u64 = 1;
/// RNG domain for the generic `B + Y` model realizations.
pub const GENERIC_STREAM: u64 = 2;
/// RNG domain for randomly generated test corpora.
pub const CORPUS_STREAM: u64 = 3;

/// A ChaCha stream keyed by `(seed, domain)` and positioned on stream `index`.
///
/// Every trial owns its own stream, so results do not depend on the order in
/// which trials are evaluated or on how they are split across workers.
pub fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Noise variance for a given SNR in dB (`SNR = 1/σ²`).
pub fn sigma2_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

pub fn snr_db_from_sigma2(sigma2: f64) -> f64 {
    -10.0 * sigma2.log10()
}

/// Correlated Rician MIMO channel.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    r: usize,
    t: usize,
    k_factor: f64,
    a: CMat,
    c: CMat,
    c_tilde: CMat,
    sigma2: f64,
    c_sqrt: CMat,
    c_tilde_sqrt: CMat,
}

fn check_correlation(m: &CMat, n: usize, name: &str) -> Result<HermitianEigen> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::InvalidModel(format!(
            "{name} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !linalg::is_finite(m) {
        return Err(Error::InvalidModel(format!("{name} has non-finite entries")));
    }
    let asym = linalg::frobenius(&(m - m.adjoint()));
    if asym > 1e-12 * linalg::frobenius(m).max(1.0) {
        return Err(Error::InvalidModel(format!("{name} is not Hermitian")));
    }
    let tr = linalg::trace_re(m) / n as f64;
    if (tr - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidModel(format!(
            "{name} trace normalization violated: (1/{n}) Tr = {tr}"
        )));
    }
    let eig = HermitianEigen::new(m)?;
    if eig.min() <= 0.0 {
        return Err(Error::InvalidModel(format!(
            "{name} is not positive definite (smallest eigenvalue {})",
            eig.min()
        )));
    }
    Ok(eig)
}

impl ChannelModel {
    pub fn new(a: CMat, c: CMat, c_tilde: CMat, k_factor: f64, sigma2: f64) -> Result<Self> {
        let (r, t) = a.shape();
        if r == 0 || t == 0 {
            return Err(Error::InvalidModel("antenna counts must be positive".into()));
        }
        if !(k_factor >= 0.0) || !k_factor.is_finite() {
            return Err(Error::InvalidModel(format!("Rician factor must be >= 0, got {k_factor}")));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidModel(format!("noise variance must be > 0, got {sigma2}")));
        }
        if !linalg::is_finite(&a) {
            return Err(Error::InvalidModel("LOS matrix has non-finite entries".into()));
        }
        let los_power = a.iter().map(|z| z.norm_sqr()).sum::<f64>() / r as f64;
        let rayleigh = k_factor == 0.0 && los_power == 0.0;
        if !rayleigh && (los_power - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidModel(format!(
                "LOS normalization violated: (1/r) Tr(A Aᴴ) = {los_power}"
            )));
        }
        let c_eig = check_correlation(&c, r, "receive correlation C")?;
        let ct_eig = check_correlation(&c_tilde, t, "transmit correlation C̃")?;
        Ok(Self {
            r,
            t,
            k_factor,
            c_sqrt: c_eig.reconstruct_with(|l| l.max(0.0).sqrt()),
            c_tilde_sqrt: ct_eig.reconstruct_with(|l| l.max(0.0).sqrt()),
            a,
            c: linalg::hermitian_part(&c),
            c_tilde: linalg::hermitian_part(&c_tilde),
            sigma2,
        })
    }

    /// i.i.d. Rayleigh channel: `K = 0`, `A = 0`, `C = I`, `C̃ = I`.
    pub fn rayleigh_iid(r: usize, t: usize, sigma2: f64) -> Result<Self> {
        Self::new(
            CMat::zeros(r, t),
            linalg::identity(r),
            linalg::identity(t),
            0.0,
            sigma2,
        )
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn k_factor(&self) -> f64 {
        self.k_factor
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn los(&self) -> &CMat {
        &self.a
    }

    pub fn rx_correlation(&self) -> &CMat {
        &self.c
    }

    pub fn tx_correlation(&self) -> &CMat {
        &self.c_tilde
    }

    pub fn rx_correlation_sqrt(&self) -> &CMat {
        &self.c_sqrt
    }

    pub fn tx_correlation_sqrt(&self) -> &CMat {
        &self.c_tilde_sqrt
    }

    /// Same channel at a different noise variance.
    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidModel(format!("noise variance must be > 0, got {sigma2}")));
        }
        Ok(Self {
            sigma2,
            ..self.clone()
        })
    }

    /// Same channel with a different LOS matrix (must satisfy the normalization).
    pub fn with_los(&self, a: CMat) -> Result<Self> {
        Self::new(a, self.c.clone(), self.c_tilde.clone(), self.k_factor, self.sigma2)
    }

    /// Channel matrix for a given draw of `W`.
    pub fn realize(&self, w: &CMat) -> CMat {
        let scale = 1.0 / ((self.k_factor + 1.0).sqrt() * (self.t as f64).sqrt());
        let scatter = (&self.c_sqrt * w * &self.c_tilde_sqrt) * c(scale);
        if self.k_factor == 0.0 {
            scatter
        } else {
            let los = (self.k_factor / (self.k_factor + 1.0)).sqrt();
            scatter + &self.a * c(los)
        }
    }
}

/// Hermitian PSD `t×t` input covariance with `(1/t) Tr Q = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    q: CMat,
}

impl CovarianceMatrix {
    /// Validates and stores `q`. Eigenvalues in `[-1e-12·‖Q‖, 0)` are clamped to zero.
    pub fn new(q: CMat) -> Result<Self> {
        let t = q.nrows();
        if t == 0 || !q.is_square() {
            return Err(Error::InvalidModel("covariance must be a non-empty square matrix".into()));
        }
        if !linalg::is_finite(&q) {
            return Err(Error::InvalidModel("covariance has non-finite entries".into()));
        }
        let scale = linalg::frobenius(&q).max(1.0);
        if linalg::frobenius(&(&q - q.adjoint())) > 1e-12 * scale {
            return Err(Error::InvalidModel("covariance is not Hermitian".into()));
        }
        let mut q = linalg::hermitian_part(&q);
        let eig = HermitianEigen::new(&q)?;
        if eig.min() < -1e-12 * eig.max().abs().max(1.0) {
            return Err(Error::InvalidModel(format!(
                "covariance is not PSD (smallest eigenvalue {})",
                eig.min()
            )));
        }
        if eig.min() < 0.0 {
            q = eig.reconstruct_with(|l| l.max(0.0));
        }
        let tr = linalg::trace_re(&q) / t as f64;
        if (tr - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidModel(format!(
                "covariance trace normalization violated: (1/t) Tr Q = {tr}"
            )));
        }
        Ok(Self { q })
    }

    pub fn identity(t: usize) -> Self {
        Self {
            q: linalg::identity(t),
        }
    }

    /// `V diag(p) Vᴴ`; the caller guarantees `p ≥ 0` and `Σ p = t`.
    pub(crate) fn from_eigen_unchecked(vectors: &CMat, powers: &[f64]) -> Self {
        let mut scaled = vectors.clone();
        for (j, &p) in powers.iter().enumerate() {
            let mut col = scaled.column_mut(j);
            col *= c(p);
        }
        Self {
            q: linalg::hermitian_part(&(scaled * vectors.adjoint())),
        }
    }

    /// Projects an arbitrary Hermitian matrix onto the feasible set
    /// (Frobenius-nearest PSD matrix with `Tr = t`).
    pub fn project(m: &CMat) -> Result<Self> {
        let t = m.nrows();
        let eig = HermitianEigen::new(m)?;
        let powers = project_onto_simplex(&eig.values, t as f64);
        Ok(Self::from_eigen_unchecked(&eig.vectors, &powers))
    }

    /// Random feasible covariance of full rank.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, t: usize) -> Self {
        Self::random_with_rank(rng, t, t)
    }

    /// Random feasible covariance of the given rank.
    pub fn random_with_rank<R: Rng + ?Sized>(rng: &mut R, t: usize, rank: usize) -> Self {
        let rank = rank.clamp(1, t);
        let m = gaussian_matrix(rng, t, rank);
        let q = &m * m.adjoint();
        let tr = linalg::trace_re(&q);
        Self {
            q: linalg::hermitian_part(&(q * c(t as f64 / tr))),
        }
    }

    /// `λ Q₁ + (1 − λ) Q₂`.
    pub fn convex_combination(lambda: f64, q1: &Self, q2: &Self) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::ParameterDomain(format!("weight {lambda} outside [0, 1]")));
        }
        Self::new(&q1.q * c(lambda) + &q2.q * c(1.0 - lambda))
    }

    pub fn matrix(&self) -> &CMat {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn sqrt(&self) -> Result<CMat> {
        linalg::psd_sqrt(&self.q)
    }

    pub fn eigen(&self) -> Result<HermitianEigen> {
        HermitianEigen::new(&self.q)
    }
}

/// Euclidean projection of `v` onto `{x ≥ 0, Σ x = total}`.
pub(crate) fn project_onto_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let candidate = (cumsum - total) / (i + 1) as f64;
        if x - candidate > 0.0 {
            shift = candidate;
        }
    }
    v.iter().map(|&x| (x - shift).max(0.0)).collect()
}

/// One channel draw, reproducible from `(seed, trial)`.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub h: CMat,
    pub seed: u64,
    pub trial: u64,
}

/// `r×t` matrix of i.i.d. `CN(0, 1)` entries.
pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
    })
}

pub fn sample_channel(model: &ChannelModel, seed: u64, trial: u64) -> ChannelRealization {
    let mut rng = stream_rng(seed, CHANNEL_STREAM, trial);
    let w = gaussian_matrix(&mut rng, model.r, model.t);
    ChannelRealization {
        h: model.realize(&w),
        seed,
        trial,
    }
}

/// `M_ij = ρ^{|i−j|}`.
pub fn build_exponential_correlation(n: usize, rho: f64) -> Result<CMat> {
    if n == 0 {
        return Err(Error::ParameterDomain("correlation size must be positive".into()));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::ParameterDomain(format!(
            "correlation coefficient must lie in [0, 1), got {rho}"
        )));
    }
    Ok(CMat::from_fn(n, n, |i, j| c(rho.powi(i.abs_diff(j) as i32))))
}

/// LOS matrix built from uniform-linear-array steering vectors, rescaled so
/// that `(1/r) Tr(A Aᴴ) = 1`.
pub fn build_los_steering(r: usize, t: usize, angles: &[f64], amplitudes: &[f64]) -> Result<CMat> {
    if angles.is_empty() {
        return Err(Error::ParameterDomain("angle list is empty".into()));
    }
    if r == 0 || angles.len() != t || amplitudes.len() != t {
        return Err(Error::ParameterDomain(format!(
            "expected {t} angles and amplitudes, got {} and {}",
            angles.len(),
            amplitudes.len()
        )));
    }
    if amplitudes.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
        return Err(Error::ParameterDomain("amplitudes must be positive".into()));
    }
    let inv_sqrt_t = 1.0 / (t as f64).sqrt();
    let a = CMat::from_fn(r, t, |i, j| {
        Complex64::from_polar(amplitudes[j] * inv_sqrt_t, i as f64 * angles[j])
    });
    let power = a.iter().map(|z| z.norm_sqr()).sum::<f64>() / r as f64;
    Ok(a * c(power.sqrt().recip()))
}

/// `n` angles drawn uniformly on `[0, 2π)`.
pub fn random_angles<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 * PI).collect()
}

/// Exponential-correlation Rician preset with steering LOS and unit amplitudes.
#[derive(Debug, Clone)]
pub struct Preset {
    pub model: ChannelModel,
    pub angles: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

/// Builds the exponential-correlation preset; angles come from `(seed, r, t)`.
pub fn exponential_preset(
    r: usize,
    t: usize,
    k_factor: f64,
    rho_t: f64,
    rho_r: f64,
    sigma2: f64,
    seed: u64,
) -> Result<Preset> {
    let mut rng = stream_rng(seed, ANGLE_STREAM, ((r as u64) << 32) | t as u64);
    let angles = random_angles(&mut rng, t);
    let amplitudes = vec![1.0; t];
    let a = build_los_steering(r, t, &angles, &amplitudes)?;
    let model = ChannelModel::new(
        a,
        build_exponential_correlation(r, rho_r)?,
        build_exponential_correlation(t, rho_t)?,
        k_factor,
        sigma2,
    )?;
    Ok(Preset {
        model,
        angles,
        amplitudes,
    })
}

/// Random trace-normalized Hermitian positive definite matrix.
pub fn random_correlation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    let m = gaussian_matrix(rng, n, n);
    let p = &m * m.adjoint() + linalg::identity(n) * c(0.1 * n as f64);
    let tr = linalg::trace_re(&p);
    linalg::hermitian_part(&(p * c(n as f64 / tr)))
}

/// Random valid model: Wishart-like correlations and a Gaussian LOS matrix.
pub fn random_model<R: Rng + ?Sized>(
    rng: &mut R,
    r: usize,
    t: usize,
    k_factor: f64,
    sigma2: f64,
) -> Result<ChannelModel> {
    let a = gaussian_matrix(rng, r, t);
    let power = a.iter().map(|z| z.norm_sqr()).sum::<f64>() / r as f64;
    let a = a * c(power.sqrt().recip());
    ChannelModel::new(
        a,
        random_correlation(rng, r),
        random_correlation(rng, t),
        k_factor,
        sigma2,
    )
}

/// Model and covariance number `index` of a seeded random corpus:
/// `r, t` uniform on `1..=8`, `K` uniform on `[0, 10]`, `σ²` log-uniform on
/// `[0.01, 100]`, `Q` of random rank.
pub fn corpus_case(seed: u64, index: u64) -> Result<(ChannelModel, CovarianceMatrix)> {
    let mut rng = stream_rng(seed, CORPUS_STREAM, index);
    let r = rng.random_range(1..=8);
    let t = rng.random_range(1..=8);
    let k_factor = rng.random_range(0.0..=10.0);
    let sigma2 = 10f64.powf(rng.random_range(-2.0..=2.0));
    let model = random_model(&mut rng, r, t, k_factor, sigma2)?;
    let rank = rng.random_range(1..=t);
    let q = CovarianceMatrix::random_with_rank(&mut rng, t, rank);
    Ok((model, q))
}
