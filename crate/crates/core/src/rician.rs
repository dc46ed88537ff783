//! Deterministic equivalent `Ī(Q)` of the Rician EMI.
//!
//! For a covariance `Q` the pair `(δ, δ̃)` solves `δ = f(δ, δ̃, Q)`,
//! `δ̃ = f̃(δ, δ̃, Q)`. Both maps are evaluated with `Q` factored out of the
//! square roots (`X (I + X M X)⁻¹ X = Q (I + M Q)⁻¹`), so a singular `Q`
//! needs no pseudo-inverse.

use serde::{Deserialize, Serialize};

use crate::detequiv::GenericEquivModel;
use crate::error::{Error, Result};
use crate::fixed_point::{self, CoupledMap, SolveMethod, SolverOptions};
use crate::linalg::{self, c, CMat, HermitianEigen};
use crate::model::{ChannelModel, CovarianceMatrix};

/// Maximum tolerated gap between the two closed forms, relative to `max(1, |Ī|)`.
pub const FORM_GAP_TOL: f64 = 1e-9;

/// The coupled map `(δ, δ̃) ↦ (f, f̃)` for fixed `(model, Q)`.
pub struct RicianMap<'a> {
    model: &'a ChannelModel,
    q: &'a CMat,
}

impl<'a> RicianMap<'a> {
    pub fn new(model: &'a ChannelModel, q: &'a CovarianceMatrix) -> Result<Self> {
        if q.dim() != model.t() {
            return Err(Error::ParameterDomain(format!(
                "covariance is {0}x{0}, model has t = {1}",
                q.dim(),
                model.t()
            )));
        }
        Ok(Self {
            model,
            q: q.matrix(),
        })
    }

    fn kp1(&self) -> f64 {
        self.model.k_factor() + 1.0
    }

    fn inv_t(&self) -> f64 {
        1.0 / self.model.t() as f64
    }

    /// `T_K = [σ²(I + δ̃C/(K+1)) + K/(K+1) · A Q (I + δ C̃ Q/(K+1))⁻¹ Aᴴ]⁻¹`.
    pub fn t_k(&self, delta: f64, delta_tilde: f64) -> Result<CMat> {
        let m = self.model;
        let kp1 = self.kp1();
        let mut arg = linalg::identity(m.r()) + m.rx_correlation() * c(delta_tilde / kp1);
        arg *= c(m.sigma2());
        if m.k_factor() > 0.0 {
            let mut inner = m.tx_correlation() * self.q * c(delta / kp1);
            for j in 0..m.t() {
                inner[(j, j)] += c(1.0);
            }
            let p = linalg::hermitian_part(&(self.q * linalg::inverse(&inner)?));
            arg += m.los() * p * m.los().adjoint() * c(m.k_factor() / kp1);
        }
        linalg::inverse_hpd(&arg)
    }

    /// `f(δ, δ̃, Q) = (1/t) Tr(C T_K)`.
    pub fn f(&self, delta: f64, delta_tilde: f64) -> Result<f64> {
        let tk = self.t_k(delta, delta_tilde)?;
        Ok(self.inv_t() * (self.model.rx_correlation() * tk).trace().re)
    }

    /// `f̃(δ, δ̃, Q) = (1/(tσ²)) Tr(C̃ Q (I + G(δ, δ̃) Q)⁻¹)`.
    pub fn f_tilde(&self, delta: f64, delta_tilde: f64) -> Result<f64> {
        let m = self.model;
        let g = g_matrix(m, delta, delta_tilde)?;
        let mut inner = g * self.q;
        for j in 0..m.t() {
            inner[(j, j)] += c(1.0);
        }
        let p = self.q * linalg::inverse(&inner)?;
        Ok(self.inv_t() / m.sigma2() * (m.tx_correlation() * p).trace().re)
    }
}

impl CoupledMap for RicianMap<'_> {
    fn first(&self, x: f64, y: f64) -> Result<f64> {
        self.f(x, y)
    }

    fn second(&self, x: f64, y: f64) -> Result<f64> {
        self.f_tilde(x, y)
    }

    fn first_mass(&self) -> f64 {
        self.inv_t() * linalg::trace_re(self.model.rx_correlation()) / self.model.sigma2()
    }

    fn second_mass(&self) -> f64 {
        self.inv_t() * (self.model.tx_correlation() * self.q).trace().re / self.model.sigma2()
    }

    fn initial_guess(&self) -> (f64, f64) {
        let s = 1.0 / self.model.sigma2();
        (s, s)
    }
}

/// `G(κ, κ̃) = κ/(K+1) C̃ + K/(σ²(K+1)) Aᴴ (I_r + κ̃/(K+1) C)⁻¹ A`.
pub fn g_matrix(model: &ChannelModel, kappa: f64, kappa_tilde: f64) -> Result<CMat> {
    let kp1 = model.k_factor() + 1.0;
    let mut g = model.tx_correlation() * c(kappa / kp1);
    if model.k_factor() > 0.0 {
        let n = linalg::identity(model.r()) + model.rx_correlation() * c(kappa_tilde / kp1);
        let n_inv = linalg::inverse_hpd(&n)?;
        g += model.los().adjoint() * n_inv * model.los() * c(model.k_factor() / (model.sigma2() * kp1));
    }
    Ok(linalg::hermitian_part(&g))
}

#[derive(Debug, Clone)]
pub struct FixedPointSolution {
    pub delta: f64,
    pub delta_tilde: f64,
    pub t_k: CMat,
    pub t_k_tilde: CMat,
    pub residual: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

pub fn solve_delta_system(
    model: &ChannelModel,
    q: &CovarianceMatrix,
    opts: &SolverOptions,
) -> Result<FixedPointSolution> {
    let map = RicianMap::new(model, q)?;
    let sol = fixed_point::solve(&map, opts)?;
    let t_k = map.t_k(sol.x, sol.y)?;
    let t_k_tilde = t_k_tilde(model, q, sol.x, sol.y)?;
    Ok(FixedPointSolution {
        delta: sol.x,
        delta_tilde: sol.y,
        t_k,
        t_k_tilde,
        residual: sol.residual,
        iterations: sol.iterations,
        method: sol.method,
    })
}

/// `T̃_K = [σ²(I + X G X)]⁻¹` with `X = Q^{1/2}`.
fn t_k_tilde(model: &ChannelModel, q: &CovarianceMatrix, delta: f64, delta_tilde: f64) -> Result<CMat> {
    let x = q.sqrt()?;
    let g = g_matrix(model, delta, delta_tilde)?;
    let mut arg = &x * g * &x;
    for j in 0..model.t() {
        arg[(j, j)] += c(1.0);
    }
    Ok(linalg::inverse_hpd(&(arg * c(model.sigma2())))?)
}

/// Residuals of the trace identities `δ = (1/t) Tr(C T_K)` and
/// `δ̃ = (1/t) Tr(Q^{1/2} C̃ Q^{1/2} T̃_K)`, relative to `δ`, `δ̃`.
pub fn trace_identity_gaps(
    model: &ChannelModel,
    q: &CovarianceMatrix,
    sol: &FixedPointSolution,
) -> Result<(f64, f64)> {
    let inv_t = 1.0 / model.t() as f64;
    let x = q.sqrt()?;
    let d = inv_t * (model.rx_correlation() * &sol.t_k).trace().re;
    let dt = inv_t * (&x * model.tx_correlation() * &x * &sol.t_k_tilde).trace().re;
    Ok((
        (d - sol.delta).abs() / sol.delta,
        (dt - sol.delta_tilde).abs() / sol.delta_tilde,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmiApproximation {
    pub value: f64,
    pub delta: f64,
    pub delta_tilde: f64,
    pub alt_value: f64,
    pub form_gap: f64,
}

/// Evaluates `Ī(Q)` in both closed forms:
///
/// `log det(I_t + δ/(K+1) XC̃X + K/(σ²(K+1)) XAᴴ(I_r + δ̃/(K+1) C)⁻¹AX)
///  + log det(I_r + δ̃/(K+1) C) − tσ²δδ̃/(K+1)` and
///
/// `log det(I_r + δ̃/(K+1) C + K/(σ²(K+1)) AX(I_t + δ/(K+1) XC̃X)⁻¹XAᴴ)
///  + log det(I_t + δ/(K+1) XC̃X) − tσ²δδ̃/(K+1)`.
pub fn emi_approx(
    model: &ChannelModel,
    q: &CovarianceMatrix,
    sol: &FixedPointSolution,
) -> Result<EmiApproximation> {
    let (delta, delta_tilde) = (sol.delta, sol.delta_tilde);
    let kp1 = model.k_factor() + 1.0;
    let los_w = model.k_factor() / (model.sigma2() * kp1);
    let x = q.sqrt()?;
    let (r, t) = (model.r(), model.t());
    let a = model.los();

    let n = linalg::identity(r) + model.rx_correlation() * c(delta_tilde / kp1);
    let xcx = linalg::hermitian_part(&(&x * model.tx_correlation() * &x));
    let m_t = linalg::identity(t) + &xcx * c(delta / kp1);
    let penalty = t as f64 * model.sigma2() * delta * delta_tilde / kp1;

    let mut first_t = m_t.clone();
    let mut first_r = n.clone();
    if model.k_factor() > 0.0 {
        first_t += &x * a.adjoint() * linalg::inverse_hpd(&n)? * a * &x * c(los_w);
        first_r += a * &x * linalg::inverse_hpd(&m_t)? * &x * a.adjoint() * c(los_w);
    }
    let value = linalg::log_det_hpd(&first_t)? + linalg::log_det_hpd(&n)? - penalty;
    let alt_value = linalg::log_det_hpd(&first_r)? + linalg::log_det_hpd(&m_t)? - penalty;
    let form_gap = (value - alt_value).abs();
    if !value.is_finite() || !alt_value.is_finite() {
        return Err(Error::numerical("non-finite EMI approximation"));
    }
    if form_gap > FORM_GAP_TOL * value.abs().max(1.0) {
        return Err(Error::numerical(format!(
            "closed forms disagree: {value} vs {alt_value}"
        )));
    }
    Ok(EmiApproximation {
        value,
        delta,
        delta_tilde,
        alt_value,
        form_gap,
    })
}

/// Solve and evaluate `Ī(Q)` in one call.
pub fn i_bar(model: &ChannelModel, q: &CovarianceMatrix, opts: &SolverOptions) -> Result<EmiApproximation> {
    let sol = solve_delta_system(model, q, opts)?;
    emi_approx(model, q, &sol)
}

/// `(δ(Q), δ̃(Q))` with default solver settings.
pub fn deltas_as_functions_of_q(model: &ChannelModel, q: &CovarianceMatrix) -> Result<(f64, f64)> {
    let map = RicianMap::new(model, q)?;
    let sol = fixed_point::solve(&map, &SolverOptions::default())?;
    Ok((sol.x, sol.y))
}

/// Unitary reduction of the virtual channel `H Q^{1/2}` to `Σ = B + Y`:
/// `U D Uᴴ = C/√(K+1)`, `Ũ D̃ Ũᴴ = Q^{1/2} C̃ Q^{1/2}/√(K+1)`,
/// `B = √(K/(K+1)) Uᴴ A Q^{1/2} Ũ`.
pub fn virtual_channel_reduce(model: &ChannelModel, q: &CovarianceMatrix) -> Result<GenericEquivModel> {
    if q.dim() != model.t() {
        return Err(Error::ParameterDomain("covariance dimension mismatch".into()));
    }
    let kp1 = model.k_factor() + 1.0;
    let s = 1.0 / kp1.sqrt();
    let x = q.sqrt()?;
    let rx = HermitianEigen::new(&(model.rx_correlation() * c(s)))?;
    let tx = HermitianEigen::new(&(&x * model.tx_correlation() * &x * c(s)))?;
    let b = rx.vectors.adjoint() * model.los() * &x * &tx.vectors * c((model.k_factor() / kp1).sqrt());
    GenericEquivModel::new(
        b,
        rx.values.iter().map(|&v| v.max(0.0)).collect(),
        tx.values.iter().map(|&v| v.max(0.0)).collect(),
        model.sigma2(),
    )
}
