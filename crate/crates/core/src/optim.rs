//! Transmit covariance optimization.
//!
//! The deterministic equivalent is maximized by alternating between the
//! fixed point `(δ, δ̃)` for the current `Q` and waterfilling on the
//! effective matrix `G(δ, δ̃)`. A Monte-Carlo projected-gradient ascent
//! serves as an independent reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed_point::SolverOptions;
use crate::linalg::{self, c, CMat, HermitianEigen};
use crate::mc::{ChannelEnsemble, McEstimate};
use crate::model::{project_onto_simplex, ChannelModel, CovarianceMatrix};
use crate::rician::{self, g_matrix, RicianMap};

/// Relative threshold under which an eigenvalue of `G` counts as zero.
pub const WATERFILL_TOL: f64 = 1e-12;
pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100;
/// Inner fixed-point tolerance used by the optimizer. Tighter than the
/// solver default so the outer absolute `δ` differences are not dominated
/// by inner solve error when `δ` is large.
pub const INNER_TOL: f64 = 1e-12;
/// Consecutive outer steps whose `δ` difference fails to shrink by at least
/// `DELTA_SHRINK` before the run is declared non-convergent.
const DELTA_PATIENCE: usize = 5;
const DELTA_SHRINK: f64 = 0.99;
/// Second differences above this count as concavity violations.
pub const CONCAVITY_TOL: f64 = 1e-8;

/// `(κ, κ̃)` together with `G(κ, κ̃)`.
#[derive(Debug, Clone)]
pub struct VContext {
    pub kappa: f64,
    pub kappa_tilde: f64,
    pub g: CMat,
}

impl VContext {
    pub fn new(model: &ChannelModel, kappa: f64, kappa_tilde: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa_tilde > 0.0) {
            return Err(Error::ParameterDomain(format!(
                "kappa and kappa_tilde must be positive, got ({kappa}, {kappa_tilde})"
            )));
        }
        Ok(Self {
            kappa,
            kappa_tilde,
            g: g_matrix(model, kappa, kappa_tilde)?,
        })
    }
}

/// `V(κ, κ̃, Q) = log det(I + QG) + log det(I_r + κ̃/(K+1) C) − tσ²κκ̃/(K+1)`.
pub fn v_function(model: &ChannelModel, kappa: f64, kappa_tilde: f64, q: &CovarianceMatrix) -> Result<f64> {
    let ctx = VContext::new(model, kappa, kappa_tilde)?;
    let kp1 = model.k_factor() + 1.0;
    let x = q.sqrt()?;
    let mut xgx = linalg::hermitian_part(&(&x * &ctx.g * &x));
    for j in 0..model.t() {
        xgx[(j, j)] += c(1.0);
    }
    let n = linalg::identity(model.r()) + model.rx_correlation() * c(kappa_tilde / kp1);
    let penalty = model.t() as f64 * model.sigma2() * kappa * kappa_tilde / kp1;
    Ok(linalg::log_det_hpd(&xgx)? + linalg::log_det_hpd(&n)? - penalty)
}

/// Closed-form partials `(∂V/∂κ, ∂V/∂κ̃)`:
/// `−tσ²/(K+1) (κ̃ − f̃)` and `−tσ²/(K+1) (κ − f)`.
pub fn v_partials(model: &ChannelModel, kappa: f64, kappa_tilde: f64, q: &CovarianceMatrix) -> Result<(f64, f64)> {
    let map = RicianMap::new(model, q)?;
    let s = model.t() as f64 * model.sigma2() / (model.k_factor() + 1.0);
    let f = map.f(kappa, kappa_tilde)?;
    let f_tilde = map.f_tilde(kappa, kappa_tilde)?;
    Ok((-s * (kappa_tilde - f_tilde), -s * (kappa - f)))
}

/// Gradient of `Ī` at `Q`: `(I + GQ)⁻¹ G` evaluated at `(δ(Q), δ̃(Q))`, so
/// that `dĪ = Re Tr(∇ dQ)`. The `δ` dependence drops out because `V` is
/// stationary in `(κ, κ̃)` there.
pub fn i_bar_gradient(model: &ChannelModel, q: &CovarianceMatrix, opts: &SolverOptions) -> Result<CMat> {
    let sol = rician::solve_delta_system(model, q, opts)?;
    let g = g_matrix(model, sol.delta, sol.delta_tilde)?;
    let mut m = &g * q.matrix();
    for j in 0..model.t() {
        m[(j, j)] += c(1.0);
    }
    Ok(linalg::hermitian_part(&(linalg::inverse(&m)? * g)))
}

/// Result of waterfilling on `G = V diag(g) Vᴴ`.
#[derive(Debug, Clone)]
pub struct Waterfilling {
    pub q: CovarianceMatrix,
    pub water_level: f64,
    /// Eigenvalues of `G`, ascending, with values under the zero threshold set to 0.
    pub gains: Vec<f64>,
    /// Power on each eigenmode, aligned with `gains`.
    pub powers: Vec<f64>,
    pub vectors: CMat,
}

impl Waterfilling {
    /// Largest violation of the KKT system: active modes must sit exactly on
    /// the water level, inactive ones above it, and the powers must sum to `t`.
    pub fn kkt_violation(&self) -> f64 {
        let t = self.gains.len() as f64;
        let mut worst = (self.powers.iter().sum::<f64>() - t).abs();
        for (&g, &p) in self.gains.iter().zip(&self.powers) {
            let floor = if g > 0.0 { 1.0 / g } else { f64::INFINITY };
            let gap = if p > 0.0 {
                (self.water_level - floor - p).abs()
            } else {
                (self.water_level - floor).max(0.0)
            };
            worst = worst.max(gap);
        }
        worst
    }
}

/// Maximizes `log det(I + QG)` over `(1/t) Tr Q = 1`, `Q ⪰ 0`.
///
/// The water level is found exactly: with gains sorted descending, `n` modes
/// are active for the largest `n` with `γ_n = (t + Σ_{i<n} 1/g_i)/n > 1/g_n`.
pub fn waterfill(g: &CMat, tol: f64) -> Result<Waterfilling> {
    let t = g.nrows();
    if t == 0 || !g.is_square() {
        return Err(Error::ParameterDomain("waterfilling needs a non-empty square matrix".into()));
    }
    let eig = HermitianEigen::new(g)?;
    let top = eig.max();
    if !(top > 0.0) {
        if eig.min() < -tol.max(f64::MIN_POSITIVE) {
            return Err(Error::ParameterDomain("waterfilling matrix is not PSD".into()));
        }
        return Err(Error::DegenerateObjective);
    }
    if eig.min() < -tol * top {
        return Err(Error::ParameterDomain(format!(
            "waterfilling matrix is not PSD (smallest eigenvalue {})",
            eig.min()
        )));
    }
    let gains: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| if l <= tol * top { 0.0 } else { l })
        .collect();

    let mut order: Vec<usize> = (0..t).filter(|&j| gains[j] > 0.0).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    let mut inv_sum = 0.0;
    let mut level = 0.0;
    for (n, &j) in order.iter().enumerate() {
        let candidate = (t as f64 + inv_sum + 1.0 / gains[j]) / (n + 1) as f64;
        if candidate <= 1.0 / gains[j] {
            break;
        }
        inv_sum += 1.0 / gains[j];
        level = candidate;
    }
    let powers: Vec<f64> = gains
        .iter()
        .map(|&g| if g > 0.0 { (level - 1.0 / g).max(0.0) } else { 0.0 })
        .collect();
    Ok(Waterfilling {
        q: CovarianceMatrix::from_eigen_unchecked(&eig.vectors, &powers),
        water_level: level,
        gains,
        powers,
        vectors: eig.vectors,
    })
}

/// Row-major real/imaginary parts, for serialized traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_matrix(m: &CMat) -> Self {
        let (rows, cols) = m.shape();
        let entries = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j)));
        Self {
            rows,
            cols,
            re: entries.clone().map(|(i, j)| m[(i, j)].re).collect(),
            im: entries.map(|(i, j)| m[(i, j)].im).collect(),
        }
    }

    pub fn to_matrix(&self) -> CMat {
        CMat::from_fn(self.rows, self.cols, |i, j| {
            let k = i * self.cols + j;
            linalg::Complex64::new(self.re[k], self.im[k])
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ToleranceMet,
    MaxIter,
    DeltaConditionViolated,
}

/// One outer iteration. Record `k` holds `Q_k` and the fixed point solved
/// for it, which is also the pair used to build `Q_{k+1}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub delta: f64,
    pub delta_tilde: f64,
    pub i_bar: f64,
    pub d_delta: Option<f64>,
    pub d_delta_tilde: Option<f64>,
    /// `‖Q_k − Q_{k−1}‖_F / √t`.
    pub d_q: Option<f64>,
    pub q: MatrixRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub delta: f64,
    pub delta_tilde: f64,
    pub i_bar: f64,
    pub g_min_eigenvalue: f64,
    pub q_norm: f64,
    pub norm_bound: f64,
}

impl OptimizationTrace {
    /// Number of waterfilling steps taken.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("trace always holds Q_0")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizerOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub solver: SolverOptions,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            solver: SolverOptions::with_tol(INNER_TOL),
        }
    }
}

fn record_for(
    model: &ChannelModel,
    q: &CovarianceMatrix,
    prev: Option<(&IterationRecord, &CovarianceMatrix)>,
    k: usize,
    opts: &OptimizerOptions,
) -> Result<IterationRecord> {
    let sol = rician::solve_delta_system(model, q, &opts.solver)?;
    let approx = rician::emi_approx(model, q, &sol)?;
    let sqrt_t = (model.t() as f64).sqrt();
    Ok(IterationRecord {
        k,
        delta: sol.delta,
        delta_tilde: sol.delta_tilde,
        i_bar: approx.value,
        d_delta: prev.map(|(r, _)| (sol.delta - r.delta).abs()),
        d_delta_tilde: prev.map(|(r, _)| (sol.delta_tilde - r.delta_tilde).abs()),
        d_q: prev.map(|(_, pq)| linalg::frobenius(&(q.matrix() - pq.matrix())) / sqrt_t),
        q: MatrixRecord::from_matrix(q.matrix()),
    })
}

/// Maximizes `Ī(Q)` over the feasible set.
///
/// `Q_0 = I`; each step solves `(δ, δ̃)` for the current `Q` and replaces it
/// by `waterfill(G(δ, δ̃))`. Stops once the `δ`, `δ̃` and `Q` steps are all
/// within `tol`, at `max_iter`, or when the `δ` steps keep growing.
pub fn optimize_covariance(
    model: &ChannelModel,
    opts: &OptimizerOptions,
) -> Result<(CovarianceMatrix, OptimizationTrace)> {
    if !(opts.tol > 0.0) {
        return Err(Error::ParameterDomain(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let mut q = CovarianceMatrix::identity(model.t());
    let mut records = vec![record_for(model, &q, None, 0, opts).map_err(|e| e.context("optimizer iteration 0"))?];
    let mut stop_reason = StopReason::MaxIter;
    let mut growth = 0;
    let mut last_step = f64::INFINITY;

    for k in 1..=opts.max_iter {
        let prev = records.last().expect("non-empty");
        let step = (|| {
            let g = g_matrix(model, prev.delta, prev.delta_tilde)?;
            let next = waterfill(&g, WATERFILL_TOL)?.q;
            let rec = record_for(model, &next, Some((prev, &q)), k, opts)?;
            Ok::<_, Error>((next, rec))
        })();
        let (next, rec) = step.map_err(|e| e.context(format!("optimizer iteration {k}")))?;
        let d_delta = rec.d_delta.unwrap_or(0.0).max(rec.d_delta_tilde.unwrap_or(0.0));
        let done = d_delta <= opts.tol && rec.d_q.unwrap_or(0.0) <= opts.tol;
        q = next;
        records.push(rec);
        if done {
            stop_reason = StopReason::ToleranceMet;
            break;
        }
        growth = if d_delta >= DELTA_SHRINK * last_step { growth + 1 } else { 0 };
        last_step = d_delta;
        if growth >= DELTA_PATIENCE {
            stop_reason = StopReason::DeltaConditionViolated;
            break;
        }
    }

    let last = records.last().expect("non-empty");
    let g = g_matrix(model, last.delta, last.delta_tilde)?;
    let g_min = HermitianEigen::new(&g)?.min();
    let q_norm = q.eigen()?.max();
    let norm_bound = if g_min > 0.0 { 1.0 + 1.0 / g_min } else { f64::INFINITY };
    if q_norm > norm_bound * (1.0 + 1e-9) {
        return Err(Error::numerical(format!(
            "optimized covariance norm {q_norm} exceeds bound {norm_bound}"
        )));
    }
    let trace = OptimizationTrace {
        converged: stop_reason == StopReason::ToleranceMet,
        stop_reason,
        delta: last.delta,
        delta_tilde: last.delta_tilde,
        i_bar: last.i_bar,
        g_min_eigenvalue: g_min,
        q_norm,
        norm_bound,
        records,
    };
    Ok((q, trace))
}

/// Step control for the Monte-Carlo reference optimizer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepRule {
    /// Initial step length as a fraction of `t` (Frobenius norm of the move).
    pub initial_scale: f64,
    /// The run stops once the step scale is halved below this value.
    pub floor: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            initial_scale: 0.1,
            floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceDiagnostics {
    /// Objective evaluations after the initial one (accepted or rejected).
    pub iterations: usize,
    pub accepted_steps: usize,
    pub final_scale: f64,
    pub objective: McEstimate,
    /// Best objective after each iteration.
    pub history: Vec<f64>,
    pub hit_floor: bool,
}

/// Projected gradient ascent on `Q ↦ I_MC(Q)` over a fixed ensemble of
/// channel draws.
///
/// The step moves along the trace-free part of the gradient with Frobenius
/// length `scale·t`, then projects onto the feasible set. A step is kept only
/// if the ensemble objective improves; otherwise the scale is halved. The
/// best iterate is returned.
pub fn mc_reference_optimizer(
    model: &ChannelModel,
    trials: usize,
    seed: u64,
    max_iter: usize,
    step_rule: StepRule,
) -> Result<(CovarianceMatrix, ReferenceDiagnostics)> {
    if !(step_rule.initial_scale > 0.0 && step_rule.floor > 0.0) {
        return Err(Error::ParameterDomain("step sizes must be positive".into()));
    }
    let t = model.t();
    let ensemble = ChannelEnsemble::sample(model, trials, seed)?;
    let mut q = CovarianceMatrix::identity(t);
    let (mut best, mut grad) = ensemble.emi_and_gradient(&q)?;
    let mut scale = step_rule.initial_scale;
    let mut diag = ReferenceDiagnostics {
        iterations: 0,
        accepted_steps: 0,
        final_scale: scale,
        objective: best,
        history: Vec::new(),
        hit_floor: false,
    };

    while diag.iterations < max_iter {
        let mut dir = grad.clone();
        let mean_diag = linalg::trace_re(&dir) / t as f64;
        for j in 0..t {
            dir[(j, j)] -= c(mean_diag);
        }
        let norm = linalg::frobenius(&dir);
        if norm == 0.0 {
            break;
        }
        let candidate = project_feasible(&(q.matrix() + dir * c(scale * t as f64 / norm)))?;
        diag.iterations += 1;
        let (value, cand_grad) = ensemble.emi_and_gradient(&candidate)?;
        if !value.mean.is_finite() {
            return Err(Error::numerical("reference optimizer objective is not finite"));
        }
        if value.mean > best.mean {
            q = candidate;
            best = value;
            grad = cand_grad;
            diag.accepted_steps += 1;
        } else {
            scale *= 0.5;
            if scale < step_rule.floor {
                diag.hit_floor = true;
                diag.history.push(best.mean);
                break;
            }
        }
        diag.history.push(best.mean);
    }
    diag.final_scale = scale;
    diag.objective = best;
    Ok((q, diag))
}

fn project_feasible(m: &CMat) -> Result<CovarianceMatrix> {
    let eig = HermitianEigen::new(&linalg::hermitian_part(m))?;
    let powers = project_onto_simplex(&eig.values, m.nrows() as f64);
    Ok(CovarianceMatrix::from_eigen_unchecked(&eig.vectors, &powers))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcavityReport {
    pub lambdas: Vec<f64>,
    /// `Ī(λQ₁ + (1−λ)Q₂)` on the grid.
    pub values: Vec<f64>,
    pub second_differences: Vec<f64>,
    /// Grid indices whose second difference exceeds the tolerance.
    pub violations: Vec<usize>,
    pub max_second_difference: f64,
    /// `Ī((Q₁+Q₂)/2) − (Ī(Q₁)+Ī(Q₂))/2`.
    pub midpoint_gap: f64,
    /// Set when `Q₁ = Q₂`: the segment is a point and nothing is probed.
    pub degenerate: bool,
}

/// Evaluates `Ī` along the segment from `Q₂` (λ=0) to `Q₁` (λ=1).
pub fn concavity_probe(
    model: &ChannelModel,
    q1: &CovarianceMatrix,
    q2: &CovarianceMatrix,
    grid_points: usize,
) -> Result<ConcavityReport> {
    let n = grid_points.max(3);
    let lambdas: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let opts = SolverOptions::with_tol(INNER_TOL);
    let eval = |q: &CovarianceMatrix| rician::i_bar(model, q, &opts).map(|a| a.value);
    let degenerate = q1.matrix() == q2.matrix();

    let (values, midpoint_gap) = if degenerate {
        (vec![eval(q1)?; n], 0.0)
    } else {
        let values = lambdas
            .iter()
            .map(|&l| eval(&CovarianceMatrix::convex_combination(l, q1, q2)?))
            .collect::<Result<Vec<f64>>>()?;
        let mid = eval(&CovarianceMatrix::convex_combination(0.5, q1, q2)?)?;
        let gap = mid - 0.5 * (values[0] + values[n - 1]);
        (values, gap)
    };
    let second_differences: Vec<f64> = values.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect();
    let violations = second_differences
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > CONCAVITY_TOL)
        .map(|(i, _)| i + 1)
        .collect();
    let max_second_difference = second_differences.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ConcavityReport {
        lambdas,
        values,
        second_differences,
        violations,
        max_second_difference,
        midpoint_gap,
        degenerate,
    })
}

/// Largest forward-difference directional derivative
/// `(Ī(Q* + h(Q − Q*)) − Ī(Q*))/h` over the given feasible directions.
/// Non-positive (up to noise) exactly when `Q*` maximizes `Ī`.
pub fn stationarity_probe(
    model: &ChannelModel,
    q_star: &CovarianceMatrix,
    directions: &[CovarianceMatrix],
    h: f64,
) -> Result<f64> {
    let opts = SolverOptions::with_tol(INNER_TOL);
    let base = rician::i_bar(model, q_star, &opts)?.value;
    directions.iter().try_fold(f64::NEG_INFINITY, |worst, q| {
        let moved = CovarianceMatrix::convex_combination(h, q, q_star)?;
        let v = rician::i_bar(model, &moved, &opts)?.value;
        Ok(worst.max((v - base) / h))
    })
}
