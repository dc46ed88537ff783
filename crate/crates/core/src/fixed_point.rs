//! Solver for coupled positive fixed-point systems `x = f(x, y)`, `y = f̃(x, y)`.
//!
//! Both deterministic-equivalent systems in this crate have this shape. The
//! maps satisfy the monotonicity structure that makes the solution unique:
//! for fixed `y`, `x ↦ f(x, y)/x` is strictly decreasing, and with
//! `x = h(y)` the unique root of `f(x, y) = x`, `y ↦ f̃(h(y), y)/y` is
//! strictly decreasing as well. Damped Picard iteration is tried first; the
//! nested bisection built on the two monotone maps is the guaranteed fallback.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default Picard iteration budget.
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Picard damping factor.
pub const DAMPING: f64 = 0.5;

/// Lower end of the bisection brackets.
const BRACKET_FLOOR: f64 = 1e-30;
const MAX_BRACKET_EXPANSIONS: usize = 200;
const MAX_BISECTIONS: usize = 200;

/// A coupled map `(x, y) ↦ (f(x, y), f̃(x, y))`.
pub trait CoupledMap {
    fn first(&self, x: f64, y: f64) -> Result<f64>;
    fn second(&self, x: f64, y: f64) -> Result<f64>;

    /// Both components; override when they share work.
    fn both(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        Ok((self.first(x, y)?, self.second(x, y)?))
    }

    /// Total mass of the measure representing the first unknown: zero means
    /// the first unknown is identically zero.
    fn first_mass(&self) -> f64;
    fn second_mass(&self) -> f64;

    /// Starting point for Picard iteration (`1/σ²` for both unknowns).
    fn initial_guess(&self) -> (f64, f64);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Picard,
    NestedAppendixA,
}

/// Which algorithm(s) to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MethodChoice {
    /// Picard, falling back to nested bisection on non-convergence.
    #[default]
    Auto,
    PicardOnly,
    NestedOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub method: MethodChoice,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            method: MethodChoice::Auto,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn method(mut self, method: MethodChoice) -> Self {
        self.method = method;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSolution {
    pub x: f64,
    pub y: f64,
    pub residual: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

fn rel_gap(value: f64, image: f64) -> f64 {
    if value == 0.0 && image == 0.0 {
        0.0
    } else {
        (value - image).abs() / value.abs().max(image.abs())
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numerical(format!("non-finite value in {what}")))
    }
}

/// Maximum relative residual `max(|x − f|/x, |y − f̃|/y)` of a candidate.
pub fn residual<M: CoupledMap + ?Sized>(map: &M, x: f64, y: f64) -> Result<f64> {
    let (fx, fy) = map.both(x, y)?;
    Ok(rel_gap(x, finite(fx, "first map")?).max(rel_gap(y, finite(fy, "second map")?)))
}

pub fn solve<M: CoupledMap + ?Sized>(map: &M, opts: &SolverOptions) -> Result<PairSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::ParameterDomain(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let m1 = finite(map.first_mass(), "first mass")?;
    let m2 = finite(map.second_mass(), "second mass")?;
    if m1 == 0.0 || m2 == 0.0 {
        return solve_degenerate(map, m1 == 0.0, m2 == 0.0);
    }
    match opts.method {
        MethodChoice::PicardOnly => picard(map, opts),
        MethodChoice::NestedOnly => nested(map, opts),
        MethodChoice::Auto => match picard(map, opts) {
            Ok(sol) => Ok(sol),
            Err(Error::SolverFailure(_)) | Err(Error::Numerical(_)) => nested(map, opts),
            Err(e) => Err(e),
        },
    }
}

/// Damped Picard iteration `z ← (1 − α) z + α F(z)`.
pub fn picard<M: CoupledMap + ?Sized>(map: &M, opts: &SolverOptions) -> Result<PairSolution> {
    let (mut x, mut y) = map.initial_guess();
    for k in 0..=opts.max_iter {
        let (fx, fy) = map.both(x, y)?;
        let fx = finite(fx, "Picard iteration")?;
        let fy = finite(fy, "Picard iteration")?;
        let res = rel_gap(x, fx).max(rel_gap(y, fy));
        if res <= opts.tol {
            return Ok(PairSolution {
                x,
                y,
                residual: res,
                iterations: k,
                method: SolveMethod::Picard,
            });
        }
        x = (1.0 - DAMPING) * x + DAMPING * fx;
        y = (1.0 - DAMPING) * y + DAMPING * fy;
        if !(x > 0.0 && y > 0.0) {
            return Err(Error::SolverFailure("Picard iterate left the positive orthant".into()));
        }
    }
    Err(Error::SolverFailure(format!(
        "Picard iteration did not reach tolerance {} in {} iterations",
        opts.tol, opts.max_iter
    )))
}

/// Root of a strictly decreasing `phi` on `(0, ∞)` with `phi → +∞` at 0.
/// Works in log-space; returns the geometric midpoint of the final bracket.
fn bisect_decreasing(
    mut phi: impl FnMut(f64) -> Result<f64>,
    start_hi: f64,
    evals: &mut usize,
) -> Result<f64> {
    let mut lo = BRACKET_FLOOR;
    *evals += 1;
    if phi(lo)? <= 0.0 {
        return Err(Error::SolverFailure(format!(
            "bisection: no sign change above {BRACKET_FLOOR}"
        )));
    }
    let mut hi = start_hi.max(lo * 2.0);
    let mut expansions = 0;
    loop {
        *evals += 1;
        let v = phi(hi)?;
        if v <= 0.0 {
            if v == 0.0 {
                return Ok(hi);
            }
            break;
        }
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > MAX_BRACKET_EXPANSIONS || !hi.is_finite() {
            return Err(Error::SolverFailure("bisection: upper bracket not found".into()));
        }
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi || hi / lo - 1.0 < 4.0 * f64::EPSILON {
            break;
        }
        *evals += 1;
        let v = phi(mid)?;
        if v > 0.0 {
            lo = mid;
        } else if v < 0.0 {
            hi = mid;
        } else {
            return Ok(mid);
        }
    }
    Ok((lo * hi).sqrt())
}

/// Inner map `h(y)`: the unique `x > 0` with `f(x, y) = x`.
fn inner_root<M: CoupledMap + ?Sized>(map: &M, y: f64, evals: &mut usize) -> Result<f64> {
    let hi = map.first_mass();
    bisect_decreasing(|x| Ok(map.first(x, y)? / x - 1.0), hi, evals)
}

/// Nested scalar root-finding: inner solve of `f(x, y) = x` for `x = h(y)`,
/// outer solve of `f̃(h(y), y) = y`.
pub fn nested<M: CoupledMap + ?Sized>(map: &M, opts: &SolverOptions) -> Result<PairSolution> {
    let mut evals = 0usize;
    let mut inner_evals = 0usize;
    let hi = map.second_mass();
    let y = bisect_decreasing(
        |y| {
            let x = inner_root(map, y, &mut inner_evals)?;
            Ok(map.second(x, y)? / y - 1.0)
        },
        hi,
        &mut evals,
    )?;
    let x = inner_root(map, y, &mut inner_evals)?;
    let res = residual(map, x, y)?;
    if res > opts.tol {
        return Err(Error::SolverFailure(format!(
            "nested bisection converged to residual {res:.3e} > {:.3e}",
            opts.tol
        )));
    }
    Ok(PairSolution {
        x,
        y,
        residual: res,
        iterations: evals,
        method: SolveMethod::NestedAppendixA,
    })
}

/// One or both unknowns vanish identically (zero variance profile).
fn solve_degenerate<M: CoupledMap + ?Sized>(
    map: &M,
    x_zero: bool,
    y_zero: bool,
) -> Result<PairSolution> {
    let mut evals = 0usize;
    let (x, y) = match (x_zero, y_zero) {
        (true, true) => (0.0, 0.0),
        (true, false) => {
            let y = bisect_decreasing(|y| Ok(map.second(0.0, y)? / y - 1.0), map.second_mass(), &mut evals)?;
            (0.0, y)
        }
        (false, true) => {
            let x = bisect_decreasing(|x| Ok(map.first(x, 0.0)? / x - 1.0), map.first_mass(), &mut evals)?;
            (x, 0.0)
        }
        (false, false) => unreachable!(),
    };
    Ok(PairSolution {
        x,
        y,
        residual: residual(map, x, y)?,
        iterations: evals,
        method: SolveMethod::NestedAppendixA,
    })
}
