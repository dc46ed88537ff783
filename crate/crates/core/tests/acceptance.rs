//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use rician_emi::cli::{self, ExperimentConfig, Scenario};
use rician_emi::detequiv;
use rician_emi::fixed_point::{self, MethodChoice, SolverOptions};
use rician_emi::linalg::{self, c, CMat, HermitianEigen};
use rician_emi::mc;
use rician_emi::model::{self, corpus_case, exponential_preset, gaussian_matrix, stream_rng, CovarianceMatrix};
use rician_emi::optim::{self, OptimizerOptions, WATERFILL_TOL};
use rician_emi::rician::{self, RicianMap};
use rician_emi::{ChannelModel, Result};

const SEED: u64 = 20_100_309;
const CORPUS: u64 = 200;

type Verdict = Result<(bool, String)>;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Criteria 1 and 10 share one sweep.
fn accuracy_sweep() -> Result<(Verdict, Verdict)> {
    let cfg = ExperimentConfig::preset(Scenario::AccuracySweep);
    let clock = Instant::now();
    let out = cli::run_accuracy_sweep(&cfg)?;
    let secs = clock.elapsed().as_secs_f64();
    let worst = |r: usize| {
        cfg.snr_db_grid
            .iter()
            .map(|&s| out.value(r, r, s, "rel_diff_pct").map_or(f64::INFINITY, |row| row.value))
            .fold(0.0, f64::max)
    };
    let stderr_ok = out
        .rows
        .iter()
        .filter(|r| r.quantity == "i_mc")
        .all(|r| r.stderr.is_some_and(|s| s > 0.0));
    let (w2, w8) = (worst(2), worst(8));
    let c1 = Ok((
        w2 <= 5.0 && w8 <= 1.0 && stderr_ok,
        format!(
            "max relative difference {w2:.3}% at 2x2 (limit 5%), {w8:.3}% at 8x8 (limit 1%), stderr reported: {stderr_ok}, {secs:.0} s"
        ),
    ));

    let mut violations = Vec::new();
    for &s in &cfg.snr_db_grid {
        let e2 = out.value(2, 2, s, "rel_diff_pct").map(|r| r.value);
        let e8 = out.value(8, 8, s, "rel_diff_pct").map(|r| r.value);
        match (e2, e8) {
            (Some(a), Some(b)) if b < a => {}
            _ => violations.push(s),
        }
    }
    let c10 = Ok((
        violations.is_empty(),
        format!(
            "8x8 error below 2x2 error at {}/{} SNR points{}",
            cfg.snr_db_grid.len() - violations.len(),
            cfg.snr_db_grid.len(),
            if violations.is_empty() {
                String::new()
            } else {
                format!(", violations at {violations:?} dB")
            }
        ),
    ));
    Ok((c1, c10))
}

fn fixed_point_correctness() -> Verdict {
    let mut worst_residual = 0.0f64;
    let mut worst_gap = 0.0f64;
    let mut pairs = 0;
    for i in 0..CORPUS {
        let (model, q) = corpus_case(SEED, i)?;
        let sol = rician::solve_delta_system(&model, &q, &SolverOptions::default())?;
        let map = RicianMap::new(&model, &q)?;
        worst_residual = worst_residual.max(fixed_point::residual(&map, sol.delta, sol.delta_tilde)?);
        let tight = SolverOptions::with_tol(1e-12);
        let p = fixed_point::solve(&map, &tight.method(MethodChoice::PicardOnly));
        let n = fixed_point::solve(&map, &tight.method(MethodChoice::NestedOnly));
        if let (Ok(p), Ok(n)) = (p, n) {
            pairs += 1;
            worst_gap = worst_gap.max((p.x - n.x).abs() / n.x).max((p.y - n.y).abs() / n.y);
        }
    }
    Ok((
        worst_residual <= 1e-10 && worst_gap <= 1e-9 && pairs > 0,
        format!(
            "max relative residual {worst_residual:.2e} (limit 1e-10); Picard vs nested {worst_gap:.2e} over {pairs} models (limit 1e-9)"
        ),
    ))
}

fn closed_forms() -> Verdict {
    let tight = SolverOptions::with_tol(1e-12);
    let (mut i_gap, mut j_gap) = (0.0f64, 0.0f64);
    for i in 0..CORPUS {
        let (model, q) = corpus_case(SEED, i)?;
        let a = rician::i_bar(&model, &q, &tight)?;
        i_gap = i_gap.max(rel(a.value, a.alt_value));
        let g = rician::virtual_channel_reduce(&model, &q)?;
        let b = detequiv::solve_beta_system(&g, &tight)?;
        j_gap = j_gap.max(rel(detequiv::j_bar(&g, &b)?, detequiv::j_bar_alt(&g, &b)?));
    }
    Ok((
        i_gap <= 1e-9 && j_gap <= 1e-9,
        format!("Ī forms {i_gap:.2e}, J̄ forms {j_gap:.2e} relative (limit 1e-9) over {CORPUS} models"),
    ))
}

fn consistency_chain() -> Verdict {
    let tight = SolverOptions::with_tol(1e-12);
    let (mut beta_gap, mut value_gap) = (0.0f64, 0.0f64);
    for i in 0..CORPUS {
        let (model, q) = corpus_case(SEED, i)?;
        let sol = rician::solve_delta_system(&model, &q, &tight)?;
        let a = rician::emi_approx(&model, &q, &sol)?;
        let g = rician::virtual_channel_reduce(&model, &q)?;
        let b = detequiv::solve_beta_system(&g, &tight)?;
        let expected = sol.delta / (model.k_factor() + 1.0).sqrt();
        beta_gap = beta_gap.max((b.beta - expected).abs() / expected);
        value_gap = value_gap.max(rel(detequiv::j_bar(&g, &b)?, a.value));
    }
    let model = exponential_preset(4, 4, 1.0, 0.5, 0.8, 0.5, SEED)?.model;
    let q = CovarianceMatrix::random(&mut stream_rng(SEED, model::CORPUS_STREAM, 1 << 41), 4);
    let g = rician::virtual_channel_reduce(&model, &q)?;
    let direct = mc::mc_emi(&model, &q, 100_000, SEED)?;
    let reduced = detequiv::mc_emi_generic(&g, 100_000, SEED)?;
    let diff = (direct.mean - reduced.mean).abs();
    let limit = 3.0 * direct.combined_stderr(&reduced);
    Ok((
        beta_gap <= 1e-9 && value_gap <= 1e-9 && diff <= limit,
        format!(
            "β vs δ/√(K+1) {beta_gap:.2e}, J̄ vs Ī {value_gap:.2e} (limit 1e-9); MC gap {diff:.4} vs 3 combined stderr {limit:.4} at 1e5 trials, 4x4"
        ),
    ))
}

fn stationarity_identities() -> Verdict {
    let tight = SolverOptions::with_tol(1e-12);
    let mut worst_stationary = 0.0f64;
    let mut worst_partial = 0.0f64;
    let mut rng = stream_rng(SEED, model::CORPUS_STREAM, 1 << 42);
    for i in 0..50 {
        let (model, q) = corpus_case(SEED, i)?;
        let t = model.t() as f64;
        let sol = rician::solve_delta_system(&model, &q, &tight)?;
        let v = |a: f64, b: f64| optim::v_function(&model, a, b, &q);
        let h = 1e-5;
        let dk = (v(sol.delta + h, sol.delta_tilde)? - v(sol.delta - h, sol.delta_tilde)?) / (2.0 * h);
        let dkt = (v(sol.delta, sol.delta_tilde + h)? - v(sol.delta, sol.delta_tilde - h)?) / (2.0 * h);
        worst_stationary = worst_stationary.max(dk.abs().max(dkt.abs()) / t);

        if i < 20 {
            let k = sol.delta * rng.random_range(0.5..2.0);
            let kt = sol.delta_tilde * rng.random_range(0.5..2.0);
            let (pk, pkt) = optim::v_partials(&model, k, kt, &q)?;
            let (hk, hkt) = (1e-5 * k, 1e-5 * kt);
            let fk = (v(k + hk, kt)? - v(k - hk, kt)?) / (2.0 * hk);
            let fkt = (v(k, kt + hkt)? - v(k, kt - hkt)?) / (2.0 * hkt);
            worst_partial = worst_partial
                .max((pk - fk).abs() / pk.abs())
                .max((pkt - fkt).abs() / pkt.abs());
        }
    }
    Ok((
        worst_stationary <= 1e-6 && worst_partial <= 1e-5,
        format!(
            "max |∂V|/t at the fixed point {worst_stationary:.2e} (limit 1e-6); off-solution partials vs differences {worst_partial:.2e} relative (limit 1e-5)"
        ),
    ))
}

fn waterfilling() -> Verdict {
    let mut rng = stream_rng(SEED, model::CORPUS_STREAM, 1 << 43);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let t = rng.random_range(1..=8);
        let rank = rng.random_range(1..=t);
        let b = gaussian_matrix(&mut rng, t, rank);
        let g = &b * b.adjoint() * c(10f64.powf(rng.random_range(-2.0..2.0)));
        let w = optim::waterfill(&g, WATERFILL_TOL)?;
        let trace_gap = (linalg::trace_re(w.q.matrix()) / t as f64 - 1.0).abs();
        worst = worst.max(w.kkt_violation() / w.water_level.max(1.0)).max(trace_gap);
    }
    let diag = |q: &CovarianceMatrix| [q.matrix()[(0, 0)].re, q.matrix()[(1, 1)].re];
    let a = diag(&optim::waterfill(&linalg::diag_real(&[3.0, 1.0]), WATERFILL_TOL)?.q);
    let b = diag(&optim::waterfill(&linalg::diag_real(&[10.0, 0.01]), WATERFILL_TOL)?.q);
    let hand = (a[0] - 4.0 / 3.0)
        .abs()
        .max((a[1] - 2.0 / 3.0).abs())
        .max((b[0] - 2.0).abs())
        .max(b[1].abs());
    Ok((
        worst <= 1e-12 && hand <= 1e-12,
        format!("KKT/trace violation {worst:.2e} over 500 matrices; hand cases off by {hand:.2e} (limit 1e-12)"),
    ))
}

/// Largest principal angle between the eigenspaces of `Q` and the matching
/// right singular subspaces of `A`. Tied eigenvalues of `Q` are compared as
/// subspaces.
fn principal_angle(q: &CovarianceMatrix, a: &CMat) -> Result<f64> {
    let eq = q.eigen()?;
    let v = HermitianEigen::new(&(a.adjoint() * a))?.vectors;
    let t = eq.values.len();
    let scale = eq.max().max(1.0);
    let mut worst = 0.0f64;
    let mut start = 0;
    while start < t {
        let mut end = start + 1;
        while end < t && eq.values[end] - eq.values[end - 1] <= 1e-8 * scale {
            end += 1;
        }
        let u = eq.vectors.columns(start, end - start).into_owned();
        let mut energy: Vec<(f64, usize)> = (0..t)
            .map(|j| ((u.adjoint() * v.column(j)).norm(), j))
            .collect();
        energy.sort_by(|x, y| y.0.total_cmp(&x.0));
        let cols: Vec<_> = energy[..end - start].iter().map(|&(_, j)| v.column(j).into_owned()).collect();
        let vsel = CMat::from_columns(&cols);
        worst = worst.max(linalg::subspace_sin(&u, &vsel)?.min(1.0).asin());
        start = end;
    }
    Ok(worst)
}

fn optimizer_correctness() -> Verdict {
    let opts = OptimizerOptions::default();
    let mut norm_ok = true;
    let mut runs = 0;
    let mut run = |m: &ChannelModel| -> Result<(CovarianceMatrix, optim::OptimizationTrace)> {
        let out = optim::optimize_covariance(m, &opts)?;
        runs += 1;
        norm_ok &= out.1.q_norm <= out.1.norm_bound;
        Ok(out)
    };

    let mut worst_angle = 0.0f64;
    for snr in [0.0, 10.0, 20.0] {
        let preset = exponential_preset(4, 4, 1.0, 0.0, 0.0, model::sigma2_from_snr_db(snr), SEED)?;
        let (q, _) = run(&preset.model)?;
        worst_angle = worst_angle.max(principal_angle(&q, preset.model.los())?);
    }

    let tight = SolverOptions::with_tol(1e-12);
    let mut rng = stream_rng(SEED, model::CORPUS_STREAM, 1 << 44);
    let mut worst_excess = f64::NEG_INFINITY;
    for t in [2, 4] {
        let model = exponential_preset(t, t, 1.0, 0.5, 0.8, model::sigma2_from_snr_db(10.0), SEED)?.model;
        let (q, trace) = run(&model)?;
        let best = rician::i_bar(&model, &q, &tight)?.value;
        let identity = rician::i_bar(&model, &CovarianceMatrix::identity(t), &tight)?.value;
        worst_excess = worst_excess.max(identity - best);
        for k in 0..1000 {
            let rank = 1 + k % t;
            let rq = CovarianceMatrix::random_with_rank(&mut rng, t, rank);
            worst_excess = worst_excess.max(rician::i_bar(&model, &rq, &tight)?.value - trace.i_bar);
        }
    }
    Ok((
        worst_angle <= 1e-6 && worst_excess <= 0.0 && norm_ok,
        format!(
            "principal angle {worst_angle:.2e} rad (limit 1e-6); best random Q exceeds optimum by {worst_excess:.2e} (must be ≤ 0); norm bound held on {runs} runs: {norm_ok}"
        ),
    ))
}

fn optimizer_comparison() -> Verdict {
    let cfg = ExperimentConfig::preset(Scenario::CompareOptimizers);
    let clock = Instant::now();
    let out = cli::run_compare_optimizers(&cfg)?;
    let secs = clock.elapsed().as_secs_f64();
    let mut worst_ratio = 0.0f64;
    let mut min_speedup = f64::INFINITY;
    for &s in &cfg.snr_db_grid {
        let diff = out.value(4, 4, s, "abs_diff").expect("row present");
        worst_ratio = worst_ratio.max(diff.value / (3.0 * diff.stderr.unwrap_or(0.0)));
        min_speedup = min_speedup.min(out.value(4, 4, s, "speedup_per_iter").expect("row present").value);
    }
    Ok((
        worst_ratio <= 1.0 && min_speedup >= 10.0,
        format!(
            "worst |ΔI_MC| / (3 combined stderr) = {worst_ratio:.3} (limit 1); smallest per-iteration speedup {min_speedup:.0}x (limit 10x); {secs:.0} s"
        ),
    ))
}

fn concavity() -> Verdict {
    let model = exponential_preset(4, 4, 1.0, 0.5, 0.8, model::sigma2_from_snr_db(10.0), SEED)?.model;
    let mut rng = stream_rng(SEED, model::CORPUS_STREAM, 1 << 45);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_mid = f64::INFINITY;
    for k in 0..50 {
        let rank = 1 + k % 4;
        let q1 = CovarianceMatrix::random_with_rank(&mut rng, 4, rank);
        let q2 = CovarianceMatrix::random(&mut rng, 4);
        let rep = optim::concavity_probe(&model, &q1, &q2, 21)?;
        violations += rep.violations.len();
        worst = worst.max(rep.max_second_difference);
        worst_mid = worst_mid.min(rep.midpoint_gap);
    }
    Ok((
        violations == 0 && worst_mid >= -1e-10,
        format!(
            "{violations} second differences above 1e-8 over 50 segments x 21 points (largest {worst:.2e}); smallest midpoint gap {worst_mid:.2e}"
        ),
    ))
}

fn main() -> ExitCode {
    let mut lines: Vec<(u8, &str, Verdict)> = Vec::new();
    let (c1, c10) = match accuracy_sweep() {
        Ok(v) => v,
        Err(e) => (Err(e), Ok((false, "sweep failed".into()))),
    };
    lines.push((1, "accuracy of the approximation", c1));
    lines.push((2, "fixed-point correctness", fixed_point_correctness()));
    lines.push((3, "closed-form equality", closed_forms()));
    lines.push((4, "virtual-channel consistency", consistency_chain()));
    lines.push((5, "stationarity identities", stationarity_identities()));
    lines.push((6, "waterfilling", waterfilling()));
    lines.push((7, "optimizer correctness", optimizer_correctness()));
    lines.push((8, "comparison with the Monte-Carlo reference", optimizer_comparison()));
    lines.push((9, "concavity", concavity()));
    lines.push((10, "accuracy improves with size", c10));

    let mut all = true;
    for (id, name, verdict) in lines {
        let (ok, detail) = verdict.unwrap_or_else(|e| (false, format!("error: {e}")));
        all &= ok;
        println!("{} [{id:>2}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
