use std::io::Write;

use rand::Rng;
use serde::Serialize;

use super::config::{ExperimentConfig, Scenario};
use super::output::{header_lines, write_records, REPORT_SCHEMA};
use crate::detequiv;
use crate::error::{Error, Result};
use crate::fixed_point::{self, MethodChoice, SolverOptions};
use crate::linalg::{self, c};
use crate::mc;
use crate::model::{corpus_case, gaussian_matrix, stream_rng, ChannelModel, CovarianceMatrix, CORPUS_STREAM};
use crate::optim::{self, OptimizerOptions, WATERFILL_TOL};
use crate::rician::{self, RicianMap};

/// Size of the random model corpus used by the solver checks.
pub const CORPUS_SIZE: u64 = 200;
/// Offset separating the suite's auxiliary streams from corpus indices.
const AUX_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub check: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    /// `tolerance − measured`; negative on failure.
    pub margin: f64,
    pub detail: String,
}

impl Check {
    /// Passes when `measured ≤ tolerance`.
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            check: name.into(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            margin: tolerance - measured,
            detail: detail.into(),
        }
    }

    fn failed(name: &str, detail: impl Into<String>) -> Self {
        Self {
            check: name.into(),
            passed: false,
            measured: f64::NAN,
            tolerance: f64::NAN,
            margin: f64::NAN,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Set when the configuration itself was rejected.
    pub config_error: Option<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.config_error.is_none() && self.checks.iter().all(|c| c.passed)
    }

    pub fn write_csv<W: Write>(&self, out: W, cfg: &ExperimentConfig) -> Result<()> {
        let mut meta = vec![format!("passed: {}", self.passed())];
        if let Some(e) = &self.config_error {
            meta.push(format!("config_error: {e}"));
        }
        write_records(out, &header_lines(REPORT_SCHEMA, cfg, &meta)?, &self.checks)
    }

    fn push(&mut self, name: &str, result: Result<Check>) {
        self.checks
            .push(result.unwrap_or_else(|e| Check::failed(name, e.to_string())));
    }
}

/// Relative difference with a unit floor on the scale.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

struct CorpusStats {
    residual: f64,
    trace_identity: f64,
    picard_nested: f64,
    picard_nested_pairs: usize,
    form_gap: f64,
    generic_form_gap: f64,
    beta_delta: f64,
    j_vs_i: f64,
}

fn corpus_stats(seed: u64) -> Result<CorpusStats> {
    let mut s = CorpusStats {
        residual: 0.0,
        trace_identity: 0.0,
        picard_nested: 0.0,
        picard_nested_pairs: 0,
        form_gap: 0.0,
        generic_form_gap: 0.0,
        beta_delta: 0.0,
        j_vs_i: 0.0,
    };
    let tight = SolverOptions::with_tol(1e-12);
    for i in 0..CORPUS_SIZE {
        let ctx = |e: Error| e.context(format!("corpus case {i}"));
        let (model, q) = corpus_case(seed, i)?;
        let sol = rician::solve_delta_system(&model, &q, &SolverOptions::default()).map_err(ctx)?;
        let map = RicianMap::new(&model, &q)?;
        s.residual = s.residual.max(fixed_point::residual(&map, sol.delta, sol.delta_tilde)?);
        let (g1, g2) = rician::trace_identity_gaps(&model, &q, &sol)?;
        s.trace_identity = s.trace_identity.max(g1).max(g2);

        let picard = fixed_point::solve(&map, &tight.method(MethodChoice::PicardOnly));
        let nested = fixed_point::solve(&map, &tight.method(MethodChoice::NestedOnly));
        if let (Ok(p), Ok(n)) = (picard, nested) {
            s.picard_nested_pairs += 1;
            let d = ((p.x - n.x).abs() / n.x).max((p.y - n.y).abs() / n.y);
            s.picard_nested = s.picard_nested.max(d);
        }

        let sol = rician::solve_delta_system(&model, &q, &tight).map_err(ctx)?;
        let approx = rician::emi_approx(&model, &q, &sol).map_err(ctx)?;
        s.form_gap = s.form_gap.max(rel(approx.value, approx.alt_value));

        let generic = rician::virtual_channel_reduce(&model, &q)?;
        let bsol = detequiv::solve_beta_system(&generic, &tight).map_err(ctx)?;
        let j = detequiv::j_bar(&generic, &bsol)?;
        let j_alt = detequiv::j_bar_alt(&generic, &bsol)?;
        s.generic_form_gap = s.generic_form_gap.max(rel(j, j_alt));
        let beta_expected = sol.delta / (model.k_factor() + 1.0).sqrt();
        s.beta_delta = s.beta_delta.max((bsol.beta - beta_expected).abs() / beta_expected);
        s.j_vs_i = s.j_vs_i.max(rel(j, approx.value));
    }
    Ok(s)
}

fn corpus_checks(report: &mut ValidationReport, seed: u64) {
    match corpus_stats(seed) {
        Ok(s) => {
            let n = format!("{CORPUS_SIZE} random models");
            report.checks.extend([
                Check::at_most("fixed_point_residual", s.residual, 1e-10, n.clone()),
                Check::at_most("trace_identities", s.trace_identity, 1e-9, n.clone()),
                Check::at_most(
                    "picard_vs_nested",
                    s.picard_nested,
                    1e-9,
                    format!("{} models where both methods converged", s.picard_nested_pairs),
                ),
                Check::at_most("closed_forms_i_bar", s.form_gap, 1e-9, n.clone()),
                Check::at_most("closed_forms_j_bar", s.generic_form_gap, 1e-9, n.clone()),
                Check::at_most("beta_equals_scaled_delta", s.beta_delta, 1e-9, n.clone()),
                Check::at_most("j_bar_equals_i_bar", s.j_vs_i, 1e-9, n),
            ]);
        }
        Err(e) => report.checks.push(Check::failed("corpus", e.to_string())),
    }
}

fn waterfill_check(seed: u64) -> Result<Check> {
    let mut rng = stream_rng(seed, CORPUS_STREAM, AUX_STREAM);
    let mut worst = 0.0f64;
    for i in 0..500 {
        let t = rng.random_range(1..=8);
        let rank = rng.random_range(1..=t);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let b = gaussian_matrix(&mut rng, t, rank);
        let g = &b * b.adjoint() * c(scale);
        let w = optim::waterfill(&g, WATERFILL_TOL).map_err(|e| e.context(format!("matrix {i}")))?;
        let trace_gap = (linalg::trace_re(w.q.matrix()) - t as f64).abs() / t as f64;
        worst = worst.max(w.kkt_violation() / w.water_level.max(1.0)).max(trace_gap);
    }
    Ok(Check::at_most("waterfill_kkt", worst, 1e-12, "500 random PSD matrices"))
}

fn point_checks(report: &mut ValidationReport, cfg: &ExperimentConfig, model: &ChannelModel, label: &str, index: u64) {
    let t = model.t();
    let mut rng = stream_rng(cfg.seed, CORPUS_STREAM, AUX_STREAM + 1 + index);
    let tight = SolverOptions::with_tol(1e-12);
    let name = |n: &str| format!("{n} [{label}]");

    let q = CovarianceMatrix::random(&mut rng, t);
    report.push(
        &name("v_stationary"),
        (|| {
            let sol = rician::solve_delta_system(model, &q, &tight)?;
            let h = 1e-5;
            let v = |a: f64, b: f64| optim::v_function(model, a, b, &q);
            let dk = (v(sol.delta + h, sol.delta_tilde)? - v(sol.delta - h, sol.delta_tilde)?) / (2.0 * h);
            let dkt = (v(sol.delta, sol.delta_tilde + h)? - v(sol.delta, sol.delta_tilde - h)?) / (2.0 * h);
            Ok(Check::at_most(
                &name("v_stationary"),
                dk.abs().max(dkt.abs()),
                1e-6 * t as f64,
                "central differences, h = 1e-5",
            ))
        })(),
    );

    let points: Vec<(f64, f64)> = (0..20)
        .map(|_| (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)))
        .collect();
    report.push(
        &name("v_partials"),
        (|| {
            let sol = rician::solve_delta_system(model, &q, &tight)?;
            let mut worst = 0.0f64;
            for &(u, w) in &points {
                let (k, kt) = (sol.delta * u, sol.delta_tilde * w);
                let (pk, pkt) = optim::v_partials(model, k, kt, &q)?;
                let (hk, hkt) = (1e-5 * k, 1e-5 * kt);
                let v = |a: f64, b: f64| optim::v_function(model, a, b, &q);
                let fk = (v(k + hk, kt)? - v(k - hk, kt)?) / (2.0 * hk);
                let fkt = (v(k, kt + hkt)? - v(k, kt - hkt)?) / (2.0 * hkt);
                worst = worst
                    .max((pk - fk).abs() / pk.abs().max(1e-6))
                    .max((pkt - fkt).abs() / pkt.abs().max(1e-6));
            }
            Ok(Check::at_most(
                &name("v_partials"),
                worst,
                1e-5,
                "20 off-solution points, relative error",
            ))
        })(),
    );

    let pairs: Vec<(CovarianceMatrix, CovarianceMatrix)> = (0..10)
        .map(|_| {
            let rank = rng.random_range(1..=t);
            (
                CovarianceMatrix::random_with_rank(&mut rng, t, rank),
                CovarianceMatrix::random(&mut rng, t),
            )
        })
        .collect();
    report.push(
        &name("concavity"),
        (|| {
            let mut worst = f64::NEG_INFINITY;
            let mut midpoint = f64::INFINITY;
            for (q1, q2) in &pairs {
                let rep = optim::concavity_probe(model, q1, q2, 21)?;
                worst = worst.max(rep.max_second_difference);
                midpoint = midpoint.min(rep.midpoint_gap);
            }
            Ok(Check::at_most(
                &name("concavity"),
                worst,
                optim::CONCAVITY_TOL,
                format!("10 segments x 21 points, worst midpoint gap {midpoint:e}"),
            ))
        })(),
    );

    let opts = OptimizerOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        ..Default::default()
    };
    match optim::optimize_covariance(model, &opts) {
        Ok((q_star, trace)) => {
            report.checks.push(Check::at_most(
                &name("norm_bound"),
                trace.q_norm,
                trace.norm_bound,
                "largest eigenvalue of the optimum vs 1 + 1/min eig G",
            ));
            report.checks.push(Check {
                passed: trace.converged,
                ..Check::at_most(
                    &name("optimizer_converged"),
                    trace.iterations() as f64,
                    cfg.max_iter as f64,
                    format!("{:?}", trace.stop_reason),
                )
            });
            let directions: Vec<_> = (0..20).map(|_| CovarianceMatrix::random(&mut rng, t)).collect();
            report.push(
                &name("optimizer_stationarity"),
                optim::stationarity_probe(model, &q_star, &directions, 1e-6).map(|worst| {
                    Check::at_most(
                        &name("optimizer_stationarity"),
                        worst,
                        1e-6,
                        "largest directional derivative over 20 feasible directions",
                    )
                }),
            );
        }
        Err(e) => report.checks.push(Check::failed(&name("optimizer"), e.to_string())),
    }

    report.push(
        &name("virtual_channel_mc"),
        (|| {
            let generic = rician::virtual_channel_reduce(model, &q)?;
            let a = mc::mc_emi(model, &q, cfg.trials, cfg.seed)?;
            let b = detequiv::mc_emi_generic(&generic, cfg.trials, cfg.seed)?;
            Ok(Check::at_most(
                &name("virtual_channel_mc"),
                (a.mean - b.mean).abs(),
                3.0 * a.combined_stderr(&b),
                format!("{} trials each", cfg.trials),
            ))
        })(),
    );
}

/// Runs the invariant suite. Configuration problems (including an invalid
/// model built from the config) are reported rather than returned.
pub fn run_validate(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    if cfg.scenario != Scenario::Validate {
        return Err(Error::Config(format!(
            "config scenario is {}, expected validate",
            cfg.scenario.id()
        )));
    }
    let mut report = ValidationReport::default();
    if let Err(e) = cfg.validate() {
        report.config_error = Some(e.to_string());
        report.checks.push(Check::failed("config", e.to_string()));
        return Ok(report);
    }
    let mut models = Vec::new();
    for &(r, t) in &cfg.dims {
        for &snr in &cfg.snr_db_grid {
            match cfg.build_preset(r, t, snr) {
                Ok(p) => models.push((format!("{r}x{t} {snr} dB"), p.model)),
                Err(e) => {
                    let msg = format!("{r}x{t} at {snr} dB: {e}");
                    report.config_error = Some(msg.clone());
                    report.checks.push(Check::failed("config", msg));
                    return Ok(report);
                }
            }
        }
    }
    corpus_checks(&mut report, cfg.seed);
    report.push("waterfill_kkt", waterfill_check(cfg.seed));
    for (i, (label, model)) in models.iter().enumerate() {
        point_checks(&mut report, cfg, model, label, i as u64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupted_correlation_is_reported_as_config_failure() {
        let cfg = ExperimentConfig {
            dims: vec![(2, 2)],
            tx_correlation: Some(vec![vec![2.0, 0.0], vec![0.0, 1.0]]),
            ..ExperimentConfig::preset(Scenario::Validate)
        };
        let report = run_validate(&cfg).unwrap();
        assert!(!report.passed());
        let msg = report.config_error.unwrap();
        assert!(msg.contains("transmit correlation"), "{msg}");
        assert_eq!(report.checks[0].check, "config");
    }

    #[test]
    fn small_suite_passes_with_margins() {
        let cfg = ExperimentConfig {
            dims: vec![(2, 2)],
            snr_db_grid: vec![10.0],
            trials: 20_000,
            ..ExperimentConfig::preset(Scenario::Validate)
        };
        let report = run_validate(&cfg).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
            assert!(c.margin >= 0.0);
        }
        let mut buf = Vec::new();
        report.write_csv(&mut buf, &cfg).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# passed: true"));
        assert!(text.contains("check,passed,measured,tolerance,margin,detail"));
    }
}
