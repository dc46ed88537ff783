use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::mc::DEFAULT_TRIALS;
use crate::model::{self, ChannelModel, Preset};
use crate::optim;

pub const DEFAULT_SEED: u64 = 20_100_309;
pub const DEFAULT_REFERENCE_MAX_ITER: usize = 150;
pub const VALIDATE_TRIALS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    AccuracySweep,
    Optimize,
    CompareOptimizers,
    Validate,
}

impl Scenario {
    pub fn id(self) -> &'static str {
        match self {
            Scenario::AccuracySweep => "accuracy_sweep",
            Scenario::Optimize => "optimize",
            Scenario::CompareOptimizers => "compare_optimizers",
            Scenario::Validate => "validate",
        }
    }
}

/// Effective experiment configuration. Every field is explicit so the
/// serialized form fully determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// `(r, t)` pairs.
    pub dims: Vec<(usize, usize)>,
    #[serde(alias = "K")]
    pub k_factor: f64,
    #[serde(alias = "rho_T")]
    pub rho_t: f64,
    #[serde(alias = "rho_R")]
    pub rho_r: f64,
    pub snr_db_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub reference_max_iter: usize,
    /// Fill the `wall_time_ms` column. Off by default so reruns are byte-identical.
    pub timing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<PathBuf>,
    /// Real receive correlation replacing the exponential model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rx_correlation: Option<Vec<Vec<f64>>>,
    /// Real transmit correlation replacing the exponential model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_correlation: Option<Vec<Vec<f64>>>,
}

/// Config file contents before scenario defaults are filled in.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    scenario: Option<Scenario>,
    dims: Option<Vec<(usize, usize)>>,
    #[serde(alias = "K")]
    k_factor: Option<f64>,
    #[serde(alias = "rho_T")]
    rho_t: Option<f64>,
    #[serde(alias = "rho_R")]
    rho_r: Option<f64>,
    snr_db_grid: Option<Vec<f64>>,
    trials: Option<usize>,
    seed: Option<u64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    reference_max_iter: Option<usize>,
    timing: Option<bool>,
    output_path: Option<PathBuf>,
    trace_path: Option<PathBuf>,
    rx_correlation: Option<Vec<Vec<f64>>>,
    tx_correlation: Option<Vec<Vec<f64>>>,
}

/// `-5, -2.5, …, 25` dB.
pub fn default_snr_grid() -> Vec<f64> {
    (0..=12).map(|i| -5.0 + 2.5 * i as f64).collect()
}

impl ExperimentConfig {
    /// Defaults for each scenario: the accuracy sweep uses the
    /// `(ρ_T, ρ_R) = (0.8, 0.3)` setup over three sizes, the optimizer
    /// scenarios the 4×4 `(0.5, 0.8)` setup.
    pub fn preset(scenario: Scenario) -> Self {
        let base = Self {
            scenario,
            dims: vec![(4, 4)],
            k_factor: 1.0,
            rho_t: 0.5,
            rho_r: 0.8,
            snr_db_grid: default_snr_grid(),
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
            tol: optim::DEFAULT_TOL,
            max_iter: optim::DEFAULT_MAX_ITER,
            reference_max_iter: DEFAULT_REFERENCE_MAX_ITER,
            timing: false,
            output_path: None,
            trace_path: None,
            rx_correlation: None,
            tx_correlation: None,
        };
        match scenario {
            Scenario::AccuracySweep => Self {
                dims: vec![(2, 2), (4, 4), (8, 8)],
                rho_t: 0.8,
                rho_r: 0.3,
                ..base
            },
            Scenario::Optimize => base,
            Scenario::CompareOptimizers => Self {
                snr_db_grid: vec![0.0, 5.0, 10.0, 15.0, 20.0],
                timing: true,
                ..base
            },
            Scenario::Validate => Self {
                snr_db_grid: vec![0.0, 10.0, 20.0],
                trials: VALIDATE_TRIALS,
                ..base
            },
        }
    }

    /// Parses TOML; missing keys take the defaults of the given (or the
    /// file's) scenario.
    pub fn from_toml_str(text: &str, fallback: Scenario) -> Result<Self> {
        let p: PartialConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let d = Self::preset(p.scenario.unwrap_or(fallback));
        let cfg = Self {
            scenario: d.scenario,
            dims: p.dims.unwrap_or(d.dims),
            k_factor: p.k_factor.unwrap_or(d.k_factor),
            rho_t: p.rho_t.unwrap_or(d.rho_t),
            rho_r: p.rho_r.unwrap_or(d.rho_r),
            snr_db_grid: p.snr_db_grid.unwrap_or(d.snr_db_grid),
            trials: p.trials.unwrap_or(d.trials),
            seed: p.seed.unwrap_or(d.seed),
            tol: p.tol.unwrap_or(d.tol),
            max_iter: p.max_iter.unwrap_or(d.max_iter),
            reference_max_iter: p.reference_max_iter.unwrap_or(d.reference_max_iter),
            timing: p.timing.unwrap_or(d.timing),
            output_path: p.output_path,
            trace_path: p.trace_path,
            rx_correlation: p.rx_correlation,
            tx_correlation: p.tx_correlation,
        };
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: Scenario) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, fallback)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The config as echoed into output metadata: output locations are
    /// dropped so the same run written to two places hashes the same.
    pub fn canonical_toml(&self) -> Result<String> {
        Self {
            output_path: None,
            trace_path: None,
            ..self.clone()
        }
        .to_toml_string()
    }

    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Checks everything that can be checked without building a model.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.dims.is_empty() {
            return fail("dims must list at least one (r, t) pair".into());
        }
        if let Some(&(r, t)) = self.dims.iter().find(|(r, t)| *r == 0 || *t == 0) {
            return fail(format!("dimension ({r}, {t}) must be positive"));
        }
        if self.snr_db_grid.is_empty() {
            return fail("snr_db_grid must not be empty".into());
        }
        if self.snr_db_grid.iter().any(|s| !s.is_finite()) {
            return fail("snr_db_grid entries must be finite".into());
        }
        if !(self.k_factor >= 0.0 && self.k_factor.is_finite()) {
            return fail(format!("K must be a finite non-negative number, got {}", self.k_factor));
        }
        for (name, rho) in [("rho_t", self.rho_t), ("rho_r", self.rho_r)] {
            if !(0.0..1.0).contains(&rho) {
                return fail(format!("{name} must lie in [0, 1), got {rho}"));
            }
        }
        if self.trials < 2 {
            return fail(format!("trials must be at least 2, got {}", self.trials));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return fail(format!("tol must be positive, got {}", self.tol));
        }
        for (name, m, pick) in [
            ("rx_correlation", &self.rx_correlation, 0usize),
            ("tx_correlation", &self.tx_correlation, 1),
        ] {
            let Some(rows) = m else { continue };
            let n = rows.len();
            if rows.iter().any(|row| row.len() != n) {
                return fail(format!("{name} must be square"));
            }
            for &(r, t) in &self.dims {
                let want = if pick == 0 { r } else { t };
                if want != n {
                    return fail(format!("{name} is {n}x{n} but dims entry ({r}, {t}) needs {want}x{want}"));
                }
            }
        }
        Ok(())
    }

    /// The preset channel for one grid point, with correlation overrides applied.
    pub fn build_preset(&self, r: usize, t: usize, snr_db: f64) -> Result<Preset> {
        let sigma2 = model::sigma2_from_snr_db(snr_db);
        let mut preset = model::exponential_preset(r, t, self.k_factor, self.rho_t, self.rho_r, sigma2, self.seed)?;
        if self.rx_correlation.is_some() || self.tx_correlation.is_some() {
            let m = &preset.model;
            let pick = |o: &Option<Vec<Vec<f64>>>, default: &CMat| {
                o.as_ref().map_or_else(|| default.clone(), |rows| real_matrix(rows))
            };
            preset.model = ChannelModel::new(
                m.los().clone(),
                pick(&self.rx_correlation, m.rx_correlation()),
                pick(&self.tx_correlation, m.tx_correlation()),
                m.k_factor(),
                m.sigma2(),
            )?;
        }
        Ok(preset)
    }
}

fn real_matrix(rows: &[Vec<f64>]) -> CMat {
    let n = rows.len();
    CMat::from_fn(n, n, |i, j| linalg::c(rows[i][j]))
}
