use std::path::{Path, PathBuf};

use pgrtb_core::bidlog::{ColumnMap, MarketSpec, TimeWindow, SECONDS_PER_DAY, SECONDS_PER_HOUR};
use pgrtb_core::demand::{DEFAULT_BETA, DEFAULT_ETA};
use pgrtb_core::evaluation::{PipelineConfig, SweepParameter};
use pgrtb_core::pricing::{Sampling, DEFAULT_KAPPA, DEFAULT_LAMBDA, DEFAULT_OMEGA, DEFAULT_SAMPLES};
use pgrtb_core::rlwr::{DEFAULT_DEGREE, DEFAULT_SPAN};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const BIDS_FILE: &str = "bids.csv";

/// A time window given either in seconds or in whole days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindowSpec {
    Seconds { start: i64, end: i64 },
    Days { start_day: i64, end_day: i64 },
}

impl WindowSpec {
    pub fn window(&self) -> Result<TimeWindow, CliError> {
        let (start, end) = match *self {
            WindowSpec::Seconds { start, end } => (start, end),
            WindowSpec::Days { start_day, end_day } => (start_day * SECONDS_PER_DAY, end_day * SECONDS_PER_DAY),
        };
        TimeWindow::new(start, end).map_err(CliError::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub zeta: Option<f64>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default, rename = "T")]
    pub horizon: Option<f64>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default = "default_span")]
    pub span: f64,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Seconds per curve-training window.
    #[serde(default = "default_curve_window")]
    pub curve_window: i64,
    #[serde(default = "default_reference_quantile")]
    pub reference_quantile: f64,
    #[serde(default)]
    pub floor: f64,
    #[serde(default = "default_threshold")]
    pub willingness_threshold: f64,
    #[serde(default)]
    pub fixed_gamma: Option<f64>,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_eta() -> f64 {
    DEFAULT_ETA
}
fn default_omega() -> f64 {
    DEFAULT_OMEGA
}
fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn default_m() -> usize {
    DEFAULT_SAMPLES
}
fn default_span() -> f64 {
    DEFAULT_SPAN
}
fn default_degree() -> usize {
    DEFAULT_DEGREE
}
fn default_curve_window() -> i64 {
    SECONDS_PER_HOUR
}
fn default_reference_quantile() -> f64 {
    0.99
}
fn default_threshold() -> f64 {
    1.0
}

impl Default for ModelParams {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all model parameters have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
    /// Prices every point at this forward fraction instead of re-solving.
    #[serde(default)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Bid log to read, or to write for `generate`. Defaults to `<out>/bids.csv`.
    #[serde(default)]
    pub bids: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub market: Option<MarketSpec>,
    #[serde(default)]
    pub columns: ColumnMap,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub slots: Option<Vec<String>>,
    #[serde(default)]
    pub train: Option<WindowSpec>,
    #[serde(default)]
    pub dev: Option<WindowSpec>,
    #[serde(default)]
    pub test: Option<WindowSpec>,
    #[serde(default)]
    pub model: ModelParams,
    /// Overrides the supply counted in the planning window.
    #[serde(default, rename = "S")]
    pub supply: Option<f64>,
    /// Overrides the demand counted in the planning window.
    #[serde(default, rename = "Q")]
    pub demand: Option<f64>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.bids.as_mut().map(resolve);
        config.out.as_mut().map(resolve);
        Ok(config)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn bids_path(&self) -> PathBuf {
        self.bids.clone().unwrap_or_else(|| self.out_dir().join(BIDS_FILE))
    }

    fn required(&self, window: Option<WindowSpec>, name: &str) -> Result<TimeWindow, CliError> {
        window
            .ok_or_else(|| CliError::config(format!("config needs a `{name}` window")))?
            .window()
    }

    pub fn train_window(&self) -> Result<TimeWindow, CliError> {
        self.required(self.train, "train")
    }

    pub fn test_window(&self) -> Result<TimeWindow, CliError> {
        self.required(self.test, "test")
    }

    /// Window whose supply and demand feed the optimiser.
    pub fn planning_window(&self) -> Result<TimeWindow, CliError> {
        match self.dev {
            Some(w) => w.window(),
            None => self.test_window(),
        }
    }

    pub fn sweep_parameter(&self) -> Result<(SweepParameter, &SweepSpec), CliError> {
        let spec = self
            .sweep
            .as_ref()
            .ok_or_else(|| CliError::config("config needs a `sweep` section"))?;
        if spec.values.is_empty() {
            return Err(CliError::config("sweep needs at least one value"));
        }
        Ok((spec.parameter.parse()?, spec))
    }

    pub fn pipeline(&self, slot: &str) -> Result<PipelineConfig, CliError> {
        let m = &self.model;
        let mut pc = PipelineConfig::new(slot, self.train_window()?, self.test_window()?);
        pc.dev = self.dev.map(|w| w.window()).transpose()?;
        pc.span = m.span;
        pc.degree = m.degree;
        pc.curve_window = m.curve_window;
        pc.alpha = m.alpha;
        pc.zeta = m.zeta;
        pc.beta = m.beta;
        pc.eta = m.eta;
        pc.horizon = m.horizon;
        pc.omega = m.omega;
        pc.kappa = m.kappa;
        pc.lambda = m.lambda;
        pc.m = m.m;
        pc.seed = self.seed;
        pc.sampling = m.sampling;
        pc.reference_quantile = m.reference_quantile;
        pc.floor = m.floor;
        pc.willingness_threshold = m.willingness_threshold;
        pc.supply = self.supply;
        pc.demand = self.demand;
        pc.fixed_gamma = m.fixed_gamma;
        Ok(pc)
    }

    /// Checks parameter ranges that can be validated without data.
    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        let bad = |msg: String| Err(CliError::config(msg));
        if !(m.span > 0.0 && m.span <= 1.0) {
            return bad(format!("span must be in (0, 1], got {}", m.span));
        }
        if m.curve_window <= 0 {
            return bad(format!("curve_window must be positive, got {}", m.curve_window));
        }
        if m.m == 0 {
            return bad("m must be positive".into());
        }
        if !(0.0..=1.0).contains(&m.reference_quantile) {
            return bad(format!("reference_quantile must be in [0, 1], got {}", m.reference_quantile));
        }
        for (name, v) in [("alpha", m.alpha), ("zeta", m.zeta), ("T", m.horizon)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if !(m.beta >= 0.0 && m.eta >= 0.0 && m.lambda >= 0.0) {
            return bad("beta, eta and lambda must be non-negative".into());
        }
        if !(0.0..1.0).contains(&m.omega) || !(m.kappa >= 0.0) || !(m.omega * m.kappa < 1.0) {
            return bad(format!("need 0 <= omega < 1, kappa >= 0, omega * kappa < 1 (omega {}, kappa {})", m.omega, m.kappa));
        }
        if let Some(g) = m.fixed_gamma {
            if !(0.0..=pgrtb_core::pricing::GAMMA_MAX).contains(&g) {
                return bad(format!("fixed_gamma must be in [0, 0.99], got {g}"));
            }
        }
        for (name, v) in [("S", self.supply), ("Q", self.demand)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        for w in [self.train, self.dev, self.test].into_iter().flatten() {
            w.window()?;
        }
        Ok(())
    }
}
