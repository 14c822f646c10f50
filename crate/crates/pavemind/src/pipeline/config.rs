//! Pipeline configuration: defaults, a flat `key = value` file format, and
//! validation.

use std::path::{Path, PathBuf};

use crate::domain::BudgetScope;

use super::PipelineError;

/// Everything a pipeline run needs. Paths default to conventional names in
/// the current directory; numeric defaults follow the training setup the
/// models were tuned with.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub detection_path: PathBuf,
    pub maintenance_path: PathBuf,
    pub routes_path: PathBuf,
    pub out_dir: PathBuf,
    /// Minimum |Pearson r| for a disease to enter the forecast features.
    pub corr_threshold: f64,
    pub lstm: LstmSection,
    pub dqn: DqnSection,
    /// Spending cap for the final plan; infinite when unset.
    pub budget: f64,
    /// Whether the cap applies to the whole network or to each route.
    pub budget_scope: BudgetScope,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmSection {
    pub learning_rate: f64,
    pub window: usize,
    /// Hidden sizes tried during model selection.
    pub hidden_candidates: Vec<usize>,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnSection {
    pub gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// First year of the planning window episodes walk through.
    pub start_year: i32,
    /// Last year of the planning window (inclusive).
    pub end_year: i32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            detection_path: PathBuf::from("detection.csv"),
            maintenance_path: PathBuf::from("maintenance.csv"),
            routes_path: PathBuf::from("routes.csv"),
            out_dir: PathBuf::from("out"),
            corr_threshold: 0.7,
            lstm: LstmSection {
                learning_rate: 0.01,
                window: 3,
                hidden_candidates: vec![32, 64, 128],
                epochs: 2000,
            },
            dqn: DqnSection {
                gamma: 0.9,
                learning_rate: 0.001,
                epochs: 5000,
                start_year: 2019,
                end_year: 2020,
            },
            budget: f64::INFINITY,
            budget_scope: BudgetScope::Network,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Rejects values no stage can work with. Called by [`super::run_until`];
    /// exposed so a front end can fail fast before loading data.
    pub fn validate(&self) -> Result<(), PipelineError> {
        fn bad(message: String) -> Result<(), PipelineError> {
            Err(PipelineError::Config { message })
        }
        if !(self.corr_threshold >= 0.0 && self.corr_threshold <= 1.0) {
            return bad(format!(
                "corr_threshold must lie in [0, 1], got {}",
                self.corr_threshold
            ));
        }
        if !(self.lstm.learning_rate > 0.0) {
            return bad(format!(
                "lstm.lr must be positive, got {}",
                self.lstm.learning_rate
            ));
        }
        if self.lstm.window == 0 {
            return bad("lstm.window must be at least 1".to_string());
        }
        if self.lstm.hidden_candidates.is_empty() {
            return bad("lstm.hidden_candidates must not be empty".to_string());
        }
        if self.lstm.hidden_candidates.iter().any(|h| *h == 0) {
            return bad("lstm.hidden_candidates must be positive".to_string());
        }
        if self.lstm.epochs == 0 {
            return bad("lstm.epochs must be at least 1".to_string());
        }
        if !(self.dqn.gamma >= 0.0 && self.dqn.gamma < 1.0) {
            return bad(format!(
                "dqn.gamma must lie in [0, 1), got {}",
                self.dqn.gamma
            ));
        }
        if !(self.dqn.learning_rate > 0.0) {
            return bad(format!(
                "dqn.lr must be positive, got {}",
                self.dqn.learning_rate
            ));
        }
        if self.dqn.epochs == 0 {
            return bad("dqn.epochs must be at least 1".to_string());
        }
        if self.dqn.start_year > self.dqn.end_year {
            return bad(format!(
                "dqn.start_year {} is after dqn.end_year {}",
                self.dqn.start_year, self.dqn.end_year
            ));
        }
        if self.budget.is_nan() || self.budget < 0.0 {
            return bad(format!("budget.amount must be >= 0, got {}", self.budget));
        }
        Ok(())
    }
}

/// Parses a flat `key = value` config file. `#` starts a comment, blank lines
/// are skipped, keys are dotted (`lstm.epochs = 500`), and unknown keys are
/// errors so typos surface instead of silently keeping a default.
pub fn parse_config(path: &Path) -> Result<PipelineConfig, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut cfg = PipelineConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(cut) => &raw[..cut],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| PipelineError::ConfigSyntax {
            path: path.display().to_string(),
            line: idx + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err("expected key = value".to_string()))?;
        let key = key.trim();
        let value = value.trim();
        apply_key(&mut cfg, key, value).map_err(err)?;
    }
    Ok(cfg)
}

fn apply_key(cfg: &mut PipelineConfig, key: &str, value: &str) -> Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
        value
            .parse()
            .map_err(|_| format!("{key}: cannot parse {value:?}"))
    }
    match key {
        "input.detection" => cfg.detection_path = PathBuf::from(value),
        "input.maintenance" => cfg.maintenance_path = PathBuf::from(value),
        "input.routes" => cfg.routes_path = PathBuf::from(value),
        "out_dir" => cfg.out_dir = PathBuf::from(value),
        "corr_threshold" => cfg.corr_threshold = num(key, value)?,
        "lstm.lr" => cfg.lstm.learning_rate = num(key, value)?,
        "lstm.window" => cfg.lstm.window = num(key, value)?,
        "lstm.hidden_candidates" => {
            cfg.lstm.hidden_candidates = value
                .split(',')
                .map(|part| num(key, part.trim()))
                .collect::<Result<_, _>>()?;
        }
        "lstm.epochs" => cfg.lstm.epochs = num(key, value)?,
        "dqn.gamma" => cfg.dqn.gamma = num(key, value)?,
        "dqn.lr" => cfg.dqn.learning_rate = num(key, value)?,
        "dqn.epochs" => cfg.dqn.epochs = num(key, value)?,
        "dqn.start_year" => cfg.dqn.start_year = num(key, value)?,
        "dqn.end_year" => cfg.dqn.end_year = num(key, value)?,
        "budget.amount" => cfg.budget = num(key, value)?,
        "budget.scope" => {
            cfg.budget_scope = match value {
                "network" => BudgetScope::Network,
                "per_route" => BudgetScope::PerRoute,
                other => return Err(format!("budget.scope: {other:?} is not network|per_route")),
            }
        }
        "seed" => cfg.seed = num(key, value)?,
        other => return Err(format!("unknown key {other:?}")),
    }
    Ok(())
}
