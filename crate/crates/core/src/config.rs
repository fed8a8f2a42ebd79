//! Solver tolerances and audit parameters, loadable from flat
//! `key = value` files with `#` comments.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditConfig {
    /// Constraint residual accepted by the flip-point solver.
    pub feasibility_tol: f64,
    /// KKT residual accepted by the flip-point solver.
    pub optimality_tol: f64,
    /// Frank-Wolfe gap tolerance, scaled by `1 + |query|²`.
    pub gap_tol: f64,
    pub hull_max_iter: usize,
    /// Constraint residual at which an inverse solve counts as converged.
    pub inverse_tol: f64,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub penalty_max_stages: usize,
    pub inner_max_iter: usize,
    /// Inner solves stop when the relative objective change falls below this.
    pub inner_rel_tol: f64,
    /// Extra inverse solves from deterministic starts after a stalled one.
    pub inverse_restarts: usize,
    pub adversarial_threshold: f64,
    /// Hull coefficients above this belong to the support set.
    pub support_cutoff: f64,
    pub ambiguity_top_k: usize,
    pub histogram_bins: usize,
    pub output: Option<PathBuf>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            feasibility_tol: 1e-8,
            optimality_tol: 1e-8,
            gap_tol: 1e-8,
            hull_max_iter: 200_000,
            inverse_tol: 1e-6,
            penalty_initial: 1.0,
            penalty_growth: 10.0,
            penalty_max_stages: 12,
            inner_max_iter: 5_000,
            inner_rel_tol: 1e-9,
            inverse_restarts: 128,
            adversarial_threshold: 0.01,
            support_cutoff: 1e-6,
            ambiguity_top_k: 10,
            histogram_bins: 50,
            output: None,
        }
    }
}

const KEYS: &[(&str, &str)] = &[
    ("feasibility_tol", "flip-point constraint tolerance"),
    ("optimality_tol", "flip-point KKT tolerance"),
    ("gap_tol", "hull Frank-Wolfe gap tolerance, times 1 + |query|^2"),
    ("hull_max_iter", "hull solver iteration cap"),
    ("inverse_tol", "inverse-map constraint residual tolerance"),
    ("penalty_initial", "initial penalty weight"),
    ("penalty_growth", "penalty growth factor per stage"),
    ("penalty_max_stages", "maximum penalty stages"),
    ("inner_max_iter", "inner solver iteration cap per stage"),
    ("inner_rel_tol", "inner solver relative objective change stop"),
    ("inverse_restarts", "inverse solves retried from box centre / Halton starts"),
    ("adversarial_threshold", "flag samples with min margin <= this"),
    ("support_cutoff", "hull coefficient cutoff for the support set"),
    ("ambiguity_top_k", "most ambiguous samples listed in the audit report"),
    ("histogram_bins", "bins in audit report histograms"),
    ("output", "output path (default: standard output)"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl AuditConfig {
    /// Reads a config file; unset keys keep their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = AuditConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "feasibility_tol" => self.feasibility_tol = parse(key, value)?,
            "optimality_tol" => self.optimality_tol = parse(key, value)?,
            "gap_tol" => self.gap_tol = parse(key, value)?,
            "hull_max_iter" => self.hull_max_iter = parse(key, value)?,
            "inverse_tol" => self.inverse_tol = parse(key, value)?,
            "penalty_initial" => self.penalty_initial = parse(key, value)?,
            "penalty_growth" => self.penalty_growth = parse(key, value)?,
            "penalty_max_stages" => self.penalty_max_stages = parse(key, value)?,
            "inner_max_iter" => self.inner_max_iter = parse(key, value)?,
            "inner_rel_tol" => self.inner_rel_tol = parse(key, value)?,
            "inverse_restarts" => self.inverse_restarts = parse(key, value)?,
            "adversarial_threshold" => self.adversarial_threshold = parse(key, value)?,
            "support_cutoff" => self.support_cutoff = parse(key, value)?,
            "ambiguity_top_k" => self.ambiguity_top_k = parse(key, value)?,
            "histogram_bins" => self.histogram_bins = parse(key, value)?,
            "output" => self.output = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feasibility_tol", self.feasibility_tol),
            ("optimality_tol", self.optimality_tol),
            ("gap_tol", self.gap_tol),
            ("inverse_tol", self.inverse_tol),
            ("penalty_initial", self.penalty_initial),
            ("inner_rel_tol", self.inner_rel_tol),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{key} must be positive, got {v}")));
            }
        }
        if !(self.adversarial_threshold >= 0.0) {
            return Err(Error::Config(format!(
                "adversarial_threshold must be ≥ 0, got {}",
                self.adversarial_threshold
            )));
        }
        if !(self.support_cutoff > 0.0 && self.support_cutoff < 1.0) {
            return Err(Error::Config(format!(
                "support_cutoff must lie in (0, 1), got {}",
                self.support_cutoff
            )));
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::Config(format!(
                "penalty_growth must exceed 1, got {}",
                self.penalty_growth
            )));
        }
        for (key, v) in [
            ("hull_max_iter", self.hull_max_iter),
            ("penalty_max_stages", self.penalty_max_stages),
            ("inner_max_iter", self.inner_max_iter),
            ("histogram_bins", self.histogram_bins),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be at least 1")));
            }
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "feasibility_tol" => format!("{:e}", self.feasibility_tol),
            "optimality_tol" => format!("{:e}", self.optimality_tol),
            "gap_tol" => format!("{:e}", self.gap_tol),
            "hull_max_iter" => self.hull_max_iter.to_string(),
            "inverse_tol" => format!("{:e}", self.inverse_tol),
            "penalty_initial" => self.penalty_initial.to_string(),
            "penalty_growth" => self.penalty_growth.to_string(),
            "penalty_max_stages" => self.penalty_max_stages.to_string(),
            "inner_max_iter" => self.inner_max_iter.to_string(),
            "inner_rel_tol" => format!("{:e}", self.inner_rel_tol),
            "inverse_restarts" => self.inverse_restarts.to_string(),
            "adversarial_threshold" => self.adversarial_threshold.to_string(),
            "support_cutoff" => format!("{:e}", self.support_cutoff),
            "ambiguity_top_k" => self.ambiguity_top_k.to_string(),
            "histogram_bins" => self.histogram_bins.to_string(),
            "output" => self
                .output
                .as_ref()
                .map_or("-".to_string(), |p| p.display().to_string()),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Every key with its default and a short description, one per line.
    pub fn keys_help() -> String {
        let defaults = AuditConfig::default();
        let mut out = String::from("Config keys (file lines `key = value`, `#` comments):\n");
        for (key, what) in KEYS {
            out.push_str(&format!(
                "  {key:<22} default {:<8}  {what}\n",
                defaults.value_of(key)
            ));
        }
        out
    }

    pub fn key_names() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|(k, _)| *k)
    }
}
