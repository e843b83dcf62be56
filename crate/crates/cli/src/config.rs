//! Run configuration: TOML schema, defaults and validation.

use serde::{Deserialize, Serialize};
use tqnf::{AtomRecord, AtomicSymbol, Symbol};

/// A scalar or a sweep list.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Config file as written by the user; every key is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub l: Option<usize>,
    pub omega: Option<Vec<f64>>,
    pub tau: Option<f64>,
    pub q_max: Option<usize>,
    pub rho: Option<f64>,
    pub hbar: Option<OneOrMany>,
    pub epsilon: Option<OneOrMany>,
    #[serde(rename = "order_K")]
    pub order_k: Option<usize>,
    pub kam_steps: Option<usize>,
    #[serde(rename = "mode_box_M")]
    pub mode_box_m: Option<usize>,
    pub tol_neumann: Option<f64>,
    pub tol_prune: Option<f64>,
    pub atom_budget: Option<usize>,
    pub potential: Option<Vec<AtomRecord>>,
}

/// Fully resolved configuration, echoed into every report.
#[derive(Clone, Debug, Serialize)]
pub struct Config {
    pub l: usize,
    pub omega: Vec<f64>,
    pub tau: f64,
    pub q_max: usize,
    pub rho: f64,
    pub hbar: Vec<f64>,
    pub epsilon: Vec<f64>,
    #[serde(rename = "order_K")]
    pub order_k: usize,
    pub kam_steps: usize,
    #[serde(rename = "mode_box_M")]
    pub mode_box_m: usize,
    pub tol_neumann: f64,
    pub tol_prune: f64,
    pub atom_budget: usize,
    pub potential: Vec<AtomRecord>,
}

/// `(1, (1+√5)/2)`.
pub fn golden_omega() -> Vec<f64> {
    vec![1.0, (1.0 + 5f64.sqrt()) / 2.0]
}

impl Config {
    /// Parses TOML text and fills in defaults.
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        Self::resolve(raw)
    }

    pub fn resolve(raw: RawConfig) -> Result<Self, String> {
        let l = raw.l.unwrap_or(2);
        if l < 2 {
            return Err("l must be at least 2".into());
        }
        let omega = match raw.omega {
            Some(w) => w,
            None if l == 2 => golden_omega(),
            None => return Err(format!("omega is required when l = {l}")),
        };
        if omega.len() != l {
            return Err(format!("omega has {} entries, expected l = {l}", omega.len()));
        }
        let potential = match raw.potential {
            Some(p) => p,
            None => AtomicSymbol::<f64>::canonical(l).to_records(),
        };
        let cfg = Config {
            l,
            omega,
            tau: raw.tau.unwrap_or(1.0),
            q_max: raw.q_max.unwrap_or(1000),
            rho: raw.rho.unwrap_or(0.5),
            hbar: raw.hbar.map(OneOrMany::into_vec).unwrap_or_else(|| vec![0.1]),
            epsilon: raw.epsilon.map(OneOrMany::into_vec).unwrap_or_else(|| vec![1e-3]),
            order_k: raw.order_k.unwrap_or(3),
            kam_steps: raw.kam_steps.unwrap_or(2),
            mode_box_m: raw.mode_box_m.unwrap_or(10),
            tol_neumann: raw.tol_neumann.unwrap_or(1e-10),
            tol_prune: raw.tol_prune.unwrap_or(1e-14),
            atom_budget: raw.atom_budget.unwrap_or(2_000_000),
            potential,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        if self.omega.iter().any(|w| !w.is_finite()) {
            return Err("omega entries must be finite".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(format!("tau = {} must be positive", self.tau));
        }
        if self.q_max == 0 {
            return Err("q_max must be at least 1".into());
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(format!("rho = {} must be positive", self.rho));
        }
        if self.hbar.is_empty() || self.hbar.iter().any(|h| !(*h > 0.0 && *h <= 1.0)) {
            return Err("hbar values must lie in (0, 1]".into());
        }
        if self.epsilon.is_empty() || self.epsilon.iter().any(|e| !e.is_finite()) {
            return Err("epsilon values must be finite".into());
        }
        if !(1..=6).contains(&self.order_k) {
            return Err(format!("order_K = {} must lie in 1..=6", self.order_k));
        }
        if self.kam_steps > 4 {
            return Err(format!("kam_steps = {} exceeds 4", self.kam_steps));
        }
        if self.mode_box_m == 0 {
            return Err("mode_box_M must be at least 1".into());
        }
        if !(self.tol_neumann >= 0.0 && self.tol_prune >= 0.0) {
            return Err("tolerances must be nonnegative".into());
        }
        if self.potential.iter().any(|r| r.q.len() != self.l) {
            return Err(format!("every potential record needs {} lattice entries", self.l));
        }
        Ok(())
    }

    /// The potential as a symbol.
    pub fn potential_symbol(&self) -> tqnf::Result<Symbol> {
        AtomicSymbol::from_records(&self.potential, self.l)
    }
}
