//! Run configuration: a flat JSON file plus command-line overrides.
//!
//! Every command reads the same flat configuration object. A JSON file
//! supplies defaults, individual command-line flags override single fields,
//! and whatever is still unset falls back to per-command defaults. The
//! merged result is echoed into the metadata sidecar written next to each
//! report, so a run can be reproduced from its artifacts alone.
//!
//! Unknown keys in the JSON file are rejected rather than ignored: a typo
//! in a field name should fail loudly, not silently run with a default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use treeglass_core::tree::{BoundaryCondition, IsingParams, TreeShape};
use treeglass_core::{Error, Result};

/// Flat configuration shared by all commands.
///
/// Every field is optional; commands apply their own defaults for fields
/// they use and ignore the rest. Field names match the JSON keys and the
/// long command-line flags one for one.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Branching factor of the tree.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<u32>,
    /// Tree height.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<u32>,
    /// Explicit inverse temperature.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Run at the critical inverse temperature atanh(1/sqrt(b)).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critical: Option<bool>,
    /// Near-critical offset: theta = sqrt((1 + epsilon)/b).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Boundary condition: "free", "plus", "minus" or "tau-file".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<String>,
    /// Leaf-spin file used when the boundary is "tau-file".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_file: Option<PathBuf>,
    /// Seed for every randomized part of the run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output CSV path. The metadata sidecar appends ".meta.json" to it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Replica count for Monte Carlo estimates and schedule pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u64>,
    /// Computation mode: "exact" or "mc".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Smallest height in a height sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_min: Option<u32>,
    /// Largest height in a height sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_max: Option<u32>,
    /// Smallest epsilon in a temperature sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_min: Option<f64>,
    /// Largest epsilon in a temperature sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_max: Option<f64>,
    /// Number of grid points in a temperature sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_points: Option<usize>,
    /// Two-scale split parameter alpha in (0, 1/2).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Contraction constant kappa used in capacity-based bounds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// External field applied at the reconstruction root.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<f64>,
    /// Fixed schedule length for censoring pairs (random 10..40 if unset).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule_len: Option<usize>,
    /// Starting configuration for censoring runs; only "plus" is valid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
}

/// Command-line flags shared by every subcommand. Each flag overrides the
/// matching configuration field; `--beta`, `--critical` and `--epsilon`
/// replace the temperature selection as a group so that a flag can switch
/// the temperature mode chosen in the file.
#[derive(Debug, clap::Args)]
pub struct CommonFlags {
    /// JSON configuration file; explicit flags override its fields.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Branching factor of the tree.
    #[arg(long)]
    pub b: Option<u32>,
    /// Tree height.
    #[arg(long)]
    pub h: Option<u32>,
    /// Inverse temperature.
    #[arg(long, conflicts_with_all = ["critical", "epsilon"])]
    pub beta: Option<f64>,
    /// Use the critical inverse temperature atanh(1/sqrt(b)).
    #[arg(long, conflicts_with = "epsilon")]
    pub critical: bool,
    /// Near-critical offset: theta = sqrt((1 + epsilon)/b).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Boundary condition: free | plus | minus | tau-file.
    #[arg(long)]
    pub boundary: Option<String>,
    /// Leaf-spin file: one '+' or '-' line per leaf, breadth-first order.
    #[arg(long, value_name = "FILE")]
    pub tau_file: Option<PathBuf>,
    /// Seed for every randomized part of the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path; a ".meta.json" sidecar is written next to it.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Replica count for Monte Carlo estimates and schedule pairs.
    #[arg(long)]
    pub replicas: Option<u64>,
    /// Computation mode: exact | mc.
    #[arg(long)]
    pub mode: Option<String>,
}

impl CommonFlags {
    /// Loads the configuration file (if any) and applies flag overrides.
    pub fn merged(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(b) = self.b {
            cfg.b = Some(b);
        }
        if let Some(h) = self.h {
            cfg.h = Some(h);
        }
        if self.beta.is_some() || self.critical || self.epsilon.is_some() {
            cfg.beta = self.beta;
            cfg.critical = if self.critical { Some(true) } else { None };
            cfg.epsilon = self.epsilon;
        }
        if let Some(boundary) = &self.boundary {
            cfg.boundary = Some(boundary.clone());
        }
        if let Some(tau) = &self.tau_file {
            cfg.tau_file = Some(tau.clone());
        }
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        if let Some(replicas) = self.replicas {
            cfg.replicas = Some(replicas);
        }
        if let Some(mode) = &self.mode {
            cfg.mode = Some(mode.clone());
        }
        Ok(cfg)
    }
}

/// Computation mode for commands that offer a sampling fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Exact enumeration or linear algebra.
    Exact,
    /// Monte Carlo estimation with error bars.
    Mc,
}

impl RunConfig {
    /// Reads and parses a JSON configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Invalid(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Invalid(format!("config {}: {e}", path.display())))
    }

    /// Branching factor with a command default.
    pub fn b_or(&self, default: u32) -> u32 {
        self.b.unwrap_or(default)
    }

    /// Height with a command default.
    pub fn h_or(&self, default: u32) -> u32 {
        self.h.unwrap_or(default)
    }

    /// Seed with the conventional default of zero.
    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Resolves the temperature selection into model parameters.
    ///
    /// Exactly one of `beta`, `critical` and `epsilon` may be given;
    /// leaving all three unset means critical.
    pub fn params(&self, b: u32) -> Result<IsingParams> {
        let critical = self.critical == Some(true);
        let chosen = usize::from(self.beta.is_some())
            + usize::from(critical)
            + usize::from(self.epsilon.is_some());
        if chosen > 1 {
            return Err(Error::Invalid(
                "choose at most one of beta, critical and epsilon".into(),
            ));
        }
        if let Some(beta) = self.beta {
            IsingParams::from_beta(beta)
        } else if let Some(eps) = self.epsilon {
            IsingParams::near_critical(b, eps)
        } else {
            IsingParams::critical(b)
        }
    }

    /// Resolves the boundary selection into a condition plus a short token
    /// used in report rows.
    pub fn boundary_condition(
        &self,
        shape: &TreeShape,
    ) -> Result<(BoundaryCondition, &'static str)> {
        match self.boundary.as_deref() {
            None | Some("free") => Ok((BoundaryCondition::Free, "free")),
            Some("plus") => Ok((BoundaryCondition::AllPlus, "plus")),
            Some("minus") => Ok((BoundaryCondition::AllMinus, "minus")),
            Some("tau-file") => {
                let path = self.tau_file.as_ref().ok_or_else(|| {
                    Error::Invalid("boundary tau-file needs a tau_file path".into())
                })?;
                let spins = read_tau_file(path, shape.leaves().len())?;
                Ok((BoundaryCondition::Leaves(spins), "tau"))
            }
            Some(other) => Err(Error::Invalid(format!(
                "unknown boundary {other:?}; expected free, plus, minus or tau-file"
            ))),
        }
    }

    /// Resolves the computation mode with a command default.
    pub fn mode_or(&self, default: Mode) -> Result<Mode> {
        match self.mode.as_deref() {
            None => Ok(default),
            Some("exact") => Ok(Mode::Exact),
            Some("mc") => Ok(Mode::Mc),
            Some(other) => Err(Error::Invalid(format!(
                "unknown mode {other:?}; expected exact or mc"
            ))),
        }
    }
}

/// Parses a leaf-boundary file: one `+` or `-` line per leaf, in
/// breadth-first leaf order. Blank lines are ignored; the number of spin
/// lines must match the leaf count exactly.
pub fn read_tau_file(path: &Path, leaf_count: usize) -> Result<Vec<i8>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot read tau file {}: {e}", path.display())))?;
    let mut spins = Vec::with_capacity(leaf_count);
    for (idx, line) in text.lines().enumerate() {
        let token = line.trim();
        match token {
            "" => continue,
            "+" => spins.push(1),
            "-" => spins.push(-1),
            other => {
                return Err(Error::Invalid(format!(
                    "tau file {} line {}: expected '+' or '-', got {other:?}",
                    path.display(),
                    idx + 1
                )))
            }
        }
    }
    if spins.len() != leaf_count {
        return Err(Error::Invalid(format!(
            "tau file {} has {} spin lines but the tree has {leaf_count} leaves",
            path.display(),
            spins.len()
        )));
    }
    Ok(spins)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags() -> CommonFlags {
        CommonFlags {
            config: None,
            b: None,
            h: None,
            beta: None,
            critical: false,
            epsilon: None,
            boundary: None,
            tau_file: None,
            seed: None,
            out: None,
            replicas: None,
            mode: None,
        }
    }

    #[test]
    fn flags_override_config_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"b": 3, "h": 4, "seed": 11, "epsilon": 0.2}"#).unwrap();
        let mut f = flags();
        f.config = Some(path);
        f.h = Some(6);
        f.critical = true;
        let cfg = f.merged().unwrap();
        assert_eq!(cfg.b, Some(3), "unflagged field must come from the file");
        assert_eq!(cfg.h, Some(6), "flag must win over the file");
        assert_eq!(cfg.seed, Some(11));
        assert_eq!(
            cfg.epsilon, None,
            "a temperature flag must clear the file's temperature group"
        );
        let params = cfg.params(3).unwrap();
        assert!(params.epsilon().is_none(), "merged run must be critical");
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"branching": 3}"#).unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(
            matches!(err, Error::Invalid(_)),
            "typoed key must be a config error, got {err}"
        );
    }

    #[test]
    fn conflicting_temperature_selection_is_rejected() {
        let cfg = RunConfig {
            beta: Some(0.5),
            epsilon: Some(0.1),
            ..RunConfig::default()
        };
        assert!(cfg.params(2).is_err(), "beta and epsilon together must fail");
    }

    #[test]
    fn tau_file_round_trip_and_length_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tau.txt");
        fs::write(&path, "+\n-\n\n-\n+\n").unwrap();
        let spins = read_tau_file(&path, 4).unwrap();
        assert_eq!(spins, vec![1, -1, -1, 1]);
        assert!(
            read_tau_file(&path, 5).is_err(),
            "wrong leaf count must be rejected"
        );
        fs::write(&path, "+\nx\n").unwrap();
        assert!(
            read_tau_file(&path, 2).is_err(),
            "a token other than +/- must be rejected"
        );
    }

    #[test]
    fn boundary_tokens_resolve() {
        let shape = TreeShape::new(2, 2).unwrap();
        for (name, token) in [("free", "free"), ("plus", "plus"), ("minus", "minus")] {
            let cfg = RunConfig {
                boundary: Some(name.into()),
                ..RunConfig::default()
            };
            let (_, got) = cfg.boundary_condition(&shape).unwrap();
            assert_eq!(got, token);
        }
        let cfg = RunConfig {
            boundary: Some("twisted".into()),
            ..RunConfig::default()
        };
        assert!(cfg.boundary_condition(&shape).is_err());
    }
}
