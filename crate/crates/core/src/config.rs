//! TOML run configuration: the problem, solver constants, run and sweep
//! settings, with environment overrides and a stable digest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{QpError, Result};
use crate::model::ProblemSpec;
use crate::newton::{Mode, SolverConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Frequency vector; the centre of the frequency box when absent.
    pub omega: Option<Vec<f64>>,
    pub seed: u64,
    /// Box radius used by `explore`.
    pub explore_n: i32,
    /// Translation parameter `σ` used by `explore`.
    pub sigma: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { omega: None, seed: 0, explore_n: 32, sigma: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub samples: usize,
    pub seed: u64,
    pub jobs: Option<usize>,
    /// Stages screened by the `excise` command.
    pub excise_stages: u32,
    pub excise_samples: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { samples: 200, seed: 7, jobs: None, excise_stages: 3, excise_samples: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| QpError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QpError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            QpError::Config(m) => QpError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn check(&self) -> Result<()> {
        self.problem.validate()?;
        if let Some(w) = &self.run.omega {
            if w.len() != self.problem.d {
                return Err(QpError::Config(format!("omega has {} entries, d = {}", w.len(), self.problem.d)));
            }
        }
        Ok(())
    }

    /// The run frequency, defaulting to the centre of the box.
    pub fn omega(&self) -> Vec<f64> {
        self.run.omega.clone().unwrap_or_else(|| {
            self.problem
                .freq_lo
                .iter()
                .zip(&self.problem.freq_hi)
                .map(|(a, b)| 0.5 * (a + b))
                .collect()
        })
    }

    /// Switches mode; proof-fidelity mode brings its constant set along.
    pub fn set_mode(&mut self, mode: Mode) {
        if mode == self.solver.mode {
            return;
        }
        let base = match mode {
            Mode::Desk => SolverConfig::desk(),
            Mode::ProofFidelity => SolverConfig::proof_fidelity(self.problem.d),
        };
        let s = &mut self.solver;
        s.mode = mode;
        s.m = base.m;
        s.c = base.c;
        s.c1 = base.c1;
        s.c2 = base.c2;
        s.c3 = base.c3;
        s.c5 = base.c5;
        s.c6 = base.c6;
    }

    /// Applies `QPDELAY_OMEGA`, `QPDELAY_SEED`, `QPDELAY_MODE` and
    /// `QPDELAY_JOBS` from `lookup`.
    pub fn apply_env<F: Fn(&str) -> Option<String>>(&mut self, lookup: F) -> Result<()> {
        if let Some(v) = lookup("QPDELAY_OMEGA") {
            self.run.omega = Some(parse_vector(&v)?);
        }
        if let Some(v) = lookup("QPDELAY_SEED") {
            let seed = v.trim().parse().map_err(|_| QpError::Config(format!("QPDELAY_SEED = {v:?}")))?;
            self.run.seed = seed;
            self.sweep.seed = seed;
        }
        if let Some(v) = lookup("QPDELAY_MODE") {
            self.set_mode(parse_mode(&v)?);
        }
        if let Some(v) = lookup("QPDELAY_JOBS") {
            let jobs = v.trim().parse().map_err(|_| QpError::Config(format!("QPDELAY_JOBS = {v:?}")))?;
            self.sweep.jobs = Some(jobs);
        }
        self.check()
    }

    /// Hex SHA-256 of the canonical JSON form of the resolved config.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// `"v1,v2,…"`.
pub fn parse_vector(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| QpError::Config(format!("bad number {t:?} in {s:?}"))))
        .collect()
}

pub fn parse_mode(s: &str) -> Result<Mode> {
    match s.trim() {
        "desk" => Ok(Mode::Desk),
        "proof_fidelity" => Ok(Mode::ProofFidelity),
        other => Err(QpError::Config(format!("unknown mode {other:?}"))),
    }
}
