//! Run manifests: everything needed to repeat a run, plus what it produced.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::experiments::{Failure, Metrics, Outcome};
use crate::seeds::{seed_plan, SeedRow};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    Partial,
    Failed,
}

impl Status {
    pub fn from_counts(runs: usize, failed: usize) -> Self {
        match failed {
            0 => Status::Success,
            f if f < runs => Status::Partial,
            _ => Status::Failed,
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::Partial => 2,
            Status::Failed => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub experiment: String,
    pub preset: Option<String>,
    pub seed: u64,
    pub workers: usize,
    pub config: Config,
    pub seeds: Vec<SeedRow>,
    pub wall_clock_s: f64,
    pub metrics: Metrics,
    pub failures: Vec<Failure>,
    pub status: Status,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn new(cfg: &Config, preset: Option<&str>, workers: usize, outcome: &Outcome, wall_clock_s: f64) -> Result<Self> {
        let seeds = if outcome.seeded_trajectories > 0 {
            seed_plan(cfg.seed, outcome.seeded_trajectories)?
        } else {
            Vec::new()
        };
        let runs = outcome.metrics.runs.max(1);
        Ok(Manifest {
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: cfg.experiment.name().to_string(),
            preset: preset.map(str::to_string),
            seed: cfg.seed,
            workers,
            config: cfg.clone(),
            seeds,
            wall_clock_s,
            metrics: outcome.metrics,
            failures: outcome.failures.clone(),
            status: Status::from_counts(runs, outcome.failures.len()),
            artifacts: outcome.artifacts.clone(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    /// Reads a manifest file, or `manifest.json` inside a run directory.
    pub fn read(path: &Path) -> Result<Self> {
        let path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.format_version != FORMAT_VERSION {
            bail!(
                "{}: manifest format {} is not supported (expected {FORMAT_VERSION})",
                path.display(),
                m.format_version
            );
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn status_from_counts() {
        assert_eq!(Status::from_counts(5, 0), Status::Success);
        assert_eq!(Status::from_counts(5, 2), Status::Partial);
        assert_eq!(Status::from_counts(5, 5), Status::Failed);
        assert_eq!(Status::Partial.exit_code(), 2);
    }

    #[test]
    fn manifest_round_trips() {
        let cfg = Config::default();
        let outcome = Outcome {
            artifacts: vec!["a.csv".into()],
            failures: vec![],
            metrics: Metrics::default(),
            seeded_trajectories: 3,
            summary: json!({}),
        };
        let m = Manifest::new(&cfg, Some("capture"), 2, &outcome, 1.5).unwrap();
        assert_eq!(m.seeds.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        m.write(dir.path()).unwrap();
        assert_eq!(Manifest::read(dir.path()).unwrap(), m);
    }
}
