//! Config resolution and run execution shared by the binary and tests.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};

use crate::config::{self, Config, ValidationReport};
use crate::experiments::run_experiment;
use crate::manifest::Manifest;
use crate::presets;

/// Where a configuration comes from. Layers apply in field order: manifest
/// or preset, then the file, then overrides, then the seed.
#[derive(Debug, Clone, Default)]
pub struct ConfigSource {
    pub manifest: Option<PathBuf>,
    pub preset: Option<String>,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: Config,
    pub preset: Option<String>,
}

pub fn resolve(src: &ConfigSource) -> Result<Resolved> {
    let mut table = toml::Table::new();
    let mut preset = src.preset.clone();
    if let Some(path) = &src.manifest {
        if src.preset.is_some() {
            bail!("--manifest and --preset cannot be combined");
        }
        let m = Manifest::read(path)?;
        table = toml::Table::try_from(&m.config).context("re-encoding manifest configuration")?;
        preset = m.preset;
    } else if let Some(name) = &src.preset {
        let p = presets::find(name).ok_or_else(|| {
            let names: Vec<&str> = presets::PRESETS.iter().map(|p| p.name).collect();
            anyhow!("unknown preset `{name}`; available: {}", names.join(", "))
        })?;
        table = config::parse_table(p.toml, &format!("preset {name}"))?;
    }
    if let Some(path) = &src.config {
        config::merge(&mut table, config::load_file(path)?);
    }
    for o in &src.overrides {
        config::apply_override(&mut table, o)?;
    }
    let mut config = config::from_table(table)?;
    if let Some(seed) = src.seed {
        config.seed = seed;
    }
    Ok(Resolved { config, preset })
}

/// Runs a validated configuration on a pool of `workers` threads and writes
/// the manifest next to the artifacts.
pub fn execute(resolved: &Resolved, workers: usize, out: &Path) -> Result<(Manifest, ValidationReport)> {
    let report = resolved.config.validate();
    if !report.is_valid() {
        bail!("invalid configuration:\n  {}", report.errors.join("\n  "));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("building worker pool")?;
    let start = Instant::now();
    let outcome = pool.install(|| run_experiment(&resolved.config, out))?;
    let manifest = Manifest::new(
        &resolved.config,
        resolved.preset.as_deref(),
        workers.max(1),
        &outcome,
        start.elapsed().as_secs_f64(),
    )?;
    manifest.write(out)?;
    Ok((manifest, report))
}

/// Default run directory below `root`.
pub fn default_out(root: &Path, resolved: &Resolved) -> PathBuf {
    let name = resolved.preset.as_deref().unwrap_or(resolved.config.experiment.name());
    root.join(format!("{name}-seed{}", resolved.config.seed))
}
