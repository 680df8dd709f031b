//! Per-trajectory random stream assignment.

use std::io::Write;

use anyhow::{bail, Result};
use paramtrap::noise::{stream_id, Source};
use serde::{Deserialize, Serialize};

/// Streams of one trajectory. All share the base seed; stream ids never
/// repeat across trajectories or sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRow {
    pub trajectory: u64,
    pub seed: u64,
    pub surface_stream: u64,
    pub johnson_stream: u64,
    pub rf_walk_stream: u64,
    pub initial_stream: u64,
}

impl SeedRow {
    /// `(seed, stream)` pairs of the three noise sources.
    pub fn noise_streams(&self) -> [(u64, u64); 3] {
        [
            (self.seed, self.surface_stream),
            (self.seed, self.johnson_stream),
            (self.seed, self.rf_walk_stream),
        ]
    }
}

pub fn seed_plan(base_seed: u64, count: usize) -> Result<Vec<SeedRow>> {
    if count == 0 {
        bail!("seed plan needs at least one trajectory");
    }
    Ok((0..count as u64)
        .map(|j| SeedRow {
            trajectory: j,
            seed: base_seed,
            surface_stream: stream_id(j, Source::SurfaceField),
            johnson_stream: stream_id(j, Source::JohnsonCurrent),
            rf_walk_stream: stream_id(j, Source::RfWalk),
            initial_stream: stream_id(j, Source::Initial),
        })
        .collect())
}

pub fn write_seed_csv<W: Write>(mut w: W, rows: &[SeedRow]) -> std::io::Result<()> {
    writeln!(w, "trajectory,seed,surface_stream,johnson_stream,rf_walk_stream,initial_stream")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.trajectory, r.seed, r.surface_stream, r.johnson_stream, r.rf_walk_stream, r.initial_stream
        )?;
    }
    Ok(())
}
