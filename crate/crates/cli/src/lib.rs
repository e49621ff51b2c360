//! Config-driven experiment runner for the `regbsde` solvers.

pub mod config;
pub mod runner;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub use config::{ConfigError, ExperimentConfig};
pub use runner::RunError;

/// Runs the whole sweep and writes one CSV row per replication.
///
/// The output file is created only after every sweep point validated.
pub fn run(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), RunError> {
    let cfg = ExperimentConfig::from_path(config)?;
    let model = runner::build_model(&cfg.model)?;
    let prepared = runner::prepare(&cfg)?;
    let mut csv = BufWriter::new(File::create(out)?);
    runner::write_header(&mut csv, model.brownian_dim())?;
    println!("{:>8} {:>10} {:>10} {:>8} {:>14} {:>12}", "steps", "paths", "edge", "n", "mean y0", "se");
    for p in &prepared {
        let rows = runner::run_point(&cfg, model.as_ref(), p, seed)?;
        for r in &rows {
            runner::write_row(&mut csv, r)?;
        }
        csv.flush()?;
        let (mean, se) = runner::mean_se(rows.iter().map(|r| r.y0));
        let pt = p.point;
        let edge = pt.edge.map_or_else(|| "base".to_string(), |e| format!("{e}"));
        println!("{:>8} {:>10} {:>10} {:>8} {mean:>14.6} {se:>12.6}", pt.steps, pt.paths, edge, pt.n);
    }
    Ok(())
}

/// Writes the simulated paths of the first sweep point.
pub fn dump_paths(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), RunError> {
    let cfg = ExperimentConfig::from_path(config)?;
    runner::build_model(&cfg.model)?;
    let mut csv = BufWriter::new(File::create(out)?);
    runner::dump_paths(&cfg, seed, &mut csv)?;
    csv.flush()?;
    Ok(())
}
