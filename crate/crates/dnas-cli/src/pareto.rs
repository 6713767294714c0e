//! The `pareto` subcommand: reads labeled (quality, cost) points from CSV,
//! computes the non-dominated front, and writes it as CSV plus a
//! gnuplot-consumable data file.

use anyhow::{anyhow, Context};
use std::fmt::Write as _;
use std::path::Path;

use dnas_core::cost::{pareto_front, ParetoPoint};

use crate::config::RunConfig;
use crate::{CliError, CliResult};

pub fn read_points(path: &Path) -> CliResult<Vec<ParetoPoint>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading points file {}", path.display()))
        .map_err(CliError::Input)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "label,quality,cost" => {}
        _ => {
            return Err(CliError::Input(anyhow!(
                "{}: expected header 'label,quality,cost'",
                path.display()
            )))
        }
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parse = || -> Option<ParetoPoint> {
            let mut parts = line.splitn(3, ',');
            let label = parts.next()?.trim().to_string();
            let quality: f64 = parts.next()?.trim().parse().ok()?;
            let cost: f64 = parts.next()?.trim().parse().ok()?;
            Some(ParetoPoint {
                label,
                quality,
                cost,
            })
        };
        points.push(parse().ok_or_else(|| {
            CliError::Input(anyhow!("{}: malformed row at line {}", path.display(), i + 1))
        })?);
    }
    Ok(points)
}

pub fn cmd_pareto(cfg: &RunConfig, points_path: &Path) -> CliResult {
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))
        .map_err(CliError::Run)?;
    let points = read_points(points_path)?;
    let front = pareto_front(&points).map_err(|e| CliError::Input(e.into()))?;

    let mut csv = String::from("label,quality,cost\n");
    let mut dat = String::from("# cost quality label\n");
    for p in &front {
        writeln!(csv, "{},{},{}", p.label, p.quality, p.cost).expect("string write");
        writeln!(dat, "{} {} {}", p.cost, p.quality, p.label).expect("string write");
    }
    std::fs::write(cfg.out("front.csv"), csv)
        .context("writing front.csv")
        .map_err(CliError::Run)?;
    std::fs::write(cfg.out("front.dat"), dat)
        .context("writing front.dat")
        .map_err(CliError::Run)?;
    println!("{} of {} points are non-dominated", front.len(), points.len());
    Ok(())
}
