//! Per-seed and seed-averaged curves, plus SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::train::{read_metrics, MetricsRow};
use crate::error::{Error, Result};

/// One run directory with its per-seed curves.
#[derive(Debug, Clone)]
pub struct RunCurves {
    pub label: String,
    pub seeds: Vec<(u64, Vec<MetricsRow>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedPoint {
    pub step: usize,
    pub mean_success: f64,
    pub std_success: f64,
    pub mean_return: f64,
    pub seeds: usize,
}

pub fn load_run(dir: &Path) -> Result<RunCurves> {
    let mut seeds = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(seed) = name.strip_prefix("seed_").and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        let metrics = path.join("metrics.csv");
        if metrics.is_file() {
            seeds.push((seed, read_metrics(&metrics)?));
        }
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: no seed_*/metrics.csv found",
            dir.display()
        )));
    }
    seeds.sort_by_key(|(s, _)| *s);
    let label = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("run")
        .to_string();
    Ok(RunCurves { label, seeds })
}

/// Average over seeds at every step that at least one seed reports.
pub fn average(run: &RunCurves) -> Vec<AveragedPoint> {
    let mut by_step: BTreeMap<usize, Vec<&MetricsRow>> = BTreeMap::new();
    for (_, rows) in &run.seeds {
        for r in rows {
            by_step.entry(r.step).or_default().push(r);
        }
    }
    by_step
        .into_iter()
        .map(|(step, rows)| {
            let n = rows.len() as f64;
            let mean = rows.iter().map(|r| r.success_rate).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.success_rate - mean).powi(2)).sum::<f64>() / n;
            AveragedPoint {
                step,
                mean_success: mean,
                std_success: var.sqrt(),
                mean_return: rows.iter().map(|r| r.mean_return).sum::<f64>() / n,
                seeds: rows.len(),
            }
        })
        .collect()
}

pub fn averaged_csv(points: &[AveragedPoint]) -> String {
    let mut s = String::from("step,mean_success,std_success,mean_return,seeds\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            p.step, p.mean_success, p.std_success, p.mean_return, p.seeds
        );
    }
    s
}

/// Last evaluation of each seed, averaged.
pub fn final_success(run: &RunCurves) -> f64 {
    let finals: Vec<f64> = run
        .seeds
        .iter()
        .filter_map(|(_, rows)| rows.last().map(|r| r.success_rate))
        .collect();
    finals.iter().sum::<f64>() / finals.len().max(1) as f64
}

/// Success-rate curves of several runs on one chart.
pub fn plot_success(runs: &[(String, Vec<AveragedPoint>)], path: &Path) -> Result<()> {
    let max_step = runs
        .iter()
        .flat_map(|(_, p)| p.iter().map(|q| q.step))
        .max()
        .unwrap_or(1)
        .max(1);
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    let plot_err = |e: &dyn std::fmt::Display| Error::Io(std::io::Error::other(e.to_string()));
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("success rate", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0f64..max_step as f64, 0f64..1.0f64)
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc("environment steps")
        .y_desc("success")
        .draw()
        .map_err(|e| plot_err(&e))?;
    for (i, (label, points)) in runs.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let band: Vec<(f64, f64)> = points
            .iter()
            .map(|p| (p.step as f64, (p.mean_success + p.std_success).min(1.0)))
            .chain(
                points
                    .iter()
                    .rev()
                    .map(|p| (p.step as f64, (p.mean_success - p.std_success).max(0.0))),
            )
            .collect();
        chart
            .draw_series(std::iter::once(Polygon::new(band, color.mix(0.15).filled())))
            .map_err(|e| plot_err(&e))?;
        chart
            .draw_series(LineSeries::new(
                points.iter().map(|p| (p.step as f64, p.mean_success)),
                color.stroke_width(2),
            ))
            .map_err(|e| plot_err(&e))?
            .label(label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

/// Write `averaged.csv` into each run and a combined plot plus summary into `out`.
pub fn report(run_dirs: &[PathBuf], out: &Path) -> Result<Vec<(String, f64)>> {
    if run_dirs.is_empty() {
        return Err(Error::InvalidArgument("report needs at least one run directory".into()));
    }
    fs::create_dir_all(out)?;
    let mut series = Vec::new();
    let mut summary = Vec::new();
    let mut text = String::from("run,seeds,final_success\n");
    for dir in run_dirs {
        let run = load_run(dir)?;
        let avg = average(&run);
        fs::write(dir.join("averaged.csv"), averaged_csv(&avg))?;
        let fin = final_success(&run);
        let _ = writeln!(text, "{},{},{}", run.label, run.seeds.len(), fin);
        summary.push((run.label.clone(), fin));
        series.push((run.label, avg));
    }
    fs::write(out.join("summary.csv"), text)?;
    plot_success(&series, &out.join("success.svg"))?;
    Ok(summary)
}
