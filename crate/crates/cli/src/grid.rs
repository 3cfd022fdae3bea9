//! Cartesian hyper-parameter search over `(t0, eta)`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use slocal_core::targets::TargetSpec;

use crate::config::{ExperimentConfig, MetricKind};
use crate::error::{CliError, CliResult};
use crate::experiment::run_experiment;
use crate::presets::SearchGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub rank: usize,
    pub t0: f64,
    pub eta: f64,
    pub metric: String,
    pub value: f64,
    /// Ranking key; lower is better.
    pub loss: f64,
}

/// Lower-is-better form of a metric value.
pub fn loss(metric: MetricKind, value: f64, target: &TargetSpec) -> CliResult<f64> {
    Ok(match metric {
        MetricKind::SlicedW2 | MetricKind::SlicedKs | MetricKind::EntropicW2 => value,
        MetricKind::ModeWeight => {
            let truth = target
                .build()?
                .known_mode_weight()
                .ok_or_else(|| CliError::key("metric", "mode-weight needs a target with a known weight"))?;
            (value - truth).abs()
        }
        MetricKind::PredictiveLl => -value,
        MetricKind::ModeRatio => {
            let reference = match target {
                TargetSpec::Phi4 { h } => slocal_core::metrics::phi4_laplace_ratio(*h, 0).unwrap_or(1.0),
                _ => 1.0,
            };
            (value / reference).ln().abs()
        }
        MetricKind::LogZ => return Err(CliError::key("metric", "log-z cannot rank a grid")),
    })
}

/// Sorts by loss, ties broken by `t0` then `eta` ascending, and assigns
/// 1-based ranks.
pub fn rank(mut rows: Vec<GridRow>) -> Vec<GridRow> {
    rows.sort_by(|a, b| {
        a.loss
            .total_cmp(&b.loss)
            .then(a.t0.total_cmp(&b.t0))
            .then(a.eta.total_cmp(&b.eta))
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    rows
}

/// Runs every grid point into its own subdirectory of `dir` and writes the
/// ranked table to `dir/grid.csv`.
pub fn grid_search(base: &ExperimentConfig, grid: &SearchGrid, metric: MetricKind, dir: &Path) -> CliResult<Vec<GridRow>> {
    let target = base.target_spec()?;
    fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    for &t0 in &grid.t0s {
        for &eta in &grid.etas {
            let mut cfg = base.clone();
            cfg.t0 = t0;
            cfg.eta = eta;
            if !cfg.metrics.contains(&metric) {
                cfg.metrics.push(metric);
            }
            let art = run_experiment(&cfg, &dir.join(format!("t0={t0}_eta={eta}")))?;
            let value = art
                .metrics
                .iter()
                .find(|r| r.metric == metric.name())
                .map(|r| r.value)
                .ok_or_else(|| CliError::Runtime(format!("run produced no {metric} value")))?;
            rows.push(GridRow {
                rank: 0,
                t0,
                eta,
                metric: metric.name().into(),
                value,
                loss: loss(metric, value, &target)?,
            });
        }
    }
    let rows = rank(rows);
    let mut w = csv::Writer::from_path(dir.join("grid.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}
