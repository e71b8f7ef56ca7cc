use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::run::{Manifest, MetricRow, RunStatus};
use crate::engine::Variant;
use crate::error::{Error, Result};

/// Mean, min and max over seeds. Empty when no seed produced a value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        Self {
            mean: Some(values.iter().sum::<f64>() / n),
            min: Some(values.iter().copied().fold(f64::INFINITY, f64::min)),
            max: Some(values.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            count: values.len(),
        }
    }

    fn cell(&self) -> String {
        match (self.mean, self.min, self.max) {
            (Some(m), Some(lo), Some(hi)) => format!("{m:.4} [{lo:.4}, {hi:.4}]"),
            _ => "-".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantSummary {
    pub run_dir: PathBuf,
    pub variant: Variant,
    pub seeds: usize,
    pub failed_runs: usize,
    pub final_mean_reward: Stat,
    pub retention_success: Stat,
    pub total_injections: Stat,
    /// Seeds that never sampled a success are left out of the statistic.
    pub steps_to_first_success: Stat,
}

/// Difference of seed-mean statistics against the same variant in the first directory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffRow {
    pub run_dir: PathBuf,
    pub variant: Variant,
    pub final_mean_reward: Option<f64>,
    pub retention_success: Option<f64>,
    pub total_injections: Option<f64>,
    pub steps_to_first_success: Option<f64>,
}

impl DiffRow {
    pub fn is_zero(&self) -> bool {
        [
            self.final_mean_reward,
            self.retention_success,
            self.total_injections,
            self.steps_to_first_success,
        ]
        .iter()
        .all(|d| d.is_none_or(|d| d == 0.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub rows: Vec<VariantSummary>,
    pub diffs: Vec<DiffRow>,
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn summarize_dir(dir: &Path, manifest: &Manifest) -> Result<Vec<VariantSummary>> {
    let mut out = Vec::new();
    for &variant in &manifest.variants {
        let runs: Vec<_> = manifest.runs.iter().filter(|r| r.variant == variant).collect();
        let mut reward = Vec::new();
        let mut retention = Vec::new();
        let mut injections = Vec::new();
        let mut first = Vec::new();
        let mut failed = 0;
        for r in &runs {
            if r.status != RunStatus::Ok {
                failed += 1;
                continue;
            }
            let rows = read_metrics(&dir.join(&r.run_id).join("metrics.jsonl"))?;
            let tail = &rows[rows.len().saturating_sub(manifest.final_window)..];
            if !tail.is_empty() {
                reward.push(tail.iter().map(|m| m.mean_reward).sum::<f64>() / tail.len() as f64);
            }
            if let Some(v) = rows.iter().rev().find_map(|m| m.retention_success) {
                retention.push(v);
            }
            injections.push(rows.iter().filter(|m| m.injected).count() as f64);
            if let Some(m) = rows.iter().find(|m| m.sampled_successes > 0) {
                first.push(m.step as f64);
            }
        }
        out.push(VariantSummary {
            run_dir: dir.to_path_buf(),
            variant,
            seeds: runs.len(),
            failed_runs: failed,
            final_mean_reward: Stat::of(&reward),
            retention_success: Stat::of(&retention),
            total_injections: Stat::of(&injections),
            steps_to_first_success: Stat::of(&first),
        });
    }
    Ok(out)
}

fn diff(a: Stat, b: Stat) -> Option<f64> {
    match (a.mean, b.mean) {
        (Some(x), Some(y)) => Some(x - y),
        _ => None,
    }
}

/// Tabulates experiment directories written by [`run`](super::run()).
///
/// All directories must share the same domain task.
pub fn compare(run_dirs: &[PathBuf]) -> Result<ComparisonReport> {
    let Some(first_dir) = run_dirs.first() else {
        return Err(Error::Input("no run directories given".into()));
    };
    let base = read_manifest(first_dir)?;
    let mut rows = Vec::new();
    for dir in run_dirs {
        let m = read_manifest(dir)?;
        if m.task != base.task {
            return Err(Error::Input(format!(
                "{} uses a different task than {}",
                dir.display(),
                first_dir.display()
            )));
        }
        rows.extend(summarize_dir(dir, &m)?);
    }

    let mut baseline: BTreeMap<String, &VariantSummary> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.run_dir == *first_dir) {
        baseline.insert(r.variant.name().to_string(), r);
    }
    let diffs = rows
        .iter()
        .filter_map(|r| {
            let b = baseline.get(r.variant.name())?;
            Some(DiffRow {
                run_dir: r.run_dir.clone(),
                variant: r.variant,
                final_mean_reward: diff(r.final_mean_reward, b.final_mean_reward),
                retention_success: diff(r.retention_success, b.retention_success),
                total_injections: diff(r.total_injections, b.total_injections),
                steps_to_first_success: diff(r.steps_to_first_success, b.steps_to_first_success),
            })
        })
        .collect();
    Ok(ComparisonReport { rows, diffs })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<28} {:<13} {:>5}  {:<26} {:<26} {:<26} {:<26}",
            "run_dir", "variant", "seeds", "final_reward", "retention", "injections", "first_success"
        )
        .unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{:<28} {:<13} {:>5}  {:<26} {:<26} {:<26} {:<26}",
                r.run_dir.display(),
                r.variant.name(),
                r.seeds - r.failed_runs,
                r.final_mean_reward.cell(),
                r.retention_success.cell(),
                r.total_injections.cell(),
                r.steps_to_first_success.cell(),
            )
            .unwrap();
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "run_dir,variant,seeds,failed_runs,\
             final_mean_reward_mean,final_mean_reward_min,final_mean_reward_max,\
             retention_mean,retention_min,retention_max,\
             injections_mean,injections_min,injections_max,\
             first_success_mean,first_success_min,first_success_max\n",
        );
        for r in &self.rows {
            write!(out, "{},{},{},{}", r.run_dir.display(), r.variant, r.seeds, r.failed_runs).unwrap();
            for s in [
                r.final_mean_reward,
                r.retention_success,
                r.total_injections,
                r.steps_to_first_success,
            ] {
                write!(out, ",{},{},{}", opt(s.mean), opt(s.min), opt(s.max)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}
