//! `hat report`: tables aggregated over the completed runs below some
//! directories.
//!
//! Runs are grouped by their spec hash; every group is one approach and its
//! seeds are aggregated with mean and sample standard deviation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use hat_core::metrics::{aggregate_runs, forgetting_report, ratios_tsv, RatioRow};
use hat_core::trainer::Mode;

use crate::error::{CliError, Result};
use crate::run::{mode_name, RunFile, REPORT_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportMode {
    /// Average forgetting ratio per number of tasks learned.
    Ratios,
    /// Average accuracy per number of tasks learned.
    Accuracy,
    /// Capacity series of every attention run.
    Monitor,
}

/// One approach: all seeds of one spec.
#[derive(Debug, Clone)]
pub struct Group {
    pub label: String,
    pub runs: Vec<RunFile>,
}

/// Every `report.json` below `dirs`, grouped by spec and sorted by seed.
pub fn collect(dirs: &[PathBuf]) -> Result<Vec<Group>> {
    let mut seen = BTreeSet::new();
    let mut by_hash: BTreeMap<String, Vec<RunFile>> = BTreeMap::new();
    for dir in dirs {
        if !dir.exists() {
            return Err(CliError::Usage(format!("{} does not exist", dir.display())));
        }
        for entry in WalkDir::new(dir).sort_by_file_name() {
            let entry = entry.map_err(|e| CliError::Io {
                context: format!("scanning {}", dir.display()),
                source: e.into(),
            })?;
            if entry.file_name() != REPORT_FILE || !entry.file_type().is_file() {
                continue;
            }
            let path = entry.path().canonicalize().map_err(CliError::io(format!("resolving {}", entry.path().display())))?;
            if !seen.insert(path.clone()) {
                continue;
            }
            let run = RunFile::load(&path)?;
            let runs = by_hash.entry(run.hash.clone()).or_default();
            if runs.iter().any(|r| r.report.seed == run.report.seed) {
                return Err(CliError::Core(hat_core::Error::Consistency(format!(
                    "seed {} of spec {} appears twice (second copy at {})",
                    run.report.seed,
                    run.hash,
                    path.display()
                ))));
            }
            runs.push(run);
        }
    }
    if by_hash.is_empty() {
        return Err(CliError::Usage("no completed runs found".into()));
    }
    let mut groups: Vec<Group> = by_hash
        .into_values()
        .map(|mut runs| {
            runs.sort_by_key(|r| r.report.seed);
            Group { label: String::new(), runs }
        })
        .collect();
    label_groups(&mut groups);
    groups.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(groups)
}

fn label_groups(groups: &mut [Group]) {
    let mut per_mode: BTreeMap<Mode, usize> = BTreeMap::new();
    for g in groups.iter() {
        *per_mode.entry(g.runs[0].spec.train.mode).or_default() += 1;
    }
    for g in groups.iter_mut() {
        let spec = &g.runs[0].spec;
        let mode = spec.train.mode;
        g.label = if per_mode[&mode] == 1 {
            mode_name(mode)
        } else if mode == Mode::Hat {
            format!("hat[s_max={},c={}]:{}", spec.train.hat.s_max, spec.train.hat.c, &g.runs[0].hash[..8])
        } else {
            format!("{}:{}", mode_name(mode), &g.runs[0].hash[..8])
        };
    }
}

pub fn render(mode: ReportMode, groups: &[Group]) -> Result<String> {
    match mode {
        ReportMode::Accuracy => accuracy_table(groups),
        ReportMode::Ratios => ratios_table(groups),
        ReportMode::Monitor => Ok(monitor_table(groups)),
    }
}

pub const ACCURACY_HEADER: &str = "approach\tt\tacc_mean\tacc_std\tn";

/// `A^{≤t}` mean and std over seeds for every group.
pub fn accuracy_table(groups: &[Group]) -> Result<String> {
    let mut out = format!("{ACCURACY_HEADER}\n");
    for g in groups {
        let per_seed = g
            .runs
            .iter()
            .map(|r| {
                let acc = &r.report.accuracy;
                (0..acc.tasks()).map(|t| acc.average(t)).collect::<hat_core::Result<Vec<_>>>().map(|v| vec![v])
            })
            .collect::<hat_core::Result<Vec<_>>>()?;
        let agg = aggregate_runs(&per_seed).map_err(|e| consistency(&g.label, e))?;
        for (t, (m, s)) in agg.mean[0].iter().zip(&agg.std[0]).enumerate() {
            let _ = writeln!(out, "{}\t{}\t{m:.6}\t{s:.6}\t{}", g.label, t + 1, agg.n);
        }
    }
    Ok(out)
}

/// Per-seed `ρ^{≤t}` rows of `group`, each against its joint reference.
pub fn group_ratios(group: &Group, all: &[Group]) -> Result<Vec<Vec<f64>>> {
    group
        .runs
        .iter()
        .map(|run| {
            let joint = reference_for(run, all, &group.label)?;
            let r = forgetting_report(&run.report.accuracy, &run.report.random, &joint.report.accuracy)?;
            Ok(r.rho_avg)
        })
        .collect()
}

/// Forgetting ratios of every non-multitask group.
pub fn ratios_table(groups: &[Group]) -> Result<String> {
    let mut rows = Vec::new();
    for g in groups.iter().filter(|g| g.runs[0].spec.train.mode != Mode::Multitask) {
        let per_seed: Vec<Vec<Vec<f64>>> = group_ratios(g, groups)?.into_iter().map(|r| vec![r]).collect();
        let agg = aggregate_runs(&per_seed).map_err(|e| consistency(&g.label, e))?;
        for (t, (m, s)) in agg.mean[0].iter().zip(&agg.std[0]).enumerate() {
            rows.push(RatioRow { approach: g.label.clone(), t: t + 1, rho_mean: *m, rho_std: *s });
        }
    }
    if rows.is_empty() {
        return Err(CliError::Usage("ratios need at least one non-multitask run".into()));
    }
    Ok(ratios_tsv(&rows))
}

/// The multitask run on the same suite and seed, preferring the same model.
fn reference_for<'a>(run: &RunFile, all: &'a [Group], label: &str) -> Result<&'a RunFile> {
    let candidates: Vec<&RunFile> = all
        .iter()
        .flat_map(|g| &g.runs)
        .filter(|r| {
            r.spec.train.mode == Mode::Multitask && r.report.seed == run.report.seed && r.report.suite == run.report.suite
        })
        .collect();
    let same_model: Vec<&RunFile> = candidates.iter().copied().filter(|r| r.spec.model == run.spec.model).collect();
    let pick = if same_model.len() == 1 {
        same_model[0]
    } else if same_model.is_empty() && candidates.len() == 1 {
        candidates[0]
    } else if candidates.is_empty() {
        return Err(CliError::Core(hat_core::Error::Consistency(format!(
            "{label} seed {}: no multitask run on the same suite and seed to serve as joint reference",
            run.report.seed
        ))));
    } else {
        return Err(CliError::Core(hat_core::Error::Consistency(format!(
            "{label} seed {}: several multitask runs could serve as joint reference",
            run.report.seed
        ))));
    };
    if pick.report.accuracy.tasks() < run.report.accuracy.tasks() {
        return Err(CliError::Core(hat_core::Error::Consistency(format!(
            "{label} seed {}: joint reference covers fewer tasks",
            run.report.seed
        ))));
    }
    Ok(pick)
}

pub const MONITOR_HEADER: &str = "approach\tseed\tupdate\ttask\tepoch\tcapacity";

/// Capacity samples of every attention run, one row each.
pub fn monitor_table(groups: &[Group]) -> String {
    let runs: Vec<(&str, &RunFile)> = groups
        .iter()
        .flat_map(|g| g.runs.iter().map(move |r| (g.label.as_str(), r)))
        .filter(|(_, r)| r.spec.train.mode == Mode::Hat)
        .collect();
    let layers = runs
        .iter()
        .flat_map(|(_, r)| r.report.tasks.iter().flat_map(|t| &t.capacity))
        .map(|c| c.layers.len())
        .max()
        .unwrap_or(0);
    let mut out = String::from(MONITOR_HEADER);
    for l in 1..=layers {
        let _ = write!(out, "\tlayer_{l}");
    }
    out.push('\n');
    for (label, r) in runs {
        for (i, c) in r.report.tasks.iter().flat_map(|t| &t.capacity).enumerate() {
            let _ = write!(out, "{label}\t{}\t{}\t{}\t{}\t{:.6}", r.report.seed, i + 1, c.task + 1, c.epoch, c.capacity);
            for u in &c.layers {
                let _ = write!(out, "\t{u:.6}");
            }
            out.push('\n');
        }
    }
    out
}

fn consistency(label: &str, e: hat_core::Error) -> CliError {
    CliError::Core(hat_core::Error::Consistency(format!("{label}: runs are not comparable: {e}")))
}

/// Render a report for `dirs` and optionally save it.
pub fn cmd_report(mode: ReportMode, dirs: &[PathBuf], out: Option<&Path>) -> Result<String> {
    let groups = collect(dirs)?;
    let table = render(mode, &groups)?;
    if let Some(path) = out {
        std::fs::write(path, &table).map_err(CliError::io(format!("writing {}", path.display())))?;
    }
    Ok(table)
}
