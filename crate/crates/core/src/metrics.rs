//! Accuracy matrices, the forgetting ratio and multi-run aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};

/// Expected accuracy of a classifier that predicts classes at their empirical
/// test frequencies: `Σ_c p_c²`.
pub fn random_stratified_accuracy(labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(arg_err!("no labels"));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    // integer sum of squares keeps balanced cases exact
    let sq: u128 = counts.iter().map(|&c| (c as u128) * (c as u128)).sum();
    Ok(sq as f64 / (n * n))
}

/// `ρ = (A − A_R)/(A_J − A_R) − 1`.
pub fn forgetting_ratio(a: f64, a_r: f64, a_j: f64) -> Result<f64> {
    if a_j == a_r {
        return Err(Error::UndefinedRatio { joint: a_j, random: a_r });
    }
    Ok((a - a_r) / (a_j - a_r) - 1.0)
}

pub fn average_forgetting(row: &[f64]) -> Result<f64> {
    if row.is_empty() {
        return Err(arg_err!("cannot average an empty row"));
    }
    Ok(row.iter().sum::<f64>() / row.len() as f64)
}

/// Lower-triangular `A[t][τ]`, `τ ≤ t`: accuracy on task τ after learning task t.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let t = self.rows.len();
        if row.len() != t + 1 {
            return Err(dim_err!("row {t} needs {} entries, got {}", t + 1, row.len()));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(arg_err!("accuracy {v} outside [0, 1]"));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, t: usize, tau: usize) -> Option<f64> {
        self.rows.get(t).and_then(|r| r.get(tau)).copied()
    }

    /// `A^{≤t}`: mean accuracy over the tasks seen after learning task `t`.
    pub fn average(&self, t: usize) -> Result<f64> {
        let row = self.rows.get(t).ok_or_else(|| arg_err!("no row {t}"))?;
        average_forgetting(row)
    }

    pub fn final_average(&self) -> Result<f64> {
        match self.rows.len() {
            0 => Err(arg_err!("empty accuracy matrix")),
            n => self.average(n - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    /// `ρ^{τ≤t}`, same layout as the accuracy matrix.
    pub rho: Vec<Vec<f64>>,
    /// `ρ^{≤t}`
    pub rho_avg: Vec<f64>,
    /// `A_R` per task.
    pub random: Vec<f64>,
    /// `A_J^{τ≤t}`
    pub joint: AccuracyMatrix,
}

/// Ratios for every cell of `acc` against per-task `random` references and
/// the joint-training matrix `joint` (row `t` trained on tasks `0..=t`).
pub fn forgetting_report(acc: &AccuracyMatrix, random: &[f64], joint: &AccuracyMatrix) -> Result<ForgettingReport> {
    if joint.tasks() < acc.tasks() || random.len() < acc.tasks() {
        return Err(dim_err!(
            "{} tasks of accuracy, {} joint rows, {} random references",
            acc.tasks(),
            joint.tasks(),
            random.len()
        ));
    }
    let mut rho = Vec::with_capacity(acc.tasks());
    let mut rho_avg = Vec::with_capacity(acc.tasks());
    for (t, row) in acc.rows().iter().enumerate() {
        let r = row
            .iter()
            .enumerate()
            .map(|(tau, &a)| forgetting_ratio(a, random[tau], joint.rows()[t][tau]))
            .collect::<Result<Vec<_>>>()?;
        rho_avg.push(average_forgetting(&r)?);
        rho.push(r);
    }
    Ok(ForgettingReport {
        rho,
        rho_avg,
        random: random[..acc.tasks()].to_vec(),
        joint: AccuracyMatrix::from_rows(joint.rows()[..acc.tasks()].to_vec())?,
    })
}

/// Per-cell mean and sample standard deviation over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    /// Number of runs; with one run every std is reported as 0.
    pub n: usize,
}

pub fn aggregate_runs(runs: &[Vec<Vec<f64>>]) -> Result<Aggregate> {
    let first = runs.first().ok_or_else(|| arg_err!("no runs to aggregate"))?;
    for (k, r) in runs.iter().enumerate() {
        let same = r.len() == first.len() && r.iter().zip(first).all(|(a, b)| a.len() == b.len());
        if !same {
            return Err(dim_err!("run {k} has a different table shape"));
        }
    }
    let n = runs.len();
    let cell = |i: usize, j: usize| runs.iter().map(move |r| r[i][j]);
    let mut mean = Vec::with_capacity(first.len());
    let mut std = Vec::with_capacity(first.len());
    for (i, row) in first.iter().enumerate() {
        let m: Vec<f64> = (0..row.len()).map(|j| cell(i, j).sum::<f64>() / n as f64).collect();
        let s: Vec<f64> = (0..row.len())
            .map(|j| {
                if n < 2 {
                    0.0
                } else {
                    (cell(i, j).map(|v| (v - m[j]).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                }
            })
            .collect();
        mean.push(m);
        std.push(s);
    }
    Ok(Aggregate { mean, std, n })
}

/// One line of a ratio table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub approach: String,
    pub t: usize,
    pub rho_mean: f64,
    pub rho_std: f64,
}

pub const RATIO_HEADER: &str = "approach\tt\trho_mean\trho_std";

/// Tab-separated table with a header row; `t` is 1-based.
pub fn ratios_tsv(rows: &[RatioRow]) -> String {
    let mut out = String::from(RATIO_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{:.6}\t{:.6}", r.approach, r.t, r.rho_mean, r.rho_std);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_accuracy_examples() {
        let balanced: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        assert_eq!(random_stratified_accuracy(&balanced).unwrap(), 0.1);
        assert_eq!(random_stratified_accuracy(&[3, 3, 3]).unwrap(), 1.0);
        assert_eq!(random_stratified_accuracy(&[0, 0, 1, 2]).unwrap(), 0.375);
        assert!(random_stratified_accuracy(&[]).is_err());
    }

    #[test]
    fn ratio_anchors() {
        assert_eq!(forgetting_ratio(0.93, 0.2, 0.93).unwrap(), 0.0);
        assert_eq!(forgetting_ratio(0.2, 0.2, 0.93).unwrap(), -1.0);
        let r = forgetting_ratio(0.9, 0.1, 1.0).unwrap();
        assert!((r - (0.8 / 0.9 - 1.0)).abs() < 1e-15);
        assert!(matches!(forgetting_ratio(0.5, 0.3, 0.3), Err(Error::UndefinedRatio { .. })));
    }

    #[test]
    fn averages() {
        assert_eq!(average_forgetting(&[-0.3]).unwrap(), -0.3);
        assert!((average_forgetting(&[-0.1, -0.3]).unwrap() + 0.2).abs() < 1e-15);
        assert_eq!(average_forgetting(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(average_forgetting(&[]).is_err());
    }

    #[test]
    fn triangular_matrix() {
        let mut m = AccuracyMatrix::new();
        m.push_row(vec![0.9]).unwrap();
        assert!(m.push_row(vec![0.9]).is_err());
        m.push_row(vec![0.8, 0.7]).unwrap();
        assert!((m.final_average().unwrap() - 0.75).abs() < 1e-15);
        assert!(m.push_row(vec![0.1, 0.2, 1.5]).is_err());
    }

    #[test]
    fn aggregation() {
        let a = aggregate_runs(&[vec![vec![0.8]], vec![vec![1.0]]]).unwrap();
        assert!((a.mean[0][0] - 0.9).abs() < 1e-15);
        assert!((a.std[0][0] - 0.02f64.sqrt()).abs() < 1e-15);
        let one = aggregate_runs(&[vec![vec![0.5, 0.4]]]).unwrap();
        assert_eq!((one.n, one.std[0][1]), (1, 0.0));
        assert!(aggregate_runs(&[vec![vec![0.5]], vec![vec![0.5, 0.1]]]).is_err());
    }

    #[test]
    fn report_and_table() {
        let acc = AccuracyMatrix::from_rows(vec![vec![0.99], vec![0.6, 0.98]]).unwrap();
        let joint = AccuracyMatrix::from_rows(vec![vec![0.99], vec![0.99, 0.98]]).unwrap();
        let rep = forgetting_report(&acc, &[0.2, 0.2], &joint).unwrap();
        assert_eq!(rep.rho[0][0], 0.0);
        assert!(rep.rho_avg[1] < 0.0);
        let tsv = ratios_tsv(&[RatioRow { approach: "hat".into(), t: 2, rho_mean: -0.01, rho_std: 0.0 }]);
        assert!(tsv.starts_with("approach\tt\trho_mean\trho_std\nhat\t2\t"));
    }
}
