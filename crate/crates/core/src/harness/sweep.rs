//! Multi-run experiments: the priors x fusion ablation grid and the
//! one-at-a-time hyperparameter sweep.

use super::train::{train, DataBank, MetricsReport, RunConfig};
use crate::blocks::{FusionKind, PriorKind};
use crate::error::{ensure, Error, Result};

/// Mean test accuracy, macro-F1 and macro-AUC over every test row.
pub fn summarize(report: &MetricsReport) -> Option<(f64, f64, f64)> {
    let rows: Vec<_> = report.metrics.iter().filter(|r| r.split.starts_with("test")).collect();
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&super::train::MetricRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    Some((mean(|r| r.acc), mean(|r| r.macro_f1), mean(|r| r.macro_auc)))
}

pub type Cell = (PriorKind, FusionKind);

/// All nine cells in row-major order (priors outer).
pub fn all_cells() -> Vec<Cell> {
    PriorKind::ALL
        .iter()
        .flat_map(|&p| FusionKind::ALL.iter().map(move |&f| (p, f)))
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct AblationReport {
    pub cells: Vec<(Cell, MetricsReport)>,
}

impl AblationReport {
    pub fn get(&self, cell: Cell) -> Option<&MetricsReport> {
        self.cells.iter().find(|(c, _)| *c == cell).map(|(_, r)| r)
    }

    pub fn mean_acc(&self, cell: Cell) -> Option<f64> {
        self.get(cell).and_then(summarize).map(|s| s.0)
    }

    /// `prior,fusion,acc,macro_f1,macro_auc` per cell.
    pub fn summary_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["prior", "fusion", "acc", "macro_f1", "macro_auc"])?;
        for ((p, f), report) in &self.cells {
            let (a, f1, auc) = summarize(report).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
            w.write_record([p.to_string(), f.to_string(), format!("{a:.6}"), format!("{f1:.6}"), format!("{auc:.6}")])?;
        }
        w.into_inner().map_err(|e| Error::Contract(format!("csv buffer: {e}")))
    }
}

/// Trains `base` once per cell. `done` supplies results that already
/// exist for a cell (same seeds and pivots), which are reused.
pub fn run_ablation(
    base: &RunConfig,
    bank: &DataBank,
    cells: &[Cell],
    done: &[(Cell, MetricsReport)],
    mut on_cell: impl FnMut(Cell, &MetricsReport),
) -> Result<AblationReport> {
    let mut out = AblationReport::default();
    for &cell in cells {
        let report = match done.iter().find(|(c, _)| *c == cell) {
            Some((_, r)) => r.clone(),
            None => {
                let mut cfg = base.clone();
                cfg.model.cell = Some(cell);
                train(&cfg, bank)?
            }
        };
        on_cell(cell, &report);
        out.cells.push((cell, report));
    }
    Ok(out)
}

/// Values swept for each parameter; an empty list skips that parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GridSpec {
    pub r: Vec<usize>,
    pub p: Vec<usize>,
    pub u: Vec<usize>,
}

impl GridSpec {
    /// The lists searched in the reference ablation figure.
    pub fn reference() -> Self {
        Self {
            r: vec![1, 2, 4, 8, 16],
            p: vec![0, 1, 2, 3, 4],
            u: vec![3, 4, 5, 6, 7],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub parameter: &'static str,
    pub value: usize,
    pub acc: f64,
    pub macro_f1: f64,
    pub macro_auc: f64,
}

/// One-at-a-time sweep of `r`, `p` and `u` around `base`, always with
/// the (loasp, loap) cell.
pub fn run_grid(base: &RunConfig, bank: &DataBank, spec: &GridSpec) -> Result<Vec<GridRow>> {
    ensure!(
        !(spec.r.is_empty() && spec.p.is_empty() && spec.u.is_empty()),
        Error::Config("grid needs at least one value to sweep".into())
    );
    let mut rows = Vec::new();
    let params: [(&'static str, &Vec<usize>); 3] = [("r", &spec.r), ("p", &spec.p), ("u", &spec.u)];
    for (name, values) in params {
        for &v in values {
            let mut cfg = base.clone();
            cfg.model.cell = Some((PriorKind::Loasp, FusionKind::Loap));
            let b = &mut cfg.model.block;
            match name {
                "r" => b.r = v,
                "p" => b.spline_p = v,
                _ => b.spline_u = v,
            }
            let report = train(&cfg, bank)?;
            let (acc, macro_f1, macro_auc) = summarize(&report).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
            rows.push(GridRow {
                parameter: name,
                value: v,
                acc,
                macro_f1,
                macro_auc,
            });
        }
    }
    Ok(rows)
}

pub fn grid_csv(rows: &[GridRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["parameter", "value", "acc", "macro_f1", "macro_auc"])?;
    for r in rows {
        w.write_record([
            r.parameter.to_string(),
            r.value.to_string(),
            format!("{:.6}", r.acc),
            format!("{:.6}", r.macro_f1),
            format!("{:.6}", r.macro_auc),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Contract(format!("csv buffer: {e}")))
}
