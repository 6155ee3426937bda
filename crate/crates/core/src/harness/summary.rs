use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::RunRecord;
use crate::classifier::Arm;
use crate::error::{Error, Result};

/// Placeholder written where a group has no successful seed.
pub const GAP: &str = "NA";

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub arm: Arm,
    pub n_shot: usize,
    pub m: usize,
    /// Seeds that produced a report.
    pub seeds: usize,
    /// Seeds attempted, including failed cells.
    pub attempted: usize,
    pub mean_top1: Option<f64>,
    /// Population standard deviation.
    pub std_top1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

/// Mean and population standard deviation of top-1 per (arm, n_shot, m).
pub fn summarize(record: &RunRecord) -> Result<Summary> {
    if record.cells.is_empty() {
        return Err(Error::Empty("run record has no cells".into()));
    }
    let mut groups: BTreeMap<(usize, Arm, usize), (usize, Vec<f64>)> = BTreeMap::new();
    for cell in &record.cells {
        let g = groups.entry((cell.n_shot, cell.arm, cell.m)).or_default();
        g.0 += 1;
        if let Some(r) = cell.report() {
            g.1.push(r.top1_accuracy);
        }
    }
    let rows = groups
        .into_iter()
        .map(|((n_shot, arm, m), (attempted, accs))| {
            let (mean, std) = if accs.is_empty() {
                (None, None)
            } else {
                let n = accs.len() as f64;
                let mean = accs.iter().sum::<f64>() / n;
                let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
                (Some(mean), Some(var.sqrt()))
            };
            SummaryRow {
                arm,
                n_shot,
                m,
                seeds: accs.len(),
                attempted,
                mean_top1: mean,
                std_top1: std,
            }
        })
        .collect();
    Ok(Summary { rows })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| GAP.to_string(), |x| format!("{x:.6}"))
}

impl Summary {
    /// CSV with header `arm,n_shot,m,seeds,mean_top1,std_top1`. Groups with no
    /// successful seed carry `NA` metrics.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("arm,n_shot,m,seeds,mean_top1,std_top1\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.arm,
                r.n_shot,
                r.m,
                r.seeds,
                fmt_opt(r.mean_top1),
                fmt_opt(r.std_top1)
            );
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from(
            "| arm | n_shot | m | seeds | mean top-1 | std top-1 |\n|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            let seeds = if r.seeds == r.attempted {
                r.seeds.to_string()
            } else {
                format!("{} of {} (gap)", r.seeds, r.attempted)
            };
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                r.arm,
                r.n_shot,
                r.m,
                seeds,
                fmt_opt(r.mean_top1),
                fmt_opt(r.std_top1)
            );
        }
        s
    }

    pub fn row(&self, arm: Arm, n_shot: usize, m: usize) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.arm == arm && r.n_shot == n_shot && r.m == m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::report_from_predictions;
    use crate::harness::{CellOutcome, CellRecord, RECORD_FORMAT_VERSION};

    fn cell(seed: u64, acc: Option<f64>) -> CellRecord {
        let outcome = match acc {
            Some(a) => {
                let mut r = report_from_predictions(&[0, 1], &[0], &[0]);
                r.top1_accuracy = a;
                CellOutcome::Ok { report: r }
            }
            None => CellOutcome::Failed {
                kind: "diverged".into(),
                message: "boom".into(),
            },
        };
        CellRecord {
            config_hash: "h".into(),
            arm: Arm::Augmented,
            seed,
            n_shot: 1,
            m: 30,
            outcome,
            seconds: 0.0,
        }
    }

    fn record(cells: Vec<CellRecord>) -> RunRecord {
        RunRecord {
            format_version: RECORD_FORMAT_VERSION.into(),
            config_hash: "h".into(),
            cells,
            timings: Default::default(),
            checkpoints: vec![],
        }
    }

    #[test]
    fn mean_and_population_std() {
        let accs = [0.5, 0.6, 0.7, 0.6, 0.6];
        let r = record(
            accs.iter()
                .enumerate()
                .map(|(s, &a)| cell(s as u64, Some(a)))
                .collect(),
        );
        let s = summarize(&r).unwrap();
        let row = &s.rows[0];
        assert_eq!(row.seeds, 5);
        // sqrt(((0.1)^2 * 2) / 5) = sqrt(0.004)
        assert!((row.mean_top1.unwrap() - 0.6).abs() < 1e-12);
        assert!((row.std_top1.unwrap() - 0.004f64.sqrt()).abs() < 1e-12);
        assert!((row.std_top1.unwrap() - 0.0632).abs() < 1e-4);
    }

    #[test]
    fn single_seed_has_zero_std() {
        let s = summarize(&record(vec![cell(0, Some(0.8))])).unwrap();
        assert_eq!(s.rows[0].std_top1, Some(0.0));
    }

    #[test]
    fn missing_cells_are_marked() {
        let s = summarize(&record(vec![cell(0, None), cell(1, None)])).unwrap();
        assert_eq!(
            s.to_csv(),
            "arm,n_shot,m,seeds,mean_top1,std_top1\naugmented,1,30,0,NA,NA\n"
        );
        let s = summarize(&record(vec![cell(0, Some(0.5)), cell(1, None)])).unwrap();
        assert!(s.to_markdown().contains("1 of 2 (gap)"));
    }

    #[test]
    fn empty_record_is_an_error() {
        assert!(matches!(summarize(&record(vec![])), Err(Error::Empty(_))));
    }
}
