//! Aggregation of `metrics.csv` files into mean ± std tables.
//!
//! Standard deviations are sample standard deviations (`n - 1`). A cell
//! with a single seed reports 0 and is flagged.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dris_core::stats;

use crate::error::{Error, Result};
use crate::harness::{self, MetricsRow, PairedT};
use crate::io::csv_err;

pub const STD_CONVENTION: &str = "std is the sample standard deviation (n-1); single-seed cells report 0 and are flagged";

/// Rows that agree on everything but method and seed form a cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub experiment: String,
    pub noise: String,
    pub rate: String,
    pub axis: String,
    pub value: String,
}

impl CellKey {
    fn of(r: &MetricsRow) -> Self {
        CellKey {
            experiment: r.experiment.clone(),
            noise: r.noise.clone(),
            rate: r.rate.to_string(),
            axis: r.axis.clone(),
            value: r.value.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    #[serde(flatten)]
    pub cell: CellKey,
    pub method: String,
    pub n: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_frac_corrupt: f64,
    pub std_frac_corrupt: f64,
    pub single_seed: bool,
    /// Failed rows of this cell and method, not included in the statistics.
    pub failures: usize,
    /// Paired over seeds, this method minus the baseline.
    pub paired: Option<PairedT>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub baseline: Option<String>,
    pub convention: String,
    pub rows: Vec<SummaryRow>,
    pub warnings: Vec<String>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let mean = stats::mean(v).unwrap_or(f64::NAN);
    (mean, stats::sample_std(v).unwrap_or(0.0))
}

/// Mean and std per (cell, method) over successful rows, with paired-t
/// columns against `baseline` where the baseline ran on the same seeds.
pub fn summarize(rows: &[MetricsRow], baseline: Option<&str>) -> Report {
    let mut groups: BTreeMap<(CellKey, String), Vec<&MetricsRow>> = BTreeMap::new();
    let mut order: Vec<(CellKey, String)> = Vec::new();
    for r in rows {
        let key = (CellKey::of(r), r.method.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order.sort_by(|a, b| a.0.cmp(&b.0));

    let mut warnings = Vec::new();
    if let Some(b) = baseline {
        if !rows.iter().any(|r| r.method == b) {
            warnings.push(format!("baseline `{b}` not found; paired-t columns omitted"));
        }
    }
    let mut out = Vec::new();
    for key in order {
        let members = &groups[&key];
        let ok: Vec<&&MetricsRow> = members.iter().filter(|r| r.is_ok()).collect();
        let acc: Vec<f64> = ok.iter().filter_map(|r| r.test_accuracy).collect();
        let frac: Vec<f64> = ok.iter().filter_map(|r| r.frac_corrupt_in_subset).collect();
        let (mean_accuracy, std_accuracy) = mean_sd(&acc);
        let (mean_frac_corrupt, std_frac_corrupt) = mean_sd(&frac);
        let paired = baseline.filter(|b| *b != key.1 && rows.iter().any(|r| r.method == *b)).and_then(|b| {
            let base = groups.get(&(key.0.clone(), b.to_string()))?;
            let by_seed: BTreeMap<u64, f64> = base.iter().filter(|r| r.is_ok()).filter_map(|r| Some((r.seed, r.test_accuracy?))).collect();
            let deltas: Vec<f64> = ok
                .iter()
                .filter_map(|r| Some(r.test_accuracy? - by_seed.get(&r.seed)?))
                .collect();
            match harness::paired_t(&deltas) {
                Ok(t) => Some(t),
                Err(_) => {
                    warnings.push(format!("{} {}: fewer than two seed pairs with `{b}`", describe(&key.0), key.1));
                    None
                }
            }
        });
        out.push(SummaryRow {
            cell: key.0.clone(),
            method: key.1.clone(),
            n: acc.len(),
            mean_accuracy,
            std_accuracy,
            mean_frac_corrupt,
            std_frac_corrupt,
            single_seed: acc.len() == 1,
            failures: members.len() - ok.len(),
            paired,
        });
    }
    Report {
        baseline: baseline.map(String::from),
        convention: STD_CONVENTION.into(),
        rows: out,
        warnings,
    }
}

fn describe(c: &CellKey) -> String {
    let mut s = format!("{} {}={}", c.experiment, c.noise, c.rate);
    if !c.axis.is_empty() {
        let _ = write!(s, " {}={}", c.axis, c.value);
    }
    s
}

/// Reads and merges metrics files; any schema mismatch is fatal.
pub fn report(paths: &[PathBuf], baseline: Option<&str>) -> Result<Report> {
    if paths.is_empty() {
        return Err(Error::Config("report needs at least one metrics file".into()));
    }
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(harness::read_metrics(p)?);
    }
    Ok(summarize(&rows, baseline))
}

impl Report {
    fn has_paired(&self) -> bool {
        self.rows.iter().any(|r| r.paired.is_some())
    }

    /// CSV with a leading `#` line stating the std convention.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = std::io::BufWriter::new(file);
        use std::io::Write;
        writeln!(buf, "# {}", self.convention).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(buf);
        let mut header = vec![
            "experiment", "noise", "rate", "axis", "value", "method", "n", "mean_accuracy", "std_accuracy",
            "mean_frac_corrupt", "std_frac_corrupt", "single_seed", "failures",
        ];
        let paired = self.has_paired();
        if paired {
            header.extend(["delta_mean", "delta_std", "t", "p_two_sided", "t_degenerate"]);
        }
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            let mut rec = vec![
                r.cell.experiment.clone(),
                r.cell.noise.clone(),
                r.cell.rate.clone(),
                r.cell.axis.clone(),
                r.cell.value.clone(),
                r.method.clone(),
                r.n.to_string(),
                r.mean_accuracy.to_string(),
                r.std_accuracy.to_string(),
                r.mean_frac_corrupt.to_string(),
                r.std_frac_corrupt.to_string(),
                r.single_seed.to_string(),
                r.failures.to_string(),
            ];
            if paired {
                match &r.paired {
                    Some(t) => rec.extend([t.mean, t.sd, t.t, t.p_two_sided].map(|v| v.to_string()).into_iter().chain([t.degenerate.to_string()])),
                    None => rec.extend(std::iter::repeat_n(String::new(), 5)),
                }
            }
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let paired = self.has_paired();
        let mut s = String::new();
        let _ = writeln!(s, "# {}", self.convention);
        let _ = write!(s, "{:<40} {:<20} {:>3} {:>16} {:>16}", "cell", "method", "n", "accuracy", "frac corrupt");
        if paired {
            let _ = write!(s, " {:>10} {:>9} {:>9}", "delta", "t", "p");
        }
        s.push('\n');
        for r in &self.rows {
            let flag = if r.single_seed { "*" } else { " " };
            let _ = write!(
                s,
                "{:<40} {:<20} {:>3} {:>8.2} ± {:<5.2}{flag} {:>7.4} ± {:<6.4}",
                describe(&r.cell),
                r.method,
                r.n,
                r.mean_accuracy,
                r.std_accuracy,
                r.mean_frac_corrupt,
                r.std_frac_corrupt
            );
            if let Some(t) = &r.paired {
                let _ = write!(s, " {:>+10.3} {:>9.3} {:>9.2e}{}", t.mean, t.t, t.p_two_sided, if t.degenerate { " (zero spread)" } else { "" });
            }
            if r.failures > 0 {
                let _ = write!(s, "  [{} failed]", r.failures);
            }
            s.push('\n');
        }
        if self.rows.iter().any(|r| r.single_seed) {
            s.push_str("* single seed, std reported as 0\n");
        }
        s
    }
}
