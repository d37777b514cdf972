//! Structured output: per-round CSV/JSON-lines, the run summary JSON, and
//! cross-run comparison tables.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::runner::{rounds_to_target, RoundRecord, RunSummary};

/// Per-round output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    JsonLines,
}

impl std::str::FromStr for EmitFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(EmitFormat::Csv),
            "jsonl" => Ok(EmitFormat::JsonLines),
            other => Err(Error::usage(format!(
                "unknown format {other:?} (expected csv or jsonl)"
            ))),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Renders the fixed-column learning-curve CSV:
/// `round,accuracy,cum_time_s,cohort,js_mean`.
pub fn records_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from("round,accuracy,cum_time_s,cohort,js_mean\n");
    for r in records {
        out.push_str(&format!(
            "{},{:.6},{:.6},{},{:.6}\n",
            r.round, r.accuracy, r.cum_time_s, r.cohort, r.js_mean
        ));
    }
    out
}

fn records_jsonl(records: &[RoundRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(
            &serde_json::to_string(r).map_err(|e| Error::usage(format!("serialize: {e}")))?,
        );
        out.push('\n');
    }
    Ok(out)
}

/// Writes the per-round file in the requested format plus the summary JSON.
/// Re-emitting the same run overwrites with identical bytes. Returns the
/// written paths.
pub fn emit(
    records: &[RoundRecord],
    summary: &RunSummary,
    format: EmitFormat,
    out_dir: &Path,
    run_name: &str,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut written = Vec::new();

    let rounds_path = match format {
        EmitFormat::Csv => {
            let p = out_dir.join(format!("{run_name}.csv"));
            write_file(&p, &records_csv(records))?;
            p
        }
        EmitFormat::JsonLines => {
            let p = out_dir.join(format!("{run_name}.jsonl"));
            write_file(&p, &records_jsonl(records)?)?;
            p
        }
    };
    written.push(rounds_path);

    let summary_path = out_dir.join(format!("{run_name}.summary.json"));
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::usage(format!("serialize summary: {e}")))?;
    write_file(&summary_path, &format!("{json}\n"))?;
    written.push(summary_path);
    Ok(written)
}

pub fn load_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// One comparison row.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub name: String,
    pub method: String,
    pub best_accuracy: f64,
    pub rounds_to_target: Option<usize>,
    pub round_speedup: Option<f64>,
    pub time_to_target_s: Option<f64>,
    pub time_speedup: Option<f64>,
}

/// Round- and time-to-accuracy comparison against the first (baseline) run.
#[derive(Debug, Clone)]
pub struct CompareTable {
    pub target: f64,
    pub rows: Vec<CompareRow>,
}

/// Compares runs that share a configuration fingerprint. The first summary
/// is the baseline: the accuracy target comes from its target mode (an
/// absolute value, or a fraction of the baseline's best accuracy), and
/// speedups are `R_baseline / R_method` and `T_baseline / T_method`.
pub fn compare(summaries: &[RunSummary]) -> Result<CompareTable> {
    if summaries.len() < 2 {
        return Err(Error::usage("compare needs at least two runs"));
    }
    let baseline = &summaries[0];
    for s in &summaries[1..] {
        if s.fingerprint != baseline.fingerprint {
            return Err(Error::usage(format!(
                "run {:?} is not comparable with baseline {:?}: configurations differ",
                s.name, baseline.name
            )));
        }
    }
    let target = match baseline.target_mode.as_str() {
        "absolute" => baseline.target_value,
        "baseline_fraction" => baseline.target_value * baseline.best_accuracy,
        other => {
            return Err(Error::usage(format!(
                "baseline run has unknown target mode {other:?}"
            )))
        }
    };

    let base_hit = rounds_to_target(&baseline.records, target);
    let rows = summaries
        .iter()
        .map(|s| {
            let hit = rounds_to_target(&s.records, target);
            let round_speedup = match (base_hit, hit) {
                (Some((rb, _)), Some((rm, _))) => Some(rb as f64 / rm as f64),
                _ => None,
            };
            let time_speedup = match (base_hit, hit) {
                (Some((_, tb)), Some((_, tm))) if tm > 0.0 => Some(tb / tm),
                _ => None,
            };
            CompareRow {
                name: s.name.clone(),
                method: s.method.clone(),
                best_accuracy: s.best_accuracy,
                rounds_to_target: hit.map(|(r, _)| r),
                round_speedup,
                time_to_target_s: hit.map(|(_, t)| t),
                time_speedup,
            }
        })
        .collect();
    Ok(CompareTable { target, rows })
}

impl CompareTable {
    /// Plain-text table; unreached targets render as an em dash.
    pub fn render(&self) -> String {
        let mut out = format!("target accuracy: {:.4}\n", self.target);
        out.push_str(&format!(
            "{:<20} {:<8} {:>9} {:>8} {:>8} {:>12} {:>8}\n",
            "run", "method", "best_acc", "R", "R_up", "T_s", "T_up"
        ));
        for r in &self.rows {
            let rounds = r
                .rounds_to_target
                .map(|v| v.to_string())
                .unwrap_or_else(|| "—".to_string());
            let r_up = r
                .round_speedup
                .map(|v| format!("{v:.2}×"))
                .unwrap_or_else(|| "—".to_string());
            let time = r
                .time_to_target_s
                .map(|v| format!("{v:.2}"))
                .unwrap_or_else(|| "—".to_string());
            let t_up = r
                .time_speedup
                .map(|v| format!("{v:.2}×"))
                .unwrap_or_else(|| "—".to_string());
            out.push_str(&format!(
                "{:<20} {:<8} {:>9.4} {:>8} {:>8} {:>12} {:>8}\n",
                r.name, r.method, r.best_accuracy, rounds, r_up, time, t_up
            ));
        }
        out
    }
}
