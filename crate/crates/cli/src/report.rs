//! CSV emission and plot-data export.
//!
//! Every file begins with a `# schema ...` comment line followed by the
//! header row. Floats are written with the shortest round-trip formatting,
//! so re-running a spec yields byte-identical files.

use crate::error::CliError;
use crate::runner::{CellSummary, SweepOutcome};
use shift_lab_core::metrics::TrialRecord;
use shift_lab_core::Latent;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

pub const SWEEP_SCHEMA: &str = "# schema shift-lab-sweep v1";
pub const SUMMARY_SCHEMA: &str = "# schema shift-lab-summary v1";
pub const THEORY_SCHEMA: &str = "# schema shift-lab-theory v1";
pub const PLOT_SCHEMA: &str = "# schema shift-lab-plot v1";

pub struct CsvFile {
    writer: BufWriter<File>,
}

impl CsvFile {
    pub fn create(path: &Path, schema: &str) -> Result<Self, CliError> {
        let mut writer = BufWriter::new(File::create(path)?);
        writeln!(writer, "{schema}")?;
        Ok(Self { writer })
    }

    pub fn write_line(&mut self, line: impl AsRef<str>) -> Result<(), CliError> {
        writeln!(self.writer, "{}", line.as_ref())?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), CliError> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Deterministic float formatting: positional in the human range,
/// scientific outside it. Both forms round-trip through `f64::from_str`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v != 0.0 && !(1e-4..1e7).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn opt_bool(v: Option<bool>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep_header() -> &'static str {
    "scheme,lambda,eta,trial,clean_decision,attacked_decision,bit_acc_clean,bit_acc_attacked,l1,l2,latent_mse,mode_retained"
}

pub fn sweep_row(eta: f64, r: &TrialRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.scheme,
        r.lambda,
        eta,
        r.trial_id,
        r.verify_clean.decision,
        r.verify_attacked.decision,
        opt_f64(r.verify_clean.bit_accuracy),
        opt_f64(r.verify_attacked.bit_accuracy),
        fmt_f64(r.l1_dist),
        fmt_f64(r.l2_dist),
        fmt_f64(r.latent_mse),
        opt_bool(r.mode_retained()),
    )
}

pub fn write_summary_csv(path: &Path, summaries: &[CellSummary]) -> Result<(), CliError> {
    let mut f = CsvFile::create(path, SUMMARY_SCHEMA)?;
    f.write_line(
        "scheme,lambda,eta,trials,clean_detect_rate,asr,mean_bit_acc_attacked,mean_l1,mean_l2,mean_latent_mse,mode_retained_rate",
    )?;
    for s in summaries {
        f.write_line(format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.scheme,
            s.lambda,
            s.eta,
            s.trials,
            fmt_f64(s.clean_detect_rate),
            fmt_f64(s.asr),
            opt_f64(s.mean_bit_acc_attacked),
            fmt_f64(s.mean_l1),
            fmt_f64(s.mean_l2),
            fmt_f64(s.mean_latent_mse),
            opt_f64(s.mode_retained_rate),
        ))?;
    }
    f.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassState {
    Pass,
    Fail,
    Info,
    Skip,
}

impl std::fmt::Display for PassState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PassState::Pass => write!(f, "pass"),
            PassState::Fail => write!(f, "fail"),
            PassState::Info => write!(f, "info"),
            PassState::Skip => write!(f, "skip"),
        }
    }
}

/// One row of `theory.csv`: a named check, its anchor id, the bound it is
/// held to, the observed value, and the verdict.
#[derive(Debug, Clone)]
pub struct TheoryRow {
    pub name: String,
    pub anchor: String,
    pub bound: Option<f64>,
    pub observed: Option<f64>,
    pub pass: PassState,
}

impl TheoryRow {
    /// Pass iff observed <= bound.
    pub fn gated(name: &str, anchor: &str, bound: f64, observed: f64) -> Self {
        Self {
            name: name.into(),
            anchor: anchor.into(),
            bound: Some(bound),
            observed: Some(observed),
            pass: if observed <= bound { PassState::Pass } else { PassState::Fail },
        }
    }

    /// Ratio-style stability row: bound 1.0, verdict from the violation
    /// count (a violation is a ratio beyond bound plus rounding slack).
    pub fn counted(name: &str, anchor: &str, worst_ratio: f64, violations: usize) -> Self {
        Self {
            name: name.into(),
            anchor: anchor.into(),
            bound: Some(1.0),
            observed: Some(worst_ratio),
            pass: if violations == 0 { PassState::Pass } else { PassState::Fail },
        }
    }

    /// Pass iff observed >= bound (positive controls).
    pub fn at_least(name: &str, anchor: &str, bound: f64, observed: f64) -> Self {
        Self {
            name: name.into(),
            anchor: anchor.into(),
            bound: Some(bound),
            observed: Some(observed),
            pass: if observed >= bound { PassState::Pass } else { PassState::Fail },
        }
    }

    /// Recorded, never gating.
    pub fn info(name: &str, anchor: &str, observed: f64) -> Self {
        Self {
            name: name.into(),
            anchor: anchor.into(),
            bound: None,
            observed: Some(observed),
            pass: PassState::Info,
        }
    }

    /// Not applicable to this spec's regime.
    pub fn skipped(name: &str, anchor: &str) -> Self {
        Self {
            name: name.into(),
            anchor: anchor.into(),
            bound: None,
            observed: None,
            pass: PassState::Skip,
        }
    }
}

pub fn write_theory_csv(path: &Path, rows: &[TheoryRow]) -> Result<(), CliError> {
    let mut f = CsvFile::create(path, THEORY_SCHEMA)?;
    f.write_line("name,anchor,bound,observed,pass")?;
    for r in rows {
        f.write_line(format!(
            "{},{},{},{},{}",
            r.name,
            r.anchor,
            opt_f64(r.bound),
            opt_f64(r.observed),
            r.pass
        ))?;
    }
    f.flush()
}

pub fn write_run_info(
    path: &Path,
    spec_hash: u64,
    outcome: &SweepOutcome,
    trials: usize,
) -> Result<(), CliError> {
    let mut text = String::new();
    writeln!(text, "shift-lab {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(text, "spec_hash = {spec_hash:016x}").unwrap();
    writeln!(text, "trials_per_cell = {trials}").unwrap();
    for (scheme, tau) in &outcome.taus {
        writeln!(text, "tau {scheme} = {tau}").unwrap();
    }
    for (scheme, min) in &outcome.minimal_lambda {
        match min {
            Some(l) => writeln!(text, "minimal_lambda {scheme} = {l}").unwrap(),
            None => writeln!(text, "minimal_lambda {scheme} = none").unwrap(),
        }
    }
    writeln!(text, "hierarchy = {}", outcome.hierarchy).unwrap();
    fs::write(path, text)?;
    Ok(())
}

/// Flat CSV grid of a latent: one row per (channel, grid row).
pub fn write_grid_csv(path: &Path, latent: &Latent) -> Result<(), CliError> {
    let shape = latent.shape();
    let mut out = String::new();
    let data = latent.as_slice();
    for c in 0..shape.channels {
        for row in 0..shape.height {
            let start = (c * shape.height + row) * shape.width;
            let cells: Vec<String> =
                data[start..start + shape.width].iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// The retained reverse path: one row per step, t descending to 0.
pub fn write_trajectory_csv(
    path: &Path,
    t_start: usize,
    trace: Option<&[Latent]>,
) -> Result<(), CliError> {
    let Some(trace) = trace else {
        return Ok(());
    };
    let mut out = String::new();
    for (i, z) in trace.iter().enumerate() {
        let t = t_start - i;
        let cells: Vec<String> = z.as_slice().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{t},{}", cells.join(",")).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// plotdata

struct ParsedSweepRow {
    scheme: String,
    lambda: f64,
    clean_watermarked: bool,
    attacked_clean: bool,
    l1: f64,
    l2: f64,
    latent_mse: f64,
}

fn read_sweep_csv(path: &Path) -> Result<Vec<ParsedSweepRow>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|_| CliError::MissingRun(format!("cannot read {}", path.display())))?;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != sweep_header() {
                return Err(CliError::MissingRun(format!(
                    "unexpected header in {}",
                    path.display()
                )));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(CliError::MissingRun(format!(
                "malformed row in {}: `{line}`",
                path.display()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<f64, CliError> {
            s.parse::<f64>()
                .map_err(|_| CliError::MissingRun(format!("bad {what} value `{s}`")))
        };
        rows.push(ParsedSweepRow {
            scheme: fields[0].to_string(),
            lambda: parse(fields[1], "lambda")?,
            clean_watermarked: fields[4] == "watermarked",
            attacked_clean: fields[5] == "clean",
            l1: parse(fields[8], "l1")?,
            l2: parse(fields[9], "l2")?,
            latent_mse: parse(fields[10], "latent_mse")?,
        });
    }
    if !saw_header {
        return Err(CliError::MissingRun(format!("{} has no header", path.display())));
    }
    Ok(rows)
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

fn cell_keys(rows: &[ParsedSweepRow]) -> Vec<(String, f64)> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(s, l)| *s == r.scheme && *l == r.lambda) {
            keys.push((r.scheme.clone(), r.lambda));
        }
    }
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keys
}

fn plot_rows(rows: &[ParsedSweepRow], suffix: &str) -> (Vec<String>, Vec<String>) {
    let mut asr_lines = Vec::new();
    let mut dist_lines = Vec::new();
    for (scheme, lambda) in cell_keys(rows) {
        let cell: Vec<&ParsedSweepRow> = rows
            .iter()
            .filter(|r| r.scheme == scheme && r.lambda == lambda)
            .collect();
        let denom = cell.iter().filter(|r| r.clean_watermarked).count();
        let evaded = cell.iter().filter(|r| r.clean_watermarked && r.attacked_clean).count();
        let p = if denom > 0 { evaded as f64 / denom as f64 } else { 0.0 };
        let stderr = if denom > 0 { (p * (1.0 - p) / denom as f64).sqrt() } else { 0.0 };
        asr_lines.push(format!(
            "{scheme},{lambda},asr{suffix},{},{}",
            fmt_f64(p),
            fmt_f64(stderr)
        ));
        for (metric, values) in [
            ("l1", cell.iter().map(|r| r.l1).collect::<Vec<_>>()),
            ("l2", cell.iter().map(|r| r.l2).collect::<Vec<_>>()),
            ("latent_mse", cell.iter().map(|r| r.latent_mse).collect::<Vec<_>>()),
        ] {
            let (mean, se) = mean_and_stderr(&values);
            dist_lines.push(format!(
                "{scheme},{lambda},{metric}{suffix},{},{}",
                fmt_f64(mean),
                fmt_f64(se)
            ));
        }
    }
    (asr_lines, dist_lines)
}

/// Emit `asr_vs_lambda.csv` and `dist_vs_lambda.csv` (long format) from a
/// completed sweep directory.
pub fn plotdata(run_dir: &Path, out_dir: &Path) -> Result<(), CliError> {
    let sweep = read_sweep_csv(&run_dir.join("sweep.csv"))?;
    let baseline_path = run_dir.join("sweep_baseline.csv");
    let baseline = if baseline_path.exists() {
        Some(read_sweep_csv(&baseline_path)?)
    } else {
        None
    };
    fs::create_dir_all(out_dir)?;

    let (mut asr_lines, mut dist_lines) = plot_rows(&sweep, "");
    if let Some(base) = &baseline {
        let (a, d) = plot_rows(base, "_baseline");
        asr_lines.extend(a);
        dist_lines.extend(d);
    }

    let mut asr = CsvFile::create(&out_dir.join("asr_vs_lambda.csv"), PLOT_SCHEMA)?;
    asr.write_line("scheme,lambda,metric,mean,stderr")?;
    for line in &asr_lines {
        asr.write_line(line)?;
    }
    asr.flush()?;

    let mut dist = CsvFile::create(&out_dir.join("dist_vs_lambda.csv"), PLOT_SCHEMA)?;
    dist.write_line("scheme,lambda,metric,mean,stderr")?;
    for line in &dist_lines {
        dist.write_line(line)?;
    }
    dist.flush()?;
    Ok(())
}
