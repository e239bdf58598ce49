//! Report and plot-data emission, single-file and batch.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::json;
use silforge_core::io::{write_csv, Report};

/// Bad flag combination detected after parsing; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub struct Plot {
    pub name: &'static str,
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<f64>>,
}

impl Plot {
    pub fn new(name: &'static str, header: &'static [&'static str], rows: Vec<Vec<f64>>) -> Self {
        Self { name, header, rows }
    }
}

pub struct Output {
    pub report: Report,
    pub plots: Vec<Plot>,
}

impl Output {
    pub fn new(report: Report) -> Self {
        Self { report, plots: Vec::new() }
    }

    pub fn with_plot(mut self, plot: Plot) -> Self {
        self.plots.push(plot);
        self
    }
}

/// Writes the report to `out` (stdout when absent) and the plot CSVs into
/// `plot_dir`, prefixing file names with `prefix` when given.
pub fn emit(output: &Output, out: Option<&Path>, plot_dir: Option<&Path>, prefix: Option<&str>) -> Result<()> {
    let text = output.report.to_json();
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?,
        None => print!("{text}"),
    }
    if let Some(dir) = plot_dir {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for plot in &output.plots {
            let name = match prefix {
                Some(p) => format!("{p}_{}.csv", plot.name),
                None => format!("{}.csv", plot.name),
            };
            write_csv(dir.join(&name), plot.header, plot.rows.iter().cloned())
                .with_context(|| format!("cannot write plot data {name}"))?;
        }
    }
    Ok(())
}

/// Single input or a whole directory, as selected by `--batch`.
pub fn dispatch<F>(
    tool: &str,
    input: Option<&Path>,
    batch: Option<&Path>,
    out: Option<&Path>,
    plot_dir: Option<&Path>,
    analyse: F,
) -> Result<ExitCode>
where
    F: Fn(&Path) -> Result<Output> + Sync,
{
    match (batch, input) {
        (Some(dir), _) => {
            let out = out.ok_or_else(|| UsageError("--batch needs --out <DIR>".into()))?;
            run_batch(tool, dir, out, plot_dir, analyse)
        }
        (None, Some(path)) => {
            let output = analyse(path).with_context(|| path.display().to_string())?;
            emit(&output, out, plot_dir, None)?;
            Ok(ExitCode::SUCCESS)
        }
        (None, None) => Err(UsageError("an input file or --batch <DIR> is required".into()).into()),
    }
}

fn batch_inputs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot read batch directory {}", dir.display()))? {
        let entry = entry?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if entry.file_type()?.is_file() && !hidden {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

/// Analyses every file of `dir` in parallel. Report `<name>.json` and plot
/// files `<name>_<plot>.csv` are written per input; a summary goes to stdout.
fn run_batch<F>(tool: &str, dir: &Path, out_dir: &Path, plot_dir: Option<&Path>, analyse: F) -> Result<ExitCode>
where
    F: Fn(&Path) -> Result<Output> + Sync,
{
    let inputs = batch_inputs(dir)?;
    if inputs.is_empty() {
        anyhow::bail!("batch directory {} holds no files", dir.display());
    }
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let entries: Vec<(String, Result<PathBuf>)> = inputs
        .par_iter()
        .map(|input| {
            let name = input.file_name().expect("listed files have names").to_string_lossy().into_owned();
            let report_path = out_dir.join(format!("{name}.json"));
            let result = analyse(input)
                .and_then(|output| emit(&output, Some(&report_path), plot_dir, Some(&name)))
                .map(|()| report_path);
            (name, result)
        })
        .collect();

    let failed = entries.iter().filter(|(_, r)| r.is_err()).count();
    let items: Vec<_> = entries
        .iter()
        .map(|(name, r)| match r {
            Ok(path) => json!({"input": name, "ok": true, "report": path.display().to_string()}),
            Err(e) => json!({"input": name, "ok": false, "error": format!("{e:#}")}),
        })
        .collect();
    let summary = Report::new(
        format!("{tool} --batch"),
        json!({"batch": dir.display().to_string(), "out": out_dir.display().to_string()}),
        json!({"processed": entries.len(), "failed": failed, "files": items}),
    );
    print!("{}", summary.to_json());
    for (name, r) in &entries {
        if let Err(e) = r {
            eprintln!("error: {name}: {e:#}");
        }
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
