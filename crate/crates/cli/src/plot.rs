//! `flowgan plot`: overlays one or more report CSVs of the same kind in a
//! single SVG chart. The kind is recognized from the header.

use std::fs;
use std::path::{Path, PathBuf};

use crate::commands::CliResult;
use crate::report::Table;
use crate::svg::{Chart, Scale, Series};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Metrics,
    Spectral,
    Bandwidth,
    Ais,
}

fn kind_of(t: &Table) -> Option<Kind> {
    match t.header.first().map(String::as_str)? {
        "iteration" => Some(Kind::Metrics),
        "log_sv" => Some(Kind::Spectral),
        "sigma" => Some(Kind::Bandwidth),
        "index" => Some(Kind::Ais),
        _ => None,
    }
}

/// Legend label: the directory holding the file, or its stem.
fn label(path: &Path) -> String {
    path.parent()
        .and_then(Path::file_name)
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn plot(inputs: &[PathBuf], output: &Path, y: Option<&str>, title: Option<&str>) -> CliResult {
    if inputs.is_empty() {
        return Err("plot needs at least one CSV".into());
    }
    let mut tables = Vec::with_capacity(inputs.len());
    for p in inputs {
        let t = Table::read(p).map_err(|e| format!("{}: {e}", p.display()))?;
        let k = kind_of(&t).ok_or_else(|| format!("{}: unrecognized report header", p.display()))?;
        tables.push((label(p), k, t));
    }
    let kind = tables[0].1;
    if tables.iter().any(|(_, k, _)| *k != kind) {
        return Err("plot inputs must all be the same kind of report".into());
    }
    let (x_col, default_y, x_scale, steps) = match kind {
        Kind::Metrics => ("iteration", "val_nll_nats", Scale::Linear, false),
        Kind::Spectral => ("log_sv", "cdf", Scale::Linear, true),
        Kind::Bandwidth => ("sigma", "val_nll", Scale::Log, false),
        Kind::Ais => ("index", "ais_log_p", Scale::Linear, false),
    };
    let y_col = y.unwrap_or(default_y);
    let mut series = Vec::new();
    for (name, _, t) in &tables {
        let (Some(xi), Some(yi)) = (t.column(x_col), t.column(y_col)) else {
            return Err(format!("{name}: no column {y_col}").into());
        };
        series.push(Series {
            name: name.clone(),
            points: t.pairs(xi, yi),
            steps,
        });
        if kind == Kind::Ais && y.is_none() {
            if let Some(ei) = t.column("exact_log_p") {
                series.push(Series {
                    name: format!("{name} exact"),
                    points: t.pairs(xi, ei),
                    steps,
                });
            }
        }
    }
    let chart = Chart {
        title: title.map(str::to_owned).unwrap_or_else(|| y_col.to_owned()),
        x_label: x_col.to_owned(),
        y_label: y_col.to_owned(),
        x_scale,
        y_scale: Scale::Linear,
        series,
    };
    fs::write(output, chart.render())?;
    Ok(())
}
