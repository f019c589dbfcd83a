use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Column header of the metric CSV.
pub const METRIC_HEADER: &str =
    "iteration,train_nll_nats,val_nll_nats,train_bpd,val_bpd,adv_loss,mode_score,inception_score,wallclock_s";

const DIVERGED: &str = "diverged";

/// One evaluation round. NLL fields are `None` when the evaluation diverged;
/// loss and score fields are `None` when they do not apply.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub iteration: usize,
    pub train_nll: Option<f64>,
    pub val_nll: Option<f64>,
    pub train_bpd: Option<f64>,
    pub val_bpd: Option<f64>,
    pub adv_loss: Option<f64>,
    pub mode_score: Option<f64>,
    pub inception_score: Option<f64>,
    pub wallclock_s: f64,
}

/// Per-iteration training record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricLog {
    rows: Vec<MetricRow>,
}

fn nll_field(out: &mut String, v: Option<f64>) {
    match v {
        Some(v) => write!(out, "{v}").unwrap(),
        None => out.push_str(DIVERGED),
    }
}

fn opt_field(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        write!(out, "{v}").unwrap();
    }
}

impl MetricLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: MetricRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.iteration <= last.iteration {
                return Err(Error::InvalidArgument(format!(
                    "metric iterations must increase: {} after {}",
                    row.iteration, last.iteration
                )));
            }
        }
        let finite_or_none = |v: Option<f64>| v.is_none_or(f64::is_finite);
        if ![row.train_nll, row.val_nll, row.train_bpd, row.val_bpd]
            .into_iter()
            .all(finite_or_none)
        {
            return Err(Error::InvalidArgument(
                "NLL fields must be finite or marked diverged".into(),
            ));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Row with the highest MODE score; earliest wins ties.
    pub fn best_mode_row(&self) -> Option<&MetricRow> {
        self.rows
            .iter()
            .filter(|r| r.mode_score.is_some())
            .fold(None, |best: Option<&MetricRow>, r| match best {
                Some(b) if b.mode_score >= r.mode_score => Some(b),
                _ => Some(r),
            })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(METRIC_HEADER);
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},", r.iteration).unwrap();
            nll_field(&mut out, r.train_nll);
            out.push(',');
            nll_field(&mut out, r.val_nll);
            out.push(',');
            nll_field(&mut out, r.train_bpd);
            out.push(',');
            nll_field(&mut out, r.val_bpd);
            out.push(',');
            opt_field(&mut out, r.adv_loss);
            out.push(',');
            opt_field(&mut out, r.mode_score);
            out.push(',');
            opt_field(&mut out, r.inception_score);
            writeln!(out, ",{}", r.wallclock_s).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Config {
            path: "<metric log>".into(),
            line,
            message: msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == METRIC_HEADER => {}
            _ => return Err(bad(1, "missing metric header".into())),
        }
        let mut log = MetricLog::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad(i + 1, format!("expected 9 fields, got {}", f.len())));
            }
            let num =
                |s: &str| -> Result<f64> { s.parse::<f64>().map_err(|_| bad(i + 1, format!("not a number: {s:?}"))) };
            let nll = |s: &str| -> Result<Option<f64>> {
                if s == DIVERGED {
                    Ok(None)
                } else {
                    num(s).map(Some)
                }
            };
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    num(s).map(Some)
                }
            };
            log.push(MetricRow {
                iteration: f[0]
                    .parse()
                    .map_err(|_| bad(i + 1, format!("bad iteration {:?}", f[0])))?,
                train_nll: nll(f[1])?,
                val_nll: nll(f[2])?,
                train_bpd: nll(f[3])?,
                val_bpd: nll(f[4])?,
                adv_loss: opt(f[5])?,
                mode_score: opt(f[6])?,
                inception_score: opt(f[7])?,
                wallclock_s: num(f[8])?,
            })
            .map_err(|e| bad(i + 1, e.to_string()))?;
        }
        Ok(log)
    }
}
