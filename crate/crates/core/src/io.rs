//! Delimited-text formats: study datasets and fit results.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::effects::{OneArmStudy, TwoArmStudy};
use crate::error::{Error, Result};
use crate::estimation::{FitResult, GridRow};

pub const TWO_ARM_HEADER: [&str; 5] = ["study", "y1", "n1", "y0", "n0"];
pub const ONE_ARM_HEADER: [&str; 3] = ["study", "y", "n"];

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .has_headers(false)
        .from_reader(text.as_bytes())
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(line, e.to_string())
}

/// Parse a dataset; the header (`study,y1,n1,y0,n0` or `study,y,n`) fixes the arm structure.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut rows = reader(text).into_records();
    let header = loop {
        match rows.next() {
            None => return Err(parse_err(1, "empty dataset: no header line")),
            Some(r) => {
                let r = r.map_err(csv_err)?;
                if r.iter().all(str::is_empty) {
                    continue;
                }
                break r;
            }
        }
    };
    let header_line = header.position().map_or(1, |p| p.line());
    let names: Vec<String> = header.iter().map(str::to_ascii_lowercase).collect();
    let two_arm = if names == TWO_ARM_HEADER {
        true
    } else if names == ONE_ARM_HEADER {
        false
    } else {
        return Err(parse_err(
            header_line,
            format!(
                "unrecognised header `{}` (expected `{}` or `{}`)",
                names.join(","),
                TWO_ARM_HEADER.join(","),
                ONE_ARM_HEADER.join(",")
            ),
        ));
    };

    let mut labels = Vec::new();
    let mut seen = HashSet::new();
    let mut two = Vec::new();
    let mut one = Vec::new();
    for rec in rows {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != names.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", names.len(), rec.len()),
            ));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(parse_err(line, "empty study id"));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(line, format!("duplicate study id `{id}`")));
        }
        let mut counts = Vec::with_capacity(rec.len() - 1);
        for (k, cell) in rec.iter().enumerate().skip(1) {
            let v: u64 = cell.parse().map_err(|_| {
                parse_err(
                    line,
                    format!(
                        "column `{}`: `{cell}` is not a non-negative integer",
                        names[k]
                    ),
                )
            })?;
            counts.push(v);
        }
        let bad = |e: Error| parse_err(line, format!("study `{id}`: {e}"));
        if two_arm {
            two.push(TwoArmStudy::new(counts[0], counts[1], counts[2], counts[3]).map_err(bad)?);
        } else {
            one.push(OneArmStudy::new(counts[0], counts[1]).map_err(bad)?);
        }
        labels.push(id);
    }
    if labels.is_empty() {
        return Err(parse_err(header_line, "dataset has no studies"));
    }
    let data = if two_arm {
        Dataset::two_arm(two)
    } else {
        Dataset::one_arm(one)
    };
    data.with_labels(labels)
}

pub fn write_dataset(data: &Dataset) -> String {
    let mut out = String::new();
    match &data.studies {
        crate::data::Studies::TwoArm(v) => {
            let _ = writeln!(out, "{}", TWO_ARM_HEADER.join(","));
            for (l, s) in data.labels.iter().zip(v) {
                let _ = writeln!(out, "{l},{},{},{},{}", s.y1, s.n1, s.y0, s.n0);
            }
        }
        crate::data::Studies::OneArm(v) => {
            let _ = writeln!(out, "{}", ONE_ARM_HEADER.join(","));
            for (l, s) in data.labels.iter().zip(v) {
                let _ = writeln!(out, "{l},{},{}", s.y, s.n);
            }
        }
    }
    out
}

pub const RESULT_HEADER: [&str; 14] = [
    "method",
    "p_min",
    "p_max",
    "m_raw",
    "m_rounded",
    "theta",
    "se_theta",
    "ci_lo",
    "ci_hi",
    "tau",
    "rho",
    "loglik",
    "converged",
    "on_boundary",
];

/// One row of a result file. Empty fields map to `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub method: String,
    pub p_min: Option<f64>,
    pub p_max: Option<f64>,
    pub m_raw: Option<f64>,
    pub m_rounded: Option<u64>,
    pub theta: Option<f64>,
    pub se_theta: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub tau: Option<f64>,
    pub rho: Option<f64>,
    pub loglik: Option<f64>,
    pub converged: bool,
    /// Parameters on a bound, `;`-separated.
    pub on_boundary: String,
}

impl ResultRecord {
    pub fn from_fit(method: &str, fit: &FitResult) -> Self {
        let ci = fit.theta.ci();
        Self {
            method: method.to_string(),
            p_min: None,
            p_max: None,
            m_raw: None,
            m_rounded: None,
            theta: Some(fit.theta.value),
            se_theta: fit.theta.se,
            ci_lo: ci.map(|c| c.0),
            ci_hi: ci.map(|c| c.1),
            tau: Some(fit.tau.value),
            rho: fit.rho.map(|r| r.value),
            loglik: Some(fit.loglik),
            converged: fit.converged,
            on_boundary: fit.on_boundary.join(";"),
        }
    }

    pub fn from_grid_row(method: &str, row: &GridRow) -> Self {
        let (p_min, p_max) = (row.p_min, row.p_max);
        let m = row.m_unpublished;
        let mut rec = match &row.fit {
            Some(f) => Self::from_fit(method, f),
            None => Self {
                method: method.to_string(),
                p_min: None,
                p_max: None,
                m_raw: None,
                m_rounded: None,
                theta: None,
                se_theta: None,
                ci_lo: None,
                ci_hi: None,
                tau: None,
                rho: None,
                loglik: None,
                converged: false,
                on_boundary: String::new(),
            },
        };
        rec.p_min = Some(p_min);
        rec.p_max = Some(p_max);
        if m.is_finite() {
            rec.m_raw = Some(m);
            rec.m_rounded = Some(m.round().max(0.0) as u64);
        }
        rec
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Floats are written with the shortest representation that parses back exactly.
pub fn write_results(rows: &[ResultRecord]) -> String {
    let mut out = RESULT_HEADER.join(",");
    out.push('\n');
    for r in rows {
        let fields = [
            r.method.clone(),
            opt(r.p_min),
            opt(r.p_max),
            opt(r.m_raw),
            opt(r.m_rounded),
            opt(r.theta),
            opt(r.se_theta),
            opt(r.ci_lo),
            opt(r.ci_hi),
            opt(r.tau),
            opt(r.rho),
            opt(r.loglik),
            r.converged.to_string(),
            r.on_boundary.clone(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRecord>> {
    let mut rows = reader(text).into_records();
    let header = rows
        .next()
        .ok_or_else(|| parse_err(1, "empty result file"))?
        .map_err(csv_err)?;
    if header.iter().collect::<Vec<_>>() != RESULT_HEADER {
        return Err(parse_err(
            1,
            format!("expected header `{}`", RESULT_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in rows {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != RESULT_HEADER.len() {
            return Err(parse_err(
                line,
                format!(
                    "expected {} fields, found {}",
                    RESULT_HEADER.len(),
                    rec.len()
                ),
            ));
        }
        fn field<T: std::str::FromStr>(
            rec: &csv::StringRecord,
            k: usize,
            line: u64,
        ) -> Result<Option<T>> {
            let s = &rec[k];
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| {
                parse_err(
                    line,
                    format!("column `{}`: cannot parse `{s}`", RESULT_HEADER[k]),
                )
            })
        }
        out.push(ResultRecord {
            method: rec[0].to_string(),
            p_min: field(&rec, 1, line)?,
            p_max: field(&rec, 2, line)?,
            m_raw: field(&rec, 3, line)?,
            m_rounded: field(&rec, 4, line)?,
            theta: field(&rec, 5, line)?,
            se_theta: field(&rec, 6, line)?,
            ci_lo: field(&rec, 7, line)?,
            ci_hi: field(&rec, 8, line)?,
            tau: field(&rec, 9, line)?,
            rho: field(&rec, 10, line)?,
            loglik: field(&rec, 11, line)?,
            converged: field(&rec, 12, line)?
                .ok_or_else(|| parse_err(line, "column `converged` is empty"))?,
            on_boundary: rec[13].to_string(),
        });
    }
    Ok(out)
}

pub const PLOT_HEADER: &str = "p_min,p_max,m_raw,m_rounded,theta,ci_lo,ci_hi";

/// Series for a θ̂-versus-Pmin panel, ordered by decreasing Pmin.
pub fn plot_series(rows: &[ResultRecord]) -> String {
    let mut sorted: Vec<&ResultRecord> = rows.iter().filter(|r| r.p_min.is_some()).collect();
    sorted.sort_by(|a, b| b.p_min.unwrap_or(0.0).total_cmp(&a.p_min.unwrap_or(0.0)));
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for r in sorted {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            opt(r.p_min),
            opt(r.p_max),
            opt(r.m_raw),
            opt(r.m_rounded),
            opt(r.theta),
            opt(r.ci_lo),
            opt(r.ci_hi)
        );
    }
    out
}
