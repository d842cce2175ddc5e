//! Text formats.
//!
//! Curves: CSV whose first row holds the grid points and every further row
//! one curve. Responses: one value per line, no header. Fits: JSON.
//! Numbers are written with the shortest representation that reads back to
//! the same `f64`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fpca::CurveSet;
use crate::numerics::Grid;
use crate::truncated::TruncatedFit;

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input)
}

fn record_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::Utf8 { err, .. } => Error::parse(line, format!("invalid UTF-8: {err}")),
        other => Error::parse(line, format!("{other:?}")),
    }
}

fn parse_value(field: &str, line: usize, column: usize) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(line, format!("column {column}: '{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("column {column}: non-finite value '{field}'")));
    }
    Ok(v)
}

fn is_blank(rec: &csv::StringRecord) -> bool {
    rec.iter().all(str::is_empty)
}

pub fn parse_curves<R: Read>(input: R) -> Result<CurveSet> {
    let mut rdr = reader(input);
    let mut grid: Option<(Grid, usize)> = None;
    let mut values = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(record_error)?;
        if is_blank(&rec) {
            continue;
        }
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, f)| parse_value(f, line, c + 1))
            .collect::<Result<Vec<f64>>>()?;
        match &grid {
            None => {
                let g = Grid::from_points(row).map_err(|e| Error::parse(line, format!("grid header: {e}")))?;
                grid = Some((g, line));
            }
            Some((g, _)) => {
                if row.len() != g.len() {
                    return Err(Error::parse(
                        line,
                        format!("expected {} values, found {}", g.len(), row.len()),
                    ));
                }
                values.extend(row);
                n += 1;
            }
        }
    }
    let (grid, header_line) = grid.ok_or_else(|| Error::parse(1, "missing grid header"))?;
    if n == 0 {
        return Err(Error::parse(header_line + 1, "no curves after the grid header"));
    }
    CurveSet::from_flat(grid, n, values)
}

pub fn parse_responses<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut rdr = reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(record_error)?;
        if is_blank(&rec) {
            continue;
        }
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 1 {
            return Err(Error::parse(line, format!("expected 1 value, found {}", rec.len())));
        }
        out.push(parse_value(&rec[0], line, 1)?);
    }
    if out.is_empty() {
        return Err(Error::parse(1, "no responses"));
    }
    Ok(out)
}

pub fn parse_fit_json<R: Read>(input: R) -> Result<TruncatedFit> {
    let fit: TruncatedFit = serde_json::from_reader(input)?;
    validate_fit(&fit)?;
    Ok(fit)
}

fn validate_fit(fit: &TruncatedFit) -> Result<()> {
    fit.grid.check_len("fit slope", fit.b_hat.len())?;
    if !(fit.a_hat.is_finite() && fit.lambda.is_finite() && fit.b_hat.iter().all(|v| v.is_finite())) {
        return Err(Error::Domain("fit contains non-finite values".into()));
    }
    fit.grid.last_index_within(fit.theta_hat)?;
    Ok(())
}

pub fn load_curves(path: impl AsRef<Path>) -> Result<CurveSet> {
    parse_curves(File::open(path)?)
}

pub fn load_responses(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    parse_responses(File::open(path)?)
}

/// Curves and responses whose counts must agree.
pub fn load_data(curves: impl AsRef<Path>, responses: impl AsRef<Path>) -> Result<(CurveSet, Vec<f64>)> {
    let c = load_curves(curves)?;
    let y = load_responses(responses)?;
    check_counts(&c, &y)?;
    Ok((c, y))
}

pub fn check_counts(curves: &CurveSet, y: &[f64]) -> Result<()> {
    let n = curves.n();
    match y.len().cmp(&n) {
        std::cmp::Ordering::Equal => Ok(()),
        std::cmp::Ordering::Less => Err(Error::parse(
            y.len() + 1,
            format!("responses end after {} values but there are {n} curves", y.len()),
        )),
        std::cmp::Ordering::Greater => Err(Error::parse(
            n + 1,
            format!("{} responses for {n} curves", y.len()),
        )),
    }
}

pub fn load_fit(path: impl AsRef<Path>) -> Result<TruncatedFit> {
    parse_fit_json(File::open(path)?)
}

fn write_row<W: Write>(out: &mut W, row: &[f64]) -> Result<()> {
    let mut first = true;
    for v in row {
        if !first {
            out.write_all(b",")?;
        }
        first = false;
        write!(out, "{v}")?;
    }
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_curves<W: Write>(curves: &CurveSet, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    write_row(&mut out, curves.grid().points())?;
    for x in curves.iter() {
        write_row(&mut out, x)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_responses<W: Write>(y: &[f64], out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    for v in y {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_fit<W: Write>(fit: &TruncatedFit, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, fit)?;
    Ok(())
}
