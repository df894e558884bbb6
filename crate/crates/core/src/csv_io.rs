//! CSV persistence with 17 significant digits, so values round-trip exactly.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C64;

use crate::coeffs::CoeffSet;
use crate::error::{Error, Result};
use crate::spectra::{CorrelationTrace, SpectrumTrace};

pub const TTCF_HEADER: [&str; 3] = ["t", "re", "im"];
pub const SPECTRUM_HEADER: [&str; 3] = ["omega", "magnitude", "phase"];
pub const COEFFS_HEADER: [&str; 9] = ["t", "re_f1", "im_f1", "re_f2", "im_f2", "re_f3", "im_f3", "re_f4", "im_f4"];

/// `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(path: &Path, reason: impl ToString) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn write_rows<const N: usize>(path: &Path, header: &[&str; N], rows: impl Iterator<Item = [f64; N]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|&x| fmt_f64(x))).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<const N: usize>(path: &Path, header: &[&str; N]) -> Result<Vec<[f64; N]>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let found = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(csv_err(path, format!("expected header {}, found {}", header.join(","), found.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != N {
            return Err(csv_err(path, format!("row {} has {} fields, expected {N}", i + 2, rec.len())));
        }
        let mut row = [0.0; N];
        for (j, field) in rec.iter().enumerate() {
            row[j] = field
                .trim()
                .parse()
                .map_err(|e| csv_err(path, format!("row {} field {}: {e}", i + 2, header[j])))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_ttcf(path: &Path, trace: &CorrelationTrace) -> Result<()> {
    write_rows(
        path,
        &TTCF_HEADER,
        trace.values.iter().enumerate().map(|(k, v)| [k as f64 * trace.dt, v.re, v.im]),
    )
}

/// Reads a `t,re,im` file; the grid must be uniform.
pub fn read_ttcf(path: &Path) -> Result<CorrelationTrace> {
    let rows = read_rows(path, &TTCF_HEADER)?;
    if rows.len() < 2 {
        return Err(csv_err(path, "need at least two rows"));
    }
    let dt = rows[1][0] - rows[0][0];
    for (k, row) in rows.iter().enumerate() {
        let t = rows[0][0] + k as f64 * dt;
        if (row[0] - t).abs() > 1e-9 * dt.max(t.abs()) {
            return Err(csv_err(path, format!("non-uniform time grid at row {}", k + 2)));
        }
    }
    let values = rows.iter().map(|r| C64::new(r[1], r[2])).collect();
    CorrelationTrace::new(dt, values, "A", "B")
}

pub fn write_spectrum(path: &Path, s: &SpectrumTrace) -> Result<()> {
    write_rows(
        path,
        &SPECTRUM_HEADER,
        s.omega.iter().zip(&s.values).map(|(&w, v)| [w, v.norm(), v.arg()]),
    )
}

/// `(omega, magnitude, phase)` rows.
pub fn read_spectrum(path: &Path) -> Result<Vec<[f64; 3]>> {
    read_rows(path, &SPECTRUM_HEADER)
}

pub fn write_coeffs(path: &Path, c: &CoeffSet) -> Result<()> {
    let series: Vec<Vec<C64>> = (0..4).map(|j| c.series(j)).collect();
    write_rows(
        path,
        &COEFFS_HEADER,
        (0..series[0].len()).map(|k| {
            let f = |j: usize| series[j][k];
            [
                k as f64 * c.dt(),
                f(0).re,
                f(0).im,
                f(1).re,
                f(1).im,
                f(2).re,
                f(2).im,
                f(3).re,
                f(3).im,
            ]
        }),
    )
}

pub fn read_coeffs(path: &Path) -> Result<Vec<[f64; 9]>> {
    read_rows(path, &COEFFS_HEADER)
}

/// Two-column file such as `t,sigma`.
pub fn write_series(path: &Path, header: [&str; 2], dt: f64, values: &[f64]) -> Result<()> {
    write_rows(path, &header, values.iter().enumerate().map(|(k, &v)| [k as f64 * dt, v]))
}

pub fn read_series(path: &Path, header: [&str; 2]) -> Result<Vec<f64>> {
    Ok(read_rows(path, &header)?.into_iter().map(|r| r[1]).collect())
}

/// Free-form table with preformatted fields.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
