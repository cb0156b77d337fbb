//! Plain-text and image I/O: headerless row-major CSV matrices, mask lists,
//! observation files, result tables and binary PGM images.
//!
//! Floats are written in Rust's shortest round-trip form, so a written file
//! reads back bit-identical.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::harness::{RecoveryTrace, SummaryRow};
use crate::smg::Mask;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).comment(Some(b'#')).from_reader(r)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn parse_f64(s: &str, row: usize) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse(format!("row {}: '{s}' is not a number", row + 1)))
}

/// Rows of numbers, all the same length.
fn read_rows<R: Read>(r: R) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader(r).records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = rec.iter().map(|s| parse_f64(s, i)).collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!("row {} has {} fields, expected {}", i + 1, row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_matrix_from<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let rows = read_rows(r)?;
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

pub fn write_matrix_to<W: Write>(w: W, m: &DMatrix<f64>) -> Result<()> {
    let mut out = writer(w);
    for row in m.row_iter() {
        out.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix_from(File::open(path)?)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_matrix_to(File::create(path)?, m)
}

/// One mask per line, entries row-major.
pub fn write_masks(path: &Path, masks: &[Mask]) -> Result<()> {
    let mut out = writer(File::create(path)?);
    for m in masks {
        out.write_record(m.entries().transpose().iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_masks(path: &Path, m1: usize, m2: usize) -> Result<Vec<Mask>> {
    read_rows(File::open(path)?)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != m1 * m2 {
                return Err(Error::Parse(format!("mask {i} has {} entries, expected {m1}x{m2}", row.len())));
            }
            Mask::new(DMatrix::from_row_slice(m1, m2, &row))
        })
        .collect()
}

/// `(mask_index, y)` pairs.
pub fn write_observations(path: &Path, obs: &[(usize, f64)]) -> Result<()> {
    let mut out = writer(File::create(path)?);
    for (i, y) in obs {
        out.write_record([i.to_string(), y.to_string()]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_observations(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for (i, rec) in reader(File::open(path)?).records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 2 {
            return Err(Error::Parse(format!("observation row {} needs 2 fields", i + 1)));
        }
        let idx = rec[0].parse().map_err(|_| Error::Parse(format!("row {}: bad mask index '{}'", i + 1, &rec[0])))?;
        out.push((idx, parse_f64(&rec[1], i)?));
    }
    Ok(out)
}

pub fn write_traces_to<W: Write>(w: W, traces: &[RecoveryTrace]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["method", "trial", "sample_size", "normalized_error"]).map_err(csv_err)?;
    for t in traces {
        for (n, e) in t.sample_sizes.iter().zip(&t.errors) {
            out.write_record([t.method.clone(), t.trial.to_string(), n.to_string(), e.to_string()])
                .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_to<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["method", "sample_size", "q25", "median", "q75"]).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.method.clone(),
            r.sample_size.to_string(),
            r.q25.to_string(),
            r.median.to_string(),
            r.q75.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_traces(path: &Path, traces: &[RecoveryTrace]) -> Result<()> {
    write_traces_to(File::create(path)?, traces)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_summary_to(File::create(path)?, rows)
}

/// Grey levels of a PGM image as an `h x w` matrix scaled to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<DMatrix<f64>> {
    let img = image::open(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let g = img.to_luma16();
    let (w, h) = g.dimensions();
    Ok(DMatrix::from_fn(h as usize, w as usize, |r, c| {
        f64::from(g.get_pixel(c as u32, r as u32)[0]) / f64::from(u16::MAX)
    }))
}

/// Writes a binary (P5) 8-bit PGM, clamping to `[0, 1]`.
pub fn write_pgm(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let (h, w) = m.shape();
    let buf = image::GrayImage::from_fn(w as u32, h as u32, |c, r| {
        image::Luma([(m[(r as usize, c as usize)].clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    let file = std::io::BufWriter::new(File::create(path)?);
    let enc = image::codecs::pnm::PnmEncoder::new(file)
        .with_subtype(image::codecs::pnm::PnmSubtype::Graymap(image::codecs::pnm::SampleEncoding::Binary));
    buf.write_with_encoder(enc).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
