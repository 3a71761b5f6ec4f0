//! Matrix exchange formats.
//!
//! * CSV: one row per line, comma-separated reals, no header.
//! * ALFV: the bytes `b"ALFV"`, then `u32` rows and `u32` columns, then the
//!   entries row-major as 32-bit IEEE-754 floats. All integers and floats
//!   are little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const ALFV_MAGIC: &[u8; 4] = b"ALFV";

pub fn write_alfv<W: Write>(out: &mut W, m: &Array2<f64>) -> Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(|_| Error::invalid("too many rows for ALFV"))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| Error::invalid("too many columns for ALFV"))?;
    out.write_all(ALFV_MAGIC)?;
    out.write_all(&rows.to_le_bytes())?;
    out.write_all(&cols.to_le_bytes())?;
    for v in m.iter() {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_alfv<R: Read>(input: &mut R) -> Result<Array2<f64>> {
    let mut header = [0u8; 12];
    input.read_exact(&mut header)?;
    if &header[..4] != ALFV_MAGIC {
        return Err(Error::invalid("not an ALFV file (bad magic)"));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut buf = vec![0u8; rows * cols * 4];
    input.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::invalid(e.to_string()))
}

pub fn write_csv<W: Write>(out: &mut W, m: &Array2<f64>) -> Result<()> {
    for row in m.rows() {
        let line = row
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("bad number ({e})"),
            })?;
        match cols {
            None => cols = Some(vals.len()),
            Some(c) if c != vals.len() => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {c} columns, found {}", vals.len()),
                })
            }
            _ => {}
        }
        data.extend(vals);
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data)
        .map_err(|e| Error::invalid(e.to_string()))
}

/// Reads a matrix, choosing the format from the file contents: ALFV when the
/// magic bytes are present, CSV otherwise.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let mut file = BufReader::new(File::open(path)?);
    let is_alfv = file.fill_buf()?.starts_with(ALFV_MAGIC);
    if is_alfv {
        read_alfv(&mut file)
    } else {
        read_csv(file)
    }
}

pub fn save_alfv(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_alfv(&mut out, m)?;
    out.flush()?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_csv(&mut out, m)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn alfv_layout() {
        let m = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.5]];
        let mut buf = Vec::new();
        write_alfv(&mut buf, &m).unwrap();
        assert_eq!(&buf[..4], b"ALFV");
        assert_eq!(&buf[4..8], &3u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 12 + 6 * 4);
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let err = read_csv("1,2\n3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    proptest! {
        #[test]
        fn alfv_round_trips_f32_values(vals in prop::collection::vec(-1e6f32..1e6, 1..40), cols in 1usize..5) {
            let rows = vals.len() / cols;
            prop_assume!(rows > 0);
            let data: Vec<f64> = vals[..rows * cols].iter().map(|&v| v as f64).collect();
            let m = Array2::from_shape_vec((rows, cols), data).unwrap();
            let mut buf = Vec::new();
            write_alfv(&mut buf, &m).unwrap();
            prop_assert_eq!(read_alfv(&mut buf.as_slice()).unwrap(), m.clone());
            let mut text = Vec::new();
            write_csv(&mut text, &m).unwrap();
            prop_assert_eq!(read_csv(text.as_slice()).unwrap(), m);
        }
    }
}
