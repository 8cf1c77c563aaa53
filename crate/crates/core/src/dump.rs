//! Raw sample dumps: plain text (one value per line) or binary
//! (`BPIRE001` magic followed by little-endian `u64`s).

use std::io::{self, BufRead, Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BPIRE001";

pub fn write_text<W: Write>(mut w: W, values: &[u64]) -> io::Result<()> {
    for v in values {
        writeln!(w, "{v}")?;
    }
    w.flush()
}

/// Real-valued samples (perpetuities) in shortest round-trip decimal form.
pub fn write_text_f64<W: Write>(mut w: W, values: &[f64]) -> io::Result<()> {
    for v in values {
        writeln!(w, "{v:?}")?;
    }
    w.flush()
}

pub fn write_binary<W: Write>(mut w: W, values: &[u64]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

/// Reads either format, sniffing the magic header.
pub fn read_dump<R: Read>(mut r: R) -> Result<Vec<u64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Format(e.to_string()))?;
    if let Some(body) = bytes.strip_prefix(MAGIC.as_slice()) {
        if body.len() % 8 != 0 {
            return Err(Error::Format(format!(
                "binary body of {} bytes is not a multiple of 8",
                body.len()
            )));
        }
        return Ok(body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect());
    }
    let mut out = Vec::new();
    for (i, line) in bytes.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse().map_err(|_| {
            Error::Format(format!(
                "line {}: `{line}` is not an unsigned integer",
                i + 1
            ))
        })?);
    }
    Ok(out)
}

pub fn read_text_f64<R: Read>(r: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(
            line.parse()
                .map_err(|_| Error::Format(format!("line {}: `{line}`", i + 1)))?,
        );
    }
    Ok(out)
}
