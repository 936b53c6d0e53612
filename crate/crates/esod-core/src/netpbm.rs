//! Minimal Netpbm reader/writer: PGM (P2/P5) masks and PPM (P3/P6) images.
//!
//! No codec dependencies; this covers exactly the formats the pipeline
//! exchanges on disk. Samples wider than 8 bits use the standard big-endian
//! two-byte encoding.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// A decoded Netpbm raster; `samples` is row-major, `channels` interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub channels: usize,
    pub samples: Vec<u16>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Pulls the next whitespace-delimited header token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return Err(format_err("unexpected end of header"));
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(token: &[u8], what: &str) -> Result<u64> {
    let s = std::str::from_utf8(token).map_err(|_| format_err(format!("non-ASCII {what}")))?;
    s.parse::<u64>().map_err(|_| format_err(format!("invalid {what}: {s:?}")))
}

fn read_header(bytes: &[u8], pos: &mut usize) -> Result<(usize, usize, u16)> {
    let width = parse_number(next_token(bytes, pos)?, "width")?;
    let height = parse_number(next_token(bytes, pos)?, "height")?;
    let maxval = parse_number(next_token(bytes, pos)?, "maxval")?;
    if width == 0 || height == 0 {
        return Err(format_err("dimensions must be positive"));
    }
    if width > u32::MAX as u64 || height > u32::MAX as u64 {
        return Err(format_err("dimension overflow"));
    }
    let cells = width.checked_mul(height).ok_or_else(|| format_err("dimension overflow"))?;
    if cells > (1u64 << 28) {
        return Err(format_err("dimension overflow"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(format!("maxval {maxval} out of range 1..=65535")));
    }
    Ok((width as usize, height as usize, maxval as u16))
}

fn read_ascii_samples(bytes: &[u8], pos: &mut usize, count: usize, maxval: u16) -> Result<Vec<u16>> {
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let v = parse_number(next_token(bytes, pos)?, "sample")?;
        if v > maxval as u64 {
            return Err(format_err(format!("sample {v} exceeds maxval {maxval}")));
        }
        samples.push(v as u16);
    }
    Ok(samples)
}

fn read_binary_samples(bytes: &[u8], pos: usize, count: usize, maxval: u16) -> Result<Vec<u16>> {
    let wide = maxval > 255;
    let need = count * if wide { 2 } else { 1 };
    let data = bytes.get(pos..pos + need).ok_or_else(|| format_err("truncated pixel data"))?;
    let mut samples = Vec::with_capacity(count);
    if wide {
        for pair in data.chunks_exact(2) {
            samples.push(u16::from_be_bytes([pair[0], pair[1]]));
        }
    } else {
        samples.extend(data.iter().map(|&b| b as u16));
    }
    if let Some(&bad) = samples.iter().find(|&&s| s > maxval) {
        return Err(format_err(format!("sample {bad} exceeds maxval {maxval}")));
    }
    Ok(samples)
}

fn read_raster(path: &Path, magics: [&[u8]; 2], channels: usize) -> Result<Raster> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;
    let magic = next_token(&bytes, &mut pos)?.to_vec();
    let (width, height, maxval) = read_header(&bytes, &mut pos)?;
    let count = width * height * channels;
    let samples = if magic == magics[0] {
        read_ascii_samples(&bytes, &mut pos, count, maxval)?
    } else if magic == magics[1] {
        // exactly one whitespace byte separates maxval from the raster
        read_binary_samples(&bytes, pos + 1, count, maxval)?
    } else {
        return Err(format_err(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    };
    Ok(Raster { width, height, maxval, channels, samples })
}

/// Reads a PGM (P2 ASCII or P5 binary) grayscale image.
pub fn read_pgm(path: &Path) -> Result<Raster> {
    read_raster(path, [b"P2", b"P5"], 1)
}

/// Reads a PPM (P3 ASCII or P6 binary) RGB image.
pub fn read_ppm(path: &Path) -> Result<Raster> {
    read_raster(path, [b"P3", b"P6"], 3)
}

/// Writes a binary PGM (P5).
pub fn write_pgm(path: &Path, width: usize, height: usize, maxval: u16, samples: &[u16]) -> Result<()> {
    if samples.len() != width * height {
        return Err(Error::shape(format!(
            "sample length {} != {width}x{height}",
            samples.len()
        )));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P5\n{width} {height}\n{maxval}\n")?;
    if maxval > 255 {
        for &s in samples {
            out.write_all(&s.to_be_bytes())?;
        }
    } else {
        let bytes: Vec<u8> = samples.iter().map(|&s| s as u8).collect();
        out.write_all(&bytes)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a binary PPM (P6) from interleaved 8-bit RGB.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::shape(format!(
            "rgb length {} != {width}x{height}x3",
            rgb.len()
        )));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P6\n{width} {height}\n255\n")?;
    out.write_all(rgb)?;
    out.flush()?;
    Ok(())
}
