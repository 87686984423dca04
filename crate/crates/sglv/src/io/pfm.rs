//! Portable float map (PFM) reader/writer.
//!
//! Always written little-endian (scale -1.0), scanlines bottom-to-top per
//! the PFM convention. `PF` is 3-channel, `Pf` single-channel.

use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub struct PfmData {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, top row first (scanline order is undone on read).
    pub data: Vec<f64>,
}

pub fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f64]) -> Result<()> {
    if channels != 1 && channels != 3 {
        return Err(Error::invalid("PFM supports 1 or 3 channels"));
    }
    if data.len() != width * height * channels {
        return Err(Error::shape("PFM data length"));
    }
    let f = File::create(path)?;
    let mut w = BufWriter::new(f);
    let header = if channels == 3 { "PF" } else { "Pf" };
    write!(w, "{header}\n{width} {height}\n-1.0\n")?;
    // bottom-to-top scanlines
    for row in (0..height).rev() {
        let start = row * width * channels;
        for v in &data[start..start + width * channels] {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<PfmData> {
    let f = File::open(path)?;
    let mut r = BufReader::new(f);

    let mut header = String::new();
    r.read_line(&mut header)?;
    let channels = match header.trim() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::Malformed(format!("bad PFM header {other:?}"))),
    };

    let mut dims = String::new();
    r.read_line(&mut dims)?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::Malformed("bad PFM dimensions line".into()));
    }
    let width: usize = parts[0]
        .parse()
        .map_err(|_| Error::Malformed(format!("bad PFM width {:?}", parts[0])))?;
    let height: usize = parts[1]
        .parse()
        .map_err(|_| Error::Malformed(format!("bad PFM height {:?}", parts[1])))?;

    let mut scale_line = String::new();
    r.read_line(&mut scale_line)?;
    let scale: f64 = scale_line
        .trim()
        .parse()
        .map_err(|_| Error::Malformed(format!("bad PFM scale {:?}", scale_line.trim())))?;
    let little_endian = scale < 0.0;

    let n = width * height * channels;
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Malformed("PFM payload truncated".into()))?;

    let mut data = vec![0.0f64; n];
    let row_len = width * channels;
    for (i, chunk) in buf.chunks_exact(4).enumerate() {
        let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        };
        // undo the bottom-to-top scanline order
        let src_row = i / row_len;
        let col = i % row_len;
        let dst_row = height - 1 - src_row;
        data[dst_row * row_len + col] = v as f64;
    }
    Ok(PfmData { width, height, channels, data })
}
