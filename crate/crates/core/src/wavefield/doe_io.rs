//! DOE height-map files.
//!
//! Layout: eight newline-terminated ASCII header lines followed by `N*N`
//! little-endian `f32` heights in meters, row-major, top row first.
//!
//! ```text
//! ASDOE1
//! N <int>
//! pitch_u <float, m>
//! lambda <float, m>
//! eta <float>
//! levels <int>
//! min <float, m>
//! max <float, m>
//! ```
//!
//! `min`/`max` describe the stored data range and are informational on read.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{ImageBuffer, Luma};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::wavefield::field::{quantize_heights, DOEProfile};

pub const DOE_MAGIC: &str = "ASDOE1";

pub fn write_doe<T: Real>(path: impl AsRef<Path>, doe: &DOEProfile<T>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    write_doe_to(&mut w, doe)?;
    w.flush()?;
    Ok(())
}

pub fn write_doe_to<T: Real, W: Write>(w: &mut W, doe: &DOEProfile<T>) -> Result<()> {
    let h = doe.height();
    let min = h.iter().fold(f64::INFINITY, |m, v| m.min(v.as_f64()));
    let max = h.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    writeln!(w, "{DOE_MAGIC}")?;
    writeln!(w, "N {}", doe.n())?;
    writeln!(w, "pitch_u {:e}", doe.pitch_u().as_f64())?;
    writeln!(w, "lambda {:e}", doe.wavelength().as_f64())?;
    writeln!(w, "eta {}", doe.eta().as_f64())?;
    writeln!(w, "levels {}", doe.levels())?;
    writeln!(w, "min {min:e}")?;
    writeln!(w, "max {max:e}")?;
    for v in h.iter() {
        w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

fn header_value<'a>(line: &'a str, key: &str, path: &Path) -> Result<&'a str> {
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(v), None) if k == key => Ok(v),
        _ => Err(Error::format(path, format!("expected header line `{key} <value>`, got `{line}`"))),
    }
}

fn parse<V: std::str::FromStr>(s: &str, key: &str, path: &Path) -> Result<V> {
    s.parse()
        .map_err(|_| Error::format(path, format!("cannot parse {key} value `{s}`")))
}

pub fn read_doe<T: Real>(path: impl AsRef<Path>) -> Result<DOEProfile<T>> {
    let path = path.as_ref();
    let mut r = BufReader::new(crate::io::open_input(path)?);
    let mut lines = Vec::with_capacity(8);
    for _ in 0..8 {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::format(path, "truncated header"));
        }
        lines.push(line.trim_end().to_string());
    }
    if lines[0] != DOE_MAGIC {
        return Err(Error::format(path, format!("bad magic `{}`", lines[0])));
    }
    let n: usize = parse(header_value(&lines[1], "N", path)?, "N", path)?;
    let pitch: f64 = parse(header_value(&lines[2], "pitch_u", path)?, "pitch_u", path)?;
    let lambda: f64 = parse(header_value(&lines[3], "lambda", path)?, "lambda", path)?;
    let eta: f64 = parse(header_value(&lines[4], "eta", path)?, "eta", path)?;
    let levels: usize = parse(header_value(&lines[5], "levels", path)?, "levels", path)?;
    let _: f64 = parse(header_value(&lines[6], "min", path)?, "min", path)?;
    let _: f64 = parse(header_value(&lines[7], "max", path)?, "max", path)?;
    if n < 2 {
        return Err(Error::format(path, format!("N must be >= 2, got {n}")));
    }
    let mut raw = vec![0u8; n * n * 4];
    r.read_exact(&mut raw)
        .map_err(|_| Error::format(path, format!("expected {} bytes of height data", n * n * 4)))?;
    let data: Vec<T> = raw
        .chunks_exact(4)
        .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect();
    let height = Array2::from_shape_vec((n, n), data).expect("length checked");
    DOEProfile::new(height, T::of(eta), T::of(lambda), T::of(pitch), levels)
}

/// 16-bit grayscale preview of the quantized level indices, scaled so the
/// top level maps to 65535.
pub fn write_level_preview<T: Real>(path: impl AsRef<Path>, doe: &DOEProfile<T>) -> Result<()> {
    let q = quantize_heights(doe);
    let n = doe.n() as u32;
    let step = q.max_height() / T::of_usize(doe.levels());
    let top = (doe.levels() - 1) as f64;
    let img = ImageBuffer::<Luma<u16>, Vec<u16>>::from_fn(n, n, |x, y| {
        let k = (q.height()[[y as usize, x as usize]] / step).round().as_f64();
        Luma([(k / top * 65535.0).round() as u16])
    });
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_heights() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("doe.bin");
        let max = 850e-9 / 0.46;
        let h = Array2::from_shape_fn((8, 8), |(y, x)| ((y * 8 + x) as f64 / 64.0 * max) as f32 as f64);
        let doe = DOEProfile::new(h, 1.46, 850e-9, 1.25e-4, 16).unwrap();
        write_doe(&path, &doe).unwrap();
        let back: DOEProfile<f64> = read_doe(&path).unwrap();
        assert_eq!(back.n(), 8);
        assert_eq!(back.levels(), 16);
        assert!((back.eta() - 1.46).abs() < 1e-15);
        for (a, b) in back.height().iter().zip(doe.height()) {
            assert_eq!(*a as f32, *b as f32);
        }
        let bytes = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes[..40]);
        assert!(text.starts_with("ASDOE1\nN 8\n"));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, "NOPE\nN 2\npitch_u 1\nlambda 1\neta 1.5\nlevels 2\nmin 0\nmax 0\n").unwrap();
        assert!(matches!(read_doe::<f64>(&path), Err(Error::Format { .. })));
        std::fs::write(&path, "ASDOE1\nN 2\npitch_u 1\nlambda 1\neta 1.5\nlevels 2\nmin 0\nmax 0\n\0\0").unwrap();
        assert!(matches!(read_doe::<f64>(&path), Err(Error::Format { .. })));
    }
}
