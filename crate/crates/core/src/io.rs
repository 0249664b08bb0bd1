//! Raster file formats: PFM for floats, 1-bit PGM for masks, 8-bit PNG
//! previews.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Decoded PFM raster; `data` is `[channels, height, width]`, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub data: Array3<f32>,
}

impl Pfm {
    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    /// First channel, or the channel mean for colour files.
    pub fn to_gray<T: Real>(&self) -> Array2<T> {
        let c = self.channels();
        let (h, w) = (self.data.shape()[1], self.data.shape()[2]);
        Array2::from_shape_fn((h, w), |(y, x)| {
            let s: f64 = (0..c).map(|k| self.data[[k, y, x]] as f64).sum();
            T::of(s / c as f64)
        })
    }
}

fn read_token<R: BufRead>(r: &mut R, path: &Path) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let mut b = [0u8; 1];
        if r.read(&mut b)? == 0 {
            break;
        }
        if b[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(b[0]);
    }
    if tok.is_empty() {
        return Err(Error::format(path, "truncated header"));
    }
    String::from_utf8(tok).map_err(|_| Error::format(path, "non-ASCII header"))
}

/// Opens an input file; a missing file becomes [`Error::Missing`].
pub fn open_input(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing { path: path.to_path_buf(), hint: "no such file".into() },
        _ => Error::Io(e),
    })
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Pfm> {
    let path = path.as_ref();
    let mut r = BufReader::new(open_input(path)?);
    let magic = read_token(&mut r, path)?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::format(path, format!("bad PFM magic `{other}`"))),
    };
    let width: usize = read_token(&mut r, path)?
        .parse()
        .map_err(|_| Error::format(path, "bad width"))?;
    let height: usize = read_token(&mut r, path)?
        .parse()
        .map_err(|_| Error::format(path, "bad height"))?;
    let scale: f64 = read_token(&mut r, path)?
        .parse()
        .map_err(|_| Error::format(path, "bad scale"))?;
    if width == 0 || height == 0 || scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, "invalid dimensions or scale"));
    }
    let little = scale < 0.0;
    let mut raw = vec![0u8; width * height * channels * 4];
    r.read_exact(&mut raw)
        .map_err(|_| Error::format(path, "truncated raster"))?;
    let mut data = Array3::zeros((channels, height, width));
    for (i, b) in raw.chunks_exact(4).enumerate() {
        let bytes = [b[0], b[1], b[2], b[3]];
        let v = if little { f32::from_le_bytes(bytes) } else { f32::from_be_bytes(bytes) };
        let c = i % channels;
        let x = (i / channels) % width;
        // rows are stored bottom to top
        let y = height - 1 - i / (channels * width);
        data[[c, y, x]] = v;
    }
    Ok(Pfm { data })
}

/// Writes a single-channel little-endian PFM (scale −1.0).
pub fn write_pfm<T: Real>(path: impl AsRef<Path>, grid: &Array2<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    let (h, wd) = grid.dim();
    write!(w, "Pf\n{wd} {h}\n-1.0\n")?;
    for y in (0..h).rev() {
        for x in 0..wd {
            w.write_all(&(grid[[y, x]].as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_pfm_gray<T: Real>(path: impl AsRef<Path>) -> Result<Array2<T>> {
    Ok(read_pfm(path)?.to_gray())
}

/// Binary mask as a PGM with maxval 1.
pub fn write_mask_pgm(path: impl AsRef<Path>, mask: &Array2<bool>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    let (h, wd) = mask.dim();
    write!(w, "P5\n{wd} {h}\n1\n")?;
    let bytes: Vec<u8> = mask.iter().map(|&b| b as u8).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<Array2<bool>> {
    let path = path.as_ref();
    let mut r = BufReader::new(open_input(path)?);
    if read_token(&mut r, path)? != "P5" {
        return Err(Error::format(path, "expected binary PGM (P5)"));
    }
    let w: usize = read_token(&mut r, path)?.parse().map_err(|_| Error::format(path, "bad width"))?;
    let h: usize = read_token(&mut r, path)?.parse().map_err(|_| Error::format(path, "bad height"))?;
    let maxval: u32 = read_token(&mut r, path)?.parse().map_err(|_| Error::format(path, "bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(path, "only 8-bit PGM masks are supported"));
    }
    let mut raw = vec![0u8; w * h];
    r.read_exact(&mut raw).map_err(|_| Error::format(path, "truncated raster"))?;
    Ok(Array2::from_shape_vec((h, w), raw.into_iter().map(|v| v != 0).collect()).expect("length checked"))
}

/// Linear 8-bit grayscale preview of `grid` over `[lo, hi]` (defaults to the
/// data range).
pub fn gray_preview<T: Real>(grid: &Array2<T>, range: Option<(f64, f64)>) -> GrayImage {
    let (lo, hi) = range.unwrap_or_else(|| data_range(grid));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (h, w) = grid.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = (grid[[y as usize, x as usize]].as_f64() - lo) / span;
        Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

pub fn save_gray_preview<T: Real>(path: impl AsRef<Path>, grid: &Array2<T>, range: Option<(f64, f64)>) -> Result<()> {
    gray_preview(grid, range).save(path)?;
    Ok(())
}

/// Colour-mapped 8-bit preview (blue → red) for disparity and error maps.
pub fn color_preview<T: Real>(grid: &Array2<T>, range: Option<(f64, f64)>) -> RgbImage {
    let (lo, hi) = range.unwrap_or_else(|| data_range(grid));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (h, w) = grid.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let t = ((grid[[y as usize, x as usize]].as_f64() - lo) / span).clamp(0.0, 1.0);
        Rgb(jet(t))
    })
}

pub fn save_color_preview<T: Real>(path: impl AsRef<Path>, grid: &Array2<T>, range: Option<(f64, f64)>) -> Result<()> {
    color_preview(grid, range).save(path)?;
    Ok(())
}

fn jet(t: f64) -> [u8; 3] {
    let r = (1.5 - (4.0 * t - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * t - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * t - 1.0).abs()).clamp(0.0, 1.0);
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

fn data_range<T: Real>(grid: &Array2<T>) -> (f64, f64) {
    grid.iter()
        .map(|v| v.as_f64())
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Loads an 8- or 16-bit image as RGB in `[0, 1]`, shape `[3, h, w]`.
pub fn read_rgb(path: impl AsRef<Path>) -> Result<Array3<f64>> {
    let path = path.as_ref();
    open_input(path)?;
    let img = image::open(path)?.to_rgb32f();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        img.get_pixel(x as u32, y as u32)[c] as f64
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pfm");
        let g = Array2::from_shape_fn((5, 7), |(y, x)| (y as f32 * 1.37 - x as f32 * 0.11).exp());
        write_pfm(&path, &g.mapv(|v| v as f64)).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(back.channels(), 1);
        let gray: Array2<f64> = back.to_gray();
        for (a, b) in gray.iter().zip(g.iter()) {
            assert_eq!(*a as f32, *b);
        }
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"Pf\n7 5\n-1.0\n"));
    }

    #[test]
    fn pfm_big_endian_and_color() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pfm");
        let mut bytes = b"PF\n1 2\n1.0\n".to_vec();
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let p = read_pfm(&path).unwrap();
        assert_eq!(p.channels(), 3);
        // bottom row stored first
        assert_eq!(p.data[[0, 1, 0]], 1.0);
        assert_eq!(p.data[[2, 0, 0]], 6.0);
    }

    #[test]
    fn malformed_pfm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        std::fs::write(&path, b"P6\n1 1\n-1\n0000").unwrap();
        assert!(matches!(read_pfm(&path), Err(Error::Format { .. })));
        std::fs::write(&path, b"Pf\n4 4\n-1\n0000").unwrap();
        assert!(matches!(read_pfm(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let m = Array2::from_shape_fn((3, 4), |(y, x)| (x + y) % 2 == 0);
        write_mask_pgm(&path, &m).unwrap();
        assert_eq!(read_mask_pgm(&path).unwrap(), m);
    }
}
