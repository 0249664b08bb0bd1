//! Binary training checkpoints.
//!
//! Little-endian layout, version 1:
//!
//! ```text
//! magic        8 bytes  "ASCKPT01"
//! version      u32
//! iteration    u64
//! seed         u64
//! n            u32      DOE side
//! heights      n*n f64  normalized, row-major
//! matcher      u8 mode (0 identity, 1 patch, 2 learned-linear),
//!              u32 patch_size, u32 window, f64 temperature,
//!              u32 max_disparity, u8 standardize, u8 trinocular
//! encoders     camera then illumination:
//!              u32 layers, per layer u32 out, u32 in, u32 k,
//!              out*in*k*k f64 kernel, out f64 bias
//! moments      DOE group then matcher group:
//!              f64 lr, f64 beta1, f64 beta2, f64 eps, u64 t, u64 len,
//!              len f64 first moment, len f64 second moment
//! history      u64 count, per record u64 iteration, f64 loss,
//!              f64 alpha, f64 beta, f64 noise_sigma
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array4};

use crate::error::{Error, Result};
use crate::matcher::{ConvLayer, Encoder, FeatureMode, MatcherParams};
use crate::optimize::adam::Adam;
use crate::optimize::joint::{LossRecord, OptimState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ASCKPT01";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("{v} does not fit the checkpoint field")))?;
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) -> Result<()> {
        vs.into_iter().try_for_each(|v| self.f64(*v))
    }
}

struct Reader<'p, R: Read> {
    inner: R,
    path: &'p Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const K: usize>(&mut self) -> Result<[u8; K]> {
        let mut b = [0u8; K];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| Error::format(self.path, "checkpoint is truncated"))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, len: usize) -> Result<Vec<f64>> {
        // a corrupt length would otherwise allocate unbounded memory up front
        if len > 1 << 28 {
            return Err(Error::format(self.path, format!("implausible array length {len}")));
        }
        (0..len).map(|_| self.f64()).collect()
    }
    fn bad(&self, reason: impl Into<String>) -> Error {
        Error::format(self.path, reason)
    }
}

fn mode_code(mode: FeatureMode) -> u8 {
    match mode {
        FeatureMode::Identity => 0,
        FeatureMode::Patch => 1,
        FeatureMode::LearnedLinear => 2,
    }
}

fn write_encoder<W: Write>(w: &mut Writer<W>, enc: &Encoder<f64>) -> Result<()> {
    w.u32(enc.layers.len())?;
    for l in &enc.layers {
        let (o, i, k, _) = l.kernel.dim();
        w.u32(o)?;
        w.u32(i)?;
        w.u32(k)?;
        w.f64s(l.kernel.iter())?;
        w.f64s(l.bias.iter())?;
    }
    Ok(())
}

fn read_encoder<R: Read>(r: &mut Reader<'_, R>) -> Result<Encoder<f64>> {
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let (o, i, k) = (r.u32()?, r.u32()?, r.u32()?);
        let kernel = Array4::from_shape_vec((o, i, k, k), r.f64s(o * i * k * k)?).map_err(|e| r.bad(e.to_string()))?;
        let bias = Array1::from(r.f64s(o)?);
        layers.push(ConvLayer { kernel, bias });
    }
    Ok(Encoder { layers })
}

fn write_adam<W: Write>(w: &mut Writer<W>, a: &Adam) -> Result<()> {
    w.f64(a.lr)?;
    w.f64(a.beta1)?;
    w.f64(a.beta2)?;
    w.f64(a.eps)?;
    w.u64(a.t)?;
    w.u64(a.m.len() as u64)?;
    w.f64s(a.m.iter())?;
    w.f64s(a.v.iter())
}

fn read_adam<R: Read>(r: &mut Reader<'_, R>) -> Result<Adam> {
    let (lr, beta1, beta2, eps, t) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.u64()?);
    let len = r.u64()? as usize;
    let m = r.f64s(len)?;
    let v = r.f64s(len)?;
    Ok(Adam { lr, beta1, beta2, eps, m, v, t })
}

pub fn write_checkpoint_to<W: Write>(out: W, state: &OptimState) -> Result<()> {
    let mut w = Writer(out);
    w.0.write_all(CHECKPOINT_MAGIC)?;
    w.u32(CHECKPOINT_VERSION as usize)?;
    w.u64(state.iteration as u64)?;
    w.u64(state.seed)?;
    let (n, n2) = state.heights.dim();
    if n != n2 {
        return Err(Error::Shape(format!("heights must be square, got {n}x{n2}")));
    }
    w.u32(n)?;
    w.f64s(state.heights.iter())?;
    let m = &state.matcher;
    w.u8(mode_code(m.mode))?;
    w.u32(m.patch_size)?;
    w.u32(m.window)?;
    w.f64(m.temperature)?;
    w.u32(m.max_disparity)?;
    w.u8(m.standardize as u8)?;
    w.u8(m.trinocular as u8)?;
    write_encoder(&mut w, &m.camera)?;
    write_encoder(&mut w, &m.illumination)?;
    write_adam(&mut w, &state.doe_moments)?;
    write_adam(&mut w, &state.matcher_moments)?;
    w.u64(state.history.len() as u64)?;
    for rec in &state.history {
        w.u64(rec.iteration as u64)?;
        w.f64s([rec.loss, rec.alpha, rec.beta, rec.noise_sigma].iter())?;
    }
    Ok(w.0.flush()?)
}

pub fn save_checkpoint(path: impl AsRef<Path>, state: &OptimState) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint_to(&mut buf, state)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_checkpoint_from<R: Read>(input: R, path: &Path) -> Result<OptimState> {
    let mut r = Reader { inner: input, path };
    if &r.bytes::<8>()? != CHECKPOINT_MAGIC {
        return Err(r.bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(r.bad(format!("unsupported checkpoint version {version}")));
    }
    let iteration = r.u64()? as usize;
    let seed = r.u64()?;
    let n = r.u32()?;
    if n > 1 << 14 {
        return Err(r.bad(format!("implausible DOE size {n}")));
    }
    let heights = Array2::from_shape_vec((n, n), r.f64s(n * n)?).map_err(|e| r.bad(e.to_string()))?;
    let mode = match r.u8()? {
        0 => FeatureMode::Identity,
        1 => FeatureMode::Patch,
        2 => FeatureMode::LearnedLinear,
        other => return Err(r.bad(format!("unknown matcher mode code {other}"))),
    };
    let mut matcher = MatcherParams::new(mode, 1);
    matcher.patch_size = r.u32()?;
    matcher.window = r.u32()?;
    matcher.temperature = r.f64()?;
    matcher.max_disparity = r.u32()?;
    matcher.standardize = r.u8()? != 0;
    matcher.trinocular = r.u8()? != 0;
    matcher.camera = read_encoder(&mut r)?;
    matcher.illumination = read_encoder(&mut r)?;
    let doe_moments = read_adam(&mut r)?;
    let matcher_moments = read_adam(&mut r)?;
    let count = r.u64()? as usize;
    if count != iteration {
        return Err(r.bad(format!("history holds {count} records for iteration {iteration}")));
    }
    let mut history = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let it = r.u64()? as usize;
        let v = r.f64s(4)?;
        history.push(LossRecord { iteration: it, loss: v[0], alpha: v[1], beta: v[2], noise_sigma: v[3] });
    }
    if doe_moments.len() != n * n {
        return Err(r.bad("DOE moment buffers do not match the height grid"));
    }
    Ok(OptimState { heights, matcher, doe_moments, matcher_moments, iteration, history, seed })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<OptimState> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing {
            path: path.to_path_buf(),
            hint: "produce it with `activestereo optimize`".into(),
        },
        _ => Error::Io(e),
    })?;
    read_checkpoint_from(std::io::BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> OptimState {
        let matcher = MatcherParams::learned(12, 3, 3, 4);
        let nm = matcher.camera.num_values() * 2;
        let mut doe_moments = Adam::new(16, 0.02);
        doe_moments.step(&mut [0.0; 16], &[0.5; 16]);
        OptimState {
            heights: Array2::from_shape_fn((4, 4), |(y, x)| (y * 4 + x) as f64 / 17.0),
            matcher,
            doe_moments,
            matcher_moments: Adam::new(nm, 0.01),
            iteration: 2,
            history: vec![
                LossRecord { iteration: 0, loss: 0.75, alpha: 0.0, beta: 1.5, noise_sigma: 0.02 },
                LossRecord { iteration: 1, loss: 0.5, alpha: 0.1, beta: 1.2, noise_sigma: 0.02 },
            ],
            seed: 99,
        }
    }

    #[test]
    fn round_trip() {
        let s = state();
        let mut buf = Vec::new();
        write_checkpoint_to(&mut buf, &s).unwrap();
        let back = read_checkpoint_from(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn truncation_and_magic() {
        let mut buf = Vec::new();
        write_checkpoint_to(&mut buf, &state()).unwrap();
        for cut in [4, 20, buf.len() - 1] {
            assert!(matches!(read_checkpoint_from(&buf[..cut], Path::new("x")), Err(Error::Format { .. })));
        }
        buf[0] = b'X';
        assert!(matches!(read_checkpoint_from(buf.as_slice(), Path::new("x")), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_file_names_producer() {
        let err = load_checkpoint("/nonexistent/run.ckpt").unwrap_err();
        assert!(err.to_string().contains("activestereo optimize"), "{err}");
    }
}
