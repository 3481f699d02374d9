//! Image, map and checkpoint files.
//!
//! * PNG: 8-bit gray, gray+alpha, RGB or RGBA in; 8-bit RGB (or gray for a
//!   single channel) out. Values map to `[0, 1]` by `v / 255`.
//! * PFM: single-channel `Pf`, little-endian (negative scale), rows stored
//!   bottom to top.
//! * Checkpoint: `IFAN` magic, `u32` version, the network config as
//!   `key = value` text, then named f64 tensors.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config;
use crate::error::{Error, Result};
use crate::net::{NetworkConfig, Params};
use crate::tensor::{Shape4, Tensor4};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IFAN";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Decode a PNG to a (1, 3, h, w) tensor in `[0, 1]`; gray images are
/// replicated across channels and alpha is dropped.
pub fn read_png(path: impl AsRef<Path>) -> Result<Tensor4> {
    let path = path.as_ref();
    let mut decoder = png::Decoder::new(BufReader::new(open(path)?));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let bad = |e: png::DecodingError| Error::malformed(path, e.to_string());
    let mut reader = decoder.read_info().map_err(bad)?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::malformed(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::malformed(path, "unexpanded palette image")),
    };
    let mut out = Tensor4::zeros((1, 3, h, w));
    for c in 0..3 {
        let src = if stride >= 3 { c } else { 0 };
        let plane = out.plane_mut(0, c);
        for (i, v) in plane.iter_mut().enumerate() {
            *v = buf[i * stride + src] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Quantise a value in `[0, 1]` (clamped) to 8 bits with round-half-up.
pub fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0) + 0.5).floor() as u8
}

/// Write a (1, 3, h, w) or (1, 1, h, w) tensor as an 8-bit PNG.
pub fn write_png(path: impl AsRef<Path>, img: &Tensor4) -> Result<()> {
    let path = path.as_ref();
    let s = img.shape();
    let color = match (s.n, s.c) {
        (1, 3) => png::ColorType::Rgb,
        (1, 1) => png::ColorType::Grayscale,
        _ => return Err(Error::Shape(format!("write_png expects (1, 3|1, h, w), got {s}"))),
    };
    let mut bytes = vec![0u8; s.c * s.plane()];
    for c in 0..s.c {
        for (i, &v) in img.plane(0, c).iter().enumerate() {
            bytes[i * s.c + c] = quantize(v);
        }
    }
    let mut enc = png::Encoder::new(create(path)?, s.w as u32, s.h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let fail = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::malformed(path, other.to_string()),
    };
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(&bytes).map_err(fail)?;
    writer.finish().map_err(fail)
}

/// Write a single-channel map (1, 1, h, w) as little-endian `Pf`.
pub fn write_pfm(path: impl AsRef<Path>, map: &Tensor4) -> Result<()> {
    let path = path.as_ref();
    let s = map.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::Shape(format!("write_pfm expects (1, 1, h, w), got {s}")));
    }
    let mut out = create(path)?;
    let mut bytes = format!("Pf\n{} {}\n-1.0\n", s.w, s.h).into_bytes();
    let plane = map.plane(0, 0);
    for y in (0..s.h).rev() {
        for &v in &plane[y * s.w..][..s.w] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Tensor4> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::malformed(path, msg.to_string());
    // three whitespace-terminated header tokens after the magic line
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    pos += 1; // single whitespace byte ends the header
    if fields[0] != "Pf" {
        return Err(bad("only single-channel Pf maps are supported"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| bad("bad scale"))?;
    let little = scale < 0.0;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != 4 * w * h {
        return Err(bad(&format!("expected {} payload bytes, found {}", 4 * w * h, payload.len())));
    }
    let mut out = Tensor4::create((1, 1, h, w), crate::tensor::Init::Zeros)?;
    let plane = out.plane_mut(0, 0);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row, x) = (i / w, i % w);
        plane[(h - 1 - row) * w + x] = v as f64;
    }
    Ok(out)
}

/// Serialise config and parameters; the result is what
/// [`save_checkpoint`] writes.
pub fn encode_checkpoint(cfg: &NetworkConfig, params: &Params) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let echo = config::render_network(cfg);
    b.extend_from_slice(&(echo.len() as u64).to_le_bytes());
    b.extend_from_slice(echo.as_bytes());
    b.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, t) in params.iter() {
        b.extend_from_slice(&(name.len() as u64).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        b.push(DTYPE_F64);
        for d in t.shape().dims() {
            b.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &NetworkConfig, params: &Params) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    out.write_all(&encode_checkpoint(cfg, params))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("length {v} out of range")))
    }
}

/// Parse checkpoint bytes into the stored config and parameters.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(NetworkConfig, Params)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic, not an IFAN checkpoint".into()));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let n = c.len()?;
    let echo = std::str::from_utf8(c.take(n)?)
        .map_err(|_| Error::Format("config echo is not UTF-8".into()))?;
    let cfg = config::parse_network(echo).map_err(|e| Error::Format(format!("config echo: {e}")))?;
    let count = c.len()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let n = c.len()?;
        let name = std::str::from_utf8(c.take(n)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = c.take(1)?[0];
        if dtype != DTYPE_F64 {
            return Err(Error::Format(format!("tensor `{name}`: unknown dtype tag {dtype}")));
        }
        let dims = [c.len()?, c.len()?, c.len()?, c.len()?];
        let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3]);
        shape.validate().map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        let payload = c.take(shape.len().checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        entries.push((name, Tensor4::from_vec(shape, data)?));
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let params = Params::from_entries(entries).map_err(|e| Error::Format(e.to_string()))?;
    Ok((cfg, params))
}

/// Read a checkpoint without a compatibility check.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(NetworkConfig, Params)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Read a checkpoint and require its config to match `expected`.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: &NetworkConfig) -> Result<Params> {
    let (found, params) = read_checkpoint(path)?;
    if let Some((field, f, e)) = config::first_difference(&found, expected) {
        return Err(Error::Compat {
            field,
            found: f,
            expected: e,
        });
    }
    Ok(params)
}
