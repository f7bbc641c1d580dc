//! Binary person-sequence files.
//!
//! Layout (little-endian): magic `PSEQ`, `u32` frame count, then per frame a
//! `u64` timestamp in microseconds, a `u32` point count and `count × 3` `f32`
//! coordinates.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{PersonSequence, PointCloud};

pub const MAGIC: &[u8; 4] = b"PSEQ";

pub fn encode_sequence(seq: &PersonSequence) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    for (frame, &t) in seq.frames().iter().zip(seq.timestamps()) {
        let micros = (t * 1e6).round().max(0.0) as u64;
        out.extend_from_slice(&micros.to_le_bytes());
        out.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        for p in frame.points() {
            for c in p {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode_sequence(bytes: &[u8], identity: &str, path: &Path) -> Result<PersonSequence> {
    let truncated = || Error::format(path, "truncated sequence file");
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(Error::format(path, "missing PSEQ magic"));
    }
    let frames = r.u32().ok_or_else(truncated)? as usize;
    let mut clouds = Vec::with_capacity(frames);
    let mut stamps = Vec::with_capacity(frames);
    for _ in 0..frames {
        let micros = r.u64().ok_or_else(truncated)?;
        let count = r.u32().ok_or_else(truncated)? as usize;
        let mut pts = Vec::with_capacity(count);
        for _ in 0..count {
            let x = r.f32().ok_or_else(truncated)?;
            let y = r.f32().ok_or_else(truncated)?;
            let z = r.f32().ok_or_else(truncated)?;
            pts.push([x as f64, y as f64, z as f64]);
        }
        clouds.push(PointCloud::new(pts).map_err(|e| Error::format(path, e.to_string()))?);
        stamps.push(micros as f64 * 1e-6);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last frame"));
    }
    PersonSequence::new(identity, clouds, stamps).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_sequence(path: &Path, seq: &PersonSequence) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_sequence(seq)).map_err(|e| Error::io(path, e))
}

pub fn read_sequence(path: &Path, identity: &str) -> Result<PersonSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_sequence(&bytes, identity, path)
}
