//! Binary files holding rendered view stacks.
//!
//! Layout (little-endian): magic `PDVS`, `u32` length of a JSON render
//! config, the JSON bytes, `u32` frame count, then the raw stack bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{DepthViewStack, RenderConfig};

pub const STACK_MAGIC: &[u8; 4] = b"PDVS";

pub fn encode_stack(stack: &DepthViewStack) -> Vec<u8> {
    let meta = serde_json::to_vec(&stack.meta).expect("render config serializes");
    let mut out = Vec::with_capacity(12 + meta.len() + stack.data.len());
    out.extend_from_slice(STACK_MAGIC);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(stack.frames as u32).to_le_bytes());
    out.extend_from_slice(&stack.data);
    out
}

pub fn decode_stack(bytes: &[u8], path: &Path) -> Result<DepthViewStack> {
    let bad = |reason: &str| Error::format(path, reason);
    if bytes.get(..4) != Some(STACK_MAGIC.as_slice()) {
        return Err(bad("missing PDVS magic"));
    }
    let u32_at = |pos: usize| -> Result<usize> {
        bytes
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| bad("truncated stack file"))
    };
    let meta_len = u32_at(4)?;
    let meta_bytes = bytes.get(8..8 + meta_len).ok_or_else(|| bad("truncated stack file"))?;
    let meta: RenderConfig = serde_json::from_slice(meta_bytes).map_err(|e| Error::json(path, e))?;
    let frames = u32_at(8 + meta_len)?;
    let data = &bytes[12 + meta_len..];
    if data.len() != meta.views * frames * meta.image_size * meta.image_size * 3 {
        return Err(bad("stack payload size does not match its header"));
    }
    Ok(DepthViewStack {
        meta,
        frames,
        data: data.to_vec(),
    })
}

pub fn write_stack(path: &Path, stack: &DepthViewStack) -> Result<()> {
    fs::write(path, encode_stack(stack)).map_err(|e| Error::io(path, e))
}

pub fn read_stack(path: &Path) -> Result<DepthViewStack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_stack(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let stack = DepthViewStack {
            meta: RenderConfig {
                views: 2,
                image_size: 4,
                ..RenderConfig::default()
            },
            frames: 3,
            data: (0..2 * 3 * 4 * 4 * 3).map(|i| (i % 251) as u8).collect(),
        };
        let bytes = encode_stack(&stack);
        let p = Path::new("mem");
        assert_eq!(decode_stack(&bytes, p).unwrap(), stack);
        assert!(decode_stack(&bytes[..bytes.len() - 1], p).is_err());
        assert!(decode_stack(b"PSEQ", p).is_err());
    }
}
