//! Checksummed binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! `"MGRN1"` magic, u16 version, u32 entry count, then per entry: u16 name
//! length, name bytes, u8 rank, u32 extents, f32 payload. A trailing u64
//! FNV-1a checksum covers every preceding byte. Power-iteration buffers are
//! recognized by their `.sn_u` / `.sn_v` name suffix on load.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{LayerStack, ParamKind};
use crate::tensor::Scalar;

pub const MAGIC: &[u8; 5] = b"MGRN1";
pub const VERSION: u16 = 1;

/// FNV-1a 64-bit hash; also used for input fingerprints in run logs.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn save<T: Scalar>(path: &Path, stack: &LayerStack<T>) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(stack.len() as u32).to_le_bytes());
    for p in stack.entries() {
        let name = p.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Format(format!("parameter name too long: {}", p.name)));
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        if p.shape.len() > u8::MAX as usize {
            return Err(Error::Format(format!("rank too large for {}", p.name)));
        }
        buf.push(p.shape.len() as u8);
        for &e in &p.shape {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in &p.data {
            buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    let checksum = fnv1a64(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<LayerStack<T>> {
    let bytes = std::fs::read(path)?;
    load_bytes(&bytes)
}

pub fn load_bytes<T: Scalar>(bytes: &[u8]) -> Result<LayerStack<T>> {
    if bytes.len() < MAGIC.len() + 2 + 4 + 8 {
        return Err(Error::Format("checkpoint too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(Error::Format(format!(
            "checkpoint checksum mismatch: stored {stored:016x}, computed {computed:016x}"
        )));
    }
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > body.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 5)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().expect("2"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4")) as usize;
    let mut stack = LayerStack::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().expect("2")) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::Format("non-utf8 parameter name".into()))?;
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4")) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut pos, numel * 4)?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f64::from(f32::from_le_bytes(c.try_into().expect("4")))))
            .collect();
        let kind = if name.ends_with(".sn_u") || name.ends_with(".sn_v") {
            ParamKind::Buffer
        } else {
            ParamKind::Trainable
        };
        stack.push(&name, data, shape, kind);
    }
    if pos != body.len() {
        return Err(Error::Format("trailing bytes after checkpoint entries".into()));
    }
    Ok(stack)
}

/// Pack a generator and discriminator into one checkpoint under `gen.` /
/// `disc.` prefixes.
pub fn save_gan_pair<T: Scalar>(path: &Path, gen: &LayerStack<T>, disc: &LayerStack<T>) -> Result<()> {
    let mut combined = LayerStack::new();
    gen.copy_prefixed_into("gen.", &mut combined);
    disc.copy_prefixed_into("disc.", &mut combined);
    save(path, &combined)
}

/// Extract one side of a packed GAN checkpoint (or accept an unprefixed
/// stack when `prefix` entries are absent and `prefix == "gen."`).
pub fn load_gan_side<T: Scalar>(path: &Path, prefix: &str) -> Result<LayerStack<T>> {
    let combined = load::<T>(path)?;
    let side = combined.strip_prefix(prefix);
    if !side.is_empty() {
        return Ok(side);
    }
    if prefix == "gen." && !combined.is_empty() && !combined.entries()[0].name.starts_with("disc.") {
        return Ok(combined);
    }
    Err(Error::Format(format!("checkpoint has no entries under prefix {prefix}")))
}
