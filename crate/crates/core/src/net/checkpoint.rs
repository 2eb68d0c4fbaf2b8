//! Checkpoint files: `UVMC`, u32 tensor count, then per tensor a u16 name
//! length, the UTF-8 name and a UVMT record. Integers are little-endian.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::io::{encode_tensor, ByteReader};
use crate::tensor::Tensor;

use super::{UvmNetConfig, UvmNetParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UVMC";

/// Writes named tensors in order.
pub fn write_checkpoint<'a, I>(tensors: I, path: impl AsRef<Path>) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
{
    let items: Vec<_> = tensors.into_iter().collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (name, t) in items {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| Error::Schema(format!("parameter name `{name}` is longer than 65535 bytes")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(bytes);
        encode_tensor(t, &mut buf);
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn save_checkpoint(params: &UvmNetParams<Tensor<f32>>, path: impl AsRef<Path>) -> Result<()> {
    let named = params.named();
    write_checkpoint(named.iter().map(|(n, t)| (n.as_str(), *t)), path)
}

/// Reads every named tensor. Nothing is returned unless the whole file
/// parses.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<IndexMap<String, Tensor<f32>>> {
    let buf = fs::read(path)?;
    let mut r = ByteReader::new(&buf);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let count = r.u32()?;
    let mut out = IndexMap::new();
    for _ in 0..count {
        let at = r.offset();
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format {
                offset: at + 2,
                msg: "parameter name is not valid UTF-8".into(),
            })?
            .to_string();
        let t = r.tensor()?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::Format {
                offset: at,
                msg: format!("duplicate parameter `{name}`"),
            });
        }
    }
    if !r.is_at_end() {
        return Err(r.format_err("trailing bytes after the last tensor"));
    }
    Ok(out)
}

/// Loads a checkpoint for `cfg`, checking names and shapes against the
/// layout `cfg` implies.
pub fn load_checkpoint(path: impl AsRef<Path>, cfg: &UvmNetConfig) -> Result<UvmNetParams<Tensor<f32>>> {
    let mut stored = read_checkpoint(path)?;
    let template = skeleton(cfg)?;
    let params = template.try_map(&mut |name, shape| {
        let t = stored
            .swap_remove(&name)
            .ok_or_else(|| Error::Schema(format!("checkpoint has no tensor `{name}` (expected shape {shape:?})")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Schema(format!(
                "tensor `{name}` has shape {:?}, configuration expects {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    })?;
    if let Some(extra) = stored.keys().next() {
        return Err(Error::Schema(format!("unknown parameter `{extra}` in checkpoint")));
    }
    Ok(params)
}

/// Parameter shapes implied by `cfg`.
fn skeleton(cfg: &UvmNetConfig) -> Result<UvmNetParams<Vec<usize>>> {
    // shapes do not depend on the drawn values; a fixed seed keeps this cheap
    // enough and avoids a second description of the layout
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let p = UvmNetParams::<Tensor<f32>>::init(cfg, &mut rng)?;
    p.try_map(&mut |_, t| Ok(t.shape().to_vec()))
}
