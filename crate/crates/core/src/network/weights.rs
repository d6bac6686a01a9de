//! Little-endian weights file:
//!
//! ```text
//! "AVDN" | u32 version | u32 tensor count
//! per tensor: u32 name length | name | u32 rank | u32 dims[rank] | f32 values
//! ```
//!
//! Tensors appear in layer order with names such as `conv1.w`,
//! `convres3.a.bn.scale`, `convres3.a.bn.mean` or `head.b`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"AVDN";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn write_weights<T: Scalar>(net: &Network<T>, mut out: impl Write) -> std::io::Result<()> {
    let tensors = net.tensors();
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.tensor.rank() as u32).to_le_bytes());
        for &d in t.tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.tensor.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
        buf.clear();
    }
    out.write_all(&buf)
}

pub fn save_weights<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    write_weights(net, &mut writer).map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| Error::WeightsTruncated(what.to_string()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a weights file into a network built from `spec`; names and
/// dimensions must match the spec's layer plan exactly.
pub fn read_weights(spec: &NetworkSpec, mut input: impl Read) -> Result<Network<f32>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<weights>", e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != WEIGHTS_MAGIC {
        return Err(Error::WeightsMagic {
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let version = cur.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::WeightsVersion(version));
    }
    let count = cur.u32("tensor count")? as usize;

    let mut net = Network::<f32>::new(spec)?;
    let mut targets = net.tensors_mut();
    if count != targets.len() {
        return Err(Error::WeightsCount {
            expected: targets.len(),
            found: count,
        });
    }
    for (index, target) in targets.iter_mut().enumerate() {
        let name_len = cur.u32("tensor name length")? as usize;
        let name = String::from_utf8_lossy(cur.take(name_len, "tensor name")?).into_owned();
        let rank = cur.u32(&format!("rank of {name}"))? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(cur.u32(&format!("dims of {name}"))? as usize);
        }
        if name != target.name || dims != target.tensor.shape() {
            return Err(Error::WeightsDimension {
                index,
                expected: target.name.clone(),
                expected_dims: target.tensor.shape().to_vec(),
                found: name,
                found_dims: dims,
            });
        }
        let raw = cur.take(4 * target.tensor.len(), &format!("values of {name}"))?;
        for (dst, chunk) in target.tensor.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
    }
    drop(targets);
    Ok(net)
}

pub fn load_weights(spec: &NetworkSpec, path: impl AsRef<Path>) -> Result<Network<f32>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_weights(spec, std::io::BufReader::new(file))
}
