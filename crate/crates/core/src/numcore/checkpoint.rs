//! `NFCK` checkpoint files: a named-tensor table followed by raw blocks.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "NFCK"
//! 4       4     version (u32, currently 1)
//! 8       4     config length L (u32)
//! 12      L     resolved run configuration, UTF-8
//! 12+L    4     tensor count T (u32)
//!         ...   T table entries:
//!                 u16 name length, name bytes (UTF-8),
//!                 u8 dtype (1 = f32, 2 = f64), u8 rank,
//!                 u32 × rank dimensions,
//!                 u64 byte offset of the block relative to the data section
//!         ...   data section: tensor blocks, row-major, in table order
//! ```

use std::io::{Read, Write};

use super::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic {found:?} at offset 0")]
    Magic { found: [u8; 4] },
    #[error("unsupported checkpoint version {0} at offset 4")]
    Version(u32),
    #[error("checkpoint truncated at offset {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("malformed checkpoint at offset {offset}: {msg}")]
    Malformed { offset: usize, msg: String },
    #[error("checkpoint does not contain tensor {0}")]
    Missing(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: DType,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(config: impl Into<String>) -> Self {
        Self {
            config: config.into(),
            tensors: Vec::new(),
        }
    }

    /// Stores a tensor; values written as `f32` are rounded on write.
    pub fn push(&mut self, name: impl Into<String>, dtype: DType, tensor: Tensor) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            dtype,
            tensor,
        });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.tensor)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.iter().any(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dtype.code());
            out.push(t.tensor.shape().len() as u8);
            for &d in t.tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += (t.tensor.numel() * t.dtype.width()) as u64;
        }
        for t in &self.tensors {
            match t.dtype {
                DType::F32 => {
                    for &v in t.tensor.data() {
                        out.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                }
                DType::F64 => {
                    for &v in t.tensor.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Magic { found: magic });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let clen = r.u32("config length")? as usize;
        let cpos = r.pos;
        let config = String::from_utf8(r.take(clen, "config")?.to_vec()).map_err(|_| {
            CheckpointError::Malformed {
                offset: cpos,
                msg: "config is not UTF-8".into(),
            }
        })?;
        let count = r.u32("tensor count")? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u16("name length")? as usize;
            let npos = r.pos;
            let name = String::from_utf8(r.take(nlen, "tensor name")?.to_vec()).map_err(|_| {
                CheckpointError::Malformed {
                    offset: npos,
                    msg: "tensor name is not UTF-8".into(),
                }
            })?;
            let dpos = r.pos;
            let dtype = match r.u8("dtype")? {
                1 => DType::F32,
                2 => DType::F64,
                other => {
                    return Err(CheckpointError::Malformed {
                        offset: dpos,
                        msg: format!("unknown dtype code {other}"),
                    })
                }
            };
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")? as usize);
            }
            let off = r.u64("block offset")? as usize;
            entries.push((name, dtype, shape, off));
        }
        let data_start = r.pos;
        let mut tensors = Vec::with_capacity(entries.len());
        for (name, dtype, shape, off) in entries {
            let numel: usize = shape.iter().product();
            let start = data_start + off;
            let end = start + numel * dtype.width();
            if end > bytes.len() {
                return Err(CheckpointError::Truncated {
                    offset: bytes.len(),
                    what: "tensor block",
                });
            }
            let block = &bytes[start..end];
            let data: Vec<f64> = match dtype {
                DType::F32 => block
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                DType::F64 => block
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            };
            let tensor = Tensor::new(&shape, data).map_err(|e| CheckpointError::Malformed {
                offset: start,
                msg: e.to_string(),
            })?;
            tensors.push(NamedTensor {
                name,
                dtype,
                tensor,
            });
        }
        Ok(Self { config, tensors })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                what,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new("model.d_model = 8\n");
        ck.push(
            "param/w",
            DType::F64,
            Tensor::new(&[2, 3], vec![1.0, -2.5, 3.25, 0.1, 1e-300, 7.0]).unwrap(),
        );
        ck.push("param/b", DType::F32, Tensor::new(&[3], vec![0.5, 0.25, -1.0]).unwrap());
        ck
    }

    #[test]
    fn round_trip_preserves_values_and_config() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn f32_blocks_round_values() {
        let mut ck = Checkpoint::new("");
        ck.push("x", DType::F32, Tensor::scalar(0.1));
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.get("x").unwrap().item(), 0.1f32 as f64);
    }

    #[test]
    fn corrupt_magic_and_truncation_are_reported() {
        let mut bytes = sample().to_bytes();
        let full = bytes.clone();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::Magic { .. })
        ));
        let cut = &full[..full.len() - 3];
        let err = Checkpoint::from_bytes(cut).unwrap_err();
        assert!(matches!(err, CheckpointError::Truncated { .. }), "{err}");
        let err = Checkpoint::from_bytes(&full[..10]).unwrap_err();
        assert!(err.to_string().contains("offset 8"), "{err}");
    }
}
