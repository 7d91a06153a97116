//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes  "TNKDCKPT"
//! format version   u32
//! step count       u64
//! network count    u32
//! per network:
//!   id             u32 length + UTF-8
//!   layout         u8 (0 = dual stream, 1 = single stream)
//!   frame_stack    u32
//!   input_size     u32
//!   actions        u32
//!   fingerprint    u64 (architecture hash)
//!   tensor count   u32
//!   per tensor:    u32 length + UTF-8 name, u32 rank, u32 dims, f32 values
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::net::{Architecture, NetworkParams, StreamLayout};
use super::tensor::Tensor;
use super::NnError;

pub const MAGIC: &[u8; 8] = b"TNKDCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Every network of a run plus the global step at which it was taken.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointSet {
    pub step: u64,
    pub networks: BTreeMap<String, NetworkParams<f32>>,
}

impl CheckpointSet {
    pub fn new(step: u64) -> Self {
        CheckpointSet {
            step,
            networks: BTreeMap::new(),
        }
    }

    pub fn single(id: impl Into<String>, params: NetworkParams<f32>, step: u64) -> Self {
        let mut set = Self::new(step);
        set.networks.insert(id.into(), params);
        set
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.networks.len() as u32).to_le_bytes());
        for (id, params) in &self.networks {
            write_str(&mut out, id);
            let arch = params.arch();
            out.push(match arch.layout {
                StreamLayout::DualStream => 0,
                StreamLayout::SingleStream => 1,
            });
            out.extend_from_slice(&(arch.frame_stack as u32).to_le_bytes());
            out.extend_from_slice(&(arch.input_size as u32).to_le_bytes());
            out.extend_from_slice(&(arch.actions as u32).to_le_bytes());
            out.extend_from_slice(&arch.fingerprint().to_le_bytes());
            out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
            for (name, tensor) in params.named() {
                write_str(&mut out, &name);
                out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
                for &d in tensor.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for v in tensor.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(NnError::Corrupt("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(NnError::Corrupt(format!("unsupported format version {version}")));
        }
        let step = r.u64()?;
        let count = r.u32()?;
        let mut networks = BTreeMap::new();
        for _ in 0..count {
            let id = r.string()?;
            let layout = match r.u8()? {
                0 => StreamLayout::DualStream,
                1 => StreamLayout::SingleStream,
                other => return Err(NnError::Corrupt(format!("unknown layout {other}"))),
            };
            let frame_stack = r.u32()? as usize;
            let input_size = r.u32()? as usize;
            let actions = r.u32()? as usize;
            let fingerprint = r.u64()?;
            let arch = Architecture::new(layout, frame_stack)?;
            if arch.input_size != input_size || arch.actions != actions {
                return Err(NnError::ArchitectureMismatch(format!(
                    "{id}: input {input_size} / actions {actions} unsupported"
                )));
            }
            if arch.fingerprint() != fingerprint {
                return Err(NnError::ArchitectureMismatch(format!(
                    "{id}: fingerprint {fingerprint:016x} does not match {:016x}",
                    arch.fingerprint()
                )));
            }
            let n = r.u32()? as usize;
            let specs = arch.param_specs();
            if n != specs.len() {
                return Err(NnError::ArchitectureMismatch(format!(
                    "{id}: {n} tensors, expected {}",
                    specs.len()
                )));
            }
            let mut tensors = Vec::with_capacity(n);
            for (expected_name, _) in &specs {
                let name = r.string()?;
                if &name != expected_name {
                    return Err(NnError::ArchitectureMismatch(format!(
                        "{id}: tensor {name}, expected {expected_name}"
                    )));
                }
                let rank = r.u32()? as usize;
                let shape = (0..rank)
                    .map(|_| r.u32().map(|d| d as usize))
                    .collect::<Result<Vec<_>, _>>()?;
                let len: usize = shape.iter().product();
                let raw = r.take(len * 4)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                tensors.push(Tensor::from_vec(&shape, data)?);
            }
            networks.insert(id, NetworkParams::from_tensors(arch, tensors)?);
        }
        if r.pos != bytes.len() {
            return Err(NnError::Corrupt("trailing bytes".into()));
        }
        Ok(CheckpointSet { step, networks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Looks up a network and checks it has the expected architecture.
    pub fn network(&self, id: &str, expected: &Architecture) -> Result<&NetworkParams, NnError> {
        let params = self
            .networks
            .get(id)
            .ok_or_else(|| NnError::MissingNetwork(id.to_string()))?;
        if params.arch() != expected {
            return Err(NnError::ArchitectureMismatch(format!(
                "{id}: checkpoint has {:?}, strategy expects {:?}",
                params.arch(),
                expected
            )));
        }
        Ok(params)
    }
}

/// Saves a single network under the id `"default"`.
pub fn save_checkpoint(
    params: &NetworkParams<f32>,
    step: u64,
    path: impl AsRef<Path>,
) -> Result<(), NnError> {
    CheckpointSet::single("default", params.clone(), step).save(path)
}

/// Loads a file written by [`save_checkpoint`], checking its architecture.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected: &Architecture,
) -> Result<(NetworkParams<f32>, u64), NnError> {
    let set = CheckpointSet::load(path)?;
    let params = set.network("default", expected)?.clone();
    Ok((params, set.step))
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Corrupt("truncated checkpoint".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, NnError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| NnError::Corrupt("non UTF-8 name".into()))
    }
}
