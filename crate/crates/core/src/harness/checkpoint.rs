//! `AGEQ` network checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `AGEQ` |
//! | 4 | version (1 or 2) |
//! | 4 | layer count `L` |
//! | 8·L | `(inputs, outputs)` per layer as u32 pairs |
//! | L−1 | version 2 only: activation tag per hidden layer (0 tanh, 1 relu) |
//! | … | per layer: weights row-major then biases, f64 |
//!
//! Version 1 files have tanh hidden layers. Writers emit version 1 whenever
//! that is exact, version 2 otherwise.

use std::path::Path;

use crate::error::CheckpointError;
use crate::neural::{Activation, Dense, QNetwork};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"AGEQ";

pub fn encode(net: &QNetwork) -> Vec<u8> {
    let v2 = net.activations().iter().any(|&a| a != Activation::Tanh);
    let mut out = Vec::with_capacity(16 + net.parameter_count() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(if v2 { 2u32 } else { 1 }).to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for l in net.layers() {
        out.extend_from_slice(&(l.inputs as u32).to_le_bytes());
        out.extend_from_slice(&(l.outputs as u32).to_le_bytes());
    }
    if v2 {
        for a in net.activations() {
            out.push(match a {
                Activation::Tanh => 0,
                Activation::Relu => 1,
            });
        }
    }
    for l in net.layers() {
        for w in l.weights.iter().chain(&l.biases) {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.offset.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.offset..end];
                self.offset = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated {
                offset: self.offset,
                needed: n,
            }),
        }
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<QNetwork, CheckpointError> {
    let mut r = Reader { bytes, offset: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != 1 && version != 2 {
        return Err(CheckpointError::VersionMismatch(version));
    }
    let n_layers = r.u32()? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(CheckpointError::Malformed(format!("{n_layers} layers")));
    }
    let mut dims = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let (i, o) = (r.u32()? as usize, r.u32()? as usize);
        if i == 0 || o == 0 || i > 1 << 16 || o > 1 << 16 {
            return Err(CheckpointError::Malformed(format!("layer shape {i}x{o}")));
        }
        dims.push((i, o));
    }
    let activations = if version == 2 {
        r.take(n_layers - 1)?
            .iter()
            .map(|&t| match t {
                0 => Ok(Activation::Tanh),
                1 => Ok(Activation::Relu),
                other => Err(CheckpointError::Malformed(format!("activation tag {other}"))),
            })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        vec![Activation::Tanh; n_layers - 1]
    };
    let mut layers = Vec::with_capacity(n_layers);
    for (inputs, outputs) in dims {
        let mut next = |n: usize| (0..n).map(|_| r.f64()).collect::<Result<Vec<f64>, _>>();
        let weights = next(inputs * outputs)?;
        let biases = next(outputs)?;
        layers.push(Dense {
            inputs,
            outputs,
            weights,
            biases,
        });
    }
    if r.offset != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.offset
        )));
    }
    QNetwork::from_layers(layers, activations).map_err(|e| CheckpointError::Malformed(e.to_string()))
}

pub fn save_checkpoint(net: &QNetwork, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<QNetwork> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn round_trip_and_versions() {
        let mut rng = SplitMix64::new(5);
        let tanh = QNetwork::new(&[4, 8, 2], Activation::Tanh, &mut rng);
        let bytes = encode(&tanh);
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap(), tanh);
        let relu = QNetwork::new(&[4, 8, 8, 2], Activation::Relu, &mut rng);
        let bytes = encode(&relu);
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap(), relu);
    }

    #[test]
    fn corrupt_files_fail_distinctly() {
        let net = QNetwork::new(&[4, 8, 2], Activation::Tanh, &mut SplitMix64::new(6));
        let good = encode(&net);
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 9;
        assert_eq!(decode(&bad), Err(CheckpointError::VersionMismatch(9)));
        for cut in [2, 10, good.len() - 1] {
            assert!(matches!(decode(&good[..cut]), Err(CheckpointError::Truncated { .. })));
        }
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(CheckpointError::Malformed(_))));
    }
}
