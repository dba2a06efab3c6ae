//! Binary checkpoint: fixed little-endian header followed by every parameter
//! buffer in layer order as 32-bit floats.

use std::io::{Read, Write};

use super::net::{NetConfig, PoseNet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"MVCK";
pub const FORMAT_VERSION: u32 = 1;

/// Settings stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub resolution: u32,
    pub anchor_sigma: f64,
    pub heatmap_sigma: f64,
    pub lambda: f64,
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn architecture_hash<T: Scalar>(net: &PoseNet<T>) -> u64 {
    fnv1a(net.descriptor().as_bytes())
}

pub fn write_checkpoint<T: Scalar>(net: &PoseNet<T>, meta: &CheckpointMeta, mut w: impl Write) -> std::io::Result<()> {
    let c = &net.config;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&architecture_hash(net).to_le_bytes())?;
    w.write_all(&(c.joints as u32).to_le_bytes())?;
    for _ in 0..3 {
        w.write_all(&meta.resolution.to_le_bytes())?;
    }
    w.write_all(&meta.anchor_sigma.to_le_bytes())?;
    w.write_all(&meta.heatmap_sigma.to_le_bytes())?;
    w.write_all(&meta.lambda.to_le_bytes())?;
    for width in c.widths {
        w.write_all(&(width as u32).to_le_bytes())?;
    }
    w.write_all(&[c.conditioned as u8])?;
    w.write_all(&(net.num_params() as u64).to_le_bytes())?;
    for p in net.params() {
        let mut buf = Vec::with_capacity(p.len() * 4);
        for v in &p.value {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::InvalidInput(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn u32_at(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r)?))
}

fn f64_at(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(take(r)?))
}

pub fn read_checkpoint<T: Scalar>(mut r: impl Read) -> Result<(PoseNet<T>, CheckpointMeta)> {
    let r = &mut r;
    if &take::<4>(r)? != MAGIC {
        return Err(Error::InvalidInput("not a checkpoint (bad magic)".into()));
    }
    let version = u32_at(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::InvalidInput(format!("unsupported checkpoint version {version}")));
    }
    let hash = u64::from_le_bytes(take(r)?);
    let joints = u32_at(r)? as usize;
    let res = [u32_at(r)?, u32_at(r)?, u32_at(r)?];
    if res[0] != res[1] || res[1] != res[2] {
        return Err(Error::InvalidInput(format!("non-cubic volume {res:?}")));
    }
    let anchor_sigma = f64_at(r)?;
    let heatmap_sigma = f64_at(r)?;
    let lambda = f64_at(r)?;
    let widths = [u32_at(r)? as usize, u32_at(r)? as usize, u32_at(r)? as usize];
    let conditioned = take::<1>(r)?[0] != 0;
    let count = u64::from_le_bytes(take(r)?) as usize;

    let config = NetConfig { joints, widths, conditioned };
    let mut net = PoseNet::zeroed(config);
    if architecture_hash(&net) != hash {
        return Err(Error::InvalidInput("checkpoint architecture hash mismatch".into()));
    }
    if net.num_params() != count {
        return Err(Error::InvalidInput(format!("checkpoint holds {count} parameters, architecture needs {}", net.num_params())));
    }
    for p in net.params_mut() {
        let mut buf = vec![0u8; p.len() * 4];
        r.read_exact(&mut buf).map_err(|e| Error::InvalidInput(format!("truncated checkpoint: {e}")))?;
        for (v, chunk) in p.value.iter_mut().zip(buf.chunks_exact(4)) {
            *v = T::lit(f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::InvalidInput(e.to_string()))? != 0 {
        return Err(Error::InvalidInput("trailing bytes after checkpoint parameters".into()));
    }
    Ok((net, CheckpointMeta { resolution: res[0], anchor_sigma, heatmap_sigma, lambda }))
}
