//! `LTWT` checkpoint files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"LTWT" | version u32
//! layer count u32 | per layer: out u32, in u32, bias u32
//! prototypes: K u32, d u32 | residual u8
//! flat weights f64 (backbone, prototypes, log-temperature)
//! seed u64 | subset rho f64 | loss tag u8
//! ```
//!
//! Loss tags are 0 = CE, 1 = LA, 2 = CB, and 255 for checkpoints that were not
//! produced by a single training run (merges, the pretrained model).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Layout, ModelWeights};
use crate::error::{Error, Result};
use crate::losses::LossKind;

pub const MAGIC: &[u8; 4] = b"LTWT";
pub const VERSION: u32 = 1;
pub const NO_LOSS_TAG: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    /// Imbalance ratio of the training subset the weights came from.
    pub subset_rho: f64,
    pub loss: Option<LossKind>,
}

impl CheckpointMeta {
    pub fn untrained(subset_rho: f64) -> Self {
        Self {
            seed: 0,
            subset_rho,
            loss: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    pub meta: CheckpointMeta,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "LTWT",
        msg: msg.into(),
    }
}

pub fn write<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<()> {
    let layout = ckpt.weights.layout();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(layout.num_layers() as u32).to_le_bytes())?;
    for l in 0..layout.num_layers() {
        let (out, inp) = layout.layer_shape(l);
        for v in [out, inp, out] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
    }
    w.write_all(&(layout.num_classes() as u32).to_le_bytes())?;
    w.write_all(&(layout.feature_dim() as u32).to_le_bytes())?;
    w.write_all(&[layout.residual() as u8])?;
    for v in ckpt.weights.flat() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&ckpt.meta.seed.to_le_bytes())?;
    w.write_all(&ckpt.meta.subset_rho.to_le_bytes())?;
    w.write_all(&[ckpt.meta.loss.map_or(NO_LOSS_TAG, LossKind::tag)])?;
    w.flush()?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let layers = read_u32(&mut r)? as usize;
    if layers == 0 {
        return Err(bad("no backbone layers"));
    }
    let mut dims = Vec::with_capacity(layers + 1);
    for l in 0..layers {
        let out = read_u32(&mut r)? as usize;
        let inp = read_u32(&mut r)? as usize;
        let bias = read_u32(&mut r)? as usize;
        if bias != out {
            return Err(bad(format!("layer {l}: bias length {bias} != {out}")));
        }
        if l == 0 {
            dims.push(inp);
        } else if dims[l] != inp {
            return Err(bad(format!("layer {l}: input width {inp} != {}", dims[l])));
        }
        dims.push(out);
    }
    let k = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    if d != dims[layers] {
        return Err(bad(format!("prototype width {d} != backbone output {}", dims[layers])));
    }
    let residual = match read_u8(&mut r)? {
        0 => false,
        1 => true,
        other => return Err(bad(format!("bad residual flag {other}"))),
    };
    if residual && dims[0] != dims[layers] {
        return Err(bad("residual backbone must map d to d"));
    }
    let layout = Layout::new(dims, residual, k);
    let mut buf = vec![0u8; layout.len() * 8];
    r.read_exact(&mut buf)?;
    let flat = buf
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let weights = ModelWeights::from_flat(layout, flat)?;
    let seed = read_u64(&mut r)?;
    let subset_rho = f64::from_le_bytes(read_u64(&mut r)?.to_le_bytes());
    let tag = read_u8(&mut r)?;
    let loss = match tag {
        NO_LOSS_TAG => None,
        t => Some(LossKind::from_tag(t).ok_or_else(|| bad(format!("unknown loss tag {t}")))?),
    };
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after metadata"));
    }
    Ok(Checkpoint {
        weights,
        meta: CheckpointMeta {
            seed,
            subset_rho,
            loss,
        },
    })
}

pub fn save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write(ckpt, BufWriter::new(File::create(path)?))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read(BufReader::new(File::open(path)?))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
