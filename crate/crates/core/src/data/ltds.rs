//! `LTDS` dataset files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"LTDS" | version u32 | N u64 | d u32 | K u32 | N*d f64 (row-major) | N u32 labels
//! ```
//!
//! Externally computed embeddings can be converted to this layout and used
//! in place of the synthetic generator.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LTDS";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "LTDS",
        msg: msg.into(),
    }
}

pub fn write<W: Write>(data: &Dataset, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(data.len() as u64).to_le_bytes())?;
    w.write_all(&(data.dim() as u32).to_le_bytes())?;
    w.write_all(&(data.num_classes() as u32).to_le_bytes())?;
    for v in data.features() {
        w.write_all(&v.to_le_bytes())?;
    }
    for &y in data.labels() {
        w.write_all(&(y as u32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = read_u64(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let k = read_u32(&mut r)? as usize;
    let mut buf = vec![0u8; n * d * 8];
    r.read_exact(&mut buf)?;
    let features = buf
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    let labels = buf
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after labels"));
    }
    Dataset::new(features, d, labels, k).map_err(|e| bad(e.to_string()))
}

pub fn save(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write(data, BufWriter::new(File::create(path)?))
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    read(BufReader::new(File::open(path)?))
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes() {
        let d = Dataset::new(vec![1.5, -2.0], 2, vec![1], 3).unwrap();
        let mut buf = Vec::new();
        write(&d, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"LTDS");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(&buf[16..20], &2u32.to_le_bytes());
        assert_eq!(&buf[20..24], &3u32.to_le_bytes());
        assert_eq!(&buf[24..32], &1.5f64.to_le_bytes());
        assert_eq!(&buf[40..44], &1u32.to_le_bytes());
        assert_eq!(buf.len(), 44);
        assert_eq!(read(&buf[..]).unwrap(), d);
    }

    #[test]
    fn rejects_corruption() {
        let d = Dataset::new(vec![0.0; 4], 2, vec![0, 1], 2).unwrap();
        let mut buf = Vec::new();
        write(&d, &mut buf).unwrap();
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read(&bad_magic[..]), Err(Error::Format { .. })));
        assert!(read(&buf[..buf.len() - 1]).is_err());
        let mut bad_label = buf.clone();
        let n = bad_label.len();
        bad_label[n - 4..].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(read(&bad_label[..]), Err(Error::Format { .. })));
        buf.push(0);
        assert!(read(&buf[..]).is_err());
    }
}
