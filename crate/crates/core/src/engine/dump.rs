//! Binary snapshot dump.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "BBMSNAP\0"
//! version  u32      1
//! reserved u32      0
//! time     f64
//! count    u64
//! count × { id: u64, position: f64, tag: u64 (u64::MAX when untagged) }
//! ```
//!
//! Records are written in increasing id order.

use std::io::{Read, Write};

use super::{PopulationSnapshot, SnapshotEntry};
use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"BBMSNAP\0";
pub const SNAPSHOT_VERSION: u32 = 1;
const NO_TAG: u64 = u64::MAX;

pub fn write_snapshot<W: Write>(mut w: W, snap: &PopulationSnapshot) -> Result<()> {
    let mut recs: Vec<&SnapshotEntry> = snap.particles.iter().collect();
    recs.sort_by_key(|p| p.id);
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    w.write_all(&snap.time.to_le_bytes())?;
    w.write_all(&(recs.len() as u64).to_le_bytes())?;
    for p in recs {
        w.write_all(&p.id.to_le_bytes())?;
        w.write_all(&p.position.to_le_bytes())?;
        w.write_all(&p.tag.unwrap_or(NO_TAG).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<PopulationSnapshot> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let _reserved = read_u32(&mut r)?;
    let time = f64::from_bits(read_u64(&mut r)?);
    let count = read_u64(&mut r)?;
    let mut particles = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut last: Option<u64> = None;
    for _ in 0..count {
        let id = read_u64(&mut r)?;
        let position = f64::from_bits(read_u64(&mut r)?);
        let tag = read_u64(&mut r)?;
        if last.is_some_and(|l| l >= id) {
            return Err(Error::Format("records not sorted by id".into()));
        }
        if !position.is_finite() {
            return Err(Error::Format(format!("non-finite position for particle {id}")));
        }
        last = Some(id);
        particles.push(SnapshotEntry {
            id,
            position,
            tag: (tag != NO_TAG).then_some(tag),
        });
    }
    Ok(PopulationSnapshot { time, particles })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_sorts_by_id() {
        let snap = PopulationSnapshot {
            time: 2.5,
            particles: vec![
                SnapshotEntry { id: 7, position: -0.25, tag: Some(3) },
                SnapshotEntry { id: 2, position: 1.5, tag: None },
            ],
        };
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &snap).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 4 + 8 + 8 + 2 * 24);
        assert_eq!(&buf[..8], SNAPSHOT_MAGIC);
        let back = read_snapshot(&buf[..]).unwrap();
        let mut sorted = snap.clone();
        sorted.sort_by_id();
        assert_eq!(back, sorted);
    }

    #[test]
    fn rejects_corrupt_header() {
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &PopulationSnapshot { time: 0.0, particles: vec![] }).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_snapshot(&buf[..]), Err(Error::Format(_))));
    }
}
