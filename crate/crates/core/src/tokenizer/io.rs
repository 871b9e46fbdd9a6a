//! Codebook file: `RQKM` magic, version, then `d, K, levels, s4_max` as
//! little-endian `u32`, the centroid tables as little-endian `f32` row-major
//! per level, and finally one `(item u64, s1 u16, s2 u16, s3 u16, s4 u16)`
//! record per item until end of file.

use std::fs;
use std::path::Path;

use super::{Codebook, SemanticId, SidIndex, QUANTIZED_LEVELS};
use crate::error::{Error, Result};
use crate::io::Reader;

pub const CODEBOOK_MAGIC: &[u8; 4] = b"RQKM";
const VERSION: u32 = 1;
const RECORD_BYTES: usize = 16;

pub fn write_codebook(codebook: &Codebook, index: &SidIndex) -> Result<Vec<u8>> {
    if codebook.num_levels() != QUANTIZED_LEVELS {
        return Err(Error::invalid(format!(
            "codebook file stores {QUANTIZED_LEVELS} levels, got {}",
            codebook.num_levels()
        )));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(CODEBOOK_MAGIC);
    for v in [
        VERSION,
        codebook.dim() as u32,
        codebook.k() as u32,
        codebook.num_levels() as u32,
        index.s4_max() as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for l in 0..codebook.num_levels() {
        for &x in codebook.level(l) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    for (item, sid) in index.sids().iter().enumerate() {
        buf.extend_from_slice(&(item as u64).to_le_bytes());
        for c in sid.codes() {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn read_codebook(bytes: &[u8]) -> Result<(Codebook, SidIndex)> {
    let mut r = Reader::new(bytes);
    let magic = r.bytes(4)?;
    if magic != CODEBOOK_MAGIC {
        return Err(Error::format(0, "bad magic, expected RQKM"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let dim = r.u32()? as usize;
    let k = r.u32()? as usize;
    let levels = r.u32()? as usize;
    let s4_max = r.u32()? as usize;
    if levels != QUANTIZED_LEVELS || dim == 0 || k == 0 || k > u16::MAX as usize + 1 {
        return Err(Error::format(
            8,
            format!("unsupported header d={dim} k={k} levels={levels}"),
        ));
    }
    let mut tables = Vec::with_capacity(levels);
    for _ in 0..levels {
        let mut t = Vec::with_capacity(dim * k);
        for _ in 0..dim * k {
            t.push(r.f32()?);
        }
        tables.push(t);
    }
    let codebook = Codebook::from_parts(dim, k, tables, 0)
        .map_err(|e| Error::format(r.offset(), e.to_string()))?;

    let rest = r.remaining();
    if rest % RECORD_BYTES != 0 {
        let at = r.offset() + (rest - rest % RECORD_BYTES) as u64;
        return Err(Error::format(at, "truncated item record"));
    }
    let n = rest / RECORD_BYTES;
    let mut sids = vec![None; n];
    for _ in 0..n {
        let at = r.offset();
        let item = r.u64()? as usize;
        let codes = [r.u16()?, r.u16()?, r.u16()?, r.u16()?];
        if codes[..3].iter().any(|&c| c as usize >= k) {
            return Err(Error::format(
                at,
                format!("item {item}: code out of range {codes:?}"),
            ));
        }
        match sids.get_mut(item) {
            Some(slot @ None) => *slot = Some(SemanticId::from_codes(codes)),
            Some(Some(_)) => return Err(Error::format(at, format!("duplicate item {item}"))),
            None => return Err(Error::format(at, format!("item id {item} not below {n}"))),
        }
    }
    let sids = sids.into_iter().map(|s| s.unwrap()).collect();
    let index =
        SidIndex::from_sids(sids, s4_max).map_err(|e| Error::format(r.offset(), e.to_string()))?;
    Ok((codebook, index))
}

pub fn save_codebook(path: impl AsRef<Path>, codebook: &Codebook, index: &SidIndex) -> Result<()> {
    fs::write(path, write_codebook(codebook, index)?)?;
    Ok(())
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<(Codebook, SidIndex)> {
    read_codebook(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::tokenize_catalog;

    fn sample() -> (Vec<f64>, Codebook, SidIndex) {
        let pts: Vec<f64> = (0..120)
            .map(|i| ((i * 37 % 23) as f64 * 0.13).sin())
            .collect();
        let (cb, idx) = tokenize_catalog(&pts, 4, 4, 16, 5).unwrap();
        (pts, cb, idx)
    }

    #[test]
    fn round_trip_preserves_codes_and_centroids() {
        let (pts, cb, idx) = sample();
        let bytes = write_codebook(&cb, &idx).unwrap();
        let (cb2, idx2) = read_codebook(&bytes).unwrap();
        for l in 0..3 {
            let a: Vec<u32> = cb.level(l).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = cb2.level(l).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(idx.sids(), idx2.sids());
        for p in pts.chunks(4) {
            assert_eq!(cb.assign_sid(p).unwrap(), cb2.assign_sid(p).unwrap());
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let (_, cb, idx) = sample();
        let bytes = write_codebook(&cb, &idx).unwrap();
        for cut in [3, 10, 30, bytes.len() - 5] {
            match read_codebook(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset <= cut as u64),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(
            read_codebook(b"NOPE\0\0\0\0"),
            Err(Error::Format { offset: 0, .. })
        ));
    }
}
