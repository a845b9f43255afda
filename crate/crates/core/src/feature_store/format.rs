//! Binary feature file, all integers and floats little-endian:
//!
//! ```text
//! magic   [u8; 4]  "PSEL"
//! version u32      1
//! kind    u32      0 = lbp36, 1 = deep4096, 2 = pca_reduced
//! count   u64
//! dim     u32
//! ids     count x (u32 byte length, UTF-8 bytes)
//! matrix  count x dim f32, row-major
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::artifact;
use crate::descriptor::{check_homogeneous, Descriptor, DescriptorKind, PatchRef};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PSEL";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_features(descriptors: &[Descriptor]) -> Result<Vec<u8>> {
    let (kind, dim) = check_homogeneous(descriptors)
        .map_err(|e| match e {
            Error::Empty(_) => Error::Empty("refusing to write an empty feature file".into()),
            other => other,
        })?;
    let mut seen = HashSet::with_capacity(descriptors.len());
    let ids: Vec<String> = descriptors.iter().map(Descriptor::id).collect();
    for id in &ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    let dim32 = u32::try_from(dim).map_err(|_| Error::InvalidArgument(format!("dimension {dim} too large")))?;
    let id_bytes: usize = ids.iter().map(|s| 4 + s.len()).sum();
    let mut out = Vec::with_capacity(24 + id_bytes + descriptors.len() * dim * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&kind.code().to_le_bytes());
    out.extend_from_slice(&(descriptors.len() as u64).to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    for id in &ids {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    for d in descriptors {
        for v in d.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            expected: self.pos as u64 + n as u64,
            actual: self.bytes.len() as u64,
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a feature payload at the start of `bytes`; returns the descriptors and the
/// number of bytes consumed.
pub fn decode_features(bytes: &[u8]) -> Result<(Vec<Descriptor>, usize)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind = DescriptorKind::from_code(cur.u32()?)?;
    let count = cur.u64()?;
    let dim = cur.u32()? as usize;
    if dim == 0 {
        return Err(Error::Format("feature file declares dimension 0".into()));
    }
    // every id costs at least its 4-byte length prefix
    let min_rest = count.saturating_mul(4 + 4 * dim as u64);
    let remaining = (bytes.len() - cur.pos) as u64;
    if min_rest > remaining {
        return Err(Error::Truncated {
            expected: (cur.pos as u64).saturating_add(min_rest),
            actual: bytes.len() as u64,
        });
    }
    let count = count as usize;
    let mut ids = Vec::with_capacity(count);
    let mut seen = HashSet::with_capacity(count);
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let raw = cur.take(len)?;
        let id = std::str::from_utf8(raw)
            .map_err(|_| Error::Format("feature id is not valid UTF-8".into()))?
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        ids.push(id);
    }
    let matrix = cur.take(count * dim * 4)?;
    let mut out = Vec::with_capacity(count);
    for (id, row) in ids.into_iter().zip(matrix.chunks_exact(dim * 4)) {
        let values = row
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let patch: PatchRef = id.parse()?;
        out.push(Descriptor::new(patch, kind, values)?);
    }
    Ok((out, cur.pos))
}

pub fn write_features(descriptors: &[Descriptor], path: &Path) -> Result<()> {
    let bytes = encode_features(descriptors)?;
    artifact::write_atomic(path, &bytes)
}

/// Reads a feature file; the declared count and dimension must match the payload exactly.
pub fn read_features(path: &Path) -> Result<Vec<Descriptor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (descriptors, used) = decode_features(&bytes)?;
    if used != bytes.len() {
        return Err(Error::TrailingBytes((bytes.len() - used) as u64));
    }
    Ok(descriptors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_set(n: usize, seed: u64) -> Vec<Descriptor> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let values = (0..36).map(|_| rng.random::<f32>()).collect();
                Descriptor::new(PatchRef::new("scan", i as u32, 7), DescriptorKind::Lbp36, values).unwrap()
            })
            .collect()
    }

    #[test]
    fn round_trip_three() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.psel");
        let set = random_set(3, 1);
        write_features(&set, &path).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(back, set);
        for (a, b) in back.iter().zip(&set) {
            let bits = |d: &Descriptor| d.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode_features(&random_set(2, 3)).unwrap();
        assert_eq!(&bytes[..4], b"PSEL");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &0u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &2u64.to_le_bytes());
        assert_eq!(&bytes[20..24], &36u32.to_le_bytes());
        let id0 = "scan_x0_y7";
        assert_eq!(&bytes[24..28], &(id0.len() as u32).to_le_bytes());
        assert_eq!(&bytes[28..28 + id0.len()], id0.as_bytes());
    }

    #[test]
    fn empty_refused() {
        assert!(matches!(encode_features(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn duplicate_ids_refused_on_write() {
        let mut set = random_set(2, 4);
        set.push(set[0].clone());
        assert!(matches!(encode_features(&set), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn distinct_errors_for_corruption() {
        let bytes = encode_features(&random_set(3, 5)).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_features(&bad), Err(Error::BadMagic(_))));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_features(&bad), Err(Error::UnsupportedVersion(2))));

        let short = &bytes[..bytes.len() - 1];
        match decode_features(short) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, bytes.len() as u64 - 1);
            }
            other => panic!("expected truncation, got {other:?}"),
        }

        // rename the second id to the first one: same length, so only uniqueness breaks
        let mut bad = bytes.clone();
        let id_len = "scan_x0_y7".len();
        let second = 24 + 4 + id_len + 4;
        bad[second..second + id_len].copy_from_slice(b"scan_x0_y7");
        assert!(matches!(decode_features(&bad), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn trailing_bytes_rejected_by_reader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.psel");
        let mut bytes = encode_features(&random_set(2, 6)).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_features(&path), Err(Error::TrailingBytes(1))));
    }

    #[test]
    fn absurd_count_does_not_allocate() {
        let mut bytes = encode_features(&random_set(1, 7)).unwrap();
        bytes[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_features(&bytes), Err(Error::Truncated { .. })));
    }
}
