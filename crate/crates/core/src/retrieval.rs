//! Exact Euclidean nearest-neighbor index over retained descriptors.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::descriptor::{check_homogeneous, Descriptor, DescriptorKind, PatchRef};
use crate::error::{Error, Result};
use crate::feature_store::{decode_features, encode_features};
use crate::selection::{SelectionMethod, SelectionSet};

const FOOTER_MAGIC: [u8; 4] = *b"PSIX";
const FOOTER_LEN: usize = 12;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexMetadata {
    pub selection_fraction: Option<f64>,
    pub selection_method: Option<SelectionMethod>,
    pub seeds: Vec<u64>,
    pub created_unix: u64,
}

impl IndexMetadata {
    pub fn from_selection(sets: &[SelectionSet], created_unix: u64) -> Self {
        let first = sets.first();
        let mut seeds: Vec<u64> = sets.iter().map(|s| s.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        IndexMetadata {
            selection_fraction: first.map(|s| s.fraction),
            selection_method: first.map(|s| s.method),
            seeds,
            created_unix,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Match {
    pub patch_id: String,
    pub scan_id: String,
    pub distance: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalIndex {
    kind: DescriptorKind,
    dim: usize,
    ids: Vec<String>,
    scan_ids: Vec<String>,
    /// Row-major `len() x dim`.
    data: Vec<f32>,
    metadata: IndexMetadata,
}

/// Heap entry ordered by (distance, entry index).
#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

/// Builds an index over `descriptors`, restricted to the union of `selection` when given.
pub fn build_index(
    descriptors: &[Descriptor],
    selection: Option<&[SelectionSet]>,
    metadata: IndexMetadata,
) -> Result<RetrievalIndex> {
    let (kind, dim) = check_homogeneous(descriptors)?;
    let mut by_id: HashMap<String, &Descriptor> = HashMap::with_capacity(descriptors.len());
    for d in descriptors {
        if by_id.insert(d.id(), d).is_some() {
            return Err(Error::DuplicateId(d.id()));
        }
    }
    let mut chosen: Vec<&Descriptor> = match selection {
        None => descriptors.iter().collect(),
        Some(sets) => {
            let mut seen = HashSet::new();
            let mut out = Vec::new();
            for id in sets.iter().flat_map(|s| &s.retained) {
                let d = by_id.get(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
                if seen.insert(id.as_str()) {
                    out.push(*d);
                }
            }
            out
        }
    };
    if chosen.is_empty() {
        return Err(Error::Empty("selection retains no descriptors".into()));
    }
    let mut keyed: Vec<(String, &Descriptor)> = chosen.drain(..).map(|d| (d.id(), d)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    let mut data = Vec::with_capacity(keyed.len() * dim);
    let mut ids = Vec::with_capacity(keyed.len());
    let mut scan_ids = Vec::with_capacity(keyed.len());
    for (id, d) in keyed {
        data.extend_from_slice(d.values());
        scan_ids.push(d.scan_id().to_string());
        ids.push(id);
    }
    Ok(RetrievalIndex {
        kind,
        dim,
        ids,
        scan_ids,
        data,
        metadata,
    })
}

impl RetrievalIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> DescriptorKind {
        self.kind
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn metadata(&self) -> &IndexMetadata {
        &self.metadata
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact k nearest entries; ties go to the lexicographically smaller id.
    pub fn query(&self, q: &[f32], k: usize) -> Result<Vec<Match>> {
        if self.is_empty() {
            return Err(Error::Empty("index is empty".into()));
        }
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: q.len(),
            });
        }
        if k == 0 || k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "k must be in 1..={}, got {k}",
                self.len()
            )));
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        for (index, row) in self.data.chunks_exact(self.dim).enumerate() {
            let c = Candidate {
                dist: squared_distance(q, row),
                index,
            };
            if heap.len() < k {
                heap.push(c);
            } else if c < *heap.peek().expect("k >= 1") {
                heap.pop();
                heap.push(c);
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .enumerate()
            .map(|(r, c)| Match {
                patch_id: self.ids[c.index].clone(),
                scan_id: self.scan_ids[c.index].clone(),
                distance: c.dist.sqrt(),
                rank: r + 1,
            })
            .collect())
    }

    pub fn query_descriptor(&self, q: &Descriptor, k: usize) -> Result<Vec<Match>> {
        self.query(q.values(), k)
    }

    /// Queries in parallel; results keep the order of `queries`.
    pub fn batch_query(&self, queries: &[Descriptor], k: usize) -> Result<Vec<Vec<Match>>> {
        queries
            .par_iter()
            .map(|q| self.query_descriptor(q, k))
            .collect()
    }

    fn to_descriptors(&self) -> Result<Vec<Descriptor>> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let patch: PatchRef = id.parse()?;
                Descriptor::new(patch, self.kind, self.vector(i).to_vec())
            })
            .collect()
    }

    /// Feature payload, JSON metadata, then a footer of the JSON length (u64 LE) and `PSIX`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = encode_features(&self.to_descriptors()?)?;
        let json = serde_json::to_vec(&self.metadata)?;
        bytes.extend_from_slice(&json);
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&FOOTER_MAGIC);
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FOOTER_LEN {
            return Err(Error::Corrupt(format!("index file is only {} bytes", bytes.len())));
        }
        let footer = &bytes[bytes.len() - FOOTER_LEN..];
        if footer[8..] != FOOTER_MAGIC {
            return Err(Error::Corrupt("index footer missing; file truncated or not an index".into()));
        }
        let json_len = u64::from_le_bytes(footer[..8].try_into().unwrap());
        let payload_len = (bytes.len() - FOOTER_LEN) as u64;
        if json_len > payload_len {
            return Err(Error::Corrupt(format!(
                "metadata length {json_len} exceeds file body of {payload_len} bytes"
            )));
        }
        let split = (payload_len - json_len) as usize;
        let (descriptors, used) =
            decode_features(&bytes[..split]).map_err(|e| Error::Corrupt(format!("index payload: {e}")))?;
        if used != split {
            return Err(Error::Corrupt(format!(
                "index payload is {split} bytes but its header describes {used}"
            )));
        }
        let metadata: IndexMetadata = serde_json::from_slice(&bytes[split..bytes.len() - FOOTER_LEN])
            .map_err(|e| Error::Corrupt(format!("index metadata: {e}")))?;
        let mut index = build_index(&descriptors, None, metadata)?;
        if index.ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Corrupt("index entries are not in id order".into()));
        }
        index.kind = descriptors[0].kind();
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// One search result row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub query_id: String,
    pub rank: usize,
    pub patch_id: String,
    pub scan_id: String,
    pub distance: f64,
}

pub fn search_rows(queries: &[Descriptor], results: &[Vec<Match>]) -> Vec<SearchRow> {
    queries
        .iter()
        .zip(results)
        .flat_map(|(q, ms)| {
            let qid = q.id();
            ms.iter().map(move |m| SearchRow {
                query_id: qid.clone(),
                rank: m.rank,
                patch_id: m.patch_id.clone(),
                scan_id: m.scan_id.clone(),
                distance: m.distance,
            })
        })
        .collect()
}

pub fn write_search_csv(out: impl Write, rows: &[SearchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_search_csv(path: &Path) -> Result<Vec<SearchRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(scan: &str, x: u32, v: &[f32]) -> Descriptor {
        Descriptor::new(PatchRef::new(scan, x, 0), DescriptorKind::PcaReduced, v.to_vec()).unwrap()
    }

    fn sample() -> Vec<Descriptor> {
        vec![
            desc("b", 0, &[0.0, 0.0]),
            desc("a", 1, &[1.0, 0.0]),
            desc("a", 0, &[0.0, 1.0]),
            desc("c", 0, &[3.0, 4.0]),
        ]
    }

    #[test]
    fn identical_query_ranks_first() {
        let idx = build_index(&sample(), None, IndexMetadata::default()).unwrap();
        let m = idx.query(&[3.0, 4.0], 1).unwrap();
        assert_eq!(m[0].patch_id, "c_x0_y0");
        assert_eq!(m[0].distance, 0.0);
        assert_eq!(m[0].rank, 1);
    }

    #[test]
    fn full_k_sorted_with_tie_rule() {
        let idx = build_index(&sample(), None, IndexMetadata::default()).unwrap();
        let m = idx.query(&[0.0, 0.0], 4).unwrap();
        let ids: Vec<_> = m.iter().map(|m| m.patch_id.as_str()).collect();
        // a_x0 and a_x1 are both at distance 1; lexicographic order breaks the tie
        assert_eq!(ids, vec!["b_x0_y0", "a_x0_y0", "a_x1_y0", "c_x0_y0"]);
        assert_eq!(m[3].distance, 5.0);
        assert!(idx.query(&[0.0, 0.0], 5).is_err());
        assert!(idx.query(&[0.0, 0.0], 0).is_err());
        assert!(idx.query(&[0.0], 1).is_err());
    }

    #[test]
    fn selection_restricts_entries() {
        let set = SelectionSet {
            scan_id: "a".into(),
            method: SelectionMethod::Gmm,
            fraction: 0.5,
            seed: 3,
            retained: vec!["a_x1_y0".into()],
        };
        let idx = build_index(&sample(), Some(std::slice::from_ref(&set)), IndexMetadata::from_selection(std::slice::from_ref(&set), 0)).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.metadata().selection_method, Some(SelectionMethod::Gmm));
        let bad = SelectionSet {
            retained: vec!["zz_x0_y0".into()],
            ..set
        };
        assert!(matches!(build_index(&sample(), Some(&[bad]), IndexMetadata::default()), Err(Error::UnknownId(_))));
    }

    #[test]
    fn bytes_round_trip_and_truncation() {
        let meta = IndexMetadata {
            selection_fraction: Some(0.3),
            selection_method: Some(SelectionMethod::Random),
            seeds: vec![1, 2],
            created_unix: 1_700_000_000,
        };
        let idx = build_index(&sample(), None, meta).unwrap();
        let bytes = idx.to_bytes().unwrap();
        assert_eq!(RetrievalIndex::from_bytes(&bytes).unwrap(), idx);
        for cut in [1, 5, 13, bytes.len() / 2] {
            let r = RetrievalIndex::from_bytes(&bytes[..bytes.len() - cut]);
            assert!(matches!(r, Err(Error::Corrupt(_))), "cut {cut}: {r:?}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let idx = build_index(&sample(), None, IndexMetadata::default()).unwrap();
        let q = vec![desc("q", 9, &[0.1, 0.2])];
        let res = idx.batch_query(&q, 2).unwrap();
        let rows = search_rows(&q, &res);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let mut buf = Vec::new();
        write_search_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("query_id,rank,patch_id,scan_id,distance\n"));
        std::fs::write(&p, &buf).unwrap();
        assert_eq!(read_search_csv(&p).unwrap(), rows);
    }
}
