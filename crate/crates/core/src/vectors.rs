//! Vector storage, the L2 kernel, fvecs/ivecs ingestion and exact k-NN.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Dense row-major collection of `count` vectors of `dim` finite `f32`s.
///
/// Row `i` has id `i`. The dataset is immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorDataset {
    dim: usize,
    data: Vec<f32>,
}

impl VectorDataset {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(dim > 0, "dimension must be positive");
        ensure!(
            data.len() % dim == 0,
            "data length {} is not a multiple of dim {}",
            data.len(),
            dim
        );
        ensure!(!data.is_empty(), "dataset must contain at least one vector");
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite component in row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        ensure!(!rows.is_empty(), "dataset must contain at least one vector");
        let dim = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(dim * rows.len());
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            ensure!(r.len() == dim, "row {i} has dim {} but expected {dim}", r.len());
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, id: usize) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn subset(&self, ids: &[u32]) -> Result<Self> {
        ensure!(!ids.is_empty(), "subset must be nonempty");
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            ensure!((id as usize) < self.len(), "id {id} out of range");
            data.extend_from_slice(self.row(id as usize));
        }
        Ok(Self { dim: self.dim, data })
    }

    pub(crate) fn check_query(&self, q: &[f32]) -> Result<()> {
        ensure!(
            q.len() == self.dim,
            "query has dim {} but dataset has dim {}",
            q.len(),
            self.dim
        );
        Ok(())
    }
}

/// One `(id, distance)` entry of a result list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u32,
    pub distance: f32,
}

impl Neighbor {
    #[inline]
    pub fn new(id: u32, distance: f32) -> Self {
        Self { id, distance }
    }

    /// Ascending distance, ties broken by ascending id.
    #[inline]
    pub fn cmp_rank(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

/// Neighbors sorted ascending by `(distance, id)`.
pub type ResultList = Vec<Neighbor>;

pub fn ids(list: &[Neighbor]) -> Vec<u32> {
    list.iter().map(|n| n.id).collect()
}

#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail_a = chunks_a.remainder();
    let tail_b = chunks_b.remainder();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..8 {
            let d = ca[i] - cb[i];
            acc[i] += d * d;
        }
    }
    let mut sum = (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]);
    for (x, y) in tail_a.iter().zip(tail_b) {
        let d = x - y;
        sum += d * d;
    }
    sum
}

/// Euclidean distance without the dimension check. Every search path uses this.
#[inline]
pub fn l2(a: &[f32], b: &[f32]) -> f32 {
    squared_distance(a, b).sqrt()
}

/// Euclidean (L2) distance between two vectors of equal dimension.
pub fn distance(a: &[f32], b: &[f32]) -> Result<f32> {
    ensure!(
        a.len() == b.len(),
        "dimension mismatch: {} vs {}",
        a.len(),
        b.len()
    );
    Ok(l2(a, b))
}

/// Exact k nearest neighbors of `q` by linear scan.
pub fn brute_force_knn(dataset: &VectorDataset, q: &[f32], k: usize) -> Result<ResultList> {
    dataset.check_query(q)?;
    ensure!(
        k >= 1 && k <= dataset.len(),
        "k = {k} outside 1..={}",
        dataset.len()
    );
    let mut all: Vec<Neighbor> = dataset
        .rows()
        .enumerate()
        .map(|(i, row)| Neighbor::new(i as u32, l2(q, row)))
        .collect();
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, Neighbor::cmp_rank);
        all.truncate(k);
    }
    all.sort_unstable_by(Neighbor::cmp_rank);
    Ok(all)
}

/// Fraction of the first `k` ids of `truth` present among the first `k` of `approx`.
pub fn recall_at_k(approx: &[Neighbor], truth: &[Neighbor], k: usize) -> Result<f64> {
    ensure!(k >= 1, "k must be positive");
    ensure!(
        approx.len() >= k && truth.len() >= k,
        "recall@{k} needs at least {k} entries (got {} and {})",
        approx.len(),
        truth.len()
    );
    Ok(recall_of_ids(&ids(&approx[..k]), &ids(&truth[..k])))
}

pub(crate) fn recall_of_ids(approx: &[u32], truth: &[u32]) -> f64 {
    let hits = approx.iter().filter(|id| truth.contains(id)).count();
    hits as f64 / truth.len() as f64
}

struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    /// Reads exactly `buf.len()` bytes. Returns `Ok(false)` on a clean EOF
    /// before the first byte when `eof_ok` is set.
    fn fill(&mut self, buf: &mut [u8], eof_ok: bool) -> Result<bool> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    if got == 0 && eof_ok {
                        return Ok(false);
                    }
                    return Err(Error::Load {
                        offset: self.offset + got as u64,
                        reason: format!("truncated record: needed {} more bytes", buf.len() - got),
                    });
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(true)
    }
}

/// Reads `*vecs` records whose 4-byte payload elements are decoded by `decode`.
fn read_vecs<R: Read, T>(
    reader: R,
    mut decode: impl FnMut([u8; 4], u64) -> Result<T>,
) -> Result<(usize, Vec<T>)> {
    let mut r = OffsetReader { inner: reader, offset: 0 };
    let mut dim: Option<usize> = None;
    let mut out = Vec::new();
    let mut header = [0u8; 4];
    let mut payload = Vec::new();
    loop {
        let record_start = r.offset;
        if !r.fill(&mut header, true)? {
            break;
        }
        let d = i32::from_le_bytes(header);
        if d <= 0 {
            return Err(Error::Load {
                offset: record_start,
                reason: format!("non-positive dimension {d}"),
            });
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Load {
                    offset: record_start,
                    reason: format!("record dimension {d} differs from first record's {expected}"),
                })
            }
            _ => {}
        }
        payload.resize(d * 4, 0);
        let payload_start = r.offset;
        r.fill(&mut payload, false)?;
        for (j, chunk) in payload.chunks_exact(4).enumerate() {
            let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
            out.push(decode(bytes, payload_start + 4 * j as u64)?);
        }
    }
    match dim {
        Some(d) => Ok((d, out)),
        None => Err(Error::Load { offset: 0, reason: "empty file".into() }),
    }
}

pub fn read_fvecs<R: Read>(reader: R) -> Result<VectorDataset> {
    let (dim, data) = read_vecs(reader, |b, offset| {
        let v = f32::from_le_bytes(b);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Load { offset, reason: format!("non-finite value {v}") })
        }
    })?;
    VectorDataset::new(dim, data)
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<VectorDataset> {
    read_fvecs(BufReader::new(File::open(path)?))
}

pub fn write_fvecs<W: Write>(mut writer: W, dataset: &VectorDataset) -> Result<()> {
    let d = (dataset.dim() as i32).to_le_bytes();
    for row in dataset.rows() {
        writer.write_all(&d)?;
        for v in row {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn save_fvecs(path: impl AsRef<Path>, dataset: &VectorDataset) -> Result<()> {
    write_fvecs(BufWriter::new(File::create(path)?), dataset)
}

/// Reads an ivecs file (e.g. ground truth) into one row per record.
pub fn read_ivecs<R: Read>(reader: R) -> Result<Vec<Vec<i32>>> {
    let (dim, flat) = read_vecs(reader, |b, _| Ok(i32::from_le_bytes(b)))?;
    Ok(flat.chunks_exact(dim).map(<[i32]>::to_vec).collect())
}

pub fn load_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    read_ivecs(BufReader::new(File::open(path)?))
}

pub fn write_ivecs<W: Write>(mut writer: W, rows: &[Vec<i32>]) -> Result<()> {
    for row in rows {
        ensure!(!row.is_empty(), "ivecs rows must be nonempty");
        writer.write_all(&(row.len() as i32).to_le_bytes())?;
        for v in row {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn distance_basics() {
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        let x = [1.5f32, -2.0, 7.25];
        assert_eq!(distance(&x, &x).unwrap(), 0.0);
        assert!(matches!(distance(&[1.0], &[1.0, 2.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn distance_matches_double_precision_oracle() {
        let rows = random_rows(2000, 64, 11);
        for pair in rows.chunks_exact(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let oracle: f64 = a
                .iter()
                .zip(b)
                .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            let got = distance(a, b).unwrap() as f64;
            assert!((got - oracle).abs() <= 1e-4 * oracle, "{got} vs {oracle}");
        }
    }

    #[test]
    fn dataset_rejects_bad_input() {
        assert!(VectorDataset::new(0, vec![]).is_err());
        assert!(VectorDataset::new(3, vec![1.0; 4]).is_err());
        assert!(VectorDataset::new(2, vec![1.0, f32::NAN]).is_err());
        assert!(VectorDataset::new(2, vec![1.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn fvecs_single_record() {
        let mut bytes = 4i32.to_le_bytes().to_vec();
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let ds = read_fvecs(&bytes[..]).unwrap();
        assert_eq!((ds.len(), ds.dim()), (1, 4));
        assert_eq!(ds.row(0), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn fvecs_round_trip_is_bit_identical() {
        let ds = VectorDataset::from_rows(&random_rows(50, 7, 3)).unwrap();
        let mut buf = Vec::new();
        write_fvecs(&mut buf, &ds).unwrap();
        assert_eq!(buf.len(), 50 * (4 + 7 * 4));
        let back = read_fvecs(&buf[..]).unwrap();
        let a: Vec<u32> = ds.as_slice().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn fvecs_errors_name_offsets() {
        let ds = VectorDataset::from_rows(&random_rows(3, 2, 1)).unwrap();
        let mut buf = Vec::new();
        write_fvecs(&mut buf, &ds).unwrap();

        let truncated = &buf[..buf.len() - 3];
        match read_fvecs(truncated) {
            Err(Error::Load { offset, .. }) => assert_eq!(offset, 2 * 12 + 4 + 4 + 1),
            other => panic!("unexpected {other:?}"),
        }

        let mut bad_dim = buf.clone();
        bad_dim[12..16].copy_from_slice(&3i32.to_le_bytes());
        match read_fvecs(&bad_dim[..]) {
            Err(Error::Load { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("unexpected {other:?}"),
        }

        let mut nan = buf.clone();
        nan[16 + 4..16 + 8].copy_from_slice(&f32::NAN.to_le_bytes());
        match read_fvecs(&nan[..]) {
            Err(Error::Load { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("unexpected {other:?}"),
        }

        assert!(matches!(read_fvecs(&[][..]), Err(Error::Load { .. })));
    }

    #[test]
    fn ivecs_round_trip() {
        let rows = vec![vec![1, 2, 3], vec![-4, 5, 6]];
        let mut buf = Vec::new();
        write_ivecs(&mut buf, &rows).unwrap();
        assert_eq!(read_ivecs(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn brute_force_contracts() {
        let ds = VectorDataset::from_rows(&random_rows(200, 8, 5)).unwrap();
        let member = ds.row(17).to_vec();
        let res = brute_force_knn(&ds, &member, 5).unwrap();
        assert_eq!(res[0], Neighbor::new(17, 0.0));

        let all = brute_force_knn(&ds, &member, ds.len()).unwrap();
        let mut seen: Vec<u32> = ids(&all);
        seen.sort_unstable();
        assert_eq!(seen, (0..200).collect::<Vec<_>>());

        for q in random_rows(100, 8, 6) {
            let res = brute_force_knn(&ds, &q, 10).unwrap();
            assert!(res.windows(2).all(|w| w[0].cmp_rank(&w[1]).is_lt()));
        }

        assert!(brute_force_knn(&ds, &member, 0).is_err());
        assert!(brute_force_knn(&ds, &member, 201).is_err());
        assert!(brute_force_knn(&ds, &[0.0; 3], 1).is_err());
    }

    #[test]
    fn brute_force_breaks_ties_by_id() {
        let ds = VectorDataset::from_rows(&[[1.0f32, 0.0], [-1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
            .unwrap();
        let res = brute_force_knn(&ds, &[0.0, 0.0], 3).unwrap();
        assert_eq!(ids(&res), vec![0, 1, 2]);
    }

    #[test]
    fn recall_examples() {
        let mk = |ids: &[u32]| -> ResultList {
            ids.iter().enumerate().map(|(i, &id)| Neighbor::new(id, i as f32)).collect()
        };
        let a = mk(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(recall_at_k(&a, &a, 10).unwrap(), 1.0);
        let b = mk(&[10, 11, 12, 13, 14, 15, 16, 17, 18, 19]);
        assert_eq!(recall_at_k(&a, &b, 10).unwrap(), 0.0);
        let c = mk(&[0, 1, 2, 3, 4, 15, 16, 17, 18, 19]);
        assert_eq!(recall_at_k(&c, &a, 10).unwrap(), 0.5);
        assert!(recall_at_k(&a[..5], &a, 10).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec3() -> impl Strategy<Value = Vec<f32>> {
            proptest::collection::vec(-100.0f32..100.0, 5)
        }

        proptest! {
            #[test]
            fn metric_axioms(a in vec3(), b in vec3(), c in vec3()) {
                let ab = distance(&a, &b).unwrap();
                let ba = distance(&b, &a).unwrap();
                let ac = distance(&a, &c).unwrap();
                let cb = distance(&c, &b).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert_eq!(ab, ba);
                prop_assert_eq!(ab == 0.0, a == b);
                prop_assert!(ab <= (ac + cb) * (1.0 + 1e-5) + 1e-5);
            }

            #[test]
            fn knn_invariant_under_row_permutation(seed in 0u64..1000) {
                let rows = random_rows(60, 4, seed);
                let ds = VectorDataset::from_rows(&rows).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
                let mut perm: Vec<usize> = (0..60).collect();
                rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
                let permuted: Vec<Vec<f32>> = perm.iter().map(|&i| rows[i].clone()).collect();
                let pds = VectorDataset::from_rows(&permuted).unwrap();
                let q = random_rows(1, 4, seed + 1).pop().unwrap();
                let a = brute_force_knn(&ds, &q, 7).unwrap();
                let b = brute_force_knn(&pds, &q, 7).unwrap();
                let mut a_ids = ids(&a);
                let mut b_ids: Vec<u32> = b.iter().map(|n| perm[n.id as usize] as u32).collect();
                a_ids.sort_unstable();
                b_ids.sort_unstable();
                prop_assert_eq!(a_ids, b_ids);
            }

            #[test]
            fn recall_symmetric(a in proptest::collection::btree_set(0u32..30, 8),
                                b in proptest::collection::btree_set(0u32..30, 8)) {
                let la: ResultList = a.iter().map(|&i| Neighbor::new(i, 0.0)).collect();
                let lb: ResultList = b.iter().map(|&i| Neighbor::new(i, 0.0)).collect();
                prop_assert_eq!(recall_at_k(&la, &lb, 8).unwrap(), recall_at_k(&lb, &la, 8).unwrap());
            }
        }
    }
}
