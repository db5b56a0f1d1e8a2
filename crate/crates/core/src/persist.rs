//! On-disk formats: the combined index file and the decision-tree file.
//!
//! Index file layout, all integers little-endian:
//!
//! ```text
//! "DQF1"  u16 version
//! digest   u32 count, u32 dim, 32-byte SHA-256 of the raw vector bytes
//! config   u32 length, JSON-encoded HotIndexConfig
//! full     u32 node_count, u32 max_degree, then per node u32 degree + u32 ids
//! entries  u32 count + u32 ids
//! members  u32 count + u32 global ids
//! hot      adjacency block as for `full`, local ids
//! hot_ep   u32 count + u32 global ids
//! counters u32 count, u64 since_rebuild, u64 per node
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{GraphIndex, NeighborGraph};
use crate::hot::{AccessCounter, HotGraph, HotIndexConfig};
use crate::search::DualIndex;
use crate::tree::DecisionTree;
use crate::vectors::VectorDataset;

pub const INDEX_MAGIC: &[u8; 4] = b"DQF1";
pub const INDEX_VERSION: u16 = 1;
pub const TREE_FORMAT: &str = "hotgraph-decision-tree";
pub const TREE_VERSION: u32 = 1;

/// Identity of the corpus an index was built over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetDigest {
    pub count: u32,
    pub dim: u32,
    pub sha256: [u8; 32],
}

impl DatasetDigest {
    pub fn of(dataset: &VectorDataset) -> Self {
        let mut h = Sha256::new();
        for v in dataset.as_slice() {
            h.update(v.to_le_bytes());
        }
        Self {
            count: dataset.len() as u32,
            dim: dataset.dim() as u32,
            sha256: h.finalize().into(),
        }
    }
}

/// Byte sizes of the sections of a written index file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IndexLayout {
    pub header: u64,
    pub config: u64,
    /// Full adjacency plus its entry points.
    pub full: u64,
    /// Hot member list, hot adjacency and hot entry points.
    pub hot: u64,
    pub counters: u64,
}

impl IndexLayout {
    pub fn total(&self) -> u64 {
        self.header + self.config + self.full + self.hot + self.counters
    }
}

struct Out<W> {
    w: W,
    written: u64,
}

impl<W: Write> Out<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.w.write_all(b)?;
        self.written += b.len() as u64;
        Ok(())
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in 32 bits")))?;
        self.bytes(&v.to_le_bytes())
    }

    fn ids(&mut self, ids: &[u32]) -> Result<()> {
        self.u32(ids.len())?;
        for &id in ids {
            self.bytes(&id.to_le_bytes())?;
        }
        Ok(())
    }

    fn graph(&mut self, g: &NeighborGraph) -> Result<()> {
        self.u32(g.node_count())?;
        self.u32(g.max_degree())?;
        for list in g.adjacency() {
            self.ids(list)?;
        }
        Ok(())
    }

    /// Bytes written since the previous call.
    fn mark(&mut self, last: &mut u64) -> u64 {
        let d = self.written - *last;
        *last = self.written;
        d
    }
}

struct In<R> {
    r: R,
    offset: u64,
}

impl<R: Read> In<R> {
    fn fail<T>(&self, what: &str) -> Result<T> {
        Err(Error::Format(format!("{what} at byte {}", self.offset)))
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        if self.r.read_exact(&mut b).is_err() {
            return self.fail("unexpected end of file");
        }
        self.offset += N as u64;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    /// A length prefix that must not exceed `max`.
    fn len(&mut self, max: usize, what: &str) -> Result<usize> {
        let n = self.u32()? as usize;
        if n > max {
            return self.fail(&format!("{what} length {n} exceeds {max}"));
        }
        Ok(n)
    }

    fn ids(&mut self, max_len: usize, what: &str) -> Result<Vec<u32>> {
        let n = self.len(max_len, what)?;
        (0..n).map(|_| self.u32()).collect()
    }

    fn graph(&mut self, max_nodes: usize, what: &str) -> Result<NeighborGraph> {
        let nodes = self.len(max_nodes, what)?;
        let max_degree = self.u32()? as usize;
        let mut adjacency = Vec::with_capacity(nodes);
        for _ in 0..nodes {
            adjacency.push(self.ids(max_degree, what)?);
        }
        NeighborGraph::from_adjacency(adjacency, max_degree)
            .map_err(|e| Error::Format(format!("{what}: {e}")))
    }
}

/// Writes `index`, built over `dataset`, and returns the section sizes.
pub fn write_index<W: Write>(w: W, index: &DualIndex, dataset: &VectorDataset) -> Result<IndexLayout> {
    let digest = DatasetDigest::of(dataset);
    let hot = index.hot();
    let mut out = Out { w, written: 0 };
    let mut last = 0;
    let mut layout = IndexLayout::default();

    out.bytes(INDEX_MAGIC)?;
    out.bytes(&INDEX_VERSION.to_le_bytes())?;
    out.bytes(&digest.count.to_le_bytes())?;
    out.bytes(&digest.dim.to_le_bytes())?;
    out.bytes(&digest.sha256)?;
    layout.header = out.mark(&mut last);

    let config = serde_json::to_vec(&index.config)?;
    out.u32(config.len())?;
    out.bytes(&config)?;
    layout.config = out.mark(&mut last);

    out.graph(&index.full.graph)?;
    out.ids(&index.full.entry_points)?;
    layout.full = out.mark(&mut last);

    out.ids(&hot.members)?;
    out.graph(&hot.graph)?;
    out.ids(&hot.entry_points)?;
    layout.hot = out.mark(&mut last);

    let counts = index.counter.snapshot();
    out.u32(counts.len())?;
    out.bytes(&index.counter.total_since_rebuild().to_le_bytes())?;
    for c in counts {
        out.bytes(&c.to_le_bytes())?;
    }
    layout.counters = out.mark(&mut last);
    out.w.flush()?;
    Ok(layout)
}

/// Reads an index file and checks it was built over `dataset`.
pub fn read_index<R: Read>(r: R, dataset: &VectorDataset) -> Result<DualIndex> {
    let mut inp = In { r, offset: 0 };
    if &inp.bytes::<4>()? != INDEX_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(inp.bytes()?);
    if version != INDEX_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let digest = DatasetDigest { count: inp.u32()?, dim: inp.u32()?, sha256: inp.bytes()? };
    if digest != DatasetDigest::of(dataset) {
        return Err(Error::invalid(format!(
            "index was built over a different {}x{} dataset",
            digest.count, digest.dim
        )));
    }
    let n = dataset.len();

    let config_len = inp.len(1 << 20, "config")?;
    let mut config = vec![0u8; config_len];
    if inp.r.read_exact(&mut config).is_err() {
        return inp.fail("truncated config");
    }
    inp.offset += config_len as u64;
    let config: HotIndexConfig = serde_json::from_slice(&config)?;

    let graph = inp.graph(n, "full adjacency")?;
    if graph.node_count() != n {
        return inp.fail("full graph does not cover the dataset");
    }
    let entry_points = inp.ids(n, "entry points")?;
    if entry_points.is_empty() || entry_points.iter().any(|&e| e as usize >= n) {
        return inp.fail("invalid full entry points");
    }

    let members = inp.ids(n, "hot members")?;
    let hot_graph = inp.graph(n, "hot adjacency")?;
    let hot_entries = inp.ids(n, "hot entry points")?;
    let hot = HotGraph {
        graph: hot_graph,
        members,
        entry_points: hot_entries,
        source_len: n,
        source_dim: dataset.dim(),
    };
    hot.validate().map_err(|e| Error::Format(e.to_string()))?;

    let count = inp.len(n, "counters")?;
    if count != n {
        return inp.fail("counter snapshot does not cover the dataset");
    }
    let since = inp.u64()?;
    let counts = (0..n).map(|_| inp.u64()).collect::<Result<Vec<_>>>()?;
    let mut rest = [0u8; 1];
    if inp.r.read(&mut rest)? != 0 {
        return inp.fail("trailing bytes");
    }

    DualIndex::new(
        dataset,
        GraphIndex { graph, entry_points },
        hot,
        AccessCounter::from_snapshot(&counts, since),
        config,
    )
}

pub fn save_index(path: impl AsRef<Path>, index: &DualIndex, dataset: &VectorDataset) -> Result<IndexLayout> {
    write_index(BufWriter::new(File::create(path)?), index, dataset)
}

pub fn load_index(path: impl AsRef<Path>, dataset: &VectorDataset) -> Result<DualIndex> {
    read_index(BufReader::new(File::open(path)?), dataset)
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    format: String,
    version: u32,
    tree: DecisionTree,
}

/// Versioned JSON encoding of a tree; identical trees give identical bytes.
pub fn tree_to_bytes(tree: &DecisionTree) -> Result<Vec<u8>> {
    let file = TreeFile { format: TREE_FORMAT.into(), version: TREE_VERSION, tree: tree.clone() };
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn tree_from_bytes(bytes: &[u8]) -> Result<DecisionTree> {
    let file: TreeFile = serde_json::from_slice(bytes)?;
    if file.format != TREE_FORMAT || file.version != TREE_VERSION {
        return Err(Error::Format(format!(
            "unsupported tree file {} v{}",
            file.format, file.version
        )));
    }
    file.tree.validate()?;
    Ok(file.tree)
}

pub fn save_tree(path: impl AsRef<Path>, tree: &DecisionTree) -> Result<()> {
    std::fs::write(path, tree_to_bytes(tree)?)?;
    Ok(())
}

pub fn load_tree(path: impl AsRef<Path>) -> Result<DecisionTree> {
    tree_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::BuildParams;
    use crate::synth::gaussian;
    use crate::tree::Verdict;

    fn small_index() -> (VectorDataset, DualIndex) {
        let ds = gaussian(600, 8, 3);
        let config = HotIndexConfig {
            n_query: 100,
            index_ratio: 0.1,
            build: BuildParams { knng_k: 12, max_degree: 10, ..BuildParams::default() },
        };
        let index = DualIndex::build(&ds, config).unwrap();
        for i in 0..50 {
            index.counter.record_access(i * 3).unwrap();
        }
        (ds, index)
    }

    #[test]
    fn index_round_trip() {
        let (ds, index) = small_index();
        let mut buf = Vec::new();
        let layout = write_index(&mut buf, &index, &ds).unwrap();
        assert_eq!(layout.total(), buf.len() as u64);
        assert_eq!(&buf[..4], b"DQF1");

        let back = read_index(buf.as_slice(), &ds).unwrap();
        assert_eq!(back.full, index.full);
        assert_eq!(*back.hot(), *index.hot());
        assert_eq!(back.config, index.config);
        assert_eq!(back.counter.snapshot(), index.counter.snapshot());
        assert_eq!(back.counter.total_since_rebuild(), 50);

        let mut again = Vec::new();
        write_index(&mut again, &back, &ds).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn index_rejects_corruption() {
        let (ds, index) = small_index();
        let mut buf = Vec::new();
        write_index(&mut buf, &index, &ds).unwrap();

        assert!(matches!(read_index(&buf[..buf.len() - 3], &ds), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_index(bad.as_slice(), &ds).is_err());
        let mut longer = buf.clone();
        longer.push(0);
        assert!(read_index(longer.as_slice(), &ds).is_err());

        let other = gaussian(600, 8, 4);
        assert!(matches!(read_index(buf.as_slice(), &other), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn tree_round_trip() {
        let tree = DecisionTree::constant(Verdict::Terminate);
        let bytes = tree_to_bytes(&tree).unwrap();
        assert_eq!(tree_from_bytes(&bytes).unwrap(), tree);
        assert_eq!(tree_to_bytes(&tree).unwrap(), bytes);
        let text = String::from_utf8(bytes).unwrap().replace(TREE_FORMAT, "other");
        assert!(tree_from_bytes(text.as_bytes()).is_err());
    }
}
