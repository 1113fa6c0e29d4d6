//! Single-file index serialization and the read handle.
//!
//! File layout, all integers little-endian, everything zero-padded:
//!
//! ```text
//! [ metadata: one block ][ inline codebook + padding (optional) ][ node chunks ... ]
//! ```
//!
//! The metadata block carries the geometry, the entrypoint ids, the
//! entrypoint PQ codes, and a codebook locator (inline offset or external
//! file name, plus a content hash either way). Opening an index with an
//! already-loaded codebook whose hash matches therefore costs exactly one
//! block read. Sidecar-mode indices store the full N x m code array in
//! `<index>.pq`, which is loaded into RAM on open.

use std::fs::File;
use std::io::{Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use byteorder::{ByteOrder, LittleEndian};
use sha2::{Digest, Sha256};

use super::{node_location, validate_degree, ChunkGeometry, DegreeFit, IndexMode, NodeLocation, ID_BYTES};
use crate::dataset::{Dataset, DistanceMetric, OwnedVector, VectorKind};
use crate::error::{Error, Result};
use crate::graph::VamanaGraph;
use crate::pq::PqCodebook;

const INDEX_MAGIC: &[u8; 4] = b"BANN";
const INDEX_VERSION: u32 = 1;
/// Fixed metadata bytes before the entrypoint payload.
const HEADER_FIXED: usize = 360;
const EXT_NAME_CAP: usize = 254;

/// Where the codebook bytes live, plus the content hash that identifies the
/// centroids for the shared-codebook fast path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodebookLocator {
    Inline {
        offset: u64,
        len: u64,
        hash: [u8; 32],
    },
    /// File living next to the index file.
    External {
        name: String,
        len: u64,
        hash: [u8; 32],
    },
}

impl CodebookLocator {
    pub fn hash(&self) -> &[u8; 32] {
        match self {
            CodebookLocator::Inline { hash, .. } | CodebookLocator::External { hash, .. } => hash,
        }
    }

    pub fn len(&self) -> u64 {
        match self {
            CodebookLocator::Inline { len, .. } | CodebookLocator::External { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parsed metadata block.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMetadata {
    pub mode: IndexMode,
    pub kind: VectorKind,
    pub metric: DistanceMetric,
    pub n: u64,
    pub dim: usize,
    pub max_degree: usize,
    pub pq_m: usize,
    pub block_size: usize,
    pub chunk_size: usize,
    pub codebook: CodebookLocator,
    pub node_region: u64,
    pub entrypoints: Vec<u32>,
    /// Entrypoint PQ codes, n_ep x m, so a search can score its starting
    /// candidates without touching storage.
    pub entry_codes: Vec<u8>,
}

impl IndexMetadata {
    pub fn geometry(&self) -> ChunkGeometry {
        ChunkGeometry {
            full_vector_bytes: self.dim * self.kind.elem_bytes(),
            id_bytes: ID_BYTES,
            max_degree: self.max_degree,
            pq_code_bytes: self.pq_m,
            block_size: self.block_size,
            mode: self.mode,
        }
    }

    pub fn n_ep(&self) -> usize {
        self.entrypoints.len()
    }

    pub fn entry_code(&self, i: usize) -> &[u8] {
        &self.entry_codes[i * self.pq_m..(i + 1) * self.pq_m]
    }

    /// Placement of node `id`; errors if out of range.
    pub fn node_location(&self, id: u32) -> Result<NodeLocation> {
        if (id as u64) >= self.n {
            return Err(Error::NodeOutOfRange { id, n: self.n });
        }
        Ok(node_location(id, &self.geometry(), self.node_region))
    }

    fn metadata_needed(&self) -> usize {
        HEADER_FIXED + self.entrypoints.len() * (4 + self.pq_m)
    }

    fn to_block(&self) -> Result<Vec<u8>> {
        let needed = self.metadata_needed();
        if needed > self.block_size {
            return Err(Error::MetadataOverflow {
                needed,
                block_size: self.block_size,
            });
        }
        let mut b = vec![0u8; self.block_size];
        b[0..4].copy_from_slice(INDEX_MAGIC);
        LittleEndian::write_u32(&mut b[4..8], INDEX_VERSION);
        b[8] = self.mode.tag();
        b[9] = self.kind.tag();
        b[10] = self.metric.tag();
        LittleEndian::write_u64(&mut b[12..20], self.n);
        LittleEndian::write_u32(&mut b[20..24], self.dim as u32);
        LittleEndian::write_u32(&mut b[24..28], self.max_degree as u32);
        LittleEndian::write_u32(&mut b[28..32], self.pq_m as u32);
        LittleEndian::write_u32(&mut b[32..36], self.entrypoints.len() as u32);
        LittleEndian::write_u32(&mut b[36..40], self.block_size as u32);
        LittleEndian::write_u32(&mut b[40..44], self.chunk_size as u32);
        match &self.codebook {
            CodebookLocator::Inline { offset, len, hash } => {
                b[44] = 0;
                LittleEndian::write_u64(&mut b[48..56], *offset);
                LittleEndian::write_u64(&mut b[56..64], *len);
                b[64..96].copy_from_slice(hash);
            }
            CodebookLocator::External { name, len, hash } => {
                b[44] = 1;
                LittleEndian::write_u64(&mut b[56..64], *len);
                b[64..96].copy_from_slice(hash);
                let name_bytes = name.as_bytes();
                if name_bytes.len() > EXT_NAME_CAP {
                    return Err(Error::InvalidParameter(format!(
                        "codebook file name {name:?} longer than {EXT_NAME_CAP} bytes"
                    )));
                }
                LittleEndian::write_u16(&mut b[104..106], name_bytes.len() as u16);
                b[106..106 + name_bytes.len()].copy_from_slice(name_bytes);
            }
        }
        LittleEndian::write_u64(&mut b[96..104], self.node_region);
        let mut pos = HEADER_FIXED;
        for &ep in &self.entrypoints {
            LittleEndian::write_u32(&mut b[pos..pos + 4], ep);
            pos += 4;
        }
        b[pos..pos + self.entry_codes.len()].copy_from_slice(&self.entry_codes);
        Ok(b)
    }

    fn from_block(b: &[u8]) -> Result<Self> {
        let corrupt = |offset: usize, reason: &str| Error::Corrupt {
            offset: offset as u64,
            reason: reason.to_string(),
        };
        if b.len() < HEADER_FIXED {
            return Err(corrupt(0, "file shorter than the metadata header"));
        }
        if &b[0..4] != INDEX_MAGIC {
            return Err(corrupt(0, "bad index magic"));
        }
        let version = LittleEndian::read_u32(&b[4..8]);
        if version != INDEX_VERSION {
            return Err(corrupt(4, "unsupported index version"));
        }
        let mode = IndexMode::from_tag(b[8]).ok_or_else(|| corrupt(8, "unknown mode tag"))?;
        let kind = VectorKind::from_tag(b[9]).ok_or_else(|| corrupt(9, "unknown element kind"))?;
        let metric =
            DistanceMetric::from_tag(b[10]).ok_or_else(|| corrupt(10, "unknown metric tag"))?;
        let n = LittleEndian::read_u64(&b[12..20]);
        let dim = LittleEndian::read_u32(&b[20..24]) as usize;
        let max_degree = LittleEndian::read_u32(&b[24..28]) as usize;
        let pq_m = LittleEndian::read_u32(&b[28..32]) as usize;
        let n_ep = LittleEndian::read_u32(&b[32..36]) as usize;
        let block_size = LittleEndian::read_u32(&b[36..40]) as usize;
        let chunk_size = LittleEndian::read_u32(&b[40..44]) as usize;
        if n == 0 || dim == 0 || pq_m == 0 || n_ep == 0 {
            return Err(corrupt(12, "zero-valued metadata field"));
        }
        if block_size < HEADER_FIXED || b.len() < block_size {
            return Err(corrupt(36, "metadata block truncated"));
        }
        let codebook = match b[44] {
            0 => CodebookLocator::Inline {
                offset: LittleEndian::read_u64(&b[48..56]),
                len: LittleEndian::read_u64(&b[56..64]),
                hash: b[64..96].try_into().unwrap(),
            },
            1 => {
                let name_len = LittleEndian::read_u16(&b[104..106]) as usize;
                if name_len > EXT_NAME_CAP {
                    return Err(corrupt(104, "codebook name length out of range"));
                }
                let name = std::str::from_utf8(&b[106..106 + name_len])
                    .map_err(|_| corrupt(106, "codebook name is not utf-8"))?
                    .to_string();
                CodebookLocator::External {
                    name,
                    len: LittleEndian::read_u64(&b[56..64]),
                    hash: b[64..96].try_into().unwrap(),
                }
            }
            _ => return Err(corrupt(44, "unknown codebook locator kind")),
        };
        let node_region = LittleEndian::read_u64(&b[96..104]);
        if node_region % block_size as u64 != 0 {
            return Err(corrupt(96, "node region is not block-aligned"));
        }
        let needed = HEADER_FIXED + n_ep * (4 + pq_m);
        if needed > block_size {
            return Err(corrupt(32, "entrypoint payload exceeds the metadata block"));
        }
        let mut entrypoints = Vec::with_capacity(n_ep);
        let mut pos = HEADER_FIXED;
        for _ in 0..n_ep {
            let ep = LittleEndian::read_u32(&b[pos..pos + 4]);
            if (ep as u64) >= n {
                return Err(corrupt(pos, "entrypoint id out of range"));
            }
            entrypoints.push(ep);
            pos += 4;
        }
        let entry_codes = b[pos..pos + n_ep * pq_m].to_vec();

        let meta = IndexMetadata {
            mode,
            kind,
            metric,
            n,
            dim,
            max_degree,
            pq_m,
            block_size,
            chunk_size,
            codebook,
            node_region,
            entrypoints,
            entry_codes,
        };
        if meta.geometry().chunk_size() != chunk_size {
            return Err(corrupt(40, "stored chunk size disagrees with the geometry"));
        }
        Ok(meta)
    }
}

/// One parsed node chunk.
#[derive(Debug, Clone)]
pub struct NodeChunk {
    pub vector: OwnedVector,
    /// The first neighbor_count ids; unused slots are not reported.
    pub neighbors: Vec<u32>,
    /// Inline-mode files: all R code slots, verbatim (R x m bytes). Slot j
    /// encodes the vector of neighbors[j] for j < neighbor_count.
    pub inline_codes: Option<Vec<u8>>,
}

impl NodeChunk {
    /// Inline PQ code of neighbor slot `j`.
    pub fn inline_code(&self, j: usize, m: usize) -> Option<&[u8]> {
        self.inline_codes.as_ref().map(|c| &c[j * m..(j + 1) * m])
    }
}

/// Options for [`serialize_index`].
#[derive(Debug, Clone, Default)]
pub struct SerializeOptions {
    /// Store the codebook in this file (same directory as the index) instead
    /// of inline, enabling the shared-centroid fast path across indices.
    pub external_codebook: Option<PathBuf>,
    /// Also write the `<index>.pq` sidecar for an inline-mode index, so the
    /// same file can be searched in either mode. Sidecar-mode indices always
    /// get one.
    pub write_sidecar: bool,
    /// I/O block size; 0 means [`super::DEFAULT_BLOCK_SIZE`].
    pub block_size: usize,
}

/// What [`serialize_index`] wrote.
#[derive(Debug, Clone)]
pub struct SerializeReport {
    pub geometry: ChunkGeometry,
    pub degree_fit: DegreeFit,
    pub file_len: u64,
    pub sidecar: Option<PathBuf>,
    pub codebook_file: Option<PathBuf>,
}

fn write_chunk_into(
    buf: &mut [u8],
    id: u32,
    dataset: &Dataset,
    graph: &VamanaGraph,
    codes: &[u8],
    geometry: &ChunkGeometry,
) {
    let b_full = geometry.full_vector_bytes;
    match dataset.vector(id) {
        crate::dataset::VectorView::F32(v) => {
            LittleEndian::write_f32_into(v, &mut buf[..b_full]);
        }
        crate::dataset::VectorView::U8(v) => {
            buf[..b_full].copy_from_slice(v);
        }
    }
    let neighbors = graph.neighbors(id);
    let mut pos = b_full;
    LittleEndian::write_u32(&mut buf[pos..pos + 4], neighbors.len() as u32);
    pos += 4;
    for &nb in neighbors {
        LittleEndian::write_u32(&mut buf[pos..pos + 4], nb);
        pos += 4;
    }
    pos = b_full + 4 + geometry.max_degree * 4;
    if geometry.mode == IndexMode::InlinePq {
        let m = geometry.pq_code_bytes;
        for (j, &nb) in neighbors.iter().enumerate() {
            let code = &codes[nb as usize * m..(nb as usize + 1) * m];
            buf[pos + j * m..pos + (j + 1) * m].copy_from_slice(code);
        }
    }
}

/// Write a complete index file (and sidecar / codebook file when called for).
/// Identical inputs produce byte-identical output.
pub fn serialize_index(
    path: &Path,
    graph: &VamanaGraph,
    dataset: &Dataset,
    codebook: &PqCodebook,
    codes: &[u8],
    mode: IndexMode,
    options: &SerializeOptions,
) -> Result<SerializeReport> {
    let n = dataset.len();
    if graph.len() != n {
        return Err(Error::InvalidParameter(format!(
            "graph has {} nodes, dataset has {n}",
            graph.len()
        )));
    }
    if codebook.dim() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            got: codebook.dim(),
        });
    }
    let m = codebook.m();
    if codes.len() != n * m {
        return Err(Error::InvalidParameter(format!(
            "code array has {} bytes, expected {}",
            codes.len(),
            n * m
        )));
    }
    let block_size = if options.block_size == 0 {
        super::DEFAULT_BLOCK_SIZE
    } else {
        options.block_size
    };
    let geometry = ChunkGeometry {
        full_vector_bytes: dataset.full_vector_bytes(),
        id_bytes: ID_BYTES,
        max_degree: graph.max_degree(),
        pq_code_bytes: m,
        block_size,
        mode,
    };
    let degree_fit = validate_degree(&geometry);

    let cb_bytes = codebook.to_bytes();
    let hash: [u8; 32] = codebook.content_hash();
    let mut codebook_file = None;
    let (locator, node_region) = match &options.external_codebook {
        None => {
            let offset = block_size as u64;
            let len = cb_bytes.len() as u64;
            let region = (offset + len).div_ceil(block_size as u64) * block_size as u64;
            (CodebookLocator::Inline { offset, len, hash }, region)
        }
        Some(cb_path) => {
            // The codebook lives next to the index; write it there if absent,
            // verify it if present.
            let name = cb_path
                .file_name()
                .and_then(|s| s.to_str())
                .ok_or_else(|| {
                    Error::InvalidParameter(format!("bad codebook file name {cb_path:?}"))
                })?
                .to_string();
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            let dest = dir.join(&name);
            if dest.exists() {
                let existing = std::fs::read(&dest)?;
                if Sha256::digest(&existing).as_slice() != hash {
                    return Err(Error::CodebookMismatch(format!(
                        "{dest:?} holds different centroids than the codebook being serialized"
                    )));
                }
            } else {
                std::fs::write(&dest, &cb_bytes)?;
            }
            codebook_file = Some(dest);
            (
                CodebookLocator::External {
                    name,
                    len: cb_bytes.len() as u64,
                    hash,
                },
                block_size as u64,
            )
        }
    };

    let mut entry_codes = Vec::with_capacity(graph.entrypoints().len() * m);
    for &ep in graph.entrypoints() {
        entry_codes.extend_from_slice(&codes[ep as usize * m..(ep as usize + 1) * m]);
    }
    let meta = IndexMetadata {
        mode,
        kind: dataset.kind(),
        metric: dataset.metric(),
        n: n as u64,
        dim: dataset.dim(),
        max_degree: graph.max_degree(),
        pq_m: m,
        block_size,
        chunk_size: geometry.chunk_size(),
        codebook: locator,
        node_region,
        entrypoints: graph.entrypoints().to_vec(),
        entry_codes,
    };

    let mut out = std::io::BufWriter::new(File::create(path)?);
    out.write_all(&meta.to_block()?)?;
    if let CodebookLocator::Inline { offset, .. } = &meta.codebook {
        debug_assert_eq!(*offset, block_size as u64);
        out.write_all(&cb_bytes)?;
        let pad = node_region - (block_size as u64 + cb_bytes.len() as u64);
        out.write_all(&vec![0u8; pad as usize])?;
    }

    let chunk = geometry.chunk_size();
    let cpb = geometry.chunks_per_block();
    if cpb > 0 {
        let mut block = vec![0u8; block_size];
        for first in (0..n).step_by(cpb) {
            block.fill(0);
            for slot in 0..cpb.min(n - first) {
                let id = (first + slot) as u32;
                write_chunk_into(
                    &mut block[slot * chunk..(slot + 1) * chunk],
                    id,
                    dataset,
                    graph,
                    codes,
                    &geometry,
                );
            }
            out.write_all(&block)?;
        }
    } else {
        let span = geometry.read_len();
        let mut buf = vec![0u8; span];
        for id in 0..n as u32 {
            buf.fill(0);
            write_chunk_into(&mut buf[..chunk], id, dataset, graph, codes, &geometry);
            out.write_all(&buf)?;
        }
    }
    out.flush()?;
    let file_len = node_region + geometry.region_len(n as u64);

    let mut sidecar = None;
    if mode == IndexMode::SidecarPq || options.write_sidecar {
        let sc = sidecar_path(path);
        std::fs::write(&sc, codes)?;
        sidecar = Some(sc);
    }

    Ok(SerializeReport {
        geometry,
        degree_fit,
        file_len,
        sidecar,
        codebook_file,
    })
}

pub fn sidecar_path(index_path: &Path) -> PathBuf {
    let mut os = index_path.as_os_str().to_os_string();
    os.push(".pq");
    PathBuf::from(os)
}

/// Write a standalone codebook file (shared-centroid workflow).
pub fn write_codebook_file(path: &Path, codebook: &PqCodebook) -> Result<()> {
    std::fs::write(path, codebook.to_bytes())?;
    Ok(())
}

pub fn read_codebook_file(path: &Path) -> Result<PqCodebook> {
    let bytes = std::fs::read(path)?;
    PqCodebook::from_bytes(&bytes)
}

/// Which read path chunk I/O uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IoPath {
    /// Ordinary page-cached reads (with a cache-drop hint issued at open when
    /// the direct path was requested but unavailable).
    Buffered,
    /// O_DIRECT reads; offsets, lengths, and buffers are block-aligned by
    /// construction.
    Direct,
}

impl std::fmt::Display for IoPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IoPath::Buffered => write!(f, "buffered"),
            IoPath::Direct => write!(f, "direct"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OpenOptions {
    /// Reuse these centroids when their hash matches the file's locator.
    pub shared_codebook: Option<Arc<PqCodebook>>,
    /// Ask for O_DIRECT chunk reads; falls back to buffered when the
    /// filesystem refuses.
    pub prefer_direct_io: bool,
    /// Override the search-time code source. Forcing sidecar mode on an
    /// inline file requires its `.pq` sidecar to exist; forcing inline mode
    /// on a sidecar file is an error (its chunks carry no codes).
    pub force_mode: Option<IndexMode>,
}

/// Cost of an open or switch.
#[derive(Debug, Clone)]
pub struct OpenStats {
    /// Metadata block + codebook bytes (when not reused) + sidecar bytes
    /// (sidecar search mode). Constant in N for inline mode.
    pub bytes_loaded: u64,
    pub wall: Duration,
    pub codebook_reused: bool,
    pub io_path: IoPath,
}

/// An open index. Chunk reads are safe from many threads; the counters are
/// atomic and per-call buffers are private.
pub struct IndexHandle {
    path: PathBuf,
    file: File,
    prefer_direct: bool,
    forced_mode: Option<IndexMode>,
    meta: IndexMetadata,
    geometry: ChunkGeometry,
    search_mode: IndexMode,
    codebook: Arc<PqCodebook>,
    /// Sidecar search mode only: the full N x m code array.
    ram_codes: Option<Vec<u8>>,
    open_stats: OpenStats,
    io_requests: AtomicU64,
    bytes_read: AtomicU64,
}

impl std::fmt::Debug for IndexHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IndexHandle")
            .field("path", &self.path)
            .field("n", &self.meta.n)
            .field("file_mode", &self.meta.mode)
            .field("search_mode", &self.search_mode)
            .field("io_path", &self.open_stats.io_path)
            .finish_non_exhaustive()
    }
}

impl IndexHandle {
    pub fn open(path: impl AsRef<Path>, options: OpenOptions) -> Result<Self> {
        Self::open_inner(path.as_ref(), options, false)
    }

    /// Close this index and open another. When the target's codebook hash
    /// matches the current one the loaded centroids are reused and only the
    /// metadata block is read.
    pub fn switch(self, path: impl AsRef<Path>) -> Result<Self> {
        let options = OpenOptions {
            shared_codebook: Some(Arc::clone(&self.codebook)),
            prefer_direct_io: self.prefer_direct,
            force_mode: self.forced_mode,
        };
        drop(self);
        Self::open_inner(path.as_ref(), options, true)
    }

    fn open_inner(path: &Path, options: OpenOptions, lenient_shared: bool) -> Result<Self> {
        let t0 = Instant::now();
        let mut bytes_loaded = 0u64;

        let mut boot = File::open(path)?;
        let mut head = vec![0u8; HEADER_FIXED.max(super::DEFAULT_BLOCK_SIZE)];
        let mut filled = 0usize;
        while filled < head.len() {
            let got = boot.read(&mut head[filled..])?;
            if got == 0 {
                break;
            }
            filled += got;
        }
        head.truncate(filled);
        if filled >= HEADER_FIXED {
            let block_size = LittleEndian::read_u32(&head[36..40]) as usize;
            if block_size > head.len() && block_size <= (1 << 24) {
                let mut rest = vec![0u8; block_size - head.len()];
                boot.read_exact(&mut rest).map_err(|_| Error::Corrupt {
                    offset: head.len() as u64,
                    reason: "metadata block truncated".into(),
                })?;
                head.extend_from_slice(&rest);
            }
        }
        let meta = IndexMetadata::from_block(&head)?;
        bytes_loaded += meta.block_size as u64;

        let (codebook, codebook_reused) = match &options.shared_codebook {
            Some(shared) if shared.content_hash() == *meta.codebook.hash() => {
                (Arc::clone(shared), true)
            }
            Some(_) if !lenient_shared => {
                return Err(Error::CodebookMismatch(
                    "supplied codebook hash does not match the index locator".into(),
                ));
            }
            _ => {
                let bytes = match &meta.codebook {
                    CodebookLocator::Inline { offset, len, .. } => {
                        let mut buf = vec![0u8; *len as usize];
                        boot.read_exact_at(&mut buf, *offset).map_err(|_| Error::Corrupt {
                            offset: *offset,
                            reason: "inline codebook truncated".into(),
                        })?;
                        buf
                    }
                    CodebookLocator::External { name, .. } => {
                        let dir = path.parent().unwrap_or_else(|| Path::new("."));
                        std::fs::read(dir.join(name))?
                    }
                };
                if Sha256::digest(&bytes).as_slice() != meta.codebook.hash() {
                    return Err(Error::CodebookMismatch(
                        "codebook bytes do not match the hash recorded in the index".into(),
                    ));
                }
                bytes_loaded += bytes.len() as u64;
                (Arc::new(PqCodebook::from_bytes(&bytes)?), false)
            }
        };
        if codebook.dim() != meta.dim || codebook.m() != meta.pq_m {
            return Err(Error::CodebookMismatch(format!(
                "codebook shape ({}, {}) does not match index ({}, {})",
                codebook.dim(),
                codebook.m(),
                meta.dim,
                meta.pq_m
            )));
        }

        let search_mode = match (options.force_mode, meta.mode) {
            (None, m) => m,
            (Some(IndexMode::InlinePq), IndexMode::SidecarPq) => {
                return Err(Error::InvalidParameter(
                    "cannot search a sidecar-mode file in inline mode: chunks carry no codes"
                        .into(),
                ));
            }
            (Some(m), _) => m,
        };

        let ram_codes = if search_mode == IndexMode::SidecarPq {
            let sc = sidecar_path(path);
            let codes = std::fs::read(&sc).map_err(|e| {
                Error::InvalidParameter(format!("sidecar {sc:?} unavailable: {e}"))
            })?;
            let expect = meta.n as usize * meta.pq_m;
            if codes.len() != expect {
                return Err(Error::Corrupt {
                    offset: 0,
                    reason: format!(
                        "sidecar {sc:?} holds {} bytes, expected {expect}",
                        codes.len()
                    ),
                });
            }
            bytes_loaded += codes.len() as u64;
            Some(codes)
        } else {
            None
        };

        let (file, io_path) = open_chunk_file(path, options.prefer_direct_io)?;
        let geometry = meta.geometry();
        Ok(IndexHandle {
            path: path.to_path_buf(),
            file,
            prefer_direct: options.prefer_direct_io,
            forced_mode: options.force_mode,
            meta,
            geometry,
            search_mode,
            codebook,
            ram_codes,
            open_stats: OpenStats {
                bytes_loaded,
                wall: t0.elapsed(),
                codebook_reused,
                io_path,
            },
            io_requests: AtomicU64::new(0),
            bytes_read: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn metadata(&self) -> &IndexMetadata {
        &self.meta
    }

    pub fn geometry(&self) -> &ChunkGeometry {
        &self.geometry
    }

    pub fn codebook(&self) -> &Arc<PqCodebook> {
        &self.codebook
    }

    /// The mode the file was written in.
    pub fn file_mode(&self) -> IndexMode {
        self.meta.mode
    }

    /// Where searches take neighbor PQ codes from.
    pub fn search_mode(&self) -> IndexMode {
        self.search_mode
    }

    pub fn open_stats(&self) -> &OpenStats {
        &self.open_stats
    }

    /// Which read path chunk I/O is on.
    pub fn io_path(&self) -> IoPath {
        self.open_stats.io_path
    }

    /// Cumulative (requests, bytes) over this handle's lifetime.
    pub fn io_totals(&self) -> (u64, u64) {
        (
            self.io_requests.load(Ordering::Relaxed),
            self.bytes_read.load(Ordering::Relaxed),
        )
    }

    /// RAM-resident code of a node (sidecar search mode only).
    pub fn ram_code(&self, id: u32) -> Option<&[u8]> {
        let m = self.meta.pq_m;
        self.ram_codes
            .as_ref()
            .map(|codes| &codes[id as usize * m..(id as usize + 1) * m])
    }

    /// Bytes held resident for PQ codes by this handle alone (entrypoint
    /// codes plus, in sidecar mode, the whole code array).
    pub fn resident_code_bytes(&self) -> u64 {
        let base = self.meta.entry_codes.len() as u64;
        base + self.ram_codes.as_ref().map_or(0, |c| c.len() as u64)
    }

    /// One block-aligned read, parsed into a [`NodeChunk`]. Counts one I/O
    /// request.
    pub fn read_node_chunk(&self, id: u32) -> Result<NodeChunk> {
        let loc = self.meta.node_location(id)?;
        let span = self.read_span(loc)?;
        self.io_requests.fetch_add(1, Ordering::Relaxed);
        self.bytes_read.fetch_add(loc.len as u64, Ordering::Relaxed);
        let chunk = &span.as_slice()[loc.chunk_start..loc.chunk_start + self.geometry.chunk_size()];
        self.parse_chunk(chunk, loc)
    }

    /// The raw block span holding a node's chunk (whole blocks, as read).
    pub fn read_raw_span(&self, id: u32) -> Result<(NodeLocation, Vec<u8>)> {
        let loc = self.meta.node_location(id)?;
        let span = self.read_span(loc)?;
        Ok((loc, span.as_slice().to_vec()))
    }

    fn read_span(&self, loc: NodeLocation) -> Result<AlignedBuf> {
        let mut buf = AlignedBuf::zeroed(loc.len);
        self.file
            .read_exact_at(buf.as_mut_slice(), loc.offset)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => Error::Corrupt {
                    offset: loc.offset,
                    reason: format!(
                        "chunk read of {} bytes at {} runs past end of file",
                        loc.len, loc.offset
                    ),
                },
                _ => Error::Io(e),
            })?;
        Ok(buf)
    }

    fn parse_chunk(&self, chunk: &[u8], loc: NodeLocation) -> Result<NodeChunk> {
        let g = &self.geometry;
        let b_full = g.full_vector_bytes;
        let vector = match self.meta.kind {
            VectorKind::F32 => {
                let mut v = vec![0.0f32; self.meta.dim];
                LittleEndian::read_f32_into(&chunk[..b_full], &mut v);
                OwnedVector::F32(v)
            }
            VectorKind::U8 => OwnedVector::U8(chunk[..b_full].to_vec()),
        };
        let count = LittleEndian::read_u32(&chunk[b_full..b_full + 4]) as usize;
        if count > g.max_degree {
            return Err(Error::Corrupt {
                offset: loc.offset + (loc.chunk_start + b_full) as u64,
                reason: format!("neighbor count {count} exceeds max degree {}", g.max_degree),
            });
        }
        let mut neighbors = Vec::with_capacity(count);
        for j in 0..count {
            let off = b_full + 4 + j * 4;
            let id = LittleEndian::read_u32(&chunk[off..off + 4]);
            if (id as u64) >= self.meta.n {
                return Err(Error::Corrupt {
                    offset: loc.offset + (loc.chunk_start + off) as u64,
                    reason: format!("neighbor id {id} out of range"),
                });
            }
            neighbors.push(id);
        }
        let inline_codes = if self.meta.mode == IndexMode::InlinePq {
            let start = b_full + 4 + g.max_degree * 4;
            Some(chunk[start..start + g.max_degree * g.pq_code_bytes].to_vec())
        } else {
            None
        };
        Ok(NodeChunk {
            vector,
            neighbors,
            inline_codes,
        })
    }
}

fn open_chunk_file(path: &Path, prefer_direct: bool) -> Result<(File, IoPath)> {
    if prefer_direct {
        use std::os::unix::fs::OpenOptionsExt;
        match std::fs::OpenOptions::new()
            .read(true)
            .custom_flags(libc::O_DIRECT)
            .open(path)
        {
            Ok(f) => return Ok((f, IoPath::Direct)),
            Err(_) => {
                // Direct path unavailable here; fall back to buffered reads
                // and hint the cache to drop this file.
                let f = File::open(path)?;
                unsafe {
                    use std::os::unix::io::AsRawFd;
                    libc::posix_fadvise(f.as_raw_fd(), 0, 0, libc::POSIX_FADV_DONTNEED);
                }
                return Ok((f, IoPath::Buffered));
            }
        }
    }
    Ok((File::open(path)?, IoPath::Buffered))
}

#[repr(C, align(4096))]
#[derive(Clone)]
struct AlignedBlock([u8; 4096]);

/// A zeroed buffer whose data pointer is 4096-aligned (O_DIRECT requirement).
struct AlignedBuf {
    blocks: Vec<AlignedBlock>,
    len: usize,
}

impl AlignedBuf {
    fn zeroed(len: usize) -> Self {
        AlignedBuf {
            blocks: vec![AlignedBlock([0u8; 4096]); len.div_ceil(4096)],
            len,
        }
    }

    fn as_slice(&self) -> &[u8] {
        // Sound: the blocks are contiguous plain bytes and len never exceeds
        // the allocation.
        unsafe { std::slice::from_raw_parts(self.blocks.as_ptr() as *const u8, self.len) }
    }

    fn as_mut_slice(&mut self) -> &mut [u8] {
        unsafe { std::slice::from_raw_parts_mut(self.blocks.as_mut_ptr() as *mut u8, self.len) }
    }
}
