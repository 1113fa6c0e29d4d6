//! The on-disk index: chunk-size arithmetic, block alignment, single-file
//! serialization, and index switching.
//!
//! Every node owns one "chunk": its full-precision vector, its out-degree,
//! and its neighbor ids. In [`IndexMode::InlinePq`] the chunk additionally
//! carries the PQ codes of its neighbors, one slot per neighbor id, so a
//! search never needs a per-node code array in memory. Chunks never straddle
//! blocks they don't fully own: a chunk that doesn't fit in the space left in
//! a block starts at the next block, and every chunk costs one contiguous
//! block-aligned read of ceil(chunk/B) blocks.

mod file;

pub use file::{
    read_codebook_file, write_codebook_file, CodebookLocator, IndexHandle, IndexMetadata,
    IoPath, NodeChunk, OpenOptions, OpenStats, SerializeOptions, SerializeReport,
    serialize_index,
};

/// Where per-node PQ codes live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexMode {
    /// Codes live in a sidecar array that is loaded into RAM when the index
    /// is opened (the classic DiskANN layout); memory grows with N.
    SidecarPq,
    /// Codes are inlined into each node chunk; search memory is a constant
    /// independent of N.
    InlinePq,
}

impl IndexMode {
    pub fn tag(self) -> u8 {
        match self {
            IndexMode::SidecarPq => 0,
            IndexMode::InlinePq => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(IndexMode::SidecarPq),
            1 => Some(IndexMode::InlinePq),
            _ => None,
        }
    }
}

impl std::fmt::Display for IndexMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IndexMode::SidecarPq => write!(f, "sidecar"),
            IndexMode::InlinePq => write!(f, "inline"),
        }
    }
}

impl std::str::FromStr for IndexMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sidecar" | "ram" => Ok(IndexMode::SidecarPq),
            "inline" => Ok(IndexMode::InlinePq),
            other => Err(format!("unknown mode {other:?} (expected inline or sidecar)")),
        }
    }
}

/// Default I/O block size, matching the common OS page / LBA granularity.
pub const DEFAULT_BLOCK_SIZE: usize = 4096;

/// Bytes of one node id / degree field in a chunk.
pub const ID_BYTES: usize = 4;

/// Everything needed to size and place node chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkGeometry {
    /// Bytes of one full-precision vector.
    pub full_vector_bytes: usize,
    /// Bytes of one id/degree field (4).
    pub id_bytes: usize,
    /// Maximum out-degree R.
    pub max_degree: usize,
    /// Bytes of one PQ code (= the subvector count m).
    pub pq_code_bytes: usize,
    /// I/O block size B.
    pub block_size: usize,
    pub mode: IndexMode,
}

impl ChunkGeometry {
    /// Bytes of one node chunk.
    ///
    /// Sidecar mode: b_full + b_num * (R + 1).
    /// Inline mode:  b_full + b_num + R * (b_num + b_pq).
    pub fn chunk_size(&self) -> usize {
        let base = self.full_vector_bytes + self.id_bytes * (self.max_degree + 1);
        match self.mode {
            IndexMode::SidecarPq => base,
            IndexMode::InlinePq => base + self.max_degree * self.pq_code_bytes,
        }
    }

    /// Blocks read per chunk: ceil(chunk_size / B).
    pub fn blocks_per_chunk(&self) -> usize {
        self.chunk_size().div_ceil(self.block_size)
    }

    /// Chunks stored per block when chunk_size <= B, else 0.
    pub fn chunks_per_block(&self) -> usize {
        if self.chunk_size() <= self.block_size {
            self.block_size / self.chunk_size()
        } else {
            0
        }
    }

    /// Length of the single read that fetches one chunk.
    pub fn read_len(&self) -> usize {
        self.blocks_per_chunk() * self.block_size
    }

    /// Total bytes of the block-aligned chunk region for `n` nodes.
    pub fn region_len(&self, n: u64) -> u64 {
        let cpb = self.chunks_per_block() as u64;
        if cpb > 0 {
            n.div_ceil(cpb) * self.block_size as u64
        } else {
            n * self.read_len() as u64
        }
    }
}

/// Outcome of checking a geometry against the block-fill recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegreeFit {
    Ok,
    /// The chunk wastes more than [`DEGREE_FIT_SLACK`] of its per-chunk
    /// budget; `suggested_r` is the degree that fills the budget.
    Adjust {
        suggested_r: usize,
        budget: usize,
        slack: usize,
    },
}

/// Acceptable wasted fraction of the per-chunk byte budget.
pub const DEGREE_FIT_SLACK: f64 = 0.05;

/// Check whether the degree fills blocks effectively: a chunk should use all
/// but a small slack of its budget, which is B/n when n chunks share a block
/// and n*B when a chunk spans n blocks. When it doesn't, suggest the degree
/// that fills the budget (which may be larger than the current R).
pub fn validate_degree(geometry: &ChunkGeometry) -> DegreeFit {
    let chunk = geometry.chunk_size();
    let b = geometry.block_size;
    let budget = if chunk <= b {
        b / (b / chunk)
    } else {
        chunk.div_ceil(b) * b
    };
    let slack = budget - chunk;
    let per_neighbor = geometry.id_bytes
        + match geometry.mode {
            IndexMode::SidecarPq => 0,
            IndexMode::InlinePq => geometry.pq_code_bytes,
        };
    let base = geometry.full_vector_bytes + geometry.id_bytes;
    let suggested_r = ((budget - base) / per_neighbor).max(1);
    if slack as f64 <= DEGREE_FIT_SLACK * budget as f64 || suggested_r == geometry.max_degree {
        DegreeFit::Ok
    } else {
        DegreeFit::Adjust {
            suggested_r,
            budget,
            slack,
        }
    }
}

/// Placement of one node's chunk: a whole-block read plus the chunk's offset
/// inside the returned span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeLocation {
    /// Block-aligned byte offset of the read.
    pub offset: u64,
    /// Read length: blocks_per_chunk * B.
    pub len: usize,
    /// Chunk start within the read span.
    pub chunk_start: usize,
}

/// Byte placement of node `id` within a chunk region starting at
/// `region_offset` (which must itself be block-aligned).
pub fn node_location(id: u32, geometry: &ChunkGeometry, region_offset: u64) -> NodeLocation {
    debug_assert_eq!(region_offset % geometry.block_size as u64, 0);
    let b = geometry.block_size as u64;
    let cpb = geometry.chunks_per_block() as u64;
    if cpb > 0 {
        let block = id as u64 / cpb;
        let slot = id as u64 % cpb;
        NodeLocation {
            offset: region_offset + block * b,
            len: geometry.block_size,
            chunk_start: (slot * geometry.chunk_size() as u64) as usize,
        }
    } else {
        let len = geometry.read_len();
        NodeLocation {
            offset: region_offset + id as u64 * len as u64,
            len,
            chunk_start: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(full: usize, r: usize, pq: usize, mode: IndexMode) -> ChunkGeometry {
        ChunkGeometry {
            full_vector_bytes: full,
            id_bytes: ID_BYTES,
            max_degree: r,
            pq_code_bytes: pq,
            block_size: DEFAULT_BLOCK_SIZE,
            mode,
        }
    }

    #[test]
    fn chunk_size_sift1m_parameters() {
        // 128-dim f32 vectors, R = 56.
        let sidecar = geom(512, 56, 128, IndexMode::SidecarPq);
        assert_eq!(sidecar.chunk_size(), 740);
        let inline = geom(512, 56, 128, IndexMode::InlinePq);
        assert_eq!(inline.chunk_size(), 7908);
    }

    #[test]
    fn chunk_size_sift1b_parameters_fit_one_block() {
        // 128-dim u8 vectors, R = 52, 32-byte codes.
        let sidecar = geom(128, 52, 32, IndexMode::SidecarPq);
        let inline = geom(128, 52, 32, IndexMode::InlinePq);
        assert_eq!(sidecar.chunk_size(), 340);
        assert_eq!(inline.chunk_size(), 2004);
        // Both cost a single 4 KB read.
        assert_eq!(sidecar.read_len(), 4096);
        assert_eq!(inline.read_len(), 4096);
    }

    #[test]
    fn chunk_size_degenerate_zero_degree() {
        let g = geom(100, 0, 16, IndexMode::SidecarPq);
        assert_eq!(g.chunk_size(), 104);
        let g = geom(100, 0, 16, IndexMode::InlinePq);
        assert_eq!(g.chunk_size(), 104);
    }

    #[test]
    fn validate_degree_sift1b_is_ok() {
        // 2004 bytes, two chunks per block: fills its 2048-byte budget.
        let g = geom(128, 52, 32, IndexMode::InlinePq);
        assert_eq!(validate_degree(&g), DegreeFit::Ok);
    }

    #[test]
    fn validate_degree_exact_block_is_ok() {
        // b_full + b_num + R(b_num + b_pq) = 96 + 4 + 100 * 39.96 — pick values
        // that land exactly on 4096: base 96, slots 40 bytes, R = 100.
        let g = geom(92, 100, 36, IndexMode::InlinePq);
        assert_eq!(g.chunk_size(), 4096);
        assert_eq!(validate_degree(&g), DegreeFit::Ok);
    }

    #[test]
    fn validate_degree_kilt_suggests_filling_the_blocks() {
        // 1024-dim f32 vectors, R = 69, 128-byte codes: 13208 bytes over four
        // blocks wastes 3176 bytes; R = 93 fills toward 16384.
        let g = geom(4096, 69, 128, IndexMode::InlinePq);
        assert_eq!(g.chunk_size(), 13208);
        assert_eq!(g.blocks_per_chunk(), 4);
        match validate_degree(&g) {
            DegreeFit::Adjust {
                suggested_r,
                budget,
                slack,
            } => {
                assert_eq!(budget, 16384);
                assert_eq!(slack, 3176);
                assert_eq!(suggested_r, 93);
                let adjusted = geom(4096, suggested_r, 128, IndexMode::InlinePq);
                assert!(adjusted.chunk_size() <= 16384);
                assert_eq!(adjusted.blocks_per_chunk(), 4);
            }
            other => panic!("expected Adjust, got {other:?}"),
        }
    }

    #[test]
    fn node_location_two_chunks_per_block() {
        let mut g = geom(2048 - 4 - 56 * 4, 56, 0, IndexMode::SidecarPq);
        assert_eq!(g.chunk_size(), 2048);
        g.block_size = 4096;
        let loc = node_location(5, &g, 8192);
        // id 5 lives in the third data block, second slot.
        assert_eq!(loc.offset, 8192 + 2 * 4096);
        assert_eq!(loc.chunk_start, 2048);
        assert_eq!(loc.len, 4096);
    }

    #[test]
    fn node_location_two_blocks_per_chunk() {
        let g = geom(8192 - 4 - 32 * 4, 32, 0, IndexMode::SidecarPq);
        assert_eq!(g.chunk_size(), 8192);
        let loc = node_location(3, &g, 4096);
        assert_eq!(loc.offset, 4096 + 3 * 8192);
        assert_eq!(loc.len, 8192);
        assert_eq!(loc.chunk_start, 0);
    }

    #[test]
    fn node_locations_are_disjoint_and_block_aligned() {
        for g in [
            geom(128, 52, 32, IndexMode::InlinePq),
            geom(512, 56, 128, IndexMode::InlinePq),
            geom(512, 56, 128, IndexMode::SidecarPq),
            geom(40, 7, 3, IndexMode::InlinePq),
        ] {
            let chunk = g.chunk_size();
            let mut prev_end: u64 = 0;
            for id in 0..10_000u32 {
                let loc = node_location(id, &g, 0);
                assert_eq!(loc.offset % g.block_size as u64, 0);
                assert_eq!(loc.len % g.block_size, 0);
                assert_eq!(loc.len, g.blocks_per_chunk() * g.block_size);
                let start = loc.offset + loc.chunk_start as u64;
                assert!(start >= prev_end, "chunks overlap at id {id}");
                assert!(start + chunk as u64 <= loc.offset + loc.len as u64);
                prev_end = start + chunk as u64;
            }
        }
    }
}
