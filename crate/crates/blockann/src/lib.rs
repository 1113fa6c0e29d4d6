//! Storage-resident graph ANN search with product-quantized vectors inlined
//! into block-aligned node chunks, so query memory stays constant in the
//! dataset size. A sidecar mode keeping all PQ codes in RAM is retained for
//! comparison and produces identical search traces by construction.

pub mod dataset;
mod error;
pub mod graph;
pub mod layout;
pub mod pq;
pub mod search;
pub mod vecs;

pub use dataset::{
    brute_force_knn, distance, recall_at_k, Dataset, DistanceMetric, OwnedVector, VectorKind,
    VectorView,
};
pub use error::{Error, Result};
pub use graph::{build_vamana, medoid, BuildParams, VamanaGraph};
pub use layout::{
    serialize_index, validate_degree, ChunkGeometry, DegreeFit, IndexHandle, IndexMetadata,
    IndexMode, NodeChunk, OpenOptions, SerializeOptions,
};
pub use pq::{pq_distance, DistanceTable, PqCode, PqCodebook};
pub use search::{batch_search, beam_search, search_identity_check, SearchOutcome, SearchParams};
