//! Shared fixtures for the criterion benches.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blockann::{
    build_vamana, serialize_index, BuildParams, Dataset, DistanceMetric, IndexMode, PqCodebook,
    SerializeOptions,
};

pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

pub fn random_dataset(n: usize, dim: usize, seed: u64) -> Dataset {
    Dataset::from_f32(random_vectors(n, dim, seed), dim, DistanceMetric::SquaredEuclidean).unwrap()
}

pub struct BenchIndex {
    pub dir: tempfile::TempDir,
    pub inline_path: PathBuf,
    pub sidecar_path: PathBuf,
    pub dataset: Dataset,
    pub codebook: PqCodebook,
}

/// A 10k-vector index pair used by the I/O and search benches.
pub fn bench_index(n: usize, dim: usize, m: usize, r: usize) -> BenchIndex {
    let dataset = random_dataset(n, dim, 42);
    let codebook = PqCodebook::train(&dataset, m, 12, 42).unwrap();
    let codes = codebook.encode_dataset(&dataset).unwrap();
    let graph = build_vamana(
        &dataset,
        &BuildParams {
            max_degree: r,
            build_list_size: 2 * r,
            alpha: 1.2,
            seed: 42,
            num_entrypoints: 1,
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let inline_path = dir.path().join("bench-inline.idx");
    let sidecar_path = dir.path().join("bench-sidecar.idx");
    serialize_index(
        &inline_path,
        &graph,
        &dataset,
        &codebook,
        &codes,
        IndexMode::InlinePq,
        &SerializeOptions::default(),
    )
    .unwrap();
    serialize_index(
        &sidecar_path,
        &graph,
        &dataset,
        &codebook,
        &codes,
        IndexMode::SidecarPq,
        &SerializeOptions::default(),
    )
    .unwrap();
    BenchIndex {
        dir,
        inline_path,
        sidecar_path,
        dataset,
        codebook,
    }
}
