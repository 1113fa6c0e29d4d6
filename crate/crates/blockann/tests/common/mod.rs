#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blockann::{
    build_vamana, BuildParams, Dataset, DistanceMetric, IndexMode, PqCodebook, SerializeOptions,
    VamanaGraph,
};

pub fn random_dataset(n: usize, dim: usize, seed: u64, metric: DistanceMetric) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Dataset::from_f32(flat, dim, metric).unwrap()
}

/// Gaussian-mixture dataset: `clusters` seeded centers, points scattered
/// around them.
pub fn clustered_dataset(
    n: usize,
    dim: usize,
    clusters: usize,
    seed: u64,
    metric: DistanceMetric,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..clusters)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect();
    let mut flat = Vec::with_capacity(n * dim);
    for i in 0..n {
        let c = &centers[i % clusters];
        for j in 0..dim {
            flat.push(c[j] + 0.15 * gaussian(&mut rng));
        }
    }
    Dataset::from_f32(flat, dim, metric).unwrap()
}

/// Dataset whose subvectors take exactly 256 distinct values per subspace, so
/// a trained codebook quantizes it with zero distortion.
pub fn grid_dataset(n: usize, m: usize, subdim: usize, seed: u64, metric: DistanceMetric) -> Dataset {
    assert!(n >= 256);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = m * subdim;
    let values: Vec<Vec<f32>> = (0..m)
        .map(|_| (0..256 * subdim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect();
    let mut flat = Vec::with_capacity(n * dim);
    for i in 0..n {
        for vals in &values {
            let c = if i < 256 { i } else { rng.gen_range(0..256usize) };
            flat.extend_from_slice(&vals[c * subdim..(c + 1) * subdim]);
        }
    }
    Dataset::from_f32(flat, dim, metric).unwrap()
}

pub fn gaussian(rng: &mut impl Rng) -> f32 {
    // Box-Muller; one value per call is plenty for test data.
    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
    let u2: f32 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos()
}

pub fn random_queries(count: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect()
}

pub struct BuiltIndex {
    pub dataset: Dataset,
    pub graph: VamanaGraph,
    pub codebook: PqCodebook,
    pub codes: Vec<u8>,
}

pub fn build_pipeline(dataset: Dataset, m: usize, params: &BuildParams) -> BuiltIndex {
    let codebook = PqCodebook::train(&dataset, m, 12, params.seed).unwrap();
    let codes = codebook.encode_dataset(&dataset).unwrap();
    let graph = build_vamana(&dataset, params).unwrap();
    BuiltIndex {
        dataset,
        graph,
        codebook,
        codes,
    }
}

impl BuiltIndex {
    pub fn serialize(&self, path: &Path, mode: IndexMode, options: &SerializeOptions) -> PathBuf {
        blockann::serialize_index(
            path,
            &self.graph,
            &self.dataset,
            &self.codebook,
            &self.codes,
            mode,
            options,
        )
        .unwrap();
        path.to_path_buf()
    }
}
