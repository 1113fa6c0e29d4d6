//! Seeded synthetic datasets: a Gaussian mixture with matching queries and
//! exact ground truth, written in the standard vector file formats.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blockann::vecs::{write_bvecs, write_fvecs, write_ivecs};
use blockann::{brute_force_knn, Dataset, DistanceMetric, Result, VectorKind, VectorView};

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub n: usize,
    pub dim: usize,
    pub clusters: usize,
    pub seed: u64,
    pub kind: VectorKind,
    pub metric: DistanceMetric,
    pub queries: usize,
    /// Ground-truth depth per query.
    pub gt_k: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n: 10_000,
            dim: 16,
            clusters: 32,
            seed: 0,
            kind: VectorKind::F32,
            metric: DistanceMetric::SquaredEuclidean,
            queries: 1000,
            gt_k: 100,
        }
    }
}

fn gaussian(rng: &mut impl Rng) -> f32 {
    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
    let u2: f32 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos()
}

/// Mixture sample in f32, before any element-kind conversion.
fn sample(centers: &[Vec<f32>], which: usize, dim: usize, rng: &mut impl Rng) -> Vec<f32> {
    let c = &centers[which];
    (0..dim).map(|j| c[j] + 0.15 * gaussian(rng)).collect()
}

fn to_u8(x: f32) -> u8 {
    (127.5 + 64.0 * x).round().clamp(0.0, 255.0) as u8
}

/// Generate the dataset and queries in memory. Queries are drawn from the
/// same mixture and always returned as f32 rows.
pub fn generate_in_memory(p: &SynthParams) -> Result<(Dataset, Vec<Vec<f32>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let centers: Vec<Vec<f32>> = (0..p.clusters.max(1))
        .map(|_| (0..p.dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect();

    let mut base = Vec::with_capacity(p.n * p.dim);
    for i in 0..p.n {
        base.extend(sample(&centers, i % centers.len(), p.dim, &mut rng));
    }
    let dataset = match p.kind {
        VectorKind::F32 => Dataset::from_f32(base, p.dim, p.metric)?,
        VectorKind::U8 => {
            Dataset::from_u8(base.iter().map(|&x| to_u8(x)).collect(), p.dim, p.metric)?
        }
    };

    let queries: Vec<Vec<f32>> = (0..p.queries)
        .map(|i| {
            let q = sample(&centers, i % centers.len(), p.dim, &mut rng);
            match p.kind {
                VectorKind::F32 => q,
                // Queries live in the same quantized space as the data.
                VectorKind::U8 => q.iter().map(|&x| to_u8(x) as f32).collect(),
            }
        })
        .collect();
    Ok((dataset, queries))
}

/// Exact ground truth for a query set.
pub fn exact_groundtruth(dataset: &Dataset, queries: &[Vec<f32>], k: usize) -> Result<Vec<Vec<u32>>> {
    queries
        .iter()
        .map(|q| {
            Ok(brute_force_knn(dataset, VectorView::F32(q), k)?
                .into_iter()
                .map(|(id, _)| id)
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub base: PathBuf,
    pub queries: PathBuf,
    pub groundtruth: PathBuf,
}

/// Generate and write `<stem>.fvecs|bvecs`, `<stem>-queries.*`, and
/// `<stem>-gt.ivecs` under `dir`.
pub fn generate_files(dir: &Path, stem: &str, p: &SynthParams) -> Result<SynthFiles> {
    let (dataset, queries) = generate_in_memory(p)?;
    let gt = exact_groundtruth(&dataset, &queries, p.gt_k.min(p.n))?;

    let ext = match p.kind {
        VectorKind::F32 => "fvecs",
        VectorKind::U8 => "bvecs",
    };
    let base = dir.join(format!("{stem}.{ext}"));
    let qpath = dir.join(format!("{stem}-queries.{ext}"));
    let gtpath = dir.join(format!("{stem}-gt.ivecs"));

    match p.kind {
        VectorKind::F32 => {
            let mut flat = Vec::with_capacity(p.n * p.dim);
            for i in 0..p.n as u32 {
                flat.extend_from_slice(match dataset.vector(i) {
                    VectorView::F32(v) => v,
                    _ => unreachable!(),
                });
            }
            write_fvecs(&base, &flat, p.dim)?;
            let qflat: Vec<f32> = queries.iter().flatten().copied().collect();
            write_fvecs(&qpath, &qflat, p.dim)?;
        }
        VectorKind::U8 => {
            let mut flat = Vec::with_capacity(p.n * p.dim);
            for i in 0..p.n as u32 {
                flat.extend_from_slice(match dataset.vector(i) {
                    VectorView::U8(v) => v,
                    _ => unreachable!(),
                });
            }
            write_bvecs(&base, &flat, p.dim)?;
            let qflat: Vec<u8> = queries.iter().flatten().map(|&x| x as u8).collect();
            write_bvecs(&qpath, &qflat, p.dim)?;
        }
    }
    let rows: Vec<Vec<i32>> = gt
        .iter()
        .map(|row| row.iter().map(|&id| id as i32).collect())
        .collect();
    write_ivecs(&gtpath, &rows)?;
    Ok(SynthFiles {
        base,
        queries: qpath,
        groundtruth: gtpath,
    })
}
