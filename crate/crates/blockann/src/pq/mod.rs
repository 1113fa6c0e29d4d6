//! Product quantization: codebook training, vector encoding, and asymmetric
//! distance computation through per-query lookup tables.
//!
//! A vector is split into `m` contiguous subvectors; each subspace is
//! quantized to one of 256 centroids, so a code is `m` bytes. With a
//! per-query table of subspace-to-centroid partial distances, the compressed
//! distance of any code is an `m`-term sum.

mod kmeans;

use byteorder::{ByteOrder, LittleEndian};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, DistanceMetric, VectorView};
use crate::error::{Error, Result};

/// Centroids per subspace. Codes are one byte per subspace.
pub const CENTROIDS_PER_SUBSPACE: usize = 256;

const CODEBOOK_MAGIC: &[u8; 4] = b"PQCB";
const CODEBOOK_VERSION: u32 = 1;

/// A PQ code: one centroid index per subspace.
pub type PqCode = Vec<u8>;

/// A trained product quantizer.
///
/// Subspaces are contiguous coordinate ranges; the first `d mod m` subspaces
/// get the extra coordinate when `m` does not divide `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    dim: usize,
    m: usize,
    metric: DistanceMetric,
    subdims: Vec<usize>,
    /// Coordinate offset of each subspace in the original vector.
    offsets: Vec<usize>,
    /// Per subspace: 256 x subdim floats, row-major; subspaces concatenated.
    centroids: Vec<f32>,
    /// Start of each subspace's centroid block in `centroids`.
    centroid_offsets: Vec<usize>,
}

/// Subspace dimensionalities: each gets floor(d/m) or ceil(d/m), summing to d.
pub fn subspace_dims(dim: usize, m: usize) -> Vec<usize> {
    let base = dim / m;
    let extra = dim % m;
    (0..m).map(|j| if j < extra { base + 1 } else { base }).collect()
}

impl PqCodebook {
    /// Train per-subspace k-means (k = 256) over the dataset's subvectors.
    ///
    /// Deterministic under a fixed `(dataset, m, iterations, seed)`. Codebooks
    /// are always trained with Euclidean k-means; the metric only controls how
    /// query tables are built.
    pub fn train(dataset: &Dataset, m: usize, iterations: usize, seed: u64) -> Result<Self> {
        let dim = dataset.dim();
        if m == 0 || m > dim {
            return Err(Error::InvalidParameter(format!(
                "subvector count m={m} must be in 1..={dim}"
            )));
        }
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = dataset.len();
        let subdims = subspace_dims(dim, m);
        let offsets = prefix(&subdims);

        // Each subspace trains independently; the per-subspace seed keeps the
        // result identical whether or not this runs in parallel.
        let blocks: Vec<Vec<f32>> = (0..m)
            .into_par_iter()
            .map(|j| {
                let sd = subdims[j];
                let off = offsets[j];
                let mut sub = vec![0.0f32; n * sd];
                for i in 0..n {
                    copy_subvector(dataset.vector(i as u32), off, sd, &mut sub[i * sd..(i + 1) * sd]);
                }
                kmeans::run(
                    &sub,
                    n,
                    sd,
                    CENTROIDS_PER_SUBSPACE,
                    iterations,
                    subspace_seed(seed, j),
                )
            })
            .collect();

        let mut centroids = Vec::with_capacity(CENTROIDS_PER_SUBSPACE * dim);
        for b in blocks {
            centroids.extend_from_slice(&b);
        }
        let centroid_offsets = prefix(&subdims.iter().map(|sd| sd * CENTROIDS_PER_SUBSPACE).collect::<Vec<_>>());
        Ok(PqCodebook {
            dim,
            m,
            metric: dataset.metric(),
            subdims,
            offsets,
            centroids,
            centroid_offsets,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Subvector count; also the code size in bytes.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn subdims(&self) -> &[usize] {
        &self.subdims
    }

    pub fn centroid(&self, subspace: usize, index: usize) -> &[f32] {
        let sd = self.subdims[subspace];
        let base = self.centroid_offsets[subspace] + index * sd;
        &self.centroids[base..base + sd]
    }

    /// Encode a vector: per subspace, the index of the nearest centroid
    /// (squared Euclidean within the subspace, ties toward the lowest index).
    pub fn encode(&self, vector: VectorView<'_>) -> Result<PqCode> {
        let mut code = vec![0u8; self.m];
        self.encode_into(vector, &mut code)?;
        Ok(code)
    }

    pub fn encode_into(&self, vector: VectorView<'_>, out: &mut [u8]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        debug_assert_eq!(out.len(), self.m);
        let mut sub = Vec::new();
        for j in 0..self.m {
            let sd = self.subdims[j];
            sub.resize(sd, 0.0);
            copy_subvector(vector, self.offsets[j], sd, &mut sub);
            let block = &self.centroids
                [self.centroid_offsets[j]..self.centroid_offsets[j] + CENTROIDS_PER_SUBSPACE * sd];
            out[j] = kmeans::nearest_centroid(&sub, block, sd) as u8;
        }
        Ok(())
    }

    /// Reconstruct the centroid tuple a code refers to.
    pub fn decode(&self, code: &[u8]) -> Vec<f32> {
        debug_assert_eq!(code.len(), self.m);
        let mut out = Vec::with_capacity(self.dim);
        for j in 0..self.m {
            out.extend_from_slice(self.centroid(j, code[j] as usize));
        }
        out
    }

    /// Precompute the m x 256 table of partial distances from the query to
    /// every centroid, so each code's distance is an m-term table sum.
    pub fn distance_table(&self, query: &[f32]) -> Result<DistanceTable> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let mut entries = vec![0.0f64; self.m * CENTROIDS_PER_SUBSPACE];
        for j in 0..self.m {
            let sd = self.subdims[j];
            let q = &query[self.offsets[j]..self.offsets[j] + sd];
            for c in 0..CENTROIDS_PER_SUBSPACE {
                let cent = self.centroid(j, c);
                let mut acc = 0.0f64;
                match self.metric {
                    DistanceMetric::SquaredEuclidean => {
                        for i in 0..sd {
                            let d = q[i] as f64 - cent[i] as f64;
                            acc += d * d;
                        }
                    }
                    DistanceMetric::MaxInnerProduct => {
                        for i in 0..sd {
                            acc += q[i] as f64 * cent[i] as f64;
                        }
                        acc = -acc;
                    }
                }
                entries[j * CENTROIDS_PER_SUBSPACE + c] = acc;
            }
        }
        Ok(DistanceTable { m: self.m, entries })
    }

    /// Serialized byte length.
    pub fn serialized_len(&self) -> usize {
        // magic + version + d + m + metric, subdims, centroids
        4 + 4 + 4 + 4 + 1 + 4 * self.m + 4 * self.centroids.len()
    }

    /// Little-endian serialization: header {magic "PQCB", version, d, m,
    /// metric}, subdims (m x u32), then centroids as f32 row-major per
    /// subspace.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(CODEBOOK_MAGIC);
        out.extend_from_slice(&CODEBOOK_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        out.push(self.metric.tag());
        for &sd in &self.subdims {
            out.extend_from_slice(&(sd as u32).to_le_bytes());
        }
        let mut buf = vec![0u8; 4 * self.centroids.len()];
        LittleEndian::write_f32_into(&self.centroids, &mut buf);
        out.extend_from_slice(&buf);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |offset: usize, reason: &str| Error::Corrupt {
            offset: offset as u64,
            reason: reason.to_string(),
        };
        if bytes.len() < 17 {
            return Err(corrupt(0, "codebook shorter than its header"));
        }
        if &bytes[0..4] != CODEBOOK_MAGIC {
            return Err(corrupt(0, "bad codebook magic"));
        }
        let version = LittleEndian::read_u32(&bytes[4..8]);
        if version != CODEBOOK_VERSION {
            return Err(corrupt(4, "unsupported codebook version"));
        }
        let dim = LittleEndian::read_u32(&bytes[8..12]) as usize;
        let m = LittleEndian::read_u32(&bytes[12..16]) as usize;
        let metric = DistanceMetric::from_tag(bytes[16])
            .ok_or_else(|| corrupt(16, "unknown metric tag"))?;
        if m == 0 || m > dim {
            return Err(corrupt(12, "invalid subvector count"));
        }
        let mut pos = 17;
        if bytes.len() < pos + 4 * m {
            return Err(corrupt(pos, "truncated subdims"));
        }
        let mut subdims = Vec::with_capacity(m);
        for _ in 0..m {
            subdims.push(LittleEndian::read_u32(&bytes[pos..pos + 4]) as usize);
            pos += 4;
        }
        if subdims.iter().sum::<usize>() != dim {
            return Err(corrupt(17, "subdims do not sum to dimensionality"));
        }
        let n_floats = CENTROIDS_PER_SUBSPACE * dim;
        if bytes.len() != pos + 4 * n_floats {
            return Err(corrupt(pos, "centroid payload length mismatch"));
        }
        let mut centroids = vec![0.0f32; n_floats];
        LittleEndian::read_f32_into(&bytes[pos..], &mut centroids);
        let offsets = prefix(&subdims);
        let centroid_offsets =
            prefix(&subdims.iter().map(|sd| sd * CENTROIDS_PER_SUBSPACE).collect::<Vec<_>>());
        Ok(PqCodebook {
            dim,
            m,
            metric,
            subdims,
            offsets,
            centroids,
            centroid_offsets,
        })
    }

    /// SHA-256 of the serialized codebook; two indices sharing this hash
    /// share their centroids.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.to_bytes());
        h.finalize().into()
    }

    /// Encode every vector of a dataset into one flat n*m buffer.
    pub fn encode_dataset(&self, dataset: &Dataset) -> Result<Vec<u8>> {
        if dataset.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: dataset.dim(),
            });
        }
        let n = dataset.len();
        let m = self.m;
        let mut codes = vec![0u8; n * m];
        codes
            .par_chunks_mut(m)
            .enumerate()
            .try_for_each(|(i, out)| self.encode_into(dataset.vector(i as u32), out))?;
        Ok(codes)
    }
}

fn subspace_seed(seed: u64, j: usize) -> u64 {
    seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(j as u64 + 1))
}

fn prefix(xs: &[usize]) -> Vec<usize> {
    let mut acc = 0usize;
    xs.iter()
        .map(|&x| {
            let o = acc;
            acc += x;
            o
        })
        .collect()
}

fn copy_subvector(v: VectorView<'_>, offset: usize, len: usize, out: &mut [f32]) {
    match v {
        VectorView::F32(s) => out.copy_from_slice(&s[offset..offset + len]),
        VectorView::U8(s) => {
            for (o, &x) in out.iter_mut().zip(&s[offset..offset + len]) {
                *o = x as f32;
            }
        }
    }
}

/// Per-query lookup table; the compressed distance of a code is the sum of
/// one entry per subspace.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    m: usize,
    /// m x 256 partial distances.
    entries: Vec<f64>,
}

impl DistanceTable {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn entry(&self, subspace: usize, centroid: usize) -> f64 {
        self.entries[subspace * CENTROIDS_PER_SUBSPACE + centroid]
    }

    #[cfg(test)]
    pub(crate) fn from_entries(m: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), m * CENTROIDS_PER_SUBSPACE);
        DistanceTable { m, entries }
    }
}

/// Compressed distance of `code` under a per-query table.
#[inline]
pub fn pq_distance(code: &[u8], table: &DistanceTable) -> f64 {
    debug_assert_eq!(code.len(), table.m);
    let mut acc = 0.0f64;
    for (j, &c) in code.iter().enumerate() {
        acc += table.entries[j * CENTROIDS_PER_SUBSPACE + c as usize];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{distance, Dataset, DistanceMetric};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n: usize, dim: usize, seed: u64, metric: DistanceMetric) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Dataset::from_f32(flat, dim, metric).unwrap()
    }

    /// Dataset whose subvectors take exactly 256 distinct values per subspace;
    /// the trained codebook reproduces them with zero distortion.
    pub(crate) fn grid_dataset(
        n: usize,
        m: usize,
        subdim: usize,
        seed: u64,
        metric: DistanceMetric,
    ) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = m * subdim;
        let values: Vec<Vec<f32>> = (0..m)
            .map(|_| (0..256 * subdim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect();
        assert!(n >= 256);
        let mut flat = Vec::with_capacity(n * dim);
        for i in 0..n {
            for (j, vals) in values.iter().enumerate() {
                // First 256 rows enumerate every value so all are present.
                let c = if i < 256 { i } else { rng.gen_range(0..256usize) };
                let _ = j;
                flat.extend_from_slice(&vals[c * subdim..(c + 1) * subdim]);
            }
        }
        Dataset::from_f32(flat, dim, metric).unwrap()
    }

    #[test]
    fn subdims_split_evenly_and_unevenly() {
        assert_eq!(subspace_dims(4, 2), vec![2, 2]);
        assert_eq!(subspace_dims(10, 3), vec![4, 3, 3]);
        assert_eq!(subspace_dims(5, 5), vec![1, 1, 1, 1, 1]);
    }

    #[test]
    fn train_rejects_bad_params() {
        let ds = random_dataset(10, 4, 0, DistanceMetric::SquaredEuclidean);
        assert!(PqCodebook::train(&ds, 5, 12, 0).is_err());
        assert!(PqCodebook::train(&ds, 0, 12, 0).is_err());
    }

    #[test]
    fn zero_distortion_codebook_reproduces_values() {
        let ds = grid_dataset(600, 2, 2, 5, DistanceMetric::SquaredEuclidean);
        let cb = PqCodebook::train(&ds, 2, 12, 7).unwrap();
        // Every vector decodes to itself through its code.
        for i in 0..ds.len() as u32 {
            let code = cb.encode(ds.vector(i)).unwrap();
            let dec = cb.decode(&code);
            assert_eq!(VectorViewVec(&dec), VectorViewVec(&ds.vector(i).to_f32()));
        }
    }

    // Helper so the comparison above prints nicely on failure.
    #[derive(PartialEq)]
    struct VectorViewVec<'a>(&'a [f32]);
    impl std::fmt::Debug for VectorViewVec<'_> {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            write!(f, "{:?}", self.0)
        }
    }

    #[test]
    fn encode_exact_centroid_match() {
        let ds = grid_dataset(300, 2, 2, 1, DistanceMetric::SquaredEuclidean);
        let cb = PqCodebook::train(&ds, 2, 12, 2).unwrap();
        // A vector assembled from centroid 0 of subspace 0 and centroid 7 of
        // subspace 1 must encode to [0, 7].
        let mut v = Vec::new();
        v.extend_from_slice(cb.centroid(0, 0));
        v.extend_from_slice(cb.centroid(1, 7));
        let code = cb.encode(VectorView::F32(&v)).unwrap();
        assert_eq!(code, vec![0, 7]);
    }

    #[test]
    fn encode_matches_exhaustive_scan() {
        let ds = random_dataset(400, 8, 3, DistanceMetric::SquaredEuclidean);
        let cb = PqCodebook::train(&ds, 4, 12, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let v: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let code = cb.encode(VectorView::F32(&v)).unwrap();
            // Independent 256-way scan per subspace.
            for j in 0..4 {
                let off = 2 * j;
                let q = &v[off..off + 2];
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for c in 0..256 {
                    let cent = cb.centroid(j, c);
                    let d = (q[0] as f64 - cent[0] as f64).powi(2)
                        + (q[1] as f64 - cent[1] as f64).powi(2);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                assert_eq!(code[j] as usize, best);
            }
        }
    }

    #[test]
    fn table_zero_at_matching_centroids() {
        let ds = grid_dataset(300, 2, 2, 8, DistanceMetric::SquaredEuclidean);
        let cb = PqCodebook::train(&ds, 2, 12, 8).unwrap();
        let mut q = Vec::new();
        q.extend_from_slice(cb.centroid(0, 3));
        q.extend_from_slice(cb.centroid(1, 200));
        let t = cb.distance_table(&q).unwrap();
        assert_eq!(t.entry(0, 3), 0.0);
        assert_eq!(t.entry(1, 200), 0.0);
    }

    #[test]
    fn degenerate_single_subspace_table_equals_direct_distance() {
        let ds = random_dataset(500, 3, 4, DistanceMetric::SquaredEuclidean);
        let cb = PqCodebook::train(&ds, 1, 12, 4).unwrap();
        let q = [0.25f32, -0.5, 0.75];
        let t = cb.distance_table(&q).unwrap();
        for c in 0..256 {
            let direct = distance(
                VectorView::F32(&q),
                VectorView::F32(cb.centroid(0, c)),
                DistanceMetric::SquaredEuclidean,
            )
            .unwrap();
            assert_eq!(t.entry(0, c), direct);
        }
    }

    #[test]
    fn table_sum_matches_reconstruction_distance() {
        for metric in [DistanceMetric::SquaredEuclidean, DistanceMetric::MaxInnerProduct] {
            let ds = random_dataset(600, 8, 5, metric);
            let cb = PqCodebook::train(&ds, 4, 12, 5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = cb.distance_table(&q).unwrap();
            for _ in 0..50 {
                let code: Vec<u8> = (0..4).map(|_| rng.gen::<u8>()).collect();
                let via_table = pq_distance(&code, &t);
                let direct = distance(
                    VectorView::F32(&q),
                    VectorView::F32(&cb.decode(&code)),
                    metric,
                )
                .unwrap();
                let denom = direct.abs().max(1.0);
                assert!(
                    ((via_table - direct) / denom).abs() < 1e-6,
                    "table {via_table} direct {direct}"
                );
            }
        }
    }

    #[test]
    fn pq_distance_examples() {
        let zero = DistanceTable::from_entries(3, vec![0.0; 3 * 256]);
        assert_eq!(pq_distance(&[1, 2, 3], &zero), 0.0);

        let mut entries = vec![0.0f64; 2 * 256];
        entries[3] = 1.5;
        entries[256 + 9] = 2.5;
        let t = DistanceTable::from_entries(2, entries);
        assert_eq!(pq_distance(&[3, 9], &t), 4.0);
    }

    #[test]
    fn zero_distortion_pq_distance_equals_exact() {
        let ds = grid_dataset(600, 2, 2, 21, DistanceMetric::SquaredEuclidean);
        let cb = PqCodebook::train(&ds, 2, 12, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q: Vec<f32> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = cb.distance_table(&q).unwrap();
        for i in 0..ds.len() as u32 {
            let code = cb.encode(ds.vector(i)).unwrap();
            let exact = ds.distance_to(VectorView::F32(&q), i).unwrap();
            // Per-subspace sums differ from the flat loop only by grouping, so
            // allow the last-ulp wiggle.
            let got = pq_distance(&code, &t);
            assert!((got - exact).abs() <= 1e-12 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn encode_decode_is_a_projection() {
        let ds = random_dataset(512, 8, 6, DistanceMetric::SquaredEuclidean);
        let cb = PqCodebook::train(&ds, 4, 12, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let v: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c1 = cb.encode(VectorView::F32(&v)).unwrap();
            let c2 = cb.encode(VectorView::F32(&cb.decode(&c1))).unwrap();
            assert_eq!(c1, c2);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = random_dataset(512, 8, 9, DistanceMetric::SquaredEuclidean);
        let a = PqCodebook::train(&ds, 4, 12, 11).unwrap();
        let b = PqCodebook::train(&ds, 4, 12, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_distortion_close_to_independent_kmeans() {
        // Textbook Lloyd's with the same seeded-permutation init policy,
        // written independently in f64.
        fn oracle_kmeans(points: &[f32], n: usize, dim: usize, iters: usize, seed: u64) -> Vec<f64> {
            use rand::seq::SliceRandom;
            let k = 256usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut cents: Vec<Vec<f64>> = Vec::new();
            for &i in &order {
                let row: Vec<f64> = points[i * dim..(i + 1) * dim].iter().map(|&x| x as f64).collect();
                let row32: Vec<f32> = row.iter().map(|&x| x as f32).collect();
                if cents.iter().any(|c| {
                    c.iter().map(|&x| x as f32).collect::<Vec<f32>>() == row32
                }) {
                    continue;
                }
                cents.push(row);
                if cents.len() == k {
                    break;
                }
            }
            let mut cursor = 0;
            while cents.len() < k {
                let i = order[cursor % n];
                cents.push(points[i * dim..(i + 1) * dim].iter().map(|&x| x as f64).collect());
                cursor += 1;
            }
            let mut assign = vec![usize::MAX; n];
            for _ in 0..iters {
                let mut changed = false;
                for i in 0..n {
                    let mut best = 0;
                    let mut best_d = f64::INFINITY;
                    for (c, cent) in cents.iter().enumerate() {
                        let mut d = 0.0;
                        for j in 0..dim {
                            let diff = points[i * dim + j] as f64 - cent[j];
                            d += diff * diff;
                        }
                        if d < best_d {
                            best_d = d;
                            best = c;
                        }
                    }
                    if assign[i] != best {
                        assign[i] = best;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
                let mut sums = vec![vec![0.0f64; dim]; k];
                let mut counts = vec![0usize; k];
                for i in 0..n {
                    counts[assign[i]] += 1;
                    for j in 0..dim {
                        sums[assign[i]][j] += points[i * dim + j] as f64;
                    }
                }
                for c in 0..k {
                    if counts[c] > 0 {
                        for j in 0..dim {
                            cents[c][j] = (sums[c][j] / counts[c] as f64) as f32 as f64;
                        }
                    }
                }
                for c in 0..k {
                    if counts[c] > 0 {
                        continue;
                    }
                    let mut far_i = usize::MAX;
                    let mut far_d = -1.0;
                    for i in 0..n {
                        if counts[assign[i]] <= 1 {
                            continue;
                        }
                        let mut d = 0.0;
                        for j in 0..dim {
                            let diff = points[i * dim + j] as f64 - cents[assign[i]][j];
                            d += diff * diff;
                        }
                        if d > far_d {
                            far_d = d;
                            far_i = i;
                        }
                    }
                    if far_i == usize::MAX {
                        break;
                    }
                    counts[assign[far_i]] -= 1;
                    counts[c] = 1;
                    cents[c] = points[far_i * dim..(far_i + 1) * dim].iter().map(|&x| x as f64).collect();
                    assign[far_i] = c;
                }
            }
            // Final per-point distortion against the converged centroids.
            (0..n)
                .map(|i| {
                    let mut best = f64::INFINITY;
                    for cent in &cents {
                        let mut d = 0.0;
                        for j in 0..dim {
                            let diff = points[i * dim + j] as f64 - cent[j];
                            d += diff * diff;
                        }
                        best = best.min(d);
                    }
                    best
                })
                .collect()
        }

        let (n, dim, m, seed) = (2048usize, 16usize, 4usize, 13u64);
        let ds = random_dataset(n, dim, 31, DistanceMetric::SquaredEuclidean);
        let cb = PqCodebook::train(&ds, m, 12, seed).unwrap();

        let mut ours = 0.0f64;
        for i in 0..n as u32 {
            let code = cb.encode(ds.vector(i)).unwrap();
            ours += distance(
                ds.vector(i),
                VectorView::F32(&cb.decode(&code)),
                DistanceMetric::SquaredEuclidean,
            )
            .unwrap();
        }
        ours /= n as f64;

        let subdim = dim / m;
        let mut theirs = 0.0f64;
        for j in 0..m {
            let mut sub = vec![0.0f32; n * subdim];
            for i in 0..n {
                let v = ds.vector(i as u32).to_f32();
                sub[i * subdim..(i + 1) * subdim]
                    .copy_from_slice(&v[j * subdim..(j + 1) * subdim]);
            }
            let dists = oracle_kmeans(&sub, n, subdim, 12, subspace_seed(seed, j));
            theirs += dists.iter().sum::<f64>() / n as f64;
        }

        let rel = ((ours - theirs) / theirs).abs();
        assert!(rel < 0.01, "ours {ours} oracle {theirs} rel {rel}");
    }

    #[test]
    fn codebook_serialization_round_trip() {
        let ds = random_dataset(300, 10, 14, DistanceMetric::MaxInnerProduct);
        let cb = PqCodebook::train(&ds, 3, 12, 14).unwrap();
        let bytes = cb.to_bytes();
        assert_eq!(bytes.len(), cb.serialized_len());
        let back = PqCodebook::from_bytes(&bytes).unwrap();
        assert_eq!(cb, back);
        assert_eq!(cb.content_hash(), back.content_hash());
    }

    #[test]
    fn codebook_rejects_corruption() {
        let ds = random_dataset(300, 4, 15, DistanceMetric::SquaredEuclidean);
        let cb = PqCodebook::train(&ds, 2, 12, 15).unwrap();
        let mut bytes = cb.to_bytes();
        bytes[0] = b'X';
        assert!(PqCodebook::from_bytes(&bytes).is_err());
        let bytes = cb.to_bytes();
        assert!(PqCodebook::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
