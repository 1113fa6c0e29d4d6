//! Vector datasets, distance metrics, and the exact brute-force oracle.
//!
//! All distances are *ordering keys*: squared Euclidean is used unrooted, and
//! maximum inner product is realized as the negated inner product, so smaller
//! always means closer. Accumulation is done in f64 regardless of the element
//! type so that the same vector pair yields the same key on every code path.

use crate::error::{Error, Result};

/// Distance metric for a dataset. The key returned by [`distance`] is always
/// "smaller is closer".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMetric {
    SquaredEuclidean,
    MaxInnerProduct,
}

impl DistanceMetric {
    pub fn tag(self) -> u8 {
        match self {
            DistanceMetric::SquaredEuclidean => 0,
            DistanceMetric::MaxInnerProduct => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DistanceMetric::SquaredEuclidean),
            1 => Some(DistanceMetric::MaxInnerProduct),
            _ => None,
        }
    }
}

impl std::str::FromStr for DistanceMetric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "l2" | "euclidean" | "squared-euclidean" => Ok(DistanceMetric::SquaredEuclidean),
            "mips" | "inner-product" | "max-inner-product" => Ok(DistanceMetric::MaxInnerProduct),
            other => Err(format!("unknown metric {other:?} (expected l2 or mips)")),
        }
    }
}

/// Element type of a dataset's vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorKind {
    F32,
    U8,
}

impl VectorKind {
    /// Bytes per element.
    pub fn elem_bytes(self) -> usize {
        match self {
            VectorKind::F32 => 4,
            VectorKind::U8 => 1,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            VectorKind::F32 => 0,
            VectorKind::U8 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(VectorKind::F32),
            1 => Some(VectorKind::U8),
            _ => None,
        }
    }
}

/// Borrowed view of a single vector.
#[derive(Debug, Clone, Copy)]
pub enum VectorView<'a> {
    F32(&'a [f32]),
    U8(&'a [u8]),
}

impl<'a> VectorView<'a> {
    pub fn len(&self) -> usize {
        match self {
            VectorView::F32(s) => s.len(),
            VectorView::U8(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> VectorKind {
        match self {
            VectorView::F32(_) => VectorKind::F32,
            VectorView::U8(_) => VectorKind::U8,
        }
    }

    #[inline]
    fn get(&self, i: usize) -> f64 {
        match self {
            VectorView::F32(s) => s[i] as f64,
            VectorView::U8(s) => s[i] as f64,
        }
    }

    /// Copy into an f32 buffer (u8 elements are widened).
    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            VectorView::F32(s) => s.to_vec(),
            VectorView::U8(s) => s.iter().map(|&x| x as f32).collect(),
        }
    }
}

/// An owned vector, used when a vector is parsed out of an on-disk chunk.
#[derive(Debug, Clone, PartialEq)]
pub enum OwnedVector {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl OwnedVector {
    pub fn view(&self) -> VectorView<'_> {
        match self {
            OwnedVector::F32(v) => VectorView::F32(v),
            OwnedVector::U8(v) => VectorView::U8(v),
        }
    }
}

/// Metric evaluation between two vectors of the same dimensionality.
///
/// Squared Euclidean returns sum((a_i - b_i)^2); max inner product returns
/// -sum(a_i * b_i). Errors on dimensionality mismatch.
pub fn distance(a: VectorView<'_>, b: VectorView<'_>, metric: DistanceMetric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(distance_unchecked(a, b, metric))
}

#[inline]
pub(crate) fn distance_unchecked(
    a: VectorView<'_>,
    b: VectorView<'_>,
    metric: DistanceMetric,
) -> f64 {
    // Specialized pairs keep the inner loop free of per-element dispatch.
    match (a, b, metric) {
        (VectorView::F32(x), VectorView::F32(y), DistanceMetric::SquaredEuclidean) => {
            let mut acc = 0.0f64;
            for i in 0..x.len() {
                let d = x[i] as f64 - y[i] as f64;
                acc += d * d;
            }
            acc
        }
        (VectorView::F32(x), VectorView::F32(y), DistanceMetric::MaxInnerProduct) => {
            let mut acc = 0.0f64;
            for i in 0..x.len() {
                acc += x[i] as f64 * y[i] as f64;
            }
            -acc
        }
        (VectorView::U8(x), VectorView::U8(y), DistanceMetric::SquaredEuclidean) => {
            let mut acc = 0.0f64;
            for i in 0..x.len() {
                let d = x[i] as f64 - y[i] as f64;
                acc += d * d;
            }
            acc
        }
        (a, b, DistanceMetric::SquaredEuclidean) => {
            let mut acc = 0.0f64;
            for i in 0..a.len() {
                let d = a.get(i) - b.get(i);
                acc += d * d;
            }
            acc
        }
        (a, b, DistanceMetric::MaxInnerProduct) => {
            let mut acc = 0.0f64;
            for i in 0..a.len() {
                acc += a.get(i) * b.get(i);
            }
            -acc
        }
    }
}

enum VectorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

/// An immutable N x d dataset with implicit ids 0..N-1.
pub struct Dataset {
    dim: usize,
    metric: DistanceMetric,
    data: VectorData,
}

impl Dataset {
    /// Build a float dataset from a flat row-major buffer of N*d elements.
    pub fn from_f32(data: Vec<f32>, dim: usize, metric: DistanceMetric) -> Result<Self> {
        Self::check_shape(data.len(), dim)?;
        Ok(Dataset {
            dim,
            metric,
            data: VectorData::F32(data),
        })
    }

    /// Build an 8-bit dataset from a flat row-major buffer of N*d elements.
    pub fn from_u8(data: Vec<u8>, dim: usize, metric: DistanceMetric) -> Result<Self> {
        Self::check_shape(data.len(), dim)?;
        Ok(Dataset {
            dim,
            metric,
            data: VectorData::U8(data),
        })
    }

    fn check_shape(len: usize, dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimensionality must be > 0".into()));
        }
        if len == 0 {
            return Err(Error::EmptyDataset);
        }
        if len % dim != 0 {
            return Err(Error::InvalidParameter(format!(
                "buffer length {len} is not a multiple of dimensionality {dim}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        match &self.data {
            VectorData::F32(v) => v.len() / self.dim,
            VectorData::U8(v) => v.len() / self.dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn kind(&self) -> VectorKind {
        match &self.data {
            VectorData::F32(_) => VectorKind::F32,
            VectorData::U8(_) => VectorKind::U8,
        }
    }

    /// Bytes of one full-precision vector as laid out on disk.
    pub fn full_vector_bytes(&self) -> usize {
        self.dim * self.kind().elem_bytes()
    }

    pub fn vector(&self, id: u32) -> VectorView<'_> {
        let i = id as usize;
        let (lo, hi) = (i * self.dim, (i + 1) * self.dim);
        match &self.data {
            VectorData::F32(v) => VectorView::F32(&v[lo..hi]),
            VectorData::U8(v) => VectorView::U8(&v[lo..hi]),
        }
    }

    /// Distance between the query and a stored vector.
    pub fn distance_to(&self, query: VectorView<'_>, id: u32) -> Result<f64> {
        distance(query, self.vector(id), self.metric)
    }
}

/// Exact k-nearest-neighbor scan. Returns the k smallest-key ids sorted by
/// ascending (distance, id).
pub fn brute_force_knn(
    dataset: &Dataset,
    query: VectorView<'_>,
    k: usize,
) -> Result<Vec<(u32, f64)>> {
    let n = dataset.len();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    if query.len() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            got: query.len(),
        });
    }
    let mut all: Vec<(u32, f64)> = (0..n as u32)
        .map(|id| {
            (
                id,
                distance_unchecked(query, dataset.vector(id), dataset.metric()),
            )
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    Ok(all)
}

/// Fraction of the first k ground-truth ids present among the first k result
/// ids. Errors if either list is shorter than k.
pub fn recall_at_k(result_ids: &[u32], groundtruth_ids: &[u32], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::KOutOfRange { k, n: 0 });
    }
    if result_ids.len() < k {
        return Err(Error::KOutOfRange {
            k,
            n: result_ids.len(),
        });
    }
    if groundtruth_ids.len() < k {
        return Err(Error::KOutOfRange {
            k,
            n: groundtruth_ids.len(),
        });
    }
    let truth: std::collections::HashSet<u32> = groundtruth_ids[..k].iter().copied().collect();
    let hits = result_ids[..k].iter().filter(|id| truth.contains(id)).count();
    Ok(hits as f64 / k as f64)
}
