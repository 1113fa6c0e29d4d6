//! Beam search with re-ranking.
//!
//! Traversal is steered by compressed (PQ) distances; every expanded node's
//! full-precision vector is taken from its chunk and the final answer is the
//! expanded set re-ranked by full-precision distance. The two search modes
//! differ only in where a neighbor's PQ code comes from: the RAM-resident
//! sidecar array, or the inline slots of the chunk just read. Entrypoints are
//! scored from the codes stored in the metadata block in both modes, and all
//! tie-breaking is by ascending id, so same-provenance indices produce
//! identical traces hop for hop.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::dataset::{distance_unchecked, recall_at_k, VectorView};
use crate::error::{Error, Result};
use crate::layout::{IndexHandle, IndexMode, NodeChunk};
use crate::pq::pq_distance;

/// Per-query search parameters.
#[derive(Debug, Clone, Copy)]
pub struct SearchParams {
    /// Result count.
    pub k: usize,
    /// Candidate list size L; must be >= k.
    pub list_size: usize,
    /// Beamwidth w: chunks fetched per hop.
    pub beam_width: usize,
}

impl SearchParams {
    pub fn new(k: usize, list_size: usize, beam_width: usize) -> Self {
        SearchParams {
            k,
            list_size,
            beam_width,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if self.list_size < self.k {
            return Err(Error::InvalidParameter(format!(
                "list size {} < k {}",
                self.list_size, self.k
            )));
        }
        if self.beam_width == 0 {
            return Err(Error::InvalidParameter("beam width must be >= 1".into()));
        }
        Ok(())
    }
}

/// Counters for one query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Beam iterations.
    pub hops: u64,
    /// Chunk reads; equals the number of expanded nodes.
    pub io_requests: u64,
    pub bytes_read: u64,
    pub pq_distance_computations: u64,
    /// Most PQ codes materialized at once: n_ep entrypoint codes plus, in
    /// inline mode, R slots per chunk in flight; in sidecar mode the whole
    /// N-code array is resident.
    pub peak_resident_pq_codes: u64,
    pub wall: Duration,
}

/// Top-k ids with full-precision ordering keys, plus instrumentation.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Ascending by (distance, id).
    pub results: Vec<(u32, f64)>,
    /// Set when fewer than k nodes were expanded; results holds all of them.
    pub truncated: bool,
    pub stats: SearchStats,
}

impl SearchOutcome {
    pub fn ids(&self) -> Vec<u32> {
        self.results.iter().map(|&(id, _)| id).collect()
    }
}

#[derive(Clone, Copy)]
struct PoolEntry {
    key: f64,
    id: u32,
    expanded: bool,
}

fn pool_insert(pool: &mut Vec<PoolEntry>, e: PoolEntry) {
    let pos = pool.partition_point(|x| (x.key, x.id) < (e.key, e.id));
    pool.insert(pos, e);
}

/// Beam search (Algorithm: best-first over PQ keys, re-rank by full
/// precision). See the module docs for the trace guarantees.
pub fn beam_search(
    handle: &IndexHandle,
    query: &[f32],
    params: &SearchParams,
) -> Result<SearchOutcome> {
    params.validate()?;
    let meta = handle.metadata();
    if query.len() != meta.dim {
        return Err(Error::DimensionMismatch {
            expected: meta.dim,
            got: query.len(),
        });
    }
    let t0 = Instant::now();
    let table = handle.codebook().distance_table(query)?;
    let m = meta.pq_m;
    let r = meta.max_degree;
    let inline = handle.search_mode() == IndexMode::InlinePq;

    let mut stats = SearchStats::default();
    let n_ep = meta.n_ep() as u64;
    let mut resident = n_ep; // entrypoint codes live in the metadata block
    stats.peak_resident_pq_codes = if inline {
        resident
    } else {
        meta.n + n_ep
    };

    let mut pool: Vec<PoolEntry> = Vec::with_capacity(params.list_size + 1);
    let mut seen = std::collections::HashSet::with_capacity(params.list_size * 4);
    for (i, &ep) in meta.entrypoints.iter().enumerate() {
        if seen.insert(ep) {
            let key = pq_distance(meta.entry_code(i), &table);
            stats.pq_distance_computations += 1;
            pool_insert(
                &mut pool,
                PoolEntry {
                    key,
                    id: ep,
                    expanded: false,
                },
            );
        }
    }
    pool.truncate(params.list_size);

    let qview = VectorView::F32(query);
    let mut visited: Vec<(u32, f64)> = Vec::new();
    let mut frontier: Vec<u32> = Vec::with_capacity(params.beam_width);
    let mut chunks: Vec<(u32, NodeChunk)> = Vec::with_capacity(params.beam_width);

    loop {
        // Up to w best unexpanded candidates, in pool (key, id) order.
        frontier.clear();
        for e in pool.iter_mut() {
            if !e.expanded {
                e.expanded = true;
                frontier.push(e.id);
                if frontier.len() == params.beam_width {
                    break;
                }
            }
        }
        if frontier.is_empty() {
            break;
        }
        stats.hops += 1;

        // Fetch the whole beam, then score in canonical id order so that
        // completion order can never matter.
        frontier.sort_unstable();
        chunks.clear();
        for &p in &frontier {
            match handle.read_node_chunk(p) {
                Ok(c) => {
                    stats.io_requests += 1;
                    stats.bytes_read += handle.geometry().read_len() as u64;
                    chunks.push((p, c));
                }
                Err(e) => {
                    stats.wall = t0.elapsed();
                    let source = match e {
                        Error::Io(io) => io,
                        other => std::io::Error::other(other.to_string()),
                    };
                    return Err(Error::SearchAborted {
                        stats: Box::new(stats),
                        source,
                    });
                }
            }
        }
        if inline {
            resident += chunks.len() as u64 * r as u64;
            stats.peak_resident_pq_codes = stats.peak_resident_pq_codes.max(resident);
        }

        for (p, chunk) in &chunks {
            let full = distance_unchecked(qview, chunk.vector.view(), meta.metric);
            visited.push((*p, full));
            for (j, &nbr) in chunk.neighbors.iter().enumerate() {
                if !seen.insert(nbr) {
                    continue;
                }
                let code = if inline {
                    chunk.inline_code(j, m).expect("inline chunk carries codes")
                } else {
                    handle.ram_code(nbr).expect("sidecar array is resident")
                };
                let key = pq_distance(code, &table);
                stats.pq_distance_computations += 1;
                pool_insert(
                    &mut pool,
                    PoolEntry {
                        key,
                        id: nbr,
                        expanded: false,
                    },
                );
            }
        }
        // Codes fetched for this hop are discarded after scoring.
        if inline {
            resident -= chunks.len() as u64 * r as u64;
        }
        pool.truncate(params.list_size);
    }

    visited.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let truncated = visited.len() < params.k;
    visited.truncate(params.k);
    stats.wall = t0.elapsed();
    Ok(SearchOutcome {
        results: visited,
        truncated,
        stats,
    })
}

/// One same-provenance divergence, kept human-readable for reports.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub query: usize,
    pub field: &'static str,
    pub a: String,
    pub b: String,
}

/// Result of comparing two indices built from the same graph and codes.
#[derive(Debug, Clone)]
pub struct IdentityReport {
    pub queries: usize,
    pub divergences: Vec<Divergence>,
}

impl IdentityReport {
    pub fn is_identical(&self) -> bool {
        self.divergences.is_empty()
    }
}

/// Run every query against both indices and compare the full trace: returned
/// id lists, hop counts, and I/O request counts must all match.
pub fn search_identity_check(
    a: &IndexHandle,
    b: &IndexHandle,
    queries: &[Vec<f32>],
    params: &SearchParams,
) -> Result<IdentityReport> {
    if a.codebook().content_hash() != b.codebook().content_hash() {
        return Err(Error::CodebookMismatch(
            "indices were built from different codebooks".into(),
        ));
    }
    let (ma, mb) = (a.metadata(), b.metadata());
    if ma.n != mb.n || ma.dim != mb.dim || ma.max_degree != mb.max_degree || ma.pq_m != mb.pq_m {
        return Err(Error::CodebookMismatch(format!(
            "index shapes differ: (n={}, d={}, R={}, m={}) vs (n={}, d={}, R={}, m={})",
            ma.n, ma.dim, ma.max_degree, ma.pq_m, mb.n, mb.dim, mb.max_degree, mb.pq_m
        )));
    }
    let mut divergences = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        let oa = beam_search(a, q, params)?;
        let ob = beam_search(b, q, params)?;
        if oa.ids() != ob.ids() {
            divergences.push(Divergence {
                query: qi,
                field: "ids",
                a: format!("{:?}", oa.ids()),
                b: format!("{:?}", ob.ids()),
            });
        }
        if oa.stats.hops != ob.stats.hops {
            divergences.push(Divergence {
                query: qi,
                field: "hops",
                a: oa.stats.hops.to_string(),
                b: ob.stats.hops.to_string(),
            });
        }
        if oa.stats.io_requests != ob.stats.io_requests {
            divergences.push(Divergence {
                query: qi,
                field: "io_requests",
                a: oa.stats.io_requests.to_string(),
                b: ob.stats.io_requests.to_string(),
            });
        }
    }
    Ok(IdentityReport {
        queries: queries.len(),
        divergences,
    })
}

/// Batch aggregates. Latencies are wall-clock per query; recall is present
/// when ground truth was supplied.
#[derive(Debug, Clone)]
pub struct BatchAggregate {
    pub queries: usize,
    pub failures: usize,
    pub mean_latency: Duration,
    pub p95_latency: Duration,
    pub qps: f64,
    pub mean_recall: Option<f64>,
    pub mean_io_requests: f64,
    pub mean_bytes_read: f64,
    pub max_peak_resident_pq_codes: u64,
    pub wall: Duration,
}

pub struct BatchOutcome {
    /// Per-query outcomes in input order; errors are per-query and do not
    /// abort the batch.
    pub outcomes: Vec<Result<SearchOutcome>>,
    pub aggregate: BatchAggregate,
}

/// Run many queries, optionally in parallel. Results are deterministic and
/// independent of `concurrency`; only the timing varies.
pub fn batch_search(
    handle: &IndexHandle,
    queries: &[Vec<f32>],
    params: &SearchParams,
    concurrency: usize,
    groundtruth: Option<&[Vec<u32>]>,
) -> Result<BatchOutcome> {
    params.validate()?;
    if concurrency == 0 {
        return Err(Error::InvalidParameter("concurrency must be >= 1".into()));
    }
    if let Some(gt) = groundtruth {
        if gt.len() < queries.len() {
            return Err(Error::InvalidParameter(format!(
                "ground truth has {} rows for {} queries",
                gt.len(),
                queries.len()
            )));
        }
    }
    let t0 = Instant::now();
    let outcomes: Vec<Result<SearchOutcome>> = if concurrency == 1 {
        queries.iter().map(|q| beam_search(handle, q, params)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(concurrency)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        pool.install(|| {
            queries
                .par_iter()
                .map(|q| beam_search(handle, q, params))
                .collect()
        })
    };
    let wall = t0.elapsed();

    let ok: Vec<&SearchOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let mut latencies: Vec<Duration> = ok.iter().map(|o| o.stats.wall).collect();
    latencies.sort_unstable();
    let mean_latency = if latencies.is_empty() {
        Duration::ZERO
    } else {
        latencies.iter().sum::<Duration>() / latencies.len() as u32
    };
    let p95_latency = latencies
        .get(((latencies.len() as f64 * 0.95).ceil() as usize).saturating_sub(1))
        .copied()
        .unwrap_or(Duration::ZERO);
    let mean_recall = match groundtruth {
        Some(gt) => {
            let mut total = 0.0;
            let mut counted = 0usize;
            for (i, o) in outcomes.iter().enumerate() {
                if let Ok(o) = o {
                    total += recall_at_k(&o.ids(), &gt[i], params.k)?;
                    counted += 1;
                }
            }
            (counted > 0).then(|| total / counted as f64)
        }
        None => None,
    };
    let aggregate = BatchAggregate {
        queries: queries.len(),
        failures: outcomes.len() - ok.len(),
        mean_latency,
        p95_latency,
        qps: if wall.as_secs_f64() > 0.0 {
            ok.len() as f64 / wall.as_secs_f64()
        } else {
            0.0
        },
        mean_recall,
        mean_io_requests: mean_of(&ok, |o| o.stats.io_requests as f64),
        mean_bytes_read: mean_of(&ok, |o| o.stats.bytes_read as f64),
        max_peak_resident_pq_codes: ok
            .iter()
            .map(|o| o.stats.peak_resident_pq_codes)
            .max()
            .unwrap_or(0),
        wall,
    };
    Ok(BatchOutcome { outcomes, aggregate })
}

fn mean_of(outcomes: &[&SearchOutcome], f: impl Fn(&SearchOutcome) -> f64) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().map(|o| f(o)).sum::<f64>() / outcomes.len() as f64
}
