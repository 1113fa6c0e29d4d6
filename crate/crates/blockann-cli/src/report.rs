//! CSV report rows. Every row carries the full configuration and seed needed
//! to reproduce it. Per-query files contain only deterministic columns, so a
//! rerun with the same seed is byte-identical; wall-clock figures live in the
//! aggregate rows.

use std::fmt::Write as _;
use std::path::Path;

use blockann::search::{BatchAggregate, SearchOutcome};
use blockann::{Result, SearchParams};

pub const BENCH_HEADER: &str = "dataset,mode,io_path,n,b_pq,r,k,l,w,seed,queries,recall_at_1,\
recall_at_k,mean_ms,p95_ms,qps,mean_io_requests,mean_bytes_read,max_peak_resident_pq_codes,\
working_set_bytes,bytes_loaded_at_open";

/// One aggregate benchmark row.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub dataset: String,
    pub mode: String,
    pub io_path: String,
    pub n: u64,
    pub b_pq: usize,
    pub r: usize,
    pub k: usize,
    pub l: usize,
    pub w: usize,
    pub seed: u64,
    pub queries: usize,
    pub recall_at_1: Option<f64>,
    pub recall_at_k: Option<f64>,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub qps: f64,
    pub mean_io_requests: f64,
    pub mean_bytes_read: f64,
    pub max_peak_resident_pq_codes: u64,
    /// Instrumented search working set: peak PQ codes * m + codebook bytes.
    pub working_set_bytes: u64,
    pub bytes_loaded_at_open: u64,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{:.4},{:.4},{:.2},{},{},{},{},{}",
            self.dataset,
            self.mode,
            self.io_path,
            self.n,
            self.b_pq,
            self.r,
            self.k,
            self.l,
            self.w,
            self.seed,
            self.queries,
            opt(self.recall_at_1),
            opt(self.recall_at_k),
            self.mean_ms,
            self.p95_ms,
            self.qps,
            self.mean_io_requests,
            self.mean_bytes_read,
            self.max_peak_resident_pq_codes,
            self.working_set_bytes,
            self.bytes_loaded_at_open,
        )
    }
}

pub fn write_bench_rows(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub const PER_QUERY_HEADER: &str =
    "query,ids,distances,hops,io_requests,bytes_read,pq_distance_computations,\
peak_resident_pq_codes,truncated";

/// Deterministic per-query rows: ids and distances are space-separated within
/// their fields. `{}` float formatting round-trips exactly.
pub fn per_query_csv(outcomes: &[Result<SearchOutcome>]) -> String {
    let mut out = String::from(PER_QUERY_HEADER);
    out.push('\n');
    for (i, o) in outcomes.iter().enumerate() {
        match o {
            Ok(o) => {
                let ids = o
                    .results
                    .iter()
                    .map(|(id, _)| id.to_string())
                    .collect::<Vec<_>>()
                    .join(" ");
                let dists = o
                    .results
                    .iter()
                    .map(|(_, d)| format!("{d}"))
                    .collect::<Vec<_>>()
                    .join(" ");
                let _ = writeln!(
                    out,
                    "{i},{ids},{dists},{},{},{},{},{},{}",
                    o.stats.hops,
                    o.stats.io_requests,
                    o.stats.bytes_read,
                    o.stats.pq_distance_computations,
                    o.stats.peak_resident_pq_codes,
                    o.truncated,
                );
            }
            Err(e) => {
                let _ = writeln!(out, "{i},error: {e},,,,,,,");
            }
        }
    }
    out
}

pub fn write_per_query_csv(path: &Path, outcomes: &[Result<SearchOutcome>]) -> Result<()> {
    std::fs::write(path, per_query_csv(outcomes))?;
    Ok(())
}

/// Recall@1 needs only the first result of each query.
pub fn recall_at_1(
    outcomes: &[Result<SearchOutcome>],
    groundtruth: &[Vec<u32>],
) -> Option<f64> {
    let mut hits = 0usize;
    let mut counted = 0usize;
    for (o, gt) in outcomes.iter().zip(groundtruth) {
        if let (Ok(o), Some(&truth)) = (o, gt.first()) {
            counted += 1;
            if o.results.first().map(|&(id, _)| id) == Some(truth) {
                hits += 1;
            }
        }
    }
    (counted > 0).then(|| hits as f64 / counted as f64)
}

/// Assemble a row from a finished batch.
#[allow(clippy::too_many_arguments)]
pub fn bench_row(
    dataset: &str,
    handle: &blockann::IndexHandle,
    params: &SearchParams,
    seed: u64,
    agg: &BatchAggregate,
    outcomes: &[Result<SearchOutcome>],
    groundtruth: Option<&[Vec<u32>]>,
) -> BenchRow {
    let meta = handle.metadata();
    BenchRow {
        dataset: dataset.to_string(),
        mode: handle.search_mode().to_string(),
        io_path: handle.io_path().to_string(),
        n: meta.n,
        b_pq: meta.pq_m,
        r: meta.max_degree,
        k: params.k,
        l: params.list_size,
        w: params.beam_width,
        seed,
        queries: agg.queries,
        recall_at_1: groundtruth.and_then(|gt| recall_at_1(outcomes, gt)),
        recall_at_k: agg.mean_recall,
        mean_ms: agg.mean_latency.as_secs_f64() * 1e3,
        p95_ms: agg.p95_latency.as_secs_f64() * 1e3,
        qps: agg.qps,
        mean_io_requests: agg.mean_io_requests,
        mean_bytes_read: agg.mean_bytes_read,
        max_peak_resident_pq_codes: agg.max_peak_resident_pq_codes,
        working_set_bytes: agg.max_peak_resident_pq_codes * meta.pq_m as u64
            + handle.codebook().serialized_len() as u64,
        bytes_loaded_at_open: handle.open_stats().bytes_loaded,
    }
}
