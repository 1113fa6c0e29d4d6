//! Subcommand implementations, kept separate from argument parsing so tests
//! can drive them directly.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::Args;

use blockann::layout::{read_codebook_file, write_codebook_file};
use blockann::vecs::{load_dataset, load_queries, read_groundtruth};
use blockann::{
    batch_search, beam_search, build_vamana, serialize_index, BuildParams, DegreeFit,
    DistanceMetric, IndexHandle, IndexMode, OpenOptions, PqCodebook, SearchParams,
    SerializeOptions, VectorKind,
};

use crate::cost::{estimate_cost, CostModelInput};
use crate::report::{bench_row, write_bench_rows, write_per_query_csv, BenchRow};
use crate::synth::{generate_files, SynthParams};

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Seed for every stochastic step (training, build order, sampling).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// I/O block size in bytes.
    #[arg(long, global = true, default_value_t = 4096)]
    pub block_size: usize,
    /// Chunk read path: buffered page-cache reads or O_DIRECT.
    #[arg(long, global = true, default_value = "buffered", value_parser = ["buffered", "direct"])]
    pub io_path: String,
}

impl GlobalArgs {
    fn open_options(&self) -> OpenOptions {
        OpenOptions {
            prefer_direct_io: self.io_path == "direct",
            ..Default::default()
        }
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// File stem: writes <stem>.fvecs, <stem>-queries.fvecs, <stem>-gt.ivecs.
    #[arg(long, default_value = "synth")]
    pub stem: String,
    #[arg(short = 'n', long, default_value_t = 10_000)]
    pub count: usize,
    #[arg(short = 'd', long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 32)]
    pub clusters: usize,
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
    #[arg(long, default_value_t = 100)]
    pub gt_k: usize,
    /// Element kind: fvecs (f32) or bvecs (u8).
    #[arg(long, default_value = "fvecs", value_parser = ["fvecs", "bvecs"])]
    pub format: String,
    #[arg(long, default_value = "l2")]
    pub metric: DistanceMetric,
}

pub fn run_gen(args: &GenArgs, globals: &GlobalArgs) -> anyhow::Result<()> {
    let params = SynthParams {
        n: args.count,
        dim: args.dim,
        clusters: args.clusters,
        seed: globals.seed,
        kind: if args.format == "bvecs" {
            VectorKind::U8
        } else {
            VectorKind::F32
        },
        metric: args.metric,
        queries: args.queries,
        gt_k: args.gt_k,
    };
    std::fs::create_dir_all(&args.out_dir)?;
    let files = generate_files(&args.out_dir, &args.stem, &params)?;
    println!(
        "wrote {} ({} x {}), {} ({} queries), {} (top-{} ids)",
        files.base.display(),
        args.count,
        args.dim,
        files.queries.display(),
        args.queries,
        files.groundtruth.display(),
        params.gt_k.min(params.n),
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Input vectors (.fvecs or .bvecs).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "l2")]
    pub metric: DistanceMetric,
    /// Output index file.
    #[arg(long)]
    pub out: PathBuf,
    /// Max graph out-degree R.
    #[arg(short = 'r', long, default_value_t = 32)]
    pub max_degree: usize,
    #[arg(long, default_value_t = 64)]
    pub l_build: usize,
    #[arg(long, default_value_t = 1.2)]
    pub alpha: f64,
    /// PQ code bytes per vector (subvector count m).
    #[arg(short = 'm', long, default_value_t = 8)]
    pub pq_bytes: usize,
    #[arg(long, default_value_t = 12)]
    pub pq_iterations: usize,
    #[arg(long, default_value = "inline")]
    pub mode: IndexMode,
    #[arg(long, default_value_t = 1)]
    pub entrypoints: usize,
    /// Reuse centroids from this codebook file instead of training, and
    /// reference it externally (enables the shared-centroid switch path).
    #[arg(long)]
    pub shared_codebook: Option<PathBuf>,
    /// Save the trained codebook to this file and reference it externally.
    #[arg(long)]
    pub codebook_out: Option<PathBuf>,
    /// Also write the .pq sidecar for an inline index.
    #[arg(long, default_value_t = false)]
    pub write_sidecar: bool,
}

pub fn run_build(args: &BuildArgs, globals: &GlobalArgs) -> anyhow::Result<()> {
    let t0 = Instant::now();
    let dataset = load_dataset(&args.data, args.metric)
        .with_context(|| format!("reading {}", args.data.display()))?;
    println!(
        "dataset: n={} d={} kind={:?} metric={:?} ({:.2}s)",
        dataset.len(),
        dataset.dim(),
        dataset.kind(),
        dataset.metric(),
        t0.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    let (codebook, external) = match &args.shared_codebook {
        Some(path) => {
            let cb = read_codebook_file(path)?;
            if cb.dim() != dataset.dim() {
                bail!(
                    "codebook dimensionality {} does not match dataset {}",
                    cb.dim(),
                    dataset.dim()
                );
            }
            println!("codebook: loaded {} (m={})", path.display(), cb.m());
            (cb, Some(path.clone()))
        }
        None => {
            let cb = PqCodebook::train(&dataset, args.pq_bytes, args.pq_iterations, globals.seed)?;
            println!(
                "codebook: trained m={} over {} vectors ({:.2}s)",
                cb.m(),
                dataset.len(),
                t.elapsed().as_secs_f64()
            );
            if let Some(out) = &args.codebook_out {
                write_codebook_file(out, &cb)?;
                println!("codebook: saved to {}", out.display());
            }
            (cb, args.codebook_out.clone())
        }
    };

    let t = Instant::now();
    let codes = codebook.encode_dataset(&dataset)?;
    println!("codes: {} bytes ({:.2}s)", codes.len(), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let params = BuildParams {
        max_degree: args.max_degree,
        build_list_size: args.l_build,
        alpha: args.alpha,
        seed: globals.seed,
        num_entrypoints: args.entrypoints,
    };
    let graph = build_vamana(&dataset, &params)?;
    println!(
        "graph: R={} l_build={} alpha={} entrypoints={:?} ({:.2}s)",
        args.max_degree,
        args.l_build,
        args.alpha,
        graph.entrypoints(),
        t.elapsed().as_secs_f64()
    );

    let options = SerializeOptions {
        external_codebook: external,
        write_sidecar: args.write_sidecar,
        block_size: globals.block_size,
    };
    let report = serialize_index(
        &args.out,
        &graph,
        &dataset,
        &codebook,
        &codes,
        args.mode,
        &options,
    )?;
    let g = &report.geometry;
    println!(
        "geometry: mode={} chunk={} bytes (b_full={} b_num=4 R={} b_pq={}), {} per 4 KB class: {}",
        args.mode,
        g.chunk_size(),
        g.full_vector_bytes,
        g.max_degree,
        g.pq_code_bytes,
        g.block_size,
        if g.chunks_per_block() > 0 {
            format!("{} chunks/block", g.chunks_per_block())
        } else {
            format!("{} blocks/chunk", g.blocks_per_chunk())
        }
    );
    match report.degree_fit {
        DegreeFit::Ok => println!("degree fit: ok"),
        DegreeFit::Adjust {
            suggested_r,
            budget,
            slack,
        } => println!(
            "degree fit: warning: {slack} of {budget} budget bytes unused; R={suggested_r} would fill it"
        ),
    }
    println!(
        "wrote {} ({} bytes){}{}",
        args.out.display(),
        report.file_len,
        report
            .sidecar
            .as_ref()
            .map(|p| format!(" + sidecar {}", p.display()))
            .unwrap_or_default(),
        report
            .codebook_file
            .as_ref()
            .map(|p| format!(" + codebook {}", p.display()))
            .unwrap_or_default(),
    );
    println!("total {:.2}s", t0.elapsed().as_secs_f64());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    #[arg(short, long, default_value_t = 10)]
    pub k: usize,
    #[arg(short, long, default_value_t = 64)]
    pub list_size: usize,
    #[arg(short = 'w', long, default_value_t = 4)]
    pub beam_width: usize,
    #[arg(long, default_value_t = 1)]
    pub concurrency: usize,
    /// Override the search-time code source (inline file with sidecar only).
    #[arg(long)]
    pub mode: Option<IndexMode>,
    /// Aggregate CSV report (one row).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-query CSV (deterministic columns only).
    #[arg(long)]
    pub per_query: Option<PathBuf>,
}

fn load_query_rows(path: &PathBuf) -> anyhow::Result<Vec<Vec<f32>>> {
    let (flat, dim, count) = load_queries(path)?;
    Ok((0..count).map(|i| flat[i * dim..(i + 1) * dim].to_vec()).collect())
}

pub fn run_search(args: &SearchArgs, globals: &GlobalArgs) -> anyhow::Result<()> {
    let handle = IndexHandle::open(
        &args.index,
        OpenOptions {
            force_mode: args.mode,
            ..globals.open_options()
        },
    )?;
    let queries = load_query_rows(&args.queries)?;
    let gt = args.groundtruth.as_deref().map(read_groundtruth).transpose()?;
    let params = SearchParams::new(args.k, args.list_size, args.beam_width);
    let batch = batch_search(&handle, &queries, &params, args.concurrency, gt.as_deref())?;

    let label = args
        .index
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "index".into());
    let row = bench_row(
        &label,
        &handle,
        &params,
        globals.seed,
        &batch.aggregate,
        &batch.outcomes,
        gt.as_deref(),
    );
    println!("{}", crate::report::BENCH_HEADER);
    println!("{}", row.csv());
    if batch.aggregate.failures > 0 {
        eprintln!("{} queries failed", batch.aggregate.failures);
    }
    if let Some(path) = &args.report {
        write_bench_rows(path, &[row])?;
    }
    if let Some(path) = &args.per_query {
        write_per_query_csv(path, &batch.outcomes)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    #[arg(short, long, default_value_t = 1)]
    pub k: usize,
    /// Candidate list sizes, comma separated.
    #[arg(long, default_value = "10,20,40,80", value_delimiter = ',')]
    pub l_values: Vec<usize>,
    #[arg(short = 'w', long, default_value_t = 4)]
    pub beam_width: usize,
    #[arg(long, default_value_t = 1)]
    pub concurrency: usize,
    #[arg(long)]
    pub mode: Option<IndexMode>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn run_sweep(args: &SweepArgs, globals: &GlobalArgs) -> anyhow::Result<()> {
    let handle = IndexHandle::open(
        &args.index,
        OpenOptions {
            force_mode: args.mode,
            ..globals.open_options()
        },
    )?;
    let queries = load_query_rows(&args.queries)?;
    let gt = args.groundtruth.as_deref().map(read_groundtruth).transpose()?;
    let label = args
        .index
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "index".into());

    let mut rows: Vec<BenchRow> = Vec::new();
    println!("{}", crate::report::BENCH_HEADER);
    for &l in &args.l_values {
        let params = SearchParams::new(args.k, l.max(args.k), args.beam_width);
        let batch = batch_search(&handle, &queries, &params, args.concurrency, gt.as_deref())?;
        let row = bench_row(
            &label,
            &handle,
            &params,
            globals.seed,
            &batch.aggregate,
            &batch.outcomes,
            gt.as_deref(),
        );
        println!("{}", row.csv());
        rows.push(row);
    }
    if let Some(path) = &args.report {
        write_bench_rows(path, &rows)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SwitchBenchArgs {
    /// Index files to cycle through (two or more).
    #[arg(long, num_args = 2.., required = true)]
    pub indices: Vec<PathBuf>,
    /// Round-robin passes over the index list.
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn run_switch_bench(args: &SwitchBenchArgs, globals: &GlobalArgs) -> anyhow::Result<()> {
    let open_opts = globals.open_options();
    let mut handle = IndexHandle::open(&args.indices[0], open_opts.clone())?;
    println!(
        "opened {} ({} bytes, {:.3} ms, io={})",
        args.indices[0].display(),
        handle.open_stats().bytes_loaded,
        handle.open_stats().wall.as_secs_f64() * 1e3,
        handle.io_path(),
    );

    let mut out = String::from("step,index,bytes_loaded,wall_ms,codebook_reused,probe_ok\n");
    println!("step,index,bytes_loaded,wall_ms,codebook_reused,probe_ok");
    let mut fast_path_hits = 0usize;
    let mut step = 0usize;
    for _ in 0..args.reps {
        for target in args.indices.iter().cycle().skip(1).take(args.indices.len()) {
            handle = handle.switch(target)?;
            let stats = handle.open_stats().clone();
            if stats.codebook_reused {
                fast_path_hits += 1;
            }
            // One probe query proves the switched-to index is usable: search
            // for the entrypoint's own vector and expect to get it back.
            let ep = handle.metadata().entrypoints[0];
            let chunk = handle.read_node_chunk(ep)?;
            let query = chunk.vector.view().to_f32();
            let probe = beam_search(&handle, &query, &SearchParams::new(1, 16, 1))?;
            let probe_ok = probe.results.first().map(|&(id, _)| id) == Some(ep);
            let line = format!(
                "{step},{},{},{:.3},{},{probe_ok}",
                target.display(),
                stats.bytes_loaded,
                stats.wall.as_secs_f64() * 1e3,
                stats.codebook_reused,
            );
            println!("{line}");
            out.push_str(&line);
            out.push('\n');
            step += 1;
        }
    }
    println!("shared-centroid fast-path hits: {fast_path_hits}/{step}");
    if let Some(path) = &args.report {
        std::fs::write(path, out)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Dump this node's chunk.
    #[arg(long)]
    pub node: Option<u32>,
}

pub fn run_inspect(args: &InspectArgs, globals: &GlobalArgs) -> anyhow::Result<()> {
    let handle = IndexHandle::open(&args.index, globals.open_options())?;
    let meta = handle.metadata();
    let g = handle.geometry();
    println!("index: {}", args.index.display());
    println!(
        "  n={} d={} kind={:?} metric={:?} mode={}",
        meta.n, meta.dim, meta.kind, meta.metric, meta.mode
    );
    println!(
        "  chunk = b_full + b_num*(R+1){} = {} + 4*{}{} = {} bytes",
        match meta.mode {
            IndexMode::InlinePq => " + R*b_pq",
            IndexMode::SidecarPq => "",
        },
        g.full_vector_bytes,
        g.max_degree + 1,
        match meta.mode {
            IndexMode::InlinePq => format!(" + {}*{}", g.max_degree, g.pq_code_bytes),
            IndexMode::SidecarPq => String::new(),
        },
        g.chunk_size(),
    );
    println!(
        "  block={} fit={} node_region at byte {}",
        meta.block_size,
        if g.chunks_per_block() > 0 {
            format!("{} chunks/block", g.chunks_per_block())
        } else {
            format!("{} blocks/chunk", g.blocks_per_chunk())
        },
        meta.node_region,
    );
    let hash_hex: String = meta.codebook.hash().iter().map(|b| format!("{b:02x}")).collect();
    match &meta.codebook {
        blockann::layout::CodebookLocator::Inline { offset, len, .. } => {
            println!("  codebook: inline at byte {offset}, {len} bytes, hash {hash_hex}")
        }
        blockann::layout::CodebookLocator::External { name, len, .. } => {
            println!("  codebook: external {name} ({len} bytes), hash {hash_hex}")
        }
    }
    println!("  entrypoints: {:?}", meta.entrypoints);

    if let Some(id) = args.node {
        let loc = meta.node_location(id)?;
        let chunk = handle.read_node_chunk(id)?;
        println!(
            "node {id}: read {} bytes at byte {}, chunk at +{}",
            loc.len, loc.offset, loc.chunk_start
        );
        match &chunk.vector {
            blockann::OwnedVector::F32(v) => println!("  vector: {:?}", &v[..v.len().min(8)]),
            blockann::OwnedVector::U8(v) => println!("  vector: {:?}", &v[..v.len().min(8)]),
        }
        println!("  neighbors ({}): {:?}", chunk.neighbors.len(), chunk.neighbors);
        if let Some(codes) = &chunk.inline_codes {
            for (j, _) in chunk.neighbors.iter().enumerate() {
                let code = &codes[j * meta.pq_m..(j + 1) * meta.pq_m];
                println!("  inline code[{j}]: {code:02x?}");
            }
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct CostArgs {
    /// Dataset size N.
    #[arg(long, default_value_t = 1_000_000_000)]
    pub n: u64,
    /// Bytes per PQ code.
    #[arg(long, default_value_t = 32)]
    pub b_pq: u64,
    #[arg(short = 'r', long, default_value_t = 52)]
    pub max_degree: u64,
    /// Bytes per full-precision vector.
    #[arg(long, default_value_t = 128)]
    pub b_full: u64,
    #[arg(long, default_value_t = 6)]
    pub servers: u32,
    #[arg(long, default_value_t = 1.8)]
    pub c_dram: f64,
    #[arg(long, default_value_t = 0.054)]
    pub c_ssd: f64,
    /// Charge the SSD index per server instead of once.
    #[arg(long, default_value_t = false)]
    pub ssd_per_server: bool,
}

pub fn run_cost(args: &CostArgs) -> anyhow::Result<()> {
    let input = CostModelInput {
        n: args.n,
        pq_bytes: args.b_pq,
        max_degree: args.max_degree,
        full_bytes: args.b_full,
        servers: args.servers,
        dram_usd_per_gb: args.c_dram,
        ssd_usd_per_gb: args.c_ssd,
        ssd_per_server: args.ssd_per_server,
    };
    let est = estimate_cost(&input);
    println!(
        "pq-in-dram: dram/server = {:.1} GB",
        est.sidecar_dram_per_server_gb
    );
    println!("servers,system,dram_gb,ssd_gb,usd");
    for s in 1..=args.servers.max(1) {
        let at = estimate_cost(&CostModelInput { servers: s, ..input.clone() });
        println!(
            "{s},pq-in-dram,{:.1},{:.1},{:.2}",
            at.sidecar.dram_gb, at.sidecar.ssd_gb, at.sidecar.usd
        );
        println!(
            "{s},pq-inline,{:.1},{:.1},{:.2}",
            at.inline.dram_gb, at.inline.ssd_gb, at.inline.usd
        );
    }
    match est.crossover_servers {
        Some(s) => println!("inline layout is cheaper from {s} servers"),
        None => println!("inline layout never becomes cheaper within 4096 servers"),
    }
    Ok(())
}

/// Open a handle with a preloaded codebook, for tests and tooling.
pub fn open_with_codebook(
    path: &PathBuf,
    codebook: Arc<PqCodebook>,
    globals: &GlobalArgs,
) -> anyhow::Result<IndexHandle> {
    Ok(IndexHandle::open(
        path,
        OpenOptions {
            shared_codebook: Some(codebook),
            ..globals.open_options()
        },
    )?)
}
