//! DRAM/SSD cost model for scaled-out search.
//!
//! Both layouts pay for the same base index on SSD (full vectors plus
//! adjacency). They differ in where the PQ codes go: the sidecar layout holds
//! N*b_pq bytes of DRAM on every server, while the inline layout adds
//! R*N*b_pq bytes to the shared SSD index and holds nothing per server. DRAM
//! costs roughly 30x more per byte, so inline storage loses on one server and
//! wins once the index is served from several.

/// Inputs with the defaults the estimator was sized against (1e9 vectors,
/// 32-byte codes, R = 52; DRAM 1.8 USD/GB vs SSD 0.054 USD/GB).
#[derive(Debug, Clone)]
pub struct CostModelInput {
    pub n: u64,
    /// Bytes per PQ code (b_pq = m).
    pub pq_bytes: u64,
    /// Graph max out-degree R.
    pub max_degree: u64,
    /// Bytes per full-precision vector.
    pub full_bytes: u64,
    pub servers: u32,
    pub dram_usd_per_gb: f64,
    pub ssd_usd_per_gb: f64,
    /// Charge the SSD index once per server instead of once per system.
    pub ssd_per_server: bool,
}

impl Default for CostModelInput {
    fn default() -> Self {
        CostModelInput {
            n: 1_000_000_000,
            pq_bytes: 32,
            max_degree: 52,
            full_bytes: 128,
            servers: 1,
            dram_usd_per_gb: 1.8,
            ssd_usd_per_gb: 0.054,
            ssd_per_server: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemCost {
    pub dram_gb: f64,
    pub ssd_gb: f64,
    pub usd: f64,
}

#[derive(Debug, Clone)]
pub struct CostEstimate {
    /// PQ codes in DRAM on every server.
    pub sidecar: SystemCost,
    /// PQ codes inlined into the shared SSD index.
    pub inline: SystemCost,
    /// DRAM per server for the sidecar layout, in GB.
    pub sidecar_dram_per_server_gb: f64,
    /// Smallest server count at which the inline layout is cheaper.
    pub crossover_servers: Option<u32>,
}

const GB: f64 = 1e9;

fn costs_at(input: &CostModelInput, servers: u32) -> (SystemCost, SystemCost) {
    let n = input.n as f64;
    let base_ssd = n * (input.full_bytes as f64 + 4.0 * (input.max_degree as f64 + 1.0)) / GB;
    let ssd_mult = if input.ssd_per_server { servers as f64 } else { 1.0 };

    let sidecar_dram = servers as f64 * n * input.pq_bytes as f64 / GB;
    let sidecar_ssd = base_ssd * ssd_mult;
    let sidecar = SystemCost {
        dram_gb: sidecar_dram,
        ssd_gb: sidecar_ssd,
        usd: sidecar_dram * input.dram_usd_per_gb + sidecar_ssd * input.ssd_usd_per_gb,
    };

    let inline_ssd = (base_ssd + n * (input.max_degree * input.pq_bytes) as f64 / GB) * ssd_mult;
    let inline = SystemCost {
        dram_gb: 0.0,
        ssd_gb: inline_ssd,
        usd: inline_ssd * input.ssd_usd_per_gb,
    };
    (sidecar, inline)
}

pub fn estimate_cost(input: &CostModelInput) -> CostEstimate {
    let (sidecar, inline) = costs_at(input, input.servers.max(1));
    let crossover_servers = (1..=4096u32).find(|&s| {
        let (sc, il) = costs_at(input, s);
        il.usd < sc.usd
    });
    CostEstimate {
        sidecar,
        inline,
        sidecar_dram_per_server_gb: input.n as f64 * input.pq_bytes as f64 / GB,
        crossover_servers,
    }
}
