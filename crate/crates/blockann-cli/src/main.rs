use clap::{Parser, Subcommand};

use blockann_cli::commands::{self, GlobalArgs};

/// Disk-resident graph ANN search over block-aligned node chunks.
#[derive(Parser)]
#[command(name = "blockann", version, about)]
struct Cli {
    #[command(flatten)]
    globals: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset with queries and ground truth.
    Gen(commands::GenArgs),
    /// Train, build, and serialize an index.
    Build(commands::BuildArgs),
    /// Run a query batch against an index.
    Search(commands::SearchArgs),
    /// Sweep the candidate list size L, one report row per value.
    Sweep(commands::SweepArgs),
    /// Cycle between indices, measuring switch cost with a probe query.
    SwitchBench(commands::SwitchBenchArgs),
    /// Dump metadata and, optionally, a node chunk.
    Inspect(commands::InspectArgs),
    /// DRAM/SSD cost model for scaled-out search.
    Cost(commands::CostArgs),
}

fn main() -> anyhow::Result<()> {
    // Die quietly when a pager closes the pipe.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match &cli.command {
        Command::Gen(args) => commands::run_gen(args, &cli.globals),
        Command::Build(args) => commands::run_build(args, &cli.globals),
        Command::Search(args) => commands::run_search(args, &cli.globals),
        Command::Sweep(args) => commands::run_sweep(args, &cli.globals),
        Command::SwitchBench(args) => commands::run_switch_bench(args, &cli.globals),
        Command::Inspect(args) => commands::run_inspect(args, &cli.globals),
        Command::Cost(args) => commands::run_cost(args),
    }
}
