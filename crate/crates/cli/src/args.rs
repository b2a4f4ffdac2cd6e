use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "fusesim", version, about = "Systolic-array cost model for depthwise and FuSe convolutions")]
pub struct Cli {
    /// Array configuration TOML; defaults to a 16x16 output-stationary array.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Also write per-cycle SRAM/DRAM traffic traces.
    #[arg(long, global = true)]
    pub trace: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one network and write its report, per-layer CSV and bandwidth CSV.
    Simulate(SimulateArgs),
    /// Baseline OS/WS against FuSe-Half and FuSe-Full under ST-OS.
    Compare(TopologyArg),
    /// Speedup of FuSe-Half over baseline across square or rectangular arrays.
    Sweep(SweepArgs),
    /// MAC and parameter counts.
    Count(CountArgs),
    /// Regular-iterative-algorithm analysis of recurrence systems.
    #[command(subcommand)]
    Ria(RiaCommand),
    /// Hybrid network search.
    #[command(subcommand)]
    Search(SearchCommand),
    /// Operator scaffolding checks.
    #[command(subcommand)]
    Nos(NosCommand),
    /// Inspect lowered workloads.
    #[command(subcommand)]
    Lower(LowerCommand),
}

#[derive(Debug, Args)]
pub struct TopologyArg {
    /// Topology CSV path, or `builtin:<name>`.
    pub topology: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataflowArg {
    Os,
    Ws,
    Stos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Half,
    Full,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub topology: TopologyArg,

    /// Overrides the configured dataflow.
    #[arg(long, value_enum)]
    pub dataflow: Option<DataflowArg>,

    /// Replace every depthwise layer before simulating.
    #[arg(long, value_enum)]
    pub fuse: Option<VariantArg>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub topology: TopologyArg,

    /// Comma-separated sizes, `N` for NxN or `RxS`.
    #[arg(long, default_value = "8,16,32,64", value_delimiter = ',')]
    pub sizes: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[command(flatten)]
    pub topology: TopologyArg,

    #[arg(long, value_enum)]
    pub fuse: Option<VariantArg>,
}

#[derive(Debug, Subcommand)]
pub enum RiaCommand {
    /// Classify a recurrence system and list its offsets.
    Check {
        /// System file, or `builtin:matmul`, `builtin:conv2d`, `builtin:conv1d`.
        system: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum SearchCommand {
    /// Regularized evolution; writes the Pareto set as `pareto.csv`.
    Evolve(EvolveArgs),
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    #[command(flatten)]
    pub topology: TopologyArg,

    /// λ in accuracy − λ·latency_s.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,

    #[arg(long, default_value_t = 100)]
    pub population: usize,

    #[arg(long, default_value_t = 100)]
    pub iterations: usize,

    #[arg(long, default_value_t = 50)]
    pub offspring: usize,

    #[arg(long, default_value_t = 0.1)]
    pub mutation_prob: f64,

    #[arg(long, default_value_t = 0.25)]
    pub parent_ratio: f64,

    /// `synthetic`, `constant:<accuracy>` or `table:<csv path>`.
    #[arg(long, default_value = "synthetic")]
    pub estimator: String,
}

#[derive(Debug, Subcommand)]
pub enum NosCommand {
    /// Finite-difference check of scaffold gradients on random small layers.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        cases: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum LowerCommand {
    /// Write the workload one layer lowers to as JSON.
    Dump {
        #[command(flatten)]
        topology: TopologyArg,

        /// Layer name; a FuSe row or column layer dumps its pair's slice map.
        #[arg(long)]
        layer: String,
    },
}
