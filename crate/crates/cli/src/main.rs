mod args;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use fusesim::format::{
    bandwidth_csv, compare_csv, count_csv, layer_csv, layerwise_csv, sweep_csv, to_sorted_json, trace_csv,
};
use fusesim::lowering::{lower_im2col, lower_stos, FusePair};
use fusesim::nos::GradCase;
use fusesim::search::{
    evolve, AccuracyEstimator, ConstantEstimator, EAConfig, SyntheticEstimator, TableEstimator,
};
use fusesim::sim::{compare, scaling_sweep, simulate_network, simulate_network_traced};
use fusesim::topology::{fuse_replace, parse_topology};
use fusesim::{golden, metrics, ria, ArrayConfig, Dataflow, FuseVariant, GemmWorkload, LayerKind, NetworkTopology};

use args::{Cli, Command, DataflowArg, LowerCommand, NosCommand, RiaCommand, SearchCommand, VariantArg};
use manifest::RunManifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fusesim::Error),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// 1 for unreadable or malformed input, 2 for failures inside a simulation.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_input_error() => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Status line on stdout. A closed pipe (`fusesim ... | head`) is not an error;
/// every result is already on disk.
fn say(line: std::fmt::Arguments) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

/// Input text plus the label recorded in the manifest.
fn read_input(spec: &str, builtins: impl Fn(&str) -> Option<&'static str>) -> Result<(String, String)> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        let text = builtins(name).ok_or_else(|| CliError::Usage(format!("unknown builtin `{name}`")))?;
        return Ok((spec.to_string(), text.to_string()));
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok((spec.to_string(), text))
}

fn builtin_system(name: &str) -> Option<&'static str> {
    Some(match name {
        "matmul" => ria::MATMUL,
        "conv2d" => ria::CONV2D,
        "conv1d" => ria::CONV1D,
        _ => return None,
    })
}

struct Run {
    out: PathBuf,
    trace: bool,
    cfg: ArrayConfig,
    manifest: RunManifest,
}

impl Run {
    fn topology(&mut self, spec: &str) -> Result<NetworkTopology> {
        let (label, text) = read_input(spec, golden::source)?;
        self.manifest.input(label, text.as_bytes());
        let stem = Path::new(spec.trim_start_matches("builtin:"))
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "network".into());
        Ok(parse_topology(&text, &stem)?)
    }

    fn emit(&mut self, name: &str, contents: &str) -> Result<()> {
        self.manifest.emit(&self.out, name, contents)?;
        say(format_args!("wrote {}", self.out.join(name).display()));
        Ok(())
    }
}

fn variant(v: VariantArg) -> FuseVariant {
    match v {
        VariantArg::Half => FuseVariant::Half,
        VariantArg::Full => FuseVariant::Full,
    }
}

fn replace_all(net: &NetworkTopology, v: Option<VariantArg>) -> Result<NetworkTopology> {
    match v {
        None => Ok(net.clone()),
        Some(v) => Ok(fuse_replace(net, variant(v), &vec![true; net.depthwise_indices().len()])?),
    }
}

fn parse_size(s: &str) -> Result<(u64, u64)> {
    let bad = || CliError::Usage(format!("array size `{s}` must be N or RxS with positive integers"));
    let (r, c) = match s.split_once(['x', 'X']) {
        Some((r, c)) => (r, c),
        None => (s, s),
    };
    let r: u64 = r.trim().parse().map_err(|_| bad())?;
    let c: u64 = c.trim().parse().map_err(|_| bad())?;
    if r == 0 || c == 0 {
        return Err(bad());
    }
    Ok((r, c))
}

fn estimator(spec: &str, run: &mut Run) -> Result<Box<dyn AccuracyEstimator>> {
    if spec == "synthetic" {
        return Ok(Box::new(SyntheticEstimator::default()));
    }
    if let Some(v) = spec.strip_prefix("constant:") {
        let v: f64 = v
            .parse()
            .map_err(|_| CliError::Usage(format!("`{v}` is not a number")))?;
        return Ok(Box::new(ConstantEstimator(v)));
    }
    if let Some(path) = spec.strip_prefix("table:") {
        let (label, text) = read_input(path, |_| None)?;
        run.manifest.input(label, text.as_bytes());
        return Ok(Box::new(TableEstimator::from_csv(&text)?));
    }
    Err(CliError::Usage(format!(
        "estimator `{spec}` must be synthetic, constant:<value> or table:<path>"
    )))
}

/// The pair containing layer `i`, with the channel count feeding it.
fn pair_at(net: &NetworkTopology, i: usize) -> Result<FusePair> {
    let row = if net.layers[i].kind == LayerKind::FuSeCol { i - 1 } else { i };
    let incoming = match row.checked_sub(1).map(|p| &net.layers[p]) {
        None => None,
        Some(prev) if prev.kind == LayerKind::FuSeCol => Some(net.layers[row - 2].out_channels + prev.out_channels),
        Some(prev) => Some(prev.out_channels),
    };
    Ok(FusePair::new(&net.layers[row], &net.layers[row + 1], incoming)?)
}

fn execute(cli: Cli) -> Result<()> {
    let mut run = Run {
        out: cli.out.clone(),
        trace: cli.trace,
        cfg: ArrayConfig::default(),
        manifest: RunManifest {
            command: std::iter::once("fusesim".to_string()).chain(std::env::args().skip(1)).collect(),
            seed: cli.seed,
            ..RunManifest::default()
        },
    };
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        run.manifest.input(path.display().to_string(), text.as_bytes());
        run.cfg = ArrayConfig::from_toml_str(&text)?;
    }
    run.cfg.validate()?;
    fs::create_dir_all(&run.out).map_err(|e| CliError::io(&run.out, e))?;

    match cli.command {
        Command::Simulate(a) => {
            let net = replace_all(&run.topology(&a.topology.topology)?, a.fuse)?;
            if let Some(d) = a.dataflow {
                run.cfg.dataflow = match d {
                    DataflowArg::Os => Dataflow::OutputStationary,
                    DataflowArg::Ws => Dataflow::WeightStationary,
                    DataflowArg::Stos => Dataflow::Stos,
                };
            }
            let report = if run.trace {
                let (report, trace) = simulate_network_traced(&net, &run.cfg)?;
                run.emit("trace.csv", &trace_csv(&trace))?;
                report
            } else {
                simulate_network(&net, &run.cfg)?
            };
            run.emit("report.json", &to_sorted_json(&report))?;
            run.emit("layers.csv", &layer_csv(&report))?;
            run.emit("bandwidth.csv", &bandwidth_csv(&report))?;
        }
        Command::Compare(a) => {
            let net = run.topology(&a.topology)?;
            let c = compare(&net, &run.cfg)?;
            run.emit("compare.csv", &compare_csv(&c))?;
            run.emit("layerwise.csv", &layerwise_csv(&c))?;
            run.emit("compare.json", &to_sorted_json(&c))?;
        }
        Command::Sweep(a) => {
            let net = run.topology(&a.topology.topology)?;
            let sizes = a
                .sizes
                .iter()
                .filter(|s| !s.trim().is_empty())
                .map(|s| parse_size(s))
                .collect::<Result<Vec<_>>>()?;
            let points = scaling_sweep(&net, &sizes, &run.cfg)?;
            run.emit("sweep.csv", &sweep_csv(&points))?;
        }
        Command::Count(a) => {
            let net = replace_all(&run.topology(&a.topology.topology)?, a.fuse)?;
            let report = metrics::network_counts(&net);
            run.emit("counts.csv", &count_csv(&report))?;
            run.emit("counts.json", &to_sorted_json(&report))?;
        }
        Command::Ria(RiaCommand::Check { system }) => {
            let (label, text) = read_input(&system, builtin_system)?;
            run.manifest.input(label, text.as_bytes());
            let sys = ria::parse_recurrences(&text)?;
            let verdict = ria::classify(&sys);
            let offsets = ria::offset_table(&sys);
            say(format_args!("ria: {}", verdict.is_ria));
            let relations: Vec<String> = sys.relations.iter().map(|r| r.to_string()).collect();
            let doc = serde_json::json!({
                "relations": relations,
                "verdict": verdict,
                "offsets": offsets,
            });
            run.emit("ria.json", &to_sorted_json(&doc))?;
        }
        Command::Search(SearchCommand::Evolve(a)) => {
            let net = run.topology(&a.topology.topology)?;
            let est = estimator(&a.estimator, &mut run)?;
            let ea = EAConfig {
                population: a.population,
                mutation_prob: a.mutation_prob,
                parent_ratio: a.parent_ratio,
                iterations: a.iterations,
                offspring: a.offspring,
                seed: cli.seed,
                latency_weight: a.lambda,
            };
            let result = evolve(&net, &run.cfg, &ea, est.as_ref())?;
            run.emit("pareto.csv", &result.to_csv())?;
        }
        Command::Nos(NosCommand::Gradcheck { cases }) => {
            let mut csv = String::from("case,seed,channels,kernel,stride,padding,loss,max_relative_error\n");
            let mut worst: f64 = 0.0;
            for i in 0..cases {
                let seed = cli.seed.wrapping_add(i);
                let case = GradCase::random(seed);
                let err = case.check()?.max_relative_error;
                worst = worst.max(err);
                let (c, k, _) = case.layer.depthwise_kernel.dims();
                csv.push_str(&format!(
                    "{i},{seed},{c},{k},{},{},{},{}\n",
                    case.stride,
                    case.padding,
                    case.loss.name(),
                    fusesim::format::fmt_g(err)
                ));
            }
            say(format_args!("max relative error: {}", fusesim::format::fmt_g(worst)));
            run.emit("gradcheck.csv", &csv)?;
        }
        Command::Lower(LowerCommand::Dump { topology, layer }) => {
            let net = run.topology(&topology.topology)?;
            let i = net
                .layers
                .iter()
                .position(|l| l.name == layer)
                .ok_or_else(|| CliError::Usage(format!("no layer named `{layer}` in {}", net.name)))?;
            let json = match net.layers[i].kind {
                LayerKind::FuSeRow | LayerKind::FuSeCol => {
                    let map = lower_stos(&pair_at(&net, i)?, &run.cfg, run.cfg.stos_strategy)?;
                    to_sorted_json(&map)
                }
                _ => to_sorted_json(&GemmWorkload::from(&lower_im2col(&net.layers[i])?)),
            };
            run.emit("lowered.json", &json)?;
        }
    }
    run.manifest.config = serde_json::to_value(&run.cfg).expect("config serializes");
    run.manifest.write(&run.out)
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("SIM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SIM_THREADS must be a positive integer, found `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match configure_threads().and_then(|()| execute(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
