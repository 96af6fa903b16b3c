use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use lbp::baselines::{pipeline_schedule, summa_cost};
use lbp::mesh::{build_relaxation, mft_lbp_heuristic, pmft_lbp, MeshOutcome};
use lbp::sim::{gen_network, run_experiment, ExperimentConfig, ExperimentReport, ParamRanges, ReportRow, Topology};
use lbp::star::{solve_star, solve_star_relaxed, StarSolution};
use lbp::{Error, NetworkKind, NetworkModel, StarMode, Task};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "lbp", version, about = "Layer based partition scheduling for matrix multiplication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Schedule on a single-level star network.
    Star(StarArgs),
    /// Schedule on a mesh quadrant with the source in the corner.
    Mesh(MeshArgs),
    /// Run a parameter sweep described by a JSON config.
    Experiment(ExperimentArgs),
    /// Print the mesh relaxation as LP text.
    LpDump(LpDumpArgs),
}

#[derive(Debug, Args)]
struct NetworkArgs {
    /// Seed for drawing processor and link parameters.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON network fixture; takes precedence over drawn parameters.
    #[arg(long, value_name = "FILE")]
    network: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StarArgs {
    #[arg(long, required_unless_present = "network")]
    children: Option<usize>,
    #[arg(long)]
    n: u64,
    #[arg(long, value_parser = parse_mode)]
    mode: StarMode,
    #[command(flatten)]
    net: NetworkArgs,
    /// CSV report path, `-` for standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<String>,
    /// Report the continuous solution without integer adjustment.
    #[arg(long)]
    relaxed_only: bool,
    /// Print the result as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MeshAlgo {
    Pmft,
    Heuristic,
    Summa,
    Pipeline,
    Mpipeline,
}

#[derive(Debug, Args)]
struct MeshArgs {
    #[arg(long, required_unless_present = "network")]
    rows: Option<usize>,
    #[arg(long, required_unless_present = "network")]
    cols: Option<usize>,
    #[arg(long)]
    n: u64,
    #[arg(long, value_enum, default_value_t = MeshAlgo::Pmft)]
    algo: MeshAlgo,
    /// Chunks per copy for the modified pipeline.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    chunks: u64,
    #[command(flatten)]
    net: NetworkArgs,
    #[arg(long, value_name = "FILE")]
    out: Option<String>,
    /// Stream phase traces to standard error.
    #[arg(long)]
    verbose: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    config: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct LpDumpArgs {
    #[arg(long, required_unless_present = "network")]
    rows: Option<usize>,
    #[arg(long, required_unless_present = "network")]
    cols: Option<usize>,
    #[arg(long)]
    n: u64,
    #[command(flatten)]
    net: NetworkArgs,
    #[arg(long, value_name = "FILE")]
    out: Option<String>,
}

fn parse_mode(s: &str) -> Result<StarMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let verbose = matches!(&cli.command, Command::Mesh(m) if m.verbose);
    init_logging(verbose);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn init_logging(verbose: bool) {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"));
    if verbose {
        builder.filter_module("lbp", log::LevelFilter::Debug).format(|buf, record| writeln!(buf, "{}", record.args()));
    }
    builder.target(env_logger::Target::Stderr).init();
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::InfeasibleMode { .. }) => 2,
        Some(Error::LpInfeasible) => 3,
        _ => 1,
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Star(args) => cmd_star(args),
        Command::Mesh(args) => cmd_mesh(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::LpDump(args) => cmd_lp_dump(args),
    }
}

fn load_network(
    net: &NetworkArgs,
    topology: impl FnOnce() -> anyhow::Result<Topology>,
) -> anyhow::Result<NetworkModel> {
    match &net.network {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(NetworkModel::from_json(&text).with_context(|| format!("loading {}", path.display()))?)
        }
        None => Ok(gen_network(topology()?, net.seed, ParamRanges::default())?),
    }
}

fn require_kind(net: &NetworkModel, kind: NetworkKind) -> anyhow::Result<()> {
    anyhow::ensure!(net.kind() == kind, "expected a {kind} network, got {}", net.kind());
    Ok(())
}

fn quadrant(rows: Option<usize>, cols: Option<usize>) -> anyhow::Result<Topology> {
    match (rows, cols) {
        (Some(rows), Some(cols)) => Ok(Topology::MeshQuadrant { rows, cols }),
        _ => anyhow::bail!("--rows and --cols are required without --network"),
    }
}

fn dims_label(net: &NetworkModel) -> String {
    match net.dims() {
        Some((r, c)) => format!("{r}x{c}"),
        None => (net.len() - 1).to_string(),
    }
}

/// Opens the CSV destination. `-` means standard output.
fn writer(out: &str) -> anyhow::Result<Box<dyn Write>> {
    if out == "-" {
        Ok(Box::new(io::stdout().lock()))
    } else {
        let file = File::create(Path::new(out)).with_context(|| format!("creating {out}"))?;
        Ok(Box::new(io::BufWriter::new(file)))
    }
}

fn write_report(out: &str, report: &ExperimentReport) -> anyhow::Result<()> {
    let mut w = writer(out)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn single_row(
    algorithm: &str,
    net: &NetworkModel,
    n: u64,
    volume: f64,
    t_f: f64,
    iterations: Option<u64>,
) -> ExperimentReport {
    ExperimentReport {
        rows: vec![ReportRow {
            algorithm: algorithm.to_string(),
            kind: net.kind().to_string(),
            dims: dims_label(net),
            n,
            trial: None,
            comm_volume: volume,
            finish_time: Some(t_f),
            lp_iterations: iterations.map(|i| i as f64),
            agg: 0,
        }],
    }
}

fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{}", (x * 1e9).round() / 1e9)).collect();
    format!("[{}]", parts.join(", "))
}

fn cmd_star(args: StarArgs) -> anyhow::Result<()> {
    let net = load_network(&args.net, || match args.children {
        Some(children) => Ok(Topology::Star { children }),
        None => anyhow::bail!("--children is required without --network"),
    })?;
    require_kind(&net, NetworkKind::Star)?;
    let task = Task::new(args.n);
    let sol: StarSolution =
        if args.relaxed_only { solve_star_relaxed(&net, task, args.mode)? } else { solve_star(&net, task, args.mode)? };
    let volume = sol.comm_volume(task);
    let name = format!("lbp-{}", args.mode.to_string().to_lowercase());
    if let Some(out) = &args.out {
        write_report(out, &single_row(&name, &net, args.n, volume, sol.t_f, None))?;
        if out == "-" {
            return Ok(());
        }
    }
    if args.json {
        let doc = json!({
            "algorithm": name,
            "k": sol.k,
            "finish": sol.per_node_finish,
            "t_f": sol.t_f,
            "comm_volume": volume,
        });
        println!("{doc}");
    } else {
        println!("mode:        {}", args.mode);
        println!("k:           {}", fmt_list(&sol.k));
        println!("finish:      {}", fmt_list(&sol.per_node_finish));
        println!("t_f:         {}", sol.t_f);
        println!("comm volume: {volume}");
    }
    Ok(())
}

struct MeshRun {
    k: Option<Vec<f64>>,
    start: Option<Vec<f64>>,
    finish: Option<Vec<f64>>,
    t_f: f64,
    volume: f64,
    iterations: Option<u64>,
    solves: Option<usize>,
}

impl From<MeshOutcome> for MeshRun {
    fn from(out: MeshOutcome) -> Self {
        MeshRun {
            t_f: out.t_f(),
            volume: out.schedule.total_link_volume(),
            iterations: Some(out.lp_iterations),
            solves: Some(out.lp_solves),
            k: Some(out.schedule.k),
            start: Some(out.timing.start),
            finish: Some(out.timing.finish),
        }
    }
}

fn cmd_mesh(args: MeshArgs) -> anyhow::Result<()> {
    let task = Task::new(args.n);
    let (net, run) = if args.algo == MeshAlgo::Summa {
        let net = load_network(&args.net, || match quadrant(args.rows, args.cols)? {
            Topology::MeshQuadrant { rows, cols } => Ok(Topology::FullMesh { rows, cols }),
            _ => unreachable!(),
        })?;
        require_kind(&net, NetworkKind::FullMesh)?;
        let c = summa_cost(&net, task)?;
        (
            net,
            MeshRun {
                k: None,
                start: None,
                finish: None,
                t_f: c.t_f,
                volume: c.volume,
                iterations: None,
                solves: None,
            },
        )
    } else {
        let net = load_network(&args.net, || quadrant(args.rows, args.cols))?;
        require_kind(&net, NetworkKind::MeshQuadrant)?;
        let run = match args.algo {
            MeshAlgo::Pmft => pmft_lbp(&net, task)?.into(),
            MeshAlgo::Heuristic => mft_lbp_heuristic(&net, task)?.into(),
            algo => {
                let chunks = if algo == MeshAlgo::Pipeline { 1 } else { args.chunks };
                let r = pipeline_schedule(&net, task, chunks)?;
                MeshRun {
                    k: Some(r.k.iter().map(|&k| k as f64).collect()),
                    start: Some(r.start),
                    finish: None,
                    t_f: r.t_f,
                    volume: r.volume,
                    iterations: None,
                    solves: None,
                }
            }
        };
        (net, run)
    };
    let name = match args.algo {
        MeshAlgo::Pmft => "pmft",
        MeshAlgo::Heuristic => "heuristic",
        MeshAlgo::Summa => "summa",
        MeshAlgo::Pipeline => "pipeline",
        MeshAlgo::Mpipeline => "mpipeline",
    };
    if let Some(out) = &args.out {
        write_report(out, &single_row(name, &net, args.n, run.volume, run.t_f, run.iterations))?;
        if out == "-" {
            return Ok(());
        }
    }
    if args.json {
        let doc = json!({
            "algorithm": name,
            "k": run.k,
            "start": run.start,
            "finish": run.finish,
            "t_f": run.t_f,
            "link_volume": run.volume,
            "lp_iterations": run.iterations,
            "lp_solves": run.solves,
        });
        println!("{doc}");
    } else {
        println!("algorithm:     {name}");
        if let Some(k) = &run.k {
            println!("k:             {}", fmt_list(k));
        }
        if let Some(start) = &run.start {
            println!("start:         {}", fmt_list(start));
        }
        if let Some(finish) = &run.finish {
            println!("finish:        {}", fmt_list(finish));
        }
        println!("t_f:           {}", run.t_f);
        println!("link volume:   {}", run.volume);
        if let (Some(it), Some(solves)) = (run.iterations, run.solves) {
            println!("lp iterations: {it} over {solves} solves");
        }
    }
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.config.display()))?;
    let report = run_experiment(&config)?;
    if let Some(out) = &args.out {
        write_report(out, &report)?;
        if out == "-" {
            return Ok(());
        }
    }
    println!("{:<18} {:>6} {:>16} {:>14} {:>12}", "algorithm", "N", "comm_volume", "finish_time", "lp_iters");
    for row in report.aggregates() {
        let t_f = row.finish_time.map_or_else(|| "-".to_string(), |t| format!("{t:.4}"));
        let it = row.lp_iterations.map_or_else(|| "-".to_string(), |i| format!("{i:.1}"));
        println!("{:<18} {:>6} {:>16.1} {:>14} {:>12}", row.algorithm, row.n, row.comm_volume, t_f, it);
    }
    Ok(())
}

fn cmd_lp_dump(args: LpDumpArgs) -> anyhow::Result<()> {
    let net = load_network(&args.net, || quadrant(args.rows, args.cols))?;
    let lp = build_relaxation(&net, Task::new(args.n))?;
    let mut w = writer(args.out.as_deref().unwrap_or("-"))?;
    w.write_all(lp.to_lp_text().as_bytes())?;
    w.flush()?;
    Ok(())
}
