use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use gffperc::experiments::{run_sweep, summarize, write_rows_csv, Level, SweepFamily, SweepSpec};
use gffperc::gff::{make_sampler, SamplerRoute};
use gffperc::graph::{spectral_gap, Family, Graph};
use gffperc::martingale::explore;
use gffperc::percolation::{clusters, percolate};
use gffperc::potential::{capacity_dirichlet, capacity_green};
use gffperc::seed::uniform_seed;
use gffperc::gen_named;

/// Level-set percolation of the zero-average Gaussian free field on graphs.
#[derive(Debug, Parser)]
#[command(name = "gffperc", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
enum Cmd {
    /// Emit a graph as an edge list
    Gen,
    /// Print the spectral gap of the normalized Laplacian
    Gap,
    /// Sample the field and emit `vertex,phi`
    Sample,
    /// Percolate one field sample; emit `vertex,cluster_id` and cluster stats
    Percolate,
    /// Capacity and equilibrium potential of a vertex set
    Capacity,
    /// Explore from a vertex and emit the martingale trace
    Explore,
    /// Largest-cluster sweep over sizes and levels
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FamilyArg {
    Rrg,
    Cycle,
    Path,
    Complete,
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum RouteArg {
    Eigen,
    Cholesky,
    Iterative,
}

impl From<RouteArg> for SamplerRoute {
    fn from(r: RouteArg) -> Self {
        match r {
            RouteArg::Eigen => SamplerRoute::Eigen,
            RouteArg::Cholesky => SamplerRoute::Cholesky,
            RouteArg::Iterative => SamplerRoute::Iterative,
        }
    }
}

#[derive(Debug, Clone, clap::Args, Serialize)]
struct Flags {
    #[arg(long, global = true, value_enum)]
    family: Option<FamilyArg>,
    /// Vertex count; comma-separated list for `sweep`
    #[arg(long, global = true)]
    n: Option<String>,
    #[arg(long, global = true)]
    d: Option<usize>,
    #[arg(long, global = true)]
    side: Option<usize>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Edge-list file instead of a generated family
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Level; comma-separated list for `sweep`
    #[arg(long, global = true, allow_hyphen_values = true)]
    h: Option<String>,
    /// Window level `h = A n^(-1/3)`; comma-separated list for `sweep`
    #[arg(long = "A", global = true, allow_hyphen_values = true)]
    #[serde(rename = "A")]
    a: Option<String>,
    /// Comma-separated vertex indices
    #[arg(long, global = true)]
    k: Option<String>,
    #[arg(long, global = true)]
    start: Option<usize>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[arg(long, global = true, value_enum)]
    route: Option<RouteArg>,
    #[arg(long, global = true)]
    pretty: bool,
    /// Record wall-clock time per sweep row (output is then not reproducible)
    #[arg(long, global = true)]
    timing: bool,
    /// Flat TOML file whose keys mirror the flag names; flags take precedence
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

type Res<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match parse(&args) {
        Ok(c) => c,
        Err(e) => return report(e),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    match e {
        CliError::Usage(msg) => {
            eprintln!("error: {msg}\n\n{}", Cli::command().render_usage());
            ExitCode::from(1)
        }
        CliError::Runtime(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn parse(args: &[String]) -> Res<Cli> {
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => {
            let _ = e.print();
            std::process::exit(1);
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| usage(e.to_string()))?;
    let Some(path) = cli.flags.config.clone() else {
        return Ok(cli);
    };
    let text = fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text.parse().map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    let mut extended = args.to_vec();
    for (key, value) in table {
        let id = if key == "A" { "a".to_string() } else { key.clone() };
        if key == "config" || !Cli::command().get_arguments().any(|a| a.get_id() == id.as_str()) {
            return Err(usage(format!("unknown config key `{key}`")));
        }
        if on_command_line(&matches, sub, &id) {
            continue;
        }
        match value {
            toml::Value::Boolean(true) => extended.push(format!("--{key}")),
            toml::Value::Boolean(false) => {}
            toml::Value::String(s) => extended.push(format!("--{key}={s}")),
            toml::Value::Integer(i) => extended.push(format!("--{key}={i}")),
            toml::Value::Float(f) => extended.push(format!("--{key}={f}")),
            toml::Value::Array(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|v| match v {
                        toml::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect();
                extended.push(format!("--{key}={}", parts.join(",")));
            }
            other => return Err(usage(format!("config key `{key}`: unsupported value {other}"))),
        }
    }
    let matches = Cli::command().try_get_matches_from(&extended).map_err(|e| usage(e.to_string()))?;
    Cli::from_arg_matches(&matches).map_err(|e| usage(e.to_string()))
}

fn on_command_line(top: &ArgMatches, sub: &ArgMatches, id: &str) -> bool {
    [top, sub].iter().any(|m| m.try_get_raw(id).ok().flatten().is_some() && m.value_source(id) == Some(ValueSource::CommandLine))
}

fn parse_list<T: std::str::FromStr>(name: &str, s: &str) -> Res<Vec<T>> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| usage(format!("--{name}: cannot parse `{t}`"))))
        .collect()
}

fn single_n(f: &Flags) -> Res<Option<usize>> {
    match &f.n {
        None => Ok(None),
        Some(s) => match parse_list::<usize>("n", s)?.as_slice() {
            [n] => Ok(Some(*n)),
            _ => Err(usage("--n takes a single value outside `sweep`")),
        },
    }
}

fn need<T: Copy>(v: Option<T>, name: &str) -> Res<T> {
    v.ok_or_else(|| usage(format!("--{name} is required")))
}

fn load_graph(f: &Flags) -> Res<Graph> {
    if let Some(path) = &f.graph {
        if f.family.is_some() {
            return Err(usage("--graph and --family are mutually exclusive"));
        }
        let text = fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        return Graph::from_edge_list(&text).map_err(runtime);
    }
    let family = need(f.family, "family")?;
    let fam = match family {
        FamilyArg::Torus => Family::Torus { side: need(f.side, "side")?, dim: f.dim.unwrap_or(2) },
        other => {
            let n = need(single_n(f)?, "n")?;
            match other {
                FamilyArg::Rrg => Family::Rrg { n, d: need(f.d, "d")?, seed: f.seed.unwrap_or(0) },
                FamilyArg::Cycle => Family::Cycle { n },
                FamilyArg::Path => Family::Path { n },
                FamilyArg::Complete => Family::Complete { n },
                FamilyArg::Torus => unreachable!(),
            }
        }
    };
    gen_named(&fam).map_err(runtime)
}

fn level(f: &Flags, n: usize) -> Res<f64> {
    match (&f.h, &f.a) {
        (Some(_), Some(_)) => Err(usage("--h and --A are mutually exclusive")),
        (Some(h), None) => Ok(single_f64("h", h)?),
        (None, Some(a)) => Ok(Level::Window(single_f64("A", a)?).h(n)),
        (None, None) => Err(usage("one of --h or --A is required")),
    }
}

fn single_f64(name: &str, s: &str) -> Res<f64> {
    match parse_list::<f64>(name, s)?.as_slice() {
        [x] => Ok(*x),
        _ => Err(usage(format!("--{name} takes a single value outside `sweep`"))),
    }
}

fn route(f: &Flags, n: usize) -> SamplerRoute {
    f.route.map(SamplerRoute::from).unwrap_or(if n <= gffperc::graph::DENSE_THRESHOLD {
        SamplerRoute::Eigen
    } else {
        SamplerRoute::Iterative
    })
}

/// Primary output: `--out` or stdout.
fn output(f: &Flags) -> Res<Box<dyn Write>> {
    Ok(match &f.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes the resolved configuration next to `--out`, or to stderr.
fn record_config(cli: &Cli) -> Res<()> {
    let resolved = json!({ "command": cli.cmd, "flags": cli.flags });
    match &cli.flags.out {
        Some(out) => fs::write(sidecar(out, ".config.json"), format!("{resolved:#}\n")).map_err(runtime),
        None => {
            eprintln!("# config {resolved}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(value: &T, pretty: bool, w: &mut dyn Write) -> Res<()> {
    let text = if pretty { serde_json::to_string_pretty(value) } else { serde_json::to_string(value) }.map_err(runtime)?;
    writeln!(w, "{text}").map_err(runtime)
}

fn run(cli: &Cli) -> Res<()> {
    let f = &cli.flags;
    if cli.cmd != Cmd::Sweep && f.jobs.is_some() {
        return Err(usage("--jobs applies to `sweep` only"));
    }
    match cli.cmd {
        Cmd::Sweep => sweep(f)?,
        Cmd::Gen => {
            let g = load_graph(f)?;
            output(f)?.write_all(g.to_edge_list().as_bytes()).map_err(runtime)?;
        }
        Cmd::Gap => {
            let g = load_graph(f)?;
            let r = spectral_gap::<f64>(&g).map_err(runtime)?;
            let mut w = output(f)?;
            if f.format == Some(Format::Json) {
                let v = json!({ "lambda_star": r.lambda_star, "method": format!("{:?}", r.method), "residual": r.residual });
                emit_json(&v, f.pretty, &mut w)?;
            } else {
                writeln!(w, "lambda_star {}", fmt_float(r.lambda_star)).map_err(runtime)?;
            }
        }
        Cmd::Sample => {
            let g = load_graph(f)?;
            let s = make_sampler::<f64>(&g, route(f, g.n())).map_err(runtime)?;
            let field = s.sample(f.seed.unwrap_or(0));
            let mut w = output(f)?;
            if f.format == Some(Format::Json) {
                let v = json!({ "seed": field.seed, "route": field.route, "phi": field.phi });
                emit_json(&v, f.pretty, &mut w)?;
            } else {
                field.write_csv(&mut w).map_err(runtime)?;
            }
        }
        Cmd::Percolate => {
            let g = load_graph(f)?;
            let h = level(f, g.n())?;
            let seed = f.seed.unwrap_or(0);
            let field = make_sampler::<f64>(&g, route(f, g.n())).map_err(runtime)?.sample(seed);
            let open = percolate(&g, &field, h, uniform_seed(seed));
            let stats = clusters(&g, &open);
            let summary = json!({ "h": h, "seed": seed, "open_edges": open.count(), "stats": stats });
            let mut w = output(f)?;
            if f.format == Some(Format::Json) {
                emit_json(&summary, f.pretty, &mut w)?;
            } else {
                stats.write_csv(&mut w).map_err(runtime)?;
                match &f.out {
                    Some(out) => {
                        let mut s = File::create(sidecar(out, ".stats.json")).map_err(runtime)?;
                        emit_json(&summary, f.pretty, &mut s)?;
                    }
                    None => emit_json(&summary, f.pretty, &mut io::stderr())?,
                }
            }
        }
        Cmd::Capacity => {
            let g = load_graph(f)?;
            let mut k = parse_list::<usize>("k", f.k.as_deref().ok_or_else(|| usage("--k is required"))?)?;
            k.sort_unstable();
            k.dedup();
            let c = capacity_green::<f64>(&g, &k).map_err(runtime)?;
            let check = capacity_dirichlet::<f64>(&g, &k).map_err(runtime)?;
            let v = json!({
                "k": k,
                "nu": c.nu,
                "cap": c.cap,
                "cap_dirichlet": check.cap,
                "route": c.route,
                "f": c.f_k,
            });
            emit_json(&v, f.pretty, &mut output(f)?)?;
        }
        Cmd::Explore => {
            let g = load_graph(f)?;
            let h = level(f, g.n())?;
            let seed = f.seed.unwrap_or(0);
            let field = make_sampler::<f64>(&g, route(f, g.n())).map_err(runtime)?.sample(seed);
            let open = percolate(&g, &field, h, uniform_seed(seed));
            let trace = explore(&g, &field, &open, f.start.unwrap_or(0)).map_err(runtime)?;
            let mut w = output(f)?;
            if f.format == Some(Format::Json) {
                let v = json!({ "start": trace.start, "held_out": trace.held_out, "h": h, "seed": seed, "steps": trace.steps });
                emit_json(&v, f.pretty, &mut w)?;
            } else {
                trace.write_csv(&mut w).map_err(runtime)?;
            }
        }
    }
    record_config(cli)
}

fn sweep(f: &Flags) -> Res<()> {
    if f.graph.is_some() {
        return Err(usage("`sweep` generates its graphs; --graph is not accepted"));
    }
    let family = match need(f.family, "family")? {
        FamilyArg::Rrg => SweepFamily::Rrg { d: need(f.d, "d")? },
        FamilyArg::Cycle => SweepFamily::Cycle,
        FamilyArg::Path => SweepFamily::Path,
        FamilyArg::Complete => SweepFamily::Complete,
        FamilyArg::Torus => SweepFamily::Torus { dim: f.dim.unwrap_or(2) },
    };
    let n_list = parse_list::<usize>("n", f.n.as_deref().ok_or_else(|| usage("--n is required"))?)?;
    let mut levels = Vec::new();
    if let Some(a) = &f.a {
        levels.extend(parse_list::<f64>("A", a)?.into_iter().map(Level::Window));
    }
    if let Some(h) = &f.h {
        levels.extend(parse_list::<f64>("h", h)?.into_iter().map(Level::Fixed));
    }
    if levels.is_empty() {
        return Err(usage("one of --h or --A is required"));
    }
    let spec = SweepSpec {
        family,
        n_list,
        levels,
        trials: f.trials.unwrap_or(1),
        master_seed: f.seed.unwrap_or(0),
        route: f.route.map(SamplerRoute::from),
        record_timing: f.timing,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let rows = run_sweep(&spec, f.jobs.unwrap_or(0)).map_err(runtime)?;
    let summary = summarize(&rows).ok();

    let mut w = output(f)?;
    if f.format == Some(Format::Json) {
        emit_json(&json!({ "spec": spec, "summary": summary }), f.pretty, &mut w)?;
        return Ok(());
    }
    write_rows_csv(&rows, &mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    let summary_json = json!({ "spec": spec, "summary": summary });
    match &f.out {
        Some(out) => {
            let mut s = File::create(sidecar(out, ".summary.json")).map_err(runtime)?;
            emit_json(&summary_json, true, &mut s)?;
        }
        None if !f.pretty => emit_json(&summary_json, false, &mut io::stderr())?,
        None => {}
    }
    if f.pretty {
        if let Some(summary) = &summary {
            eprintln!("{:>8} {:>10} {:>10} {:>10} {:>12} {:>12}", "n", "A", "h", "med cmax", "cmax/n", "cmax/n^2/3");
            for s in summary {
                eprintln!(
                    "{:>8} {:>10.4} {:>10.4} {:>10.1} {:>12.4} {:>12.4}",
                    s.n, s.a, s.h, s.cmax.p50, s.cmax_over_n.p50, s.cmax_over_n23.p50
                );
            }
        }
    }
    Ok(())
}

/// Up to 12 decimals, trailing zeros trimmed but keeping one digit after the point.
fn fmt_float(x: f64) -> String {
    let s = format!("{x:.12}");
    let t = s.trim_end_matches('0');
    if t.ends_with('.') {
        format!("{t}0")
    } else {
        t.to_string()
    }
}
