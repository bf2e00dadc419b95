//! `jagq`: generate synthetic event files and run queries against them.
//!
//! Exit codes: 0 success, 2 parse error, 3 type or plan error, 4 execution
//! error, 1 anything else.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use jagq::dataset::Registry;
use jagq::expr::{canonicalize, Graph};
use jagq::generate::{generate, sidecar_path, write_sample};
use jagq::hist::Histogram;
use jagq::jagged::{Nested, Scalar};
use jagq::local::FunctionTable;
use jagq::remote::cache::ResultCache;
use jagq::remote::{parse_query, query_to_graph, QueryService};
use jagq::session::{Mode, Session};

#[derive(Parser)]
#[command(name = "jagq", version, about = "Lazy queries over jagged event data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic event file plus its `.matches.csv` labels.
    Generate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long = "events", default_value_t = 1000)]
        n_events: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write a registry file naming the events under `--id`.
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long, default_value = "mc.zee")]
        id: String,
    },
    /// Plan and execute a query, printing one line per event or a histogram.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Split,
    AllLocal,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    registry: PathBuf,
    /// Dataset id; defaults to the one the query reads.
    #[arg(long)]
    dataset: Option<String>,
    /// File holding the query text.
    #[arg(long, conflicts_with = "expr", required_unless_present = "expr")]
    query: Option<PathBuf>,
    /// Inline query text.
    #[arg(long)]
    expr: Option<String>,
    #[arg(long, value_enum, default_value = "split")]
    backend: Backend,
    /// Let remote queries use lambdas that reference outer values.
    #[arg(long)]
    cross_reference: bool,
    /// Reject leaves missing from the schema instead of warning.
    #[arg(long)]
    strict: bool,
    /// Print the execution plan before the output.
    #[arg(long)]
    plan: bool,
    /// Emit a histogram CSV of the flattened result.
    #[arg(long)]
    hist: bool,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Histogram range as `LO,HI`; defaults to the data extent.
    #[arg(long, allow_hyphen_values = true)]
    range: Option<String>,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bypass the on-disk result cache.
    #[arg(long)]
    no_cache: bool,
}

enum Failure {
    Engine(jagq::Error),
    Other(anyhow::Error),
}

impl From<jagq::Error> for Failure {
    fn from(e: jagq::Error) -> Self {
        Failure::Engine(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { seed, n_events, out, registry, id } => {
            cmd_generate(seed, n_events, &out, registry.as_deref(), &id).map_err(Failure::Other)
        }
        Command::Run(args) => cmd_run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Engine(e)) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn exit_code(e: &jagq::Error) -> u8 {
    use jagq::Error::*;
    match e {
        Build(_) | Query(_) => 2,
        Schema(_) | Type(_) | Plan(_) => 3,
        Exec(_) => 4,
        Dataset(_) | Io { .. } => 1,
    }
}

fn cmd_generate(seed: u64, n: usize, out: &Path, registry: Option<&Path>, id: &str) -> anyhow::Result<()> {
    let sample = generate(seed, n);
    write_sample(&sample, out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(reg) = registry {
        let events = std::path::absolute(out)?;
        let text = format!("[datasets.\"{id}\"]\nevents = {:?}\n", events.display().to_string());
        std::fs::write(reg, text).with_context(|| format!("writing {}", reg.display()))?;
    }
    eprintln!("wrote {n} events to {} and labels to {}", out.display(), sidecar_path(out).display());
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let text = match (&args.query, &args.expr) {
        (Some(path), _) => {
            std::fs::read_to_string(path).with_context(|| format!("reading query {}", path.display()))?
        }
        (None, Some(e)) => e.clone(),
        (None, None) => return Err(anyhow!("one of --query or --expr is required").into()),
    };
    let range = args.range.as_deref().map(parse_range).transpose()?;

    let functions = FunctionTable::builtins();
    let graph = Graph::new();
    functions.declare_all(&graph).map_err(jagq::Error::from)?;
    let q = parse_query(text.trim()).map_err(jagq::Error::from)?;
    let root = query_to_graph(&graph, &q).map_err(jagq::Error::from)?;
    let dataset_id = match &args.dataset {
        Some(d) => d.clone(),
        None => {
            let dag = canonicalize(&[&root]).map_err(jagq::Error::from)?;
            let ids = dag.datasets();
            match ids.len() {
                1 => ids.into_iter().next().unwrap().to_string(),
                0 => return Err(anyhow!("the query reads no dataset; pass --dataset").into()),
                _ => return Err(anyhow!("the query reads several datasets; pass --dataset").into()),
            }
        }
    };

    let registry = Registry::load(&args.registry).map_err(jagq::Error::from)?;
    let dataset = registry.open(&dataset_id).map_err(jagq::Error::from)?;
    let mut service = QueryService::new(functions);
    if !args.no_cache {
        service = service.with_cache(ResultCache::from_env());
    }
    let mode = match args.backend {
        Backend::Split => Mode::Split { cross_reference: args.cross_reference },
        Backend::AllLocal => Mode::AllLocal,
    };
    let session = Session::with_service(dataset, Arc::new(service), mode).strict(args.strict);
    let prepared = session.prepare(&[&root])?;
    for w in &prepared.shapes.warnings {
        eprintln!("warning: {w}");
    }
    let execution = session.execute(&prepared)?;

    let mut output = String::new();
    if args.plan {
        output.push_str(&prepared.plan.dump(&prepared.dag, Some(&execution.boundary_sizes)));
    }
    let result = &execution.roots[0];
    if args.hist {
        let values = result.flatten_f64();
        let range = range.unwrap_or_else(|| Histogram::auto_range(&values));
        let h = Histogram::new(&values, args.bins, range).map_err(|e| anyhow!(e))?;
        output.push_str(&h.to_csv());
    } else {
        for row in result.to_nested() {
            render(&row, &mut output);
            output.push('\n');
        }
    }
    match &args.out {
        Some(path) => std::fs::write(path, output).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{output}"),
    }
    Ok(())
}

fn parse_range(s: &str) -> anyhow::Result<(f64, f64)> {
    let Some((lo, hi)) = s.split_once(',') else { bail!("--range expects LO,HI, got `{s}`") };
    let lo = lo.trim().parse().with_context(|| format!("bad range bound `{lo}`"))?;
    let hi = hi.trim().parse().with_context(|| format!("bad range bound `{hi}`"))?;
    Ok((lo, hi))
}

fn render(v: &Nested, out: &mut String) {
    match v {
        Nested::Leaf(Scalar::Float(x)) => {
            let _ = write!(out, "{x:?}");
        }
        Nested::Leaf(s) => {
            let _ = write!(out, "{s}");
        }
        Nested::List(xs) => {
            out.push('[');
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                render(x, out);
            }
            out.push(']');
        }
    }
}
