use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use ddpinn::config::{Overrides, PartitionRecipe, RunConfig};
use ddpinn::io::{write_samples, write_text};
use ddpinn::run::RunRecord;
use ddpinn::tables::{self, render, TableOptions};
use ddpinn::verify::{verify, Scope};
use ddpinn_core::geometry::build_samples;
use ddpinn_core::train::Algorithm;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Debug, Parser)]
#[command(name = "ddpinn", version, about = "Partitioned PINN solver with localized and augmented Lagrangian training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every seed of a configuration and write its run record.
    Run(RunArgs),
    /// Run all rows of a benchmark table and write CSV and Markdown.
    ReproduceTable(TableArgs),
    /// Run the oracle suite.
    Verify(VerifyArgs),
    /// Turn run records into a table.
    Report(ReportArgs),
    /// Write the collocation samples of a configuration.
    Samples(SamplesArgs),
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    Algorithm::from_name(s).ok_or_else(|| format!("unknown algorithm {s:?}; expected a1, a2 or a3"))
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON run configuration; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Option<Algorithm>,
    /// "native" or NXxNY, e.g. 2x2.
    #[arg(long)]
    partition: Option<PartitionRecipe>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Local epochs per outer iteration (a3).
    #[arg(long)]
    nl: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    alpha_lambda: Option<f64>,
    #[arg(long)]
    alpha_d: Option<f64>,
    /// Drop the divergence multiplier term.
    #[arg(long)]
    no_divergence: bool,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    trace_stride: Option<usize>,
    #[arg(long)]
    reset_adam_each_outer: bool,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Record path.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => {
                let problem = self.problem.clone().context("--problem is required without --config")?;
                let algorithm = self.algorithm.context("--algorithm is required without --config")?;
                let epochs = self.epochs.context("--epochs is required without --config")?;
                RunConfig { problem, ..RunConfig::new(ddpinn_core::problems::ProblemKind::PoissonSmooth, algorithm, epochs) }
            }
        };
        Overrides {
            problem: self.problem,
            algorithm: self.algorithm,
            partition: self.partition,
            widths: self.widths,
            epochs: self.epochs,
            inner_epochs: self.nl,
            checkpoints: self.checkpoints,
            alpha0: self.alpha0,
            alpha_lambda: self.alpha_lambda,
            alpha_d: self.alpha_d,
            no_divergence: self.no_divergence,
            seeds: self.seeds,
            output: self.output,
            trace_stride: self.trace_stride,
            reset_adam_each_outer: self.reset_adam_each_outer,
            grid_points: self.grid_points,
            workers: self.workers,
        }
        .apply(&mut config);
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct TableArgs {
    /// One of 1, 3, 4, 5, 6.
    table: u8,
    /// Epoch scaling factor applied to the checkpoints.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 501)]
    grid_points: usize,
    /// Directory for the table files and one record per row.
    #[arg(long, short, default_value = "results")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Fewer instances and epochs.
    #[arg(long)]
    quick: bool,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run records, one table row each.
    #[arg(required = true)]
    records: Vec<PathBuf>,
    /// Table whose labels to use (1 names the rows J1/J2).
    #[arg(long, default_value_t = 3)]
    table: u8,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    markdown: Option<PathBuf>,
    /// Loss traces as CSV (record, seed, epoch, subdomain, plain, total).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SamplesArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Seed of the sample set (default: the first configured seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "samples.json")]
    to: PathBuf,
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let config = args.config.resolve()?;
            let output = config.output.clone().unwrap_or_else(|| PathBuf::from("record.json"));
            let record = ddpinn::run(&config)?;
            write_text(&output, &record.to_json())?;
            for r in &record.results {
                let last = r.checkpoints.last();
                match (&r.abort, last) {
                    (Some(a), _) => eprintln!("seed {}: aborted at epoch {} in subdomain {}: {}", r.seed, a.epoch, a.subdomain, a.reason),
                    (None, Some(c)) => eprintln!("seed {}: epoch {} eps_u {:.3e} communications {}", r.seed, c.epoch, c.errors.epsilon_u, c.communications),
                    (None, None) => {}
                }
            }
            eprintln!("wrote {}", output.display());
            Ok(if record.aborted() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::ReproduceTable(args) => {
            let options = TableOptions { scale: args.scale, seeds: args.seeds, workers: args.workers, grid_points: args.grid_points, ..Default::default() };
            let mut n = 0;
            let records = tables::reproduce_table(args.table, &options, |r| {
                n += 1;
                let path = args.output.join(format!("table{}_row{n:02}.json", args.table));
                if let Err(e) = write_text(&path, &r.to_json()) {
                    eprintln!("warning: {e:#}");
                }
                eprintln!("row {n}: {} {} {} done in {:.0}s", r.config.partition, r.config.algorithm.name(), tables::row_label(args.table, &r.config), r.timings.total_seconds);
            })?;
            let table = render(args.table, &records)?;
            write_text(&args.output.join(format!("table{}.csv", args.table)), &table.to_csv()?)?;
            let md = table.to_markdown();
            write_text(&args.output.join(format!("table{}.md", args.table)), &md)?;
            print!("{md}");
            Ok(if records.iter().any(RunRecord::aborted) { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Verify(args) => {
            let scope = if args.quick {
                Scope { stokes_gradient_instances: 3, scalar_gradient_instances: 1, derivative_cases: 20, exact_points: 200, zero_rate_epochs: 100, workers: 2 }
            } else {
                Scope::default()
            };
            let report = verify(&scope)?;
            println!("{report}");
            if let Some(path) = args.json {
                write_text(&path, &serde_json::to_string_pretty(&report)?)?;
            }
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Report(args) => {
            let records = args
                .records
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    RunRecord::from_json(&text).with_context(|| format!("in {}", p.display()))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let table = render(args.table, &records)?;
            if let Some(p) = &args.csv {
                write_text(p, &table.to_csv()?)?;
            }
            if let Some(p) = &args.markdown {
                write_text(p, &table.to_markdown())?;
            }
            if let Some(p) = &args.trace {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["record", "seed", "epoch", "subdomain", "plain", "total"])?;
                for (i, rec) in records.iter().enumerate() {
                    for r in &rec.results {
                        for t in &r.trace {
                            for (s, (p, q)) in t.plain.iter().zip(&t.total).enumerate() {
                                w.write_record([i.to_string(), r.seed.to_string(), t.epoch.to_string(), s.to_string(), format!("{p:e}"), format!("{q:e}")])?;
                            }
                        }
                    }
                }
                write_text(p, &String::from_utf8(w.into_inner()?)?)?;
            }
            if args.csv.is_none() && args.markdown.is_none() {
                print!("{}", table.to_markdown());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Samples(args) => {
            let config = args.config.resolve()?;
            let problem = config.build_problem()?;
            let seed = match args.seed {
                Some(s) => s,
                None => *config.seeds.first().context("no seed")?,
            };
            let samples = build_samples(&problem.partition, &config.sample_plan(&problem), seed)?;
            if samples.interior_total() == 0 {
                bail!("empty sample set");
            }
            write_samples(&args.to, &samples)?;
            eprintln!("wrote {} ({} interior, {} boundary, {} interface points)", args.to.display(), samples.interior_total(), samples.boundary_total(), samples.interface_total());
            Ok(ExitCode::SUCCESS)
        }
    }
}
