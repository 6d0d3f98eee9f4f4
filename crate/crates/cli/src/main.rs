use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use smsdb_cli::{
    cmd_bench_table1, cmd_ingest, cmd_oracle_sweep, cmd_query, cmd_repl, cmd_serve, CommonOpts,
};
use smsdb_core::gasearch::SelectionScheme;

#[derive(Parser)]
#[command(
    name = "smsdb",
    version,
    about = "SMS-queried in-memory micro-database with a genetic-algorithm search engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one SMS-SQL query in-process; with no body, start an interactive shell
    Query {
        /// SMS body, e.g. "dbiris tbiris atsepl va8"
        body: Option<String>,
        #[command(flatten)]
        opts: CommonArgs,
    },
    /// Serve queries over the TCP wire protocol until stdin closes or says quit
    Serve {
        /// Listener address, e.g. 127.0.0.1:7070 (overrides the config)
        #[arg(long)]
        listen: Option<String>,
        #[command(flatten)]
        opts: CommonArgs,
    },
    /// Replay the four stock queries and compare the reported species
    BenchTable1 {
        #[command(flatten)]
        opts: CommonArgs,
    },
    /// Validate the GA against the exact oracle across targets and seeds
    OracleSweep {
        /// Inclusive target range, e.g. 0..15 or a single value
        #[arg(long, default_value = "0..15", value_parser = parse_target_range)]
        targets: TargetRange,
        /// Seeds per target
        #[arg(long, default_value_t = 1000)]
        seeds: u64,
        #[command(flatten)]
        opts: CommonArgs,
    },
    /// Bulk-load sensor readings from a CSV file into an existing table
    Ingest {
        /// CSV file of measurement rows
        csv: PathBuf,
        #[arg(long)]
        db: String,
        #[arg(long)]
        table: String,
        #[command(flatten)]
        opts: CommonArgs,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file (embedded default when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Population size override
    #[arg(long)]
    pop_size: Option<usize>,
    /// Generation budget override
    #[arg(long)]
    gens: Option<u32>,
    /// Acceptance threshold override
    #[arg(long)]
    threshold: Option<u32>,
    /// Parent selection scheme: roulette, tournament or truncation
    #[arg(long, value_parser = clap::builder::ValueParser::new(|s: &str| s.parse::<SelectionScheme>()))]
    selection: Option<SelectionScheme>,
    /// Omit wall-clock lines so output is byte-reproducible
    #[arg(long)]
    no_ts: bool,
}

impl From<CommonArgs> for CommonOpts {
    fn from(args: CommonArgs) -> Self {
        CommonOpts {
            config: args.config,
            seed: args.seed,
            pop_size: args.pop_size,
            gens: args.gens,
            threshold: args.threshold,
            selection: args.selection,
            no_ts: args.no_ts,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct TargetRange {
    lo: u32,
    hi: u32,
}

fn parse_target_range(raw: &str) -> Result<TargetRange, String> {
    if let Some((lo, hi)) = raw.split_once("..") {
        let lo: u32 = lo
            .trim()
            .parse()
            .map_err(|_| format!("bad range start {lo:?}"))?;
        let hi: u32 = hi
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|_| format!("bad range end {hi:?}"))?;
        Ok(TargetRange { lo, hi })
    } else {
        let single: u32 = raw
            .trim()
            .parse()
            .map_err(|_| format!("bad target {raw:?}"))?;
        Ok(TargetRange {
            lo: single,
            hi: single,
        })
    }
}

fn main() {
    let cli = Cli::parse();
    // not StdoutLock: serve-mode workers write STAT lines to stdout from
    // other threads, and a lock held here would deadlock the drain
    let mut out = std::io::stdout();
    let code = match cli.command {
        Command::Query { body, opts } => {
            let opts = CommonOpts::from(opts);
            match body {
                Some(body) => cmd_query(&body, &opts, &mut out),
                None => {
                    let stdin = std::io::stdin();
                    let mut input = stdin.lock();
                    cmd_repl(&opts, &mut input, &mut out)
                }
            }
        }
        Command::Serve { listen, opts } => {
            let stdin = std::io::stdin();
            let mut input = stdin.lock();
            cmd_serve(
                listen.as_deref(),
                &CommonOpts::from(opts),
                &mut input,
                &mut out,
            )
        }
        Command::BenchTable1 { opts } => cmd_bench_table1(&CommonOpts::from(opts), &mut out),
        Command::OracleSweep {
            targets,
            seeds,
            opts,
        } => cmd_oracle_sweep(
            (targets.lo, targets.hi),
            seeds,
            &CommonOpts::from(opts),
            &mut out,
        ),
        Command::Ingest {
            csv,
            db,
            table,
            opts,
        } => cmd_ingest(&csv, &db, &table, &CommonOpts::from(opts), &mut out),
    };
    let _ = out.flush();
    std::process::exit(code);
}
