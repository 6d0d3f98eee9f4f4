//! Command implementations behind the `smsdb` binary.
//!
//! Every command writes line-oriented UTF-8 to the supplied writer and
//! returns its exit code: 0 success, 1 result mismatch, 2 usage or parse
//! error. With fixed seeds the printed report section is byte-reproducible;
//! `--no-ts` drops the wall-clock lines.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex, RwLock};

use smsdb_core::config::AppConfig;
use smsdb_core::gasearch::{oracle_search, run_search, GaConfig, SelectionScheme};
use smsdb_core::microdb::{parse_csv, Catalog, ReportMode, SpeciesLabel};
use smsdb_core::server::{handle_query, run_event_loop, EventSink, HandledQuery, PowerMonitor};
use smsdb_core::transport::{tcp::TcpGateway, ClientRegistry, Direction, SmsFrame, Transport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MISMATCH: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Sender id used for locally issued queries.
pub const LOCAL_SENDER: &str = "07030081615";

const DEFAULT_LISTEN_ADDR: &str = "127.0.0.1:7070";

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct CommonOpts {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub pop_size: Option<usize>,
    pub gens: Option<u32>,
    pub threshold: Option<u32>,
    pub selection: Option<SelectionScheme>,
    pub no_ts: bool,
}

impl CommonOpts {
    fn apply_overrides(&self, ga: &mut GaConfig) {
        if let Some(seed) = self.seed {
            ga.rng_seed = seed;
        }
        if let Some(pop_size) = self.pop_size {
            ga.pop_size = pop_size;
        }
        if let Some(gens) = self.gens {
            ga.num_gens = gens;
        }
        if let Some(threshold) = self.threshold {
            ga.fitness_threshold = threshold;
        }
        if let Some(selection) = self.selection {
            ga.selection = selection;
        }
    }
}

fn load_config(opts: &CommonOpts) -> Result<AppConfig, String> {
    let mut config = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            AppConfig::from_toml(&text).map_err(|e| e.to_string())?
        }
        None => AppConfig::embedded_default(),
    };
    opts.apply_overrides(&mut config.ga);
    config.ga.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn print_handled(
    out: &mut impl Write,
    handled: &HandledQuery,
    latency_ms: Option<u64>,
) -> std::io::Result<()> {
    writeln!(out, "Report:")?;
    for line in &handled.report.rendered {
        writeln!(out, "{line}")?;
    }
    if let Some(sql) = &handled.sql {
        writeln!(out, "SQL: {sql}")?;
    }
    if let Some(search) = &handled.search {
        let (row, distance) = (
            search.outcome.row().map_or(-1, |r| r as i64),
            search.outcome.distance().unwrap_or(0),
        );
        writeln!(
            out,
            "Outcome: {} row={row} distance={distance} generations={} evaluations={}",
            handled.outcome_label(),
            search.generations_used,
            search.evaluations
        )?;
    }
    if let Some(latency) = latency_ms {
        writeln!(out, "Latency: {latency} ms")?;
    }
    Ok(())
}

fn run_one_query(
    body: &str,
    config: &AppConfig,
    transport: &Transport,
    out: &mut impl Write,
    no_ts: bool,
) -> i32 {
    let submitted = match transport.inject_inbound(LOCAL_SENDER, body) {
        Ok(ts) => ts,
        Err(e) => {
            let _ = writeln!(out, "ERR: {e}");
            return EXIT_USAGE;
        }
    };
    let frame = transport
        .poll_inbox()
        .expect("loopback transport is running")
        .expect("frame was just injected");
    let handled = handle_query(&frame, &config.catalog, &config.ga, &config.registry, "q1");
    for reply in &handled.replies {
        // loopback: delivery is observable via the outbox
        let _ = transport.send_sms(&reply.peer_id, &reply.body);
    }
    let latency = transport.now_ms().saturating_sub(submitted);
    let _ = print_handled(out, &handled, (!no_ts).then_some(latency));
    match handled.search {
        Some(_) => EXIT_OK,
        None => EXIT_USAGE,
    }
}

/// Run one SMS-SQL query through the in-process pipeline.
pub fn cmd_query(body: &str, opts: &CommonOpts, out: &mut impl Write) -> i32 {
    let config = match load_config(opts) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(out, "ERR: {e}");
            return EXIT_USAGE;
        }
    };
    let transport = Transport::loopback();
    run_one_query(body, &config, &transport, out, opts.no_ts)
}

/// Interactive loop: each input line is one SMS body.
pub fn cmd_repl(opts: &CommonOpts, input: &mut impl BufRead, out: &mut impl Write) -> i32 {
    let config = match load_config(opts) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(out, "ERR: {e}");
            return EXIT_USAGE;
        }
    };
    let transport = Transport::loopback();
    let _ = writeln!(out, "smsdb interactive query shell ('exit' to quit)");
    loop {
        let _ = write!(out, "smsql> ");
        let _ = out.flush();
        let mut line = String::new();
        match input.read_line(&mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        let body = line.trim();
        if body.is_empty() {
            continue;
        }
        if body == "exit" || body == "quit" {
            break;
        }
        run_one_query(body, &config, &transport, out, opts.no_ts);
    }
    EXIT_OK
}

/// One replayed stock query with its expected and actual species token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchRow {
    pub body: &'static str,
    pub expected: &'static str,
    pub actual: String,
}

impl BenchRow {
    pub fn passed(&self) -> bool {
        self.actual == self.expected
    }
}

/// The four stock queries and the species tokens their reports must carry:
/// two out-of-range lookups resolving to Setosa, one near-match resolving to
/// Virginica, and one terse exact match.
pub const BENCH_QUERIES: [(&str, &str); 4] = [
    ("dbiris tbiris atsepl va2", "Iris-Setosa"),
    ("dbiris tbiris atsepl va2", "Iris-Setosa"),
    ("dbiris tbiris atsepl va8", "Iris-Virginica"),
    ("dburis tbiris atsepl va6", "IVS"),
];

/// Replay the stock queries against a catalog and collect the species token
/// each report carried. Verbose reports carry it on their second line, terse
/// reports are the token itself.
pub fn bench_rows(catalog: &Catalog, ga: &GaConfig) -> Vec<BenchRow> {
    let registry = ClientRegistry::new();
    BENCH_QUERIES
        .iter()
        .map(|(body, expected)| {
            let frame = SmsFrame::new(Direction::Inbound, LOCAL_SENDER, body, 0)
                .expect("stock query bodies are valid frames");
            let handled = handle_query(&frame, catalog, ga, &registry, "bench");
            let mode = smsdb_core::smsql::parse_sms(body)
                .ok()
                .and_then(|q| catalog.database(&q.database).map(|db| db.report_mode()))
                .unwrap_or(ReportMode::Verbose);
            let actual = match mode {
                ReportMode::Verbose => handled.report.rendered.get(1),
                ReportMode::Terse => handled.report.rendered.first(),
            }
            .cloned()
            .unwrap_or_else(|| format!("<{}>", handled.report.rendered.join(" / ")));
            BenchRow {
                body,
                expected,
                actual,
            }
        })
        .collect()
}

/// Replay the stock queries and compare reported species.
pub fn cmd_bench_table1(opts: &CommonOpts, out: &mut impl Write) -> i32 {
    let config = match load_config(opts) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(out, "ERR: {e}");
            return EXIT_USAGE;
        }
    };
    let rows = bench_rows(&config.catalog, &config.ga);
    let mut matches = 0;
    for (i, row) in rows.iter().enumerate() {
        let verdict = if row.passed() {
            matches += 1;
            "OK"
        } else {
            "MISMATCH"
        };
        let _ = writeln!(
            out,
            "query {}: {:<26} expected={:<15} actual={:<15} {verdict}",
            i + 1,
            row.body,
            row.expected,
            row.actual
        );
    }
    let _ = writeln!(out, "bench-table1: {matches}/{} reports match", rows.len());
    if matches == rows.len() {
        EXIT_OK
    } else {
        EXIT_MISMATCH
    }
}

/// Aggregates for one sweep target.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub target: u32,
    pub seeds: u64,
    pub oracle_distance: u32,
    /// Agreement rate when the oracle species is unique among minimum-
    /// distance rows; `None` otherwise.
    pub agreement: Option<f64>,
    pub mean_generations: f64,
    pub mean_distance_gap: f64,
    pub dominance_violations: u64,
}

/// Run GA and oracle for every target and seed; aggregate per target.
pub fn sweep_rows(
    catalog: &Catalog,
    ga: &GaConfig,
    db: &str,
    table_name: &str,
    attribute: &str,
    targets: (u32, u32),
    seeds: u64,
) -> Result<Vec<SweepRow>, String> {
    let table = catalog
        .database(db)
        .ok_or_else(|| format!("unknown database {db}"))?
        .table(table_name)
        .ok_or_else(|| format!("unknown table {table_name}"))?;
    let attr = table
        .attribute_index(attribute)
        .ok_or_else(|| format!("unknown attribute {attribute}"))?;

    let (lo, hi) = targets;
    let mut rows = Vec::new();
    for target in lo..=hi {
        let oracle = oracle_search(table, attribute, target).map_err(|e| e.to_string())?;
        let oracle_distance = oracle
            .outcome
            .distance()
            .expect("oracle always finds a row");

        // the oracle species is unique when every minimum-distance row
        // carries the same label
        let mut min_species: Vec<SpeciesLabel> = table
            .records()
            .filter(|r| {
                (r.value(attr) as i64 - target as i64).unsigned_abs() as u32 == oracle_distance
            })
            .map(|r| r.label())
            .collect();
        min_species.dedup();
        let unique_species = (min_species.len() == 1).then(|| min_species[0]);

        let mut agreements = 0u64;
        let mut violations = 0u64;
        let mut total_generations = 0u64;
        let mut total_gap = 0u64;
        for seed in 0..seeds {
            let cfg = GaConfig {
                rng_seed: ga.rng_seed.wrapping_add(seed),
                ..ga.clone()
            };
            let result = run_search(&cfg, table, attribute, target).map_err(|e| e.to_string())?;
            let distance = result.outcome.distance().expect("non-empty table");
            if distance < oracle_distance {
                violations += 1;
            }
            total_gap += distance.saturating_sub(oracle_distance) as u64;
            total_generations += result.generations_used as u64;
            if let Some(species) = unique_species {
                let row = result.outcome.row().expect("non-empty table");
                if table.record(row).map_err(|e| e.to_string())?.label() == species {
                    agreements += 1;
                }
            }
        }
        rows.push(SweepRow {
            target,
            seeds,
            oracle_distance,
            agreement: unique_species.map(|_| agreements as f64 / seeds as f64),
            mean_generations: total_generations as f64 / seeds as f64,
            mean_distance_gap: total_gap as f64 / seeds as f64,
            dominance_violations: violations,
        });
    }
    Ok(rows)
}

/// Validate the GA against the oracle across a target range and seed count.
pub fn cmd_oracle_sweep(
    targets: (u32, u32),
    seeds: u64,
    opts: &CommonOpts,
    out: &mut impl Write,
) -> i32 {
    let config = match load_config(opts) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(out, "ERR: {e}");
            return EXIT_USAGE;
        }
    };
    if seeds == 0 {
        let _ = writeln!(out, "ERR: seed count must be at least 1");
        return EXIT_USAGE;
    }
    let (lo, hi) = targets;
    let _ = writeln!(
        out,
        "{:>6} {:>6} {:>10} {:>10} {:>9} {:>10}",
        "target", "oracle", "agreement", "mean_gens", "mean_gap", "violations"
    );
    let mut total_runs = 0u64;
    let mut total_violations = 0u64;
    if lo <= hi {
        let rows = match sweep_rows(
            &config.catalog,
            &config.ga,
            "iris",
            "iris",
            "sepl",
            targets,
            seeds,
        ) {
            Ok(rows) => rows,
            Err(e) => {
                let _ = writeln!(out, "ERR: {e}");
                return EXIT_USAGE;
            }
        };
        for row in rows {
            let agreement = row
                .agreement
                .map_or("n/a".to_string(), |a| format!("{:.1}%", a * 100.0));
            let _ = writeln!(
                out,
                "{:>6} {:>6} {:>10} {:>10.2} {:>9.3} {:>10}",
                row.target,
                row.oracle_distance,
                agreement,
                row.mean_generations,
                row.mean_distance_gap,
                row.dominance_violations
            );
            total_runs += row.seeds;
            total_violations += row.dominance_violations;
        }
    }
    let _ = writeln!(
        out,
        "oracle-sweep: dominance violations = {total_violations} across {total_runs} runs"
    );
    if total_violations == 0 {
        EXIT_OK
    } else {
        EXIT_MISMATCH
    }
}

/// Bulk-load sensor readings from a CSV file into an existing table.
pub fn cmd_ingest(
    csv_path: &Path,
    db: &str,
    table_name: &str,
    opts: &CommonOpts,
    out: &mut impl Write,
) -> i32 {
    let mut config = match load_config(opts) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(out, "ERR: {e}");
            return EXIT_USAGE;
        }
    };
    let raw = match std::fs::read_to_string(csv_path) {
        Ok(raw) => raw,
        Err(e) => {
            let _ = writeln!(out, "ERR: cannot read {}: {e}", csv_path.display());
            return EXIT_USAGE;
        }
    };
    let Some(table) = config
        .catalog
        .database_mut(db)
        .and_then(|d| d.table_mut(table_name))
    else {
        let _ = writeln!(out, "ERR: unknown table {db}.{table_name}");
        return EXIT_USAGE;
    };
    let rows = match parse_csv(&raw, table.schema().len()) {
        Ok(rows) => rows,
        Err(e) => {
            let _ = writeln!(out, "ERR: {e}");
            return EXIT_USAGE;
        }
    };
    let mut written = 0usize;
    let mut overwritten = 0usize;
    for row in &rows {
        let appended = table.row_count() < table.capacity();
        match table.upsert_sensor_reading(&row.values) {
            Ok(_) => {
                written += 1;
                if !appended {
                    overwritten += 1;
                }
            }
            Err(e) => {
                let _ = writeln!(out, "ERR: line {}: {e}", row.line);
                return EXIT_USAGE;
            }
        }
    }
    let _ = writeln!(
        out,
        "ingested {written} readings into {db}.{table_name} ({overwritten} overwrote older rows)"
    );
    let _ = writeln!(
        out,
        "row_count: {} capacity: {}",
        table.row_count(),
        table.capacity()
    );
    EXIT_OK
}

/// Serve queries over the TCP gateway until stdin closes or says quit.
pub fn cmd_serve(
    listen: Option<&str>,
    opts: &CommonOpts,
    input: &mut impl BufRead,
    out: &mut impl Write,
) -> i32 {
    let config = match load_config(opts) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(out, "ERR: {e}");
            return EXIT_USAGE;
        }
    };
    let addr = listen
        .map(str::to_string)
        .or_else(|| config.transport.listen_addr.clone())
        .unwrap_or_else(|| DEFAULT_LISTEN_ADDR.to_string());

    let transport = Arc::new(Transport::with_delivery_delay(
        config.transport.delivery_delay_ms,
    ));
    let gateway = match TcpGateway::start(&addr, Arc::clone(&transport)) {
        Ok(g) => g,
        Err(e) => {
            let _ = writeln!(out, "ERR: cannot listen on {addr}: {e}");
            return EXIT_USAGE;
        }
    };
    let _ = writeln!(out, "listening on {}", gateway.local_addr());
    let _ = writeln!(
        out,
        "wire format: MSG|I|<peer>|<ts>|<body> one frame per line"
    );
    let _ = out.flush();

    let catalog = Arc::new(RwLock::new(config.catalog.clone()));
    let power = Arc::new(Mutex::new(PowerMonitor::new(config.server.idle_threshold)));
    let sink = Arc::new(EventSink::with_writer(Box::new(std::io::stdout())));
    let shutdown = Arc::new(AtomicBool::new(false));

    let loop_handle = {
        let server_cfg = config.server.clone();
        let ga = config.ga.clone();
        let registry = config.registry.clone();
        let transport = Arc::clone(&transport);
        let power = Arc::clone(&power);
        let sink = Arc::clone(&sink);
        let shutdown = Arc::clone(&shutdown);
        std::thread::spawn(move || {
            run_event_loop(
                catalog,
                &server_cfg,
                &ga,
                transport,
                &registry,
                power,
                sink,
                shutdown,
            )
        })
    };

    // block on stdin: EOF or quit/exit triggers a drained shutdown
    let mut line = String::new();
    loop {
        line.clear();
        match input.read_line(&mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) => {
                let word = line.trim();
                if word == "quit" || word == "exit" {
                    break;
                }
            }
        }
    }

    shutdown.store(true, std::sync::atomic::Ordering::SeqCst);
    let summary = loop_handle.join().expect("event loop thread");
    gateway.stop();
    match summary {
        Ok(summary) => {
            let _ = writeln!(
                out,
                "served {} queries ({} wakeups, {} send failures)",
                summary.handled,
                power.lock().expect("power lock").wake_count(),
                summary.send_failures
            );
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(out, "ERR: event loop failed: {e}");
            EXIT_MISMATCH
        }
    }
}
