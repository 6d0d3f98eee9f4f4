//! The DBMS node: event loop wiring transport, parser, GA search and report
//! dispatch, with a power-state policy and structured status events in place
//! of the original indicator LEDs.

use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex, RwLock};
use std::time::Duration;

use thiserror::Error;

use crate::gasearch::{run_search, GaConfig, SearchOutcome, SearchResult};
use crate::microdb::{Catalog, SpeciesLabel, Table};
use crate::smsql::{format_report, parse_sms, to_canonical_sql, QueryReport, ReportOutcome};
use crate::transport::{ClientRegistry, Direction, SmsFrame, Transport, TransportError};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("transport failed: {0}")]
    Transport(#[from] TransportError),
}

/// Event-loop tuning knobs.
#[derive(Debug, Clone, PartialEq, Eq, serde::Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    /// Queries handled concurrently.
    pub parallelism: usize,
    /// Consecutive empty polls before powering down.
    pub idle_threshold: u32,
    /// Sleep between empty polls, in milliseconds.
    pub poll_interval_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            parallelism: 2,
            idle_threshold: 10,
            poll_interval_ms: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerState {
    Active,
    PoweredDown,
}

/// Power-state policy: power down after `idle_threshold` consecutive empty
/// polls; any inbound frame wakes the node.
#[derive(Debug)]
pub struct PowerMonitor {
    state: PowerState,
    idle_polls: u32,
    wake_count: u64,
    idle_threshold: u32,
}

impl PowerMonitor {
    pub fn new(idle_threshold: u32) -> Self {
        Self {
            state: PowerState::Active,
            idle_polls: 0,
            wake_count: 0,
            idle_threshold,
        }
    }

    pub fn on_poll_empty(&mut self) {
        self.idle_polls += 1;
        if self.state == PowerState::Active && self.idle_polls >= self.idle_threshold {
            self.state = PowerState::PoweredDown;
        }
    }

    pub fn on_inbound(&mut self) {
        if self.state == PowerState::PoweredDown {
            self.state = PowerState::Active;
            self.wake_count += 1;
        }
        self.idle_polls = 0;
    }

    pub fn state(&self) -> PowerState {
        self.state
    }

    pub fn idle_polls(&self) -> u32 {
        self.idle_polls
    }

    pub fn wake_count(&self) -> u64 {
        self.wake_count
    }
}

/// Status indication, one per handled query. Colors map species exactly as
/// the indicator legend did: red Setosa, orange Versicolor, green Virginica.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatusKind {
    Red,
    Orange,
    Green,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusEvent {
    pub kind: StatusKind,
    pub species: Option<SpeciesLabel>,
    pub query_id: String,
}

impl StatusEvent {
    fn for_species(species: SpeciesLabel, query_id: &str) -> Self {
        let kind = match species {
            SpeciesLabel::IrisSetosa => StatusKind::Red,
            SpeciesLabel::IrisVersicolor => StatusKind::Orange,
            SpeciesLabel::IrisVirginica => StatusKind::Green,
        };
        Self {
            kind,
            species: Some(species),
            query_id: query_id.to_string(),
        }
    }

    fn error(query_id: &str) -> Self {
        Self {
            kind: StatusKind::Error,
            species: None,
            query_id: query_id.to_string(),
        }
    }
}

/// One `STAT|<query_id>|<latency_ms>|<generations>|<outcome>` record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryStat {
    pub query_id: String,
    pub latency_ms: u64,
    pub generations: u32,
    pub outcome: String,
}

impl QueryStat {
    pub fn line(&self) -> String {
        format!(
            "STAT|{}|{}|{}|{}",
            self.query_id, self.latency_ms, self.generations, self.outcome
        )
    }
}

/// Collects stats and status events; optionally echoes STAT lines to a
/// writer. Safe for concurrent appends.
pub struct EventSink {
    stats: Mutex<Vec<QueryStat>>,
    events: Mutex<Vec<StatusEvent>>,
    writer: Option<Mutex<Box<dyn Write + Send>>>,
}

impl EventSink {
    pub fn memory() -> Self {
        Self {
            stats: Mutex::new(Vec::new()),
            events: Mutex::new(Vec::new()),
            writer: None,
        }
    }

    pub fn with_writer(writer: Box<dyn Write + Send>) -> Self {
        Self {
            stats: Mutex::new(Vec::new()),
            events: Mutex::new(Vec::new()),
            writer: Some(Mutex::new(writer)),
        }
    }

    pub fn record(&self, stat: QueryStat) {
        if let Some(writer) = &self.writer {
            let mut writer = writer.lock().expect("stat writer lock");
            let _ = writeln!(writer, "{}", stat.line());
        }
        self.stats.lock().expect("stats lock").push(stat);
    }

    pub fn push_event(&self, event: StatusEvent) {
        self.events.lock().expect("events lock").push(event);
    }

    pub fn stats(&self) -> Vec<QueryStat> {
        self.stats.lock().expect("stats lock").clone()
    }

    pub fn events(&self) -> Vec<StatusEvent> {
        self.events.lock().expect("events lock").clone()
    }

    pub fn stats_len(&self) -> usize {
        self.stats.lock().expect("stats lock").len()
    }
}

/// Everything one query produced: the classified report, the outbound reply
/// frames (timestamps assigned at transport admission), the status event and
/// the raw search result when one ran.
#[derive(Debug)]
pub struct HandledQuery {
    pub report: QueryReport,
    pub replies: Vec<SmsFrame>,
    pub event: StatusEvent,
    pub sql: Option<String>,
    pub search: Option<SearchResult>,
}

impl HandledQuery {
    pub fn outcome_label(&self) -> &'static str {
        match (&self.search, &self.report.outcome) {
            (None, _) => "error",
            (Some(_), ReportOutcome::Found(_)) => "found",
            (Some(_), ReportOutcome::NearestApproximate(..)) => "nearest",
            (Some(_), ReportOutcome::NotFound) => "notfound",
        }
    }
}

fn truncate_chars(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}

fn error_reply(sender: &str, reason: &str, query_id: &str) -> HandledQuery {
    let line = truncate_chars(&format!("ERR: {reason}"), crate::transport::MAX_BODY_CHARS);
    let reply = SmsFrame::outbound(sender, &line).expect("error line fits one SMS");
    HandledQuery {
        report: QueryReport {
            outcome: ReportOutcome::NotFound,
            rendered: vec![line],
        },
        replies: vec![reply],
        event: StatusEvent::error(query_id),
        sql: None,
        search: None,
    }
}

fn classify_outcome(
    result: &SearchResult,
    table: &Table,
    threshold: u32,
) -> Result<ReportOutcome, crate::microdb::DbError> {
    Ok(match result.outcome {
        SearchOutcome::Exact { row } => ReportOutcome::Found(table.record(row)?.label()),
        // within the acceptance threshold the nearest record counts as found
        SearchOutcome::Approximate { row, distance } if distance <= threshold => {
            ReportOutcome::Found(table.record(row)?.label())
        }
        SearchOutcome::Approximate { row, distance } => {
            ReportOutcome::NearestApproximate(table.record(row)?.label(), distance)
        }
        SearchOutcome::NotFound => ReportOutcome::NotFound,
    })
}

/// Answer one inbound frame: parse, resolve against the catalog, search,
/// classify and render. Successful reports go to the sender and every
/// registered client; error reports go to the sender only.
pub fn handle_query(
    frame: &SmsFrame,
    catalog: &Catalog,
    ga: &GaConfig,
    registry: &ClientRegistry,
    query_id: &str,
) -> HandledQuery {
    debug_assert_eq!(frame.direction, Direction::Inbound);
    let sender = frame.peer_id.as_str();

    let mut query = match parse_sms(&frame.body) {
        Ok(q) => q,
        Err(e) => return error_reply(sender, &e.to_string(), query_id),
    };
    let Some(database) = catalog.database(&query.database) else {
        return error_reply(
            sender,
            &format!("unknown database {}", query.database),
            query_id,
        );
    };
    let Some(table) = database.table(&query.table) else {
        return error_reply(sender, &format!("unknown table {}", query.table), query_id);
    };
    if table.attribute_index(&query.attribute).is_none() {
        return error_reply(
            sender,
            &format!("unknown attribute {}", query.attribute),
            query_id,
        );
    }
    let mode = database.report_mode();
    query.report_mode = Some(mode);
    let sql = to_canonical_sql(&query);

    let result = match run_search(ga, table, &query.attribute, query.target) {
        Ok(r) => r,
        Err(e) => return error_reply(sender, &format!("search failed: {e}"), query_id),
    };
    let outcome = match classify_outcome(&result, table, ga.fitness_threshold) {
        Ok(o) => o,
        Err(e) => return error_reply(sender, &format!("search failed: {e}"), query_id),
    };
    let rendered = format_report(&outcome, mode);

    let mut recipients: Vec<&str> = vec![sender];
    for client in registry.clients() {
        if client != sender {
            recipients.push(client);
        }
    }
    let mut replies = Vec::with_capacity(rendered.len() * recipients.len());
    for line in &rendered {
        for recipient in &recipients {
            replies.push(SmsFrame::outbound(recipient, line).expect("report line fits one SMS"));
        }
    }

    let event = match outcome.species() {
        Some(species) => StatusEvent::for_species(species, query_id),
        None => StatusEvent::error(query_id),
    };

    HandledQuery {
        report: QueryReport { outcome, rendered },
        replies,
        event,
        sql: Some(sql),
        search: Some(result),
    }
}

/// Totals of one event-loop run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoopSummary {
    pub handled: u64,
    pub send_failures: u64,
}

struct Job {
    frame: SmsFrame,
    query_id: String,
}

/// Poll the transport and answer queries until the shutdown flag is set,
/// handling up to `parallelism` queries concurrently. In-flight queries are
/// drained before returning. A transport lifecycle failure terminates the
/// loop with the error as diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn run_event_loop(
    catalog: Arc<RwLock<Catalog>>,
    server_cfg: &ServerConfig,
    ga: &GaConfig,
    transport: Arc<Transport>,
    registry: &ClientRegistry,
    power: Arc<Mutex<PowerMonitor>>,
    sink: Arc<EventSink>,
    shutdown: Arc<AtomicBool>,
) -> Result<LoopSummary, ServerError> {
    let (tx, rx) = mpsc::channel::<Job>();
    let rx = Arc::new(Mutex::new(rx));
    let handled = Arc::new(AtomicU64::new(0));
    let send_failures = Arc::new(AtomicU64::new(0));

    let workers: Vec<_> = (0..server_cfg.parallelism.max(1))
        .map(|_| {
            let rx = Arc::clone(&rx);
            let catalog = Arc::clone(&catalog);
            let transport = Arc::clone(&transport);
            let sink = Arc::clone(&sink);
            let handled = Arc::clone(&handled);
            let send_failures = Arc::clone(&send_failures);
            let ga = ga.clone();
            let registry = registry.clone();
            std::thread::spawn(move || loop {
                let job = {
                    let rx = rx.lock().expect("job receiver lock");
                    rx.recv()
                };
                let Ok(Job { frame, query_id }) = job else {
                    break;
                };
                let out = {
                    let catalog = catalog.read().expect("catalog read lock");
                    handle_query(&frame, &catalog, &ga, &registry, &query_id)
                };
                for reply in &out.replies {
                    if transport.send_sms(&reply.peer_id, &reply.body).is_err() {
                        send_failures.fetch_add(1, Ordering::Relaxed);
                    }
                }
                let generations = out.search.as_ref().map_or(0, |s| s.generations_used);
                sink.record(QueryStat {
                    query_id,
                    latency_ms: transport.now_ms().saturating_sub(frame.timestamp_ms),
                    generations,
                    outcome: out.outcome_label().to_string(),
                });
                sink.push_event(out.event);
                handled.fetch_add(1, Ordering::Relaxed);
            })
        })
        .collect();

    let mut next_query = 0u64;
    let mut diagnostic: Option<TransportError> = None;
    while !shutdown.load(Ordering::SeqCst) {
        match transport.poll_inbox() {
            Ok(Some(frame)) => {
                power.lock().expect("power lock").on_inbound();
                next_query += 1;
                let job = Job {
                    frame,
                    query_id: format!("q{next_query}"),
                };
                if tx.send(job).is_err() {
                    break;
                }
            }
            Ok(None) => {
                power.lock().expect("power lock").on_poll_empty();
                std::thread::sleep(Duration::from_millis(server_cfg.poll_interval_ms));
            }
            Err(e) => {
                diagnostic = Some(e);
                break;
            }
        }
    }

    // drain: workers finish queued and in-flight queries before we return
    drop(tx);
    for worker in workers {
        let _ = worker.join();
    }

    match diagnostic {
        Some(e) => Err(ServerError::Transport(e)),
        None => Ok(LoopSummary {
            handled: handled.load(Ordering::Relaxed),
            send_failures: send_failures.load(Ordering::Relaxed),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gasearch::SearchMethod;

    fn inbound(body: &str) -> SmsFrame {
        SmsFrame::new(Direction::Inbound, "07030081615", body, 0).unwrap()
    }

    fn default_setup() -> (Catalog, GaConfig, ClientRegistry) {
        (
            Catalog::default_catalog(),
            GaConfig::default(),
            ClientRegistry::with_clients(["07030081615", "08036710489"]).unwrap(),
        )
    }

    #[test]
    fn verbose_query_reports_virginica_with_green_event() {
        let (catalog, ga, registry) = default_setup();
        let out = handle_query(
            &inbound("dbiris tbiris atsepl va8"),
            &catalog,
            &ga,
            &registry,
            "q1",
        );
        assert_eq!(
            out.report.rendered,
            vec!["Species found is:", "Iris-Virginica"]
        );
        assert_eq!(out.event.kind, StatusKind::Green);
        assert_eq!(out.event.species, Some(SpeciesLabel::IrisVirginica));
        assert_eq!(
            out.sql.as_deref(),
            Some("SELECT sepl FROM iris.iris WHERE sepl = 8")
        );
        // two lines to sender plus one registered client
        assert_eq!(out.replies.len(), 4);
        assert_eq!(out.search.as_ref().unwrap().method, SearchMethod::Ga);
    }

    #[test]
    fn terse_query_reports_ivs_with_orange_event() {
        let (catalog, ga, registry) = default_setup();
        let out = handle_query(
            &inbound("dburis tbiris atsepl va6"),
            &catalog,
            &ga,
            &registry,
            "q2",
        );
        assert_eq!(out.report.rendered, vec!["IVS"]);
        assert_eq!(out.event.kind, StatusKind::Orange);
    }

    #[test]
    fn out_of_range_target_reports_nearest_distance() {
        let (catalog, ga, registry) = default_setup();
        let out = handle_query(
            &inbound("dbiris tbiris atsepl va2"),
            &catalog,
            &ga,
            &registry,
            "q3",
        );
        assert_eq!(
            out.report.rendered,
            vec!["Species found is:", "Iris-Setosa", "(nearest, distance=2)"]
        );
        assert_eq!(out.event.kind, StatusKind::Red);
    }

    #[test]
    fn unknown_database_goes_to_sender_only() {
        let (catalog, ga, registry) = default_setup();
        let out = handle_query(
            &inbound("dbzzz tbiris atsepl va6"),
            &catalog,
            &ga,
            &registry,
            "q4",
        );
        assert_eq!(out.replies.len(), 1);
        assert_eq!(out.replies[0].peer_id, "07030081615");
        assert_eq!(out.replies[0].body, "ERR: unknown database zzz");
        assert_eq!(out.event.kind, StatusKind::Error);
        assert!(out.search.is_none());
    }

    #[test]
    fn unknown_table_and_attribute_are_isolated_errors() {
        let (catalog, ga, registry) = default_setup();
        let out = handle_query(
            &inbound("dbiris tbzzz atsepl va6"),
            &catalog,
            &ga,
            &registry,
            "q5",
        );
        assert_eq!(out.replies[0].body, "ERR: unknown table zzz");
        let out = handle_query(
            &inbound("dbiris tbiris atzzz va6"),
            &catalog,
            &ga,
            &registry,
            "q6",
        );
        assert_eq!(out.replies[0].body, "ERR: unknown attribute zzz");
    }

    #[test]
    fn parse_error_becomes_err_reply() {
        let (catalog, ga, registry) = default_setup();
        let out = handle_query(&inbound("dbiris tbiris"), &catalog, &ga, &registry, "q7");
        assert_eq!(out.replies.len(), 1);
        assert!(out.replies[0].body.starts_with("ERR: incomplete query"));
        assert_eq!(out.outcome_label(), "error");
    }

    #[test]
    fn sender_in_registry_is_not_doubled() {
        let (catalog, ga, registry) = default_setup();
        let out = handle_query(
            &inbound("dburis tbiris atsepl va6"),
            &catalog,
            &ga,
            &registry,
            "q8",
        );
        // one line, sender + the one other registered client
        assert_eq!(out.replies.len(), 2);
        let peers: Vec<&str> = out.replies.iter().map(|f| f.peer_id.as_str()).collect();
        assert_eq!(peers, vec!["07030081615", "08036710489"]);
    }

    #[test]
    fn power_monitor_automaton() {
        let mut power = PowerMonitor::new(3);
        assert_eq!(power.state(), PowerState::Active);

        // empty polls below the threshold keep the node active
        power.on_poll_empty();
        power.on_poll_empty();
        assert_eq!(power.state(), PowerState::Active);
        assert_eq!(power.idle_polls(), 2);

        // reaching the threshold powers down
        power.on_poll_empty();
        assert_eq!(power.state(), PowerState::PoweredDown);

        // further empty polls stay powered down
        power.on_poll_empty();
        assert_eq!(power.state(), PowerState::PoweredDown);
        assert_eq!(power.wake_count(), 0);

        // an inbound frame wakes the node exactly once
        power.on_inbound();
        assert_eq!(power.state(), PowerState::Active);
        assert_eq!(power.wake_count(), 1);
        assert_eq!(power.idle_polls(), 0);

        // frames while active reset idle polls without counting as wakes
        power.on_poll_empty();
        power.on_inbound();
        assert_eq!(power.state(), PowerState::Active);
        assert_eq!(power.wake_count(), 1);
        assert_eq!(power.idle_polls(), 0);
    }

    #[test]
    fn power_monitor_exhaustive_transitions() {
        // every (state, input) pair behaves per the policy table
        for threshold in 1..=4u32 {
            let mut power = PowerMonitor::new(threshold);
            for _ in 0..threshold - 1 {
                power.on_poll_empty();
                assert_eq!(power.state(), PowerState::Active);
            }
            power.on_poll_empty();
            assert_eq!(power.state(), PowerState::PoweredDown);
            power.on_inbound();
            assert_eq!(power.state(), PowerState::Active);
            assert_eq!(power.wake_count(), 1);
        }
    }

    #[test]
    fn stat_line_format() {
        let stat = QueryStat {
            query_id: "q9".to_string(),
            latency_ms: 12,
            generations: 3,
            outcome: "found".to_string(),
        };
        assert_eq!(stat.line(), "STAT|q9|12|3|found");
    }
}
