//! An in-memory micro-database queried over a simulated SMS transport.
//!
//! Queries arrive as four-token SMS bodies (`dbiris tbiris atsepl va8`),
//! are translated into a single-predicate equality lookup and answered by a
//! genetic-algorithm search over row indices, validated against an exact
//! linear-scan oracle. Reports are rendered per database in a verbose or
//! terse species format and broadcast to registered clients.
//!
//! Modules:
//! - [`microdb`]: catalog, tables, CSV ingestion, species classification
//! - [`smsql`]: the SMS query mini-language and report formatting
//! - [`gasearch`]: the GA engine and the brute-force oracle
//! - [`transport`]: frames, FIFO queues, wire codec, TCP gateway
//! - [`server`]: event loop, power policy, status events, stats
//! - [`config`]: the TOML configuration document

pub mod config;
pub mod gasearch;
pub mod microdb;
pub mod server;
pub mod smsql;
pub mod transport;

pub use config::AppConfig;

/// The configuration document compiled into the binary.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("default_config.toml");
