//! Whole-application configuration: one TOML document covering the schema
//! catalog, GA parameters, server loop and transport.

use serde::Deserialize;

use crate::gasearch::GaConfig;
use crate::microdb::{load_catalog, Catalog, DbError};
use crate::server::ServerConfig;
use crate::transport::ClientRegistry;

/// Transport-related configuration keys.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(default)]
pub struct TransportSettings {
    /// In-process loopback instead of a socket listener.
    pub loopback: bool,
    /// Listener endpoint for the TCP gateway, e.g. `127.0.0.1:7070`.
    pub listen_addr: Option<String>,
    /// Artificial inbound delivery delay, in milliseconds.
    pub delivery_delay_ms: u64,
}

impl Default for TransportSettings {
    fn default() -> Self {
        Self {
            loopback: true,
            listen_addr: None,
            delivery_delay_ms: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ConfigDoc {
    #[serde(default)]
    server: ServerConfig,
    #[serde(default)]
    transport: TransportSettings,
    #[serde(default)]
    ga: GaConfig,
    #[serde(default)]
    registry: RegistrySection,
}

#[derive(Debug, Default, Deserialize)]
struct RegistrySection {
    #[serde(default)]
    clients: Vec<String>,
}

/// Parsed application configuration.
#[derive(Debug, Clone)]
pub struct AppConfig {
    pub catalog: Catalog,
    pub ga: GaConfig,
    pub server: ServerConfig,
    pub transport: TransportSettings,
    pub registry: ClientRegistry,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, DbError> {
        let doc: ConfigDoc = toml::from_str(text).map_err(|e| DbError::Config(e.to_string()))?;
        let catalog = load_catalog(text)?;
        doc.ga
            .validate()
            .map_err(|e| DbError::Config(e.to_string()))?;
        if doc.server.parallelism == 0 {
            return Err(DbError::Config(
                "server.parallelism must be at least 1".to_string(),
            ));
        }
        let registry = ClientRegistry::with_clients(&doc.registry.clients)
            .map_err(|e| DbError::Config(format!("registry: {e}")))?;
        Ok(Self {
            catalog,
            ga: doc.ga,
            server: doc.server,
            transport: doc.transport,
            registry,
        })
    }

    /// The configuration compiled into the binary.
    pub fn embedded_default() -> Self {
        Self::from_toml(crate::DEFAULT_CONFIG_TOML).expect("embedded default config is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gasearch::SelectionScheme;

    #[test]
    fn embedded_default_parses() {
        let config = AppConfig::embedded_default();
        assert_eq!(config.ga.pop_size, 16);
        assert_eq!(config.ga.num_gens, 40);
        assert_eq!(config.ga.num_muts, 1);
        assert_eq!(config.ga.fitness_threshold, 1);
        assert_eq!(config.ga.selection, SelectionScheme::Roulette);
        assert_eq!(config.server.parallelism, 2);
        assert_eq!(config.server.idle_threshold, 10);
        assert_eq!(config.server.poll_interval_ms, 100);
        assert!(config.transport.loopback);
        assert_eq!(config.transport.delivery_delay_ms, 0);
        assert_eq!(config.registry.clients(), &["07030081615", "08036710489"]);
        assert!(!config.catalog.is_empty());
    }

    #[test]
    fn sections_default_when_missing() {
        let text = r#"
[databases.solo]
report_mode = "terse"
[databases.solo.tables.t]
attributes = [{ name = "k", min_value = 4, max_value = 8, is_key = true }]
rows = [[5.0]]
"#;
        let config = AppConfig::from_toml(text).unwrap();
        assert_eq!(config.server, ServerConfig::default());
        assert_eq!(config.ga, GaConfig::default());
        assert!(config.registry.is_empty());
        assert!(config.transport.loopback);
    }

    #[test]
    fn bad_ga_section_is_a_config_error() {
        let text = r#"
[ga]
pop_size = 3

[databases.solo]
report_mode = "terse"
[databases.solo.tables.t]
attributes = [{ name = "k", is_key = true }]
"#;
        let err = AppConfig::from_toml(text).unwrap_err();
        assert!(matches!(err, DbError::Config(_)));
    }

    #[test]
    fn bad_registry_entry_is_a_config_error() {
        let text = r#"
[registry]
clients = ["not-a-number"]

[databases.solo]
report_mode = "terse"
[databases.solo.tables.t]
attributes = [{ name = "k", is_key = true }]
"#;
        let err = AppConfig::from_toml(text).unwrap_err();
        assert!(matches!(err, DbError::Config(_)));
    }
}
