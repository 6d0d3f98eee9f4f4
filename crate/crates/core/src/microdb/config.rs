//! Catalog construction from the TOML configuration document.
//!
//! Only the `[databases]` tree is interpreted here; other sections of the
//! same document (server, transport, ga, registry) belong to
//! [`crate::config::AppConfig`].

use std::collections::BTreeMap;

use serde::Deserialize;

use super::{
    AttributeSchema, Catalog, Database, DbError, Record, ReportMode, Table, DEFAULT_CAPACITY,
    DEFAULT_RANGE,
};

#[derive(Debug, Deserialize)]
struct CatalogDoc {
    #[serde(default)]
    databases: BTreeMap<String, DatabaseSection>,
}

#[derive(Debug, Deserialize)]
struct DatabaseSection {
    report_mode: ReportMode,
    #[serde(default)]
    tables: BTreeMap<String, TableSection>,
}

#[derive(Debug, Deserialize)]
struct TableSection {
    #[serde(default = "default_capacity")]
    capacity: usize,
    #[serde(default = "default_clamp")]
    clamp_out_of_range: bool,
    attributes: Vec<AttributeSection>,
    #[serde(default)]
    rows: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct AttributeSection {
    name: String,
    #[serde(default = "default_min")]
    min_value: u32,
    #[serde(default = "default_max")]
    max_value: u32,
    #[serde(default)]
    is_key: bool,
}

fn default_capacity() -> usize {
    DEFAULT_CAPACITY
}

fn default_clamp() -> bool {
    true
}

fn default_min() -> u32 {
    DEFAULT_RANGE.0
}

fn default_max() -> u32 {
    DEFAULT_RANGE.1
}

/// Build a catalog from a TOML configuration document.
///
/// The document must define at least one database, each with at least one
/// table. Initial rows are discretized (round-half-up, clamped) exactly like
/// CSV ingestion.
pub fn load_catalog(config: &str) -> Result<Catalog, DbError> {
    let doc: CatalogDoc = toml::from_str(config).map_err(|e| DbError::Config(e.to_string()))?;
    if doc.databases.is_empty() {
        return Err(DbError::Config(
            "configuration defines no databases".to_string(),
        ));
    }
    let mut catalog = Catalog::new();
    for (db_name, db_section) in doc.databases {
        if db_section.tables.is_empty() {
            return Err(DbError::Config(format!(
                "database {db_name:?} defines no tables"
            )));
        }
        let mut database = Database::new(db_section.report_mode);
        for (table_name, section) in db_section.tables {
            database.add_table(build_table(&table_name, section)?)?;
        }
        catalog.add_database(&db_name, database)?;
    }
    Ok(catalog)
}

fn build_table(name: &str, section: TableSection) -> Result<Table, DbError> {
    let schema: Vec<AttributeSchema> = section
        .attributes
        .iter()
        .map(|a| AttributeSchema::new(&a.name, a.min_value, a.max_value, a.is_key))
        .collect::<Result<_, _>>()?;
    let capacity = section.capacity.max(section.rows.len());
    let mut table = Table::new(name, schema, capacity)?;
    table.set_clamp_out_of_range(section.clamp_out_of_range);
    for (i, row) in section.rows.iter().enumerate() {
        let record = Record::from_measurements(row, table.schema(), true).map_err(|e| match e {
            DbError::RowWidth {
                expected, found, ..
            } => DbError::Config(format!(
                "table {name}: row {i} has {found} values, schema has {expected}"
            )),
            other => other,
        })?;
        table.push_record(record)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::DEFAULT_CONFIG_TOML;

    // Stored key values of the default table, in row order.
    const DEFAULT_KEYS: [u32; 16] = [5, 4, 7, 6, 7, 7, 4, 6, 5, 4, 7, 6, 7, 7, 4, 7];

    #[test]
    fn default_config_reproduces_both_databases() {
        let catalog = load_catalog(DEFAULT_CONFIG_TOML).unwrap();
        let names: Vec<&str> = catalog.database_names().collect();
        assert_eq!(names, vec!["iris", "uris"]);
        assert_eq!(
            catalog.database("iris").unwrap().report_mode(),
            ReportMode::Verbose
        );
        assert_eq!(
            catalog.database("uris").unwrap().report_mode(),
            ReportMode::Terse
        );
    }

    #[test]
    fn default_tables_hold_the_stock_key_values() {
        let catalog = load_catalog(DEFAULT_CONFIG_TOML).unwrap();
        for db in ["iris", "uris"] {
            let table = catalog.database(db).unwrap().table("iris").unwrap();
            assert_eq!(table.row_count(), 16);
            assert_eq!(table.capacity(), 16);
            let key = table.key_index();
            let keys: Vec<u32> = table.records().map(|r| r.value(key)).collect();
            assert_eq!(keys, DEFAULT_KEYS);
        }
    }

    #[test]
    fn default_tables_have_identical_content() {
        let catalog = load_catalog(DEFAULT_CONFIG_TOML).unwrap();
        let rows = |db: &str| -> Vec<Vec<u32>> {
            catalog
                .database(db)
                .unwrap()
                .table("iris")
                .unwrap()
                .records()
                .map(|r| r.values().to_vec())
                .collect()
        };
        assert_eq!(rows("iris"), rows("uris"));
    }

    #[test]
    fn every_default_row_classifies() {
        let catalog = load_catalog(DEFAULT_CONFIG_TOML).unwrap();
        let table = catalog.database("iris").unwrap().table("iris").unwrap();
        let key = table.key_index();
        for i in 0..table.row_count() {
            let record = table.record(i).unwrap();
            assert_eq!(
                crate::microdb::classify_species(record.value(key)).unwrap(),
                record.label()
            );
        }
    }

    #[test]
    fn empty_config_is_rejected() {
        let err = load_catalog("").unwrap_err();
        assert!(matches!(err, DbError::Config(_)));
    }

    #[test]
    fn database_without_tables_is_rejected() {
        let err = load_catalog("[databases.solo]\nreport_mode = \"verbose\"\n").unwrap_err();
        assert!(matches!(err, DbError::Config(_)));
    }

    #[test]
    fn two_tables_in_one_database_are_both_retrievable() {
        let config = r#"
[databases.lab]
report_mode = "verbose"

[databases.lab.tables.first]
attributes = [{ name = "k", min_value = 4, max_value = 8, is_key = true }]
rows = [[4.0]]

[databases.lab.tables.second]
attributes = [{ name = "k", min_value = 4, max_value = 8, is_key = true }]
rows = [[6.0], [7.0]]
"#;
        let catalog = load_catalog(config).unwrap();
        let lab = catalog.database("lab").unwrap();
        assert_eq!(lab.table("first").unwrap().row_count(), 1);
        assert_eq!(lab.table("second").unwrap().row_count(), 2);
        let names: Vec<&str> = lab.table_names().collect();
        assert_eq!(names, vec!["first", "second"]);
    }

    #[test]
    fn malformed_toml_is_a_config_error() {
        let err = load_catalog("databases = 5").unwrap_err();
        assert!(matches!(err, DbError::Config(_)));
    }

    #[test]
    fn row_width_mismatch_names_the_row() {
        let config = r#"
[databases.d]
report_mode = "terse"
[databases.d.tables.t]
attributes = [{ name = "k", is_key = true }]
rows = [[4.0, 5.0]]
"#;
        let err = load_catalog(config).unwrap_err();
        match err {
            DbError::Config(msg) => assert!(msg.contains("row 0")),
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
