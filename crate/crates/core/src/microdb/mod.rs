//! In-memory micro-database: schema catalog, discretized integer records,
//! species classification and ring-buffer sensor updates.
//!
//! Tables hold fixed-width rows of unsigned integers. Every table has exactly
//! one key attribute; the key value of a record determines its species label.
//! Writers need exclusive access to a table (wrap it in an `RwLock` when
//! sharing); readers may run concurrently.

pub(crate) mod config;
mod csv;

pub use config::load_catalog;
pub use csv::{ingest_csv, parse_csv, CsvRow};

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

/// Default attribute value range, `[4, 9]`.
pub const DEFAULT_RANGE: (u32, u32) = (4, 9);
/// Default ring-buffer capacity of a table.
pub const DEFAULT_CAPACITY: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DbError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("parse error at line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("row width mismatch at line {line}: expected {expected} values, found {found}")]
    RowWidth {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("row index {index} out of range (row count {row_count})")]
    RowOutOfRange { index: usize, row_count: usize },
    #[error("value {value} out of range [{min}, {max}] for attribute {attribute}")]
    ValueOutOfRange {
        value: i64,
        attribute: String,
        min: u32,
        max: u32,
    },
    #[error("key value {0} has no species classification (expected 4..=8)")]
    Unclassifiable(u32),
}

/// Species of a stored record, derived from its key attribute value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpeciesLabel {
    IrisSetosa,
    IrisVersicolor,
    IrisVirginica,
}

impl SpeciesLabel {
    pub fn long_name(&self) -> &'static str {
        match self {
            SpeciesLabel::IrisSetosa => "Iris-Setosa",
            SpeciesLabel::IrisVersicolor => "Iris-Versicolor",
            SpeciesLabel::IrisVirginica => "Iris-Virginica",
        }
    }

    pub fn short_code(&self) -> &'static str {
        match self {
            SpeciesLabel::IrisSetosa => "IS",
            SpeciesLabel::IrisVersicolor => "IVS",
            SpeciesLabel::IrisVirginica => "IVG",
        }
    }
}

impl std::fmt::Display for SpeciesLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.long_name())
    }
}

/// Classify a key attribute value into a species.
///
/// The mapping partitions `[4, 8]`: 4 and 5 are Setosa, 6 is Versicolor,
/// 7 and 8 are Virginica. Values outside that range are an error rather
/// than a silent miss.
pub fn classify_species(key_value: u32) -> Result<SpeciesLabel, DbError> {
    match key_value {
        4 | 5 => Ok(SpeciesLabel::IrisSetosa),
        6 => Ok(SpeciesLabel::IrisVersicolor),
        7 | 8 => Ok(SpeciesLabel::IrisVirginica),
        other => Err(DbError::Unclassifiable(other)),
    }
}

/// How query reports are rendered for a database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportMode {
    Verbose,
    Terse,
}

/// One column of a table: a short name, an inclusive value range and a
/// key flag. Exactly one attribute per table is the key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSchema {
    pub name: String,
    pub min_value: u32,
    pub max_value: u32,
    pub is_key: bool,
}

impl AttributeSchema {
    pub fn new(name: &str, min_value: u32, max_value: u32, is_key: bool) -> Result<Self, DbError> {
        if !is_token(name) {
            return Err(DbError::Config(format!(
                "attribute name {name:?} must be a non-empty lowercase alphanumeric token"
            )));
        }
        if min_value > max_value {
            return Err(DbError::Config(format!(
                "attribute {name}: min_value {min_value} exceeds max_value {max_value}"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            min_value,
            max_value,
            is_key,
        })
    }
}

pub(crate) fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
}

/// Round-half-up to the nearest integer, then clamp into `[min, max]`.
fn discretize_clamped(raw: f64, min: u32, max: u32) -> u32 {
    let rounded = (raw + 0.5).floor();
    if rounded < min as f64 {
        min
    } else if rounded > max as f64 {
        max
    } else {
        rounded as u32
    }
}

/// Round-half-up without clamping; out-of-range values are an error.
fn discretize_strict(raw: f64, attr: &AttributeSchema) -> Result<u32, DbError> {
    let rounded = (raw + 0.5).floor();
    if rounded < attr.min_value as f64 || rounded > attr.max_value as f64 {
        return Err(DbError::ValueOutOfRange {
            value: rounded as i64,
            attribute: attr.name.clone(),
            min: attr.min_value,
            max: attr.max_value,
        });
    }
    Ok(rounded as u32)
}

/// A fixed-width row of discretized attribute values plus its cached
/// species label. The label always equals `classify_species` of the key
/// attribute value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    values: Vec<u32>,
    label: SpeciesLabel,
}

impl Record {
    /// Build a record from raw measurements, one per schema attribute.
    /// `clamp` controls whether out-of-range values are clamped into the
    /// attribute range or rejected.
    pub fn from_measurements(
        raw: &[f64],
        schema: &[AttributeSchema],
        clamp: bool,
    ) -> Result<Self, DbError> {
        if raw.len() != schema.len() {
            return Err(DbError::RowWidth {
                line: 0,
                expected: schema.len(),
                found: raw.len(),
            });
        }
        let mut values = Vec::with_capacity(schema.len());
        for (v, attr) in raw.iter().zip(schema) {
            let value = if clamp {
                discretize_clamped(*v, attr.min_value, attr.max_value)
            } else {
                discretize_strict(*v, attr)?
            };
            values.push(value);
        }
        let key_idx = schema
            .iter()
            .position(|a| a.is_key)
            .expect("table schema always has a key attribute");
        let label = classify_species(values[key_idx])?;
        Ok(Self { values, label })
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn value(&self, attribute_index: usize) -> u32 {
        self.values[attribute_index]
    }

    pub fn label(&self) -> SpeciesLabel {
        self.label
    }
}

/// A named table: ordered schema, ordered records and ring-buffer write
/// state. Row indices are stable; writes either append or overwrite the
/// oldest slot once `capacity` is reached.
#[derive(Debug, Clone)]
pub struct Table {
    name: String,
    schema: Vec<AttributeSchema>,
    records: Vec<Record>,
    capacity: usize,
    cursor: usize,
    clamp_out_of_range: bool,
}

impl Table {
    pub fn new(name: &str, schema: Vec<AttributeSchema>, capacity: usize) -> Result<Self, DbError> {
        if !is_token(name) {
            return Err(DbError::Config(format!(
                "table name {name:?} must be a non-empty lowercase alphanumeric token"
            )));
        }
        if schema.is_empty() {
            return Err(DbError::Config(format!("table {name}: empty schema")));
        }
        let keys = schema.iter().filter(|a| a.is_key).count();
        if keys != 1 {
            return Err(DbError::Config(format!(
                "table {name}: expected exactly one key attribute, found {keys}"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for attr in &schema {
            if !seen.insert(attr.name.as_str()) {
                return Err(DbError::Conflict(format!(
                    "table {name}: duplicate attribute {:?}",
                    attr.name
                )));
            }
        }
        if capacity == 0 {
            return Err(DbError::Config(format!(
                "table {name}: capacity must be > 0"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            schema,
            records: Vec::new(),
            capacity,
            cursor: 0,
            clamp_out_of_range: true,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn schema(&self) -> &[AttributeSchema] {
        &self.schema
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|a| a.name == name)
    }

    pub fn key_index(&self) -> usize {
        self.schema
            .iter()
            .position(|a| a.is_key)
            .expect("table schema always has a key attribute")
    }

    pub fn row_count(&self) -> usize {
        self.records.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn set_clamp_out_of_range(&mut self, clamp: bool) {
        self.clamp_out_of_range = clamp;
    }

    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.records.iter()
    }

    /// Read one record by row index.
    pub fn record(&self, index: usize) -> Result<&Record, DbError> {
        self.records.get(index).ok_or(DbError::RowOutOfRange {
            index,
            row_count: self.records.len(),
        })
    }

    /// Write a sensor reading: appends while below capacity, then wraps
    /// around overwriting the oldest slot. Returns the written row index.
    pub fn upsert_sensor_reading(&mut self, values: &[f64]) -> Result<usize, DbError> {
        let record = Record::from_measurements(values, &self.schema, self.clamp_out_of_range)?;
        if self.records.len() < self.capacity {
            self.records.push(record);
            Ok(self.records.len() - 1)
        } else {
            let index = self.cursor;
            self.records[index] = record;
            self.cursor = (self.cursor + 1) % self.capacity;
            Ok(index)
        }
    }

    pub(crate) fn push_record(&mut self, record: Record) -> Result<(), DbError> {
        if self.records.len() == self.capacity {
            return Err(DbError::Config(format!(
                "table {}: more than {} initial rows",
                self.name, self.capacity
            )));
        }
        self.records.push(record);
        Ok(())
    }
}

/// Free-function form of [`Table::record`].
pub fn get_record(table: &Table, index: usize) -> Result<&Record, DbError> {
    table.record(index)
}

/// Free-function form of [`Table::upsert_sensor_reading`].
pub fn upsert_sensor_reading(table: &mut Table, values: &[f64]) -> Result<usize, DbError> {
    table.upsert_sensor_reading(values)
}

/// One named database: its tables and the report mode its answers use.
#[derive(Debug, Clone)]
pub struct Database {
    tables: BTreeMap<String, Table>,
    report_mode: ReportMode,
}

impl Database {
    pub fn new(report_mode: ReportMode) -> Self {
        Self {
            tables: BTreeMap::new(),
            report_mode,
        }
    }

    pub fn report_mode(&self) -> ReportMode {
        self.report_mode
    }

    pub fn add_table(&mut self, table: Table) -> Result<(), DbError> {
        let name = table.name().to_string();
        if self.tables.contains_key(&name) {
            return Err(DbError::Conflict(format!("duplicate table {name:?}")));
        }
        self.tables.insert(name, table);
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    pub fn table_mut(&mut self, name: &str) -> Option<&mut Table> {
        self.tables.get_mut(name)
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(|s| s.as_str())
    }
}

/// The full schema catalog: all databases by name.
#[derive(Debug, Clone)]
pub struct Catalog {
    databases: BTreeMap<String, Database>,
}

impl Catalog {
    pub fn new() -> Self {
        Self {
            databases: BTreeMap::new(),
        }
    }

    /// The catalog shipped with the binary: two databases (`iris` verbose,
    /// `uris` terse), each with one 16-row `iris` table.
    pub fn default_catalog() -> Self {
        load_catalog(crate::DEFAULT_CONFIG_TOML).expect("embedded default config is valid")
    }

    pub fn add_database(&mut self, name: &str, database: Database) -> Result<(), DbError> {
        if !is_token(name) {
            return Err(DbError::Config(format!(
                "database name {name:?} must be a non-empty lowercase alphanumeric token"
            )));
        }
        if self.databases.contains_key(name) {
            return Err(DbError::Conflict(format!("duplicate database {name:?}")));
        }
        self.databases.insert(name.to_string(), database);
        Ok(())
    }

    pub fn database(&self, name: &str) -> Option<&Database> {
        self.databases.get(name)
    }

    pub fn database_mut(&mut self, name: &str) -> Option<&mut Database> {
        self.databases.get_mut(name)
    }

    pub fn database_names(&self) -> impl Iterator<Item = &str> {
        self.databases.keys().map(|s| s.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.databases.is_empty()
    }
}

impl Default for Catalog {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iris_schema() -> Vec<AttributeSchema> {
        vec![
            AttributeSchema::new("sepl", 4, 9, true).unwrap(),
            AttributeSchema::new("sepw", 4, 9, false).unwrap(),
            AttributeSchema::new("petl", 4, 9, false).unwrap(),
            AttributeSchema::new("petw", 4, 9, false).unwrap(),
        ]
    }

    #[test]
    fn classify_stock_cases() {
        assert_eq!(classify_species(4).unwrap(), SpeciesLabel::IrisSetosa);
        assert_eq!(classify_species(6).unwrap(), SpeciesLabel::IrisVersicolor);
        assert_eq!(classify_species(8).unwrap(), SpeciesLabel::IrisVirginica);
        assert_eq!(classify_species(9).unwrap_err(), DbError::Unclassifiable(9));
    }

    #[test]
    fn classify_partitions_domain() {
        let mut setosa = vec![];
        let mut versicolor = vec![];
        let mut virginica = vec![];
        for v in 4..=8 {
            match classify_species(v).unwrap() {
                SpeciesLabel::IrisSetosa => setosa.push(v),
                SpeciesLabel::IrisVersicolor => versicolor.push(v),
                SpeciesLabel::IrisVirginica => virginica.push(v),
            }
        }
        assert_eq!(setosa, vec![4, 5]);
        assert_eq!(versicolor, vec![6]);
        assert_eq!(virginica, vec![7, 8]);
        assert!(classify_species(3).is_err());
        assert!(classify_species(9).is_err());
    }

    #[test]
    fn species_names_and_codes() {
        assert_eq!(SpeciesLabel::IrisSetosa.long_name(), "Iris-Setosa");
        assert_eq!(SpeciesLabel::IrisSetosa.short_code(), "IS");
        assert_eq!(SpeciesLabel::IrisVersicolor.long_name(), "Iris-Versicolor");
        assert_eq!(SpeciesLabel::IrisVersicolor.short_code(), "IVS");
        assert_eq!(SpeciesLabel::IrisVirginica.long_name(), "Iris-Virginica");
        assert_eq!(SpeciesLabel::IrisVirginica.short_code(), "IVG");
    }

    #[test]
    fn discretize_rounds_half_up_and_clamps() {
        assert_eq!(discretize_clamped(5.1, 4, 9), 5);
        assert_eq!(discretize_clamped(7.9, 4, 9), 8);
        assert_eq!(discretize_clamped(4.5, 4, 9), 5);
        assert_eq!(discretize_clamped(0.2, 4, 9), 4);
        assert_eq!(discretize_clamped(12.0, 4, 9), 9);
        assert_eq!(discretize_clamped(-3.0, 4, 9), 4);
    }

    #[test]
    fn record_label_tracks_key_value() {
        let schema = iris_schema();
        let r = Record::from_measurements(&[5.1, 3.5, 1.4, 0.2], &schema, true).unwrap();
        assert_eq!(r.values(), &[5, 4, 4, 4]);
        assert_eq!(r.label(), SpeciesLabel::IrisSetosa);
        let r = Record::from_measurements(&[7.9, 3.8, 6.4, 2.0], &schema, true).unwrap();
        assert_eq!(r.value(0), 8);
        assert_eq!(r.label(), SpeciesLabel::IrisVirginica);
    }

    #[test]
    fn record_rejects_unclampable_key() {
        // 9 is inside the default range but outside the classification domain
        let schema = iris_schema();
        let err = Record::from_measurements(&[9.0, 4.0, 4.0, 4.0], &schema, true).unwrap_err();
        assert_eq!(err, DbError::Unclassifiable(9));
    }

    #[test]
    fn strict_discretization_rejects_out_of_range() {
        let schema = iris_schema();
        let err = Record::from_measurements(&[2.0, 4.0, 4.0, 4.0], &schema, false).unwrap_err();
        assert!(matches!(err, DbError::ValueOutOfRange { .. }));
    }

    #[test]
    fn table_requires_exactly_one_key() {
        let schema = vec![
            AttributeSchema::new("a", 4, 9, false).unwrap(),
            AttributeSchema::new("b", 4, 9, false).unwrap(),
        ];
        assert!(matches!(
            Table::new("t", schema, 16).unwrap_err(),
            DbError::Config(_)
        ));
    }

    #[test]
    fn get_record_bounds() {
        let mut table = Table::new("iris", iris_schema(), 16).unwrap();
        assert_eq!(
            upsert_sensor_reading(&mut table, &[5.0, 4.0, 4.0, 4.0]).unwrap(),
            0
        );
        assert_eq!(get_record(&table, 0).unwrap().value(0), 5);
        let err = get_record(&table, 1).unwrap_err();
        assert_eq!(
            err,
            DbError::RowOutOfRange {
                index: 1,
                row_count: 1
            }
        );
    }

    #[test]
    fn upsert_appends_then_wraps() {
        let mut table = Table::new("iris", iris_schema(), 16).unwrap();
        assert_eq!(
            table.upsert_sensor_reading(&[4.0, 4.0, 4.0, 4.0]).unwrap(),
            0
        );
        for i in 1..16 {
            assert_eq!(
                table.upsert_sensor_reading(&[4.0, 4.0, 4.0, 4.0]).unwrap(),
                i
            );
        }
        assert_eq!(table.row_count(), 16);
        // at capacity: the next write lands on the oldest slot
        assert_eq!(
            table.upsert_sensor_reading(&[7.0, 4.0, 4.0, 4.0]).unwrap(),
            0
        );
        assert_eq!(table.row_count(), 16);
        assert_eq!(table.record(0).unwrap().value(0), 7);
        assert_eq!(
            table.upsert_sensor_reading(&[6.0, 4.0, 4.0, 4.0]).unwrap(),
            1
        );
    }

    #[test]
    fn upsert_range_error_when_clamping_disabled() {
        let mut table = Table::new("iris", iris_schema(), 16).unwrap();
        table.set_clamp_out_of_range(false);
        let err = table
            .upsert_sensor_reading(&[12.0, 4.0, 4.0, 4.0])
            .unwrap_err();
        assert!(matches!(err, DbError::ValueOutOfRange { .. }));
        assert_eq!(table.row_count(), 0);
    }

    #[test]
    fn records_stay_in_schema_range() {
        let mut table = Table::new("iris", iris_schema(), 12).unwrap();
        for i in 0..20 {
            let v = 3.0 + (i as f64) * 0.37;
            table.upsert_sensor_reading(&[5.0, v, v, v]).unwrap();
            assert!(table.row_count() <= table.capacity());
        }
        for record in table.records() {
            for (value, attr) in record.values().iter().zip(table.schema()) {
                assert!(*value >= attr.min_value && *value <= attr.max_value);
            }
        }
    }

    #[test]
    fn catalog_rejects_duplicates() {
        let mut catalog = Catalog::new();
        catalog
            .add_database("iris", Database::new(ReportMode::Verbose))
            .unwrap();
        let err = catalog
            .add_database("iris", Database::new(ReportMode::Terse))
            .unwrap_err();
        assert!(matches!(err, DbError::Conflict(_)));
    }
}
