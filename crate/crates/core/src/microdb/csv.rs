//! CSV ingestion: comma-separated measurement rows, one record per line.

use super::{AttributeSchema, DbError, Record, Table, DEFAULT_CAPACITY};

const KNOWN_SPECIES: &[&str] = &["setosa", "versicolor", "virginica"];

/// One parsed CSV row with its source line number.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub line: usize,
    pub values: Vec<f64>,
}

/// Parse comma-separated measurement rows.
///
/// Each line carries `width` values, optionally followed by a species name
/// column (it must be a recognized species token and is otherwise ignored:
/// labels are derived from the key value, not from the file). Lines starting
/// with `#` and blank lines are skipped.
pub fn parse_csv(raw: &str, width: usize) -> Result<Vec<CsvRow>, DbError> {
    let mut rows = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if cells.len() != width && cells.len() != width + 1 {
            return Err(DbError::RowWidth {
                line: line_no,
                expected: width,
                found: cells.len(),
            });
        }
        let mut values = Vec::with_capacity(width);
        for cell in &cells[..width] {
            let value: f64 = cell.parse().map_err(|_| DbError::Csv {
                line: line_no,
                reason: format!("non-numeric cell {cell:?}"),
            })?;
            values.push(value);
        }
        if cells.len() == width + 1 {
            let species = cells[width].to_ascii_lowercase();
            if !KNOWN_SPECIES.iter().any(|s| species.contains(s)) {
                return Err(DbError::Csv {
                    line: line_no,
                    reason: format!("unrecognized species column {:?}", cells[width]),
                });
            }
        }
        rows.push(CsvRow {
            line: line_no,
            values,
        });
    }
    Ok(rows)
}

/// Parse measurement rows into a fresh table. Values are discretized by
/// round-half-up and clamped into the attribute range; row order is
/// preserved.
pub fn ingest_csv(raw: &str, schema: &[AttributeSchema]) -> Result<Table, DbError> {
    let rows = parse_csv(raw, schema.len())?;
    let capacity = rows.len().max(DEFAULT_CAPACITY);
    let mut table = Table::new("csv", schema.to_vec(), capacity)?;
    for row in rows {
        let record = Record::from_measurements(&row.values, schema, true).map_err(|e| match e {
            DbError::Csv { reason, .. } => DbError::Csv {
                line: row.line,
                reason,
            },
            DbError::Unclassifiable(v) => DbError::Csv {
                line: row.line,
                reason: format!("key value {v} has no species classification"),
            },
            other => other,
        })?;
        table.push_record(record)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microdb::SpeciesLabel;

    fn iris_schema() -> Vec<AttributeSchema> {
        vec![
            AttributeSchema::new("sepl", 4, 9, true).unwrap(),
            AttributeSchema::new("sepw", 4, 9, false).unwrap(),
            AttributeSchema::new("petl", 4, 9, false).unwrap(),
            AttributeSchema::new("petw", 4, 9, false).unwrap(),
        ]
    }

    #[test]
    fn ingest_discretizes_key_values() {
        let table = ingest_csv("5.1,3.5,1.4,0.2\n7.9,3.8,6.4,2.0\n", &iris_schema()).unwrap();
        assert_eq!(table.row_count(), 2);
        assert_eq!(table.record(0).unwrap().value(0), 5);
        assert_eq!(table.record(1).unwrap().value(0), 8);
        assert_eq!(
            table.record(1).unwrap().label(),
            SpeciesLabel::IrisVirginica
        );
    }

    #[test]
    fn ingest_reports_bad_cell_with_line_number() {
        let err = ingest_csv("abc,1,1,1\n", &iris_schema()).unwrap_err();
        match err {
            DbError::Csv { line, reason } => {
                assert_eq!(line, 1);
                assert!(reason.contains("abc"));
            }
            other => panic!("expected csv error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_reports_width_mismatch() {
        let err = ingest_csv("5.1,3.5,1.4\n", &iris_schema()).unwrap_err();
        assert_eq!(
            err,
            DbError::RowWidth {
                line: 1,
                expected: 4,
                found: 3
            }
        );
    }

    #[test]
    fn ingest_skips_comments_and_blank_lines() {
        let raw = "# header comment\n\n5.1,3.5,1.4,0.2\n   \n# trailing\n";
        let table = ingest_csv(raw, &iris_schema()).unwrap();
        assert_eq!(table.row_count(), 1);
    }

    #[test]
    fn ingest_accepts_species_column() {
        let table = ingest_csv("5.1,3.5,1.4,0.2,Iris-setosa\n", &iris_schema()).unwrap();
        assert_eq!(table.row_count(), 1);
        let err = ingest_csv("5.1,3.5,1.4,0.2,banana\n", &iris_schema()).unwrap_err();
        assert!(matches!(err, DbError::Csv { line: 1, .. }));
    }

    #[test]
    fn ingest_is_deterministic() {
        let raw = "5.1,3.5,1.4,0.2\n4.9,3.0,1.4,0.2\n6.3,2.9,5.6,1.8\n";
        let a = ingest_csv(raw, &iris_schema()).unwrap();
        let b = ingest_csv(raw, &iris_schema()).unwrap();
        let rows_a: Vec<_> = a.records().map(|r| r.values().to_vec()).collect();
        let rows_b: Vec<_> = b.records().map(|r| r.values().to_vec()).collect();
        assert_eq!(rows_a, rows_b);
    }

    #[test]
    fn parse_csv_keeps_line_numbers() {
        let rows = parse_csv("# comment\n5.1,3.5,1.4,0.2\n\n6.3,2.9,5.6,1.8\n", 4).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].line, 2);
        assert_eq!(rows[1].line, 4);
    }
}
