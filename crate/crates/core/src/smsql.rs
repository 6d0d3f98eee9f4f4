//! The SMS-SQL mini-language.
//!
//! Grammar: `query := token+`, `token := ("db"|"tb"|"at"|"va") ident`,
//! `ident := [a-z0-9]+`. Exactly one token per prefix, whitespace-separated,
//! at most 160 characters total. Prefix matching is case-insensitive; token
//! order is irrelevant.
//!
//! `decode_fixed_offset` keeps the legacy fixed-character decoding alive so
//! tests can prove the token parser agrees with it on queries of the
//! original shape (`db#### tb#### at#### va<d>`).

use thiserror::Error;

use crate::microdb::{ReportMode, SpeciesLabel};

/// Hard cap on query body length, in characters.
pub const MAX_BODY_CHARS: usize = 160;

const PREFIXES: [&str; 4] = ["db", "tb", "at", "va"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("query body is {0} characters, limit {MAX_BODY_CHARS}")]
    TooLong(usize),
    #[error("incomplete query: missing {0}")]
    Incomplete(String),
    #[error("duplicate {0} token")]
    Duplicate(&'static str),
    #[error("unrecognized token {0:?}")]
    UnknownToken(String),
    #[error("invalid identifier in {0:?}: expected lowercase letters and digits")]
    BadIdent(String),
    #[error("invalid value in {0:?}: expected an unsigned decimal number")]
    BadValue(String),
    #[error("body is {0} characters, fixed-offset decoding needs at least 24")]
    TooShort(usize),
    #[error("character 23 {0:?} is not a digit")]
    NonDigitValue(char),
}

/// A decoded SMS-SQL query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedQuery {
    pub database: String,
    pub table: String,
    pub attribute: String,
    pub target: u32,
    /// Resolved against the catalog when the query is bound; `None` straight
    /// out of the parser.
    pub report_mode: Option<ReportMode>,
}

/// Parse an SMS body into a query.
pub fn parse_sms(body: &str) -> Result<ParsedQuery, QueryError> {
    let chars = body.chars().count();
    if chars > MAX_BODY_CHARS {
        return Err(QueryError::TooLong(chars));
    }

    let mut database: Option<String> = None;
    let mut table: Option<String> = None;
    let mut attribute: Option<String> = None;
    let mut value: Option<String> = None;

    for token in body.split_whitespace() {
        let Some(prefix) = PREFIXES.iter().find(|p| {
            token.len() >= 2 && token.is_char_boundary(2) && token[..2].eq_ignore_ascii_case(p)
        }) else {
            return Err(QueryError::UnknownToken(token.to_string()));
        };
        let ident = &token[2..];
        if ident.is_empty()
            || !ident
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
        {
            return Err(QueryError::BadIdent(token.to_string()));
        }
        let slot = match *prefix {
            "db" => &mut database,
            "tb" => &mut table,
            "at" => &mut attribute,
            _ => &mut value,
        };
        if slot.is_some() {
            return Err(QueryError::Duplicate(prefix));
        }
        *slot = Some(ident.to_string());
    }

    let missing: Vec<&str> = [
        ("db", &database),
        ("tb", &table),
        ("at", &attribute),
        ("va", &value),
    ]
    .iter()
    .filter(|(_, slot)| slot.is_none())
    .map(|(name, _)| *name)
    .collect();
    if !missing.is_empty() {
        return Err(QueryError::Incomplete(missing.join(", ")));
    }

    let raw_value = value.expect("checked above");
    let target: u32 = raw_value
        .parse()
        .map_err(|_| QueryError::BadValue(format!("va{raw_value}")))?;

    Ok(ParsedQuery {
        database: database.expect("checked above"),
        table: table.expect("checked above"),
        attribute: attribute.expect("checked above"),
        target,
        report_mode: None,
    })
}

/// One normalized SQL rendering of a query, for logs and documentation.
pub fn to_canonical_sql(q: &ParsedQuery) -> String {
    format!(
        "SELECT {attr} FROM {db}.{table} WHERE {attr} = {target}",
        attr = q.attribute,
        db = q.database,
        table = q.table,
        target = q.target
    )
}

/// Result of the legacy fixed-offset decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedOffsetDecode {
    /// Numeric value of character 23.
    pub target: u32,
    /// Character codes of positions 0 and 2, each minus 48.
    pub mode_char_codes: (i32, i32),
}

/// Decode a query by fixed character offsets, the way the original firmware
/// did: the target digit lives at position 23 and the report-mode dispatch
/// reads positions 0 and 2.
pub fn decode_fixed_offset(body: &str) -> Result<FixedOffsetDecode, QueryError> {
    let chars: Vec<char> = body.chars().collect();
    if chars.len() < 24 {
        return Err(QueryError::TooShort(chars.len()));
    }
    let target = chars[23]
        .to_digit(10)
        .ok_or(QueryError::NonDigitValue(chars[23]))?;
    Ok(FixedOffsetDecode {
        target,
        mode_char_codes: (chars[0] as i32 - 48, chars[2] as i32 - 48),
    })
}

/// Classified result of a search, ready for rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportOutcome {
    Found(SpeciesLabel),
    NearestApproximate(SpeciesLabel, u32),
    NotFound,
}

impl ReportOutcome {
    pub fn species(&self) -> Option<SpeciesLabel> {
        match self {
            ReportOutcome::Found(s) | ReportOutcome::NearestApproximate(s, _) => Some(*s),
            ReportOutcome::NotFound => None,
        }
    }
}

/// A classified outcome together with its rendered report lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryReport {
    pub outcome: ReportOutcome,
    pub rendered: Vec<String>,
}

impl QueryReport {
    pub fn new(outcome: ReportOutcome, mode: ReportMode) -> Self {
        Self {
            rendered: format_report(&outcome, mode),
            outcome,
        }
    }
}

/// Render an outcome as report lines, one SMS per line.
///
/// Verbose found: `"Species found is:"` then the long species name, with a
/// `(nearest, distance=<d>)` line appended for approximate matches. Terse:
/// just the short species code.
pub fn format_report(outcome: &ReportOutcome, mode: ReportMode) -> Vec<String> {
    match (outcome, mode) {
        (ReportOutcome::Found(species), ReportMode::Verbose) => vec![
            "Species found is:".to_string(),
            species.long_name().to_string(),
        ],
        (ReportOutcome::Found(species), ReportMode::Terse) => {
            vec![species.short_code().to_string()]
        }
        (ReportOutcome::NearestApproximate(species, distance), ReportMode::Verbose) => vec![
            "Species found is:".to_string(),
            species.long_name().to_string(),
            format!("(nearest, distance={distance})"),
        ],
        (ReportOutcome::NearestApproximate(species, _), ReportMode::Terse) => {
            vec![species.short_code().to_string()]
        }
        (ReportOutcome::NotFound, _) => vec!["No species found".to_string()],
    }
}
