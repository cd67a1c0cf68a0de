//! Item and session log formats, MDP transitions and the synthetic corpus
//! generator.
//!
//! Both text formats are one record per line with top-level fields separated
//! by a single space and list fields separated by commas:
//!
//! ```text
//! items:    <item_id> <f1>,<f2>,<f3>,<f4>,<f5> <price> <location>
//! sessions: <user_id> <click1,click2,...> <p1,...,p10> <i1,...,i9> <l1,...,l9> <timestamp>
//! ```
//!
//! An empty click history is written as `-`. Labels are `0` or `1`. Blank
//! lines are ignored.

mod items;
mod sessions;
mod synthetic;
mod transitions;

pub use items::{parse_items, serialize_items, ItemCatalog, ItemRecord, NUM_CONTENT_FEATURES};
pub use sessions::{
    parse_sessions, parse_user_line, serialize_sessions, session_line, SessionRecord, UserRecord, NUM_PORTRAITS,
    SLATE_LEN,
};
pub use synthetic::{
    generate_synthetic, sample_behavior_slates, GroundTruth, ItemTruth, SyntheticConfig, SyntheticCorpus, TruthRecord,
    UserTruth,
};
pub use transitions::{sessions_to_transitions, NextStep, Transition};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("line {line}: malformed field `{field}`: {reason}")]
    Malformed {
        line: usize,
        field: &'static str,
        reason: String,
    },
    #[error("line {line}: field `{field}` has {found} entries, expected {expected}")]
    WrongCount {
        line: usize,
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate item id {item_id}")]
    DuplicateItem { line: usize, item_id: u32 },
    #[error("line {line}: location {value} outside {{1,2,3}}")]
    BadLocation { line: usize, value: String },
    #[error("line {line}: negative price {price}")]
    NegativePrice { line: usize, price: String },
    #[error("line {line}: unknown item id {item_id}")]
    UnknownItem { line: usize, item_id: u32 },
    #[error(
        "line {line}: slate position {position} holds item {item_id} with location {found}, row requires {expected}"
    )]
    LocationMismatch {
        line: usize,
        position: usize,
        item_id: u32,
        expected: u8,
        found: u8,
    },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

/// Splits a comma list; `-` stands for the empty list.
fn split_list(s: &str) -> impl Iterator<Item = &str> {
    let s = if s == "-" { "" } else { s };
    s.split(',').filter(|t| !t.is_empty())
}

fn parse_field<V: std::str::FromStr>(line: usize, field: &'static str, s: &str) -> Result<V, IngestError>
where
    V::Err: std::fmt::Display,
{
    s.parse::<V>().map_err(|e| IngestError::Malformed {
        line,
        field,
        reason: format!("`{s}`: {e}"),
    })
}

fn parse_list<V: std::str::FromStr>(
    line: usize,
    field: &'static str,
    s: &str,
    expected: Option<usize>,
) -> Result<Vec<V>, IngestError>
where
    V::Err: std::fmt::Display,
{
    let out = split_list(s)
        .map(|t| parse_field(line, field, t))
        .collect::<Result<Vec<V>, _>>()?;
    match expected {
        Some(n) if out.len() != n => Err(IngestError::WrongCount {
            line,
            field,
            expected: n,
            found: out.len(),
        }),
        _ => Ok(out),
    }
}

fn join<V: std::fmt::Display>(vals: impl IntoIterator<Item = V>) -> String {
    let s = vals.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    if s.is_empty() {
        "-".to_string()
    } else {
        s
    }
}
