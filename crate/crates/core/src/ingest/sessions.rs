use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{join, parse_field, parse_list, IngestError, ItemCatalog};
use crate::scalar::Scalar;
use crate::slate::Step;

pub const NUM_PORTRAITS: usize = 10;
pub const SLATE_LEN: usize = 9;

/// One logged session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord<T> {
    pub user_id: u64,
    pub clicked_items: BTreeSet<u32>,
    pub portraits: [T; NUM_PORTRAITS],
    pub exposed_slate: [u32; SLATE_LEN],
    pub purchase_labels: [bool; SLATE_LEN],
    pub timestamp: i64,
}

impl<T: Scalar> SessionRecord<T> {
    /// The three exposed items shown at `step`.
    pub fn slate_at(&self, step: Step) -> [u32; 3] {
        let o = step.index() * 3;
        [
            self.exposed_slate[o],
            self.exposed_slate[o + 1],
            self.exposed_slate[o + 2],
        ]
    }

    pub fn labels_at(&self, step: Step) -> [bool; 3] {
        let o = step.index() * 3;
        [
            self.purchase_labels[o],
            self.purchase_labels[o + 1],
            self.purchase_labels[o + 2],
        ]
    }

    /// Items the user bought anywhere in the session.
    pub fn purchased(&self) -> impl Iterator<Item = u32> + '_ {
        self.exposed_slate
            .iter()
            .zip(self.purchase_labels.iter())
            .filter(|(_, &l)| l)
            .map(|(&i, _)| i)
    }

    pub fn user(&self) -> UserRecord<T> {
        UserRecord {
            user_id: self.user_id,
            clicked_items: self.clicked_items.clone(),
            portraits: self.portraits,
        }
    }
}

/// The state-bearing part of a session: what a recommendation is computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord<T> {
    pub user_id: u64,
    pub clicked_items: BTreeSet<u32>,
    pub portraits: [T; NUM_PORTRAITS],
}

fn parse_clicks<T: Scalar>(line: usize, s: &str, catalog: &ItemCatalog<T>) -> Result<BTreeSet<u32>, IngestError> {
    let clicks: Vec<u32> = parse_list(line, "clicked_items", s, None)?;
    if let Some(&item_id) = clicks.iter().find(|&&i| !catalog.contains(i)) {
        return Err(IngestError::UnknownItem { line, item_id });
    }
    Ok(clicks.into_iter().collect())
}

fn parse_portraits<T: Scalar>(line: usize, s: &str) -> Result<[T; NUM_PORTRAITS], IngestError> {
    let p: Vec<T> = parse_list(line, "portraits", s, Some(NUM_PORTRAITS))?;
    let mut out = [T::zero(); NUM_PORTRAITS];
    out.copy_from_slice(&p);
    Ok(out)
}

fn parse_session_line<T: Scalar>(
    line: usize,
    raw: &str,
    catalog: &ItemCatalog<T>,
) -> Result<SessionRecord<T>, IngestError> {
    let fields: Vec<&str> = raw.split_ascii_whitespace().collect();
    if fields.len() != 6 {
        return Err(IngestError::WrongCount {
            line,
            field: "record",
            expected: 6,
            found: fields.len(),
        });
    }
    let user_id: u64 = parse_field(line, "user_id", fields[0])?;
    let clicked_items = parse_clicks(line, fields[1], catalog)?;
    let portraits = parse_portraits(line, fields[2])?;
    let slate: Vec<u32> = parse_list(line, "exposed_slate", fields[3], Some(SLATE_LEN))?;
    let labels: Vec<u8> = parse_list(line, "purchase_labels", fields[4], Some(SLATE_LEN))?;
    let timestamp: i64 = parse_field(line, "timestamp", fields[5])?;

    let mut exposed_slate = [0u32; SLATE_LEN];
    for (p, &item_id) in slate.iter().enumerate() {
        let position = p + 1;
        let found = catalog
            .location(item_id)
            .ok_or(IngestError::UnknownItem { line, item_id })?;
        let expected = Step::of_position(position);
        if found != expected {
            return Err(IngestError::LocationMismatch {
                line,
                position,
                item_id,
                expected: expected.get(),
                found: found.get(),
            });
        }
        exposed_slate[p] = item_id;
    }
    let mut purchase_labels = [false; SLATE_LEN];
    for (p, &l) in labels.iter().enumerate() {
        purchase_labels[p] = match l {
            0 => false,
            1 => true,
            other => {
                return Err(IngestError::Malformed {
                    line,
                    field: "purchase_labels",
                    reason: format!("label {other} at position {} is not 0 or 1", p + 1),
                })
            }
        };
    }
    Ok(SessionRecord {
        user_id,
        clicked_items,
        portraits,
        exposed_slate,
        purchase_labels,
        timestamp,
    })
}

/// Parses a session file against an already-parsed catalog, keeping file order.
pub fn parse_sessions<T: Scalar>(text: &str, catalog: &ItemCatalog<T>) -> Result<Vec<SessionRecord<T>>, IngestError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_session_line(i + 1, l.trim(), catalog))
        .collect()
}

/// Parses one line of a user file: the first three session fields
/// (`<user_id> <clicks> <portraits>`); any trailing fields are ignored, so a
/// session file is also a valid user file.
pub fn parse_user_line<T: Scalar>(
    line: usize,
    raw: &str,
    catalog: &ItemCatalog<T>,
) -> Result<UserRecord<T>, IngestError> {
    let fields: Vec<&str> = raw.split_ascii_whitespace().collect();
    if fields.len() < 3 {
        return Err(IngestError::WrongCount {
            line,
            field: "record",
            expected: 3,
            found: fields.len(),
        });
    }
    Ok(UserRecord {
        user_id: parse_field(line, "user_id", fields[0])?,
        clicked_items: parse_clicks(line, fields[1], catalog)?,
        portraits: parse_portraits(line, fields[2])?,
    })
}

pub fn session_line<T: Scalar>(s: &SessionRecord<T>) -> String {
    format!(
        "{} {} {} {} {} {}",
        s.user_id,
        join(s.clicked_items.iter()),
        join(s.portraits.iter()),
        join(s.exposed_slate.iter()),
        join(s.purchase_labels.iter().map(|&l| u8::from(l))),
        s.timestamp
    )
}

pub fn serialize_sessions<T: Scalar>(sessions: &[SessionRecord<T>]) -> String {
    let mut out = String::with_capacity(sessions.len() * 128);
    for s in sessions {
        let _ = writeln!(out, "{}", session_line(s));
    }
    out
}
