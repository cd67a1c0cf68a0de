//! Steps (slate rows) and three-item actions.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the three recommendation rows. Doubles as an item's location:
/// an item with location `k` may only be shown at step `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Step(u8);

impl Step {
    pub const ONE: Step = Step(1);
    pub const TWO: Step = Step(2);
    pub const THREE: Step = Step(3);
    pub const ALL: [Step; 3] = [Step::ONE, Step::TWO, Step::THREE];

    pub fn new(v: u8) -> Option<Step> {
        (1..=3).contains(&v).then_some(Step(v))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based index, handy for `[_; 3]` arrays.
    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }

    pub fn from_index(i: usize) -> Step {
        assert!(i < 3, "step index {i} out of range");
        Step(i as u8 + 1)
    }

    pub fn next(self) -> Option<Step> {
        Step::new(self.0 + 1)
    }

    /// Step owning 1-based slate position `p` (positions 1..=9).
    pub fn of_position(p: usize) -> Step {
        assert!((1..=9).contains(&p), "slate position {p} out of range");
        Step(p.div_ceil(3) as u8)
    }
}

impl TryFrom<u8> for Step {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Step::new(v).ok_or_else(|| format!("step {v} outside 1..=3"))
    }
}

impl From<Step> for u8 {
    fn from(s: Step) -> u8 {
        s.0
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SlateError {
    #[error("slate contains item {0} more than once")]
    Duplicate(u32),
    #[error("item {item} has location {found}, expected {expected}")]
    Location { item: u32, expected: Step, found: Step },
    #[error("item {0} is not in the catalog")]
    UnknownItem(u32),
}

/// Three distinct item ids, kept sorted so equal sets compare equal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 3]", into = "[u32; 3]")]
pub struct ActionSlate([u32; 3]);

impl ActionSlate {
    pub fn new(mut items: [u32; 3]) -> Result<Self, SlateError> {
        items.sort_unstable();
        if items[0] == items[1] || items[1] == items[2] {
            return Err(SlateError::Duplicate(items[1]));
        }
        Ok(ActionSlate(items))
    }

    pub fn items(&self) -> &[u32; 3] {
        &self.0
    }
}

impl TryFrom<[u32; 3]> for ActionSlate {
    type Error = SlateError;
    fn try_from(items: [u32; 3]) -> Result<Self, Self::Error> {
        ActionSlate::new(items)
    }
}

impl From<ActionSlate> for [u32; 3] {
    fn from(s: ActionSlate) -> [u32; 3] {
        s.0
    }
}

impl fmt::Display for ActionSlate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.0[0], self.0[1], self.0[2])
    }
}
