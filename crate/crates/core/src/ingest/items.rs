use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{join, parse_field, parse_list, IngestError};
use crate::scalar::Scalar;
use crate::slate::{ActionSlate, SlateError, Step};

pub const NUM_CONTENT_FEATURES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord<T> {
    pub item_id: u32,
    pub content_features: [T; NUM_CONTENT_FEATURES],
    pub price: T,
    pub location: Step,
}

/// Items keyed by id, with the per-location eligibility sets.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemCatalog<T> {
    items: BTreeMap<u32, ItemRecord<T>>,
    by_location: [BTreeSet<u32>; 3],
}

impl<T> Default for ItemCatalog<T> {
    fn default() -> Self {
        ItemCatalog {
            items: BTreeMap::new(),
            by_location: Default::default(),
        }
    }
}

impl<T: Scalar> ItemCatalog<T> {
    /// Builds a catalog, rejecting duplicate ids and negative prices.
    pub fn from_items(records: impl IntoIterator<Item = ItemRecord<T>>) -> Result<Self, IngestError> {
        let mut cat = ItemCatalog::default();
        for (i, rec) in records.into_iter().enumerate() {
            cat.insert(i + 1, rec)?;
        }
        Ok(cat)
    }

    fn insert(&mut self, line: usize, rec: ItemRecord<T>) -> Result<(), IngestError> {
        if !(rec.price >= T::zero()) {
            return Err(IngestError::NegativePrice {
                line,
                price: rec.price.to_string(),
            });
        }
        if self.items.contains_key(&rec.item_id) {
            return Err(IngestError::DuplicateItem {
                line,
                item_id: rec.item_id,
            });
        }
        self.by_location[rec.location.index()].insert(rec.item_id);
        self.items.insert(rec.item_id, rec);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item_id: u32) -> Option<&ItemRecord<T>> {
        self.items.get(&item_id)
    }

    pub fn contains(&self, item_id: u32) -> bool {
        self.items.contains_key(&item_id)
    }

    pub fn price(&self, item_id: u32) -> Option<T> {
        self.items.get(&item_id).map(|r| r.price)
    }

    pub fn location(&self, item_id: u32) -> Option<Step> {
        self.items.get(&item_id).map(|r| r.location)
    }

    /// Items in ascending id order.
    pub fn items(&self) -> impl Iterator<Item = &ItemRecord<T>> {
        self.items.values()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.items.keys().copied()
    }

    pub fn eligible(&self, step: Step) -> &BTreeSet<u32> {
        &self.by_location[step.index()]
    }

    /// Checks that every item of `slate` exists and belongs to `step`.
    pub fn check_slate(&self, slate: &ActionSlate, step: Step) -> Result<(), SlateError> {
        for &item in slate.items() {
            let loc = self.location(item).ok_or(SlateError::UnknownItem(item))?;
            if loc != step {
                return Err(SlateError::Location {
                    item,
                    expected: step,
                    found: loc,
                });
            }
        }
        Ok(())
    }
}

/// Parses an item file. Line order does not matter.
pub fn parse_items<T: Scalar>(text: &str) -> Result<ItemCatalog<T>, IngestError> {
    let mut cat = ItemCatalog::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_ascii_whitespace().collect();
        if fields.len() != 4 {
            return Err(IngestError::WrongCount {
                line,
                field: "record",
                expected: 4,
                found: fields.len(),
            });
        }
        let item_id: u32 = parse_field(line, "item_id", fields[0])?;
        let feats: Vec<T> = parse_list(line, "content_features", fields[1], Some(NUM_CONTENT_FEATURES))?;
        let price: T = parse_field(line, "price", fields[2])?;
        let location = fields[3]
            .parse::<u8>()
            .ok()
            .and_then(Step::new)
            .ok_or_else(|| IngestError::BadLocation {
                line,
                value: fields[3].to_string(),
            })?;
        let mut content_features = [T::zero(); NUM_CONTENT_FEATURES];
        content_features.copy_from_slice(&feats);
        cat.insert(
            line,
            ItemRecord {
                item_id,
                content_features,
                price,
                location,
            },
        )?;
    }
    Ok(cat)
}

/// Writes the catalog in ascending id order.
pub fn serialize_items<T: Scalar>(catalog: &ItemCatalog<T>) -> String {
    let mut out = String::new();
    for it in catalog.items() {
        let _ = writeln!(
            out,
            "{} {} {} {}",
            it.item_id,
            join(it.content_features.iter()),
            it.price,
            it.location
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "1 0.1,0.2,0.3,0.4,0.5 10 1\n2 1,1,1,1,1 20.5 2\n3 0,0,0,0,-1 0 3\n";

    #[test]
    fn minimal_catalog() {
        let cat: ItemCatalog<f64> = parse_items(THREE).unwrap();
        assert_eq!(cat.len(), 3);
        for s in Step::ALL {
            assert_eq!(cat.eligible(s).len(), 1);
        }
        assert_eq!(cat.price(2), Some(20.5));
        assert_eq!(cat.location(3), Some(Step::THREE));
    }

    #[test]
    fn empty_file_is_empty_catalog() {
        let cat: ItemCatalog<f64> = parse_items("").unwrap();
        assert!(cat.is_empty());
        let cat: ItemCatalog<f64> = parse_items("\n  \n").unwrap();
        assert!(cat.is_empty());
    }

    #[test]
    fn line_order_is_irrelevant() {
        let rev: String = THREE.lines().rev().map(|l| format!("{l}\n")).collect();
        let a: ItemCatalog<f64> = parse_items(THREE).unwrap();
        let b: ItemCatalog<f64> = parse_items(&rev).unwrap();
        assert_eq!(a, b);
        assert_eq!(serialize_items(&b), THREE);
    }

    #[test]
    fn error_cases() {
        let err = parse_items::<f64>("1 0,0,0,0,0 1 1\n1 0,0,0,0,0 1 2\n").unwrap_err();
        assert_eq!(err, IngestError::DuplicateItem { line: 2, item_id: 1 });

        let err = parse_items::<f64>("1 0,0,0,0,0 1 4\n").unwrap_err();
        assert!(matches!(err, IngestError::BadLocation { line: 1, .. }));

        let err = parse_items::<f64>("1 0,0,0,0,0 -3 1\n").unwrap_err();
        assert!(matches!(err, IngestError::NegativePrice { line: 1, .. }));

        let err = parse_items::<f64>("1 0,0,0,0 1 1\n").unwrap_err();
        assert!(matches!(
            err,
            IngestError::WrongCount {
                line: 1,
                field: "content_features",
                expected: 5,
                found: 4
            }
        ));

        let err = parse_items::<f64>("\n1 0,0,x,0,0 1 1\n").unwrap_err();
        assert!(matches!(
            err,
            IngestError::Malformed {
                line: 2,
                field: "content_features",
                ..
            }
        ));

        let err = parse_items::<f64>("abc 0,0,0,0,0 1 1\n").unwrap_err();
        assert!(matches!(
            err,
            IngestError::Malformed {
                line: 1,
                field: "item_id",
                ..
            }
        ));
    }

    #[test]
    fn check_slate_reports_location() {
        let cat: ItemCatalog<f64> = parse_items(THREE).unwrap();
        let s = ActionSlate::new([1, 2, 3]).unwrap();
        assert!(matches!(
            cat.check_slate(&s, Step::ONE),
            Err(SlateError::Location { item: 2, .. })
        ));
    }
}
