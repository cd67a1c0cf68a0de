//! Raw user state (portraits + one-hot click history) and its compression.

mod sparse_pca;

pub use sparse_pca::{fit_sparse_pca, transform, SparseComponents, SparsePcaConfig};

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::ingest::{ItemCatalog, SessionRecord, UserRecord, NUM_PORTRAITS};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("k = {k} outside 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("invalid sparse PCA config: {0}")]
    InvalidConfig(String),
    #[error("component {component} collapsed to zero after thresholding at l1_penalty = {l1_penalty}")]
    ComponentCollapsed { component: usize, l1_penalty: f64 },
    #[error("loadings are {found:.3} sparse, below the configured floor {floor:.3}")]
    InsufficientSparsity { found: f64, floor: f64 },
    #[error("expected {expected} feature columns, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Dense design matrix. The first `n_scaled` columns are z-scored during
/// standardization; the remaining ones are only centered.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<T> {
    pub values: Array2<T>,
    pub n_scaled: usize,
    /// Item id of each click column, ascending. Empty for generic data.
    pub item_ids: Vec<u32>,
}

impl<T: Scalar> FeatureMatrix<T> {
    /// Wraps arbitrary data (no click columns).
    pub fn dense(values: Array2<T>, n_scaled: usize) -> Self {
        assert!(n_scaled <= values.ncols());
        FeatureMatrix {
            values,
            n_scaled,
            item_ids: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }
}

/// Anything that carries a user state: logged sessions and bare user records.
pub trait UserState<T> {
    fn portraits(&self) -> &[T; NUM_PORTRAITS];
    fn clicked_items(&self) -> &BTreeSet<u32>;
}

impl<T> UserState<T> for SessionRecord<T> {
    fn portraits(&self) -> &[T; NUM_PORTRAITS] {
        &self.portraits
    }
    fn clicked_items(&self) -> &BTreeSet<u32> {
        &self.clicked_items
    }
}

impl<T> UserState<T> for UserRecord<T> {
    fn portraits(&self) -> &[T; NUM_PORTRAITS] {
        &self.portraits
    }
    fn clicked_items(&self) -> &BTreeSet<u32> {
        &self.clicked_items
    }
}

/// Row `i` is `(portraits_i, click indicators by ascending item id)`.
pub fn build_raw_features<T: Scalar, U: UserState<T>>(users: &[U], catalog: &ItemCatalog<T>) -> FeatureMatrix<T> {
    let item_ids: Vec<u32> = catalog.item_ids().collect();
    let n_cols = NUM_PORTRAITS + item_ids.len();
    let mut values = Array2::zeros((users.len(), n_cols));
    for (mut row, u) in values.rows_mut().into_iter().zip(users) {
        for (j, &p) in u.portraits().iter().enumerate() {
            row[j] = p;
        }
        for &item in u.clicked_items() {
            if let Ok(col) = item_ids.binary_search(&item) {
                row[NUM_PORTRAITS + col] = T::one();
            }
        }
    }
    FeatureMatrix {
        values,
        n_scaled: NUM_PORTRAITS,
        item_ids,
    }
}

/// Fit/transform contract for state compressors.
pub trait Extractor<T: Scalar> {
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn transform(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>, FeatureError>;
}
