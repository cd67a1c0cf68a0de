//! User clustering over the compressed state space. Each resulting group
//! owns one Q-table and receives one slate policy.

mod dbscan;
mod kmeans;

pub use dbscan::fit_dbscan;
pub use kmeans::fit_kmeans;

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("need at least {k} distinct rows, found {distinct}")]
    TooFewDistinctRows { k: usize, distinct: usize },
    #[error("invalid clustering parameter: {0}")]
    InvalidParameter(String),
    #[error("every point is noise (eps = {eps}, min_pts = {min_pts})")]
    AllNoise { eps: f64, min_pts: usize },
    #[error("expected a {expected}-dimensional vector, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Clustering method and its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ClusterSpec {
    Kmeans { k: usize },
    Dbscan { eps: f64, min_pts: usize },
}

impl std::fmt::Display for ClusterSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClusterSpec::Kmeans { k } => write!(f, "kmeans(k={k})"),
            ClusterSpec::Dbscan { eps, min_pts } => write!(f, "dbscan(eps={eps},min_pts={min_pts})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", bound = "T: Scalar")]
pub enum ClusterModel<T> {
    Kmeans {
        centroids: Array2<T>,
    },
    Dbscan {
        eps: T,
        min_pts: usize,
        core_points: Array2<T>,
        core_labels: Vec<usize>,
        n_clusters: usize,
    },
}

/// A fitted model plus what fitting observed on the training rows.
#[derive(Clone, Debug)]
pub struct ClusterFit<T> {
    pub model: ClusterModel<T>,
    /// Training labels; `None` marks DBSCAN noise.
    pub labels: Vec<Option<usize>>,
    /// Within-cluster sum of squares after each assignment step (k-means only).
    pub objective_history: Vec<T>,
}

impl<T: Scalar> ClusterFit<T> {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

pub(crate) fn sq_dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Index of the nearest row of `points`; ties go to the lowest index.
pub(crate) fn nearest<T: Scalar>(points: ArrayView2<'_, T>, z: ArrayView1<'_, T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (i, p) in points.rows().into_iter().enumerate() {
        let d = sq_dist(p, z);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

impl<T: Scalar> ClusterModel<T> {
    pub fn dim(&self) -> usize {
        match self {
            ClusterModel::Kmeans { centroids } => centroids.ncols(),
            ClusterModel::Dbscan { core_points, .. } => core_points.ncols(),
        }
    }

    pub fn n_clusters(&self) -> usize {
        match self {
            ClusterModel::Kmeans { centroids } => centroids.nrows(),
            ClusterModel::Dbscan { n_clusters, .. } => *n_clusters,
        }
    }

    /// Total assignment: nearest centroid for k-means, cluster of the nearest
    /// core point for DBSCAN (regardless of `eps`).
    pub fn assign(&self, z: ArrayView1<'_, T>) -> Result<usize, ClusterError> {
        if z.len() != self.dim() {
            return Err(ClusterError::DimensionMismatch {
                expected: self.dim(),
                found: z.len(),
            });
        }
        Ok(match self {
            ClusterModel::Kmeans { centroids } => nearest(centroids.view(), z).0,
            ClusterModel::Dbscan {
                core_points,
                core_labels,
                ..
            } => core_labels[nearest(core_points.view(), z).0],
        })
    }

    /// One representative point per cluster.
    fn representatives(&self) -> Array2<T> {
        match self {
            ClusterModel::Kmeans { centroids } => centroids.clone(),
            ClusterModel::Dbscan {
                core_points,
                core_labels,
                n_clusters,
                ..
            } => {
                let mut reps = Array2::zeros((*n_clusters, core_points.ncols()));
                let mut counts = vec![0usize; *n_clusters];
                for (p, &l) in core_points.rows().into_iter().zip(core_labels) {
                    let mut r = reps.row_mut(l);
                    r += &p;
                    counts[l] += 1;
                }
                for (mut r, c) in reps.rows_mut().into_iter().zip(counts) {
                    r /= T::from_usize(c.max(1)).unwrap();
                }
                reps
            }
        }
    }
}

/// A cluster model whose raw clusters may have been merged into groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GroupModel<T> {
    pub model: ClusterModel<T>,
    /// Raw cluster id -> group id.
    pub remap: Vec<usize>,
    pub n_groups: usize,
}

impl<T: Scalar> GroupModel<T> {
    pub fn identity(model: ClusterModel<T>) -> Self {
        let n = model.n_clusters();
        GroupModel {
            model,
            remap: (0..n).collect(),
            n_groups: n,
        }
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn assign(&self, z: ArrayView1<'_, T>) -> Result<usize, ClusterError> {
        Ok(self.remap[self.model.assign(z)?])
    }

    pub fn assign_rows(&self, z: ArrayView2<'_, T>) -> Result<Vec<usize>, ClusterError> {
        z.rows().into_iter().map(|r| self.assign(r)).collect()
    }

    /// Merges every group whose support (sum of `weights` over its rows)
    /// is below `min_support` into the group with the nearest mean,
    /// smallest group first, until all groups are supported or one remains.
    pub fn merge_small(
        model: ClusterModel<T>,
        z: ArrayView2<'_, T>,
        weights: &[usize],
        min_support: usize,
    ) -> Result<Self, ClusterError> {
        assert_eq!(z.nrows(), weights.len());
        let raw = z
            .rows()
            .into_iter()
            .map(|r| model.assign(r))
            .collect::<Result<Vec<_>, _>>()?;
        let n_raw = model.n_clusters();
        let reps = model.representatives();

        // group id == smallest raw id it contains
        let mut owner: Vec<usize> = (0..n_raw).collect();
        let mut support = vec![0usize; n_raw];
        let mut sums = Array2::<T>::zeros((n_raw, model.dim()));
        let mut rows = vec![0usize; n_raw];
        for ((r, &c), &w) in z.rows().into_iter().zip(&raw).zip(weights) {
            support[c] += w;
            rows[c] += 1;
            let mut s = sums.row_mut(c);
            s += &r;
        }
        let mean_of = |g: usize, sums: &Array2<T>, rows: &[usize]| -> Array1<T> {
            if rows[g] == 0 {
                reps.row(g).to_owned()
            } else {
                &sums.row(g) / T::from_usize(rows[g]).unwrap()
            }
        };

        loop {
            let alive: Vec<usize> = (0..n_raw).filter(|&g| owner[g] == g).collect();
            if alive.len() <= 1 {
                break;
            }
            let Some(&small) = alive
                .iter()
                .filter(|&&g| support[g] < min_support)
                .min_by_key(|&&g| (support[g], g))
            else {
                break;
            };
            let here = mean_of(small, &sums, &rows);
            let target = alive
                .iter()
                .copied()
                .filter(|&g| g != small)
                .map(|g| (g, sq_dist(here.view(), mean_of(g, &sums, &rows).view())))
                .fold(
                    (usize::MAX, T::infinity()),
                    |best, (g, d)| if d < best.1 { (g, d) } else { best },
                )
                .0;
            let (keep, gone) = (small.min(target), small.max(target));
            for o in owner.iter_mut() {
                if *o == gone {
                    *o = keep;
                }
            }
            support[keep] += support[gone];
            rows[keep] += rows[gone];
            let moved = sums.row(gone).to_owned();
            let mut s = sums.row_mut(keep);
            s += &moved;
        }

        let mut compact: HashMap<usize, usize> = HashMap::new();
        let mut remap = Vec::with_capacity(n_raw);
        for &o in &owner {
            let next = compact.len();
            remap.push(*compact.entry(o).or_insert(next));
        }
        let n_groups = compact.len();
        Ok(GroupModel { model, remap, n_groups })
    }
}

/// Chance-corrected agreement between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let choose2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ra: HashMap<usize, usize> = HashMap::new();
    let mut rb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = ra.values().map(|&c| choose2(c)).sum();
    let sb: f64 = rb.values().map(|&c| choose2(c)).sum();
    let expected = sa * sb / choose2(n);
    let max = (sa + sb) / 2.0;
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
