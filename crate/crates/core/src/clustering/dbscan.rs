use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::{sq_dist, ClusterError, ClusterFit, ClusterModel};
use crate::scalar::Scalar;

/// Brute-force DBSCAN. A point's neighborhood includes itself; a point is
/// core when its neighborhood holds at least `min_pts` points. Clusters are
/// numbered in order of their lowest-index core point.
pub fn fit_dbscan<T: Scalar>(z: ArrayView2<'_, T>, eps: f64, min_pts: usize) -> Result<ClusterFit<T>, ClusterError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(ClusterError::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if min_pts == 0 {
        return Err(ClusterError::InvalidParameter("min_pts must be >= 1".into()));
    }
    let n = z.nrows();
    let eps2 = T::of(eps * eps);
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).filter(|&j| sq_dist(z.row(i), z.row(j)) <= eps2).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut n_clusters = 0;
    for start in 0..n {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        let c = n_clusters;
        n_clusters += 1;
        labels[start] = Some(c);
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            if !core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(c);
                    queue.push_back(q);
                }
            }
        }
    }
    if n_clusters == 0 {
        return Err(ClusterError::AllNoise { eps, min_pts });
    }

    let core_idx: Vec<usize> = (0..n).filter(|&i| core[i]).collect();
    let mut core_points = Array2::zeros((core_idx.len(), z.ncols()));
    for (r, &i) in core_idx.iter().enumerate() {
        core_points.row_mut(r).assign(&z.row(i));
    }
    let core_labels = core_idx.iter().map(|&i| labels[i].unwrap()).collect();

    Ok(ClusterFit {
        model: ClusterModel::Dbscan {
            eps: T::of(eps),
            min_pts,
            core_points,
            core_labels,
            n_clusters,
        },
        labels,
        objective_history: Vec::new(),
    })
}
