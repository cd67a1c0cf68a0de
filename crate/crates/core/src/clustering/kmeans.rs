use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{nearest, sq_dist, ClusterError, ClusterFit, ClusterModel};
use crate::scalar::Scalar;

fn distinct_rows<T: Scalar>(z: ArrayView2<'_, T>, cap: usize) -> usize {
    let mut seen = HashSet::new();
    for r in z.rows() {
        // +0.0 and -0.0 are the same point
        let key: Vec<u64> = r.iter().map(|&v| (v + T::zero()).to_bits64()).collect();
        seen.insert(key);
        if seen.len() >= cap {
            break;
        }
    }
    seen.len()
}

fn assign_all<T: Scalar>(z: ArrayView2<'_, T>, centroids: &Array2<T>) -> Vec<(usize, T)> {
    let c = centroids.view();
    // per-row work is independent, so the parallel result is order-free
    (0..z.nrows()).into_par_iter().map(|i| nearest(c, z.row(i))).collect()
}

fn plus_plus<T: Scalar>(z: ArrayView2<'_, T>, k: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
    let n = z.nrows();
    let mut centroids = Array2::zeros((k, z.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&z.row(first));
    let mut d2: Vec<f64> = z
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, z.row(first)).as_f64())
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let mut x = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            pick = Some(i);
            if x < d {
                break;
            }
            x -= d;
        }
        let pick = pick.expect("distinct rows guarantee a positive distance");
        centroids.row_mut(c).assign(&z.row(pick));
        for (i, r) in z.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, z.row(pick)).as_f64());
        }
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations until the assignment is
/// stable or `max_iter` updates have run. Empty clusters are re-seeded at
/// the point farthest from its own centroid.
pub fn fit_kmeans<T: Scalar>(
    z: ArrayView2<'_, T>,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterFit<T>, ClusterError> {
    if k == 0 {
        return Err(ClusterError::InvalidParameter("k must be >= 1".into()));
    }
    if max_iter == 0 {
        return Err(ClusterError::InvalidParameter("max_iter must be >= 1".into()));
    }
    let distinct = distinct_rows(z, k);
    if distinct < k {
        return Err(ClusterError::TooFewDistinctRows { k, distinct });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(z, k, &mut rng);
    let mut assigned = assign_all(z, &centroids);
    let wcss = |a: &[(usize, T)]| a.iter().fold(T::zero(), |s, &(_, d)| s + d);
    let mut history = vec![wcss(&assigned)];

    for _ in 0..max_iter {
        let mut sums = Array2::<T>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (r, &(c, _)) in z.rows().into_iter().zip(&assigned) {
            let mut s = sums.row_mut(c);
            s += &r;
            counts[c] += 1;
        }
        let mut taken = HashSet::new();
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / T::from_usize(counts[c]).unwrap();
                centroids.row_mut(c).assign(&mean);
            } else {
                let far = assigned
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .fold(
                        (0, T::neg_infinity()),
                        |b, (i, &(_, d))| if d > b.1 { (i, d) } else { b },
                    )
                    .0;
                taken.insert(far);
                centroids.row_mut(c).assign(&z.row(far));
            }
        }
        let next = assign_all(z, &centroids);
        let changed = next.iter().zip(&assigned).any(|(a, b)| a.0 != b.0);
        assigned = next;
        history.push(wcss(&assigned));
        if !changed {
            break;
        }
    }

    Ok(ClusterFit {
        model: ClusterModel::Kmeans { centroids },
        labels: assigned.into_iter().map(|(c, _)| Some(c)).collect(),
        objective_history: history,
    })
}
