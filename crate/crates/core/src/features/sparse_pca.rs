//! Sparse PCA by deflation and truncated power iteration.
//!
//! Each component starts from the dense leading direction of `C` (the
//! covariance of the current, deflated, standardized data), found by plain
//! power iteration. It is then refined by alternating a power step
//! `w = C v` with soft-thresholding of `w` at `l1_penalty` and
//! renormalization. After a
//! component converges the covariance is deflated by projection,
//! `C <- (I - v v^T) C (I - v v^T)`, before the next one is fitted.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Extractor, FeatureError, FeatureMatrix};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsePcaConfig {
    pub k: usize,
    pub l1_penalty: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Minimum fraction of exactly-zero loadings required when `l1_penalty > 0`.
    pub sparsity_floor: f64,
}

impl Default for SparsePcaConfig {
    fn default() -> Self {
        SparsePcaConfig {
            k: 16,
            l1_penalty: 0.01,
            max_iter: 500,
            tol: 1e-8,
            seed: 0,
            sparsity_floor: 0.0,
        }
    }
}

/// Fitted loadings plus the standardization that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SparseComponents<T> {
    /// `k x n_cols`, one unit-norm (or all-zero, degenerate) row per component.
    pub loadings: Array2<T>,
    pub column_means: Array1<T>,
    pub column_scales: Array1<T>,
    pub k: usize,
    pub l1_penalty: T,
    pub explained_variance: Vec<T>,
    pub degenerate: Vec<bool>,
}

impl<T: Scalar> SparseComponents<T> {
    pub fn n_cols(&self) -> usize {
        self.loadings.ncols()
    }

    /// Fraction of loading entries that are exactly zero.
    pub fn zero_fraction(&self) -> f64 {
        let zeros = self.loadings.iter().filter(|v| v.is_zero()).count();
        zeros as f64 / self.loadings.len().max(1) as f64
    }

    pub fn standardize(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>, FeatureError> {
        if x.ncols() != self.n_cols() {
            return Err(FeatureError::DimensionMismatch {
                expected: self.n_cols(),
                found: x.ncols(),
            });
        }
        Ok((&x - &self.column_means) / &self.column_scales)
    }
}

impl<T: Scalar> Extractor<T> for SparseComponents<T> {
    fn n_inputs(&self) -> usize {
        self.n_cols()
    }
    fn n_outputs(&self) -> usize {
        self.k
    }
    fn transform(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>, FeatureError> {
        Ok(self.standardize(x)?.dot(&self.loadings.t()))
    }
}

/// Projects rows of `x` onto the fitted components.
pub fn transform<T: Scalar>(x: &FeatureMatrix<T>, components: &SparseComponents<T>) -> Result<Array2<T>, FeatureError> {
    Extractor::transform(components, x.view())
}

fn soft_threshold<T: Scalar>(w: &mut Array1<T>, lambda: T) {
    w.mapv_inplace(|v| {
        let m = v.abs() - lambda;
        if m > T::zero() {
            m.copysign(v)
        } else {
            T::zero()
        }
    });
}

fn norm<T: Scalar>(v: &Array1<T>) -> T {
    v.dot(v).sqrt()
}

pub fn fit_sparse_pca<T: Scalar>(
    x: &FeatureMatrix<T>,
    cfg: &SparsePcaConfig,
) -> Result<SparseComponents<T>, FeatureError> {
    let (n, p) = x.values.dim();
    let max_k = n.min(p);
    if cfg.k == 0 || cfg.k > max_k {
        return Err(FeatureError::KOutOfRange { k: cfg.k, max: max_k });
    }
    if cfg.max_iter == 0 {
        return Err(FeatureError::InvalidConfig("max_iter must be >= 1".into()));
    }
    if !(cfg.tol > 0.0) {
        return Err(FeatureError::InvalidConfig("tol must be > 0".into()));
    }
    if !(cfg.l1_penalty >= 0.0 && cfg.l1_penalty.is_finite()) {
        return Err(FeatureError::InvalidConfig("l1_penalty must be finite and >= 0".into()));
    }

    let nf = T::from_usize(n).unwrap();
    let column_means = x.values.mean_axis(Axis(0)).expect("n >= 1");
    let centered = &x.values - &column_means;
    let mut column_scales = Array1::from_elem(p, T::one());
    for j in 0..x.n_scaled {
        let col = centered.column(j);
        let sd = (col.dot(&col) / nf).sqrt();
        if sd > T::epsilon() {
            column_scales[j] = sd;
        }
    }
    let data = centered / &column_scales;
    let mut cov = data.t().dot(&data) / nf;

    let total_var: T = cov.diag().sum();
    let exhausted = T::epsilon().sqrt() * total_var;
    let lambda = T::of(cfg.l1_penalty);
    let tol = T::of(cfg.tol);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut loadings = Array2::zeros((cfg.k, p));
    let mut explained_variance = Vec::with_capacity(cfg.k);
    let mut degenerate = Vec::with_capacity(cfg.k);

    for comp in 0..cfg.k {
        let mut v: Array1<T> = (0..p)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::of(z)
            })
            .collect();
        let v0 = norm(&v);
        v /= v0;

        let mut dead = false;
        // dense warm start, then the thresholded iteration from there
        let passes: &[bool] = if lambda > T::zero() { &[false, true] } else { &[false] };
        for &sparse in passes {
            if dead {
                break;
            }
            for _ in 0..cfg.max_iter {
                let mut w = cov.dot(&v);
                let raw = norm(&w);
                if raw <= exhausted {
                    dead = true;
                    break;
                }
                if sparse {
                    soft_threshold(&mut w, lambda);
                }
                let wn = norm(&w);
                if wn.is_zero() {
                    return Err(FeatureError::ComponentCollapsed {
                        component: comp,
                        l1_penalty: cfg.l1_penalty,
                    });
                }
                w /= wn;
                let delta = norm(&(&w - &v));
                v = w;
                if delta < tol {
                    break;
                }
            }
        }

        if dead {
            explained_variance.push(T::zero());
            degenerate.push(true);
            continue;
        }

        // sign convention: largest-magnitude entry positive
        let pivot = v
            .iter()
            .enumerate()
            .fold(
                (0, T::zero()),
                |(bi, bv), (i, &x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) },
            )
            .0;
        if v[pivot] < T::zero() {
            v.mapv_inplace(|x| -x);
        }

        let cv = cov.dot(&v);
        let var = v.dot(&cv);
        explained_variance.push(var);
        degenerate.push(false);
        let col = |a: &Array1<T>| a.view().insert_axis(Axis(1)).to_owned();
        let row = |a: &Array1<T>| a.view().insert_axis(Axis(0)).to_owned();
        let outer_cv = col(&cv).dot(&row(&v));
        cov -= &outer_cv;
        cov -= &outer_cv.t();
        cov += &(col(&v).dot(&row(&v)) * var);
        loadings.row_mut(comp).assign(&v);
    }

    let fitted = SparseComponents {
        loadings,
        column_means,
        column_scales,
        k: cfg.k,
        l1_penalty: lambda,
        explained_variance,
        degenerate,
    };
    if cfg.l1_penalty > 0.0 && fitted.zero_fraction() < cfg.sparsity_floor {
        return Err(FeatureError::InsufficientSparsity {
            found: fitted.zero_fraction(),
            floor: cfg.sparsity_floor,
        });
    }
    Ok(fitted)
}
