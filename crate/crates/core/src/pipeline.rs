//! End-to-end fit: raw features, sparse PCA, clustering, Q-learning, policy.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{fit_dbscan, fit_kmeans, ClusterError, ClusterModel, ClusterSpec, GroupModel};
use crate::features::{
    build_raw_features, fit_sparse_pca, transform, FeatureError, SparseComponents, SparsePcaConfig, UserState,
};
use crate::ingest::{sessions_to_transitions, ItemCatalog, SessionRecord};
use crate::metric::holdout_indices;
use crate::qlearning::{train, Cell, ClusterState, PolicyTable, QError, QTableBank, TrainConfig, TrainSummary};
use crate::scalar::Scalar;
use crate::slate::{ActionSlate, Step};

pub const KMEANS_MAX_ITER: usize = 100;
/// k-means is run from this many seeds; the lowest final objective wins.
pub const KMEANS_RESTARTS: u64 = 8;
/// DBSCAN is fitted on at most this many rows; the rest are assigned.
pub const DBSCAN_SAMPLE: usize = 5000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("feature stage failed: {0}")]
    Features(#[from] FeatureError),
    #[error("clustering stage failed: {0}")]
    Clustering(#[from] ClusterError),
    #[error("q-learning stage failed: {0}")]
    QLearning(#[from] QError),
    #[error("no training sessions")]
    NoSessions,
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Features(_) | PipelineError::NoSessions => "features",
            PipelineError::Clustering(_) => "clustering",
            PipelineError::QLearning(_) => "qlearning",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub k_features: usize,
    pub l1_penalty: f64,
    pub cluster: ClusterSpec,
    /// Clusters with fewer logged transitions are merged into a neighbor.
    pub min_cluster_support: usize,
    pub train: TrainConfig,
    /// Logged transitions a cell needs to be eligible for the policy.
    pub min_visits: u64,
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            k_features: 16,
            l1_penalty: 0.01,
            cluster: ClusterSpec::Kmeans { k: 8 },
            min_cluster_support: 500,
            train: TrainConfig::default(),
            min_visits: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub features: Duration,
    pub clustering: Duration,
    pub qlearning: Duration,
    pub policy: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.features + self.clustering + self.qlearning + self.policy
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub n_sessions: usize,
    /// Components actually fitted: at most `min(rows, columns)`, fewer if
    /// the penalty collapsed a later component.
    pub k_features: usize,
    pub raw_clusters: usize,
    pub n_groups: usize,
    /// DBSCAN noise points in the fitted sample.
    pub noise: usize,
    pub train: TrainSummary,
    pub timings: StageTimings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FittedPipeline<T> {
    pub components: SparseComponents<T>,
    pub groups: GroupModel<T>,
    pub bank: QTableBank<T>,
    pub policy: PolicyTable,
}

fn select_rows<T: Scalar>(z: &Array2<T>, n: usize, seed: u64) -> Array2<T> {
    if z.nrows() <= n {
        return z.clone();
    }
    let (mut keep, _) = holdout_indices(z.nrows(), n as f64 / z.nrows() as f64, seed).expect("2 <= n < rows");
    keep.sort_unstable();
    z.select(Axis(0), &keep)
}

/// A step no training session reached has no Q-values anywhere. Its
/// most often exposed logged slate is stored at zero in cluster 0 so the
/// global fallback of the policy still finds an observed slate.
fn cover_empty_steps<T: Scalar>(bank: &mut QTableBank<T>, sessions: &[SessionRecord<T>]) {
    for step in Step::ALL {
        let covered = (0..bank.n_clusters()).any(|c| {
            bank.table(ClusterState { cluster_id: c, step })
                .is_ok_and(|t| !t.is_empty())
        });
        if covered {
            continue;
        }
        let mut counts: BTreeMap<ActionSlate, usize> = BTreeMap::new();
        for s in sessions {
            if let Ok(a) = ActionSlate::new(s.slate_at(step)) {
                *counts.entry(a).or_default() += 1;
            }
        }
        let top = counts
            .iter()
            .fold(None, |best: Option<(ActionSlate, usize)>, (a, &n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((*a, n)),
            });
        if let Some((a, _)) = top {
            let state = ClusterState { cluster_id: 0, step };
            bank.insert(state, a, Cell::default()).expect("bank has cluster 0");
        }
    }
}

/// Fits every stage on `sessions`.
pub fn fit<T: Scalar>(
    sessions: &[SessionRecord<T>],
    catalog: &ItemCatalog<T>,
    params: &PipelineParams,
) -> Result<(FittedPipeline<T>, FitReport), PipelineError> {
    if sessions.is_empty() {
        return Err(PipelineError::NoSessions);
    }
    params.train.validate()?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let x = build_raw_features(sessions, catalog);
    let mut pca = SparsePcaConfig {
        k: params.k_features.min(x.n_rows().min(x.n_cols())),
        l1_penalty: params.l1_penalty,
        seed: params.seed,
        ..SparsePcaConfig::default()
    };
    // k_features is an upper bound: keep the components fitted before the
    // first one the penalty collapses, fail only if the very first does
    let components = loop {
        match fit_sparse_pca(&x, &pca) {
            Err(FeatureError::ComponentCollapsed { component, .. }) if component > 0 => pca.k = component,
            r => break r?,
        }
    };
    let k_features = pca.k;
    let z = transform(&x, &components)?;
    drop(x);
    timings.features = t.elapsed();

    let t = Instant::now();
    let (model, noise) = match params.cluster {
        ClusterSpec::Kmeans { k } => {
            let k = match fit_kmeans(z.view(), k, params.seed, 1) {
                Err(ClusterError::TooFewDistinctRows { distinct, .. }) => distinct,
                _ => k,
            };
            let mut best: Option<(T, ClusterModel<T>)> = None;
            for r in 0..KMEANS_RESTARTS {
                let fit = fit_kmeans(z.view(), k, params.seed.wrapping_add(r), KMEANS_MAX_ITER)?;
                let wcss = *fit.objective_history.last().expect("at least one assignment");
                if best.as_ref().is_none_or(|(b, _)| wcss < *b) {
                    best = Some((wcss, fit.model));
                }
            }
            (best.expect("restarts >= 1").1, 0)
        }
        ClusterSpec::Dbscan { eps, min_pts } => {
            let sample = select_rows(&z, DBSCAN_SAMPLE, params.seed);
            let fit = fit_dbscan(sample.view(), eps, min_pts)?;
            let noise = fit.noise_count();
            (fit.model, noise)
        }
    };
    let raw_clusters = model.n_clusters();
    let transitions = sessions_to_transitions(sessions, catalog);
    let mut weights = vec![0usize; sessions.len()];
    for tr in &transitions {
        weights[tr.session_ref] += 1;
    }
    let groups = GroupModel::merge_small(model, z.view(), &weights, params.min_cluster_support)?;
    let assignments = groups.assign_rows(z.view())?;
    timings.clustering = t.elapsed();

    let t = Instant::now();
    let mut bank = QTableBank::new(groups.n_groups);
    let summary = train(&mut bank, &transitions, &assignments, &params.train)?;
    timings.qlearning = t.elapsed();

    let t = Instant::now();
    cover_empty_steps(&mut bank, sessions);
    let policy = bank.policy_table(catalog, params.min_visits)?;
    timings.policy = t.elapsed();

    let report = FitReport {
        n_sessions: sessions.len(),
        k_features,
        raw_clusters,
        n_groups: groups.n_groups,
        noise,
        train: summary,
        timings,
    };
    Ok((
        FittedPipeline {
            components,
            groups,
            bank,
            policy,
        },
        report,
    ))
}

impl<T: Scalar> FittedPipeline<T> {
    /// Group of each user.
    pub fn assign<U: UserState<T>>(&self, users: &[U], catalog: &ItemCatalog<T>) -> Result<Vec<usize>, PipelineError> {
        let x = build_raw_features(users, catalog);
        let z = transform(&x, &self.components)?;
        Ok(self.groups.assign_rows(z.view())?)
    }

    /// Nine items per user, step order.
    pub fn recommend<U: UserState<T>>(
        &self,
        users: &[U],
        catalog: &ItemCatalog<T>,
    ) -> Result<Vec<[u32; 9]>, PipelineError> {
        Ok(self
            .assign(users, catalog)?
            .into_iter()
            .map(|g| self.policy.items(g))
            .collect())
    }
}

/// Total logged reward per step, summed over sessions.
pub fn logged_step_revenue<T: Scalar>(sessions: &[SessionRecord<T>], catalog: &ItemCatalog<T>) -> [T; 3] {
    let mut out = [T::zero(); 3];
    for tr in sessions_to_transitions(sessions, catalog) {
        out[tr.step.index()] += tr.reward;
    }
    out
}
