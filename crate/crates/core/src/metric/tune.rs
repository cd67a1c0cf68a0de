use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{holdout_indices, score, MetricConfig, MetricError, ScoreReport};
use crate::clustering::ClusterSpec;
use crate::ingest::{ItemCatalog, SessionRecord};
use crate::pipeline::{fit, PipelineParams};
use crate::scalar::Scalar;

/// Values to try per hyperparameter. Missing or empty lists keep the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneGrid {
    #[serde(default)]
    pub k_features: Vec<usize>,
    #[serde(default)]
    pub l1_penalty: Vec<f64>,
    #[serde(default)]
    pub cluster: Vec<ClusterSpec>,
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub epochs: Vec<usize>,
    #[serde(default)]
    pub min_visits: Vec<u64>,
}

fn or_base<V: Clone>(values: &[V], base: V) -> Vec<V> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl TuneGrid {
    /// Cartesian product over all axes, `k_features` varying slowest.
    pub fn cells(&self, base: &PipelineParams) -> Vec<PipelineParams> {
        let mut out = vec![];
        for &k_features in &or_base(&self.k_features, base.k_features) {
            for &l1_penalty in &or_base(&self.l1_penalty, base.l1_penalty) {
                for cluster in or_base(&self.cluster, base.cluster.clone()) {
                    for &alpha in &or_base(&self.alpha, base.train.alpha) {
                        for &gamma in &or_base(&self.gamma, base.train.gamma) {
                            for &epochs in &or_base(&self.epochs, base.train.epochs) {
                                for &min_visits in &or_base(&self.min_visits, base.min_visits) {
                                    let mut p = base.clone();
                                    p.k_features = k_features;
                                    p.l1_penalty = l1_penalty;
                                    p.cluster = cluster.clone();
                                    p.train.alpha = alpha;
                                    p.train.gamma = gamma;
                                    p.train.epochs = epochs;
                                    p.min_visits = min_visits;
                                    out.push(p);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "status", rename_all = "snake_case")]
pub enum GridOutcome<T> {
    Scored { n_groups: usize, report: ScoreReport<T> },
    Failed { stage: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GridCell<T> {
    pub params: PipelineParams,
    pub outcome: GridOutcome<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TuneResult<T> {
    pub cells: Vec<GridCell<T>>,
    /// Index of the winning cell, `None` if every cell failed.
    pub best: Option<usize>,
}

fn cluster_count(spec: &ClusterSpec) -> usize {
    match spec {
        ClusterSpec::Kmeans { k } => *k,
        ClusterSpec::Dbscan { .. } => usize::MAX,
    }
}

impl<T: Scalar> TuneResult<T> {
    pub fn best_cell(&self) -> Option<&GridCell<T>> {
        self.best.map(|i| &self.cells[i])
    }

    /// One row per cell.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record([
            "cell",
            "k_features",
            "l1_penalty",
            "cluster",
            "alpha",
            "gamma",
            "epochs",
            "min_visits",
            "n_groups",
            "score",
            "status",
            "message",
        ])
        .unwrap();
        for (i, c) in self.cells.iter().enumerate() {
            let p = &c.params;
            let (n_groups, score, status, message) = match &c.outcome {
                GridOutcome::Scored { n_groups, report } => (
                    n_groups.to_string(),
                    report.score.to_string(),
                    "ok".to_string(),
                    String::new(),
                ),
                GridOutcome::Failed { stage, message } => {
                    (String::new(), String::new(), format!("failed:{stage}"), message.clone())
                }
            };
            w.write_record([
                i.to_string(),
                p.k_features.to_string(),
                p.l1_penalty.to_string(),
                p.cluster.to_string(),
                p.train.alpha.to_string(),
                p.train.gamma.to_string(),
                p.train.epochs.to_string(),
                p.min_visits.to_string(),
                n_groups,
                score,
                status,
                message,
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// Fits and scores every grid cell on one seeded holdout split.
///
/// The best cell has the highest score; ties go to fewer features, then
/// fewer fitted groups, then fewer configured clusters, then grid order.
pub fn tune<T: Scalar>(
    grid: &TuneGrid,
    base: &PipelineParams,
    sessions: &[SessionRecord<T>],
    catalog: &ItemCatalog<T>,
    train_fraction: f64,
    metric: &MetricConfig,
) -> Result<TuneResult<T>, MetricError> {
    metric.validate()?;
    let (tr, va) = holdout_indices(sessions.len(), train_fraction, base.seed)?;
    let train: Vec<_> = tr.iter().map(|&i| sessions[i].clone()).collect();
    let valid: Vec<_> = va.iter().map(|&i| sessions[i].clone()).collect();

    let mut cells = vec![];
    for params in grid.cells(base) {
        let outcome = match fit(&train, catalog, &params) {
            Ok((fitted, report)) => {
                let recs = fitted.recommend(&valid, catalog).expect("catalog unchanged since fit");
                GridOutcome::Scored {
                    n_groups: report.n_groups,
                    report: score(&recs, &valid, catalog, metric)?,
                }
            }
            Err(e) => GridOutcome::Failed {
                stage: e.stage().to_string(),
                message: e.to_string(),
            },
        };
        cells.push(GridCell { params, outcome });
    }

    let key = |c: &GridCell<T>| match &c.outcome {
        GridOutcome::Scored { n_groups, report } => Some((
            report.score,
            c.params.k_features,
            *n_groups,
            cluster_count(&c.params.cluster),
        )),
        GridOutcome::Failed { .. } => None,
    };
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        let Some((s, kf, ng, cc)) = key(c) else { continue };
        let better = match best.and_then(|b| key(&cells[b])) {
            None => true,
            Some((bs, bkf, bng, bcc)) => match s.partial_cmp(&bs) {
                Some(Ordering::Greater) => true,
                Some(Ordering::Equal) => (kf, ng, cc) < (bkf, bng, bcc),
                _ => false,
            },
        };
        if better {
            best = Some(i);
        }
    }
    Ok(TuneResult { cells, best })
}
