//! Per-cluster tabular Q-learning over (step, slate) pairs.

mod train;

pub use train::{train, TrainSummary};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ItemCatalog;
use crate::scalar::Scalar;
use crate::slate::{ActionSlate, SlateError, Step};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QError {
    #[error("cluster {cluster} out of range (bank has {n_clusters})")]
    UnknownCluster { cluster: usize, n_clusters: usize },
    #[error("transition {index} has a non-finite reward")]
    NonFiniteReward { index: usize },
    #[error("transition {index} refers to session {session_ref}, which has no cluster assignment")]
    MissingAssignment { index: usize, session_ref: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("slate {slate} rejected at step {step}: {source}")]
    Slate {
        slate: ActionSlate,
        step: Step,
        source: SlateError,
    },
    #[error("no action stored anywhere for cluster {cluster} at step {step}")]
    NoAction { cluster: usize, step: Step },
    #[error("failed to start worker pool: {0}")]
    Pool(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub threads: usize,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            gamma: 0.9,
            epochs: 10,
            threads: 1,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), QError> {
        let bad = |m: String| Err(QError::InvalidConfig(m));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must be in (0, 1], got {}", self.alpha));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.threads == 0 {
            return bad("threads must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterState {
    pub cluster_id: usize,
    pub step: Step,
}

/// One stored Q-table entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Cell<T> {
    pub q: T,
    /// Number of Bellman updates applied, across all epochs.
    pub visits: u64,
    /// Number of logged transitions that hit this cell.
    pub support: u64,
}

impl<T: Scalar> Default for Cell<T> {
    fn default() -> Self {
        Cell {
            q: T::zero(),
            visits: 0,
            support: 0,
        }
    }
}

type StepTables<T> = [BTreeMap<ActionSlate, Cell<T>>; 3];

/// Sparse Q-tables, one set of three step tables per cluster. Absent
/// entries read as zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", into = "BankFile<T>", try_from = "BankFile<T>")]
pub struct QTableBank<T> {
    tables: Vec<StepTables<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct BankFile<T> {
    n_clusters: usize,
    cells: Vec<CellRecord<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct CellRecord<T> {
    cluster: usize,
    step: Step,
    slate: ActionSlate,
    q: T,
    visits: u64,
    support: u64,
}

impl<T: Scalar> From<QTableBank<T>> for BankFile<T> {
    fn from(bank: QTableBank<T>) -> Self {
        let cells = bank
            .iter()
            .map(|(state, slate, c)| CellRecord {
                cluster: state.cluster_id,
                step: state.step,
                slate: *slate,
                q: c.q,
                visits: c.visits,
                support: c.support,
            })
            .collect();
        BankFile {
            n_clusters: bank.n_clusters(),
            cells,
        }
    }
}

impl<T: Scalar> TryFrom<BankFile<T>> for QTableBank<T> {
    type Error = String;
    fn try_from(f: BankFile<T>) -> Result<Self, String> {
        let mut bank = QTableBank::new(f.n_clusters);
        for r in f.cells {
            if r.cluster >= f.n_clusters {
                return Err(format!(
                    "cell for cluster {} but only {} clusters",
                    r.cluster, f.n_clusters
                ));
            }
            if !r.q.is_finite() {
                return Err(format!("non-finite q for cluster {} slate {}", r.cluster, r.slate));
            }
            let cell = Cell {
                q: r.q,
                visits: r.visits,
                support: r.support,
            };
            if bank.tables[r.cluster][r.step.index()].insert(r.slate, cell).is_some() {
                return Err(format!("duplicate cell for cluster {} slate {}", r.cluster, r.slate));
            }
        }
        Ok(bank)
    }
}

impl<T: Scalar> QTableBank<T> {
    pub fn new(n_clusters: usize) -> Self {
        QTableBank {
            tables: (0..n_clusters).map(|_| Default::default()).collect(),
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.tables.len()
    }

    /// Number of stored cells over all clusters and steps.
    pub fn len(&self) -> usize {
        self.tables.iter().flatten().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_cluster(&self, cluster: usize) -> Result<(), QError> {
        if cluster >= self.n_clusters() {
            return Err(QError::UnknownCluster {
                cluster,
                n_clusters: self.n_clusters(),
            });
        }
        Ok(())
    }

    pub fn table(&self, state: ClusterState) -> Result<&BTreeMap<ActionSlate, Cell<T>>, QError> {
        self.check_cluster(state.cluster_id)?;
        Ok(&self.tables[state.cluster_id][state.step.index()])
    }

    pub(crate) fn table_mut(&mut self, cluster: usize, step: Step) -> &mut BTreeMap<ActionSlate, Cell<T>> {
        &mut self.tables[cluster][step.index()]
    }

    /// Stored value of `action` in `state`, zero if never visited.
    pub fn q_value(&self, state: ClusterState, action: &ActionSlate, catalog: &ItemCatalog<T>) -> Result<T, QError> {
        catalog
            .check_slate(action, state.step)
            .map_err(|source| QError::Slate {
                slate: *action,
                step: state.step,
                source,
            })?;
        Ok(self.table(state)?.get(action).map_or(T::zero(), |c| c.q))
    }

    /// Sets one cell directly, e.g. to seed a pre-trained value.
    pub fn insert(&mut self, state: ClusterState, action: ActionSlate, cell: Cell<T>) -> Result<(), QError> {
        self.check_cluster(state.cluster_id)?;
        self.table_mut(state.cluster_id, state.step).insert(action, cell);
        Ok(())
    }

    /// All stored cells in (cluster, step, slate) order.
    pub fn iter(&self) -> impl Iterator<Item = (ClusterState, &ActionSlate, &Cell<T>)> {
        self.tables.iter().enumerate().flat_map(|(cluster_id, steps)| {
            Step::ALL.into_iter().flat_map(move |step| {
                steps[step.index()]
                    .iter()
                    .map(move |(a, c)| (ClusterState { cluster_id, step }, a, c))
            })
        })
    }

    /// Greedy slate per step for one cluster.
    ///
    /// Candidates are cells with `support >= min_visits` whose slate is
    /// valid for the step. Search order: the cluster's table, then all
    /// clusters, then the same two without the support filter. Ties go to
    /// the smallest slate.
    pub fn greedy_policy(
        &self,
        cluster: usize,
        catalog: &ItemCatalog<T>,
        min_visits: u64,
    ) -> Result<[ActionSlate; 3], QError> {
        self.check_cluster(cluster)?;
        let mut out = Vec::with_capacity(3);
        for step in Step::ALL {
            let valid = |a: &ActionSlate| catalog.check_slate(a, step).is_ok();
            let own = || self.tables[cluster][step.index()].iter();
            let all = || self.tables.iter().flat_map(|t| t[step.index()].iter());
            let pick = best(own().filter(|(a, c)| c.support >= min_visits && valid(a)))
                .or_else(|| best(all().filter(|(a, c)| c.support >= min_visits && valid(a))))
                .or_else(|| best(own().filter(|(a, _)| valid(a))))
                .or_else(|| best(all().filter(|(a, _)| valid(a))));
            out.push(pick.ok_or(QError::NoAction { cluster, step })?);
        }
        Ok([out[0], out[1], out[2]])
    }

    pub fn policy_table(&self, catalog: &ItemCatalog<T>, min_visits: u64) -> Result<PolicyTable, QError> {
        let slates = (0..self.n_clusters())
            .map(|c| self.greedy_policy(c, catalog, min_visits))
            .collect::<Result<_, _>>()?;
        Ok(PolicyTable { slates })
    }
}

fn best<'a, T: Scalar>(cells: impl Iterator<Item = (&'a ActionSlate, &'a Cell<T>)>) -> Option<ActionSlate> {
    let mut top: Option<(ActionSlate, T)> = None;
    for (a, c) in cells {
        top = match top {
            Some((ta, tq)) if c.q < tq || (c.q == tq && ta <= *a) => Some((ta, tq)),
            _ => Some((*a, c.q)),
        };
    }
    top.map(|(a, _)| a)
}

/// Greedy slates for every cluster.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub slates: Vec<[ActionSlate; 3]>,
}

impl PolicyTable {
    /// The nine items of `cluster` in step order.
    pub fn items(&self, cluster: usize) -> [u32; 9] {
        let mut out = [0; 9];
        for (s, slate) in self.slates[cluster].iter().enumerate() {
            out[3 * s..3 * s + 3].copy_from_slice(slate.items());
        }
        out
    }

    /// One line per cluster: `<cluster_id> i1,...,i9`.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for c in 0..self.slates.len() {
            let items: Vec<String> = self.items(c).iter().map(u32::to_string).collect();
            writeln!(out, "{c} {}", items.join(",")).unwrap();
        }
        out
    }
}
