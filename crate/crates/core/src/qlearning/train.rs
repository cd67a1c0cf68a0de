use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use super::{Cell, QError, QTableBank, TrainConfig};
use crate::ingest::{NextStep, Transition};
use crate::scalar::Scalar;
use crate::slate::{ActionSlate, Step};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainSummary {
    pub transitions: usize,
    pub updates: u64,
    pub cells: usize,
}

/// Serial-mode table with an incrementally maintained max.
struct Table<T> {
    slates: Vec<ActionSlate>,
    q: Vec<T>,
    visits: Vec<u64>,
    max: T,
    argmax: Option<usize>,
}

impl<T: Scalar> Table<T> {
    fn rescan(&mut self) {
        self.max = T::neg_infinity();
        self.argmax = None;
        for (i, &q) in self.q.iter().enumerate() {
            if q > self.max {
                self.max = q;
                self.argmax = Some(i);
            }
        }
    }

    /// `max(0, max stored q)`: absent slates read as zero.
    fn max_value(&self) -> T {
        self.max.max(T::zero())
    }

    fn update(&mut self, i: usize, target: T, alpha: T) {
        let q = self.q[i] + alpha * (target - self.q[i]);
        self.q[i] = q;
        self.visits[i] += 1;
        if q >= self.max {
            self.max = q;
            self.argmax = Some(i);
        } else if self.argmax == Some(i) {
            self.rescan();
        }
    }
}

/// One cell and, in input order, the updates it receives each epoch.
/// In parallel mode a cell is owned by exactly one worker at a time.
struct CellJob<T> {
    table: usize,
    q: T,
    visits: u64,
    updates: Vec<(T, Option<usize>)>,
}

struct Job<T> {
    table: usize,
    cell: usize,
    next: Option<usize>,
    reward: T,
}

/// Trains `bank` in place on `transitions`.
///
/// `assignments[t.session_ref]` is the cluster of each transition. Each
/// epoch applies one Bellman update per transition. With
/// `cfg.deterministic` the updates run on the calling thread in input
/// order. Otherwise each epoch runs step 3, then step 2, then step 1; within
/// a step the cells are updated concurrently on `cfg.threads` workers, each
/// cell by one worker applying its updates in input order. The parallel
/// result is therefore identical across runs and thread counts, and equal to
/// a serial run over the transitions stably sorted by descending step.
pub fn train<T: Scalar>(
    bank: &mut QTableBank<T>,
    transitions: &[Transition<T>],
    assignments: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainSummary, QError> {
    cfg.validate()?;
    let n_clusters = bank.n_clusters();
    let table_of = |cluster: usize, step: Step| cluster * 3 + step.index();

    let mut keys: Vec<BTreeSet<ActionSlate>> = vec![BTreeSet::new(); n_clusters * 3];
    let mut clusters = Vec::with_capacity(transitions.len());
    for (index, t) in transitions.iter().enumerate() {
        let cluster = *assignments.get(t.session_ref).ok_or(QError::MissingAssignment {
            index,
            session_ref: t.session_ref,
        })?;
        if cluster >= n_clusters {
            return Err(QError::UnknownCluster { cluster, n_clusters });
        }
        if !t.reward.is_finite() {
            return Err(QError::NonFiniteReward { index });
        }
        keys[table_of(cluster, t.step)].insert(t.action);
        clusters.push(cluster);
    }

    let mut tables: Vec<Table<T>> = keys
        .into_iter()
        .enumerate()
        .map(|(ti, mut k)| {
            let init = bank.table_mut(ti / 3, Step::from_index(ti % 3));
            k.extend(init.keys().copied());
            let slates: Vec<ActionSlate> = k.into_iter().collect();
            let cells: Vec<Cell<T>> = slates
                .iter()
                .map(|a| init.get(a).copied().unwrap_or_default())
                .collect();
            let mut t = Table {
                q: cells.iter().map(|c| c.q).collect(),
                visits: cells.iter().map(|c| c.visits).collect(),
                slates,
                max: T::neg_infinity(),
                argmax: None,
            };
            t.rescan();
            t
        })
        .collect();
    let lookup: Vec<HashMap<ActionSlate, usize>> = tables
        .iter()
        .map(|t| t.slates.iter().enumerate().map(|(i, a)| (*a, i)).collect())
        .collect();

    let jobs: Vec<Job<T>> = transitions
        .iter()
        .zip(&clusters)
        .map(|(t, &cluster)| {
            let table = table_of(cluster, t.step);
            Job {
                table,
                cell: lookup[table][&t.action],
                next: match t.next_step {
                    NextStep::Step(s) => Some(table_of(cluster, s)),
                    NextStep::Terminal => None,
                },
                reward: t.reward,
            }
        })
        .collect();

    let alpha = T::of(cfg.alpha);
    let gamma = T::of(cfg.gamma);

    if cfg.deterministic {
        for _ in 0..cfg.epochs {
            for job in &jobs {
                let future = job.next.map_or(T::zero(), |n| gamma * tables[n].max_value());
                tables[job.table].update(job.cell, job.reward + future, alpha);
            }
        }
    } else {
        // step-major layout: each phase is one contiguous slice
        let by_step: Vec<usize> = (0..3).flat_map(|s| (s..tables.len()).step_by(3)).collect();
        let mut offsets = vec![0; tables.len()];
        let mut cells: Vec<CellJob<T>> = Vec::with_capacity(tables.iter().map(|t| t.q.len()).sum());
        let mut bounds = [0; 4];
        for &ti in &by_step {
            offsets[ti] = cells.len();
            let t = &tables[ti];
            cells.extend(t.q.iter().zip(&t.visits).map(|(&q, &visits)| CellJob {
                table: ti,
                q,
                visits,
                updates: vec![],
            }));
            bounds[ti % 3 + 1] = cells.len();
        }
        for s in 1..4 {
            bounds[s] = bounds[s].max(bounds[s - 1]);
        }
        for job in &jobs {
            cells[offsets[job.table] + job.cell]
                .updates
                .push((job.reward, job.next));
        }

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| QError::Pool(e.to_string()))?;
        // max(0, table max) of every table, refreshed after its phase
        let mut maxes: Vec<T> = tables.iter().map(Table::max_value).collect();
        pool.install(|| {
            for _ in 0..cfg.epochs {
                for s in (0..3).rev() {
                    let phase = &mut cells[bounds[s]..bounds[s + 1]];
                    let read = &maxes;
                    phase.par_iter_mut().for_each(|c| {
                        for &(reward, next) in &c.updates {
                            let future = next.map_or(T::zero(), |n| gamma * read[n]);
                            c.q = c.q + alpha * (reward + future - c.q);
                            c.visits += 1;
                        }
                    });
                    for m in maxes.iter_mut().skip(s).step_by(3) {
                        *m = T::zero();
                    }
                    for c in phase.iter() {
                        maxes[c.table] = maxes[c.table].max(c.q);
                    }
                }
            }
        });
        for (ti, t) in tables.iter_mut().enumerate() {
            for (i, c) in cells[offsets[ti]..offsets[ti] + t.q.len()].iter().enumerate() {
                t.q[i] = c.q;
                t.visits[i] = c.visits;
            }
        }
    }

    let mut support: Vec<Vec<u64>> = tables.iter().map(|t| vec![0; t.slates.len()]).collect();
    for j in &jobs {
        support[j.table][j.cell] += 1;
    }
    for (ti, table) in tables.iter().enumerate() {
        let out = bank.table_mut(ti / 3, Step::from_index(ti % 3));
        for (i, slate) in table.slates.iter().enumerate() {
            let entry = out.entry(*slate).or_default();
            entry.q = table.q[i];
            entry.visits = table.visits[i];
            entry.support += support[ti][i];
        }
    }

    Ok(TrainSummary {
        transitions: jobs.len(),
        updates: (jobs.len() * cfg.epochs) as u64,
        cells: bank.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qlearning::tests::catalog;
    use crate::qlearning::ClusterState;

    fn slate(a: u32, b: u32, c: u32) -> ActionSlate {
        ActionSlate::new([a, b, c]).unwrap()
    }

    fn tr(session_ref: usize, step: u8, a: ActionSlate, reward: f64, next: bool) -> Transition<f64> {
        let step = Step::new(step).unwrap();
        Transition {
            session_ref,
            step,
            action: a,
            reward,
            next_step: if next {
                NextStep::Step(step.next().unwrap())
            } else {
                NextStep::Terminal
            },
        }
    }

    fn cfg(alpha: f64, gamma: f64, epochs: usize) -> TrainConfig {
        TrainConfig {
            alpha,
            gamma,
            epochs,
            threads: 1,
            deterministic: true,
        }
    }

    #[test]
    fn single_terminal_update() {
        let cat = catalog();
        let mut bank = QTableBank::new(1);
        let a = slate(11, 12, 13);
        train(&mut bank, &[tr(0, 3, a, 10.0, false)], &[0], &cfg(0.1, 0.9, 1)).unwrap();
        let s3 = ClusterState {
            cluster_id: 0,
            step: Step::THREE,
        };
        assert_eq!(bank.q_value(s3, &a, &cat).unwrap(), 1.0);
        assert_eq!(bank.q_value(s3, &slate(11, 12, 14), &cat).unwrap(), 0.0);
        assert_eq!(bank.len(), 1);
        let c = bank.table(s3).unwrap()[&a];
        assert_eq!((c.visits, c.support), (1, 1));
    }

    #[test]
    fn chains_into_pretrained_value() {
        let cat = catalog();
        let mut bank = QTableBank::new(1);
        let s2 = ClusterState {
            cluster_id: 0,
            step: Step::TWO,
        };
        bank.insert(
            s2,
            slate(6, 7, 8),
            Cell {
                q: 5.0,
                visits: 0,
                support: 0,
            },
        )
        .unwrap();
        let a = slate(1, 2, 3);
        train(&mut bank, &[tr(0, 1, a, 2.0, true)], &[0], &cfg(1.0, 0.5, 1)).unwrap();
        let s1 = ClusterState {
            cluster_id: 0,
            step: Step::ONE,
        };
        assert_eq!(bank.q_value(s1, &a, &cat).unwrap(), 4.5);
    }

    #[test]
    fn negative_next_values_floor_at_zero() {
        let mut bank = QTableBank::new(1);
        let s2 = ClusterState {
            cluster_id: 0,
            step: Step::TWO,
        };
        bank.insert(
            s2,
            slate(6, 7, 8),
            Cell {
                q: -5.0,
                visits: 0,
                support: 0,
            },
        )
        .unwrap();
        let a = slate(1, 2, 3);
        train(&mut bank, &[tr(0, 1, a, 2.0, true)], &[0], &cfg(1.0, 0.5, 1)).unwrap();
        assert_eq!(
            bank.table(ClusterState {
                cluster_id: 0,
                step: Step::ONE
            })
            .unwrap()[&a]
                .q,
            2.0
        );
    }

    #[test]
    fn max_cache_tracks_decreases() {
        // step-2 max drops after its argmax is pulled down; step-1 must see it
        let mut bank = QTableBank::new(1);
        let hi = slate(6, 7, 8);
        let lo = slate(6, 7, 9);
        let a = slate(1, 2, 3);
        let s2 = ClusterState {
            cluster_id: 0,
            step: Step::TWO,
        };
        bank.insert(
            s2,
            hi,
            Cell {
                q: 10.0,
                visits: 0,
                support: 0,
            },
        )
        .unwrap();
        bank.insert(
            s2,
            lo,
            Cell {
                q: 4.0,
                visits: 0,
                support: 0,
            },
        )
        .unwrap();
        let ts = [tr(0, 2, hi, 1.0, false), tr(0, 1, a, 0.0, true)];
        train(&mut bank, &ts, &[0], &cfg(1.0, 0.5, 1)).unwrap();
        let s1 = ClusterState {
            cluster_id: 0,
            step: Step::ONE,
        };
        assert_eq!(bank.table(s1).unwrap()[&a].q, 2.0);
    }

    #[test]
    fn errors() {
        let mut bank = QTableBank::<f64>::new(1);
        let a = slate(1, 2, 3);
        let c = cfg(0.5, 0.5, 1);
        assert_eq!(
            train(&mut bank, &[tr(0, 1, a, 1.0, false)], &[1], &c),
            Err(QError::UnknownCluster {
                cluster: 1,
                n_clusters: 1
            })
        );
        assert_eq!(
            train(&mut bank, &[tr(3, 1, a, 1.0, false)], &[0], &c),
            Err(QError::MissingAssignment {
                index: 0,
                session_ref: 3
            })
        );
        assert_eq!(
            train(&mut bank, &[tr(0, 1, a, f64::NAN, false)], &[0], &c),
            Err(QError::NonFiniteReward { index: 0 })
        );
        assert!(bank.is_empty());
    }

    #[test]
    fn parallel_matches_serial_on_single_visit_cells() {
        let ts: Vec<_> = (2..=4)
            .map(|b| tr(0, 1, slate(1, b, 5), 3.0 + b as f64, false))
            .chain((7..=9).map(|b| tr(0, 2, slate(6, b, 10), b as f64, false)))
            .collect();
        let mut serial = QTableBank::new(1);
        train(&mut serial, &ts, &[0], &cfg(0.5, 0.5, 1)).unwrap();
        let mut par = QTableBank::new(1);
        let pc = TrainConfig {
            threads: 4,
            deterministic: false,
            ..cfg(0.5, 0.5, 1)
        };
        train(&mut par, &ts, &[0], &pc).unwrap();
        assert_eq!(serial, par);
    }

    #[test]
    fn parallel_equals_step_sorted_serial() {
        // multi-visit cells with differing rewards, mixed steps and clusters
        let mut ts = vec![];
        for i in 0..60u32 {
            let step = (i % 3 + 1) as u8;
            let base = [1, 6, 11][step as usize - 1];
            let a = slate(base, base + 1 + i % 2, base + 3 + (i / 7) % 2);
            ts.push(tr(
                (i % 4) as usize,
                step,
                a,
                0.5 + f64::from(i % 5) * 1.25,
                step < 3 && i % 4 != 0,
            ));
        }
        let assign = [0, 1, 0, 1];
        let mut sorted = ts.clone();
        sorted.sort_by_key(|t| std::cmp::Reverse(t.step));
        let mut serial = QTableBank::new(2);
        train(&mut serial, &sorted, &assign, &cfg(0.1, 0.9, 7)).unwrap();
        for threads in [1, 3, 8] {
            let mut par = QTableBank::new(2);
            let pc = TrainConfig {
                threads,
                deterministic: false,
                ..cfg(0.1, 0.9, 7)
            };
            train(&mut par, &ts, &assign, &pc).unwrap();
            assert_eq!(serial, par, "threads {threads}");
        }
    }

    #[test]
    fn empty_bank_and_stream() {
        let mut bank = QTableBank::<f64>::new(0);
        let pc = TrainConfig {
            deterministic: false,
            ..cfg(0.1, 0.9, 2)
        };
        assert_eq!(train(&mut bank, &[], &[], &pc).unwrap().cells, 0);
    }
}
