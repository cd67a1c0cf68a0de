//! Fixtures and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use slateq::ingest::{parse_items, NextStep, Transition};
use slateq::slate::{ActionSlate, Step};
use slateq::{Catalog, Session};

/// `per_location` items at each location; item `i` costs `i`.
pub fn small_catalog(per_location: u32) -> Catalog {
    let mut text = String::new();
    for id in 1..=3 * per_location {
        let loc = (id - 1) / per_location + 1;
        text.push_str(&format!("{id} 0,0,0,0,0 {id} {loc}\n"));
    }
    parse_items(&text).unwrap()
}

/// All three-item slates of the eligible items of `step`, ascending.
pub fn all_slates(catalog: &Catalog, step: Step) -> Vec<ActionSlate> {
    let items: Vec<u32> = catalog.eligible(step).iter().copied().collect();
    let mut out = vec![];
    for a in 0..items.len() {
        for b in a + 1..items.len() {
            for c in b + 1..items.len() {
                out.push(ActionSlate::new([items[a], items[b], items[c]]).unwrap());
            }
        }
    }
    out
}

/// Deterministic 3-step MDP per cluster: each (cluster, step, slate) has a
/// fixed reward and either continues to the next step or terminates.
pub struct ToyMdp {
    pub n_clusters: usize,
    pub slates: [Vec<ActionSlate>; 3],
    /// `[cluster][step][slate]`
    pub reward: Vec<[Vec<f64>; 3]>,
    pub continues: Vec<[Vec<bool>; 3]>,
}

impl ToyMdp {
    pub fn random(catalog: &Catalog, n_clusters: usize, integer: bool, seed: u64) -> ToyMdp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slates = [Step::ONE, Step::TWO, Step::THREE].map(|s| all_slates(catalog, s));
        let mut reward = vec![];
        let mut continues = vec![];
        for _ in 0..n_clusters {
            let r: [Vec<f64>; 3] = std::array::from_fn(|s| {
                (0..slates[s].len())
                    .map(|_| {
                        if integer {
                            rng.random_range(0..50) as f64
                        } else {
                            rng.random_range(0.0..50.0)
                        }
                    })
                    .collect()
            });
            let c: [Vec<bool>; 3] =
                std::array::from_fn(|s| (0..slates[s].len()).map(|_| s < 2 && rng.random_bool(0.7)).collect());
            reward.push(r);
            continues.push(c);
        }
        ToyMdp {
            n_clusters,
            slates,
            reward,
            continues,
        }
    }

    /// One transition per (cluster, step, slate), repeated `copies` times.
    /// Session `i` belongs to cluster `assignments[i]`.
    pub fn transitions(&self, steps: [usize; 3], copies: usize) -> (Vec<Transition<f64>>, Vec<usize>) {
        let mut ts = vec![];
        let mut assignments = vec![];
        for _ in 0..copies {
            for &s in &steps {
                for c in 0..self.n_clusters {
                    for (a, slate) in self.slates[s].iter().enumerate() {
                        let step = Step::from_index(s);
                        ts.push(Transition {
                            session_ref: assignments.len(),
                            step,
                            action: *slate,
                            reward: self.reward[c][s][a],
                            next_step: if self.continues[c][s][a] {
                                NextStep::Step(step.next().unwrap())
                            } else {
                                NextStep::Terminal
                            },
                        });
                        assignments.push(c);
                    }
                }
            }
        }
        (ts, assignments)
    }

    /// Exact action values by backward induction.
    pub fn value_iteration(&self, gamma: f64) -> Vec<[Vec<f64>; 3]> {
        let mut q: Vec<[Vec<f64>; 3]> = (0..self.n_clusters)
            .map(|c| std::array::from_fn(|s| vec![0.0; self.reward[c][s].len()]))
            .collect();
        for c in 0..self.n_clusters {
            let mut v_next = 0.0;
            for s in (0..3).rev() {
                for a in 0..self.slates[s].len() {
                    let cont = if self.continues[c][s][a] { v_next } else { 0.0 };
                    q[c][s][a] = self.reward[c][s][a] + gamma * cont;
                }
                v_next = q[c][s].iter().copied().fold(0.0, f64::max);
            }
        }
        q
    }
}

/// Brute-force metric: every recommended item against every logged
/// position, no sets, no shared code with the library scorer.
pub fn naive_score(recs: &[[u32; 9]], sessions: &[Session], catalog: &Catalog, weights: [f64; 3]) -> f64 {
    let mut total = 0.0;
    for (rec, s) in recs.iter().zip(sessions) {
        for step in 0..3 {
            for j in 0..3 {
                let item = rec[3 * step + j];
                let Some(rec_item) = catalog.get(item) else { continue };
                if rec_item.location.index() != step {
                    continue;
                }
                let mut bought = false;
                for k in 0..9 {
                    if s.exposed_slate[k] == item && s.purchase_labels[k] {
                        bought = true;
                    }
                }
                if bought {
                    total += weights[step] * rec_item.price;
                }
            }
        }
    }
    total / sessions.len() as f64
}

/// Best constant slate per (group, step) on `sessions`, found by enumerating
/// every slate; returns the weighted score of that group-constant policy.
pub fn group_optimum(sessions: &[Session], groups: &[usize], catalog: &Catalog, weights: [f64; 3]) -> f64 {
    let n_groups = groups.iter().max().map_or(0, |&g| g + 1);
    let mut total = 0.0;
    for step in [Step::ONE, Step::TWO, Step::THREE] {
        let slates = all_slates(catalog, step);
        for g in 0..n_groups {
            // revenue each item would earn if recommended to the whole group
            let mut earned: HashMap<u32, f64> = HashMap::new();
            for (s, _) in sessions.iter().zip(groups).filter(|(_, &h)| h == g) {
                for k in 0..9 {
                    if s.purchase_labels[k] {
                        let item = s.exposed_slate[k];
                        *earned.entry(item).or_default() += catalog.price(item).unwrap();
                    }
                }
            }
            let best = slates
                .iter()
                .map(|a| {
                    a.items()
                        .iter()
                        .map(|i| earned.get(i).copied().unwrap_or(0.0))
                        .sum::<f64>()
                })
                .fold(0.0, f64::max);
            total += weights[step.index()] * best;
        }
    }
    total / sessions.len() as f64
}

/// `n x p` data from `k` latent factors with disjoint `nnz`-sparse loadings
/// plus unit Gaussian noise. Returns the data and the planted supports.
pub fn planted_sparse(n: usize, p: usize, k: usize, nnz: usize, seed: u64) -> (Array2<f64>, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<usize> = (0..p).collect();
    cols.shuffle(&mut rng);
    let mut supports = vec![];
    let mut w = Array2::<f64>::zeros((k, p));
    for c in 0..k {
        let mut sup: Vec<usize> = cols[c * nnz..(c + 1) * nnz].to_vec();
        sup.sort_unstable();
        let mut norm = 0.0;
        for &j in &sup {
            let v = rng.random_range(0.5..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            w[[c, j]] = v;
            norm += v * v;
        }
        w.row_mut(c).mapv_inplace(|v| v / norm.sqrt());
        supports.push(sup);
    }
    let noise = Normal::new(0.0, 1.0).unwrap();
    let scales: Vec<f64> = (0..k).map(|c| 6.0 - c as f64).collect();
    let mut x = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        let z: Vec<f64> = scales.iter().map(|s| s * noise.sample(&mut rng)).collect();
        for j in 0..p {
            let signal: f64 = (0..k).map(|c| z[c] * w[[c, j]]).sum();
            x[[i, j]] = signal + noise.sample(&mut rng);
        }
    }
    (x, supports)
}

/// Gaussian blobs around the given centers; returns data and true labels.
pub fn blobs(centers: &[Vec<f64>], per_blob: usize, sigma: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let d = centers[0].len();
    let mut rows = vec![];
    let mut labels = vec![];
    for (g, c) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            rows.extend(c.iter().map(|&m| m + noise.sample(&mut rng)));
            labels.push(g);
        }
    }
    // interleave so blobs are not contiguous
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let x = Array2::from_shape_fn((n, d), |(i, j)| rows[order[i] * d + j]);
    let l = order.iter().map(|&i| labels[i]).collect();
    (x, l)
}

/// Adjusted Rand index from the pair-counting definition, O(n^2).
pub fn pair_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut total) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            both += f64::from(u8::from(sa && sb));
            only_a += f64::from(u8::from(sa));
            only_b += f64::from(u8::from(sb));
            total += 1.0;
        }
    }
    let expected = only_a * only_b / total;
    let max = (only_a + only_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

/// Relabels clusters by order of first appearance; noise stays `None`.
pub fn canonical(labels: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|l| {
            l.map(|c| {
                let next = map.len();
                *map.entry(c).or_insert(next)
            })
        })
        .collect()
}
