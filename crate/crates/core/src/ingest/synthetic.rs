//! Seeded synthetic corpus with a known purchase model.
//!
//! Users and items live in a shared latent space. A user buys an exposed item
//! with probability `sigmoid((u·e - beta*price) / temperature)`, rows are
//! purchase-gated (row `k+1` can only be bought after all of row `k`), and the
//! exposed slates come from a popularity-biased uniform behavior policy.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{IngestError, ItemCatalog, ItemRecord, SessionRecord, NUM_CONTENT_FEATURES, NUM_PORTRAITS};
use crate::scalar::Scalar;
use crate::slate::Step;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_items: usize,
    pub num_users: usize,
    pub num_sessions: usize,
    pub latent_dim: usize,
    /// Prices are integers drawn uniformly from this closed range.
    pub price_range: (f64, f64),
    pub purchase_temperature: f64,
    /// `beta` in the purchase utility.
    pub price_sensitivity: f64,
    /// Planted user groups; 0 draws every user independently.
    pub num_groups: usize,
    /// Scale of group centers in latent space.
    pub group_scale: f64,
    /// Spread of users around their group center.
    pub group_spread: f64,
    /// Log-popularity scale of the behavior policy; 0 is uniform.
    pub popularity_bias: f64,
    /// Upper bound on the per-item click probability.
    pub click_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_items: 381,
            num_users: 1_000,
            num_sessions: 10_000,
            latent_dim: 8,
            price_range: (10.0, 1000.0),
            purchase_temperature: 1.0,
            price_sensitivity: 0.0005,
            num_groups: 4,
            group_scale: 1.5,
            group_spread: 0.3,
            popularity_bias: 0.3,
            click_rate: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::InvalidConfig(m.to_string()));
        if self.num_items == 0 || self.num_items % 3 != 0 {
            return bad("num_items must be a positive multiple of 3");
        }
        if self.num_items < 9 {
            return bad("num_items must be at least 9 (three per location)");
        }
        if self.num_users == 0 || self.num_sessions == 0 {
            return bad("num_users and num_sessions must be positive");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        let (lo, hi) = self.price_range;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return bad("price_range must satisfy 0 <= min <= max");
        }
        if lo.ceil() > hi.floor() {
            return bad("price_range must contain an integer");
        }
        if !(self.purchase_temperature > 0.0 && self.purchase_temperature.is_finite()) {
            return bad("purchase_temperature must be positive");
        }
        for (name, v) in [
            ("price_sensitivity", self.price_sensitivity),
            ("group_scale", self.group_scale),
            ("group_spread", self.group_spread),
            ("popularity_bias", self.popularity_bias),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(IngestError::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.click_rate) {
            return bad("click_rate must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemTruth {
    pub item_id: u32,
    pub embedding: Vec<f64>,
    pub popularity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: u64,
    pub group: Option<usize>,
    pub latent: Vec<f64>,
}

/// The exact generative model behind a synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SyntheticConfig,
    pub prices: Vec<f64>,
    pub group_centers: Vec<Vec<f64>>,
    pub items: Vec<ItemTruth>,
    pub users: Vec<UserTruth>,
}

/// One line of the ground-truth sidecar file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthRecord {
    Model {
        config: SyntheticConfig,
        purchase_gated: bool,
    },
    Group {
        group: usize,
        center: Vec<f64>,
    },
    Item {
        item_id: u32,
        price: f64,
        embedding: Vec<f64>,
        popularity: f64,
    },
    User {
        user_id: u64,
        group: Option<usize>,
        latent: Vec<f64>,
    },
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl GroundTruth {
    pub fn user(&self, user_id: u64) -> &UserTruth {
        &self.users[(user_id - 1) as usize]
    }

    pub fn utility(&self, user_id: u64, item_id: u32) -> f64 {
        let it = &self.items[(item_id - 1) as usize];
        dot(&self.user(user_id).latent, &it.embedding)
            - self.config.price_sensitivity * self.prices[(item_id - 1) as usize]
    }

    /// Probability that `user_id` buys `item_id` when it is exposed on an open row.
    pub fn purchase_probability(&self, user_id: u64, item_id: u32) -> f64 {
        sigmoid(self.utility(user_id, item_id) / self.config.purchase_temperature)
    }

    /// Sidecar format: one JSON object per line, `kind` first.
    pub fn to_jsonl(&self) -> String {
        let mut recs = vec![TruthRecord::Model {
            config: self.config.clone(),
            purchase_gated: true,
        }];
        recs.extend(self.group_centers.iter().enumerate().map(|(g, c)| TruthRecord::Group {
            group: g,
            center: c.clone(),
        }));
        recs.extend(self.items.iter().map(|it| TruthRecord::Item {
            item_id: it.item_id,
            price: self.prices[(it.item_id - 1) as usize],
            embedding: it.embedding.clone(),
            popularity: it.popularity,
        }));
        recs.extend(self.users.iter().map(|u| TruthRecord::User {
            user_id: u.user_id,
            group: u.group,
            latent: u.latent.clone(),
        }));
        let mut out = String::new();
        for r in recs {
            out.push_str(&serde_json::to_string(&r).expect("truth record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut config = None;
        let mut gt = GroundTruth {
            config: SyntheticConfig::default(),
            prices: vec![],
            group_centers: vec![],
            items: vec![],
            users: vec![],
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<TruthRecord>(line)? {
                TruthRecord::Model { config: c, .. } => config = Some(c),
                TruthRecord::Group { center, .. } => gt.group_centers.push(center),
                TruthRecord::Item {
                    item_id,
                    price,
                    embedding,
                    popularity,
                } => {
                    gt.prices.push(price);
                    gt.items.push(ItemTruth {
                        item_id,
                        embedding,
                        popularity,
                    });
                }
                TruthRecord::User { user_id, group, latent } => gt.users.push(UserTruth { user_id, group, latent }),
            }
        }
        gt.config = config.ok_or_else(|| <serde_json::Error as serde::de::Error>::custom("missing model record"))?;
        Ok(gt)
    }
}

pub struct SyntheticCorpus<T> {
    pub catalog: ItemCatalog<T>,
    pub sessions: Vec<SessionRecord<T>>,
    pub truth: GroundTruth,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Keeps text files compact while staying exactly round-trippable.
fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Draws `k` distinct indices with probability proportional to `weights`.
fn sample_without_replacement(rng: &mut ChaCha8Rng, weights: &[f64], k: usize) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = w.iter().sum();
        let mut x = rng.random::<f64>() * total;
        let mut choice = w.len() - 1;
        for (i, &wi) in w.iter().enumerate() {
            if wi <= 0.0 {
                continue;
            }
            if x < wi {
                choice = i;
                break;
            }
            x -= wi;
        }
        // guard against rounding leaving us on an already-taken slot
        while w[choice] <= 0.0 {
            choice -= 1;
        }
        picked.push(choice);
        w[choice] = 0.0;
    }
    picked
}

type BehaviorWeights = ([Vec<u32>; 3], [Vec<f64>; 3]);

/// Eligible items per location and their popularity weights.
fn behavior_weights<T: Scalar>(truth: &GroundTruth, catalog: &ItemCatalog<T>) -> BehaviorWeights {
    let by_loc: [Vec<u32>; 3] =
        std::array::from_fn(|k| catalog.eligible(Step::from_index(k)).iter().copied().collect());
    let pop = std::array::from_fn(|k| {
        by_loc[k]
            .iter()
            .map(|&i| truth.items[(i - 1) as usize].popularity)
            .collect()
    });
    (by_loc, pop)
}

/// Fresh slates from the logging policy of the generator: per step, three
/// distinct eligible items drawn by popularity.
pub fn sample_behavior_slates<T: Scalar>(
    truth: &GroundTruth,
    catalog: &ItemCatalog<T>,
    n: usize,
    seed: u64,
) -> Vec<[u32; 9]> {
    let (by_loc, pop) = behavior_weights(truth, catalog);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut out = [0u32; 9];
            for k in 0..3 {
                for (j, idx) in sample_without_replacement(&mut rng, &pop[k], 3).into_iter().enumerate() {
                    out[3 * k + j] = by_loc[k][idx];
                }
            }
            out
        })
        .collect()
}

/// Generates a catalog, a session log and its ground truth. Deterministic in `config`.
pub fn generate_synthetic<T: Scalar>(config: &SyntheticConfig) -> Result<SyntheticCorpus<T>, IngestError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.latent_dim;

    // items: ids 1..=n, locations cycle 1,2,3 so each row gets n/3 items
    let feature_proj: Vec<Vec<f64>> = (0..NUM_CONTENT_FEATURES)
        .map(|_| normal_vec(&mut rng, d, 1.0 / (d as f64).sqrt()))
        .collect();
    let (plo, phi) = (config.price_range.0.ceil() as i64, config.price_range.1.floor() as i64);
    let mut records = Vec::with_capacity(config.num_items);
    let mut items = Vec::with_capacity(config.num_items);
    let mut prices = Vec::with_capacity(config.num_items);
    for i in 0..config.num_items {
        let item_id = i as u32 + 1;
        let embedding = normal_vec(&mut rng, d, 1.0);
        let price = rng.random_range(plo..=phi) as f64;
        let z: f64 = StandardNormal.sample(&mut rng);
        let popularity = (config.popularity_bias * z).exp();
        let mut content_features = [T::zero(); NUM_CONTENT_FEATURES];
        for (f, row) in content_features.iter_mut().zip(&feature_proj) {
            *f = T::of(round4(dot(row, &embedding)));
        }
        records.push(ItemRecord {
            item_id,
            content_features,
            price: T::of(price),
            location: Step::from_index(i % 3),
        });
        prices.push(price);
        items.push(ItemTruth {
            item_id,
            embedding,
            popularity,
        });
    }
    let catalog = ItemCatalog::from_items(records)?;

    let group_centers: Vec<Vec<f64>> = (0..config.num_groups)
        .map(|_| normal_vec(&mut rng, d, config.group_scale))
        .collect();
    let portrait_proj: Vec<Vec<f64>> = (0..NUM_PORTRAITS).map(|_| normal_vec(&mut rng, d, 1.0)).collect();
    let mut users = Vec::with_capacity(config.num_users);
    let mut portraits = Vec::with_capacity(config.num_users);
    for u in 0..config.num_users {
        let (group, latent) = if config.num_groups == 0 {
            (None, normal_vec(&mut rng, d, 1.0))
        } else {
            let g = u % config.num_groups;
            let noise = normal_vec(&mut rng, d, config.group_spread);
            (
                Some(g),
                group_centers[g].iter().zip(noise).map(|(c, n)| c + n).collect(),
            )
        };
        let mut p = [T::zero(); NUM_PORTRAITS];
        for (slot, row) in p.iter_mut().zip(&portrait_proj) {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *slot = T::of(round4(dot(row, &latent) + 0.1 * noise));
        }
        portraits.push(p);
        users.push(UserTruth {
            user_id: u as u64 + 1,
            group,
            latent,
        });
    }
    let truth = GroundTruth {
        config: config.clone(),
        prices,
        group_centers,
        items,
        users,
    };

    let (by_loc, pop) = behavior_weights(&truth, &catalog);

    let mut sessions = Vec::with_capacity(config.num_sessions);
    for s in 0..config.num_sessions {
        let user_id = rng.random_range(1..=config.num_users as u64);
        let latent = &truth.user(user_id).latent;
        let mut clicked_items = BTreeSet::new();
        for it in &truth.items {
            let p = config.click_rate * sigmoid(dot(latent, &it.embedding));
            if rng.random::<f64>() < p {
                clicked_items.insert(it.item_id);
            }
        }
        let mut exposed_slate = [0u32; 9];
        let mut purchase_labels = [false; 9];
        let mut open = true;
        for k in 0..3 {
            let picks = sample_without_replacement(&mut rng, &pop[k], 3);
            let mut all = true;
            for (j, &idx) in picks.iter().enumerate() {
                let item_id = by_loc[k][idx];
                exposed_slate[k * 3 + j] = item_id;
                let u: f64 = rng.random();
                let bought = open && u < truth.purchase_probability(user_id, item_id);
                purchase_labels[k * 3 + j] = bought;
                all &= bought;
            }
            open = open && all;
        }
        sessions.push(SessionRecord {
            user_id,
            clicked_items,
            portraits: portraits[(user_id - 1) as usize],
            exposed_slate,
            purchase_labels,
            timestamp: 1_600_000_000 + 60 * s as i64 + rng.random_range(0..60),
        });
    }

    Ok(SyntheticCorpus {
        catalog,
        sessions,
        truth,
    })
}
