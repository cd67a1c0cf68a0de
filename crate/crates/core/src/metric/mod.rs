//! Weighted revenue score of a recommendation policy on logged sessions,
//! holdout splitting and grid search.

mod tune;

pub use tune::{tune, GridCell, GridOutcome, TuneGrid, TuneResult};

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ItemCatalog, SessionRecord};
use crate::scalar::Scalar;
use crate::slate::Step;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("{sessions} sessions but {recommendations} recommendations")]
    MissingRecommendation { sessions: usize, recommendations: usize },
    #[error("cannot score an empty session set")]
    NoSessions,
    #[error("invalid step weights {0:?}: need three finite nonnegative values, at least one positive")]
    InvalidWeights([f64; 3]),
    #[error("train fraction must be in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("need at least 2 sessions to split, got {0}")]
    TooFewSessions(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub step_weights: [f64; 3],
    /// Keep each session's weighted contribution in the report.
    #[serde(default)]
    pub keep_per_session: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            step_weights: [1.0, 2.0, 3.0],
            keep_per_session: false,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        let w = self.step_weights;
        let ok = w.iter().all(|x| x.is_finite() && *x >= 0.0) && w.iter().any(|&x| x > 0.0);
        if ok {
            Ok(())
        } else {
            Err(MetricError::InvalidWeights(w))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ScoreReport<T> {
    pub score: T,
    /// Unweighted revenue per step, summed over sessions.
    pub per_step_value: [T; 3],
    pub n_sessions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_session: Option<Vec<T>>,
}

impl<T: Scalar> fmt::Display for ScoreReport<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c] = self.per_step_value;
        write!(
            f,
            "score {} over {} sessions (step values {a} / {b} / {c})",
            self.score, self.n_sessions
        )
    }
}

/// Revenue per step credited to one recommendation for one session: items
/// of the step-`s` slate that sit at location `s` and that the session
/// bought anywhere in its log.
pub fn session_values<T: Scalar>(rec: &[u32; 9], session: &SessionRecord<T>, catalog: &ItemCatalog<T>) -> [T; 3] {
    let bought: Vec<u32> = session.purchased().collect();
    let mut out = [T::zero(); 3];
    for step in Step::ALL {
        let k = step.index();
        for &item in &rec[3 * k..3 * k + 3] {
            if catalog.location(item) == Some(step) && bought.contains(&item) {
                out[k] += catalog.price(item).expect("item has a location");
            }
        }
    }
    out
}

/// Scores `recommendations[i]` against `sessions[i]`.
pub fn score<T: Scalar>(
    recommendations: &[[u32; 9]],
    sessions: &[SessionRecord<T>],
    catalog: &ItemCatalog<T>,
    cfg: &MetricConfig,
) -> Result<ScoreReport<T>, MetricError> {
    cfg.validate()?;
    if sessions.is_empty() {
        return Err(MetricError::NoSessions);
    }
    if recommendations.len() != sessions.len() {
        return Err(MetricError::MissingRecommendation {
            sessions: sessions.len(),
            recommendations: recommendations.len(),
        });
    }
    let w = cfg.step_weights.map(T::of);
    let values: Vec<[T; 3]> = recommendations
        .par_iter()
        .zip(sessions)
        .map(|(r, s)| session_values(r, s, catalog))
        .collect();

    let mut per_step_value = [T::zero(); 3];
    for v in &values {
        for k in 0..3 {
            per_step_value[k] += v[k];
        }
    }
    let n = T::from_usize(sessions.len()).unwrap();
    let weighted = (0..3).fold(T::zero(), |acc, k| acc + w[k] * per_step_value[k]);
    let per_session = cfg.keep_per_session.then(|| {
        values
            .iter()
            .map(|v| (0..3).fold(T::zero(), |a, k| a + w[k] * v[k]))
            .collect()
    });
    Ok(ScoreReport {
        score: weighted / n,
        per_step_value,
        n_sessions: sessions.len(),
        per_session,
    })
}

/// Each session's own exposed slate, i.e. what the logging policy showed.
pub fn logged_recommendations<T>(sessions: &[SessionRecord<T>]) -> Vec<[u32; 9]> {
    sessions.iter().map(|s| s.exposed_slate).collect()
}

/// Seeded shuffle of `0..n` cut into train and validation indices.
pub fn holdout_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), MetricError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(MetricError::InvalidFraction(train_fraction));
    }
    if n < 2 {
        return Err(MetricError::TooFewSessions(n));
    }
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let validation = idx.split_off(n_train);
    Ok((idx, validation))
}

pub fn holdout_split<S: Clone>(
    sessions: &[S],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<S>, Vec<S>), MetricError> {
    let (tr, va) = holdout_indices(sessions.len(), train_fraction, seed)?;
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| sessions[i].clone()).collect();
    Ok((pick(tr), pick(va)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_items;
    use std::collections::BTreeSet;

    fn catalog() -> ItemCatalog<f64> {
        let mut text = String::new();
        for id in 1..=12u32 {
            let loc = (id - 1) / 4 + 1;
            text.push_str(&format!("{id} 0,0,0,0,0 {id} {loc}\n"));
        }
        parse_items(&text).unwrap()
    }

    fn session(slate: [u32; 9], labels: [bool; 9]) -> SessionRecord<f64> {
        SessionRecord {
            user_id: 1,
            clicked_items: BTreeSet::new(),
            portraits: [0.0; 10],
            exposed_slate: slate,
            purchase_labels: labels,
            timestamp: 0,
        }
    }

    #[test]
    fn weighted_example() {
        let mut text = String::new();
        for (id, price, loc) in [
            (1, 5, 1),
            (2, 1, 1),
            (3, 1, 1),
            (4, 4, 2),
            (5, 1, 2),
            (6, 1, 2),
            (7, 1, 3),
            (8, 1, 3),
            (9, 1, 3),
        ] {
            text.push_str(&format!("{id} 0,0,0,0,0 {price} {loc}\n"));
        }
        let cat: ItemCatalog<f64> = parse_items(&text).unwrap();
        let s = session(
            [1, 2, 3, 4, 5, 6, 7, 8, 9],
            [true, false, false, true, false, false, false, false, false],
        );
        let r = score(&[[1, 2, 3, 4, 5, 6, 7, 8, 9]], &[s], &cat, &MetricConfig::default()).unwrap();
        assert_eq!(r.score, 13.0);
        assert_eq!(r.per_step_value, [5.0, 4.0, 0.0]);
    }

    #[test]
    fn disjoint_is_zero_and_wrong_location_is_zero() {
        let cat = catalog();
        let s = session([1, 2, 3, 5, 6, 7, 9, 10, 11], [true; 9]);
        let r = score(
            &[[4, 2, 3, 8, 6, 7, 12, 10, 11]],
            std::slice::from_ref(&s),
            &cat,
            &MetricConfig::default(),
        );
        assert!(r.unwrap().score > 0.0);
        let r = score(
            &[[4, 4, 4, 8, 8, 8, 12, 12, 12]],
            std::slice::from_ref(&s),
            &cat,
            &MetricConfig::default(),
        );
        assert_eq!(r.unwrap().score, 0.0);
        // bought step-2 item 5 recommended at step 1
        let r = score(&[[5, 4, 4, 8, 8, 8, 12, 12, 12]], &[s], &cat, &MetricConfig::default());
        assert_eq!(r.unwrap().score, 0.0);
    }

    #[test]
    fn errors() {
        let cat = catalog();
        let s = session([1, 2, 3, 5, 6, 7, 9, 10, 11], [false; 9]);
        let cfg = MetricConfig::default();
        assert_eq!(score(&[], &[], &cat, &cfg), Err(MetricError::NoSessions));
        assert!(matches!(
            score(&[], &[s.clone()], &cat, &cfg),
            Err(MetricError::MissingRecommendation { .. })
        ));
        let bad = MetricConfig {
            step_weights: [0.0, 0.0, 0.0],
            ..cfg
        };
        assert!(matches!(
            score(&[s.exposed_slate], &[s], &cat, &bad),
            Err(MetricError::InvalidWeights(_))
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (a, b) = holdout_indices(10, 0.8, 1).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        assert_eq!(holdout_indices(10, 0.8, 1).unwrap(), (a.clone(), b.clone()));
        let (c, d) = holdout_indices(10, 0.8, 2).unwrap();
        assert_eq!((c.len(), d.len()), (8, 2));
        assert_ne!((a, b), (c, d));
        assert_eq!(holdout_indices(1, 0.5, 0), Err(MetricError::TooFewSessions(1)));
        assert_eq!(holdout_indices(5, 1.0, 0), Err(MetricError::InvalidFraction(1.0)));
        assert_eq!(holdout_indices(2, 0.99, 0).unwrap().1.len(), 1);
    }
}
