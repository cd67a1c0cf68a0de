mod common;

use ndarray::{s, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::planted_sparse;
use slateq::features::{build_raw_features, fit_sparse_pca, transform, FeatureMatrix, SparsePcaConfig};
use slateq::ingest::{generate_synthetic, SyntheticConfig};

fn random_matrix(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, p), |(_, j)| rng.random_range(-1.0..1.0) * (1.0 + j as f64 * 0.3))
}

fn centered(mut x: Array2<f64>) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).unwrap();
    x -= &mean;
    x
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|j| b.contains(j)).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

#[test]
fn raw_features_lay_out_portraits_then_clicks() {
    let c = generate_synthetic::<f64>(&SyntheticConfig {
        num_items: 30,
        num_users: 50,
        num_sessions: 200,
        click_rate: 0.3,
        seed: 5,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let x = build_raw_features(&c.sessions, &c.catalog);
    assert_eq!(x.values.dim(), (200, 40));
    assert_eq!(x.n_scaled, 10);
    for (row, s) in x.values.rows().into_iter().zip(&c.sessions) {
        for j in 0..10 {
            assert_eq!(row[j], s.portraits[j]);
        }
        for (col, &item) in x.item_ids.iter().enumerate() {
            let want = if s.clicked_items.contains(&item) { 1.0 } else { 0.0 };
            assert_eq!(row[10 + col], want);
        }
    }
}

#[test]
fn planted_supports_are_recovered() {
    let (x, supports) = planted_sparse(1500, 120, 3, 8, 17);
    let m = FeatureMatrix::dense(x, 0);
    let fitted = fit_sparse_pca(
        &m,
        &SparsePcaConfig {
            k: 3,
            l1_penalty: 1.0,
            ..SparsePcaConfig::default()
        },
    )
    .unwrap();
    for (c, sup) in supports.iter().enumerate() {
        let found: Vec<usize> = (0..120).filter(|&j| fitted.loadings[[c, j]] != 0.0).collect();
        assert!(jaccard(&found, sup) >= 0.9, "component {c}: {found:?} vs {sup:?}");
    }
}

#[test]
fn zero_fraction_grows_with_penalty() {
    let (x, _) = planted_sparse(800, 60, 3, 6, 23);
    let m = FeatureMatrix::dense(x, 0);
    let mut last = -1.0;
    for l1 in [0.0, 0.05, 0.2, 0.5, 1.0, 3.0] {
        let fitted = fit_sparse_pca(
            &m,
            &SparsePcaConfig {
                k: 3,
                l1_penalty: l1,
                ..SparsePcaConfig::default()
            },
        )
        .unwrap();
        let z = fitted.zero_fraction();
        assert!(z >= last, "l1 {l1}: {z} < {last}");
        last = z;
    }
}

#[test]
fn dense_variance_is_non_increasing() {
    let x = random_matrix(300, 12, 8);
    let fitted = fit_sparse_pca(
        &FeatureMatrix::dense(x, 12),
        &SparsePcaConfig {
            k: 6,
            l1_penalty: 0.0,
            ..SparsePcaConfig::default()
        },
    )
    .unwrap();
    for w in fitted.explained_variance.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", fitted.explained_variance);
    }
}

#[test]
fn single_precision_fit_tracks_double() {
    let x = random_matrix(200, 8, 3);
    let cfg = SparsePcaConfig {
        k: 2,
        l1_penalty: 0.0,
        ..SparsePcaConfig::default()
    };
    let wide = fit_sparse_pca(&FeatureMatrix::dense(x.clone(), 8), &cfg).unwrap();
    let narrow = fit_sparse_pca(&FeatureMatrix::dense(x.mapv(|v| v as f32), 8), &cfg).unwrap();
    for c in 0..2 {
        let dot: f64 = (0..8)
            .map(|j| wide.loadings[[c, j]] * f64::from(narrow.loadings[[c, j]]))
            .sum();
        assert!(dot.abs() > 0.999, "component {c}: |cos| = {}", dot.abs());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn transform_is_linear_on_centered_data(
        seed in 0u64..500,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        l1 in prop::sample::select(vec![0.0, 0.1, 0.5]),
    ) {
        let x = centered(random_matrix(120, 7, seed));
        let m = FeatureMatrix::dense(x.clone(), 0);
        let fitted = fit_sparse_pca(&m, &SparsePcaConfig { k: 3, l1_penalty: l1, seed, ..SparsePcaConfig::default() })
            .unwrap();
        let x1 = x.slice(s![0..20, ..]).to_owned();
        let x2 = x.slice(s![20..40, ..]).to_owned();
        let combo = &x1 * a + &x2 * b;
        let lhs = transform(&FeatureMatrix::dense(combo, 0), &fitted).unwrap();
        let t1 = transform(&FeatureMatrix::dense(x1, 0), &fitted).unwrap();
        let t2 = transform(&FeatureMatrix::dense(x2, 0), &fitted).unwrap();
        let rhs = t1 * a + t2 * b;
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((l - r).abs() <= 1e-9 * (1.0 + r.abs()), "{} vs {}", l, r);
        }
    }

    #[test]
    fn batch_transform_equals_row_by_row(seed in 0u64..500, n_scaled in 0usize..=6) {
        let x = random_matrix(80, 6, seed);
        let m = FeatureMatrix::dense(x.clone(), n_scaled);
        let fitted = fit_sparse_pca(&m, &SparsePcaConfig { k: 2, l1_penalty: 0.05, ..SparsePcaConfig::default() })
            .unwrap();
        let batch = transform(&m, &fitted).unwrap();
        for i in 0..80 {
            let one = FeatureMatrix::dense(x.slice(s![i..i + 1, ..]).to_owned(), n_scaled);
            let row = transform(&one, &fitted).unwrap();
            prop_assert_eq!(row.row(0), batch.row(i));
        }
    }

    #[test]
    fn fit_is_reproducible(seed in 0u64..500) {
        let m = FeatureMatrix::dense(random_matrix(60, 9, seed), 9);
        let cfg = SparsePcaConfig { k: 3, l1_penalty: 0.2, seed, ..SparsePcaConfig::default() };
        prop_assert_eq!(fit_sparse_pca(&m, &cfg).unwrap(), fit_sparse_pca(&m, &cfg).unwrap());
    }
}
