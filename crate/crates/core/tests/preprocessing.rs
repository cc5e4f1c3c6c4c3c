mod common;

use common::{ks_uniform, test_rng};
use proptest::prelude::*;
use rand::Rng as _;
use shadow_rating::ingest::{generate_synthetic, SynthSpec};
use shadow_rating::preprocess::{FittedPipeline, QuantileMap, TextEncoding};

#[test]
fn transformed_training_columns_are_uniform() {
    let data = generate_synthetic(&SynthSpec {
        n_rows: 3000,
        seed: 4,
        ..SynthSpec::default()
    })
    .unwrap();
    let p = FittedPipeline::fit(&data, TextEncoding::Embedding, "all").unwrap();
    let x = p.transform(&data).unwrap();
    for j in 0..data.schema().n_numeric() {
        let u: Vec<f64> = (0..x.n_rows)
            .filter(|&i| data.rows()[i].numeric[j].is_some())
            .map(|i| x.dense_row(i)[j])
            .collect();
        let n = u.len() as f64;
        let d = ks_uniform(u);
        assert!(d <= 2.0 / n.sqrt(), "column {j}: {d}");
    }
}

#[test]
fn out_of_range_values_clamp_exactly() {
    let mut r = test_rng(8);
    for _ in 0..50 {
        let v: Vec<f64> = (0..r.random_range(1..200))
            .map(|_| r.random_range(-10.0..10.0))
            .collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let q = QuantileMap::fit(v);
        assert_eq!(q.transform(lo - 1e-9), 0.0);
        assert_eq!(q.transform(lo - 1e6), 0.0);
        assert_eq!(q.transform(hi + 1e-9), 1.0);
        assert_eq!(q.transform(f64::INFINITY), 1.0);
    }
}

proptest! {
    #[test]
    fn distinct_samples_pass_the_ks_bound(
        raw in prop::collection::hash_set(-1_000_000i64..1_000_000, 2..400)
    ) {
        let v: Vec<f64> = raw.into_iter().map(|x| x as f64 / 7.0).collect();
        let n = v.len() as f64;
        let q = QuantileMap::fit(v.clone());
        let u: Vec<f64> = v.iter().map(|&x| q.transform(x)).collect();
        prop_assert!(u.iter().all(|t| (0.0..=1.0).contains(t)));
        prop_assert!(ks_uniform(u) <= 2.0 / n.sqrt());
    }
}
