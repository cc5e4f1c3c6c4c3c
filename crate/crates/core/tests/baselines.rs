mod common;

use common::{gd_least_squares, test_rng};
use rand::Rng as _;
use shadow_rating::baselines::{fit_linear, RIDGE};

#[test]
fn linear_matches_gradient_descent_oracle() {
    for seed in 0..5 {
        let mut r = test_rng(seed);
        let (n, d) = (50, 3);
        let x: Vec<f64> = (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(0.0..8.0)).collect();
        let fit = fit_linear(&x, d, &y).unwrap();
        let (w, b) = gd_least_squares(&x, d, &y, RIDGE);
        for j in 0..d {
            assert!(
                (fit.weights[j] - w[j]).abs() <= 1e-4,
                "w{j}: {} vs {}",
                fit.weights[j],
                w[j]
            );
        }
        assert!((fit.bias - b).abs() <= 1e-4);
    }
}

#[test]
fn residuals_orthogonal_to_columns() {
    let mut r = test_rng(21);
    let (n, d) = (200, 6);
    let x: Vec<f64> = (0..n * d).map(|_| r.random_range(0.0..1.0)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| x[i * d] * 3.0 + r.random_range(-1.0..1.0))
        .collect();
    let fit = fit_linear(&x, d, &y).unwrap();
    let resid: Vec<f64> = (0..n)
        .map(|i| y[i] - fit.predict_row(&x[i * d..(i + 1) * d]))
        .collect();
    // Stationarity: Xᵀr = λw and Σr = 0.
    for j in 0..d {
        let dot: f64 = (0..n).map(|i| x[i * d + j] * resid[i]).sum();
        assert!(
            (dot - RIDGE * fit.weights[j]).abs() <= 1e-6,
            "column {j}: {dot}"
        );
    }
    assert!(resid.iter().sum::<f64>().abs() <= 1e-6);
}
