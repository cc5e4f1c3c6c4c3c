//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance target.
#![allow(dead_code)]

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shadow_rating::explain::Background;
use shadow_rating::net::{Activation, Batch, NetSpec, Network};
use shadow_rating::preprocess::{FeatureGroup, FeatureMatrix, GroupInput};
use shadow_rating::rng::{self, Stream};

pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Kappa from explicit observed, expected and weight matrices.
pub fn brute_force_qwk(t: &[usize], p: &[usize], k: usize) -> f64 {
    let n = t.len() as f64;
    let mut o = vec![vec![0.0; k]; k];
    for (&a, &b) in t.iter().zip(p) {
        o[a][b] += 1.0;
    }
    let row: Vec<f64> = (0..k).map(|i| o[i].iter().sum()).collect();
    let col: Vec<f64> = (0..k).map(|j| (0..k).map(|i| o[i][j]).sum()).collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64) / (k as f64 - 1.0)).powi(2);
            let e = row[i] * col[j] / n;
            num += w * o[i][j];
            den += w * e;
        }
    }
    1.0 - num / den
}

/// Minimizes ‖y − Xw − b‖² + λ‖w‖² by plain gradient descent.
pub fn gd_least_squares(x: &[f64], n_cols: usize, y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let d = n_cols + 1;
    let aug = |r: usize, j: usize| if j == n_cols { 1.0 } else { x[r * n_cols + j] };
    // 2·trace(AᵀA) bounds the Lipschitz constant of the gradient.
    let trace: f64 = (0..n)
        .map(|r| (0..d).map(|j| aug(r, j).powi(2)).sum::<f64>())
        .sum();
    let step = 1.0 / (2.0 * (trace + lambda));
    let mut theta = vec![0.0; d];
    for _ in 0..2_000_000 {
        let mut grad = vec![0.0; d];
        for r in 0..n {
            let fit: f64 = (0..d).map(|j| aug(r, j) * theta[j]).sum();
            let res = y[r] - fit;
            for (j, g) in grad.iter_mut().enumerate() {
                *g -= 2.0 * aug(r, j) * res;
            }
        }
        for (g, t) in grad.iter_mut().zip(&theta).take(n_cols) {
            *g += 2.0 * lambda * t;
        }
        if grad.iter().all(|g| g.abs() < 1e-11) {
            break;
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= step * g;
        }
    }
    let b = theta[n_cols];
    theta.truncate(n_cols);
    (theta, b)
}

/// A random small network with a random batch; `max_params` bounds size.
pub struct NetCase {
    pub net: Network,
    pub n_rows: usize,
    pub dense: Vec<f64>,
    pub tokens: Vec<u32>,
}

impl NetCase {
    pub fn batch(&self) -> Batch<'_> {
        Batch {
            n_rows: self.n_rows,
            dense: &self.dense,
            tokens: &self.tokens,
        }
    }
}

pub fn random_net_case(seed: u64, max_params: usize) -> NetCase {
    let mut r = test_rng(seed);
    loop {
        let with_text = r.random_bool(0.7);
        let n_dense = r.random_range(1..=4);
        let (vocab_size, max_len, embed_dim) = if with_text {
            (
                r.random_range(2..=6),
                r.random_range(1..=3),
                r.random_range(1..=3),
            )
        } else {
            (0, 0, 0)
        };
        let depth = r.random_range(0..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| r.random_range(2..=8)).collect();
        let activation =
            [Activation::Relu, Activation::Sigmoid, Activation::Identity][r.random_range(0..3)];
        let spec = NetSpec {
            n_dense,
            vocab_size,
            max_len,
            embed_dim,
            hidden,
            activation,
            dropout: r.random_range(0.0..0.5),
            spatial_dropout: r.random_range(0.0..0.5),
        };
        if spec.n_params() > max_params {
            continue;
        }
        let mut init = rng::stream(seed, Stream::Init);
        let mut net = Network::new(spec, &mut init).expect("valid spec");
        // Non-zero biases so that every parameter matters.
        for l in &mut net.params_mut().layers {
            for b in &mut l.bias {
                *b = r.random_range(-0.3..0.3);
            }
        }
        let n_rows = r.random_range(1..=5);
        let dense = (0..n_rows * n_dense)
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        let tokens = (0..n_rows * max_len)
            .map(|_| r.random_range(0..vocab_size.max(1)) as u32)
            .collect();
        return NetCase {
            net,
            n_rows,
            dense,
            tokens,
        };
    }
}

/// Relative errors are taken against max(|analytic|, |numeric|, this floor).
pub const GRAD_SCALE_FLOOR: f64 = 1e-4;

/// Largest relative error between backprop and central differences of
/// L = Σ cᵢ·predᵢ (step 1e-5·max(1, |w|)), with the dropout masks held
/// fixed by re-seeding.
pub fn gradient_check(case: &NetCase, seed: u64) -> f64 {
    let mut r = test_rng(seed ^ 0x5eed);
    let c: Vec<f64> = (0..case.n_rows)
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    let loss = |net: &Network| -> f64 {
        let mut drop = rng::stream(seed, Stream::Dropout);
        let (pred, _) = net.forward_train(case.batch(), &mut drop).unwrap();
        pred.iter().zip(&c).map(|(p, ci)| p * ci).sum()
    };
    let mut drop = rng::stream(seed, Stream::Dropout);
    let (_, trace) = case.net.forward_train(case.batch(), &mut drop).unwrap();
    let analytic = case.net.backward(&trace, &c).unwrap();
    let analytic: Vec<f64> = analytic.iter().collect();

    let mut worst: f64 = 0.0;
    let mut net = case.net.clone();
    let n = analytic.len();
    for k in 0..n {
        let original = nth_param(&net, k);
        let h = 1e-5 * original.abs().max(1.0);
        set_nth_param(&mut net, k, original + h);
        let up = loss(&net);
        set_nth_param(&mut net, k, original - h);
        let down = loss(&net);
        set_nth_param(&mut net, k, original);
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[k];
        let scale = a.abs().max(numeric.abs()).max(GRAD_SCALE_FLOOR);
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}

fn nth_param(net: &Network, k: usize) -> f64 {
    let mut k = k;
    for s in net.params().slices() {
        if k < s.len() {
            return s[k];
        }
        k -= s.len();
    }
    panic!("parameter index out of range");
}

fn set_nth_param(net: &mut Network, k: usize, value: f64) {
    let mut k = k;
    for s in net.params_mut().slices_mut() {
        if k < s.len() {
            s[k] = value;
            return;
        }
        k -= s.len();
    }
    panic!("parameter index out of range");
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &t in &idx[i..=j] {
                r[t] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Kolmogorov–Smirnov distance between the sample and U(0, 1).
pub fn ks_uniform(mut u: Vec<f64>) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}

/// Random rows for a network with `n_dense` dense inputs and, if
/// `max_len > 0`, a token group.
pub fn random_matrix(
    n_rows: usize,
    n_dense: usize,
    max_len: usize,
    vocab: usize,
    seed: u64,
) -> FeatureMatrix {
    let mut r = test_rng(seed);
    let mut groups: Vec<FeatureGroup> = (0..n_dense)
        .map(|j| FeatureGroup {
            name: format!("x{j}"),
            input: GroupInput::Dense { start: j, len: 1 },
        })
        .collect();
    if max_len > 0 {
        groups.push(FeatureGroup {
            name: "sector".into(),
            input: GroupInput::Tokens,
        });
    }
    let n_groups = groups.len();
    FeatureMatrix {
        n_rows,
        n_dense,
        dense: (0..n_rows * n_dense)
            .map(|_| r.random_range(0.0..1.0))
            .collect(),
        max_len,
        token_seqs: (0..n_rows * max_len)
            .map(|_| r.random_range(0..vocab) as u32)
            .collect(),
        dense_names: (0..n_dense).map(|j| format!("x{j}")).collect(),
        groups,
        imputed: vec![false; n_rows * n_groups],
    }
}

/// An 8-group network: either 8 dense inputs, or 7 plus a token sequence.
pub fn eight_feature_case(seed: u64) -> (Network, FeatureMatrix, Background) {
    let with_text = seed % 2 == 1;
    let (n_dense, max_len, vocab) = if with_text { (7, 3, 6) } else { (8, 0, 0) };
    let spec = NetSpec {
        n_dense,
        vocab_size: vocab,
        max_len,
        embed_dim: if with_text { 4 } else { 0 },
        hidden: vec![16, 8],
        activation: if seed.is_multiple_of(3) {
            Activation::Sigmoid
        } else {
            Activation::Relu
        },
        dropout: 0.0,
        spatial_dropout: 0.0,
    };
    let mut net = Network::new(spec, &mut rng::stream(seed, Stream::Init)).unwrap();
    // Larger embeddings so the text group matters.
    for e in &mut net.params_mut().embedding {
        *e *= 20.0;
    }
    let x = random_matrix(4, n_dense, max_len, vocab.max(1), seed);
    let bg = Background::new(random_matrix(
        16,
        n_dense,
        max_len,
        vocab.max(1),
        seed + 1000,
    ))
    .unwrap();
    (net, x, bg)
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|p| p.abs()).fold(0.0, f64::max)
}

/// `count` random non-degenerate label pairs with 2..=9 classes.
pub fn random_label_cases(count: usize, seed: u64) -> Vec<(Vec<usize>, Vec<usize>, usize)> {
    let mut r = test_rng(seed);
    let mut cases = Vec::with_capacity(count);
    while cases.len() < count {
        let k = r.random_range(2..=9);
        let n = r.random_range(2..=300);
        let t: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let p: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let constant = |v: &[usize]| v.iter().all(|&x| x == v[0]);
        if constant(&t) && constant(&p) {
            continue;
        }
        cases.push((t, p, k));
    }
    cases
}
