#![allow(dead_code)]

use netsir::model::{EpidemicState, NetworkModel};
use netsir::numerics::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random model satisfying the assumptions at `h = 1`: row rates and healing
/// totals at most one, some contacts switched off, `c` in (0.05, 1].
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, m: usize) -> NetworkModel {
    random_model_with_budget(rng, n, m, 1.0, 1.0)
}

/// As [`random_model`] with per-node totals `sum_k sum_j beta <= beta_budget`
/// and `sum_k gamma <= gamma_budget`.
pub fn random_model_with_budget(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    beta_budget: f64,
    gamma_budget: f64,
) -> NetworkModel {
    let mut raw: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|_| {
            (0..n)
                .map(|_| {
                    (0..n)
                        .map(|_| if rng.random_bool(0.25) { 0.0 } else { rng.random::<f64>() })
                        .collect()
                })
                .collect()
        })
        .collect();
    for i in 0..n {
        let total: f64 = raw.iter().map(|b| b[i].iter().sum::<f64>()).sum();
        let target = beta_budget * rng.random_range(0.05..1.0);
        if total > 0.0 {
            for b in raw.iter_mut() {
                for v in b[i].iter_mut() {
                    *v *= target / total;
                }
            }
        }
    }
    let mut gamma = vec![vec![0.0; n]; m];
    for i in 0..n {
        let weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let budget = gamma_budget * rng.random_range(0.05..1.0);
        for k in 0..m {
            gamma[k][i] = budget * weights[k] / total;
        }
    }
    let c = (0..m)
        .map(|_| (0..n).map(|_| rng.random_range(0.05..=1.0)).collect())
        .collect();
    let beta = raw
        .iter()
        .map(|b| DenseMatrix::from_rows(b).unwrap())
        .collect();
    let labels = (0..n).map(|i| format!("N{i}")).collect();
    NetworkModel::new(beta, gamma, c, 1.0, labels).unwrap()
}

/// Random initial state on the simplex with some recovered mass.
pub fn random_state(rng: &mut ChaCha8Rng, n: usize, m: usize) -> EpidemicState {
    let mut x = vec![vec![0.0; n]; m];
    let mut r = vec![0.0; n];
    for i in 0..n {
        let infected = rng.random_range(0.0..0.5);
        let weights: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = weights.iter().sum();
        for k in 0..m {
            x[k][i] = infected * weights[k] / total;
        }
        r[i] = rng.random_range(0.0..0.3);
    }
    EpidemicState::from_infections(x, Some(r))
}

pub fn random_instance(seed: u64) -> (NetworkModel, EpidemicState) {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=3);
    let model = random_model(&mut rng, n, m);
    let state = random_state(&mut rng, n, m);
    (model, state)
}

pub fn random_nonnegative(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n, n, |_, _| {
        if rng.random_bool(0.2) {
            0.0
        } else {
            rng.random::<f64>()
        }
    })
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let a = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    DenseMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}

/// Nonnegative matrix scaled to a given spectral radius bound via its max
/// row sum.
pub fn random_stable_nonnegative(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> DenseMatrix {
    let a = random_nonnegative(rng, n);
    let max_row = a.row_sums().into_iter().fold(0.0, f64::max).max(1e-12);
    a.scale(bound / max_row)
}
