//! Stacked observability matrices for the aggregated output
//! `y = sum_k C^k x^k` over a window of `m` steps.
//!
//! Column block `k` of the matrix is
//! `[C^k; C^k M~^k[t]; C^k M~^k[t+1] M~^k[t]; ...]`, i.e. the map from
//! `x^k[t]` to the contribution of virus `k` to `y[t], ..., y[t+m-1]` for a
//! frozen susceptible trajectory. At the all-recovered state (`s = 0`) the
//! products reduce to powers of `I - h Gamma^k`.

use thiserror::Error;

use crate::model::{EpidemicState, ModelError, NetworkModel};
use crate::numerics::{rank, DenseMatrix, NumericsError, RANK_TOL};

/// `|gamma^k_i - gamma^j_i|` below this is flagged as ill-conditioned.
pub const NEAR_EQUAL_GAMMA: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ObservabilityError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("window needs {expected} states, got {actual}")]
    WindowLength { expected: usize, actual: usize },
}

/// Susceptible levels over the observation window.
#[derive(Debug, Clone, Copy)]
pub enum Window<'a> {
    /// `s = 0` at every node.
    AllRecovered,
    /// States at `t, ..., t + m - 2` (`m` viruses); only `s` is used.
    States(&'a [EpidemicState]),
}

/// `mn x n` block for virus `k`.
pub fn build_o_block(model: &NetworkModel, k: usize, window: Window<'_>) -> Result<DenseMatrix, ObservabilityError> {
    model.check_virus(k)?;
    let (n, m) = (model.nodes(), model.viruses());
    let zeros = vec![0.0; n];
    let susceptible: Vec<&[f64]> = match window {
        Window::AllRecovered => vec![zeros.as_slice(); m - 1],
        Window::States(states) => {
            if states.len() != m - 1 {
                return Err(ObservabilityError::WindowLength {
                    expected: m - 1,
                    actual: states.len(),
                });
            }
            for st in states {
                if st.s.len() != n {
                    return Err(ModelError::Dimension {
                        what: "window state s".into(),
                        expected: n,
                        actual: st.s.len(),
                    }
                    .into());
                }
            }
            states.iter().map(|st| st.s.as_slice()).collect()
        }
    };
    let c = model.output_matrix(k);
    let mut out = DenseMatrix::zeros(m * n, n);
    let mut product = DenseMatrix::identity(n);
    out.set_block(0, 0, &c);
    for (l, s) in susceptible.iter().enumerate() {
        product = model.transition_matrix_with(k, s, model.gamma(k)).matmul(&product)?;
        out.set_block((l + 1) * n, 0, &c.matmul(&product)?);
    }
    Ok(out)
}

/// `[O^1 ... O^m]`, an `mn x mn` matrix.
pub fn observability_matrix(model: &NetworkModel, window: Window<'_>) -> Result<DenseMatrix, ObservabilityError> {
    let (n, m) = (model.nodes(), model.viruses());
    let mut out = DenseMatrix::zeros(m * n, m * n);
    for k in 0..m {
        out.set_block(0, k * n, &build_o_block(model, k, window)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NearEqualGamma {
    pub node: usize,
    pub viruses: (usize, usize),
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub matrix_dim: (usize, usize),
    pub numerical_rank: usize,
    pub full_rank: bool,
    /// Whether the healing rates at each node are pairwise distinct across viruses.
    pub distinct_gamma: Vec<bool>,
    pub offending_nodes: Vec<usize>,
    pub near_equal: Vec<NearEqualGamma>,
    pub matrix: DenseMatrix,
}

/// Rank test at the all-recovered state, together with the per-node
/// distinct-healing-rate condition that guarantees it.
pub fn observability_at_zero(model: &NetworkModel) -> Result<ObservabilityReport, ObservabilityError> {
    let (n, m) = (model.nodes(), model.viruses());
    let matrix = observability_matrix(model, Window::AllRecovered)?;
    let numerical_rank = rank(&matrix, RANK_TOL)?;
    let mut distinct_gamma = vec![true; n];
    let mut near_equal = Vec::new();
    for (i, distinct) in distinct_gamma.iter_mut().enumerate() {
        for a in 0..m {
            for b in (a + 1)..m {
                let difference = (model.gamma(a)[i] - model.gamma(b)[i]).abs();
                if difference == 0.0 {
                    *distinct = false;
                } else if difference < NEAR_EQUAL_GAMMA {
                    near_equal.push(NearEqualGamma {
                        node: i,
                        viruses: (a, b),
                        difference,
                    });
                }
            }
        }
    }
    let offending_nodes = (0..n).filter(|&i| !distinct_gamma[i]).collect();
    Ok(ObservabilityReport {
        matrix_dim: (m * n, m * n),
        numerical_rank,
        full_rank: numerical_rank == m * n,
        distinct_gamma,
        offending_nodes,
        near_equal,
        matrix,
    })
}
