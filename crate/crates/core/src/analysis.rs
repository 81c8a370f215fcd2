//! Eradication certificates for individual viruses.
//!
//! `M^k = I - h Gamma^k + h B^k` is the linearization at the all-susceptible
//! state; `M~^k[t] = I + h (S[t] B^k - Gamma^k)` is the time-varying
//! transition matrix along a trajectory. When `rho(M^k) < 1` a diagonal
//! `P > 0` with `M^T P M - P < 0` exists and gives an explicit exponential
//! rate `sqrt(1 - sigma3 / sigma2)`.

use thiserror::Error;

use crate::model::{EpidemicState, ModelError, NetworkModel, Trajectory};
use crate::numerics::{self, lu_solve, spectral_radius, DenseMatrix, NumericsError, EIGEN_TOL};
use crate::synthesis::{minimize_max_eigenvalue, AffineSymmetricMap, DescentOptions};

/// Relative definiteness margin demanded of `M^T P M - P`.
pub const LYAPUNOV_MARGIN: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("no diagonal Lyapunov matrix found for a Schur-stable matrix (rho = {rho})")]
    LyapunovConstruction { rho: f64 },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("matrix must be nonnegative for a diagonal Lyapunov certificate")]
    NotNonnegative,
}

/// `M^k = I - h Gamma^k + h B^k`.
pub fn build_m(model: &NetworkModel, k: usize) -> Result<DenseMatrix, ModelError> {
    model.check_virus(k)?;
    let ones = vec![1.0; model.nodes()];
    Ok(model.transition_matrix_with(k, &ones, model.gamma(k)))
}

/// `M~^k[t] = I + h (S[t] B^k - Gamma^k)` at the given state.
pub fn build_m_tilde(model: &NetworkModel, k: usize, state: &EpidemicState) -> Result<DenseMatrix, ModelError> {
    model.check_virus(k)?;
    if state.s.len() != model.nodes() {
        return Err(ModelError::Dimension {
            what: "state s".into(),
            expected: model.nodes(),
            actual: state.s.len(),
        });
    }
    Ok(model.transition_matrix_with(k, &state.s, model.gamma(k)))
}

/// Diagonal Lyapunov matrix for a nonnegative Schur-stable matrix together
/// with the constants that bound the decay rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalLyapunov {
    pub p: Vec<f64>,
    /// `lambda_min(P)`
    pub sigma1: f64,
    /// `lambda_max(P)`
    pub sigma2: f64,
    /// `lambda_min(P - M^T P M)`
    pub sigma3: f64,
    pub rate_bound: f64,
    /// `lambda_max(M^T P M - P)`
    pub decrease_max_eigenvalue: f64,
    pub from_search: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate {
    pub virus: usize,
    pub rho_m: f64,
    pub schur_stable: bool,
    /// Present exactly when `schur_stable`.
    pub lyapunov: Option<DiagonalLyapunov>,
}

impl StabilityCertificate {
    pub fn rate_bound(&self) -> Option<f64> {
        self.lyapunov.as_ref().map(|l| l.rate_bound)
    }
}

fn lyapunov_decrease(m: &DenseMatrix, p: &[f64]) -> Result<DenseMatrix, NumericsError> {
    let pm = DenseMatrix::from_diag(p).matmul(m)?;
    m.transpose().matmul(&pm)?.sub(&DenseMatrix::from_diag(p))
}

/// Evaluates a candidate diagonal `P`, returning it with its constants when
/// it certifies `M^T P M - P <= -margin * lambda_max(P)`.
fn check_candidate(m: &DenseMatrix, p: Vec<f64>, from_search: bool) -> Result<Option<DiagonalLyapunov>, NumericsError> {
    if p.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Ok(None);
    }
    let decrease = lyapunov_decrease(m, &p)?;
    let eig = numerics::symmetric_eigen(&decrease)?;
    let sigma1 = p.iter().copied().fold(f64::INFINITY, f64::min);
    let sigma2 = p.iter().copied().fold(0.0, f64::max);
    if eig.max() > -LYAPUNOV_MARGIN * sigma2 {
        return Ok(None);
    }
    let sigma3 = -eig.max();
    let rate_bound = (1.0 - sigma3 / sigma2).max(0.0).sqrt();
    Ok(Some(DiagonalLyapunov {
        p,
        sigma1,
        sigma2,
        sigma3,
        rate_bound,
        decrease_max_eigenvalue: eig.max(),
        from_search,
    }))
}

/// Closed-form candidate `P = diag(eta_i / xi_i)` with
/// `xi = (I - M)^{-1} 1` and `eta = (I - M^T)^{-1} 1`.
fn closed_form_candidate(m: &DenseMatrix) -> Result<Vec<f64>, NumericsError> {
    let n = m.rows();
    let i_minus_m = DenseMatrix::identity(n).sub(m)?;
    let ones = DenseMatrix::new(n, 1, vec![1.0; n])?;
    let xi = lu_solve(&i_minus_m, &ones)?;
    let eta = lu_solve(&i_minus_m.transpose(), &ones)?;
    Ok((0..n).map(|i| eta[(i, 0)] / xi[(i, 0)]).collect())
}

/// Searches for a diagonal `P` with `0 < P <= I` by minimizing the largest
/// eigenvalue of `diag(M^T P M - P + d I, d I - P, P - I)`.
pub fn diagonal_lyapunov_by_search(m: &DenseMatrix, max_iterations: usize) -> Result<Option<DiagonalLyapunov>, NumericsError> {
    m.require_square()?;
    let n = m.rows();
    let d = LYAPUNOV_MARGIN;
    let size = 3 * n;
    let mut base = DenseMatrix::zeros(size, size);
    for i in 0..n {
        base[(i, i)] = d;
        base[(n + i, n + i)] = d;
        base[(2 * n + i, 2 * n + i)] = -1.0;
    }
    let basis = (0..n)
        .map(|j| {
            let mut unit = vec![0.0; n];
            unit[j] = 1.0;
            let mut a = DenseMatrix::zeros(size, size);
            a.set_block(0, 0, &lyapunov_decrease(m, &unit)?);
            a[(n + j, n + j)] = -1.0;
            a[(2 * n + j, 2 * n + j)] = 1.0;
            Ok(a)
        })
        .collect::<Result<Vec<_>, NumericsError>>()?;
    let map = AffineSymmetricMap::new(base, basis)?;
    let outcome = minimize_max_eigenvalue(
        &map,
        &vec![0.5; n],
        &DescentOptions {
            max_iterations,
            ..DescentOptions::default()
        },
    )?;
    if !outcome.reached {
        return Ok(None);
    }
    check_candidate(m, outcome.z, true)
}

/// Diagonal Lyapunov certificate for a nonnegative matrix with `rho < 1`.
/// Tries the closed form first and falls back to a numerical search.
pub fn diagonal_lyapunov(m: &DenseMatrix) -> Result<DiagonalLyapunov, AnalysisError> {
    if !m.is_nonnegative() {
        return Err(AnalysisError::NotNonnegative);
    }
    let rho = spectral_radius(m, EIGEN_TOL)?.spectral_radius;
    if let Ok(p) = closed_form_candidate(m) {
        if let Some(cert) = check_candidate(m, p, false)? {
            return Ok(cert);
        }
    }
    diagonal_lyapunov_by_search(m, 50_000)?.ok_or(AnalysisError::LyapunovConstruction { rho })
}

/// Computes `rho(M^k)` and, when it is below one, a diagonal Lyapunov
/// certificate with the resulting rate bound.
pub fn eradication_certificate(model: &NetworkModel, k: usize) -> Result<StabilityCertificate, AnalysisError> {
    let m = build_m(model, k)?;
    let rho_m = spectral_radius(&m, EIGEN_TOL)?.spectral_radius;
    let schur_stable = rho_m < 1.0;
    let lyapunov = if schur_stable {
        Some(diagonal_lyapunov(&m)?)
    } else {
        None
    };
    Ok(StabilityCertificate {
        virus: k,
        rho_m,
        schur_stable,
        lyapunov,
    })
}

/// `rho(M~^k[t])` along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveReproductionTrace {
    pub virus: usize,
    pub rho: Vec<f64>,
    /// `1 - rho` per time index.
    pub epsilon: Vec<f64>,
    pub min_epsilon: f64,
    /// First time index with `rho <= 1`.
    pub threshold_crossing: Option<usize>,
}

pub fn effective_r_trace(model: &NetworkModel, trajectory: &Trajectory, k: usize) -> Result<EffectiveReproductionTrace, AnalysisError> {
    if trajectory.is_empty() {
        return Err(AnalysisError::EmptyTrajectory);
    }
    let rho = trajectory
        .states
        .iter()
        .map(|state| {
            let m = build_m_tilde(model, k, state)?;
            Ok(spectral_radius(&m, EIGEN_TOL)?.spectral_radius)
        })
        .collect::<Result<Vec<f64>, AnalysisError>>()?;
    let epsilon: Vec<f64> = rho.iter().map(|r| 1.0 - r).collect();
    let min_epsilon = epsilon.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold_crossing = rho.iter().position(|&r| r <= 1.0);
    Ok(EffectiveReproductionTrace {
        virus: k,
        rho,
        epsilon,
        min_epsilon,
        threshold_crossing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::symmetric_eigenvalues;

    fn scalar(beta: f64, gamma: f64) -> NetworkModel {
        NetworkModel::new(
            vec![DenseMatrix::from_diag(&[beta])],
            vec![vec![gamma]],
            vec![vec![1.0]],
            1.0,
            vec!["A".into()],
        )
        .unwrap()
    }

    #[test]
    fn scalar_m_assembly() {
        assert!((build_m(&scalar(0.5, 0.2), 0).unwrap()[(0, 0)] - 1.3).abs() < 1e-15);
        assert!((build_m(&scalar(0.1, 0.2), 0).unwrap()[(0, 0)] - 0.9).abs() < 1e-15);
        assert!(build_m(&scalar(0.1, 0.2), 1).is_err());
    }

    #[test]
    fn scalar_certificate_rate_equals_rho() {
        let cert = eradication_certificate(&scalar(0.1, 0.2), 0).unwrap();
        assert!(cert.schur_stable);
        let l = cert.lyapunov.unwrap();
        assert!((l.p[0] - 1.0).abs() < 1e-12);
        assert!((l.sigma2 - 1.0).abs() < 1e-12);
        assert!((l.sigma3 - 0.19).abs() < 1e-12);
        assert!((l.rate_bound - 0.9).abs() < 1e-12);

        let unstable = eradication_certificate(&scalar(0.5, 0.2), 0).unwrap();
        assert!(!unstable.schur_stable);
        assert!(unstable.lyapunov.is_none());
    }

    #[test]
    fn search_fallback_finds_certificate() {
        let m = DenseMatrix::from_rows(&[
            vec![0.5, 0.2, 0.0],
            vec![0.1, 0.4, 0.3],
            vec![0.2, 0.0, 0.6],
        ])
        .unwrap();
        let cert = diagonal_lyapunov_by_search(&m, 20_000).unwrap().expect("feasible");
        assert!(cert.from_search);
        let dec = lyapunov_decrease(&m, &cert.p).unwrap();
        assert!(symmetric_eigenvalues(&dec).unwrap().iter().all(|&v| v < 0.0));
        assert!(cert.p.iter().all(|&p| p > 0.0 && p <= 1.0 + 1e-12));
    }

    #[test]
    fn search_fails_for_unstable_matrix() {
        let m = DenseMatrix::from_rows(&[vec![0.9, 0.3], vec![0.3, 0.9]]).unwrap();
        assert!(diagonal_lyapunov_by_search(&m, 300).unwrap().is_none());
    }

    #[test]
    fn all_recovered_trace_is_max_of_diagonal() {
        let model = NetworkModel::new(
            vec![DenseMatrix::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.1]]).unwrap()],
            vec![vec![0.2, 0.3]],
            vec![vec![1.0, 1.0]],
            1.0,
            vec!["A".into(), "B".into()],
        )
        .unwrap();
        let state = EpidemicState {
            s: vec![0.0, 0.0],
            x: vec![vec![0.0, 0.0]],
            r: vec![1.0, 1.0],
            t: 0,
        };
        let traj = Trajectory { states: vec![state] };
        let trace = effective_r_trace(&model, &traj, 0).unwrap();
        assert!((trace.rho[0] - 0.8).abs() < 1e-12);
        assert_eq!(trace.threshold_crossing, Some(0));
        assert!(matches!(
            effective_r_trace(&model, &Trajectory { states: vec![] }, 0),
            Err(AnalysisError::EmptyTrajectory)
        ));
    }
}
