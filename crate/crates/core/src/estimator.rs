//! Distributed Luenberger observer driven by the aggregated output.
//!
//! Every node propagates its own copy of the model with estimated levels and
//! corrects each virus with a scalar gain on the local output innovation:
//!
//! ```text
//! x^_i^k <- x^_i^k + h (s^_i sum_j beta^k_ij x^_j^k - gamma^k_i x^_i^k) + L^k_i (y_i - y^_i)
//! r^_i   <- r^_i + h sum_k gamma^k_i x^_i^k
//! s^_i    = 1 - sum_k x^_i^k - r^_i
//! ```
//!
//! Estimates are never clamped: a bad gain makes them leave `[0, 1]`, which
//! [`gain_sweep`] reports as divergence.

use thiserror::Error;

use crate::analysis::build_m;
use crate::model::{observe, ModelError, NetworkModel, Trajectory};
use crate::numerics::{norm2, DenseMatrix};

/// Any estimate above this magnitude (or non-finite) counts as divergence.
pub const DIVERGENCE_BOUND: f64 = 10.0;
pub const DEFAULT_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("observer gain for virus {virus} has a non-finite entry at node {node}")]
    NonFiniteGain { virus: usize, node: usize },
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("true trajectory is empty")]
    EmptyTrajectory,
}

fn dim(what: &'static str, actual: usize, expected: usize) -> Result<(), EstimatorError> {
    if actual == expected {
        Ok(())
    } else {
        Err(EstimatorError::Dimension { what, expected, actual })
    }
}

/// Per-virus, per-node scalar gains `L^k_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverGain {
    per_virus: Vec<Vec<f64>>,
}

impl ObserverGain {
    pub fn new(per_virus: Vec<Vec<f64>>) -> Result<Self, EstimatorError> {
        for (virus, row) in per_virus.iter().enumerate() {
            if let Some(node) = row.iter().position(|v| !v.is_finite()) {
                return Err(EstimatorError::NonFiniteGain { virus, node });
            }
        }
        Ok(Self { per_virus })
    }

    pub fn uniform(viruses: usize, nodes: usize, value: f64) -> Result<Self, EstimatorError> {
        Self::new(vec![vec![value; nodes]; viruses])
    }

    pub fn scaled(&self, eta: f64) -> Result<Self, EstimatorError> {
        Self::new(self.per_virus.iter().map(|l| l.iter().map(|v| eta * v).collect()).collect())
    }

    pub fn virus(&self, k: usize) -> &[f64] {
        &self.per_virus[k]
    }

    pub fn as_matrix(&self, k: usize) -> DenseMatrix {
        DenseMatrix::from_diag(&self.per_virus[k])
    }

    fn check(&self, model: &NetworkModel) -> Result<(), EstimatorError> {
        dim("gain virus count", self.per_virus.len(), model.viruses())?;
        for l in &self.per_virus {
            dim("gain length", l.len(), model.nodes())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub x_hat: Vec<Vec<f64>>,
    pub r_hat: Vec<f64>,
    pub s_hat: Vec<f64>,
    /// `h sum_{q<t} sum_k gamma^k x^^k[q]`, so `r^[t] = r^[0] + accumulator`.
    pub healing_accumulator: Vec<f64>,
    pub t: usize,
}

impl ObserverState {
    /// Initial estimate; `r^` defaults to zero.
    pub fn new(x_hat: Vec<Vec<f64>>, r_hat: Option<Vec<f64>>) -> Self {
        let n = x_hat.first().map_or(0, Vec::len);
        let r_hat = r_hat.unwrap_or_else(|| vec![0.0; n]);
        let s_hat = susceptible(&x_hat, &r_hat);
        Self {
            x_hat,
            r_hat,
            s_hat,
            healing_accumulator: vec![0.0; n],
            t: 0,
        }
    }

    fn check(&self, model: &NetworkModel) -> Result<(), EstimatorError> {
        dim("estimate virus count", self.x_hat.len(), model.viruses())?;
        for x in &self.x_hat {
            dim("estimate length", x.len(), model.nodes())?;
        }
        dim("r_hat length", self.r_hat.len(), model.nodes())?;
        Ok(())
    }

    /// Largest `|s^ + sum x^ + r^ - 1|`.
    pub fn simplex_deviation(&self) -> f64 {
        (0..self.s_hat.len())
            .map(|i| (self.s_hat[i] + self.x_hat.iter().map(|x| x[i]).sum::<f64>() + self.r_hat[i] - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn diverged(&self) -> bool {
        self.x_hat
            .iter()
            .flatten()
            .chain(&self.r_hat)
            .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND)
    }
}

fn susceptible(x_hat: &[Vec<f64>], r_hat: &[f64]) -> Vec<f64> {
    (0..r_hat.len())
        .map(|i| 1.0 - x_hat.iter().map(|x| x[i]).sum::<f64>() - r_hat[i])
        .collect()
}

/// Observer update with caller-supplied healing rates (the controller runs
/// the observer with the boosted rates it applies).
pub(crate) fn observer_step_with_healing(
    model: &NetworkModel,
    gain: &ObserverGain,
    state: &ObserverState,
    y: &[f64],
    healing: &[Vec<f64>],
) -> Result<ObserverState, EstimatorError> {
    gain.check(model)?;
    state.check(model)?;
    dim("measurement length", y.len(), model.nodes())?;
    let (n, m, h) = (model.nodes(), model.viruses(), model.h());
    let y_hat: Vec<f64> = (0..n)
        .map(|i| (0..m).map(|k| model.c(k)[i] * state.x_hat[k][i]).sum())
        .collect();
    let mut x_next = state.x_hat.clone();
    let mut healed = vec![0.0; n];
    for k in 0..m {
        let beta = model.beta(k);
        let l = gain.virus(k);
        for i in 0..n {
            let pressure: f64 = beta.row(i).iter().zip(&state.x_hat[k]).map(|(b, x)| b * x).sum();
            let xi = state.x_hat[k][i];
            x_next[k][i] = xi + h * (state.s_hat[i] * pressure - healing[k][i] * xi) + l[i] * (y[i] - y_hat[i]);
            healed[i] += healing[k][i] * xi;
        }
    }
    let healing_accumulator: Vec<f64> = state
        .healing_accumulator
        .iter()
        .zip(&healed)
        .map(|(acc, v)| acc + h * v)
        .collect();
    let r_hat: Vec<f64> = state.r_hat.iter().zip(&healed).map(|(r, v)| r + h * v).collect();
    let s_hat = susceptible(&x_next, &r_hat);
    Ok(ObserverState {
        x_hat: x_next,
        r_hat,
        s_hat,
        healing_accumulator,
        t: state.t + 1,
    })
}

/// One observer step given the measurement `y[t]`.
pub fn observer_step(
    model: &NetworkModel,
    gain: &ObserverGain,
    state: &ObserverState,
    y: &[f64],
) -> Result<ObserverState, EstimatorError> {
    let healing: Vec<Vec<f64>> = (0..model.viruses()).map(|k| model.gamma(k).to_vec()).collect();
    observer_step_with_healing(model, gain, state, y, &healing)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTrace {
    /// `e[t][k][i] = x^k_i[t] - x^^k_i[t]`.
    pub e: Vec<Vec<Vec<f64>>>,
    /// `w[t][k] = e^k[t+1] - (M^k - L^k C^k) e^k[t]`, one entry fewer than `e`.
    pub w: Vec<Vec<Vec<f64>>>,
    /// `||w^k[t]|| / ||e^k[t]||`; `None` where `e^k[t] = 0`.
    pub lstar: Vec<Vec<Option<f64>>>,
    /// `(1 / (mn)) sum_k sum_i |e^k_i[t]|`.
    pub aggregate: Vec<f64>,
}

impl ErrorTrace {
    pub fn max_abs_error(&self) -> f64 {
        self.e.iter().flatten().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `sum_i |e^k_i[t]|` per time.
    pub fn virus_error(&self, k: usize) -> Vec<f64> {
        self.e.iter().map(|et| et[k].iter().map(|v| v.abs()).sum()).collect()
    }
}

fn error_trace(
    model: &NetworkModel,
    gain: &ObserverGain,
    truth: &Trajectory,
    estimates: &[ObserverState],
) -> Result<ErrorTrace, EstimatorError> {
    let (n, m) = (model.nodes(), model.viruses());
    let e: Vec<Vec<Vec<f64>>> = truth
        .states
        .iter()
        .zip(estimates)
        .map(|(x, est)| {
            (0..m)
                .map(|k| x.x[k].iter().zip(&est.x_hat[k]).map(|(a, b)| a - b).collect())
                .collect()
        })
        .collect();
    let closed_loop: Vec<DenseMatrix> = (0..m)
        .map(|k| {
            let lc = gain.as_matrix(k).matmul(&model.output_matrix(k)).expect("square n x n");
            build_m(model, k).map(|mk| mk.sub(&lc).expect("square n x n"))
        })
        .collect::<Result<_, _>>()?;
    let mut w = Vec::with_capacity(e.len().saturating_sub(1));
    let mut lstar = Vec::with_capacity(e.len().saturating_sub(1));
    for t in 0..e.len().saturating_sub(1) {
        let mut wt = Vec::with_capacity(m);
        let mut lt = Vec::with_capacity(m);
        for k in 0..m {
            let predicted = closed_loop[k].matvec(&e[t][k]).expect("length n");
            let wk: Vec<f64> = e[t + 1][k].iter().zip(&predicted).map(|(a, b)| a - b).collect();
            let en = norm2(&e[t][k]);
            lt.push((en > 0.0).then(|| norm2(&wk) / en));
            wt.push(wk);
        }
        w.push(wt);
        lstar.push(lt);
    }
    let aggregate = e
        .iter()
        .map(|et| et.iter().flatten().map(|v| v.abs()).sum::<f64>() / (m * n) as f64)
        .collect();
    Ok(ErrorTrace { e, w, lstar, aggregate })
}

/// Runs the observer along a true trajectory, feeding it `y[t]` computed
/// from the true state, and records the estimation error.
pub fn run_observer(
    model: &NetworkModel,
    gain: &ObserverGain,
    truth: &Trajectory,
    initial: &ObserverState,
) -> Result<(Vec<ObserverState>, ErrorTrace), EstimatorError> {
    if truth.is_empty() {
        return Err(EstimatorError::EmptyTrajectory);
    }
    let mut estimates = Vec::with_capacity(truth.len());
    estimates.push(initial.clone());
    for state in &truth.states[..truth.len() - 1] {
        let next = observer_step(model, gain, estimates.last().expect("non-empty"), &observe(model, state))?;
        estimates.push(next);
    }
    let trace = error_trace(model, gain, truth, &estimates)?;
    Ok((estimates, trace))
}

/// First index from which `series` stays strictly below `threshold`.
pub fn settling_time(series: &[f64], threshold: f64) -> Option<usize> {
    match series.iter().rposition(|v| !(*v < threshold)) {
        None => Some(0),
        Some(last) if last + 1 < series.len() => Some(last + 1),
        Some(_) => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepOutcome {
    Converged { t_star: usize },
    /// Estimates left the divergence bound at this time.
    Diverged { at: usize },
    /// Error still above threshold at the end of the horizon.
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub eta: f64,
    pub outcome: SweepOutcome,
}

/// Settling time of the aggregated error for each scaled gain `eta * L`.
pub fn gain_sweep(
    model: &NetworkModel,
    truth: &Trajectory,
    initial: &ObserverState,
    base_gain: &ObserverGain,
    etas: &[f64],
    threshold: f64,
) -> Result<Vec<SweepPoint>, EstimatorError> {
    if truth.is_empty() {
        return Err(EstimatorError::EmptyTrajectory);
    }
    let (n, m) = (model.nodes(), model.viruses());
    etas.iter()
        .map(|&eta| {
            let gain = base_gain.scaled(eta)?;
            let mut est = initial.clone();
            let mut aggregate = Vec::with_capacity(truth.len());
            for (t, state) in truth.states.iter().enumerate() {
                if est.diverged() {
                    return Ok(SweepPoint {
                        eta,
                        outcome: SweepOutcome::Diverged { at: t },
                    });
                }
                let err: f64 = (0..m)
                    .flat_map(|k| (0..n).map(move |i| (k, i)))
                    .map(|(k, i)| (state.x[k][i] - est.x_hat[k][i]).abs())
                    .sum();
                aggregate.push(err / (m * n) as f64);
                if t + 1 < truth.len() {
                    est = observer_step(model, &gain, &est, &observe(model, state))?;
                }
            }
            let outcome = match settling_time(&aggregate, threshold) {
                Some(t_star) => SweepOutcome::Converged { t_star },
                None => SweepOutcome::NotConverged,
            };
            Ok(SweepPoint { eta, outcome })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, EpidemicState};

    fn model() -> NetworkModel {
        NetworkModel::new(
            vec![
                DenseMatrix::from_rows(&[vec![0.2, 0.1], vec![0.15, 0.25]]).unwrap(),
                DenseMatrix::from_rows(&[vec![0.1, 0.05], vec![0.05, 0.1]]).unwrap(),
            ],
            vec![vec![0.1, 0.15], vec![0.2, 0.05]],
            vec![vec![0.4, 0.5], vec![0.3, 0.6]],
            1.0,
            vec!["A".into(), "B".into()],
        )
        .unwrap()
    }

    fn truth(steps: usize) -> Trajectory {
        let x0 = vec![vec![0.01, 0.02], vec![0.02, 0.01]];
        simulate(&model(), &EpidemicState::from_infections(x0, None), steps).unwrap()
    }

    #[test]
    fn zero_gain_exact_init_replicates_plant() {
        let traj = truth(200);
        let s0 = &traj.states[0];
        let init = ObserverState::new(s0.x.clone(), Some(s0.r.clone()));
        let gain = ObserverGain::uniform(2, 2, 0.0).unwrap();
        let (est, trace) = run_observer(&model(), &gain, &traj, &init).unwrap();
        assert_eq!(est.len(), traj.len());
        assert!(trace.max_abs_error() <= 1e-13);
        for (e, s) in est.iter().zip(&traj.states) {
            assert!(e.r_hat.iter().zip(&s.r).all(|(a, b)| (a - b).abs() <= 1e-13));
        }
    }

    #[test]
    fn exact_zero_error_leaves_lstar_undefined() {
        let zero = vec![vec![0.0; 2]; 2];
        let traj = simulate(&model(), &EpidemicState::from_infections(zero.clone(), None), 10).unwrap();
        let gain = ObserverGain::uniform(2, 2, 0.7).unwrap();
        let (est, trace) = run_observer(&model(), &gain, &traj, &ObserverState::new(zero, None)).unwrap();
        assert!(est.iter().all(|e| e.x_hat.iter().flatten().all(|v| *v == 0.0)));
        assert!(trace.lstar.iter().flatten().all(Option::is_none));
    }

    #[test]
    fn residual_reconstructs_error_and_simplex_holds() {
        let traj = truth(100);
        let init = ObserverState::new(vec![vec![0.005, 0.01], vec![0.01, 0.0]], None);
        let gain = ObserverGain::new(vec![vec![0.3, 0.2], vec![0.25, 0.1]]).unwrap();
        let (est, trace) = run_observer(&model(), &gain, &traj, &init).unwrap();
        let mdl = model();
        for k in 0..2 {
            let a = build_m(&mdl, k)
                .unwrap()
                .sub(&gain.as_matrix(k).matmul(&mdl.output_matrix(k)).unwrap())
                .unwrap();
            for t in 0..traj.horizon() {
                let rebuilt = a.matvec(&trace.e[t][k]).unwrap();
                for i in 0..2 {
                    assert!((rebuilt[i] + trace.w[t][k][i] - trace.e[t + 1][k][i]).abs() <= 1e-12);
                }
                if let Some(l) = trace.lstar[t][k] {
                    let lhs = l * norm2(&trace.e[t][k]);
                    assert!((lhs - norm2(&trace.w[t][k])).abs() <= 1e-15);
                }
            }
        }
        assert!(est.iter().all(|e| e.simplex_deviation() <= 1e-12));
    }

    #[test]
    fn settling_time_cases() {
        assert_eq!(settling_time(&[0.5, 0.1, 0.001, 0.002], 0.01), Some(2));
        assert_eq!(settling_time(&[0.001, 0.1, 0.001], 0.01), Some(2));
        assert_eq!(settling_time(&[0.001, 0.002], 0.01), Some(0));
        assert_eq!(settling_time(&[0.001, 0.5], 0.01), None);
    }

    #[test]
    fn huge_gain_diverges() {
        let traj = truth(100);
        let init = ObserverState::new(vec![vec![0.005, 0.01], vec![0.01, 0.0]], None);
        let base = ObserverGain::uniform(2, 2, 1.0).unwrap();
        let points = gain_sweep(&model(), &traj, &init, &base, &[0.0, 20.0], 0.01).unwrap();
        assert!(matches!(points[1].outcome, SweepOutcome::Diverged { .. }));
        assert!(!matches!(points[0].outcome, SweepOutcome::Diverged { .. }));
    }

    #[test]
    fn non_finite_gain_rejected() {
        assert_eq!(
            ObserverGain::new(vec![vec![0.1, f64::NAN]]),
            Err(EstimatorError::NonFiniteGain { virus: 0, node: 1 })
        );
    }
}
