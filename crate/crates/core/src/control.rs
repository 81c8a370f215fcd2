//! Distributed feedback eradication: every node boosts its healing rate by
//! its own susceptible level times its incoming infection rate,
//!
//! ```text
//! u^k_i = -s_i sum_j beta^k_ij,     gamma~^k_i = gamma^k_i - u^k_i
//! ```
//!
//! which turns the infected update into `x^k <- M~ x^k` with Gershgorin row
//! sums at most `1 - h gamma^k_i`. In estimated-state mode `s` is replaced by
//! the observer's `s^`, and the plant's `s` is never read by the controller.

use thiserror::Error;

use crate::estimator::{observer_step_with_healing, EstimatorError, ObserverGain, ObserverState};
use crate::model::{observe, step_with_healing, validate, EpidemicState, ModelError, NetworkModel, Trajectory};
use crate::numerics::norm2;

/// Relative slack on the decay-bound comparison, for rounding only.
pub const DECAY_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("boosted healing at node {label} (index {node}), virus {virus}: h*gamma~ = {value} >= 1")]
    HealingTooLarge {
        virus: usize,
        node: usize,
        label: String,
        value: f64,
    },
    #[error("estimated-state control needs an observer estimate")]
    MissingEstimate,
    #[error("policy enables {actual} viruses, model has {expected}")]
    PolicyDimension { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlMode {
    TrueState,
    EstimatedState { gain: ObserverGain, initial: ObserverState },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlPolicy {
    pub mode: ControlMode,
    /// Per-virus switch; a disabled virus keeps its natural healing rate.
    pub enabled: Vec<bool>,
}

impl ControlPolicy {
    pub fn true_state(viruses: usize) -> Self {
        Self {
            mode: ControlMode::TrueState,
            enabled: vec![true; viruses],
        }
    }

    pub fn estimated_state(viruses: usize, gain: ObserverGain, initial: ObserverState) -> Self {
        Self {
            mode: ControlMode::EstimatedState { gain, initial },
            enabled: vec![true; viruses],
        }
    }
}

/// `u^k_i = -s_i sum_j beta^k_ij` for the given susceptible levels.
pub fn control_input(model: &NetworkModel, s: &[f64], k: usize) -> Vec<f64> {
    model.beta(k).row_sums().iter().zip(s).map(|(b, si)| -si * b).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlledStepReport {
    pub u: Vec<Vec<f64>>,
    pub gamma_tilde: Vec<Vec<f64>>,
    /// `1 - h min_i gamma^k_i` per virus.
    pub rate_certificate: Vec<f64>,
    /// Largest absolute row sum of the applied infected-state matrix, per virus.
    pub gershgorin_bound: Vec<f64>,
    /// Absolute row sums of the applied matrix, `[k][i]`.
    pub row_sums: Vec<Vec<f64>>,
}

/// Advances the plant one step under feedback. `estimate` is required in
/// estimated-state mode and ignored otherwise.
pub fn controlled_step(
    model: &NetworkModel,
    state: &EpidemicState,
    policy: &ControlPolicy,
    estimate: Option<&ObserverState>,
) -> Result<(EpidemicState, ControlledStepReport), ControlError> {
    let (n, m, h) = (model.nodes(), model.viruses(), model.h());
    if policy.enabled.len() != m {
        return Err(ControlError::PolicyDimension {
            expected: m,
            actual: policy.enabled.len(),
        });
    }
    if state.s.len() != n {
        return Err(ModelError::Dimension {
            what: "state s".into(),
            expected: n,
            actual: state.s.len(),
        }
        .into());
    }
    let s_used: &[f64] = match &policy.mode {
        ControlMode::TrueState => &state.s,
        ControlMode::EstimatedState { .. } => &estimate.ok_or(ControlError::MissingEstimate)?.s_hat,
    };
    let mut u = Vec::with_capacity(m);
    let mut gamma_tilde = Vec::with_capacity(m);
    let mut rate_certificate = Vec::with_capacity(m);
    let mut gershgorin_bound = Vec::with_capacity(m);
    let mut row_sums = Vec::with_capacity(m);
    for k in 0..m {
        let uk = if policy.enabled[k] {
            control_input(model, s_used, k)
        } else {
            vec![0.0; n]
        };
        let gk: Vec<f64> = model.gamma(k).iter().zip(&uk).map(|(g, u)| g - u).collect();
        if let Some(node) = gk.iter().position(|g| !(h * g < 1.0)) {
            return Err(ControlError::HealingTooLarge {
                virus: k,
                node,
                label: model.labels().get(node).cloned().unwrap_or_else(|| node.to_string()),
                value: h * gk[node],
            });
        }
        let applied = model.transition_matrix_with(k, &state.s, &gk);
        let sums: Vec<f64> = (0..n).map(|i| applied.row(i).iter().map(|v| v.abs()).sum()).collect();
        let gamma_min = model.gamma(k).iter().copied().fold(f64::INFINITY, f64::min);
        rate_certificate.push(1.0 - h * gamma_min);
        gershgorin_bound.push(sums.iter().copied().fold(0.0, f64::max));
        row_sums.push(sums);
        u.push(uk);
        gamma_tilde.push(gk);
    }
    let next = step_with_healing(model, state, &gamma_tilde)?;
    Ok((
        next,
        ControlledStepReport {
            u,
            gamma_tilde,
            rate_certificate,
            gershgorin_bound,
            row_sums,
        },
    ))
}

/// Decay check `||x^k[t]|| <= rho^t ||x^k[0]||` with `rho = 1 - h min_i gamma^k_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub virus: usize,
    pub enabled: bool,
    pub rate: f64,
    /// Times at which the Euclidean-norm bound fails.
    pub violations_2: Vec<usize>,
    /// Times at which the max-norm bound fails.
    pub violations_inf: Vec<usize>,
    /// Largest `||x[t]|| / (rho^t ||x[0]||)` seen, Euclidean norm.
    pub worst_ratio_2: f64,
    pub worst_ratio_inf: f64,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn decay_report(model: &NetworkModel, trajectory: &Trajectory, k: usize, enabled: bool) -> DecayReport {
    let gamma_min = model.gamma(k).iter().copied().fold(f64::INFINITY, f64::min);
    let rate = 1.0 - model.h() * gamma_min;
    let x0 = &trajectory.states[0].x[k];
    let mut report = DecayReport {
        virus: k,
        enabled,
        rate,
        violations_2: Vec::new(),
        violations_inf: Vec::new(),
        worst_ratio_2: 0.0,
        worst_ratio_inf: 0.0,
    };
    for (t, st) in trajectory.states.iter().enumerate() {
        let factor = rate.powi(t as i32);
        for (norm, violations, worst) in [
            (norm2 as fn(&[f64]) -> f64, &mut report.violations_2, &mut report.worst_ratio_2),
            (max_norm, &mut report.violations_inf, &mut report.worst_ratio_inf),
        ] {
            let lhs = norm(&st.x[k]);
            let rhs = factor * norm(x0);
            if lhs > rhs * (1.0 + DECAY_SLACK) {
                violations.push(t);
            }
            if rhs > 0.0 {
                *worst = worst.max(lhs / rhs);
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlledRun {
    pub trajectory: Trajectory,
    pub reports: Vec<ControlledStepReport>,
    /// Observer estimates in estimated-state mode.
    pub estimates: Option<Vec<ObserverState>>,
    pub decay: Vec<DecayReport>,
}

/// Closed-loop run for `horizon` steps after checking the assumptions on
/// the initial state.
pub fn run_controlled(
    model: &NetworkModel,
    state0: &EpidemicState,
    policy: &ControlPolicy,
    horizon: usize,
) -> Result<ControlledRun, ControlError> {
    let report = validate(model, state0)?;
    if !report.passed() {
        return Err(ModelError::AssumptionsViolated(report).into());
    }
    let mut states = vec![state0.clone()];
    let mut reports = Vec::with_capacity(horizon);
    let mut estimates = match &policy.mode {
        ControlMode::TrueState => None,
        ControlMode::EstimatedState { initial, .. } => Some(vec![initial.clone()]),
    };
    for _ in 0..horizon {
        let current = states.last().expect("non-empty");
        let estimate = estimates.as_ref().and_then(|e| e.last());
        let (next, step_report) = controlled_step(model, current, policy, estimate)?;
        if let (ControlMode::EstimatedState { gain, .. }, Some(est)) = (&policy.mode, estimates.as_mut()) {
            let y = observe(model, current);
            let last = est.last().expect("non-empty");
            let updated = observer_step_with_healing(model, gain, last, &y, &step_report.gamma_tilde)?;
            est.push(updated);
        }
        states.push(next);
        reports.push(step_report);
    }
    let trajectory = Trajectory { states };
    let decay = (0..model.viruses())
        .map(|k| decay_report(model, &trajectory, k, policy.enabled[k]))
        .collect();
    Ok(ControlledRun {
        trajectory,
        reports,
        estimates,
        decay,
    })
}
