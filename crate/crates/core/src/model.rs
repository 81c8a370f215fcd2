//! Discrete-time competitive multi-virus SIR dynamics on a network.
//!
//! Node `i` holds fractions `s_i` (susceptible), `x^k_i` (infected by virus
//! `k`) and `r_i` (recovered). One step of length `h` is
//!
//! ```text
//! s_i   <- s_i - h s_i sum_k sum_j beta^k_ij x^k_j
//! x^k_i <- x^k_i + h (s_i sum_j beta^k_ij x^k_j - gamma^k_i x^k_i)
//! r_i   <- r_i + h sum_k gamma^k_i x^k_i
//! ```
//!
//! and each node reports `y_i = sum_k c^k_i x^k_i`.

use std::fmt;

use thiserror::Error;

use crate::numerics::DenseMatrix;

/// Tolerance on the per-node simplex identity and on the [0, 1] bounds.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("virus index {k} out of range for {m} viruses")]
    VirusOutOfRange { k: usize, m: usize },
    #[error("model needs at least one node and one virus")]
    Empty,
    #[error("sampling step h must be positive, got {0}")]
    BadStep(f64),
    #[error("model assumptions violated:\n{0}")]
    AssumptionsViolated(ValidationReport),
    #[error("state invariant violated at t={t}, node {node}: {detail}")]
    InvariantViolation { t: usize, node: usize, detail: String },
}

/// Parameters of the multi-virus network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    n: usize,
    m: usize,
    beta: Vec<DenseMatrix>,
    gamma: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    h: f64,
    labels: Vec<String>,
}

impl NetworkModel {
    /// Builds a model, checking shapes and finiteness. Sign and rate
    /// conditions are left to [`validate`] so they can be reported rather
    /// than rejected.
    pub fn new(
        beta: Vec<DenseMatrix>,
        gamma: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        h: f64,
        labels: Vec<String>,
    ) -> Result<Self, ModelError> {
        let m = beta.len();
        let n = beta.first().map_or(0, DenseMatrix::rows);
        if m == 0 || n == 0 {
            return Err(ModelError::Empty);
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(ModelError::BadStep(h));
        }
        let dim = |what: String, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(ModelError::Dimension {
                    what,
                    expected,
                    actual,
                })
            }
        };
        dim("gamma (virus count)".into(), m, gamma.len())?;
        dim("c (virus count)".into(), m, c.len())?;
        dim("labels".into(), n, labels.len())?;
        for k in 0..m {
            dim(format!("beta[{k}] rows"), n, beta[k].rows())?;
            dim(format!("beta[{k}] cols"), n, beta[k].cols())?;
            dim(format!("gamma[{k}]"), n, gamma[k].len())?;
            dim(format!("c[{k}]"), n, c[k].len())?;
            if gamma[k].iter().chain(&c[k]).any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(format!("virus {k} rates")));
            }
        }
        Ok(Self {
            n,
            m,
            beta,
            gamma,
            c,
            h,
            labels,
        })
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn viruses(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn beta(&self, k: usize) -> &DenseMatrix {
        &self.beta[k]
    }

    pub fn gamma(&self, k: usize) -> &[f64] {
        &self.gamma[k]
    }

    pub fn c(&self, k: usize) -> &[f64] {
        &self.c[k]
    }

    pub fn check_virus(&self, k: usize) -> Result<(), ModelError> {
        if k < self.m {
            Ok(())
        } else {
            Err(ModelError::VirusOutOfRange { k, m: self.m })
        }
    }

    /// Copy of the model with a different sampling step.
    pub fn with_h(&self, h: f64) -> Result<Self, ModelError> {
        Self::new(
            self.beta.clone(),
            self.gamma.clone(),
            self.c.clone(),
            h,
            self.labels.clone(),
        )
    }

    /// Copy of the model with one healing rate replaced.
    pub fn with_gamma(&self, k: usize, node: usize, value: f64) -> Result<Self, ModelError> {
        self.check_virus(k)?;
        let mut gamma = self.gamma.clone();
        gamma[k][node] = value;
        Self::new(
            self.beta.clone(),
            gamma,
            self.c.clone(),
            self.h,
            self.labels.clone(),
        )
    }

    /// `diag(c^k)`.
    pub fn output_matrix(&self, k: usize) -> DenseMatrix {
        DenseMatrix::from_diag(&self.c[k])
    }

    /// `I + h (diag(s) B^k - diag(gamma))` for the given susceptible levels and
    /// healing rates.
    pub fn transition_matrix_with(&self, k: usize, s: &[f64], gamma: &[f64]) -> DenseMatrix {
        let h = self.h;
        let b = &self.beta[k];
        DenseMatrix::from_fn(self.n, self.n, |i, j| {
            let mut v = h * s[i] * b[(i, j)];
            if i == j {
                v += 1.0 - h * gamma[i];
            }
            v
        })
    }

    fn node_label(&self, i: usize) -> String {
        self.labels.get(i).cloned().unwrap_or_else(|| i.to_string())
    }
}

/// Per-node compartments at one time index.
#[derive(Debug, Clone, PartialEq)]
pub struct EpidemicState {
    pub s: Vec<f64>,
    /// `x[k][i]`: fraction of node `i` infected by virus `k`.
    pub x: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    pub t: usize,
}

impl EpidemicState {
    /// Initial state from infection levels; `r` defaults to zero and `s`
    /// takes up the remainder.
    pub fn from_infections(x: Vec<Vec<f64>>, r: Option<Vec<f64>>) -> Self {
        let n = x.first().map_or(0, Vec::len);
        let r = r.unwrap_or_else(|| vec![0.0; n]);
        let s = (0..n)
            .map(|i| 1.0 - x.iter().map(|xk| xk[i]).sum::<f64>() - r[i])
            .collect();
        Self { s, x, r, t: 0 }
    }

    pub fn total_infection(&self, k: usize) -> f64 {
        self.x[k].iter().sum()
    }

    /// Largest `|s_i + sum_k x^k_i + r_i - 1|` over nodes.
    pub fn simplex_deviation(&self) -> f64 {
        (0..self.s.len())
            .map(|i| (self.s[i] + self.x.iter().map(|xk| xk[i]).sum::<f64>() + self.r[i] - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn check_dims(&self, model: &NetworkModel) -> Result<(), ModelError> {
        let n = model.nodes();
        let dim = |what: &str, actual: usize, expected: usize| {
            if actual == expected {
                Ok(())
            } else {
                Err(ModelError::Dimension {
                    what: what.to_string(),
                    expected,
                    actual,
                })
            }
        };
        dim("state s", self.s.len(), n)?;
        dim("state r", self.r.len(), n)?;
        dim("state virus count", self.x.len(), model.viruses())?;
        for xk in &self.x {
            dim("state x", xk.len(), n)?;
        }
        Ok(())
    }

    /// First node violating the bounds or the simplex identity.
    fn invariant_violation(&self) -> Option<(usize, String)> {
        for i in 0..self.s.len() {
            let mut parts = vec![("s", self.s[i]), ("r", self.r[i])];
            parts.extend(self.x.iter().map(|xk| ("x", xk[i])));
            for (name, v) in parts {
                if !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&v) {
                    return Some((i, format!("{name} = {v:e} outside [0, 1]")));
                }
            }
            let sum = self.s[i] + self.x.iter().map(|xk| xk[i]).sum::<f64>() + self.r[i];
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Some((i, format!("compartments sum to {sum:.17}")));
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// Initial fractions in [0, 1] summing to one per node.
    InitialSimplex,
    /// Nonnegative infection rates, positive healing rates.
    RateSigns,
    /// Step small enough: `h sum_k sum_j beta^k_ij <= 1`, `h sum_k gamma^k_i <= 1`.
    SamplingStep,
    /// Measurement coefficients in (0, 1].
    MeasurementCoefficients,
}

impl Assumption {
    pub const ALL: [Assumption; 4] = [
        Assumption::InitialSimplex,
        Assumption::RateSigns,
        Assumption::SamplingStep,
        Assumption::MeasurementCoefficients,
    ];

    pub fn number(self) -> usize {
        match self {
            Assumption::InitialSimplex => 1,
            Assumption::RateSigns => 2,
            Assumption::SamplingStep => 3,
            Assumption::MeasurementCoefficients => 4,
        }
    }
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            Assumption::InitialSimplex => "initial fractions in [0,1] summing to 1",
            Assumption::RateSigns => "beta >= 0 and gamma > 0",
            Assumption::SamplingStep => "h * total infection rate <= 1 and h * total healing rate <= 1",
            Assumption::MeasurementCoefficients => "measurement coefficients in (0,1]",
        };
        write!(f, "Assumption {} ({text})", self.number())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub assumption: Assumption,
    pub node: usize,
    pub label: String,
    pub virus: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed at node {}", self.assumption, self.label)?;
        if let Some(k) = self.virus {
            write!(f, ", virus {}", k + 1)?;
        }
        write!(f, ": {}", self.detail)
    }
}

/// Outcome of checking the four model assumptions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn holds(&self, assumption: Assumption) -> bool {
        !self.violations.iter().any(|v| v.assumption == assumption)
    }

    pub fn failures(&self, assumption: Assumption) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.assumption == assumption)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in Assumption::ALL {
            let status = if self.holds(a) { "pass" } else { "FAIL" };
            writeln!(f, "{a}: {status}")?;
        }
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Checks the model assumptions against a model and its initial state.
/// Shape mismatches are errors; assumption failures land in the report.
pub fn validate(model: &NetworkModel, state0: &EpidemicState) -> Result<ValidationReport, ModelError> {
    state0.check_dims(model)?;
    let mut report = ValidationReport::default();
    let mut push = |assumption, node: usize, virus, detail: String| {
        report.violations.push(Violation {
            assumption,
            node,
            label: model.node_label(node),
            virus,
            detail,
        });
    };
    let h = model.h();
    for i in 0..model.nodes() {
        let mut total = state0.s[i] + state0.r[i];
        for (name, v) in [("s", state0.s[i]), ("r", state0.r[i])] {
            if !(0.0..=1.0).contains(&v) {
                push(Assumption::InitialSimplex, i, None, format!("{name}[0] = {v}"));
            }
        }
        for k in 0..model.viruses() {
            let v = state0.x[k][i];
            total += v;
            if !(0.0..=1.0).contains(&v) {
                push(Assumption::InitialSimplex, i, Some(k), format!("x[0] = {v}"));
            }
        }
        if (total - 1.0).abs() > SIMPLEX_TOL {
            push(Assumption::InitialSimplex, i, None, format!("fractions sum to {total}"));
        }

        let mut infection_rate = 0.0;
        let mut healing_rate = 0.0;
        for k in 0..model.viruses() {
            let row = model.beta(k).row(i);
            if let Some(j) = row.iter().position(|&b| b < 0.0) {
                push(
                    Assumption::RateSigns,
                    i,
                    Some(k),
                    format!("beta[{i}][{j}] = {} is negative", row[j]),
                );
            }
            let g = model.gamma(k)[i];
            if !(g > 0.0) {
                push(Assumption::RateSigns, i, Some(k), format!("gamma = {g} is not positive"));
            }
            infection_rate += row.iter().sum::<f64>();
            healing_rate += g;

            let c = model.c(k)[i];
            if !(c > 0.0 && c <= 1.0) {
                push(
                    Assumption::MeasurementCoefficients,
                    i,
                    Some(k),
                    format!("c = {c} is outside (0, 1]"),
                );
            }
        }
        if h * infection_rate > 1.0 {
            push(
                Assumption::SamplingStep,
                i,
                None,
                format!("h * total infection rate = {} > 1", h * infection_rate),
            );
        }
        if h * healing_rate > 1.0 {
            push(
                Assumption::SamplingStep,
                i,
                None,
                format!("h * total healing rate = {} > 1", h * healing_rate),
            );
        }
    }
    Ok(report)
}

/// One step of the dynamics with caller-supplied healing rates per virus.
/// Used directly by the controller, which boosts healing.
pub(crate) fn step_with_healing(
    model: &NetworkModel,
    state: &EpidemicState,
    healing: &[Vec<f64>],
) -> Result<EpidemicState, ModelError> {
    state.check_dims(model)?;
    let (n, m, h) = (model.nodes(), model.viruses(), model.h());
    let mut next = EpidemicState {
        s: state.s.clone(),
        x: state.x.clone(),
        r: state.r.clone(),
        t: state.t + 1,
    };
    for i in 0..n {
        let si = state.s[i];
        let mut pressure_total = 0.0;
        let mut healed = 0.0;
        for k in 0..m {
            let pressure: f64 = model
                .beta(k)
                .row(i)
                .iter()
                .zip(&state.x[k])
                .map(|(b, x)| b * x)
                .sum();
            let xi = state.x[k][i];
            next.x[k][i] = xi + h * (si * pressure - healing[k][i] * xi);
            pressure_total += pressure;
            healed += healing[k][i] * xi;
        }
        next.s[i] = si - h * si * pressure_total;
        next.r[i] = state.r[i] + h * healed;
    }
    if let Some((node, detail)) = next.invariant_violation() {
        return Err(ModelError::InvariantViolation {
            t: next.t,
            node,
            detail,
        });
    }
    Ok(next)
}

/// Advances the state by one sampling step.
pub fn step(model: &NetworkModel, state: &EpidemicState) -> Result<EpidemicState, ModelError> {
    step_with_healing(model, state, &model.gamma)
}

/// `x^k[t+1]` computed as the matrix-vector product
/// `(I + h (S[t] B^k - Gamma^k)) x^k[t]`.
pub fn step_compact(model: &NetworkModel, state: &EpidemicState, k: usize) -> Result<Vec<f64>, ModelError> {
    model.check_virus(k)?;
    state.check_dims(model)?;
    let m_tilde = model.transition_matrix_with(k, &state.s, model.gamma(k));
    m_tilde
        .matvec(&state.x[k])
        .map_err(|e| ModelError::NonFinite(e.to_string()))
}

/// Time-ordered states produced by repeated [`step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<EpidemicState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// `sum_i x^k_i[t]` for every stored `t`.
    pub fn total_infection(&self, k: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.total_infection(k)).collect()
    }

    /// Index of the largest total infection of virus `k` (first on ties).
    pub fn peak_time(&self, k: usize) -> Option<usize> {
        let totals = self.total_infection(k);
        let mut best: Option<(usize, f64)> = None;
        for (t, v) in totals.into_iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((t, v));
            }
        }
        best.map(|(t, _)| t)
    }
}

/// Runs the dynamics for `horizon` steps after checking the assumptions.
pub fn simulate(model: &NetworkModel, state0: &EpidemicState, horizon: usize) -> Result<Trajectory, ModelError> {
    let report = validate(model, state0)?;
    if !report.passed() {
        return Err(ModelError::AssumptionsViolated(report));
    }
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(state0.clone());
    for _ in 0..horizon {
        let next = step(model, states.last().expect("non-empty"))?;
        states.push(next);
    }
    Ok(Trajectory { states })
}

/// Aggregated symptomatic fraction per node, `y_i = sum_k c^k_i x^k_i`.
pub fn observe(model: &NetworkModel, state: &EpidemicState) -> Vec<f64> {
    (0..model.nodes())
        .map(|i| (0..model.viruses()).map(|k| model.c(k)[i] * state.x[k][i]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(beta: f64, gamma: f64, c: f64, h: f64) -> NetworkModel {
        NetworkModel::new(
            vec![DenseMatrix::from_diag(&[beta])],
            vec![vec![gamma]],
            vec![vec![c]],
            h,
            vec!["A".into()],
        )
        .unwrap()
    }

    #[test]
    fn pure_healing_step() {
        let model = scalar(0.0, 0.5, 1.0, 1.0);
        let state = EpidemicState {
            s: vec![0.6],
            x: vec![vec![0.4]],
            r: vec![0.0],
            t: 0,
        };
        let next = step(&model, &state).unwrap();
        assert_eq!(next.s, vec![0.6]);
        assert!((next.x[0][0] - 0.2).abs() < 1e-15);
        assert!((next.r[0] - 0.2).abs() < 1e-15);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn zero_horizon_is_initial_state() {
        let model = scalar(0.3, 0.2, 1.0, 1.0);
        let s0 = EpidemicState::from_infections(vec![vec![0.1]], None);
        let traj = simulate(&model, &s0, 0).unwrap();
        assert_eq!(traj.states, vec![s0]);
    }

    #[test]
    fn zero_gamma_flags_rate_signs() {
        let model = scalar(0.3, 0.0, 1.0, 1.0);
        let s0 = EpidemicState::from_infections(vec![vec![0.1]], None);
        let report = validate(&model, &s0).unwrap();
        assert!(!report.holds(Assumption::RateSigns));
        assert!(report.holds(Assumption::SamplingStep));
        assert!(matches!(simulate(&model, &s0, 3), Err(ModelError::AssumptionsViolated(_))));
    }

    #[test]
    fn bad_coefficient_and_initial_state_flagged() {
        let model = scalar(0.3, 0.2, 1.5, 1.0);
        let s0 = EpidemicState {
            s: vec![0.5],
            x: vec![vec![0.1]],
            r: vec![0.0],
            t: 0,
        };
        let report = validate(&model, &s0).unwrap();
        assert!(!report.holds(Assumption::MeasurementCoefficients));
        assert!(!report.holds(Assumption::InitialSimplex));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let model = scalar(0.3, 0.2, 1.0, 1.0);
        let s0 = EpidemicState::from_infections(vec![vec![0.1, 0.2]], None);
        assert!(matches!(validate(&model, &s0), Err(ModelError::Dimension { .. })));
        assert!(matches!(step_compact(&model, &s0, 3), Err(ModelError::VirusOutOfRange { .. })));
    }

    #[test]
    fn observe_weights_by_coefficients() {
        let model = NetworkModel::new(
            vec![DenseMatrix::zeros(1, 1), DenseMatrix::zeros(1, 1)],
            vec![vec![0.2], vec![0.4]],
            vec![vec![0.4], vec![0.3]],
            1.0,
            vec!["A".into()],
        )
        .unwrap();
        let state = EpidemicState::from_infections(vec![vec![0.1], vec![0.2]], None);
        assert!((observe(&model, &state)[0] - 0.10).abs() < 1e-15);
        let healthy = EpidemicState::from_infections(vec![vec![0.0], vec![0.0]], None);
        assert_eq!(observe(&model, &healthy), vec![0.0]);
    }

    #[test]
    fn invariant_breach_is_reported() {
        // h * gamma = 2 drives x negative
        let model = scalar(0.0, 2.0, 1.0, 1.0);
        let s0 = EpidemicState::from_infections(vec![vec![0.4]], None);
        assert!(matches!(step(&model, &s0), Err(ModelError::InvariantViolation { .. })));
    }
}
