//! Observer-gain synthesis through a linear matrix inequality.
//!
//! For one virus with plant matrix `M`, output matrix `C`, multiplier `tau`
//! and Lipschitz-like constant `l`, a gain `L = Q^{-1} R^T` makes the
//! estimation error asymptotically stable if `Q > 0` and
//!
//! ```text
//! [ -Q + tau l^2 I   M^T Q - C^T R   M^T Q - C^T R ]
//! [ (.)^T            Q - tau I       0             ]  < 0
//! [ (.)^T            0               -Q            ]
//! ```
//!
//! Feasibility is decided by minimizing the largest eigenvalue of an affine
//! symmetric matrix function with a log-sum-exp smoothing of the spectrum.
//! The routine is deterministic: same problem, same iterates.

use thiserror::Error;

use crate::analysis::build_m;
use crate::model::{ModelError, NetworkModel};
use crate::numerics::{lu_solve, symmetric_eigen, DenseMatrix, NumericsError};

pub const DEFAULT_MARGIN: f64 = 1e-9;
pub const DEFAULT_MAX_ITERATIONS: usize = 50_000;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid LMI problem: {0}")]
    InvalidProblem(String),
    #[error("Q must be symmetric positive definite (lambda_min = {lambda_min:e})")]
    NotPositiveDefinite { lambda_min: f64 },
}

/// `G(z) = base + sum_i z_i basis[i]` with symmetric terms.
#[derive(Debug, Clone)]
pub struct AffineSymmetricMap {
    base: DenseMatrix,
    basis: Vec<DenseMatrix>,
}

impl AffineSymmetricMap {
    pub fn new(base: DenseMatrix, basis: Vec<DenseMatrix>) -> Result<Self, NumericsError> {
        let base = base.symmetrized()?;
        let basis = basis
            .iter()
            .map(|a| {
                if a.rows() != base.rows() || a.cols() != base.cols() {
                    return Err(NumericsError::DimensionMismatch {
                        expected: format!("{}x{}", base.rows(), base.cols()),
                        actual: format!("{}x{}", a.rows(), a.cols()),
                    });
                }
                a.symmetrized()
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { base, basis })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn eval(&self, z: &[f64]) -> DenseMatrix {
        let n = self.base.rows();
        let mut out = self.base.clone();
        for (zi, a) in z.iter().zip(&self.basis) {
            if *zi == 0.0 {
                continue;
            }
            for r in 0..n {
                for c in 0..n {
                    out[(r, c)] += zi * a[(r, c)];
                }
            }
        }
        out
    }

    /// `<W, A_i>` for every basis term.
    fn adjoint(&self, w: &DenseMatrix) -> Vec<f64> {
        self.basis
            .iter()
            .map(|a| a.as_slice().iter().zip(w.as_slice()).map(|(x, y)| x * y).sum())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DescentOptions {
    pub max_iterations: usize,
    /// Stop as soon as the largest eigenvalue drops below this value.
    pub target: f64,
    /// Smallest smoothing parameter, relative to the initial one.
    pub smoothing_floor: f64,
    /// Iterations between halvings of the smoothing parameter.
    pub smoothing_period: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            target: 0.0,
            smoothing_floor: 1e-9,
            smoothing_period: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DescentOutcome {
    /// Best point found (lowest largest eigenvalue).
    pub z: Vec<f64>,
    pub lambda_max: f64,
    pub iterations: usize,
    pub reached: bool,
}

struct Smoothed {
    value: f64,
    lambda_max: f64,
    gradient: Vec<f64>,
}

fn smoothed(map: &AffineSymmetricMap, z: &[f64], mu: f64) -> Result<Smoothed, NumericsError> {
    let eig = symmetric_eigen(&map.eval(z))?;
    let top = eig.max();
    let weights: Vec<f64> = eig.values.iter().map(|&l| ((l - top) / mu).exp()).collect();
    let total: f64 = weights.iter().sum();
    let n = eig.values.len();
    let w = DenseMatrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|k| eig.vectors[(i, k)] * (weights[k] / total) * eig.vectors[(j, k)])
            .sum()
    });
    Ok(Smoothed {
        value: top + mu * total.ln(),
        lambda_max: top,
        gradient: map.adjoint(&w),
    })
}

/// Drives `lambda_max(G(z))` below `options.target` by gradient descent on
/// `mu log sum_j exp(lambda_j / mu)` with Armijo backtracking, halving `mu`
/// periodically or when the gradient flattens out.
pub fn minimize_max_eigenvalue(
    map: &AffineSymmetricMap,
    z0: &[f64],
    options: &DescentOptions,
) -> Result<DescentOutcome, NumericsError> {
    if z0.len() != map.dim() {
        return Err(NumericsError::DimensionMismatch {
            expected: format!("{} variables", map.dim()),
            actual: format!("{}", z0.len()),
        });
    }
    let scale = {
        let eig = symmetric_eigen(&map.eval(z0))?;
        eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12)
    };
    let mu_floor = options.smoothing_floor * scale;
    let mut mu = 0.05 * scale;
    let mut z = z0.to_vec();
    let mut step = 1.0;
    let mut best = (f64::INFINITY, z.clone());
    let mut current = smoothed(map, &z, mu)?;

    for iteration in 0..=options.max_iterations {
        if current.lambda_max < best.0 {
            best = (current.lambda_max, z.clone());
        }
        if current.lambda_max < options.target {
            return Ok(DescentOutcome {
                z,
                lambda_max: current.lambda_max,
                iterations: iteration,
                reached: true,
            });
        }
        if iteration == options.max_iterations {
            break;
        }
        let g2: f64 = current.gradient.iter().map(|g| g * g).sum();
        let mut accepted = false;
        if g2 > 0.0 {
            while step > 1e-18 {
                let trial: Vec<f64> = z.iter().zip(&current.gradient).map(|(zi, gi)| zi - step * gi).collect();
                let next = smoothed(map, &trial, mu)?;
                if next.value <= current.value - 0.5 * step * g2 {
                    z = trial;
                    current = next;
                    accepted = true;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
            }
        }
        let flat = !accepted || g2.sqrt() < 1e-3;
        if (flat || (iteration + 1) % options.smoothing_period == 0) && mu > mu_floor {
            mu = (0.5 * mu).max(mu_floor);
            step = step.max(1e-6);
            current = smoothed(map, &z, mu)?;
        } else if !accepted {
            // smoothing at its floor and no descent direction left
            step = 1.0;
            if mu <= mu_floor {
                break;
            }
        }
    }
    Ok(DescentOutcome {
        z: best.1,
        lambda_max: best.0,
        iterations: options.max_iterations,
        reached: false,
    })
}

/// Data of one observer LMI.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub plant: DenseMatrix,
    pub output: DenseMatrix,
    pub tau: f64,
    pub lipschitz: f64,
    pub margin: f64,
}

impl LmiProblem {
    pub fn new(plant: DenseMatrix, output: DenseMatrix, tau: f64, lipschitz: f64) -> Result<Self, SynthesisError> {
        let problem = Self {
            plant,
            output,
            tau,
            lipschitz,
            margin: DEFAULT_MARGIN,
        };
        problem.check()?;
        Ok(problem)
    }

    /// Problem for virus `k` with `M^k` and `C^k = diag(c^k)` from the model.
    pub fn for_virus(model: &NetworkModel, k: usize, tau: f64, lipschitz: f64) -> Result<Self, SynthesisError> {
        Self::new(build_m(model, k)?, model.output_matrix(k), tau, lipschitz)
    }

    pub fn with_margin(mut self, margin: f64) -> Result<Self, SynthesisError> {
        self.margin = margin;
        self.check()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.plant.rows()
    }

    fn check(&self) -> Result<(), SynthesisError> {
        self.plant.require_square()?;
        let n = self.plant.rows();
        if self.output.rows() != n || self.output.cols() != n {
            return Err(SynthesisError::InvalidProblem(format!(
                "output matrix is {}x{}, expected {n}x{n}",
                self.output.rows(),
                self.output.cols()
            )));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(SynthesisError::InvalidProblem(format!("tau = {} not in (0, 1]", self.tau)));
        }
        if !(self.lipschitz >= 0.0 && self.lipschitz.is_finite()) {
            return Err(SynthesisError::InvalidProblem(format!(
                "Lipschitz constant {} must be finite and nonnegative",
                self.lipschitz
            )));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(SynthesisError::InvalidProblem(format!("margin {} must be positive", self.margin)));
        }
        Ok(())
    }

    /// The first and second diagonal blocks need `tau l^2 I < Q < tau I`,
    /// impossible once `l >= 1` (with the margin on both sides).
    pub fn has_diagonal_block_contradiction(&self) -> bool {
        let l2 = self.lipschitz * self.lipschitz;
        self.tau * l2 + self.margin >= self.tau - self.margin
    }
}

fn dim_check(problem: &LmiProblem, what: &str, m: &DenseMatrix) -> Result<(), SynthesisError> {
    let n = problem.n();
    if m.rows() != n || m.cols() != n {
        return Err(SynthesisError::InvalidProblem(format!(
            "{what} is {}x{}, expected {n}x{n}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

/// Assembles the `3n x 3n` block matrix for given `Q` (symmetric) and `R`.
pub fn assemble_lmi(problem: &LmiProblem, q: &DenseMatrix, r: &DenseMatrix) -> Result<DenseMatrix, SynthesisError> {
    dim_check(problem, "Q", q)?;
    dim_check(problem, "R", r)?;
    let q = q.symmetrized()?;
    let n = problem.n();
    let tau = problem.tau;
    let l2 = problem.lipschitz * problem.lipschitz;
    let coupling = problem
        .plant
        .transpose()
        .matmul(&q)?
        .sub(&problem.output.transpose().matmul(r)?)?;
    let coupling_t = coupling.transpose();
    let eye = DenseMatrix::identity(n);

    let mut out = DenseMatrix::zeros(3 * n, 3 * n);
    out.set_block(0, 0, &q.scale(-1.0).add(&eye.scale(tau * l2))?);
    out.set_block(0, n, &coupling);
    out.set_block(0, 2 * n, &coupling);
    out.set_block(n, 0, &coupling_t);
    out.set_block(n, n, &q.sub(&eye.scale(tau))?);
    out.set_block(2 * n, 0, &coupling_t);
    out.set_block(2 * n, 2 * n, &q.scale(-1.0));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GainStructure {
    /// `Q` and `R` diagonal, so `L` is diagonal: one scalar gain per node.
    #[default]
    Diagonal,
    /// `Q` symmetric, `R` unrestricted.
    Full,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub structure: GainStructure,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            structure: GainStructure::Diagonal,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Infeasibility {
    DiagonalBlockContradiction,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct LmiCertificate {
    pub q: DenseMatrix,
    pub r: DenseMatrix,
    /// `L = Q^{-1} R^T`.
    pub gain: DenseMatrix,
    pub lambda_max_f: f64,
    pub lambda_min_q: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub infeasibility: Option<Infeasibility>,
}

impl LmiCertificate {
    /// Diagonal of the gain, i.e. the per-node gains of a distributed observer.
    pub fn node_gains(&self) -> Vec<f64> {
        self.gain.diagonal()
    }
}

struct Layout {
    n: usize,
    structure: GainStructure,
}

impl Layout {
    fn q_vars(&self) -> usize {
        match self.structure {
            GainStructure::Diagonal => self.n,
            GainStructure::Full => self.n * (self.n + 1) / 2,
        }
    }

    fn dim(&self) -> usize {
        match self.structure {
            GainStructure::Diagonal => 2 * self.n,
            GainStructure::Full => self.q_vars() + self.n * self.n,
        }
    }

    fn unpack(&self, z: &[f64]) -> (DenseMatrix, DenseMatrix) {
        let n = self.n;
        match self.structure {
            GainStructure::Diagonal => (DenseMatrix::from_diag(&z[..n]), DenseMatrix::from_diag(&z[n..])),
            GainStructure::Full => {
                let mut q = DenseMatrix::zeros(n, n);
                let mut idx = 0;
                for i in 0..n {
                    for j in i..n {
                        q[(i, j)] = z[idx];
                        q[(j, i)] = z[idx];
                        idx += 1;
                    }
                }
                let r = DenseMatrix::new(n, n, z[idx..].to_vec()).expect("sized by layout");
                (q, r)
            }
        }
    }

    fn pack(&self, q_diag: f64) -> Vec<f64> {
        let n = self.n;
        let mut z = vec![0.0; self.dim()];
        match self.structure {
            GainStructure::Diagonal => z[..n].iter_mut().for_each(|v| *v = q_diag),
            GainStructure::Full => {
                let mut idx = 0;
                for i in 0..n {
                    for j in i..n {
                        if i == j {
                            z[idx] = q_diag;
                        }
                        idx += 1;
                    }
                }
            }
        }
        z
    }
}

/// `diag(F(Q, R) + margin I, margin I - Q)`; negative definite exactly when
/// `(Q, R)` is a certificate with the requested margin.
fn stacked(problem: &LmiProblem, q: &DenseMatrix, r: &DenseMatrix) -> Result<DenseMatrix, SynthesisError> {
    let n = problem.n();
    let f = assemble_lmi(problem, q, r)?;
    let mut g = DenseMatrix::zeros(4 * n, 4 * n);
    g.set_block(0, 0, &f);
    for i in 0..3 * n {
        g[(i, i)] += problem.margin;
    }
    g.set_block(3 * n, 3 * n, &DenseMatrix::identity(n).scale(problem.margin).sub(q)?);
    Ok(g)
}

fn certificate_from(
    problem: &LmiProblem,
    q: DenseMatrix,
    r: DenseMatrix,
    iterations: usize,
    infeasibility: Option<Infeasibility>,
) -> Result<LmiCertificate, SynthesisError> {
    let f = assemble_lmi(problem, &q, &r)?;
    let lambda_max_f = symmetric_eigen(&f)?.max();
    let lambda_min_q = symmetric_eigen(&q)?.min();
    let gain = if lambda_min_q > 0.0 {
        lu_solve(&q, &r.transpose())?
    } else {
        DenseMatrix::zeros(problem.n(), problem.n())
    };
    let feasible = infeasibility.is_none() && lambda_max_f <= -problem.margin && lambda_min_q >= problem.margin;
    let infeasibility = match (feasible, infeasibility) {
        (true, _) => None,
        (false, None) => Some(Infeasibility::BudgetExhausted),
        (false, other) => other,
    };
    Ok(LmiCertificate {
        q,
        r,
        gain,
        lambda_max_f,
        lambda_min_q,
        feasible,
        iterations,
        infeasibility,
    })
}

/// Searches for `(Q, R)` satisfying the observer LMI with margin. Starts from
/// `Q = tau (1 + l^2) / 2 I`, `R = 0`.
pub fn solve_feasibility(problem: &LmiProblem, options: &SolverOptions) -> Result<LmiCertificate, SynthesisError> {
    problem.check()?;
    let n = problem.n();
    let layout = Layout {
        n,
        structure: options.structure,
    };
    let q_start = 0.5 * problem.tau * (1.0 + problem.lipschitz * problem.lipschitz).min(2.0);
    let z0 = layout.pack(q_start);

    if problem.has_diagonal_block_contradiction() {
        let (q, r) = layout.unpack(&z0);
        return certificate_from(problem, q, r, 0, Some(Infeasibility::DiagonalBlockContradiction));
    }

    let zero = vec![0.0; layout.dim()];
    let (q0, r0) = layout.unpack(&zero);
    let base = stacked(problem, &q0, &r0)?;
    let basis = (0..layout.dim())
        .map(|i| {
            let mut unit = zero.clone();
            unit[i] = 1.0;
            let (q, r) = layout.unpack(&unit);
            Ok(stacked(problem, &q, &r)?.sub(&base)?)
        })
        .collect::<Result<Vec<_>, SynthesisError>>()?;
    let map = AffineSymmetricMap::new(base, basis)?;
    let outcome = minimize_max_eigenvalue(
        &map,
        &z0,
        &DescentOptions {
            max_iterations: options.max_iterations,
            ..DescentOptions::default()
        },
    )?;
    let (q, r) = layout.unpack(&outcome.z);
    certificate_from(problem, q, r, outcome.iterations, None)
}

/// Scans `tau` over `0.05, 0.10, ..., 1.00` and returns the first feasible
/// certificate.
pub fn solve_over_tau_grid(
    plant: &DenseMatrix,
    output: &DenseMatrix,
    lipschitz: f64,
    options: &SolverOptions,
) -> Result<Option<(f64, LmiCertificate)>, SynthesisError> {
    for step in 1..=20 {
        let tau = step as f64 * 0.05;
        let problem = LmiProblem::new(plant.clone(), output.clone(), tau, lipschitz)?;
        let cert = solve_feasibility(&problem, options)?;
        if cert.feasible {
            return Ok(Some((tau, cert)));
        }
    }
    Ok(None)
}

/// Either `R` directly or the gain `L`, from which `R = (Q L)^T`.
#[derive(Debug, Clone, Copy)]
pub enum Candidate<'a> {
    Multiplier(&'a DenseMatrix),
    Gain(&'a DenseMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SchurForm {
    /// `Q - tau I` is not negative definite, so the Schur-complement form
    /// is undefined.
    PreconditionFailed { q_minus_tau_max: f64 },
    Evaluated {
        /// Largest eigenvalue of
        /// `K^T [Q - Q (Q - tau I)^{-1} Q] K - Q + tau l^2 I`, `K = M - L C`.
        schur_max: f64,
        q_minus_tau_max: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub schur: SchurForm,
    pub lmi_max: f64,
    pub lmi_negative_definite: bool,
    pub schur_negative_definite: bool,
    pub meets_margin: bool,
    /// Whether both forms give the same verdict.
    pub agree: bool,
    pub gain: DenseMatrix,
}

/// Checks a candidate in both the Schur-complement form and the assembled
/// block form, and whether the two verdicts agree.
pub fn verify_certificate(problem: &LmiProblem, q: &DenseMatrix, candidate: Candidate<'_>) -> Result<VerificationReport, SynthesisError> {
    problem.check()?;
    dim_check(problem, "Q", q)?;
    let q = q.symmetrized()?;
    let q_eig = symmetric_eigen(&q)?;
    if q_eig.min() <= 0.0 {
        return Err(SynthesisError::NotPositiveDefinite { lambda_min: q_eig.min() });
    }
    let n = problem.n();
    let (r, gain) = match candidate {
        Candidate::Multiplier(r) => {
            dim_check(problem, "R", r)?;
            (r.clone(), lu_solve(&q, &r.transpose())?)
        }
        Candidate::Gain(l) => {
            dim_check(problem, "L", l)?;
            (q.matmul(l)?.transpose(), l.clone())
        }
    };

    let lmi_max = symmetric_eigen(&assemble_lmi(problem, &q, &r)?)?.max();
    let lmi_negative_definite = lmi_max < 0.0;

    let eye = DenseMatrix::identity(n);
    let q_minus_tau = q.sub(&eye.scale(problem.tau))?;
    let q_minus_tau_max = symmetric_eigen(&q_minus_tau)?.max();
    let (schur, schur_negative_definite) = if q_minus_tau_max >= 0.0 {
        (SchurForm::PreconditionFailed { q_minus_tau_max }, false)
    } else {
        let k = problem.plant.sub(&gain.matmul(&problem.output)?)?;
        let inner = q.sub(&q.matmul(&lu_solve(&q_minus_tau, &q)?)?)?;
        let inner = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (inner[(i, j)] + inner[(j, i)]));
        let lipschitz_term = eye.scale(problem.tau * problem.lipschitz * problem.lipschitz);
        let s = k.transpose().matmul(&inner)?.matmul(&k)?.sub(&q)?.add(&lipschitz_term)?;
        let s = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));
        let schur_max = symmetric_eigen(&s)?.max();
        (
            SchurForm::Evaluated {
                schur_max,
                q_minus_tau_max,
            },
            schur_max < 0.0,
        )
    };
    Ok(VerificationReport {
        schur,
        lmi_max,
        lmi_negative_definite,
        schur_negative_definite,
        meets_margin: lmi_max <= -problem.margin,
        agree: lmi_negative_definite == schur_negative_definite,
        gain,
    })
}
