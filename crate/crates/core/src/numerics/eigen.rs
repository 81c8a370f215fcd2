use num_complex::Complex64;

use super::{DenseMatrix, NumericsError};

const MAX_JACOBI_SWEEPS: usize = 100;
const MAX_QR_ITERATIONS_PER_ROOT: usize = 60;
const MAX_POWER_ITERATIONS: usize = 5_000;

/// Eigendecomposition of a symmetric matrix. `vectors` holds the
/// eigenvectors as columns, in the same order as `values` (ascending).
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

impl SymmetricEigen {
    /// Rebuilds `Q diag(f(lambda)) Q^T`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let n = self.values.len();
        let mapped: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        DenseMatrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.vectors[(i, k)] * mapped[k] * self.vectors[(j, k)])
                .sum()
        })
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::INFINITY)
    }
}

/// Cyclic Jacobi eigendecomposition. The input must be symmetric within
/// tolerance; it is symmetrized before rotating.
pub fn symmetric_eigen(m: &DenseMatrix) -> Result<SymmetricEigen, NumericsError> {
    let mut a = m.symmetrized()?;
    a.require_finite()?;
    let n = a.rows();
    let mut v = DenseMatrix::identity(n);
    let scale = a.frobenius_norm();

    let mut converged = n < 2 || scale == 0.0;
    let mut sweep = 0;
    while !converged && sweep < MAX_JACOBI_SWEEPS {
        sweep += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let negligible = apq.abs() <= 0.5 * f64::EPSILON * (app.abs() * aqq.abs()).sqrt()
                    || apq.abs() <= 1e-30 * scale;
                if negligible {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(NumericsError::NoConvergence {
            routine: "jacobi eigensolver",
            iterations: MAX_JACOBI_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok(SymmetricEigen { values, vectors })
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Result<Vec<f64>, NumericsError> {
    symmetric_eigen(m).map(|e| e.values)
}

/// Reduces a square matrix to upper Hessenberg form by Householder
/// similarity transforms.
fn hessenberg(m: &DenseMatrix) -> DenseMatrix {
    let n = m.rows();
    let mut a = m.clone();
    for k in 0..n.saturating_sub(2) {
        let norm: f64 = ((k + 1)..n).map(|i| a[(i, k)].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = a[(k + 1, k)];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = ((k + 1)..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);

        // A <- H A with H = I - 2 v v^T acting on rows k+1..n
        for j in 0..n {
            let dot: f64 = v.iter().enumerate().map(|(r, vr)| vr * a[(k + 1 + r, j)]).sum();
            for (r, vr) in v.iter().enumerate() {
                a[(k + 1 + r, j)] -= 2.0 * vr * dot;
            }
        }
        // A <- A H acting on columns k+1..n
        for i in 0..n {
            let dot: f64 = v.iter().enumerate().map(|(c, vc)| vc * a[(i, k + 1 + c)]).sum();
            for (c, vc) in v.iter().enumerate() {
                a[(i, k + 1 + c)] -= 2.0 * vc * dot;
            }
        }
        for i in (k + 2)..n {
            a[(i, k)] = 0.0;
        }
    }
    a
}

/// All eigenvalues of a general real square matrix via Hessenberg reduction
/// and Francis double-shift QR. Order is the deflation order, not sorted.
pub fn general_eigenvalues(m: &DenseMatrix) -> Result<Vec<Complex64>, NumericsError> {
    m.require_square()?;
    m.require_finite()?;
    let n = m.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a = hessenberg(m);
    let mut roots = vec![Complex64::new(0.0, 0.0); n];

    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }

    let mut nn = n as isize - 1;
    let mut shift_acc = 0.0;
    let mut its = 0usize;
    while nn >= 0 {
        let top = nn as usize;
        // look for a small subdiagonal element
        let mut l = top;
        while l > 0 {
            let mut s = a[(l - 1, l - 1)].abs() + a[(l, l)].abs();
            if s == 0.0 {
                s = anorm;
            }
            if a[(l, l - 1)].abs() <= f64::EPSILON * s {
                a[(l, l - 1)] = 0.0;
                break;
            }
            l -= 1;
        }

        let mut x = a[(top, top)];
        if l == top {
            roots[top] = Complex64::new(x + shift_acc, 0.0);
            nn -= 1;
            its = 0;
            continue;
        }
        let mut y = a[(top - 1, top - 1)];
        let mut w = a[(top, top - 1)] * a[(top - 1, top)];
        if l + 1 == top {
            let p = 0.5 * (y - x);
            let q = p * p + w;
            let z = q.abs().sqrt();
            x += shift_acc;
            if q >= 0.0 {
                let z = p + z.copysign(p);
                roots[top - 1] = Complex64::new(x + z, 0.0);
                roots[top] = if z != 0.0 {
                    Complex64::new(x - w / z, 0.0)
                } else {
                    Complex64::new(x + z, 0.0)
                };
            } else {
                roots[top] = Complex64::new(x + p, -z);
                roots[top - 1] = Complex64::new(x + p, z);
            }
            nn -= 2;
            its = 0;
            continue;
        }

        if its == MAX_QR_ITERATIONS_PER_ROOT {
            return Err(NumericsError::NoConvergence {
                routine: "hessenberg QR",
                iterations: its,
            });
        }
        if its == 10 || its == 20 || its == 40 {
            // exceptional shift
            shift_acc += x;
            for i in 0..=top {
                a[(i, i)] -= x;
            }
            let s = a[(top, top - 1)].abs() + a[(top - 1, top - 2)].abs();
            x = 0.75 * s;
            y = x;
            w = -0.4375 * s * s;
        }
        its += 1;

        // form shift and look for two consecutive small subdiagonal elements
        let mut mm = top - 2;
        let (mut p, mut q, mut r);
        loop {
            let z = a[(mm, mm)];
            let rr = x - z;
            let ss = y - z;
            p = (rr * ss - w) / a[(mm + 1, mm)] + a[(mm, mm + 1)];
            q = a[(mm + 1, mm + 1)] - z - rr - ss;
            r = a[(mm + 2, mm + 1)];
            let s = p.abs() + q.abs() + r.abs();
            p /= s;
            q /= s;
            r /= s;
            if mm == l {
                break;
            }
            let u = a[(mm, mm - 1)].abs() * (q.abs() + r.abs());
            let v = p.abs() * (a[(mm - 1, mm - 1)].abs() + z.abs() + a[(mm + 1, mm + 1)].abs());
            if u <= f64::EPSILON * v {
                break;
            }
            mm -= 1;
        }
        for i in mm..(top - 1) {
            a[(i + 2, i)] = 0.0;
            if i != mm {
                a[(i + 2, i - 1)] = 0.0;
            }
        }

        // double QR step on rows l..top and columns mm..top
        for k in mm..top {
            if k != mm {
                p = a[(k, k - 1)];
                q = a[(k + 1, k - 1)];
                r = if k + 1 != top { a[(k + 2, k - 1)] } else { 0.0 };
                x = p.abs() + q.abs() + r.abs();
                if x != 0.0 {
                    p /= x;
                    q /= x;
                    r /= x;
                }
            }
            let s = (p * p + q * q + r * r).sqrt().copysign(p);
            if s == 0.0 {
                continue;
            }
            if k == mm {
                if l != mm {
                    a[(k, k - 1)] = -a[(k, k - 1)];
                }
            } else {
                a[(k, k - 1)] = -s * x;
            }
            p += s;
            x = p / s;
            y = q / s;
            let z = r / s;
            q /= p;
            r /= p;
            for j in k..=top {
                let mut pp = a[(k, j)] + q * a[(k + 1, j)];
                if k + 1 != top {
                    pp += r * a[(k + 2, j)];
                    a[(k + 2, j)] -= pp * z;
                }
                a[(k + 1, j)] -= pp * y;
                a[(k, j)] -= pp * x;
            }
            let mmin = top.min(k + 3);
            for i in l..=mmin {
                let mut pp = x * a[(i, k)] + y * a[(i, k + 1)];
                if k + 1 != top {
                    pp += z * a[(i, k + 2)];
                    a[(i, k + 2)] -= pp * r;
                }
                a[(i, k + 1)] -= pp * q;
                a[(i, k)] -= pp;
            }
        }
    }
    Ok(roots)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumMethod {
    /// Collatz-Wielandt bracketing with power iteration on `M + I`.
    PowerIteration,
    /// Full Hessenberg-QR eigensolver.
    Eigensolver,
}

#[derive(Debug, Clone)]
pub struct SpectrumResult {
    pub spectral_radius: f64,
    /// The full spectrum when the eigensolver ran; only the Perron root when
    /// power iteration converged.
    pub eigenvalues: Vec<Complex64>,
    pub converged: bool,
    pub iterations: usize,
    pub method: SpectrumMethod,
}

/// Spectral radius of a square matrix.
///
/// Nonnegative inputs go through power iteration on `M + I` (same Perron
/// vector, primitive whenever `M` is irreducible), stopping once the
/// Collatz-Wielandt bounds `min_i (Ax)_i/x_i <= rho <= max_i (Ax)_i/x_i` are
/// within `tol` of each other. The start vector is the normalized all-ones
/// vector. If the bracket does not close (reducible or slowly mixing
/// matrices), or the input has negative entries, the full eigensolver is used.
pub fn spectral_radius(m: &DenseMatrix, tol: f64) -> Result<SpectrumResult, NumericsError> {
    m.require_square()?;
    m.require_finite()?;
    let n = m.rows();
    if n == 0 {
        return Ok(SpectrumResult {
            spectral_radius: 0.0,
            eigenvalues: Vec::new(),
            converged: true,
            iterations: 0,
            method: SpectrumMethod::Eigensolver,
        });
    }

    let mut iterations = 0;
    if m.is_nonnegative() {
        let mut x = vec![1.0 / (n as f64).sqrt(); n];
        while iterations < MAX_POWER_ITERATIONS {
            iterations += 1;
            let mut y = m.matvec(&x)?;
            for (yi, xi) in y.iter_mut().zip(&x) {
                *yi += xi;
            }
            let (lo, hi) = x.iter().zip(&y).fold((f64::INFINITY, 0.0f64), |(lo, hi), (xi, yi)| {
                let ratio = yi / xi;
                (lo.min(ratio), hi.max(ratio))
            });
            if hi - lo <= tol {
                let rho = (0.5 * (lo + hi) - 1.0).max(0.0);
                return Ok(SpectrumResult {
                    spectral_radius: rho,
                    eigenvalues: vec![Complex64::new(rho, 0.0)],
                    converged: true,
                    iterations,
                    method: SpectrumMethod::PowerIteration,
                });
            }
            let norm = super::norm2(&y);
            x = y.into_iter().map(|v| v / norm).collect();
            if x.iter().any(|&v| v <= f64::MIN_POSITIVE) {
                break;
            }
        }
    }

    let eigenvalues = general_eigenvalues(m)?;
    let rho = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(SpectrumResult {
        spectral_radius: rho,
        eigenvalues,
        converged: true,
        iterations,
        method: SpectrumMethod::Eigensolver,
    })
}
