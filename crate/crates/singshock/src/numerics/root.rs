//! Damped Newton iteration for small nonlinear systems.
//!
//! The Jacobian is estimated by central finite differences with a step of
//! sqrt(machine epsilon) scaled by coordinate magnitude, solved by LU
//! factorization. When the full Newton step fails to reduce the residual
//! norm, the step is halved (up to 20 times) before being accepted, which
//! keeps the iteration from bouncing out of the basin on strongly nonlinear
//! residuals such as shooting maps.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RootError {
    /// The residual norm failed to drop below the tolerance within the
    /// iteration budget. `best_norm` is the smallest max-norm seen.
    #[error("no convergence after {iterations} iterations (best residual {best_norm:.3e})")]
    NoConvergence { iterations: usize, best_norm: f64 },
    /// The finite-difference Jacobian was not invertible at the current
    /// iterate.
    #[error("singular Jacobian encountered")]
    SingularJacobian,
    /// The residual function itself failed to evaluate.
    #[error("residual evaluation failed: {0}")]
    Eval(String),
}

#[derive(Debug, Clone, Copy)]
pub struct RootConfig {
    /// Max-norm of the residual below which the iterate is accepted.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for RootConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 50 }
    }
}

const MAX_HALVINGS: u32 = 20;

/// Solve `F(x) = 0` starting from `x0`.
///
/// `F` may fail (for example when the residual involves an integration that
/// leaves the valid region); such failures abort the iteration as
/// [`RootError::Eval`].
pub fn solve_root<const N: usize>(
    mut f: impl FnMut(&[f64; N]) -> Result<[f64; N], String>,
    x0: [f64; N],
    cfg: &RootConfig,
) -> Result<[f64; N], RootError> {
    assert!(cfg.tol > 0.0, "solve_root: tol must be positive");
    let mut x = x0;
    let mut fx = f(&x).map_err(RootError::Eval)?;
    let mut norm = max_norm(&fx);
    let mut best_norm = norm;
    for _ in 0..cfg.max_iters {
        if norm < cfg.tol {
            return Ok(x);
        }
        let jac = fd_jacobian(&mut f, &x)?;
        let rhs = DVector::from_row_slice(&fx);
        let step = jac
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(RootError::SingularJacobian)?;

        // Step halving: insist on strict residual decrease, but after the
        // halving budget accept the smallest trial step so a flat stretch
        // stalls into NoConvergence instead of aborting the iteration.
        let mut damping = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut trial = x;
            for i in 0..N {
                trial[i] -= damping * step[i];
            }
            match f(&trial) {
                Ok(ftrial) => {
                    let tnorm = max_norm(&ftrial);
                    if tnorm < norm {
                        accepted = Some((trial, ftrial, tnorm));
                        break;
                    }
                    if accepted.is_none() {
                        accepted = Some((trial, ftrial, tnorm));
                    } else if let Some((_, _, anorm)) = accepted {
                        if tnorm < anorm {
                            accepted = Some((trial, ftrial, tnorm));
                        }
                    }
                }
                Err(_) => {
                    // Trial left the residual's domain; retreat and retry.
                }
            }
            damping *= 0.5;
        }
        let (nx, nfx, nnorm) = accepted.ok_or_else(|| RootError::Eval(
            "residual failed to evaluate along the entire damped step".to_string(),
        ))?;
        x = nx;
        fx = nfx;
        norm = nnorm;
        best_norm = best_norm.min(norm);
    }
    if norm < cfg.tol {
        return Ok(x);
    }
    Err(RootError::NoConvergence { iterations: cfg.max_iters, best_norm })
}

fn max_norm<const N: usize>(v: &[f64; N]) -> f64 {
    v.iter().fold(0.0f64, |m, &a| m.max(a.abs()))
}

fn fd_jacobian<const N: usize>(
    f: &mut impl FnMut(&[f64; N]) -> Result<[f64; N], String>,
    x: &[f64; N],
) -> Result<DMatrix<f64>, RootError> {
    let sqrt_eps = f64::EPSILON.sqrt();
    let mut jac = DMatrix::zeros(N, N);
    for j in 0..N {
        let h = sqrt_eps * x[j].abs().max(1.0);
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += h;
        xm[j] -= h;
        let fp = f(&xp).map_err(RootError::Eval)?;
        let fm = f(&xm).map_err(RootError::Eval)?;
        // Use the actually realized spacing to cancel rounding in x ± h.
        let denom = xp[j] - xm[j];
        for i in 0..N {
            jac[(i, j)] = (fp[i] - fm[i]) / denom;
        }
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(RootError::SingularJacobian);
    }
    Ok(jac)
}
