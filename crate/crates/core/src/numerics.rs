//! Small dense complex/real linear-algebra kernels shared by every solver
//! module. No domain knowledge lives here.
//!
//! Everything is a pure function on immutable inputs and safe to call from
//! many threads. The matrices this problem produces are tiny (real systems are
//! at most `(2MD−1) × 2MD`), so the kernels favor determinism and robustness
//! over asymptotics.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

/// Default relative tolerance for eigen-solves, rank decisions and residual
/// audits.
pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_POWER_ITERATIONS: usize = 200_000;

const TAU: f64 = std::f64::consts::TAU;

/// Largest eigenvalue and a unit eigenvector of a Hermitian matrix.
///
/// Shifted power iteration with deterministic, seed-free starts (the basis
/// vector of the largest diagonal entry, then the normalized all-ones vector)
/// so results are run-to-run identical. The Gershgorin shift makes the target
/// eigenvalue dominant in modulus even for indefinite input. Returns the
/// Rayleigh quotient of the final iterate, which keeps downstream power
/// computations algebraically consistent with the returned vector.
///
/// The returned pair satisfies `‖H q − μ q‖ ≤ tol·‖H‖` and `‖q‖ = 1`.
pub fn hermitian_max_eig(h: &CMat, tol: f64) -> Result<(f64, CVec)> {
    let n = h.nrows();
    if n == 0 || h.ncols() != n {
        return Err(Error::invalid(format!(
            "hermitian_max_eig needs a square non-empty matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }

    // Row-sum (infinity) norm; also an upper bound on |λ|.
    let mut hnorm = 0.0f64;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            let z = h[(i, j)];
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::invalid("hermitian_max_eig: non-finite entry"));
            }
            row += z.norm();
        }
        hnorm = hnorm.max(row);
    }
    if hnorm == 0.0 {
        let mut q = CVec::zeros(n);
        q[0] = C64::new(1.0, 0.0);
        return Ok((0.0, q));
    }

    let mut herm_defect = 0.0f64;
    for i in 0..n {
        for j in i..n {
            herm_defect = herm_defect.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    if herm_defect > tol.max(f64::EPSILON) * hnorm {
        return Err(Error::invalid(format!(
            "matrix is not Hermitian: defect {herm_defect:.3e} exceeds {:.3e}",
            tol * hnorm
        )));
    }

    if n == 1 {
        let mut q = CVec::zeros(1);
        q[0] = C64::new(1.0, 0.0);
        return Ok((h[(0, 0)].re, q));
    }

    // Gershgorin lower bound on the spectrum; shift just enough that all
    // eigenvalues of H + cI are nonnegative.
    let mut lower = f64::INFINITY;
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if j != i {
                off += h[(i, j)].norm();
            }
        }
        lower = lower.min(h[(i, i)].re - off);
    }
    let shift = (-lower).max(0.0) + hnorm * 1e-3;

    let start_diag = {
        let mut best = 0usize;
        for i in 1..n {
            if h[(i, i)].re > h[(best, best)].re {
                best = i;
            }
        }
        let mut q = CVec::zeros(n);
        q[best] = C64::new(1.0, 0.0);
        q
    };
    let ones = CVec::from_element(n, C64::new(1.0 / (n as f64).sqrt(), 0.0));

    let mut best: Option<(f64, CVec)> = None;
    let mut closest = f64::INFINITY;
    for start in [start_diag, ones] {
        match power_iterate(h, start, shift, tol, hnorm) {
            Ok((mu, q)) => match &best {
                Some((mu_best, _)) if *mu_best >= mu => {}
                _ => best = Some((mu, q)),
            },
            Err(residual) => closest = closest.min(residual),
        }
    }
    best.ok_or(Error::NonConvergence {
        iterations: MAX_POWER_ITERATIONS,
        residual: closest,
    })
}

/// Returns the converged pair, or the last residual on failure.
fn power_iterate(
    h: &CMat,
    mut q: CVec,
    shift: f64,
    tol: f64,
    hnorm: f64,
) -> std::result::Result<(f64, CVec), f64> {
    let threshold = tol.max(f64::EPSILON) * hnorm;
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_POWER_ITERATIONS {
        let y = h * &q;
        let mu = q.dotc(&y).re;
        residual = (&y - &q * C64::new(mu, 0.0)).norm();
        if residual <= threshold {
            return Ok((mu, q.normalize()));
        }
        let stepped = y + &q * C64::new(shift, 0.0);
        let norm = stepped.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(residual);
        }
        q = stepped / C64::new(norm, 0.0);
    }
    Err(residual)
}

/// Orthonormal basis of the kernel of a real matrix.
///
/// Rank is decided from singular values relative to the largest one (scale
/// invariant). The complement of the row space is then extracted with a
/// deterministic greedy projection of the identity columns, so the basis is
/// reproducible and each vector `u` satisfies `‖A u‖ ≲ ε·‖A‖`, well inside
/// `tol·‖A‖` for the default tolerance.
pub fn real_nullspace_basis(a: &RMat, tol: f64) -> Vec<RVec> {
    let (rows, cols) = a.shape();
    if cols == 0 {
        return Vec::new();
    }
    if rows == 0 {
        return (0..cols)
            .map(|j| {
                let mut e = RVec::zeros(cols);
                e[j] = 1.0;
                e
            })
            .collect();
    }

    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("svd requested v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let threshold = tol * smax;

    let row_space: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > threshold)
        .collect();
    let rank = row_space.len();
    let kernel_dim = cols - rank;
    if kernel_dim == 0 {
        return Vec::new();
    }

    // Projector onto the orthogonal complement of the row space.
    let mut proj = RMat::identity(cols, cols);
    for &i in &row_space {
        let w = v_t.row(i).transpose();
        proj -= &w * w.transpose();
    }

    let mut basis = Vec::with_capacity(kernel_dim);
    for _ in 0..kernel_dim {
        // trace(P) = remaining kernel dimension, so the best column norm is
        // bounded below by 1/cols; the greedy pick never degenerates.
        let mut best_j = 0usize;
        let mut best_norm = -1.0f64;
        for j in 0..cols {
            let nj = proj[(j, j)];
            if nj > best_norm {
                best_norm = nj;
                best_j = j;
            }
        }
        let mut u: RVec = proj.column(best_j).into();
        // One re-orthogonalization pass against the row space and the
        // already-accepted kernel vectors.
        for &i in &row_space {
            let w = v_t.row(i).transpose();
            let c = w.dot(&u);
            u -= w * c;
        }
        for b in &basis {
            let b: &RVec = b;
            let c = b.dot(&u);
            u -= b * c;
        }
        let norm = u.norm();
        u /= norm;
        proj -= &u * u.transpose();
        basis.push(u);
    }
    basis
}

/// Shortest angular distance between two angles, in `[0, π]`.
///
/// Inputs are normalized internally, so any finite radians are accepted.
pub fn circular_distance(alpha: f64, beta: f64) -> f64 {
    let d = (alpha - beta).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Reduce an angle to `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r == TAU {
        0.0
    } else {
        r
    }
}
