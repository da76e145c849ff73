//! Continuous-time algebraic Riccati equation
//! `AᵀΠ + ΠA − ΠBR⁻¹BᵀΠ + Q = 0` for 2×2 problems.
//!
//! Two independent solvers are provided: an invariant-subspace method on the
//! 4×4 Hamiltonian (the fast path) and Newton–Kleinman iteration (the oracle).
//!
//! Both handle one degenerate situation that the consensus problem hits at
//! every state: a unit vector `e` with `Qe = 0` and `Ae = 0`. The Hamiltonian
//! then has a double eigenvalue at the origin and no strictly stabilizing
//! solution exists. The solvers return the solution with `Πe = 0`, which
//! leaves the closed loop marginally stable along `e` only; the direction is
//! reported in [`RiccatiSolution::marginal_mode`].

use num_complex::Complex64 as C64;

use crate::eig::{schur4, EigError};
use crate::linalg::{dot, lyapunov, Mat2, Mat4, Vec2};

pub const RESIDUAL_TOL: f64 = 1e-9;
const SINGULAR_COND: f64 = 1e12;
const DIVERGED: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RiccatiError {
    #[error("invalid Riccati problem: {0}")]
    InvalidProblem(String),
    #[error("pair (A, B) is not stabilizable: {stable} stable Hamiltonian eigenvalues")]
    NotStabilizable { stable: usize },
    #[error("stable subspace basis is singular (condition number {cond:.3e})")]
    SingularSubspace { cond: f64 },
    #[error("Newton iteration did not converge in {iterations} steps (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Newton iterate diverged")]
    DivergedIterate,
    #[error(transparent)]
    Eigen(#[from] EigError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiccatiProblem {
    pub a: Mat2,
    pub b: Mat2,
    pub q: Mat2,
    pub r: Mat2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiccatiSolution {
    pub pi: Mat2,
    /// Frobenius norm of the Riccati residual.
    pub residual: f64,
    /// Unobservable direction with eigenvalue on the imaginary axis, if the
    /// problem had one. The closed loop keeps a zero eigenvalue along it.
    pub marginal_mode: Option<Vec2>,
    pub iterations: usize,
}

impl RiccatiProblem {
    pub fn new(a: Mat2, b: Mat2, q: Mat2, r: Mat2) -> Self {
        Self { a, b, q, r }
    }

    pub fn validate(&self) -> Result<(), RiccatiError> {
        for (name, m) in [("A", self.a), ("B", self.b), ("Q", self.q), ("R", self.r)] {
            if !m.is_finite() {
                return Err(RiccatiError::InvalidProblem(format!("{name} has non-finite entries")));
            }
        }
        let sym_tol = 1e-12 * self.q.max_abs().max(1.0);
        if self.q.asymmetry() > sym_tol {
            return Err(RiccatiError::InvalidProblem("Q is not symmetric".into()));
        }
        if self.q.sym_eigen().0[0] < -1e-12 * self.q.max_abs().max(1.0) {
            return Err(RiccatiError::InvalidProblem("Q is not positive semidefinite".into()));
        }
        if self.r.asymmetry() > 1e-12 * self.r.max_abs().max(1.0) {
            return Err(RiccatiError::InvalidProblem("R is not symmetric".into()));
        }
        if self.r.sym_eigen().0[0] <= 0.0 {
            return Err(RiccatiError::InvalidProblem("R is not positive definite".into()));
        }
        Ok(())
    }

    /// `W = B R⁻¹ Bᵀ`
    pub fn w(&self) -> Mat2 {
        let r_inv = self.r.inverse().expect("R validated as positive definite");
        (self.b * r_inv * self.b.transpose()).symmetrize()
    }

    /// Feedback gain `K = R⁻¹BᵀΠ`, so that `u = −Kx`.
    pub fn gain(&self, pi: &Mat2) -> Mat2 {
        let r_inv = self.r.inverse().expect("R validated as positive definite");
        r_inv * self.b.transpose() * *pi
    }

    pub fn residual_matrix(&self, pi: &Mat2) -> Mat2 {
        self.a.transpose() * *pi + *pi * self.a - *pi * self.w() * *pi + self.q
    }

    pub fn residual(&self, pi: &Mat2) -> f64 {
        self.residual_matrix(pi).frobenius()
    }

    pub fn closed_loop(&self, pi: &Mat2) -> Mat2 {
        self.a - self.w() * *pi
    }

    /// Finds `e` with `Qe = 0` and `Ae = 0` (up to tolerance), when `Q` has
    /// rank one.
    pub fn marginal_unobservable_mode(&self) -> Option<Vec2> {
        let ([lo, hi], e) = self.q.sym_eigen();
        let q_scale = self.q.max_abs();
        if q_scale == 0.0 || hi <= 0.0 || lo.abs() > 1e-14 * q_scale {
            return None;
        }
        let ae = self.a.mul_vec(e);
        let tol = 1e-12 * self.a.max_abs().max(1.0);
        if ae[0].abs() <= tol && ae[1].abs() <= tol {
            Some(e)
        } else {
            None
        }
    }

    pub fn hamiltonian(&self) -> Mat4 {
        let w = self.w();
        let a = &self.a.0;
        let q = &self.q.0;
        [
            [a[0][0], a[0][1], -w.0[0][0], -w.0[0][1]],
            [a[1][0], a[1][1], -w.0[1][0], -w.0[1][1]],
            [-q[0][0], -q[0][1], -a[0][0], -a[1][0]],
            [-q[1][0], -q[1][1], -a[0][1], -a[1][1]],
        ]
    }
}

impl RiccatiSolution {
    fn finish(p: &RiccatiProblem, pi: Mat2, marginal_mode: Option<Vec2>, iterations: usize) -> Self {
        let pi = pi.symmetrize();
        RiccatiSolution {
            residual: p.residual(&pi),
            pi,
            marginal_mode,
            iterations,
        }
    }

    /// Closed-loop spectrum is in the open left half plane, except along the
    /// reported marginal mode where it is zero.
    pub fn closed_loop_ok(&self, p: &RiccatiProblem) -> bool {
        let acl = p.closed_loop(&self.pi);
        match self.marginal_mode {
            None => acl.eigenvalues().iter().all(|(re, _)| *re < 0.0),
            Some(e) => {
                let f = [-e[1], e[0]];
                let along = acl.mul_vec(e);
                let tol = 1e-8 * acl.max_abs().max(1.0);
                dot(f, acl.mul_vec(f)) < 0.0 && along[0].abs() <= tol && along[1].abs() <= tol
            }
        }
    }

    pub fn is_psd(&self) -> bool {
        self.pi.sym_eigen().0[0] >= -1e-10
    }
}

fn complex_inverse2(m: [[C64; 2]; 2]) -> Option<([[C64; 2]; 2], f64)> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let norm = m.iter().flatten().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if det.norm() == 0.0 {
        return None;
    }
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let inv_norm = inv.iter().flatten().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    Some((inv, norm * inv_norm))
}

/// Stabilizing solution from the stable invariant subspace of the
/// Hamiltonian `[[A, −W], [−Q, −Aᵀ]]`.
pub fn solve_care_hamiltonian(p: &RiccatiProblem) -> Result<RiccatiSolution, RiccatiError> {
    p.validate()?;
    let h = p.hamiltonian();
    let h_scale = h.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let mut schur = schur4(&h)?;
    let marginal = p.marginal_unobservable_mode();

    let stable_tol = 1e-10 * h_scale;
    // Columns [X; Y] of the chosen invariant subspace.
    let (x, y) = match marginal {
        None => {
            let k = schur.reorder(|l| l.re < -stable_tol);
            if k != 2 {
                return Err(RiccatiError::NotStabilizable { stable: k });
            }
            let z = &schur.z;
            (
                [[z[0][0], z[0][1]], [z[1][0], z[1][1]]],
                [[z[2][0], z[2][1]], [z[3][0], z[3][1]]],
            )
        }
        Some(e) => {
            // The double zero eigenvalue is defective and only known to
            // ~sqrt(eps); take the single most stable eigenvalue and complete
            // the subspace with the exact eigenvector [e; 0].
            let ev = schur.eigenvalues();
            let min_re = ev.iter().map(|l| l.re).fold(f64::INFINITY, f64::min);
            if min_re >= -stable_tol {
                return Err(RiccatiError::NotStabilizable { stable: 0 });
            }
            schur.reorder(|l| l.re == min_re);
            let z = &schur.z;
            let zero = C64::new(0.0, 0.0);
            (
                [[z[0][0], C64::new(e[0], 0.0)], [z[1][0], C64::new(e[1], 0.0)]],
                [[z[2][0], zero], [z[3][0], zero]],
            )
        }
    };

    let (x_inv, cond) = complex_inverse2(x).ok_or(RiccatiError::SingularSubspace { cond: f64::INFINITY })?;
    if !(cond <= SINGULAR_COND) {
        return Err(RiccatiError::SingularSubspace { cond });
    }
    let mut pi = Mat2::ZERO;
    for i in 0..2 {
        for j in 0..2 {
            pi.0[i][j] = (y[i][0] * x_inv[0][j] + y[i][1] * x_inv[1][j]).re;
        }
    }
    Ok(RiccatiSolution::finish(p, pi, marginal, 1))
}

/// Default stabilizing initial guess for Newton–Kleinman: `Π₀ = Z⁺` where
/// `(A + cI)Z + Z(A + cI)ᵀ = 2W` and `A + cI` is anti-stable.
pub fn default_initial_guess(p: &RiccatiProblem) -> Result<Mat2, RiccatiError> {
    let c = p.a.frobenius() + 1.0;
    let shifted = p.a + Mat2::scaled_identity(c);
    // lyapunov() solves MᵀX + XM = −C; use M = (A + cI)ᵀ.
    let z = lyapunov(&shifted.transpose(), &(p.w().scale(-2.0)))
        .ok_or(RiccatiError::InvalidProblem("shifted Lyapunov equation is singular".into()))?
        .symmetrize();
    let ([lo, hi], v) = z.sym_eigen();
    let cut = 1e-12 * hi.abs().max(f64::MIN_POSITIVE);
    let u = [-v[1], v[0]];
    let mut pinv = Mat2::ZERO;
    for (lam, vec) in [(lo, v), (hi, u)] {
        if lam > cut {
            for i in 0..2 {
                for j in 0..2 {
                    pinv.0[i][j] += vec[i] * vec[j] / lam;
                }
            }
        }
    }
    Ok(pinv)
}

/// Newton–Kleinman iteration: each step solves the Lyapunov equation
/// `A_kᵀ Π + Π A_k = −(Q + Π_k W Π_k)` with `A_k = A − WΠ_k`.
pub fn solve_care_newton(
    p: &RiccatiProblem,
    pi0: Option<Mat2>,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution, RiccatiError> {
    p.validate()?;
    if let Some(e) = p.marginal_unobservable_mode() {
        return newton_deflated(p, e, tol, max_iter);
    }
    let w = p.w();
    let mut pi = match pi0 {
        Some(m) => m,
        None => default_initial_guess(p)?,
    };
    if !p.closed_loop(&pi).eigenvalues().iter().all(|(re, _)| *re < 0.0) {
        return Err(RiccatiError::NotStabilizable { stable: 0 });
    }
    let mut residual = p.residual(&pi);
    for it in 1..=max_iter {
        let acl = p.a - w * pi;
        let rhs = p.q + pi * w * pi;
        let next = lyapunov(&acl, &rhs).ok_or(RiccatiError::DivergedIterate)?.symmetrize();
        if !next.is_finite() || next.max_abs() > DIVERGED {
            return Err(RiccatiError::DivergedIterate);
        }
        pi = next;
        residual = p.residual(&pi);
        if residual < tol {
            return Ok(RiccatiSolution::finish(p, pi, None, it));
        }
    }
    Err(RiccatiError::NoConvergence { iterations: max_iter, residual })
}

/// With `Πe = 0` forced, the equation collapses onto the orthogonal
/// direction `f`: `w_f p² − 2 a_f p − q_f = 0`, `Π = p f fᵀ`. Solved with the
/// scalar Newton–Kleinman recursion.
fn newton_deflated(
    p: &RiccatiProblem,
    e: Vec2,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution, RiccatiError> {
    let f = [-e[1], e[0]];
    let w = p.w();
    let a_f = dot(f, p.a.mul_vec(f));
    let w_f = dot(f, w.mul_vec(f));
    let q_f = dot(f, p.q.mul_vec(f));
    if w_f <= 0.0 {
        return Err(RiccatiError::NotStabilizable { stable: 0 });
    }
    let outer = |s: f64| Mat2([[s * f[0] * f[0], s * f[0] * f[1]], [s * f[1] * f[0], s * f[1] * f[1]]]);
    let mut pf = (a_f.abs() + 1.0) / w_f;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let acl = a_f - w_f * pf;
        pf = (q_f + w_f * pf * pf) / (-2.0 * acl);
        if !pf.is_finite() || pf.abs() > DIVERGED {
            return Err(RiccatiError::DivergedIterate);
        }
        residual = p.residual(&outer(pf));
        if residual < tol {
            return Ok(RiccatiSolution::finish(p, outer(pf), Some(e), it));
        }
    }
    Err(RiccatiError::NoConvergence { iterations: max_iter, residual })
}

/// Fast-path solver used by the feedback synthesis.
pub fn solve_care(p: &RiccatiProblem) -> Result<RiccatiSolution, RiccatiError> {
    solve_care_hamiltonian(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn double_integrator() -> RiccatiProblem {
        RiccatiProblem::new(
            Mat2::new(0.0, 1.0, 0.0, 0.0),
            Mat2::new(0.0, 0.0, 1.0, 0.0),
            Mat2::IDENTITY,
            Mat2::IDENTITY,
        )
    }

    /// The scalar problem a=0, b=1, q=1, r=1 embedded with a decoupled,
    /// uncontrolled but stable second state.
    fn embedded_scalar() -> RiccatiProblem {
        RiccatiProblem::new(
            Mat2::diag(0.0, -1.0),
            Mat2::diag(1.0, 0.0),
            Mat2::diag(1.0, 0.0),
            Mat2::IDENTITY,
        )
    }

    #[test]
    fn scalar_embedding() {
        let p = embedded_scalar();
        for sol in [
            solve_care_hamiltonian(&p).unwrap(),
            solve_care_newton(&p, None, 1e-13, 50).unwrap(),
        ] {
            assert_abs_diff_eq!(sol.pi.0[0][0], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(sol.pi.0[1][1], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(sol.pi.0[0][1], 0.0, epsilon = 1e-12);
            assert!(sol.residual <= 1e-12);
            assert!(sol.closed_loop_ok(&p));
        }
        assert!(solve_care_newton(&p, None, 1e-13, 50).unwrap().iterations <= 5);
    }

    #[test]
    fn double_integrator_closed_form() {
        let p = double_integrator();
        let s3 = 3f64.sqrt();
        for sol in [
            solve_care_hamiltonian(&p).unwrap(),
            solve_care_newton(&p, None, 1e-13, 50).unwrap(),
        ] {
            assert_abs_diff_eq!(sol.pi.0[0][0], s3, epsilon = 1e-10);
            assert_abs_diff_eq!(sol.pi.0[0][1], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(sol.pi.0[1][0], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(sol.pi.0[1][1], s3, epsilon = 1e-10);
            assert!(sol.closed_loop_ok(&p));
        }
    }

    #[test]
    fn consensus_problem_has_kernel_along_ones() {
        // A at (xi, xbar) = (0, 0), beta = -1; gamma = 0.025
        let p = RiccatiProblem::new(
            Mat2::new(1.0, -1.0, 0.0, 0.0),
            Mat2::IDENTITY,
            Mat2::new(1.0, -1.0, -1.0, 1.0),
            Mat2::scaled_identity(0.0125),
        );
        let h = solve_care_hamiltonian(&p).unwrap();
        let n = solve_care_newton(&p, None, 1e-12, 50).unwrap();
        assert!(h.residual <= 1e-9 && n.residual <= 1e-9);
        let k = h.pi.mul_vec([1.0, 1.0]);
        assert!(k[0].abs() < 1e-12 && k[1].abs() < 1e-12);
        assert!((h.pi - n.pi).frobenius() < 1e-10);
        assert!(h.closed_loop_ok(&p) && h.is_psd());
        // p = (a + sqrt(a² + w q)) / w on f = (1, -1)/√2 with a = 1, w = 80, q = 2
        let pf = (1.0 + (1.0f64 + 160.0).sqrt()) / 80.0;
        assert_abs_diff_eq!(h.pi.0[0][0], pf / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_indefinite_weights() {
        let mut p = double_integrator();
        p.r = Mat2::diag(1.0, -1.0);
        assert!(matches!(solve_care_hamiltonian(&p), Err(RiccatiError::InvalidProblem(_))));
        let mut p = double_integrator();
        p.q = Mat2::new(1.0, 0.5, 0.0, 1.0);
        assert!(matches!(solve_care_newton(&p, None, 1e-12, 10), Err(RiccatiError::InvalidProblem(_))));
    }

    #[test]
    fn unstabilizable_pair_is_reported() {
        // Unstable, uncontrollable second mode.
        let p = RiccatiProblem::new(
            Mat2::diag(-1.0, 1.0),
            Mat2::diag(1.0, 0.0),
            Mat2::IDENTITY,
            Mat2::IDENTITY,
        );
        assert!(matches!(
            solve_care_hamiltonian(&p),
            Err(RiccatiError::NotStabilizable { .. }) | Err(RiccatiError::SingularSubspace { .. })
        ));
    }

    #[test]
    fn newton_reports_non_convergence() {
        let p = double_integrator();
        let err = solve_care_newton(&p, None, 0.0, 3).unwrap_err();
        assert!(matches!(err, RiccatiError::NoConvergence { iterations: 3, .. }));
    }

    #[test]
    fn newton_rejects_destabilizing_start() {
        let p = double_integrator();
        let err = solve_care_newton(&p, Some(Mat2::ZERO), 1e-12, 20).unwrap_err();
        assert!(matches!(err, RiccatiError::NotStabilizable { .. }));
    }
}
