//! Eigen-decomposition of real 4×4 matrices through a complex Schur form.
//!
//! The matrix is reduced to upper Hessenberg form with Givens rotations and
//! then driven to upper triangular form by single-shift QR sweeps with a
//! Wilkinson shift. Keeping everything in complex arithmetic makes the
//! reordering of the Schur form (needed for invariant subspaces) a sequence
//! of plain 2×2 rotations.

use num_complex::Complex64 as C64;

use crate::linalg::Mat4;

const N: usize = 4;
const MAX_ITER_PER_EIG: usize = 60;

pub type CMat4 = [[C64; N]; N];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EigError {
    #[error("eigenvalue iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// `H = Z T Z*` with `T` upper triangular and `Z` unitary.
#[derive(Clone, Debug)]
pub struct ComplexSchur {
    pub t: CMat4,
    pub z: CMat4,
}

/// Eigenvalues and unit-norm eigenvectors (stored as columns).
#[derive(Clone, Debug)]
pub struct Eigen4 {
    pub values: [C64; N],
    pub vectors: CMat4,
}

impl Eigen4 {
    pub fn vector(&self, k: usize) -> [C64; N] {
        std::array::from_fn(|i| self.vectors[i][k])
    }
}

#[derive(Clone, Copy)]
struct Rot {
    c: f64,
    s: C64,
}

impl Rot {
    /// Rotation mapping `(a, b)` onto `(r, 0)`.
    fn zeroing(a: C64, b: C64) -> Self {
        let nb = b.norm();
        if nb == 0.0 {
            return Rot { c: 1.0, s: C64::new(0.0, 0.0) };
        }
        let na = a.norm();
        if na == 0.0 {
            return Rot { c: 0.0, s: b.conj() / nb };
        }
        let r = na.hypot(nb);
        Rot {
            c: na / r,
            s: (a / na) * b.conj() / r,
        }
    }

    fn rows(&self, m: &mut CMat4, p: usize, q: usize) {
        for j in 0..N {
            let (x, y) = (m[p][j], m[q][j]);
            m[p][j] = x * self.c + self.s * y;
            m[q][j] = -self.s.conj() * x + y * self.c;
        }
    }

    /// Right multiplication by the conjugate transpose.
    fn cols(&self, m: &mut CMat4, p: usize, q: usize) {
        for row in m.iter_mut() {
            let (x, y) = (row[p], row[q]);
            row[p] = x * self.c + self.s.conj() * y;
            row[q] = -self.s * x + y * self.c;
        }
    }

    fn similarity(&self, s: &mut ComplexSchur, p: usize, q: usize) {
        self.rows(&mut s.t, p, q);
        self.cols(&mut s.t, p, q);
        self.cols(&mut s.z, p, q);
    }
}

fn complex_identity() -> CMat4 {
    std::array::from_fn(|i| std::array::from_fn(|j| C64::new(if i == j { 1.0 } else { 0.0 }, 0.0)))
}

fn wilkinson_shift(a: C64, b: C64, c: C64, d: C64) -> C64 {
    let half = (a - d) * 0.5;
    let disc = (half * half + b * c).sqrt();
    let mean = (a + d) * 0.5;
    let m1 = mean + disc;
    let m2 = mean - disc;
    if (m1 - d).norm() <= (m2 - d).norm() {
        m1
    } else {
        m2
    }
}

/// Complex Schur decomposition of a real 4×4 matrix.
pub fn schur4(h: &Mat4) -> Result<ComplexSchur, EigError> {
    if h.iter().flatten().any(|x| !x.is_finite()) {
        return Err(EigError::NonFinite);
    }
    let mut s = ComplexSchur {
        t: std::array::from_fn(|i| std::array::from_fn(|j| C64::new(h[i][j], 0.0))),
        z: complex_identity(),
    };
    let scale = h.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return Ok(s);
    }

    // Hessenberg reduction.
    for k in 0..N - 2 {
        for i in k + 2..N {
            let rot = Rot::zeroing(s.t[k + 1][k], s.t[i][k]);
            rot.similarity(&mut s, k + 1, i);
            s.t[i][k] = C64::new(0.0, 0.0);
        }
    }

    let eps = f64::EPSILON;
    let mut hi = N - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    while hi > 0 {
        // Deflate negligible subdiagonal entries.
        for k in 1..=hi {
            let tiny = eps * (s.t[k][k].norm() + s.t[k - 1][k - 1].norm()).max(eps * scale);
            if s.t[k][k - 1].norm() <= tiny {
                s.t[k][k - 1] = C64::new(0.0, 0.0);
            }
        }
        if s.t[hi][hi - 1].norm() == 0.0 {
            hi -= 1;
            iter = 0;
            continue;
        }
        let mut lo = hi - 1;
        while lo > 0 && s.t[lo][lo - 1].norm() != 0.0 {
            lo -= 1;
        }

        iter += 1;
        total += 1;
        if iter > MAX_ITER_PER_EIG {
            return Err(EigError::NoConvergence(total));
        }
        let mu = if iter % 11 == 10 {
            s.t[hi][hi] + s.t[hi][hi - 1].norm() * 0.75
        } else {
            wilkinson_shift(
                s.t[hi - 1][hi - 1],
                s.t[hi - 1][hi],
                s.t[hi][hi - 1],
                s.t[hi][hi],
            )
        };

        // Implicit single-shift sweep with bulge chasing.
        let rot = Rot::zeroing(s.t[lo][lo] - mu, s.t[lo + 1][lo]);
        rot.similarity(&mut s, lo, lo + 1);
        for k in lo + 1..hi {
            let rot = Rot::zeroing(s.t[k][k - 1], s.t[k + 1][k - 1]);
            rot.similarity(&mut s, k, k + 1);
            s.t[k + 1][k - 1] = C64::new(0.0, 0.0);
        }
    }
    for i in 1..N {
        for j in 0..i {
            s.t[i][j] = C64::new(0.0, 0.0);
        }
    }
    Ok(s)
}

impl ComplexSchur {
    pub fn eigenvalues(&self) -> [C64; N] {
        std::array::from_fn(|i| self.t[i][i])
    }

    /// Exchanges the diagonal entries `k` and `k + 1` while keeping the form
    /// triangular.
    pub fn swap(&mut self, k: usize) {
        let t11 = self.t[k][k];
        let t22 = self.t[k + 1][k + 1];
        let t12 = self.t[k][k + 1];
        // The adjoint of this rotation has (t12, t22 - t11), the eigenvector
        // of the 2×2 block for t22, as its first column.
        let rot = Rot::zeroing(t12, t22 - t11);
        rot.similarity(self, k, k + 1);
        self.t[k + 1][k] = C64::new(0.0, 0.0);
    }

    /// Moves every eigenvalue satisfying `select` to the leading block,
    /// preserving relative order. Returns the number of selected values.
    pub fn reorder(&mut self, select: impl Fn(C64) -> bool) -> usize {
        let mut placed = 0;
        for k in 0..N {
            if select(self.t[k][k]) {
                let mut j = k;
                while j > placed {
                    self.swap(j - 1);
                    j -= 1;
                }
                placed += 1;
            }
        }
        placed
    }

    /// Eigenvectors of the original matrix (columns), unit 2-norm.
    pub fn eigenvectors(&self) -> CMat4 {
        let t = &self.t;
        let norm = t
            .iter()
            .flatten()
            .fold(0.0f64, |m, x| m.max(x.norm()))
            .max(f64::MIN_POSITIVE);
        let small = f64::EPSILON * norm;
        let mut out = [[C64::new(0.0, 0.0); N]; N];
        for k in 0..N {
            let lambda = t[k][k];
            let mut y = [C64::new(0.0, 0.0); N];
            y[k] = C64::new(1.0, 0.0);
            for i in (0..k).rev() {
                let mut acc = t[i][k];
                for j in i + 1..k {
                    acc += t[i][j] * y[j];
                }
                let mut den = t[i][i] - lambda;
                if den.norm() < small {
                    den = C64::new(small, 0.0);
                }
                y[i] = -acc / den;
            }
            let mut v = [C64::new(0.0, 0.0); N];
            for (i, vi) in v.iter_mut().enumerate() {
                for (j, yj) in y.iter().enumerate().take(k + 1) {
                    *vi += self.z[i][j] * yj;
                }
            }
            let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            for i in 0..N {
                out[i][k] = v[i] / n;
            }
        }
        out
    }
}

/// Eigenpairs of a real 4×4 matrix.
pub fn eig4(h: &Mat4) -> Result<Eigen4, EigError> {
    let s = schur4(h)?;
    Ok(Eigen4 {
        values: s.eigenvalues(),
        vectors: s.eigenvectors(),
    })
}
