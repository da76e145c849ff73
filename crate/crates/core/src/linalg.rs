//! Fixed-size dense kernels for the 2×2 / 4×4 problems that appear in the
//! binary consensus problem. Everything is unrolled or loops over constant
//! bounds; no heap allocation.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

pub type Vec2 = [f64; 2];

/// Real 2×2 matrix stored row-major.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[0.0, 0.0], [0.0, 0.0]]);
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub fn diag(a: f64, d: f64) -> Self {
        Mat2([[a, 0.0], [0.0, d]])
    }

    pub fn scaled_identity(s: f64) -> Self {
        Self::diag(s, s)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Mat2([
            [m[1][1] / d, -m[0][1] / d],
            [-m[1][0] / d, m[0][0] / d],
        ]))
    }

    pub fn scale(&self, s: f64) -> Self {
        let m = &self.0;
        Mat2([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1],
            m[1][0] * v[0] + m[1][1] * v[1],
        ]
    }

    /// `vᵀ M v`
    pub fn quad_form(&self, v: Vec2) -> f64 {
        dot(v, self.mul_vec(v))
    }

    pub fn symmetrize(&self) -> Self {
        let off = 0.5 * (self.0[0][1] + self.0[1][0]);
        Mat2([[self.0[0][0], off], [off, self.0[1][1]]])
    }

    pub fn frobenius(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }

    pub fn asymmetry(&self) -> f64 {
        (self.0[0][1] - self.0[1][0]).abs()
    }

    /// Eigenvalues of a symmetric matrix in ascending order, together with the
    /// unit eigenvector of the smaller one.
    pub fn sym_eigen(&self) -> ([f64; 2], Vec2) {
        let a = self.0[0][0];
        let d = self.0[1][1];
        let b = 0.5 * (self.0[0][1] + self.0[1][0]);
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        let lo = mean - rad;
        let hi = mean + rad;
        // Eigenvector of `lo`: pick the better conditioned of the two row forms.
        let v = if b == 0.0 {
            if a <= d {
                [1.0, 0.0]
            } else {
                [0.0, 1.0]
            }
        } else {
            let c1 = [b, lo - a];
            let c2 = [lo - d, b];
            if norm(c1) >= norm(c2) {
                c1
            } else {
                c2
            }
        };
        let n = norm(v);
        ([lo, hi], [v[0] / n, v[1] / n])
    }

    /// Complex eigenvalues `(re, im)` of a general 2×2 matrix.
    pub fn eigenvalues(&self) -> [(f64, f64); 2] {
        let half_tr = 0.5 * self.trace();
        let disc = half_tr * half_tr - self.det();
        if disc >= 0.0 {
            let s = disc.sqrt();
            [(half_tr - s, 0.0), (half_tr + s, 0.0)]
        } else {
            let s = (-disc).sqrt();
            [(half_tr, -s), (half_tr, s)]
        }
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        Mat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        self + (-o)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.scale(-1.0)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }
}

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

pub type Mat4 = [[f64; 4]; 4];

/// Solves `M x = rhs` by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot falls below `1e-300` or relative `1e-14`.
pub fn solve4(m: &Mat4, rhs: [f64; 4]) -> Option<[f64; 4]> {
    let mut a = *m;
    let mut b = rhs;
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |s, x| s.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[piv][col].abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..4 {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut s = b[row];
        for k in row + 1..4 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

/// Solves the continuous Lyapunov equation `Aᵀ X + X A = -C` through the
/// 4×4 Kronecker system. Row-major vectorisation: `vec(X) = (x00, x01, x10, x11)`.
pub fn lyapunov(a: &Mat2, c: &Mat2) -> Option<Mat2> {
    // (AᵀX)_{ij} = Σ_k a_{ki} x_{kj};  (XA)_{ij} = Σ_k x_{ik} a_{kj}
    let mut m: Mat4 = [[0.0; 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            let row = 2 * i + j;
            for k in 0..2 {
                m[row][2 * k + j] += a.0[k][i];
                m[row][2 * i + k] += a.0[k][j];
            }
        }
    }
    let rhs = [-c.0[0][0], -c.0[0][1], -c.0[1][0], -c.0[1][1]];
    let x = solve4(&m, rhs)?;
    Some(Mat2([[x[0], x[1]], [x[2], x[3]]]))
}

pub fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for k in 0..4 {
            let aik = a[i][k];
            for j in 0..4 {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}
