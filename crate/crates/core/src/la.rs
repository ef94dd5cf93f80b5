//! Small fixed-size vectors and matrices used throughout the crate.
//!
//! Planar geometry runs on [`Vec2`]. Complex-valued displacement fields and
//! their gradients use [`CVec2`] and [`CMat2`] with `num_complex::Complex64`
//! entries. Pairings that come from Betti identities are bilinear, not
//! sesquilinear, so the complex dot products here do not conjugate.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

pub type C64 = Complex64;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Point or vector in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// Scalar cross product `self.x * o.y - self.y * o.x`.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }

    /// Counterclockwise rotation by pi/2.
    pub fn perp_ccw(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// Clockwise rotation by pi/2.
    pub fn perp_cw(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, co) = angle.sin_cos();
        Vec2::new(co * self.x - s * self.y, s * self.x + co * self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn from_angle(angle: f64) -> Vec2 {
        Vec2::new(angle.cos(), angle.sin())
    }

    /// The point as a complex number `x + iy`.
    pub fn zc(self) -> C64 {
        C64::new(self.x, self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn to_cvec(self) -> CVec2 {
        CVec2::new(cr(self.x), cr(self.y))
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Complex 2-vector (displacement value, jump value, ...).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CVec2 {
    pub x: C64,
    pub y: C64,
}

impl CVec2 {
    pub const fn new(x: C64, y: C64) -> Self {
        CVec2 { x, y }
    }

    pub fn zero() -> Self {
        CVec2::new(C64::ZERO, C64::ZERO)
    }

    pub fn from_real(v: Vec2) -> Self {
        v.to_cvec()
    }

    /// Bilinear dot product, no conjugation.
    pub fn dot(self, o: CVec2) -> C64 {
        self.x * o.x + self.y * o.y
    }

    pub fn dot_real(self, o: Vec2) -> C64 {
        self.x * o.x + self.y * o.y
    }

    /// Hermitian norm.
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.x.norm_sqr() + self.y.norm_sqr()
    }

    pub fn re(self) -> Vec2 {
        Vec2::new(self.x.re, self.y.re)
    }

    pub fn im(self) -> Vec2 {
        Vec2::new(self.x.im, self.y.im)
    }

    pub fn conj(self) -> CVec2 {
        CVec2::new(self.x.conj(), self.y.conj())
    }

    pub fn scale(self, s: C64) -> CVec2 {
        CVec2::new(self.x * s, self.y * s)
    }
}

impl Add for CVec2 {
    type Output = CVec2;
    fn add(self, o: CVec2) -> CVec2 {
        CVec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for CVec2 {
    fn add_assign(&mut self, o: CVec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for CVec2 {
    type Output = CVec2;
    fn sub(self, o: CVec2) -> CVec2 {
        CVec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<C64> for CVec2 {
    type Output = CVec2;
    fn mul(self, s: C64) -> CVec2 {
        self.scale(s)
    }
}

impl Mul<f64> for CVec2 {
    type Output = CVec2;
    fn mul(self, s: f64) -> CVec2 {
        CVec2::new(self.x * s, self.y * s)
    }
}

impl Neg for CVec2 {
    type Output = CVec2;
    fn neg(self) -> CVec2 {
        CVec2::new(-self.x, -self.y)
    }
}

/// Complex 2x2 matrix, row major. Gradients store `m[i][j] = d_j u_i`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CMat2 {
    pub m: [[C64; 2]; 2],
}

impl CMat2 {
    pub fn new(a: C64, b: C64, c_: C64, d: C64) -> Self {
        CMat2 { m: [[a, b], [c_, d]] }
    }

    pub fn zero() -> Self {
        CMat2::new(C64::ZERO, C64::ZERO, C64::ZERO, C64::ZERO)
    }

    pub fn from_real(m: [[f64; 2]; 2]) -> Self {
        CMat2::new(cr(m[0][0]), cr(m[0][1]), cr(m[1][0]), cr(m[1][1]))
    }

    /// Rank-one product `a b^T`.
    pub fn outer(a: CVec2, b: CVec2) -> Self {
        CMat2::new(a.x * b.x, a.x * b.y, a.y * b.x, a.y * b.y)
    }

    pub fn trace(self) -> C64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn transpose(self) -> CMat2 {
        CMat2::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    /// Symmetric part `(A + A^T)/2`.
    pub fn sym(self) -> CMat2 {
        let off = (self.m[0][1] + self.m[1][0]) * 0.5;
        CMat2::new(self.m[0][0], off, off, self.m[1][1])
    }

    pub fn mul_real_vec(self, v: Vec2) -> CVec2 {
        CVec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    pub fn mul_cvec(self, v: CVec2) -> CVec2 {
        CVec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    pub fn scale(self, s: C64) -> CMat2 {
        CMat2::new(self.m[0][0] * s, self.m[0][1] * s, self.m[1][0] * s, self.m[1][1] * s)
    }
}

impl Add for CMat2 {
    type Output = CMat2;
    fn add(self, o: CMat2) -> CMat2 {
        CMat2::new(
            self.m[0][0] + o.m[0][0],
            self.m[0][1] + o.m[0][1],
            self.m[1][0] + o.m[1][0],
            self.m[1][1] + o.m[1][1],
        )
    }
}

impl Sub for CMat2 {
    type Output = CMat2;
    fn sub(self, o: CMat2) -> CMat2 {
        CMat2::new(
            self.m[0][0] - o.m[0][0],
            self.m[0][1] - o.m[0][1],
            self.m[1][0] - o.m[1][0],
            self.m[1][1] - o.m[1][1],
        )
    }
}

/// Real 2x2 matrix for frame changes and the corner relation matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub m: [[f64; 2]; 2],
}

impl Mat2 {
    pub fn new(a: f64, b: f64, c_: f64, d: f64) -> Self {
        Mat2 { m: [[a, b], [c_, d]] }
    }

    pub fn identity() -> Self {
        Mat2::new(1.0, 0.0, 0.0, 1.0)
    }

    pub fn rotation(angle: f64) -> Self {
        let (s, co) = angle.sin_cos();
        Mat2::new(co, -s, s, co)
    }

    pub fn det(self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn transpose(self) -> Mat2 {
        Mat2::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    pub fn mul_vec(self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    pub fn mul_mat(self, o: Mat2) -> Mat2 {
        let mut r = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j];
            }
        }
        Mat2 { m: r }
    }

    pub fn scale(self, s: f64) -> Mat2 {
        Mat2::new(self.m[0][0] * s, self.m[0][1] * s, self.m[1][0] * s, self.m[1][1] * s)
    }

    /// Solves `self * x = rhs` by Cramer's rule.
    pub fn solve(self, rhs: Vec2) -> Option<Vec2> {
        let d = self.det();
        if d.abs() < 1e-300 {
            return None;
        }
        Some(Vec2::new(
            (rhs.x * self.m[1][1] - rhs.y * self.m[0][1]) / d,
            (rhs.y * self.m[0][0] - rhs.x * self.m[1][0]) / d,
        ))
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.m[0][0] - o.m[0][0],
            self.m[0][1] - o.m[0][1],
            self.m[1][0] - o.m[1][0],
            self.m[1][1] - o.m[1][1],
        )
    }
}
