//! Symmetric second-order tensors in three dimensions.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::Matrix3;

/// Symmetric 3x3 tensor stored as `[xx, yy, zz, xy, yz, xz]` (tensor shear
/// components, not engineering strains).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor(pub [f64; 6]);

impl SymTensor {
    pub const ZERO: SymTensor = SymTensor([0.0; 6]);
    pub const IDENTITY: SymTensor = SymTensor([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);

    pub fn new(xx: f64, yy: f64, zz: f64, xy: f64, yz: f64, xz: f64) -> Self {
        SymTensor([xx, yy, zz, xy, yz, xz])
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        SymTensor([
            m[(0, 0)],
            m[(1, 1)],
            m[(2, 2)],
            0.5 * (m[(0, 1)] + m[(1, 0)]),
            0.5 * (m[(1, 2)] + m[(2, 1)]),
            0.5 * (m[(0, 2)] + m[(2, 0)]),
        ])
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let [xx, yy, zz, xy, yz, xz] = self.0;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    /// Voigt vector with engineering shear `[xx, yy, zz, 2xy, 2yz, 2xz]`.
    pub fn to_voigt_strain(&self) -> [f64; 6] {
        let [xx, yy, zz, xy, yz, xz] = self.0;
        [xx, yy, zz, 2.0 * xy, 2.0 * yz, 2.0 * xz]
    }

    pub fn from_voigt_strain(v: [f64; 6]) -> Self {
        SymTensor([v[0], v[1], v[2], 0.5 * v[3], 0.5 * v[4], 0.5 * v[5]])
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }

    pub fn dev(&self) -> Self {
        let m = self.trace() / 3.0;
        let [xx, yy, zz, xy, yz, xz] = self.0;
        SymTensor([xx - m, yy - m, zz - m, xy, yz, xz])
    }

    /// Frobenius inner product `A : B`.
    pub fn dot(&self, other: &Self) -> f64 {
        let a = &self.0;
        let b = &other.0;
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + 2.0 * (a[3] * b[3] + a[4] * b[4] + a[5] * b[5])
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        SymTensor(self.0.map(|v| v * s))
    }

    /// `Q A Q^T`.
    pub fn rotate(&self, q: &Matrix3<f64>) -> Self {
        SymTensor::from_matrix(&(q * self.to_matrix() * q.transpose()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Add for SymTensor {
    type Output = SymTensor;
    fn add(self, rhs: Self) -> Self {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0) {
            *o += r;
        }
        SymTensor(out)
    }
}

impl AddAssign for SymTensor {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for SymTensor {
    type Output = SymTensor;
    fn sub(self, rhs: Self) -> Self {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0) {
            *o -= r;
        }
        SymTensor(out)
    }
}

impl SubAssign for SymTensor {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl Neg for SymTensor {
    type Output = SymTensor;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl Mul<SymTensor> for f64 {
    type Output = SymTensor;
    fn mul(self, rhs: SymTensor) -> SymTensor {
        rhs.scale(self)
    }
}

/// Orthonormal basis of the deviatoric subspace under the Frobenius product.
pub fn deviatoric_basis() -> [SymTensor; 5] {
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let s6 = 1.0 / 6.0_f64.sqrt();
    [
        SymTensor::new(s2, -s2, 0.0, 0.0, 0.0, 0.0),
        SymTensor::new(s6, s6, -2.0 * s6, 0.0, 0.0, 0.0),
        SymTensor::new(0.0, 0.0, 0.0, s2, 0.0, 0.0),
        SymTensor::new(0.0, 0.0, 0.0, 0.0, s2, 0.0),
        SymTensor::new(0.0, 0.0, 0.0, 0.0, 0.0, s2),
    ]
}
