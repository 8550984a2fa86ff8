//! Six-parameter homography between the rotor plane and the image plane.
//!
//! ```text
//!        | s cos ψ   -s sin ψ   tx |
//! H(q) = | s sin ψ    s cos ψ   ty |      q = [s, ψ, tx, ty, p31, p32]
//!        | p31        p32        1 |
//! ```
//!
//! Rotor-plane coordinates are normalised so blade tips sit on the unit
//! circle; image coordinates are pixels.

use nalgebra::{Matrix3, SMatrix, Vector2, Vector3, Vector6};
use thiserror::Error;

/// Threshold on the homogeneous coordinate before dehomogenising.
pub const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum GeometryError {
    #[error("degenerate projection (homogeneous coordinate {0:e})")]
    DegenerateProjection(f64),
    #[error("homography is singular (det {0:e})")]
    Singular(f64),
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
}

pub type Jacobian2x6 = SMatrix<f64, 2, 6>;

/// Index of each parameter inside the 6-vector form of `q`.
pub mod idx {
    pub const S: usize = 0;
    pub const PSI: usize = 1;
    pub const TX: usize = 2;
    pub const TY: usize = 3;
    pub const P31: usize = 4;
    pub const P32: usize = 5;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyParams {
    pub s: f64,
    pub psi: f64,
    pub tx: f64,
    pub ty: f64,
    pub p31: f64,
    pub p32: f64,
}

impl HomographyParams {
    pub const IDENTITY: HomographyParams = HomographyParams {
        s: 1.0,
        psi: 0.0,
        tx: 0.0,
        ty: 0.0,
        p31: 0.0,
        p32: 0.0,
    };

    pub fn new(s: f64, psi: f64, tx: f64, ty: f64, p31: f64, p32: f64) -> Self {
        Self {
            s,
            psi,
            tx,
            ty,
            p31,
            p32,
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.s, self.psi, self.tx, self.ty, self.p31, self.p32)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.s, self.psi, self.tx, self.ty, self.p31, self.p32]
    }

    /// Builds `H(q)` with `H[2][2] = 1`.
    pub fn matrix(&self) -> Matrix3<f64> {
        let (sin, cos) = self.psi.sin_cos();
        Matrix3::new(
            self.s * cos,
            -self.s * sin,
            self.tx,
            self.s * sin,
            self.s * cos,
            self.ty,
            self.p31,
            self.p32,
            1.0,
        )
    }

    /// Checks `s > 0` and `|det H| > 1e-12 * max(|s|, 1)^3`.
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.s > 0.0) || !self.s.is_finite() {
            return Err(GeometryError::InvalidScale(self.s));
        }
        let det = self.matrix().determinant();
        let scale = self.s.abs().max(1.0);
        if !(det.abs() > 1e-12 * scale * scale * scale) {
            return Err(GeometryError::Singular(det));
        }
        Ok(())
    }
}

impl Default for HomographyParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

pub fn build_h(q: &HomographyParams) -> Matrix3<f64> {
    q.matrix()
}

/// Closed-form inverse through the adjugate.
pub fn invert_h(h: &Matrix3<f64>) -> Result<Matrix3<f64>, GeometryError> {
    let c00 = h[(1, 1)] * h[(2, 2)] - h[(1, 2)] * h[(2, 1)];
    let c01 = h[(1, 2)] * h[(2, 0)] - h[(1, 0)] * h[(2, 2)];
    let c02 = h[(1, 0)] * h[(2, 1)] - h[(1, 1)] * h[(2, 0)];
    let det = h[(0, 0)] * c00 + h[(0, 1)] * c01 + h[(0, 2)] * c02;
    let scale = h.abs().max().max(1.0);
    if !(det.abs() > 1e-12 * scale * scale * scale) {
        return Err(GeometryError::Singular(det));
    }
    let inv_det = 1.0 / det;
    let adj = Matrix3::new(
        c00,
        h[(0, 2)] * h[(2, 1)] - h[(0, 1)] * h[(2, 2)],
        h[(0, 1)] * h[(1, 2)] - h[(0, 2)] * h[(1, 1)],
        c01,
        h[(0, 0)] * h[(2, 2)] - h[(0, 2)] * h[(2, 0)],
        h[(0, 2)] * h[(1, 0)] - h[(0, 0)] * h[(1, 2)],
        c02,
        h[(0, 1)] * h[(2, 0)] - h[(0, 0)] * h[(2, 1)],
        h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)],
    );
    Ok(adj * inv_det)
}

fn dehomogenize(v: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
    if v[2].abs() < DEGENERATE_EPS {
        return Err(GeometryError::DegenerateProjection(v[2]));
    }
    Ok(Vector2::new(v[0] / v[2], v[1] / v[2]))
}

/// Rotor-plane point to pixel coordinates.
pub fn project(q: &HomographyParams, u: Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
    dehomogenize(&(q.matrix() * Vector3::new(u.x, u.y, 1.0)))
}

/// Pixel coordinates to rotor-plane point through `H(q)^-1`.
pub fn backwarp(q: &HomographyParams, z: Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
    Warp::new(q)?.backwarp(z)
}

/// Analytic `∂u/∂q` of [`backwarp`] at `(q, z)`.
pub fn backwarp_jacobian(
    q: &HomographyParams,
    z: Vector2<f64>,
) -> Result<Jacobian2x6, GeometryError> {
    Ok(Warp::new(q)?.backwarp_with_jacobian(z)?.1)
}

/// Cached `H` and `H^-1` for repeated back-warping with one parameter set.
#[derive(Debug, Clone)]
pub struct Warp {
    q: HomographyParams,
    h_inv: Matrix3<f64>,
    sin: f64,
    cos: f64,
}

impl Warp {
    pub fn new(q: &HomographyParams) -> Result<Self, GeometryError> {
        q.validate()?;
        let h_inv = invert_h(&q.matrix())?;
        let (sin, cos) = q.psi.sin_cos();
        Ok(Self {
            q: *q,
            h_inv,
            sin,
            cos,
        })
    }

    pub fn params(&self) -> &HomographyParams {
        &self.q
    }

    pub fn backwarp(&self, z: Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
        dehomogenize(&(self.h_inv * Vector3::new(z.x, z.y, 1.0)))
    }

    /// Back-warps `z` and returns `∂u/∂q` alongside.
    ///
    /// `ũ = H⁻¹ [z;1]`, `∂ũ/∂q_j = -H⁻¹ (∂H/∂q_j) ũ`, then the quotient rule
    /// for `u = ũ₁₂ / ũ₃`.
    pub fn backwarp_with_jacobian(
        &self,
        z: Vector2<f64>,
    ) -> Result<(Vector2<f64>, Jacobian2x6), GeometryError> {
        let w = self.h_inv * Vector3::new(z.x, z.y, 1.0);
        if w[2].abs() < DEGENERATE_EPS {
            return Err(GeometryError::DegenerateProjection(w[2]));
        }
        let inv_w3 = 1.0 / w[2];
        let u = Vector2::new(w[0] * inv_w3, w[1] * inv_w3);

        let s = self.q.s;
        let (sin, cos) = (self.sin, self.cos);
        // (∂H/∂q_j) · ũ for each parameter
        let dh_w: [Vector3<f64>; 6] = [
            Vector3::new(cos * w[0] - sin * w[1], sin * w[0] + cos * w[1], 0.0),
            Vector3::new(
                -s * sin * w[0] - s * cos * w[1],
                s * cos * w[0] - s * sin * w[1],
                0.0,
            ),
            Vector3::new(w[2], 0.0, 0.0),
            Vector3::new(0.0, w[2], 0.0),
            Vector3::new(0.0, 0.0, w[0]),
            Vector3::new(0.0, 0.0, w[1]),
        ];
        let mut jac = Jacobian2x6::zeros();
        for (j, d) in dh_w.iter().enumerate() {
            let dw = -(self.h_inv * d);
            jac[(0, j)] = (dw[0] - u.x * dw[2]) * inv_w3;
            jac[(1, j)] = (dw[1] - u.y * dw[2]) * inv_w3;
        }
        Ok((u, jac))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn build_h_examples() {
        assert_eq!(build_h(&HomographyParams::IDENTITY), Matrix3::identity());
        let h = build_h(&HomographyParams::new(2.0, 0.0, 10.0, 20.0, 0.0, 0.0));
        assert_eq!(
            h,
            Matrix3::new(2.0, 0.0, 10.0, 0.0, 2.0, 20.0, 0.0, 0.0, 1.0)
        );
        let h = build_h(&HomographyParams::new(1.0, FRAC_PI_2, 0.0, 0.0, 0.0, 0.0));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((h - expected).abs().max() < 1e-15);
    }

    #[test]
    fn project_examples() {
        let q = HomographyParams::new(2.0, 0.0, 10.0, 20.0, 0.0, 0.0);
        assert_eq!(
            project(&q, Vector2::new(1.0, 0.0)).unwrap(),
            Vector2::new(12.0, 20.0)
        );
        let id = HomographyParams::IDENTITY;
        assert_eq!(
            project(&id, Vector2::new(3.0, 4.0)).unwrap(),
            Vector2::new(3.0, 4.0)
        );
        let q = HomographyParams::new(1.0, 0.0, 0.0, 0.0, 0.1, 0.0);
        let z = project(&q, Vector2::new(1.0, 0.0)).unwrap();
        assert!(close(z.x, 1.0 / 1.1, 1e-15) && z.y == 0.0);
    }

    #[test]
    fn backwarp_inverts_project_examples() {
        let cases = [
            (
                HomographyParams::new(2.0, 0.0, 10.0, 20.0, 0.0, 0.0),
                Vector2::new(1.0, 0.0),
            ),
            (HomographyParams::IDENTITY, Vector2::new(3.0, 4.0)),
            (
                HomographyParams::new(1.0, 0.0, 0.0, 0.0, 0.1, 0.0),
                Vector2::new(1.0, 0.0),
            ),
        ];
        for (q, u) in cases {
            let z = project(&q, u).unwrap();
            let back = backwarp(&q, z).unwrap();
            assert!((back - u).norm() < 1e-12, "{q:?}");
        }
        let origin = backwarp(&HomographyParams::IDENTITY, Vector2::zeros()).unwrap();
        assert_eq!(origin, Vector2::zeros());
    }

    #[test]
    fn scale_equivariance() {
        let z = Vector2::new(3.0, -7.0);
        let u1 = backwarp(&HomographyParams::new(1.5, 0.0, 0.0, 0.0, 0.0, 0.0), z).unwrap();
        let u2 = backwarp(&HomographyParams::new(3.0, 0.0, 0.0, 0.0, 0.0, 0.0), z).unwrap();
        assert_eq!(u2, u1 / 2.0);
    }

    #[test]
    fn jacobian_special_columns() {
        let j = backwarp_jacobian(&HomographyParams::IDENTITY, Vector2::new(1.0, 0.0)).unwrap();
        assert!(close(j[(0, idx::TX)], -1.0, 1e-15) && close(j[(1, idx::TX)], 0.0, 1e-15));
        let j = backwarp_jacobian(&HomographyParams::IDENTITY, Vector2::zeros()).unwrap();
        assert_eq!(j[(0, idx::PSI)], 0.0);
        assert_eq!(j[(1, idx::PSI)], 0.0);
    }

    #[test]
    fn degenerate_cases() {
        let q = HomographyParams::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        assert!(matches!(
            project(&q, Vector2::new(-1.0, 0.0)),
            Err(GeometryError::DegenerateProjection(_))
        ));
        assert!(HomographyParams::new(-1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
            .validate()
            .is_err());
        // p = (1, 0), t = (1, 0): rows 1 and 3 become dependent
        let q = HomographyParams::new(1.0, 0.0, 1.0, 0.0, 1.0, 0.0);
        assert!(matches!(q.validate(), Err(GeometryError::Singular(_))));
        assert!(Warp::new(&q).is_err());
    }
}
