//! Small fixed-dimension linear algebra shared by the solvers.
//!
//! Everything in the library is generic over the spatial dimension `D`
//! (2 for triangle meshes, 3 for tetrahedra). The handful of operations
//! whose formulas genuinely differ between dimensions — determinants,
//! cofactors, polar decompositions, frame completion — live behind the
//! [`MatOps`] trait, implemented concretely for 2x2 and 3x3 matrices.

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector2, Vector3};

pub type MatD<const D: usize> = SMatrix<f64, D, D>;
pub type VecD<const D: usize> = SVector<f64, D>;

/// Dimension-specific dense matrix operations.
pub trait MatOps<const D: usize>: Sized {
    fn det(&self) -> f64;

    /// Cofactor matrix: the polynomial extension of `det(F) F^{-T}`,
    /// defined for singular and inverted matrices as well.
    fn cofactor(&self) -> MatD<D>;

    /// Directional derivative of [`MatOps::cofactor`] at `self` along `h`.
    fn cofactor_dir(&self, h: &MatD<D>) -> MatD<D>;

    /// The rotation closest to `self` in the Frobenius norm, with
    /// `det = +1` (sign-corrected SVD convention).
    fn polar_rotation(&self) -> MatD<D>;

    /// Directional derivative of [`MatOps::polar_rotation`] at `self`
    /// along `h`. Requires `self` to be well conditioned: the derivative
    /// blows up when two singular values sum to zero.
    fn polar_rotation_dir(&self, h: &MatD<D>) -> MatD<D>;

    /// Solve `self * x = b` for a symmetric positive definite matrix.
    /// Returns `None` when the system is numerically singular.
    fn solve_spd(&self, b: &VecD<D>) -> Option<VecD<D>>;

    /// Matrix inverse; `None` when singular.
    fn inv(&self) -> Option<MatD<D>>;

    /// Orthonormal matrix whose first column is the unit vector `n`;
    /// the remaining columns span the plane (line) orthogonal to it.
    fn frame_from_normal(n: &VecD<D>) -> MatD<D>;

    /// Rotation by `angle` radians; about `axis` in 3D, in-plane in 2D
    /// (where the axis argument is ignored).
    fn rotation(axis: &VecD<D>, angle: f64) -> MatD<D>;
}

impl MatOps<2> for Matrix2<f64> {
    fn det(&self) -> f64 {
        self[(0, 0)] * self[(1, 1)] - self[(0, 1)] * self[(1, 0)]
    }

    fn cofactor(&self) -> Matrix2<f64> {
        Matrix2::new(self[(1, 1)], -self[(1, 0)], -self[(0, 1)], self[(0, 0)])
    }

    fn cofactor_dir(&self, h: &Matrix2<f64>) -> Matrix2<f64> {
        // The 2D cofactor map is linear.
        h.cofactor()
    }

    fn polar_rotation(&self) -> Matrix2<f64> {
        // R maximizes tr(R^T F); the maximizer aligns (cos, sin) with
        // (F00 + F11, F10 - F01).
        let p = self[(0, 0)] + self[(1, 1)];
        let q = self[(1, 0)] - self[(0, 1)];
        let len = p.hypot(q);
        if len <= 1e-300 {
            // Every rotation is equidistant (e.g. F = diag(1, -1)).
            return Matrix2::identity();
        }
        let (c, s) = (p / len, q / len);
        Matrix2::new(c, -s, s, c)
    }

    fn polar_rotation_dir(&self, h: &Matrix2<f64>) -> Matrix2<f64> {
        let v = Vector2::new(self[(0, 0)] + self[(1, 1)], self[(1, 0)] - self[(0, 1)]);
        let dv = Vector2::new(h[(0, 0)] + h[(1, 1)], h[(1, 0)] - h[(0, 1)]);
        let len = v.norm();
        let vhat = v / len;
        let dw = (dv - vhat * vhat.dot(&dv)) / len;
        Matrix2::new(dw.x, -dw.y, dw.y, dw.x)
    }

    fn solve_spd(&self, b: &Vector2<f64>) -> Option<Vector2<f64>> {
        let det = MatOps::det(self);
        if !det.is_finite() || det.abs() <= 1e-300 {
            return None;
        }
        Some(Vector2::new(
            (self[(1, 1)] * b.x - self[(0, 1)] * b.y) / det,
            (self[(0, 0)] * b.y - self[(1, 0)] * b.x) / det,
        ))
    }

    fn inv(&self) -> Option<Matrix2<f64>> {
        self.try_inverse()
    }

    fn frame_from_normal(n: &Vector2<f64>) -> Matrix2<f64> {
        Matrix2::new(n.x, -n.y, n.y, n.x)
    }

    fn rotation(_axis: &Vector2<f64>, angle: f64) -> Matrix2<f64> {
        let (s, c) = angle.sin_cos();
        Matrix2::new(c, -s, s, c)
    }
}

impl MatOps<3> for Matrix3<f64> {
    fn det(&self) -> f64 {
        self.determinant()
    }

    fn cofactor(&self) -> Matrix3<f64> {
        let c0 = self.column(0).into_owned();
        let c1 = self.column(1).into_owned();
        let c2 = self.column(2).into_owned();
        Matrix3::from_columns(&[c1.cross(&c2), c2.cross(&c0), c0.cross(&c1)])
    }

    fn cofactor_dir(&self, h: &Matrix3<f64>) -> Matrix3<f64> {
        let c0 = self.column(0).into_owned();
        let c1 = self.column(1).into_owned();
        let c2 = self.column(2).into_owned();
        let h0 = h.column(0).into_owned();
        let h1 = h.column(1).into_owned();
        let h2 = h.column(2).into_owned();
        Matrix3::from_columns(&[
            h1.cross(&c2) + c1.cross(&h2),
            h2.cross(&c0) + c2.cross(&h0),
            h0.cross(&c1) + c0.cross(&h1),
        ])
    }

    fn polar_rotation(&self) -> Matrix3<f64> {
        let scale = self.norm();
        if scale <= 1e-300 {
            return Matrix3::identity();
        }
        // Scaled Higham iteration when safely orientation-preserving;
        // it only needs 3x3 inverses and converges quadratically.
        if self.determinant() > 1e-8 * scale.powi(3) {
            let mut x = *self;
            for _ in 0..40 {
                let Some(inv_t) = x.try_inverse() else { break };
                let inv_t = inv_t.transpose();
                let gamma = (inv_t.norm() / x.norm()).sqrt();
                let next = (x * gamma + inv_t / gamma) * 0.5;
                let delta = (next - x).norm();
                x = next;
                if delta <= 1e-13 * x.norm() {
                    return x;
                }
            }
        }
        // Inverted, singular, or slow to converge: fall back to SVD.
        let (u, _, v_t) = signed_svd3(self);
        u * v_t
    }

    fn polar_rotation_dir(&self, h: &Matrix3<f64>) -> Matrix3<f64> {
        // With F = U S V^T (rotations U, V; S possibly signed), write
        // dR = U W' V^T where the skew W' solves W' S + S W' = W - W^T
        // and W = U^T H V.
        let (u, s, v_t) = signed_svd3(self);
        let w = u.transpose() * h * v_t.transpose();
        let g = w - w.transpose();
        let mut omega = Matrix3::zeros();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let denom = s[i] + s[j];
                // Clamp tiny denominators; callers require well-conditioned F.
                let denom = if denom.abs() < 1e-12 {
                    1e-12_f64.copysign(denom)
                } else {
                    denom
                };
                let val = g[(i, j)] / denom;
                omega[(i, j)] = val;
                omega[(j, i)] = -val;
            }
        }
        u * omega * v_t
    }

    fn solve_spd(&self, b: &Vector3<f64>) -> Option<Vector3<f64>> {
        let det = self.determinant();
        if !det.is_finite() || det.abs() <= 1e-300 {
            return None;
        }
        // Cramer via the cofactor transpose; adequate for the well
        // conditioned nodal systems this is used on.
        let adj = MatOps::cofactor(self).transpose();
        Some(adj * b / det)
    }

    fn inv(&self) -> Option<Matrix3<f64>> {
        self.try_inverse()
    }

    fn frame_from_normal(n: &Vector3<f64>) -> Matrix3<f64> {
        // Complete the frame from the coordinate axis most orthogonal to n.
        let a = n.x.abs();
        let b = n.y.abs();
        let c = n.z.abs();
        let axis = if a <= b && a <= c {
            Vector3::x()
        } else if b <= c {
            Vector3::y()
        } else {
            Vector3::z()
        };
        let t0 = n.cross(&axis).normalize();
        let t1 = n.cross(&t0);
        Matrix3::from_columns(&[*n, t0, t1])
    }

    fn rotation(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
        nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle)
            .into_inner()
    }
}

/// SVD of a 3x3 matrix with both factors corrected to proper rotations;
/// any reflection is folded into the sign of the last singular value.
pub fn signed_svd3(f: &Matrix3<f64>) -> (Matrix3<f64>, Vector3<f64>, Matrix3<f64>) {
    let svd = f.svd_unordered(true, true);
    let mut u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let mut v = v_t.transpose();
    let mut s = svd.singular_values;

    // Sort descending by magnitude so the sign lands on the smallest value.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap());
    let (su, sv, ss) = (u, v, s);
    for (k, &i) in order.iter().enumerate() {
        u.set_column(k, &su.column(i));
        v.set_column(k, &sv.column(i));
        s[k] = ss[i];
    }

    if u.determinant() < 0.0 {
        let flipped = -u.column(2).into_owned();
        u.set_column(2, &flipped);
        s[2] = -s[2];
    }
    if v.determinant() < 0.0 {
        let flipped = -v.column(2).into_owned();
        v.set_column(2, &flipped);
        s[2] = -s[2];
    }
    (u, s, v.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;

    fn rand_mat3(seed: &mut u64) -> Matrix3<f64> {
        Matrix3::from_fn(|_, _| {
            // xorshift; plenty for test fodder
            *seed ^= *seed << 13;
            *seed ^= *seed >> 7;
            *seed ^= *seed << 17;
            (*seed as f64 / u64::MAX as f64) * 4.0 - 2.0
        })
    }

    #[test]
    fn cofactor_identity_3d() {
        let i = Matrix3::identity();
        assert_eq!(MatOps::cofactor(&i), i);
    }

    #[test]
    fn cofactor_diagonal_3d() {
        let f = Matrix3::from_diagonal(&Vector3::new(2.0, 3.0, 5.0));
        let jf = MatOps::cofactor(&f);
        assert_relative_eq!(jf, Matrix3::from_diagonal(&Vector3::new(15.0, 10.0, 6.0)));
    }

    #[test]
    fn cofactor_2d_formula() {
        let f = Matrix2::new(1.0, 2.0, 3.0, 4.0);
        let jf = MatOps::cofactor(&f);
        assert_eq!(jf, Matrix2::new(4.0, -3.0, -2.0, 1.0));
    }

    #[test]
    fn cofactor_transpose_identity() {
        // cof(F) F^T = det(F) I for arbitrary F, including singular ones.
        let mut seed = 0x1234_5678_9abc_def0;
        for _ in 0..50 {
            let f = rand_mat3(&mut seed);
            let lhs = MatOps::cofactor(&f) * f.transpose();
            let rhs = Matrix3::identity() * f.determinant();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12 * (1.0 + f.norm().powi(3)));
        }
        let singular = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.5, 1.0, 1.5);
        let lhs = MatOps::cofactor(&singular) * singular.transpose();
        assert_relative_eq!(lhs, Matrix3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn cofactor_dir_matches_finite_difference() {
        let mut seed = 0xdead_beef_cafe_1234;
        for _ in 0..20 {
            let f = rand_mat3(&mut seed);
            let h = rand_mat3(&mut seed);
            let eps = 1e-6;
            let fd = (MatOps::cofactor(&(f + h * eps)) - MatOps::cofactor(&(f - h * eps)))
                / (2.0 * eps);
            assert_relative_eq!(f.cofactor_dir(&h), fd, epsilon = 1e-8 * (1.0 + fd.norm()));
        }
    }

    #[test]
    fn polar_of_rotation_is_identity_map() {
        let q = Rotation3::from_euler_angles(0.3, -1.1, 2.4).into_inner();
        assert_relative_eq!(MatOps::polar_rotation(&q), q, epsilon = 1e-12);
        assert_relative_eq!(
            MatOps::polar_rotation(&Matrix3::identity()),
            Matrix3::identity(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn polar_rotation_properties_3d() {
        let mut seed = 0x0bad_5eed_0bad_5eed;
        for k in 0..100 {
            let mut f = rand_mat3(&mut seed);
            if k % 5 == 0 {
                //Exercise the inverted branch too.
                f[(0, 0)] = -f[(0, 0)].abs() - 1.0;
            }
            let r = MatOps::polar_rotation(&f);
            assert_relative_eq!(r * r.transpose(), Matrix3::identity(), epsilon = 1e-9);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn polar_rotation_is_frobenius_minimizer_3d() {
        // Brute-force over a grid of rotations; none may beat the result.
        let mut seed = 0x7777_1111_3333_9999;
        for _ in 0..5 {
            let f = rand_mat3(&mut seed);
            let r = MatOps::polar_rotation(&f);
            let best = (f - r).norm();
            let n = 14;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let q = Rotation3::from_euler_angles(
                            i as f64 / n as f64 * std::f64::consts::TAU,
                            j as f64 / n as f64 * std::f64::consts::PI,
                            k as f64 / n as f64 * std::f64::consts::TAU,
                        )
                        .into_inner();
                        assert!((f - q).norm() >= best - 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn polar_rotation_of_reflection() {
        // F = diag(1, 1, -1): nearest proper rotation per the signed-SVD
        // convention keeps the two aligned axes.
        let f = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let r = MatOps::polar_rotation(&f);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        let best = (f - r).norm();
        let n = 20;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let q = Rotation3::from_euler_angles(
                        i as f64 / n as f64 * std::f64::consts::TAU,
                        j as f64 / n as f64 * std::f64::consts::PI,
                        k as f64 / n as f64 * std::f64::consts::TAU,
                    )
                    .into_inner();
                    assert!((f - q).norm() >= best - 1e-7);
                }
            }
        }
    }

    #[test]
    fn polar_rotation_dir_matches_finite_difference() {
        let mut seed = 0x1357_9bdf_2468_ace0;
        for _ in 0..20 {
            let f = Matrix3::identity() + rand_mat3(&mut seed) * 0.3;
            let h = rand_mat3(&mut seed);
            let eps = 1e-6;
            let fd = (MatOps::polar_rotation(&(f + h * eps))
                - MatOps::polar_rotation(&(f - h * eps)))
                / (2.0 * eps);
            assert_relative_eq!(
                f.polar_rotation_dir(&h),
                fd,
                epsilon = 1e-6 * (1.0 + fd.norm())
            );
        }
    }

    #[test]
    fn polar_rotation_dir_2d() {
        let f = Matrix2::new(1.2, 0.3, -0.1, 0.9);
        let h = Matrix2::new(0.4, -0.2, 0.7, 0.1);
        let eps = 1e-6;
        let fd =
            (MatOps::polar_rotation(&(f + h * eps)) - MatOps::polar_rotation(&(f - h * eps)))
                / (2.0 * eps);
        assert_relative_eq!(f.polar_rotation_dir(&h), fd, epsilon = 1e-8);
    }

    #[test]
    fn spd_solve_roundtrip() {
        let a = Matrix3::new(4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 5.0);
        let b = Vector3::new(1.0, -2.0, 0.5);
        let x = a.solve_spd(&b).unwrap();
        assert_relative_eq!(a * x, b, epsilon = 1e-12);

        let a2 = Matrix2::new(2.0, 0.3, 0.3, 1.5);
        let b2 = Vector2::new(0.7, -0.2);
        let x2 = a2.solve_spd(&b2).unwrap();
        assert_relative_eq!(a2 * x2, b2, epsilon = 1e-13);
    }

    #[test]
    fn frames_are_orthonormal() {
        for n in [
            Vector3::x(),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 2.0, -0.5).normalize(),
        ] {
            let q = <Matrix3<f64> as MatOps<3>>::frame_from_normal(&n);
            assert_relative_eq!(q * q.transpose(), Matrix3::identity(), epsilon = 1e-12);
            assert_relative_eq!(q.column(0).into_owned(), n, epsilon = 1e-14);
        }
        let n2 = Vector2::new(0.6, 0.8);
        let q2 = <Matrix2<f64> as MatOps<2>>::frame_from_normal(&n2);
        assert_relative_eq!(q2 * q2.transpose(), Matrix2::identity(), epsilon = 1e-14);
    }
}
