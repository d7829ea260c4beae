//! Hyperelastic constitutive models.
//!
//! Each model provides the energy density `psi(F)`, the first
//! Piola-Kirchhoff stress `P = d psi/dF`, the true density Hessian
//! `d^2 psi/dF^2` (used by oracles), and the SPD modified density Hessian
//!
//! ```text
//! C~_{a g b d} = 2 mu d_{ab} d_{gd} + lambda cof(F)_{ag} cof(F)_{bd}
//! ```
//!
//! used by the Gauss-Seidel and Newton solvers. The modified form is a
//! rank-one update of a scaled identity, hence positive definite for every
//! deformation gradient, inverted or singular included, and it matches the
//! small-strain (linear elasticity) Hessian at `F = I` for any model whose
//! parameters come from Lame coefficients.

use crate::math::{MatD, MatOps, VecD};
use crate::{Error, Result};
use nalgebra::DMatrix;

/// Convert Young's modulus and Poisson's ratio to Lame parameters.
pub fn lame_from_young_poisson(young: f64, nu: f64) -> Result<(f64, f64)> {
    if !(young > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Young's modulus must be positive, got {young}"
        )));
    }
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::IncompressiblePoisson { nu });
    }
    let mu = young / (2.0 * (1.0 + nu));
    let lambda = young * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    Ok((mu, lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaterialModel {
    /// Rotation-subtracted quadratic with a determinant volume term.
    Corotated,
    /// Quadratic-in-F with a shifted determinant term; the volume
    /// coefficient is `mu + lambda` so the small-strain limit is exact.
    NeoHookean,
    /// Inversion-robust Neo-Hookean with a log regularizer. Parameters are
    /// internally rescaled so the Hessian at rest matches linear elasticity.
    StableNeoHookean,
    /// Small-strain quadratic energy; the reference model the others must
    /// agree with at `F = I`.
    LinearElastic,
}

impl MaterialModel {
    pub const ALL: [MaterialModel; 4] = [
        MaterialModel::Corotated,
        MaterialModel::NeoHookean,
        MaterialModel::StableNeoHookean,
        MaterialModel::LinearElastic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MaterialModel::Corotated => "corotated",
            MaterialModel::NeoHookean => "neohookean",
            MaterialModel::StableNeoHookean => "stable-neohookean",
            MaterialModel::LinearElastic => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|m| m.name() == s)
    }
}

/// A constitutive model with its Lame parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub model: MaterialModel,
    pub mu: f64,
    pub lambda: f64,
}

/// Internal parameters of the stable Neo-Hookean energy after the
/// Lame-consistency rescaling (dimension dependent).
#[derive(Debug, Clone, Copy)]
struct SnhParams {
    mu_s: f64,
    lambda_s: f64,
    /// Rest determinant offset: the volume term is `lambda_s/2 (J - a)^2`.
    a: f64,
}

impl Material {
    pub fn new(model: MaterialModel, mu: f64, lambda: f64) -> Self {
        assert!(mu > 0.0, "mu must be positive");
        assert!(lambda >= 0.0, "lambda must be non-negative");
        Self { model, mu, lambda }
    }

    pub fn from_young_poisson(model: MaterialModel, young: f64, nu: f64) -> Result<Self> {
        let (mu, lambda) = lame_from_young_poisson(young, nu)?;
        Ok(Self::new(model, mu, lambda))
    }

    /// Volume-term coefficient of the Neo-Hookean model.
    pub fn lambda_hat(&self) -> f64 {
        self.mu + self.lambda
    }

    /// Rescaled stable Neo-Hookean parameters. The plain (mu, lambda)
    /// parameterization of this energy does not reproduce the linear
    /// elasticity Hessian at rest because the log term contributes shear
    /// stiffness and the volume term couples into it; the rescaling below
    /// restores the match in each dimension.
    fn snh_params(&self, dim: usize) -> SnhParams {
        match dim {
            3 => {
                let mu_s = 4.0 * self.mu / 3.0;
                let lambda_s = self.lambda + 5.0 * self.mu / 6.0;
                SnhParams {
                    mu_s,
                    lambda_s,
                    a: 1.0 + 3.0 * mu_s / (4.0 * lambda_s),
                }
            }
            2 => {
                let mu_s = 3.0 * self.mu / 2.0;
                let lambda_s = self.lambda + 2.0 * self.mu / 3.0;
                SnhParams {
                    mu_s,
                    lambda_s,
                    a: 1.0 + 2.0 * mu_s / (3.0 * lambda_s),
                }
            }
            _ => unreachable!("dimension must be 2 or 3"),
        }
    }

    /// Energy density `psi(F)`. Defined (finite) for every F, inverted
    /// configurations included.
    pub fn energy_density<const D: usize>(&self, f: &MatD<D>) -> f64
    where
        MatD<D>: MatOps<D>,
    {
        let mu = self.mu;
        let lambda = self.lambda;
        match self.model {
            MaterialModel::Corotated => {
                let r = f.polar_rotation();
                let j = f.det();
                mu * (f - r).norm_squared() + 0.5 * lambda * (j - 1.0) * (j - 1.0)
            }
            MaterialModel::NeoHookean => {
                let lh = self.lambda_hat();
                let c = f.det() - 1.0 - mu / lh;
                0.5 * mu * f.norm_squared() + 0.5 * lh * c * c
            }
            MaterialModel::StableNeoHookean => {
                let p = self.snh_params(D);
                let i0 = f.norm_squared();
                let c = f.det() - p.a;
                0.5 * p.mu_s * (i0 - D as f64) + 0.5 * p.lambda_s * c * c
                    - 0.5 * p.mu_s * (1.0 + i0).ln()
            }
            MaterialModel::LinearElastic => {
                let eps = (f + f.transpose()) * 0.5 - MatD::<D>::identity();
                mu * eps.norm_squared() + 0.5 * lambda * eps.trace() * eps.trace()
            }
        }
    }

    /// First Piola-Kirchhoff stress `P = d psi/dF`.
    pub fn first_piola<const D: usize>(&self, f: &MatD<D>) -> MatD<D>
    where
        MatD<D>: MatOps<D>,
    {
        let mu = self.mu;
        let lambda = self.lambda;
        match self.model {
            MaterialModel::Corotated => {
                let r = f.polar_rotation();
                let jf = f.cofactor();
                (f - r) * (2.0 * mu) + jf * (lambda * (f.det() - 1.0))
            }
            MaterialModel::NeoHookean => {
                let lh = self.lambda_hat();
                let jf = f.cofactor();
                f * mu + jf * (lh * (f.det() - 1.0 - mu / lh))
            }
            MaterialModel::StableNeoHookean => {
                let p = self.snh_params(D);
                let i0 = f.norm_squared();
                let jf = f.cofactor();
                f * (p.mu_s * i0 / (1.0 + i0)) + jf * (p.lambda_s * (f.det() - p.a))
            }
            MaterialModel::LinearElastic => {
                let eps = (f + f.transpose()) * 0.5 - MatD::<D>::identity();
                eps * (2.0 * mu) + MatD::<D>::identity() * (lambda * eps.trace())
            }
        }
    }

    /// Directional derivative of the stress: `dP(F)[H]`.
    pub fn stress_differential<const D: usize>(&self, f: &MatD<D>, h: &MatD<D>) -> MatD<D>
    where
        MatD<D>: MatOps<D>,
    {
        let mu = self.mu;
        let lambda = self.lambda;
        match self.model {
            MaterialModel::Corotated => {
                let jf = f.cofactor();
                let dr = f.polar_rotation_dir(h);
                let djf = f.cofactor_dir(h);
                (h - dr) * (2.0 * mu)
                    + jf * (lambda * jf.dot(h))
                    + djf * (lambda * (f.det() - 1.0))
            }
            MaterialModel::NeoHookean => {
                let lh = self.lambda_hat();
                let jf = f.cofactor();
                let djf = f.cofactor_dir(h);
                h * mu + jf * (lh * jf.dot(h)) + djf * (lh * (f.det() - 1.0 - mu / lh))
            }
            MaterialModel::StableNeoHookean => {
                let p = self.snh_params(D);
                let i0 = f.norm_squared();
                let jf = f.cofactor();
                let djf = f.cofactor_dir(h);
                let denom = 1.0 + i0;
                h * (p.mu_s * i0 / denom)
                    + f * (p.mu_s * 2.0 * f.dot(h) / (denom * denom))
                    + jf * (p.lambda_s * jf.dot(h))
                    + djf * (p.lambda_s * (f.det() - p.a))
            }
            MaterialModel::LinearElastic => {
                let sym = (h + h.transpose()) * 0.5;
                sym * (2.0 * mu) + MatD::<D>::identity() * (lambda * h.trace())
            }
        }
    }

    /// True energy density Hessian as a dense `(D*D) x (D*D)` matrix with
    /// row index `(alpha * D + gamma)` and column index `(beta * D + delta)`.
    /// Used by oracles; for the corotated model it requires F to be well
    /// conditioned (the rotation derivative must exist).
    pub fn true_hessian_density<const D: usize>(&self, f: &MatD<D>) -> DensityHessian
    where
        MatD<D>: MatOps<D>,
    {
        let mut m = DMatrix::zeros(D * D, D * D);
        for beta in 0..D {
            for delta in 0..D {
                let mut h = MatD::<D>::zeros();
                h[(beta, delta)] = 1.0;
                let dp = self.stress_differential(f, &h);
                for alpha in 0..D {
                    for gamma in 0..D {
                        m[(alpha * D + gamma, beta * D + delta)] = dp[(alpha, gamma)];
                    }
                }
            }
        }
        DensityHessian { dim: D, m }
    }

    /// SPD modified density Hessian. For the nonlinear models this is
    /// `2 mu I + lambda vec(cof F) vec(cof F)^T`; the linear model keeps its
    /// exact (constant) Hessian, which already makes the per-node systems
    /// definite.
    pub fn modified_hessian_density<const D: usize>(&self, f: &MatD<D>) -> DensityHessian
    where
        MatD<D>: MatOps<D>,
    {
        match self.kernel(f) {
            HessianKernel::CofactorRankOne { two_mu, lambda, jf } => {
                let mut m = DMatrix::zeros(D * D, D * D);
                for alpha in 0..D {
                    for gamma in 0..D {
                        let row = alpha * D + gamma;
                        m[(row, row)] += two_mu;
                        for beta in 0..D {
                            for delta in 0..D {
                                m[(row, beta * D + delta)] +=
                                    lambda * jf[(alpha, gamma)] * jf[(beta, delta)];
                            }
                        }
                    }
                }
                DensityHessian { dim: D, m }
            }
            HessianKernel::Linear { .. } => self.true_hessian_density(f),
        }
    }

    /// Structured form of the modified density Hessian for fast per-node
    /// and per-element contraction.
    pub fn kernel<const D: usize>(&self, f: &MatD<D>) -> HessianKernel<D>
    where
        MatD<D>: MatOps<D>,
    {
        match self.model {
            MaterialModel::LinearElastic => HessianKernel::Linear {
                mu: self.mu,
                lambda: self.lambda,
            },
            _ => HessianKernel::CofactorRankOne {
                two_mu: 2.0 * self.mu,
                lambda: self.lambda,
                jf: f.cofactor(),
            },
        }
    }

    /// Stress and modified-Hessian kernel in one pass, sharing the
    /// cofactor/determinant evaluations. This is the solver hot path.
    pub fn stress_and_kernel<const D: usize>(&self, f: &MatD<D>) -> (MatD<D>, HessianKernel<D>)
    where
        MatD<D>: MatOps<D>,
    {
        let mu = self.mu;
        let lambda = self.lambda;
        if self.model == MaterialModel::LinearElastic {
            return (self.first_piola(f), HessianKernel::Linear { mu, lambda });
        }
        let jf = f.cofactor();
        let j = f.det();
        let p = match self.model {
            MaterialModel::Corotated => {
                (f - f.polar_rotation()) * (2.0 * mu) + jf * (lambda * (j - 1.0))
            }
            MaterialModel::NeoHookean => {
                let lh = self.lambda_hat();
                f * mu + jf * (lh * (j - 1.0 - mu / lh))
            }
            MaterialModel::StableNeoHookean => {
                let p = self.snh_params(D);
                let i0 = f.norm_squared();
                f * (p.mu_s * i0 / (1.0 + i0)) + jf * (p.lambda_s * (j - p.a))
            }
            MaterialModel::LinearElastic => unreachable!(),
        };
        (
            p,
            HessianKernel::CofactorRankOne {
                two_mu: 2.0 * mu,
                lambda,
                jf,
            },
        )
    }
}

/// Modified density Hessian in a form that contracts with shape-function
/// gradients without materializing the fourth-order tensor.
#[derive(Debug, Clone, Copy)]
pub enum HessianKernel<const D: usize> {
    CofactorRankOne {
        two_mu: f64,
        lambda: f64,
        jf: MatD<D>,
    },
    Linear {
        mu: f64,
        lambda: f64,
    },
}

impl<const D: usize> HessianKernel<D> {
    /// `B_{ab} = sum_{gd} C~_{a g b d} gi_g gj_d`: the (i, j) nodal block
    /// of one element's stiffness contribution (before the measure factor).
    pub fn contract(&self, gi: &VecD<D>, gj: &VecD<D>) -> MatD<D> {
        match self {
            HessianKernel::CofactorRankOne { two_mu, lambda, jf } => {
                let a = jf * gi;
                let b = jf * gj;
                MatD::<D>::identity() * (two_mu * gi.dot(gj)) + a * b.transpose() * *lambda
            }
            HessianKernel::Linear { mu, lambda } => {
                MatD::<D>::identity() * (mu * gi.dot(gj))
                    + gj * gi.transpose() * *mu
                    + gi * gj.transpose() * *lambda
            }
        }
    }
}

/// Dense `(dim^2) x (dim^2)` energy density Hessian, row/column indexed by
/// flattened (alpha, gamma) / (beta, delta) pairs.
#[derive(Debug, Clone)]
pub struct DensityHessian {
    pub dim: usize,
    pub m: DMatrix<f64>,
}

impl DensityHessian {
    pub fn get(&self, alpha: usize, gamma: usize, beta: usize, delta: usize) -> f64 {
        self.m[(alpha * self.dim + gamma, beta * self.dim + delta)]
    }

    /// Contract against a pair of shape-function gradients (dense route,
    /// used by test oracles).
    pub fn contract<const D: usize>(&self, gi: &VecD<D>, gj: &VecD<D>) -> MatD<D> {
        assert_eq!(self.dim, D);
        let mut out = MatD::<D>::zeros();
        for alpha in 0..D {
            for beta in 0..D {
                let mut acc = 0.0;
                for gamma in 0..D {
                    for delta in 0..D {
                        acc += self.get(alpha, gamma, beta, delta) * gi[gamma] * gj[delta];
                    }
                }
                out[(alpha, beta)] = acc;
            }
        }
        out
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.m
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.m.nrows() {
            for c in 0..r {
                worst = worst.max((self.m[(r, c)] - self.m[(c, r)]).abs());
            }
        }
        worst
    }
}

/// Isotropic invariants `(tr(F^T F), tr((F^T F)^2), det F)`. The middle
/// invariant is unused by the 2D models but computed uniformly.
pub fn isotropic_invariants<const D: usize>(f: &MatD<D>) -> (f64, f64, f64)
where
    MatD<D>: MatOps<D>,
{
    let c = f.transpose() * f;
    (c.trace(), (c * c).trace(), f.det())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Vector3};

    #[test]
    fn lame_conversion() {
        let (mu, lambda) = lame_from_young_poisson(1e5, 0.3).unwrap();
        assert_relative_eq!(mu, 38461.538461538461, max_relative = 1e-12);
        assert_relative_eq!(lambda, 57692.307692307692, max_relative = 1e-12);

        let (mu, lambda) = lame_from_young_poisson(1.0, 0.0).unwrap();
        assert_eq!((mu, lambda), (0.5, 0.0));

        assert!(matches!(
            lame_from_young_poisson(1.0, 0.5),
            Err(Error::IncompressiblePoisson { .. })
        ));
    }

    #[test]
    fn corotated_energy_values() {
        let mat = Material::new(MaterialModel::Corotated, 1.0, 1.0);
        assert_relative_eq!(mat.energy_density(&MatD::<3>::identity()), 0.0);
        let f = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
        assert_relative_eq!(mat.energy_density(&f), 1.5, max_relative = 1e-12);
    }

    #[test]
    fn corotated_energy_rotation_invariant() {
        let mat = Material::new(MaterialModel::Corotated, 3.0, 2.0);
        let mut seed = 0x55aa_55aa_1234_4321u64;
        let mut rnd = || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed as f64 / u64::MAX as f64) * 2.0 - 1.0
        };
        for _ in 0..20 {
            let f = Matrix3::from_fn(|_, _| rnd()) + Matrix3::identity();
            let q = nalgebra::Rotation3::from_euler_angles(rnd() * 3.0, rnd() * 3.0, rnd() * 3.0)
                .into_inner();
            let a = mat.energy_density(&f);
            let b = mat.energy_density(&(q * f));
            assert_relative_eq!(a, b, max_relative = 1e-10);
        }
    }

    #[test]
    fn neo_hookean_rest_energy_and_stress() {
        // mu = 1, lambda = 1 gives lambda_hat = 2.
        let mat = Material::new(MaterialModel::NeoHookean, 1.0, 1.0);
        let i = MatD::<3>::identity();
        assert_relative_eq!(mat.energy_density(&i), 1.75, max_relative = 1e-14);
        assert_relative_eq!(mat.first_piola(&i), MatD::<3>::zeros(), epsilon = 1e-14);
    }

    #[test]
    fn rest_state_is_stress_free() {
        for model in MaterialModel::ALL {
            let mat = Material::new(model, 7.0, 3.5);
            assert_relative_eq!(
                mat.first_piola(&MatD::<3>::identity()),
                MatD::<3>::zeros(),
                epsilon = 1e-12
            );
            assert_relative_eq!(
                mat.first_piola(&MatD::<2>::identity()),
                MatD::<2>::zeros(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn corotated_stress_zero_at_any_rotation() {
        let mat = Material::new(MaterialModel::Corotated, 2.0, 5.0);
        let q = nalgebra::Rotation3::from_euler_angles(0.4, -0.9, 1.7).into_inner();
        assert_relative_eq!(mat.first_piola(&q), MatD::<3>::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn invariants() {
        let i = MatD::<3>::identity();
        assert_eq!(isotropic_invariants(&i), (3.0, 3.0, 1.0));
        assert_eq!(isotropic_invariants(&(i * 2.0)), (12.0, 48.0, 8.0));
    }

    #[test]
    fn modified_hessian_at_identity_eigenvalues() {
        let (mu, lambda) = (3.0, 2.0);
        let mat = Material::new(MaterialModel::Corotated, mu, lambda);
        let h = mat.modified_hessian_density(&MatD::<3>::identity());
        let mut eig: Vec<f64> = h.m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for v in &eig[..8] {
            assert_relative_eq!(*v, 2.0 * mu, max_relative = 1e-12);
        }
        assert_relative_eq!(eig[8], 2.0 * mu + 3.0 * lambda, max_relative = 1e-12);
    }

    #[test]
    fn modified_hessian_spd_for_inverted_and_singular() {
        let (mu, lambda) = (3.0, 2.0);
        for model in [
            MaterialModel::Corotated,
            MaterialModel::NeoHookean,
            MaterialModel::StableNeoHookean,
        ] {
            let mat = Material::new(model, mu, lambda);
            // det = -0.5
            let f = Matrix3::from_diagonal(&Vector3::new(-0.5, 1.0, 1.0));
            let h = mat.modified_hessian_density(&f);
            assert!(h.min_eigenvalue() >= 2.0 * mu - 1e-9);
            // rank deficient
            let f = Matrix3::from_diagonal(&Vector3::new(0.0, 1.0, 2.0));
            let h = mat.modified_hessian_density(&f);
            assert!(h.min_eigenvalue() >= 2.0 * mu - 1e-9);
        }
    }

    #[test]
    fn kernel_matches_dense_contraction() {
        let mat = Material::new(MaterialModel::NeoHookean, 2.0, 3.0);
        let f = Matrix3::new(1.1, 0.2, -0.3, 0.0, 0.8, 0.4, 0.5, -0.1, 1.2);
        let gi = Vector3::new(0.3, -0.7, 0.2);
        let gj = Vector3::new(-0.4, 0.1, 0.9);
        let dense = mat.modified_hessian_density(&f).contract(&gi, &gj);
        let fast = mat.kernel(&f).contract(&gi, &gj);
        assert_relative_eq!(dense, fast, epsilon = 1e-12 * (1.0 + dense.norm()));
    }

    #[test]
    fn linear_kernel_matches_true_hessian_contraction() {
        let mat = Material::new(MaterialModel::LinearElastic, 2.0, 3.0);
        let f = Matrix3::identity();
        let gi = Vector3::new(0.3, -0.7, 0.2);
        let gj = Vector3::new(-0.4, 0.1, 0.9);
        let dense = mat.true_hessian_density(&f).contract(&gi, &gj);
        let fast = mat.kernel(&f).contract(&gi, &gj);
        assert_relative_eq!(dense, fast, epsilon = 1e-13);
    }
}
