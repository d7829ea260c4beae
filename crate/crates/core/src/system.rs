//! Shared assembly of nodal forces, nodal Hessians, total objective, and
//! residual norms for the quasistatic and backward-Euler problems.
//!
//! Quasistatic mode seeks a stationary point of
//! `PE(x) - x . f_ext` over the free nodes; dynamic mode minimizes the
//! incremental objective, which adds `sum_i m_i |x_i - xhat_i|^2 / (2 dt^2)`
//! with `xhat = 2 x^n - x^{n-1}`. External forces stay in the residual
//! rather than being folded into `xhat`; both conventions share the same
//! stationary point and this one lets the two modes share code.

use crate::constraints::{ConstraintIncidence, WeakConstraint};
use crate::materials::Material;
use crate::math::{MatD, MatOps, VecD};
use crate::mesh::SimMesh;
use crate::state::SimState;
use crate::{Error, Result};
use rayon::prelude::*;

/// Inertia terms present only in backward-Euler mode.
#[derive(Debug, Clone, Copy)]
pub struct Dynamics<'a, const D: usize> {
    pub dt: f64,
    /// Inertial predictor `2 x^n - x^{n-1}` (equivalently `x^n + dt v^n`).
    pub x_hat: &'a [VecD<D>],
}

/// A fully specified minimization problem over nodal positions.
#[derive(Clone, Copy)]
pub struct Problem<'a, const D: usize> {
    pub mesh: &'a SimMesh<D>,
    pub material: Material,
    pub constraints: &'a [WeakConstraint<D>],
    pub incidence: &'a ConstraintIncidence,
    pub gravity: VecD<D>,
    pub dynamics: Option<Dynamics<'a, D>>,
}

/// Per-node linear system of one Gauss-Seidel sub-iterate.
pub struct NodalSystem<const D: usize> {
    /// SPD approximate Hessian of the objective restricted to the node.
    pub a: MatD<D>,
    /// Residual (negative gradient) at the node.
    pub b: VecD<D>,
    /// True when the node touches no element and no constraint.
    pub isolated: bool,
}

impl<'a, const D: usize> Problem<'a, D>
where
    MatD<D>: MatOps<D>,
{
    pub fn quasistatic(
        mesh: &'a SimMesh<D>,
        material: Material,
        constraints: &'a [WeakConstraint<D>],
        incidence: &'a ConstraintIncidence,
        gravity: VecD<D>,
    ) -> Self {
        Self {
            mesh,
            material,
            constraints,
            incidence,
            gravity,
            dynamics: None,
        }
    }

    /// Lumped external force on node `i`.
    pub fn external_force(&self, mass: &[f64], i: usize) -> VecD<D> {
        self.gravity * mass[i]
    }

    /// Assemble the sub-iterate system at node `i`: the SPD modified
    /// Hessian and the residual, sharing one pass over incident elements.
    pub fn nodal_system(&self, x: &[VecD<D>], mass: &[f64], i: usize) -> NodalSystem<D> {
        let mut a = MatD::<D>::zeros();
        let mut b = self.external_force(mass, i);

        let elems = self.mesh.incident_elements(i);
        for &(e, slot) in elems {
            let e = e as usize;
            let f = self.mesh.deformation_gradient(x, e);
            let (p, kernel) = self.material.stress_and_kernel(&f);
            let g = self.mesh.grads(e)[slot as usize];
            let vol = self.mesh.measure(e);
            b -= p * g * vol;
            a += kernel.contract(&g, &g) * vol;
        }

        let wcs = self.incidence.incident(i);
        for &(c, dw) in wcs {
            let wc = &self.constraints[c as usize];
            let k = wc.stiffness.matrix();
            b -= k * wc.value(x) * dw;
            a += k * (dw * dw);
        }

        if let Some(dynamics) = &self.dynamics {
            let scale = mass[i] / (dynamics.dt * dynamics.dt);
            b -= (x[i] - dynamics.x_hat[i]) * scale;
            a += MatD::<D>::identity() * scale;
        }

        NodalSystem {
            a,
            b,
            isolated: elems.is_empty() && wcs.is_empty(),
        }
    }

    /// Residual (force balance) at node `i`; the quantity whose free-node
    /// 2-norm is the Newton residual.
    pub fn nodal_residual(&self, x: &[VecD<D>], mass: &[f64], i: usize) -> VecD<D> {
        self.nodal_system(x, mass, i).b
    }

    /// SPD modified nodal Hessian; errors on nodes with an empty stencil,
    /// whose system would be singular in quasistatic mode.
    pub fn nodal_hessian(&self, x: &[VecD<D>], mass: &[f64], i: usize) -> Result<MatD<D>> {
        let sys = self.nodal_system(x, mass, i);
        if sys.isolated && self.dynamics.is_none() {
            return Err(Error::SingularSystem { node: i });
        }
        Ok(sys.a)
    }

    /// Total objective: elastic + constraint energy minus external work,
    /// plus the inertial term in dynamic mode. External work and inertia
    /// run over free nodes (Dirichlet contributions are constant during a
    /// solve).
    pub fn objective(&self, x: &[VecD<D>], mass: &[f64], dirichlet: &[bool]) -> f64 {
        let elastic: f64 = (0..self.mesh.num_elements())
            .into_par_iter()
            .map(|e| {
                let f = self.mesh.deformation_gradient(x, e);
                self.material.energy_density(&f) * self.mesh.measure(e)
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        let wc: f64 = self.constraints.iter().map(|c| c.energy(x)).sum();
        let mut ext = 0.0;
        let mut inertia = 0.0;
        for i in 0..x.len() {
            if dirichlet[i] {
                continue;
            }
            ext += x[i].dot(&self.external_force(mass, i));
            if let Some(dynamics) = &self.dynamics {
                let d = x[i] - dynamics.x_hat[i];
                inertia += mass[i] * d.norm_squared() / (2.0 * dynamics.dt * dynamics.dt);
            }
        }
        elastic + wc - ext + inertia
    }

    /// 2-norm of the residual over free nodes. Per-node values are
    /// computed in parallel but summed in index order so serial and
    /// threaded runs agree bitwise.
    pub fn residual_norm(&self, x: &[VecD<D>], mass: &[f64], dirichlet: &[bool]) -> f64 {
        let sq: Vec<f64> = (0..x.len())
            .into_par_iter()
            .map(|i| {
                if dirichlet[i] {
                    0.0
                } else {
                    self.nodal_residual(x, mass, i).norm_squared()
                }
            })
            .collect();
        sq.iter().sum::<f64>().sqrt()
    }

    /// Convenience wrapper over [`Problem::residual_norm`] for a state.
    pub fn newton_residual(&self, state: &SimState<D>) -> f64 {
        self.residual_norm(&state.x, &state.mass, &state.dirichlet)
    }
}
