//! Shared test oracles, independent of the implementation paths they
//! check: finite differences for gradients/Hessians, dense global
//! assembly for nodal systems, a brute-force coloring validity checker,
//! and seeded random deformation gradients.

#![allow(dead_code)]

use nalgebra::DMatrix;
use pbng::constraints::{ConstraintIncidence, WeakConstraint};
use pbng::materials::Material;
use pbng::math::{MatD, MatOps, VecD};
use pbng::mesh::SimMesh;
use pbng::system::Problem;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix<const D: usize>(rng: &mut ChaCha8Rng, scale: f64) -> MatD<D> {
    MatD::<D>::from_fn(|_, _| rng.random_range(-scale..scale))
}

/// Random deformation gradient with determinant in [lo, hi], by rejection.
pub fn random_f_with_det<const D: usize>(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> MatD<D>
where
    MatD<D>: MatOps<D>,
{
    loop {
        let f = MatD::<D>::identity() + random_matrix::<D>(rng, 1.0);
        let det = f.det();
        if det >= lo && det <= hi {
            return f;
        }
    }
}

/// Central finite difference of the energy density: the stress oracle.
pub fn fd_first_piola<const D: usize>(mat: &Material, f: &MatD<D>) -> MatD<D>
where
    MatD<D>: MatOps<D>,
{
    let h = 1e-6 * (1.0 + f.norm());
    let mut p = MatD::<D>::zeros();
    for a in 0..D {
        for b in 0..D {
            let mut fp = *f;
            let mut fm = *f;
            fp[(a, b)] += h;
            fm[(a, b)] -= h;
            p[(a, b)] = (mat.energy_density(&fp) - mat.energy_density(&fm)) / (2.0 * h);
        }
    }
    p
}

/// Central finite difference of the stress: the density Hessian oracle,
/// as a dense (D*D) x (D*D) matrix in (alpha*D+gamma, beta*D+delta) layout.
pub fn fd_hessian_density<const D: usize>(mat: &Material, f: &MatD<D>) -> DMatrix<f64>
where
    MatD<D>: MatOps<D>,
{
    let h = 1e-6 * (1.0 + f.norm());
    let mut m = DMatrix::zeros(D * D, D * D);
    for beta in 0..D {
        for delta in 0..D {
            let mut fp = *f;
            let mut fm = *f;
            fp[(beta, delta)] += h;
            fm[(beta, delta)] -= h;
            let dp = (mat.first_piola(&fp) - mat.first_piola(&fm)) / (2.0 * h);
            for alpha in 0..D {
                for gamma in 0..D {
                    m[(alpha * D + gamma, beta * D + delta)] = dp[(alpha, gamma)];
                }
            }
        }
    }
    m
}

/// Small-strain reference Hessian `2 mu P_sym + lambda vec(I) vec(I)^T`.
pub fn linear_elasticity_hessian(dim: usize, mu: f64, lambda: f64) -> DMatrix<f64> {
    let d = dim;
    let mut m = DMatrix::zeros(d * d, d * d);
    for alpha in 0..d {
        for gamma in 0..d {
            for beta in 0..d {
                for delta in 0..d {
                    let mut v = 0.0;
                    if alpha == beta && gamma == delta {
                        v += mu;
                    }
                    if alpha == delta && gamma == beta {
                        v += mu;
                    }
                    if alpha == gamma && beta == delta {
                        v += lambda;
                    }
                    m[(alpha * d + gamma, beta * d + delta)] += v;
                }
            }
        }
    }
    m
}

pub fn rel_err_dense(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm().max(1e-300);
    (a - b).norm() / denom
}

/// Dense scatter-assembled residual (negative objective gradient): an
/// independent route to the per-node gathered [`Problem::nodal_residual`].
pub fn dense_residual<const D: usize>(
    problem: &Problem<D>,
    x: &[VecD<D>],
    mass: &[f64],
) -> Vec<VecD<D>>
where
    MatD<D>: MatOps<D>,
{
    let mesh = problem.mesh;
    let mut r: Vec<VecD<D>> = (0..x.len())
        .map(|i| problem.gravity * mass[i])
        .collect();
    for e in 0..mesh.num_elements() {
        let f = mesh.deformation_gradient(x, e);
        let p = problem.material.first_piola(&f);
        let conn = mesh.element(e);
        let grads = mesh.grads(e);
        for (a, &i) in conn.iter().enumerate() {
            r[i as usize] -= p * grads[a] * mesh.measure(e);
        }
    }
    for wc in problem.constraints {
        let k = wc.stiffness.matrix();
        let c = wc.value(x);
        let mut nodes: Vec<u32> = wc.nodes().collect();
        nodes.sort_unstable();
        nodes.dedup();
        for i in nodes {
            r[i as usize] -= k * c * wc.weight_on(i);
        }
    }
    if let Some(dynamics) = &problem.dynamics {
        for i in 0..x.len() {
            r[i] -= (x[i] - dynamics.x_hat[i]) * (mass[i] / (dynamics.dt * dynamics.dt));
        }
    }
    r
}

/// Dense global modified Hessian, assembled through the materialized
/// density tensor, from which per-node blocks are extracted.
pub fn dense_modified_hessian<const D: usize>(
    mesh: &SimMesh<D>,
    material: &Material,
    constraints: &[WeakConstraint<D>],
    x: &[VecD<D>],
) -> DMatrix<f64>
where
    MatD<D>: MatOps<D>,
{
    let n = mesh.num_vertices();
    let mut h = DMatrix::zeros(D * n, D * n);
    for e in 0..mesh.num_elements() {
        let f = mesh.deformation_gradient(x, e);
        let density = material.modified_hessian_density(&f);
        let conn = mesh.element(e);
        let grads = mesh.grads(e);
        for (a, &i) in conn.iter().enumerate() {
            for (b, &j) in conn.iter().enumerate() {
                let block = density.contract(&grads[a], &grads[b]) * mesh.measure(e);
                for r in 0..D {
                    for c in 0..D {
                        h[(i as usize * D + r, j as usize * D + c)] += block[(r, c)];
                    }
                }
            }
        }
    }
    for wc in constraints {
        let k = wc.stiffness.matrix();
        let mut nodes: Vec<u32> = wc.nodes().collect();
        nodes.sort_unstable();
        nodes.dedup();
        for &i in &nodes {
            for &j in &nodes {
                let scale = wc.weight_on(i) * wc.weight_on(j);
                for r in 0..D {
                    for c in 0..D {
                        h[(i as usize * D + r, j as usize * D + c)] += scale * k[(r, c)];
                    }
                }
            }
        }
    }
    h
}

pub fn extract_block<const D: usize>(h: &DMatrix<f64>, i: usize) -> MatD<D> {
    MatD::<D>::from_fn(|r, c| h[(i * D + r, i * D + c)])
}

/// Finite difference of the total objective: gradient oracle for the
/// complete system (elastic + constraints + external + inertia).
pub fn fd_objective_gradient<const D: usize>(
    problem: &Problem<D>,
    x: &[VecD<D>],
    mass: &[f64],
    dirichlet: &[bool],
    i: usize,
) -> VecD<D>
where
    MatD<D>: MatOps<D>,
{
    let scale: f64 = x.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let h = 1e-6 * (1.0 + scale);
    let mut g = VecD::<D>::zeros();
    for k in 0..D {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i][k] += h;
        xm[i][k] -= h;
        g[k] = (problem.objective(&xp, mass, dirichlet) - problem.objective(&xm, mass, dirichlet))
            / (2.0 * h);
    }
    g
}

/// Brute-force coloring validity: every stencil has pairwise-distinct
/// colors. Written against the raw data, not the partition's helpers.
pub fn coloring_valid<const D: usize>(
    color_of: &[u32],
    mesh: &SimMesh<D>,
    constraints: &[WeakConstraint<D>],
) -> bool {
    let check = |nodes: &[u32]| -> bool {
        for (k, &a) in nodes.iter().enumerate() {
            for &b in &nodes[k + 1..] {
                if a != b && color_of[a as usize] == color_of[b as usize] {
                    return false;
                }
            }
        }
        true
    };
    for e in 0..mesh.num_elements() {
        if !check(mesh.element(e)) {
            return false;
        }
    }
    for wc in constraints {
        let nodes: Vec<u32> = wc.nodes().collect();
        if !check(&nodes) {
            return false;
        }
    }
    true
}

/// A compact irregular five-element test mesh with distinct node valences.
pub fn five_element_mesh() -> (SimMesh<3>, Vec<f64>) {
    let (v, e) = pbng::mesh::box_grid_3d(
        [1, 1, 1],
        VecD::<3>::zeros(),
        VecD::<3>::new(1.0, 0.8, 1.3),
    );
    SimMesh::<3>::build(v, &e, 10.0).unwrap()
}

pub fn incidence_for<const D: usize>(
    mesh: &SimMesh<D>,
    constraints: &[WeakConstraint<D>],
) -> ConstraintIncidence {
    ConstraintIncidence::build(mesh.num_vertices(), constraints)
}
