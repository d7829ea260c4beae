//! Global (modified) Newton solver with preconditioned conjugate
//! gradients; the convergence reference for the Gauss-Seidel methods.
//!
//! Every iteration assembles the global residual and the SPD-projected
//! global Hessian built from the per-element modified density Hessian
//! (plus weak-constraint blocks and, in dynamic mode, the inertia
//! diagonal), solves it with Jacobi-preconditioned CG capped at
//! `cg_iterations`, and applies the step through an optional backtracking
//! line search on the objective. The element Hessian blocks
//! `B_ij = (2 mu G_ij I + lambda a_i a_j^T) V` (with `a_j = cof(F) g_j`
//! and Gram matrix `G_ij = g_i . g_j`) are never materialized; matrix-free
//! products use the rank-one structure.

use crate::math::{MatD, MatOps, VecD};
use crate::state::SimState;
use crate::system::Problem;
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct NewtonConfig {
    pub max_iterations: usize,
    pub cg_iterations: usize,
    /// Relative CG tolerance on the preconditioned residual.
    pub cg_tolerance: f64,
    pub line_search: bool,
    /// Stop when the residual drops below this absolute value...
    pub tol_abs: f64,
    /// ...or below this fraction of the initial residual.
    pub tol_rel: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            cg_iterations: 100,
            cg_tolerance: 1e-12,
            line_search: true,
            tol_abs: 0.0,
            tol_rel: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NewtonStats {
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub converged: bool,
    /// CG breakdowns that fell back to a preconditioned gradient step.
    pub gradient_fallbacks: usize,
}

enum ElemOp<const D: usize> {
    /// Modified kernel: `two_mu G_ij I + lambda a_i a_j^T`, times measure.
    Rank1 { two_mu: f64, lambda: f64 },
    /// Exact small-strain kernel.
    Linear { mu: f64, lambda: f64 },
}

/// Scratch and constant data for matrix-free Hessian products.
struct Assembly<const D: usize> {
    ops: Vec<ElemOp<D>>,
    /// `a_j = cof(F_e) g_j`, stride D+1 (zero in the linear case).
    elem_a: Vec<VecD<D>>,
    /// Gram matrices `g_i . g_j`, stride (D+1)^2; constant per mesh.
    gram: Vec<f64>,
    /// Unique (node, net weight) lists and stiffness per weak constraint.
    wc_nodes: Vec<Vec<(u32, f64)>>,
    wc_k: Vec<MatD<D>>,
    /// Componentwise Jacobi diagonal.
    diag: Vec<VecD<D>>,
}

pub fn solve<const D: usize>(
    problem: &Problem<'_, D>,
    state: &mut SimState<D>,
    config: &NewtonConfig,
    mut on_iteration: impl FnMut(usize, f64),
) -> Result<NewtonStats>
where
    MatD<D>: MatOps<D>,
{
    state.apply_dirichlet_targets();
    let mesh = problem.mesh;
    let n = mesh.num_vertices();
    let nodes_per_elem = D + 1;

    let mut assembly = Assembly::<D> {
        ops: Vec::with_capacity(mesh.num_elements()),
        elem_a: vec![VecD::zeros(); mesh.num_elements() * nodes_per_elem],
        gram: vec![0.0; mesh.num_elements() * nodes_per_elem * nodes_per_elem],
        wc_nodes: Vec::with_capacity(problem.constraints.len()),
        wc_k: Vec::with_capacity(problem.constraints.len()),
        diag: vec![VecD::zeros(); n],
    };
    for e in 0..mesh.num_elements() {
        let g = mesh.grads(e);
        for i in 0..nodes_per_elem {
            for j in 0..nodes_per_elem {
                assembly.gram[(e * nodes_per_elem + i) * nodes_per_elem + j] = g[i].dot(&g[j]);
            }
        }
    }
    for wc in problem.constraints {
        let mut nodes: Vec<u32> = wc.nodes().collect();
        nodes.sort_unstable();
        nodes.dedup();
        assembly
            .wc_nodes
            .push(nodes.iter().map(|&i| (i, wc.weight_on(i))).collect());
        assembly.wc_k.push(wc.stiffness.matrix());
    }

    let mut residual = vec![VecD::<D>::zeros(); n];
    let mut dx = vec![VecD::<D>::zeros(); n];
    let mut cg = CgBuffers::new(n);
    let mut stats = NewtonStats::default();

    for iter in 0..=config.max_iterations {
        assemble(problem, state, &mut assembly, &mut residual);
        let rn = norm(&residual);
        on_iteration(iter, rn);
        if iter == 0 {
            stats.initial_residual = rn;
        }
        stats.final_residual = rn;
        stats.iterations = iter;
        if rn <= config.tol_abs || rn <= config.tol_rel * stats.initial_residual {
            stats.converged = true;
            return Ok(stats);
        }
        if iter == config.max_iterations {
            break;
        }

        // Solve H dx = r.
        let broke_down = !pcg(
            problem,
            &assembly,
            &residual,
            &state.mass,
            &state.dirichlet,
            config.cg_iterations,
            config.cg_tolerance,
            &mut dx,
            &mut cg,
        );
        if broke_down || dot(&residual, &dx) <= 0.0 {
            // Preconditioned gradient fallback keeps the step a descent
            // direction.
            stats.gradient_fallbacks += 1;
            for i in 0..n {
                dx[i] = precondition(&assembly.diag[i], &residual[i]);
            }
        }

        let slope = dot(&residual, &dx);
        let mut step = 1.0;
        if config.line_search {
            let e0 = problem.objective(&state.x, &state.mass, &state.dirichlet);
            let mut trial: Vec<VecD<D>> = state.x.clone();
            for _ in 0..20 {
                for i in 0..n {
                    trial[i] = state.x[i] + dx[i] * step;
                }
                let e = problem.objective(&trial, &state.mass, &state.dirichlet);
                if e <= e0 - 1e-4 * step * slope {
                    break;
                }
                step *= 0.5;
            }
        }
        for i in 0..n {
            if !state.dirichlet[i] {
                state.x[i] += dx[i] * step;
            }
        }
    }
    Ok(stats)
}

fn assemble<const D: usize>(
    problem: &Problem<'_, D>,
    state: &SimState<D>,
    assembly: &mut Assembly<D>,
    residual: &mut [VecD<D>],
) where
    MatD<D>: MatOps<D>,
{
    let mesh = problem.mesh;
    let nodes_per_elem = D + 1;
    let x = &state.x;

    for (i, r) in residual.iter_mut().enumerate() {
        *r = problem.external_force(&state.mass, i);
    }
    for d in assembly.diag.iter_mut() {
        *d = VecD::zeros();
    }
    assembly.ops.clear();

    for e in 0..mesh.num_elements() {
        let f = mesh.deformation_gradient(x, e);
        let (p, kernel) = problem.material.stress_and_kernel(&f);
        let conn = mesh.element(e);
        let g = mesh.grads(e);
        let vol = mesh.measure(e);
        match kernel {
            crate::materials::HessianKernel::CofactorRankOne { two_mu, lambda, jf } => {
                for a in 0..nodes_per_elem {
                    let i = conn[a] as usize;
                    residual[i] -= p * g[a] * vol;
                    let aj = jf * g[a];
                    assembly.elem_a[e * nodes_per_elem + a] = aj;
                    let gaa =
                        assembly.gram[(e * nodes_per_elem + a) * nodes_per_elem + a];
                    for k in 0..D {
                        assembly.diag[i][k] += vol * (two_mu * gaa + lambda * aj[k] * aj[k]);
                    }
                }
                assembly.ops.push(ElemOp::Rank1 { two_mu, lambda });
            }
            crate::materials::HessianKernel::Linear { mu, lambda } => {
                for a in 0..nodes_per_elem {
                    let i = conn[a] as usize;
                    residual[i] -= p * g[a] * vol;
                    let gaa =
                        assembly.gram[(e * nodes_per_elem + a) * nodes_per_elem + a];
                    for k in 0..D {
                        assembly.diag[i][k] +=
                            vol * (mu * gaa + (mu + lambda) * g[a][k] * g[a][k]);
                    }
                }
                assembly.ops.push(ElemOp::Linear { mu, lambda });
            }
        }
    }

    for (c, wc) in problem.constraints.iter().enumerate() {
        let k = &assembly.wc_k[c];
        let cval = wc.value(x);
        for &(i, dw) in &assembly.wc_nodes[c] {
            let i = i as usize;
            residual[i] -= k * cval * dw;
            for comp in 0..D {
                assembly.diag[i][comp] += dw * dw * k[(comp, comp)];
            }
        }
    }

    if let Some(dyn_terms) = &problem.dynamics {
        let scale = 1.0 / (dyn_terms.dt * dyn_terms.dt);
        for i in 0..residual.len() {
            let ms = state.mass[i] * scale;
            residual[i] -= (x[i] - dyn_terms.x_hat[i]) * ms;
            for k in 0..D {
                assembly.diag[i][k] += ms;
            }
        }
    }

    for (i, r) in residual.iter_mut().enumerate() {
        if state.dirichlet[i] {
            *r = VecD::zeros();
        }
    }
}

/// y = H v with Dirichlet rows/columns projected out.
fn matvec<const D: usize>(
    problem: &Problem<'_, D>,
    assembly: &Assembly<D>,
    state_mass: &[f64],
    dirichlet: &[bool],
    v: &[VecD<D>],
    y: &mut [VecD<D>],
) where
    MatD<D>: MatOps<D>,
{
    let mesh = problem.mesh;
    let nodes_per_elem = D + 1;
    for yi in y.iter_mut() {
        *yi = VecD::zeros();
    }

    for (e, op) in assembly.ops.iter().enumerate() {
        let conn = mesh.element(e);
        let vol = mesh.measure(e);
        let gram = &assembly.gram[e * nodes_per_elem * nodes_per_elem..];
        match op {
            ElemOp::Rank1 { two_mu, lambda } => {
                let a = &assembly.elem_a[e * nodes_per_elem..(e + 1) * nodes_per_elem];
                let mut s = 0.0;
                for j in 0..nodes_per_elem {
                    let vj = masked(v, conn[j], dirichlet);
                    s += a[j].dot(&vj);
                }
                for i in 0..nodes_per_elem {
                    let node = conn[i] as usize;
                    if dirichlet[node] {
                        continue;
                    }
                    let mut u = VecD::<D>::zeros();
                    for j in 0..nodes_per_elem {
                        u += masked(v, conn[j], dirichlet) * gram[i * nodes_per_elem + j];
                    }
                    y[node] += (u * *two_mu + a[i] * (*lambda * s)) * vol;
                }
            }
            ElemOp::Linear { mu, lambda } => {
                let g = mesh.grads(e);
                let mut m = MatD::<D>::zeros();
                for j in 0..nodes_per_elem {
                    m += masked(v, conn[j], dirichlet) * g[j].transpose();
                }
                let tr = m.trace();
                for i in 0..nodes_per_elem {
                    let node = conn[i] as usize;
                    if dirichlet[node] {
                        continue;
                    }
                    let mut u = VecD::<D>::zeros();
                    for j in 0..nodes_per_elem {
                        u += masked(v, conn[j], dirichlet) * gram[i * nodes_per_elem + j];
                    }
                    y[node] +=
                        (u * *mu + m.transpose() * g[i] * *mu + g[i] * (*lambda * tr)) * vol;
                }
            }
        }
    }

    for (c, nodes) in assembly.wc_nodes.iter().enumerate() {
        let k = &assembly.wc_k[c];
        let mut u = VecD::<D>::zeros();
        for &(j, dw) in nodes {
            u += masked(v, j, dirichlet) * dw;
        }
        let ku = k * u;
        for &(j, dw) in nodes {
            let j = j as usize;
            if !dirichlet[j] {
                y[j] += ku * dw;
            }
        }
    }

    if let Some(dyn_terms) = &problem.dynamics {
        let scale = 1.0 / (dyn_terms.dt * dyn_terms.dt);
        for i in 0..y.len() {
            if !dirichlet[i] {
                y[i] += v[i] * (state_mass[i] * scale);
            }
        }
    }
}

fn masked<const D: usize>(v: &[VecD<D>], i: u32, dirichlet: &[bool]) -> VecD<D> {
    if dirichlet[i as usize] {
        VecD::zeros()
    } else {
        v[i as usize]
    }
}

fn precondition<const D: usize>(diag: &VecD<D>, r: &VecD<D>) -> VecD<D> {
    let mut z = VecD::<D>::zeros();
    for k in 0..D {
        z[k] = if diag[k] > 0.0 { r[k] / diag[k] } else { r[k] };
    }
    z
}

struct CgBuffers<const D: usize> {
    r: Vec<VecD<D>>,
    z: Vec<VecD<D>>,
    p: Vec<VecD<D>>,
    hp: Vec<VecD<D>>,
}

impl<const D: usize> CgBuffers<D> {
    fn new(n: usize) -> Self {
        Self {
            r: vec![VecD::zeros(); n],
            z: vec![VecD::zeros(); n],
            p: vec![VecD::zeros(); n],
            hp: vec![VecD::zeros(); n],
        }
    }
}

/// Jacobi-preconditioned CG from a zero initial guess; returns false on
/// breakdown (non-finite or non-positive curvature).
#[allow(clippy::too_many_arguments)]
fn pcg<const D: usize>(
    problem: &Problem<'_, D>,
    assembly: &Assembly<D>,
    rhs: &[VecD<D>],
    mass: &[f64],
    dirichlet: &[bool],
    max_iters: usize,
    tolerance: f64,
    dx: &mut [VecD<D>],
    bufs: &mut CgBuffers<D>,
) -> bool
where
    MatD<D>: MatOps<D>,
{
    let n = rhs.len();
    for i in 0..n {
        dx[i] = VecD::zeros();
        bufs.r[i] = if dirichlet[i] { VecD::zeros() } else { rhs[i] };
        bufs.z[i] = precondition(&assembly.diag[i], &bufs.r[i]);
        bufs.p[i] = bufs.z[i];
    }
    let mut rz = dot(&bufs.r, &bufs.z);
    let rz0 = rz;
    if rz0 <= 0.0 {
        return rz0 == 0.0;
    }

    for _ in 0..max_iters {
        matvec(problem, assembly, mass, dirichlet, &bufs.p, &mut bufs.hp);
        let php = dot(&bufs.p, &bufs.hp);
        if !php.is_finite() || php <= 0.0 {
            return false;
        }
        let alpha = rz / php;
        for i in 0..n {
            dx[i] += bufs.p[i] * alpha;
            bufs.r[i] -= bufs.hp[i] * alpha;
        }
        for i in 0..n {
            bufs.z[i] = precondition(&assembly.diag[i], &bufs.r[i]);
        }
        let rz_new = dot(&bufs.r, &bufs.z);
        if !rz_new.is_finite() {
            return false;
        }
        if rz_new <= tolerance * tolerance * rz0 {
            return true;
        }
        let beta = rz_new / rz;
        for i in 0..n {
            bufs.p[i] = bufs.z[i] + bufs.p[i] * beta;
        }
        rz = rz_new;
    }
    true
}

fn dot<const D: usize>(a: &[VecD<D>], b: &[VecD<D>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn norm<const D: usize>(a: &[VecD<D>]) -> f64 {
    dot(a, a).sqrt()
}
