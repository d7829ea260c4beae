//! Constraint-based reference solvers: PBD, XPBD, and pseudo-time XPBD
//! for quasistatic problems.
//!
//! Hyperelastic energies are split into two scalar constraints per element
//! (a deviatoric and a volumetric one) with compliances chosen so
//! `sum_c C_c^2 / (2 alpha_c)` reproduces the discrete elastic energy:
//!
//! ```text
//! corotated:   C = |F - R(F)|, alpha = 1/(2 mu V);  C = det F - 1,            alpha = 1/(lambda V)
//! neo-hookean: C = |F|,        alpha = 1/(mu V);    C = det F - 1 - mu/lh,    alpha = 1/(lh V)
//! ```
//!
//! Weak constraints are decomposed into scalar components along their
//! stiffness eigendirections. Each Gauss-Seidel sub-iterate solves one
//! constraint for a Lagrange multiplier increment
//! `dl = (-C - (alpha/dt^2) l) / (sum_j |dC/dx_j|^2 / m_j + alpha/dt^2)`
//! and displaces incident free nodes along the constraint gradient.
//! PBD is the `alpha -> 0` limit. Multipliers reset at every time step.

use crate::constraints::{Stiffness, WeakConstraint};
use crate::materials::{Material, MaterialModel};
use crate::math::{MatD, MatOps, VecD};
use crate::mesh::SimMesh;
use crate::state::SimState;
use crate::{Error, Result};

/// Scalar constraint function over an element's deformation gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintFn {
    /// `|F - R(F)|_F`
    FrobeniusDistanceToRotation,
    /// `|F|_F`
    FrobeniusNorm,
    /// `det F - shift`
    DetMinus(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct ElasticConstraint {
    pub element: u32,
    pub func: ConstraintFn,
    /// Compliance; zero in PBD mode.
    pub alpha: f64,
}

/// One scalar component of a weak constraint.
#[derive(Debug, Clone)]
pub struct WeakScalar<const D: usize> {
    /// Unique incident nodes with net weights `w0 - w1`.
    pub nodes: Vec<(u32, f64)>,
    pub axis: VecD<D>,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub enum XpbdItem<const D: usize> {
    Elastic(ElasticConstraint),
    Weak(WeakScalar<D>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintOrder {
    ElasticThenWeak,
    WeakThenElastic,
}

/// Ready-to-iterate constraint system with per-constraint multipliers.
#[derive(Debug, Clone)]
pub struct XpbdSystem<const D: usize> {
    pub items: Vec<XpbdItem<D>>,
    pub lambda: Vec<f64>,
    /// Gradient-undefined constraints skipped in the last iteration.
    pub skipped: usize,
}

/// Node lists of the two elastic constraints per element, in constraint
/// index order `c = 2e, 2e + 1`; the input to constraint-mode coloring.
pub fn elastic_constraint_node_lists<const D: usize>(mesh: &SimMesh<D>) -> Vec<Vec<u32>>
where
    MatD<D>: MatOps<D>,
{
    let mut lists = Vec::with_capacity(2 * mesh.num_elements());
    for e in 0..mesh.num_elements() {
        let nodes: Vec<u32> = mesh.element(e).to_vec();
        lists.push(nodes.clone());
        lists.push(nodes);
    }
    lists
}

impl<const D: usize> XpbdSystem<D>
where
    MatD<D>: MatOps<D>,
{
    /// Build the constraint set for a mesh, its weak constraints, and a
    /// material. `pbd` zeroes every compliance. Only the corotated and
    /// Neo-Hookean models decompose into the two-constraint form.
    pub fn build(
        mesh: &SimMesh<D>,
        material: Material,
        weak: &[WeakConstraint<D>],
        order: ConstraintOrder,
        pbd: bool,
    ) -> Result<Self> {
        let mut elastic = Vec::with_capacity(2 * mesh.num_elements());
        for e in 0..mesh.num_elements() {
            let vol = mesh.measure(e);
            let (dev, dev_alpha, det_shift, vol_alpha) = match material.model {
                MaterialModel::Corotated => (
                    ConstraintFn::FrobeniusDistanceToRotation,
                    1.0 / (2.0 * material.mu * vol),
                    1.0,
                    if material.lambda > 0.0 {
                        Some(1.0 / (material.lambda * vol))
                    } else {
                        None
                    },
                ),
                MaterialModel::NeoHookean => {
                    let lh = material.lambda_hat();
                    (
                        ConstraintFn::FrobeniusNorm,
                        1.0 / (material.mu * vol),
                        1.0 + material.mu / lh,
                        Some(1.0 / (lh * vol)),
                    )
                }
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "constraint-based solvers support corotated and neo-hookean models, not {}",
                        other.name()
                    )))
                }
            };
            elastic.push(XpbdItem::Elastic(ElasticConstraint {
                element: e as u32,
                func: dev,
                alpha: if pbd { 0.0 } else { dev_alpha },
            }));
            if let Some(alpha) = vol_alpha {
                elastic.push(XpbdItem::Elastic(ElasticConstraint {
                    element: e as u32,
                    func: ConstraintFn::DetMinus(det_shift),
                    alpha: if pbd { 0.0 } else { alpha },
                }));
            }
        }

        let mut weak_items = Vec::new();
        for wc in weak {
            let mut nodes: Vec<u32> = wc.nodes().collect();
            nodes.sort_unstable();
            nodes.dedup();
            let weighted: Vec<(u32, f64)> =
                nodes.iter().map(|&i| (i, wc.weight_on(i))).collect();
            let mut push = |axis: VecD<D>, k: f64| {
                if k > 0.0 {
                    weak_items.push(XpbdItem::Weak(WeakScalar {
                        nodes: weighted.clone(),
                        axis,
                        alpha: if pbd { 0.0 } else { 1.0 / k },
                    }));
                }
            };
            match wc.stiffness {
                Stiffness::Isotropic(k) => {
                    for b in 0..D {
                        let mut axis = VecD::<D>::zeros();
                        axis[b] = 1.0;
                        push(axis, k);
                    }
                }
                Stiffness::Frame { k_n, k_tau, normal } => {
                    let frame = <MatD<D> as MatOps<D>>::frame_from_normal(&normal);
                    push(normal, k_n);
                    for b in 1..D {
                        push(frame.column(b).into_owned(), k_tau);
                    }
                }
            }
        }

        let mut items = Vec::with_capacity(elastic.len() + weak_items.len());
        match order {
            ConstraintOrder::ElasticThenWeak => {
                items.extend(elastic);
                items.extend(weak_items);
            }
            ConstraintOrder::WeakThenElastic => {
                items.extend(weak_items);
                items.extend(elastic);
            }
        }
        let lambda = vec![0.0; items.len()];
        Ok(Self {
            items,
            lambda,
            skipped: 0,
        })
    }

    pub fn reset_multipliers(&mut self) {
        self.lambda.fill(0.0);
    }

    /// One Gauss-Seidel pass over every constraint in system order.
    pub fn iterate(&mut self, mesh: &SimMesh<D>, state: &mut SimState<D>, dt: f64) {
        self.skipped = 0;
        let mut grads: Vec<(u32, VecD<D>)> = Vec::with_capacity(8);
        for idx in 0..self.items.len() {
            let Some(c) = evaluate_item(&self.items[idx], mesh, &state.x, &mut grads) else {
                self.skipped += 1;
                continue;
            };
            let alpha_t = item_alpha(&self.items[idx]) / (dt * dt);
            let mut denom = alpha_t;
            for &(j, ref g) in &grads {
                let j = j as usize;
                if !state.dirichlet[j] {
                    denom += g.norm_squared() / state.mass[j];
                }
            }
            if denom <= 1e-300 {
                self.skipped += 1;
                continue;
            }
            let dl = (-c - alpha_t * self.lambda[idx]) / denom;
            self.lambda[idx] += dl;
            for &(j, ref g) in &grads {
                let j = j as usize;
                if !state.dirichlet[j] {
                    state.x[j] += g * (dl / state.mass[j]);
                }
            }
        }
    }

    /// RMS of the constraint-equation residual `|C + (alpha/dt^2) lambda|`.
    pub fn secondary_residual(&self, mesh: &SimMesh<D>, x: &[VecD<D>], dt: f64) -> f64 {
        let mut sum = 0.0;
        let mut grads = Vec::new();
        for (idx, item) in self.items.iter().enumerate() {
            let c = evaluate_item(item, mesh, x, &mut grads).unwrap_or(0.0);
            let r = c + item_alpha(item) / (dt * dt) * self.lambda[idx];
            sum += r * r;
        }
        (sum / self.items.len().max(1) as f64).sqrt()
    }
}

fn item_alpha<const D: usize>(item: &XpbdItem<D>) -> f64 {
    match item {
        XpbdItem::Elastic(e) => e.alpha,
        XpbdItem::Weak(w) => w.alpha,
    }
}

/// Value and per-node gradients of one constraint; `None` when the
/// gradient is undefined (Frobenius-norm constraints at their zero).
fn evaluate_item<const D: usize>(
    item: &XpbdItem<D>,
    mesh: &SimMesh<D>,
    x: &[VecD<D>],
    grads: &mut Vec<(u32, VecD<D>)>,
) -> Option<f64>
where
    MatD<D>: MatOps<D>,
{
    grads.clear();
    match item {
        XpbdItem::Elastic(ec) => {
            let (value, grad_f) = elastic_value_gradf(ec.func, mesh, x, ec.element as usize)?;
            let conn = mesh.element(ec.element as usize);
            let g = mesh.grads(ec.element as usize);
            for (a, &j) in conn.iter().enumerate() {
                grads.push((j, grad_f * g[a]));
            }
            Some(value)
        }
        XpbdItem::Weak(w) => {
            let mut c = 0.0;
            for &(j, dw) in &w.nodes {
                c += w.axis.dot(&x[j as usize]) * dw;
                grads.push((j, w.axis * dw));
            }
            Some(c)
        }
    }
}

/// Constraint value and its gradient with respect to F.
pub fn elastic_value_gradf<const D: usize>(
    func: ConstraintFn,
    mesh: &SimMesh<D>,
    x: &[VecD<D>],
    element: usize,
) -> Option<(f64, MatD<D>)>
where
    MatD<D>: MatOps<D>,
{
    let f = mesh.deformation_gradient(x, element);
    match func {
        ConstraintFn::FrobeniusDistanceToRotation => {
            let d = f - f.polar_rotation();
            let value = d.norm();
            if value < 1e-12 {
                return None;
            }
            Some((value, d / value))
        }
        ConstraintFn::FrobeniusNorm => {
            let value = f.norm();
            if value < 1e-12 {
                return None;
            }
            Some((value, f / value))
        }
        ConstraintFn::DetMinus(shift) => Some((f.det() - shift, f.cofactor())),
    }
}

/// One backward-Euler XPBD (or PBD) step: inertial+external initial guess,
/// multipliers reset, `iterations` constraint sweeps, velocity update.
/// The callback sees `(iteration, positions, secondary_residual)` with
/// iteration 0 right after the initial guess; the secondary residual is
/// only evaluated when `log_secondary` is set.
#[allow(clippy::too_many_arguments)]
pub fn dynamic_step<const D: usize>(
    system: &mut XpbdSystem<D>,
    mesh: &SimMesh<D>,
    state: &mut SimState<D>,
    gravity: VecD<D>,
    dt: f64,
    iterations: usize,
    log_secondary: bool,
    mut on_iteration: impl FnMut(usize, &[VecD<D>], f64),
) -> Result<()>
where
    MatD<D>: MatOps<D>,
{
    state.check_dynamic_masses()?;
    let x_n = state.x.clone();
    state.apply_dirichlet_targets();
    for i in 0..state.x.len() {
        if !state.dirichlet[i] {
            let vi = state.v[i];
            state.x[i] += vi * dt + gravity * (dt * dt);
        }
    }
    system.reset_multipliers();
    on_iteration(0, &state.x, f64::NAN);

    for l in 0..iterations {
        system.iterate(mesh, state, dt);
        let secondary = if log_secondary {
            system.secondary_residual(mesh, &state.x, dt)
        } else {
            f64::NAN
        };
        on_iteration(l + 1, &state.x, secondary);
    }

    for i in 0..state.x.len() {
        state.v[i] = (state.x[i] - x_n[i]) / dt;
    }
    state.x_prev = x_n;
    Ok(())
}

/// Quasistatic PBD solve: a single pseudo-step whose initial guess carries
/// the external force; repeated projection drives the state back toward
/// the stiff (rigid) limit, so the forcing's effect fades with iteration
/// count.
pub fn pbd_quasistatic_step<const D: usize>(
    system: &mut XpbdSystem<D>,
    mesh: &SimMesh<D>,
    state: &mut SimState<D>,
    gravity: VecD<D>,
    pseudo_dt: f64,
    iterations: usize,
    mut on_iteration: impl FnMut(usize, &[VecD<D>]),
) where
    MatD<D>: MatOps<D>,
{
    state.apply_dirichlet_targets();
    for i in 0..state.x.len() {
        if !state.dirichlet[i] {
            state.x[i] += gravity * (pseudo_dt * pseudo_dt);
        }
    }
    system.reset_multipliers();
    on_iteration(0, &state.x);
    for l in 0..iterations {
        system.iterate(mesh, state, pseudo_dt);
        on_iteration(l + 1, &state.x);
    }
    state.x_prev.copy_from_slice(&state.x);
}

/// Quasistatic XPBD: run backward-Euler pseudo-steps until the budget is
/// exhausted. The callback receives a global iteration counter across
/// pseudo-steps.
#[allow(clippy::too_many_arguments)]
pub fn quasistatic_solve<const D: usize>(
    system: &mut XpbdSystem<D>,
    mesh: &SimMesh<D>,
    state: &mut SimState<D>,
    gravity: VecD<D>,
    pseudo_dt: f64,
    pseudo_steps: usize,
    iterations_per_step: usize,
    log_secondary: bool,
    mut on_iteration: impl FnMut(usize, &[VecD<D>], f64),
) -> Result<()>
where
    MatD<D>: MatOps<D>,
{
    let mut global = 0usize;
    for _ in 0..pseudo_steps {
        dynamic_step(
            system,
            mesh,
            state,
            gravity,
            pseudo_dt,
            iterations_per_step,
            log_secondary,
            |l, x, secondary| {
                if l > 0 {
                    global += 1;
                    on_iteration(global, x, secondary);
                }
            },
        )?;
    }
    Ok(())
}
