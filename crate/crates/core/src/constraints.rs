//! Weak (quadratic penalty) constraints between interpolated points, and
//! the proximity-based collision detection that emits them dynamically.
//!
//! A constraint couples two points, each interpolated from mesh nodes with
//! non-negative weights summing to one, through the energy
//! `1/2 C^T K C` with `C = p0 - p1`. The stiffness `K` is either isotropic
//! or an anisotropic frame `k_n n n^T + k_tau (I - n n^T)`.

use crate::math::{MatD, MatOps, VecD};
use crate::mesh::SimMesh;
use crate::{Error, Result};
use rayon::prelude::*;
use std::collections::HashMap;

/// Constraint stiffness: a scalar or a normal-aligned frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stiffness<const D: usize> {
    Isotropic(f64),
    Frame {
        k_n: f64,
        k_tau: f64,
        normal: VecD<D>,
    },
}

impl<const D: usize> Stiffness<D>
where
    MatD<D>: MatOps<D>,
{
    /// Anisotropic stiffness from a (not necessarily unit) normal.
    pub fn frame(k_n: f64, k_tau: f64, normal: VecD<D>) -> Result<Self> {
        let len = normal.norm();
        if len <= 1e-300 {
            return Err(Error::ZeroNormal);
        }
        Ok(Stiffness::Frame {
            k_n,
            k_tau,
            normal: normal / len,
        })
    }

    /// The dense stiffness matrix. The tangential part uses the projector
    /// `I - n n^T`, which equals the sum of the tangent dyads of any
    /// orthonormal frame completion.
    pub fn matrix(&self) -> MatD<D> {
        match self {
            Stiffness::Isotropic(k) => MatD::<D>::identity() * *k,
            Stiffness::Frame { k_n, k_tau, normal } => {
                let nn = normal * normal.transpose();
                nn * (*k_n - *k_tau) + MatD::<D>::identity() * *k_tau
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Authored binding, lives for the whole simulation.
    Static,
    /// Collision coupling, regenerated by every detection pass.
    Dynamic,
}

/// Weak constraint between two interpolated points.
#[derive(Debug, Clone)]
pub struct WeakConstraint<const D: usize> {
    pub side0: Vec<(u32, f64)>,
    pub side1: Vec<(u32, f64)>,
    pub stiffness: Stiffness<D>,
    pub kind: ConstraintKind,
}

impl<const D: usize> WeakConstraint<D> {
    /// Point-to-point spring between two nodes.
    pub fn node_pair(a: u32, b: u32, stiffness: Stiffness<D>) -> Self {
        Self {
            side0: vec![(a, 1.0)],
            side1: vec![(b, 1.0)],
            stiffness,
            kind: ConstraintKind::Static,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (label, side) in [("side0", &self.side0), ("side1", &self.side1)] {
            let sum: f64 = side.iter().map(|&(_, w)| w).sum();
            if (sum - 1.0).abs() > 1e-9 || side.iter().any(|&(_, w)| w < -1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "constraint {label} weights must be non-negative and sum to 1 (sum {sum})"
                )));
            }
        }
        Ok(())
    }

    /// Constraint value `C = p0 - p1`.
    pub fn value(&self, x: &[VecD<D>]) -> VecD<D> {
        let mut c = VecD::<D>::zeros();
        for &(i, w) in &self.side0 {
            c += x[i as usize] * w;
        }
        for &(i, w) in &self.side1 {
            c -= x[i as usize] * w;
        }
        c
    }

    /// Net interpolation weight of node `i`: `w0_i - w1_i`.
    pub fn weight_on(&self, i: u32) -> f64 {
        let w0: f64 = self
            .side0
            .iter()
            .filter(|&&(j, _)| j == i)
            .map(|&(_, w)| w)
            .sum();
        let w1: f64 = self
            .side1
            .iter()
            .filter(|&&(j, _)| j == i)
            .map(|&(_, w)| w)
            .sum();
        w0 - w1
    }

    /// All incident node indices (may repeat across sides).
    pub fn nodes(&self) -> impl Iterator<Item = u32> + '_ {
        self.side0
            .iter()
            .map(|&(i, _)| i)
            .chain(self.side1.iter().map(|&(i, _)| i))
    }
}

impl<const D: usize> WeakConstraint<D>
where
    MatD<D>: MatOps<D>,
{
    pub fn energy(&self, x: &[VecD<D>]) -> f64 {
        let c = self.value(x);
        0.5 * c.dot(&(self.stiffness.matrix() * c))
    }

    /// Force on node `i`: `-(w0_i - w1_i) K C`.
    pub fn force_on(&self, x: &[VecD<D>], i: u32) -> VecD<D> {
        -(self.stiffness.matrix() * self.value(x)) * self.weight_on(i)
    }

    /// Hessian block of node `i`: `(w0_i - w1_i)^2 K`, constant in positions.
    pub fn hessian_block(&self, i: u32) -> MatD<D> {
        let dw = self.weight_on(i);
        self.stiffness.matrix() * (dw * dw)
    }
}

/// CSR incidence from nodes to (constraint index, net weight `w0 - w1`),
/// rebuilt whenever the constraint set changes.
#[derive(Debug, Clone, Default)]
pub struct ConstraintIncidence {
    offsets: Vec<u32>,
    items: Vec<(u32, f64)>,
}

impl ConstraintIncidence {
    pub fn build<const D: usize>(num_nodes: usize, constraints: &[WeakConstraint<D>]) -> Self {
        let mut per_node: Vec<Vec<(u32, f64)>> = vec![Vec::new(); num_nodes];
        for (c, wc) in constraints.iter().enumerate() {
            let mut nodes: Vec<u32> = wc.nodes().collect();
            nodes.sort_unstable();
            nodes.dedup();
            for i in nodes {
                per_node[i as usize].push((c as u32, wc.weight_on(i)));
            }
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut items = Vec::new();
        offsets.push(0);
        for list in per_node {
            items.extend(list);
            offsets.push(items.len() as u32);
        }
        Self { offsets, items }
    }

    /// Constraints incident to node `i` as (constraint, net weight).
    pub fn incident(&self, i: usize) -> &[(u32, f64)] {
        if self.offsets.is_empty() {
            return &[];
        }
        &self.items[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }
}

/// Boundary geometry and adjacency used by collision detection (3D).
#[derive(Debug, Clone)]
pub struct CollisionWorld {
    /// Outward-oriented boundary triangles (global vertex ids).
    tris: Vec<[u32; 3]>,
    tri_body: Vec<u32>,
    /// Vertices lying on the boundary, ascending.
    surface_verts: Vec<u32>,
    vert_body: Vec<u32>,
    /// One-ring vertex neighborhoods (sorted), for self-collision exclusion.
    ring: HashMap<u32, Vec<u32>>,
}

impl CollisionWorld {
    /// Extract boundary faces (faces used by exactly one tetrahedron) with
    /// outward orientation, assuming positively oriented rest elements.
    pub fn new(mesh: &SimMesh<3>, body_of: &[u32]) -> Self {
        assert_eq!(body_of.len(), mesh.num_vertices());
        let mut face_count: HashMap<[u32; 3], ([u32; 3], u32)> = HashMap::new();
        for e in 0..mesh.num_elements() {
            let c = mesh.element(e);
            let faces = [
                [c[1], c[2], c[3]],
                [c[0], c[3], c[2]],
                [c[0], c[1], c[3]],
                [c[0], c[2], c[1]],
            ];
            for f in faces {
                let mut key = f;
                key.sort_unstable();
                let entry = face_count.entry(key).or_insert((f, 0));
                entry.1 += 1;
            }
        }
        let mut tris: Vec<[u32; 3]> = face_count
            .values()
            .filter(|&&(_, n)| n == 1)
            .map(|&(f, _)| f)
            .collect();
        tris.sort_unstable();
        let tri_body = tris.iter().map(|t| body_of[t[0] as usize]).collect();

        let mut surface_verts: Vec<u32> = tris.iter().flatten().copied().collect();
        surface_verts.sort_unstable();
        surface_verts.dedup();
        let vert_body = surface_verts
            .iter()
            .map(|&v| body_of[v as usize])
            .collect();

        // One-ring over mesh elements, restricted to surface vertices.
        let mut ring: HashMap<u32, Vec<u32>> = HashMap::new();
        for &v in &surface_verts {
            let mut nbrs = vec![v];
            for &(e, _) in mesh.incident_elements(v as usize) {
                nbrs.extend_from_slice(mesh.element(e as usize));
            }
            nbrs.sort_unstable();
            nbrs.dedup();
            ring.insert(v, nbrs);
        }

        Self {
            tris,
            tri_body,
            surface_verts,
            vert_body,
            ring,
        }
    }

    pub fn num_surface_triangles(&self) -> usize {
        self.tris.len()
    }

    /// Emit one dynamic weak constraint per (surface vertex, surface
    /// triangle) pair closer than `thickness`, excluding pairs on the same
    /// body that share a one-ring neighborhood. Output is sorted by
    /// (vertex, triangle) so repeated passes are reproducible.
    pub fn detect(
        &self,
        x: &[VecD<3>],
        thickness: f64,
        k_n: f64,
        k_tau: f64,
    ) -> Vec<WeakConstraint<3>> {
        if thickness <= 0.0 || self.tris.is_empty() {
            return Vec::new();
        }

        // Hash triangles into cells of size `thickness` by inflated AABB.
        let cell = thickness;
        let key = |p: &VecD<3>| {
            [
                (p.x / cell).floor() as i64,
                (p.y / cell).floor() as i64,
                (p.z / cell).floor() as i64,
            ]
        };
        let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (t, tri) in self.tris.iter().enumerate() {
            let (a, b, c) = (
                x[tri[0] as usize],
                x[tri[1] as usize],
                x[tri[2] as usize],
            );
            let lo = key(&VecD::<3>::new(
                a.x.min(b.x).min(c.x) - thickness,
                a.y.min(b.y).min(c.y) - thickness,
                a.z.min(b.z).min(c.z) - thickness,
            ));
            let hi = key(&VecD::<3>::new(
                a.x.max(b.x).max(c.x) + thickness,
                a.y.max(b.y).max(c.y) + thickness,
                a.z.max(b.z).max(c.z) + thickness,
            ));
            for i in lo[0]..=hi[0] {
                for j in lo[1]..=hi[1] {
                    for k in lo[2]..=hi[2] {
                        grid.entry([i, j, k]).or_default().push(t as u32);
                    }
                }
            }
        }

        let mut hits: Vec<(u32, u32, [f64; 3], VecD<3>)> = self
            .surface_verts
            .par_iter()
            .zip(self.vert_body.par_iter())
            .flat_map_iter(|(&v, &body)| {
                let p = x[v as usize];
                let mut cand: Vec<u32> = grid.get(&key(&p)).cloned().unwrap_or_default();
                cand.sort_unstable();
                cand.dedup();
                let mut out = Vec::new();
                for t in cand {
                    let tri = self.tris[t as usize];
                    if self.tri_body[t as usize] == body {
                        let ring = &self.ring[&v];
                        if tri.iter().any(|q| ring.binary_search(q).is_ok()) {
                            continue;
                        }
                    }
                    let (a, b, c) = (
                        x[tri[0] as usize],
                        x[tri[1] as usize],
                        x[tri[2] as usize],
                    );
                    let normal = (b - a).cross(&(c - a));
                    let area2 = normal.norm();
                    if area2 <= 1e-300 {
                        continue;
                    }
                    let (bary, closest) = closest_point_triangle(&p, &a, &b, &c);
                    if (p - closest).norm() <= thickness {
                        out.push((v, t, bary, normal / area2));
                    }
                }
                out
            })
            .collect();
        hits.sort_by_key(|&(v, t, _, _)| (v, t));

        hits.into_iter()
            .map(|(v, t, bary, normal)| {
                let tri = self.tris[t as usize];
                WeakConstraint {
                    side0: vec![(v, 1.0)],
                    side1: (0..3).map(|k| (tri[k], bary[k])).collect(),
                    stiffness: Stiffness::Frame {
                        k_n,
                        k_tau,
                        normal,
                    },
                    kind: ConstraintKind::Dynamic,
                }
            })
            .collect()
    }
}

/// Dimension dispatch for collision detection: only 3D meshes support it;
/// 2D scenes must not enable collisions.
pub trait Collidable<const D: usize>: Sized {
    type World: Send + Sync;
    fn build_collision_world(&self, body_of: &[u32]) -> Option<Self::World>;
    fn detect_collisions(
        world: &Self::World,
        x: &[VecD<D>],
        thickness: f64,
        k_n: f64,
        k_tau: f64,
    ) -> Vec<WeakConstraint<D>>;
}

impl Collidable<3> for SimMesh<3> {
    type World = CollisionWorld;

    fn build_collision_world(&self, body_of: &[u32]) -> Option<CollisionWorld> {
        Some(CollisionWorld::new(self, body_of))
    }

    fn detect_collisions(
        world: &CollisionWorld,
        x: &[VecD<3>],
        thickness: f64,
        k_n: f64,
        k_tau: f64,
    ) -> Vec<WeakConstraint<3>> {
        world.detect(x, thickness, k_n, k_tau)
    }
}

impl Collidable<2> for SimMesh<2> {
    type World = ();

    fn build_collision_world(&self, _body_of: &[u32]) -> Option<()> {
        None
    }

    fn detect_collisions(
        _world: &(),
        _x: &[VecD<2>],
        _thickness: f64,
        _k_n: f64,
        _k_tau: f64,
    ) -> Vec<WeakConstraint<2>> {
        Vec::new()
    }
}

/// Closest point on triangle (a, b, c) to p, returned as barycentric
/// coordinates and the point itself.
pub fn closest_point_triangle(
    p: &VecD<3>,
    a: &VecD<3>,
    b: &VecD<3>,
    c: &VecD<3>,
) -> ([f64; 3], VecD<3>) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ([1.0, 0.0, 0.0], *a);
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return ([0.0, 1.0, 0.0], *b);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return ([1.0 - v, v, 0.0], a + ab * v);
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return ([0.0, 0.0, 1.0], *c);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return ([1.0 - w, 0.0, w], a + ac * w);
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return ([0.0, 1.0 - w, w], b + (c - b) * w);
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    ([1.0 - v - w, v, w], a + ab * v + ac * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::box_grid_3d;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    #[test]
    fn constraint_value_cases() {
        let x = vec![
            VecD::<3>::new(1.0, 0.0, 0.0),
            VecD::<3>::new(0.0, 2.0, 0.0),
            VecD::<3>::new(0.0, 0.0, 4.0),
        ];
        // Same interpolated point on both sides.
        let wc = WeakConstraint::<3> {
            side0: vec![(0, 0.5), (1, 0.5)],
            side1: vec![(0, 0.5), (1, 0.5)],
            stiffness: Stiffness::Isotropic(1.0),
            kind: ConstraintKind::Static,
        };
        assert_relative_eq!(wc.value(&x), VecD::<3>::zeros());
        assert_eq!(wc.energy(&x), 0.0);

        let wc = WeakConstraint::node_pair(0, 1, Stiffness::Isotropic(1.0));
        assert_relative_eq!(wc.value(&x), x[0] - x[1]);

        // Point vs midpoint of two nodes.
        let wc = WeakConstraint::<3> {
            side0: vec![(0, 1.0)],
            side1: vec![(1, 0.5), (2, 0.5)],
            stiffness: Stiffness::Isotropic(1.0),
            kind: ConstraintKind::Static,
        };
        assert_relative_eq!(wc.value(&x), x[0] - (x[1] + x[2]) * 0.5);
    }

    #[test]
    fn isotropic_spring_forces() {
        let k = 3.0;
        let x = vec![VecD::<3>::new(1.0, 1.0, 0.0), VecD::<3>::new(0.0, 0.0, 0.0)];
        let wc = WeakConstraint::node_pair(0, 1, Stiffness::Isotropic(k));
        let f0 = wc.force_on(&x, 0);
        let f1 = wc.force_on(&x, 1);
        assert_relative_eq!(f0, -(x[0] - x[1]) * k, epsilon = 1e-14);
        assert_relative_eq!(f0 + f1, VecD::<3>::zeros(), epsilon = 1e-14);
    }

    #[test]
    fn tangential_gap_costs_nothing_when_k_tau_zero() {
        let n = Vector3::z();
        let stiff = Stiffness::frame(1e8, 0.0, n).unwrap();
        // Offset purely tangential to n.
        let x = vec![VecD::<3>::new(0.7, -0.3, 0.0), VecD::<3>::zeros()];
        let wc = WeakConstraint::node_pair(0, 1, stiff);
        assert_relative_eq!(wc.energy(&x), 0.0, epsilon = 1e-20);
        assert_relative_eq!(wc.force_on(&x, 0), VecD::<3>::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn stiffness_eigenvalues() {
        let k = 2.5;
        let iso = Stiffness::<3>::Isotropic(k);
        assert_relative_eq!(iso.matrix(), MatD::<3>::identity() * k);

        let aniso = Stiffness::frame(4.0, 1.5, Vector3::new(1.0, 2.0, -0.5)).unwrap();
        let m = aniso.matrix();
        let mut eig: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(eig[0], 1.5, max_relative = 1e-12);
        assert_relative_eq!(eig[1], 1.5, max_relative = 1e-12);
        assert_relative_eq!(eig[2], 4.0, max_relative = 1e-12);

        // k_n = k_tau degenerates to the isotropic matrix.
        let same = Stiffness::frame(2.0, 2.0, Vector3::x()).unwrap();
        assert_relative_eq!(same.matrix(), MatD::<3>::identity() * 2.0, epsilon = 1e-14);

        let e1 = Stiffness::frame(3.0, 0.0, Vector3::x()).unwrap().matrix();
        let mut expect = MatD::<3>::zeros();
        expect[(0, 0)] = 3.0;
        assert_relative_eq!(e1, expect, epsilon = 1e-14);

        assert!(matches!(
            Stiffness::<3>::frame(1.0, 0.0, Vector3::zeros()),
            Err(Error::ZeroNormal)
        ));
    }

    #[test]
    fn closest_point_cases() {
        let a = Vector3::new(0.0, 0.0, 0.0);
        let b = Vector3::new(1.0, 0.0, 0.0);
        let c = Vector3::new(0.0, 1.0, 0.0);
        // Interior projection.
        let p = Vector3::new(0.25, 0.25, 0.7);
        let (bary, q) = closest_point_triangle(&p, &a, &b, &c);
        assert_relative_eq!(q, Vector3::new(0.25, 0.25, 0.0), epsilon = 1e-14);
        assert_relative_eq!(bary[0], 0.5, epsilon = 1e-14);
        // Vertex region.
        let p = Vector3::new(2.0, -1.0, 0.3);
        let (bary, q) = closest_point_triangle(&p, &a, &b, &c);
        assert_eq!(bary, [0.0, 1.0, 0.0]);
        assert_relative_eq!(q, b);
        // Edge region.
        let p = Vector3::new(0.5, -1.0, 0.0);
        let (bary, q) = closest_point_triangle(&p, &a, &b, &c);
        assert_relative_eq!(q, Vector3::new(0.5, 0.0, 0.0), epsilon = 1e-14);
        assert_relative_eq!(bary[1], 0.5, epsilon = 1e-14);
    }

    fn two_box_world() -> (SimMesh<3>, Vec<u32>, Vec<VecD<3>>, usize) {
        // Two unit boxes along x with a configurable gap applied by the
        // caller via positions; returns rest with gap 0.5.
        let (mut v1, e1) = box_grid_3d([2, 2, 2], VecD::<3>::zeros(), VecD::<3>::new(1.0, 1.0, 1.0));
        let (v2, e2) = box_grid_3d(
            [2, 2, 2],
            VecD::<3>::new(1.5, 0.0, 0.0),
            VecD::<3>::new(1.0, 1.0, 1.0),
        );
        let off = v1.len();
        let mut elements: Vec<Vec<usize>> = e1;
        elements.extend(
            e2.iter()
                .map(|t| t.iter().map(|&i| i + off).collect::<Vec<_>>()),
        );
        v1.extend(v2);
        let body: Vec<u32> = (0..v1.len()).map(|i| (i >= off) as u32).collect();
        let (mesh, _) = SimMesh::<3>::build(v1.clone(), &elements, 1.0).unwrap();
        (mesh, body, v1, off)
    }

    #[test]
    fn separated_bodies_emit_nothing() {
        let (mesh, body, x, _) = two_box_world();
        let world = CollisionWorld::new(&mesh, &body);
        assert!(world.detect(&x, 0.1, 1e8, 0.0).is_empty());
    }

    #[test]
    fn near_contact_emits_sorted_constraints() {
        let (mesh, body, mut x, off) = two_box_world();
        // Move the second body to leave a 0.05 gap.
        for p in &mut x[off..] {
            p.x -= 0.45;
        }
        let world = CollisionWorld::new(&mesh, &body);
        let found = world.detect(&x, 0.1, 1e8, 0.0);
        assert!(!found.is_empty());
        for wc in &found {
            wc.validate().unwrap();
            assert_eq!(wc.kind, ConstraintKind::Dynamic);
            // Closer than thickness by construction.
            assert!(wc.value(&x).norm() <= 0.1 + 1e-12);
        }
        // Deterministic ordering by (vertex, triangle) implies sorted side0.
        let ids: Vec<u32> = found.iter().map(|w| w.side0[0].0).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn vertex_on_triangle_vertex_gets_corner_barycentrics() {
        let (mesh, body, mut x, off) = two_box_world();
        for p in &mut x[off..] {
            p.x -= 0.5; // exact face contact
        }
        let world = CollisionWorld::new(&mesh, &body);
        let found = world.detect(&x, 0.01, 1e8, 0.0);
        // A vertex of body 0 coincides with vertices of body 1 triangles;
        // at least one hit must put all weight on a single triangle corner.
        assert!(found.iter().any(|wc| {
            wc.side1.iter().any(|&(_, w)| (w - 1.0).abs() < 1e-12)
        }));
    }
}
