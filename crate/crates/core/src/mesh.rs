//! Simplex mesh storage and reference-configuration precomputation.
//!
//! A mesh holds the rest positions, the (constant) shape-function gradients
//! of each linear simplex element, and the rest measures. Deformation
//! gradients are evaluated per element from any nodal position vector as
//! `F = sum_j y_j (dN_j/dX)^T`.

use crate::math::{MatD, MatOps, VecD};
use crate::{Error, Result};

/// Immutable simplex mesh with precomputed reference data.
///
/// Shareable across worker threads; all solver sweeps take it by `&`.
#[derive(Debug, Clone)]
pub struct SimMesh<const D: usize> {
    vertices: Vec<VecD<D>>,
    /// Element connectivity, flattened with stride `D + 1`.
    elements: Vec<u32>,
    /// Shape-function gradients, flattened with stride `D + 1`.
    elem_grad: Vec<VecD<D>>,
    /// Rest volume (3D) or area (2D) per element.
    elem_measure: Vec<f64>,
    /// CSR node -> (element, local slot) incidence, ascending element order.
    incidence_offsets: Vec<u32>,
    incidence: Vec<(u32, u8)>,
}

impl<const D: usize> SimMesh<D>
where
    MatD<D>: MatOps<D>,
{
    /// Build a mesh from rest positions and connectivity, rejecting
    /// degenerate or inverted rest elements. Also returns the lumped nodal
    /// masses for material density `density`: each element spreads
    /// `density * measure` equally over its `D + 1` vertices.
    pub fn build(
        vertices: Vec<VecD<D>>,
        elements: &[Vec<usize>],
        density: f64,
    ) -> Result<(Self, Vec<f64>)> {
        if elements.is_empty() {
            return Err(Error::NoElements);
        }
        let n = vertices.len();
        let mut flat = Vec::with_capacity(elements.len() * (D + 1));
        let mut grads = Vec::with_capacity(elements.len() * (D + 1));
        let mut measures = Vec::with_capacity(elements.len());
        let mut mass = vec![0.0; n];

        for (e, conn) in elements.iter().enumerate() {
            assert_eq!(conn.len(), D + 1, "element {e} must have {} vertices", D + 1);
            for (a, &i) in conn.iter().enumerate() {
                if i >= n {
                    return Err(Error::VertexOutOfRange {
                        element: e,
                        vertex: i,
                        num_vertices: n,
                    });
                }
                if conn[..a].contains(&i) {
                    return Err(Error::RepeatedVertex { element: e, vertex: i });
                }
            }

            // Shape matrix: edge vectors from vertex 0.
            let x0 = vertices[conn[0]];
            let dm = MatD::<D>::from_fn(|r, c| (vertices[conn[c + 1]] - x0)[r]);
            let det = dm.det();
            let factorial = (1..=D).product::<usize>() as f64;
            let measure = det / factorial;
            let max_edge = (1..=D)
                .map(|j| (vertices[conn[j]] - x0).norm())
                .fold(0.0, f64::max);
            if !(measure > 1e-14 * max_edge.powi(D as i32)) {
                return Err(Error::DegenerateElement {
                    element: e,
                    measure,
                });
            }

            // dN_j/dX for j >= 1 is row j-1 of Dm^-1; dN_0 balances them.
            let dm_inv = dm.inv().expect("checked nonsingular");
            let mut g = [VecD::<D>::zeros(); 4];
            let mut g0 = VecD::<D>::zeros();
            for j in 1..=D {
                g[j] = dm_inv.row(j - 1).transpose();
                g0 -= g[j];
            }
            g[0] = g0;

            flat.extend(conn.iter().map(|&i| i as u32));
            grads.extend_from_slice(&g[..=D]);
            measures.push(measure);
            for &i in conn {
                mass[i] += density * measure / (D + 1) as f64;
            }
        }

        // Node -> element incidence in ascending element order.
        let mut counts = vec![0u32; n];
        for &i in &flat {
            counts[i as usize] += 1;
        }
        let mut offsets = vec![0u32; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + counts[i];
        }
        let mut cursor = offsets.clone();
        let mut incidence = vec![(0u32, 0u8); flat.len()];
        for e in 0..measures.len() {
            for a in 0..=D {
                let i = flat[e * (D + 1) + a] as usize;
                incidence[cursor[i] as usize] = (e as u32, a as u8);
                cursor[i] += 1;
            }
        }

        Ok((
            Self {
                vertices,
                elements: flat,
                elem_grad: grads,
                elem_measure: measures,
                incidence_offsets: offsets,
                incidence,
            },
            mass,
        ))
    }

    /// Deformation gradient of element `e` under nodal positions `y`.
    pub fn deformation_gradient(&self, y: &[VecD<D>], e: usize) -> MatD<D> {
        let conn = self.element(e);
        let grads = self.grads(e);
        let mut f = MatD::<D>::zeros();
        for (a, &i) in conn.iter().enumerate() {
            f += y[i as usize] * grads[a].transpose();
        }
        f
    }
}

impl<const D: usize> SimMesh<D> {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elem_measure.len()
    }

    pub fn vertices(&self) -> &[VecD<D>] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> VecD<D> {
        self.vertices[i]
    }

    /// Vertex indices of element `e` (length `D + 1`).
    pub fn element(&self, e: usize) -> &[u32] {
        &self.elements[e * (D + 1)..(e + 1) * (D + 1)]
    }

    /// Shape-function gradients of element `e` (length `D + 1`).
    pub fn grads(&self, e: usize) -> &[VecD<D>] {
        &self.elem_grad[e * (D + 1)..(e + 1) * (D + 1)]
    }

    pub fn measure(&self, e: usize) -> f64 {
        self.elem_measure[e]
    }

    pub fn total_measure(&self) -> f64 {
        self.elem_measure.iter().sum()
    }

    /// Elements incident to node `i` as (element, local slot), ascending.
    pub fn incident_elements(&self, i: usize) -> &[(u32, u8)] {
        let lo = self.incidence_offsets[i] as usize;
        let hi = self.incidence_offsets[i + 1] as usize;
        &self.incidence[lo..hi]
    }
}

/// Five-tetrahedra subdivision of a box grid with `cells = (nx, ny, nz)`
/// cells, alternating the split parity so faces of neighboring cubes match.
/// Returns vertices and connectivity suitable for [`SimMesh::build`].
pub fn box_grid_3d(
    cells: [usize; 3],
    origin: VecD<3>,
    size: VecD<3>,
) -> (Vec<VecD<3>>, Vec<Vec<usize>>) {
    let [nx, ny, nz] = cells;
    let node = |i: usize, j: usize, k: usize| (i * (ny + 1) + j) * (nz + 1) + k;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                vertices.push(VecD::<3>::new(
                    origin.x + size.x * i as f64 / nx as f64,
                    origin.y + size.y * j as f64 / ny as f64,
                    origin.z + size.z * k as f64 / nz as f64,
                ));
            }
        }
    }

    let mut elements = Vec::with_capacity(nx * ny * nz * 5);
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let c = |a: usize, b: usize, d: usize| node(i + a, j + b, k + d);
                // Corner tets sit on one parity class of cube corners, the
                // central tet on the other; mirrored in odd cells.
                let tets: [[usize; 4]; 5] = if (i + j + k) % 2 == 0 {
                    [
                        [c(1, 0, 0), c(0, 0, 0), c(1, 1, 0), c(1, 0, 1)],
                        [c(0, 1, 0), c(0, 0, 0), c(1, 1, 0), c(0, 1, 1)],
                        [c(0, 0, 1), c(0, 0, 0), c(1, 0, 1), c(0, 1, 1)],
                        [c(1, 1, 1), c(1, 1, 0), c(1, 0, 1), c(0, 1, 1)],
                        [c(0, 0, 0), c(1, 1, 0), c(1, 0, 1), c(0, 1, 1)],
                    ]
                } else {
                    [
                        [c(0, 0, 0), c(1, 0, 0), c(0, 1, 0), c(0, 0, 1)],
                        [c(1, 1, 0), c(1, 0, 0), c(0, 1, 0), c(1, 1, 1)],
                        [c(1, 0, 1), c(1, 0, 0), c(0, 0, 1), c(1, 1, 1)],
                        [c(0, 1, 1), c(0, 1, 0), c(0, 0, 1), c(1, 1, 1)],
                        [c(1, 0, 0), c(0, 1, 0), c(0, 0, 1), c(1, 1, 1)],
                    ]
                };
                for t in tets {
                    elements.push(orient_positive_3d(&vertices, t));
                }
            }
        }
    }
    (vertices, elements)
}

fn orient_positive_3d(vertices: &[VecD<3>], mut t: [usize; 4]) -> Vec<usize> {
    let dm = MatD::<3>::from_fn(|r, c| (vertices[t[c + 1]] - vertices[t[0]])[r]);
    if dm.det() < 0.0 {
        t.swap(2, 3);
    }
    t.to_vec()
}

/// Structured triangulation of a rectangle with alternating diagonals.
pub fn rect_grid_2d(
    cells: [usize; 2],
    origin: VecD<2>,
    size: VecD<2>,
) -> (Vec<VecD<2>>, Vec<Vec<usize>>) {
    let [nx, ny] = cells;
    let node = |i: usize, j: usize| i * (ny + 1) + j;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            vertices.push(VecD::<2>::new(
                origin.x + size.x * i as f64 / nx as f64,
                origin.y + size.y * j as f64 / ny as f64,
            ));
        }
    }
    let mut elements = Vec::with_capacity(nx * ny * 2);
    for i in 0..nx {
        for j in 0..ny {
            let (v00, v10, v01, v11) = (node(i, j), node(i + 1, j), node(i, j + 1), node(i + 1, j + 1));
            let tris: [[usize; 3]; 2] = if (i + j) % 2 == 0 {
                [[v00, v10, v11], [v00, v11, v01]]
            } else {
                [[v00, v10, v01], [v10, v11, v01]]
            };
            for t in tris {
                elements.push(orient_positive_2d(&vertices, t));
            }
        }
    }
    (vertices, elements)
}

fn orient_positive_2d(vertices: &[VecD<2>], mut t: [usize; 3]) -> Vec<usize> {
    let dm = MatD::<2>::from_fn(|r, c| (vertices[t[c + 1]] - vertices[t[0]])[r]);
    if MatOps::det(&dm) < 0.0 {
        t.swap(1, 2);
    }
    t.to_vec()
}
