//! Scene descriptions: mesh + material + scripted boundaries + solver
//! settings, and a registry of built-in benchmark scenes.

use crate::constraints::{Stiffness, WeakConstraint};
use crate::materials::{Material, MaterialModel};
use crate::math::{MatD, MatOps, VecD};
use crate::mesh::{box_grid_3d, rect_grid_2d, SimMesh};
use crate::pbng::{SolverConfig, TimeIntegration};
use crate::state::SimState;
use crate::{Error, Result};

/// Selects a node set against the reference configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeSelector {
    /// Nodes within `tol` of the minimum coordinate along `axis`.
    AxisMin { axis: usize, tol: f64 },
    /// Nodes within `tol` of the maximum coordinate along `axis`.
    AxisMax { axis: usize, tol: f64 },
    Explicit(Vec<u32>),
}

impl NodeSelector {
    pub fn resolve<const D: usize>(&self, rest: &[VecD<D>]) -> Vec<u32> {
        match self {
            NodeSelector::Explicit(nodes) => nodes.clone(),
            NodeSelector::AxisMin { axis, tol } => {
                let lo = rest.iter().map(|p| p[*axis]).fold(f64::INFINITY, f64::min);
                rest.iter()
                    .enumerate()
                    .filter(|(_, p)| p[*axis] <= lo + *tol)
                    .map(|(i, _)| i as u32)
                    .collect()
            }
            NodeSelector::AxisMax { axis, tol } => {
                let hi = rest
                    .iter()
                    .map(|p| p[*axis])
                    .fold(f64::NEG_INFINITY, f64::max);
                rest.iter()
                    .enumerate()
                    .filter(|(_, p)| p[*axis] >= hi - *tol)
                    .map(|(i, _)| i as u32)
                    .collect()
            }
        }
    }
}

/// Time-varying Dirichlet target for a node set.
#[derive(Debug, Clone, PartialEq)]
pub enum DirichletScript<const D: usize> {
    /// Hold the reference position.
    Clamp,
    /// Move at constant velocity from the reference position.
    Translate { velocity: VecD<D> },
    /// Jump to `rest + displacement` for any t > 0.
    Offset { displacement: VecD<D> },
    /// Rotate about an axis through `origin` at `rate` rad/s while
    /// translating along the axis at `axial_velocity`.
    Twist {
        origin: VecD<D>,
        axis: VecD<D>,
        rate: f64,
        axial_velocity: f64,
    },
}

impl<const D: usize> DirichletScript<D>
where
    MatD<D>: MatOps<D>,
{
    pub fn target(&self, rest: VecD<D>, t: f64) -> VecD<D> {
        match self {
            DirichletScript::Clamp => rest,
            DirichletScript::Translate { velocity } => rest + velocity * t,
            DirichletScript::Offset { displacement } => {
                if t > 0.0 {
                    rest + displacement
                } else {
                    rest
                }
            }
            DirichletScript::Twist {
                origin,
                axis,
                rate,
                axial_velocity,
            } => {
                let rot = <MatD<D> as MatOps<D>>::rotation(axis, rate * t);
                let unit = axis / axis.norm();
                origin + rot * (rest - origin) + unit * (axial_velocity * t)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryCondition<const D: usize> {
    pub selector: NodeSelector,
    pub script: DirichletScript<D>,
}

/// Collision detection settings; `None` on a scene disables detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionConfig {
    pub thickness: f64,
    pub k_n: f64,
    pub k_tau: f64,
}

#[derive(Debug, Clone)]
pub struct Scene<const D: usize> {
    pub name: String,
    pub mesh: SimMesh<D>,
    pub mass: Vec<f64>,
    pub material: Material,
    pub density: f64,
    pub boundary: Vec<BoundaryCondition<D>>,
    pub static_constraints: Vec<WeakConstraint<D>>,
    /// Per-vertex body id, used by collision detection.
    pub body_of: Vec<u32>,
    pub collision: Option<CollisionConfig>,
    pub frames: usize,
    pub solver: SolverConfig<D>,
}

impl<const D: usize> Scene<D>
where
    MatD<D>: MatOps<D>,
{
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.frames == 0 {
            return Err(Error::InvalidScene {
                msg: "scene must have at least one frame".into(),
            });
        }
        for (k, bc) in self.boundary.iter().enumerate() {
            let nodes = bc.selector.resolve(self.mesh.vertices());
            if nodes.is_empty() {
                return Err(Error::InvalidScene {
                    msg: format!("boundary condition {k} selects no nodes"),
                });
            }
            if let Some(&bad) = nodes
                .iter()
                .find(|&&i| i as usize >= self.mesh.num_vertices())
            {
                return Err(Error::InvalidScene {
                    msg: format!("boundary condition {k} references node {bad} out of range"),
                });
            }
        }
        for wc in &self.static_constraints {
            wc.validate()?;
        }
        if self.body_of.len() != self.mesh.num_vertices() {
            return Err(Error::InvalidScene {
                msg: "body table length must match vertex count".into(),
            });
        }
        if let Some(c) = &self.collision {
            if !(c.thickness > 0.0) {
                return Err(Error::InvalidScene {
                    msg: format!("collision thickness must be positive, got {}", c.thickness),
                });
            }
        }
        Ok(())
    }

    /// Rest state with Dirichlet flags resolved and targets at t = 0.
    pub fn initial_state(&self) -> Result<SimState<D>> {
        let mut state = SimState::at_rest(self.mesh.vertices(), self.mass.clone());
        for bc in &self.boundary {
            for i in bc.selector.resolve(self.mesh.vertices()) {
                state.dirichlet[i as usize] = true;
            }
        }
        self.set_targets(&mut state, 0.0);
        state.apply_dirichlet_targets();
        if self.solver.integration == TimeIntegration::BackwardEuler {
            state.check_dynamic_masses()?;
        }
        Ok(state)
    }

    /// Evaluate all boundary scripts at time `t`. Later records win on
    /// overlapping node sets.
    pub fn set_targets(&self, state: &mut SimState<D>, t: f64) {
        for bc in &self.boundary {
            for i in bc.selector.resolve(self.mesh.vertices()) {
                let i = i as usize;
                state.target[i] = bc.script.target(self.mesh.vertex(i), t);
            }
        }
    }

    /// Longest bounding-box edge of the rest configuration.
    pub fn extent(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in self.mesh.vertices() {
            for k in 0..D {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (0..D).map(|k| hi[k] - lo[k]).fold(0.0, f64::max)
    }
}

/// Helper for composing multi-body meshes.
struct MultiBody<const D: usize> {
    vertices: Vec<VecD<D>>,
    elements: Vec<Vec<usize>>,
    body_of: Vec<u32>,
    next_body: u32,
}

impl<const D: usize> MultiBody<D> {
    fn new() -> Self {
        Self {
            vertices: Vec::new(),
            elements: Vec::new(),
            body_of: Vec::new(),
            next_body: 0,
        }
    }

    /// Append a body; returns its vertex range.
    fn add(&mut self, vertices: Vec<VecD<D>>, elements: Vec<Vec<usize>>) -> std::ops::Range<usize> {
        let off = self.vertices.len();
        self.body_of
            .extend(std::iter::repeat(self.next_body).take(vertices.len()));
        self.next_body += 1;
        self.vertices.extend(vertices);
        self.elements.extend(
            elements
                .into_iter()
                .map(|e| e.into_iter().map(|i| i + off).collect()),
        );
        off..self.vertices.len()
    }
}

fn select_in_range<const D: usize>(
    vertices: &[VecD<D>],
    range: std::ops::Range<usize>,
    axis: usize,
    max_side: bool,
    tol: f64,
) -> Vec<u32> {
    let coords = vertices[range.clone()].iter().map(|p| p[axis]);
    let bound = if max_side {
        coords.fold(f64::NEG_INFINITY, f64::max)
    } else {
        coords.fold(f64::INFINITY, f64::min)
    };
    range
        .filter(|&i| {
            let c = vertices[i][axis];
            if max_side {
                c >= bound - tol
            } else {
                c <= bound + tol
            }
        })
        .map(|i| i as u32)
        .collect()
}

/// Names of the built-in scenes, in registry order.
pub const BUILTIN_SCENES: [&str; 7] = [
    "stretch_block",
    "bar_under_gravity",
    "two_blocks_hanging",
    "two_blocks_colliding",
    "clamped_block_dynamic",
    "square_2d_stretch",
    "objects_dropping",
];

/// A scene of either dimension.
pub enum SceneAny {
    D2(Scene<2>),
    D3(Scene<3>),
}

impl SceneAny {
    pub fn name(&self) -> &str {
        match self {
            SceneAny::D2(s) => &s.name,
            SceneAny::D3(s) => &s.name,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SceneAny::D2(s) => s.validate(),
            SceneAny::D3(s) => s.validate(),
        }
    }
}

/// Build a built-in scene at its default resolution.
pub fn builtin(name: &str) -> Result<SceneAny> {
    builtin_with_resolution(name, None)
}

/// Build a built-in scene; `resolution` overrides the default cell count
/// of its largest body (the others scale with it).
pub fn builtin_with_resolution(name: &str, resolution: Option<usize>) -> Result<SceneAny> {
    match name {
        "stretch_block" => Ok(SceneAny::D3(stretch_block(resolution.unwrap_or(15)))),
        "bar_under_gravity" => Ok(SceneAny::D3(bar_under_gravity(resolution.unwrap_or(8)))),
        "two_blocks_hanging" => Ok(SceneAny::D3(two_blocks_hanging(resolution.unwrap_or(4)))),
        "two_blocks_colliding" => Ok(SceneAny::D3(two_blocks_colliding(resolution.unwrap_or(4)))),
        "clamped_block_dynamic" => {
            Ok(SceneAny::D3(clamped_block_dynamic(resolution.unwrap_or(15))))
        }
        "square_2d_stretch" => Ok(SceneAny::D2(square_2d_stretch(resolution.unwrap_or(16)))),
        "objects_dropping" => Ok(SceneAny::D3(objects_dropping(resolution.unwrap_or(3)))),
        _ => Err(Error::UnknownScene {
            name: name.to_string(),
            available: BUILTIN_SCENES.join(", "),
        }),
    }
}

fn single_body_scene_3d(
    name: &str,
    cells: [usize; 3],
    size: VecD<3>,
    material: Material,
    density: f64,
) -> Scene<3> {
    let (vertices, elements) = box_grid_3d(cells, VecD::zeros(), size);
    let (mesh, mass) = SimMesh::<3>::build(vertices, &elements, density).expect("valid grid");
    let n = mesh.num_vertices();
    Scene {
        name: name.to_string(),
        mesh,
        mass,
        material,
        density,
        boundary: Vec::new(),
        static_constraints: Vec::new(),
        body_of: vec![0; n],
        collision: None,
        frames: 30,
        solver: SolverConfig::default(),
    }
}

/// Block clamped at both ends, stretched and twisted in opposite
/// directions. Quasistatic, no gravity.
fn stretch_block(cells: usize) -> Scene<3> {
    let material = Material::from_young_poisson(MaterialModel::Corotated, 1e5, 0.3).unwrap();
    let mut scene = single_body_scene_3d(
        "stretch_block",
        [cells, cells, cells],
        VecD::<3>::new(1.0, 1.0, 1.0),
        material,
        10.0,
    );
    let tol = 0.25 / cells as f64;
    let axis = VecD::<3>::x();
    // Total relative stretch rate 0.25/s, relative twist rate pi/2 per
    // second, split evenly across the two clamped ends.
    let stretch = 0.25 / 2.0;
    let twist = std::f64::consts::FRAC_PI_2 / 2.0;
    scene.boundary = vec![
        BoundaryCondition {
            selector: NodeSelector::AxisMin { axis: 0, tol },
            script: DirichletScript::Twist {
                origin: VecD::<3>::new(0.0, 0.5, 0.5),
                axis,
                rate: -twist,
                axial_velocity: -stretch,
            },
        },
        BoundaryCondition {
            selector: NodeSelector::AxisMax { axis: 0, tol },
            script: DirichletScript::Twist {
                origin: VecD::<3>::new(1.0, 0.5, 0.5),
                axis,
                rate: twist,
                axial_velocity: stretch,
            },
        },
    ];
    scene
}

/// Cantilever bar sagging under gravity. Quasistatic.
fn bar_under_gravity(cells_x: usize) -> Scene<3> {
    let material = Material::from_young_poisson(MaterialModel::Corotated, 1000.0, 0.3).unwrap();
    let cells_s = (cells_x / 2).max(1);
    let mut scene = single_body_scene_3d(
        "bar_under_gravity",
        [cells_x, cells_s, cells_s],
        VecD::<3>::new(0.5, 0.25, 0.25),
        material,
        10.0,
    );
    let tol = 0.1 * (0.5 / cells_x as f64);
    scene.boundary = vec![BoundaryCondition {
        selector: NodeSelector::AxisMin { axis: 0, tol },
        script: DirichletScript::Clamp,
    }];
    scene.solver.gravity = VecD::<3>::new(0.0, -9.8, 0.0);
    scene.solver.iterations = 100;
    scene
}

/// Two blocks bound by stiff springs; the upper block hangs from its
/// clamped top face, the lower one hangs from the springs. Quasistatic.
fn two_blocks_hanging(cells: usize) -> Scene<3> {
    let size = VecD::<3>::new(0.5, 0.5, 0.5);
    let gap = 0.1;
    let mut builder = MultiBody::<3>::new();
    let (v_top, e_top) = box_grid_3d(
        [cells, cells, cells],
        VecD::<3>::new(0.0, size.y + gap, 0.0),
        size,
    );
    let top = builder.add(v_top, e_top);
    let (v_bot, e_bot) = box_grid_3d([cells, cells, cells], VecD::zeros(), size);
    let bottom = builder.add(v_bot, e_bot);

    let tol = 0.1 * size.y / cells as f64;
    let top_clamp = select_in_range(&builder.vertices, top.clone(), 1, true, tol);
    let top_bottom_face = select_in_range(&builder.vertices, top.clone(), 1, false, tol);
    let bottom_top_face = select_in_range(&builder.vertices, bottom.clone(), 1, true, tol);

    // Pair facing nodes by (x, z) grid position.
    let mut springs = Vec::new();
    for &a in &top_bottom_face {
        let pa = builder.vertices[a as usize];
        let b = bottom_top_face
            .iter()
            .copied()
            .min_by(|&i, &j| {
                let di = (builder.vertices[i as usize] - pa).xz_norm();
                let dj = (builder.vertices[j as usize] - pa).xz_norm();
                di.partial_cmp(&dj).unwrap()
            })
            .expect("non-empty face");
        springs.push(WeakConstraint::node_pair(a, b, Stiffness::Isotropic(1e8)));
    }

    let material = Material::from_young_poisson(MaterialModel::Corotated, 1000.0, 0.3).unwrap();
    let density = 10.0;
    let (mesh, mass) =
        SimMesh::<3>::build(builder.vertices, &builder.elements, density).expect("valid grid");
    let mut solver = SolverConfig::default();
    solver.gravity = VecD::<3>::new(0.0, -9.8, 0.0);
    solver.iterations = 100;
    Scene {
        name: "two_blocks_hanging".to_string(),
        mesh,
        mass,
        material,
        density,
        boundary: vec![BoundaryCondition {
            selector: NodeSelector::Explicit(top_clamp),
            script: DirichletScript::Clamp,
        }],
        static_constraints: springs,
        body_of: builder.body_of,
        collision: None,
        frames: 30,
        solver,
    }
}

/// Two blocks driven into each other, resolved by dynamically generated
/// weak constraints. Backward Euler.
fn two_blocks_colliding(cells: usize) -> Scene<3> {
    let size = VecD::<3>::new(0.4, 0.4, 0.4);
    let gap = 0.3;
    let speed = 0.5;
    let mut builder = MultiBody::<3>::new();
    let (v_a, e_a) = box_grid_3d([cells, cells, cells], VecD::zeros(), size);
    let a = builder.add(v_a, e_a);
    let (v_b, e_b) = box_grid_3d(
        [cells, cells, cells],
        VecD::<3>::new(size.x + gap, 0.0, 0.0),
        size,
    );
    let b = builder.add(v_b, e_b);

    let tol = 0.1 * size.x / cells as f64;
    let a_clamp = select_in_range(&builder.vertices, a.clone(), 0, false, tol);
    let b_clamp = select_in_range(&builder.vertices, b.clone(), 0, true, tol);

    let material = Material::from_young_poisson(MaterialModel::Corotated, 1000.0, 0.3).unwrap();
    let density = 10.0;
    let cell = size.x / cells as f64;
    let (mesh, mass) =
        SimMesh::<3>::build(builder.vertices, &builder.elements, density).expect("valid grid");
    let mut solver = SolverConfig::default();
    solver.integration = TimeIntegration::BackwardEuler;
    solver.substeps = 17;
    solver.iterations = 8;
    Scene {
        name: "two_blocks_colliding".to_string(),
        mesh,
        mass,
        material,
        density,
        boundary: vec![
            BoundaryCondition {
                selector: NodeSelector::Explicit(a_clamp),
                script: DirichletScript::Translate {
                    velocity: VecD::<3>::new(speed, 0.0, 0.0),
                },
            },
            BoundaryCondition {
                selector: NodeSelector::Explicit(b_clamp),
                script: DirichletScript::Translate {
                    velocity: VecD::<3>::new(-speed, 0.0, 0.0),
                },
            },
        ],
        static_constraints: Vec::new(),
        body_of: builder.body_of,
        collision: Some(CollisionConfig {
            thickness: 0.5 * cell,
            k_n: 1e8,
            k_tau: 0.0,
        }),
        frames: 20,
        solver,
    }
}

/// Block clamped on one face, dropping under gravity. Backward Euler with
/// one substep per frame.
fn clamped_block_dynamic(cells: usize) -> Scene<3> {
    let material = Material::from_young_poisson(MaterialModel::Corotated, 1000.0, 0.3).unwrap();
    let mut scene = single_body_scene_3d(
        "clamped_block_dynamic",
        [cells, cells, cells],
        VecD::<3>::new(1.0, 1.0, 1.0),
        material,
        10.0,
    );
    let tol = 0.25 / cells as f64;
    scene.boundary = vec![BoundaryCondition {
        selector: NodeSelector::AxisMin { axis: 0, tol },
        script: DirichletScript::Clamp,
    }];
    scene.solver.integration = TimeIntegration::BackwardEuler;
    scene.solver.gravity = VecD::<3>::new(0.0, -9.8, 0.0);
    scene.solver.iterations = 200;
    scene.solver.substeps = 2;
    scene
}

/// 2D square with both side columns displaced outward and clamped.
fn square_2d_stretch(cells: usize) -> Scene<2> {
    let material = Material::from_young_poisson(MaterialModel::Corotated, 1e5, 0.3).unwrap();
    let density = 10.0;
    let (vertices, elements) =
        rect_grid_2d([cells, cells], VecD::zeros(), VecD::<2>::new(1.0, 1.0));
    let (mesh, mass) = SimMesh::<2>::build(vertices, &elements, density).expect("valid grid");
    let n = mesh.num_vertices();
    let tol = 0.25 / cells as f64;
    let stretch = 0.3;
    let mut solver = SolverConfig::<2>::default();
    solver.iterations = 100;
    Scene {
        name: "square_2d_stretch".to_string(),
        mesh,
        mass,
        material,
        density,
        boundary: vec![
            BoundaryCondition {
                selector: NodeSelector::AxisMin { axis: 0, tol },
                script: DirichletScript::Offset {
                    displacement: VecD::<2>::new(-stretch, 0.0),
                },
            },
            BoundaryCondition {
                selector: NodeSelector::AxisMax { axis: 0, tol },
                script: DirichletScript::Offset {
                    displacement: VecD::<2>::new(stretch, 0.0),
                },
            },
        ],
        static_constraints: Vec::new(),
        body_of: vec![0; n],
        collision: None,
        frames: 5,
        solver,
    }
}

/// A few soft cubes dropping onto a clamped slab. Backward Euler with
/// collision constraints.
fn objects_dropping(cube_cells: usize) -> Scene<3> {
    let mut builder = MultiBody::<3>::new();
    let slab_cells = [2 * cube_cells, cube_cells.div_ceil(2).max(1), 2 * cube_cells];
    let (v_slab, e_slab) = box_grid_3d(slab_cells, VecD::zeros(), VecD::<3>::new(1.0, 0.15, 1.0));
    let slab = builder.add(v_slab, e_slab);

    let cube = VecD::<3>::new(0.25, 0.25, 0.25);
    let (v1, e1) = box_grid_3d(
        [cube_cells; 3],
        VecD::<3>::new(0.2, 0.35, 0.25),
        cube,
    );
    builder.add(v1, e1);
    let (v2, e2) = box_grid_3d(
        [cube_cells; 3],
        VecD::<3>::new(0.55, 0.62, 0.5),
        cube,
    );
    builder.add(v2, e2);

    let slab_clamp = select_in_range(&builder.vertices, slab, 1, false, 0.01);

    let material = Material::from_young_poisson(MaterialModel::Corotated, 3000.0, 0.3).unwrap();
    let density = 10.0;
    let cell = cube.x / cube_cells as f64;
    let (mesh, mass) =
        SimMesh::<3>::build(builder.vertices, &builder.elements, density).expect("valid grid");
    let mut solver = SolverConfig::default();
    solver.integration = TimeIntegration::BackwardEuler;
    solver.substeps = 17;
    solver.iterations = 8;
    solver.gravity = VecD::<3>::new(0.0, -9.8, 0.0);
    Scene {
        name: "objects_dropping".to_string(),
        mesh,
        mass,
        material,
        density,
        boundary: vec![BoundaryCondition {
            selector: NodeSelector::Explicit(slab_clamp),
            script: DirichletScript::Clamp,
        }],
        static_constraints: Vec::new(),
        body_of: builder.body_of,
        collision: Some(CollisionConfig {
            thickness: 0.5 * cell,
            k_n: 1e8,
            k_tau: 0.0,
        }),
        frames: 30,
        solver,
    }
}

trait XzNorm {
    fn xz_norm(&self) -> f64;
}

impl XzNorm for VecD<3> {
    fn xz_norm(&self) -> f64 {
        (self.x * self.x + self.z * self.z).sqrt()
    }
}
