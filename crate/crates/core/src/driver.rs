//! Time-stepping driver: runs a scene with a chosen solver, manages
//! collision detection and recoloring, and records residual/performance
//! logs.

use crate::coloring::{self, ColorPartition};
use crate::constraints::{Collidable, ConstraintIncidence, WeakConstraint};
use crate::math::{MatD, MatOps, VecD};
use crate::mesh::SimMesh;
use crate::newton::{self, NewtonConfig};
use crate::pbng::{self, Acceleration, TimeIntegration};
use crate::scene::Scene;
use crate::state::SimState;
use crate::system::{Dynamics, Problem};
use crate::xpbd::{self, ConstraintOrder, XpbdSystem};
use crate::{Error, Result};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Pbng,
    PbngChebyshev,
    PbngSor,
    Newton,
    Pbd,
    Xpbd,
    XpbdQs,
    XpbdQsFlipped,
}

impl SolverKind {
    pub const ALL: [SolverKind; 8] = [
        SolverKind::Pbng,
        SolverKind::PbngChebyshev,
        SolverKind::PbngSor,
        SolverKind::Newton,
        SolverKind::Pbd,
        SolverKind::Xpbd,
        SolverKind::XpbdQs,
        SolverKind::XpbdQsFlipped,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Pbng => "pbng",
            SolverKind::PbngChebyshev => "pbng-cheby",
            SolverKind::PbngSor => "pbng-sor",
            SolverKind::Newton => "newton",
            SolverKind::Pbd => "pbd",
            SolverKind::Xpbd => "xpbd",
            SolverKind::XpbdQs => "xpbd-qs",
            SolverKind::XpbdQsFlipped => "xpbd-qs-flipped",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == s)
    }
}

/// Per-run options layered over the scene's own solver settings.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub solver: SolverKind,
    pub iterations: Option<usize>,
    pub frames: Option<usize>,
    pub substeps: Option<usize>,
    /// CG cap per Newton iteration.
    pub cg_iterations: usize,
    pub newton_line_search: bool,
    /// Inner iterations per pseudo-step for the pseudo-time XPBD solvers.
    pub xpbd_inner_iterations: usize,
    pub out_dir: Option<PathBuf>,
    pub log_residual: bool,
}

impl RunOptions {
    pub fn new(solver: SolverKind) -> Self {
        Self {
            solver,
            iterations: None,
            frames: None,
            substeps: None,
            cg_iterations: 100,
            newton_line_search: true,
            xpbd_inner_iterations: 10,
            out_dir: None,
            log_residual: false,
        }
    }
}

/// One row of the residual log.
#[derive(Debug, Clone, Copy)]
pub struct ResidualRow {
    pub frame: usize,
    pub iteration: usize,
    pub wall_ms: f64,
    pub newton_residual: f64,
    pub secondary_residual: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct FrameReport {
    pub wall_ms: f64,
    pub iterations: usize,
    pub first_residual: f64,
    pub last_residual: f64,
    pub collision_constraints: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scene: String,
    pub solver: SolverKind,
    pub frames: Vec<FrameReport>,
    pub rows: Vec<ResidualRow>,
    pub node_colors: usize,
    pub constraint_colors: usize,
}

impl RunReport {
    /// Residual series of one frame (iteration-ordered).
    pub fn frame_residuals(&self, frame: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.frame == frame)
            .map(|r| r.newton_residual)
            .collect()
    }

    pub fn frame_secondary_residuals(&self, frame: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.frame == frame)
            .filter_map(|r| r.secondary_residual)
            .collect()
    }
}

struct Recorder {
    t0: Instant,
    rows: Vec<ResidualRow>,
    enabled: bool,
}

impl Recorder {
    fn push(&mut self, frame: usize, iteration: usize, residual: f64, secondary: Option<f64>) {
        if self.enabled {
            self.rows.push(ResidualRow {
                frame,
                iteration,
                wall_ms: self.t0.elapsed().as_secs_f64() * 1e3,
                newton_residual: residual,
                secondary_residual: secondary,
            });
        }
    }
}

/// Run a scene to completion, returning the report and the final state.
pub fn run<const D: usize>(
    scene: &Scene<D>,
    opts: &RunOptions,
) -> Result<(RunReport, SimState<D>)>
where
    MatD<D>: MatOps<D>,
    SimMesh<D>: Collidable<D>,
{
    scene.validate()?;
    let mut state = scene.initial_state()?;
    let frames = opts.frames.unwrap_or(scene.frames);
    let iterations = opts.iterations.unwrap_or(scene.solver.iterations);
    let substeps = opts.substeps.unwrap_or(scene.solver.substeps).max(1);
    let frame_dt = scene.solver.dt;
    let dynamic = scene.solver.integration == TimeIntegration::BackwardEuler;

    let mut constraints: Vec<WeakConstraint<D>> = scene.static_constraints.clone();
    let static_count = constraints.len();
    let world = scene
        .collision
        .as_ref()
        .and_then(|_| scene.mesh.build_collision_world(&scene.body_of));
    if scene.collision.is_some() && world.is_none() {
        return Err(Error::InvalidScene {
            msg: "collision detection requires a 3D scene".into(),
        });
    }

    let mut partition = coloring::color_nodes(&scene.mesh, &constraints);
    let baseline_colors = partition.num_colors();
    let node_colors = baseline_colors;
    let constraint_colors =
        coloring::color_constraints(&coloring::work_item_stencils(&scene.mesh, &constraints))
            .num_colors();
    let mut incidence = ConstraintIncidence::build(scene.mesh.num_vertices(), &constraints);

    let mut recorder = Recorder {
        t0: Instant::now(),
        rows: Vec::new(),
        enabled: opts.log_residual,
    };
    let mut reports = Vec::with_capacity(frames);

    // Constraint systems for PBD/XPBD solvers are rebuilt when the weak
    // constraint set changes (their item order is deterministic).
    let xpbd_order = match opts.solver {
        SolverKind::XpbdQsFlipped => ConstraintOrder::WeakThenElastic,
        _ => ConstraintOrder::ElasticThenWeak,
    };
    let pbd_mode = opts.solver == SolverKind::Pbd;

    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
        crate::io::write_scene(scene, &dir.join("scene.txt"))?;
    }

    for frame in 0..frames {
        let frame_start = Instant::now();
        let mut first_residual = f64::NAN;
        let mut last_residual = f64::NAN;
        let mut frame_iterations = 0usize;
        let t_frame_end = (frame + 1) as f64 * frame_dt;

        let refresh_collisions =
            |state: &SimState<D>,
             constraints: &mut Vec<WeakConstraint<D>>,
             partition: &mut ColorPartition,
             incidence: &mut ConstraintIncidence|
             -> usize {
                let Some(world) = &world else {
                    return 0;
                };
                let cfg = scene.collision.as_ref().expect("world implies config");
                let dynamic_constraints = <SimMesh<D> as Collidable<D>>::detect_collisions(
                    world,
                    &state.x,
                    cfg.thickness,
                    cfg.k_n,
                    cfg.k_tau,
                );
                let count = dynamic_constraints.len();
                constraints.truncate(static_count);
                constraints.extend(dynamic_constraints);
                *incidence = ConstraintIncidence::build(scene.mesh.num_vertices(), constraints);
                if partition.num_colors() > 2 * baseline_colors.max(4) {
                    *partition = coloring::color_nodes(&scene.mesh, constraints);
                } else {
                    coloring::incremental_recolor(partition, &scene.mesh, constraints, static_count);
                }
                debug_assert!(coloring::node_coloring_is_valid(
                    partition,
                    &scene.mesh,
                    constraints
                ));
                count
            };

        let mut collision_count = 0usize;

        if dynamic {
            let dt_sub = frame_dt / substeps as f64;
            for sub in 0..substeps {
                let t_sub = frame as f64 * frame_dt + (sub + 1) as f64 * dt_sub;
                scene.set_targets(&mut state, t_sub);
                collision_count =
                    refresh_collisions(&state, &mut constraints, &mut partition, &mut incidence);
                let log_this = sub + 1 == substeps;

                match opts.solver {
                    SolverKind::Pbng | SolverKind::PbngChebyshev | SolverKind::PbngSor => {
                        let parts = pbng::BackwardEulerParts {
                            mesh: &scene.mesh,
                            material: scene.material,
                            constraints: &constraints,
                            incidence: &incidence,
                            gravity: scene.solver.gravity,
                        };
                        let stats = pbng::backward_euler_step(
                            parts,
                            &mut state,
                            &partition,
                            dt_sub,
                            iterations,
                            acceleration_for(opts.solver, scene.solver.acceleration),
                            scene.solver.step_clamp,
                            |l, r| {
                                if log_this {
                                    recorder.push(frame, l, r, None);
                                }
                            },
                        )
                        .map_err(|e| with_frame(e, frame))?;
                        first_residual = stats.initial_residual;
                        last_residual = stats.final_residual;
                        frame_iterations += iterations;
                    }
                    SolverKind::Newton => {
                        let x_hat: Vec<VecD<D>> = state
                            .x
                            .iter()
                            .zip(&state.x_prev)
                            .map(|(xn, xp)| xn * 2.0 - xp)
                            .collect();
                        let x_n = state.x.clone();
                        let problem = Problem {
                            mesh: &scene.mesh,
                            material: scene.material,
                            constraints: &constraints,
                            incidence: &incidence,
                            gravity: scene.solver.gravity,
                            dynamics: Some(Dynamics {
                                dt: dt_sub,
                                x_hat: &x_hat,
                            }),
                        };
                        let cfg = NewtonConfig {
                            max_iterations: iterations,
                            cg_iterations: opts.cg_iterations,
                            line_search: opts.newton_line_search,
                            ..NewtonConfig::default()
                        };
                        let stats = newton::solve(&problem, &mut state, &cfg, |l, r| {
                            if log_this {
                                recorder.push(frame, l, r, None);
                            }
                        })
                        .map_err(|e| with_frame(e, frame))?;
                        for i in 0..state.x.len() {
                            state.v[i] = (state.x[i] - x_n[i]) / dt_sub;
                        }
                        state.x_prev = x_n;
                        first_residual = stats.initial_residual;
                        last_residual = stats.final_residual;
                        frame_iterations += stats.iterations;
                    }
                    SolverKind::Pbd | SolverKind::Xpbd => {
                        let mut system = XpbdSystem::build(
                            &scene.mesh,
                            scene.material,
                            &constraints,
                            xpbd_order,
                            pbd_mode,
                        )?;
                        // Residuals are measured against the same
                        // incremental objective the implicit solvers use.
                        let x_hat: Vec<VecD<D>> = state
                            .x
                            .iter()
                            .zip(state.v.iter())
                            .map(|(xn, v)| xn + v * dt_sub)
                            .collect();
                        let problem = Problem {
                            mesh: &scene.mesh,
                            material: scene.material,
                            constraints: &constraints,
                            incidence: &incidence,
                            gravity: scene.solver.gravity,
                            dynamics: Some(Dynamics {
                                dt: dt_sub,
                                x_hat: &x_hat,
                            }),
                        };
                        let mass = state.mass.clone();
                        let dirichlet = state.dirichlet.clone();
                        let log = log_this && recorder.enabled;
                        let mut first = f64::NAN;
                        let mut last = f64::NAN;
                        xpbd::dynamic_step(
                            &mut system,
                            &scene.mesh,
                            &mut state,
                            scene.solver.gravity,
                            dt_sub,
                            iterations,
                            log,
                            |l, x, secondary| {
                                if log {
                                    let r = problem.residual_norm(x, &mass, &dirichlet);
                                    let sec = secondary.is_finite().then_some(secondary);
                                    recorder.push(frame, l, r, sec);
                                    if l == 0 {
                                        first = r;
                                    }
                                    last = r;
                                }
                            },
                        )
                        .map_err(|e| with_frame(e, frame))?;
                        first_residual = first;
                        last_residual = last;
                        frame_iterations += iterations;
                    }
                    SolverKind::XpbdQs | SolverKind::XpbdQsFlipped => {
                        return Err(Error::InvalidParameter(
                            "xpbd-qs solvers apply to quasistatic scenes; use 'xpbd' for dynamic scenes"
                                .into(),
                        ));
                    }
                }
            }
        } else {
            // Quasistatic frame.
            scene.set_targets(&mut state, t_frame_end);
            state.apply_dirichlet_targets();
            collision_count =
                refresh_collisions(&state, &mut constraints, &mut partition, &mut incidence);

            match opts.solver {
                SolverKind::Pbng | SolverKind::PbngChebyshev | SolverKind::PbngSor => {
                    let refresh_every = if world.is_some() {
                        scene.solver.collision_refresh_every.max(1)
                    } else {
                        iterations.max(1)
                    };
                    let mut done = 0usize;
                    while done < iterations {
                        let chunk = refresh_every.min(iterations - done);
                        if done > 0 {
                            collision_count = refresh_collisions(
                                &state,
                                &mut constraints,
                                &mut partition,
                                &mut incidence,
                            );
                        }
                        let problem = Problem::quasistatic(
                            &scene.mesh,
                            scene.material,
                            &constraints,
                            &incidence,
                            scene.solver.gravity,
                        );
                        let offset = done;
                        let stats = pbng::solve_step(
                            &problem,
                            &mut state,
                            &partition,
                            chunk,
                            acceleration_for(opts.solver, scene.solver.acceleration),
                            scene.solver.step_clamp,
                            |l, r| {
                                if offset == 0 || l > 0 {
                                    recorder.push(frame, offset + l, r, None);
                                }
                            },
                        )
                        .map_err(|e| with_frame(e, frame))?;
                        if done == 0 {
                            first_residual = stats.initial_residual;
                        }
                        last_residual = stats.final_residual;
                        done += chunk;
                    }
                    state.x_prev.copy_from_slice(&state.x);
                    frame_iterations += iterations;
                }
                SolverKind::Newton => {
                    let problem = Problem::quasistatic(
                        &scene.mesh,
                        scene.material,
                        &constraints,
                        &incidence,
                        scene.solver.gravity,
                    );
                    let cfg = NewtonConfig {
                        max_iterations: iterations,
                        cg_iterations: opts.cg_iterations,
                        line_search: opts.newton_line_search,
                        ..NewtonConfig::default()
                    };
                    let stats = newton::solve(&problem, &mut state, &cfg, |l, r| {
                        recorder.push(frame, l, r, None);
                    })
                    .map_err(|e| with_frame(e, frame))?;
                    state.x_prev.copy_from_slice(&state.x);
                    first_residual = stats.initial_residual;
                    last_residual = stats.final_residual;
                    frame_iterations += stats.iterations;
                }
                SolverKind::Pbd => {
                    let mut system = XpbdSystem::build(
                        &scene.mesh,
                        scene.material,
                        &constraints,
                        xpbd_order,
                        true,
                    )?;
                    let problem = Problem::quasistatic(
                        &scene.mesh,
                        scene.material,
                        &constraints,
                        &incidence,
                        scene.solver.gravity,
                    );
                    let mass = state.mass.clone();
                    let dirichlet = state.dirichlet.clone();
                    let log = recorder.enabled;
                    let mut first = f64::NAN;
                    let mut last = f64::NAN;
                    xpbd::pbd_quasistatic_step(
                        &mut system,
                        &scene.mesh,
                        &mut state,
                        scene.solver.gravity,
                        frame_dt,
                        iterations,
                        |l, x| {
                            if log {
                                let r = problem.residual_norm(x, &mass, &dirichlet);
                                recorder.push(frame, l, r, None);
                                if l == 0 {
                                    first = r;
                                }
                                last = r;
                            }
                        },
                    );
                    first_residual = first;
                    last_residual = last;
                    frame_iterations += iterations;
                }
                SolverKind::XpbdQs | SolverKind::XpbdQsFlipped => {
                    let mut system = XpbdSystem::build(
                        &scene.mesh,
                        scene.material,
                        &constraints,
                        xpbd_order,
                        false,
                    )?;
                    let inner = opts.xpbd_inner_iterations.max(1);
                    let pseudo_steps = iterations.div_ceil(inner);
                    let pseudo_dt = frame_dt / substeps as f64;
                    let problem = Problem::quasistatic(
                        &scene.mesh,
                        scene.material,
                        &constraints,
                        &incidence,
                        scene.solver.gravity,
                    );
                    let mass = state.mass.clone();
                    let dirichlet = state.dirichlet.clone();
                    let log = recorder.enabled;
                    let mut first = f64::NAN;
                    let mut last = f64::NAN;
                    xpbd::quasistatic_solve(
                        &mut system,
                        &scene.mesh,
                        &mut state,
                        scene.solver.gravity,
                        pseudo_dt,
                        pseudo_steps,
                        inner,
                        log,
                        |l, x, secondary| {
                            if log {
                                let r = problem.residual_norm(x, &mass, &dirichlet);
                                let sec = secondary.is_finite().then_some(secondary);
                                recorder.push(frame, l, r, sec);
                                if first.is_nan() {
                                    first = r;
                                }
                                last = r;
                            }
                        },
                    )
                    .map_err(|e| with_frame(e, frame))?;
                    first_residual = first;
                    last_residual = last;
                    frame_iterations += pseudo_steps * inner;
                }
                SolverKind::Xpbd => {
                    return Err(Error::InvalidParameter(
                        "'xpbd' integrates dynamics; use 'xpbd-qs' on quasistatic scenes".into(),
                    ));
                }
            }
        }

        if let Some(dir) = &opts.out_dir {
            crate::io::write_vtk(
                &scene.mesh,
                &state.x,
                &format!("{} frame {frame}", scene.name),
                &dir.join(format!("frame_{frame:04}.vtk")),
            )?;
        }
        reports.push(FrameReport {
            wall_ms: frame_start.elapsed().as_secs_f64() * 1e3,
            iterations: frame_iterations,
            first_residual,
            last_residual,
            collision_constraints: collision_count,
        });
    }

    let report = RunReport {
        scene: scene.name.clone(),
        solver: opts.solver,
        frames: reports,
        rows: recorder.rows,
        node_colors,
        constraint_colors,
    };
    if let Some(dir) = &opts.out_dir {
        write_residual_csv(&report, &dir.join("residuals.csv"))?;
    }
    Ok((report, state))
}

fn acceleration_for(kind: SolverKind, scene_accel: Acceleration) -> Acceleration {
    match kind {
        SolverKind::PbngChebyshev => Acceleration::Chebyshev {
            rho: 0.95,
            gamma: 1.7,
        },
        SolverKind::PbngSor => Acceleration::Sor { omega: 1.7 },
        SolverKind::Pbng => scene_accel,
        _ => Acceleration::None,
    }
}

fn with_frame(e: Error, frame: usize) -> Error {
    match e {
        Error::Diverged { iteration, msg, .. } => Error::Diverged {
            frame,
            iteration,
            msg,
        },
        other => other,
    }
}

/// Run several solvers on the same scene under the same budget.
pub fn compare<const D: usize>(
    scene: &Scene<D>,
    solvers: &[SolverKind],
    base: &RunOptions,
) -> Result<Vec<(SolverKind, RunReport)>>
where
    MatD<D>: MatOps<D>,
    SimMesh<D>: Collidable<D>,
{
    let mut out = Vec::with_capacity(solvers.len());
    for &solver in solvers {
        let mut opts = base.clone();
        opts.solver = solver;
        opts.out_dir = base
            .out_dir
            .as_ref()
            .map(|d| d.join(solver.name()));
        let (report, _) = run(scene, &opts)?;
        out.push((solver, report));
    }
    Ok(out)
}

/// Write the residual log in the CSV schema
/// `frame,iteration,wall_ms,newton_residual[,secondary_residual]`.
pub fn write_residual_csv(report: &RunReport, path: &std::path::Path) -> Result<()> {
    use std::fmt::Write as _;
    let has_secondary = report.rows.iter().any(|r| r.secondary_residual.is_some());
    let mut s = String::from("frame,iteration,wall_ms,newton_residual");
    if has_secondary {
        s.push_str(",secondary_residual");
    }
    s.push('\n');
    for row in &report.rows {
        write!(
            s,
            "{},{},{},{}",
            row.frame, row.iteration, row.wall_ms, row.newton_residual
        )
        .unwrap();
        if has_secondary {
            match row.secondary_residual {
                Some(v) if v.is_finite() => write!(s, ",{v}").unwrap(),
                _ => s.push(','),
            }
        }
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}
