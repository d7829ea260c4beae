//! File formats: a line-oriented scene description, VTK legacy frame
//! export, and import of MEDIT `.mesh` tetrahedral meshes.
//!
//! Scene files are plain text, one record per line, with `#` comments.
//! Floats are written with Rust's shortest-roundtrip formatting so a
//! saved scene replays bit-identically.

use crate::constraints::{ConstraintKind, Stiffness, WeakConstraint};
use crate::materials::{Material, MaterialModel};
use crate::math::{MatD, MatOps, VecD};
use crate::mesh::SimMesh;
use crate::pbng::{Acceleration, SolverConfig, TimeIntegration};
use crate::scene::{
    BoundaryCondition, CollisionConfig, DirichletScript, NodeSelector, Scene, SceneAny,
};
use crate::{Error, Result};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

/// Serialize a scene to the text format.
pub fn write_scene<const D: usize>(scene: &Scene<D>, path: &Path) -> Result<()>
where
    MatD<D>: MatOps<D>,
{
    let mut out = String::new();
    let s = &mut out;
    writeln!(s, "pbng-scene v1").unwrap();
    writeln!(s, "name {}", scene.name).unwrap();
    writeln!(s, "dim {D}").unwrap();
    let mode = match scene.solver.integration {
        TimeIntegration::Quasistatic => "quasistatic",
        TimeIntegration::BackwardEuler => "backward-euler",
    };
    writeln!(s, "integration {mode}").unwrap();
    writeln!(s, "model {}", scene.material.model.name()).unwrap();
    writeln!(s, "lame {} {}", scene.material.mu, scene.material.lambda).unwrap();
    writeln!(s, "density {}", scene.density).unwrap();
    writeln!(s, "gravity {}", join_vec(&scene.solver.gravity)).unwrap();
    writeln!(s, "frames {}", scene.frames).unwrap();
    writeln!(s, "frame_dt {}", scene.solver.dt).unwrap();
    writeln!(s, "substeps {}", scene.solver.substeps).unwrap();
    writeln!(s, "iterations {}", scene.solver.iterations).unwrap();
    match scene.solver.acceleration {
        Acceleration::None => {}
        Acceleration::Chebyshev { rho, gamma } => {
            writeln!(s, "acceleration chebyshev {rho} {gamma}").unwrap()
        }
        Acceleration::Sor { omega } => writeln!(s, "acceleration sor {omega}").unwrap(),
    }
    if let Some(c) = &scene.collision {
        writeln!(s, "collision {} {} {}", c.thickness, c.k_n, c.k_tau).unwrap();
    }

    writeln!(s, "vertices {}", scene.mesh.num_vertices()).unwrap();
    for p in scene.mesh.vertices() {
        writeln!(s, "{}", join_vec(p)).unwrap();
    }
    writeln!(s, "elements {}", scene.mesh.num_elements()).unwrap();
    for e in 0..scene.mesh.num_elements() {
        let conn = scene.mesh.element(e);
        let parts: Vec<String> = conn.iter().map(|i| i.to_string()).collect();
        writeln!(s, "{}", parts.join(" ")).unwrap();
    }

    // Body ids, run-length encoded over vertex order.
    let mut runs: Vec<(u32, usize)> = Vec::new();
    for &b in &scene.body_of {
        match runs.last_mut() {
            Some((id, count)) if *id == b => *count += 1,
            _ => runs.push((b, 1)),
        }
    }
    if runs.len() > 1 {
        writeln!(s, "bodies {}", runs.len()).unwrap();
        for (id, count) in runs {
            writeln!(s, "{id} {count}").unwrap();
        }
    }

    writeln!(s, "dirichlet {}", scene.boundary.len()).unwrap();
    for bc in &scene.boundary {
        let script = match &bc.script {
            DirichletScript::Clamp => "clamp".to_string(),
            DirichletScript::Translate { velocity } => {
                format!("translate {}", join_vec(velocity))
            }
            DirichletScript::Offset { displacement } => {
                format!("offset {}", join_vec(displacement))
            }
            DirichletScript::Twist {
                origin,
                axis,
                rate,
                axial_velocity,
            } => format!(
                "twist {} {} {rate} {axial_velocity}",
                join_vec(origin),
                join_vec(axis)
            ),
        };
        let sel = match &bc.selector {
            NodeSelector::AxisMin { axis, tol } => format!("select min {axis} {tol}"),
            NodeSelector::AxisMax { axis, tol } => format!("select max {axis} {tol}"),
            NodeSelector::Explicit(nodes) => {
                let ids: Vec<String> = nodes.iter().map(|i| i.to_string()).collect();
                format!("nodes {} {}", nodes.len(), ids.join(" "))
            }
        };
        writeln!(s, "{script} {sel}").unwrap();
    }

    writeln!(s, "weak {}", scene.static_constraints.len()).unwrap();
    for wc in &scene.static_constraints {
        let stiff = match &wc.stiffness {
            Stiffness::Isotropic(k) => format!("iso {k}"),
            Stiffness::Frame { k_n, k_tau, normal } => {
                format!("frame {k_n} {k_tau} {}", join_vec(normal))
            }
        };
        let side = |side: &[(u32, f64)]| {
            let parts: Vec<String> = side.iter().map(|(i, w)| format!("{i} {w}")).collect();
            format!("{} {}", side.len(), parts.join(" "))
        };
        writeln!(s, "{stiff} s0 {} s1 {}", side(&wc.side0), side(&wc.side1)).unwrap();
    }
    writeln!(s, "end").unwrap();

    std::fs::write(path, out)?;
    Ok(())
}

fn join_vec<const D: usize>(v: &VecD<D>) -> String {
    let parts: Vec<String> = (0..D).map(|k| v[k].to_string()).collect();
    parts.join(" ")
}

/// Token stream over the lines of a scene file, with location tracking
/// for error messages.
struct Lines {
    path: String,
    lines: Vec<(usize, Vec<String>)>,
    cursor: usize,
}

impl Lines {
    fn open(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lines = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("");
            let tokens: Vec<String> = body.split_whitespace().map(str::to_string).collect();
            if !tokens.is_empty() {
                lines.push((lineno + 1, tokens));
            }
        }
        Ok(Self {
            path: path.display().to_string(),
            lines,
            cursor: 0,
        })
    }

    fn error(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn next(&mut self) -> Result<(usize, Vec<String>)> {
        if self.cursor >= self.lines.len() {
            return Err(self.error(
                self.lines.last().map_or(0, |(l, _)| *l),
                "unexpected end of file",
            ));
        }
        let item = self.lines[self.cursor].clone();
        self.cursor += 1;
        Ok(item)
    }

}

struct Tokens<'a> {
    line: usize,
    items: &'a [String],
    pos: usize,
    io: &'a Lines,
}

impl<'a> Tokens<'a> {
    fn take(&mut self, what: &str) -> Result<&'a str> {
        let item = self
            .items
            .get(self.pos)
            .ok_or_else(|| self.io.error(self.line, format!("missing {what}")))?;
        self.pos += 1;
        Ok(item)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let raw = self.take(what)?;
        raw.parse()
            .map_err(|_| self.io.error(self.line, format!("bad {what} value '{raw}'")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let raw = self.take(what)?;
        raw.parse()
            .map_err(|_| self.io.error(self.line, format!("bad {what} value '{raw}'")))
    }

    fn vec<const D: usize>(&mut self, what: &str) -> Result<VecD<D>> {
        let mut v = VecD::<D>::zeros();
        for k in 0..D {
            v[k] = self.f64(what)?;
        }
        Ok(v)
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.items.len() {
            return Err(self
                .io
                .error(self.line, format!("trailing tokens: {:?}", &self.items[self.pos..])));
        }
        Ok(())
    }
}

/// Load a scene file, dispatching on its `dim` header.
pub fn read_scene(path: &Path) -> Result<SceneAny> {
    let mut io = Lines::open(path)?;
    let (line, header) = io.next()?;
    if header != ["pbng-scene", "v1"] {
        return Err(io.error(line, "expected header 'pbng-scene v1'"));
    }
    let (line, name_line) = io.next()?;
    if name_line.len() < 2 || name_line[0] != "name" {
        return Err(io.error(line, "expected 'name <scene name>'"));
    }
    let name = name_line[1..].join(" ");
    let (line, dim_line) = io.next()?;
    if dim_line.len() != 2 || dim_line[0] != "dim" {
        return Err(io.error(line, "expected 'dim <2|3>'"));
    }
    match dim_line[1].as_str() {
        "2" => Ok(SceneAny::D2(read_scene_body::<2>(&mut io, name)?)),
        "3" => Ok(SceneAny::D3(read_scene_body::<3>(&mut io, name)?)),
        other => Err(io.error(line, format!("unsupported dimension '{other}'"))),
    }
}

fn read_scene_body<const D: usize>(io: &mut Lines, name: String) -> Result<Scene<D>>
where
    MatD<D>: MatOps<D>,
{
    let mut solver = SolverConfig::<D>::default();
    let mut density = 1.0;
    let mut frames = 1usize;
    let mut collision = None;
    let mut vertices: Vec<VecD<D>> = Vec::new();
    let mut elements: Vec<Vec<usize>> = Vec::new();
    let mut body_runs: Vec<(u32, usize)> = Vec::new();
    let mut boundary: Vec<BoundaryCondition<D>> = Vec::new();
    let mut weak: Vec<WeakConstraint<D>> = Vec::new();
    let mut model = MaterialModel::Corotated;
    let mut lame: Option<(f64, f64)> = None;

    loop {
        let (line, tokens) = io.next()?;
        let mut t = Tokens {
            line,
            items: &tokens,
            pos: 0,
            io,
        };
        let key = t.take("keyword")?;
        match key {
            "end" => break,
            "integration" => {
                solver.integration = match t.take("integration mode")? {
                    "quasistatic" => TimeIntegration::Quasistatic,
                    "backward-euler" => TimeIntegration::BackwardEuler,
                    other => {
                        return Err(io.error(line, format!("unknown integration '{other}'")))
                    }
                };
            }
            "model" => {
                let raw = t.take("model")?;
                model = MaterialModel::parse(raw)
                    .ok_or_else(|| io.error(line, format!("unknown model '{raw}'")))?;
            }
            "lame" => {
                lame = Some((t.f64("mu")?, t.f64("lambda")?));
            }
            "young" => {
                let young = t.f64("young")?;
                let nu = t.f64("poisson")?;
                lame = Some(crate::materials::lame_from_young_poisson(young, nu)?);
            }
            "density" => density = t.f64("density")?,
            "gravity" => solver.gravity = t.vec::<D>("gravity")?,
            "frames" => frames = t.usize("frames")?,
            "frame_dt" => solver.dt = t.f64("frame_dt")?,
            "substeps" => solver.substeps = t.usize("substeps")?,
            "iterations" => solver.iterations = t.usize("iterations")?,
            "acceleration" => {
                solver.acceleration = match t.take("acceleration kind")? {
                    "none" => Acceleration::None,
                    "chebyshev" => Acceleration::Chebyshev {
                        rho: t.f64("rho")?,
                        gamma: t.f64("gamma")?,
                    },
                    "sor" => Acceleration::Sor {
                        omega: t.f64("omega")?,
                    },
                    other => {
                        return Err(io.error(line, format!("unknown acceleration '{other}'")))
                    }
                };
            }
            "collision" => {
                collision = Some(CollisionConfig {
                    thickness: t.f64("thickness")?,
                    k_n: t.f64("k_n")?,
                    k_tau: t.f64("k_tau")?,
                });
            }
            "vertices" => {
                let n = t.usize("vertex count")?;
                t.done()?;
                vertices.reserve(n);
                for _ in 0..n {
                    let (line, tokens) = io.next()?;
                    let mut t = Tokens {
                        line,
                        items: &tokens,
                        pos: 0,
                        io,
                    };
                    vertices.push(t.vec::<D>("coordinate")?);
                    t.done()?;
                }
                continue;
            }
            "elements" => {
                let n = t.usize("element count")?;
                t.done()?;
                elements.reserve(n);
                for _ in 0..n {
                    let (line, tokens) = io.next()?;
                    let mut t = Tokens {
                        line,
                        items: &tokens,
                        pos: 0,
                        io,
                    };
                    let mut conn = Vec::with_capacity(D + 1);
                    for _ in 0..=D {
                        conn.push(t.usize("vertex index")?);
                    }
                    t.done()?;
                    elements.push(conn);
                }
                continue;
            }
            "bodies" => {
                let n = t.usize("body run count")?;
                t.done()?;
                for _ in 0..n {
                    let (line, tokens) = io.next()?;
                    let mut t = Tokens {
                        line,
                        items: &tokens,
                        pos: 0,
                        io,
                    };
                    let id = t.usize("body id")? as u32;
                    let count = t.usize("run length")?;
                    t.done()?;
                    body_runs.push((id, count));
                }
                continue;
            }
            "dirichlet" => {
                let n = t.usize("dirichlet record count")?;
                t.done()?;
                for _ in 0..n {
                    let (line, tokens) = io.next()?;
                    let mut t = Tokens {
                        line,
                        items: &tokens,
                        pos: 0,
                        io,
                    };
                    boundary.push(read_boundary::<D>(&mut t, io, line)?);
                }
                continue;
            }
            "weak" => {
                let n = t.usize("weak constraint count")?;
                t.done()?;
                for _ in 0..n {
                    let (line, tokens) = io.next()?;
                    let mut t = Tokens {
                        line,
                        items: &tokens,
                        pos: 0,
                        io,
                    };
                    weak.push(read_weak::<D>(&mut t, io, line)?);
                }
                continue;
            }
            other => return Err(io.error(line, format!("unknown keyword '{other}'"))),
        }
        t.done()?;
    }

    if elements.is_empty() {
        return Err(Error::NoElements);
    }
    let (mu, lambda) = lame.ok_or_else(|| Error::InvalidScene {
        msg: "scene file must set material parameters via 'lame' or 'young'".into(),
    })?;
    let (mesh, mass) = SimMesh::<D>::build(vertices, &elements, density)?;
    let n = mesh.num_vertices();
    let body_of = if body_runs.is_empty() {
        vec![0; n]
    } else {
        let mut out = Vec::with_capacity(n);
        for (id, count) in body_runs {
            out.extend(std::iter::repeat(id).take(count));
        }
        if out.len() != n {
            return Err(Error::InvalidScene {
                msg: format!("body runs cover {} vertices, mesh has {n}", out.len()),
            });
        }
        out
    };
    let scene = Scene {
        name,
        mesh,
        mass,
        material: Material::new(model, mu, lambda),
        density,
        boundary,
        static_constraints: weak,
        body_of,
        collision,
        frames,
        solver,
    };
    scene.validate()?;
    Ok(scene)
}

fn read_boundary<const D: usize>(
    t: &mut Tokens,
    io: &Lines,
    line: usize,
) -> Result<BoundaryCondition<D>>
where
    MatD<D>: MatOps<D>,
{
    let script = match t.take("script kind")? {
        "clamp" => DirichletScript::Clamp,
        "translate" => DirichletScript::Translate {
            velocity: t.vec::<D>("velocity")?,
        },
        "offset" => DirichletScript::Offset {
            displacement: t.vec::<D>("displacement")?,
        },
        "twist" => DirichletScript::Twist {
            origin: t.vec::<D>("origin")?,
            axis: t.vec::<D>("axis")?,
            rate: t.f64("rate")?,
            axial_velocity: t.f64("axial velocity")?,
        },
        other => return Err(io.error(line, format!("unknown script '{other}'"))),
    };
    let selector = match t.take("selector")? {
        "nodes" => {
            let n = t.usize("node count")?;
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(t.usize("node index")? as u32);
            }
            NodeSelector::Explicit(out)
        }
        "select" => {
            let side = t.take("side")?.to_string();
            let axis = t.usize("axis")?;
            let tol = t.f64("tolerance")?;
            match side.as_str() {
                "min" => NodeSelector::AxisMin { axis, tol },
                "max" => NodeSelector::AxisMax { axis, tol },
                other => return Err(io.error(line, format!("unknown selector side '{other}'"))),
            }
        }
        other => return Err(io.error(line, format!("unknown selector '{other}'"))),
    };
    t.done()?;
    Ok(BoundaryCondition { selector, script })
}

fn read_weak<const D: usize>(t: &mut Tokens, io: &Lines, line: usize) -> Result<WeakConstraint<D>>
where
    MatD<D>: MatOps<D>,
{
    let stiffness = match t.take("stiffness kind")? {
        "iso" => Stiffness::Isotropic(t.f64("k")?),
        "frame" => {
            let k_n = t.f64("k_n")?;
            let k_tau = t.f64("k_tau")?;
            let normal = t.vec::<D>("normal")?;
            Stiffness::frame(k_n, k_tau, normal)?
        }
        other => return Err(io.error(line, format!("unknown stiffness '{other}'"))),
    };
    let side = |tag: &str, t: &mut Tokens| -> Result<Vec<(u32, f64)>> {
        let marker = t.take("side marker")?;
        if marker != tag {
            return Err(io.error(line, format!("expected '{tag}', found '{marker}'")));
        }
        let n = t.usize("side size")?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let i = t.usize("node index")? as u32;
            let w = t.f64("weight")?;
            out.push((i, w));
        }
        Ok(out)
    };
    let side0 = side("s0", t)?;
    let side1 = side("s1", t)?;
    t.done()?;
    let wc = WeakConstraint {
        side0,
        side1,
        stiffness,
        kind: ConstraintKind::Static,
    };
    wc.validate()?;
    Ok(wc)
}

/// Export positions + connectivity as a legacy ASCII VTK unstructured
/// grid (cell type 10 for tetrahedra, 5 for triangles).
pub fn write_vtk<const D: usize>(
    mesh: &SimMesh<D>,
    positions: &[VecD<D>],
    title: &str,
    path: &Path,
) -> Result<()> {
    let mut out = String::new();
    let s = &mut out;
    writeln!(s, "# vtk DataFile Version 3.0").unwrap();
    writeln!(s, "{title}").unwrap();
    writeln!(s, "ASCII").unwrap();
    writeln!(s, "DATASET UNSTRUCTURED_GRID").unwrap();
    writeln!(s, "POINTS {} double", positions.len()).unwrap();
    for p in positions {
        let mut c = [0.0f64; 3];
        for k in 0..D {
            c[k] = p[k];
        }
        writeln!(s, "{} {} {}", c[0], c[1], c[2]).unwrap();
    }
    let m = mesh.num_elements();
    writeln!(s, "CELLS {m} {}", m * (D + 2)).unwrap();
    for e in 0..m {
        let conn = mesh.element(e);
        let ids: Vec<String> = conn.iter().map(|i| i.to_string()).collect();
        writeln!(s, "{} {}", D + 1, ids.join(" ")).unwrap();
    }
    writeln!(s, "CELL_TYPES {m}").unwrap();
    let cell_type = if D == 3 { 10 } else { 5 };
    for _ in 0..m {
        writeln!(s, "{cell_type}").unwrap();
    }

    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Read back the POINTS section of a VTK file written by [`write_vtk`].
pub fn read_vtk_positions<const D: usize>(path: &Path) -> Result<Vec<VecD<D>>> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut tokens = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            tokens.push((lineno + 1, tok));
        }
    }
    let pos = tokens
        .iter()
        .position(|(_, t)| *t == "POINTS")
        .ok_or_else(|| Error::Parse {
            path: path_str.clone(),
            line: 1,
            msg: "no POINTS section".into(),
        })?;
    let (nline, count_tok) = tokens[pos + 1];
    let n: usize = count_tok.parse().map_err(|_| Error::Parse {
        path: path_str.clone(),
        line: nline,
        msg: format!("bad point count '{count_tok}'"),
    })?;
    let mut out = Vec::with_capacity(n);
    let mut k = pos + 3; // skip POINTS <n> double
    for _ in 0..n {
        let mut p = VecD::<D>::zeros();
        for c in 0..3 {
            let (line, tok) = tokens.get(k).copied().ok_or_else(|| Error::Parse {
                path: path_str.clone(),
                line: 0,
                msg: "truncated POINTS section".into(),
            })?;
            let val: f64 = tok.parse().map_err(|_| Error::Parse {
                path: path_str.clone(),
                line,
                msg: format!("bad coordinate '{tok}'"),
            })?;
            if c < D {
                p[c] = val;
            }
            k += 1;
        }
        out.push(p);
    }
    Ok(out)
}

/// Import a MEDIT `.mesh` tetrahedral mesh (ASCII, 1-based indices).
pub fn read_medit_tet(path: &Path) -> Result<(Vec<VecD<3>>, Vec<Vec<usize>>)> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut words = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("");
        for tok in body.split_whitespace() {
            words.push((lineno + 1, tok.to_string()));
        }
    }
    let mut vertices = Vec::new();
    let mut elements = Vec::new();
    let mut i = 0;
    let err = |line: usize, msg: String| Error::Parse {
        path: path_str.clone(),
        line,
        msg,
    };
    while i < words.len() {
        let (line, word) = (&words[i].0, words[i].1.as_str());
        match word {
            "Vertices" => {
                let (nl, ntok) = (&words[i + 1].0, words[i + 1].1.as_str());
                let n: usize = ntok
                    .parse()
                    .map_err(|_| err(*nl, format!("bad vertex count '{ntok}'")))?;
                i += 2;
                for _ in 0..n {
                    let mut p = VecD::<3>::zeros();
                    for c in 0..3 {
                        let (l, tok) = (&words[i].0, words[i].1.as_str());
                        p[c] = tok
                            .parse()
                            .map_err(|_| err(*l, format!("bad coordinate '{tok}'")))?;
                        i += 1;
                    }
                    i += 1; // reference tag
                    vertices.push(p);
                }
            }
            "Tetrahedra" => {
                let (nl, ntok) = (&words[i + 1].0, words[i + 1].1.as_str());
                let n: usize = ntok
                    .parse()
                    .map_err(|_| err(*nl, format!("bad tetrahedra count '{ntok}'")))?;
                i += 2;
                for _ in 0..n {
                    let mut conn = Vec::with_capacity(4);
                    for _ in 0..4 {
                        let (l, tok) = (&words[i].0, words[i].1.as_str());
                        let idx: usize = tok
                            .parse()
                            .map_err(|_| err(*l, format!("bad vertex index '{tok}'")))?;
                        if idx == 0 {
                            return Err(err(*l, "MEDIT indices are 1-based".into()));
                        }
                        conn.push(idx - 1);
                        i += 1;
                    }
                    i += 1; // reference tag
                    elements.push(conn);
                }
            }
            "End" => break,
            _ => {
                let _ = line;
                i += 1;
            }
        }
    }
    if vertices.is_empty() || elements.is_empty() {
        return Err(err(1, "no Vertices/Tetrahedra sections found".into()));
    }
    Ok((vertices, elements))
}
