//! Command-line driver: run scenes, compare solvers, inspect colorings.

use clap::{Args, Parser, Subcommand};
use pbng::driver::{self, RunOptions, RunReport, SolverKind};
use pbng::scene::{self, SceneAny};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pbng",
    about = "Soft-body FEM solvers: position-based nonlinear Gauss-Seidel with PBD/XPBD/Newton references"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SceneArgs {
    /// Built-in scene name (see `validate --list`).
    #[arg(long, conflicts_with = "scene_file")]
    scene: Option<String>,
    /// Scene description file.
    #[arg(long)]
    scene_file: Option<PathBuf>,
    /// Override the cell resolution of built-in scenes.
    #[arg(long)]
    res: Option<usize>,
}

#[derive(Args, Clone)]
struct BudgetArgs {
    /// Solver iterations per step (Newton iterations for `newton`).
    #[arg(long)]
    iterations: Option<usize>,
    /// Number of frames to simulate.
    #[arg(long)]
    frames: Option<usize>,
    /// Substeps per frame (dynamic scenes).
    #[arg(long)]
    substeps: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// CG iterations per Newton iteration.
    #[arg(long, default_value_t = 100)]
    cg_iters: usize,
    /// Inner iterations per pseudo-step of the xpbd-qs solvers.
    #[arg(long, default_value_t = 10)]
    xpbd_inner: usize,
    /// Directory for frame exports, the recorded scene, and CSV logs.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Record the per-iteration newton residual (CSV).
    #[arg(long)]
    log_residual: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scene with one solver.
    Run {
        #[command(flatten)]
        scene: SceneArgs,
        /// Solver: pbng, pbng-cheby, pbng-sor, newton, pbd, xpbd,
        /// xpbd-qs, xpbd-qs-flipped.
        #[arg(long, default_value = "pbng")]
        solver: String,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Run several solvers under the same budget and emit aligned logs.
    Compare {
        #[command(flatten)]
        scene: SceneArgs,
        /// Solver to include (repeat the flag).
        #[arg(long = "solver", required = true)]
        solvers: Vec<String>,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Print node/constraint color counts and per-color histograms.
    ColorStats {
        #[command(flatten)]
        scene: SceneArgs,
    },
    /// Validate a scene (or list the built-in ones).
    Validate {
        #[command(flatten)]
        scene: SceneArgs,
        /// List built-in scene names and exit.
        #[arg(long)]
        list: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run {
            scene,
            solver,
            budget,
        } => {
            let kind = parse_solver(&solver)?;
            init_threads(budget.threads);
            let scene = load_scene(&scene)?;
            let opts = options(kind, &budget);
            let report = run_any(&scene, &opts)?;
            print_report(&report);
            Ok(())
        }
        Command::Compare {
            scene,
            solvers,
            budget,
        } => {
            let kinds: Vec<SolverKind> = solvers
                .iter()
                .map(|s| parse_solver(s))
                .collect::<Result<_, _>>()?;
            init_threads(budget.threads);
            let scene = load_scene(&scene)?;
            let mut base = options(kinds[0], &budget);
            base.log_residual = true;
            let results = compare_any(&scene, &kinds, &base)?;
            if let Some(dir) = &budget.out_dir {
                std::fs::create_dir_all(dir)?;
                write_compare_csv(&results, &dir.join("compare.csv"))?;
                println!("wrote {}", dir.join("compare.csv").display());
            }
            println!("{:<18} {:>14} {:>14}", "solver", "first_residual", "last_residual");
            for (kind, report) in &results {
                let first = report
                    .rows
                    .first()
                    .map_or(f64::NAN, |r| r.newton_residual);
                let last = report.rows.last().map_or(f64::NAN, |r| r.newton_residual);
                println!("{:<18} {:>14.6e} {:>14.6e}", kind.name(), first, last);
            }
            Ok(())
        }
        Command::ColorStats { scene } => {
            let scene = load_scene(&scene)?;
            color_stats(&scene);
            Ok(())
        }
        Command::Validate { scene, list } => {
            if list {
                for name in scene::BUILTIN_SCENES {
                    println!("{name}");
                }
                return Ok(());
            }
            let scene = load_scene(&scene)?;
            scene.validate()?;
            println!("scene '{}' is valid", scene.name());
            Ok(())
        }
    }
}

fn parse_solver(s: &str) -> Result<SolverKind, Box<dyn std::error::Error>> {
    SolverKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = SolverKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown solver '{s}'; available: {}", names.join(", ")).into()
    })
}

fn init_threads(threads: usize) {
    if threads > 0 {
        // Ignore the error if a pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn load_scene(args: &SceneArgs) -> Result<SceneAny, Box<dyn std::error::Error>> {
    match (&args.scene, &args.scene_file) {
        (Some(name), None) => Ok(scene::builtin_with_resolution(name, args.res)?),
        (None, Some(path)) => Ok(pbng::io::read_scene(path)?),
        (None, None) => Err("pass --scene <name> or --scene-file <path>".into()),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    }
}

fn options(kind: SolverKind, budget: &BudgetArgs) -> RunOptions {
    let mut opts = RunOptions::new(kind);
    opts.iterations = budget.iterations;
    opts.frames = budget.frames;
    opts.substeps = budget.substeps;
    opts.cg_iterations = budget.cg_iters;
    opts.xpbd_inner_iterations = budget.xpbd_inner;
    opts.out_dir = budget.out_dir.clone();
    opts.log_residual = budget.log_residual;
    opts
}

fn run_any(scene: &SceneAny, opts: &RunOptions) -> pbng::Result<RunReport> {
    match scene {
        SceneAny::D2(s) => driver::run(s, opts).map(|(r, _)| r),
        SceneAny::D3(s) => driver::run(s, opts).map(|(r, _)| r),
    }
}

fn compare_any(
    scene: &SceneAny,
    kinds: &[SolverKind],
    base: &RunOptions,
) -> pbng::Result<Vec<(SolverKind, RunReport)>> {
    match scene {
        SceneAny::D2(s) => driver::compare(s, kinds, base),
        SceneAny::D3(s) => driver::compare(s, kinds, base),
    }
}

fn print_report(report: &RunReport) {
    println!(
        "scene {} solver {}: {} frames, {} node colors, {} constraint colors",
        report.scene,
        report.solver.name(),
        report.frames.len(),
        report.node_colors,
        report.constraint_colors
    );
    for (k, f) in report.frames.iter().enumerate() {
        println!(
            "frame {k:>4}: {:>9.2} ms, {:>5} iters, residual {:>12.6e} -> {:>12.6e}, {} contact constraints",
            f.wall_ms, f.iterations, f.first_residual, f.last_residual, f.collision_constraints
        );
    }
}

fn color_stats(scene: &SceneAny) {
    fn stats<const D: usize>(scene: &pbng::Scene<D>)
    where
        pbng::MatD<D>: pbng::MatOps<D>,
    {
        let nodes = pbng::coloring::color_nodes(&scene.mesh, &scene.static_constraints);
        let constraints = pbng::coloring::color_constraints(
            &pbng::coloring::work_item_stencils(&scene.mesh, &scene.static_constraints),
        );
        println!(
            "scene {}: {} vertices, {} elements",
            scene.name,
            scene.mesh.num_vertices(),
            scene.mesh.num_elements()
        );
        println!("node colors: {}", nodes.num_colors());
        for (c, size) in nodes.histogram().iter().enumerate() {
            println!("  color {c:>3}: {size} nodes");
        }
        println!("constraint colors: {}", constraints.num_colors());
        for (c, size) in constraints.histogram().iter().enumerate() {
            println!("  color {c:>3}: {size} constraints");
        }
    }
    match scene {
        SceneAny::D2(s) => stats(s),
        SceneAny::D3(s) => stats(s),
    }
}

fn write_compare_csv(
    results: &[(SolverKind, RunReport)],
    path: &std::path::Path,
) -> Result<(), Box<dyn std::error::Error>> {
    use std::fmt::Write as _;
    let mut s = String::from("solver,frame,iteration,wall_ms,newton_residual,secondary_residual\n");
    for (kind, report) in results {
        for row in &report.rows {
            write!(
                s,
                "{},{},{},{},{}",
                kind.name(),
                row.frame,
                row.iteration,
                row.wall_ms,
                row.newton_residual
            )?;
            match row.secondary_residual {
                Some(v) if v.is_finite() => writeln!(s, ",{v}")?,
                _ => writeln!(s, ",")?,
            }
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}
