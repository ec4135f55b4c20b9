//! `perfcell`: homogenization studies on periodically perforated domains.
//!
//! Every subcommand reads one flat `key = value` config (see the crate
//! README for sections and keys). Study subcommands print a summary, list
//! their assertions as `[pass]`/`[FAIL]` lines, and exit 0 only when all
//! assertions hold; with `--out` they also write their CSV and a manifest.
//! Diagnostic subcommands (`mesh`, `cell`, `table`, `macro`, `fine`) print
//! what they computed and exit 0 when the computation succeeded.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use perfcell_core::cell::{effective_a, effective_b, effective_g, solve_cell};
use perfcell_core::fine::{solve_fine_elliptic, FineProblem};
use perfcell_core::harness::{
    cell_setup, run_boundary_identity, run_study, run_trace_convergence,
    run_two_scale_residual, run_uniqueness, run_verify, StudyConfig, StudyKind, StudyReport,
};
use perfcell_core::io::{write_convergence_csv, write_mesh_vtk, write_solution_vtk};
use perfcell_core::macroscale::{solve_homogenized_elliptic, MacroProblem};
use perfcell_core::mesh::{mesh_unit_square, tile_perforated_domain};
use perfcell_core::table::{build_table, interpolation_probe};
use perfcell_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "perfcell",
    version,
    about = "Homogenization of monotone operators on periodically perforated domains"
)]
struct Cli {
    /// Study configuration file (flat key = value sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for CSV reports, manifests, and VTK dumps.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the seed named in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the cell mesh (and the tiled domain) and report statistics.
    Mesh,
    /// Sample the structural assumptions and scaling bounds of the model.
    Verify,
    /// Solve representative cell problems and print effective outputs.
    Cell,
    /// Build the effective-coefficient table and probe its interpolation.
    Table,
    /// Solve the homogenized elliptic problem on the unit square.
    Macro,
    /// Solve the fine elliptic problem at the first configured resolution.
    Fine,
    /// Run the configured convergence study (elliptic or parabolic).
    Converge,
    /// Run the surface-trace convergence study.
    Trace,
    /// Check the two-scale residual of the converged pair.
    Residual,
    /// Check the volume-vs-boundary surface-moment identity.
    Identity,
    /// Collapse random Newton starts onto one homogenized solution.
    Uniq,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("FAILED: assertions above did not all hold");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::config(format!("thread pool setup failed: {e}")))?;
    }
    let config_path = cli
        .config
        .ok_or_else(|| Error::config("--config <path> is required".to_string()))?;
    let mut cfg = StudyConfig::from_file(&config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.as_deref();

    match cli.command {
        Command::Mesh => cmd_mesh(&cfg, out),
        Command::Cell => cmd_cell(&cfg, out),
        Command::Table => cmd_table(&cfg, out),
        Command::Macro => cmd_macro(&cfg, out),
        Command::Fine => cmd_fine(&cfg, out),
        // The verify probes only read the model sections, so any config
        // kind is accepted here.
        Command::Verify => Ok(report_outcome(&StudyReport::Verify(run_verify(&cfg, out)?))),
        Command::Converge => {
            expect_kind(
                &cfg,
                &[
                    StudyKind::EllipticConvergence,
                    StudyKind::ParabolicConvergence,
                ],
                "converge",
            )?;
            Ok(report_outcome(&run_study(&cfg, out)?))
        }
        Command::Trace => {
            expect_kind(&cfg, &[StudyKind::TraceConvergence], "trace")?;
            Ok(report_outcome(&StudyReport::Trace(run_trace_convergence(
                &cfg, out,
            )?)))
        }
        Command::Residual => {
            expect_kind(&cfg, &[StudyKind::TwoScaleResidual], "residual")?;
            Ok(report_outcome(&StudyReport::Residual(
                run_two_scale_residual(&cfg, out)?,
            )))
        }
        Command::Identity => {
            expect_kind(&cfg, &[StudyKind::BoundaryIdentity], "identity")?;
            Ok(report_outcome(&StudyReport::Identity(
                run_boundary_identity(&cfg, out)?,
            )))
        }
        Command::Uniq => {
            expect_kind(&cfg, &[StudyKind::Uniqueness], "uniq")?;
            Ok(report_outcome(&StudyReport::Uniqueness(run_uniqueness(
                &cfg, out,
            )?)))
        }
    }
}

fn expect_kind(cfg: &StudyConfig, allowed: &[StudyKind], sub: &str) -> Result<()> {
    if allowed.contains(&cfg.kind) {
        return Ok(());
    }
    let names: Vec<&str> = allowed.iter().map(|k| k.name()).collect();
    Err(Error::config(format!(
        "config study kind '{}' does not match subcommand '{sub}' (expected {})",
        cfg.kind.name(),
        names.join(" or ")
    )))
}

fn report_outcome(report: &StudyReport) -> bool {
    for line in report.summary_lines() {
        println!("{line}");
    }
    let mut all = true;
    for (name, pass) in report.assertions() {
        println!("[{}] {name}", if pass { "pass" } else { "FAIL" });
        all &= pass;
    }
    all
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn cmd_mesh(cfg: &StudyConfig, out: Option<&Path>) -> Result<bool> {
    let setup = cell_setup(cfg)?;
    println!(
        "cell mesh: {} vertices, {} triangles, target h = {}",
        setup.mesh.n_vertices(),
        setup.mesh.triangles.len(),
        cfg.geometry.h
    );
    println!("solid cell area = {:.12}", setup.mesh.area());
    println!("hole boundary edges: {}", setup.mesh.hole_edges().len());
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_mesh_vtk(&setup.mesh, &dir.join("cell_mesh.vtk"))?;
    }
    if !setup.mesh.hole_edges().is_empty() {
        let n = cfg.n_list[0];
        let fine = tile_perforated_domain(&cfg.geometry, n)?;
        println!(
            "tiled domain at n = {n}: {} vertices, {} triangles, eps = {:.6}, {} perforated cells",
            fine.domain.n_vertices(),
            fine.domain.triangles.len(),
            fine.eps,
            fine.n_perforated()
        );
        println!("total perforation boundary length = {:.12}", fine.surface_measure());
        if let Some(dir) = out {
            write_mesh_vtk(&fine.domain, &dir.join("fine_mesh.vtk"))?;
        }
    }
    Ok(true)
}

fn cmd_cell(cfg: &StudyConfig, out: Option<&Path>) -> Result<bool> {
    let setup = cell_setup(cfg)?;
    let states = [([1.0, 0.0], 0.0), ([0.0, 1.0], 0.0), ([1.0, 0.0], 1.0)];
    let mut last = None;
    for (xi, u) in states {
        let sol = solve_cell(
            &setup.mesh,
            &setup.map,
            &cfg.flux,
            &setup.g,
            xi,
            u,
            cfg.cell_tol,
        )?;
        let a = effective_a(&setup.mesh, &cfg.flux, &sol);
        let b = effective_b(&setup.mesh, &setup.g, &sol);
        let gs = effective_g(&setup.mesh, &setup.g, u);
        println!(
            "xi = ({:+.1}, {:+.1}), u = {:+.1}: a* = ({:+.9e}, {:+.9e}), b* = {:+.9e}, \
             g* = ({:+.9e}, {:+.9e}), {} Newton iters, residual {:.3e}",
            xi[0], xi[1], u, a[0], a[1], b, gs[0], gs[1], sol.newton_iters, sol.residual_norm
        );
        last = Some(sol);
    }
    println!("solid cell area = {:.12}", setup.mesh.area());
    if let (Some(dir), Some(sol)) = (out, last) {
        ensure_dir(dir)?;
        write_solution_vtk(&setup.mesh, &[("corrector", &sol.w)], &dir.join("cell_corrector.vtk"))?;
    }
    Ok(true)
}

fn cmd_table(cfg: &StudyConfig, out: Option<&Path>) -> Result<bool> {
    let setup = cell_setup(cfg)?;
    let t0 = Instant::now();
    let table = build_table(
        &setup.mesh,
        &setup.map,
        &cfg.flux,
        &setup.g,
        cfg.table,
        cfg.cell_tol,
    )?;
    println!(
        "table: {} x {} x {} nodes over [-{}, {}]^2 x [-{}, {}] in {:.1} s",
        cfg.table.n_xi,
        cfg.table.n_xi,
        cfg.table.n_u,
        cfg.table.r_xi,
        cfg.table.r_xi,
        cfg.table.r_u,
        cfg.table.r_u,
        t0.elapsed().as_secs_f64()
    );
    println!("solid cell area = {:.12}", table.y_star);
    if table.linear.is_some() {
        println!("linear structure detected: exact tensor evaluation enabled");
    }
    let (coercivity, shift) = table.fit_coercivity();
    println!("fitted coercivity over the nodes: {coercivity:.6e} (state shift {shift:.6e})");
    let probe = interpolation_probe(
        &table,
        &setup.mesh,
        &setup.map,
        &cfg.flux,
        &setup.g,
        16,
        cfg.seed,
        cfg.cell_tol,
    )?;
    println!("interpolation probe over 16 fresh states: max relative gap {probe:.3e}");
    if let Some(dir) = out {
        ensure_dir(dir)?;
        table.write_csv(&dir.join("table.csv"))?;
    }
    Ok(true)
}

fn cmd_macro(cfg: &StudyConfig, out: Option<&Path>) -> Result<bool> {
    let setup = cell_setup(cfg)?;
    let table = build_table(
        &setup.mesh,
        &setup.map,
        &cfg.flux,
        &setup.g,
        cfg.table,
        cfg.cell_tol,
    )?;
    let macro_mesh = mesh_unit_square(cfg.macro_h)?;
    let p = MacroProblem {
        mesh: &macro_mesh,
        law: &table,
        f: cfg.f,
        lambda: cfg.lambda,
    };
    let sol = solve_homogenized_elliptic(&p, cfg.tol, None)?;
    let (lo, hi) = sol
        .u
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    println!(
        "homogenized elliptic solve: {} vertices, {} Newton iters, residual {:.3e}",
        macro_mesh.n_vertices(),
        sol.newton_iters,
        sol.residual_norm
    );
    println!("field range: [{lo:.6e}, {hi:.6e}]");
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_solution_vtk(&macro_mesh, &[("u", &sol.u)], &dir.join("macro_solution.vtk"))?;
        write_convergence_csv(&sol.log, &dir.join("macro_newton.csv"))?;
    }
    Ok(true)
}

fn cmd_fine(cfg: &StudyConfig, out: Option<&Path>) -> Result<bool> {
    let setup = cell_setup(cfg)?;
    let n = cfg.n_list[0];
    let fine = tile_perforated_domain(&cfg.geometry, n)?;
    let p = FineProblem {
        mesh: &fine,
        flux: &cfg.flux,
        g: &setup.g,
        f: cfg.f,
        lambda: cfg.lambda,
    };
    let sol = solve_fine_elliptic(&p, cfg.tol, None)?;
    let (lo, hi) = sol
        .u
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    println!(
        "fine elliptic solve at n = {n} (eps = {:.6}): {} vertices, {} Newton iters, residual {:.3e}",
        fine.eps,
        fine.domain.n_vertices(),
        sol.newton_iters,
        sol.residual_norm
    );
    println!("field range: [{lo:.6e}, {hi:.6e}]");
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_solution_vtk(&fine.domain, &[("u", &sol.u)], &dir.join("fine_solution.vtk"))?;
        write_convergence_csv(&sol.log, &dir.join("fine_newton.csv"))?;
    }
    Ok(true)
}
