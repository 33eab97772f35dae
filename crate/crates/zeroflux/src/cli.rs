//! Command-line front end: parses run configurations, dispatches
//! evolution, stationary, verification and convergence jobs, and writes
//! every artifact (CSV data, manifests, summaries, plot scripts).
//!
//! All pipelines are deterministic: the same config produces bit-identical
//! CSV output regardless of --jobs.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, Resolved, RunConfig};
use crate::diagnostics::{
    boundary_layer_probe, canonical_test_functions, check_ladder, entropy_levels, entropy_sweep,
    mass_drift, refinement_report_from_runs,
};
use crate::io;
use crate::mesh::Mesh;
use crate::numflux::NumericalFlux;
use crate::scheme::{run_evolution, DiscreteSolution, RunStats, SchemeError};
use crate::stationary::{cell_averages, resolvent_probe, source_cell_averages, stationary_solve};
use crate::Error;

#[derive(Debug, Parser)]
#[command(
    name = "zeroflux",
    version,
    about = "Finite volume solver for degenerate parabolic-hyperbolic equations with zero-flux boundaries"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the evolution scheme and record the trajectory
    Run(JobArgs),
    /// Solve the stationary balance problem for the configured source
    Stationary(JobArgs),
    /// Certify entropy inequalities and mass balance for a run or a
    /// recorded trajectory
    Verify(JobArgs),
    /// Nested-refinement convergence study over the configured ladder
    Converge(JobArgs),
    /// Reproduce the three reference experiments and the boundary-layer
    /// ladder with pinned defaults
    ReproduceFig1(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct JobArgs {
    /// TOML run configuration
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config's output.dir)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write gnuplot scripts next to the data
    #[arg(long)]
    pub emit_plots: bool,
    /// Worker threads for commands with independent sub-jobs
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Output directory
    #[arg(long, default_value = "fig1")]
    pub out: PathBuf,
    /// Also write gnuplot scripts next to the data
    #[arg(long)]
    pub emit_plots: bool,
    /// Worker threads for the independent sub-runs
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

pub fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Stationary(args) => cmd_stationary(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::Converge(args) => cmd_converge(&args),
        Command::ReproduceFig1(args) => cmd_reproduce_fig1(&args),
    }
}

fn load(args: &JobArgs) -> Result<(RunConfig, Resolved), Error> {
    let mut raw = RunConfig::from_path(&args.config)?;
    if let Some(out) = &args.out {
        raw.output.dir = Some(out.display().to_string());
    }
    if args.emit_plots {
        raw.output.emit_plots = Some(true);
    }
    let resolved = raw.resolve()?;
    Ok((raw, resolved))
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir)
        .map_err(|source| io::IoError::File { path: dir.to_path_buf(), source })?;
    Ok(())
}

fn state_range(state: &[f64]) -> (f64, f64) {
    state
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), &v| (mn.min(v), mx.max(v)))
}

fn cmd_run(args: &JobArgs) -> Result<(), Error> {
    let (_, r) = load(args)?;
    ensure_dir(&r.out_dir)?;
    let flux = NumericalFlux::new(r.flux_kind, &r.model);
    let sol = run_evolution(&r.model, &r.mesh, &flux, r.stepping, &r.solver, r.dt, r.model.t_end)?;
    io::write_trajectory(&r.out_dir.join("trajectory.csv"), &sol)?;
    io::write_step_log(&r.out_dir.join("steps.csv"), &sol)?;
    io::write_profile(&r.out_dir.join("final.csv"), &r.mesh, sol.state(sol.n_steps()))?;
    io::write_manifest(
        &r.out_dir.join("manifest.toml"),
        "run",
        &r.document,
        &r.mesh,
        Some(sol.stats()),
    )?;
    if r.emit_plots {
        io::write_profile_plot_script(
            &r.out_dir.join("final.gp"),
            "final.png",
            &format!("{} at t = {}", r.model.name, sol.t_end()),
            &[("final.csv".into(), r.model.name.clone())],
        )?;
    }
    let drift = mass_drift(&sol);
    let (mn, mx) = sol.states().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, s| {
        let (a, b) = state_range(s);
        (acc.0.min(a), acc.1.max(b))
    });
    println!(
        "run {}: {} steps of {:.6e}, mass drift {:.3e}, values in [{:.6}, {:.6}], wrote {}",
        r.model.name,
        sol.n_steps(),
        sol.dt(),
        drift.worst_abs,
        mn,
        mx,
        r.out_dir.display()
    );
    Ok(())
}

fn cmd_stationary(args: &JobArgs) -> Result<(), Error> {
    let (_, r) = load(args)?;
    ensure_dir(&r.out_dir)?;
    let flux = NumericalFlux::new(r.flux_kind, &r.model);
    let (u, stats) = stationary_solve(&r.model, &r.mesh, &flux, &r.solver)?;
    io::write_profile(&r.out_dir.join("stationary.csv"), &r.mesh, &u)?;
    let run_stats = RunStats {
        steps: 1,
        total_newton_iters: stats.iters,
        max_step_iters: stats.iters,
        worst_residual: stats.residual,
    };
    io::write_manifest(
        &r.out_dir.join("manifest.toml"),
        "stationary",
        &r.document,
        &r.mesh,
        Some(&run_stats),
    )?;
    if r.emit_plots {
        io::write_profile_plot_script(
            &r.out_dir.join("stationary.gp"),
            "stationary.png",
            &format!("{} stationary solution", r.model.name),
            &[("stationary.csv".into(), "u".into())],
        )?;
    }
    let (mn, mx) = state_range(&u);
    println!(
        "stationary {}: {} Newton iterations, values in [{:.6}, {:.6}], wrote {}",
        r.model.name,
        stats.iters,
        mn,
        mx,
        r.out_dir.display()
    );

    if let Some(g2) = &r.paired_source {
        let g1 = source_cell_averages(&r.model, &r.mesh);
        let g2 = cell_averages(g2, &r.mesh);
        let probe = resolvent_probe(&r.model, &r.mesh, &flux, &r.solver, &g1, &g2)?;
        let contraction_slack = probe.solution_distance - probe.source_distance;
        let t_contraction_slack = probe.solution_pos_distance - probe.source_pos_distance;
        // Nonpositive up to accumulation rounding of the two L1 sums.
        let slack_tol = 1e-12 * (1.0 + probe.source_distance.abs());
        let report_path = r.out_dir.join("contraction_report.txt");
        let text = format!(
            "source_distance: {:.16e}\nsolution_distance: {:.16e}\n\
             contraction_violation: {:.16e}\nsource_pos_distance: {:.16e}\n\
             solution_pos_distance: {:.16e}\nt_contraction_violation: {:.16e}\n\
             ordering_defect: {}\nverdict: {}\n",
            probe.source_distance,
            probe.solution_distance,
            contraction_slack,
            probe.source_pos_distance,
            probe.solution_pos_distance,
            t_contraction_slack,
            match probe.ordering_defect {
                Some(d) => format!("{d:.16e}"),
                None => "n/a (sources not ordered)".to_string(),
            },
            if contraction_slack <= slack_tol && t_contraction_slack <= slack_tol {
                "pass"
            } else {
                "fail"
            }
        );
        std::fs::write(&report_path, text)
            .map_err(|source| io::IoError::File { path: report_path.clone(), source })?;
        println!(
            "contraction probe: |u1-u2| = {:.6e} vs |g1-g2| = {:.6e} (violation {:.3e})",
            probe.solution_distance, probe.source_distance, contraction_slack
        );
    }
    Ok(())
}

fn cmd_verify(args: &JobArgs) -> Result<(), Error> {
    let (raw, r) = load(args)?;
    ensure_dir(&r.out_dir)?;
    let flux = NumericalFlux::new(r.flux_kind, &r.model);
    let sol = match &r.trajectory {
        Some(path) => {
            let traj = io::read_trajectory_file(path)?;
            if traj.dim != r.mesh.dim() {
                return Err(ConfigError::Invalid {
                    msg: format!(
                        "trajectory is {}-dimensional, mesh is {}-dimensional",
                        traj.dim,
                        r.mesh.dim()
                    ),
                }
                .into());
            }
            if traj.centers.len() != r.mesh.n_volumes() {
                return Err(ConfigError::Invalid {
                    msg: format!(
                        "trajectory has {} cells, configured mesh has {}",
                        traj.centers.len(),
                        r.mesh.n_volumes()
                    ),
                }
                .into());
            }
            let tol = 1e-9 * r.mesh.h().max(1.0);
            for (c, v) in traj.centers.iter().zip(r.mesh.volumes()) {
                if (c[0] - v.center[0]).abs() > tol || (c[1] - v.center[1]).abs() > tol {
                    return Err(ConfigError::Invalid {
                        msg: "trajectory was recorded on a different mesh".into(),
                    }
                    .into());
                }
            }
            let dt = traj.dt.ok_or_else(|| ConfigError::Invalid {
                msg: "trajectory has a single time slice; nothing to certify".into(),
            })?;
            DiscreteSolution::from_states(
                Arc::clone(&r.mesh),
                Arc::clone(&r.model),
                r.flux_kind,
                r.stepping,
                dt,
                traj.states,
            )?
        }
        None => {
            run_evolution(&r.model, &r.mesh, &flux, r.stepping, &r.solver, r.dt, r.model.t_end)?
        }
    };

    // A defaulted budget tracks the audited run, not the configured one.
    let budget = match raw.diagnostics.nu_budget {
        Some(b) => b,
        None => r.mesh.h() + sol.dt(),
    };
    let levels = entropy_levels(&r.model, r.k_grid);
    let xis = canonical_test_functions(&r.model.domain, sol.t_end());
    let report = entropy_sweep(&sol, &flux, &levels, &xis);
    let drift = mass_drift(&sol);

    io::write_sweep_csv(&r.out_dir.join("entropy_sweep.csv"), &report, &xis)?;
    io::write_sweep_summary(&r.out_dir.join("verify_summary.txt"), &report, &xis, budget)?;
    io::write_manifest(&r.out_dir.join("manifest.toml"), "verify", &r.document, &r.mesh, None)?;

    let mut failures = Vec::new();
    if report.min_residual < -budget {
        let detail = report
            .worst
            .map(|w| {
                let xi = &xis[w.xi];
                format!(
                    " at level {:.6} with support t in [{:.4}, {:.4}], x in [{:.4}, {:.4}]",
                    w.level, xi.t_window.0, xi.t_window.1, xi.x_window.0, xi.x_window.1
                )
            })
            .unwrap_or_default();
        failures.push(format!(
            "entropy residual {:.6e} below budget -{:.6e}{detail}",
            report.min_residual, budget
        ));
    }
    let mass_tol = 1e-10 * drift.initial.abs().max(1.0);
    if drift.worst_abs > mass_tol {
        let step = drift
            .series
            .iter()
            .position(|d| d.abs() > mass_tol)
            .unwrap_or(0);
        failures.push(format!(
            "mass drift {:.6e} (tolerance {mass_tol:.1e}) first exceeded at step {step}",
            drift.worst_abs
        ));
    }
    if !failures.is_empty() {
        return Err(Error::Verification { msg: failures.join("; ") });
    }
    println!(
        "verify {}: {} cases, min residual {:.6e} within budget {:.6e}, mass drift {:.3e}{}",
        r.model.name,
        report.cases.len(),
        report.min_residual,
        budget,
        drift.worst_abs,
        match report.saturation {
            Some(s) => format!(", saturation {s:.3e}"),
            None => String::new(),
        }
    );
    Ok(())
}

/// Runs ladder levels on up to `jobs` worker threads; results are ordered
/// and identical to the sequential path.
fn run_ladder_jobs(
    r: &Resolved,
    levels: &[(usize, f64)],
    t_end: f64,
    jobs: usize,
) -> Result<Vec<DiscreteSolution>, Error> {
    let (a, b) = check_ladder(&r.model, levels)?;
    let slots: Vec<Mutex<Option<Result<DiscreteSolution, SchemeError>>>> =
        levels.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = jobs.max(1).min(levels.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= levels.len() {
                    break;
                }
                let (n, dt) = levels[i];
                let res = Mesh::interval(a, b, n, None).map_err(SchemeError::from).and_then(
                    |mesh| {
                        let mesh = Arc::new(mesh);
                        let flux = NumericalFlux::new(r.flux_kind, &r.model);
                        run_evolution(&r.model, &mesh, &flux, r.stepping, &r.solver, dt, t_end)
                    },
                );
                *slots[i].lock().expect("no panics hold this lock") = Some(res);
            });
        }
    });
    let mut out = Vec::with_capacity(levels.len());
    for slot in slots {
        out.push(slot.into_inner().expect("worker finished").expect("every slot filled")?);
    }
    Ok(out)
}

fn cmd_converge(args: &JobArgs) -> Result<(), Error> {
    let (_, r) = load(args)?;
    ensure_dir(&r.out_dir)?;
    let runs = run_ladder_jobs(&r, &r.ladder, r.model.t_end, args.jobs)?;
    let report = refinement_report_from_runs(&runs, r.norm)?;
    io::write_ladder_csv(&r.out_dir.join("converge_levels.csv"), &report)?;
    io::write_cauchy_csv(&r.out_dir.join("converge_cauchy.csv"), &report)?;
    io::write_manifest(&r.out_dir.join("manifest.toml"), "converge", &r.document, &r.mesh, None)?;
    if r.emit_plots {
        io::write_ladder_plot_script(
            &r.out_dir.join("converge.gp"),
            "converge.png",
            "converge_levels.csv",
            3,
            8,
            "h",
            "l2h1",
        )?;
    }
    for (j, lv) in report.levels.iter().enumerate() {
        println!(
            "level {j}: n = {}, dt = {:.6e}, values in [{:.6}, {:.6}]",
            lv.n, lv.dt, lv.min_value, lv.max_value
        );
    }
    for (j, &e) in report.cauchy.iter().enumerate() {
        println!("e_{j} = {:.6e} (L{} distance of levels {j} and {})", e, report.p, j + 1);
    }
    let decreasing = report.cauchy.windows(2).all(|w| w[1] < w[0]);
    if !decreasing {
        return Err(Error::Verification {
            msg: format!("Cauchy distances do not decrease: {:?}", report.cauchy),
        });
    }
    println!("converge {}: Cauchy distances decrease", r.model.name);
    Ok(())
}

const FIG1_T: f64 = 1.5;
const FIG1_N: usize = 100;
const FIG1_LADDER: [usize; 3] = [100, 200, 400];
/// Time-step divisor for the flat-diffusion quadratic flux whose solution
/// leaves [0, u_max]: dt = h / 64 keeps the explicit scheme stable while
/// the boundary cell grows toward the pile-up value.
const FIG1B_DT_DIVISOR: f64 = 64.0;

fn fig1_document(name: &str, n: usize) -> Result<Resolved, Error> {
    let dt_line = if name == "fig1b" {
        format!("dt = {:e}\n", 1.0 / n as f64 / FIG1B_DT_DIVISOR)
    } else {
        String::new()
    };
    let text = format!(
        "[model]\npreset = \"{name}\"\nt_end = {FIG1_T}\n\n[mesh]\nn = {n}\n\n[scheme]\nstepping = \"explicit\"\n{dt_line}"
    );
    Ok(RunConfig::from_toml(&text)?.resolve()?)
}

fn cmd_reproduce_fig1(args: &ReproduceArgs) -> Result<(), Error> {
    ensure_dir(&args.out)?;
    let names = ["fig1a", "fig1b", "fig1c"];

    // Phase 1: the three profile runs.
    let profiles = parallel_map(args.jobs, &names, |name| -> Result<(), Error> {
        let r = fig1_document(name, FIG1_N)?;
        let flux = NumericalFlux::new(r.flux_kind, &r.model);
        let sol =
            run_evolution(&r.model, &r.mesh, &flux, r.stepping, &r.solver, r.dt, r.model.t_end)?;
        io::write_profile(&args.out.join(format!("{name}.csv")), &r.mesh, sol.state(sol.n_steps()))?;
        io::write_manifest(
            &args.out.join(format!("{name}.manifest.toml")),
            "reproduce-fig1",
            &r.document,
            &r.mesh,
            Some(sol.stats()),
        )?;
        let (mn, mx) = state_range(sol.state(sol.n_steps()));
        println!(
            "{name}: n = {FIG1_N}, T = {FIG1_T}, {} explicit steps, final values in [{mn:.6}, {mx:.6}]",
            sol.n_steps()
        );
        Ok(())
    });
    for res in profiles {
        res?;
    }

    // Phase 2: the boundary-layer ladder for the H1-violating case.
    let ladder_runs = parallel_map(args.jobs, &FIG1_LADDER, |&n| -> Result<DiscreteSolution, Error> {
        let r = fig1_document("fig1b", n)?;
        let flux = NumericalFlux::new(r.flux_kind, &r.model);
        Ok(run_evolution(&r.model, &r.mesh, &flux, r.stepping, &r.solver, r.dt, r.model.t_end)?)
    });
    let mut runs = Vec::with_capacity(FIG1_LADDER.len());
    for res in ladder_runs {
        runs.push(res?);
    }
    let probe = boundary_layer_probe(&runs, 0.1, 0.8)?;
    io::write_boundary_layer_csv(&args.out.join("fig1b_ladder.csv"), &probe)?;
    for lv in &probe.levels {
        println!(
            "fig1b ladder: n = {}, boundary max = {:.6}, interior L1 = {:.6e}",
            lv.n, lv.boundary_max, lv.interior_l1_norm
        );
    }

    if args.emit_plots {
        io::write_profile_plot_script(
            &args.out.join("fig1.gp"),
            "fig1.png",
            "final-time profiles",
            &names
                .iter()
                .map(|n| (format!("{n}.csv"), n.to_string()))
                .collect::<Vec<_>>(),
        )?;
        io::write_ladder_plot_script(
            &args.out.join("fig1b_ladder.gp"),
            "fig1b_ladder.png",
            "fig1b_ladder.csv",
            3,
            4,
            "h",
            "boundary cell max",
        )?;
    }
    println!("reproduce-fig1: wrote {}", args.out.display());
    Ok(())
}

/// Applies `f` to every item on up to `jobs` threads, preserving order.
fn parallel_map<T: Sync, R: Send>(
    jobs: usize,
    items: &[T],
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = jobs.max(1).min(items.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("no panics hold this lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("worker finished").expect("every slot filled"))
        .collect()
}
