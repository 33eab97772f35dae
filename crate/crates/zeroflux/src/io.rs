//! Run artifacts: trajectory and profile CSVs, per-step logs, diagnostic
//! report tables, manifests, and gnuplot scripts. Floats are written with
//! {:.16e} (17 significant digits), enough to reproduce every f64 exactly,
//! so identical runs emit bit-identical files.
//!
//! Trajectory CSV layout: header `t,cell,x,u` (`t,cell,x,y,u` in 2D), one
//! row per cell per stored state, cells in storage order, states in time
//! order. The reader accepts exactly that shape and nothing else:
//! corrupted structure fails with the offending line, while corrupted
//! values are left to the diagnostics to expose.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::diagnostics::{BoundaryLayerReport, EntropyReport, RefinementReport, TestFunction};
use crate::mesh::{Geometry, Mesh};
use crate::scheme::{DiscreteSolution, RunStats};
use crate::util::discrete_mass;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}: {msg}")]
    Malformed { origin: String, line: usize, msg: String },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

/// 17 significant digits: exact round-trip for every f64.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trajectory(path: &Path, sol: &DiscreteSolution) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(file_err(path))?);
    let dim = sol.mesh().dim();
    let mut run = || -> std::io::Result<()> {
        if dim == 1 {
            writeln!(w, "t,cell,x,u")?;
        } else {
            writeln!(w, "t,cell,x,y,u")?;
        }
        for (n, state) in sol.states().iter().enumerate() {
            let t = n as f64 * sol.dt();
            for (k, (&u, v)) in state.iter().zip(sol.mesh().volumes()).enumerate() {
                if dim == 1 {
                    writeln!(w, "{},{k},{},{}", fmt(t), fmt(v.center[0]), fmt(u))?;
                } else {
                    writeln!(
                        w,
                        "{},{k},{},{},{}",
                        fmt(t),
                        fmt(v.center[0]),
                        fmt(v.center[1]),
                        fmt(u)
                    )?;
                }
            }
        }
        w.flush()
    };
    run().map_err(file_err(path))
}

/// A trajectory as read back from disk; shape-validated, values verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: u8,
    pub times: Vec<f64>,
    pub centers: Vec<[f64; 2]>,
    pub states: Vec<Vec<f64>>,
    /// Uniform step size; None for a single-slice file.
    pub dt: Option<f64>,
}

pub fn read_trajectory_file(path: &Path) -> Result<Trajectory, IoError> {
    let file = File::open(path).map_err(file_err(path))?;
    read_trajectory(BufReader::new(file), &path.display().to_string())
}

/// Parses a trajectory CSV from any reader. `origin` names the source in
/// errors. Never panics on malformed input; memory use is proportional to
/// the input size.
pub fn read_trajectory<R: BufRead>(reader: R, origin: &str) -> Result<Trajectory, IoError> {
    let bad = |line: usize, msg: String| IoError::Malformed {
        origin: origin.to_string(),
        line,
        msg,
    };
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| bad(1, "empty file".into()))?;
    let header = header.map_err(|e| bad(1, format!("unreadable line: {e}")))?;
    let dim: u8 = match header.trim_end_matches('\r') {
        "t,cell,x,u" => 1,
        "t,cell,x,y,u" => 2,
        other => {
            return Err(bad(1, format!("unrecognized header {other:?}")));
        }
    };
    let n_cols = if dim == 1 { 4 } else { 5 };

    let mut times: Vec<f64> = Vec::new();
    let mut centers: Vec<[f64; 2]> = Vec::new();
    let mut states: Vec<Vec<f64>> = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let mut n_cells: Option<usize> = None;

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| bad(line_no, format!("unreadable line: {e}")))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = [""; 5];
        let mut count = 0;
        for part in line.split(',') {
            if count == n_cols {
                return Err(bad(line_no, format!("expected {n_cols} columns")));
            }
            fields[count] = part;
            count += 1;
        }
        if count != n_cols {
            return Err(bad(line_no, format!("expected {n_cols} columns, got {count}")));
        }
        let t: f64 = fields[0]
            .parse()
            .map_err(|_| bad(line_no, format!("bad time value {:?}", fields[0])))?;
        let cell: usize = fields[1]
            .parse()
            .map_err(|_| bad(line_no, format!("bad cell index {:?}", fields[1])))?;
        let x: f64 = fields[2]
            .parse()
            .map_err(|_| bad(line_no, format!("bad x value {:?}", fields[2])))?;
        let y: f64 = if dim == 2 {
            fields[3]
                .parse()
                .map_err(|_| bad(line_no, format!("bad y value {:?}", fields[3])))?
        } else {
            0.0
        };
        let u: f64 = fields[n_cols - 1]
            .parse()
            .map_err(|_| bad(line_no, format!("bad value {:?}", fields[n_cols - 1])))?;
        if !(t.is_finite() && x.is_finite() && y.is_finite() && u.is_finite()) {
            return Err(bad(line_no, "non-finite entry".into()));
        }

        if cell == 0 && !current.is_empty() {
            // Close the previous slice.
            match n_cells {
                None => n_cells = Some(current.len()),
                Some(n) if current.len() != n => {
                    return Err(bad(
                        line_no,
                        format!("time slice has {} cells, expected {n}", current.len()),
                    ));
                }
                Some(_) => {}
            }
            states.push(std::mem::take(&mut current));
        }
        if cell != current.len() {
            return Err(bad(
                line_no,
                format!("cell index {cell} out of order, expected {}", current.len()),
            ));
        }
        if let Some(n) = n_cells {
            if cell >= n {
                return Err(bad(line_no, format!("cell index {cell} exceeds slice size {n}")));
            }
        }

        if current.is_empty() {
            // First row of a slice fixes its time.
            match times.last() {
                Some(&prev) if t <= prev => {
                    return Err(bad(
                        line_no,
                        format!("time {t} does not increase past {prev}"),
                    ));
                }
                _ => {}
            }
            times.push(t);
        } else {
            let slice_t = *times.last().expect("slice time recorded");
            if (t - slice_t).abs() > 1e-12 * slice_t.abs().max(1.0) {
                return Err(bad(
                    line_no,
                    format!("time {t} differs from the slice time {slice_t}"),
                ));
            }
        }

        if states.is_empty() {
            centers.push([x, y]);
        } else {
            let c = centers[cell];
            let tol = 1e-12 * (c[0].abs() + c[1].abs()).max(1.0);
            if (x - c[0]).abs() > tol || (y - c[1]).abs() > tol {
                return Err(bad(
                    line_no,
                    format!("cell {cell} moved: ({x}, {y}) vs ({}, {})", c[0], c[1]),
                ));
            }
        }
        current.push(u);
    }

    if current.is_empty() {
        return Err(IoError::Malformed {
            origin: origin.to_string(),
            line: 1,
            msg: "no data rows".into(),
        });
    }
    if let Some(n) = n_cells {
        if current.len() != n {
            return Err(IoError::Malformed {
                origin: origin.to_string(),
                line: 0,
                msg: format!("final time slice truncated: {} of {n} cells", current.len()),
            });
        }
    }
    states.push(current);

    let dt = if times.len() >= 2 {
        let d0 = times[1] - times[0];
        for (j, w) in times.windows(2).enumerate() {
            let d = w[1] - w[0];
            if (d - d0).abs() > 1e-9 * d0.abs().max(1e-12) {
                return Err(IoError::Malformed {
                    origin: origin.to_string(),
                    line: 0,
                    msg: format!(
                        "non-uniform time steps: slice {} spacing {d}, expected {d0}",
                        j + 1
                    ),
                });
            }
        }
        Some(d0)
    } else {
        None
    };

    Ok(Trajectory { dim, times, centers, states, dt })
}

/// Single-state profile: columns x[,y],u.
pub fn write_profile(path: &Path, mesh: &Mesh, state: &[f64]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(file_err(path))?);
    let mut run = || -> std::io::Result<()> {
        if mesh.dim() == 1 {
            writeln!(w, "x,u")?;
            for (v, &u) in mesh.volumes().iter().zip(state) {
                writeln!(w, "{},{}", fmt(v.center[0]), fmt(u))?;
            }
        } else {
            writeln!(w, "x,y,u")?;
            for (v, &u) in mesh.volumes().iter().zip(state) {
                writeln!(w, "{},{},{}", fmt(v.center[0]), fmt(v.center[1]), fmt(u))?;
            }
        }
        w.flush()
    };
    run().map_err(file_err(path))
}

/// Per-step audit log: mass, bounds and Newton effort for every stored
/// state. Row n describes state n; the solver columns belong to the step
/// that produced it (zeros for n = 0 and for explicit runs).
pub fn write_step_log(path: &Path, sol: &DiscreteSolution) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(file_err(path))?);
    let mut run = || -> std::io::Result<()> {
        writeln!(w, "step,t,mass,min,max,newton_iters,newton_residual")?;
        for (n, state) in sol.states().iter().enumerate() {
            let mass = discrete_mass(sol.mesh(), state);
            let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
            for &v in state {
                mn = mn.min(v);
                mx = mx.max(v);
            }
            let (iters, residual) = if n == 0 {
                (0, 0.0)
            } else {
                let st = sol.step_stats()[n - 1];
                (st.iters, st.residual)
            };
            writeln!(
                w,
                "{n},{},{},{},{},{iters},{}",
                fmt(n as f64 * sol.dt()),
                fmt(mass),
                fmt(mn),
                fmt(mx),
                fmt(residual)
            )?;
        }
        w.flush()
    };
    run().map_err(file_err(path))
}

/// Entropy sweep table: one row per (level, test function) case.
pub fn write_sweep_csv(
    path: &Path,
    report: &EntropyReport,
    xis: &[TestFunction],
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(file_err(path))?);
    let mut run = || -> std::io::Result<()> {
        writeln!(w, "level,xi,t_lo,t_hi,x_lo,x_hi,y_lo,y_hi,residual")?;
        for case in &report.cases {
            let xi = &xis[case.xi];
            let (ylo, yhi) = xi.y_window.unwrap_or((f64::NAN, f64::NAN));
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                fmt(case.level),
                case.xi,
                fmt(xi.t_window.0),
                fmt(xi.t_window.1),
                fmt(xi.x_window.0),
                fmt(xi.x_window.1),
                fmt(ylo),
                fmt(yhi),
                fmt(case.residual)
            )?;
        }
        w.flush()
    };
    run().map_err(file_err(path))
}

/// Human-readable verdict companion to the sweep table.
pub fn write_sweep_summary(
    path: &Path,
    report: &EntropyReport,
    xis: &[TestFunction],
    budget: f64,
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(file_err(path))?);
    let mut run = || -> std::io::Result<()> {
        let pass = report.min_residual >= -budget;
        writeln!(w, "cases: {}", report.cases.len())?;
        writeln!(w, "min_residual: {}", fmt(report.min_residual))?;
        writeln!(w, "budget: {}", fmt(budget))?;
        match report.saturation {
            Some(s) => writeln!(w, "saturation: {}", fmt(s))?,
            None => writeln!(w, "saturation: n/a (no degenerate level)")?,
        }
        if let Some(worst) = &report.worst {
            let xi = &xis[worst.xi];
            writeln!(
                w,
                "worst case: level {} with support t in [{}, {}], x in [{}, {}]",
                fmt(worst.level),
                fmt(xi.t_window.0),
                fmt(xi.t_window.1),
                fmt(xi.x_window.0),
                fmt(xi.x_window.1)
            )?;
        }
        writeln!(w, "verdict: {}", if pass { "pass" } else { "fail" })?;
        w.flush()
    };
    run().map_err(file_err(path))
}

/// Convergence table: per-level metrics, then the Cauchy distances.
pub fn write_ladder_csv(path: &Path, report: &RefinementReport) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(file_err(path))?);
    let mut run = || -> std::io::Result<()> {
        writeln!(w, "level,n,h,dt,mass_relative_drift,min,max,weak_bv_scaled,l2h1")?;
        for (j, lv) in report.levels.iter().enumerate() {
            writeln!(
                w,
                "{j},{},{},{},{},{},{},{},{}",
                lv.n,
                fmt(lv.h),
                fmt(lv.dt),
                fmt(lv.mass_relative_drift),
                fmt(lv.min_value),
                fmt(lv.max_value),
                fmt(lv.weak_bv_scaled),
                fmt(lv.l2h1)
            )?;
        }
        w.flush()
    };
    run().map_err(file_err(path))
}

pub fn write_cauchy_csv(path: &Path, report: &RefinementReport) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(file_err(path))?);
    let mut run = || -> std::io::Result<()> {
        writeln!(w, "pair,p,e,ratio_to_next")?;
        for (j, &e) in report.cauchy.iter().enumerate() {
            let ratio = report.ratios.get(j).copied().unwrap_or(f64::NAN);
            writeln!(w, "{j},{},{},{}", fmt(report.p), fmt(e), fmt(ratio))?;
        }
        w.flush()
    };
    run().map_err(file_err(path))
}

pub fn write_boundary_layer_csv(path: &Path, report: &BoundaryLayerReport) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(file_err(path))?);
    let mut run = || -> std::io::Result<()> {
        writeln!(w, "level,n,h,boundary_max,interior_l1_norm,interior_diff_to_prev")?;
        for (j, lv) in report.levels.iter().enumerate() {
            let diff = if j == 0 {
                f64::NAN
            } else {
                report.interior_diffs[j - 1]
            };
            writeln!(
                w,
                "{j},{},{},{},{},{}",
                lv.n,
                fmt(lv.h),
                fmt(lv.boundary_max),
                fmt(lv.interior_l1_norm),
                fmt(diff)
            )?;
        }
        w.flush()
    };
    run().map_err(file_err(path))
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    tool: &'static str,
    version: &'static str,
}

#[derive(Serialize)]
struct MeshBlock {
    dimension: u8,
    cells: usize,
    h: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ny: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ly: Option<f64>,
}

impl MeshBlock {
    fn describe(mesh: &Mesh) -> MeshBlock {
        let mut block = MeshBlock {
            dimension: mesh.dim(),
            cells: mesh.n_volumes(),
            h: mesh.h(),
            a: None,
            b: None,
            n: None,
            edges: None,
            nx: None,
            ny: None,
            lx: None,
            ly: None,
        };
        match &mesh.geometry {
            Geometry::Interval { edges } => {
                let n = edges.len() - 1;
                block.a = Some(edges[0]);
                block.b = Some(edges[n]);
                block.n = Some(n);
                let uniform = (edges[n] - edges[0]) / n as f64;
                let graded = edges
                    .iter()
                    .enumerate()
                    .any(|(i, &e)| (e - (edges[0] + i as f64 * uniform)).abs() > 1e-12);
                if graded {
                    block.edges = Some(edges.clone());
                }
            }
            Geometry::Rect { nx, ny, lx, ly, .. } => {
                block.nx = Some(*nx);
                block.ny = Some(*ny);
                block.lx = Some(*lx);
                block.ly = Some(*ly);
            }
        }
        block
    }
}

#[derive(Serialize)]
struct StatsBlock {
    steps: usize,
    total_newton_iters: usize,
    max_step_iters: usize,
    mean_step_iters: f64,
    worst_residual: f64,
}

#[derive(Serialize)]
struct ManifestDoc<'a> {
    run: RunMeta<'a>,
    #[serde(flatten)]
    config: &'a RunConfig,
    mesh_layout: MeshBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    stats: Option<StatsBlock>,
}

/// Reproducibility manifest: the fully resolved config (defaults
/// included), the realized mesh layout, and solver statistics.
pub fn write_manifest(
    path: &Path,
    command: &str,
    config: &RunConfig,
    mesh: &Mesh,
    stats: Option<&RunStats>,
) -> Result<(), IoError> {
    let doc = ManifestDoc {
        run: RunMeta { command, tool: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION") },
        config,
        mesh_layout: MeshBlock::describe(mesh),
        stats: stats.map(|s| StatsBlock {
            steps: s.steps,
            total_newton_iters: s.total_newton_iters,
            max_step_iters: s.max_step_iters,
            mean_step_iters: if s.steps == 0 {
                0.0
            } else {
                s.total_newton_iters as f64 / s.steps as f64
            },
            worst_residual: s.worst_residual,
        }),
    };
    let text = toml::to_string_pretty(&doc).map_err(|e| IoError::Malformed {
        origin: path.display().to_string(),
        line: 0,
        msg: format!("cannot serialize manifest: {e}"),
    })?;
    std::fs::write(path, text).map_err(file_err(path))
}

/// Gnuplot script plotting each (csv, title) pair as a line; generic data
/// renderer with no runtime dependency from this crate.
pub fn write_profile_plot_script(
    path: &Path,
    png_name: &str,
    title: &str,
    series: &[(String, String)],
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(file_err(path))?);
    let mut run = || -> std::io::Result<()> {
        writeln!(w, "set terminal pngcairo size 900,600")?;
        writeln!(w, "set output '{png_name}'")?;
        writeln!(w, "set datafile separator ','")?;
        writeln!(w, "set title '{title}'")?;
        writeln!(w, "set xlabel 'x'")?;
        writeln!(w, "set ylabel 'u'")?;
        writeln!(w, "set key top right")?;
        write!(w, "plot ")?;
        for (i, (csv, label)) in series.iter().enumerate() {
            if i > 0 {
                write!(w, ", \\\n     ")?;
            }
            write!(w, "'{csv}' using 1:2 skip 1 with steps title '{label}'")?;
        }
        writeln!(w)?;
        w.flush()
    };
    run().map_err(file_err(path))
}

/// Gnuplot script for ladder curves (column pairs from a report CSV).
pub fn write_ladder_plot_script(
    path: &Path,
    png_name: &str,
    csv_name: &str,
    x_col: usize,
    y_col: usize,
    x_label: &str,
    y_label: &str,
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(file_err(path))?);
    let mut run = || -> std::io::Result<()> {
        writeln!(w, "set terminal pngcairo size 900,600")?;
        writeln!(w, "set output '{png_name}'")?;
        writeln!(w, "set datafile separator ','")?;
        writeln!(w, "set logscale x")?;
        writeln!(w, "set xlabel '{x_label}'")?;
        writeln!(w, "set ylabel '{y_label}'")?;
        writeln!(
            w,
            "plot '{csv_name}' using {x_col}:{y_col} skip 1 with linespoints title '{y_label}'"
        )?;
        w.flush()
    };
    run().map_err(file_err(path))
}
