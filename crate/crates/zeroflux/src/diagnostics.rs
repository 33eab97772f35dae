//! Certification of the structural properties a run is supposed to inherit
//! from the continuous problem: entropy inequalities tested against
//! Kruzhkov pairs, exact mass balance, interface-jump functionals bounded
//! by the energy estimates, and Cauchy behavior under mesh refinement.
//!
//! The entropy certificate evaluates, for a level k and a nonnegative test
//! function xi(t, x) = theta(t) psi(x), the discrete pairing
//!
//!   E(k, xi) = sum_n sum_K m(K) |u_K^{n+1} - k| (xi_K^{n+1} - xi_K^n)
//!            + sum_n dt sum_sigma Q^k_sigma (xi_P^n - xi_M^n)
//!            + sum_n dt sum_bnd m(bf) |f(k) . n| xi_K^n
//!            + sum_K m(K) |u_K^0 - k| xi_K^0
//!            - sum_K m(K) |u_K^N - k| xi_K^N
//!
//! where Q^k is the numerical entropy flux (Crandall-Majda convection plus
//! the diffusion jump of |phi(.) - phi(k)|), evaluated at the implicit or
//! explicit state according to how the run was produced. Summing the
//! cellwise entropy inequality of the scheme against xi telescopes exactly
//! into E, so E must be nonnegative up to rounding; no quadrature gap
//! enters because only point values of xi are used. The boundary term
//! compensates the defect a level with f(k) != 0 picks up at zero-flux
//! walls. At k = 0 and k = u_max (with f vanishing there) the pairing
//! degenerates to the mass balance and E sits at rounding level, which
//! pins the certificate's saturation.

use std::collections::HashMap;
use std::sync::Arc;

use crate::mesh::Mesh;
use crate::model::{Domain, Model};
use crate::numflux::{FluxKind, NumericalFlux};
use crate::scheme::{run_evolution, DiscreteSolution, SchemeError, SolverConfig, TimeStepping};
use crate::util::{discrete_mass, kahan_sum};

/// Smooth compactly supported bump on (lo, hi): (1 - z^2)^3 in the window's
/// normalized coordinate, zero outside. C^2 and exactly zero at the edges.
fn bump(s: f64, lo: f64, hi: f64) -> f64 {
    let z = (2.0 * s - lo - hi) / (hi - lo);
    if z.abs() >= 1.0 {
        0.0
    } else {
        let w = 1.0 - z * z;
        w * w * w
    }
}

/// Nonnegative tensor test function theta(t) psi(x) (psi(x) psi(y) in 2D).
/// Windows may extend beyond the domain or the time horizon; only the
/// restriction to the run matters.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub t_window: (f64, f64),
    pub x_window: (f64, f64),
    pub y_window: Option<(f64, f64)>,
}

impl TestFunction {
    pub fn tensor_bump(t_window: (f64, f64), x_window: (f64, f64)) -> TestFunction {
        assert!(t_window.0 < t_window.1 && x_window.0 < x_window.1, "degenerate window");
        TestFunction { t_window, x_window, y_window: None }
    }

    pub fn tensor_bump_2d(
        t_window: (f64, f64),
        x_window: (f64, f64),
        y_window: (f64, f64),
    ) -> TestFunction {
        assert!(
            t_window.0 < t_window.1 && x_window.0 < x_window.1 && y_window.0 < y_window.1,
            "degenerate window"
        );
        TestFunction { t_window, x_window, y_window: Some(y_window) }
    }

    pub fn theta(&self, t: f64) -> f64 {
        bump(t, self.t_window.0, self.t_window.1)
    }

    pub fn psi(&self, p: [f64; 2]) -> f64 {
        let v = bump(p[0], self.x_window.0, self.x_window.1);
        match self.y_window {
            Some((lo, hi)) => v * bump(p[1], lo, hi),
            None => v,
        }
    }

    pub fn eval(&self, t: f64, p: [f64; 2]) -> f64 {
        self.theta(t) * self.psi(p)
    }

    fn spatial_key(&self) -> (u64, u64, Option<(u64, u64)>) {
        (
            self.x_window.0.to_bits(),
            self.x_window.1.to_bits(),
            self.y_window.map(|(a, b)| (a.to_bits(), b.to_bits())),
        )
    }
}

/// The standard family used by sweeps: 12 spatial windows (interior at
/// several scales, two overlapping the boundary, one covering everything)
/// crossed with 4 temporal windows (interior, ending exactly at T, active
/// at t = 0, straddling past T).
pub fn canonical_test_functions(domain: &Domain, t_end: f64) -> Vec<TestFunction> {
    let horizon = if t_end > 0.0 { t_end } else { 1.0 };
    let t_windows = [
        (0.15 * horizon, 0.70 * horizon),
        (0.40 * horizon, 1.00 * horizon),
        (-0.40 * horizon, 0.60 * horizon),
        (0.50 * horizon, 1.35 * horizon),
    ];
    let spans: [(f64, f64); 12] = [
        (0.075, 0.325),
        (0.225, 0.475),
        (0.375, 0.625),
        (0.525, 0.775),
        (0.675, 0.925),
        (0.05, 0.55),
        (0.25, 0.75),
        (0.45, 0.95),
        (0.05, 0.95),
        (-0.15, 0.25),
        (0.75, 1.15),
        (-0.2, 1.2),
    ];
    let mut out = Vec::with_capacity(48);
    match *domain {
        Domain::Interval { a, b } => {
            let w = b - a;
            for (i, &(lo, hi)) in spans.iter().enumerate() {
                for &tw in &t_windows {
                    let _ = i;
                    out.push(TestFunction::tensor_bump(tw, (a + lo * w, a + hi * w)));
                }
            }
        }
        Domain::Rectangle { lx, ly } => {
            for (i, &(lo, hi)) in spans.iter().enumerate() {
                // Alternate full-height and half-height windows in y.
                let yw = if i % 2 == 0 { (-0.1 * ly, 1.1 * ly) } else { (0.2 * ly, 0.9 * ly) };
                for &tw in &t_windows {
                    out.push(TestFunction::tensor_bump_2d(tw, (lo * lx, hi * lx), yw));
                }
            }
        }
    }
    out
}

/// Entropy levels for sweeps: `k_grid` uniform values on [0, u_max]
/// together with u_c and any slope transitions of phi (kinks), where the
/// inequality is most likely to be stressed.
pub fn entropy_levels(model: &Model, k_grid: usize) -> Vec<f64> {
    let k_grid = k_grid.max(2);
    let mut levels: Vec<f64> =
        (0..k_grid).map(|i| model.u_max * i as f64 / (k_grid - 1) as f64).collect();
    levels.push(model.u_c);
    // Sign-class transitions of phi' mark kinks and plateau edges.
    let n = 2048;
    let class = |s: f64| {
        let d = model.phi.deriv(s);
        if d > 1e-12 {
            1i8
        } else if d < -1e-12 {
            -1
        } else {
            0
        }
    };
    let mut prev = class(0.0);
    for i in 1..=n {
        let s = model.u_max * i as f64 / n as f64;
        let cur = class(s);
        if cur != prev {
            let (mut lo, mut hi) = (model.u_max * (i - 1) as f64 / n as f64, s);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if class(mid) == prev {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            levels.push(0.5 * (lo + hi));
        }
        prev = cur;
    }
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup_by(|a, b| (*a - *b).abs() <= 1e-9);
    levels
}

pub fn default_entropy_levels(model: &Model) -> Vec<f64> {
    entropy_levels(model, 21)
}

/// Per-level accumulators for one spatial profile psi: A[j] pairs the
/// state at step j with psi, B[j] pairs the entropy fluxes of state j with
/// the psi jumps, and `boundary` is the k-dependent wall allowance.
struct PsiAccum {
    a: Vec<f64>,
    b: Vec<f64>,
    boundary: f64,
}

/// Interface entropy-flux terms Q^k_sigma for every stored state. These
/// are independent of the test function, so the sweep computes them once
/// per level and reuses them across the spatial profiles.
fn level_face_flux(sol: &DiscreteSolution, flux: &NumericalFlux, k: f64) -> Vec<Vec<f64>> {
    let mesh = sol.mesh();
    let model = sol.model();
    let phi_k = model.phi.eval(k);
    sol.states()
        .iter()
        .map(|u| {
            mesh.inner_faces()
                .iter()
                .map(|face| {
                    let (x, y) = (u[face.minus], u[face.plus]);
                    let conv = if face.axis == 0 {
                        face.measure * flux.entropy_pair(x, y, k)
                    } else {
                        0.0
                    };
                    conv - face.transmissivity
                        * ((model.phi.eval(y) - phi_k).abs() - (model.phi.eval(x) - phi_k).abs())
                })
                .collect()
        })
        .collect()
}

fn accumulate_for_psi(sol: &DiscreteSolution, k: f64, q: &[Vec<f64>], psi: &[f64]) -> PsiAccum {
    let mesh = sol.mesh();
    let model = sol.model();
    let n_states = sol.states().len();
    let mut a = Vec::with_capacity(n_states);
    let mut b = Vec::with_capacity(n_states);
    for (u, qj) in sol.states().iter().zip(q) {
        a.push(kahan_sum(
            mesh.volumes()
                .iter()
                .zip(u.iter().zip(psi))
                .map(|(v, (&x, &p))| v.measure * (x - k).abs() * p),
        ));
        b.push(kahan_sum(
            mesh.inner_faces()
                .iter()
                .zip(qj)
                .map(|(face, &qv)| qv * (psi[face.plus] - psi[face.minus])),
        ));
    }
    let fk = model.f.eval(k).abs();
    let boundary = kahan_sum(
        mesh.boundary_faces()
            .iter()
            .map(|bf| bf.measure * bf.normal[0].abs() * fk * psi[bf.volume]),
    );
    PsiAccum { a, b, boundary }
}

fn residual_from(acc: &PsiAccum, theta: &[f64], dt: f64, implicit: bool) -> f64 {
    let n_steps = theta.len() - 1;
    let time_terms = (0..n_steps).map(|n| (theta[n + 1] - theta[n]) * acc.a[n + 1]);
    let flux_terms = (0..n_steps).map(|n| {
        let j = if implicit { n + 1 } else { n };
        dt * theta[n] * (acc.b[j] + acc.boundary)
    });
    kahan_sum(
        time_terms
            .chain(flux_terms)
            .chain([theta[0] * acc.a[0], -theta[n_steps] * acc.a[n_steps]]),
    )
}

/// Entropy pairing E(k, xi) for one level and one test function.
pub fn entropy_residual(
    sol: &DiscreteSolution,
    flux: &NumericalFlux,
    k: f64,
    xi: &TestFunction,
) -> f64 {
    let psi: Vec<f64> = sol.mesh().volumes().iter().map(|v| xi.psi(v.center)).collect();
    let theta: Vec<f64> =
        (0..sol.states().len()).map(|n| xi.theta(n as f64 * sol.dt())).collect();
    let q = level_face_flux(sol, flux, k);
    let acc = accumulate_for_psi(sol, k, &q, &psi);
    residual_from(&acc, &theta, sol.dt(), sol.stepping() == TimeStepping::Implicit)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyCase {
    pub level: f64,
    pub xi: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct EntropyReport {
    pub cases: Vec<EntropyCase>,
    pub min_residual: f64,
    pub worst: Option<EntropyCase>,
    /// Largest |E| over the degenerate levels k = 0 and k = u_max where f
    /// vanishes; the pairing reduces to the mass balance there, so this
    /// measures how exactly the certificate telescopes. None if the model
    /// has no such level (convective flux active at both ends).
    pub saturation: Option<f64>,
}

/// Evaluates E(k, xi) over the level grid and test family. Work is shared
/// across test functions with the same spatial profile, so the canonical
/// 12 x 4 family costs 12 accumulator passes per level, not 48.
pub fn entropy_sweep(
    sol: &DiscreteSolution,
    flux: &NumericalFlux,
    levels: &[f64],
    xis: &[TestFunction],
) -> EntropyReport {
    let model = sol.model();
    let implicit = sol.stepping() == TimeStepping::Implicit;
    let mut groups: HashMap<(u64, u64, Option<(u64, u64)>), Vec<usize>> = HashMap::new();
    for (i, xi) in xis.iter().enumerate() {
        groups.entry(xi.spatial_key()).or_default().push(i);
    }
    let thetas: Vec<Vec<f64>> = xis
        .iter()
        .map(|xi| (0..sol.states().len()).map(|n| xi.theta(n as f64 * sol.dt())).collect())
        .collect();

    let mut cases = Vec::with_capacity(levels.len() * xis.len());
    for &k in levels {
        let q = level_face_flux(sol, flux, k);
        for members in groups.values() {
            let psi: Vec<f64> =
                sol.mesh().volumes().iter().map(|v| xis[members[0]].psi(v.center)).collect();
            let acc = accumulate_for_psi(sol, k, &q, &psi);
            for &i in members {
                let residual = residual_from(&acc, &thetas[i], sol.dt(), implicit);
                cases.push(EntropyCase { level: k, xi: i, residual });
            }
        }
    }

    let worst = cases.iter().copied().min_by(|a, b| a.residual.total_cmp(&b.residual));
    let min_residual = worst.map(|c| c.residual).unwrap_or(0.0);
    let degenerate = |k: f64| {
        (k == 0.0 || k == model.u_max) && model.f.eval(k).abs() <= 1e-12
    };
    let saturation = cases
        .iter()
        .filter(|c| degenerate(c.level))
        .map(|c| c.residual.abs())
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    EntropyReport { cases, min_residual, worst, saturation }
}

#[derive(Debug, Clone)]
pub struct MassDrift {
    pub initial: f64,
    /// mass(n) - mass(0) for every stored state, series[0] = 0.
    pub series: Vec<f64>,
    /// Largest |mass(n) - mass(0)| over the run.
    pub worst_abs: f64,
    /// worst_abs relative to max(|initial|, 1).
    pub relative: f64,
}

pub fn mass_drift(sol: &DiscreteSolution) -> MassDrift {
    let m0 = discrete_mass(sol.mesh(), sol.state(0));
    let series: Vec<f64> = sol
        .states()
        .iter()
        .map(|u| discrete_mass(sol.mesh(), u) - m0)
        .collect();
    let worst_abs = series.iter().fold(0.0_f64, |a, d| a.max(d.abs()));
    MassDrift { initial: m0, series, worst_abs, relative: worst_abs / m0.abs().max(1.0) }
}

/// Interface flux deviation functional: sum_n dt sum_sigma m(sigma)
/// (|G - f(u_M)| + |G - f(u_P)|) at the flux-carrying states. The scheme's
/// energy estimates bound it by C / sqrt(h), so its product with sqrt(h)
/// must stay bounded along refinement ladders.
pub fn weak_bv_functional(sol: &DiscreteSolution, flux: &NumericalFlux) -> f64 {
    let mesh = sol.mesh();
    let model = sol.model();
    let implicit = sol.stepping() == TimeStepping::Implicit;
    let n_steps = sol.n_steps();
    kahan_sum((0..n_steps).flat_map(|n| {
        let u = sol.state(if implicit { n + 1 } else { n });
        mesh.inner_faces().iter().map(move |face| {
            if face.axis != 0 {
                return 0.0;
            }
            let (a, b) = (u[face.minus], u[face.plus]);
            let g = flux.value_extended(a, b);
            sol.dt()
                * face.measure
                * ((g - model.f.eval(a)).abs() + (g - model.f.eval(b)).abs())
        })
    }))
}

/// Discrete space-time H1 functional of phi(u):
/// sum_n dt sum_sigma tau_sigma (phi(u_P) - phi(u_M))^2, uniformly bounded
/// by the scheme's energy estimate.
pub fn l2h1_functional(sol: &DiscreteSolution) -> f64 {
    let mesh = sol.mesh();
    let model = sol.model();
    let implicit = sol.stepping() == TimeStepping::Implicit;
    kahan_sum((0..sol.n_steps()).flat_map(|n| {
        let u = sol.state(if implicit { n + 1 } else { n });
        mesh.inner_faces().iter().map(move |face| {
            let d = model.phi.eval(u[face.plus]) - model.phi.eval(u[face.minus]);
            sol.dt() * face.transmissivity * d * d
        })
    }))
}

/// Total interface jump mass sum_sigma m(sigma) |u_P - u_M| of one state.
pub fn total_variation(mesh: &Mesh, u: &[f64]) -> f64 {
    kahan_sum(
        mesh.inner_faces().iter().map(|f| f.measure * (u[f.plus] - u[f.minus]).abs()),
    )
}

/// Largest interface jump mass over the whole run; monotone schemes must
/// not inflate it except through genuine boundary pile-up.
pub fn max_total_variation(sol: &DiscreteSolution) -> f64 {
    (0..sol.states().len())
        .map(|n| total_variation(sol.mesh(), sol.state(n)))
        .fold(0.0_f64, f64::max)
}

/// L^p distance over space-time between a run and a coarser run of the
/// same problem, using the coarse piecewise-constant reconstruction at the
/// fine cell centers and step times. Exact for nested grids.
pub fn space_time_lp_distance(
    fine: &DiscreteSolution,
    coarse: &DiscreteSolution,
    p: f64,
) -> Result<f64, SchemeError> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(SchemeError::Invalid { msg: format!("norm order must be >= 1, got {p}") });
    }
    let mesh = fine.mesh();
    let horizon = fine.t_end().min(coarse.t_end());
    let mut total = 0.0;
    for j in 1..fine.states().len() {
        let t = (j as f64 * fine.dt()).min(horizon);
        let u = fine.state(j);
        let mut step_sum = 0.0;
        for (k, v) in mesh.volumes().iter().enumerate() {
            let c = coarse.value_at(t, v.center)?;
            step_sum += v.measure * (u[k] - c).abs().powf(p);
        }
        total += fine.dt() * step_sum;
    }
    Ok(total.powf(1.0 / p))
}

/// Relative L1(Q) distance of a refinement pair:
/// |u_coarse - u_fine| / |u_fine|. A sequence of these along a ladder must
/// decay when the runs converge to a function rather than to an
/// oscillating limit.
pub fn oscillation_proxy(
    fine: &DiscreteSolution,
    coarse: &DiscreteSolution,
) -> Result<f64, SchemeError> {
    let num = space_time_lp_distance(fine, coarse, 1.0)?;
    let mesh = fine.mesh();
    let norm: f64 = (1..fine.states().len())
        .map(|j| {
            let u = fine.state(j);
            fine.dt()
                * kahan_sum(
                    mesh.volumes().iter().zip(u).map(|(v, &x)| v.measure * x.abs()),
                )
        })
        .sum();
    if norm == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(num / norm)
}

/// L1 distance between two runs at their common final time, restricted to
/// cells whose centers fall in [x_lo, x_hi].
pub fn interior_l1_difference(
    fine: &DiscreteSolution,
    coarse: &DiscreteSolution,
    x_lo: f64,
    x_hi: f64,
) -> Result<f64, SchemeError> {
    let t = fine.t_end().min(coarse.t_end());
    let uf = fine.state_at_time(t)?;
    let mut total = 0.0;
    for (k, v) in fine.mesh().volumes().iter().enumerate() {
        if v.center[0] < x_lo || v.center[0] > x_hi {
            continue;
        }
        total += v.measure * (uf[k] - coarse.value_at(t, v.center)?).abs();
    }
    Ok(total)
}

/// Largest value the last cell of an interval mesh takes over the run; the
/// probe for boundary-layer growth when f(u_max) != 0.
pub fn max_last_cell_value(sol: &DiscreteSolution) -> f64 {
    let last = sol.mesh().n_volumes() - 1;
    sol.states().iter().map(|u| u[last]).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy)]
pub struct LevelMetrics {
    pub n: usize,
    pub h: f64,
    pub dt: f64,
    pub mass_relative_drift: f64,
    pub min_value: f64,
    pub max_value: f64,
    /// weak_bv_functional * sqrt(h).
    pub weak_bv_scaled: f64,
    pub l2h1: f64,
}

#[derive(Debug, Clone)]
pub struct RefinementReport {
    /// Norm order of the Cauchy distances.
    pub p: f64,
    pub levels: Vec<LevelMetrics>,
    /// Space-time L^p distances between consecutive levels.
    pub cauchy: Vec<f64>,
    /// cauchy[j] / cauchy[j+1]; > 1 everywhere means contraction.
    pub ratios: Vec<f64>,
}

/// Runs the model at every (cells, dt) level of a nested ladder. Nested
/// means each cell count doubles its predecessor, so every coarse grid
/// embeds in the finer ones and piecewise-constant injection is exact.
/// Validates a ladder description: at least two levels, each cell count
/// doubling its predecessor, on an interval domain.
pub fn check_ladder(model: &Model, levels: &[(usize, f64)]) -> Result<(f64, f64), SchemeError> {
    let (a, b) = match model.domain {
        Domain::Interval { a, b } => (a, b),
        Domain::Rectangle { .. } => {
            return Err(SchemeError::Invalid {
                msg: "refinement ladders are defined on interval domains".into(),
            })
        }
    };
    if levels.len() < 2 {
        return Err(SchemeError::Invalid {
            msg: format!("a refinement ladder needs at least 2 levels, got {}", levels.len()),
        });
    }
    for w in levels.windows(2) {
        if w[1].0 != 2 * w[0].0 {
            return Err(SchemeError::Invalid {
                msg: format!(
                    "refinement levels must be nested (cell counts double): {} does not follow {}",
                    w[1].0, w[0].0
                ),
            });
        }
    }
    Ok((a, b))
}

pub fn run_ladder(
    model: &Arc<Model>,
    flux_kind: FluxKind,
    stepping: TimeStepping,
    cfg: &SolverConfig,
    levels: &[(usize, f64)],
    t_end: f64,
) -> Result<Vec<DiscreteSolution>, SchemeError> {
    let (a, b) = check_ladder(model, levels)?;
    let mut out = Vec::with_capacity(levels.len());
    for &(n, dt) in levels {
        let mesh = Arc::new(Mesh::interval(a, b, n, None)?);
        let flux = NumericalFlux::new(flux_kind, model);
        out.push(run_evolution(model, &mesh, &flux, stepping, cfg, dt, t_end)?);
    }
    Ok(out)
}

/// Convergence table over a nested ladder: per-level structural metrics
/// plus the L^p(Q) Cauchy distances e_j between consecutive levels and
/// their ratios e_j / e_{j+1}.
pub fn refinement_study(
    model: &Arc<Model>,
    flux_kind: FluxKind,
    stepping: TimeStepping,
    cfg: &SolverConfig,
    levels: &[(usize, f64)],
    p: f64,
    t_end: f64,
) -> Result<RefinementReport, SchemeError> {
    let runs = run_ladder(model, flux_kind, stepping, cfg, levels, t_end)?;
    refinement_report_from_runs(&runs, p)
}

/// Builds the convergence table from ladder runs produced elsewhere.
pub fn refinement_report_from_runs(
    runs: &[DiscreteSolution],
    p: f64,
) -> Result<RefinementReport, SchemeError> {
    if runs.len() < 2 {
        return Err(SchemeError::Invalid {
            msg: format!("a refinement ladder needs at least 2 levels, got {}", runs.len()),
        });
    }
    let mut metrics = Vec::with_capacity(runs.len());
    for sol in runs {
        let flux = NumericalFlux::new(sol.flux_kind(), sol.model());
        let drift = mass_drift(sol);
        let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
        for state in sol.states() {
            for &v in state {
                mn = mn.min(v);
                mx = mx.max(v);
            }
        }
        metrics.push(LevelMetrics {
            n: sol.mesh().n_volumes(),
            h: sol.mesh().h(),
            dt: sol.dt(),
            mass_relative_drift: drift.relative,
            min_value: mn,
            max_value: mx,
            weak_bv_scaled: weak_bv_functional(sol, &flux) * sol.mesh().h().sqrt(),
            l2h1: l2h1_functional(sol),
        });
    }
    let mut cauchy = Vec::with_capacity(runs.len() - 1);
    for w in runs.windows(2) {
        cauchy.push(space_time_lp_distance(&w[1], &w[0], p)?);
    }
    let ratios = cauchy.windows(2).map(|e| e[0] / e[1].max(1e-300)).collect();
    Ok(RefinementReport { p, levels: metrics, cauchy, ratios })
}

#[derive(Debug, Clone, Copy)]
pub struct BoundaryLayerLevel {
    pub n: usize,
    pub h: f64,
    /// Largest value the outflow-side boundary cell takes over the run.
    pub boundary_max: f64,
    /// L1 norm of the final state over the fixed interior window.
    pub interior_l1_norm: f64,
}

#[derive(Debug, Clone)]
pub struct BoundaryLayerReport {
    pub levels: Vec<BoundaryLayerLevel>,
    /// Interior L1 differences between consecutive levels at the final
    /// common time; decay here with boundary_max growth is the signature
    /// of a pile-up confined to the wall.
    pub interior_diffs: Vec<f64>,
}

/// Probes a ladder of runs for boundary-layer growth: tracks the maximum
/// of the last cell per level and the solution's interior L1 behavior on
/// [x_lo, x_hi].
pub fn boundary_layer_probe(
    ladder: &[DiscreteSolution],
    x_lo: f64,
    x_hi: f64,
) -> Result<BoundaryLayerReport, SchemeError> {
    if ladder.len() < 2 {
        return Err(SchemeError::Invalid {
            msg: format!("boundary layer probe needs at least 2 levels, got {}", ladder.len()),
        });
    }
    let mut levels = Vec::with_capacity(ladder.len());
    for sol in ladder {
        let last = sol.state(sol.n_steps());
        let norm = kahan_sum(
            sol.mesh()
                .volumes()
                .iter()
                .zip(last)
                .filter(|(v, _)| v.center[0] >= x_lo && v.center[0] <= x_hi)
                .map(|(v, &x)| v.measure * x.abs()),
        );
        levels.push(BoundaryLayerLevel {
            n: sol.mesh().n_volumes(),
            h: sol.mesh().h(),
            boundary_max: max_last_cell_value(sol),
            interior_l1_norm: norm,
        });
    }
    let mut interior_diffs = Vec::with_capacity(ladder.len() - 1);
    for w in ladder.windows(2) {
        interior_diffs.push(interior_l1_difference(&w[1], &w[0], x_lo, x_hi)?);
    }
    Ok(BoundaryLayerReport { levels, interior_diffs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, Model, ScalarFn, SpatialFn};
    use crate::numflux::FluxKind;

    fn short_run(name: &str, kind: FluxKind, n: usize, dt: f64, t: f64) -> (DiscreteSolution, NumericalFlux) {
        let model = Arc::new(builtin_model(name).unwrap());
        let mesh = Arc::new(Mesh::interval(0.0, 1.0, n, None).unwrap());
        let flux = NumericalFlux::new(kind, &model);
        let cfg = SolverConfig::default();
        let sol =
            run_evolution(&model, &mesh, &flux, TimeStepping::Implicit, &cfg, dt, t).unwrap();
        (sol, flux)
    }

    #[test]
    fn bump_is_smooth_compact_and_nonnegative() {
        assert_eq!(bump(0.0, 0.0, 1.0), 0.0);
        assert_eq!(bump(1.0, 0.0, 1.0), 0.0);
        assert_eq!(bump(-0.2, 0.0, 1.0), 0.0);
        assert_eq!(bump(0.5, 0.0, 1.0), 1.0);
        for i in 0..=100 {
            assert!(bump(i as f64 / 100.0, 0.0, 1.0) >= 0.0);
        }
    }

    #[test]
    fn canonical_family_covers_the_required_placements() {
        let xis = canonical_test_functions(&Domain::Interval { a: 0.0, b: 1.0 }, 0.5);
        assert_eq!(xis.len(), 48);
        // Some are active at t = 0 (initial term exercised).
        assert!(xis.iter().any(|xi| xi.theta(0.0) > 0.0));
        // Some are active at t = T (final term exercised).
        assert!(xis.iter().any(|xi| xi.theta(0.5) > 0.0));
        // Some overlap each boundary.
        assert!(xis.iter().any(|xi| xi.psi([0.0, 0.0]) > 0.0));
        assert!(xis.iter().any(|xi| xi.psi([1.0, 0.0]) > 0.0));
        // And all are nonnegative with the right tensor structure.
        for xi in &xis {
            assert!(xi.eval(0.25, [0.5, 0.0]) >= 0.0);
        }
    }

    #[test]
    fn entropy_levels_include_endpoints_threshold_and_kinks() {
        let model = builtin_model("fig1c").unwrap();
        let levels = default_entropy_levels(&model);
        assert!(levels.first().copied() == Some(0.0));
        assert!((levels.last().copied().unwrap() - 1.0).abs() < 1e-15);
        assert!(
            levels.iter().any(|&k| (k - 0.6).abs() < 1e-6),
            "threshold u_c = 0.6 missing from {levels:?}"
        );
    }

    #[test]
    fn entropy_certificate_holds_and_saturates_for_transport() {
        let (sol, flux) = short_run("fig1a", FluxKind::Godunov, 50, 0.005, 0.25);
        let levels = default_entropy_levels(sol.model());
        let xis = canonical_test_functions(&sol.model().domain, 0.25);
        let report = entropy_sweep(&sol, &flux, &levels, &xis);
        assert_eq!(report.cases.len(), levels.len() * xis.len());
        assert!(
            report.min_residual >= -1e-10,
            "entropy inequality violated: {:?}",
            report.worst
        );
        let sat = report.saturation.expect("both endpoints are degenerate for fig1a");
        assert!(sat <= 1e-10, "saturation {sat:e} too far from the mass balance");
    }

    #[test]
    fn entropy_certificate_holds_with_degenerate_diffusion() {
        for kind in FluxKind::all() {
            let (sol, flux) = short_run("fig1c", kind, 40, 0.005, 0.2);
            let levels = default_entropy_levels(sol.model());
            let xis = canonical_test_functions(&sol.model().domain, 0.2);
            let report = entropy_sweep(&sol, &flux, &levels, &xis);
            assert!(
                report.min_residual >= -1e-10,
                "{kind}: entropy inequality violated: {:?}",
                report.worst
            );
            assert!(report.saturation.unwrap() <= 1e-10, "{kind}");
        }
    }

    #[test]
    fn entropy_certificate_holds_for_explicit_runs() {
        let model = Arc::new(builtin_model("fig1a").unwrap());
        let mesh = Arc::new(Mesh::interval(0.0, 1.0, 50, None).unwrap());
        let flux = NumericalFlux::new(FluxKind::Godunov, &model);
        let cfg = SolverConfig::default();
        let dt = 0.9 * crate::scheme::cfl_limit(&model, &mesh, &flux, cfg.cfl_safety);
        let sol =
            run_evolution(&model, &mesh, &flux, TimeStepping::Explicit, &cfg, dt, 0.05).unwrap();
        let levels = default_entropy_levels(&model);
        let xis = canonical_test_functions(&model.domain, sol.t_end());
        let report = entropy_sweep(&sol, &flux, &levels, &xis);
        assert!(report.min_residual >= -1e-10, "explicit: {:?}", report.worst);
    }

    #[test]
    fn zero_state_has_nonnegative_residuals() {
        // u0 = 0 stays 0; every pairing term except the wall allowance
        // vanishes or cancels, and the allowance is nonnegative.
        let model = Arc::new(
            Model::new(
                "zero",
                ScalarFn::from_expr("u*(1-u)").unwrap(),
                ScalarFn::from_expr("max(u-0.6, 0)").unwrap(),
                0.6,
                1.0,
                SpatialFn::from_expr("0", 1).unwrap(),
                SpatialFn::from_expr("0", 1).unwrap(),
                0.2,
                Domain::Interval { a: 0.0, b: 1.0 },
            )
            .unwrap(),
        );
        let mesh = Arc::new(Mesh::interval(0.0, 1.0, 20, None).unwrap());
        let flux = NumericalFlux::new(FluxKind::Godunov, &model);
        let cfg = SolverConfig::default();
        let sol =
            run_evolution(&model, &mesh, &flux, TimeStepping::Implicit, &cfg, 0.01, 0.2).unwrap();
        let levels = default_entropy_levels(&model);
        let xis = canonical_test_functions(&model.domain, 0.2);
        let report = entropy_sweep(&sol, &flux, &levels, &xis);
        assert!(report.min_residual >= -1e-12, "{:?}", report.worst);
    }

    #[test]
    fn single_residual_matches_sweep_entry() {
        let (sol, flux) = short_run("fig1c", FluxKind::EngquistOsher, 30, 0.01, 0.1);
        let xis = canonical_test_functions(&sol.model().domain, 0.1);
        let levels = [0.3, 0.6];
        let report = entropy_sweep(&sol, &flux, &levels, &xis);
        for case in report.cases.iter().take(8) {
            let direct = entropy_residual(&sol, &flux, case.level, &xis[case.xi]);
            assert!(
                (direct - case.residual).abs() <= 1e-14,
                "sweep and direct evaluation disagree at level {}",
                case.level
            );
        }
    }

    #[test]
    fn mass_drift_is_rounding_level() {
        let (sol, _) = short_run("fig1c", FluxKind::Godunov, 50, 0.01, 0.3);
        let drift = mass_drift(&sol);
        assert!((drift.initial - 0.24).abs() < 1e-12, "bump mass = 0.3 * 0.8");
        assert!(drift.relative < 1e-13, "drift {:e}", drift.worst_abs);
    }

    #[test]
    fn interface_functionals_behave_under_refinement() {
        let model = Arc::new(builtin_model("fig1c").unwrap());
        let cfg = SolverConfig::default();
        let ladder = [(25, 0.02), (50, 0.01), (100, 0.005)];
        let report = refinement_study(
            &model,
            FluxKind::Godunov,
            TimeStepping::Implicit,
            &cfg,
            &ladder,
            1.0,
            0.2,
        )
        .unwrap();
        assert_eq!(report.levels.len(), 3);
        assert_eq!(report.cauchy.len(), 2);
        assert_eq!(report.ratios.len(), 1);
        // Cauchy distances decrease.
        assert!(report.cauchy[1] < report.cauchy[0], "no contraction: {:?}", report.cauchy);
        assert!(report.ratios[0] > 1.0);
        for lv in &report.levels {
            assert!(lv.mass_relative_drift < 1e-12);
            assert!(lv.min_value >= -1e-12 && lv.max_value <= 1.0 + 1e-12);
        }
        // The scaled weak BV functional stays bounded (no blow-up).
        let w0 = report.levels[0].weak_bv_scaled;
        for lv in &report.levels[1..] {
            assert!(lv.weak_bv_scaled <= 1.2 * w0.max(1e-12), "weak BV grows: {report:?}");
        }
    }

    #[test]
    fn ladders_must_be_nested() {
        let model = Arc::new(builtin_model("fig1a").unwrap());
        let cfg = SolverConfig::default();
        let bad = refinement_study(
            &model,
            FluxKind::Godunov,
            TimeStepping::Implicit,
            &cfg,
            &[(25, 0.02), (60, 0.01)],
            1.0,
            0.1,
        );
        assert!(matches!(bad, Err(SchemeError::Invalid { .. })), "{bad:?}");
        let short = run_ladder(
            &model,
            FluxKind::Godunov,
            TimeStepping::Implicit,
            &cfg,
            &[(25, 0.02)],
            0.1,
        );
        assert!(matches!(short, Err(SchemeError::Invalid { .. })));
    }

    #[test]
    fn oscillation_proxy_decays_on_a_convergent_ladder() {
        let model = Arc::new(builtin_model("fig1a").unwrap());
        let cfg = SolverConfig::default();
        let runs = run_ladder(
            &model,
            FluxKind::Godunov,
            TimeStepping::Implicit,
            &cfg,
            &[(25, 0.02), (50, 0.01), (100, 0.005)],
            0.2,
        )
        .unwrap();
        let p01 = oscillation_proxy(&runs[1], &runs[0]).unwrap();
        let p12 = oscillation_proxy(&runs[2], &runs[1]).unwrap();
        assert!(p12 < p01, "proxy does not decay: {p01} -> {p12}");
        // Identical runs are at exactly zero.
        assert_eq!(oscillation_proxy(&runs[0], &runs[0]).unwrap(), 0.0);
    }

    #[test]
    fn boundary_layer_probe_distinguishes_the_failing_flux_condition() {
        // f = u^2/2 pushes mass rightward with f(u_max) > 0. The bump's
        // front shock travels at speed 0.4 and hits the wall near t = 1.05;
        // after that the last cell exceeds u_max and grows as the mesh
        // refines. f = u(1-u) keeps the run inside [0, 1] at any horizon.
        let cfg = SolverConfig::default();
        let model_b = Arc::new(builtin_model("fig1b").unwrap());
        let runs_b = run_ladder(
            &model_b,
            FluxKind::Godunov,
            TimeStepping::Implicit,
            &cfg,
            &[(50, 0.01), (100, 0.005)],
            1.5,
        )
        .unwrap();
        let probe = boundary_layer_probe(&runs_b, 0.1, 0.8).unwrap();
        let grow: Vec<f64> = probe.levels.iter().map(|l| l.boundary_max).collect();
        assert!(grow[0] > 1.0 + 1e-3, "no boundary layer at n=50: {probe:?}");
        assert!(grow[1] > grow[0] + 1e-3, "layer does not sharpen: {probe:?}");
        for n in [50, 100] {
            let (sol_a, _) = short_run("fig1a", FluxKind::Godunov, n, 0.01, 1.5);
            let v = max_last_cell_value(&sol_a);
            assert!(v <= 1.0 + 1e-9, "invariant-region model leaks: {v}");
        }
    }

    #[test]
    fn implicit_step_is_permutation_invariant() {
        // Reassemble the same interval with reversed cell indices and check
        // the step commutes with the relabeling; this also exercises the
        // wide-band Jacobian path (bandwidth n - 1 under reversal).
        use crate::mesh::{BoundaryFace, Geometry, InnerFace, Volume};
        use crate::scheme::implicit_step;

        let model = Arc::new(builtin_model("fig1c").unwrap());
        let n = 16;
        let mesh = Mesh::interval(0.0, 1.0, n, None).unwrap();
        let h = 1.0 / n as f64;
        let perm = |k: usize| n - 1 - k;
        let volumes: Vec<Volume> = (0..n)
            .map(|k| Volume { center: mesh.volumes()[perm(k)].center, measure: h, diameter: h })
            .collect();
        let inner: Vec<InnerFace> = mesh
            .inner_faces()
            .iter()
            .map(|f| InnerFace {
                minus: perm(f.minus),
                plus: perm(f.plus),
                measure: f.measure,
                distance: f.distance,
                transmissivity: f.transmissivity,
                axis: f.axis,
                midpoint: f.midpoint,
            })
            .collect();
        let boundary: Vec<BoundaryFace> = mesh
            .boundary_faces()
            .iter()
            .map(|bf| BoundaryFace {
                volume: perm(bf.volume),
                measure: bf.measure,
                normal: bf.normal,
                midpoint: bf.midpoint,
            })
            .collect();
        // The geometry block is untouched by stepping, so the stale edge
        // order is harmless here.
        let edges: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        let permuted =
            Mesh::assemble(1, volumes, inner, boundary, h, Geometry::Interval { edges });

        let flux = NumericalFlux::new(FluxKind::Godunov, &model);
        let cfg = SolverConfig::default();
        let u0: Vec<f64> = crate::scheme::init_cell_averages(&model, &mesh);
        let u0p: Vec<f64> = (0..n).map(|k| u0[perm(k)]).collect();
        let (u1, _) = implicit_step(&model, &mesh, &flux, &cfg, &u0, 0.01).unwrap();
        let (u1p, _) = implicit_step(&model, &permuted, &flux, &cfg, &u0p, 0.01).unwrap();
        for k in 0..n {
            assert!(
                (u1[perm(k)] - u1p[k]).abs() <= 1e-12,
                "relabeling changed the step at cell {k}"
            );
        }
    }
}
