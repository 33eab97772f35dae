//! The finite volume scheme itself: cell-average initialization, the
//! implicit (backward Euler) step solved by a semismooth Newton method,
//! the explicit variant under a stability restriction, and full evolution
//! runs collected into a `DiscreteSolution`.
//!
//! Interface flux through an oriented inner face sigma = (M | P):
//!
//!   Phi_sigma(u) = m(sigma) G(u_M, u_P) - tau_sigma (phi(u_P) - phi(u_M))
//!
//! with G the monotone numerical flux and tau the transmissivity. The same
//! value enters cell M with + and cell P with -, so summing the balance
//! over all cells telescopes and total mass is conserved exactly. Boundary
//! faces carry no flux at all, which is the discrete form of the zero-flux
//! condition. In two dimensions the convection acts along the x axis only;
//! faces normal to y exchange mass purely by diffusion.
//!
//! The implicit step solves R(u) = 0 with
//!
//!   R_K(u) = m(K) (u_K - b_K) + dt sum_sigma +/- Phi_sigma(u),
//!
//! whose Jacobian is a column diagonally dominant M-matrix: the diagonal
//! holds m(K) plus nonnegative flux slopes, off-diagonals are nonpositive,
//! and every column sums to m(K) because each interface derivative enters
//! twice with opposite signs. That structure makes the banded no-pivot LU
//! in `linalg` safe. After Newton converges the state is re-assigned in
//! flux form u_K = b_K - (dt / m(K)) div_K, which conserves mass by
//! construction instead of up to the nonlinear tolerance.

use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{BandMatrix, LinalgError};
use crate::mesh::{Mesh, MeshError};
use crate::model::Model;
use crate::numflux::NumericalFlux;
use crate::util::linf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("nonlinear solve stalled after {iters} iterations (residual {residual:e}, tolerance {tol:e})")]
    Newton { iters: usize, residual: f64, tol: f64 },
    #[error("linear solve: {0}")]
    Linear(#[from] LinalgError),
    #[error("time step {dt} exceeds the stability limit {limit}")]
    TimeStepTooLarge { dt: f64, limit: f64 },
    #[error("mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("invalid run parameter: {msg}")]
    Invalid { msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimeStepping {
    Implicit,
    Explicit,
}

impl TimeStepping {
    pub fn name(&self) -> &'static str {
        match self {
            TimeStepping::Implicit => "implicit",
            TimeStepping::Explicit => "explicit",
        }
    }
}

impl std::fmt::Display for TimeStepping {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TimeStepping {
    type Err = SchemeError;

    fn from_str(s: &str) -> Result<TimeStepping, SchemeError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "implicit" => Ok(TimeStepping::Implicit),
            "explicit" => Ok(TimeStepping::Explicit),
            other => Err(SchemeError::Invalid {
                msg: format!("unknown time stepping {other:?} (expected implicit or explicit)"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Newton stop tolerance on max_K |R_K|, scaled by the largest cell
    /// mass; once reached, up to two polishing steps push the residual
    /// toward rounding level.
    pub nonlinear_tol: f64,
    pub max_iters: usize,
    /// Safety factor applied to the explicit stability limit.
    pub cfl_safety: f64,
}

impl Default for SolverConfig {
    fn default() -> SolverConfig {
        SolverConfig { nonlinear_tol: 1e-10, max_iters: 200, cfl_safety: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub iters: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunStats {
    pub steps: usize,
    pub total_newton_iters: usize,
    pub max_step_iters: usize,
    pub worst_residual: f64,
}

/// Cell averages of the initial datum by midpoint subsampling (32 strips
/// per interval cell, 6 x 6 per rectangle cell), clamped into [0, u_max]
/// against quadrature roundoff.
pub fn init_cell_averages(model: &Model, mesh: &Mesh) -> Vec<f64> {
    let mut out = Vec::with_capacity(mesh.n_volumes());
    for k in 0..mesh.n_volumes() {
        let (lo, hi) = mesh.cell_bounds(k);
        let mut acc = 0.0;
        let cells = if mesh.dim() == 1 { (32, 1) } else { (6, 6) };
        for j in 0..cells.1 {
            for i in 0..cells.0 {
                let x = lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / cells.0 as f64;
                let y = lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / cells.1 as f64;
                acc += model.u0.eval([x, y]);
            }
        }
        let avg = acc / (cells.0 * cells.1) as f64;
        out.push(avg.clamp(0.0, model.u_max));
    }
    out
}

/// Largest explicit time step: safety * min_K m(K) / sum_sigma (2 L_F
/// m(sigma) + 2 L_phi tau_sigma), with the convective term counted only on
/// faces that actually carry convection. Infinite when nothing moves.
pub fn cfl_limit(model: &Model, mesh: &Mesh, flux: &NumericalFlux, safety: f64) -> f64 {
    let lf = flux.lipschitz_bound();
    let lphi = model.lip_phi();
    let mut worst = f64::INFINITY;
    for k in 0..mesh.n_volumes() {
        let mut denom = 0.0;
        for &(s, _) in mesh.faces_of(k) {
            let face = &mesh.inner_faces()[s];
            if face.axis == 0 {
                denom += 2.0 * lf * face.measure;
            }
            denom += 2.0 * lphi * face.transmissivity;
        }
        if denom > 0.0 {
            worst = worst.min(mesh.volumes()[k].measure / denom);
        }
    }
    safety * worst
}

/// Sum of signed interface fluxes for every cell: out[K] = sum +/- Phi.
pub(crate) fn flux_divergence(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    u: &[f64],
    phi_buf: &mut [f64],
    out: &mut [f64],
) {
    for (p, &v) in phi_buf.iter_mut().zip(u) {
        *p = model.phi.eval(v);
    }
    out.fill(0.0);
    for face in mesh.inner_faces() {
        let a = u[face.minus];
        let b = u[face.plus];
        let conv = if face.axis == 0 { face.measure * flux.value_extended(a, b) } else { 0.0 };
        let total = conv - face.transmissivity * (phi_buf[face.plus] - phi_buf[face.minus]);
        out[face.minus] += total;
        out[face.plus] -= total;
    }
}

/// Flux through one oriented inner face (positive from minus to plus side).
pub fn interface_flux(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    u: &[f64],
    face: usize,
) -> f64 {
    let f = &mesh.inner_faces()[face];
    let a = u[f.minus];
    let b = u[f.plus];
    let conv = if f.axis == 0 { f.measure * flux.value_extended(a, b) } else { 0.0 };
    conv - f.transmissivity * (model.phi.eval(b) - model.phi.eval(a))
}

fn residual_into(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    u: &[f64],
    b: &[f64],
    dt: f64,
    phi_buf: &mut [f64],
    div: &mut [f64],
    r: &mut [f64],
) -> f64 {
    flux_divergence(model, mesh, flux, u, phi_buf, div);
    for k in 0..u.len() {
        r[k] = mesh.volumes()[k].measure * (u[k] - b[k]) + dt * div[k];
    }
    linf(r)
}

/// Divergence at cell k with the cell's own value replaced by v.
fn cell_divergence(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    u: &[f64],
    k: usize,
    v: f64,
) -> f64 {
    let mut acc = 0.0;
    for &(s, sign) in mesh.faces_of(k) {
        let f = &mesh.inner_faces()[s];
        let (a, b) = if sign > 0.0 { (v, u[f.plus]) } else { (u[f.minus], v) };
        let conv = if f.axis == 0 { f.measure * flux.value_extended(a, b) } else { 0.0 };
        acc += sign * (conv - f.transmissivity * (model.phi.eval(b) - model.phi.eval(a)));
    }
    acc
}

/// One symmetric nonlinear Gauss-Seidel sweep: each cell equation is
/// solved by bisection with the neighbors frozen. The cell residual is
/// strictly increasing in the cell value (slope at least m(K), since the
/// flux is monotone and phi nondecreasing), so the root is unique and the
/// bracket expansion below terminates. A fixed point of the sweep solves
/// the full system.
fn gauss_seidel_sweep(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    u: &mut [f64],
    b: &[f64],
    dt: f64,
) {
    let n = mesh.n_volumes();
    for k in (0..n).chain((0..n).rev()) {
        let m = mesh.volumes()[k].measure;
        let r = |u: &[f64], v: f64| m * (v - b[k]) + dt * cell_divergence(model, mesh, flux, u, k, v);
        let (mut lo, mut hi) = (u[k].min(b[k]), u[k].max(b[k]));
        let mut w = (hi - lo).max(1.0);
        while r(u, lo) > 0.0 {
            lo -= w;
            w *= 2.0;
        }
        w = (hi - lo).max(1.0);
        while r(u, hi) < 0.0 {
            hi += w;
            w *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if r(u, mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        u[k] = if r(u, lo).abs() <= r(u, hi).abs() { lo } else { hi };
    }
}

/// Newton matrix of the balance residual at u.
pub(crate) fn assemble_jacobian(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    u: &[f64],
    dt: f64,
    jac: &mut BandMatrix,
) {
    jac.reset();
    for (k, v) in mesh.volumes().iter().enumerate() {
        jac.add(k, k, v.measure);
    }
    for face in mesh.inner_faces() {
        let (m, p) = (face.minus, face.plus);
        let a = u[m];
        let b = u[p];
        let (conv_a, conv_b) = if face.axis == 0 {
            (face.measure * flux.d1(a, b), face.measure * flux.d2(a, b))
        } else {
            (0.0, 0.0)
        };
        // d Phi / d u_M >= 0 and d Phi / d u_P <= 0; the same products are
        // added and subtracted so columns sum to the cell measures.
        let da = dt * (conv_a + face.transmissivity * model.phi.deriv(a));
        let db = dt * (conv_b - face.transmissivity * model.phi.deriv(b));
        jac.add(m, m, da);
        jac.add(m, p, db);
        jac.add(p, m, -da);
        jac.add(p, p, -db);
    }
}

/// Solves m(K)(u_K - b_K) + dt * div_K(u) = 0 by semismooth Newton with a
/// backtracking line search and a damped diagonal fallback. This single
/// routine is both the implicit time step (b = previous state) and the
/// stationary resolvent solve (b = source averages, dt = 1).
///
/// When plain Newton stalls (a large dt puts the start far outside the
/// basin, and the kinks of a degenerate phi and of the numerical flux
/// leave the residual only piecewise smooth), the solve restarts as a
/// pseudo-transient march; see `pseudo_transient`.
pub fn solve_balance(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    cfg: &SolverConfig,
    b: &[f64],
    dt: f64,
) -> Result<(Vec<f64>, StepStats), SchemeError> {
    match solve_balance_from(model, mesh, flux, cfg, b, dt, b, true) {
        Err(SchemeError::Newton { .. }) => pseudo_transient(model, mesh, flux, cfg, b, dt),
        other => other,
    }
}

/// Pseudo-transient continuation for the balance equation
/// G(u) = m (u - b) + dt div(u) = 0: march m (u' - u) / lam + G(u') = 0
/// with the relaxation weight lam grown as the residual falls (switched
/// evolution relaxation). Dividing by 1 + lam shows each pseudo-step is
/// the same balance with b' = (u + lam b) / (1 + lam) and
/// dt' = dt lam / (1 + lam), so the well-tested small-step Newton solves
/// it from the warm start u. Any fixed point of a step solves the
/// original equation, and lam -> inf recovers plain Newton, so the march
/// finishes quadratically once the transient has flattened.
fn pseudo_transient(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    cfg: &SolverConfig,
    b: &[f64],
    dt: f64,
) -> Result<(Vec<f64>, StepStats), SchemeError> {
    let n = mesh.n_volumes();
    let m_max = mesh.volumes().iter().map(|v| v.measure).fold(0.0_f64, f64::max);
    let tol = cfg.nonlinear_tol * m_max * model.u_max.max(1.0);
    let mut phi_buf = vec![0.0; n];
    let mut div = vec![0.0; n];
    let mut r = vec![0.0; n];

    let mut u = b.to_vec();
    let mut rn = residual_into(model, mesh, flux, &u, b, dt, &mut phi_buf, &mut div, &mut r);
    // Start near unit CFL regardless of how stiff the target step is.
    let mut lam = (mesh.h() / dt).min(1.0);
    // Inner failures should be detected quickly; the march retries with a
    // smaller weight instead of letting one stage crawl.
    let inner_cfg = SolverConfig { max_iters: cfg.max_iters.min(60), ..*cfg };
    let mut total = 0;
    let mut best = rn;
    let mut stagnant = 0;
    for _ in 0..600 {
        if rn <= tol {
            // Divergence-form re-assignment against the original data, as
            // in the direct path, so mass balance holds to rounding.
            flux_divergence(model, mesh, flux, &u, &mut phi_buf, &mut div);
            for k in 0..n {
                u[k] = b[k] - dt / mesh.volumes()[k].measure * div[k];
            }
            return Ok((u, StepStats { iters: total, residual: rn }));
        }
        let bp: Vec<f64> = (0..n).map(|k| (u[k] + lam * b[k]) / (1.0 + lam)).collect();
        let dtp = dt * lam / (1.0 + lam);
        match solve_balance_from(model, mesh, flux, &inner_cfg, &bp, dtp, &u, false) {
            Ok((next, st)) => {
                // Every successful pseudo-step contracts the L1 distance
                // to the solution by 1 / (1 + lam), so it is accepted even
                // when the worst-cell residual transiently rises (it does
                // while a front walks across cells). The weight follows
                // the residual: inversely when it falls, gently shrinking
                // otherwise.
                total += st.iters.max(1);
                let rn_next =
                    residual_into(model, mesh, flux, &next, b, dt, &mut phi_buf, &mut div, &mut r);
                // Growth follows inner effort, not the residual: the
                // worst-cell residual oscillates while fronts walk, but an
                // easy inner solve means the weight has room to grow.
                lam = (lam * if st.iters <= 6 { 2.5 } else { 1.4 }).min(1e12);
                stagnant = if next == u { stagnant + 1 } else { 0 };
                u = next;
                rn = rn_next;
                best = best.min(rn);
                if stagnant >= 3 {
                    // A repeated fixed point above tolerance cannot improve.
                    break;
                }
            }
            Err(SchemeError::Newton { iters, .. }) => {
                total += iters;
                lam *= 0.25;
                if lam < 1e-10 {
                    break;
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(SchemeError::Newton { iters: total, residual: best, tol })
}

fn solve_balance_from(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    cfg: &SolverConfig,
    b: &[f64],
    dt: f64,
    guess: &[f64],
    conservative: bool,
) -> Result<(Vec<f64>, StepStats), SchemeError> {
    let n = mesh.n_volumes();
    if b.len() != n || guess.len() != n {
        return Err(SchemeError::Invalid {
            msg: format!("state length {} does not match mesh ({n} volumes)", b.len()),
        });
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SchemeError::Invalid { msg: format!("time step must be positive, got {dt}") });
    }
    let m_max = mesh.volumes().iter().map(|v| v.measure).fold(0.0_f64, f64::max);
    let tol = cfg.nonlinear_tol * m_max * model.u_max.max(1.0);

    let bandwidth = mesh.inner_faces().iter().map(|f| f.plus.abs_diff(f.minus)).max().unwrap_or(1);
    let mut jac = BandMatrix::new(n, bandwidth, bandwidth);
    let mut u = guess.to_vec();
    let mut u_try = vec![0.0; n];
    let mut phi_buf = vec![0.0; n];
    let mut div = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut r_try = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut d = vec![0.0; n];

    let mut rn = residual_into(model, mesh, flux, &u, b, dt, &mut phi_buf, &mut div, &mut r);
    let mut iters = 0;
    let mut polish = 0;
    loop {
        if rn == 0.0 || (rn <= tol && polish >= 2) {
            break;
        }
        if iters >= cfg.max_iters {
            if rn <= tol {
                break;
            }
            return Err(SchemeError::Newton { iters, residual: rn, tol });
        }

        assemble_jacobian(model, mesh, flux, &u, dt, &mut jac);
        for k in 0..n {
            diag[k] = jac.get(k, k);
            d[k] = -r[k];
        }
        let solved = jac.solve_in_place(&mut d);
        let mut accepted = false;
        // Sufficient-decrease acceptance: microscopic improvements from a
        // heavily backtracked step are treated as a stall, so the sweep
        // below gets a chance instead of starving behind 1e-6 progress.
        match solved {
            Ok(()) => {
                let mut lam = 1.0;
                for _ in 0..30 {
                    for k in 0..n {
                        u_try[k] = u[k] + lam * d[k];
                    }
                    let rn_try = residual_into(
                        model, mesh, flux, &u_try, b, dt, &mut phi_buf, &mut div, &mut r_try,
                    );
                    if rn_try <= rn * (1.0 - 1e-3 * lam) {
                        std::mem::swap(&mut u, &mut u_try);
                        std::mem::swap(&mut r, &mut r_try);
                        rn = rn_try;
                        accepted = true;
                        break;
                    }
                    lam *= 0.5;
                }
            }
            Err(e) if rn > tol => return Err(SchemeError::Linear(e)),
            Err(_) => {}
        }
        if !accepted {
            // Damped diagonal correction; the diagonal dominates the row,
            // so this is a contraction whenever Newton's direction is not.
            let mut lam = 0.5;
            for _ in 0..12 {
                for k in 0..n {
                    u_try[k] = u[k] - lam * r[k] / diag[k];
                }
                let rn_try = residual_into(
                    model, mesh, flux, &u_try, b, dt, &mut phi_buf, &mut div, &mut r_try,
                );
                if rn_try <= rn * (1.0 - 1e-3 * lam) {
                    std::mem::swap(&mut u, &mut u_try);
                    std::mem::swap(&mut r, &mut r_try);
                    rn = rn_try;
                    accepted = true;
                    break;
                }
                lam *= 0.5;
            }
        }
        if !accepted {
            if rn <= tol {
                break;
            }
            // Derivative-based directions are exhausted; near a kink of
            // phi or of the flux they can all fail to descend. The sweep
            // is derivative-free and accepted unconditionally: its only
            // fixed point is the solution itself, so no cycle forms, and
            // the max_iters check at the top still bounds the total work
            // and reports honest failure.
            gauss_seidel_sweep(model, mesh, flux, &mut u, b, dt);
            rn = residual_into(model, mesh, flux, &u, b, dt, &mut phi_buf, &mut div, &mut r);
        }
        iters += 1;
        if rn <= tol {
            polish += 1;
        }
    }

    // Conservative re-assignment: evaluate the converged fluxes once and
    // write the state in divergence form, so the discrete mass balance
    // holds to rounding rather than to the Newton tolerance. Amplified by
    // the stiffness ratio dt tau / m this perturbs the residual, which is
    // why the pseudo-transient march below works on raw states and
    // re-assigns only once at the very end.
    if conservative {
        flux_divergence(model, mesh, flux, &u, &mut phi_buf, &mut div);
        for k in 0..n {
            u[k] = b[k] - dt / mesh.volumes()[k].measure * div[k];
        }
    }
    Ok((u, StepStats { iters, residual: rn }))
}

/// One backward Euler step.
pub fn implicit_step(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    cfg: &SolverConfig,
    u_prev: &[f64],
    dt: f64,
) -> Result<(Vec<f64>, StepStats), SchemeError> {
    solve_balance(model, mesh, flux, cfg, u_prev, dt)
}

/// One forward Euler step; refuses time steps above the stability limit
/// rather than sub-stepping silently.
pub fn explicit_step(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    cfg: &SolverConfig,
    u_prev: &[f64],
    dt: f64,
) -> Result<Vec<f64>, SchemeError> {
    let n = mesh.n_volumes();
    if u_prev.len() != n {
        return Err(SchemeError::Invalid {
            msg: format!("state length {} does not match mesh ({n} volumes)", u_prev.len()),
        });
    }
    let limit = cfl_limit(model, mesh, flux, cfg.cfl_safety);
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SchemeError::Invalid { msg: format!("time step must be positive, got {dt}") });
    }
    if dt > limit * (1.0 + 1e-12) {
        return Err(SchemeError::TimeStepTooLarge { dt, limit });
    }
    let mut phi_buf = vec![0.0; n];
    let mut div = vec![0.0; n];
    flux_divergence(model, mesh, flux, u_prev, &mut phi_buf, &mut div);
    Ok((0..n)
        .map(|k| u_prev[k] - dt / mesh.volumes()[k].measure * div[k])
        .collect())
}

/// Full trajectory of a run, step states included.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    mesh: Arc<Mesh>,
    model: Arc<Model>,
    flux_kind: crate::numflux::FluxKind,
    stepping: TimeStepping,
    dt: f64,
    states: Vec<Vec<f64>>,
    stats: RunStats,
    step_stats: Vec<StepStats>,
}

impl DiscreteSolution {
    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    pub fn flux_kind(&self) -> crate::numflux::FluxKind {
        self.flux_kind
    }

    pub fn stepping(&self) -> TimeStepping {
        self.stepping
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Discrete horizon n_steps * dt (at least the requested final time).
    pub fn t_end(&self) -> f64 {
        self.n_steps() as f64 * self.dt
    }

    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n]
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    /// Newton iteration counts per step; zeros for explicit runs and
    /// recorded trajectories.
    pub fn step_stats(&self) -> &[StepStats] {
        &self.step_stats
    }

    /// Index of the state governing time t: the piecewise-constant-in-time
    /// reconstruction takes u(t) = u^{n+1} on (n dt, (n+1) dt].
    pub fn step_index_at(&self, t: f64) -> Result<usize, SchemeError> {
        if !t.is_finite() || t < 0.0 {
            return Err(SchemeError::Invalid { msg: format!("time {t} outside [0, {}]", self.t_end()) });
        }
        if t == 0.0 {
            return Ok(0);
        }
        // Times within 1e-9 of a step boundary count as that boundary.
        let slack = 1e-9_f64.min(0.5 * self.dt);
        let idx = ((t - slack) / self.dt).ceil().max(0.0) as usize;
        if idx > self.n_steps() {
            return Err(SchemeError::Invalid { msg: format!("time {t} outside [0, {}]", self.t_end()) });
        }
        Ok(idx)
    }

    pub fn state_at_time(&self, t: f64) -> Result<&[f64], SchemeError> {
        Ok(&self.states[self.step_index_at(t)?])
    }

    /// Pointwise value of the reconstruction at (t, p).
    pub fn value_at(&self, t: f64, p: [f64; 2]) -> Result<f64, SchemeError> {
        let state = self.state_at_time(t)?;
        let k = self.mesh.locate(p)?;
        Ok(state[k])
    }

    /// Wraps externally produced states (a recorded trajectory) so the
    /// diagnostics can audit them. States are taken at face value beyond
    /// shape and finiteness checks; `stepping` tells the entropy pairing
    /// which state carries the fluxes of each step.
    pub fn from_states(
        mesh: Arc<Mesh>,
        model: Arc<Model>,
        flux_kind: crate::numflux::FluxKind,
        stepping: TimeStepping,
        dt: f64,
        states: Vec<Vec<f64>>,
    ) -> Result<DiscreteSolution, SchemeError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SchemeError::Invalid { msg: format!("time step must be positive, got {dt}") });
        }
        if states.is_empty() {
            return Err(SchemeError::Invalid { msg: "a trajectory needs at least the initial state".into() });
        }
        for (n, state) in states.iter().enumerate() {
            if state.len() != mesh.n_volumes() {
                return Err(SchemeError::Invalid {
                    msg: format!(
                        "state {n} has {} cells, mesh has {}",
                        state.len(),
                        mesh.n_volumes()
                    ),
                });
            }
            if let Some(k) = state.iter().position(|v| !v.is_finite()) {
                return Err(SchemeError::Invalid {
                    msg: format!("state {n} has a non-finite value at cell {k}"),
                });
            }
        }
        let step_stats = vec![StepStats::default(); states.len() - 1];
        Ok(DiscreteSolution {
            mesh,
            model,
            flux_kind,
            stepping,
            dt,
            states,
            stats: RunStats::default(),
            step_stats,
        })
    }
}

/// Runs the scheme from the cell averages of u0 over ceil(t_end / dt)
/// uniform steps (none if t_end = 0).
pub fn run_evolution(
    model: &Arc<Model>,
    mesh: &Arc<Mesh>,
    flux: &NumericalFlux,
    stepping: TimeStepping,
    cfg: &SolverConfig,
    dt: f64,
    t_end: f64,
) -> Result<DiscreteSolution, SchemeError> {
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(SchemeError::Invalid { msg: format!("final time must be nonnegative, got {t_end}") });
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SchemeError::Invalid { msg: format!("time step must be positive, got {dt}") });
    }
    let n_steps = if t_end == 0.0 { 0 } else { (t_end / dt - 1e-9).ceil().max(1.0) as usize };
    if n_steps > 2_000_000 {
        return Err(SchemeError::Invalid {
            msg: format!("{n_steps} steps of {dt} to reach {t_end}; refusing runs past 2e6 steps"),
        });
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(init_cell_averages(model, mesh));
    let mut stats = RunStats::default();
    let mut step_stats = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let prev = states.last().expect("at least the initial state");
        let next = match stepping {
            TimeStepping::Implicit => {
                let (u, st) = implicit_step(model, mesh, flux, cfg, prev, dt)?;
                stats.total_newton_iters += st.iters;
                stats.max_step_iters = stats.max_step_iters.max(st.iters);
                stats.worst_residual = stats.worst_residual.max(st.residual);
                step_stats.push(st);
                u
            }
            TimeStepping::Explicit => {
                step_stats.push(StepStats::default());
                explicit_step(model, mesh, flux, cfg, prev, dt)?
            }
        };
        states.push(next);
        stats.steps += 1;
    }
    Ok(DiscreteSolution {
        mesh: Arc::clone(mesh),
        model: Arc::clone(model),
        flux_kind: flux.kind(),
        stepping,
        dt,
        states,
        stats,
        step_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, Model};
    use crate::numflux::FluxKind;
    use crate::util::discrete_mass;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(name: &str, n: usize, kind: FluxKind) -> (Arc<Model>, Arc<Mesh>, NumericalFlux) {
        let model = Arc::new(builtin_model(name).unwrap());
        let mesh = Arc::new(Mesh::interval(0.0, 1.0, n, None).unwrap());
        let flux = NumericalFlux::new(kind, &model);
        (model, mesh, flux)
    }

    #[test]
    fn two_cell_implicit_step_matches_bisection_oracle() {
        let (model, mesh, flux) = setup("fig1a", 2, FluxKind::Godunov);
        let cfg = SolverConfig::default();
        let u_prev = vec![0.8, 0.2];
        let dt = 0.1;
        let (u, stats) = implicit_step(&model, &mesh, &flux, &cfg, &u_prev, dt).unwrap();

        // Mass is redistributed through a single interface, so the solution
        // is pinned by the scalar equation 5 (s - 0.8) + G(s, 1 - s) = 0.
        let root = {
            let h = |s: f64| 5.0 * (s - 0.8) + flux.value_extended(s, 1.0 - s);
            let (mut lo, mut hi) = (0.2, 0.8);
            assert!(h(lo) < 0.0 && h(hi) > 0.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if h(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        assert!((root - 0.75).abs() < 1e-12, "oracle root {root}");
        assert!((u[0] - 0.75).abs() < 1e-9, "u = {u:?}");
        assert!((u[1] - 0.25).abs() < 1e-9);
        assert!((u[0] + u[1] - 1.0).abs() < 1e-15, "exact redistribution");
        assert!(stats.iters >= 1 && stats.residual <= 1e-10);
    }

    #[test]
    fn explicit_step_reduces_to_upwind_for_increasing_flux() {
        // f = u^2/2 is nondecreasing on [0, 1], so godunov and
        // engquist-osher both collapse to G(a, b) = f(a).
        for kind in [FluxKind::Godunov, FluxKind::EngquistOsher] {
            let (model, mesh, flux) = setup("fig1b", 50, kind);
            let cfg = SolverConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let u: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
            let dt = 0.5 * cfl_limit(&model, &mesh, &flux, cfg.cfl_safety);
            let next = explicit_step(&model, &mesh, &flux, &cfg, &u, dt).unwrap();
            let h = 1.0 / 50.0;
            for k in 0..50 {
                let f_in = if k == 0 { 0.0 } else { u[k - 1] * u[k - 1] / 2.0 };
                let f_out = if k == 49 { 0.0 } else { u[k] * u[k] / 2.0 };
                let expect = u[k] - dt / h * (f_out - f_in);
                assert!(
                    (next[k] - expect).abs() < 1e-14,
                    "{kind:?}: cell {k}: {} vs upwind {expect}",
                    next[k]
                );
            }
        }
    }

    #[test]
    fn explicit_step_reduces_to_three_point_heat_stencil() {
        let (model, mesh, flux) = setup("heat-like", 20, FluxKind::Godunov);
        let cfg = SolverConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
        let h = 1.0 / 20.0;
        let dt = 0.9 * cfl_limit(&model, &mesh, &flux, cfg.cfl_safety);
        let next = explicit_step(&model, &mesh, &flux, &cfg, &u, dt).unwrap();
        for k in 0..20 {
            let left = if k == 0 { 0.0 } else { (u[k - 1] - u[k]) / h };
            let right = if k == 19 { 0.0 } else { (u[k + 1] - u[k]) / h };
            let expect = u[k] + dt / h * (left + right);
            assert!((next[k] - expect).abs() < 1e-14, "cell {k}");
        }
    }

    #[test]
    fn stability_limit_formulas() {
        // Pure convection on a uniform interval: safety * h / (4 L_F).
        let (model, mesh, flux) = setup("fig1a", 10, FluxKind::Godunov);
        let limit = cfl_limit(&model, &mesh, &flux, 0.5);
        assert!((limit - 0.5 * 0.1 / 4.0).abs() < 1e-12, "convective limit {limit}");

        // Pure diffusion: safety * h^2 / 4.
        let (model, mesh, flux) = setup("heat-like", 10, FluxKind::Godunov);
        let limit = cfl_limit(&model, &mesh, &flux, 0.5);
        assert!((limit - 0.5 * 0.01 / 4.0).abs() < 1e-12, "diffusive limit {limit}");

        // Nothing moves: no restriction.
        let model = Arc::new(
            Model::new(
                "still",
                crate::model::ScalarFn::from_expr("0").unwrap(),
                crate::model::ScalarFn::from_expr("0").unwrap(),
                1.0,
                1.0,
                crate::model::SpatialFn::from_expr("0", 1).unwrap(),
                crate::model::SpatialFn::from_expr("0", 1).unwrap(),
                0.5,
                crate::model::Domain::Interval { a: 0.0, b: 1.0 },
            )
            .unwrap(),
        );
        let mesh = Arc::new(Mesh::interval(0.0, 1.0, 10, None).unwrap());
        let flux = NumericalFlux::new(FluxKind::Godunov, &model);
        assert!(cfl_limit(&model, &mesh, &flux, 0.5).is_infinite());
    }

    #[test]
    fn explicit_rejects_time_step_above_limit() {
        let (model, mesh, flux) = setup("fig1a", 10, FluxKind::Godunov);
        let cfg = SolverConfig::default();
        let u = init_cell_averages(&model, &mesh);
        let limit = cfl_limit(&model, &mesh, &flux, cfg.cfl_safety);
        let err = explicit_step(&model, &mesh, &flux, &cfg, &u, 1.01 * limit).unwrap_err();
        assert!(matches!(err, SchemeError::TimeStepTooLarge { .. }), "{err}");
        assert!(explicit_step(&model, &mesh, &flux, &cfg, &u, 0.99 * limit).is_ok());
    }

    #[test]
    fn initial_averages_resolve_the_bump_exactly_on_aligned_grids() {
        let (model, mesh, _) = setup("fig1a", 10, FluxKind::Godunov);
        let u0 = init_cell_averages(&model, &mesh);
        for (k, &v) in u0.iter().enumerate() {
            let expect = if (3..6).contains(&k) { 0.8 } else { 0.0 };
            assert!((v - expect).abs() < 1e-15, "cell {k}: {v}");
        }
    }

    #[test]
    fn jacobian_columns_sum_to_cell_measures() {
        let (model, mesh, flux) = setup("fig1c", 20, FluxKind::Godunov);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.1)).collect();
        let mut jac = BandMatrix::new(20, 1, 1);
        assemble_jacobian(&model, &mesh, &flux, &u, 0.01, &mut jac);
        for j in 0..20_usize {
            let mut col = 0.0;
            for i in j.saturating_sub(1)..(j + 2).min(20) {
                col += jac.get(i, j);
            }
            let m = mesh.volumes()[j].measure;
            assert!(
                (col - m).abs() < 1e-12,
                "column {j} sums to {col}, cell measure {m}"
            );
        }
    }

    #[test]
    fn implicit_run_conserves_mass_and_invariant_region() {
        for kind in FluxKind::all() {
            let (model, mesh, flux) = setup("fig1c", 50, kind);
            let cfg = SolverConfig::default();
            let sol =
                run_evolution(&model, &mesh, &flux, TimeStepping::Implicit, &cfg, 0.01, 0.2)
                    .unwrap();
            assert_eq!(sol.n_steps(), 20);
            let m0 = discrete_mass(&mesh, sol.state(0));
            for n in 0..=sol.n_steps() {
                let m = discrete_mass(&mesh, sol.state(n));
                assert!(
                    (m - m0).abs() <= 1e-13 * m0.abs().max(1.0),
                    "{kind}: mass drift {:e} at step {n}",
                    m - m0
                );
                for &v in sol.state(n) {
                    assert!(
                        (-1e-12..=1.0 + 1e-12).contains(&v),
                        "{kind}: value {v} escapes the invariant region at step {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn implicit_step_works_far_above_the_explicit_limit() {
        let (model, mesh, flux) = setup("fig1a", 100, FluxKind::Godunov);
        let cfg = SolverConfig::default();
        let u0 = init_cell_averages(&model, &mesh);
        let limit = cfl_limit(&model, &mesh, &flux, cfg.cfl_safety);
        let dt = 100.0 * limit;
        let (u, stats) = implicit_step(&model, &mesh, &flux, &cfg, &u0, dt).unwrap();
        assert!(stats.iters <= 50, "took {} iterations", stats.iters);
        assert!(u.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn reconstruction_time_indexing() {
        let (model, mesh, flux) = setup("fig1a", 10, FluxKind::Godunov);
        let cfg = SolverConfig::default();
        let sol =
            run_evolution(&model, &mesh, &flux, TimeStepping::Implicit, &cfg, 0.1, 0.3).unwrap();
        assert_eq!(sol.n_steps(), 3);
        assert_eq!(sol.step_index_at(0.0).unwrap(), 0);
        assert_eq!(sol.step_index_at(0.05).unwrap(), 1);
        assert_eq!(sol.step_index_at(0.1).unwrap(), 1);
        assert_eq!(sol.step_index_at(0.100000001).unwrap(), 1); // snaps within 1e-9
        assert_eq!(sol.step_index_at(0.11).unwrap(), 2);
        assert_eq!(sol.step_index_at(0.3).unwrap(), 3);
        assert!(sol.step_index_at(0.31).is_err());
        assert!(sol.step_index_at(-0.1).is_err());

        // Pointwise reconstruction pairs the time index with cell lookup.
        let v = sol.value_at(0.05, [0.45, 0.0]).unwrap();
        assert_eq!(v, sol.state(1)[4]);
    }

    #[test]
    fn zero_horizon_returns_only_the_initial_state() {
        let (model, mesh, flux) = setup("fig1a", 10, FluxKind::Godunov);
        let cfg = SolverConfig::default();
        let sol =
            run_evolution(&model, &mesh, &flux, TimeStepping::Implicit, &cfg, 0.1, 0.0).unwrap();
        assert_eq!(sol.n_steps(), 0);
        assert_eq!(sol.state(0), init_cell_averages(&model, &mesh).as_slice());
    }

    #[test]
    fn evolution_on_rectangle_mesh() {
        // 2D smoke test: mass conservation and bounds on a 6x5 rectangle.
        let model = Arc::new(
            Model::new(
                "fig1c-2d",
                crate::model::ScalarFn::from_expr("u*(1-u)").unwrap(),
                crate::model::ScalarFn::from_expr("max(u-0.6, 0)").unwrap(),
                0.6,
                1.0,
                crate::model::SpatialFn::from_expr("0.8*step(x-0.3)*step(0.6-x)*step(y-0.2)", 2)
                    .unwrap(),
                crate::model::SpatialFn::from_expr("0", 2).unwrap(),
                0.1,
                crate::model::Domain::Rectangle { lx: 1.0, ly: 1.0 },
            )
            .unwrap(),
        );
        let mesh = Arc::new(Mesh::rectangle(1.0, 1.0, 6, 5).unwrap());
        let flux = NumericalFlux::new(FluxKind::Godunov, &model);
        let cfg = SolverConfig::default();
        let sol =
            run_evolution(&model, &mesh, &flux, TimeStepping::Implicit, &cfg, 0.02, 0.1).unwrap();
        let m0 = discrete_mass(&mesh, sol.state(0));
        let m_end = discrete_mass(&mesh, sol.state(sol.n_steps()));
        assert!((m_end - m0).abs() < 1e-13 * m0.max(1.0));
        for &v in sol.state(sol.n_steps()) {
            assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        }
    }
}
