//! The stationary resolvent problem u + div f(u) - Lap phi(u) = g with
//! zero-flux boundary conditions.
//!
//! Discretely this is exactly one implicit step with unit time step and the
//! cell averages of g in place of the previous state, so the module reuses
//! the scheme's nonlinear core. The resolvent inherits the operator's
//! structure: it contracts the L1 distance between solutions, preserves
//! componentwise ordering of sources, and redistributes mass without
//! creating or destroying it. Iterating it (the `crandall_liggett` march)
//! approximates the evolution semigroup.

use crate::mesh::Mesh;
use crate::model::{Model, SpatialFn};
use crate::numflux::NumericalFlux;
use crate::scheme::{
    implicit_step, interface_flux, solve_balance, SchemeError, SolverConfig, StepStats,
};
use crate::util::kahan_sum;

/// Cell averages of a source by the same midpoint rule used for the
/// initial datum, without clamping: sources outside [0, u_max] are legal
/// inputs to the resolvent.
pub fn cell_averages(g: &SpatialFn, mesh: &Mesh) -> Vec<f64> {
    let mut out = Vec::with_capacity(mesh.n_volumes());
    for k in 0..mesh.n_volumes() {
        let (lo, hi) = mesh.cell_bounds(k);
        let cells = if mesh.dim() == 1 { (32, 1) } else { (6, 6) };
        let mut acc = 0.0;
        for j in 0..cells.1 {
            for i in 0..cells.0 {
                let x = lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / cells.0 as f64;
                let y = lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / cells.1 as f64;
                acc += g.eval([x, y]);
            }
        }
        out.push(acc / (cells.0 * cells.1) as f64);
    }
    out
}

pub fn source_cell_averages(model: &Model, mesh: &Mesh) -> Vec<f64> {
    cell_averages(&model.g, mesh)
}

/// Solves the discrete stationary problem for the model's source g.
pub fn stationary_solve(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, StepStats), SchemeError> {
    let g = source_cell_averages(model, mesh);
    solve_balance(model, mesh, flux, cfg, &g, 1.0)
}

/// Resolvent applied to an explicit cell-average source.
pub fn resolvent_apply(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    cfg: &SolverConfig,
    g: &[f64],
) -> Result<(Vec<f64>, StepStats), SchemeError> {
    solve_balance(model, mesh, flux, cfg, g, 1.0)
}

/// Contraction and ordering measurements for a pair of sources.
#[derive(Debug, Clone)]
pub struct ResolventProbe {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    /// ||g1 - g2|| in the mesh-weighted L1 norm.
    pub source_distance: f64,
    pub solution_distance: f64,
    /// ||(g1 - g2)^+|| and ||(u1 - u2)^+||; the second never exceeding the
    /// first is the discrete T-contraction.
    pub source_pos_distance: f64,
    pub solution_pos_distance: f64,
    /// max_K (u1_K - u2_K) when g1 <= g2 everywhere; ordering demands it
    /// stay at rounding level. None when the sources are not ordered.
    pub ordering_defect: Option<f64>,
}

pub fn resolvent_probe(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    cfg: &SolverConfig,
    g1: &[f64],
    g2: &[f64],
) -> Result<ResolventProbe, SchemeError> {
    let (u1, _) = resolvent_apply(model, mesh, flux, cfg, g1)?;
    let (u2, _) = resolvent_apply(model, mesh, flux, cfg, g2)?;
    let weighted = |a: &[f64], b: &[f64], pos: bool| {
        kahan_sum(mesh.volumes().iter().zip(a.iter().zip(b)).map(|(v, (&x, &y))| {
            let d = x - y;
            v.measure * if pos { d.max(0.0) } else { d.abs() }
        }))
    };
    let ordered = g1.iter().zip(g2).all(|(&a, &b)| a <= b);
    let ordering_defect = ordered.then(|| {
        u1.iter().zip(&u2).map(|(&a, &b)| a - b).fold(f64::NEG_INFINITY, f64::max)
    });
    Ok(ResolventProbe {
        source_distance: weighted(g1, g2, false),
        solution_distance: weighted(&u1, &u2, false),
        source_pos_distance: weighted(g1, g2, true),
        solution_pos_distance: weighted(&u1, &u2, true),
        ordering_defect,
        u1,
        u2,
    })
}

/// Iterated resolvent march: n implicit steps of size t / n starting from
/// the cell averages of u0. For fixed t and growing n this approximates the
/// semigroup the implicit scheme discretizes.
pub fn crandall_liggett(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    cfg: &SolverConfig,
    t: f64,
    n: usize,
) -> Result<Vec<f64>, SchemeError> {
    if n == 0 || !(t.is_finite() && t > 0.0) {
        return Err(SchemeError::Invalid {
            msg: format!("march needs t > 0 and n >= 1, got t = {t}, n = {n}"),
        });
    }
    let dt = t / n as f64;
    let mut u = crate::scheme::init_cell_averages(model, mesh);
    for _ in 0..n {
        u = implicit_step(model, mesh, flux, cfg, &u, dt)?.0;
    }
    Ok(u)
}

/// Fluxes through the first and last inner interfaces of an interval mesh.
/// Under refinement both must vanish: the zero-flux condition propagates to
/// the outermost interfaces of the stationary solution.
pub fn outermost_fluxes(
    model: &Model,
    mesh: &Mesh,
    flux: &NumericalFlux,
    u: &[f64],
) -> Result<(f64, f64), SchemeError> {
    if mesh.dim() != 1 {
        return Err(SchemeError::Invalid {
            msg: "outermost interface fluxes are defined for interval meshes".into(),
        });
    }
    let last = mesh.inner_faces().len() - 1;
    Ok((
        interface_flux(model, mesh, flux, u, 0),
        interface_flux(model, mesh, flux, u, last),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, Domain, Model, ScalarFn, SpatialFn};
    use crate::numflux::FluxKind;
    use crate::scheme::run_evolution;
    use crate::util::{discrete_mass, l1_distance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn two_cell_resolvent_matches_quadratic_oracle() {
        // Two cells, source averages (0.8, 0.2), f = u(1-u), godunov. With
        // s = u_1 < 1/2 the balance reduces to s^2 - 1.5 s + 0.4 = 0, whose
        // admissible root is (1.5 - sqrt(0.65)) / 2.
        let model = builtin_model("fig1a").unwrap();
        let mesh = Mesh::interval(0.0, 1.0, 2, None).unwrap();
        let flux = NumericalFlux::new(FluxKind::Godunov, &model);
        let cfg = SolverConfig::default();
        let (u, _) = resolvent_apply(&model, &mesh, &flux, &cfg, &[0.8, 0.2]).unwrap();
        let s = (1.5 - 0.65_f64.sqrt()) / 2.0;
        assert!((u[0] - s).abs() < 1e-9, "u1 = {}, oracle {s}", u[0]);
        assert!((u[1] - (1.0 - s)).abs() < 1e-9);
        assert!((u[0] + u[1] - 1.0).abs() < 1e-14, "mass redistribution is exact");
    }

    #[test]
    fn stationary_solve_is_one_unit_implicit_step() {
        let model = builtin_model("fig1c").unwrap();
        let mesh = Mesh::interval(0.0, 1.0, 30, None).unwrap();
        let flux = NumericalFlux::new(FluxKind::EngquistOsher, &model);
        let cfg = SolverConfig::default();
        let (direct, _) = stationary_solve(&model, &mesh, &flux, &cfg).unwrap();
        let g = source_cell_averages(&model, &mesh);
        let (via_step, _) = implicit_step(&model, &mesh, &flux, &cfg, &g, 1.0).unwrap();
        assert_eq!(direct, via_step, "the two entry points share the solve");
    }

    #[test]
    fn resolvent_conserves_mass() {
        let model = builtin_model("fig1c").unwrap();
        let mesh = Mesh::interval(0.0, 1.0, 40, None).unwrap();
        let flux = NumericalFlux::new(FluxKind::Godunov, &model);
        let cfg = SolverConfig::default();
        let (u, _) = stationary_solve(&model, &mesh, &flux, &cfg).unwrap();
        let g = source_cell_averages(&model, &mesh);
        let drift = (discrete_mass(&mesh, &u) - discrete_mass(&mesh, &g)).abs();
        assert!(drift < 1e-14, "mass drift {drift:e}");
    }

    #[test]
    fn resolvent_contracts_and_preserves_order() {
        let model = builtin_model("fig1c").unwrap();
        let mesh = Mesh::interval(0.0, 1.0, 40, None).unwrap();
        let cfg = SolverConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for kind in FluxKind::all() {
            let flux = NumericalFlux::new(kind, &model);
            for _ in 0..5 {
                let g1: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
                // Ordered pair: g2 dominates g1.
                let g2: Vec<f64> =
                    g1.iter().map(|&v| (v + rng.gen_range(0.0..0.3)).min(1.0)).collect();
                let probe = resolvent_probe(&model, &mesh, &flux, &cfg, &g1, &g2).unwrap();
                assert!(
                    probe.solution_distance <= probe.source_distance * (1.0 + 1e-10) + 1e-13,
                    "{kind}: contraction violated: {} > {}",
                    probe.solution_distance,
                    probe.source_distance
                );
                assert!(
                    probe.solution_pos_distance
                        <= probe.source_pos_distance * (1.0 + 1e-10) + 1e-13,
                    "{kind}: positive-part contraction violated"
                );
                let defect = probe.ordering_defect.expect("sources are ordered");
                assert!(defect <= 1e-10, "{kind}: ordering defect {defect:e}");
            }
        }
    }

    #[test]
    fn march_agrees_with_evolution_run_and_settles() {
        let model = Arc::new(builtin_model("fig1c").unwrap());
        let mesh = Arc::new(Mesh::interval(0.0, 1.0, 30, None).unwrap());
        let flux = NumericalFlux::new(FluxKind::Godunov, &model);
        let cfg = SolverConfig::default();
        let t = 0.2;

        // Structural identity: the march is the implicit evolution.
        let marched = crandall_liggett(&model, &mesh, &flux, &cfg, t, 10).unwrap();
        let run = run_evolution(
            &model,
            &mesh,
            &flux,
            crate::scheme::TimeStepping::Implicit,
            &cfg,
            t / 10.0,
            t,
        )
        .unwrap();
        assert_eq!(marched, *run.states().last().unwrap());

        // Refining the march contracts successive iterates.
        let u5 = crandall_liggett(&model, &mesh, &flux, &cfg, t, 5).unwrap();
        let u10 = marched;
        let u20 = crandall_liggett(&model, &mesh, &flux, &cfg, t, 20).unwrap();
        let d1 = l1_distance(&mesh, &u5, &u10);
        let d2 = l1_distance(&mesh, &u10, &u20);
        assert!(d2 < d1, "march iterates do not settle: {d1} then {d2}");
    }

    #[test]
    fn smooth_source_on_fine_mesh_needs_the_transient_march() {
        // A cosine source crossing both the sonic point of f and the kink
        // of phi puts the initial guess far outside the basin of plain
        // Newton once the mesh is fine; the solve has to fall back to the
        // pseudo-transient march and must still conserve mass exactly.
        let model = Model::new(
            "cosine-source",
            ScalarFn::from_expr("u*(1-u)").unwrap(),
            ScalarFn::from_expr("max(u-0.6, 0)").unwrap(),
            0.6,
            1.0,
            SpatialFn::from_expr("0", 1).unwrap(),
            SpatialFn::from_expr("0.5 + 0.3*cos(pi*x)", 1).unwrap(),
            0.5,
            Domain::Interval { a: 0.0, b: 1.0 },
        )
        .unwrap();
        let mesh = Mesh::interval(0.0, 1.0, 80, None).unwrap();
        let flux = NumericalFlux::new(FluxKind::Godunov, &model);
        let cfg = SolverConfig::default();
        let (u, stats) = stationary_solve(&model, &mesh, &flux, &cfg).unwrap();
        let g = source_cell_averages(&model, &mesh);
        let drift = (discrete_mass(&mesh, &u) - discrete_mass(&mesh, &g)).abs();
        assert!(drift < 1e-13, "mass drift {drift:e}");
        assert!(stats.residual <= 1e-10, "residual {:e}", stats.residual);
        assert!(u.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn outermost_interface_fluxes_shrink_with_the_mesh() {
        // A source with mass near both ends forces activity at the outer
        // interfaces; the flux there must still vanish under refinement.
        let model = Model::new(
            "edge-source",
            ScalarFn::from_expr("u*(1-u)").unwrap(),
            ScalarFn::from_expr("max(u-0.6, 0)").unwrap(),
            0.6,
            1.0,
            SpatialFn::from_expr("0", 1).unwrap(),
            SpatialFn::from_expr("0.9*step(0.2-x) + 0.7*step(x-0.8)", 1).unwrap(),
            0.5,
            Domain::Interval { a: 0.0, b: 1.0 },
        )
        .unwrap();
        let cfg = SolverConfig::default();
        let mut norms = Vec::new();
        for n in [25, 50, 100] {
            let mesh = Mesh::interval(0.0, 1.0, n, None).unwrap();
            let flux = NumericalFlux::new(FluxKind::Godunov, &model);
            let (u, _) = stationary_solve(&model, &mesh, &flux, &cfg).unwrap();
            let (first, last) = outermost_fluxes(&model, &mesh, &flux, &u).unwrap();
            norms.push(first.abs().max(last.abs()));
        }
        assert!(
            norms[1] < norms[0] && norms[2] < norms[1],
            "outermost fluxes do not decay: {norms:?}"
        );
        // Roughly first order in h.
        assert!(norms[2] <= 0.75 * norms[0], "decay too slow: {norms:?}");
    }

    #[test]
    fn outermost_fluxes_need_an_interval_mesh() {
        let model = builtin_model("fig1a").unwrap();
        let mesh = Mesh::rectangle(1.0, 1.0, 3, 3).unwrap();
        let flux = NumericalFlux::new(FluxKind::Godunov, &model);
        let u = vec![0.0; 9];
        assert!(outermost_fluxes(&model, &mesh, &flux, &u).is_err());
    }
}
