//! Run configuration: one TOML document with five sections (model, mesh,
//! scheme, output, diagnostics), all optional fields defaulted at resolve
//! time. Unknown keys are rejected so typos surface instead of silently
//! reverting to defaults. `resolve` builds the validated solver inputs and
//! a fully filled copy of the document; manifests echo that copy, so every
//! default the code chose is on the record.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Mesh, MeshError};
use crate::model::{preset_fields, Domain, Model, ModelError, ScalarFn, SpatialFn, DEFAULT_U0};
use crate::numflux::{FluxKind, NumericalFlux};
use crate::scheme::{cfl_limit, SolverConfig, TimeStepping};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Syntax or unknown-key error; the message carries line/column context.
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("invalid config: {msg}")]
    Invalid { msg: String },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { msg: msg.into() }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Starting point for the other fields: one of the builtin names.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Convective flux f(u) as an expression in u.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    /// Diffusion transform phi(u), nondecreasing, flat on [0, u_c].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_max: Option<f64>,
    /// Initial datum as an expression in x (and y in 2D).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u0: Option<String>,
    /// Source datum g for stationary problems.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    /// "interval" (default) or "rectangle".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ly: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    /// Cell count for interval domains.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Cell counts for rectangle domains.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    /// "godunov" (default), "eo" or "rusanov".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flux: Option<String>,
    /// "implicit" (default) or "explicit".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stepping: Option<String>,
    /// Time step; defaulted to the stability limit scaled by cfl_safety.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfl_safety: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nonlinear_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emit_plots: Option<bool>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LadderLevel {
    pub n: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Number of uniform entropy levels on [0, u_max] (threshold and kink
    /// levels are always added).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_grid: Option<usize>,
    /// Acceptance budget for the entropy sweep minimum; defaulted to
    /// h + dt of the run it certifies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu_budget: Option<f64>,
    /// Norm order p of the convergence table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm: Option<f64>,
    /// Nested refinement levels for converge jobs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ladder: Option<Vec<LadderLevel>>,
    /// Path to a recorded trajectory CSV; verify audits it instead of
    /// running the scheme first.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
    /// Second source datum for the stationary contraction probe.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paired_source: Option<String>,
    /// Interior window [x_lo, x_hi] for boundary-layer reports.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interior_window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub scheme: SchemeSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

/// Everything the commands consume, built once from a parsed document.
/// `document` is the input with every default filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: Arc<Model>,
    pub mesh: Arc<Mesh>,
    pub flux_kind: FluxKind,
    pub stepping: TimeStepping,
    pub dt: f64,
    pub solver: SolverConfig,
    pub out_dir: PathBuf,
    pub emit_plots: bool,
    pub k_grid: usize,
    pub nu_budget: f64,
    pub norm: f64,
    pub ladder: Vec<(usize, f64)>,
    pub trajectory: Option<PathBuf>,
    pub paired_source: Option<SpatialFn>,
    pub interior_window: [f64; 2],
    pub document: RunConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        RunConfig::from_toml(&text)
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let mut doc = self.clone();
        let (model, domain_section) = resolve_model(&mut doc.model)?;
        doc.model.domain = Some(domain_section);
        let model = Arc::new(model);

        let mesh = Arc::new(resolve_mesh(&mut doc.mesh, &model.domain)?);

        let flux_name = doc.scheme.flux.get_or_insert_with(|| "godunov".into()).clone();
        let flux_kind = FluxKind::from_str(&flux_name)
            .map_err(|e| invalid(format!("scheme.flux: {e}")))?;
        doc.scheme.flux = Some(flux_kind.name().into());
        let stepping_name = doc.scheme.stepping.get_or_insert_with(|| "implicit".into()).clone();
        let stepping = TimeStepping::from_str(&stepping_name)
            .map_err(|e| invalid(format!("scheme.stepping: {e}")))?;
        doc.scheme.stepping = Some(stepping.name().into());

        let defaults = SolverConfig::default();
        let solver = SolverConfig {
            nonlinear_tol: *doc.scheme.nonlinear_tol.get_or_insert(defaults.nonlinear_tol),
            max_iters: *doc.scheme.max_iters.get_or_insert(defaults.max_iters),
            cfl_safety: *doc.scheme.cfl_safety.get_or_insert(defaults.cfl_safety),
        };
        if !(solver.nonlinear_tol.is_finite() && solver.nonlinear_tol > 0.0) {
            return Err(invalid(format!(
                "scheme.nonlinear_tol must be positive, got {}",
                solver.nonlinear_tol
            )));
        }
        if !(solver.cfl_safety.is_finite() && solver.cfl_safety > 0.0 && solver.cfl_safety <= 1.0)
        {
            return Err(invalid(format!(
                "scheme.cfl_safety must lie in (0, 1], got {}",
                solver.cfl_safety
            )));
        }
        if solver.max_iters == 0 {
            return Err(invalid("scheme.max_iters must be at least 1"));
        }

        let flux = NumericalFlux::new(flux_kind, &model);
        let limit = cfl_limit(&model, &mesh, &flux, solver.cfl_safety);
        let dt = match doc.scheme.dt {
            Some(dt) => {
                if !(dt.is_finite() && dt > 0.0) {
                    return Err(invalid(format!("scheme.dt must be positive, got {dt}")));
                }
                if stepping == TimeStepping::Explicit && dt > limit * (1.0 + 1e-12) {
                    return Err(invalid(format!(
                        "scheme.dt = {dt} exceeds the explicit stability limit {limit:.6e}"
                    )));
                }
                dt
            }
            None => {
                if !limit.is_finite() {
                    // Constant data make every step stable; pick something.
                    model.t_end.max(1e-3) / 10.0
                } else {
                    limit
                }
            }
        };
        doc.scheme.dt = Some(dt);

        let out_dir = PathBuf::from(doc.output.dir.get_or_insert_with(|| "out".into()).clone());
        let emit_plots = *doc.output.emit_plots.get_or_insert(false);

        let k_grid = *doc.diagnostics.k_grid.get_or_insert(21);
        if k_grid < 2 {
            return Err(invalid(format!("diagnostics.k_grid must be at least 2, got {k_grid}")));
        }
        let nu_budget = *doc.diagnostics.nu_budget.get_or_insert(mesh.h() + dt);
        if !(nu_budget.is_finite() && nu_budget > 0.0) {
            return Err(invalid(format!(
                "diagnostics.nu_budget must be positive, got {nu_budget}"
            )));
        }
        let norm = *doc.diagnostics.norm.get_or_insert(1.0);
        if !(norm.is_finite() && norm >= 1.0) {
            return Err(invalid(format!("diagnostics.norm must be at least 1, got {norm}")));
        }
        let ladder: Vec<(usize, f64)> = doc
            .diagnostics
            .ladder
            .get_or_insert_with(Vec::new)
            .iter()
            .map(|l| (l.n, l.dt))
            .collect();
        for (i, &(n, dt)) in ladder.iter().enumerate() {
            if n < 2 || !(dt.is_finite() && dt > 0.0) {
                return Err(invalid(format!(
                    "diagnostics.ladder[{i}]: need n >= 2 and dt > 0, got n = {n}, dt = {dt}"
                )));
            }
        }
        let paired_source = match &doc.diagnostics.paired_source {
            Some(src) => Some(
                SpatialFn::from_expr(src, model.domain.dim())
                    .map_err(|e| invalid(format!("diagnostics.paired_source: {e}")))?,
            ),
            None => None,
        };
        let interior_window = *doc.diagnostics.interior_window.get_or_insert_with(|| {
            match model.domain {
                Domain::Interval { a, b } => [a + 0.1 * (b - a), a + 0.8 * (b - a)],
                Domain::Rectangle { lx, .. } => [0.1 * lx, 0.8 * lx],
            }
        });
        if interior_window[0] >= interior_window[1] {
            return Err(invalid(format!(
                "diagnostics.interior_window must be an increasing pair, got {interior_window:?}"
            )));
        }
        let trajectory = doc.diagnostics.trajectory.as_ref().map(PathBuf::from);

        Ok(Resolved {
            model,
            mesh,
            flux_kind,
            stepping,
            dt,
            solver,
            out_dir,
            emit_plots,
            k_grid,
            nu_budget,
            norm,
            ladder,
            trajectory,
            paired_source,
            interior_window,
            document: doc,
        })
    }
}

fn resolve_model(sec: &mut ModelSection) -> Result<(Model, DomainSection), ConfigError> {
    let preset = match &sec.preset {
        Some(name) => Some(
            preset_fields(name)
                .ok_or_else(|| invalid(format!("model.preset: unknown preset {name:?}")))?,
        ),
        None => None,
    };
    let f_src = match (&sec.f, preset) {
        (Some(f), _) => f.clone(),
        (None, Some((f, _, _))) => f.to_string(),
        (None, None) => return Err(invalid("model needs either a preset or an explicit f")),
    };
    let phi_src = match (&sec.phi, preset) {
        (Some(p), _) => p.clone(),
        (None, Some((_, p, _))) => p.to_string(),
        (None, None) => "0".to_string(),
    };
    let u_max = sec.u_max.unwrap_or(1.0);
    // Without diffusion the plateau covers everything; with an explicit phi
    // and no preset, no plateau is assumed.
    let u_c = match (sec.u_c, preset) {
        (Some(v), _) => v,
        (None, Some((_, _, v))) => v,
        (None, None) => {
            if phi_src.trim() == "0" {
                u_max
            } else {
                0.0
            }
        }
    };
    let u0_src = sec.u0.clone().unwrap_or_else(|| DEFAULT_U0.to_string());
    let source_src = sec.source.clone().unwrap_or_else(|| DEFAULT_U0.to_string());
    let t_end = sec.t_end.unwrap_or(0.5);

    let mut dom = sec.domain.clone().unwrap_or_default();
    let kind = dom.kind.get_or_insert_with(|| "interval".into()).clone();
    let domain = match kind.as_str() {
        "interval" => {
            if dom.lx.is_some() || dom.ly.is_some() {
                return Err(invalid("model.domain: lx/ly only apply to rectangles"));
            }
            let a = *dom.a.get_or_insert(0.0);
            let b = *dom.b.get_or_insert(1.0);
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(invalid(format!("model.domain: need a < b, got a = {a}, b = {b}")));
            }
            Domain::Interval { a, b }
        }
        "rectangle" => {
            if dom.a.is_some() || dom.b.is_some() {
                return Err(invalid("model.domain: a/b only apply to intervals"));
            }
            let lx = *dom.lx.get_or_insert(1.0);
            let ly = *dom.ly.get_or_insert(1.0);
            if !(lx.is_finite() && ly.is_finite() && lx > 0.0 && ly > 0.0) {
                return Err(invalid(format!(
                    "model.domain: need positive extents, got lx = {lx}, ly = {ly}"
                )));
            }
            Domain::Rectangle { lx, ly }
        }
        other => {
            return Err(invalid(format!(
                "model.domain.kind must be \"interval\" or \"rectangle\", got {other:?}"
            )))
        }
    };

    let name = sec
        .name
        .clone()
        .or_else(|| sec.preset.clone())
        .unwrap_or_else(|| "custom".to_string());

    let f = ScalarFn::from_expr(&f_src).map_err(|e| invalid(format!("model.f: {e}")))?;
    let phi = ScalarFn::from_expr(&phi_src).map_err(|e| invalid(format!("model.phi: {e}")))?;
    let u0 = SpatialFn::from_expr(&u0_src, domain.dim())
        .map_err(|e| invalid(format!("model.u0: {e}")))?;
    let g = SpatialFn::from_expr(&source_src, domain.dim())
        .map_err(|e| invalid(format!("model.source: {e}")))?;
    let model = Model::new(name.clone(), f, phi, u_c, u_max, u0, g, t_end, domain)?;

    // Echo the resolved fields back into the section.
    sec.name = Some(name);
    sec.f = Some(f_src);
    sec.phi = Some(phi_src);
    sec.u_c = Some(u_c);
    sec.u_max = Some(u_max);
    sec.u0 = Some(u0_src);
    sec.source = Some(source_src);
    sec.t_end = Some(t_end);
    Ok((model, dom))
}

fn resolve_mesh(sec: &mut MeshSection, domain: &Domain) -> Result<Mesh, ConfigError> {
    match *domain {
        Domain::Interval { a, b } => {
            if sec.nx.is_some() || sec.ny.is_some() {
                return Err(invalid("mesh: nx/ny only apply to rectangle domains"));
            }
            let n = *sec.n.get_or_insert(100);
            Ok(Mesh::interval(a, b, n, None)?)
        }
        Domain::Rectangle { lx, ly } => {
            if sec.n.is_some() {
                return Err(invalid("mesh: n only applies to interval domains; use nx/ny"));
            }
            let nx = *sec.nx.get_or_insert(32);
            let ny = *sec.ny.get_or_insert(32);
            Ok(Mesh::rectangle(lx, ly, nx, ny)?)
        }
    }
}
