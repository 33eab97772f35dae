//! Problem data: convective flux f, nonlinear diffusion phi, initial datum,
//! stationary source, and the invariant-region parameters.
//!
//! The continuous problem is u_t + div f(u) - Lap phi(u) = 0 with zero flux
//! across the whole boundary. phi is Lipschitz nondecreasing, identically
//! zero on the plateau [0, u_c] and increasing past u_c, so the equation
//! degenerates to pure transport wherever u <= u_c. The invariant region
//! [0, u_max] is preserved by the scheme exactly when f(0) = f(u_max) = 0;
//! that condition is reported as `h1_satisfied` and is deliberately not
//! enforced, because runs that violate it (mass piling up against a
//! boundary) are legitimate experiments.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::expr::{Expr, ExprError};

/// Sample count for validation and Lipschitz estimation on [0, u_max].
const SCAN_SAMPLES: usize = 10_000;
/// Absolute slack for "equals zero" style checks on model functions.
const FLATNESS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone)]
pub enum ModelError {
    #[error("expression: {0}")]
    Expr(#[from] ExprError),
    #[error("phi is decreasing near u = {at} (phi({at}) = {left} > {right} = phi({at_next}))")]
    DecreasingPhi { at: f64, at_next: f64, left: f64, right: f64 },
    #[error("phi must vanish on [0, u_c]: phi({at}) = {value}")]
    PhiNotZeroOnPlateau { at: f64, value: f64 },
    #[error("u0({x}, {y}) = {value} lies outside [0, u_max]")]
    U0OutOfRange { x: f64, y: f64, value: f64 },
    #[error("{what} is not finite at {at}")]
    NonFinite { what: &'static str, at: f64 },
    #[error("invalid model parameter: {msg}")]
    InvalidParameter { msg: String },
}

type NativeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type NativeFn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum ScalarBody {
    Expr { expr: Expr, deriv: Expr },
    Native { f: NativeFn, df: Option<NativeFn> },
}

/// Scalar function of the conserved quantity (flux f or diffusion phi).
#[derive(Clone)]
pub struct ScalarFn {
    body: ScalarBody,
    desc: String,
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarFn({})", self.desc)
    }
}

impl ScalarFn {
    /// Parses an expression over the variable `u`.
    pub fn from_expr(src: &str) -> Result<ScalarFn, ExprError> {
        let expr = Expr::parse(src, &["u"])?;
        let deriv = expr.differentiate(0);
        Ok(ScalarFn {
            body: ScalarBody::Expr { expr, deriv },
            desc: src.trim().to_string(),
        })
    }

    /// Wraps a native closure; `df` falls back to a central difference.
    pub fn native(
        desc: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: Option<NativeFn>,
    ) -> ScalarFn {
        ScalarFn {
            body: ScalarBody::Native { f: Arc::new(f), df },
            desc: desc.into(),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match &self.body {
            ScalarBody::Expr { expr, .. } => expr.eval(&[s]),
            ScalarBody::Native { f, .. } => f(s),
        }
    }

    /// One-sided derivative (right derivative at kinks for expressions).
    pub fn deriv(&self, s: f64) -> f64 {
        match &self.body {
            ScalarBody::Expr { deriv, .. } => deriv.eval(&[s]),
            ScalarBody::Native { f, df } => match df {
                Some(d) => d(s),
                None => {
                    let h = 1e-6 * s.abs().max(1.0);
                    (f(s + h) - f(s - h)) / (2.0 * h)
                }
            },
        }
    }

    pub fn describe(&self) -> &str {
        &self.desc
    }
}

/// Function of a spatial point (initial datum u0 or stationary source g).
#[derive(Clone)]
pub struct SpatialFn {
    body: SpatialBody,
    desc: String,
}

#[derive(Clone)]
enum SpatialBody {
    Expr(Expr),
    Native(NativeFn2),
}

impl fmt::Debug for SpatialFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpatialFn({})", self.desc)
    }
}

impl SpatialFn {
    /// Parses an expression over `x` (1D) or `x, y` (2D).
    pub fn from_expr(src: &str, dim: u8) -> Result<SpatialFn, ExprError> {
        let expr = if dim == 1 {
            Expr::parse(src, &["x"])?
        } else {
            Expr::parse(src, &["x", "y"])?
        };
        Ok(SpatialFn { body: SpatialBody::Expr(expr), desc: src.trim().to_string() })
    }

    pub fn native(
        desc: impl Into<String>,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> SpatialFn {
        SpatialFn { body: SpatialBody::Native(Arc::new(f)), desc: desc.into() }
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        match &self.body {
            SpatialBody::Expr(expr) => expr.eval(&[p[0], p[1]]),
            SpatialBody::Native(f) => f(p[0], p[1]),
        }
    }

    pub fn describe(&self) -> &str {
        &self.desc
    }
}

/// Spatial domain the problem is posed on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Rectangle { lx: f64, ly: f64 },
}

impl Domain {
    pub fn dim(&self) -> u8 {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rectangle { .. } => 2,
        }
    }

    pub fn measure(&self) -> f64 {
        match self {
            Domain::Interval { a, b } => b - a,
            Domain::Rectangle { lx, ly } => lx * ly,
        }
    }
}

/// Validation summary; all quantities are sampled on a uniform scan grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub h1_satisfied: bool,
    pub f_at_zero: f64,
    pub f_at_umax: f64,
    pub lip_f: f64,
    pub lip_phi: f64,
    /// phi increases strictly between u_c and u_max (vacuous if u_c = u_max).
    pub phi_increasing_past_uc: bool,
    pub u0_min: f64,
    pub u0_max: f64,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub f: ScalarFn,
    pub phi: ScalarFn,
    pub u_c: f64,
    pub u_max: f64,
    pub u0: SpatialFn,
    pub g: SpatialFn,
    pub t_end: f64,
    pub domain: Domain,
    validation: ValidationReport,
}

impl Model {
    /// Builds and validates a model.
    ///
    /// Rejected outright: decreasing phi, phi nonzero on [0, u_c], u0 outside
    /// [0, u_max], non-finite samples, inconsistent parameters. A violated
    /// zero-endpoint condition on f only clears `h1_satisfied`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        f: ScalarFn,
        phi: ScalarFn,
        u_c: f64,
        u_max: f64,
        u0: SpatialFn,
        g: SpatialFn,
        t_end: f64,
        domain: Domain,
    ) -> Result<Model, ModelError> {
        if !(u_max.is_finite() && u_max > 0.0) {
            return Err(ModelError::InvalidParameter {
                msg: format!("u_max must be positive and finite, got {u_max}"),
            });
        }
        if !(u_c.is_finite() && (0.0..=u_max).contains(&u_c)) {
            return Err(ModelError::InvalidParameter {
                msg: format!("u_c must lie in [0, u_max], got {u_c}"),
            });
        }
        if !(t_end.is_finite() && t_end >= 0.0) {
            return Err(ModelError::InvalidParameter {
                msg: format!("t_end must be nonnegative and finite, got {t_end}"),
            });
        }
        let validation = check_functions(&f, &phi, u_c, u_max, &u0, &g, domain)?;
        Ok(Model {
            name: name.into(),
            f,
            phi,
            u_c,
            u_max,
            u0,
            g,
            t_end,
            domain,
            validation,
        })
    }

    pub fn validation(&self) -> &ValidationReport {
        &self.validation
    }

    pub fn h1_satisfied(&self) -> bool {
        self.validation.h1_satisfied
    }

    pub fn lip_f(&self) -> f64 {
        self.validation.lip_f
    }

    pub fn lip_phi(&self) -> f64 {
        self.validation.lip_phi
    }
}

fn check_functions(
    f: &ScalarFn,
    phi: &ScalarFn,
    u_c: f64,
    u_max: f64,
    u0: &SpatialFn,
    g: &SpatialFn,
    domain: Domain,
) -> Result<ValidationReport, ModelError> {
    let n = SCAN_SAMPLES;
    let grid = |i: usize| u_max * (i as f64) / (n as f64);

    let mut prev_phi = phi.eval(0.0);
    let mut prev_f = f.eval(0.0);
    if !prev_phi.is_finite() {
        return Err(ModelError::NonFinite { what: "phi", at: 0.0 });
    }
    if !prev_f.is_finite() {
        return Err(ModelError::NonFinite { what: "f", at: 0.0 });
    }
    let mut lip_f: f64 = 0.0;
    let mut lip_phi: f64 = 0.0;
    for i in 1..=n {
        let s = grid(i);
        let pv = phi.eval(s);
        let fv = f.eval(s);
        if !pv.is_finite() {
            return Err(ModelError::NonFinite { what: "phi", at: s });
        }
        if !fv.is_finite() {
            return Err(ModelError::NonFinite { what: "f", at: s });
        }
        let ds = s - grid(i - 1);
        if pv < prev_phi - FLATNESS_TOL {
            return Err(ModelError::DecreasingPhi {
                at: grid(i - 1),
                at_next: s,
                left: prev_phi,
                right: pv,
            });
        }
        lip_phi = lip_phi.max((pv - prev_phi).abs() / ds);
        lip_f = lip_f.max((fv - prev_f).abs() / ds);
        // One-sided analytic derivatives usually dominate the quotients and
        // catch the endpoints exactly.
        lip_f = lip_f.max(f.deriv(s).abs());
        lip_phi = lip_phi.max(phi.deriv(s).abs());
        prev_phi = pv;
        prev_f = fv;
    }
    lip_f = lip_f.max(f.deriv(0.0).abs());
    lip_phi = lip_phi.max(phi.deriv(0.0).abs());
    if !lip_f.is_finite() {
        return Err(ModelError::NonFinite { what: "derivative of f", at: 0.0 });
    }
    if !lip_phi.is_finite() {
        return Err(ModelError::NonFinite { what: "derivative of phi", at: 0.0 });
    }

    // phi must vanish on the degenerate plateau [0, u_c].
    let plateau_samples = 256;
    for i in 0..=plateau_samples {
        let s = u_c * (i as f64) / (plateau_samples as f64);
        let pv = phi.eval(s);
        if pv.abs() > FLATNESS_TOL {
            return Err(ModelError::PhiNotZeroOnPlateau { at: s, value: pv });
        }
    }

    let phi_increasing_past_uc = if u_c < u_max {
        phi.eval(u_max) > phi.eval(u_c) + FLATNESS_TOL
    } else {
        true
    };

    // Sample u0 and g over the domain.
    let mut u0_min = f64::INFINITY;
    let mut u0_max = f64::NEG_INFINITY;
    let mut probe = |p: [f64; 2]| -> Result<(), ModelError> {
        let v = u0.eval(p);
        if !v.is_finite() {
            return Err(ModelError::NonFinite { what: "u0", at: p[0] });
        }
        if !(-FLATNESS_TOL..=u_max + FLATNESS_TOL).contains(&v) {
            return Err(ModelError::U0OutOfRange { x: p[0], y: p[1], value: v });
        }
        let gv = g.eval(p);
        if !gv.is_finite() {
            return Err(ModelError::NonFinite { what: "g", at: p[0] });
        }
        u0_min = u0_min.min(v);
        u0_max = u0_max.max(v);
        Ok(())
    };
    match domain {
        Domain::Interval { a, b } => {
            for i in 0..=n {
                let x = a + (b - a) * (i as f64) / (n as f64);
                probe([x, 0.0])?;
            }
        }
        Domain::Rectangle { lx, ly } => {
            let side = 101;
            for j in 0..=side {
                for i in 0..=side {
                    let x = lx * (i as f64) / (side as f64);
                    let y = ly * (j as f64) / (side as f64);
                    probe([x, y])?;
                }
            }
        }
    }

    let f0 = f.eval(0.0);
    let fm = f.eval(u_max);
    Ok(ValidationReport {
        h1_satisfied: f0.abs() <= FLATNESS_TOL && fm.abs() <= FLATNESS_TOL,
        f_at_zero: f0,
        f_at_umax: fm,
        lip_f,
        lip_phi,
        phi_increasing_past_uc,
        u0_min,
        u0_max,
    })
}

/// Default initial bump: 0.8 on [0.3, 0.6], zero elsewhere.
pub const DEFAULT_U0: &str = "0.8*step(x-0.3)*step(0.6-x)";

/// Named model presets on (0, 1) with the default bump datum and T = 0.5.
///
/// - `fig1a`: f = u(1-u), no diffusion; both flux endpoints vanish.
/// - `fig1b`: f = u^2/2, no diffusion; f(u_max) > 0, so mass piles up
///   against the outflow boundary and [0, u_max] is not invariant.
/// - `fig1c`: f = u(1-u) with phi = (u - 0.6)^+, degenerate up to u_c = 0.6.
/// - `heat-like`: pure diffusion, phi = u.
/// - `parabolic`: nondegenerate mix, u_c = 0 with phi = u/2.
/// - `hyperbolic`: cubic flux without diffusion.
pub fn builtin_model(name: &str) -> Option<Model> {
    let (f, phi, u_c) = preset_fields(name)?;
    let model = Model::new(
        name,
        ScalarFn::from_expr(f).expect("builtin flux parses"),
        ScalarFn::from_expr(phi).expect("builtin phi parses"),
        u_c,
        1.0,
        SpatialFn::from_expr(DEFAULT_U0, 1).expect("builtin u0 parses"),
        SpatialFn::from_expr(DEFAULT_U0, 1).expect("builtin g parses"),
        0.5,
        Domain::Interval { a: 0.0, b: 1.0 },
    )
    .expect("builtin models are valid");
    Some(model)
}

pub fn builtin_model_names() -> &'static [&'static str] {
    &["fig1a", "fig1b", "fig1c", "heat-like", "parabolic", "hyperbolic"]
}

/// Expression strings (f, phi, u_c) behind each preset, so configs can
/// start from a preset and override single fields.
pub(crate) fn preset_fields(name: &str) -> Option<(&'static str, &'static str, f64)> {
    Some(match name {
        "fig1a" => ("u*(1-u)", "0", 1.0),
        "fig1b" => ("u^2/2", "0", 1.0),
        "fig1c" => ("u*(1-u)", "max(u-0.6, 0)", 0.6),
        "heat-like" => ("0", "u", 0.0),
        "parabolic" => ("u*(1-u)", "0.5*u", 0.0),
        "hyperbolic" => ("u^2*(1-u)", "0", 1.0),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_h1_flags() {
        let a = builtin_model("fig1a").unwrap();
        assert!(a.h1_satisfied());
        assert!((a.validation().f_at_umax).abs() < 1e-15);

        let b = builtin_model("fig1b").unwrap();
        assert!(!b.h1_satisfied());
        assert!((b.validation().f_at_umax - 0.5).abs() < 1e-15);

        let c = builtin_model("fig1c").unwrap();
        assert!(c.h1_satisfied());
        assert_eq!(c.u_c, 0.6);
        assert!(c.validation().phi_increasing_past_uc);
    }

    #[test]
    fn lipschitz_estimates() {
        let a = builtin_model("fig1a").unwrap();
        // |f'| = |1 - 2u| peaks at the endpoints with value 1.
        assert!((a.lip_f() - 1.0).abs() < 1e-9, "lip_f = {}", a.lip_f());
        assert_eq!(a.lip_phi(), 0.0);

        let c = builtin_model("fig1c").unwrap();
        assert!((c.lip_phi() - 1.0).abs() < 1e-9);

        let h = builtin_model("heat-like").unwrap();
        assert!((h.lip_phi() - 1.0).abs() < 1e-9);
        assert_eq!(h.lip_f(), 0.0);
    }

    #[test]
    fn default_bump_sampling() {
        let m = builtin_model("fig1a").unwrap();
        assert!(m.validation().u0_min.abs() < 1e-15);
        assert!((m.validation().u0_max - 0.8).abs() < 1e-15);
    }

    #[test]
    fn decreasing_phi_is_rejected() {
        let err = Model::new(
            "bad",
            ScalarFn::from_expr("0").unwrap(),
            ScalarFn::from_expr("-u").unwrap(),
            0.0,
            1.0,
            SpatialFn::from_expr("0", 1).unwrap(),
            SpatialFn::from_expr("0", 1).unwrap(),
            0.5,
            Domain::Interval { a: 0.0, b: 1.0 },
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::DecreasingPhi { .. }), "{err}");
    }

    #[test]
    fn phi_must_vanish_on_plateau() {
        let err = Model::new(
            "bad",
            ScalarFn::from_expr("0").unwrap(),
            ScalarFn::from_expr("u").unwrap(), // nonzero below u_c = 0.5
            0.5,
            1.0,
            SpatialFn::from_expr("0", 1).unwrap(),
            SpatialFn::from_expr("0", 1).unwrap(),
            0.5,
            Domain::Interval { a: 0.0, b: 1.0 },
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::PhiNotZeroOnPlateau { .. }), "{err}");
    }

    #[test]
    fn u0_outside_range_is_rejected() {
        let err = Model::new(
            "bad",
            ScalarFn::from_expr("0").unwrap(),
            ScalarFn::from_expr("u").unwrap(),
            0.0,
            1.0,
            SpatialFn::from_expr("1.5", 1).unwrap(),
            SpatialFn::from_expr("0", 1).unwrap(),
            0.5,
            Domain::Interval { a: 0.0, b: 1.0 },
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::U0OutOfRange { .. }), "{err}");
    }

    #[test]
    fn parameter_sanity() {
        let f = || ScalarFn::from_expr("0").unwrap();
        let s = || SpatialFn::from_expr("0", 1).unwrap();
        let d = Domain::Interval { a: 0.0, b: 1.0 };
        assert!(Model::new("m", f(), f(), 0.0, -1.0, s(), s(), 0.5, d).is_err());
        assert!(Model::new("m", f(), f(), 2.0, 1.0, s(), s(), 0.5, d).is_err());
        assert!(Model::new("m", f(), f(), 0.0, 1.0, s(), s(), -0.5, d).is_err());
    }

    #[test]
    fn native_functions_work() {
        let m = Model::new(
            "native",
            ScalarFn::native("0", |_| 0.0, None),
            ScalarFn::native("u", |u| u, Some(Arc::new(|_| 1.0))),
            0.0,
            1.0,
            SpatialFn::native("cosine", |x, _| 0.5 + 0.4 * (std::f64::consts::PI * x).cos()),
            SpatialFn::native("0", |_, _| 0.0),
            0.1,
            Domain::Interval { a: 0.0, b: 1.0 },
        )
        .unwrap();
        assert!((m.lip_phi() - 1.0).abs() < 1e-12);
        assert!((m.u0.eval([0.0, 0.0]) - 0.9).abs() < 1e-15);
    }
}
