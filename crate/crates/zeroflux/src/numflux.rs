//! Monotone two-point numerical fluxes for the convective part.
//!
//! Every flux G(a, b) here is consistent (G(s, s) = f(s)), nondecreasing in
//! the first argument, nonincreasing in the second, and Lipschitz. Those
//! three axioms are what the scheme's structural properties (invariant
//! region, L1 contraction, discrete entropy inequalities) rest on.
//!
//! Godunov and Engquist-Osher are evaluated exactly through a cache of the
//! flux's critical points: interval extrema reduce to candidate evaluations,
//! and the Engquist-Osher integrals of max(f', 0) / min(f', 0) telescope to
//! positive and negative variations over the monotone pieces between
//! critical points. The cache is built once per flux by a sign-change scan
//! of f' (and f'' for the Rusanov speed) over [-u_max, 2*u_max]; arguments
//! outside that window fall back to a per-call sampled scan. The window is
//! deliberately wider than [0, u_max] because runs whose convective flux
//! does not vanish at u_max legitimately push cell values past u_max.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{Model, ScalarFn};

/// Scan resolution for the f' sign-change pass.
const CRIT_SCAN: usize = 4096;
/// Scan resolution for the f'' sign-change pass (extrema of f').
const CRIT2_SCAN: usize = 2048;
/// Fallback sampling for arguments outside the cached window.
const FALLBACK_SCAN: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluxError {
    #[error("flux argument {name} = {value} outside [0, {u_max}]")]
    OutOfDomain { name: &'static str, value: f64, u_max: f64 },
    #[error("unknown flux kind {0:?} (expected godunov, eo, or rusanov)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FluxKind {
    Godunov,
    EngquistOsher,
    Rusanov,
}

impl FluxKind {
    pub fn name(&self) -> &'static str {
        match self {
            FluxKind::Godunov => "godunov",
            FluxKind::EngquistOsher => "eo",
            FluxKind::Rusanov => "rusanov",
        }
    }

    pub fn all() -> [FluxKind; 3] {
        [FluxKind::Godunov, FluxKind::EngquistOsher, FluxKind::Rusanov]
    }
}

impl fmt::Display for FluxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FluxKind {
    type Err = FluxError;

    fn from_str(s: &str) -> Result<FluxKind, FluxError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "godunov" => Ok(FluxKind::Godunov),
            "eo" | "engquist-osher" | "engquist_osher" => Ok(FluxKind::EngquistOsher),
            "rusanov" => Ok(FluxKind::Rusanov),
            other => Err(FluxError::UnknownKind(other.to_string())),
        }
    }
}

/// A monotone numerical flux bound to a model's convective flux f.
#[derive(Clone)]
pub struct NumericalFlux {
    kind: FluxKind,
    f: ScalarFn,
    u_max: f64,
    scan_lo: f64,
    scan_hi: f64,
    /// Sign-change points of f' within the scan window, sorted.
    crit: Vec<f64>,
    /// Sign-change points of f'' (extrema of f'), sorted.
    crit2: Vec<f64>,
    /// max |f'| over [0, u_max].
    lip01: f64,
}

impl fmt::Debug for NumericalFlux {
    fn fmt(&self, w: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(w, "NumericalFlux({}, f = {})", self.kind, self.f.describe())
    }
}

fn sign8(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Locates sign transitions of `d` on [lo, hi]: for every adjacent sample
/// pair with different sign classes the boundary is refined by bisection.
fn scan_sign_changes(d: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let x = |i: usize| lo + (hi - lo) * (i as f64) / (n as f64);
    let mut prev_x = x(0);
    let mut prev_s = sign8(d(prev_x));
    for i in 1..=n {
        let cur_x = x(i);
        let cur_s = sign8(d(cur_x));
        if cur_s != prev_s {
            let (mut a, mut b) = (prev_x, cur_x);
            for _ in 0..80 {
                let mid = 0.5 * (a + b);
                if sign8(d(mid)) == prev_s {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            out.push(0.5 * (a + b));
        }
        prev_x = cur_x;
        prev_s = cur_s;
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    out
}

impl NumericalFlux {
    pub fn new(kind: FluxKind, model: &Model) -> NumericalFlux {
        Self::from_parts(kind, model.f.clone(), model.u_max)
    }

    /// Builds a flux directly from f and the invariant-region ceiling.
    pub fn from_parts(kind: FluxKind, f: ScalarFn, u_max: f64) -> NumericalFlux {
        let scan_lo = -u_max;
        let scan_hi = 2.0 * u_max;
        let df = |s: f64| f.deriv(s);
        let crit = scan_sign_changes(&df, scan_lo, scan_hi, CRIT_SCAN);
        // f'' through the symbolic derivative when available; for native f
        // the nested difference quotient is noisy, so extrema of f' are
        // additionally covered by the sampling in lambda_on.
        let h2 = 1e-5;
        let ddf = |s: f64| (f.deriv(s + h2) - f.deriv(s - h2)) / (2.0 * h2);
        let crit2 = scan_sign_changes(&ddf, scan_lo, scan_hi, CRIT2_SCAN);
        let mut flux = NumericalFlux {
            kind,
            f,
            u_max,
            scan_lo,
            scan_hi,
            crit,
            crit2,
            lip01: 0.0,
        };
        flux.lip01 = flux.lambda_on(0.0, u_max);
        flux
    }

    pub fn kind(&self) -> FluxKind {
        self.kind
    }

    /// Slope bound L_F entering the explicit time-step restriction:
    /// max |f'| for godunov and engquist-osher, plus the largest local
    /// speed for rusanov.
    pub fn lipschitz_bound(&self) -> f64 {
        match self.kind {
            FluxKind::Godunov | FluxKind::EngquistOsher => self.lip01,
            FluxKind::Rusanov => 2.0 * self.lip01,
        }
    }

    /// max |f'| over [0, u_max].
    pub fn max_speed(&self) -> f64 {
        self.lip01
    }

    /// Flux value with the arguments checked against [0, u_max].
    pub fn value(&self, a: f64, b: f64) -> Result<f64, FluxError> {
        let slack = 1e-12 * self.u_max.max(1.0);
        if !(-slack..=self.u_max + slack).contains(&a) {
            return Err(FluxError::OutOfDomain { name: "a", value: a, u_max: self.u_max });
        }
        if !(-slack..=self.u_max + slack).contains(&b) {
            return Err(FluxError::OutOfDomain { name: "b", value: b, u_max: self.u_max });
        }
        Ok(self.value_extended(a, b))
    }

    /// Flux value without the domain check. Solvers use this form: cell
    /// values escape [0, u_max] whenever f(u_max) != 0, and refusing to
    /// evaluate there would hide exactly the behavior worth observing.
    pub fn value_extended(&self, a: f64, b: f64) -> f64 {
        match self.kind {
            FluxKind::Godunov => {
                if a <= b {
                    self.extrema_on(a, b).0
                } else {
                    self.extrema_on(b, a).1
                }
            }
            FluxKind::EngquistOsher => self.f.eval(0.0) + self.pos_var(a) + self.neg_var(b),
            FluxKind::Rusanov => {
                let lam = self.lambda_on(a.min(b), a.max(b));
                0.5 * (self.f.eval(a) + self.f.eval(b)) - 0.5 * lam * (b - a)
            }
        }
    }

    /// Kruzhkov entropy flux pair at level k: G(a|k, b|k) - G(a&k, b&k),
    /// consistent with sign(s - k) (f(s) - f(k)).
    pub fn entropy_pair(&self, a: f64, b: f64, k: f64) -> f64 {
        self.value_extended(a.max(k), b.max(k)) - self.value_extended(a.min(k), b.min(k))
    }

    /// One-sided partial derivative in the first argument, clamped to >= 0.
    pub fn d1(&self, a: f64, b: f64) -> f64 {
        match self.kind {
            FluxKind::EngquistOsher => self.f.deriv(a).max(0.0),
            _ => {
                let h = 1e-7 * a.abs().max(1.0);
                ((self.value_extended(a + h, b) - self.value_extended(a, b)) / h).max(0.0)
            }
        }
    }

    /// One-sided partial derivative in the second argument, clamped to <= 0.
    pub fn d2(&self, a: f64, b: f64) -> f64 {
        match self.kind {
            FluxKind::EngquistOsher => self.f.deriv(b).min(0.0),
            _ => {
                let h = 1e-7 * b.abs().max(1.0);
                ((self.value_extended(a, b + h) - self.value_extended(a, b)) / h).min(0.0)
            }
        }
    }

    fn crit_slice(&self, lo: f64, hi: f64) -> &[f64] {
        let i0 = self.crit.partition_point(|&c| c <= lo);
        let i1 = self.crit.partition_point(|&c| c < hi).max(i0);
        &self.crit[i0..i1]
    }

    /// (min f, max f) over [lo, hi], lo <= hi.
    fn extrema_on(&self, lo: f64, hi: f64) -> (f64, f64) {
        let mut mn = f64::INFINITY;
        let mut mx = f64::NEG_INFINITY;
        let visit = |s: f64, mn: &mut f64, mx: &mut f64| {
            let v = self.f.eval(s);
            if v < *mn {
                *mn = v;
            }
            if v > *mx {
                *mx = v;
            }
        };
        visit(lo, &mut mn, &mut mx);
        visit(hi, &mut mn, &mut mx);
        for &c in self.crit_slice(lo, hi) {
            visit(c, &mut mn, &mut mx);
        }
        if lo < self.scan_lo || hi > self.scan_hi {
            for i in 1..FALLBACK_SCAN {
                let s = lo + (hi - lo) * (i as f64) / (FALLBACK_SCAN as f64);
                visit(s, &mut mn, &mut mx);
            }
        }
        (mn, mx)
    }

    /// Integral of max(f', 0) from 0 to a, as the positive variation of f
    /// over the monotone pieces between critical points.
    fn pos_var(&self, a: f64) -> f64 {
        self.variation(a, true)
    }

    /// Integral of min(f', 0) from 0 to b (nonpositive for b >= 0).
    fn neg_var(&self, b: f64) -> f64 {
        self.variation(b, false)
    }

    fn variation(&self, a: f64, positive: bool) -> f64 {
        if a == 0.0 {
            return 0.0;
        }
        let (lo, hi, sgn) = if a > 0.0 { (0.0, a, 1.0) } else { (a, 0.0, -1.0) };
        let mut acc = 0.0;
        let mut prev = self.f.eval(lo);
        let step = |v: f64, acc: &mut f64, prev: &mut f64| {
            let d = v - *prev;
            *acc += if positive { d.max(0.0) } else { d.min(0.0) };
            *prev = v;
        };
        if lo < self.scan_lo || hi > self.scan_hi {
            for i in 1..FALLBACK_SCAN {
                let s = lo + (hi - lo) * (i as f64) / (FALLBACK_SCAN as f64);
                step(self.f.eval(s), &mut acc, &mut prev);
            }
        } else {
            for &c in self.crit_slice(lo, hi) {
                step(self.f.eval(c), &mut acc, &mut prev);
            }
        }
        step(self.f.eval(hi), &mut acc, &mut prev);
        sgn * acc
    }

    /// max |f'| over [lo, hi]: endpoints, extrema of f', and zeros of f'
    /// nudged to both sides so one-sided kink slopes are seen.
    fn lambda_on(&self, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo <= hi);
        let nudge = 1e-9 * self.u_max.max(1.0);
        let mut lam = self.f.deriv(lo).abs().max(self.f.deriv(hi).abs());
        let visit = |s: f64, lam: &mut f64| {
            let a = (s - nudge).max(lo);
            let b = (s + nudge).min(hi);
            *lam = lam.max(self.f.deriv(a).abs()).max(self.f.deriv(b).abs());
        };
        let i0 = self.crit2.partition_point(|&c| c <= lo);
        for &c in &self.crit2[i0..] {
            if c >= hi {
                break;
            }
            visit(c, &mut lam);
        }
        for &c in self.crit_slice(lo, hi) {
            visit(c, &mut lam);
        }
        if lo < self.scan_lo || hi > self.scan_hi {
            for i in 1..FALLBACK_SCAN {
                let s = lo + (hi - lo) * (i as f64) / (FALLBACK_SCAN as f64);
                lam = lam.max(self.f.deriv(s).abs());
            }
        }
        lam
    }
}
