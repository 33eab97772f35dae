//! Expression grammar: parsing must never panic or overflow the stack, and
//! a successfully parsed function must evaluate and differentiate without
//! panicking (non-finite results are fine, f64 carries them).

#![no_main]

use libfuzzer_sys::fuzz_target;
use zeroflux::model::{ScalarFn, SpatialFn};

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    if let Ok(f) = ScalarFn::from_expr(src) {
        for s in [-1.0, 0.0, 0.5, 1.0, 1e300, f64::NAN] {
            let _ = f.eval(s);
            let _ = f.deriv(s);
        }
    }
    for dim in [1, 2] {
        if let Ok(g) = SpatialFn::from_expr(src, dim) {
            let _ = g.eval([0.25, 0.75]);
            let _ = g.eval([f64::INFINITY, -0.0]);
        }
    }
});
