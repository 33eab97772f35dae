//! Run-config deserialization and resolution. Resolution builds the mesh
//! and averages the initial datum over it, so cell counts are capped here
//! to keep the target memory-bounded; the parse path itself is unrestricted.

#![no_main]

use libfuzzer_sys::fuzz_target;
use zeroflux::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(raw) = RunConfig::from_toml(text) else { return };
    // Missing counts fall back to the resolver defaults (100 and 32x32).
    let cells = raw
        .mesh
        .n
        .unwrap_or(100)
        .max(raw.mesh.nx.unwrap_or(32).saturating_mul(raw.mesh.ny.unwrap_or(32)));
    if cells <= 512 {
        let _ = raw.resolve();
    }
});
