//! Trajectory CSV reader: arbitrary bytes must produce Ok or a located
//! Malformed error, never a panic, and memory stays proportional to the
//! input (&[u8] implements BufRead, so the reader is fed directly).

#![no_main]

use libfuzzer_sys::fuzz_target;
use zeroflux::io::read_trajectory;

fuzz_target!(|data: &[u8]| {
    let _ = read_trajectory(data, "fuzz");
});
