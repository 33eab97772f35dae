//! Small numeric helpers shared across modules.

use crate::mesh::Mesh;

/// Compensated (Neumaier) summation; exact to one rounding of the result
/// for the sums of cell masses and entropy terms used in the diagnostics.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0_f64;
    let mut c = 0.0_f64;
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Total discrete mass sum_K m(K) u_K.
pub fn discrete_mass(mesh: &Mesh, u: &[f64]) -> f64 {
    kahan_sum(mesh.volumes().iter().zip(u).map(|(v, &x)| v.measure * x))
}

/// Mesh-weighted L1 distance between two states.
pub fn l1_distance(mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    kahan_sum(
        mesh.volumes()
            .iter()
            .zip(a.iter().zip(b))
            .map(|(v, (&x, &y))| v.measure * (x - y).abs()),
    )
}
