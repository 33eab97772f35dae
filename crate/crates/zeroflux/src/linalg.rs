//! Banded LU without pivoting.
//!
//! The Newton matrices assembled by the scheme are column diagonally
//! dominant M-matrices (positive diagonal, nonpositive off-diagonals,
//! column sums equal to the cell measures), a class for which elimination
//! without pivoting is backward stable, so the band never widens.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("zero pivot at row {row} (value {value:e})")]
    ZeroPivot { row: usize, value: f64 },
    #[error("dimension mismatch: matrix is {n}, vector is {len}")]
    DimensionMismatch { n: usize, len: usize },
}

/// Square band matrix with `kl` subdiagonals and `ku` superdiagonals,
/// stored row-major with `kl + ku + 1` entries per row.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> BandMatrix {
        assert!(n > 0, "empty matrix");
        let width = kl + ku + 1;
        BandMatrix { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn reset(&mut self) {
        self.data.fill(0.0);
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(j + self.kl >= i && j <= i + self.ku, "({i},{j}) outside band");
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            return 0.0;
        }
        self.data[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let p = self.idx(i, j);
        self.data[p] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self.idx(i, j);
        self.data[p] += v;
    }

    /// Factors the matrix in place (destroying it) and solves A x = rhs,
    /// leaving x in `rhs`.
    pub fn solve_in_place(&mut self, rhs: &mut [f64]) -> Result<(), LinalgError> {
        let n = self.n;
        if rhs.len() != n {
            return Err(LinalgError::DimensionMismatch { n, len: rhs.len() });
        }
        // Doolittle elimination restricted to the band.
        for k in 0..n {
            let piv = self.data[self.idx(k, k)];
            if piv.abs() < 1e-300 {
                return Err(LinalgError::ZeroPivot { row: k, value: piv });
            }
            let i_end = (k + self.kl).min(n - 1);
            let j_end = (k + self.ku).min(n - 1);
            for i in k + 1..=i_end {
                let p = self.idx(i, k);
                let l = self.data[p] / piv;
                self.data[p] = l;
                if l != 0.0 {
                    for j in k + 1..=j_end {
                        let pk = self.idx(k, j);
                        let pi = self.idx(i, j);
                        self.data[pi] -= l * self.data[pk];
                    }
                }
            }
        }
        // Forward substitution with the unit lower factor.
        for k in 0..n {
            let xk = rhs[k];
            if xk != 0.0 {
                let i_end = (k + self.kl).min(n - 1);
                for i in k + 1..=i_end {
                    rhs[i] -= self.data[self.idx(i, k)] * xk;
                }
            }
        }
        // Back substitution with the upper factor.
        for k in (0..n).rev() {
            let j_end = (k + self.ku).min(n - 1);
            let mut acc = rhs[k];
            for j in k + 1..=j_end {
                acc -= self.data[self.idx(k, j)] * rhs[j];
            }
            rhs[k] = acc / self.data[self.idx(k, k)];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense Gaussian elimination with partial pivoting, the oracle.
    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut x = b.to_vec();
        for k in 0..n {
            let piv_row = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
            m.swap(k, piv_row);
            x.swap(k, piv_row);
            for i in k + 1..n {
                let l = m[i][k] / m[k][k];
                for j in k..n {
                    m[i][j] -= l * m[k][j];
                }
                x[i] -= l * x[k];
            }
        }
        for k in (0..n).rev() {
            for j in k + 1..n {
                let xj = x[j];
                x[k] -= m[k][j] * xj;
            }
            x[k] /= m[k][k];
        }
        x
    }

    #[test]
    fn tridiagonal_poisson() {
        // -x_{i-1} + 2 x_i - x_{i+1} = h^2 with Dirichlet ends has the
        // parabolic solution x_i = i (n+1-i) h^2 / 2.
        let n = 25;
        let mut m = BandMatrix::new(n, 1, 1);
        for i in 0..n {
            m.set(i, i, 2.0);
            if i > 0 {
                m.set(i, i - 1, -1.0);
            }
            if i + 1 < n {
                m.set(i, i + 1, -1.0);
            }
        }
        let mut rhs = vec![1.0; n];
        m.solve_in_place(&mut rhs).unwrap();
        for (i, &x) in rhs.iter().enumerate() {
            let k = (i + 1) as f64;
            let exact = k * ((n + 1) as f64 - k) / 2.0;
            assert!((x - exact).abs() < 1e-10, "x[{i}] = {x}, exact {exact}");
        }
    }

    #[test]
    fn matches_dense_oracle_on_random_dominant_bands() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xba2d);
        for trial in 0..50 {
            let n = rng.gen_range(1..60);
            let kl = rng.gen_range(0..4.min(n));
            let ku = rng.gen_range(0..4.min(n));
            let mut band = BandMatrix::new(n, kl, ku);
            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n {
                let mut off_sum = 0.0;
                for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                    if j != i {
                        let v = rng.gen_range(-1.0..0.0);
                        band.set(i, j, v);
                        dense[i][j] = v;
                        off_sum += v.abs();
                    }
                }
                let d = off_sum + rng.gen_range(0.1..2.0);
                band.set(i, i, d);
                dense[i][i] = d;
            }
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut x = b.clone();
            band.solve_in_place(&mut x).unwrap();
            let oracle = dense_solve(&dense, &b);
            for i in 0..n {
                assert!(
                    (x[i] - oracle[i]).abs() < 1e-9 * (1.0 + oracle[i].abs()),
                    "trial {trial}: x[{i}] = {} vs oracle {}",
                    x[i],
                    oracle[i]
                );
            }
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let mut m = BandMatrix::new(3, 1, 1);
        m.set(0, 0, 1.0);
        m.set(1, 1, 0.0);
        m.set(2, 2, 1.0);
        let mut rhs = vec![1.0, 1.0, 1.0];
        assert!(matches!(
            m.solve_in_place(&mut rhs),
            Err(LinalgError::ZeroPivot { row: 1, .. })
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut m = BandMatrix::new(3, 1, 1);
        let mut rhs = vec![1.0; 4];
        assert!(matches!(
            m.solve_in_place(&mut rhs),
            Err(LinalgError::DimensionMismatch { n: 3, len: 4 })
        ));
    }
}
