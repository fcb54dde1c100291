//! Dense LDL^T factorization of the reduced symmetric quasi-definite KKT
//! matrix
//!
//! ```text
//!   [ S + delta I     A^T      ]      S = G^T W^{-2} G
//!   [ A            -delta I    ]
//! ```
//!
//! Static regularization makes the matrix strongly quasi-definite, so the
//! factorization needs no pivoting; iterative refinement against the
//! unregularized operator restores accuracy.

/// Packed strictly-lower-triangular storage: row i occupies i entries
/// starting at `i * (i - 1) / 2`; the diagonal of D lives in `d`.
pub struct LdlFactor {
    n: usize,
    rows: Vec<f64>, // strictly lower triangle of L, row-packed
    d: Vec<f64>,
}

#[inline]
fn row_start(i: usize) -> usize {
    i * i.saturating_sub(1) / 2
}

impl LdlFactor {
    /// Factor a dense symmetric matrix given by its lower-triangle accessor
    /// (`m(i, j)` valid for j <= i). Returns None if a pivot collapses.
    pub fn factor(n: usize, m: impl Fn(usize, usize) -> f64) -> Option<LdlFactor> {
        let tri = row_start(n);
        let mut rows = vec![0.0; tri];
        let mut scaled = vec![0.0; tri];
        let mut d = vec![0.0; n];
        for i in 0..n {
            let (done, current) = scaled.split_at_mut(row_start(i));
            let si = &mut current[..i];
            let li = &mut rows[row_start(i)..row_start(i) + i];
            for j in 0..i {
                let sj = &done[row_start(j)..row_start(j) + j];
                let mut acc = m(i, j);
                for k in 0..j {
                    acc -= li[k] * sj[k];
                }
                li[j] = acc / d[j];
            }
            let mut diag = m(i, i);
            for k in 0..i {
                let sik = li[k] * d[k];
                si[k] = sik;
                diag -= li[k] * sik;
            }
            if diag == 0.0 || !diag.is_finite() {
                return None;
            }
            d[i] = diag;
        }
        drop(scaled);
        Some(LdlFactor { n, rows, d })
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.rows[row_start(i)..row_start(i) + i]
    }

    /// Solve `L D L^T x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let li = self.row(i);
            let mut acc = b[i];
            for k in 0..i {
                acc -= li[k] * b[k];
            }
            b[i] = acc;
        }
        for i in 0..n {
            b[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let xi = b[i];
            let li = self.row(i);
            for k in 0..i {
                b[k] -= li[k] * xi;
            }
        }
    }

    /// Hand the scaled rows back for inspection in tests.
    #[cfg(test)]
    pub fn diag(&self) -> &[f64] {
        &self.d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn factor_and_solve_quasidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..40 {
            let nx = rng.random_range(1..8);
            let ny = rng.random_range(0..5usize);
            let n = nx + ny;
            // build [ P A'; A -R ] with P spd, R spd
            let mut full = vec![vec![0.0; n]; n];
            let mut b = vec![0.0; nx * nx];
            for v in b.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            for i in 0..nx {
                for j in 0..nx {
                    let mut s = 0.0;
                    for k in 0..nx {
                        s += b[i * nx + k] * b[j * nx + k];
                    }
                    full[i][j] = s + if i == j { 0.5 } else { 0.0 };
                }
            }
            for i in 0..ny {
                for j in 0..nx {
                    let v = rng.random_range(-1.0..1.0);
                    full[nx + i][j] = v;
                    full[j][nx + i] = v;
                }
                full[nx + i][nx + i] = -rng.random_range(0.5..1.5);
            }
            let f = LdlFactor::factor(n, |i, j| full[i][j]).unwrap();
            let pos = f.diag().iter().filter(|&&v| v > 0.0).count();
            assert_eq!(pos, nx, "inertia of a quasidefinite matrix");
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut rhs = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    rhs[i] += full[i][j] * xs[j];
                }
            }
            f.solve_in_place(&mut rhs);
            for i in 0..n {
                assert!((rhs[i] - xs[i]).abs() < 1e-7, "solve mismatch");
            }
        }
    }
}
