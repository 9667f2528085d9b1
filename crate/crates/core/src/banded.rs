//! Symmetric banded Cholesky factorization with an optional dense border.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower band of a symmetric matrix: entry `(i, j)` with `i − bw ≤ j ≤ i`.
#[derive(Clone, Debug)]
pub struct SymBanded {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBanded {
    pub fn new(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Adds `v` to entry `(i, j)`; entries above the diagonal are mirrored.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        debug_assert!(i - j <= self.bw, "entry ({i}, {j}) outside the band {}", self.bw);
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).abs()).fold(0.0, f64::max)
    }

    pub fn shift_diagonal(&mut self, delta: f64) {
        for i in 0..self.n {
            self.add(i, i, delta);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let a = self.data[self.slot(i, j)];
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// In-place Cholesky `A = L Lᵀ`; fails on a nonpositive pivot.
    pub fn cholesky(mut self) -> Result<BandedCholesky> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut sum = self.data[i * w + (j + bw - i)];
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                for k in klo..j {
                    sum -= self.data[ri + k] * self.data[rj + k];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::SingularSystem(format!("nonpositive pivot {sum:e} at row {i}")));
                    }
                    self.data[ri + i] = sum.sqrt();
                } else {
                    self.data[ri + j] = sum / self.data[rj + j];
                }
            }
        }
        Ok(BandedCholesky { l: self })
    }
}

#[derive(Clone, Debug)]
pub struct BandedCholesky {
    l: SymBanded,
}

impl BandedCholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw) = (self.l.n, self.l.bw);
        let w = bw + 1;
        let d = &self.l.data;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            let mut s = b[i];
            for k in lo..i {
                s -= d[ri + k] * b[k];
            }
            b[i] = s / d[ri + i];
        }
        for i in (0..n).rev() {
            let ri = i * w + bw - i;
            b[i] /= d[ri + i];
            let bi = b[i];
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                b[k] -= d[ri + k] * bi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Solves `[A B; Bᵀ D] [x; y] = [f; g]` with `A` banded SPD by eliminating `x`.
/// `border` holds the columns of `B`.
pub fn solve_bordered(
    a: SymBanded,
    border: &[Vec<f64>],
    corner: &DMatrix<f64>,
    f: &[f64],
    g: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = border.len();
    let chol = a.cholesky()?;
    let ainv_f = chol.solve(f);
    let ainv_b: Vec<Vec<f64>> = border.iter().map(|col| chol.solve(col)).collect();
    let mut s = corner.clone();
    let mut rhs = DVector::from_column_slice(g);
    for i in 0..m {
        rhs[i] -= dot(&border[i], &ainv_f);
        for j in 0..m {
            s[(i, j)] -= dot(&border[i], &ainv_b[j]);
        }
    }
    let y = if m == 0 {
        DVector::zeros(0)
    } else {
        s.lu().solve(&rhs).ok_or_else(|| Error::SingularSystem("bordered Schur complement".into()))?
    };
    let mut x = ainv_f;
    for j in 0..m {
        for (xi, bi) in x.iter_mut().zip(&ainv_b[j]) {
            *xi -= y[j] * bi;
        }
    }
    Ok((x, y.iter().copied().collect()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, bw: usize, rng: &mut ChaCha8Rng) -> (SymBanded, DMatrix<f64>) {
        let mut a = SymBanded::new(n, bw);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                let v: f64 = rng.gen_range(-1.0..1.0);
                a.add(i, j, v);
                dense[(i, j)] += v;
                dense[(j, i)] += v;
            }
            let d = 2.0 * bw as f64 + 1.0;
            a.add(i, i, d);
            dense[(i, i)] += d;
        }
        (a, dense)
    }

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (n, bw) in [(1, 0), (10, 3), (50, 7), (40, 39)] {
            let (a, dense) = random_spd(n, bw, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = a.mul_vec(&b);
            let yd = &dense * DVector::from_column_slice(&b);
            for i in 0..n {
                assert!((y[i] - yd[i]).abs() < 1e-12);
            }
            let x = a.cholesky().unwrap().solve(&b);
            let xd = dense.lu().solve(&DVector::from_column_slice(&b)).unwrap();
            for i in 0..n {
                assert!((x[i] - xd[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bordered_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, bw, m) = (30, 4, 3);
        let (a, dense_a) = random_spd(n, bw, &mut rng);
        let border: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect()).collect();
        let corner = DMatrix::<f64>::identity(m, m) * 5.0;
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, y) = solve_bordered(a, &border, &corner, &f, &g).unwrap();
        let mut full = DMatrix::zeros(n + m, n + m);
        full.view_mut((0, 0), (n, n)).copy_from(&dense_a);
        for j in 0..m {
            for i in 0..n {
                full[(i, n + j)] = border[j][i];
                full[(n + j, i)] = border[j][i];
            }
        }
        full.view_mut((n, n), (m, m)).copy_from(&corner);
        let rhs = DVector::from_iterator(n + m, f.iter().chain(&g).copied());
        let sol = full.lu().solve(&rhs).unwrap();
        for i in 0..n {
            assert!((x[i] - sol[i]).abs() < 1e-10);
        }
        for j in 0..m {
            assert!((y[j] - sol[n + j]).abs() < 1e-10);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut a = SymBanded::new(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 0, 2.0);
        a.add(1, 1, 1.0);
        assert!(matches!(a.cholesky(), Err(Error::SingularSystem(_))));
    }
}
