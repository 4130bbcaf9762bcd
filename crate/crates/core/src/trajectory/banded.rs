//! Symmetric positive definite solver for banded systems.

/// Lower band of a symmetric `n x n` matrix with half-bandwidth `bw`.
/// `band[i * (bw + 1) + k]` holds entry `(i, i - k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("matrix is not positive definite (pivot {pivot} at row {row})")]
pub struct NotPositiveDefinite {
    pub row: usize,
    pub pivot: f64,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.band[i * (self.bw + 1) + (i - j)]
        }
    }

    /// Adds `v` to entry `(i, j)` (and, implicitly, `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i}, {j}) outside the band");
        self.band[i * (self.bw + 1) + (i - j)] += v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Solves `A x = b` by an in-band Cholesky factorization `A = L L^T`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, NotPositiveDefinite> {
        assert_eq!(b.len(), self.n);
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut l = self.band.clone();
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = l[i * w + (i - j)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(NotPositiveDefinite { row: i, pivot: s });
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= l[i * w + (i - k)] * y[k];
            }
            y[i] = s / l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + w).min(n) {
                s -= l[k * w + (k - i)] * y[k];
            }
            y[i] = s / l[i * w];
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, bw: usize, seed: u64) -> (BandedSpd, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = BandedSpd::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                a.add(i, j, rng.random_range(-1.0..1.0));
            }
        }
        // diagonal dominance makes it SPD
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| a.get(i, j).abs()).sum();
            a.add(i, i, off + rng.random_range(0.1..2.0));
        }
        let dense = DMatrix::from_fn(n, n, |i, j| a.get(i, j));
        (a, dense)
    }

    #[test]
    fn tridiagonal_by_hand() {
        let mut a = BandedSpd::zeros(3, 1);
        for i in 0..3 {
            a.add(i, i, 2.0);
        }
        a.add(1, 0, -1.0);
        a.add(2, 1, -1.0);
        // [2 -1 0; -1 2 -1; 0 -1 2] x = [1 0 1] has x = [1 1 1]
        let x = a.solve(&[1.0, 0.0, 1.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut a = BandedSpd::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(1, 0, 2.0);
        assert_eq!(a.solve(&[1.0, 1.0]).unwrap_err().row, 1);
    }

    proptest! {
        #[test]
        fn matches_dense_cholesky(n in 1usize..60, bw in 0usize..10, seed in 0u64..1000) {
            let (a, dense) = random_spd(n, bw, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let x = a.solve(&b).unwrap();
            let oracle = dense.cholesky().unwrap().solve(&DVector::from_vec(b));
            for i in 0..n {
                prop_assert!((x[i] - oracle[i]).abs() <= 1e-10 * (1.0 + oracle[i].abs()));
            }
        }
    }
}
