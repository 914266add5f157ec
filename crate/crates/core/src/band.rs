//! Square band matrices and their LU factorization with partial pivoting.
//!
//! Storage follows the LAPACK `gbtrf` convention: column-major with `kl` extra
//! rows on top to hold the fill-in produced by row interchanges, so entry
//! `(i, j)` lives at `data[j * ld + kl + ku + i - j]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ld,
            data: vec![0.0; ld * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i <= j + self.kl && j <= i + self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ld + self.kl + self.ku + i - j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Adds `v` to entry `(i, j)`. Panics if the entry is outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for (i, yi) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *yi += self.data[self.idx(i, j)] * x[j];
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n, self.ku, self.kl);
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for i in lo..=hi {
                t.add(j, i, self.data[self.idx(i, j)]);
            }
        }
        t
    }

    /// Largest entry-wise asymmetry `max |a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let b = self.kl.max(self.ku);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i..(i + b + 1).min(self.n) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// In-place LU factorization with partial pivoting.
    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut piv = vec![0usize; n];
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * f64::EPSILON * 1e-3;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..=last {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return Err(Error::SingularPivot { row: k });
            }
            piv[k] = p;
            let jmax = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            let col_k = self.idx(k + 1, k);
            let m = last - k;
            for v in &mut self.data[col_k..col_k + m] {
                *v /= pivot;
            }
            for j in k + 1..=jmax {
                let akj = self.data[self.idx(k, j)];
                if akj == 0.0 {
                    continue;
                }
                // column k is stored entirely before column j
                let col_j = self.idx(k + 1, j);
                let (head, tail) = self.data.split_at_mut(col_j);
                for (x, l) in tail[..m].iter_mut().zip(&head[col_k..col_k + m]) {
                    *x -= l * akj;
                }
            }
        }
        Ok(BandLu { lu: self, piv })
    }
}

/// Factorization produced by [`BandMatrix::factor`].
#[derive(Debug, Clone)]
pub struct BandLu {
    lu: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    /// Overwrites `b` with the solution of `A x = b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.lu;
        let n = a.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                let last = (k + a.kl).min(n - 1);
                for i in k + 1..=last {
                    b[i] -= a.data[a.idx(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let bk = b[k] / a.data[a.idx(k, k)];
            b[k] = bk;
            if bk != 0.0 {
                let lo = k.saturating_sub(a.ku + a.kl);
                for i in lo..k {
                    b[i] -= a.data[a.idx(i, k)] * bk;
                }
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    }

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64, diag: f64) -> BandMatrix {
        let mut s = seed;
        let mut a = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                a.add(i, j, lcg(&mut s));
            }
            a.add(i, i, diag);
        }
        a
    }

    #[test]
    fn solves_random_band_systems() {
        for &(n, kl, ku) in &[(1, 0, 0), (7, 2, 1), (40, 5, 5), (60, 3, 9)] {
            // diag = 0 forces pivoting
            let a = random_band(n, kl, ku, n as u64, 0.0);
            let mut s = 99;
            let x: Vec<f64> = (0..n).map(|_| lcg(&mut s)).collect();
            let b = a.mul_vec(&x);
            let lu = a.clone().factor().unwrap();
            let y = lu.solve(&b);
            let r = a.mul_vec(&y);
            let res: f64 = r
                .iter()
                .zip(&b)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            let bn = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(res <= 1e-10 * bn.max(1.0), "n={n}: residual {res}");
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let a = random_band(12, 2, 3, 5, 1.0);
        let t = a.transpose();
        assert_eq!(t.bandwidths(), (3, 2));
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(a.get(i, j), t.get(j, i));
            }
        }
        assert!(a.asymmetry() > 0.0);
    }

    #[test]
    fn singular_matrix_reports_pivot() {
        let mut a = BandMatrix::zeros(3, 1, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        assert!(matches!(a.factor(), Err(Error::SingularPivot { row: 2 })));
    }
}
