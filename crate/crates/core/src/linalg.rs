//! Sparse symmetric storage, banded Cholesky factorization, and LDL^T inertia
//! counts used by the eigensolvers. Cells are numbered column-major along the
//! lattice, so these operators have small bandwidth.

use ndarray::{Array1, Array2, ArrayView1};

use crate::{Error, Result};

/// Symmetric sparse matrix in CSR with the full (both-triangle) pattern.
#[derive(Clone, Debug)]
pub struct CsrSym {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl CsrSym {
    /// Builds from (row, col, value) triplets; duplicate entries accumulate.
    /// Only provide each off-diagonal entry once per (i, j) orientation you
    /// want stored; symmetric callers push both orientations.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0u32; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(i, j, v) in triplets {
            let slot = next[i];
            cols[slot] = j as u32;
            vals[slot] = v;
            next[i] += 1;
        }
        // sort each row, merging duplicates
        let mut row_ptr = vec![0usize; n + 1];
        let mut out_cols: Vec<u32> = Vec::with_capacity(cols.len());
        let mut out_vals: Vec<f64> = Vec::with_capacity(vals.len());
        for i in 0..n {
            let lo = counts[i];
            let hi = counts[i + 1];
            let mut row: Vec<(u32, f64)> =
                cols[lo..hi].iter().copied().zip(vals[lo..hi].iter().copied()).collect();
            row.sort_unstable_by_key(|(c, _)| *c);
            for (c, v) in row {
                if let Some(last) = out_cols.last() {
                    if *last == c && out_cols.len() > row_ptr[i] {
                        *out_vals.last_mut().unwrap() += v;
                        continue;
                    }
                }
                out_cols.push(c);
                out_vals.push(v);
            }
            row_ptr[i + 1] = out_cols.len();
        }
        CsrSym { n, row_ptr, cols: out_cols, vals: out_vals }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn matvec(&self, x: ArrayView1<f64>, y: &mut Array1<f64>) {
        debug_assert_eq!(x.len(), self.n);
        let ys = y.as_slice_mut().expect("contiguous output");
        match x.as_slice() {
            Some(xs) => {
                for i in 0..self.n {
                    let mut acc = 0.0;
                    for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                        acc += self.vals[k] * xs[self.cols[k] as usize];
                    }
                    ys[i] = acc;
                }
            }
            None => {
                // strided views (e.g. matrix columns)
                for i in 0..self.n {
                    let mut acc = 0.0;
                    for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                        acc += self.vals[k] * x[self.cols[k] as usize];
                    }
                    ys[i] = acc;
                }
            }
        }
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut y = Array1::zeros(self.n);
        self.matvec(x, &mut y);
        y
    }

    pub fn quadratic_form(&self, x: ArrayView1<f64>) -> f64 {
        self.apply(x).dot(&x)
    }

    pub fn diag(&self) -> Array1<f64> {
        let mut d = Array1::zeros(self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.cols[k] as usize == i {
                    d[i] += self.vals[k];
                }
            }
        }
        d
    }

    pub fn row_sums(&self) -> Array1<f64> {
        let mut s = Array1::zeros(self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s[i] += self.vals[k];
            }
        }
        s
    }

    /// Max |row index - col index| over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0usize;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                bw = bw.max((self.cols[k] as i64 - i as i64).unsigned_abs() as usize);
            }
        }
        bw
    }

    /// Frobenius-ish scale estimate: max absolute row sum (Gershgorin bound).
    pub fn norm_inf(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k].abs();
            }
            m = m.max(acc);
        }
        m
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                a[(i, self.cols[k] as usize)] += self.vals[k];
            }
        }
        a
    }

    /// Returns the symmetrically scaled matrix `D A D + shift I` in lower
    /// banded storage, `band[(r, j)] = entry (j + r, j)`.
    pub fn scaled_banded(&self, d: &Array1<f64>, shift: f64) -> Banded {
        let bw = self.bandwidth();
        let mut band = Array2::zeros((bw + 1, self.n));
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k] as usize;
                if j > i {
                    continue;
                }
                band[(i - j, j)] += d[i] * self.vals[k] * d[j];
            }
        }
        for j in 0..self.n {
            band[(0, j)] += shift;
        }
        Banded { n: self.n, bw, data: band }
    }
}

/// Symmetric banded matrix in lower storage.
#[derive(Clone, Debug)]
pub struct Banded {
    pub n: usize,
    pub bw: usize,
    /// `(bw + 1) x n`; `data[(r, j)]` holds entry `(j + r, j)`.
    pub data: Array2<f64>,
}

impl Banded {
    /// In-place Cholesky `A = L L^T` for positive definite banded `A`.
    pub fn cholesky(mut self) -> Result<BandedCholesky> {
        let n = self.n;
        let bw = self.bw;
        for j in 0..n {
            let mut diag = self.data[(0, j)];
            let lo = j.saturating_sub(bw);
            for k in lo..j {
                let l_jk = self.data[(j - k, k)];
                diag -= l_jk * l_jk;
            }
            if diag <= 0.0 {
                return Err(Error::Solver(format!(
                    "banded Cholesky breakdown at column {j}: pivot {diag}"
                )));
            }
            let l_jj = diag.sqrt();
            self.data[(0, j)] = l_jj;
            let hi = (j + bw).min(n - 1);
            for i in j + 1..=hi {
                let mut v = self.data[(i - j, j)];
                let lo2 = i.saturating_sub(bw).max(lo);
                for k in lo2..j {
                    v -= self.data[(i - k, k)] * self.data[(j - k, k)];
                }
                self.data[(i - j, j)] = v / l_jj;
            }
        }
        Ok(BandedCholesky { n, bw, l: self.data })
    }

    /// Signs of the pivots of the unpivoted LDL^T factorization; returns the
    /// number of negative pivots, i.e. the count of eigenvalues below zero.
    /// Fails when a pivot is numerically zero (shift straddles an eigenvalue).
    pub fn ldlt_negative_count(mut self) -> Result<usize> {
        let n = self.n;
        let bw = self.bw;
        let scale = self
            .data
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let mut negatives = 0usize;
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut dj = self.data[(0, j)];
            for k in lo..j {
                let l = self.data[(j - k, k)];
                dj -= l * l * self.data[(0, k)];
            }
            if dj.abs() < 1e-14 * scale {
                return Err(Error::Solver(format!(
                    "inertia count hit a near-singular pivot at column {j}"
                )));
            }
            if dj < 0.0 {
                negatives += 1;
            }
            self.data[(0, j)] = dj;
            let hi = (j + bw).min(n - 1);
            for i in j + 1..=hi {
                let mut v = self.data[(i - j, j)];
                let lo2 = i.saturating_sub(bw).max(lo);
                for k in lo2..j {
                    v -= self.data[(i - k, k)] * self.data[(j - k, k)] * self.data[(0, k)];
                }
                self.data[(i - j, j)] = v / dj;
            }
        }
        Ok(negatives)
    }
}

/// Cholesky factor of a banded matrix, for repeated solves.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Array2<f64>,
}

impl BandedCholesky {
    /// Solves `L L^T x = b`.
    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.n;
        let bw = self.bw;
        let mut x = b.to_owned();
        let xs = x.as_slice_mut().unwrap();
        // forward: L y = b
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut v = xs[j];
            for k in lo..j {
                v -= self.l[(j - k, k)] * xs[k];
            }
            xs[j] = v / self.l[(0, j)];
        }
        // backward: L^T x = y
        for j in (0..n).rev() {
            let hi = (j + bw).min(n - 1);
            let mut v = xs[j];
            for i in j + 1..=hi {
                v -= self.l[(i - j, j)] * xs[i];
            }
            xs[j] = v / self.l[(0, j)];
        }
        x
    }
}

/// Ordinary least squares line fit `y = intercept + slope * x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Fit("need at least two points for a line fit".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("regressor has no spread".into()));
    }
    let slope = sxy / sxx;
    Ok((my - slope * mx, slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray_linalg::Eigh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd_banded(n: usize, bw: usize, seed: u64) -> CsrSym {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trips = Vec::new();
        for i in 0..n {
            trips.push((i, i, 4.0 + rng.random::<f64>()));
            for off in 1..=bw {
                if i + off < n {
                    let v = 0.5 * (rng.random::<f64>() - 0.5);
                    trips.push((i, i + off, v));
                    trips.push((i + off, i, v));
                }
            }
        }
        CsrSym::from_triplets(n, &trips)
    }

    #[test]
    fn banded_cholesky_solves() {
        let a = random_spd_banded(60, 4, 7);
        let d = Array1::ones(60);
        let banded = a.scaled_banded(&d, 0.0);
        let chol = banded.cholesky().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = Array1::from_iter((0..60).map(|_| rng.random::<f64>() - 0.5));
        let x = chol.solve(b.view());
        let r = &a.apply(x.view()) - &b;
        let rel = r.dot(&r).sqrt() / b.dot(&b).sqrt();
        assert!(rel < 1e-12, "residual {rel}");
    }

    #[test]
    fn inertia_matches_dense_eigs() {
        let a = random_spd_banded(40, 3, 11);
        let dense = a.to_dense();
        let (evals, _) = dense.eigh(ndarray_linalg::UPLO::Lower).unwrap();
        let d = Array1::ones(40);
        for mu in [3.0, 4.0, 4.5, 5.0] {
            let below = evals.iter().filter(|&&l| l < mu).count();
            let counted = a.scaled_banded(&d, -mu).ldlt_negative_count().unwrap();
            assert_eq!(counted, below, "mu={mu}");
        }
    }

    #[test]
    fn triplet_duplicates_accumulate() {
        let a = CsrSym::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 3.0)]);
        let dense = a.to_dense();
        assert_eq!(dense[(0, 0)], 3.0);
        assert_eq!(dense[(0, 1)], -1.0);
        assert_eq!(dense[(1, 1)], 3.0);
        assert_eq!(a.bandwidth(), 1);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (b, m) = linear_fit(&xs, &ys).unwrap();
        assert!((b - 1.0).abs() < 1e-12 && (m - 2.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }
}
