//! Banded LU without pivoting.
//!
//! The nodal Jacobians assembled here are column diagonally dominant (wire
//! stamps are symmetric Laplacians, branch stamps have zero column sums and a
//! non-negative diagonal), so elimination in natural order is stable.

use crate::error::{CimError, Result};

#[derive(Debug, Clone)]
pub(crate) struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub(crate) fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        // Elimination without pivoting keeps fill-in inside the band.
        let width = kl + ku + 1;
        BandedMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub(crate) fn clear(&mut self) {
        self.data.fill(0.0);
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku, "({i}, {j}) outside band");
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.slot(i, j);
        self.data[k] += v;
    }

    #[cfg(test)]
    fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Factor in place, then solve `A x = b` overwriting `b`.
    pub(crate) fn solve_in_place(&mut self, b: &mut [f64]) -> Result<()> {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        for k in 0..n {
            let pivot = self.data[self.slot(k, k)];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(CimError::Internal(format!("singular nodal matrix at row {k}")));
            }
            let i_end = (k + self.kl).min(n - 1);
            let j_end = (k + self.ku).min(n - 1);
            for i in k + 1..=i_end {
                let sik = self.slot(i, k);
                if self.data[sik] == 0.0 {
                    continue;
                }
                let l = self.data[sik] / pivot;
                self.data[sik] = l;
                let row_k = self.slot(k, k);
                let row_i = self.slot(i, k);
                for off in 1..=(j_end - k) {
                    self.data[row_i + off] -= l * self.data[row_k + off];
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(self.kl);
            let mut s = b[i];
            for j in j0..i {
                s -= self.data[self.slot(i, j)] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let j_end = (i + self.ku).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=j_end {
                s -= self.data[self.slot(i, j)] * b[j];
            }
            b[i] = s / self.data[self.slot(i, i)];
        }
        Ok(())
    }
}
