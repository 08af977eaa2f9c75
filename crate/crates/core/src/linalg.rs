//! Small linear-algebra kernels that nalgebra does not provide: banded LU
//! with partial pivoting, the GTH stationary solver on banded generators, and
//! a checked dense inverse.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

/// Inverts `block`, failing when the 1-norm condition estimate exceeds `1/ε`.
pub(crate) fn checked_inverse(block: &DMatrix<f64>, level: usize) -> Result<DMatrix<f64>> {
    let singular = |condition| Error::SingularBlock { level, condition };
    let inv = block
        .clone()
        .lu()
        .try_inverse()
        .ok_or(singular(f64::INFINITY))?;
    let condition = one_norm(block) * one_norm(&inv);
    if !condition.is_finite() || condition > 1.0 / f64::EPSILON {
        return Err(singular(condition));
    }
    Ok(inv)
}

pub(crate) fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `x B = 0`, `x e = 1` for a square `B` whose left null space is
/// one-dimensional, by replacing the last balance equation with the
/// normalization.
pub(crate) fn left_null_vector(b: &DMatrix<f64>) -> Result<RowDVector<f64>> {
    let n = b.nrows();
    let mut system = b.transpose();
    system.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let x = system
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularSystem(n - 1))?;
    Ok(x.transpose())
}

/// A square matrix with `lower` sub-diagonals and `upper` super-diagonals,
/// stored with `lower` extra super-diagonals of room for pivoting fill-in.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        let width = 2 * lower + upper + 1;
        Self {
            n,
            lower,
            upper,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, row: usize, col: usize) -> usize {
        debug_assert!(col + self.lower >= row && col <= row + self.lower + self.upper);
        row * self.width + (col + self.lower - row)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        if col + self.lower < row || col > row + self.lower + self.upper {
            0.0
        } else {
            self.data[self.slot(row, col)]
        }
    }

    /// Adds `value` at `(row, col)`; the position must lie inside the declared band.
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        assert!(
            col + self.lower >= row && col <= row + self.upper,
            "entry ({row}, {col}) outside the band"
        );
        let slot = self.slot(row, col);
        self.data[slot] += value;
    }

    /// LU factorization with partial pivoting; consumes the matrix.
    pub fn lu(mut self) -> Result<BandLu> {
        let n = self.n;
        let reach = self.lower + self.upper;
        let mut pivots = Vec::with_capacity(n);
        for c in 0..n {
            let last_row = (c + self.lower).min(n - 1);
            let (mut p, mut best) = (c, self.get(c, c).abs());
            for r in c + 1..=last_row {
                let v = self.get(r, c).abs();
                if v > best {
                    p = r;
                    best = v;
                }
            }
            if best == 0.0 {
                return Err(Error::SingularSystem(c));
            }
            pivots.push(p);
            let last_col = (c + reach).min(n - 1);
            if p != c {
                for j in c..=last_col {
                    let (a, b) = (self.slot(c, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(c, c)];
            for r in c + 1..=last_row {
                let s = self.slot(r, c);
                let factor = self.data[s] / pivot;
                self.data[s] = factor;
                if factor == 0.0 {
                    continue;
                }
                for j in c + 1..=last_col {
                    let src = self.data[self.slot(c, j)];
                    let dst = self.slot(r, j);
                    self.data[dst] -= factor * src;
                }
            }
        }
        Ok(BandLu {
            band: self,
            pivots,
        })
    }
}

pub struct BandLu {
    band: BandMatrix,
    pivots: Vec<usize>,
}

impl BandLu {
    /// Solves `A x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let a = &self.band;
        let n = a.n;
        let reach = a.lower + a.upper;
        let mut x = rhs.to_vec();
        for c in 0..n {
            x.swap(c, self.pivots[c]);
            let last_row = (c + a.lower).min(n - 1);
            for r in c + 1..=last_row {
                x[r] -= a.data[a.slot(r, c)] * x[c];
            }
        }
        for c in (0..n).rev() {
            let last_col = (c + reach).min(n - 1);
            let mut acc = x[c];
            for j in c + 1..=last_col {
                acc -= a.data[a.slot(c, j)] * x[j];
            }
            x[c] = acc / a.data[a.slot(c, c)];
        }
        x
    }
}

/// Stationary distribution of an irreducible generator given by its
/// off-diagonal rates in band form, via the Grassmann–Taksar–Heyman
/// elimination (no subtractions, so no cancellation).
///
/// `rates.get(i, j)` for `i != j` is the transition rate `i -> j`; the
/// diagonal is ignored. The band must be symmetric (`lower == upper`).
pub fn gth_stationary(mut rates: BandMatrix) -> Result<Vec<f64>> {
    let n = rates.n;
    let w = rates.lower;
    assert_eq!(rates.lower, rates.upper, "GTH needs a symmetric band");
    let mut exit = vec![0.0; n];
    for k in (1..n).rev() {
        let lo = k.saturating_sub(w);
        let s: f64 = (lo..k).map(|j| rates.get(k, j)).sum();
        if s <= 0.0 {
            return Err(Error::SingularSystem(k));
        }
        exit[k] = s;
        for i in lo..k {
            let to_k = rates.get(i, k);
            if to_k == 0.0 {
                continue;
            }
            let f = to_k / s;
            for j in lo..k {
                if j != i {
                    let v = rates.get(k, j);
                    if v != 0.0 {
                        let slot = rates.slot(i, j);
                        rates.data[slot] += f * v;
                    }
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    x[0] = 1.0;
    for k in 1..n {
        let lo = k.saturating_sub(w);
        x[k] = (lo..k).map(|i| x[i] * rates.get(i, k)).sum::<f64>() / exit[k];
    }
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_of(band: &BandMatrix) -> DMatrix<f64> {
        DMatrix::from_fn(band.dim(), band.dim(), |i, j| band.get(i, j))
    }

    proptest! {
        #[test]
        fn band_lu_matches_dense(
            n in 1usize..40,
            lower in 0usize..5,
            upper in 0usize..5,
            seed in proptest::collection::vec(-1.0f64..1.0, 40 * 11),
        ) {
            let mut band = BandMatrix::zeros(n, lower, upper);
            for i in 0..n {
                for j in i.saturating_sub(lower)..=(i + upper).min(n - 1) {
                    let v = seed[(i * 11 + (j + lower - i)) % seed.len()];
                    band.add(i, j, if i == j { v + 3.0 } else { v });
                }
            }
            let dense = dense_of(&band);
            let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let x = band.lu().unwrap().solve(&rhs);
            let residual = &dense * DVector::from_vec(x) - DVector::from_vec(rhs);
            prop_assert!(residual.amax() < 1e-10);
        }
    }

    #[test]
    fn band_lu_pivots() {
        // Zero leading diagonal forces a row swap.
        let mut band = BandMatrix::zeros(3, 1, 1);
        band.add(0, 1, 1.0);
        band.add(1, 0, 2.0);
        band.add(1, 2, 1.0);
        band.add(2, 1, 1.0);
        band.add(2, 2, 1.0);
        let x = band.lu().unwrap().solve(&[1.0, 4.0, 3.0]);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14 && (x[2] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gth_birth_death() {
        // M/M/1/4 with rho = 1/2: pi_k proportional to 2^{-k}.
        let n = 5;
        let mut band = BandMatrix::zeros(n, 1, 1);
        for k in 0..n - 1 {
            band.add(k, k + 1, 1.0);
            band.add(k + 1, k, 2.0);
        }
        let pi = gth_stationary(band).unwrap();
        let norm: f64 = (0..n).map(|k| 0.5f64.powi(k as i32)).sum();
        for (k, p) in pi.iter().enumerate() {
            assert!((p - 0.5f64.powi(k as i32) / norm).abs() < 1e-15);
        }
    }

    #[test]
    fn gth_rejects_reducible() {
        let mut band = BandMatrix::zeros(3, 1, 1);
        band.add(0, 1, 1.0);
        band.add(1, 2, 1.0);
        assert!(matches!(gth_stationary(band), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn null_vector_of_two_state_generator() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 3.0, -3.0]);
        let x = left_null_vector(&q).unwrap();
        assert!((x[0] - 0.75).abs() < 1e-15 && (x[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn inverse_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(checked_inverse(&m, 3), Err(Error::SingularBlock { level: 3, .. })));
    }
}
