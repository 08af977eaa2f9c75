//! Model parameters and the generator blocks of the two Markov chains.
//!
//! The main chain lives on levels `k >= 0` (internal tips) with phases
//! `m = 1..=M` (boundary tips). Phase `m` is stored at matrix index `m - 1`.
//!
//! The tagged-tip chain lives on levels `i >= 0` (internal tips other than
//! the tagged one) with `2M` phases per level, interleaved as
//!
//! ```text
//! (1,i;1), (i;1,0), (1,i;2), (i;1,1), ..., (1,i;M), (i;1,M-1)
//! ```
//!
//! where `(1,i;j)` means the tagged tip is still internal and there are `j`
//! boundary tips, and `(i;1,n)` means the tagged tip is a boundary tip with
//! `n` other boundary tips beside it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of unordered pairs among `m` boundary tips, `m(m-1)/2`.
#[inline]
pub fn pairs(m: usize) -> f64 {
    (m * m.saturating_sub(1)) as f64 / 2.0
}

/// The four system parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Arrival rate of new transactions.
    pub lambda: f64,
    /// Connection rate per (internal tip, boundary-tip pair).
    pub mu: f64,
    /// Impatience rate per internal tip.
    pub alpha: f64,
    /// Maximum number of boundary tips.
    pub capacity: usize,
}

impl ModelParams {
    /// Builds and validates a parameter set.
    pub fn new(lambda: f64, mu: f64, alpha: f64, capacity: usize) -> Result<Self> {
        Self {
            lambda,
            mu,
            alpha,
            capacity,
        }
        .validate()
    }

    /// Checks the rate and capacity constraints, returning the parameters unchanged.
    ///
    /// With a single boundary tip no pair can ever be formed and impatience is
    /// blocked at full capacity, so internal tips could never leave; such a
    /// capacity is rejected.
    pub fn validate(self) -> Result<Self> {
        for (name, value) in [("lambda", self.lambda), ("mu", self.mu), ("alpha", self.alpha)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::NonPositiveRate { name, value });
            }
        }
        if self.capacity < 2 {
            return Err(Error::CapacityTooSmall(self.capacity));
        }
        Ok(self)
    }
}

/// Generator blocks of one level of the main chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelBlocks {
    pub level: usize,
    /// `A_{k,k-1}`; `None` at level 0.
    pub down: Option<DMatrix<f64>>,
    /// `A_{k,k}`.
    pub diag: DMatrix<f64>,
    /// `A_{k,k+1}`.
    pub up: DMatrix<f64>,
}

impl LevelBlocks {
    pub fn build(params: &ModelParams, k: usize) -> Self {
        let size = params.capacity;
        let kf = k as f64;
        let up = DMatrix::from_diagonal_element(size, size, params.lambda);
        let mut diag = DMatrix::zeros(size, size);
        if k == 0 {
            diag.fill_diagonal(-params.lambda);
            return Self {
                level: 0,
                down: None,
                diag,
                up,
            };
        }

        let mut down = DMatrix::zeros(size, size);
        for m in 1..=size {
            let row = m - 1;
            let connect = kf * pairs(m) * params.mu;
            let impatience = if m < size { kf * params.alpha } else { 0.0 };
            if m >= 2 {
                down[(row, row - 1)] = connect;
            }
            if m < size {
                down[(row, row + 1)] = impatience;
            }
            diag[(row, row)] = -(connect + impatience + params.lambda);
        }
        Self {
            level: k,
            down: Some(down),
            diag,
            up,
        }
    }

    /// Row sums of `down + diag + up` (`diag + up` at level 0).
    pub fn row_sums(&self) -> DVector<f64> {
        let mut total = &self.diag + &self.up;
        if let Some(down) = &self.down {
            total += down;
        }
        total.column_sum()
    }
}

/// Where the tagged tip is within a level of the sojourn chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaggedState {
    /// `(1,i;j)`: tagged tip internal, `j` boundary tips (`1 <= j <= M`).
    Internal { level: usize, boundary: usize },
    /// `(i;1,n)`: tagged tip is a boundary tip with `n` others (`0 <= n <= M-1`).
    Boundary { level: usize, others: usize },
}

/// Zero-based position of a state inside its level (`0..2M`).
pub fn phase_offset(state: TaggedState, capacity: usize) -> Result<usize> {
    match state {
        TaggedState::Internal { boundary, .. } => {
            if boundary == 0 || boundary > capacity {
                return Err(Error::IndexOutOfRange(format!(
                    "boundary count {boundary} outside 1..={capacity}"
                )));
            }
            Ok(2 * (boundary - 1))
        }
        TaggedState::Boundary { others, .. } => {
            if others >= capacity {
                return Err(Error::IndexOutOfRange(format!(
                    "other boundary count {others} outside 0..={}",
                    capacity - 1
                )));
            }
            Ok(2 * others + 1)
        }
    }
}

/// One-based flat index of a sojourn-chain state: `(1,i;j)` maps to
/// `2Mi + 2j - 1` and `(i;1,n)` to `2Mi + 2n + 2`.
pub fn state_index(state: TaggedState, capacity: usize) -> Result<usize> {
    let level = match state {
        TaggedState::Internal { level, .. } | TaggedState::Boundary { level, .. } => level,
    };
    Ok(2 * capacity * level + phase_offset(state, capacity)? + 1)
}

/// Inverse of [`state_index`].
pub fn state_from_index(index: usize, capacity: usize) -> Result<TaggedState> {
    if index == 0 {
        return Err(Error::IndexOutOfRange("flat indices start at 1".into()));
    }
    let zero = index - 1;
    let width = 2 * capacity;
    let level = zero / width;
    let offset = zero % width;
    Ok(if offset.is_multiple_of(2) {
        TaggedState::Internal {
            level,
            boundary: offset / 2 + 1,
        }
    } else {
        TaggedState::Boundary {
            level,
            others: offset / 2,
        }
    })
}

/// Generator blocks of one level of the tagged-tip (absorbing) chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SojournLevelBlocks {
    pub level: usize,
    /// `T_{i,i-1}`; `None` at level 0.
    pub down: Option<DMatrix<f64>>,
    /// `T_{i,i}`.
    pub diag: DMatrix<f64>,
    /// `T_{i,i+1}`.
    pub up: DMatrix<f64>,
    /// Absorption rates `T_i^Δ`.
    pub absorb: DVector<f64>,
}

impl SojournLevelBlocks {
    pub fn build(params: &ModelParams, i: usize) -> Self {
        let cap = params.capacity;
        let size = 2 * cap;
        let fi = i as f64;
        let (lambda, mu, alpha) = (params.lambda, params.mu, params.alpha);

        let mut down = DMatrix::zeros(size, size);
        let mut diag = DMatrix::zeros(size, size);
        let mut absorb = DVector::zeros(size);
        let up = DMatrix::from_diagonal_element(size, size, lambda);

        let internal = |j: usize| 2 * (j - 1);
        let boundary = |n: usize| 2 * n + 1;

        for j in 1..=cap {
            let row = internal(j);
            let mut out = lambda;
            // The tagged tip approves a pair and becomes a boundary tip.
            if j >= 2 {
                let rate = pairs(j) * mu;
                diag[(row, boundary(j - 2))] += rate;
                out += rate;
            }
            // The tagged tip runs out of patience.
            if j < cap {
                diag[(row, boundary(j))] += alpha;
                out += alpha;
            }
            // Another internal tip approves a pair or runs out of patience.
            if i > 0 {
                if j >= 2 {
                    let rate = fi * pairs(j) * mu;
                    down[(row, internal(j - 1))] = rate;
                    out += rate;
                }
                if j < cap {
                    let rate = fi * alpha;
                    down[(row, internal(j + 1))] = rate;
                    out += rate;
                }
            }
            diag[(row, row)] = -out;
        }

        for n in 0..cap {
            let row = boundary(n);
            let mut out = lambda;
            if i > 0 {
                // Pair drawn from the n untagged boundary tips.
                if n >= 2 {
                    let rate = fi * pairs(n) * mu;
                    down[(row, boundary(n - 1))] = rate;
                    out += rate;
                }
                // Pair containing the tagged tip: it is confirmed.
                let confirm = fi * n as f64 * mu;
                absorb[row] = confirm;
                out += confirm;
                if n + 1 < cap {
                    let rate = fi * alpha;
                    down[(row, boundary(n + 1))] = rate;
                    out += rate;
                }
            }
            diag[(row, row)] = -out;
        }

        Self {
            level: i,
            down: (i > 0).then_some(down),
            diag,
            up,
            absorb,
        }
    }

    /// Row sums of `down + diag + up + absorb`.
    pub fn row_sums(&self) -> DVector<f64> {
        let mut total = &self.diag + &self.up;
        if let Some(down) = &self.down {
            total += down;
        }
        total.column_sum() + &self.absorb
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(lambda: f64, mu: f64, alpha: f64, cap: usize) -> ModelParams {
        ModelParams::new(lambda, mu, alpha, cap).unwrap()
    }

    #[test]
    fn validation() {
        assert!(ModelParams::new(1.0, 1.0, 0.5, 3).is_ok());
        assert_eq!(
            ModelParams::new(1.0, 1.0, 0.5, 1),
            Err(Error::CapacityTooSmall(1))
        );
        assert!(matches!(
            ModelParams::new(0.0, 1.0, 0.5, 3),
            Err(Error::NonPositiveRate { name: "lambda", .. })
        ));
        assert!(matches!(
            ModelParams::new(1.0, f64::NAN, 0.5, 3),
            Err(Error::NonPositiveRate { name: "mu", .. })
        ));
        assert!(matches!(
            ModelParams::new(1.0, 1.0, -2.0, 3),
            Err(Error::NonPositiveRate { name: "alpha", .. })
        ));
    }

    #[test]
    fn capacity_one_has_no_way_down() {
        // Built without validation: the down block is identically zero.
        let raw = ModelParams {
            lambda: 1.0,
            mu: 1.0,
            alpha: 0.5,
            capacity: 1,
        };
        let blocks = LevelBlocks::build(&raw, 4);
        assert!(blocks.down.unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn level_zero_blocks() {
        let b = LevelBlocks::build(&p(1.0, 1.0, 0.5, 3), 0);
        assert!(b.down.is_none());
        assert_eq!(b.diag, -DMatrix::<f64>::identity(3, 3));
        assert_eq!(b.up, DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn level_two_blocks() {
        let b = LevelBlocks::build(&p(1.0, 1.0, 0.5, 3), 2);
        let down = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 2., 0., 1., 0., 6., 0.]);
        assert_eq!(b.down.as_ref().unwrap(), &down);
        assert_eq!(b.diag, DMatrix::from_diagonal(&DVector::from_vec(vec![-2., -4., -7.])));
        assert_eq!(b.up, DMatrix::<f64>::identity(3, 3));
        assert!(b.row_sums().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn state_index_examples() {
        let idx = |s| state_index(s, 4).unwrap();
        assert_eq!(state_index(TaggedState::Internal { level: 0, boundary: 1 }, 3).unwrap(), 1);
        assert_eq!(idx(TaggedState::Internal { level: 2, boundary: 3 }), 21);
        assert_eq!(idx(TaggedState::Boundary { level: 0, others: 0 }), 2);
        assert!(state_index(TaggedState::Internal { level: 0, boundary: 0 }, 4).is_err());
        assert!(state_index(TaggedState::Internal { level: 0, boundary: 5 }, 4).is_err());
        assert!(state_index(TaggedState::Boundary { level: 1, others: 4 }, 4).is_err());
    }

    #[test]
    fn sojourn_absorption() {
        let params = p(1.0, 1.0, 0.5, 2);
        let one = SojournLevelBlocks::build(&params, 1);
        assert_eq!(one.absorb.as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        let zero = SojournLevelBlocks::build(&params, 0);
        assert!(zero.down.is_none());
        assert!(zero.absorb.iter().all(|&x| x == 0.0));
        assert!(zero.row_sums().iter().all(|&s| s.abs() < 1e-12));
    }

    #[test]
    fn sojourn_inner_blocks_match_printed_entries() {
        let params = p(1.3, 0.7, 0.4, 5);
        let (lambda, mu, alpha) = (params.lambda, params.mu, params.alpha);
        let i = 3usize;
        let fi = i as f64;
        let b = SojournLevelBlocks::build(&params, i);
        let down = b.down.as_ref().unwrap();
        // 2x2 block (l, l') lives at rows 2(l-1).., cols 2(l'-1)..
        let blk = |m: &DMatrix<f64>, l: usize, lp: usize| {
            m.view((2 * (l - 1), 2 * (lp - 1)), (2, 2)).into_owned()
        };
        // C_{1,1}, C_{1,2}
        assert_eq!(blk(&b.diag, 1, 1), DMatrix::from_row_slice(2, 2, &[-(alpha + fi * alpha + lambda), 0., 0., -(fi * alpha + lambda)]));
        assert_eq!(blk(&b.diag, 1, 2), DMatrix::from_row_slice(2, 2, &[0., alpha, 0., 0.]));
        // C_{2,1}, C_{2,2}
        assert_eq!(blk(&b.diag, 2, 1), DMatrix::from_row_slice(2, 2, &[0., mu, 0., 0.]));
        let c22 = blk(&b.diag, 2, 2);
        assert!((c22[(0, 0)] + (mu + alpha + fi * mu + fi * alpha + lambda)).abs() < 1e-12);
        assert!((c22[(1, 1)] + (fi * alpha + lambda + fi * mu)).abs() < 1e-12);
        // C_{M,M}
        let cmm = blk(&b.diag, 5, 5);
        assert!((cmm[(0, 0)] + (pairs(5) * mu + fi * pairs(5) * mu + lambda)).abs() < 1e-12);
        assert!((cmm[(1, 1)] + (fi * pairs(4) * mu + lambda + fi * 4.0 * mu)).abs() < 1e-12);
        // B_{2,1} = diag(i mu, 0), B_{l,l+1} = i alpha I, B_{l,l-1} = diag(i C_l^2 mu, i C_{l-1}^2 mu)
        assert_eq!(blk(down, 2, 1), DMatrix::from_row_slice(2, 2, &[fi * mu, 0., 0., 0.]));
        assert_eq!(blk(down, 3, 4), DMatrix::from_row_slice(2, 2, &[fi * alpha, 0., 0., fi * alpha]));
        assert_eq!(blk(down, 4, 3), DMatrix::from_row_slice(2, 2, &[fi * pairs(4) * mu, 0., 0., fi * pairs(3) * mu]));
        // absorb entry for (i;1,n) is i n mu
        for n in 0..5 {
            assert!((b.absorb[2 * n + 1] - fi * n as f64 * mu).abs() < 1e-12);
            assert_eq!(b.absorb[2 * n], 0.0);
        }
    }

    #[test]
    fn sojourn_level_zero_inner_blocks() {
        let params = p(1.3, 0.7, 0.4, 4);
        let (lambda, mu, alpha) = (params.lambda, params.mu, params.alpha);
        let b = SojournLevelBlocks::build(&params, 0);
        let blk = |l: usize, lp: usize| b.diag.view((2 * (l - 1), 2 * (lp - 1)), (2, 2)).into_owned();
        assert_eq!(blk(1, 1), DMatrix::from_row_slice(2, 2, &[-(alpha + lambda), 0., 0., -lambda]));
        assert_eq!(blk(1, 2), DMatrix::from_row_slice(2, 2, &[0., alpha, 0., 0.]));
        assert_eq!(blk(3, 2), DMatrix::from_row_slice(2, 2, &[0., pairs(3) * mu, 0., 0.]));
        assert_eq!(blk(3, 4), DMatrix::from_row_slice(2, 2, &[0., alpha, 0., 0.]));
        let last = blk(4, 4);
        assert!((last[(0, 0)] + pairs(4) * mu + lambda).abs() < 1e-12);
        assert_eq!(last[(1, 1)], -lambda);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn params() -> impl Strategy<Value = ModelParams> {
            (0.01f64..50.0, 0.01f64..10.0, 0.01f64..5.0, 2usize..30)
                .prop_map(|(l, m, a, c)| ModelParams::new(l, m, a, c).unwrap())
        }

        proptest! {
            #[test]
            fn main_rows_are_conservative(params in params(), k in 0usize..60) {
                let b = LevelBlocks::build(&params, k);
                let scale = b.diag.amax();
                for s in b.row_sums().iter() {
                    prop_assert!(s.abs() <= 1e-12 * scale.max(1.0));
                }
                if let Some(down) = &b.down {
                    // only the first off-diagonals are populated
                    for ((r, c), v) in down.iter().enumerate().map(|(idx, v)| ((idx % params.capacity, idx / params.capacity), v)) {
                        if r.abs_diff(c) != 1 {
                            prop_assert_eq!(*v, 0.0);
                        }
                    }
                }
            }

            #[test]
            fn sojourn_rows_are_conservative(params in params(), i in 0usize..40) {
                let b = SojournLevelBlocks::build(&params, i);
                let scale = b.diag.amax();
                for s in b.row_sums().iter() {
                    prop_assert!(s.abs() <= 1e-12 * scale.max(1.0));
                }
                for n in 0..params.capacity {
                    prop_assert_eq!(b.absorb[2 * n], 0.0);
                }
            }

            #[test]
            fn state_index_round_trips(cap in 2usize..50, index in 1usize..10_000) {
                let state = state_from_index(index, cap).unwrap();
                prop_assert_eq!(state_index(state, cap).unwrap(), index);
            }
        }
    }
}
