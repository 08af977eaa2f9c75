//! Sojourn time of a tagged arriving tip: a phase-type distribution on the
//! absorbing tagged-tip chain.
//!
//! The mean `-θ T^{-1} e` is computed two independent ways: a banded LU
//! solve of the flattened truncated chain, and the UL-type RG-factorization
//! `T^{-1} = (I - G_L)^{-1} U_D^{-1} (I - R_U)^{-1}`. The distribution
//! function `1 - θ exp(Tt) e` is evaluated by uniformization.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, BandMatrix};
use crate::model::{phase_offset, state_index, ModelParams, SojournLevelBlocks, TaggedState};
use crate::qbd::StationaryResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InitialMode {
    /// All mass on one state.
    Fixed(TaggedStateRepr),
    /// An arrival sees the stationary distribution.
    Pasta,
}

/// Serializable mirror of [`TaggedState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TaggedStateRepr {
    Internal { level: usize, boundary: usize },
    Boundary { level: usize, others: usize },
}

impl From<TaggedState> for TaggedStateRepr {
    fn from(s: TaggedState) -> Self {
        match s {
            TaggedState::Internal { level, boundary } => Self::Internal { level, boundary },
            TaggedState::Boundary { level, others } => Self::Boundary { level, others },
        }
    }
}

/// Initial distribution `θ` of the tagged-tip chain, in flat interleaved order
/// (entry `s` is the state with one-based index `s + 1`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialVector {
    pub entries: Vec<f64>,
    pub capacity: usize,
    pub mode: InitialMode,
}

impl InitialVector {
    /// Unit mass on one state.
    pub fn fixed(state: TaggedState, capacity: usize) -> Result<Self> {
        let index = state_index(state, capacity)?;
        let width = 2 * capacity;
        let levels = (index - 1) / width + 1;
        let mut entries = vec![0.0; levels * width];
        entries[index - 1] = 1.0;
        Ok(Self {
            entries,
            capacity,
            mode: InitialMode::Fixed(state.into()),
        })
    }

    /// Number of levels `θ` spans.
    pub fn levels(&self) -> usize {
        self.entries.len() / (2 * self.capacity)
    }

    /// Entries of level `i` (zeros past the support).
    pub fn level(&self, i: usize) -> DVector<f64> {
        let width = 2 * self.capacity;
        let start = i * width;
        if start >= self.entries.len() {
            return DVector::zeros(width);
        }
        DVector::from_row_slice(&self.entries[start..start + width])
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().sum()
    }
}

/// Stationary-weighted initial vector: state `(1,k;m)` gets `π_{k,m}`. The
/// mass beyond the truncation is spread over the last level in proportion to
/// its distribution before renormalizing.
pub fn pasta_initial(st: &StationaryResult, params: &ModelParams) -> InitialVector {
    let cap = params.capacity;
    let width = 2 * cap;
    let levels = st.pi.len();
    let mut entries = vec![0.0; levels * width];
    for (k, row) in st.pi.iter().enumerate() {
        for (m, &p) in row.iter().enumerate() {
            entries[k * width + 2 * m] = p;
        }
    }
    let last = &st.pi[levels - 1];
    let last_mass: f64 = last.iter().sum();
    if st.tail_mass.is_finite() && st.tail_mass > 0.0 && last_mass > 0.0 {
        for (m, &p) in last.iter().enumerate() {
            entries[(levels - 1) * width + 2 * m] += st.tail_mass * p / last_mass;
        }
    }
    let total: f64 = entries.iter().sum();
    entries.iter_mut().for_each(|v| *v /= total);
    InitialVector {
        entries,
        capacity: cap,
        mode: InitialMode::Pasta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    LinearSolve,
    RgProducts,
}

/// Sojourn-time result: mean and, when requested, sampled distribution function.
#[derive(Debug, Clone, Serialize)]
pub struct PhResult {
    pub mean: f64,
    /// `(t, F(t))` pairs; empty when only the mean was computed.
    pub cdf: Vec<(f64, f64)>,
    pub truncation: usize,
    pub method: Method,
}

/// Truncation control for the sojourn chain.
#[derive(Debug, Clone, Copy)]
pub struct SojournOptions {
    /// First truncation level tried (raised to cover the support of `θ`).
    pub initial_level: usize,
    pub max_level: usize,
    /// Relative change of the mean between doublings that ends the search.
    pub rel_tol: f64,
    /// Evaluate only at the initial level, no doubling.
    pub fixed: bool,
}

impl Default for SojournOptions {
    fn default() -> Self {
        Self {
            initial_level: 20,
            max_level: 1 << 14,
            rel_tol: 1e-8,
            fixed: false,
        }
    }
}

impl SojournOptions {
    pub fn at_level(level: usize) -> Self {
        Self {
            initial_level: level,
            fixed: true,
            ..Self::default()
        }
    }
}

fn check_theta(params: &ModelParams, theta: &InitialVector) -> Result<()> {
    if theta.capacity != params.capacity {
        return Err(Error::InvalidConfig(format!(
            "initial vector built for capacity {}, model has {}",
            theta.capacity, params.capacity
        )));
    }
    Ok(())
}

fn adaptive(
    params: &ModelParams,
    theta: &InitialVector,
    opts: SojournOptions,
    method: Method,
    mut eval: impl FnMut(usize) -> Result<f64>,
) -> Result<PhResult> {
    check_theta(params, theta)?;
    let mut level = opts.initial_level.max(theta.levels().saturating_sub(1)).max(1);
    let mut previous: Option<f64> = None;
    loop {
        let mean = eval(level)?;
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::DivergentMean {
                previous: previous.unwrap_or(f64::NAN),
                current: mean,
            });
        }
        let done = opts.fixed || previous.is_some_and(|p| ((mean - p) / mean).abs() < opts.rel_tol);
        if done {
            return Ok(PhResult {
                mean,
                cdf: Vec::new(),
                truncation: level,
                method,
            });
        }
        previous = Some(mean);
        if 2 * level > opts.max_level {
            return Err(Error::NoConvergence {
                ceiling: opts.max_level,
            });
        }
        level *= 2;
    }
}

/// Sparse rows of the truncated sub-generator: `(col, rate)` lists, diagonal
/// included. Up-transitions out of the last level are dropped.
fn sparse_rows(params: &ModelParams, truncation: usize) -> Vec<Vec<(usize, f64)>> {
    let width = 2 * params.capacity;
    let mut rows = vec![Vec::new(); width * (truncation + 1)];
    for i in 0..=truncation {
        let blocks = SojournLevelBlocks::build(params, i);
        let base = i * width;
        for r in 0..width {
            let row = &mut rows[base + r];
            for c in 0..width {
                let v = blocks.diag[(r, c)];
                if v != 0.0 {
                    row.push((base + c, v));
                }
                if let Some(down) = &blocks.down {
                    let v = down[(r, c)];
                    if v != 0.0 {
                        row.push((base - width + c, v));
                    }
                }
                if i < truncation {
                    let v = blocks.up[(r, c)];
                    if v != 0.0 {
                        row.push((base + width + c, v));
                    }
                }
            }
        }
    }
    rows
}

/// Expected time to absorption from every state of the chain truncated at
/// `truncation`, by solving `T y = -e` with banded LU.
pub fn absorption_times(params: &ModelParams, truncation: usize) -> Result<Vec<f64>> {
    let width = 2 * params.capacity;
    let rows = sparse_rows(params, truncation);
    let n = rows.len();
    let reach = width + 2;
    let mut band = BandMatrix::zeros(n, reach, reach);
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            band.add(r, c, v);
        }
    }
    Ok(band.lu()?.solve(&vec![-1.0; n]))
}

fn theta_dot(theta: &InitialVector, values: &[f64]) -> f64 {
    theta
        .entries
        .iter()
        .zip(values)
        .map(|(a, b)| a * b)
        .sum()
}

/// `E[W_A] = -θ T^{-1} e` by a direct banded solve, doubling the truncation
/// until the mean settles.
pub fn mean_sojourn_linear(
    params: &ModelParams,
    theta: &InitialVector,
    opts: SojournOptions,
) -> Result<PhResult> {
    adaptive(params, theta, opts, Method::LinearSolve, |level| {
        Ok(theta_dot(theta, &absorption_times(params, level)?))
    })
}

/// R-, U- and G-measures of the tagged-tip chain truncated at level `N`
/// (seed `U_N = T_{N,N}`).
#[derive(Debug, Clone)]
pub struct SojournRgFactors {
    pub truncation: usize,
    pub u_blocks: Vec<DMatrix<f64>>,
    pub u_inverses: Vec<DMatrix<f64>>,
    /// `R_i`, `i = 0..N-1`.
    pub r_blocks: Vec<DMatrix<f64>>,
    /// `G_i = (-U_i^{-1}) T_{i,i-1}` stored at `i - 1`, `i = 1..=N`.
    pub g_blocks: Vec<DMatrix<f64>>,
}

impl SojournRgFactors {
    pub fn new(params: &ModelParams, truncation: usize) -> Result<Self> {
        let n = truncation.max(1);
        let size = 2 * params.capacity;
        let empty = || DMatrix::zeros(size, size);
        let mut u_blocks = vec![empty(); n + 1];
        let mut u_inverses = vec![empty(); n + 1];
        let mut r_blocks = vec![empty(); n];
        let mut g_blocks = vec![empty(); n];

        let mut upper = SojournLevelBlocks::build(params, n);
        u_blocks[n] = upper.diag.clone();
        for i in (0..n).rev() {
            let blocks = SojournLevelBlocks::build(params, i);
            let inv = linalg::checked_inverse(&u_blocks[i + 1], i + 1)?;
            let down = upper.down.as_ref().expect("level >= 1");
            let r = -(&blocks.up * &inv);
            g_blocks[i] = -(&inv * down);
            u_blocks[i] = &blocks.diag + &r * down;
            u_inverses[i + 1] = inv;
            r_blocks[i] = r;
            upper = blocks;
        }
        u_inverses[0] = linalg::checked_inverse(&u_blocks[0], 0)?;
        Ok(Self {
            truncation: n,
            u_blocks,
            u_inverses,
            r_blocks,
            g_blocks,
        })
    }

    fn g(&self, i: usize) -> &DMatrix<f64> {
        &self.g_blocks[i - 1]
    }

    fn size(&self) -> usize {
        self.u_blocks[0].nrows()
    }

    /// `X_k^{(l)} = R_l R_{l+1} ⋯ R_{l+k-1}` (identity for `k = 0`).
    pub fn x_product(&self, k: usize, l: usize) -> DMatrix<f64> {
        (l..l + k).fold(DMatrix::identity(self.size(), self.size()), |acc, j| {
            acc * &self.r_blocks[j]
        })
    }

    /// `Y_k^{(l)} = G_l G_{l-1} ⋯ G_{l-k+1}` (identity for `k = 0`).
    pub fn y_product(&self, k: usize, l: usize) -> DMatrix<f64> {
        (0..k).fold(DMatrix::identity(self.size(), self.size()), |acc, j| {
            acc * self.g(l - j)
        })
    }

    /// Block `(m, n)` of `T^{-1}`:
    /// `V_{m,n} = Σ_{l=0}^{min(m,n)} Y_{m-l}^{(m)} U_l^{-1} X_{n-l}^{(l)}`.
    pub fn v_block(&self, m: usize, n: usize) -> DMatrix<f64> {
        let size = self.size();
        (0..=m.min(n)).fold(DMatrix::zeros(size, size), |acc, l| {
            acc + self.y_product(m - l, m) * &self.u_inverses[l] * self.x_product(n - l, l)
        })
    }

    /// Row sums `Σ_n V_{m,n} e` for every level `m`.
    ///
    /// Evaluated right to left: `z_l = Σ_k X_k^{(l)} e` obeys
    /// `z_l = e + R_l z_{l+1}`, and `y_m = Σ_l Y_{m-l}^{(m)} U_l^{-1} z_l`
    /// obeys `y_m = U_m^{-1} z_m + G_m y_{m-1}`.
    pub fn v_row_sums(&self) -> Vec<DVector<f64>> {
        let n = self.truncation;
        let size = self.size();
        let ones = DVector::from_element(size, 1.0);
        let mut z = vec![DVector::zeros(size); n + 1];
        z[n] = ones.clone();
        for l in (0..n).rev() {
            z[l] = &ones + &self.r_blocks[l] * &z[l + 1];
        }
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(n + 1);
        for m in 0..=n {
            let mut v = &self.u_inverses[m] * &z[m];
            if m > 0 {
                v += self.g(m) * &y[m - 1];
            }
            y.push(v);
        }
        y
    }

    /// `-θ T^{-1} e = -Σ_m θ_m Σ_n V_{m,n} e`.
    pub fn mean(&self, theta: &InitialVector) -> f64 {
        -self
            .v_row_sums()
            .iter()
            .enumerate()
            .map(|(m, row)| theta.level(m).dot(row))
            .sum::<f64>()
    }
}

/// `E[W_A]` through the RG-factorization of the tagged-tip chain.
pub fn mean_sojourn_rg(
    params: &ModelParams,
    theta: &InitialVector,
    opts: SojournOptions,
) -> Result<PhResult> {
    adaptive(params, theta, opts, Method::RgProducts, |level| {
        Ok(SojournRgFactors::new(params, level)?.mean(theta))
    })
}

/// Neglected Poisson mass allowed per evaluation point.
const POISSON_EPS: f64 = 1e-12;

/// Poisson(`rate`) probabilities on a window `[start, start + len)` that
/// carries all but `eps` of the mass.
pub fn poisson_window(rate: f64, eps: f64) -> (usize, Vec<f64>) {
    if rate <= 0.0 {
        return (0, vec![1.0]);
    }
    let mode = rate.floor() as usize;
    let log_mode = -rate + mode as f64 * rate.ln() - statrs::function::gamma::ln_gamma(mode as f64 + 1.0);
    let peak = log_mode.exp();

    let mut left = Vec::new();
    let mut w = peak;
    let mut n = mode;
    while n > 0 {
        w *= n as f64 / rate;
        n -= 1;
        left.push(w);
        let r = n as f64 / rate;
        if r < 1.0 && w * r / (1.0 - r) < eps / 2.0 {
            break;
        }
    }
    let start = n;

    let mut right = vec![peak];
    let mut w = peak;
    let mut n = mode;
    loop {
        w *= rate / (n + 1) as f64;
        n += 1;
        right.push(w);
        let r = rate / (n + 1) as f64;
        if r < 1.0 && w * r / (1.0 - r) < eps / 2.0 {
            break;
        }
    }
    left.reverse();
    left.extend(right);
    // ln_gamma round-off at large rates shifts the peak by ~1e-11 relative.
    let total: f64 = left.iter().sum();
    left.iter_mut().for_each(|w| *w /= total);
    (start, left)
}

fn max_exit_rate(rows: &[Vec<(usize, f64)>]) -> f64 {
    rows.iter()
        .enumerate()
        .map(|(r, row)| row.iter().find(|(c, _)| *c == r).map_or(0.0, |(_, v)| -v))
        .fold(0.0, f64::max)
}

/// Number of transition-matrix products a [`Uniformized`] build up to
/// `t_max` performs, times the number of stored transitions. Useful as a
/// cost estimate before committing to a long computation.
pub fn uniformization_work(params: &ModelParams, truncation: usize, t_max: f64) -> f64 {
    let rows = sparse_rows(params, truncation);
    let nnz: usize = rows.iter().map(Vec::len).sum();
    let lt = max_exit_rate(&rows) * t_max;
    (lt + 10.0 * lt.sqrt() + 10.0) * nnz as f64
}

/// `θ exp(Tt) e` for any `t`, via uniformization: with `Λ = max |T_ii|` and
/// `P = I + T/Λ`, `θ exp(Tt) e = Σ_n Pois(n; Λt) θ P^n e`. The scalars
/// `θ P^n e` are computed once, up to the largest time requested.
#[derive(Debug, Clone)]
pub struct Uniformized {
    pub rate: f64,
    pub truncation: usize,
    survival_steps: Vec<f64>,
}

impl Uniformized {
    pub fn new(params: &ModelParams, theta: &InitialVector, truncation: usize, t_max: f64) -> Result<Self> {
        check_theta(params, theta)?;
        if truncation + 1 < theta.levels() {
            return Err(Error::InvalidConfig(format!(
                "truncation {truncation} below the support of the initial vector"
            )));
        }
        let rows = sparse_rows(params, truncation);
        let rate = max_exit_rate(&rows);
        // P = I + T / rate
        let transitions: Vec<Vec<(usize, f64)>> = rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row.iter()
                    .map(|&(c, v)| (c, if c == r { 1.0 + v / rate } else { v / rate }))
                    .filter(|&(_, p)| p != 0.0)
                    .collect()
            })
            .collect();
        let (start, weights) = poisson_window(rate * t_max, POISSON_EPS);
        let steps = start + weights.len();

        let mut v = vec![0.0; rows.len()];
        v[..theta.entries.len()].copy_from_slice(&theta.entries);
        let mut next = vec![0.0; rows.len()];
        let mut survival_steps = Vec::with_capacity(steps);
        for _ in 0..steps {
            survival_steps.push(v.iter().sum());
            next.iter_mut().for_each(|x| *x = 0.0);
            for (r, row) in transitions.iter().enumerate() {
                let mass = v[r];
                if mass == 0.0 {
                    continue;
                }
                for &(c, p) in row {
                    next[c] += mass * p;
                }
            }
            std::mem::swap(&mut v, &mut next);
        }
        Ok(Self {
            rate,
            truncation,
            survival_steps,
        })
    }

    /// `P{W_A > t} = θ exp(Tt) e`.
    pub fn survival(&self, t: f64) -> f64 {
        if t == 0.0 {
            return self.survival_steps[0];
        }
        let (start, weights) = poisson_window(self.rate * t, POISSON_EPS);
        let last = *self.survival_steps.last().expect("nonempty");
        weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * self.survival_steps.get(start + j).copied().unwrap_or(last))
            .sum()
    }

    /// `F(t) = 1 - θ exp(Tt) e`, with `F(0) = 0`.
    pub fn cdf(&self, t: f64) -> f64 {
        if t == 0.0 {
            0.0
        } else {
            (1.0 - self.survival(t)).clamp(0.0, 1.0)
        }
    }

    /// Composite Simpson estimate of `∫_0^{t_max} P{W_A > t} dt` over
    /// `intervals` (rounded up to even) subintervals. Together with a
    /// negligible `survival(t_max)` this is a quadrature value of the mean.
    pub fn integrated_survival(&self, t_max: f64, intervals: usize) -> f64 {
        let n = intervals.max(2).next_multiple_of(2);
        let h = t_max / n as f64;
        let inner: f64 = (1..n)
            .map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * self.survival(h * i as f64))
            .sum();
        h / 3.0 * (self.survival(0.0) + inner + self.survival(t_max))
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::GridError("empty time grid".into()));
    }
    if let Some(t) = t_grid.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::GridError(format!("time {t} is negative or not finite")));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::GridError("times must be strictly increasing".into()));
    }
    Ok(())
}

/// Distribution function of the sojourn time on `t_grid`, for the chain
/// truncated at `truncation`. The mean is obtained by a linear solve at the
/// same truncation.
pub fn sojourn_cdf(
    params: &ModelParams,
    theta: &InitialVector,
    t_grid: &[f64],
    truncation: usize,
) -> Result<PhResult> {
    check_grid(t_grid)?;
    let t_max = *t_grid.last().expect("nonempty");
    let uniformized = Uniformized::new(params, theta, truncation, t_max)?;
    // Round-off in the Poisson sums is ~1e-15; keep the sampled F monotone.
    let mut running: f64 = 0.0;
    let cdf = t_grid
        .iter()
        .map(|&t| {
            running = running.max(uniformized.cdf(t));
            (t, running)
        })
        .collect();
    let mean = theta_dot(theta, &absorption_times(params, truncation)?);
    Ok(PhResult {
        mean,
        cdf,
        truncation,
        method: Method::LinearSolve,
    })
}

/// Evenly spaced grid `0, t_max/(points-1), ..., t_max`.
pub fn uniform_grid(t_max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| t_max * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Zero-based position of a state within the flattened vector.
pub fn flat_position(state: TaggedState, capacity: usize) -> Result<usize> {
    let level = match state {
        TaggedState::Internal { level, .. } | TaggedState::Boundary { level, .. } => level,
    };
    Ok(2 * capacity * level + phase_offset(state, capacity)?)
}
