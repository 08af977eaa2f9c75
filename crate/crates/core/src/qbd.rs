//! Stationary analysis of the main level-dependent QBD chain.
//!
//! The infinite level set is realized by truncation at level `N` with the
//! boundary seed `U_N = A_{N,N}` (equivalently `R_N = 0`); [`stationary`]
//! doubles `N` until the tail mass and the mean internal-tip count settle.

use nalgebra::{DMatrix, RowDVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, BandMatrix};
use crate::model::{pairs, LevelBlocks, ModelParams};

/// Default tail tolerance of [`stationary`].
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default level ceiling of the adaptive truncation.
pub const DEFAULT_MAX_LEVEL: usize = 1 << 14;

/// Level-independent stationary vector of the phase process and the
/// resulting mean drift.
#[derive(Debug, Clone, Serialize)]
pub struct DriftDiagnostics {
    /// Stationary vector of `A_k = A_{k,k-1} + A_{k,k} + A_{k,k+1}`.
    pub beta: Vec<f64>,
    /// Same vector obtained from a direct null-space solve.
    pub beta_direct: Vec<f64>,
    /// Downward drift per internal tip, `α(1-β_M) + μ Σ C_j^2 β_j`.
    pub downward_rate_per_level: f64,
    pub lambda: f64,
    /// Smallest level with strictly positive drift gap.
    pub minimal_stable_level: usize,
}

impl DriftDiagnostics {
    /// Downward minus upward mean drift on level `k`.
    pub fn drift_gap(&self, k: usize) -> f64 {
        k as f64 * self.downward_rate_per_level - self.lambda
    }

    /// Max-norm residual of `β A_k` (at `k = 1`; `β` does not depend on `k`).
    pub fn residual(&self, params: &ModelParams) -> f64 {
        let a = phase_generator(params, 1);
        (RowDVector::from_row_slice(&self.beta) * a).amax()
    }
}

/// `A_{k,k-1} + A_{k,k} + A_{k,k+1}`.
fn phase_generator(params: &ModelParams, k: usize) -> DMatrix<f64> {
    let b = LevelBlocks::build(params, k.max(1));
    b.down.expect("level >= 1") + b.diag + b.up
}

/// Closed-form stationary vector of the phase process:
/// `β_s ∝ (α/μ)^{s-1} / Π_{i=2}^{s} C_i^2`.
pub fn beta_closed_form(params: &ModelParams) -> Vec<f64> {
    let ratio = params.alpha / params.mu;
    let mut weights = Vec::with_capacity(params.capacity);
    let mut w = 1.0;
    weights.push(w);
    for s in 2..=params.capacity {
        w *= ratio / pairs(s);
        weights.push(w);
    }
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

pub fn drift_diagnostics(params: &ModelParams) -> Result<DriftDiagnostics> {
    let beta = beta_closed_form(params);
    let beta_direct = linalg::left_null_vector(&phase_generator(params, 1))?
        .iter()
        .copied()
        .collect();
    let cap = params.capacity;
    let connect: f64 = (2..=cap).map(|j| pairs(j) * beta[j - 1]).sum();
    let rate = params.alpha * (1.0 - beta[cap - 1]) + params.mu * connect;
    // Smallest k with k·rate > λ; the quotient alone misjudges exact ties.
    let mut minimal_stable_level = (params.lambda / rate).floor() as usize + 1;
    while minimal_stable_level as f64 * rate <= params.lambda {
        minimal_stable_level += 1;
    }
    while minimal_stable_level > 1 && (minimal_stable_level - 1) as f64 * rate > params.lambda {
        minimal_stable_level -= 1;
    }
    Ok(DriftDiagnostics {
        beta,
        beta_direct,
        downward_rate_per_level: rate,
        lambda: params.lambda,
        minimal_stable_level,
    })
}

/// R-, U- and G-measures of the chain truncated at level `N`.
///
/// `u_blocks[k] = U_k` for `k = 0..=N`, `r_blocks[k] = R_k` for `k < N`,
/// `g_blocks[k - 1] = G_k = (-U_k^{-1}) A_{k,k-1}` for `k = 1..=N`.
#[derive(Debug, Clone)]
pub struct RgFactors {
    pub truncation: usize,
    pub u_blocks: Vec<DMatrix<f64>>,
    pub r_blocks: Vec<DMatrix<f64>>,
    pub g_blocks: Vec<DMatrix<f64>>,
}

impl RgFactors {
    pub fn g(&self, k: usize) -> &DMatrix<f64> {
        &self.g_blocks[k - 1]
    }
}

/// Backward recursion `U_k = A_{k,k} + R_k A_{k+1,k}` seeded with `U_N = A_{N,N}`.
pub fn rg_factorize(params: &ModelParams, truncation: usize) -> Result<RgFactors> {
    let n = truncation.max(1);
    let mut u_blocks = vec![DMatrix::zeros(0, 0); n + 1];
    let mut r_blocks = vec![DMatrix::zeros(0, 0); n];
    let mut g_blocks = vec![DMatrix::zeros(0, 0); n];

    let mut upper = LevelBlocks::build(params, n);
    u_blocks[n] = upper.diag.clone();
    for k in (0..n).rev() {
        let blocks = LevelBlocks::build(params, k);
        let neg_inv = -linalg::checked_inverse(&u_blocks[k + 1], k + 1)?;
        let down = upper.down.as_ref().expect("level >= 1");
        let r = &blocks.up * &neg_inv;
        u_blocks[k] = &blocks.diag + &r * down;
        g_blocks[k] = &neg_inv * down;
        r_blocks[k] = r;
        upper = blocks;
    }
    Ok(RgFactors {
        truncation: n,
        u_blocks,
        r_blocks,
        g_blocks,
    })
}

/// Stationary distribution over levels `0..=truncation`.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryResult {
    pub truncation: usize,
    /// Normalized `π_k`, `k = 0..=truncation`.
    pub pi: Vec<Vec<f64>>,
    /// Unnormalized `π̃_k` with `π̃_0 e = 1`.
    pub pi_tilde: Vec<Vec<f64>>,
    /// `c = 1 / Σ_k π̃_k e`.
    pub c: f64,
    /// Estimate of the probability mass beyond the truncation level.
    pub tail_mass: f64,
}

impl StationaryResult {
    pub fn capacity(&self) -> usize {
        self.pi.first().map_or(0, Vec::len)
    }

    /// `π_k e` for every level.
    pub fn level_masses(&self) -> Vec<f64> {
        self.pi.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.level_masses().iter().sum()
    }

    fn from_tilde(pi_tilde: Vec<Vec<f64>>) -> Self {
        let total: f64 = pi_tilde.iter().flatten().sum();
        let c = 1.0 / total;
        let pi: Vec<Vec<f64>> = pi_tilde
            .iter()
            .map(|row| row.iter().map(|v| v * c).collect())
            .collect();
        let tail_mass = tail_estimate(&pi);
        Self {
            truncation: pi.len() - 1,
            pi,
            pi_tilde,
            c,
            tail_mass,
        }
    }
}

/// Geometric extrapolation of the mass past the last level from the ratio of
/// the last two level masses. Only meaningful once the tail is decreasing.
fn tail_estimate(pi: &[Vec<f64>]) -> f64 {
    let masses: Vec<f64> = pi.iter().map(|row| row.iter().sum()).collect();
    let n = masses.len();
    if n < 2 {
        return 0.0;
    }
    let (last, prev) = (masses[n - 1], masses[n - 2]);
    if last == 0.0 {
        return 0.0;
    }
    let ratio = last / prev;
    if ratio < 1.0 {
        last * ratio / (1.0 - ratio)
    } else {
        f64::INFINITY
    }
}

/// Product form: `π̃_0 (A_{0,0} + R_0 A_{1,0}) = 0`,
/// `π̃_k = π̃_{k-1} R_{k-1}`.
pub fn stationary_from_factors(params: &ModelParams, factors: &RgFactors) -> Result<StationaryResult> {
    let level0 = LevelBlocks::build(params, 0);
    let level1 = LevelBlocks::build(params, 1);
    let boundary = &level0.diag + &factors.r_blocks[0] * level1.down.as_ref().expect("level 1");
    let mut current = linalg::left_null_vector(&boundary)?;
    // Clamp round-off negatives; the exact solution is strictly positive.
    current.iter_mut().for_each(|v| *v = v.max(0.0));
    let total = current.sum();
    current /= total;
    let mut pi_tilde = Vec::with_capacity(factors.truncation + 1);
    pi_tilde.push(current.iter().copied().collect::<Vec<_>>());
    for r in &factors.r_blocks {
        current = &current * r;
        pi_tilde.push(current.iter().copied().collect());
    }
    Ok(StationaryResult::from_tilde(pi_tilde))
}

/// Options for [`stationary_with`].
#[derive(Debug, Clone, Copy)]
pub struct StationaryOptions {
    pub tol: f64,
    pub max_level: usize,
    /// Overrides the starting truncation level.
    pub initial_level: Option<usize>,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_level: DEFAULT_MAX_LEVEL,
            initial_level: None,
        }
    }
}

/// Stationary distribution with adaptive truncation at tail tolerance `tol`.
pub fn stationary(params: &ModelParams, tol: f64) -> Result<StationaryResult> {
    stationary_with(
        params,
        StationaryOptions {
            tol,
            ..Default::default()
        },
    )
}

pub fn stationary_with(params: &ModelParams, opts: StationaryOptions) -> Result<StationaryResult> {
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(Error::InvalidConfig(format!("tail tolerance {} outside (0, 1)", opts.tol)));
    }
    let drift = drift_diagnostics(params)?;
    let mut level = opts
        .initial_level
        .unwrap_or_else(|| (2 * drift.minimal_stable_level).max(20));
    let mut previous: Option<f64> = None;
    while level <= opts.max_level {
        let factors = rg_factorize(params, level)?;
        let result = stationary_from_factors(params, &factors)?;
        let masses = result.level_masses();
        let total: f64 = masses.iter().sum();
        let mean = mean_level(&masses);
        let tail_ok = masses[level] / total < opts.tol;
        let settled = previous.is_some_and(|p| ((mean - p) / mean.max(f64::MIN_POSITIVE)).abs() < opts.tol);
        if tail_ok && settled {
            return Ok(result);
        }
        previous = Some(mean);
        level *= 2;
    }
    Err(Error::NoConvergence {
        ceiling: opts.max_level,
    })
}

fn mean_level(masses: &[f64]) -> f64 {
    masses.iter().enumerate().map(|(k, m)| k as f64 * m).sum()
}

/// Flat index of main-chain state `(k, m)`.
#[inline]
fn flat(k: usize, m: usize, cap: usize) -> usize {
    k * cap + (m - 1)
}

/// Off-diagonal rates of the main chain truncated at `level_cap`, in band form.
/// Transitions above the cap are dropped, which keeps rows conservative.
pub fn truncated_rates(params: &ModelParams, level_cap: usize) -> BandMatrix {
    let cap = params.capacity;
    let n = (level_cap + 1) * cap;
    let mut band = BandMatrix::zeros(n, cap + 1, cap + 1);
    for k in 0..=level_cap {
        for m in 1..=cap {
            let from = flat(k, m, cap);
            if k < level_cap {
                band.add(from, flat(k + 1, m, cap), params.lambda);
            }
            if k > 0 {
                let kf = k as f64;
                if m >= 2 {
                    band.add(from, flat(k - 1, m - 1, cap), kf * pairs(m) * params.mu);
                }
                if m < cap {
                    band.add(from, flat(k - 1, m + 1, cap), kf * params.alpha);
                }
            }
        }
    }
    band
}

/// Dense truncated generator (diagonal filled so rows sum to zero).
pub fn truncated_generator(params: &ModelParams, level_cap: usize) -> DMatrix<f64> {
    let band = truncated_rates(params, level_cap);
    let n = band.dim();
    let mut q = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { band.get(i, j) });
    for i in 0..n {
        let out: f64 = q.row(i).sum();
        q[(i, i)] = -out;
    }
    q
}

/// Brute-force stationary vector of the chain truncated at `level_cap`,
/// computed by GTH elimination over the whole flattened state space.
pub fn direct_solve_oracle(params: &ModelParams, level_cap: usize) -> Result<StationaryResult> {
    let cap = params.capacity;
    if (level_cap + 1) * cap > 200_000 {
        return Err(Error::InvalidConfig(format!(
            "direct solve of {} states exceeds the 200000-state limit",
            (level_cap + 1) * cap
        )));
    }
    let flat_pi = linalg::gth_stationary(truncated_rates(params, level_cap))?;
    let pi: Vec<Vec<f64>> = flat_pi.chunks(cap).map(<[f64]>::to_vec).collect();
    let scale = pi[0].iter().sum::<f64>();
    let pi_tilde = pi
        .iter()
        .map(|row| row.iter().map(|v| v / scale).collect())
        .collect();
    Ok(StationaryResult {
        truncation: level_cap,
        tail_mass: tail_estimate(&pi),
        c: scale,
        pi,
        pi_tilde,
    })
}

/// Max-norm residuals of the R- and G-equations on levels `1..=up_to`
/// (`R` also at level 0).
pub fn equation_residuals(params: &ModelParams, factors: &RgFactors, up_to: usize) -> (f64, f64) {
    let n = factors.truncation;
    assert!(up_to + 2 <= n, "residual levels must stay two below the truncation");
    let blocks: Vec<LevelBlocks> = (0..=up_to + 2).map(|k| LevelBlocks::build(params, k)).collect();
    let mut r_res: f64 = 0.0;
    let mut g_res: f64 = 0.0;
    for k in 0..=up_to {
        let r = &factors.r_blocks;
        let eq = &blocks[k].up
            + &r[k] * &blocks[k + 1].diag
            + &r[k] * &r[k + 1] * blocks[k + 2].down.as_ref().expect("level >= 1");
        r_res = r_res.max(eq.amax());
        if k >= 1 {
            let eq = &blocks[k].up * factors.g(k + 1) * factors.g(k)
                + &blocks[k].diag * factors.g(k)
                + blocks[k].down.as_ref().expect("level >= 1");
            g_res = g_res.max(eq.amax());
        }
    }
    (r_res, g_res)
}

/// Max-norm difference between `(I - R_U) U_D (I - G_L)` and the generator
/// truncated at level `N` with the up-block of level `N` dropped.
pub fn factorization_gap(params: &ModelParams, factors: &RgFactors) -> f64 {
    let cap = params.capacity;
    let n = factors.truncation;
    let dim = (n + 1) * cap;
    let mut r_u = DMatrix::zeros(dim, dim);
    let mut u_d = DMatrix::zeros(dim, dim);
    let mut g_l = DMatrix::zeros(dim, dim);
    let mut q = DMatrix::zeros(dim, dim);
    for k in 0..=n {
        let blocks = LevelBlocks::build(params, k);
        u_d.view_mut((k * cap, k * cap), (cap, cap)).copy_from(&factors.u_blocks[k]);
        q.view_mut((k * cap, k * cap), (cap, cap)).copy_from(&blocks.diag);
        if k < n {
            r_u.view_mut((k * cap, (k + 1) * cap), (cap, cap)).copy_from(&factors.r_blocks[k]);
            q.view_mut((k * cap, (k + 1) * cap), (cap, cap)).copy_from(&blocks.up);
        }
        if k > 0 {
            g_l.view_mut((k * cap, (k - 1) * cap), (cap, cap)).copy_from(factors.g(k));
            q.view_mut((k * cap, (k - 1) * cap), (cap, cap))
                .copy_from(blocks.down.as_ref().expect("level >= 1"));
        }
    }
    let eye = DMatrix::<f64>::identity(dim, dim);
    let product = (&eye - r_u) * u_d * (eye - g_l);
    (product - q).amax()
}

/// Largest absolute entrywise difference between two results over their
/// common levels (levels present in only one count against their mass).
pub fn max_gap(a: &StationaryResult, b: &StationaryResult) -> f64 {
    let levels = a.pi.len().max(b.pi.len());
    let zero = vec![0.0; a.capacity().max(b.capacity())];
    (0..levels)
        .flat_map(|k| {
            let x = a.pi.get(k).unwrap_or(&zero);
            let y = b.pi.get(k).unwrap_or(&zero);
            x.iter().zip(y).map(|(u, v)| (u - v).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// Convenience: `π_k` as an nalgebra row vector.
pub fn level_row(st: &StationaryResult, k: usize) -> RowDVector<f64> {
    RowDVector::from_row_slice(&st.pi[k])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(lambda: f64, mu: f64, alpha: f64, cap: usize) -> ModelParams {
        ModelParams::new(lambda, mu, alpha, cap).unwrap()
    }

    #[test]
    fn beta_examples() {
        let b2 = beta_closed_form(&p(1.0, 0.7, 0.7, 2));
        assert!((b2[0] - 0.5).abs() < 1e-15 && (b2[1] - 0.5).abs() < 1e-15);
        let b3 = beta_closed_form(&p(1.0, 2.0, 2.0, 3));
        for (got, want) in b3.iter().zip([3.0 / 7.0, 3.0 / 7.0, 1.0 / 7.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn drift_example() {
        let params = p(1.0, 1.0, 1.0, 2);
        let d = drift_diagnostics(&params).unwrap();
        for k in 0..10 {
            assert!((d.drift_gap(k) - (k as f64 - 1.0)).abs() < 1e-14);
        }
        assert_eq!(d.minimal_stable_level, 2);
        assert!(d.residual(&params) < 1e-12);
    }

    #[test]
    fn closed_form_matches_direct_solve() {
        for cap in [2, 3, 7, 20] {
            let d = drift_diagnostics(&p(2.0, 1.3, 0.8, cap)).unwrap();
            for (a, b) in d.beta.iter().zip(&d.beta_direct) {
                assert!((a - b).abs() < 1e-12, "cap {cap}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn r_blocks_nonnegative_and_g_substochastic() {
        let params = p(3.0, 0.8, 0.6, 6);
        let f = rg_factorize(&params, 50).unwrap();
        for r in &f.r_blocks {
            assert!(r.iter().all(|&x| x >= 0.0));
        }
        for g in &f.g_blocks {
            assert!(g.iter().all(|&x| x >= 0.0));
            for row in g.row_iter() {
                assert!(row.sum() <= 1.0 + 1e-10);
            }
        }
        for u in &f.u_blocks {
            assert!(u.diagonal().iter().all(|&d| d < 0.0));
        }
    }

    #[test]
    fn minimal_stable_level_on_exact_tie() {
        // rate = 2/3 and λ/rate = 3: level 3 has zero drift gap.
        let d = drift_diagnostics(&p(2.0, 1.0, 0.5, 2)).unwrap();
        assert!(d.drift_gap(d.minimal_stable_level) > 0.0);
        assert!(d.drift_gap(d.minimal_stable_level - 1) <= 0.0);
    }

    #[test]
    fn nonlinear_equation_residuals() {
        let params = p(2.0, 1.0, 0.5, 5);
        let f = rg_factorize(&params, 60).unwrap();
        let (r, g) = equation_residuals(&params, &f, 40);
        assert!(r < 1e-8, "R residual {r}");
        assert!(g < 1e-8, "G residual {g}");
    }

    #[test]
    fn factorization_reconstructs_generator() {
        let params = p(2.0, 1.0, 0.5, 4);
        let f = rg_factorize(&params, 25).unwrap();
        assert!(factorization_gap(&params, &f) < 1e-8);
    }

    #[test]
    fn stationary_matches_oracle() {
        let params = p(2.0, 1.0, 0.5, 5);
        let st = stationary(&params, 1e-10).unwrap();
        assert!((st.total_mass() - 1.0).abs() < 1e-8);
        assert!(st.pi.iter().flatten().all(|&v| v >= 0.0));
        assert!(st.tail_mass < 1e-8);
        let oracle = direct_solve_oracle(&params, 200).unwrap();
        assert!(max_gap(&st, &oracle) < 1e-8);
    }

    #[test]
    fn truncated_generator_rows_sum_to_zero() {
        let q = truncated_generator(&p(1.5, 0.9, 0.4, 3), 50);
        for row in q.row_iter() {
            assert!(row.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_refuses_huge_systems() {
        assert!(matches!(
            direct_solve_oracle(&p(1.0, 1.0, 1.0, 1000), 1000),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn tail_is_eventually_decreasing() {
        let params = p(6.0, 0.5, 0.3, 8);
        let d = drift_diagnostics(&params).unwrap();
        let st = stationary(&params, 1e-10).unwrap();
        let masses = st.level_masses();
        for k in d.minimal_stable_level..masses.len() - 1 {
            assert!(masses[k + 1] <= masses[k], "level {k}");
        }
    }

    #[test]
    fn no_convergence_under_tiny_ceiling() {
        let opts = StationaryOptions {
            tol: 1e-10,
            max_level: 8,
            initial_level: Some(4),
        };
        assert!(matches!(
            stationary_with(&p(20.0, 1.0, 0.5, 5), opts),
            Err(Error::NoConvergence { ceiling: 8 })
        ));
    }
}
