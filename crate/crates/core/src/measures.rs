//! Steady-state performance measures and conservation cross-checks.

use serde::Serialize;

use crate::model::{pairs, ModelParams};
use crate::qbd::StationaryResult;

/// `f_A = (1, 2, ..., M)`: boundary-tip count per phase.
pub fn boundary_weights(capacity: usize) -> Vec<f64> {
    (1..=capacity).map(|m| m as f64).collect()
}

/// `f = (0, 1, C_3^2, ..., C_M^2)`: number of pairs an internal tip can approve.
pub fn pair_weights(capacity: usize) -> Vec<f64> {
    let mut f = vec![0.0, 1.0];
    f.extend((3..=capacity).map(pairs));
    f.truncate(capacity);
    f
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean number of internal tips, `Σ_k k π_k e`.
pub fn expected_internal(st: &StationaryResult) -> f64 {
    st.pi
        .iter()
        .enumerate()
        .map(|(k, row)| k as f64 * row.iter().sum::<f64>())
        .sum()
}

/// Mean number of boundary tips, `Σ_k π_k f_A`.
pub fn expected_boundary(st: &StationaryResult) -> f64 {
    let f_a = boundary_weights(st.capacity());
    st.pi.iter().map(|row| dot(row, &f_a)).sum()
}

/// Network nodes created per unit time, `2μ Σ_k k π_k f`.
pub fn throughput(st: &StationaryResult, params: &ModelParams) -> f64 {
    2.0 * connection_rate(st, params)
}

/// Rate of pair approvals, `μ Σ_k k π_k f`.
fn connection_rate(st: &StationaryResult, params: &ModelParams) -> f64 {
    let f = pair_weights(st.capacity());
    params.mu
        * st
            .pi
            .iter()
            .enumerate()
            .map(|(k, row)| k as f64 * dot(row, &f))
            .sum::<f64>()
}

/// Rate of impatience events, `Σ_{k, m<M} kα π_{k,m}`.
fn impatience_rate(st: &StationaryResult, params: &ModelParams) -> f64 {
    let cap = st.capacity();
    params.alpha
        * st
            .pi
            .iter()
            .enumerate()
            .map(|(k, row)| k as f64 * row[..cap - 1].iter().sum::<f64>())
            .sum::<f64>()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Measures {
    pub e_na: f64,
    pub e_nb: f64,
    pub th: f64,
    pub trunc_level: usize,
    pub tail_mass: f64,
}

impl Measures {
    pub fn compute(st: &StationaryResult, params: &ModelParams) -> Self {
        Self {
            e_na: expected_internal(st),
            e_nb: expected_boundary(st),
            th: throughput(st, params),
            trunc_level: st.truncation,
            tail_mass: st.tail_mass,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConservationReport {
    pub th: f64,
    pub lambda: f64,
    /// `|TH - λ| / λ`.
    pub relative_gap: f64,
    pub impatience_rate: f64,
    pub connection_rate: f64,
    /// `λ E[W_A]`, when a sojourn mean is supplied.
    pub little_lhs: Option<f64>,
    /// `E[N_A] + E[N_B]`.
    pub little_rhs: f64,
}

impl ConservationReport {
    /// `|impatience - connection| / connection`.
    pub fn balance_gap(&self) -> f64 {
        (self.impatience_rate - self.connection_rate).abs() / self.connection_rate
    }

    /// Relative Little's-law gap, when a sojourn mean was supplied.
    pub fn little_gap(&self) -> Option<f64> {
        self.little_lhs
            .map(|lhs| (lhs - self.little_rhs).abs() / self.little_rhs)
    }
}

/// Flow-conservation and Little's-law cross-checks. In steady state the
/// boundary count is balanced (impatience = connections) and every arrival
/// leaves the internal set once, so `TH = λ` exactly.
pub fn conservation_report(
    st: &StationaryResult,
    params: &ModelParams,
    mean_sojourn: Option<f64>,
) -> ConservationReport {
    let th = throughput(st, params);
    ConservationReport {
        th,
        lambda: params.lambda,
        relative_gap: (th - params.lambda).abs() / params.lambda,
        impatience_rate: impatience_rate(st, params),
        connection_rate: connection_rate(st, params),
        little_lhs: mean_sojourn.map(|w| params.lambda * w),
        little_rhs: expected_internal(st) + expected_boundary(st),
    }
}
