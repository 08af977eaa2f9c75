//! Gillespie simulation of the tip-count chain `(Q(t), S(t))`, with optional
//! tracking of tagged arrivals.
//!
//! Only counts are simulated. Tips of one class are exchangeable, so tagged
//! tips can sit in the first slots of their class: an event picks a uniform
//! slot among the `k` internal tips (or a uniform pair among the `m` boundary
//! tips) and a tag is involved when its slot is picked.
//!
//! Arrivals are tagged by independent coin flips, so the tagged set is an
//! unbiased sample of all arrivals and sees time averages. Picking "the next
//! arrival after some time" would not: the state just before that arrival has
//! evolved without arrivals.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{pairs, ModelParams};
use crate::stats::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub params: ModelParams,
    pub horizon: f64,
    pub warmup: f64,
    pub replications: usize,
    pub master_seed: u64,
    /// Tagged arrivals to follow per replication (0 disables tagging).
    pub tagged_count: usize,
    /// Probability that an arrival in `(warmup, horizon]` is tagged. `None`
    /// picks a value that spreads `tagged_count` tags over the whole window.
    pub tag_probability: Option<f64>,
}

impl SimConfig {
    pub fn new(params: ModelParams, horizon: f64, warmup: f64, replications: usize, master_seed: u64) -> Self {
        Self {
            params,
            horizon,
            warmup,
            replications,
            master_seed,
            tagged_count: 0,
            tag_probability: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.warmup.is_finite() && self.warmup >= 0.0) {
            return Err(Error::InvalidConfig(format!("warmup {} must be >= 0", self.warmup)));
        }
        if !(self.horizon.is_finite() && self.horizon > self.warmup) {
            return Err(Error::InvalidConfig(format!(
                "horizon {} must exceed warmup {}",
                self.horizon, self.warmup
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("at least one replication is required".into()));
        }
        if let Some(p) = self.tag_probability {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidConfig(format!("tag probability {p} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// Effective tagging probability. The automatic value expects 10% more
    /// tags than requested so the quota is met before the horizon.
    pub fn effective_tag_probability(&self) -> f64 {
        self.tag_probability.unwrap_or_else(|| {
            let expected_arrivals = self.params.lambda * (self.horizon - self.warmup);
            (1.1 * self.tagged_count as f64 / expected_arrivals).min(1.0)
        })
    }
}

/// SplitMix64 finalizer, used to derive one seed per replication.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replication_seed(master_seed: u64, replication: usize) -> u64 {
    splitmix64(master_seed ^ splitmix64(replication as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Event {
    Arrival,
    Connection,
    Impatience,
}

impl Event {
    pub fn code(self) -> char {
        match self {
            Event::Arrival => 'A',
            Event::Connection => 'C',
            Event::Impatience => 'I',
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EventCounts {
    pub arrivals: u64,
    pub connections: u64,
    pub impatience: u64,
}

impl EventCounts {
    fn record(&mut self, event: Event) {
        match event {
            Event::Arrival => self.arrivals += 1,
            Event::Connection => self.connections += 1,
            Event::Impatience => self.impatience += 1,
        }
    }

    fn merge(&mut self, other: &EventCounts) {
        self.arrivals += other.arrivals;
        self.connections += other.connections;
        self.impatience += other.impatience;
    }
}

/// Statistics of one replication over `(warmup, horizon]`.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicationStats {
    pub mean_internal: f64,
    pub mean_boundary: f64,
    pub throughput: f64,
    pub events: EventCounts,
    pub internal_at_warmup: u64,
    pub internal_at_horizon: u64,
    pub min_boundary: usize,
    pub max_boundary: usize,
    pub sojourns: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub mean_internal: Estimate,
    pub mean_boundary: Estimate,
    /// `2 × connections / (horizon - warmup)`.
    pub th_estimate: Estimate,
    pub sojourn_samples: Vec<f64>,
    pub event_counts: EventCounts,
    pub replications: Vec<ReplicationStats>,
}

impl SimResult {
    /// Mean sojourn of the tagged arrivals. The standard error comes from the
    /// per-replication means, which are independent; `n` counts replications.
    pub fn sojourn_estimate(&self) -> Option<Estimate> {
        let means: Vec<f64> = self
            .replications
            .iter()
            .filter(|r| !r.sojourns.is_empty())
            .map(|r| r.sojourns.iter().sum::<f64>() / r.sojourns.len() as f64)
            .collect();
        if means.len() < 2 {
            return None;
        }
        let mut estimate = Estimate::from_samples(&means);
        // Weight by sample size so the point estimate is the pooled mean.
        estimate.mean = self.sojourn_samples.iter().sum::<f64>() / self.sojourn_samples.len() as f64;
        Some(estimate)
    }
}

/// Start times of the tagged tips currently in each class.
#[derive(Debug, Default)]
struct Tags {
    internal: Vec<f64>,
    boundary: Vec<f64>,
}

impl Tags {
    fn is_empty(&self) -> bool {
        self.internal.is_empty() && self.boundary.is_empty()
    }

    /// One of `k` internal tips leaves the internal class; if it is tagged, the
    /// tag joins the boundary.
    fn internal_leaves(&mut self, rng: &mut impl Rng, k: u64) -> Option<f64> {
        if self.internal.is_empty() {
            return None;
        }
        let slot = rng.random_range(0..k) as usize;
        (slot < self.internal.len()).then(|| self.internal.swap_remove(slot))
    }
}

/// Runs one replication; `observe` sees `(t, event, k, m)` after every event.
fn run_replication(
    config: &SimConfig,
    replication: usize,
    tagging: bool,
    mut observe: impl FnMut(f64, Event, u64, usize),
) -> ReplicationStats {
    let params = &config.params;
    let cap = params.capacity;
    let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(config.master_seed, replication));

    let (mut t, mut k, mut m) = (0.0f64, 0u64, 1usize);
    let (mut area_k, mut area_m) = (0.0, 0.0);
    let mut events = EventCounts::default();
    let mut internal_at_warmup = 0;
    let mut internal_at_horizon = 0;
    let mut passed_warmup = false;
    let (mut min_boundary, mut max_boundary) = (m, m);

    let mut tags = Tags::default();
    let mut started = 0usize;
    let mut sojourns = Vec::with_capacity(config.tagged_count);
    let tag_target = if tagging { config.tagged_count } else { 0 };
    let tag_probability = config.effective_tag_probability();

    loop {
        let kf = k as f64;
        let connect = kf * pairs(m) * params.mu;
        let impatience = if m < cap { kf * params.alpha } else { 0.0 };
        let total = params.lambda + connect + impatience;
        let dt: f64 = rng.sample::<f64, _>(Exp1) / total;
        let next = t + dt;

        if !passed_warmup && next > config.warmup {
            internal_at_warmup = k;
            passed_warmup = true;
        }
        let overlap = next.min(config.horizon) - t.max(config.warmup);
        if overlap > 0.0 {
            area_k += kf * overlap;
            area_m += m as f64 * overlap;
        }
        if next > config.horizon && t <= config.horizon {
            internal_at_horizon = k;
        }
        // Past the horizon the run only continues to finish open tags.
        if next > config.horizon && tags.is_empty() {
            break;
        }
        t = next;

        let u = rng.random::<f64>() * total;
        let event = if u < params.lambda {
            Event::Arrival
        } else if u < params.lambda + connect {
            Event::Connection
        } else {
            Event::Impatience
        };

        // Tag bookkeeping uses the pre-event counts.
        match event {
            Event::Arrival => {
                let window = t > config.warmup && t <= config.horizon;
                if window && started < tag_target && rng.random::<f64>() < tag_probability {
                    tags.internal.push(t);
                    started += 1;
                }
            }
            Event::Connection => {
                let connecting = tags.internal_leaves(&mut rng, k);
                if !tags.boundary.is_empty() {
                    // Uniform pair of distinct slots among the m boundary tips.
                    let a = rng.random_range(0..m);
                    let mut b = rng.random_range(0..m - 1);
                    if b >= a {
                        b += 1;
                    }
                    let (hi, lo) = (a.max(b), a.min(b));
                    for slot in [hi, lo] {
                        if slot < tags.boundary.len() {
                            sojourns.push(t - tags.boundary.swap_remove(slot));
                        }
                    }
                }
                if let Some(since) = connecting {
                    tags.boundary.push(since);
                }
            }
            Event::Impatience => {
                if let Some(since) = tags.internal_leaves(&mut rng, k) {
                    tags.boundary.push(since);
                }
            }
        }

        match event {
            Event::Arrival => k += 1,
            Event::Connection => {
                k -= 1;
                m -= 1;
            }
            Event::Impatience => {
                k -= 1;
                m += 1;
            }
        }
        min_boundary = min_boundary.min(m);
        max_boundary = max_boundary.max(m);
        if t > config.warmup && t <= config.horizon {
            events.record(event);
        }
        observe(t, event, k, m);
    }

    let span = config.horizon - config.warmup;
    ReplicationStats {
        mean_internal: area_k / span,
        mean_boundary: area_m / span,
        throughput: 2.0 * events.connections as f64 / span,
        events,
        internal_at_warmup,
        internal_at_horizon,
        min_boundary,
        max_boundary,
        sojourns,
    }
}

fn run_all(config: &SimConfig, tagging: bool) -> Vec<ReplicationStats> {
    let one = |r: usize| run_replication(config, r, tagging, |_, _, _, _| {});
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..config.replications).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..config.replications).map(one).collect()
    }
}

fn summarize(replications: Vec<ReplicationStats>) -> SimResult {
    let column = |f: fn(&ReplicationStats) -> f64| -> Vec<f64> { replications.iter().map(f).collect() };
    let mut event_counts = EventCounts::default();
    for r in &replications {
        event_counts.merge(&r.events);
    }
    SimResult {
        mean_internal: Estimate::from_samples(&column(|r| r.mean_internal)),
        mean_boundary: Estimate::from_samples(&column(|r| r.mean_boundary)),
        th_estimate: Estimate::from_samples(&column(|r| r.throughput)),
        sojourn_samples: replications.iter().flat_map(|r| r.sojourns.iter().copied()).collect(),
        event_counts,
        replications,
    }
}

/// Time averages and throughput over independent replications.
pub fn simulate(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    Ok(summarize(run_all(config, false)))
}

/// Like [`simulate`], also following up to `tagged_count` tagged arrivals per
/// replication, tagged independently after the warmup.
pub fn simulate_tagged(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    if config.tagged_count == 0 {
        return Err(Error::InvalidConfig("tagged_count must be at least 1".into()));
    }
    if config.warmup <= 0.0 {
        return Err(Error::InvalidConfig("tagging needs a positive warmup".into()));
    }
    Ok(summarize(run_all(config, true)))
}

/// Writes the trajectory of one replication as CSV `t,event,k,m`, one row per
/// event up to the horizon.
pub fn write_trace(config: &SimConfig, replication: usize, out: &mut impl Write) -> io::Result<()> {
    config
        .validate()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    writeln!(out, "t,event,k,m")?;
    let mut result = Ok(());
    run_replication(config, replication, false, |t, event, k, m| {
        if result.is_ok() {
            result = writeln!(out, "{t},{},{k},{m}", event.code());
        }
    });
    result
}
