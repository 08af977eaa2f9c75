//! Sample statistics used to compare simulation output against analytic values.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    /// Number of observations behind the estimate.
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, std_error, n }
    }

    /// Two-sided Student-t confidence interval at `level` (e.g. 0.99).
    pub fn confidence_interval(&self, level: f64) -> (f64, f64) {
        let half = self.std_error * t_quantile(level, self.n);
        (self.mean - half, self.mean + half)
    }

    pub fn covers(&self, value: f64, level: f64) -> bool {
        let (lo, hi) = self.confidence_interval(level);
        lo <= value && value <= hi
    }

    /// `(value - mean) / std_error`.
    pub fn z_score(&self, value: f64) -> f64 {
        (value - self.mean) / self.std_error
    }
}

fn t_quantile(level: f64, n: usize) -> f64 {
    let dof = (n.max(2) - 1) as f64;
    StudentsT::new(0.0, 1.0, dof)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + level / 2.0)
}

/// One-sample Kolmogorov–Smirnov distance `sup |F_n(t) - F(t)|`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic KS critical value `c(α) sqrt(1/n)` (one sample, `m = None`) or
/// `c(α) sqrt((n+m)/(nm))` (two samples), with `c(α) = sqrt(-ln(α/2)/2)`.
pub fn ks_critical(alpha: f64, n: usize, m: Option<usize>) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let effective = match m {
        None => n as f64,
        Some(m) => (n * m) as f64 / (n + m) as f64,
    };
    c / effective.sqrt()
}
