//! `tangle check`: end-to-end numerical self-checks.

use std::io::{self, Write};

use clap::Args;
use rayon::prelude::*;
use tangle_core::measures::{conservation_report, Measures};
use tangle_core::model::{LevelBlocks, ModelParams, SojournLevelBlocks};
use tangle_core::qbd::{self, StationaryOptions};
use tangle_core::sojourn::{self, SojournOptions, Uniformized};
use tangle_core::Error;

use crate::CliError;

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Check this single point instead of the default grid (other parameters
    /// default to lambda 3, mu 1, alpha 0.5, capacity 10).
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Tail tolerance used by the stationary solves.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
}

struct Outcome {
    name: String,
    value: f64,
    tol: f64,
    pass: bool,
    note: Option<String>,
}

impl Outcome {
    fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tol,
            pass: value <= tol,
            note: None,
        }
    }

    fn flag(name: impl Into<String>, pass: bool, note: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value: if pass { 0.0 } else { 1.0 },
            tol: 0.0,
            pass,
            note: Some(note.into()),
        }
    }

    fn failed(name: impl Into<String>, err: &Error) -> Self {
        Self::flag(name, false, format!("error: {err}"))
    }
}

fn label(p: &ModelParams) -> String {
    format!("lambda={} mu={} alpha={} M={}", p.lambda, p.mu, p.alpha, p.capacity)
}

fn generator_rows(params: &ModelParams) -> Outcome {
    let mut worst: f64 = 0.0;
    for k in 0..=50 {
        worst = worst.max(LevelBlocks::build(params, k).row_sums().amax());
        worst = worst.max(SojournLevelBlocks::build(params, k).row_sums().amax());
    }
    Outcome::at_most("generator row sums", worst, 1e-12)
}

fn drift_checks(params: &ModelParams, out: &mut Vec<Outcome>) {
    let drift = match qbd::drift_diagnostics(params) {
        Ok(d) => d,
        Err(e) => return out.push(Outcome::failed("phase stationary vector", &e)),
    };
    out.push(Outcome::at_most("beta * A_k residual", drift.residual(params), 1e-12));
    let gap = drift
        .beta
        .iter()
        .zip(&drift.beta_direct)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    out.push(Outcome::at_most("closed-form vs direct beta", gap, 1e-10));
    let msl = drift.minimal_stable_level;
    let positive = (msl..msl + 1000).all(|k| drift.drift_gap(k) > 0.0);
    let bound = (params.lambda / drift.downward_rate_per_level).ceil() as usize + 1;
    out.push(Outcome::flag(
        "drift gap positive from minimal stable level",
        positive && msl <= bound,
        format!("minimal stable level {msl}, bound {bound}"),
    ));
}

fn stationary_checks(params: &ModelParams, tol: f64, out: &mut Vec<Outcome>) {
    let opts = StationaryOptions {
        tol,
        ..Default::default()
    };
    let st = match qbd::stationary_with(params, opts) {
        Ok(st) => st,
        Err(e) => return out.push(Outcome::failed("stationary solve", &e)),
    };
    let measures = Measures::compute(&st, params);
    let n = st.truncation;

    match qbd::rg_factorize(params, n) {
        Ok(f) => {
            let (r, g) = qbd::equation_residuals(params, &f, n - 2);
            out.push(Outcome::at_most("R-equation residual", r, 1e-8));
            out.push(Outcome::at_most("G-equation residual", g, 1e-8));
        }
        Err(e) => out.push(Outcome::failed("R/G factors", &e)),
    }
    if (26 * params.capacity) <= 1500 {
        match qbd::rg_factorize(params, 25) {
            Ok(f) => out.push(Outcome::at_most(
                "(I-R_U) U_D (I-G_L) reconstruction",
                qbd::factorization_gap(params, &f),
                1e-8,
            )),
            Err(e) => out.push(Outcome::failed("factorization", &e)),
        }
    }
    if 301 * params.capacity <= 200_000 {
        match qbd::direct_solve_oracle(params, 300) {
            Ok(oracle) => {
                out.push(Outcome::at_most("RG vs direct solve (max entry)", qbd::max_gap(&st, &oracle), 1e-8));
                let o = Measures::compute(&oracle, params);
                let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
                let worst = rel(measures.e_na, o.e_na)
                    .max(rel(measures.e_nb, o.e_nb))
                    .max(rel(measures.th, o.th));
                out.push(Outcome::at_most("RG vs direct solve (measures)", worst, 1e-8));
            }
            Err(e) => out.push(Outcome::failed("direct solve", &e)),
        }
    }

    let theta = sojourn::pasta_initial(&st, params);
    let linear = match sojourn::mean_sojourn_linear(params, &theta, SojournOptions::default()) {
        Ok(r) => r,
        Err(e) => return out.push(Outcome::failed("sojourn mean (linear)", &e)),
    };
    match sojourn::mean_sojourn_rg(params, &theta, SojournOptions::default()) {
        Ok(rg) => out.push(Outcome::at_most(
            "sojourn mean linear vs rg",
            (linear.mean - rg.mean).abs() / linear.mean,
            1e-8,
        )),
        Err(e) => out.push(Outcome::failed("sojourn mean (rg)", &e)),
    }
    let report = conservation_report(&st, params, Some(linear.mean));
    out.push(Outcome::at_most("|TH - lambda| / lambda", report.relative_gap, 1e-4));
    out.push(Outcome::at_most(
        "Little: |lambda E[W_A] - E[N_A] - E[N_B]| / (E[N_A]+E[N_B])",
        report.little_gap().expect("mean supplied"),
        1e-3,
    ));

    let t_max = 60.0 * linear.mean;
    match Uniformized::new(params, &theta, linear.truncation, t_max) {
        Ok(u) => {
            let grid = sojourn::uniform_grid(t_max, 200);
            let mut values = grid.iter().map(|&t| u.cdf(t)).collect::<Vec<_>>();
            let mut running: f64 = 0.0;
            values.iter_mut().for_each(|v| {
                running = running.max(*v);
                *v = running;
            });
            out.push(Outcome::flag("F(0) = 0", u.cdf(0.0) == 0.0, "exact"));
            let dips = grid.iter().map(|&t| u.cdf(t)).zip(&values).map(|(raw, kept)| kept - raw);
            out.push(Outcome::at_most("F monotone (largest dip)", dips.fold(0.0, f64::max), 1e-12));
            let integral = u.integrated_survival(t_max, 4000);
            out.push(Outcome::at_most(
                "integral of 1-F vs linear mean",
                (integral - linear.mean).abs() / linear.mean,
                1e-3,
            ));
        }
        Err(e) => out.push(Outcome::failed("uniformization", &e)),
    }
}

fn full_checks(params: &ModelParams, tol: f64) -> Vec<Outcome> {
    let mut out = vec![generator_rows(params)];
    drift_checks(params, &mut out);
    stationary_checks(params, tol, &mut out);
    out
}

fn validation_check(lambda: f64, mu: f64, alpha: f64, capacity: usize) -> Outcome {
    match ModelParams::new(lambda, mu, alpha, capacity) {
        Err(e @ Error::CapacityTooSmall(_)) => {
            Outcome::flag("capacity validation", true, format!("rejected as expected: {e}"))
        }
        Err(e) => Outcome::flag("capacity validation", false, format!("unexpected error: {e}")),
        Ok(_) => Outcome::flag("capacity validation", false, "capacity 1 was accepted"),
    }
}

fn conservation_grid(tol: f64) -> Vec<(ModelParams, Outcome)> {
    let mut points = Vec::new();
    for lambda in [20.0, 30.0, 40.0] {
        for mu in [2.0, 3.5, 5.0] {
            for alpha in [0.3, 0.45] {
                for m in [10, 50] {
                    points.push(ModelParams::new(lambda, mu, alpha, m).expect("valid grid point"));
                }
            }
        }
    }
    points
        .into_par_iter()
        .map(|p| {
            let outcome = match qbd::stationary(&p, tol.max(1e-10)) {
                Ok(st) => {
                    let th = tangle_core::measures::throughput(&st, &p);
                    Outcome::at_most("|TH - lambda| / lambda", (th - p.lambda).abs() / p.lambda, 1e-4)
                }
                Err(e) => Outcome::failed("stationary solve", &e),
            };
            (p, outcome)
        })
        .collect()
}

fn print(out: &mut impl Write, scope: &str, o: &Outcome) -> io::Result<()> {
    let status = if o.pass { "PASS" } else { "FAIL" };
    match &o.note {
        Some(note) => writeln!(out, "{status}  [{scope}] {}: {note}", o.name),
        None => writeln!(out, "{status}  [{scope}] {}: {:.3e} (tol {:.0e})", o.name, o.value, o.tol),
    }
}

pub fn run(args: &CheckArgs) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    let mut failures = 0;
    let mut record = |out: &mut io::StdoutLock, scope: &str, o: &Outcome| -> io::Result<()> {
        if !o.pass {
            failures += 1;
        }
        print(out, scope, o)
    };

    let custom = args.lambda.is_some() || args.mu.is_some() || args.alpha.is_some() || args.capacity.is_some();
    if custom {
        let (lambda, mu, alpha) = (args.lambda.unwrap_or(3.0), args.mu.unwrap_or(1.0), args.alpha.unwrap_or(0.5));
        let capacity = args.capacity.unwrap_or(10);
        match ModelParams::new(lambda, mu, alpha, capacity) {
            Ok(params) => {
                let scope = label(&params);
                for o in full_checks(&params, args.tol) {
                    record(&mut out, &scope, &o)?;
                }
            }
            Err(Error::CapacityTooSmall(_)) => {
                record(&mut out, "input", &validation_check(lambda, mu, alpha, capacity))?;
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        record(&mut out, "input", &validation_check(1.0, 1.0, 1.0, 1))?;
        for params in [
            ModelParams::new(2.0, 1.0, 0.5, 5)?,
            ModelParams::new(3.0, 1.0, 0.5, 10)?,
        ] {
            let scope = label(&params);
            for o in full_checks(&params, args.tol) {
                record(&mut out, &scope, &o)?;
            }
        }
        let grid = conservation_grid(args.tol);
        let mut worst: f64 = 0.0;
        for (params, o) in &grid {
            worst = worst.max(o.value);
            record(&mut out, &label(params), o)?;
        }
        writeln!(
            out,
            "note: largest |TH - lambda| / lambda over the grid is {worst:.3e}; throughput does not depend on mu"
        )?;
    }

    if failures > 0 {
        Err(CliError::ChecksFailed(failures))
    } else {
        writeln!(out, "all checks passed")?;
        Ok(())
    }
}
