//! Browser bindings for the tip-dynamics engine.
//!
//! Each export takes plain numbers and returns a JSON string, so the page
//! needs no generated type glue beyond `wasm-bindgen` itself.

use serde::Serialize;
use tangle_core::model::ModelParams;
use tangle_core::sweep::{evaluate_point, run_sweep, Axis, Param, SweepRow, SweepSpec};
use tangle_core::{qbd, sojourn, Measures};
use wasm_bindgen::prelude::*;

const TOL: f64 = 1e-10;

/// Largest uniformization workload (multiply-adds) a browser call accepts.
const CDF_WORK_LIMIT: f64 = 2e9;

#[derive(Serialize)]
struct Point {
    lambda: f64,
    mu: f64,
    alpha: f64,
    capacity: usize,
    #[serde(flatten)]
    measures: Measures,
    e_wa: f64,
}

#[derive(Serialize)]
struct CurvePoint {
    lambda: f64,
    e_na: Option<f64>,
    e_nb: Option<f64>,
    e_wa: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct Cdf {
    mean: f64,
    truncation: usize,
    t: Vec<f64>,
    f: Vec<f64>,
}

fn params(lambda: f64, mu: f64, alpha: f64, capacity: u32) -> Result<ModelParams, String> {
    ModelParams::new(lambda, mu, alpha, capacity as usize).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

/// Stationary measures and mean sojourn time at one parameter point.
pub fn solve_json(lambda: f64, mu: f64, alpha: f64, capacity: u32) -> Result<String, String> {
    let p = params(lambda, mu, alpha, capacity)?;
    let (measures, e_wa) = evaluate_point(&p, TOL, true).map_err(|e| e.to_string())?;
    to_json(&Point {
        lambda,
        mu,
        alpha,
        capacity: p.capacity,
        measures,
        e_wa: e_wa.unwrap_or(f64::NAN),
    })
}

/// Measures along a λ grid with the other parameters fixed.
pub fn lambda_curve_json(
    mu: f64,
    alpha: f64,
    capacity: u32,
    lambda_start: f64,
    lambda_end: f64,
    lambda_step: f64,
) -> Result<String, String> {
    let axis = Axis::range(Param::Lambda, lambda_start, lambda_end, lambda_step).map_err(|e| e.to_string())?;
    if axis.values.len() > 200 {
        return Err(format!("{} grid points requested, limit is 200", axis.values.len()));
    }
    let fixed = vec![(Param::Mu, mu), (Param::Alpha, alpha), (Param::Capacity, capacity as f64)];
    let mut spec = SweepSpec::new(vec![axis], fixed, true).map_err(|e| e.to_string())?;
    spec.tol = TOL;
    let rows: Vec<CurvePoint> = run_sweep(&spec).into_iter().map(curve_point).collect();
    to_json(&rows)
}

fn curve_point(row: SweepRow) -> CurvePoint {
    CurvePoint {
        lambda: row.lambda,
        e_na: row.measures.map(|m| m.e_na),
        e_nb: row.measures.map(|m| m.e_nb),
        e_wa: row.e_wa,
        error: row.error,
    }
}

/// Sojourn-time distribution function for a tip arriving in steady state.
pub fn sojourn_cdf_json(
    lambda: f64,
    mu: f64,
    alpha: f64,
    capacity: u32,
    t_max: f64,
    points: u32,
) -> Result<String, String> {
    let p = params(lambda, mu, alpha, capacity)?;
    if !(2..=2000).contains(&points) {
        return Err(format!("points must be in 2..=2000, got {points}"));
    }
    let st = qbd::stationary(&p, TOL).map_err(|e| e.to_string())?;
    let theta = sojourn::pasta_initial(&st, &p);
    let mean = sojourn::mean_sojourn_linear(&p, &theta, sojourn::SojournOptions::default())
        .map_err(|e| e.to_string())?;
    let work = sojourn::uniformization_work(&p, mean.truncation, t_max);
    if work > CDF_WORK_LIMIT {
        return Err(format!(
            "distribution needs about {work:.1e} operations at these parameters (limit {CDF_WORK_LIMIT:.0e}); \
             lower t max, M or the connection rate"
        ));
    }
    let grid = sojourn::uniform_grid(t_max, points as usize);
    let result = sojourn::sojourn_cdf(&p, &theta, &grid, mean.truncation).map_err(|e| e.to_string())?;
    let (t, f) = result.cdf.into_iter().unzip();
    to_json(&Cdf {
        mean: result.mean,
        truncation: result.truncation,
        t,
        f,
    })
}

#[wasm_bindgen]
pub fn solve(lambda: f64, mu: f64, alpha: f64, capacity: u32) -> Result<String, JsError> {
    solve_json(lambda, mu, alpha, capacity).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn lambda_curve(
    mu: f64,
    alpha: f64,
    capacity: u32,
    lambda_start: f64,
    lambda_end: f64,
    lambda_step: f64,
) -> Result<String, JsError> {
    lambda_curve_json(mu, alpha, capacity, lambda_start, lambda_end, lambda_step).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sojourn_cdf(lambda: f64, mu: f64, alpha: f64, capacity: u32, t_max: f64, points: u32) -> Result<String, JsError> {
    sojourn_cdf_json(lambda, mu, alpha, capacity, t_max, points).map_err(|e| JsError::new(&e))
}
