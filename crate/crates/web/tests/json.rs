use serde_json::Value;
use tangle_web::{lambda_curve_json, sojourn_cdf_json, solve_json};

#[test]
fn solve_reports_littles_law_consistent_point() {
    let v: Value = serde_json::from_str(&solve_json(2.0, 1.0, 0.5, 5).unwrap()).unwrap();
    let lhs = v["e_na"].as_f64().unwrap() + v["e_nb"].as_f64().unwrap();
    let rhs = 2.0 * v["e_wa"].as_f64().unwrap();
    assert!((lhs - rhs).abs() < 1e-8 * rhs);
    assert!((v["th"].as_f64().unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn curve_has_one_row_per_grid_value() {
    let v: Value = serde_json::from_str(&lambda_curve_json(1.0, 0.5, 5, 1.0, 3.0, 0.5).unwrap()).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r["error"].is_null() && r["e_wa"].as_f64().unwrap() > 0.0));
}

#[test]
fn cdf_is_monotone_from_zero() {
    let v: Value = serde_json::from_str(&sojourn_cdf_json(2.0, 1.0, 0.5, 5, 20.0, 50).unwrap()).unwrap();
    let f: Vec<f64> = v["f"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(f.len(), 50);
    assert_eq!(f[0], 0.0);
    assert!(f.windows(2).all(|w| w[0] <= w[1]));
    assert!(f[49] > 0.99);
}

#[test]
fn bad_input_is_an_error_message() {
    assert!(solve_json(-1.0, 1.0, 0.5, 5).is_err());
    assert!(solve_json(2.0, 1.0, 0.5, 1).is_err());
    assert!(sojourn_cdf_json(2.0, 1.0, 0.5, 5, 10.0, 1).is_err());
}

#[test]
fn oversized_distribution_request_is_refused() {
    let err = sojourn_cdf_json(20.0, 4.0, 0.45, 50, 10.0, 11).unwrap_err();
    assert!(err.contains("operations"), "{err}");
}
