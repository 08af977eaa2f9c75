//! Parameter sweeps over the analytic pipeline, including the preset grids of
//! the published experiments, and their CSV rendering.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::Measures;
use crate::model::ModelParams;
use crate::qbd::{self, StationaryOptions};
use crate::sojourn::{self, SojournOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Param {
    Lambda,
    Mu,
    Alpha,
    Capacity,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::Lambda, Param::Mu, Param::Alpha, Param::Capacity];
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Param::Lambda => "lambda",
            Param::Mu => "mu",
            Param::Alpha => "alpha",
            Param::Capacity => "capacity",
        })
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Param::Lambda),
            "mu" => Ok(Param::Mu),
            "alpha" => Ok(Param::Alpha),
            "capacity" | "M" | "m" => Ok(Param::Capacity),
            other => Err(Error::InvalidConfig(format!("unknown parameter `{other}`"))),
        }
    }
}

/// One swept parameter and its values, in order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Axis {
    pub param: Param,
    pub values: Vec<f64>,
}

impl Axis {
    /// Inclusive range `start, start+step, ..., <= end`.
    pub fn range(param: Param, start: f64, end: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidConfig(format!("step {step} must be positive")));
        }
        if !(start.is_finite() && end.is_finite()) || end < start {
            return Err(Error::InvalidConfig(format!("empty range {start}..={end}")));
        }
        let count = ((end - start) / step + 1e-9).floor() as usize + 1;
        let values = (0..count).map(|i| start + step * i as f64).collect();
        Ok(Self { param, values })
    }

    pub fn list(param: Param, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig(format!("no values for {param}")));
        }
        Ok(Self { param, values })
    }

    /// Parses `start:end:step` or a comma-separated list.
    pub fn parse(param: Param, text: &str) -> Result<Self> {
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad number `{s}` for {param}")))
        };
        let parts: Vec<&str> = text.split(':').collect();
        match parts.as_slice() {
            [start, end, step] => Self::range(param, num(start)?, num(end)?, num(step)?),
            [_] => Self::list(param, text.split(',').map(num).collect::<Result<_>>()?),
            _ => Err(Error::InvalidConfig(format!("bad range `{text}`"))),
        }
    }
}

/// A sweep grid: the cartesian product of `axes` (first axis outermost) with
/// the remaining parameters held at `fixed`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub axes: Vec<Axis>,
    pub fixed: Vec<(Param, f64)>,
    /// Also compute the mean sojourn time under stationary arrivals.
    pub with_sojourn: bool,
    pub tol: f64,
}

impl SweepSpec {
    pub fn new(axes: Vec<Axis>, fixed: Vec<(Param, f64)>, with_sojourn: bool) -> Result<Self> {
        let spec = Self {
            axes,
            fixed,
            with_sojourn,
            tol: qbd::DEFAULT_TOL,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for param in Param::ALL {
            let count = self.axes.iter().filter(|a| a.param == param).count()
                + self.fixed.iter().filter(|(p, _)| *p == param).count();
            if count != 1 {
                return Err(Error::InvalidConfig(format!(
                    "parameter {param} must be given exactly once (found {count})"
                )));
            }
        }
        if self.axes.iter().any(|a| a.values.is_empty()) {
            return Err(Error::InvalidConfig("empty sweep axis".into()));
        }
        Ok(())
    }

    /// Grid points in output order.
    pub fn points(&self) -> Vec<[f64; 4]> {
        let mut base = [0.0; 4];
        for &(p, v) in &self.fixed {
            base[p as usize] = v;
        }
        let mut points = vec![base];
        for axis in &self.axes {
            points = points
                .into_iter()
                .flat_map(|pt| {
                    axis.values.iter().map(move |&v| {
                        let mut next = pt;
                        next[axis.param as usize] = v;
                        next
                    })
                })
                .collect();
        }
        points
    }

    /// Built-in grids: `fig4`..`fig9`.
    pub fn preset(name: &str) -> Result<Self> {
        use Param::*;
        let lambda_grid = || Axis::range(Lambda, 20.0, 40.0, 2.0);
        let list = |p, v: &[f64]| Axis::list(p, v.to_vec());
        match name {
            "fig4" | "fig5" => Self::new(
                vec![list(Mu, &[3.5, 4.0, 5.0])?, lambda_grid()?],
                vec![(Alpha, 0.45), (Capacity, 100.0)],
                false,
            ),
            "fig6" => Self::new(
                vec![list(Mu, &[2.0, 2.5, 3.0])?, lambda_grid()?],
                vec![(Alpha, 0.45), (Capacity, 100.0)],
                false,
            ),
            "fig7" => Self::new(
                vec![list(Alpha, &[0.3, 0.4, 0.5])?, Axis::range(Mu, 2.0, 9.0, 0.5)?],
                vec![(Lambda, 30.0), (Capacity, 50.0)],
                true,
            ),
            "fig8" => Self::new(
                vec![list(Alpha, &[0.3, 0.35, 0.4])?, lambda_grid()?],
                vec![(Mu, 5.0), (Capacity, 50.0)],
                true,
            ),
            "fig9" => Self::new(
                vec![list(Mu, &[3.5, 4.0, 5.0])?, lambda_grid()?],
                vec![(Alpha, 0.3), (Capacity, 50.0)],
                true,
            ),
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub mu: f64,
    pub alpha: f64,
    pub capacity: f64,
    pub measures: Option<Measures>,
    pub e_wa: Option<f64>,
    pub error: Option<String>,
}

/// Stationary measures (and optionally the PASTA sojourn mean) at one point.
pub fn evaluate_point(params: &ModelParams, tol: f64, with_sojourn: bool) -> Result<(Measures, Option<f64>)> {
    let st = qbd::stationary_with(
        params,
        StationaryOptions {
            tol,
            ..Default::default()
        },
    )?;
    let measures = Measures::compute(&st, params);
    let e_wa = if with_sojourn {
        let theta = sojourn::pasta_initial(&st, params);
        Some(sojourn::mean_sojourn_rg(params, &theta, SojournOptions::default())?.mean)
    } else {
        None
    };
    Ok((measures, e_wa))
}

fn run_point(point: [f64; 4], spec: &SweepSpec) -> SweepRow {
    let [lambda, mu, alpha, capacity] = point;
    let outcome = if capacity.fract() != 0.0 || capacity < 0.0 {
        Err(Error::InvalidConfig(format!("capacity {capacity} is not a whole number")))
    } else {
        ModelParams::new(lambda, mu, alpha, capacity as usize)
            .and_then(|params| evaluate_point(&params, spec.tol, spec.with_sojourn))
    };
    let (measures, e_wa, error) = match outcome {
        Ok((m, w)) => (Some(m), w, None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    SweepRow {
        lambda,
        mu,
        alpha,
        capacity,
        measures,
        e_wa,
        error,
    }
}

/// Evaluates every grid point; rows come back in grid order.
pub fn run_sweep(spec: &SweepSpec) -> Vec<SweepRow> {
    let points = spec.points();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        points.into_par_iter().map(|p| run_point(p, spec)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        points.into_iter().map(|p| run_point(p, spec)).collect()
    }
}

pub const CSV_HEADER: &str = "lambda,mu,alpha,M,E_NA,E_NB,TH,E_WA,trunc_level,tail_mass,error";

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Shortest round-trip decimal form, switching to exponent notation for very
/// large or small magnitudes.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Writes rows as CSV.
pub fn write_csv(rows: &[SweepRow], out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    for row in rows {
        let m = row.measures.as_ref();
        let fields = [
            fmt_f64(row.lambda),
            fmt_f64(row.mu),
            fmt_f64(row.alpha),
            if row.capacity.fract() == 0.0 && row.capacity >= 0.0 {
                (row.capacity as usize).to_string()
            } else {
                fmt_f64(row.capacity)
            },
            opt(m.map(|m| m.e_na)),
            opt(m.map(|m| m.e_nb)),
            opt(m.map(|m| m.th)),
            opt(row.e_wa),
            m.map(|m| m.trunc_level.to_string()).unwrap_or_default(),
            opt(m.map(|m| m.tail_mass)),
            row.error.as_deref().map(quote).unwrap_or_default(),
        ];
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_is_inclusive() {
        let a = Axis::range(Param::Lambda, 20.0, 40.0, 2.0).unwrap();
        assert_eq!(a.values.len(), 11);
        assert_eq!(*a.values.last().unwrap(), 40.0);
        let mu = Axis::parse(Param::Mu, "2:9:0.5").unwrap();
        assert_eq!(mu.values.len(), 15);
        assert!(Axis::range(Param::Mu, 3.0, 2.0, 1.0).is_err());
        assert!(Axis::range(Param::Mu, 1.0, 2.0, 0.0).is_err());
        assert_eq!(Axis::parse(Param::Mu, "3.5,4,5").unwrap().values, vec![3.5, 4.0, 5.0]);
    }

    #[test]
    fn spec_must_cover_each_parameter_once() {
        let axis = Axis::list(Param::Lambda, vec![1.0]).unwrap();
        assert!(SweepSpec::new(vec![axis.clone()], vec![(Param::Mu, 1.0), (Param::Alpha, 1.0)], false).is_err());
        assert!(SweepSpec::new(
            vec![axis.clone()],
            vec![(Param::Lambda, 1.0), (Param::Mu, 1.0), (Param::Alpha, 1.0), (Param::Capacity, 3.0)],
            false
        )
        .is_err());
        assert!(SweepSpec::new(
            vec![axis],
            vec![(Param::Mu, 1.0), (Param::Alpha, 1.0), (Param::Capacity, 3.0)],
            false
        )
        .is_ok());
    }

    #[test]
    fn presets_have_expected_shape() {
        let fig4 = SweepSpec::preset("fig4").unwrap();
        let pts = fig4.points();
        assert_eq!(pts.len(), 33);
        assert_eq!(pts[0], [20.0, 3.5, 0.45, 100.0]);
        assert_eq!(pts[1], [22.0, 3.5, 0.45, 100.0]);
        assert_eq!(SweepSpec::preset("fig7").unwrap().points().len(), 45);
        assert!(SweepSpec::preset("fig10").is_err());
    }

    #[test]
    fn single_point_sweep_csv() {
        let spec = SweepSpec::new(
            vec![Axis::list(Param::Lambda, vec![2.0]).unwrap()],
            vec![(Param::Mu, 1.0), (Param::Alpha, 0.5), (Param::Capacity, 5.0)],
            true,
        )
        .unwrap();
        let rows = run_sweep(&spec);
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 11);
        let th: f64 = fields[6].parse().unwrap();
        assert!((th - 2.0).abs() < 1e-4);
        assert!(fields[7].parse::<f64>().unwrap() > 0.0);
        assert_eq!(fields[10], "");
    }

    #[test]
    fn failing_point_is_recorded() {
        let spec = SweepSpec::new(
            vec![Axis::list(Param::Capacity, vec![1.0, 3.0]).unwrap()],
            vec![(Param::Mu, 1.0), (Param::Alpha, 0.5), (Param::Lambda, 1.0)],
            false,
        )
        .unwrap();
        let rows = run_sweep(&spec);
        assert!(rows[0].error.as_deref().unwrap().contains("capacity"));
        assert!(rows[1].error.is_none());
    }
}
