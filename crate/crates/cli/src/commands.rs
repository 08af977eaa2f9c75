use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use tangle_core::measures::{conservation_report, Measures};
use tangle_core::model::{ModelParams, TaggedState};
use tangle_core::qbd::{self, StationaryOptions, StationaryResult};
use tangle_core::sim::{self, SimConfig};
use tangle_core::sojourn::{self, InitialVector, SojournOptions};
use tangle_core::stats::Estimate;
use tangle_core::sweep::{self, Axis, Param, SweepRow, SweepSpec};

use crate::{CliError, ModelArgs};

type CliResult = Result<(), CliError>;

impl ModelArgs {
    pub fn params(&self) -> Result<ModelParams, CliError> {
        Ok(ModelParams::new(self.lambda, self.mu, self.alpha, self.capacity)?)
    }

    pub fn stationary(&self, params: &ModelParams) -> Result<StationaryResult, CliError> {
        Ok(qbd::stationary_with(
            params,
            StationaryOptions {
                tol: self.tol,
                max_level: self.max_level,
                initial_level: None,
            },
        )?)
    }

    fn sojourn_options(&self) -> SojournOptions {
        SojournOptions {
            max_level: self.max_level,
            ..SojournOptions::default()
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", path.display())))
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Also write the result as a one-row sweep CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn solve(args: &SolveArgs) -> CliResult {
    let params = args.model.params()?;
    let st = args.model.stationary(&params)?;
    let measures = Measures::compute(&st, &params);
    let report = conservation_report(&st, &params, None);

    let mut out = io::stdout().lock();
    writeln!(out, "E[N_A]             {}", measures.e_na)?;
    writeln!(out, "E[N_B]             {}", measures.e_nb)?;
    writeln!(out, "TH                 {}", measures.th)?;
    writeln!(out, "truncation level   {}", measures.trunc_level)?;
    writeln!(out, "tail mass          {:e}", measures.tail_mass)?;
    writeln!(out, "|TH - lambda|/lambda {:e}", report.relative_gap)?;

    if let Some(path) = &args.csv {
        let row = SweepRow {
            lambda: params.lambda,
            mu: params.mu,
            alpha: params.alpha,
            capacity: params.capacity as f64,
            measures: Some(measures),
            e_wa: None,
            error: None,
        };
        let mut file = create(path)?;
        sweep::write_csv(&[row], &mut file)?;
        file.flush()?;
    }
    Ok(())
}

/// Parses `pasta`, `fixed:I,J` (tag internal with `I` other internal tips and
/// `J` boundary tips) or `fixed-boundary:I,N` (tag on the boundary with `I`
/// internal tips and `N` other boundary tips).
fn parse_initial(text: &str, params: &ModelParams, st: &StationaryResult) -> Result<InitialVector, CliError> {
    if text == "pasta" {
        return Ok(sojourn::pasta_initial(st, params));
    }
    let pair = |rest: &str| -> Result<(usize, usize), CliError> {
        let (a, b) = rest
            .split_once(',')
            .ok_or_else(|| CliError::Usage(format!("expected two comma-separated integers in `{text}`")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("bad integer `{s}` in `{text}`")))
        };
        Ok((parse(a)?, parse(b)?))
    };
    let state = if let Some(rest) = text.strip_prefix("fixed-boundary:") {
        let (level, others) = pair(rest)?;
        TaggedState::Boundary { level, others }
    } else if let Some(rest) = text.strip_prefix("fixed:") {
        let (level, boundary) = pair(rest)?;
        TaggedState::Internal { level, boundary }
    } else {
        return Err(CliError::Usage(format!(
            "unknown initial distribution `{text}` (pasta, fixed:I,J or fixed-boundary:I,N)"
        )));
    };
    Ok(InitialVector::fixed(state, params.capacity)?)
}

/// `T_MAX:POINTS`, or `START:END:POINTS`. A two-field value whose first field
/// is zero reads as `0:T_MAX` with 101 points.
fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("bad --cdf-grid `{text}`"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let count = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let fields: Vec<&str> = text.split(':').collect();
    let (start, end, points) = match fields.as_slice() {
        [a, b] if num(a)? == 0.0 => (0.0, num(b)?, 101),
        [a, b] => (0.0, num(a)?, count(b)?),
        [a, b, c] => (num(a)?, num(b)?, count(c)?),
        _ => return Err(bad()),
    };
    if points < 2 || end.partial_cmp(&start) != Some(std::cmp::Ordering::Greater) {
        return Err(bad());
    }
    let mut grid: Vec<f64> = sojourn::uniform_grid(end - start, points)
        .into_iter()
        .map(|t| start + t)
        .collect();
    if start > 0.0 {
        grid.insert(0, 0.0);
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodArg {
    Linear,
    Rg,
    Both,
}

#[derive(Debug, Args)]
pub struct SojournArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Initial state of the tagged tip: pasta, fixed:I,J or fixed-boundary:I,N.
    #[arg(long, default_value = "pasta")]
    pub initial: String,
    /// Time grid of the distribution function, `T_MAX:POINTS`.
    #[arg(long)]
    pub cdf_grid: Option<String>,
    #[arg(long, value_enum, default_value_t = MethodArg::Linear)]
    pub method: MethodArg,
    /// Destination of the `t,F` CSV (stdout when omitted; the summary then
    /// goes to stderr).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn sojourn(args: &SojournArgs) -> CliResult {
    let params = args.model.params()?;
    let grid = args.cdf_grid.as_deref().map(parse_grid).transpose()?;
    let st = args.model.stationary(&params)?;
    let theta = parse_initial(&args.initial, &params, &st)?;
    let opts = args.model.sojourn_options();

    let linear = matches!(args.method, MethodArg::Linear | MethodArg::Both)
        .then(|| sojourn::mean_sojourn_linear(&params, &theta, opts))
        .transpose()?;
    let rg = matches!(args.method, MethodArg::Rg | MethodArg::Both)
        .then(|| sojourn::mean_sojourn_rg(&params, &theta, opts))
        .transpose()?;
    let primary = linear.as_ref().or(rg.as_ref()).expect("at least one method");

    let mut summary: Box<dyn Write> = if grid.is_some() && args.csv.is_none() {
        Box::new(io::stderr().lock())
    } else {
        Box::new(io::stdout().lock())
    };
    if let Some(r) = &linear {
        writeln!(summary, "E[W_A] (linear)    {}", r.mean)?;
    }
    if let Some(r) = &rg {
        writeln!(summary, "E[W_A] (rg)        {}", r.mean)?;
    }
    if let (Some(a), Some(b)) = (&linear, &rg) {
        writeln!(summary, "relative gap       {:e}", (a.mean - b.mean).abs() / a.mean)?;
    }
    writeln!(summary, "truncation level   {}", primary.truncation)?;
    if args.initial == "pasta" {
        let report = conservation_report(&st, &params, Some(primary.mean));
        writeln!(
            summary,
            "lambda*E[W_A]      {}  vs  E[N_A]+E[N_B] {}  (relative gap {:e})",
            report.little_lhs.expect("mean supplied"),
            report.little_rhs,
            report.little_gap().expect("mean supplied")
        )?;
    }
    drop(summary);

    if let Some(grid) = grid {
        let ph = sojourn::sojourn_cdf(&params, &theta, &grid, primary.truncation)?;
        let mut out: Box<dyn Write> = match &args.csv {
            Some(path) => Box::new(create(path)?),
            None => Box::new(io::stdout().lock()),
        };
        writeln!(out, "t,F")?;
        for (t, f) in &ph.cdf {
            writeln!(out, "{t},{f}")?;
        }
        out.flush()?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Built-in grid: fig4, fig5, fig6, fig7, fig8 or fig9.
    #[arg(long, conflicts_with = "vary")]
    pub preset: Option<String>,
    /// Swept parameter, `NAME=START:END:STEP` or `NAME=V1,V2,...`; repeatable,
    /// first one outermost.
    #[arg(long)]
    pub vary: Vec<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Also compute E[W_A] under stationary arrivals.
    #[arg(long)]
    pub sojourn: bool,
    #[arg(long, default_value_t = qbd::DEFAULT_TOL)]
    pub tol: f64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn sweep_spec(args: &SweepArgs) -> Result<SweepSpec, CliError> {
    let fixed_flags = [
        (Param::Lambda, args.lambda),
        (Param::Mu, args.mu),
        (Param::Alpha, args.alpha),
        (Param::Capacity, args.capacity.map(|m| m as f64)),
    ];
    let mut spec = if let Some(name) = &args.preset {
        if fixed_flags.iter().any(|(_, v)| v.is_some()) {
            return Err(CliError::Usage("parameter flags cannot be combined with --preset".into()));
        }
        SweepSpec::preset(name)?
    } else {
        let axes = args
            .vary
            .iter()
            .map(|text| {
                let (name, range) = text
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("expected NAME=RANGE, got `{text}`")))?;
                Ok(Axis::parse(name.parse()?, range)?)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let fixed = fixed_flags
            .iter()
            .filter_map(|&(p, v)| v.map(|v| (p, v)))
            .collect();
        SweepSpec::new(axes, fixed, false)?
    };
    spec.with_sojourn |= args.sojourn;
    spec.tol = args.tol;
    Ok(spec)
}

pub fn sweep(args: &SweepArgs) -> CliResult {
    let spec = sweep_spec(args)?;
    let rows = sweep::run_sweep(&spec);
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(io::stdout().lock()),
    };
    sweep::write_csv(&rows, &mut out)?;
    out.flush()?;
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        eprintln!("warning: {failures} grid point(s) failed; see the error column");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Simulated time per replication.
    #[arg(long)]
    pub horizon: f64,
    /// Initial period excluded from the averages.
    #[arg(long, default_value_t = 1e3)]
    pub warmup: f64,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Total number of tagged arrivals to follow, split evenly over the
    /// replications.
    #[arg(long)]
    pub tagged: Option<usize>,
    /// Probability of tagging each arrival after the warmup (default: spread
    /// the tags over the whole run).
    #[arg(long)]
    pub tag_prob: Option<f64>,
    /// Write the event trace of the first replication as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Compare with the analytic values and report z-scores.
    #[arg(long)]
    pub compare: bool,
}

fn estimate_line(out: &mut impl Write, name: &str, est: &Estimate, analytic: Option<f64>) -> io::Result<()> {
    write!(out, "{name:<8} {:>14.6} ± {:<12.6e}", est.mean, est.std_error)?;
    match analytic {
        Some(value) => writeln!(out, " analytic {value:.6}  z {:+.3}", est.z_score(value)),
        None => writeln!(out),
    }
}

pub fn simulate(args: &SimulateArgs) -> CliResult {
    let params = args.model.params()?;
    let mut config = SimConfig::new(params, args.horizon, args.warmup, args.reps, args.seed);
    config.tag_probability = args.tag_prob;
    if let Some(total) = args.tagged {
        config.tagged_count = total.div_ceil(args.reps.max(1));
    }
    config.validate()?;

    let result = if config.tagged_count > 0 {
        sim::simulate_tagged(&config)?
    } else {
        sim::simulate(&config)?
    };

    let (analytic, mean_wait) = if args.compare {
        let st = args.model.stationary(&params)?;
        let measures = Measures::compute(&st, &params);
        let wait = if config.tagged_count > 0 {
            let theta = sojourn::pasta_initial(&st, &params);
            Some(sojourn::mean_sojourn_linear(&params, &theta, args.model.sojourn_options())?.mean)
        } else {
            None
        };
        (Some(measures), wait)
    } else {
        (None, None)
    };

    let mut out = io::stdout().lock();
    writeln!(
        out,
        "replications {}  horizon {}  warmup {}  seed {}",
        args.reps, args.horizon, args.warmup, args.seed
    )?;
    estimate_line(&mut out, "E[N_A]", &result.mean_internal, analytic.map(|m| m.e_na))?;
    estimate_line(&mut out, "E[N_B]", &result.mean_boundary, analytic.map(|m| m.e_nb))?;
    estimate_line(&mut out, "TH", &result.th_estimate, analytic.map(|m| m.th))?;
    if let Some(est) = result.sojourn_estimate() {
        estimate_line(&mut out, "E[W_A]", &est, mean_wait)?;
        let (lo, hi) = est.confidence_interval(0.99);
        writeln!(
            out,
            "tagged tips {}  99% CI [{lo:.6}, {hi:.6}] (from {} replication means)",
            result.sojourn_samples.len(),
            est.n
        )?;
    }
    let counts = result.event_counts;
    writeln!(
        out,
        "events: {} arrivals, {} connections, {} impatience",
        counts.arrivals, counts.connections, counts.impatience
    )?;

    if let Some(path) = &args.trace {
        let mut file = create(path)?;
        sim::write_trace(&config, 0, &mut file)?;
        file.flush()?;
    }
    Ok(())
}
