//! `schedlaw`: loss bounds, schedule qualification, and scaling fits from
//! the command line.
//!
//! Every command writes a JSON report embedding the resolved configuration
//! and tool version. With `--format csv` or `--format svg` the trace goes to
//! `--out` (or stdout) and, when `--out` is given, the report is written
//! next to it with a `.json` extension.

mod report;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use schedlaw::bound::ClosedForm;
use schedlaw::io;
use schedlaw::scaling::DEFAULT_T_MIN;
use schedlaw::sim::{self, Iterate, SweepConfig};
use schedlaw::*;

use report::{Artifacts, CliError, Format};
use svg::{Plot, Scale, Series};

#[derive(Parser)]
#[command(
    name = "schedlaw",
    version,
    about = "Convex loss bounds and scaling laws for learning-rate schedules"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output path. Defaults to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the loss bound of a schedule over a grid of steps.
    Bound(BoundArgs),
    /// Run the qualifying exam on a schedule shape.
    Qualify(QualifyArgs),
    /// Fit a loss trace onto the bound and score the held-out tail.
    Fit(FitArgs),
    /// Fit final losses against 1/sqrt(T) for each eta_ref.
    Scale(ScaleArgs),
    /// Run seeded SGD on a convex problem with known constants.
    Simulate(SimulateArgs),
    /// Predict final losses (and optionally transferred peak rates) at new horizons.
    Predict(PredictArgs),
}

#[derive(Args)]
struct ScheduleArgs {
    /// Schedule as inline JSON or a path to a JSON file.
    #[arg(long, conflicts_with = "kind")]
    schedule: Option<String>,

    /// Schedule family, as an alternative to --schedule.
    #[arg(long)]
    kind: Option<String>,

    #[arg(long)]
    eta_peak: Option<f64>,

    /// Horizon in steps.
    #[arg(long = "T")]
    horizon: Option<u64>,

    /// Stable fraction of a warmup-stable-decay schedule.
    #[arg(long)]
    c: Option<f64>,

    #[arg(long)]
    cycles: Option<u32>,

    #[arg(long)]
    warmup_frac: Option<f64>,
}

impl ScheduleArgs {
    /// The schedule from `--schedule` or `--kind`, with any explicit
    /// overrides applied. Missing peak rate and horizon fall back to the
    /// given defaults.
    fn resolve(&self, eta_default: Option<f64>, t_default: Option<u64>) -> Result<Option<ScheduleSpec>, CliError> {
        let mut spec = match (&self.schedule, &self.kind) {
            (Some(arg), _) => io::read_schedule(arg)?,
            (None, Some(kind)) => {
                let kind = ScheduleKind::from_str(kind)?;
                let horizon = self
                    .horizon
                    .or(t_default)
                    .ok_or_else(|| CliError::Usage("--kind needs --T".into()))?;
                let eta = self
                    .eta_peak
                    .or(eta_default)
                    .ok_or_else(|| CliError::Usage("--kind needs --eta-peak".into()))?;
                ScheduleSpec::new(kind, eta, horizon)
            }
            (None, None) => return Ok(None),
        };
        if let Some(eta) = self.eta_peak {
            spec.eta_peak = eta;
        }
        if let Some(t) = self.horizon {
            spec.horizon = t;
        }
        if self.c.is_some() {
            spec.wsd_c = self.c;
        }
        if self.cycles.is_some() {
            spec.cycles = self.cycles;
        }
        if let Some(w) = self.warmup_frac {
            spec.warmup_frac = w;
        }
        spec.validate()?;
        Ok(Some(spec))
    }

    fn require(&self, eta_default: Option<f64>, t_default: Option<u64>) -> Result<ScheduleSpec, CliError> {
        self.resolve(eta_default, t_default)?
            .ok_or_else(|| CliError::Usage("a schedule is required: pass --schedule or --kind".into()))
    }
}

#[derive(Args)]
struct CoefficientArgs {
    #[arg(long = "D", default_value_t = 1.0)]
    d: f64,

    #[arg(long = "G", default_value_t = 1.0)]
    g: f64,

    #[arg(long = "L-star", default_value_t = 0.0)]
    l_star: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum IterateArg {
    Last,
    Averaged,
}

#[derive(Args)]
struct BoundArgs {
    #[command(flatten)]
    schedule: ScheduleArgs,

    #[command(flatten)]
    coeffs: CoefficientArgs,

    /// `all`, `log:N`, or a comma-separated list of steps.
    #[arg(long, default_value = "log:1000")]
    grid: String,

    #[arg(long, value_enum, default_value_t = IterateArg::Last)]
    iterate: IterateArg,

    /// Also report the bound-minimizing peak rate for this schedule shape.
    #[arg(long)]
    optimize: bool,
}

#[derive(Args)]
struct QualifyArgs {
    #[command(flatten)]
    schedule: ScheduleArgs,

    #[arg(long = "D")]
    d: Option<f64>,

    #[arg(long = "G")]
    g: Option<f64>,

    /// Comma-separated horizons, geometrically spaced.
    #[arg(long = "T-grid", value_delimiter = ',')]
    t_grid: Option<Vec<u64>>,

    #[arg(long)]
    delta: Option<f64>,

    #[arg(long)]
    log_frac: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// CSV with columns `step,loss[,lr]`.
    #[arg(long)]
    trace: PathBuf,

    /// Learning rates for traces without an `lr` column.
    #[command(flatten)]
    schedule: ScheduleArgs,

    /// Fraction of the horizon used for fitting; the rest is held out.
    #[arg(long, default_value_t = 0.5)]
    split: f64,

    /// Moving-average window. Defaults to max(1, rows / 200).
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
struct ScaleArgs {
    /// CSV with columns `eta_ref,T_or_tokens,unit,final_loss[,batch_size][,model_size]`.
    #[arg(long)]
    records: PathBuf,

    /// Runs with a shorter horizon are left out of the fit.
    #[arg(long = "t-min", default_value_t = DEFAULT_T_MIN)]
    t_min: f64,

    /// Fit Q(eta_ref) and use its analytic minimum instead of the grid argmin.
    #[arg(long)]
    interpolate: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Sweep configuration JSON (inline or path). Replaces the single-run flags.
    #[arg(long)]
    sweep: Option<String>,

    #[command(flatten)]
    schedule: ScheduleArgs,

    /// `l1_distance`, `huber_quadratic`, or `piecewise_linear_max`.
    #[arg(long, default_value = "l1_distance")]
    problem: String,

    #[arg(long, default_value_t = 10)]
    dim: usize,

    #[arg(long = "D", default_value_t = 1.0)]
    d: f64,

    #[arg(long = "G", default_value_t = 1.0)]
    g: f64,

    /// Radius of the gradient noise ball; must be below G.
    #[arg(long, default_value_t = 0.3)]
    noise: f64,

    /// Seed for the problem instance.
    #[arg(long, default_value_t = 0)]
    problem_seed: u64,

    /// Number of SGD seeds, `0..seeds`.
    #[arg(long)]
    seeds: Option<u64>,

    #[arg(long, default_value = "log:200")]
    grid: String,

    /// Which iterate the CSV trace reports.
    #[arg(long, value_enum, default_value_t = IterateArg::Last)]
    iterate: IterateArg,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    records: PathBuf,

    #[arg(long = "t-min", default_value_t = DEFAULT_T_MIN)]
    t_min: f64,

    #[arg(long)]
    interpolate: bool,

    /// Comma-separated target horizons, in the records' unit.
    #[arg(long = "T", value_delimiter = ',', required = true)]
    horizons: Vec<f64>,

    /// Peak rate tuned at --from-T, transferred to every target horizon.
    #[arg(long, requires = "from_t")]
    eta_peak: Option<f64>,

    #[arg(long = "from-T")]
    from_t: Option<f64>,
}

fn bound(args: &BoundArgs) -> Result<Artifacts, CliError> {
    let spec = args.schedule.require(None, None)?;
    let coeffs = BoundCoefficients::new(args.coeffs.l_star, args.coeffs.d, args.coeffs.g)?;
    let lrs = spec.eval_discrete()?;
    let grid = TauGrid::from_str(&args.grid)?.resolve(lrs.len())?;
    let kind = match args.iterate {
        IterateArg::Last => BoundKind::LastIterate,
        IterateArg::Averaged => BoundKind::AveragedIterate,
    };
    let trace = bound_trace(&coeffs, &lrs, &grid, kind)?;

    let closed = match ClosedForm::from_spec(&spec) {
        Ok(form) if spec.horizon >= 2 => Some(json!({
            "formula": form.formula(),
            "bound_at_eta_peak": form.bound(&coeffs, spec.eta_peak, spec.horizon_f64())?,
        })),
        _ => None,
    };
    let optimum = if args.optimize {
        Some(optimal_peak_lr(&spec, &coeffs)?)
    } else {
        None
    };

    let plot = Plot {
        title: format!("{} bound, {}", spec.kind, args.grid),
        x_label: "step".into(),
        y_label: "bound".into(),
        x_scale: Scale::Log,
        y_scale: Scale::Log,
        series: vec![Series {
            label: spec.kind.to_string(),
            points: trace
                .tau_grid
                .iter()
                .map(|&t| t as f64)
                .zip(trace.values.iter().copied())
                .collect(),
        }],
    };
    let mut csv = Vec::new();
    io::write_bound_trace(&mut csv, &trace)?;
    Ok(Artifacts {
        command: "bound",
        config: json!({
            "schedule": spec,
            "coefficients": coeffs,
            "grid": args.grid,
            "iterate": kind,
            "optimize": args.optimize,
        }),
        result: json!({
            "final_bound": trace.values.last(),
            "closed_form": closed,
            "optimum": optimum,
            "trace": trace,
        }),
        csv: Some(csv),
        svg: Some(plot),
    })
}

fn qualify_cmd(args: &QualifyArgs) -> Result<Artifacts, CliError> {
    let spec = args.schedule.require(Some(1.0), Some(10))?;
    let mut config = ExamConfig::default();
    if let Some(d) = args.d {
        config.d = d;
    }
    if let Some(g) = args.g {
        config.g = g;
    }
    if let Some(grid) = &args.t_grid {
        config.t_grid = grid.clone();
    }
    if let Some(delta) = args.delta {
        config.delta = delta;
    }
    if let Some(f) = args.log_frac {
        config.log_frac = f;
    }
    let report = qualify(&spec, &config)?;

    let points: Vec<(f64, f64)> = report
        .t_grid
        .iter()
        .map(|&t| t as f64)
        .zip(report.values.iter().copied())
        .collect();
    let mut csv = String::from("T,value\n");
    for (t, v) in &points {
        csv.push_str(&format!("{t},{v}\n"));
    }
    let plot = Plot {
        title: format!("exam for {}: {:?}", spec.kind, report.verdict),
        x_label: "T".into(),
        y_label: "exam value".into(),
        x_scale: Scale::Log,
        y_scale: Scale::Log,
        series: vec![Series {
            label: spec.kind.to_string(),
            points,
        }],
    };
    Ok(Artifacts {
        command: "qualify",
        config: json!({ "schedule": spec, "exam": config }),
        result: serde_json::to_value(&report)?,
        csv: Some(csv.into_bytes()),
        svg: Some(plot),
    })
}

fn fit(args: &FitArgs) -> Result<Artifacts, CliError> {
    let mut trace = io::read_loss_trace(std::fs::File::open(&args.trace)?)?;
    if let Some(w) = args.window {
        trace = trace.with_smoothing(w)?;
    }
    let spec = args.schedule.resolve(None, None)?;
    let lrs = spec.as_ref().map(ScheduleSpec::eval_discrete).transpose()?;
    let report = fit_predict(&trace, lrs.as_ref(), args.split)?;

    let predictions: Vec<f64> = trace.losses.iter().zip(&report.residuals).map(|(l, r)| l - r).collect();
    let mut csv = String::from("step,loss,prediction\n");
    for ((s, l), p) in trace.steps.iter().zip(&trace.losses).zip(&predictions) {
        csv.push_str(&format!("{s},{l},{p}\n"));
    }
    let steps: Vec<f64> = trace.steps.iter().map(|&s| s as f64).collect();
    let plot = Plot {
        title: format!("fit on {} of {} rows", report.n_fit, trace.len()),
        x_label: "step".into(),
        y_label: "loss".into(),
        x_scale: Scale::Linear,
        y_scale: Scale::Linear,
        series: vec![
            Series {
                label: "observed".into(),
                points: steps.iter().copied().zip(trace.losses.iter().copied()).collect(),
            },
            Series {
                label: "fitted bound".into(),
                points: steps.iter().copied().zip(predictions).collect(),
            },
        ],
    };
    Ok(Artifacts {
        command: "fit",
        config: json!({
            "trace": args.trace,
            "schedule": spec,
            "split": args.split,
            "smoothing_window": trace.smoothing_window,
        }),
        result: serde_json::to_value(&report)?,
        csv: Some(csv.into_bytes()),
        svg: Some(plot),
    })
}

type Group = (Option<f64>, Vec<(f64, f64)>);

fn records_plot(title: String, records: &[RunRecord]) -> Plot {
    let mut groups: Vec<Group> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|g| g.0 == r.eta_ref) {
            Some(g) => g.1.push((r.horizon, r.final_loss)),
            None => groups.push((r.eta_ref, vec![(r.horizon, r.final_loss)])),
        }
    }
    Plot {
        title,
        x_label: "T".into(),
        y_label: "final loss".into(),
        x_scale: Scale::Log,
        y_scale: Scale::Linear,
        series: groups
            .into_iter()
            .map(|(eta, mut points)| {
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series {
                    label: eta.map_or("all runs".into(), |e| format!("eta_ref = {e}")),
                    points,
                }
            })
            .collect(),
    }
}

fn scale(args: &ScaleArgs) -> Result<Artifacts, CliError> {
    let records = io::read_records(std::fs::File::open(&args.records)?)?;
    let fit = fit_scaling(&records, args.t_min, args.interpolate)?;
    let mut csv = String::from("eta_ref,L_inf,Q,r2,points_used,points_excluded\n");
    for g in &fit.per_eta_ref {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            g.eta_ref.map(|e| e.to_string()).unwrap_or_default(),
            g.line.l_inf,
            g.line.q,
            g.line.r2,
            g.line.points_used,
            g.line.points_excluded
        ));
    }
    Ok(Artifacts {
        command: "scale",
        config: json!({
            "records": args.records,
            "T_min_cutoff": args.t_min,
            "interpolate": args.interpolate,
        }),
        result: serde_json::to_value(&fit)?,
        csv: Some(csv.into_bytes()),
        svg: Some(records_plot("final loss by horizon".into(), &records)),
    })
}

fn simulate(args: &SimulateArgs) -> Result<Artifacts, CliError> {
    if let Some(arg) = &args.sweep {
        let text = if arg.trim_start().starts_with('{') {
            arg.clone()
        } else {
            std::fs::read_to_string(arg)?
        };
        let mut config: SweepConfig = serde_json::from_str(&text)?;
        if let Some(s) = args.seeds {
            config.seeds = s;
        }
        let records = sim::run_sweep(&config)?;
        let mut csv = Vec::new();
        io::write_records(&mut csv, &records)?;
        return Ok(Artifacts {
            command: "simulate",
            config: json!({ "sweep": config }),
            result: json!({ "records": records }),
            csv: Some(csv),
            svg: Some(records_plot("simulated final loss".into(), &records)),
        });
    }

    let spec = args.schedule.require(None, None)?;
    let kind: ProblemKind = serde_json::from_value(json!(args.problem))
        .map_err(|_| CliError::Usage(format!("unknown problem `{}`", args.problem)))?;
    let problem = make_problem(kind, args.dim, args.d, args.g, args.noise, args.problem_seed)?;
    let lrs = spec.eval_discrete()?;
    let grid = TauGrid::from_str(&args.grid)?.resolve(lrs.len())?;
    let seeds: Vec<u64> = (0..args.seeds.unwrap_or(20)).collect();
    let runs = sim::run_seeds(&problem, lrs.as_slice(), &seeds, &grid)?;
    let clipped: u64 = runs.iter().map(|r| r.clipped_steps).sum();
    let mc = sim::monte_carlo(&problem, lrs.as_slice(), &seeds, &grid)?;

    let iterate = match args.iterate {
        IterateArg::Last => Iterate::Last,
        IterateArg::Averaged => Iterate::Averaged,
    };
    let mean = match iterate {
        Iterate::Last => mc.last_mean.clone(),
        Iterate::Averaged => mc.averaged_mean.clone(),
    };
    let lr_column = (grid.len() == lrs.len()).then(|| lrs.as_slice().to_vec());
    let trace = LossTrace::new(mc.steps.clone(), mean, lr_column)?;
    let mut csv = Vec::new();
    io::write_loss_trace(&mut csv, &trace)?;

    let steps: Vec<f64> = mc.steps.iter().map(|&s| s as f64).collect();
    let plot = Plot {
        title: format!("{} over {} seeds", spec.kind, seeds.len()),
        x_label: "step".into(),
        y_label: "mean loss".into(),
        x_scale: Scale::Log,
        y_scale: Scale::Log,
        series: vec![
            Series {
                label: "last iterate".into(),
                points: steps.iter().copied().zip(mc.last_mean.iter().copied()).collect(),
            },
            Series {
                label: "averaged iterate".into(),
                points: steps.iter().copied().zip(mc.averaged_mean.iter().copied()).collect(),
            },
        ],
    };
    Ok(Artifacts {
        command: "simulate",
        config: json!({
            "schedule": spec,
            "problem": {
                "kind": kind,
                "d": args.dim,
                "D": args.d,
                "G": args.g,
                "noise_scale": args.noise,
                "seed": args.problem_seed,
            },
            "seeds": seeds.len(),
            "grid": args.grid,
            "iterate": iterate,
        }),
        result: json!({
            "D_true": problem.d_true(),
            "G_true": problem.g_true,
            "L_star": problem.l_star,
            "clipped_steps": clipped,
            "monte_carlo": mc,
        }),
        csv: Some(csv),
        svg: Some(plot),
    })
}

fn predict(args: &PredictArgs) -> Result<Artifacts, CliError> {
    let records = io::read_records(std::fs::File::open(&args.records)?)?;
    let fit = fit_scaling(&records, args.t_min, args.interpolate)?;
    let mut rows = Vec::with_capacity(args.horizons.len());
    let mut predictions = Vec::with_capacity(args.horizons.len());
    for &t in &args.horizons {
        let loss = predict_loss(&fit, t)?;
        let transfer = match (args.eta_peak, args.from_t) {
            (Some(eta), Some(from)) => Some(transfer_lr(eta, from, t)?),
            _ => None,
        };
        rows.push((t, loss));
        predictions.push(json!({ "T": t, "predicted_loss": loss, "transfer": transfer }));
    }
    let mut csv = Vec::new();
    io::write_prediction(&mut csv, &rows)?;
    let plot = Plot {
        title: "predicted final loss".into(),
        x_label: "T".into(),
        y_label: "loss".into(),
        x_scale: Scale::Log,
        y_scale: Scale::Linear,
        series: vec![Series {
            label: format!("{:.4} + {:.4} / sqrt(T)", fit.l_inf_star, fit.q_star),
            points: rows.clone(),
        }],
    };
    Ok(Artifacts {
        command: "predict",
        config: json!({
            "records": args.records,
            "T_min_cutoff": args.t_min,
            "interpolate": args.interpolate,
            "T": args.horizons,
            "eta_peak": args.eta_peak,
            "from_T": args.from_t,
        }),
        result: json!({ "fit": fit, "predictions": predictions }),
        csv: Some(csv),
        svg: Some(plot),
    })
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SCHEDLAW_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Usage(format!("SCHEDLAW_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    let artifacts = match &cli.command {
        Command::Bound(a) => bound(a)?,
        Command::Qualify(a) => qualify_cmd(a)?,
        Command::Fit(a) => fit(a)?,
        Command::Scale(a) => scale(a)?,
        Command::Simulate(a) => simulate(a)?,
        Command::Predict(a) => predict(a)?,
    };
    artifacts.emit(cli.format, cli.out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
