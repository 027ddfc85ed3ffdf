//! Seeded SGD on convex problems with exactly known constants.
//!
//! Each built-in problem is `a * phi(w - w*)` for a convex, non-negative
//! `phi` with `phi(0) = 0`, so `L* = 0`. The slope `a` is chosen so that the
//! subgradient has norm at most `G - r`, and the noise is drawn uniformly
//! from a ball of radius `r`; every stochastic gradient therefore has norm
//! at most `G` surely.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::validate_grid;
use crate::error::{Error, Result};
use crate::fitter::LossTrace;
use crate::scaling::RunRecord;
use crate::schedule::ScheduleSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// `a * ||w - w*||_1` with `a = (G - r) / sqrt(d)`.
    #[default]
    L1Distance,
    /// Coordinatewise Huber loss, linear beyond `delta = 0.1 D / sqrt(d)`.
    HuberQuadratic,
    /// `a * ||w - w*||_inf`, the max of `2d` linear pieces, with `a = G - r`.
    PiecewiseLinearMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexProblem {
    pub kind: ProblemKind,
    pub w_star: Vec<f64>,
    pub w0: Vec<f64>,
    #[serde(rename = "G_true")]
    pub g_true: f64,
    pub noise_scale: f64,
    /// Slope `a` of the loss.
    pub slope: f64,
    /// Huber threshold (unused by the other kinds).
    pub huber_delta: f64,
    #[serde(rename = "L_star")]
    pub l_star: f64,
}

impl ConvexProblem {
    /// A problem with explicit minimizer and starting point.
    pub fn new(kind: ProblemKind, w_star: Vec<f64>, w0: Vec<f64>, g_true: f64, noise_scale: f64) -> Result<Self> {
        let d = w_star.len();
        if d == 0 {
            return Err(Error::invalid("d", "dimension must be positive"));
        }
        if w0.len() != d {
            return Err(Error::invalid(
                "w0",
                format!("has dimension {}, expected {d}", w0.len()),
            ));
        }
        if w_star.iter().chain(&w0).any(|v| !v.is_finite()) {
            return Err(Error::invalid("w0", "coordinates must be finite"));
        }
        if !(g_true.is_finite() && g_true > 0.0) {
            return Err(Error::invalid("G", format!("must be positive, got {g_true}")));
        }
        if !(noise_scale.is_finite() && noise_scale >= 0.0) {
            return Err(Error::invalid(
                "noise_scale",
                format!("must be non-negative, got {noise_scale}"),
            ));
        }
        if noise_scale >= g_true {
            return Err(Error::invalid(
                "noise_scale",
                format!("{noise_scale} leaves no room for a subgradient under the bound G = {g_true}"),
            ));
        }
        let margin = g_true - noise_scale;
        let root_d = (d as f64).sqrt();
        let slope = match kind {
            ProblemKind::L1Distance | ProblemKind::HuberQuadratic => margin / root_d,
            ProblemKind::PiecewiseLinearMax => margin,
        };
        let dist = w0
            .iter()
            .zip(&w_star)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Ok(ConvexProblem {
            kind,
            w_star,
            w0,
            g_true,
            noise_scale,
            slope,
            huber_delta: 0.1 * dist.max(f64::MIN_POSITIVE) / root_d,
            l_star: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_star.len()
    }

    /// `||w0 - w*||`.
    pub fn d_true(&self) -> f64 {
        self.w0
            .iter()
            .zip(&self.w_star)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        let diffs = w.iter().zip(&self.w_star).map(|(a, b)| a - b);
        let phi = match self.kind {
            ProblemKind::L1Distance => diffs.map(f64::abs).sum(),
            ProblemKind::HuberQuadratic => {
                let delta = self.huber_delta;
                diffs
                    .map(|z| {
                        if z.abs() <= delta {
                            z * z / (2.0 * delta)
                        } else {
                            z.abs() - 0.5 * delta
                        }
                    })
                    .sum()
            }
            ProblemKind::PiecewiseLinearMax => diffs.map(f64::abs).fold(0.0, f64::max),
        };
        self.l_star + self.slope * phi
    }

    /// A subgradient of the loss at `w`, written into `out`.
    pub fn subgradient(&self, w: &[f64], out: &mut [f64]) {
        let a = self.slope;
        match self.kind {
            ProblemKind::L1Distance => {
                for ((o, wi), si) in out.iter_mut().zip(w).zip(&self.w_star) {
                    let z = wi - si;
                    *o = if z > 0.0 {
                        a
                    } else if z < 0.0 {
                        -a
                    } else {
                        0.0
                    };
                }
            }
            ProblemKind::HuberQuadratic => {
                let delta = self.huber_delta;
                for ((o, wi), si) in out.iter_mut().zip(w).zip(&self.w_star) {
                    *o = a * ((wi - si) / delta).clamp(-1.0, 1.0);
                }
            }
            ProblemKind::PiecewiseLinearMax => {
                out.fill(0.0);
                let mut arg = 0;
                let mut best = -1.0;
                for (i, (wi, si)) in w.iter().zip(&self.w_star).enumerate() {
                    let z = (wi - si).abs();
                    if z > best {
                        best = z;
                        arg = i;
                    }
                }
                let z = w[arg] - self.w_star[arg];
                if z != 0.0 {
                    out[arg] = a * z.signum();
                }
            }
        }
    }
}

/// A problem with `||w0 - w*|| = d_target` and gradient bound `g_target`.
///
/// `w*` is uniform in `[-1, 1]^d` and `w0 - w*` points in a uniformly random
/// direction. The same seed always gives the same problem.
pub fn make_problem(
    kind: ProblemKind,
    d: usize,
    d_target: f64,
    g_target: f64,
    noise_scale: f64,
    seed: u64,
) -> Result<ConvexProblem> {
    if d == 0 {
        return Err(Error::invalid("d", "dimension must be positive"));
    }
    if !(d_target.is_finite() && d_target > 0.0) {
        return Err(Error::invalid("D", format!("must be positive, got {d_target}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_star: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let dir = unit_vector(&mut rng, d);
    let w0 = w_star.iter().zip(&dir).map(|(s, u)| s + d_target * u).collect();
    ConvexProblem::new(kind, w_star, w0, g_target, noise_scale)
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// `L(w_tau)` on the record grid.
    pub trace: LossTrace,
    /// `L(w_bar_tau)` for the learning-rate weighted average iterate.
    pub averaged_trace: LossTrace,
    /// `sum eta_t L(w_{t-1}) / sum eta_t`, which bounds the averaged loss
    /// from above by convexity.
    pub weighted_losses: Vec<f64>,
    pub seed: u64,
    /// Steps whose gradient had to be rescaled onto the `G` ball.
    pub clipped_steps: u64,
}

/// Run `w_t = w_{t-1} - eta_t g(w_{t-1})` for `t = 1..=T` and record the
/// losses at each `tau` in `grid`.
///
/// Zero learning rates are allowed (the iterate just stays put). Runs are
/// bit-reproducible for a given seed.
pub fn sgd_run(problem: &ConvexProblem, lrs: &[f64], seed: u64, grid: &[usize]) -> Result<SimResult> {
    if lrs.is_empty() {
        return Err(Error::invalid("lrs", "learning-rate sequence is empty"));
    }
    if let Some(bad) = lrs.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::invalid(
            "lrs",
            format!("learning rates must be finite and non-negative, got {bad}"),
        ));
    }
    validate_grid(grid, lrs.len())?;

    let d = problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = problem.w0.clone();
    let mut g = vec![0.0; d];
    let mut weighted_sum = vec![0.0; d];
    let mut weight = 0.0;
    let mut weighted_loss = 0.0;
    let mut clipped_steps = 0;

    let mut last = Vec::with_capacity(grid.len());
    let mut averaged = Vec::with_capacity(grid.len());
    let mut weighted = Vec::with_capacity(grid.len());
    let mut next = 0;
    let cap = problem.g_true;

    for (i, &eta) in lrs.iter().enumerate() {
        let t = i + 1;
        let current = problem.loss(&w);
        for (acc, wi) in weighted_sum.iter_mut().zip(&w) {
            *acc += eta * wi;
        }
        weight += eta;
        weighted_loss += eta * current;

        problem.subgradient(&w, &mut g);
        if problem.noise_scale > 0.0 {
            let dir = unit_vector(&mut rng, d);
            let radius = problem.noise_scale * rng.random::<f64>().powf(1.0 / d as f64);
            for (gi, ui) in g.iter_mut().zip(&dir) {
                *gi += radius * ui;
            }
        }
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > cap {
            clipped_steps += 1;
            let s = cap / norm;
            g.iter_mut().for_each(|x| *x *= s);
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= eta * gi;
        }

        if next < grid.len() && grid[next] == t {
            last.push(problem.loss(&w));
            if weight > 0.0 {
                let avg: Vec<f64> = weighted_sum.iter().map(|s| s / weight).collect();
                averaged.push(problem.loss(&avg));
                weighted.push(weighted_loss / weight);
            } else {
                let start = problem.loss(&problem.w0);
                averaged.push(start);
                weighted.push(start);
            }
            next += 1;
        }
    }

    let steps: Vec<u64> = grid.iter().map(|&t| t as u64).collect();
    let dense = grid.len() == lrs.len();
    let lr_column = dense.then(|| lrs.to_vec());
    Ok(SimResult {
        trace: LossTrace::new(steps.clone(), last, lr_column.clone())?,
        averaged_trace: LossTrace::new(steps, averaged, lr_column)?,
        weighted_losses: weighted,
        seed,
        clipped_steps,
    })
}

/// Mean and standard error of the mean across seeds, per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub steps: Vec<u64>,
    pub seeds: usize,
    pub last_mean: Vec<f64>,
    pub last_stderr: Vec<f64>,
    pub averaged_mean: Vec<f64>,
    pub averaged_stderr: Vec<f64>,
}

/// Independent runs for each seed, in parallel.
pub fn run_seeds(problem: &ConvexProblem, lrs: &[f64], seeds: &[u64], grid: &[usize]) -> Result<Vec<SimResult>> {
    seeds.par_iter().map(|&s| sgd_run(problem, lrs, s, grid)).collect()
}

pub fn monte_carlo(problem: &ConvexProblem, lrs: &[f64], seeds: &[u64], grid: &[usize]) -> Result<MonteCarlo> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    let runs = run_seeds(problem, lrs, seeds, grid)?;
    let (last_mean, last_stderr) = mean_stderr(&runs, |r| &r.trace.losses);
    let (averaged_mean, averaged_stderr) = mean_stderr(&runs, |r| &r.averaged_trace.losses);
    Ok(MonteCarlo {
        steps: runs[0].trace.steps.clone(),
        seeds: seeds.len(),
        last_mean,
        last_stderr,
        averaged_mean,
        averaged_stderr,
    })
}

fn mean_stderr(runs: &[SimResult], get: impl Fn(&SimResult) -> &Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = runs.len() as f64;
    let points = get(&runs[0]).len();
    (0..points)
        .map(|i| {
            let mean = runs.iter().map(|r| get(r)[i]).sum::<f64>() / n;
            if runs.len() < 2 {
                return (mean, 0.0);
            }
            let var = runs.iter().map(|r| (get(r)[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, (var / n).sqrt())
        })
        .unzip()
}

/// Which iterate's final loss a sweep records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Iterate {
    Last,
    #[default]
    Averaged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub kind: ProblemKind,
    pub d: usize,
    #[serde(rename = "D")]
    pub d_target: f64,
    #[serde(rename = "G")]
    pub g_target: f64,
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<ConvexProblem> {
        make_problem(
            self.kind,
            self.d,
            self.d_target,
            self.g_target,
            self.noise_scale,
            self.seed,
        )
    }
}

/// A grid of runs with `eta_peak = eta_ref / sqrt(T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub problem: ProblemConfig,
    /// Schedule shape; its `eta_peak` and `T` are overridden per run.
    pub schedule: ScheduleSpec,
    /// Number of seeds per run, `0..seeds`.
    pub seeds: u64,
    #[serde(rename = "T_list")]
    pub t_list: Vec<u64>,
    pub eta_list: Vec<f64>,
    #[serde(default)]
    pub iterate: Iterate,
}

/// Run the sweep and return one record (seed-mean final loss) per
/// `(eta_ref, T)` pair, ordered by `eta_ref` and then `T`.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<RunRecord>> {
    if config.seeds == 0 {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    if config.t_list.is_empty() || config.eta_list.is_empty() {
        return Err(Error::invalid(
            "T_list",
            "sweep needs at least one horizon and one eta_ref",
        ));
    }
    let problem = config.problem.build()?;
    let seeds: Vec<u64> = (0..config.seeds).collect();
    let mut records = Vec::new();
    for &eta_ref in &config.eta_list {
        if !(eta_ref.is_finite() && eta_ref > 0.0) {
            return Err(Error::invalid(
                "eta_list",
                format!("entries must be positive, got {eta_ref}"),
            ));
        }
        for &t in &config.t_list {
            let eta_peak = eta_ref / (t as f64).sqrt();
            let lrs = config
                .schedule
                .with_horizon(t)
                .with_eta_peak(eta_peak)
                .eval_discrete()?;
            let mc = monte_carlo(&problem, lrs.as_slice(), &seeds, &[t as usize])?;
            let final_loss = match config.iterate {
                Iterate::Last => mc.last_mean[0],
                Iterate::Averaged => mc.averaged_mean[0],
            };
            records.push(RunRecord {
                eta_peak: Some(eta_peak),
                ..RunRecord::steps(eta_ref, t as f64, final_loss)
            });
        }
    }
    Ok(records)
}
