use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use fme_core::grid::{sample_adequate_grid, CurveSet, GridFunction};
use fme_core::io::{
    atomic_write, fmt_f64, read_curves, read_json, read_scalars, write_curves, write_json, write_matrix, write_scalars,
};
use fme_core::pipeline::{decontaminate, error_variance, estimate_covariance, RankChoice};
use fme_core::rank::{essential_rank, estimate_rank_mode, RankSettings};
use fme_core::regression::{
    cv_select_components, cv_select_components_functional, fit_quadratic, fit_scalar, l2_distance, predict as apply_fit,
    r_squared, r_squared_functional, rc_functional, spectral_truncation, spectral_truncation_functional, CvResult, Fit,
    Predictions, ScalarResponseSet,
};
use fme_core::seed;
use fme_core::simulation::{self, ErrorSpec, Model, ModelSpec, Truth};
use fme_core::Error as CoreError;

use crate::{AnalyzeArgs, CompareArgs, FitArgs, PredictArgs, RankArgs, RankOpts, SimulateArgs};

const CV_REPS: usize = 500;
const K_MAX: usize = 10;
const FOLDS: usize = 2;
/// Bandwidth used by `analyze` when none is given.
const ANALYZE_DELTA_STAR: f64 = 0.05;

fn settings(opts: &RankOpts, seed_value: u64) -> RankSettings {
    let d = RankSettings::default();
    let mut completion = d.completion;
    completion.restarts = opts.restarts.unwrap_or(completion.restarts);
    completion.max_iter = opts.max_iter.unwrap_or(completion.max_iter);
    completion.tol = opts.tol.unwrap_or(completion.tol);
    RankSettings {
        m: opts.m.unwrap_or(d.m),
        b: opts.b.unwrap_or(d.b),
        delta_star: opts.delta_star.unwrap_or(d.delta_star),
        max_rank: opts.max_rank.unwrap_or(d.max_rank),
        c1_multiplier: opts.c1_multiplier.unwrap_or(d.c1_multiplier),
        c2: opts.c2.unwrap_or(d.c2),
        seed: seed_value,
        completion,
    }
}

fn parse_rank_choice(s: Option<&str>) -> Result<RankChoice> {
    match s.unwrap_or("mode") {
        "mode" => Ok(RankChoice::Mode),
        "essential" => Ok(RankChoice::Essential),
        other => match other.parse::<usize>() {
            Ok(r) if r > 0 => Ok(RankChoice::Fixed(r)),
            _ => bail!("--rank must be mode, essential or a positive integer, got {other:?}"),
        },
    }
}

fn parse_error(kind: &str, delta: f64, variance: f64) -> Result<ErrorSpec> {
    Ok(match kind {
        "banded" => ErrorSpec::banded(delta)?,
        "iid" => ErrorSpec::iid(variance),
        "none" => ErrorSpec::None,
        other => bail!("--error must be banded, iid or none, got {other:?}"),
    })
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| anyhow::anyhow!("invalid {what} {t:?}: {e}")))
        .collect()
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().with_context(|| format!("{flag} is required"))
}

fn out_dir(p: Option<PathBuf>) -> Result<PathBuf> {
    let dir = p.unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_curves(p: &Path) -> Result<CurveSet> {
    read_curves(p).with_context(|| format!("reading {}", p.display()))
}

/// `beta.csv`: grid row followed by the slope values.
fn write_beta(path: &Path, beta: &GridFunction, grid: &fme_core::grid::Grid) -> Result<()> {
    write_curves(path, &CurveSet::from_rows(std::slice::from_ref(beta), grid.clone())?)?;
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let spec: ModelSpec = match &a.spec {
        Some(p) => read_json(p).with_context(|| format!("reading model spec {}", p.display()))?,
        None => ModelSpec::canonical(a.model.as_deref().unwrap_or("M1").parse::<Model>()?),
    };
    let err = parse_error(a.error.as_deref().unwrap_or("banded"), a.delta.unwrap_or(0.05), a.variance.unwrap_or(0.25))?;
    let seed_value = a.seed.unwrap_or(0);
    let grid = sample_adequate_grid(a.l.unwrap_or(100), seed::derive(seed_value, 3))?;
    let d = simulation::simulate(&spec, &err, a.n.unwrap_or(100), &grid, seed_value)?;
    let dir = out_dir(a.out_dir)?;
    write_curves(&dir.join("W.csv"), &d.w)?;
    write_scalars(&dir.join("y.csv"), &d.y)?;
    write_json(&dir.join("truth.json"), &d.truth)?;
    if a.latent {
        write_curves(&dir.join("X.csv"), &d.x)?;
        write_curves(&dir.join("U.csv"), &d.u)?;
    }
    println!("wrote {} curves on {} nodes to {}", d.w.n(), d.w.grid_len(), dir.display());
    Ok(())
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value)?,
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

pub fn rank(a: RankArgs) -> Result<()> {
    let w = load_curves(required(&a.input, "--input")?)?;
    let s = settings(&a.rank, a.seed.unwrap_or(0));
    let report = if a.essential {
        match essential_rank(&w, &s) {
            Ok(r) => json!({ "procedure": "essential", "rank": r.rank, "result": r }),
            Err(CoreError::NoFeasibleRank(diag)) => {
                eprintln!("{}", serde_json::to_string_pretty(&diag)?);
                bail!("no rank satisfies both the scree cutoff c1 = {} and the cap c2 = {}", diag.c1, diag.c2);
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        let v = estimate_rank_mode(&w, &s)?;
        if v.mode_out_of_range {
            eprintln!("warning: no vote within 1..={}; reporting the overall mode", v.mode_bound);
        }
        json!({ "procedure": "mode", "rank": v.mode, "result": v })
    };
    emit(a.out.as_deref(), &report)?;
    if a.out.is_some() {
        println!("rank {}", report["rank"]);
    }
    Ok(())
}

enum Response {
    Scalar(ScalarResponseSet),
    Curves(CurveSet),
}

#[derive(Serialize)]
struct FitSummary {
    method: String,
    response_kind: String,
    rank: Option<usize>,
    k: Option<usize>,
    cv: Option<CvResult>,
    l2_error: Option<f64>,
}

pub fn fit(a: FitArgs) -> Result<()> {
    let input = required(&a.input, "--input")?;
    let w = load_curves(input)?;
    let response_path = required(&a.response, "--response")?;
    let kind = a.response_kind.as_deref().unwrap_or("scalar");
    let response = match kind {
        "scalar" => Response::Scalar(ScalarResponseSet::new(
            read_scalars(response_path).with_context(|| format!("reading {}", response_path.display()))?,
        )?),
        "functional" => Response::Curves(load_curves(response_path)?),
        other => bail!("--response-kind must be scalar or functional, got {other:?}"),
    };
    let method = a.method.as_deref().unwrap_or("rc");
    let seed_value = a.seed.unwrap_or(0);
    let s = settings(&a.rank, seed_value);
    let k_max = a.k_max.unwrap_or(K_MAX);
    let folds = a.folds.unwrap_or(FOLDS);
    let cv_reps = a.cv_reps.unwrap_or(CV_REPS);
    let mut summary =
        FitSummary { method: method.into(), response_kind: kind.into(), rank: None, k: None, cv: None, l2_error: None };

    let fit = match (method, &response) {
        ("rc" | "rc-quadratic", _) => {
            let cov = estimate_covariance(&w, &s, parse_rank_choice(a.rank_choice.as_deref())?)?;
            summary.rank = Some(cov.rank);
            if !cov.converged {
                eprintln!("warning: full-grid completion did not reach the gradient tolerance");
            }
            match (method, &response) {
                ("rc", Response::Scalar(y)) => Fit::Scalar(fit_scalar(&cov.eigensystem, y, &w)?),
                ("rc", Response::Curves(yc)) => Fit::Functional(rc_functional(&cov.eigensystem, yc, &w)?),
                (_, Response::Scalar(y)) => Fit::Quadratic(fit_quadratic(&cov.eigensystem, y, &w, a.paper_coefficients)?),
                (_, Response::Curves(_)) => bail!("rc-quadratic needs a scalar response"),
            }
        }
        ("st", Response::Scalar(y)) => {
            let k = match a.k {
                Some(k) => k,
                None => {
                    let cv = cv_select_components(&w, y, k_max, folds, cv_reps, seed_value)?;
                    let k = cv.k;
                    summary.cv = Some(cv);
                    k
                }
            };
            summary.k = Some(k);
            Fit::Scalar(spectral_truncation(&w, y, k)?)
        }
        ("st", Response::Curves(yc)) => {
            let k = match a.k {
                Some(k) => k,
                None => {
                    let cv = cv_select_components_functional(&w, yc, k_max, folds, cv_reps, seed_value)?;
                    let k = cv.k;
                    summary.cv = Some(cv);
                    k
                }
            };
            summary.k = Some(k);
            Fit::Functional(spectral_truncation_functional(&w, yc, k)?)
        }
        (other, _) => bail!("--method must be rc, st or rc-quadratic, got {other:?}"),
    };

    let dir = out_dir(a.out_dir.clone())?;
    write_json(&dir.join("fit.json"), &fit)?;
    let beta = match &fit {
        Fit::Scalar(f) => Some(&f.beta),
        Fit::Quadratic(f) => Some(&f.linear.beta),
        Fit::Functional(_) => None,
    };
    if let Some(beta) = beta {
        write_beta(&dir.join("beta.csv"), beta, w.grid())?;
    }
    match &fit {
        Fit::Functional(f) => write_matrix(&dir.join("kernel.csv"), &f.slope.kernel)?,
        Fit::Quadratic(f) => write_matrix(&dir.join("kernel.csv"), &f.quadratic.kernel)?,
        Fit::Scalar(_) => {}
    }

    let truth_path = a.truth.clone().or_else(|| {
        let p = input.parent().unwrap_or(Path::new(".")).join("truth.json");
        p.exists().then_some(p)
    });
    if let (Some(p), Some(beta)) = (truth_path, beta) {
        let truth: Truth = read_json(&p).with_context(|| format!("reading {}", p.display()))?;
        if truth.grid != w.grid().nodes() {
            bail!("grid in {} does not match the grid of {}", p.display(), input.display());
        }
        summary.l2_error = Some(l2_distance(beta, &GridFunction::new(truth.beta), w.grid())?);
    }

    println!("method {method}");
    if let Some(r) = summary.rank {
        println!("rank {r}");
    }
    if let Some(k) = summary.k {
        println!("chosen k = {k}");
    }
    if let Some(e) = summary.l2_error {
        println!("L2 error vs truth {}", fmt_f64(e));
    }
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let fit_path = required(&a.fit, "--fit")?;
    let fit: Fit = read_json(fit_path).with_context(|| format!("reading {}", fit_path.display()))?;
    let w = load_curves(required(&a.input, "--input")?)?;
    let out = a.out.unwrap_or_else(|| PathBuf::from("predictions.csv"));
    let preds = apply_fit(&fit, &w)?;
    match &preds {
        Predictions::Scalar(v) => write_scalars(&out, v)?,
        Predictions::Functional(c) => write_curves(&out, c)?,
    }
    if let Some(p) = &a.actual {
        let r2 = match &preds {
            Predictions::Scalar(v) => r_squared(&read_scalars(p)?, v)?,
            Predictions::Functional(c) => r_squared_functional(&load_curves(p)?, c)?,
        };
        println!("R^2 {}", fmt_f64(r2));
    }
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
struct Row {
    model: String,
    error: String,
    delta: f64,
    n: usize,
    method: String,
    seed: u64,
    rank: usize,
    l2_error: f64,
    runtime: f64,
}

#[derive(Serialize)]
struct Group {
    model: String,
    error: String,
    delta: f64,
    n: usize,
    method: String,
    replicates: usize,
    median_l2_error: f64,
    median_runtime: f64,
    ranks: BTreeMap<usize, usize>,
    /// Least-squares slope of log median error against log n across the
    /// study's sample sizes; absent with a single n.
    loglog_slope: Option<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn loglog_slope(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

struct Job {
    model: Model,
    delta: f64,
    n: usize,
    seed: u64,
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let models: Vec<Model> = parse_list(a.models.as_deref().unwrap_or("M1,M2,M3"), "model")?;
    let error_kind = a.error.clone().unwrap_or_else(|| "banded".into());
    let deltas: Vec<f64> = if error_kind == "banded" {
        parse_list(a.deltas.as_deref().unwrap_or("0.05,0.1"), "delta")?
    } else {
        vec![0.0]
    };
    let ns: Vec<usize> = parse_list(a.ns.as_deref().unwrap_or("100"), "n")?;
    let methods: Vec<String> = parse_list(a.methods.as_deref().unwrap_or("rc,st"), "method")?;
    if let Some(m) = methods.iter().find(|m| !matches!(m.as_str(), "rc" | "st")) {
        bail!("compare supports methods rc and st, got {m:?}");
    }
    let reps = a.reps.unwrap_or(20);
    let base_seed = a.seed.unwrap_or(0);
    let choice = parse_rank_choice(a.rank_choice.as_deref())?;
    let l = a.l.unwrap_or(100);
    let variance = a.variance.unwrap_or(0.25);
    let (k_max, folds, cv_reps) = (a.k_max.unwrap_or(K_MAX), a.folds.unwrap_or(FOLDS), a.cv_reps.unwrap_or(CV_REPS));

    let mut jobs = Vec::new();
    for &model in &models {
        for &delta in &deltas {
            for &n in &ns {
                for rep in 0..reps {
                    jobs.push(Job { model, delta, n, seed: base_seed.wrapping_add(rep as u64) });
                }
            }
        }
    }
    let rows: Vec<Vec<Row>> = jobs
        .par_iter()
        .map(|job| -> Result<Vec<Row>> {
            let err = parse_error(&error_kind, job.delta, variance)?;
            let grid = sample_adequate_grid(l, seed::derive(job.seed, 3))?;
            let d = simulation::simulate(&ModelSpec::canonical(job.model), &err, job.n, &grid, job.seed)?;
            let y = ScalarResponseSet::new(d.y.clone())?;
            let truth = GridFunction::new(d.truth.beta.clone());
            let mut out = Vec::new();
            for method in &methods {
                let start = Instant::now();
                let (rank, beta) = if method == "rc" {
                    let cov = estimate_covariance(&d.w, &settings(&a.rank, job.seed), choice)?;
                    (cov.rank, fit_scalar(&cov.eigensystem, &y, &d.w)?.beta)
                } else {
                    let k = cv_select_components(&d.w, &y, k_max, folds, cv_reps, seed::derive(job.seed, 4))?.k;
                    (k, spectral_truncation(&d.w, &y, k)?.beta)
                };
                out.push(Row {
                    model: format!("{:?}", job.model),
                    error: error_kind.clone(),
                    delta: job.delta,
                    n: job.n,
                    method: method.clone(),
                    seed: job.seed,
                    rank,
                    l2_error: l2_distance(&beta, &truth, &grid)?,
                    runtime: start.elapsed().as_secs_f64(),
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Row> = rows.into_iter().flatten().collect();

    let mut csv = String::from("model,error,delta,n,method,seed,rank,l2_error,runtime\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.model,
            r.error,
            fmt_f64(r.delta),
            r.n,
            r.method,
            r.seed,
            r.rank,
            fmt_f64(r.l2_error),
            fmt_f64(r.runtime)
        ));
    }

    type Key = (String, String, u64, String);
    let mut by_cell: BTreeMap<(Key, usize), Vec<&Row>> = BTreeMap::new();
    for r in &rows {
        let key = (r.model.clone(), r.error.clone(), r.delta.to_bits(), r.method.clone());
        by_cell.entry((key, r.n)).or_default().push(r);
    }
    let mut medians_by_key: BTreeMap<Key, Vec<(usize, f64)>> = BTreeMap::new();
    for ((key, n), cell) in &by_cell {
        medians_by_key.entry(key.clone()).or_default().push((*n, median(cell.iter().map(|r| r.l2_error).collect())));
    }
    let groups: Vec<Group> = by_cell
        .iter()
        .map(|((key, n), cell)| {
            let mut ranks = BTreeMap::new();
            for r in cell {
                *ranks.entry(r.rank).or_insert(0) += 1;
            }
            Group {
                model: key.0.clone(),
                error: key.1.clone(),
                delta: f64::from_bits(key.2),
                n: *n,
                method: key.3.clone(),
                replicates: cell.len(),
                median_l2_error: median(cell.iter().map(|r| r.l2_error).collect()),
                median_runtime: median(cell.iter().map(|r| r.runtime).collect()),
                ranks,
                loglog_slope: loglog_slope(&medians_by_key[key]),
            }
        })
        .collect();

    let dir = out_dir(a.out_dir)?;
    atomic_write(&dir.join("table.csv"), csv.as_bytes())?;
    write_json(&dir.join("summary.json"), &groups)?;
    for g in &groups {
        let slope = g.loglog_slope.map(|s| format!(" slope {s:.3}")).unwrap_or_default();
        println!(
            "{} {} δ={} n={} {}: median L2 {:.4} ranks {:?}{slope}",
            g.model, g.error, g.delta, g.n, g.method, g.median_l2_error, g.ranks
        );
    }
    Ok(())
}

/// Largest stride up to 4 that keeps at least eight subgrid nodes.
fn default_stride(l: usize) -> usize {
    (2..=4).rev().find(|m| l / m >= 8).unwrap_or(2)
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    let w = load_curves(required(&a.covariate, "--covariate")?)?;
    let y = load_curves(required(&a.response, "--response")?)?;
    if w.n() != y.n() {
        bail!("{} covariate curves but {} response curves", w.n(), y.n());
    }
    let seed_value = a.seed.unwrap_or(0);
    let mut opts = a.rank.clone();
    opts.m = Some(opts.m.unwrap_or_else(|| default_stride(w.grid_len())));
    opts.delta_star = Some(opts.delta_star.unwrap_or(ANALYZE_DELTA_STAR));
    let s = settings(&opts, seed_value);
    println!("delta* = {} (m = {}, L* = {})", s.delta_star, s.m, s.lstar(w.grid_len()));

    let cov = estimate_covariance(&w, &s, RankChoice::Essential)?;
    let cleaned = decontaminate(&w, &cov.eigensystem)?;
    let rc = rc_functional(&cov.eigensystem, &y, &w)?;
    let r2_rc = r_squared_functional(&y, &rc.predict(&cleaned)?)?;
    let cv = cv_select_components_functional(
        &w,
        &y,
        a.k_max.unwrap_or(K_MAX),
        a.folds.unwrap_or(FOLDS),
        a.cv_reps.unwrap_or(CV_REPS),
        seed_value,
    )?;
    let st = spectral_truncation_functional(&w, &y, cv.k)?;
    let r2_st = r_squared_functional(&y, &st.predict(&w)?)?;
    let variance = error_variance(&w, &cov.kx)?;

    let dir = out_dir(a.out_dir)?;
    write_curves(&dir.join("decontaminated.csv"), &cleaned)?;
    let var_row = GridFunction::new(variance.clone());
    write_curves(&dir.join("error_variance.csv"), &CurveSet::from_rows(&[var_row], w.grid().clone())?)?;
    write_matrix(&dir.join("rc_kernel.csv"), &rc.slope.kernel)?;
    write_matrix(&dir.join("st_kernel.csv"), &st.slope.kernel)?;
    write_json(&dir.join("rc_fit.json"), &Fit::Functional(rc))?;
    write_json(&dir.join("st_fit.json"), &Fit::Functional(st))?;
    let report = json!({
        "delta_star": s.delta_star,
        "settings": s,
        "essential_rank": cov.rank,
        "essential": cov.essential,
        "eigenvalues": cov.eigensystem.eigenvalues(),
        "st_components": cv.k,
        "cv": cv,
        "r_squared_rc": r2_rc,
        "r_squared_st": r2_st,
        "error_variance": variance,
    });
    write_json(&dir.join("report.json"), &report)?;
    println!("essential rank {}", cov.rank);
    println!("spectral cutoff {}", cv.k);
    println!("R^2 rc {}", fmt_f64(r2_rc));
    println!("R^2 st {}", fmt_f64(r2_st));
    Ok(())
}
