//! Acceptance criteria, one PASS/FAIL/SKIP line each.
//!
//! Runs without the libtest harness so the lines always reach stdout.
//! `FME_ACCEPTANCE_ONLY=1,4` restricts the run to the listed criteria.
//! Criterion 10 needs `FME_GAIT_DIR` pointing at `hip.csv` and `knee.csv`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use fme_core::covariance::{band_mask, masked_gradient, masked_objective, minimize_rank_j, CovMatrix, LowRankFactor};
use fme_core::grid::{sample_adequate_grid, CurveSet, Grid, GridFunction};
use fme_core::io::read_curves;
use fme_core::operator::{apply_operator, hs_norm, pseudo_inverse, var_xx_pinv, EigenSystem, RankedOperator};
use fme_core::pipeline::{decontaminate, estimate_covariance, RankChoice};
use fme_core::rank::{estimate_rank_mode, RankSettings};
use fme_core::regression::{
    cv_select_components, cv_select_components_functional, fit_quadratic, fit_scalar, l2_distance,
    r_squared_functional, rc_functional, spectral_truncation, spectral_truncation_functional, ScalarResponseSet,
};
use fme_core::seed;
use fme_core::simulation::{make_basis, quadratic_kernel, simulate, ErrorSpec, Model, ModelSpec, QuadraticTerm};

const REPS: usize = 20;
const CV_REPS: usize = 500;
const K_MAX: usize = 10;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: String) -> Self {
        Self { status: if pass { Status::Pass } else { Status::Fail }, detail }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if !n.is_multiple_of(2) {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn gauss(rng: &mut seed::Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn replicate_seed(cell: u64, rep: usize) -> u64 {
    1000 * cell + rep as u64
}

fn grid_for(seed_value: u64) -> Grid {
    sample_adequate_grid(100, seed::derive(seed_value, 7)).expect("grid")
}

fn true_rank(model: Model) -> usize {
    ModelSpec::canonical(model).rank
}

fn mode_rank(w: &CurveSet, seed_value: u64) -> usize {
    let settings = RankSettings { seed: seed_value, ..RankSettings::default() };
    estimate_rank_mode(w, &settings).expect("rank vote").mode
}

fn beta_error(beta_hat: &GridFunction, truth: &[f64], grid: &Grid) -> f64 {
    l2_distance(beta_hat, &GridFunction::new(truth.to_vec()), grid).expect("same grid")
}

/// L2 errors of RC (mode rank) and spectral truncation (CV-chosen k), plus
/// the rank used by RC.
fn rc_and_st(model: Model, err: &ErrorSpec, seed_value: u64) -> (f64, f64, usize) {
    let grid = grid_for(seed_value);
    let d = simulate(&ModelSpec::canonical(model), err, 100, &grid, seed_value).expect("simulate");
    let y = ScalarResponseSet::new(d.y.clone()).expect("finite y");
    let settings = RankSettings { seed: seed_value, ..RankSettings::default() };
    let fit = estimate_covariance(&d.w, &settings, RankChoice::Mode).expect("covariance");
    let rc = fit_scalar(&fit.eigensystem, &y, &d.w).expect("rc fit");
    let cv = cv_select_components(&d.w, &y, K_MAX, 2, CV_REPS, seed::derive(seed_value, 3)).expect("cv");
    let st = spectral_truncation(&d.w, &y, cv.k).expect("st fit");
    (beta_error(&rc.beta, &d.truth.beta, &grid), beta_error(&st.beta, &d.truth.beta, &grid), fit.rank)
}

fn criterion_1() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (mi, model) in [Model::M1, Model::M2, Model::M3].into_iter().enumerate() {
        for (di, delta) in [0.05, 0.1].into_iter().enumerate() {
            let start = Instant::now();
            let err = ErrorSpec::banded(delta).expect("delta");
            let mut hits = 0;
            let mut seen = BTreeMap::new();
            for rep in 0..REPS {
                let s = replicate_seed(10 + 2 * mi as u64 + di as u64, rep);
                let d = simulate(&ModelSpec::canonical(model), &err, 100, &grid_for(s), s).expect("simulate");
                let r = mode_rank(&d.w, s);
                *seen.entry(r).or_insert(0) += 1;
                hits += usize::from(r == true_rank(model));
            }
            let elapsed = start.elapsed();
            let ok = hits * 10 >= REPS * 9 && elapsed <= Duration::from_secs(600);
            pass &= ok;
            parts.push(format!("{model:?}/δ={delta}: {hits}/{REPS} modes {seen:?} in {:.0?}s", elapsed.as_secs_f64()));
        }
    }
    Outcome::check(pass, parts.join("; "))
}

fn criterion_2() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (mi, model) in [Model::M2, Model::M3].into_iter().enumerate() {
        for (di, delta) in [0.05, 0.1].into_iter().enumerate() {
            let err = ErrorSpec::banded(delta).expect("delta");
            let (mut rc, mut st) = (Vec::new(), Vec::new());
            for rep in 0..REPS {
                let (a, b, _) = rc_and_st(model, &err, replicate_seed(20 + 2 * mi as u64 + di as u64, rep));
                rc.push(a);
                st.push(b);
            }
            let (mr, ms) = (median(rc), median(st));
            pass &= mr < ms;
            parts.push(format!("{model:?}/δ={delta}: median RC {mr:.4} vs ST {ms:.4}"));
        }
    }
    Outcome::check(pass, parts.join("; "))
}

fn criterion_3() -> Outcome {
    let ns = [100usize, 400, 1600];
    let err = ErrorSpec::banded(0.05).expect("delta");
    let mut meds = Vec::new();
    for (ni, &n) in ns.iter().enumerate() {
        let mut errs = Vec::new();
        for rep in 0..REPS {
            let s = replicate_seed(30 + ni as u64, rep);
            let grid = grid_for(s);
            let d = simulate(&ModelSpec::canonical(Model::M1), &err, n, &grid, s).expect("simulate");
            let y = ScalarResponseSet::new(d.y.clone()).expect("finite y");
            let settings = RankSettings { seed: s, ..RankSettings::default() };
            let fit = estimate_covariance(&d.w, &settings, RankChoice::Fixed(3)).expect("covariance");
            let rc = fit_scalar(&fit.eigensystem, &y, &d.w).expect("rc fit");
            errs.push(beta_error(&rc.beta, &d.truth.beta, &grid));
        }
        meds.push(median(errs));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = meds.iter().map(|m| m.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    Outcome::check(
        (-0.65..=-0.35).contains(&slope),
        format!("medians {meds:.4?} at n = {ns:?}, slope {slope:.3}"),
    )
}

/// Random rank-`r` eigensystem on a random adequate grid of size `l`.
fn random_eigensystem(rng: &mut seed::Rng, l: usize, r: usize) -> EigenSystem {
    let grid = sample_adequate_grid(l, rng.random()).expect("grid");
    let g = DMatrix::from_fn(l, r, |_, _| gauss(rng));
    let q = g.qr().q();
    let functions = q * (l as f64).sqrt();
    let mut lams: Vec<f64> = (0..r).map(|_| rng.random_range(0.05..5.0)).collect();
    lams.sort_by(|a, b| b.total_cmp(a));
    EigenSystem::new(lams, functions, grid).expect("valid eigensystem")
}

fn criterion_4() -> Outcome {
    let mut rng = seed::rng(4);
    let (mut worst_op, mut worst_var, mut worst_ratio) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..200 {
        let l = rng.random_range(8..=50);
        let r = rng.random_range(1..=5);
        let es = random_eigensystem(&mut rng, l, r);
        let a = RankedOperator::covariance(es.clone());
        let ai = pseudo_inverse(&es).expect("pinv");
        for _ in 0..3 {
            let f = GridFunction::new((0..l).map(|_| gauss(&mut rng)).collect());
            let af = apply_operator(&a, &f).expect("apply");
            let aaa = apply_operator(&a, &apply_operator(&ai, &af).expect("apply")).expect("apply");
            let dev = aaa.sub(&af).values().iter().map(|v| v * v).sum::<f64>() / l as f64;
            worst_op = worst_op.max(dev.sqrt());
        }
        let mp = var_xx_pinv(&es, false).expect("var");
        let paper = var_xx_pinv(&es, true).expect("var");
        let t = DMatrix::from_fn(l, l, |_, _| gauss(&mut rng));
        let v = mp.forward(&t).expect("forward");
        let vvv = mp.forward(&mp.pinv(&v).expect("pinv")).expect("forward");
        worst_var = worst_var.max(hs_norm(&(vvv - &v)));
        let sym = &t + t.transpose();
        let p4 = paper.pinv(&sym).expect("pinv") - mp.pinv(&sym).expect("pinv") * 4.0;
        worst_ratio = worst_ratio.max(p4.amax());
    }
    Outcome::check(
        worst_op <= 1e-8 && worst_var <= 1e-8 && worst_ratio == 0.0,
        format!("max ‖AA⁻A−A‖ {worst_op:.2e}, max var(X⊗X) defect {worst_var:.2e}, paper − 4·MP {worst_ratio:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = seed::rng(5);
    let mut worst_f = 0.0_f64;
    let mut worst_rel = 0.0_f64;
    let mut count = 0;
    let models = [Model::M1, Model::M2, Model::M3];
    for (i, model) in models.iter().cycle().take(30).enumerate() {
        let l = [32, 40, 60][i % 3];
        let delta_star = 0.1;
        let spec = ModelSpec::canonical(*model);
        let grid = sample_adequate_grid(l, rng.random()).expect("grid");
        let basis = make_basis(&spec, &grid).expect("basis");
        let j = rng.random_range(1..=spec.rank);
        let mut k = DMatrix::zeros(l, l);
        for (lam, eta) in spec.eigenvalues.iter().zip(&basis).take(j) {
            let v = nalgebra::DVector::from_column_slice(eta.values());
            k += &v * v.transpose() * *lam;
        }
        let mask = band_mask(l, delta_star).expect("mask");
        let mut noise = DMatrix::from_fn(l, l, |a, b| {
            if mask.entry(a, b) {
                0.0
            } else {
                0.5 * gauss(&mut rng)
            }
        });
        noise = (&noise + noise.transpose()) * 0.5;
        noise.set_diagonal(&noise.diagonal().abs());
        let khat = CovMatrix::new(&k + noise).expect("symmetric");
        let (fit, f) = minimize_rank_j(&khat, &mask, j, 1e-8, 2000).expect("fit");
        let rel = (fit.factor.gram().entries() - &k).norm() / k.norm();
        worst_f = worst_f.max(f);
        worst_rel = worst_rel.max(rel);
        count += 1;
    }
    Outcome::check(
        worst_f <= 1e-8 && worst_rel <= 1e-3,
        format!("{count} instances: max objective {worst_f:.2e}, max relative recovery error {worst_rel:.2e}"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = seed::rng(6);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let l = rng.random_range(6..=16);
        let j = rng.random_range(1..=3);
        let a = DMatrix::from_fn(l, l + 2, |_, _| gauss(&mut rng));
        let khat = CovMatrix::new(&a * a.transpose() / (l as f64)).expect("psd");
        let mask = band_mask(l, rng.random_range(0.0..0.25)).expect("mask");
        let theta = DMatrix::from_fn(l, j, |_, _| gauss(&mut rng));
        let g = masked_gradient(&LowRankFactor::new(theta.clone()), &khat, &mask).expect("gradient");
        let h = 1e-6;
        let fd = DMatrix::from_fn(l, j, |p, q| {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[(p, q)] += h;
            minus[(p, q)] -= h;
            let fp = masked_objective(&LowRankFactor::new(plus), &khat, &mask).expect("objective");
            let fm = masked_objective(&LowRankFactor::new(minus), &khat, &mask).expect("objective");
            (fp - fm) / (2.0 * h)
        });
        worst = worst.max((&g - &fd).norm() / g.norm().max(f64::MIN_POSITIVE));
    }
    Outcome::check(worst <= 1e-5, format!("max relative gradient error {worst:.2e} over 50 instances"))
}

fn criterion_7() -> Outcome {
    let err = ErrorSpec::iid(0.25);
    let mut pass = true;
    let mut parts = Vec::new();
    for (mi, model) in [Model::M1, Model::M2, Model::M3].into_iter().enumerate() {
        let (mut hits, mut rc, mut st) = (0, Vec::new(), Vec::new());
        for rep in 0..REPS {
            let (a, b, r) = rc_and_st(model, &err, replicate_seed(70 + mi as u64, rep));
            hits += usize::from(r == true_rank(model));
            rc.push(a);
            st.push(b);
        }
        let (mr, ms) = (median(rc), median(st));
        pass &= hits * 10 >= REPS * 9 && mr <= ms;
        parts.push(format!("{model:?}: rank {hits}/{REPS}, median RC {mr:.4} vs ST {ms:.4}"));
    }
    Outcome::check(pass, parts.join("; "))
}

fn criterion_8() -> Outcome {
    let err = ErrorSpec::banded(0.1).expect("delta");
    let mut pass = true;
    let mut parts = Vec::new();
    for (mi, (model, target)) in [(Model::M4, 4), (Model::M5, 6), (Model::M6, 6)].into_iter().enumerate() {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        let (mut exact, mut near) = (0, 0);
        for rep in 0..REPS {
            let s = replicate_seed(80 + mi as u64, rep);
            let d = simulate(&ModelSpec::canonical(model), &err, 100, &grid_for(s), s).expect("simulate");
            let settings = RankSettings { seed: s, ..RankSettings::default() };
            let label = match fme_core::rank::essential_rank(&d.w, &settings) {
                Ok(res) => {
                    let r = res.rank.expect("feasible rank");
                    exact += usize::from(r == target);
                    near += usize::from(r.abs_diff(target) <= 1);
                    r.to_string()
                }
                Err(_) => "none".to_string(),
            };
            *seen.entry(label).or_insert(0) += 1;
        }
        pass &= exact * 10 >= REPS * 7 && near == REPS;
        parts.push(format!("{model:?}: {exact}/{REPS} at {target}, {near}/{REPS} within ±1 {seen:?}"));
    }
    Outcome::check(pass, parts.join("; "))
}

fn criterion_9() -> Outcome {
    let mut spec = ModelSpec::canonical(Model::M1);
    spec.quadratic = vec![
        QuadraticTerm { j: 0, k: 1, coefficient: 1.0 },
        QuadraticTerm { j: 1, k: 0, coefficient: 1.0 },
    ];
    let grid = sample_adequate_grid(100, 9).expect("grid");
    let d = simulate(&spec, &ErrorSpec::None, 2000, &grid, 9).expect("simulate");
    let y = ScalarResponseSet::new(d.y.clone()).expect("finite y");
    let settings = RankSettings { seed: 9, ..RankSettings::default() };
    let fit = estimate_covariance(&d.w, &settings, RankChoice::Fixed(3)).expect("covariance");
    let mp = fit_quadratic(&fit.eigensystem, &y, &d.w, false).expect("quadratic fit");
    let paper = fit_quadratic(&fit.eigensystem, &y, &d.w, true).expect("quadratic fit");
    let truth = quadratic_kernel(&spec, &grid).expect("kernel");
    let rel = hs_norm(&(&mp.quadratic.kernel - &truth)) / hs_norm(&truth);
    let ratio = (&paper.quadratic.kernel - &mp.quadratic.kernel * 4.0).amax();
    Outcome::check(
        rel <= 0.25 && ratio <= 1e-10,
        format!("relative HS error {rel:.4}, max |paper − 4·MP| {ratio:.2e}"),
    )
}

fn criterion_10() -> Outcome {
    let Some(dir) = std::env::var_os("FME_GAIT_DIR").map(PathBuf::from) else {
        return Outcome { status: Status::Skip, detail: "FME_GAIT_DIR not set".into() };
    };
    let (hip, knee) = match (read_curves(&dir.join("hip.csv")), read_curves(&dir.join("knee.csv"))) {
        (Ok(h), Ok(k)) => (h, k),
        _ => return Outcome { status: Status::Skip, detail: format!("hip.csv/knee.csv not readable in {}", dir.display()) },
    };
    let settings = RankSettings { m: 2, delta_star: 0.05, ..RankSettings::default() };
    let fit = match estimate_covariance(&hip, &settings, RankChoice::Essential) {
        Ok(f) => f,
        Err(e) => return Outcome::check(false, format!("essential rank failed: {e}")),
    };
    let cleaned = decontaminate(&hip, &fit.eigensystem).expect("decontaminate");
    let rc = rc_functional(&fit.eigensystem, &knee, &hip).expect("rc fit");
    let r2_rc = r_squared_functional(&knee, &rc.predict(&cleaned).expect("predict")).expect("r2");
    let cv = cv_select_components_functional(&hip, &knee, K_MAX, 2, CV_REPS, 0).expect("cv");
    let st = spectral_truncation_functional(&hip, &knee, cv.k).expect("st fit");
    let r2_st = r_squared_functional(&knee, &st.predict(&hip).expect("predict")).expect("r2");
    let ok = fit.rank == 5 && cv.k == 4 && (r2_rc - 0.542).abs() <= 0.02 && (r2_st - 0.503).abs() <= 0.02;
    Outcome::check(
        ok,
        format!("essential rank {}, ST cutoff {}, R² RC {:.1}%, ST {:.1}%", fit.rank, cv.k, 100.0 * r2_rc, 100.0 * r2_st),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "rank recovery under banded error", criterion_1),
        (2, "RC beats spectral truncation", criterion_2),
        (3, "root-n convergence rate", criterion_3),
        (4, "pseudo-inverse identities", criterion_4),
        (5, "completion oracle", criterion_5),
        (6, "gradient check", criterion_6),
        (7, "i.i.d. error limit", criterion_7),
        (8, "essential rank", criterion_8),
        (9, "quadratic recovery", criterion_9),
        (10, "gait reproduction", criterion_10),
    ];
    let only: Option<Vec<u32>> = std::env::var("FME_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!("{tag} criterion {id} ({name}) [{:.1}s]: {}", start.elapsed().as_secs_f64(), outcome.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
