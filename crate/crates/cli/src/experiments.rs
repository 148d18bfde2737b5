//! One function per experiment; each returns its tables without touching
//! the filesystem.

use rand_distr::{Distribution, StandardNormal};
use volterra_lab::bsde::{self, RegressionConfig};
use volterra_lab::contract::{
    assemble_sheets, gram_determinant_exact, gram_impossibility, lifted_coefficients, phi_basis, quadratic_cost,
    simulate_reduced, span_residual, target_distance, AdmissibleControl, DiscountSpec, TargetLine,
};
use volterra_lab::lq::{mc_rewards, solve_riccati, starter_check, starter_residual, Kernel, RiccatiPolicy};
use volterra_lab::markov::{convergence_study, study_preset};
use volterra_lab::rng::path_rng;
use volterra_lab::sobolev::{
    basis, cosine_eval, embedding_check, embedding_constant, riesz_representer, SobolevPath, TimeGrid,
};
use volterra_lab::stats::Estimate;
use volterra_lab::volterra::{diagonal_coupling, presets, simulate_lifted, ControlPath};
use volterra_lab::LabError;

use crate::config::*;
use crate::report::{num, CsvTable};
use crate::CliError;

pub fn execute(cfg: &ExperimentConfig) -> Result<Vec<CsvTable>, CliError> {
    cfg.validate()?;
    let seed = cfg.seed;
    match &cfg.params {
        Params::Embed(p) => embed(p, seed),
        Params::Riesz(p) => riesz(p),
        Params::Diagonal(p) => diagonal(p, seed),
        Params::Markov(p) => markov(p, seed),
        Params::Lq(p) => lq(p, seed),
        Params::Starter(p) => starter(p, seed),
        Params::Bsde(p) => bsde_run(p, seed),
        Params::ContractSpan(p) => contract_span(p, seed),
        Params::ContractTarget(p) => contract_target(p, seed),
        Params::Gram(p) => gram(p),
    }
}

/// Random path `Σ_k (a_k e_k + b_k sin(kπs/T)) / (1 + k)` with Gaussian
/// weights, `k < modes`.
pub fn band_limited_path(grid: TimeGrid, modes: usize, seed: u64, path: usize) -> SobolevPath {
    let mut rng = path_rng(seed, path);
    let horizon = grid.horizon();
    let weights: Vec<(f64, f64)> = (0..modes)
        .map(|k| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            (a / (1.0 + k as f64), b / (1.0 + k as f64))
        })
        .collect();
    let eval = |s: f64| {
        let mut v = 0.0;
        let mut d = 0.0;
        for (k, (a, b)) in weights.iter().enumerate() {
            let (c, dc) = cosine_eval(k, horizon, s);
            let w = k as f64 * std::f64::consts::PI / horizon;
            v += a * c + b * (w * s).sin();
            d += a * dc + b * w * (w * s).cos();
        }
        (v, d)
    };
    SobolevPath::from_fn(grid, |s| eval(s).0, |s| eval(s).1)
}

fn embed(p: &EmbedParams, seed: u64) -> Result<Vec<CsvTable>, CliError> {
    let mut t = CsvTable::new("embedding", "horizon,path_id,sup_norm,h_norm,bound,constant_ok");
    for (hi, &horizon) in p.horizons.iter().enumerate() {
        let grid = TimeGrid::new(horizon, p.n_s)?;
        for path in 0..p.n_paths {
            let x = band_limited_path(grid, p.modes, seed, hi * p.n_paths + path);
            let c = embedding_check(&x);
            t.push(format!(
                "{horizon},{path},{},{},{},{}",
                num(c.sup_norm),
                num(c.h_norm),
                num(embedding_constant(horizon) * c.h_norm),
                c.constant_ok
            ));
        }
    }
    Ok(vec![t])
}

/// Smooth test path of the reproducing check.
pub fn riesz_test_path(grid: TimeGrid) -> SobolevPath {
    SobolevPath::from_fn(grid, |s| (3.0 * s).sin() + 0.5 * s * s, |s| 3.0 * (3.0 * s).cos() + s)
}

fn riesz(p: &RieszParams) -> Result<Vec<CsvTable>, CliError> {
    let mut t = CsvTable::new("riesz", "n_s,h,max_error");
    for &n in &p.n_s_list {
        let grid = TimeGrid::new(p.horizon, n)?;
        let x = riesz_test_path(grid);
        let mut err = 0.0_f64;
        for j in 0..=8 {
            let tj = grid.point(j * n / 8);
            let v = riesz_representer(tj, grid)?;
            err = err.max((v.evaluate(&x)? - x.values()[j * n / 8]).abs());
        }
        t.push(format!("{n},{},{}", num(grid.step()), num(err)));
    }
    Ok(vec![t])
}

fn diagonal(p: &DiagonalParams, seed: u64) -> Result<Vec<CsvTable>, CliError> {
    let coeffs = match p.preset.as_str() {
        "smooth-kernel" => presets::smooth_kernel(),
        "markov-study" => study_preset(),
        other => {
            return Err(CliError::Config(format!(
                "unknown preset '{other}' (expected smooth-kernel or markov-study)"
            )))
        }
    };
    let r = diagonal_coupling(&coeffs, p.x0, p.horizon, &p.levels, p.reference, p.n_paths, seed)?;
    let mut t = CsvTable::new("diagonal_coupling", "n_t,step,rms,mse_std_err");
    for (i, &n) in p.levels.iter().enumerate() {
        t.push(format!(
            "{n},{},{},{}",
            num(r.steps[i]),
            num(r.rms[i]),
            num(r.mse_std_err[i])
        ));
    }
    Ok(vec![t])
}

fn markov(p: &MarkovParams, seed: u64) -> Result<Vec<CsvTable>, CliError> {
    let space = TimeGrid::new(p.horizon, p.n_s)?;
    let time = TimeGrid::new(p.horizon, p.n_t)?;
    let b = basis(p.basis, space)?;
    let x0 = SobolevPath::constant(space, p.x0);
    let study = convergence_study(&study_preset(), &b, &x0, time, &p.n_list, p.n_paths, seed)?;
    let mut main = Vec::new();
    study.write_csv(&mut main).expect("writing to memory");
    let mut detail = Vec::new();
    study.write_detail_csv(&mut detail).expect("writing to memory");
    Ok(vec![
        CsvTable::from_text("markov", &String::from_utf8_lossy(&main)),
        CsvTable::from_text("markov_detail", &String::from_utf8_lossy(&detail)),
    ])
}

fn lq(p: &LqParams, seed: u64) -> Result<Vec<CsvTable>, CliError> {
    let phi = Kernel::preset(&p.phi)?;
    phi.probe(p.horizon, 1e-6)?;
    let grid = TimeGrid::new(p.horizon, p.n_grid)?;
    let field = solve_riccati(&phi, grid, p.cap)?;
    let x0 = SobolevPath::constant(grid, p.x0);
    let value = field.value(0, x0.values());
    let fine_grid = TimeGrid::new(p.horizon, 2 * p.n_grid)?;
    let fine = solve_riccati(&phi, fine_grid, p.cap)?;
    let value_fine = fine.value(0, SobolevPath::constant(fine_grid, p.x0).values());

    let mut riccati = Vec::new();
    field.write_csv(&mut riccati).expect("writing to memory");

    let mut t = CsvTable::new("lq_validation", "policy,mean,std_err");
    t.push(format!("riccati_n{},{},{}", p.n_grid, num(value), num(0.0)));
    t.push(format!("riccati_n{},{},{}", 2 * p.n_grid, num(value_fine), num(0.0)));
    let base = mc_rewards(
        &phi,
        &RiccatiPolicy {
            field: &field,
            gain: 1.0,
        },
        &x0,
        p.n_paths,
        seed,
    )?;
    let e = Estimate::from_samples(&base);
    t.push(format!("feedback,{},{}", num(e.mean), num(e.std_err)));
    for &g in &p.gains {
        let r = mc_rewards(&phi, &RiccatiPolicy { field: &field, gain: g }, &x0, p.n_paths, seed)?;
        let e = Estimate::from_samples(&r);
        t.push(format!("gain_{g},{},{}", num(e.mean), num(e.std_err)));
        let d = Estimate::paired_difference(&r, &base);
        t.push(format!("gain_{g}_minus_feedback,{},{}", num(d.mean), num(d.std_err)));
    }
    Ok(vec![
        CsvTable::from_text("riccati", &String::from_utf8_lossy(&riccati)),
        t,
    ])
}

/// Non-constant initial curve for the residual sweep.
pub fn starter_test_path(grid: TimeGrid, x0: f64) -> SobolevPath {
    SobolevPath::from_fn(grid, |s| x0 * (1.0 + 0.5 * s.sin()), |s| 0.5 * x0 * s.cos())
}

fn starter(p: &StarterParams, seed: u64) -> Result<Vec<CsvTable>, CliError> {
    let x = SobolevPath::constant(TimeGrid::new(p.horizon, p.n_s)?, p.x0);
    let r = starter_check(&x, p.n_t, p.n_paths, seed)?;
    let mut t = CsvTable::new("starter", "closed_form,mc_mean,mc_std_err,n_paths");
    t.push(format!(
        "{},{},{},{}",
        num(r.closed_form),
        num(r.mc.mean),
        num(r.mc.std_err),
        r.mc.n
    ));
    let mut res = CsvTable::new("starter_residual", "n_s,h,residual");
    for &n in &p.residual_levels {
        let g = TimeGrid::new(p.horizon, n)?;
        res.push(format!(
            "{n},{},{}",
            num(g.step()),
            num(starter_residual(&starter_test_path(g, p.x0)))
        ));
    }
    Ok(vec![t, res])
}

fn bsde_run(p: &BsdeParams, seed: u64) -> Result<Vec<CsvTable>, CliError> {
    let problem = bsde::presets::by_name(&p.preset, p.n_t, p.n_s)?;
    let reg = RegressionConfig {
        degree: p.reg_degree,
        n_coeffs: p.n_coeffs,
    };
    let sol = bsde::solve_bsde(&problem, p.n_paths, seed, reg)?;
    let mut report = Vec::new();
    sol.write_csv(&mut report).expect("writing to memory");
    let mut t = CsvTable::new("bsde_comparison", "policy,control,mean,std_err");
    t.push(format!("bsde,,{},{}", num(sol.y0), num(sol.y0_std_err)));
    for &a in &problem.spec.controls {
        let e = bsde::fixed_control_value(&problem, a, p.n_paths, seed.wrapping_add(1))?;
        t.push(format!("fixed,{a},{},{}", num(e.mean), num(e.std_err)));
    }
    let g = bsde::greedy_value(&problem, &sol, p.n_paths, seed.wrapping_add(2))?;
    t.push(format!("greedy,,{},{}", num(g.mean), num(g.std_err)));
    Ok(vec![
        CsvTable::from_text("bsde_report", &String::from_utf8_lossy(&report)),
        t,
    ])
}

fn discount(betas: &[f64], rhos: &[f64]) -> Result<DiscountSpec, CliError> {
    Ok(DiscountSpec::new(betas.to_vec(), rhos.to_vec())?)
}

fn contract_span(p: &ContractSpanParams, seed: u64) -> Result<Vec<CsvTable>, CliError> {
    let spec = discount(&p.betas, &p.rhos)?;
    let space = TimeGrid::new(p.horizon, p.n_s)?;
    let time = TimeGrid::new(p.horizon, p.n_t)?;
    let phi = phi_basis(&spec, space)?;
    let mut gram = CsvTable::new("phi_gram", "i,j,gram");
    for i in 0..spec.len() {
        for j in 0..spec.len() {
            gram.push(format!("{i},{j},{}", num(phi.gram[(i, j)])));
        }
    }
    gram.push(format!("min_eigenvalue,,{}", num(phi.min_eigenvalue())));

    let ctrl = AdmissibleControl::new(&spec, p.horizon, p.zeta, p.lambda0);
    let reduced = simulate_reduced(&spec, &ctrl.rule(), &quadratic_cost(), &ctrl.y0, time, p.n_paths, seed)?;
    let assembled = span_residual(&assemble_sheets(&reduced, &spec, space), &spec, space)?;

    let y0_vals: Vec<f64> = space
        .points()
        .iter()
        .map(|&s| (0..spec.len()).map(|k| spec.phi(k, s) * ctrl.y0[k]).sum())
        .collect();
    let y0 = SobolevPath::from_samples(space, y0_vals)?;
    let none = ControlPath::none();
    let lifted_residual = |injection: f64| -> Result<f64, LabError> {
        let coeffs = lifted_coefficients(&spec, p.horizon, p.zeta, injection, quadratic_cost());
        let ens = simulate_lifted(&coeffs, &none, &y0, time, p.n_paths, seed)?;
        span_residual(ens.sheets().expect("lifted ensemble keeps sheets"), &spec, space)
    };
    let in_span = lifted_residual(0.0)?;
    let injected = lifted_residual(p.injection)?;

    let mut t = CsvTable::new("contract_span", "case,residual,threshold,ok");
    t.push(format!(
        "reduced-assembly,{},{},{}",
        num(assembled),
        num(1e-10),
        assembled <= 1e-10
    ));
    t.push(format!(
        "lifted-in-span,{},{},{}",
        num(in_span),
        num(1e-10),
        in_span <= 1e-10
    ));
    t.push(format!(
        "orthogonal-injection,{},{},{}",
        num(injected),
        num(p.margin),
        injected > p.margin
    ));
    Ok(vec![t, gram])
}

fn contract_target(p: &ContractTargetParams, seed: u64) -> Result<Vec<CsvTable>, CliError> {
    let spec = discount(&p.betas, &p.rhos)?;
    let line = TargetLine::new(&spec, p.horizon);
    let ctrl = AdmissibleControl::new(&spec, p.horizon, p.zeta, p.lambda0);
    let mut t = CsvTable::new("contract_target", "n_t,dt,mean_distance,max_distance");
    for &n in &p.levels {
        let grid = TimeGrid::new(p.horizon, n)?;
        let ens = simulate_reduced(&spec, &ctrl.rule(), &quadratic_cost(), &ctrl.y0, grid, p.n_paths, seed)?;
        let d = target_distance(&ens, &line)?;
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let max = d.iter().copied().fold(0.0, f64::max);
        t.push(format!("{n},{},{},{}", num(grid.step()), num(mean), num(max)));
    }
    Ok(vec![t])
}

fn gram(p: &GramParams) -> Result<Vec<CsvTable>, CliError> {
    let grid = TimeGrid::new(p.horizon, p.n_s)?;
    let probes: Vec<f64> = (0..=p.n_probes)
        .map(|i| p.horizon * i as f64 / p.n_probes as f64)
        .collect();
    let rows = gram_impossibility(&probes, grid)?;
    let mut t = CsvTable::new("gram", "t,det,det_exact");
    for (tp, d) in rows {
        t.push(format!(
            "{tp},{},{}",
            num(d),
            num(gram_determinant_exact(p.horizon, tp))
        ));
    }
    Ok(vec![t])
}
