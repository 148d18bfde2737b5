//! Weak formulation with uncontrolled volatility: the value is `Y_0` for the
//! backward SDE `Y_t = G(X_T) + ∫_t^T H_r(X_r, Z_r) dr - ∫_t^T Z_r dW_r`,
//! with `H_t(x, z) = sup_a { z θ_t(x, a) + F_t(x, a) }` and `X` the lifted
//! state under the reference measure (drift `Γ`, volatility `Σ`).
//!
//! The backward equation is solved by least-squares Monte Carlo on
//! polynomial features of a state summary: the diagonal value and the first
//! basis coefficients of the lifted state.

use std::io::{self, Write};
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::rng::brownian_increments;
use crate::sobolev::{basis, central_differences, SobolevPath, TimeGrid};
use crate::stats::Estimate;
use crate::volterra::{lifted_path, Coefficient, CoefficientSet, ControlPath, Policy, StateView};

/// `(t, diagonal value, a) -> value`.
pub type ControlRule = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// `(t, diagonal value, z) -> a`.
pub type ArgmaxRule = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct HamiltonianSpec {
    pub theta: ControlRule,
    pub running: ControlRule,
    pub controls: Vec<f64>,
    /// Declared bound on `|θ|`.
    pub theta_bound: f64,
    pub argmax: Option<ArgmaxRule>,
}

impl std::fmt::Debug for HamiltonianSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HamiltonianSpec")
            .field("controls", &self.controls)
            .field("theta_bound", &self.theta_bound)
            .finish()
    }
}

impl HamiltonianSpec {
    pub fn new(
        theta: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        running: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        controls: Vec<f64>,
        theta_bound: f64,
    ) -> Result<Self> {
        if controls.is_empty() {
            return Err(LabError::Domain("control grid must not be empty".into()));
        }
        Ok(Self {
            theta: Arc::new(theta),
            running: Arc::new(running),
            controls,
            theta_bound,
            argmax: None,
        })
    }

    /// Maximum of `zθ + F` over the control grid; ties go to the first index.
    pub fn hamiltonian(&self, t: f64, x: f64, z: f64) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, self.controls[0]);
        for &a in &self.controls {
            let v = z * (self.theta)(t, x, a) + (self.running)(t, x, a);
            if v > best.0 {
                best = (v, a);
            }
        }
        best
    }

    fn maximiser(&self, t: f64, x: f64, z: f64) -> f64 {
        match &self.argmax {
            Some(psi) => psi(t, x, z),
            None => self.hamiltonian(t, x, z).1,
        }
    }

    /// Probes `|θ| <= M` on the control grid.
    pub fn check(&self, horizon: f64) -> Result<()> {
        for i in 0..=8 {
            let t = horizon * i as f64 / 8.0;
            for x in [-3.0, -1.0, 0.0, 1.0, 3.0] {
                for &a in &self.controls {
                    let th = (self.theta)(t, x, a);
                    if !th.is_finite() || th.abs() > self.theta_bound {
                        return Err(LabError::Coefficient(format!(
                            "|theta({t}, {x}, {a})| = {} exceeds the declared bound {}",
                            th.abs(),
                            self.theta_bound
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Control problem in weak formulation.
#[derive(Clone)]
pub struct BsdeProblem {
    pub spec: HamiltonianSpec,
    /// Reference dynamics: drift `Γ` and volatility `Σ`, both control-free.
    pub base: CoefficientSet,
    /// Terminal reward as a function of the terminal diagonal value.
    pub terminal: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub x0: SobolevPath,
    pub n_t: usize,
}

impl std::fmt::Debug for BsdeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BsdeProblem")
            .field("spec", &self.spec)
            .field("n_t", &self.n_t)
            .finish()
    }
}

impl BsdeProblem {
    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.x0.grid().horizon(), self.n_t)
    }

    /// Controlled drift `Γ + Σ θ(·, a)` with the same volatility.
    pub fn controlled_coefficients(&self) -> CoefficientSet {
        let (g, gd) = (self.base.drift.diag.clone(), self.base.drift.diag_ds.clone());
        let (s, sd) = (self.base.vol.diag.clone(), self.base.vol.diag_ds.clone());
        let (th1, th2) = (self.spec.theta.clone(), self.spec.theta.clone());
        CoefficientSet::new(
            Coefficient::diagonal(
                move |t, u, x, a| g(t, u, x, 0.0) + s(t, u, x, 0.0) * th1(t, x, a),
                move |t, u, x, a| gd(t, u, x, 0.0) + sd(t, u, x, 0.0) * th2(t, x, a),
            ),
            self.base.vol.clone(),
        )
    }

    fn validate(&self) -> Result<()> {
        if !self.base.is_volterra_form() {
            return Err(LabError::Coefficient(
                "reference dynamics must depend on the diagonal only".into(),
            ));
        }
        self.spec.check(self.x0.grid().horizon())
    }
}

/// Regression set-up: total polynomial degree and number of basis
/// coefficients (beyond the constant member) in the state summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionConfig {
    pub degree: usize,
    pub n_coeffs: usize,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self { degree: 2, n_coeffs: 4 }
    }
}

/// Maps a lifted state to `(diagonal, <x, e_1>, ..., <x, e_m>)`.
#[derive(Debug, Clone)]
struct Summariser {
    h: f64,
    value_weights: Vec<Vec<f64>>,
    deriv_weights: Vec<Vec<f64>>,
}

impl Summariser {
    fn new(space: TimeGrid, n_coeffs: usize) -> Result<Self> {
        let b = basis(n_coeffs + 1, space)?;
        let w = space.trapezoid_weights();
        let pick = |f: fn(&SobolevPath) -> &[f64]| -> Vec<Vec<f64>> {
            b.members()[1..]
                .iter()
                .map(|e| f(e).iter().zip(&w).map(|(v, w)| v * w).collect())
                .collect()
        };
        Ok(Self {
            h: space.step(),
            value_weights: pick(SobolevPath::values),
            deriv_weights: pick(SobolevPath::derivs),
        })
    }

    fn summary(&self, diagonal: f64, sheet: &[f64]) -> Vec<f64> {
        let d = central_differences(sheet, self.h);
        let mut out = Vec::with_capacity(1 + self.value_weights.len());
        out.push(diagonal);
        for (vw, dw) in self.value_weights.iter().zip(&self.deriv_weights) {
            let a: f64 = vw.iter().zip(sheet).map(|(w, v)| w * v).sum();
            let b: f64 = dw.iter().zip(&d).map(|(w, v)| w * v).sum();
            out.push(a + b);
        }
        out
    }
}

/// Monomials of total degree `1..=degree` (the constant is added separately).
fn monomials(u: &[f64], degree: usize) -> Vec<f64> {
    fn rec(u: &[f64], start: usize, left: usize, acc: f64, out: &mut Vec<f64>) {
        for j in start..u.len() {
            let v = acc * u[j];
            out.push(v);
            if left > 1 {
                rec(u, j, left - 1, v, out);
            }
        }
    }
    let mut out = Vec::new();
    if degree > 0 {
        rec(u, 0, degree, 1.0, &mut out);
    }
    out
}

/// Least-squares fit on standardised features, solved through the
/// eigen-decomposition of the Gram matrix with a relative cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFit {
    mean: Vec<f64>,
    scale: Vec<f64>,
    beta_y: Vec<f64>,
    beta_z: Vec<f64>,
    pub rank: usize,
    pub n_features: usize,
    pub residual_y: f64,
    pub residual_z: f64,
}

impl StepFit {
    fn design_row(&self, raw: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(raw.len() + 1);
        row.push(1.0);
        for ((v, m), s) in raw.iter().zip(&self.mean).zip(&self.scale) {
            row.push(if *s > 0.0 { (v - m) / s } else { 0.0 });
        }
        row
    }

    fn predict(&self, raw: &[f64]) -> (f64, f64) {
        let row = self.design_row(raw);
        let y = row.iter().zip(&self.beta_y).map(|(a, b)| a * b).sum();
        let z = row.iter().zip(&self.beta_z).map(|(a, b)| a * b).sum();
        (y, z)
    }
}

const RANK_CUTOFF: f64 = 1e-10;

fn fit_step(step: usize, raw: &[Vec<f64>], ty: &[f64], tz: &[f64]) -> Result<StepFit> {
    let n = raw.len();
    let p = raw[0].len();
    let nf = n as f64;
    let mut mean = vec![0.0; p];
    for r in raw {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= nf;
    }
    let mut scale = vec![0.0; p];
    for r in raw {
        for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    for (s, m) in scale.iter_mut().zip(&mean) {
        let sd = (*s / nf).sqrt();
        *s = if sd > 1e-12 * (1.0 + m.abs()) { sd } else { 0.0 };
    }
    let mut fit = StepFit {
        mean,
        scale,
        beta_y: Vec::new(),
        beta_z: Vec::new(),
        rank: 0,
        n_features: p + 1,
        residual_y: 0.0,
        residual_z: 0.0,
    };
    let q = p + 1;
    let mut gram = DMatrix::<f64>::zeros(q, q);
    let mut rhs_y = DVector::<f64>::zeros(q);
    let mut rhs_z = DVector::<f64>::zeros(q);
    let rows: Vec<Vec<f64>> = raw.iter().map(|r| fit.design_row(r)).collect();
    for ((row, y), z) in rows.iter().zip(ty).zip(tz) {
        for a in 0..q {
            rhs_y[a] += row[a] * y;
            rhs_z[a] += row[a] * z;
            for b in a..q {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    gram /= nf;
    rhs_y /= nf;
    rhs_z /= nf;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.amax();
    if !top.is_finite() {
        return Err(LabError::Regression {
            step,
            reason: "non-finite Gram matrix".into(),
        });
    }
    let mut pinv = DMatrix::<f64>::zeros(q, q);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > RANK_CUTOFF * top {
            fit.rank += 1;
            let v = eig.eigenvectors.column(k);
            pinv += (v * v.transpose()) / lam;
        }
    }
    let by = &pinv * rhs_y;
    let bz = &pinv * rhs_z;
    fit.beta_y = by.iter().copied().collect();
    fit.beta_z = bz.iter().copied().collect();
    let (mut ry, mut rz) = (0.0, 0.0);
    for ((row, y), z) in rows.iter().zip(ty).zip(tz) {
        let fy: f64 = row.iter().zip(&fit.beta_y).map(|(a, b)| a * b).sum();
        let fz: f64 = row.iter().zip(&fit.beta_z).map(|(a, b)| a * b).sum();
        ry += (y - fy).powi(2);
        rz += (z - fz).powi(2);
    }
    fit.residual_y = ry / nf;
    fit.residual_z = rz / nf;
    if !(fit.residual_y.is_finite() && fit.residual_z.is_finite()) {
        return Err(LabError::Regression {
            step,
            reason: "non-finite residual".into(),
        });
    }
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    pub y0: f64,
    /// Standard error of the pathwise estimator
    /// `G + Σ H(Z) h - Σ Z ΔW`, whose mean is the same `Y_0`.
    pub y0_std_err: f64,
    pub y_paths: Vec<Vec<f64>>,
    pub z_paths: Vec<Vec<f64>>,
    pub fits: Vec<StepFit>,
    pub config: RegressionConfig,
    pub grid: TimeGrid,
}

impl BsdeSolution {
    /// `Z` predicted from a state summary at step `i`.
    fn z_at(&self, i: usize, raw_summary: &[f64]) -> f64 {
        let feats = monomials(raw_summary, self.config.degree);
        self.fits[i].predict(&feats).1
    }

    /// `step,t,rank,n_features,residual_y,residual_z`
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "step,t,y0,y0_se,rank,n_features,residual_y,residual_z")?;
        for (i, f) in self.fits.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{:.12e},{:.12e},{},{},{:.12e},{:.12e}",
                self.grid.point(i),
                self.y0,
                self.y0_std_err,
                f.rank,
                f.n_features,
                f.residual_y,
                f.residual_z
            )?;
        }
        Ok(())
    }
}

/// Diagonal and summary of every path at every time node.
struct ForwardRun {
    diag: Vec<f64>,
    summaries: Vec<Vec<f64>>,
    dw: Vec<f64>,
}

pub fn solve_bsde(problem: &BsdeProblem, n_paths: usize, seed: u64, reg: RegressionConfig) -> Result<BsdeSolution> {
    problem.validate()?;
    if n_paths < 2 {
        return Err(LabError::Domain("the regression needs at least two paths".into()));
    }
    let grid = problem.time_grid()?;
    let n = grid.intervals();
    let h = grid.step();
    let summariser = Summariser::new(*problem.x0.grid(), reg.n_coeffs)?;
    let none = ControlPath::none();
    let runs: Vec<ForwardRun> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let dw = brownian_increments(seed, p, n, h);
            let mut summaries = Vec::with_capacity(n + 1);
            let space = *problem.x0.grid();
            let times = grid.points();
            let run = lifted_path(&problem.base, &none, &problem.x0, &grid, &dw, p, &mut |i, sheet| {
                let d = space.interpolate(sheet, times[i]);
                summaries.push(monomials(&summariser.summary(d, sheet), reg.degree));
            })?;
            Ok(ForwardRun {
                diag: run.diagonal,
                summaries,
                dw,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let spec = &problem.spec;
    let mut y: Vec<Vec<f64>> = vec![vec![0.0; n + 1]; n_paths];
    let mut z: Vec<Vec<f64>> = vec![vec![0.0; n + 1]; n_paths];
    // pathwise estimator of Y_0, accumulated backwards
    let mut pathwise: Vec<f64> = Vec::with_capacity(n_paths);
    for (p, r) in runs.iter().enumerate() {
        let g = (problem.terminal)(r.diag[n]);
        if !g.is_finite() {
            return Err(LabError::NonFinite { path: p, step: n });
        }
        y[p][n] = g;
        pathwise.push(g);
    }
    let mut fits = vec![None; n];
    for i in (0..n).rev() {
        let t = grid.point(i);
        let raw: Vec<Vec<f64>> = runs.iter().map(|r| r.summaries[i].clone()).collect();
        let ty: Vec<f64> = y.iter().map(|row| row[i + 1]).collect();
        let tz: Vec<f64> = y.iter().zip(&runs).map(|(row, r)| row[i + 1] * r.dw[i] / h).collect();
        let fit = fit_step(i, &raw, &ty, &tz)?;
        for (p, r) in runs.iter().enumerate() {
            let (ey, zi) = fit.predict(&r.summaries[i]);
            let (hv, _) = spec.hamiltonian(t, r.diag[i], zi);
            let yi = ey + hv * h;
            if !yi.is_finite() {
                return Err(LabError::NonFinite { path: p, step: i });
            }
            y[p][i] = yi;
            z[p][i] = zi;
            pathwise[p] += hv * h - zi * r.dw[i];
        }
        fits[i] = Some(fit);
    }
    let fits: Vec<StepFit> = fits.into_iter().map(|f| f.expect("every step fitted")).collect();
    // the initial state is deterministic, so step 0 is always degenerate
    let reduced: Vec<usize> = (1..n).filter(|&i| fits[i].rank < fits[i].n_features).collect();
    if let Some(&first) = reduced.first() {
        warn!(
            "regression basis reduced at {} of {} steps (first: step {first}, rank {} of {})",
            reduced.len(),
            n - 1,
            fits[first].rank,
            fits[first].n_features
        );
    }
    let y0 = y.iter().map(|row| row[0]).sum::<f64>() / n_paths as f64;
    let y0_std_err = Estimate::from_samples(&pathwise).std_err;
    Ok(BsdeSolution {
        y0,
        y0_std_err,
        y_paths: y,
        z_paths: z,
        fits,
        config: reg,
        grid,
    })
}

fn rewards(problem: &BsdeProblem, policy: &dyn Policy, n_paths: usize, seed: u64) -> Result<Estimate> {
    let grid = problem.time_grid()?;
    let n = grid.intervals();
    let h = grid.step();
    let coeffs = problem.controlled_coefficients();
    let samples = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let dw = brownian_increments(seed, p, n, h);
            let run = lifted_path(&coeffs, policy, &problem.x0, &grid, &dw, p, &mut |_, _| {})?;
            let running: f64 = run
                .controls
                .iter()
                .enumerate()
                .map(|(i, &a)| (problem.spec.running)(grid.point(i), run.diagonal[i], a))
                .sum();
            Ok(running * h + (problem.terminal)(run.diagonal[n]))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(&samples))
}

/// `E[∫ F(a) dt + G(X_T)]` with the drift change applied pathwise.
pub fn fixed_control_value(problem: &BsdeProblem, a: f64, n_paths: usize, seed: u64) -> Result<Estimate> {
    problem.validate()?;
    let lo = problem.spec.controls.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = problem.spec.controls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo..=hi).contains(&a) {
        return Err(LabError::Domain(format!("control {a} outside [{lo}, {hi}]")));
    }
    let bx = crate::volterra::ControlBox::new(lo, hi)?;
    rewards(problem, &ControlPath::constant(a, bx)?, n_paths, seed)
}

/// Control `ψ(t, x, Z_t)` with `Z_t` read off the fitted regressions.
pub struct GreedyPolicy<'a> {
    problem: &'a BsdeProblem,
    solution: &'a BsdeSolution,
    summariser: Summariser,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(problem: &'a BsdeProblem, solution: &'a BsdeSolution) -> Result<Self> {
        Ok(Self {
            problem,
            solution,
            summariser: Summariser::new(*problem.x0.grid(), solution.config.n_coeffs)?,
        })
    }
}

impl Policy for GreedyPolicy<'_> {
    fn control(&self, state: &StateView<'_>) -> f64 {
        let sheet = state.sheet.expect("greedy policy needs the lifted state");
        let raw = self.summariser.summary(state.diagonal, sheet);
        let z = self.solution.z_at(state.step, &raw);
        self.problem.spec.maximiser(state.t, state.diagonal, z)
    }
}

/// Value of the greedy policy extracted from a solved backward equation.
pub fn greedy_value(problem: &BsdeProblem, solution: &BsdeSolution, n_paths: usize, seed: u64) -> Result<Estimate> {
    let policy = GreedyPolicy::new(problem, solution)?;
    rewards(problem, &policy, n_paths, seed)
}

/// Ready-made problems.
pub mod presets {
    use super::*;

    /// Exponential kernel `K(u) = e^{-u}`, `Γ = 0`, `Σ = K(s - t)`, `θ = a`,
    /// `F = -a^2/2`, `G(x) = -(x - 1)^2/2`, `x0 = 0`, horizon 1.
    pub fn exp_kernel(controls: Vec<f64>, n_t: usize, n_s: usize) -> Result<BsdeProblem> {
        let bound = controls.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
        Ok(BsdeProblem {
            spec: HamiltonianSpec::new(|_, _, a| a, |_, _, a| -0.5 * a * a, controls, bound.max(1.0))?,
            base: crate::volterra::presets::additive_kernel(|u| (-u).exp(), |u| -(-u).exp()),
            terminal: Arc::new(|x| -0.5 * (x - 1.0).powi(2)),
            x0: SobolevPath::zeros(TimeGrid::new(1.0, n_s)?),
            n_t,
        })
    }

    /// `m` equally spaced points on `[lo, hi]`.
    pub fn control_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
        if m == 1 {
            return vec![lo];
        }
        let d = (m - 1) as f64;
        (0..m).map(|i| (lo * (d - i as f64) + hi * i as f64) / d).collect()
    }

    pub fn by_name(name: &str, n_t: usize, n_s: usize) -> Result<BsdeProblem> {
        match name {
            "exp-kernel" => exp_kernel(control_grid(-1.0, 1.0, 11), n_t, n_s),
            "exp-kernel-single" => exp_kernel(vec![0.5], n_t, n_s),
            other => Err(LabError::Domain(format!(
                "unknown BSDE preset '{other}' (expected exp-kernel or exp-kernel-single)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_spec(controls: Vec<f64>) -> HamiltonianSpec {
        HamiltonianSpec::new(|_, _, a| a, |_, _, _| 0.0, controls, 1.0).unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        let zero_theta =
            HamiltonianSpec::new(|_, _, _| 0.0, |_, _, a| -(a - 0.2).powi(2), vec![-1.0, 0.0, 0.5], 1.0).unwrap();
        for z in [-3.0, 0.0, 2.0] {
            let (v, a) = zero_theta.hamiltonian(0.0, 0.0, z);
            assert!((v + 0.04).abs() < 1e-12);
            assert_eq!(a, 0.0);
        }
        let s = grid_spec(presets::control_grid(-1.0, 1.0, 11));
        for z in [-2.0, -0.3, 0.7] {
            let (v, a) = s.hamiltonian(0.0, 0.0, z);
            assert!((v - z.abs()).abs() < 1e-12);
            assert_eq!(a, z.signum());
        }
        // tie at z = 0: first grid point wins
        assert_eq!(s.hamiltonian(0.0, 0.0, 0.0).1, -1.0);
        let single = grid_spec(vec![0.3]);
        assert_eq!(single.hamiltonian(0.0, 0.0, 2.0), (0.6, 0.3));
        assert!(HamiltonianSpec::new(|_, _, a| a, |_, _, _| 0.0, vec![], 1.0).is_err());
    }

    #[test]
    fn theta_bound_is_probed() {
        let s = HamiltonianSpec::new(|_, _, a| 10.0 * a, |_, _, _| 0.0, vec![1.0], 1.0).unwrap();
        assert!(s.check(1.0).is_err());
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(&[2.0, 3.0], 2), vec![2.0, 4.0, 6.0, 3.0, 9.0]);
        assert_eq!(monomials(&[1.0; 5], 2).len(), 20);
        assert_eq!(monomials(&[1.0; 5], 1).len(), 5);
    }

    #[test]
    fn deterministic_driver_integrates_exactly() {
        let mut pb = presets::exp_kernel(vec![0.0], 20, 16).unwrap();
        pb.spec = HamiltonianSpec::new(|_, _, _| 0.0, |t, _, _| 2.0 * t, vec![0.0], 1.0).unwrap();
        pb.terminal = Arc::new(|_| 1.5);
        let sol = solve_bsde(&pb, 200, 3, RegressionConfig::default()).unwrap();
        // left-point sum of 2t on 20 steps: 1 - h
        assert!((sol.y0 - (1.5 + 1.0 - 0.05)).abs() < 1e-9, "{}", sol.y0);
        assert!(sol.y_paths.iter().all(|r| r.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn martingale_terminal_value() {
        let mut pb = presets::exp_kernel(vec![0.0], 20, 16).unwrap();
        pb.spec = HamiltonianSpec::new(|_, _, _| 0.0, |_, _, _| 0.0, vec![0.0], 1.0).unwrap();
        pb.terminal = Arc::new(|x| x);
        let sol = solve_bsde(&pb, 4000, 5, RegressionConfig::default()).unwrap();
        assert!(sol.y0.abs() < 3.0 * sol.y0_std_err, "{} ± {}", sol.y0, sol.y0_std_err);
        for (p, row) in sol.y_paths.iter().enumerate().take(5) {
            assert!(row[20].is_finite(), "path {p}");
        }
    }

    #[test]
    fn zero_reward_fixed_value() {
        let mut pb = presets::exp_kernel(vec![-1.0, 1.0], 10, 8).unwrap();
        pb.spec = HamiltonianSpec::new(|_, _, a| a, |_, _, _| 0.0, vec![-1.0, 1.0], 1.0).unwrap();
        pb.terminal = Arc::new(|_| 0.0);
        let e = fixed_control_value(&pb, 0.5, 50, 1).unwrap();
        assert_eq!(e.mean, 0.0);
        assert!(fixed_control_value(&pb, 2.0, 50, 1).is_err());
    }

    #[test]
    fn theta_zero_makes_control_irrelevant() {
        let mut pb = presets::exp_kernel(vec![-1.0, 1.0], 10, 8).unwrap();
        pb.spec = HamiltonianSpec::new(|_, _, _| 0.0, |_, _, _| 0.0, vec![-1.0, 1.0], 1.0).unwrap();
        let a = fixed_control_value(&pb, -1.0, 500, 2).unwrap();
        let b = fixed_control_value(&pb, 1.0, 500, 2).unwrap();
        assert_eq!(a.mean, b.mean);
    }
}
