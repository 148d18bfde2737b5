//! Finite-dimensional Markovian approximation of the lifted dynamics.
//!
//! Writing `X_t = Σ_k X^k_t e_k` and `X^t_t = Σ_k v^k_t X^k_t` with
//! `v^k_t = <v_t, e_k>`, the diagonal solves
//! `dX^0 = Σ_k (∂_t v^k X^k + v^k b^k(X^0)) dt + Σ_k v^k σ^k(X^0) dW`
//! and every component solves `dX^k = b^k(X^0) dt + σ^k(X^0) dW`.
//! Truncating the sums at `n` terms gives an `(n+1)`-dimensional SDE.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::rng::brownian_increments;
use crate::sobolev::{green_dt, green_dt_ds, inner_product, riesz_representer, BasisSet, SobolevPath, TimeGrid};
use crate::stats::Estimate;
use crate::volterra::{lifted_path, CoefficientSet, ControlPath, EnsembleData, PathEnsemble};

/// `v^k_t` and `∂_t v^k_t` tabulated on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresenterCoefficients {
    grid: TimeGrid,
    v: Vec<Vec<f64>>,
    v_dot: Vec<Vec<f64>>,
}

impl RepresenterCoefficients {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn basis_len(&self) -> usize {
        self.v[0].len()
    }

    /// `(v_t, ∂_t v_t)` at time index `i`.
    pub fn at(&self, i: usize) -> (&[f64], &[f64]) {
        (&self.v[i], &self.v_dot[i])
    }

    /// Largest gap between the analytic `∂_t v^k` and centred differences of
    /// `v^k` at interior time nodes.
    pub fn derivative_check(&self) -> f64 {
        let h = self.grid.step();
        let mut worst = 0.0_f64;
        for i in 1..self.grid.intervals() {
            for k in 0..self.basis_len() {
                let fd = (self.v[i + 1][k] - self.v[i - 1][k]) / (2.0 * h);
                worst = worst.max((fd - self.v_dot[i][k]).abs());
            }
        }
        worst
    }
}

/// Tabulates `<v_t, e_k>` by quadrature against the closed-form representer
/// and `<∂_t v_t, e_k>` from the analytic `t`-derivative of the kernel.
/// Time nodes should be space nodes, otherwise the kinks of `v_t` cost a
/// quadrature order.
pub fn representer_coeffs(basis: &BasisSet, grid: TimeGrid) -> Result<RepresenterCoefficients> {
    let space = *basis.grid();
    if (space.horizon() - grid.horizon()).abs() > 1e-12 * grid.horizon() {
        return Err(LabError::Dimension(format!(
            "basis horizon {} differs from time horizon {}",
            space.horizon(),
            grid.horizon()
        )));
    }
    let horizon = grid.horizon();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = grid
        .points()
        .into_par_iter()
        .map(|t| {
            let rep = riesz_representer(t, space)?.rep;
            let drep = SobolevPath::from_fn(space, |s| green_dt(horizon, t, s), |s| green_dt_ds(horizon, t, s));
            let v = basis.project(&rep)?;
            // the unit jump of ∂_t v_t at s = t puts a Dirac mass into its
            // s-derivative, which pairs with e_k'(t)
            let v_dot = basis
                .members()
                .iter()
                .map(|e| Ok(inner_product(&drep, e)? + space.interpolate(e.derivs(), t)))
                .collect::<Result<Vec<_>>>()?;
            Ok((v, v_dot))
        })
        .collect::<Result<Vec<_>>>()?;
    let (v, v_dot) = rows.into_iter().unzip();
    Ok(RepresenterCoefficients { grid, v, v_dot })
}

/// Projections `b^k(t, x) = <b_t(·, x), e_k>` and `σ^k(t, x)` of
/// diagonal-only coefficients, plus the initial components `x_k`.
#[derive(Clone)]
pub struct ProjectedCoefficients {
    coeffs: CoefficientSet,
    points: Vec<f64>,
    /// `w_j e_k(s_j)` and `w_j e_k'(s_j)` with trapezoidal weights `w_j`.
    value_weights: Vec<Vec<f64>>,
    deriv_weights: Vec<Vec<f64>>,
    pub x_k: Vec<f64>,
}

impl std::fmt::Debug for ProjectedCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProjectedCoefficients")
            .field("basis_len", &self.value_weights.len())
            .field("x_k", &self.x_k)
            .finish()
    }
}

pub fn project_coefficients(
    coeffs: &CoefficientSet,
    basis: &BasisSet,
    x0: &SobolevPath,
) -> Result<ProjectedCoefficients> {
    if !coeffs.is_volterra_form() {
        return Err(LabError::Coefficient(
            "the Markovian approximation needs coefficients depending on the diagonal only".into(),
        ));
    }
    let x_k = basis.project(x0)?;
    let w = basis.grid().trapezoid_weights();
    let value_weights = basis
        .members()
        .iter()
        .map(|e| e.values().iter().zip(&w).map(|(v, w)| v * w).collect())
        .collect();
    let deriv_weights = basis
        .members()
        .iter()
        .map(|e| e.derivs().iter().zip(&w).map(|(v, w)| v * w).collect())
        .collect();
    Ok(ProjectedCoefficients {
        coeffs: coeffs.clone(),
        points: basis.grid().points(),
        value_weights,
        deriv_weights,
        x_k,
    })
}

impl ProjectedCoefficients {
    pub fn basis_len(&self) -> usize {
        self.value_weights.len()
    }

    fn project_into(
        &self,
        n: usize,
        f: &dyn Fn(f64) -> f64,
        df: &dyn Fn(f64) -> f64,
        scratch: &mut (Vec<f64>, Vec<f64>),
        out: &mut [f64],
    ) {
        scratch.0.clear();
        scratch.1.clear();
        scratch.0.extend(self.points.iter().map(|&s| f(s)));
        scratch.1.extend(self.points.iter().map(|&s| df(s)));
        for (k, o) in out.iter_mut().enumerate().take(n) {
            let a: f64 = self.value_weights[k].iter().zip(&scratch.0).map(|(w, p)| w * p).sum();
            let b: f64 = self.deriv_weights[k].iter().zip(&scratch.1).map(|(w, p)| w * p).sum();
            *o = a + b;
        }
    }

    /// First `n` drift projections at `(t, x)`.
    pub fn drift(&self, n: usize, t: f64, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; n];
        let mut scratch = (Vec::new(), Vec::new());
        self.drift_into(n, t, x, &mut scratch, &mut out);
        out
    }

    /// First `n` volatility projections at `(t, x)`.
    pub fn vol(&self, n: usize, t: f64, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; n];
        let mut scratch = (Vec::new(), Vec::new());
        self.vol_into(n, t, x, &mut scratch, &mut out);
        out
    }

    fn drift_into(&self, n: usize, t: f64, x: f64, scratch: &mut (Vec<f64>, Vec<f64>), out: &mut [f64]) {
        let c = &self.coeffs.drift;
        self.project_into(
            n,
            &|s| (c.diag)(t, s, x, 0.0),
            &|s| (c.diag_ds)(t, s, x, 0.0),
            scratch,
            out,
        );
    }

    fn vol_into(&self, n: usize, t: f64, x: f64, scratch: &mut (Vec<f64>, Vec<f64>), out: &mut [f64]) {
        let c = &self.coeffs.vol;
        self.project_into(
            n,
            &|s| (c.diag)(t, s, x, 0.0),
            &|s| (c.diag_ds)(t, s, x, 0.0),
            scratch,
            out,
        );
    }
}

/// State of the truncated system.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedState {
    pub x0: f64,
    pub components: Vec<f64>,
}

/// Euler scheme for the system truncated at `n` terms; returns the diagonal
/// approximation at every time node.
pub fn truncated_path(
    n: usize,
    proj: &ProjectedCoefficients,
    rep: &RepresenterCoefficients,
    increments: &[f64],
    path: usize,
) -> Result<Vec<f64>> {
    if n == 0 || n > proj.basis_len() || n > rep.basis_len() {
        return Err(LabError::Domain(format!(
            "truncation {n} outside 1..={}",
            proj.basis_len().min(rep.basis_len())
        )));
    }
    let grid = rep.grid();
    let h = grid.step();
    let (v0, _) = rep.at(0);
    let mut state = TruncatedState {
        x0: v0[..n].iter().zip(&proj.x_k).map(|(v, x)| v * x).sum(),
        components: proj.x_k[..n].to_vec(),
    };
    let mut out = Vec::with_capacity(grid.len());
    out.push(state.x0);
    let mut scratch = (Vec::new(), Vec::new());
    let mut b = vec![0.0; n];
    let mut s = vec![0.0; n];
    for (i, &dw) in increments.iter().enumerate() {
        let t = grid.point(i);
        proj.drift_into(n, t, state.x0, &mut scratch, &mut b);
        proj.vol_into(n, t, state.x0, &mut scratch, &mut s);
        let (v, v_dot) = rep.at(i);
        let mut dx0 = 0.0;
        for k in 0..n {
            dx0 += (v_dot[k] * state.components[k] + v[k] * b[k]) * h + v[k] * s[k] * dw;
        }
        state.x0 += dx0;
        for k in 0..n {
            state.components[k] += b[k] * h + s[k] * dw;
        }
        if !state.x0.is_finite() || state.components.iter().any(|c| !c.is_finite()) {
            return Err(LabError::NonFinite { path, step: i + 1 });
        }
        out.push(state.x0);
    }
    Ok(out)
}

pub fn simulate_truncated(
    n: usize,
    proj: &ProjectedCoefficients,
    rep: &RepresenterCoefficients,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let grid = *rep.grid();
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let dw = brownian_increments(seed, p, grid.intervals(), grid.step());
            truncated_path(n, proj, rep, &dw, p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        grid,
        space: None,
        seed_base: seed,
        data: EnsembleData::Diagonal(paths),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    /// `E[max_t |X^{0,n}_t - X^t_t|^2]` against the lifted diagonal.
    pub err_sup: Estimate,
    /// Same against the projected reference `Σ_{k<n} v^k_t X^k_t`.
    pub err_bar: Estimate,
    /// `∫ E[(R^n_t)^2] dt` with `R^n` the part of the reference diagonal
    /// outside the first `n` modes.
    pub tail_proxy: f64,
}

impl ConvergenceRow {
    pub fn ratio(&self) -> f64 {
        self.err_sup.mean / self.tail_proxy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    pub n_paths: usize,
    pub seed: u64,
}

impl ConvergenceStudy {
    /// Indices `i` where `err(n_{i+1})` exceeds `err(n_i)` by more than
    /// `band` combined standard errors.
    pub fn monotonicity_violations(&self, band: f64) -> Vec<usize> {
        self.rows
            .windows(2)
            .enumerate()
            .filter(|(_, w)| {
                let (a, b) = (&w[0].err_sup, &w[1].err_sup);
                b.mean > a.mean + band * (a.std_err.powi(2) + b.std_err.powi(2)).sqrt()
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Largest measured `err(n) / tail(n)`.
    pub fn domination_constant(&self) -> f64 {
        self.rows.iter().map(|r| r.ratio()).fold(0.0, f64::max)
    }

    /// `n,err_sup,tail_proxy,ratio,n_paths,seed`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,err_sup,tail_proxy,ratio,n_paths,seed")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.12e},{:.12e},{:.12e},{},{}",
                r.n,
                r.err_sup.mean,
                r.tail_proxy,
                r.ratio(),
                self.n_paths,
                self.seed
            )?;
        }
        Ok(())
    }

    /// Both error notions with standard errors.
    pub fn write_detail_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,err_sup,err_sup_se,err_bar,err_bar_se,tail_proxy")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.n, r.err_sup.mean, r.err_sup.std_err, r.err_bar.mean, r.err_bar.std_err, r.tail_proxy
            )?;
        }
        Ok(())
    }
}

struct PathErrors {
    sup: Vec<f64>,
    sup_bar: Vec<f64>,
    /// `[level][time]` squared tails.
    tail_sq: Vec<Vec<f64>>,
}

/// Truncated systems for every `n` in `n_list`, coupled with a full lifted
/// reference on identical increments and grids.
pub fn convergence_study(
    coeffs: &CoefficientSet,
    basis: &BasisSet,
    x0: &SobolevPath,
    time_grid: TimeGrid,
    n_list: &[usize],
    n_paths: usize,
    seed: u64,
) -> Result<ConvergenceStudy> {
    if n_list.is_empty() {
        return Err(LabError::Domain("n_list must not be empty".into()));
    }
    if let Some(&bad) = n_list.iter().find(|&&n| n == 0 || n > basis.len()) {
        return Err(LabError::Domain(format!(
            "truncation {bad} outside 1..={}",
            basis.len()
        )));
    }
    let proj = project_coefficients(coeffs, basis, x0)?;
    let rep = representer_coeffs(basis, time_grid)?;
    let n_max = basis.len();
    let none = ControlPath::none();
    let h = time_grid.step();

    let per_path: Vec<PathErrors> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let dw = brownian_increments(seed, p, time_grid.intervals(), h);
            let mut comps: Vec<Vec<f64>> = Vec::with_capacity(time_grid.len());
            let space = *x0.grid();
            let wts = &proj;
            let run = lifted_path(coeffs, &none, x0, &time_grid, &dw, p, &mut |_, sheet| {
                let path = SobolevPath::from_samples(space, sheet.to_vec()).expect("sheet lies on the space grid");
                let c: Vec<f64> = (0..n_max)
                    .map(|k| {
                        let a: f64 = wts.value_weights[k].iter().zip(path.values()).map(|(w, v)| w * v).sum();
                        let b: f64 = wts.deriv_weights[k].iter().zip(path.derivs()).map(|(w, v)| w * v).sum();
                        a + b
                    })
                    .collect();
                comps.push(c);
            })?;
            let reference = run.diagonal;
            let mut out = PathErrors {
                sup: Vec::with_capacity(n_list.len()),
                sup_bar: Vec::with_capacity(n_list.len()),
                tail_sq: Vec::with_capacity(n_list.len()),
            };
            for &n in n_list {
                let approx = truncated_path(n, &proj, &rep, &dw, p)?;
                let mut sup = 0.0_f64;
                let mut sup_bar = 0.0_f64;
                let mut tails = Vec::with_capacity(time_grid.len());
                for i in 0..time_grid.len() {
                    let (v, _) = rep.at(i);
                    let bar: f64 = v[..n].iter().zip(&comps[i]).map(|(a, b)| a * b).sum();
                    sup = sup.max((approx[i] - reference[i]).powi(2));
                    sup_bar = sup_bar.max((approx[i] - bar).powi(2));
                    tails.push((reference[i] - bar).powi(2));
                }
                out.sup.push(sup);
                out.sup_bar.push(sup_bar);
                out.tail_sq.push(tails);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = n_list
        .iter()
        .enumerate()
        .map(|(l, &n)| {
            let sup: Vec<f64> = per_path.iter().map(|e| e.sup[l]).collect();
            let bar: Vec<f64> = per_path.iter().map(|e| e.sup_bar[l]).collect();
            let mut mean_tail = vec![0.0; time_grid.len()];
            for e in &per_path {
                for (m, v) in mean_tail.iter_mut().zip(&e.tail_sq[l]) {
                    *m += v;
                }
            }
            for m in &mut mean_tail {
                *m /= n_paths as f64;
            }
            ConvergenceRow {
                n,
                err_sup: Estimate::from_samples(&sup),
                err_bar: Estimate::from_samples(&bar),
                tail_proxy: time_grid.integrate(&mean_tail),
            }
        })
        .collect();
    Ok(ConvergenceStudy { rows, n_paths, seed })
}

/// Coefficients of the convergence study: `b = -x e^{-(s-t)}`,
/// `σ = e^{-(s-t)}`.
pub fn study_preset() -> CoefficientSet {
    use crate::volterra::Coefficient;
    CoefficientSet::new(
        Coefficient::diagonal(|t, s, x, _| -x * (-(s - t)).exp(), |t, s, x, _| x * (-(s - t)).exp()),
        Coefficient::diagonal(|t, s, _, _| (-(s - t)).exp(), |t, s, _, _| -(-(s - t)).exp()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sobolev::{basis, cosine_eval};
    use crate::stats::sample_variance;
    use crate::volterra::{presets, Coefficient};

    fn unit(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn constant_member_coefficients() {
        let b = basis(6, unit(512)).unwrap();
        let rep = representer_coeffs(&b, unit(16)).unwrap();
        for i in 0..=16 {
            let (v, vd) = rep.at(i);
            assert!((v[0] - 1.0).abs() < 1e-6);
            assert!(vd[0].abs() < 1e-6);
        }
    }

    #[test]
    fn first_cosine_coefficient_against_dense_quadrature() {
        let b = basis(4, unit(2048)).unwrap();
        let rep = representer_coeffs(&b, unit(16)).unwrap();
        for i in 0..=16 {
            let t = i as f64 / 16.0;
            let oracle = cosine_eval(1, 1.0, t).0;
            assert!((rep.at(i).0[1] - oracle).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn derivative_matches_finite_differences_at_second_order() {
        let b = basis(5, unit(2048)).unwrap();
        let coarse = representer_coeffs(&b, unit(16)).unwrap().derivative_check();
        let fine = representer_coeffs(&b, unit(32)).unwrap().derivative_check();
        assert!(fine < coarse / 3.0, "{coarse} -> {fine}");
        assert!(coarse < 0.5);
    }

    #[test]
    fn zero_coefficients_keep_a_constant_diagonal() {
        let g = unit(1024);
        let b = basis(4, g).unwrap();
        let x0 = SobolevPath::constant(g, 1.7);
        let proj = project_coefficients(&CoefficientSet::zero(), &b, &x0).unwrap();
        let rep = representer_coeffs(&b, unit(16)).unwrap();
        for n in 1..=4 {
            let ens = simulate_truncated(n, &proj, &rep, 3, 2).unwrap();
            for p in ens.diagonal_paths().unwrap() {
                assert!(p.iter().all(|x| (x - 1.7).abs() < 1e-5));
            }
        }
    }

    #[test]
    fn unit_volatility_gives_brownian_motion() {
        let g = unit(128);
        let b = basis(4, g).unwrap();
        let proj =
            project_coefficients(&presets::additive_kernel(|_| 1.0, |_| 0.0), &b, &SobolevPath::zeros(g)).unwrap();
        let s = proj.vol(4, 0.3, 0.0);
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!(s[1..].iter().all(|v| v.abs() < 1e-12));
        let rep = representer_coeffs(&b, unit(10)).unwrap();
        let ens = simulate_truncated(3, &proj, &rep, 20_000, 4).unwrap();
        let xt = ens.diagonal_at(10).unwrap();
        let var = sample_variance(&xt);
        assert!((var - 1.0).abs() < 3.0 * (2.0f64 / 20_000.0).sqrt());
    }

    #[test]
    fn truncated_second_moment_approaches_ito_isometry() {
        let g = unit(256);
        let b = basis(16, g).unwrap();
        let c = presets::additive_kernel(|u| (-u).exp(), |u| -(-u).exp());
        let proj = project_coefficients(&c, &b, &SobolevPath::zeros(g)).unwrap();
        let rep = representer_coeffs(&b, unit(128)).unwrap();
        let ens = simulate_truncated(16, &proj, &rep, 10_000, 8).unwrap();
        let sq: Vec<f64> = ens.diagonal_at(128).unwrap().iter().map(|x| x * x).collect();
        let e = Estimate::from_samples(&sq);
        let target = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!(
            (e.mean - target).abs() < 3.0 * e.std_err + 0.01,
            "{} vs {target}",
            e.mean
        );
    }

    #[test]
    fn slice_dependent_coefficients_are_rejected() {
        let g = unit(8);
        let b = basis(2, g).unwrap();
        let c = CoefficientSet::new(
            Coefficient::zero().with_slice(|_, _, _| 1.0, |_, _, _| 0.0),
            Coefficient::zero(),
        );
        assert!(project_coefficients(&c, &b, &SobolevPath::zeros(g)).is_err());
        let proj = project_coefficients(&CoefficientSet::zero(), &b, &SobolevPath::zeros(g)).unwrap();
        let rep = representer_coeffs(&b, unit(4)).unwrap();
        assert!(truncated_path(3, &proj, &rep, &[0.0; 4], 0).is_err());
    }

    #[test]
    fn full_basis_row_is_smallest() {
        let g = unit(32);
        let b = basis(8, g).unwrap();
        let study = convergence_study(
            &study_preset(),
            &b,
            &SobolevPath::constant(g, 1.0),
            unit(32),
            &[1, 2, 8],
            200,
            5,
        )
        .unwrap();
        let errs: Vec<f64> = study.rows.iter().map(|r| r.err_sup.mean).collect();
        assert!(errs[2] < errs[0], "{errs:?}");
        let mut buf = Vec::new();
        study.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("n,err_sup,tail_proxy,ratio,n_paths,seed\n"));
    }
}
