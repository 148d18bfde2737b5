//! Discretised model of `H = W^{1,2}([0,T])`.
//!
//! Paths are sampled on a uniform grid and carry their derivative samples
//! explicitly. Inner products use the trapezoidal rule on both the value and
//! the derivative pairing.

use std::io::{self, Write};

use nalgebra::DMatrix;

use crate::error::{LabError, Result};

/// Uniform grid `s_i = i * T / n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(LabError::Domain(format!("horizon must be positive, got {horizon}")));
        }
        if n < 2 {
            return Err(LabError::Domain(format!("grid needs at least 2 subintervals, got {n}")));
        }
        Ok(Self { horizon, n })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of subintervals.
    pub fn intervals(&self) -> usize {
        self.n
    }

    /// Number of grid points, `n + 1`.
    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i == self.n {
            self.horizon
        } else {
            i as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.point(i)).collect()
    }

    /// Index of `t` if it coincides with a grid point (relative tolerance 1e-9).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = t / self.step();
        let i = x.round();
        if (x - i).abs() < 1e-9 && i >= 0.0 && i <= self.n as f64 {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Cell index `i` and weight `w` such that `t = (1-w) s_i + w s_{i+1}`.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        if let Some(i) = self.index_of(t) {
            return if i == self.n { (self.n - 1, 1.0) } else { (i, 0.0) };
        }
        let x = (t / self.step()).clamp(0.0, self.n as f64);
        let i = (x.floor() as usize).min(self.n - 1);
        (i, x - i as f64)
    }

    /// Linear interpolation of grid samples at `t`.
    pub fn interpolate(&self, values: &[f64], t: f64) -> f64 {
        let (i, w) = self.locate(t);
        if w == 0.0 {
            values[i]
        } else {
            (1.0 - w) * values[i] + w * values[i + 1]
        }
    }

    /// Trapezoidal quadrature weights.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let h = self.step();
        let mut w = vec![h; self.n + 1];
        w[0] = 0.5 * h;
        w[self.n] = 0.5 * h;
        w
    }

    /// Trapezoidal integral of grid samples.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let h = self.step();
        let inner: f64 = values[1..self.n].iter().sum();
        h * (inner + 0.5 * (values[0] + values[self.n]))
    }

    fn same_as(&self, other: &TimeGrid) -> bool {
        self.n == other.n && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon
    }
}

/// Element of `W^{1,2}([0,T])` sampled on a grid, with its Sobolev derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct SobolevPath {
    grid: TimeGrid,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl SobolevPath {
    pub fn new(grid: TimeGrid, values: Vec<f64>, derivs: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() || derivs.len() != grid.len() {
            return Err(LabError::Dimension(format!(
                "path arrays have lengths {}/{} but the grid has {} points",
                values.len(),
                derivs.len(),
                grid.len()
            )));
        }
        if values.iter().chain(&derivs).any(|v| !v.is_finite()) {
            return Err(LabError::Domain("path samples must be finite".into()));
        }
        Ok(Self { grid, values, derivs })
    }

    /// Samples an analytic pair `(x, x')`.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Self {
        let pts = grid.points();
        Self {
            grid,
            values: pts.iter().map(|&s| f(s)).collect(),
            derivs: pts.iter().map(|&s| df(s)).collect(),
        }
    }

    /// Builds a path from samples only; derivatives by central differences,
    /// second-order one-sided at the endpoints.
    pub fn from_samples(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::Dimension(format!(
                "{} samples for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        let derivs = central_differences(&values, grid.step());
        Self::new(grid, values, derivs)
    }

    pub fn constant(grid: TimeGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
            derivs: vec![0.0; grid.len()],
        }
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivs(&self) -> &[f64] {
        &self.derivs
    }

    /// Continuous representative at `t`, by linear interpolation.
    pub fn eval(&self, t: f64) -> f64 {
        self.grid.interpolate(&self.values, t)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
            derivs: self.derivs.iter().map(|v| c * v).collect(),
        }
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &SobolevPath) -> Result<()> {
        check_grids(self, other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        for (a, b) in self.derivs.iter_mut().zip(&other.derivs) {
            *a += c * b;
        }
        Ok(())
    }

    /// Writes `s, value, deriv` rows with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "s,value,deriv")?;
        for (i, (v, d)) in self.values.iter().zip(&self.derivs).enumerate() {
            writeln!(w, "{},{},{}", self.grid.point(i), v, d)?;
        }
        Ok(())
    }
}

/// Centred differences inside, second-order one-sided at the ends.
pub fn central_differences(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut d = vec![0.0; n];
    if n < 3 {
        if n == 2 {
            let s = (values[1] - values[0]) / h;
            d[0] = s;
            d[1] = s;
        }
        return d;
    }
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    for i in 1..n - 1 {
        d[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
    }
    d
}

fn check_grids(u: &SobolevPath, v: &SobolevPath) -> Result<()> {
    if u.grid.same_as(&v.grid) {
        Ok(())
    } else {
        Err(LabError::Dimension(format!(
            "paths live on different grids ({} on [0,{}] vs {} on [0,{}])",
            u.grid.n, u.grid.horizon, v.grid.n, v.grid.horizon
        )))
    }
}

/// `<u, v>_H = ∫ u v + ∫ u' v'`, trapezoidal rule.
pub fn inner_product(u: &SobolevPath, v: &SobolevPath) -> Result<f64> {
    check_grids(u, v)?;
    Ok(inner_product_unchecked(u, v))
}

pub(crate) fn inner_product_unchecked(u: &SobolevPath, v: &SobolevPath) -> f64 {
    let n = u.values.len() - 1;
    let h = u.grid.step();
    let term = |i: usize| u.values[i] * v.values[i] + u.derivs[i] * v.derivs[i];
    let inner: f64 = (1..n).map(term).sum();
    h * (inner + 0.5 * (term(0) + term(n)))
}

/// Inner product of `R^n`-valued paths stored component-wise.
pub fn inner_product_components(u: &[SobolevPath], v: &[SobolevPath]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(LabError::Dimension(format!(
            "{} components vs {} components",
            u.len(),
            v.len()
        )));
    }
    u.iter().zip(v).map(|(a, b)| inner_product(a, b)).sum()
}

pub fn norm(u: &SobolevPath) -> f64 {
    inner_product_unchecked(u, u).sqrt()
}

/// `sqrt(T + 1/T)`: Cauchy–Schwarz applied to `|x(t)| <= ∫|x'| + (1/T)∫|x|`.
pub fn embedding_constant(horizon: f64) -> f64 {
    (horizon + 1.0 / horizon).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingCheck {
    pub sup_norm: f64,
    pub h_norm: f64,
    pub constant_ok: bool,
}

impl EmbeddingCheck {
    pub fn bound(&self, horizon: f64) -> f64 {
        embedding_constant(horizon) * self.h_norm
    }
}

pub fn embedding_check(u: &SobolevPath) -> EmbeddingCheck {
    let sup_norm = u.sup_norm();
    let h_norm = norm(u);
    EmbeddingCheck {
        sup_norm,
        h_norm,
        constant_ok: sup_norm <= embedding_constant(u.grid.horizon()) * h_norm,
    }
}

/// Green's function of `v - v'' = δ_t` on `[0,T]` with `v'(0) = v'(T) = 0`.
pub fn green(horizon: f64, t: f64, s: f64) -> f64 {
    let sh = horizon.sinh();
    if s <= t {
        s.cosh() * (horizon - t).cosh() / sh
    } else {
        t.cosh() * (horizon - s).cosh() / sh
    }
}

/// `∂_s` of [`green`]; at `s = t` the mean of the one-sided limits, or the
/// inner limit at an endpoint.
pub fn green_ds(horizon: f64, t: f64, s: f64) -> f64 {
    let sh = horizon.sinh();
    let left = || s.sinh() * (horizon - t).cosh() / sh;
    let right = || -t.cosh() * (horizon - s).sinh() / sh;
    if s < t {
        left()
    } else if s > t || t <= 0.0 {
        right()
    } else if t >= horizon {
        left()
    } else {
        0.5 * (left() + right())
    }
}

/// `∂_t` of [`green`]. It jumps by `+1` across `s = t`; the value there is
/// the mean of the one-sided limits, or the inner limit at an endpoint.
pub fn green_dt(horizon: f64, t: f64, s: f64) -> f64 {
    let sh = horizon.sinh();
    let left = || -s.cosh() * (horizon - t).sinh() / sh;
    let right = || t.sinh() * (horizon - s).cosh() / sh;
    if s < t {
        left()
    } else if s > t || t <= 0.0 {
        right()
    } else if t >= horizon {
        left()
    } else {
        0.5 * (left() + right())
    }
}

/// `∂_t ∂_s` of [`green`]; continuous in `s`.
pub fn green_dt_ds(horizon: f64, t: f64, s: f64) -> f64 {
    let sh = horizon.sinh();
    if s <= t {
        -s.sinh() * (horizon - t).sinh() / sh
    } else {
        -t.sinh() * (horizon - s).sinh() / sh
    }
}

/// Element `v_t` of `H` with `<v_t, x>_H = x(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RieszRepresenter {
    pub eval_time: f64,
    pub rep: SobolevPath,
}

impl RieszRepresenter {
    pub fn evaluate(&self, x: &SobolevPath) -> Result<f64> {
        inner_product(&self.rep, x)
    }
}

pub fn riesz_representer(t: f64, grid: TimeGrid) -> Result<RieszRepresenter> {
    let horizon = grid.horizon();
    if !(0.0..=horizon).contains(&t) {
        return Err(LabError::Domain(format!("evaluation time {t} outside [0, {horizon}]")));
    }
    let rep = SobolevPath::from_fn(grid, |s| green(horizon, t, s), |s| green_ds(horizon, t, s));
    Ok(RieszRepresenter { eval_time: t, rep })
}

/// Finite family of paths, orthonormal in `H` up to quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    members: Vec<SobolevPath>,
}

impl BasisSet {
    pub fn from_members(members: Vec<SobolevPath>) -> Result<Self> {
        if members.is_empty() {
            return Err(LabError::Domain("basis must have at least one member".into()));
        }
        for m in &members[1..] {
            check_grids(&members[0], m)?;
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[SobolevPath] {
        &self.members
    }

    pub fn member(&self, k: usize) -> &SobolevPath {
        &self.members[k]
    }

    pub fn grid(&self) -> &TimeGrid {
        self.members[0].grid()
    }

    /// First `n` members.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(LabError::Domain(format!(
                "cannot truncate a basis of {} to {n} members",
                self.len()
            )));
        }
        Ok(Self {
            members: self.members[..n].to_vec(),
        })
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| inner_product_unchecked(&self.members[i], &self.members[j]))
    }

    /// Coefficients `<x, e_k>_H`.
    pub fn project(&self, x: &SobolevPath) -> Result<Vec<f64>> {
        self.members.iter().map(|e| inner_product(x, e)).collect()
    }

    /// `Σ_k coeffs_k e_k`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<SobolevPath> {
        if coeffs.len() > self.len() {
            return Err(LabError::Dimension(format!(
                "{} coefficients for a basis of {}",
                coeffs.len(),
                self.len()
            )));
        }
        let mut out = SobolevPath::zeros(*self.grid());
        for (c, e) in coeffs.iter().zip(&self.members) {
            out.axpy(*c, e)?;
        }
        Ok(out)
    }
}

/// Neumann cosine family, orthonormal in `W^{1,2}`:
/// `e_0 = 1/sqrt(T)`, `e_k = sqrt(2/T) cos(kπs/T) / sqrt(1 + (kπ/T)^2)`.
pub fn basis(n: usize, grid: TimeGrid) -> Result<BasisSet> {
    if n < 1 {
        return Err(LabError::Domain("basis size must be at least 1".into()));
    }
    let members = (0..n).map(|k| cosine_member(k, grid)).collect();
    Ok(BasisSet { members })
}

/// Value and derivative of the k-th cosine basis function at `s`.
pub fn cosine_eval(k: usize, horizon: f64, s: f64) -> (f64, f64) {
    if k == 0 {
        return (1.0 / horizon.sqrt(), 0.0);
    }
    let w = k as f64 * std::f64::consts::PI / horizon;
    let a = (2.0 / horizon).sqrt() / (1.0 + w * w).sqrt();
    (a * (w * s).cos(), -a * w * (w * s).sin())
}

fn cosine_member(k: usize, grid: TimeGrid) -> SobolevPath {
    let horizon = grid.horizon();
    SobolevPath::from_fn(grid, |s| cosine_eval(k, horizon, s).0, |s| cosine_eval(k, horizon, s).1)
}

/// Modified Gram–Schmidt (two passes) in the discrete `H` inner product.
pub fn gram_schmidt(paths: &[SobolevPath]) -> Result<BasisSet> {
    let mut out: Vec<SobolevPath> = Vec::with_capacity(paths.len());
    for p in paths {
        let mut q = p.clone();
        for _ in 0..2 {
            for e in &out {
                let c = inner_product(&q, e)?;
                q.axpy(-c, e)?;
            }
        }
        let nrm = norm(&q);
        if nrm < 1e-12 {
            return Err(LabError::Domain("Gram–Schmidt input is linearly dependent".into()));
        }
        out.push(q.scaled(1.0 / nrm));
    }
    BasisSet::from_members(out)
}

/// Orthonormalised monomials `(s/T)^k`, `k < n`.
pub fn polynomial_basis(n: usize, grid: TimeGrid) -> Result<BasisSet> {
    if n < 1 {
        return Err(LabError::Domain("basis size must be at least 1".into()));
    }
    let horizon = grid.horizon();
    let monomials: Vec<SobolevPath> = (0..n)
        .map(|k| {
            SobolevPath::from_fn(
                grid,
                |s| (s / horizon).powi(k as i32),
                |s| {
                    if k == 0 {
                        0.0
                    } else {
                        k as f64 * (s / horizon).powi(k as i32 - 1) / horizon
                    }
                },
            )
        })
        .collect();
    gram_schmidt(&monomials)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 1).is_err());
        let g = unit_grid(4);
        assert_eq!(g.point(0), 0.0);
        assert_eq!(g.point(4), 1.0);
        assert_eq!(g.index_of(0.25), Some(1));
        assert_eq!(g.index_of(0.3), None);
    }

    #[test]
    fn constant_path_has_unit_norm() {
        let one = SobolevPath::constant(unit_grid(64), 1.0);
        assert!((inner_product(&one, &one).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identity_path_norm_squared_is_four_thirds() {
        let g = unit_grid(1024);
        let x = SobolevPath::from_fn(g, |s| s, |_| 1.0);
        // trapezoid error on ∫s^2 is h^2/6
        assert!((inner_product(&x, &x).unwrap() - 4.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn grid_mismatch_is_a_dimension_error() {
        let a = SobolevPath::constant(unit_grid(8), 1.0);
        let b = SobolevPath::constant(unit_grid(16), 1.0);
        assert!(matches!(inner_product(&a, &b), Err(LabError::Dimension(_))));
    }

    #[test]
    fn sample_construction_reproduces_analytic_derivatives() {
        let g = unit_grid(256);
        let x = SobolevPath::from_samples(g, g.points().iter().map(|s| s.sin()).collect()).unwrap();
        for (i, d) in x.derivs().iter().enumerate() {
            assert!((d - g.point(i).cos()).abs() < 1e-4);
        }
    }

    #[test]
    fn embedding_examples() {
        let g = unit_grid(512);
        let c = embedding_check(&SobolevPath::constant(g, 1.0));
        assert!((c.sup_norm - 1.0).abs() < 1e-14);
        assert!((c.h_norm - 1.0).abs() < 1e-12);
        assert!(c.constant_ok);
        let id = embedding_check(&SobolevPath::from_fn(g, |s| s, |_| 1.0));
        assert!((id.h_norm - (4.0f64 / 3.0).sqrt()).abs() < 1e-5);
        assert!((id.bound(1.0) - 1.633).abs() < 1e-3);
        assert!(id.constant_ok);
    }

    #[test]
    fn representer_domain() {
        let g = unit_grid(16);
        assert!(riesz_representer(-0.1, g).is_err());
        assert!(riesz_representer(1.1, g).is_err());
        assert!(riesz_representer(1.0, g).is_ok());
    }

    #[test]
    fn representer_corner_value_is_coth_horizon() {
        let rep = riesz_representer(0.0, unit_grid(32)).unwrap();
        assert!((rep.rep.values()[0] - 1.0 / 1.0f64.tanh()).abs() < 1e-12);
        assert!((rep.rep.values()[0] - 1.31304).abs() < 1e-5);
    }

    #[test]
    fn representer_evaluates_constants_and_lines() {
        let g = unit_grid(1024);
        let one = SobolevPath::constant(g, 1.0);
        for &t in &[0.0, 0.3, 0.5, 1.0] {
            let v = riesz_representer(t, g).unwrap();
            assert!((v.evaluate(&one).unwrap() - 1.0).abs() < 1e-6, "t = {t}");
        }
        let x = SobolevPath::from_fn(g, |s| s, |_| 1.0);
        let v = riesz_representer(0.5, g).unwrap();
        assert!((v.evaluate(&x).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn green_derivatives_match_finite_differences() {
        let (horizon, eps) = (1.7, 1e-6);
        for &(t, s) in &[(0.4, 0.1), (0.4, 1.2), (1.0, 0.99), (0.2, 1.6)] {
            let ds = (green(horizon, t, s + eps) - green(horizon, t, s - eps)) / (2.0 * eps);
            let dt = (green(horizon, t + eps, s) - green(horizon, t - eps, s)) / (2.0 * eps);
            let dtds = (green_ds(horizon, t + eps, s) - green_ds(horizon, t - eps, s)) / (2.0 * eps);
            assert!((ds - green_ds(horizon, t, s)).abs() < 1e-6);
            assert!((dt - green_dt(horizon, t, s)).abs() < 1e-6);
            assert!((dtds - green_dt_ds(horizon, t, s)).abs() < 1e-6);
        }
    }

    #[test]
    fn cosine_basis_is_orthonormal() {
        let b = basis(3, unit_grid(1024)).unwrap();
        let gram = b.gram();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - target).abs() < 1e-8, "({i},{j}) = {}", gram[(i, j)]);
            }
        }
        assert!(basis(0, unit_grid(8)).is_err());
    }

    #[test]
    fn single_member_basis_is_the_normalised_constant() {
        let g = TimeGrid::new(2.0, 64).unwrap();
        let b = basis(1, g).unwrap();
        assert!((b.member(0).values()[10] - 1.0 / 2.0f64.sqrt()).abs() < 1e-15);
        assert!((inner_product(b.member(0), b.member(0)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_of_members_and_constants() {
        let g = unit_grid(1024);
        let b = basis(5, g).unwrap();
        let c = b.project(b.member(2)).unwrap();
        for (k, v) in c.iter().enumerate() {
            let target = if k == 2 { 1.0 } else { 0.0 };
            assert!((v - target).abs() < 1e-8);
        }
        let back = b.reconstruct(&c).unwrap();
        assert!(
            norm(&{
                let mut d = back.clone();
                d.axpy(-1.0, b.member(2)).unwrap();
                d
            }) < 1e-8
        );

        let k = b.project(&SobolevPath::constant(g, 3.0)).unwrap();
        assert!((k[0] - 3.0).abs() < 1e-12);
        assert!(k[1..].iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn parseval_residual_decreases() {
        let g = unit_grid(1024);
        let x = SobolevPath::from_fn(g, |s| s, |_| 1.0);
        let full = basis(32, g).unwrap();
        let coeffs = full.project(&x).unwrap();
        let total = inner_product(&x, &x).unwrap();
        let mut prev = f64::INFINITY;
        for n in [1, 2, 4, 8, 16, 32] {
            let partial: f64 = coeffs[..n].iter().map(|c| c * c).sum();
            let resid = {
                let mut r = full.reconstruct(&coeffs[..n]).unwrap();
                r.axpy(-1.0, &x).unwrap();
                norm(&r)
            };
            assert!(partial <= total + 1e-9);
            assert!(resid <= prev + 1e-12);
            prev = resid;
        }
    }

    #[test]
    fn polynomial_basis_is_orthonormal() {
        let b = polynomial_basis(4, unit_grid(512)).unwrap();
        let gram = b.gram();
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - target).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn path_csv_schema() {
        let mut buf = Vec::new();
        SobolevPath::constant(unit_grid(2), 1.0).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("s,value,deriv"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn multi_component_inner_product_sums() {
        let g = unit_grid(64);
        let u = vec![SobolevPath::constant(g, 1.0), SobolevPath::constant(g, 2.0)];
        let ip = inner_product_components(&u, &u).unwrap();
        assert!((ip - 5.0).abs() < 1e-12);
        assert!(inner_product_components(&u, &u[..1]).is_err());
    }
}
