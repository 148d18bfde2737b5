//! Principal-agent reduction under a multi-exponential discount
//! `f(t) = Σ_k β_k e^{-ρ_k t}`.
//!
//! With `φ_k(s) = β_k e^{ρ_k s}` the agent's continuation utilities live in
//! `span{φ_k}`: `Y = Σ_k φ_k Ỹ^k` where
//! `dỸ^k = e^{-ρ_k t} c*(t, Z^t_t) dt + Z̃^k dW` and `Z^t_t = Σ_k φ_k(t) Z̃^k`.
//! Matching `Y^s_T = f(T-s) Y^0_T / f(T)` coefficient by coefficient gives
//! `Ỹ^k_T = e^{-ρ_k T} Y^0_T / f(T)`: the terminal vector lies on the line
//! spanned by `(e^{-ρ_1 T}, ..., e^{-ρ_N T})`.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::rng::brownian_increments;
use crate::sobolev::{gram_schmidt, inner_product, norm, riesz_representer, BasisSet, SobolevPath, TimeGrid};
use crate::volterra::{Coefficient, CoefficientSet};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscountSpec {
    betas: Vec<f64>,
    rhos: Vec<f64>,
}

impl DiscountSpec {
    pub fn new(betas: Vec<f64>, rhos: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.len() != rhos.len() {
            return Err(LabError::Dimension(format!(
                "{} weights for {} rates",
                betas.len(),
                rhos.len()
            )));
        }
        if betas.iter().any(|b| b.is_nan() || *b <= 0.0) {
            return Err(LabError::Domain("discount weights must be positive".into()));
        }
        let total: f64 = betas.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LabError::Domain(format!("discount weights sum to {total}, not 1")));
        }
        if rhos.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(LabError::Domain("discount rates must be nonnegative".into()));
        }
        for i in 0..rhos.len() {
            for j in 0..i {
                if rhos[i] == rhos[j] {
                    return Err(LabError::Domain(format!("duplicate discount rate {}", rhos[i])));
                }
            }
        }
        Ok(Self { betas, rhos })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rhos
    }

    pub fn discount(&self, t: f64) -> f64 {
        self.betas.iter().zip(&self.rhos).map(|(b, r)| b * (-r * t).exp()).sum()
    }

    /// `φ_k(s)`
    pub fn phi(&self, k: usize, s: f64) -> f64 {
        self.betas[k] * (self.rhos[k] * s).exp()
    }
}

/// `φ_k` with analytic derivatives and their Gram matrix in `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiBasis {
    pub paths: Vec<SobolevPath>,
    pub gram: DMatrix<f64>,
}

impl PhiBasis {
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.gram.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn phi_basis(spec: &DiscountSpec, grid: TimeGrid) -> Result<PhiBasis> {
    let paths: Vec<SobolevPath> = (0..spec.len())
        .map(|k| {
            let (b, r) = (spec.betas[k], spec.rhos[k]);
            SobolevPath::from_fn(grid, |s| b * (r * s).exp(), |s| r * b * (r * s).exp())
        })
        .collect();
    let n = paths.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            gram[(i, j)] = inner_product(&paths[i], &paths[j])?;
        }
    }
    Ok(PhiBasis { paths, gram })
}

/// `(t, Ỹ_t) -> Z̃_t`.
pub type ZRule = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
/// `(t, z) -> c*(t, z)`.
pub type CostRule = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Quadratic effort cost `c*(t, z) = z^2 / 2`.
pub fn quadratic_cost() -> CostRule {
    Arc::new(|_, z| 0.5 * z * z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedEnsemble {
    pub grid: TimeGrid,
    /// `[path][time][k]`
    pub y_tilde: Vec<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl ReducedEnsemble {
    pub fn terminal(&self, path: usize) -> &[f64] {
        self.y_tilde[path].last().expect("paths are never empty")
    }
}

fn probe_cost(cost: &CostRule, horizon: f64) -> Result<()> {
    for i in 0..=10 {
        let t = horizon * i as f64 / 10.0;
        for z in [-5.0, -1.0, 0.0, 0.5, 2.0, 5.0] {
            if !cost(t, z).is_finite() {
                return Err(LabError::Coefficient(format!("cost rule is not finite at ({t}, {z})")));
            }
        }
    }
    Ok(())
}

/// Euler scheme for the reduced forward system.
pub fn simulate_reduced(
    spec: &DiscountSpec,
    z_rule: &ZRule,
    cost: &CostRule,
    y0: &[f64],
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<ReducedEnsemble> {
    if y0.len() != spec.len() {
        return Err(LabError::Dimension(format!(
            "{} initial values for {} factors",
            y0.len(),
            spec.len()
        )));
    }
    probe_cost(cost, grid.horizon())?;
    let n = grid.intervals();
    let h = grid.step();
    let y_tilde = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let dw = brownian_increments(seed, p, n, h);
            let mut y = y0.to_vec();
            let mut out = Vec::with_capacity(n + 1);
            out.push(y.clone());
            for (i, &dwi) in dw.iter().enumerate() {
                let t = grid.point(i);
                let z = z_rule(t, &y);
                if z.len() != spec.len() {
                    return Err(LabError::Dimension(format!(
                        "control rule returned {} components for {} factors",
                        z.len(),
                        spec.len()
                    )));
                }
                let diag: f64 = (0..spec.len()).map(|k| spec.phi(k, t) * z[k]).sum();
                let c = cost(t, diag);
                for k in 0..spec.len() {
                    y[k] += (-spec.rhos[k] * t).exp() * c * h + z[k] * dwi;
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(LabError::NonFinite { path: p, step: i + 1 });
                }
                out.push(y.clone());
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReducedEnsemble { grid, y_tilde, seed })
}

/// The line `{λ d}` with `d_k = e^{-ρ_k T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetLine {
    pub direction: Vec<f64>,
}

impl TargetLine {
    pub fn new(spec: &DiscountSpec, horizon: f64) -> Self {
        Self {
            direction: spec.rhos.iter().map(|r| (-r * horizon).exp()).collect(),
        }
    }

    /// `y_1 / y_k` on the line, `k >= 1` (zero-based).
    pub fn ratio(&self, k: usize) -> f64 {
        self.direction[0] / self.direction[k]
    }

    pub fn distance(&self, y: &[f64]) -> f64 {
        let dd: f64 = self.direction.iter().map(|d| d * d).sum();
        let lam = y.iter().zip(&self.direction).map(|(a, d)| a * d).sum::<f64>() / dd;
        y.iter()
            .zip(&self.direction)
            .map(|(a, d)| (a - lam * d).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn target_distance(ens: &ReducedEnsemble, line: &TargetLine) -> Result<Vec<f64>> {
    (0..ens.y_tilde.len())
        .map(|p| {
            let y = ens.terminal(p);
            if y.len() != line.direction.len() {
                return Err(LabError::Dimension(format!(
                    "{} factors against a line in R^{}",
                    y.len(),
                    line.direction.len()
                )));
            }
            Ok(line.distance(y))
        })
        .collect()
}

/// Deterministic admissible control `Z̃^k_t = d_k ζ` with matching initial
/// values, for the quadratic cost: `Ỹ^k_0 = d_k λ0 - ∫_0^T e^{-ρ_k r} c*(Z^r_r) dr`
/// with the integral in closed form. The terminal vector then lies on the
/// target line up to the time discretisation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleControl {
    pub zeta: f64,
    pub y0: Vec<f64>,
    pub direction: Vec<f64>,
}

impl AdmissibleControl {
    pub fn new(spec: &DiscountSpec, horizon: f64, zeta: f64, lambda0: f64) -> Self {
        let d: Vec<f64> = spec.rhos.iter().map(|r| (-r * horizon).exp()).collect();
        // Z^r_r = ζ f(T - r); ∫ e^{-ρ_k r} (ζ f(T-r))^2 / 2 dr expanded over pairs
        let y0 = (0..spec.len())
            .map(|k| {
                let mut integral = 0.0;
                for j in 0..spec.len() {
                    for l in 0..spec.len() {
                        let rate = spec.rhos[j] + spec.rhos[l] - spec.rhos[k];
                        let base = spec.betas[j] * spec.betas[l] * (-(spec.rhos[j] + spec.rhos[l]) * horizon).exp();
                        let int = if rate.abs() < 1e-14 {
                            horizon
                        } else {
                            ((rate * horizon).exp() - 1.0) / rate
                        };
                        integral += base * int;
                    }
                }
                d[k] * lambda0 - 0.5 * zeta * zeta * integral
            })
            .collect();
        Self { zeta, y0, direction: d }
    }

    pub fn rule(&self) -> ZRule {
        let z: Vec<f64> = self.direction.iter().map(|d| d * self.zeta).collect();
        Arc::new(move |_, _| z.clone())
    }
}

/// Lifted sheets `s ↦ Y^s_t`; `[path][time][node]`.
pub type SheetEnsemble = [Vec<Vec<f64>>];

/// Mean over paths and times of the `H`-norm of the part of `Y_t` orthogonal
/// to `span{φ_k}`. The span is built from sampled `φ_k` so that sampled
/// combinations of them lie in it exactly.
pub fn span_residual(sheets: &SheetEnsemble, spec: &DiscountSpec, space: TimeGrid) -> Result<f64> {
    let sampled: Vec<SobolevPath> = (0..spec.len())
        .map(|k| {
            let vals = space.points().iter().map(|&s| spec.phi(k, s)).collect();
            SobolevPath::from_samples(space, vals)
        })
        .collect::<Result<_>>()?;
    let q: BasisSet = gram_schmidt(&sampled)?;
    let per_path: Vec<f64> = sheets
        .par_iter()
        .map(|path| {
            let mut acc = 0.0;
            for sheet in path {
                let mut y = SobolevPath::from_samples(space, sheet.clone())?;
                for _ in 0..2 {
                    for e in q.members() {
                        let c = inner_product(&y, e)?;
                        y.axpy(-c, e)?;
                    }
                }
                acc += norm(&y);
            }
            Ok(acc / path.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(per_path.iter().sum::<f64>() / per_path.len() as f64)
}

/// Lifted sheets `Y_t = Σ_k φ_k Ỹ^k_t` from a reduced ensemble.
pub fn assemble_sheets(ens: &ReducedEnsemble, spec: &DiscountSpec, space: TimeGrid) -> Vec<Vec<Vec<f64>>> {
    let pts = space.points();
    ens.y_tilde
        .iter()
        .map(|path| {
            path.iter()
                .map(|y| {
                    pts.iter()
                        .map(|&s| (0..spec.len()).map(|k| spec.phi(k, s) * y[k]).sum())
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Lifted utility coefficients `dY^s = f(t - s) c*(t, Z^t_t) dt + Z^s_t dW` for
/// the deterministic incentive sheet `Z^s_t = ζ f(T - s) + ε cos(π s / T)`.
/// With `ε = 0` the sheet is `ζ Σ_k d_k φ_k` and every state started in
/// `span{φ_k}` stays there.
pub fn lifted_coefficients(
    spec: &DiscountSpec,
    horizon: f64,
    zeta: f64,
    injection: f64,
    cost: CostRule,
) -> CoefficientSet {
    let w = std::f64::consts::PI / horizon;
    let z = {
        let spec = spec.clone();
        move |s: f64| zeta * spec.discount(horizon - s) + injection * (w * s).cos()
    };
    // d/ds f(T - s) = Σ_k ρ_k β_k e^{-ρ_k (T - s)}
    let dz = {
        let spec = spec.clone();
        move |s: f64| {
            let df: f64 = (0..spec.len())
                .map(|k| spec.rhos[k] * spec.betas[k] * (-spec.rhos[k] * (horizon - s)).exp())
                .sum();
            zeta * df - injection * w * (w * s).sin()
        }
    };
    let (sp, sp_ds) = (spec.clone(), spec.clone());
    let (z1, z_vol, cost1) = (z.clone(), z.clone(), cost.clone());
    let drift = Coefficient::diagonal(
        move |t, s, _, _| sp.discount(t - s) * cost1(t, z1(t)),
        move |t, s, _, _| {
            let df: f64 = (0..sp_ds.len())
                .map(|k| sp_ds.rhos[k] * sp_ds.phi(k, s) * (-sp_ds.rhos[k] * t).exp())
                .sum();
            df * cost(t, z(t))
        },
    );
    let vol = Coefficient::diagonal(move |_, s, _, _| z_vol(s), move |_, s, _, _| dz(s));
    CoefficientSet::new(drift, vol)
}

/// `det` of the Gram matrix of `{v_0, v_t}` in `H` for each probe time.
pub fn gram_impossibility(t_values: &[f64], grid: TimeGrid) -> Result<Vec<(f64, f64)>> {
    let v0 = riesz_representer(0.0, grid)?.rep;
    let g00 = inner_product(&v0, &v0)?;
    t_values
        .iter()
        .map(|&t| {
            let vt = riesz_representer(t, grid)?.rep;
            let g01 = inner_product(&v0, &vt)?;
            let g11 = inner_product(&vt, &vt)?;
            Ok((t, g00 * g11 - g01 * g01))
        })
        .collect()
}

/// Closed form `cosh(T - t) sinh(t) / sinh(T)`.
pub fn gram_determinant_exact(horizon: f64, t: f64) -> f64 {
    (horizon - t).cosh() * t.sinh() / horizon.sinh()
}
