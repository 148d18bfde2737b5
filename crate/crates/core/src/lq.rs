//! Linear-quadratic control of the kernel dynamics
//! `X_t = x0 + ∫_0^t φ(t-s) ((X_s + α_s) ds + dW_s)` with reward
//! `-½ E ∫ (X^2 + α^2)`, plus the uncontrolled starter `dX = X dt + dW`.
//!
//! The value is quadratic in the lifted state, `u(t, x) = ½ <x, C(t) x> + g(t)`.
//! On a grid shared by time and Volterra time, the Euler-discretised problem
//! has an exact dynamic-programming recursion for `C`, which is what
//! [`solve_riccati`] computes. In the continuum `C(t)` has density
//! `c(t, r, s) - δ(r - s)` on `[t, T]^2`, and the smooth part `c` solves
//! `∂_t c = -(c⋆φ)(c⋆φ)` with `c(t, t, r) = (c⋆φ)(t, r)`, where the
//! convolution `c⋆φ` includes the Dirac part.

use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::rng::brownian_increments;
use crate::sobolev::{SobolevPath, TimeGrid};
use crate::stats::Estimate;
use crate::volterra::{lifted_path, Coefficient, CoefficientSet, Policy, StateView};

/// Kernel `φ` with its derivative; zero for negative arguments.
#[derive(Clone)]
pub struct Kernel {
    name: String,
    value: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    deriv: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Kernel({})", self.name)
    }
}

impl Kernel {
    pub fn new(
        name: &str,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        deriv: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.to_string(),
            value: Arc::new(value),
            deriv: Arc::new(deriv),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(&format!("constant({c})"), move |_| c, |_| 0.0)
    }

    /// `e^{-λu}`
    pub fn exponential(lambda: f64) -> Self {
        Self::new(
            &format!("exp({lambda})"),
            move |u| (-lambda * u).exp(),
            move |u| -lambda * (-lambda * u).exp(),
        )
    }

    /// Named presets: `one`, `zero`, `exp`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "one" => Ok(Self::constant(1.0)),
            "zero" => Ok(Self::constant(0.0)),
            "exp" => Ok(Self::exponential(1.0)),
            other => Err(LabError::Domain(format!(
                "unknown kernel preset '{other}' (expected one, zero or exp)"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        if u < 0.0 {
            0.0
        } else {
            (self.value)(u)
        }
    }

    #[inline]
    pub fn eval_deriv(&self, u: f64) -> f64 {
        if u < 0.0 {
            0.0
        } else {
            (self.deriv)(u)
        }
    }

    /// Samples `φ` on `[0, T]` and rejects non-finite values or jumps larger
    /// than `jump_tol`.
    pub fn probe(&self, horizon: f64, jump_tol: f64) -> Result<()> {
        let n = 1000;
        let vals: Vec<f64> = (0..=n).map(|i| self.eval(horizon * i as f64 / n as f64)).collect();
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(LabError::Domain(format!(
                "kernel {} is not finite at {}",
                self.name,
                horizon * i as f64 / n as f64
            )));
        }
        if let Some(i) = vals.windows(2).position(|w| (w[1] - w[0]).abs() > jump_tol) {
            return Err(LabError::Domain(format!(
                "kernel {} jumps near {}",
                self.name,
                horizon * i as f64 / n as f64
            )));
        }
        Ok(())
    }
}

/// Lifted coefficients of the LQ dynamics: `b_t(s) = φ(s-t)(x + a)`,
/// `σ_t(s) = φ(s-t)`.
pub fn lq_coefficients(phi: &Kernel) -> CoefficientSet {
    let (p1, p2, p3, p4) = (phi.clone(), phi.clone(), phi.clone(), phi.clone());
    CoefficientSet::new(
        Coefficient::diagonal(
            move |t, s, x, a| p1.eval(s - t) * (x + a),
            move |t, s, x, a| p2.eval_deriv(s - t) * (x + a),
        ),
        Coefficient::diagonal(move |t, s, _, _| p3.eval(s - t), move |t, s, _, _| p4.eval_deriv(s - t)),
    )
}

/// `(c⋆φ)(t_i, r_j) = ∫_{t_i}^T c(r_j, θ) φ(θ - t_i) dθ` by the trapezoidal
/// rule on the grid nodes; `c` is a full `(n+1) × (n+1)` slice indexed by
/// nodes. Entries with `r_j < t_i` are zero.
pub fn star(c: &DMatrix<f64>, phi: &Kernel, grid: &TimeGrid, i: usize) -> Vec<f64> {
    let n = grid.intervals();
    assert_eq!(c.nrows(), n + 1);
    let h = grid.step();
    let t = grid.point(i);
    let w: Vec<f64> = (i..=n)
        .map(|k| {
            let trap = if k == i || k == n { 0.5 } else { 1.0 };
            if i == n {
                0.0
            } else {
                trap * h * phi.eval(grid.point(k) - t)
            }
        })
        .collect();
    (0..=n)
        .map(|j| {
            if j < i {
                0.0
            } else {
                (i..=n).zip(&w).map(|(k, wk)| c[(j, k)] * wk).sum()
            }
        })
        .collect()
}

/// Solution of the discrete Riccati recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiField {
    grid: TimeGrid,
    /// `mats[i]` is `C(t_i)` restricted to nodes `i..=n`.
    mats: Vec<DMatrix<f64>>,
    /// Noise contribution `g(t_i)`.
    noise: Vec<f64>,
    /// `w_i = C(t_{i+1}) p_i` over nodes `i+1..=n`, `p_i(j) = φ(t_j - t_i)`.
    gains: Vec<DVector<f64>>,
    /// `κ_i = p_i' C(t_{i+1}) p_i`.
    kappa: Vec<f64>,
}

impl RiccatiField {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Entry `C(t_i)[j, k]` for nodes `j, k >= i` (zero otherwise).
    pub fn matrix_entry(&self, i: usize, j: usize, k: usize) -> f64 {
        if j < i || k < i {
            0.0
        } else {
            self.mats[i][(j - i, k - i)]
        }
    }

    /// Smooth density `c(t_i, r_j, s_k)`: the matrix entry over `h^2` after
    /// removing the unit Dirac mass on the diagonal.
    pub fn density(&self, i: usize, j: usize, k: usize) -> f64 {
        let h = self.grid.step();
        let n = self.grid.intervals();
        let dirac = if j == k && j >= i && j < n { h } else { 0.0 };
        (self.matrix_entry(i, j, k) + dirac) / (h * h)
    }

    pub fn noise_term(&self, i: usize) -> f64 {
        self.noise[i]
    }

    /// Full `(n+1) × (n+1)` density slice at `t_i`.
    pub fn density_slice(&self, i: usize) -> DMatrix<f64> {
        let n = self.grid.intervals();
        DMatrix::from_fn(n + 1, n + 1, |j, k| self.density(i, j, k))
    }

    /// `u(t_i, x) = ½ Σ C(t_i)[j,k] x_j x_k + g(t_i)` over nodes `j, k >= i`.
    pub fn value(&self, i: usize, x: &[f64]) -> f64 {
        let m = &self.mats[i];
        let tail = &x[i..];
        let mut acc = 0.0;
        for (a, xa) in tail.iter().enumerate() {
            for (b, xb) in tail.iter().enumerate() {
                acc += m[(a, b)] * xa * xb;
            }
        }
        0.5 * acc + self.noise[i]
    }

    /// Optimal control at `t_i` given the current forward curve `x`
    /// (values at every node).
    pub fn feedback(&self, i: usize, x: &[f64]) -> f64 {
        let n = self.grid.intervals();
        if i >= n {
            return 0.0;
        }
        let h = self.grid.step();
        let k = self.kappa[i];
        let wx: f64 = self.gains[i].iter().zip(&x[i + 1..]).map(|(w, v)| w * v).sum();
        (wx + k * h * x[i]) / (1.0 - k * h)
    }

    /// `t,r,s,c` over the triangular support.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,r,s,c")?;
        let n = self.grid.intervals();
        for i in 0..=n {
            for j in i..=n {
                for k in i..=n {
                    writeln!(
                        w,
                        "{},{},{},{:.12e}",
                        self.grid.point(i),
                        self.grid.point(j),
                        self.grid.point(k),
                        self.density(i, j, k)
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Backward recursion from `C(T) = 0`. Aborts when an entry exceeds `cap`.
pub fn solve_riccati(phi: &Kernel, grid: TimeGrid, cap: f64) -> Result<RiccatiField> {
    let n = grid.intervals();
    let h = grid.step();
    let mut mats = vec![DMatrix::zeros(1, 1); n + 1];
    let mut noise = vec![0.0; n + 1];
    let mut gains = vec![DVector::zeros(0); n + 1];
    let mut kappa = vec![0.0; n + 1];
    for i in (0..n).rev() {
        let next = &mats[i + 1];
        let m = n - i;
        let p = DVector::from_fn(m, |a, _| phi.eval(grid.point(i + 1 + a) - grid.point(i)));
        let w = next * &p;
        let k = p.dot(&w);
        let denom = 1.0 - k * h;
        if denom <= 0.0 {
            return Err(LabError::RiccatiBlowUp {
                step: i,
                magnitude: k.abs(),
                cap,
            });
        }
        let mut c = DMatrix::zeros(m + 1, m + 1);
        c[(0, 0)] = -h + k * h * h / denom;
        for a in 0..m {
            let v = h * w[a] / denom;
            c[(0, a + 1)] = v;
            c[(a + 1, 0)] = v;
            for b in a..m {
                let v = next[(a, b)] + h * w[a] * w[b] / denom;
                c[(a + 1, b + 1)] = v;
                c[(b + 1, a + 1)] = v;
            }
        }
        let magnitude = c.amax();
        if !magnitude.is_finite() || magnitude > cap {
            return Err(LabError::RiccatiBlowUp {
                step: i,
                magnitude,
                cap,
            });
        }
        noise[i] = noise[i + 1] + 0.5 * k * h;
        mats[i] = c;
        gains[i] = w;
        kappa[i] = k;
    }
    Ok(RiccatiField {
        grid,
        mats,
        noise,
        gains,
        kappa,
    })
}

/// Riccati feedback scaled by `gain`; reads the forward curve from the
/// lifted state.
#[derive(Debug, Clone, Copy)]
pub struct RiccatiPolicy<'a> {
    pub field: &'a RiccatiField,
    pub gain: f64,
}

impl Policy for RiccatiPolicy<'_> {
    fn control(&self, state: &StateView<'_>) -> f64 {
        let sheet = state.sheet.expect("Riccati feedback needs the lifted state");
        self.gain * self.field.feedback(state.step, sheet)
    }
}

/// Per-path rewards `-½ Σ (X_{t_i}^2 + α_i^2) h` of the lifted LQ dynamics
/// started from the curve `x0` (on the time grid).
pub fn mc_rewards(phi: &Kernel, policy: &dyn Policy, x0: &SobolevPath, n_paths: usize, seed: u64) -> Result<Vec<f64>> {
    let grid = *x0.grid();
    let coeffs = lq_coefficients(phi);
    let h = grid.step();
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let dw = brownian_increments(seed, p, grid.intervals(), h);
            let run = lifted_path(&coeffs, policy, x0, &grid, &dw, p, &mut |_, _| {})?;
            let cost: f64 = run.controls.iter().zip(&run.diagonal).map(|(a, x)| x * x + a * a).sum();
            Ok(-0.5 * h * cost)
        })
        .collect()
}

pub fn mc_value(phi: &Kernel, policy: &dyn Policy, x0: &SobolevPath, n_paths: usize, seed: u64) -> Result<Estimate> {
    Ok(Estimate::from_samples(&mc_rewards(phi, policy, x0, n_paths, seed)?))
}

/// Starter value `u(t, x) = x(T) + ∫_t^T e^{T-r} x(r) dr` (trapezoidal rule),
/// `t` a grid node.
pub fn starter_value(t: f64, x: &SobolevPath) -> Result<f64> {
    let grid = x.grid();
    let i = grid
        .index_of(t)
        .ok_or_else(|| LabError::Domain(format!("starter time {t} is not a grid node")))?;
    Ok(starter_value_at(i, grid, x.values()))
}

fn starter_value_at(i: usize, grid: &TimeGrid, x: &[f64]) -> f64 {
    let n = grid.intervals();
    let horizon = grid.horizon();
    let h = grid.step();
    let f = |j: usize| (horizon - grid.point(j)).exp() * x[j];
    let integral = if i == n {
        0.0
    } else {
        h * (0.5 * f(i) + (i + 1..n).map(f).sum::<f64>() + 0.5 * f(n))
    };
    x[n] + integral
}

/// Largest residual of `∂_t u(t, x) + D_x u(t, x)[x(t)] = 0` at interior
/// nodes, with `∂_t` by centred differences and the derivative applied to the
/// constant direction `x(t)`.
pub fn starter_residual(x: &SobolevPath) -> f64 {
    let grid = x.grid();
    let n = grid.intervals();
    let h = grid.step();
    (1..n)
        .map(|i| {
            let dt =
                (starter_value_at(i + 1, grid, x.values()) - starter_value_at(i - 1, grid, x.values())) / (2.0 * h);
            let frozen = vec![x.values()[i]; n + 1];
            (dt + starter_value_at(i, grid, &frozen)).abs()
        })
        .fold(0.0, f64::max)
}

/// Coefficients of the lifted starter: every slice moves with the diagonal,
/// unit noise.
pub fn starter_coefficients() -> CoefficientSet {
    CoefficientSet::new(
        Coefficient::diagonal(|_, _, x, _| x, |_, _, _, _| 0.0),
        Coefficient::diagonal(|_, _, _, _| 1.0, |_, _, _, _| 0.0),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarterReport {
    pub closed_form: f64,
    pub mc: Estimate,
    pub residual: f64,
}

/// Monte Carlo mean of `X^T_T` from initial path `x` at time 0, against the
/// closed form. Time steps `n_t`, slices on the grid of `x`.
pub fn starter_check(x: &SobolevPath, n_t: usize, n_paths: usize, seed: u64) -> Result<StarterReport> {
    let time = TimeGrid::new(x.grid().horizon(), n_t)?;
    let coeffs = starter_coefficients();
    let none = crate::volterra::ControlPath::none();
    let finals = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let dw = brownian_increments(seed, p, n_t, time.step());
            let run = lifted_path(&coeffs, &none, x, &time, &dw, p, &mut |_, _| {})?;
            Ok(*run.diagonal.last().unwrap())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(StarterReport {
        closed_form: starter_value(0.0, x)?,
        mc: Estimate::from_samples(&finals),
        residual: starter_residual(x),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::log_log_slope;
    use crate::volterra::ControlPath;

    fn grid(t: f64, n: usize) -> TimeGrid {
        TimeGrid::new(t, n).unwrap()
    }

    #[test]
    fn star_examples() {
        let g = grid(1.0, 64);
        let zero = star(&DMatrix::from_element(65, 65, 1.0), &Kernel::constant(0.0), &g, 3);
        assert!(zero.iter().all(|v| *v == 0.0));
        let ones = star(&DMatrix::from_element(65, 65, 1.0), &Kernel::constant(1.0), &g, 16);
        for (j, v) in ones.iter().enumerate() {
            let expect = if j < 16 { 0.0 } else { 0.75 };
            assert!((v - expect).abs() < 1e-12);
        }
        let c = DMatrix::from_fn(65, 65, |j, k| g.point(j) * g.point(k));
        let out = star(&c, &Kernel::exponential(1.0), &g, 0);
        let factor = 1.0 - 2.0 * (-1.0f64).exp();
        for (j, v) in out.iter().enumerate() {
            assert!((v - g.point(j) * factor).abs() < 1e-4);
        }
    }

    #[test]
    fn star_is_symmetric_for_symmetric_slices() {
        let g = grid(1.0, 16);
        let c = DMatrix::from_fn(17, 17, |j, k| ((j + k) as f64).cos());
        let a = star(&c, &Kernel::exponential(0.5), &g, 2);
        let b = star(&c.transpose(), &Kernel::exponential(0.5), &g, 2);
        assert_eq!(a, b);
    }

    #[test]
    fn field_is_symmetric_with_zero_terminal_slice() {
        let f = solve_riccati(&Kernel::constant(1.0), grid(0.5, 40), 1e8).unwrap();
        assert_eq!(f.matrix_entry(40, 40, 40), 0.0);
        assert_eq!(f.noise_term(40), 0.0);
        for i in 0..=40 {
            let m = &f.mats[i];
            assert_eq!(m, &m.transpose());
            for j in 0..i {
                assert_eq!(f.matrix_entry(i, j, 20.max(i)), 0.0);
            }
        }
    }

    #[test]
    fn zero_kernel_gives_frozen_cost() {
        let g = grid(1.0, 50);
        let f = solve_riccati(&Kernel::constant(0.0), g, 1e8).unwrap();
        let x = SobolevPath::from_fn(g, |s| 1.0 + s * s, |s| 2.0 * s);
        for i in [0, 10, 49] {
            let expect: f64 = -0.5 * g.step() * (i..50).map(|j| x.values()[j].powi(2)).sum::<f64>();
            assert!((f.value(i, x.values()) - expect).abs() < 1e-12);
            assert_eq!(f.feedback(i, x.values()), 0.0);
            assert_eq!(f.density(i, 25.max(i), 25.max(i)), 0.0);
        }
        assert_eq!(f.value(0, &[0.0; 51]), 0.0);
    }

    #[test]
    fn zero_kernel_monte_carlo_is_exact() {
        let g = grid(1.0, 40);
        let e = mc_value(
            &Kernel::constant(0.0),
            &ControlPath::none(),
            &SobolevPath::constant(g, 1.0),
            16,
            2,
        )
        .unwrap();
        assert!((e.mean + 0.5).abs() < 1e-12);
        assert_eq!(e.std_err, 0.0);
    }

    #[test]
    fn feedback_is_a_stationary_point_of_the_one_step_problem() {
        // the quadratic in a at step i, evaluated around a*, is maximal there
        let g = grid(0.5, 10);
        let phi = Kernel::exponential(0.7);
        let f = solve_riccati(&phi, g, 1e8).unwrap();
        let x: Vec<f64> = (0..=10).map(|j| 1.0 - 0.1 * j as f64).collect();
        let h = g.step();
        let i = 3;
        let q = |a: f64| {
            let mut y = x.clone();
            for (j, yj) in y.iter_mut().enumerate().skip(i + 1) {
                *yj += phi.eval(g.point(j) - g.point(i)) * (x[i] + a) * h;
            }
            -0.5 * (x[i] * x[i] + a * a) * h + f.value(i + 1, &y)
        };
        let a = f.feedback(i, &x);
        assert!(q(a) >= q(a + 1e-3) && q(a) >= q(a - 1e-3));
        // and the value equals the maximised expectation, noise constant included
        let noise = f.noise_term(i) - f.noise_term(i + 1);
        assert!((f.value(i, &x) - (q(a) + noise)).abs() < 1e-12);
    }

    #[test]
    fn blow_up_is_reported() {
        let err = solve_riccati(&Kernel::constant(1.0), grid(0.5, 20), 1e-6).unwrap_err();
        assert!(matches!(err, LabError::RiccatiBlowUp { step: 19, .. }));
    }

    #[test]
    fn kernel_presets_and_probe() {
        assert!(Kernel::preset("one").is_ok());
        assert!(Kernel::preset("nope").is_err());
        assert_eq!(Kernel::exponential(1.0).eval(-1.0), 0.0);
        assert!(Kernel::exponential(1.0).probe(1.0, 0.01).is_ok());
        let step = Kernel::new("step", |u| if u < 0.5 { 0.0 } else { 1.0 }, |_| 0.0);
        assert!(step.probe(1.0, 0.01).is_err());
    }

    #[test]
    fn starter_closed_forms() {
        let g = grid(1.0, 1000);
        let e = 1.0f64.exp();
        assert_eq!(starter_value(0.0, &SobolevPath::zeros(g)).unwrap(), 0.0);
        let one = starter_value(0.0, &SobolevPath::constant(g, 1.0)).unwrap();
        assert!((one - e).abs() < 1e-6);
        let ramp = starter_value(0.0, &SobolevPath::from_fn(g, |s| s, |_| 1.0)).unwrap();
        assert!((ramp - (e - 1.0)).abs() < 1e-6);
        assert!(starter_value(0.0005, &SobolevPath::zeros(g)).is_err());
    }

    #[test]
    fn starter_closed_form_solves_its_ode() {
        // y' = x' + y, y(0) = x(0), integrated with RK4; u = y(T)
        let x = |s: f64| (2.0 * s).sin() + 1.0;
        let dx = |s: f64| 2.0 * (2.0 * s).cos();
        let n = 2000;
        let h = 1.0 / n as f64;
        let mut y = x(0.0);
        for i in 0..n {
            let s = i as f64 * h;
            let f = |s: f64, y: f64| dx(s) + y;
            let k1 = f(s, y);
            let k2 = f(s + h / 2.0, y + h * k1 / 2.0);
            let k3 = f(s + h / 2.0, y + h * k2 / 2.0);
            let k4 = f(s + h, y + h * k3);
            y += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        }
        let u = starter_value(0.0, &SobolevPath::from_fn(grid(1.0, n), x, dx)).unwrap();
        assert!((u - y).abs() < 1e-6);
    }

    #[test]
    fn starter_residual_is_second_order() {
        let hs: Vec<f64> = [32, 64, 128, 256].iter().map(|&n| 1.0 / n as f64).collect();
        let res: Vec<f64> = [32, 64, 128, 256]
            .iter()
            .map(|&n| starter_residual(&SobolevPath::from_fn(grid(1.0, n), |s| s.cos(), |s| -s.sin())))
            .collect();
        let slope = log_log_slope(&hs, &res);
        assert!((slope - 2.0).abs() < 0.2, "slope {slope} from {res:?}");
    }
}
