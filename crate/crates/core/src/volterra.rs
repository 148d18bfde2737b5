//! Monte Carlo for controlled stochastic Volterra equations.
//!
//! Two formulations share one set of coefficients:
//!
//! * the direct equation `X_t = x0 + ∫ b_r(t, X_r, α_r) dr + ∫ σ_r(t, X_r, α_r) dW_r`,
//!   discretised with left-point sums that are recomputed for every output
//!   time (cost `O(n_t^2)` per path);
//! * the lifted equation on `H`, where every Volterra slice `s` follows
//!   `dX^s_t = b_t(s, X^t_t, X^s_t, α_t) dt + σ_t(s, X^t_t, X^s_t, α_t) dW_t`.
//!
//! Coefficients use the affine split `φ_t(s, x, y, a) = φ¹_t(s, x, a) + φ²_t(s, a) y`
//! with running time `t`, Volterra time `s`, diagonal value `x` and slice
//! value `y`. The direct equation reads `b_r(t, x, a) = b¹_r(t, x, a)`.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::rng::{brownian_increments, coarsen};
use crate::sobolev::{BasisSet, SobolevPath, TimeGrid};
use crate::stats::{log_log_slope, Estimate};

/// `(t, s, x_diag, a) -> value`.
pub type StateRule = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
/// `(t, s, a) -> value`.
pub type SliceRule = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// One coefficient (drift or volatility) in affine form, with its
/// `s`-derivatives.
#[derive(Clone)]
pub struct Coefficient {
    pub diag: StateRule,
    pub diag_ds: StateRule,
    pub slice: Option<(SliceRule, SliceRule)>,
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Coefficient")
            .field("slice_dependent", &self.slice.is_some())
            .finish()
    }
}

impl Coefficient {
    pub fn zero() -> Self {
        let z: StateRule = Arc::new(|_, _, _, _| 0.0);
        Self {
            diag: z.clone(),
            diag_ds: z,
            slice: None,
        }
    }

    /// Coefficient depending on the diagonal only.
    pub fn diagonal(
        value: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        ds: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            diag: Arc::new(value),
            diag_ds: Arc::new(ds),
            slice: None,
        }
    }

    /// Adds the linear-in-slice part `φ²_t(s, a) y`.
    pub fn with_slice(
        mut self,
        value: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        ds: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.slice = Some((Arc::new(value), Arc::new(ds)));
        self
    }

    #[inline]
    pub fn eval(&self, t: f64, s: f64, x: f64, y: f64, a: f64) -> f64 {
        let base = (self.diag)(t, s, x, a);
        match &self.slice {
            Some((g, _)) => base + g(t, s, a) * y,
            None => base,
        }
    }

    /// `∂_s` of `s ↦ φ_t(s, x, y(s), a)` given `y'(s)`.
    pub fn eval_ds(&self, t: f64, s: f64, x: f64, y: f64, dy: f64, a: f64) -> f64 {
        let base = (self.diag_ds)(t, s, x, a);
        match &self.slice {
            Some((g, dg)) => base + dg(t, s, a) * y + g(t, s, a) * dy,
            None => base,
        }
    }

    /// `s`-profile at running time `t` for state `x` (diagonal value `x.eval(t)`).
    pub fn profile(&self, t: f64, x: &SobolevPath, a: f64) -> SobolevPath {
        let grid = *x.grid();
        let xt = x.eval(t);
        let pts = grid.points();
        let values = pts
            .iter()
            .zip(x.values())
            .map(|(&s, &y)| self.eval(t, s, xt, y, a))
            .collect();
        let derivs = pts
            .iter()
            .zip(x.values().iter().zip(x.derivs()))
            .map(|(&s, (&y, &dy))| self.eval_ds(t, s, xt, y, dy, a))
            .collect();
        SobolevPath::new(grid, values, derivs).expect("profile arrays match the grid")
    }
}

/// Declared constants for the probing checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientBounds {
    /// Bound on the slice parts and their `s`-derivatives.
    pub bound: f64,
    /// Lipschitz constant in the diagonal value.
    pub lipschitz: f64,
}

impl Default for CoefficientBounds {
    fn default() -> Self {
        Self {
            bound: 10.0,
            lipschitz: 10.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoefficientSet {
    pub drift: Coefficient,
    pub vol: Coefficient,
    pub bounds: CoefficientBounds,
}

/// Largest values seen while probing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientReport {
    pub max_slice_magnitude: f64,
    pub max_lipschitz_ratio: f64,
}

impl CoefficientSet {
    pub fn new(drift: Coefficient, vol: Coefficient) -> Self {
        Self {
            drift,
            vol,
            bounds: CoefficientBounds::default(),
        }
    }

    pub fn with_bounds(mut self, bounds: CoefficientBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn zero() -> Self {
        Self::new(Coefficient::zero(), Coefficient::zero())
    }

    /// True when neither coefficient depends on the slice value, i.e. the
    /// lifted equation is the lift of a direct Volterra equation.
    pub fn is_volterra_form(&self) -> bool {
        self.drift.slice.is_none() && self.vol.slice.is_none()
    }

    /// Randomised probe of the boundedness and Lipschitz conditions on a
    /// deterministic lattice of `(t, s, x, a)` points.
    pub fn check(&self, horizon: f64, controls: &[f64]) -> Result<CoefficientReport> {
        let n = 9;
        let times: Vec<f64> = (0..n).map(|i| horizon * i as f64 / (n - 1) as f64).collect();
        let xs = [-3.0, -1.0, -0.25, 0.0, 0.5, 1.0, 2.5];
        let controls = if controls.is_empty() { &[0.0][..] } else { controls };
        let mut max_slice = 0.0_f64;
        let mut max_lip = 0.0_f64;
        for &t in &times {
            for &s in &times {
                for &a in controls {
                    for c in [&self.drift, &self.vol] {
                        if let Some((g, dg)) = &c.slice {
                            max_slice = max_slice.max(g(t, s, a).abs()).max(dg(t, s, a).abs());
                        }
                        for w in xs.windows(2) {
                            let dx = w[1] - w[0];
                            let r0 = ((c.diag)(t, s, w[1], a) - (c.diag)(t, s, w[0], a)).abs() / dx;
                            let r1 = ((c.diag_ds)(t, s, w[1], a) - (c.diag_ds)(t, s, w[0], a)).abs() / dx;
                            max_lip = max_lip.max(r0).max(r1);
                        }
                    }
                }
            }
        }
        if !(max_slice.is_finite() && max_lip.is_finite()) {
            return Err(LabError::Coefficient("non-finite coefficient value on probes".into()));
        }
        if max_slice > self.bounds.bound {
            return Err(LabError::Coefficient(format!(
                "slice part reaches {max_slice:.4} above the declared bound {}",
                self.bounds.bound
            )));
        }
        if max_lip > self.bounds.lipschitz {
            return Err(LabError::Coefficient(format!(
                "Lipschitz ratio {max_lip:.4} above the declared constant {}",
                self.bounds.lipschitz
            )));
        }
        Ok(CoefficientReport {
            max_slice_magnitude: max_slice,
            max_lipschitz_ratio: max_lip,
        })
    }
}

/// Ready-made coefficient sets.
pub mod presets {
    use super::*;

    /// Zero drift, volatility `K(s - t)`.
    pub fn additive_kernel(
        kernel: impl Fn(f64) -> f64 + Send + Sync + 'static,
        kernel_d: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> CoefficientSet {
        CoefficientSet::new(
            Coefficient::zero(),
            Coefficient::diagonal(move |t, s, _, _| kernel(s - t), move |t, s, _, _| kernel_d(s - t)),
        )
    }

    /// Drift equal to the control, no noise.
    pub fn control_drift() -> CoefficientSet {
        CoefficientSet::new(
            Coefficient::diagonal(|_, _, _, a| a, |_, _, _, _| 0.0),
            Coefficient::zero(),
        )
    }

    /// Direct drift `b_r(t) = t - r`, no noise; the diagonal is `x0 + t^2/2`.
    pub fn time_lag_drift() -> CoefficientSet {
        CoefficientSet::new(
            Coefficient::diagonal(|t, s, _, _| s - t, |_, _, _, _| 1.0),
            Coefficient::zero(),
        )
    }

    /// Pure slice drift `b = y`: each slice grows like `e^t`.
    pub fn slice_growth() -> CoefficientSet {
        CoefficientSet::new(
            Coefficient::zero().with_slice(|_, _, _| 1.0, |_, _, _| 0.0),
            Coefficient::zero(),
        )
    }

    /// Smooth exponential kernel with mean reversion and multiplicative
    /// noise: `b = e^{-(s-t)} (1 - x)`, `σ = e^{-(s-t)} x / 2`.
    pub fn smooth_kernel() -> CoefficientSet {
        CoefficientSet::new(
            Coefficient::diagonal(
                |t, s, x, _| (-(s - t)).exp() * (1.0 - x),
                |t, s, x, _| -(-(s - t)).exp() * (1.0 - x),
            ),
            Coefficient::diagonal(
                |t, s, x, _| 0.5 * (-(s - t)).exp() * x,
                |t, s, x, _| -0.5 * (-(s - t)).exp() * x,
            ),
        )
    }
}

/// What a control rule can see at a decision time.
#[derive(Debug, Clone, Copy)]
pub struct StateView<'a> {
    pub step: usize,
    pub t: f64,
    pub diagonal: f64,
    /// Current lifted state on the space grid, when simulating the lifted
    /// equation.
    pub sheet: Option<&'a [f64]>,
}

pub trait Policy: Send + Sync {
    fn control(&self, state: &StateView<'_>) -> f64;
}

/// Compact control set `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBox {
    pub lo: f64,
    pub hi: f64,
}

impl ControlBox {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(LabError::Domain(format!("invalid control box [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, a: f64) -> bool {
        (self.lo..=self.hi).contains(&a)
    }
}

pub type FeedbackRule = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ControlKind {
    Constant(f64),
    /// `(first step, value)` pairs; breakpoints are step indices of the time grid.
    PiecewiseConstant(Vec<(usize, f64)>),
    /// `(t, diagonal value) -> control`, clamped into the box.
    Feedback(FeedbackRule),
}

#[derive(Clone)]
pub struct ControlPath {
    kind: ControlKind,
    bounds: ControlBox,
}

impl std::fmt::Debug for ControlPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.kind {
            ControlKind::Constant(a) => format!("constant({a})"),
            ControlKind::PiecewiseConstant(p) => format!("piecewise({} pieces)", p.len()),
            ControlKind::Feedback(_) => "feedback".to_string(),
        };
        f.debug_struct("ControlPath")
            .field("kind", &kind)
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl ControlPath {
    /// The zero control on the trivial box `{0}`.
    pub fn none() -> Self {
        Self {
            kind: ControlKind::Constant(0.0),
            bounds: ControlBox { lo: 0.0, hi: 0.0 },
        }
    }

    pub fn constant(a: f64, bounds: ControlBox) -> Result<Self> {
        if !bounds.contains(a) {
            return Err(LabError::Domain(format!(
                "control {a} outside [{}, {}]",
                bounds.lo, bounds.hi
            )));
        }
        Ok(Self {
            kind: ControlKind::Constant(a),
            bounds,
        })
    }

    pub fn piecewise(pieces: Vec<(usize, f64)>, bounds: ControlBox) -> Result<Self> {
        if pieces.first().map(|p| p.0) != Some(0) {
            return Err(LabError::Domain("piecewise control must start at step 0".into()));
        }
        if pieces.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(LabError::Domain("piecewise breakpoints must be increasing".into()));
        }
        if let Some(&(_, a)) = pieces.iter().find(|p| !bounds.contains(p.1)) {
            return Err(LabError::Domain(format!(
                "control {a} outside [{}, {}]",
                bounds.lo, bounds.hi
            )));
        }
        Ok(Self {
            kind: ControlKind::PiecewiseConstant(pieces),
            bounds,
        })
    }

    pub fn feedback(rule: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, bounds: ControlBox) -> Self {
        Self {
            kind: ControlKind::Feedback(Arc::new(rule)),
            bounds,
        }
    }

    pub fn bounds(&self) -> ControlBox {
        self.bounds
    }
}

impl Policy for ControlPath {
    fn control(&self, state: &StateView<'_>) -> f64 {
        match &self.kind {
            ControlKind::Constant(a) => *a,
            ControlKind::PiecewiseConstant(pieces) => {
                let idx = pieces.partition_point(|p| p.0 <= state.step);
                pieces[idx - 1].1
            }
            ControlKind::Feedback(rule) => rule(state.t, state.diagonal).clamp(self.bounds.lo, self.bounds.hi),
        }
    }
}

/// One simulated path: diagonal values at every time node and the control
/// applied on every step.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRun {
    pub diagonal: Vec<f64>,
    pub controls: Vec<f64>,
}

/// Direct left-point scheme for one path given its Brownian increments.
pub fn direct_path(
    coeffs: &CoefficientSet,
    policy: &dyn Policy,
    x0: f64,
    grid: &TimeGrid,
    increments: &[f64],
    path: usize,
) -> Result<PathRun> {
    let n = grid.intervals();
    debug_assert_eq!(increments.len(), n);
    let h = grid.step();
    let times = grid.points();
    let mut x = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n);
    x.push(x0);
    for j in 0..n {
        let a = policy.control(&StateView {
            step: j,
            t: times[j],
            diagonal: x[j],
            sheet: None,
        });
        controls.push(a);
        let tj = times[j + 1];
        let mut acc = x0;
        for i in 0..=j {
            let (r, xi, ai) = (times[i], x[i], controls[i]);
            acc += (coeffs.drift.diag)(r, tj, xi, ai) * h + (coeffs.vol.diag)(r, tj, xi, ai) * increments[i];
        }
        if !acc.is_finite() {
            return Err(LabError::NonFinite { path, step: j + 1 });
        }
        x.push(acc);
    }
    Ok(PathRun { diagonal: x, controls })
}

/// Lifted Euler scheme for one path. `observer` sees the sheet at every
/// time node `0..=n_t`, before the update of that step.
pub fn lifted_path(
    coeffs: &CoefficientSet,
    policy: &dyn Policy,
    x0: &SobolevPath,
    grid: &TimeGrid,
    increments: &[f64],
    path: usize,
    observer: &mut dyn FnMut(usize, &[f64]),
) -> Result<PathRun> {
    let space = *x0.grid();
    if (space.horizon() - grid.horizon()).abs() > 1e-12 * grid.horizon() {
        return Err(LabError::Dimension(format!(
            "space horizon {} differs from time horizon {}",
            space.horizon(),
            grid.horizon()
        )));
    }
    let n = grid.intervals();
    debug_assert_eq!(increments.len(), n);
    let h = grid.step();
    let times = grid.points();
    let slices = space.points();
    let mut sheet = x0.values().to_vec();
    let mut diagonal = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n);
    for (i, &t) in times.iter().enumerate() {
        let xd = space.interpolate(&sheet, t);
        diagonal.push(xd);
        observer(i, &sheet);
        if i == n {
            break;
        }
        let a = policy.control(&StateView {
            step: i,
            t,
            diagonal: xd,
            sheet: Some(&sheet),
        });
        controls.push(a);
        let dw = increments[i];
        for (y, &s) in sheet.iter_mut().zip(&slices) {
            *y += coeffs.drift.eval(t, s, xd, *y, a) * h + coeffs.vol.eval(t, s, xd, *y, a) * dw;
        }
        if sheet.iter().any(|v| !v.is_finite()) {
            return Err(LabError::NonFinite { path, step: i + 1 });
        }
    }
    Ok(PathRun { diagonal, controls })
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleData {
    /// `[path][time]`
    Diagonal(Vec<Vec<f64>>),
    /// `[path][time][slice]`
    Lifted(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    /// Space grid of the slices, for lifted ensembles.
    pub space: Option<TimeGrid>,
    pub seed_base: u64,
    pub data: EnsembleData,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        match &self.data {
            EnsembleData::Diagonal(d) => d.len(),
            EnsembleData::Lifted(d) => d.len(),
        }
    }

    pub fn diagonal_paths(&self) -> Option<&[Vec<f64>]> {
        match &self.data {
            EnsembleData::Diagonal(d) => Some(d),
            EnsembleData::Lifted(_) => None,
        }
    }

    pub fn sheets(&self) -> Option<&[Vec<Vec<f64>>]> {
        match &self.data {
            EnsembleData::Lifted(d) => Some(d),
            EnsembleData::Diagonal(_) => None,
        }
    }

    /// Values at time index `i` across paths.
    pub fn diagonal_at(&self, i: usize) -> Option<Vec<f64>> {
        self.diagonal_paths().map(|d| d.iter().map(|p| p[i]).collect())
    }

    /// `path_id,t,x` for diagonal ensembles, `path_id,t,s,x` for lifted ones.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        match &self.data {
            EnsembleData::Diagonal(d) => {
                writeln!(w, "path_id,t,x")?;
                for (p, path) in d.iter().enumerate() {
                    for (i, x) in path.iter().enumerate() {
                        writeln!(w, "{p},{},{x}", self.grid.point(i))?;
                    }
                }
            }
            EnsembleData::Lifted(d) => {
                let space = self.space.expect("lifted ensembles carry a space grid");
                writeln!(w, "path_id,t,s,x")?;
                for (p, path) in d.iter().enumerate() {
                    for (i, sheet) in path.iter().enumerate() {
                        for (k, x) in sheet.iter().enumerate() {
                            writeln!(w, "{p},{},{},{x}", self.grid.point(i), space.point(k))?;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn require_volterra_form(coeffs: &CoefficientSet) -> Result<()> {
    if coeffs.is_volterra_form() {
        Ok(())
    } else {
        Err(LabError::Coefficient(
            "the direct equation needs coefficients without slice dependence".into(),
        ))
    }
}

pub fn simulate_direct(
    coeffs: &CoefficientSet,
    policy: &dyn Policy,
    x0: f64,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    require_volterra_form(coeffs)?;
    let h = grid.step();
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let dw = brownian_increments(seed, p, grid.intervals(), h);
            direct_path(coeffs, policy, x0, &grid, &dw, p).map(|r| r.diagonal)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        grid,
        space: None,
        seed_base: seed,
        data: EnsembleData::Diagonal(paths),
    })
}

/// Lifted simulation keeping every sheet (memory `n_paths * (n_t+1) * (n_s+1)`).
pub fn simulate_lifted(
    coeffs: &CoefficientSet,
    policy: &dyn Policy,
    x0: &SobolevPath,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let h = grid.step();
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let dw = brownian_increments(seed, p, grid.intervals(), h);
            let mut sheets = Vec::with_capacity(grid.len());
            lifted_path(coeffs, policy, x0, &grid, &dw, p, &mut |_, s| sheets.push(s.to_vec()))?;
            Ok(sheets)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        grid,
        space: Some(*x0.grid()),
        seed_base: seed,
        data: EnsembleData::Lifted(paths),
    })
}

/// Lifted simulation storing the diagonal only.
pub fn simulate_lifted_diagonal(
    coeffs: &CoefficientSet,
    policy: &dyn Policy,
    x0: &SobolevPath,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let h = grid.step();
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let dw = brownian_increments(seed, p, grid.intervals(), h);
            lifted_path(coeffs, policy, x0, &grid, &dw, p, &mut |_, _| {}).map(|r| r.diagonal)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        grid,
        space: None,
        seed_base: seed,
        data: EnsembleData::Diagonal(paths),
    })
}

/// `t ↦ X^t_t` read off each stored sheet by linear interpolation in `s`.
pub fn diagonal(ens: &PathEnsemble) -> Result<PathEnsemble> {
    let (Some(sheets), Some(space)) = (ens.sheets(), ens.space) else {
        return Err(LabError::Domain("diagonal extraction needs a lifted ensemble".into()));
    };
    let times = ens.grid.points();
    let data = sheets
        .iter()
        .map(|path| {
            path.iter()
                .zip(&times)
                .map(|(sheet, &t)| space.interpolate(sheet, t))
                .collect()
        })
        .collect();
    Ok(PathEnsemble {
        grid: ens.grid,
        space: None,
        seed_base: ens.seed_base,
        data: EnsembleData::Diagonal(data),
    })
}

/// `Σ_{k >= n} <σ_t(·, x(t), x(·), a), e_k>^2`: the part of the volatility
/// profile not captured by the first `n` basis members.
pub fn tail_trace(coeffs: &CoefficientSet, basis: &BasisSet, n: usize, t: f64, x: &SobolevPath, a: f64) -> Result<f64> {
    if n >= basis.len() {
        return Err(LabError::Domain(format!(
            "truncation {n} must be below the basis size {}",
            basis.len()
        )));
    }
    let profile = coeffs.vol.profile(t, x, a);
    let c = basis.project(&profile)?;
    Ok(c[n..].iter().map(|v| v * v).sum())
}

/// Strong error between the direct scheme on a fine reference grid and the
/// lifted diagonal on coarser grids driven by the same Brownian paths.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingReport {
    pub steps: Vec<f64>,
    pub rms: Vec<f64>,
    /// Standard error of each mean-square estimate.
    pub mse_std_err: Vec<f64>,
    pub slope: f64,
}

pub fn diagonal_coupling(
    coeffs: &CoefficientSet,
    x0: f64,
    horizon: f64,
    levels: &[usize],
    reference: usize,
    n_paths: usize,
    seed: u64,
) -> Result<CouplingReport> {
    require_volterra_form(coeffs)?;
    let ref_grid = TimeGrid::new(horizon, reference)?;
    let grids = levels
        .iter()
        .map(|&n| {
            if !reference.is_multiple_of(n) {
                return Err(LabError::Domain(format!(
                    "level {n} does not divide the reference resolution {reference}"
                )));
            }
            TimeGrid::new(horizon, n)
        })
        .collect::<Result<Vec<_>>>()?;
    let none = ControlPath::none();
    let sq_errors: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let fine = brownian_increments(seed, p, reference, ref_grid.step());
            let truth = direct_path(coeffs, &none, x0, &ref_grid, &fine, p)?;
            let xt = *truth.diagonal.last().unwrap();
            grids
                .iter()
                .map(|g| {
                    let dw = coarsen(&fine, reference / g.intervals());
                    let start = SobolevPath::constant(*g, x0);
                    let run = lifted_path(coeffs, &none, &start, g, &dw, p, &mut |_, _| {})?;
                    Ok((run.diagonal.last().unwrap() - xt).powi(2))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rms = Vec::new();
    let mut se = Vec::new();
    for l in 0..levels.len() {
        let col: Vec<f64> = sq_errors.iter().map(|r| r[l]).collect();
        let e = Estimate::from_samples(&col);
        rms.push(e.mean.sqrt());
        se.push(e.std_err);
    }
    let steps: Vec<f64> = grids.iter().map(|g| g.step()).collect();
    let slope = log_log_slope(&steps, &rms);
    Ok(CouplingReport {
        steps,
        rms,
        mse_std_err: se,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sobolev::basis;
    use crate::stats::sample_variance;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn zero_coefficients_freeze_the_state() {
        let ens = simulate_direct(&CoefficientSet::zero(), &ControlPath::none(), 0.7, grid(8), 5, 1).unwrap();
        for p in ens.diagonal_paths().unwrap() {
            assert!(p.iter().all(|&x| x == 0.7));
        }
        let x0 = SobolevPath::from_fn(grid(8), |s| 1.0 + s, |_| 1.0);
        let lifted = simulate_lifted(&CoefficientSet::zero(), &ControlPath::none(), &x0, grid(8), 3, 1).unwrap();
        for path in lifted.sheets().unwrap() {
            for sheet in path {
                assert_eq!(sheet.as_slice(), x0.values());
            }
        }
    }

    #[test]
    fn unit_control_drift_is_a_straight_line() {
        let bx = ControlBox::new(-1.0, 1.0).unwrap();
        let ctrl = ControlPath::constant(1.0, bx).unwrap();
        let g = grid(10);
        let ens = simulate_direct(&presets::control_drift(), &ctrl, 0.5, g, 2, 3).unwrap();
        for p in ens.diagonal_paths().unwrap() {
            for (i, x) in p.iter().enumerate() {
                assert!((x - (0.5 + g.point(i))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_sheet_has_constant_diagonal() {
        let g = grid(16);
        let ens = simulate_lifted(
            &CoefficientSet::zero(),
            &ControlPath::none(),
            &SobolevPath::constant(g, 2.5),
            g,
            2,
            9,
        )
        .unwrap();
        let d = diagonal(&ens).unwrap();
        for p in d.diagonal_paths().unwrap() {
            assert!(p.iter().all(|&x| x == 2.5));
        }
        assert!(diagonal(&d).is_err());
    }

    #[test]
    fn time_lag_drift_gives_half_square() {
        let g = grid(400);
        let start = SobolevPath::constant(g, 1.0);
        let ens = simulate_lifted_diagonal(&presets::time_lag_drift(), &ControlPath::none(), &start, g, 1, 0).unwrap();
        let p = &ens.diagonal_paths().unwrap()[0];
        for (i, x) in p.iter().enumerate() {
            let t = g.point(i);
            // left-point sum: t^2/2 + h t/2
            assert!((x - (1.0 + 0.5 * t * t)).abs() <= 0.5 * g.step() * t + 1e-12);
        }
    }

    #[test]
    fn slice_growth_is_exponential() {
        let g = grid(2000);
        let x0 = SobolevPath::from_fn(g, |s| 1.0 + s, |_| 1.0);
        let mut last = Vec::new();
        lifted_path(
            &presets::slice_growth(),
            &ControlPath::none(),
            &x0,
            &g,
            &vec![0.0; 2000],
            0,
            &mut |i, s| {
                if i == 2000 {
                    last = s.to_vec();
                }
            },
        )
        .unwrap();
        for (k, y) in last.iter().enumerate() {
            let target = (1.0 + g.point(k)) * 1.0f64.exp();
            assert!((y - target).abs() / target < 1e-3);
        }
    }

    #[test]
    fn direct_matches_lifted_on_the_same_grid() {
        let g = grid(32);
        let c = presets::smooth_kernel();
        let none = ControlPath::none();
        let dw = brownian_increments(5, 0, 32, g.step());
        let d = direct_path(&c, &none, 1.0, &g, &dw, 0).unwrap();
        let l = lifted_path(&c, &none, &SobolevPath::constant(g, 1.0), &g, &dw, 0, &mut |_, _| {}).unwrap();
        for (a, b) in d.diagonal.iter().zip(&l.diagonal) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_rejects_slice_dependent_coefficients() {
        let err = simulate_direct(&presets::slice_growth(), &ControlPath::none(), 0.0, grid(4), 1, 0);
        assert!(matches!(err, Err(LabError::Coefficient(_))));
    }

    #[test]
    fn non_finite_states_abort_with_location() {
        let blow = CoefficientSet::new(
            Coefficient::diagonal(
                |_, _, x, _| if x > 0.45 { f64::INFINITY } else { 1.0 },
                |_, _, _, _| 0.0,
            ),
            Coefficient::zero(),
        );
        let err = simulate_direct(&blow, &ControlPath::none(), 0.0, grid(10), 3, 0).unwrap_err();
        assert!(matches!(err, LabError::NonFinite { path: 0, .. }));
    }

    #[test]
    fn ito_isometry_for_exponential_kernel() {
        let g = grid(50);
        let c = presets::additive_kernel(|u| (-u).exp(), |u| -(-u).exp());
        let ens = simulate_direct(&c, &ControlPath::none(), 0.0, g, 20_000, 17).unwrap();
        let xt = ens.diagonal_at(50).unwrap();
        let var = sample_variance(&xt);
        // left-point Riemann sum of ∫ e^{-2u} du on the grid
        let h = g.step();
        let expected: f64 = (0..50).map(|i| (-2.0 * (1.0 - i as f64 * h)).exp() * h).sum();
        let se = expected * (2.0 / 20_000.0f64).sqrt();
        assert!((var - expected).abs() < 4.0 * se, "var {var} vs {expected}");
    }

    #[test]
    fn per_slice_martingale_means() {
        let g = grid(20);
        let c = presets::additive_kernel(|u| (-u * u).exp(), |u| -2.0 * u * (-u * u).exp());
        let x0 = SobolevPath::from_fn(g, |s| s.sin(), |s| s.cos());
        let ens = simulate_lifted(&c, &ControlPath::none(), &x0, g, 4000, 3).unwrap();
        let sheets = ens.sheets().unwrap();
        for k in [0, 7, 20] {
            let vals: Vec<f64> = sheets.iter().map(|p| p[20][k]).collect();
            let e = Estimate::from_samples(&vals);
            assert!((e.mean - x0.values()[k]).abs() < 4.0 * e.std_err);
        }
    }

    #[test]
    fn piecewise_and_feedback_controls() {
        let bx = ControlBox::new(-1.0, 1.0).unwrap();
        assert!(ControlPath::piecewise(vec![(1, 0.0)], bx).is_err());
        assert!(ControlPath::piecewise(vec![(0, 0.0), (0, 1.0)], bx).is_err());
        assert!(ControlPath::constant(2.0, bx).is_err());
        let pw = ControlPath::piecewise(vec![(0, -1.0), (5, 0.5)], bx).unwrap();
        let view = |step| StateView {
            step,
            t: 0.0,
            diagonal: 0.0,
            sheet: None,
        };
        assert_eq!(pw.control(&view(4)), -1.0);
        assert_eq!(pw.control(&view(5)), 0.5);
        let fb = ControlPath::feedback(|_, x| 10.0 * x, bx);
        let st = StateView {
            step: 0,
            t: 0.0,
            diagonal: 0.3,
            sheet: None,
        };
        assert_eq!(fb.control(&st), 1.0);
    }

    #[test]
    fn coefficient_checks() {
        assert!(presets::smooth_kernel().check(1.0, &[0.0]).is_ok());
        let steep = CoefficientSet::new(
            Coefficient::diagonal(|_, _, x, _| 100.0 * x, |_, _, _, _| 0.0),
            Coefficient::zero(),
        );
        assert!(matches!(steep.check(1.0, &[]), Err(LabError::Coefficient(_))));
        let unbounded = CoefficientSet::new(
            Coefficient::zero().with_slice(|_, s, _| 50.0 * s, |_, _, _| 50.0),
            Coefficient::zero(),
        );
        assert!(unbounded.check(1.0, &[]).is_err());
    }

    #[test]
    fn tail_trace_examples() {
        let g = grid(1024);
        let b = basis(17, g).unwrap();
        let x = SobolevPath::zeros(g);
        let flat = presets::additive_kernel(|_| 1.0, |_| 0.0);
        assert!(tail_trace(&flat, &b, 1, 0.0, &x, 0.0).unwrap() < 1e-20);

        // σ_t(s) = s
        let ramp = CoefficientSet::new(
            Coefficient::zero(),
            Coefficient::diagonal(|_, s, _, _| s, |_, _, _, _| 1.0),
        );
        let tails: Vec<f64> = [1, 2, 4, 8, 16]
            .iter()
            .map(|&n| tail_trace(&ramp, &b, n, 0.0, &x, 0.0).unwrap())
            .collect();
        assert!(tails.windows(2).all(|w| w[1] < w[0]), "{tails:?}");

        let last = tail_trace(&ramp, &b, 16, 0.0, &x, 0.0).unwrap();
        let c = b.project(&ramp.vol.profile(0.0, &x, 0.0)).unwrap();
        assert!((last - c[16] * c[16]).abs() < 1e-15);
        assert!(tail_trace(&ramp, &b, 17, 0.0, &x, 0.0).is_err());
    }

    #[test]
    fn ensemble_csv_schemas() {
        let g = grid(2);
        let d = simulate_direct(&CoefficientSet::zero(), &ControlPath::none(), 1.0, g, 2, 0).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("path_id,t,x\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 3);

        let l = simulate_lifted(
            &CoefficientSet::zero(),
            &ControlPath::none(),
            &SobolevPath::zeros(g),
            g,
            1,
            0,
        )
        .unwrap();
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("path_id,t,s,x\n"));
        assert_eq!(text.lines().count(), 1 + 3 * 3);
    }
}
