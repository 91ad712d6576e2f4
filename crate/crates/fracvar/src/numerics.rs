//! Quadrature, fixed-step Runge–Kutta, damped Newton and shooting.
//!
//! Fractional problems produce ODEs with kernels such as `t^{-α}` at the
//! start and `(T−t)^{-α}` at the end of the interval. Besides the plain
//! uniform RK4 the integrator can therefore run on a graded mesh: it
//! integrates uniformly in a stretched variable σ with `t = t(σ)` and
//! `dy/dσ = f(t, y)·dt/dσ`, which concentrates nodes near singular ends
//! while keeping the fixed-step RK4 scheme.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Composite rule for [`quad`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadRule {
    LeftRect,
    Trapezoid,
}

fn check_uniform(nodes: &[f64]) -> Result<f64> {
    if nodes.len() < 2 {
        return Err(Error::Grid("quadrature needs at least two nodes".into()));
    }
    let n = nodes.len() - 1;
    let h = (nodes[n] - nodes[0]) / n as f64;
    if !(h > 0.0) {
        return Err(Error::Grid("nodes must be increasing".into()));
    }
    for w in nodes.windows(2) {
        let tol = 1e-12 * h + 8.0 * f64::EPSILON * w[0].abs().max(w[1].abs());
        if ((w[1] - w[0]) - h).abs() > tol {
            return Err(Error::Grid("quadrature rule needs a uniform grid".into()));
        }
    }
    Ok(h)
}

/// Composite left-rectangle or trapezoid rule on a uniform grid.
pub fn quad(nodes: &[f64], values: &[f64], rule: QuadRule) -> Result<f64> {
    let h = check_uniform(nodes)?;
    if values.len() != nodes.len() {
        return Err(Error::Grid("values and nodes differ in length".into()));
    }
    let n = values.len() - 1;
    Ok(match rule {
        QuadRule::LeftRect => h * values[..n].iter().sum::<f64>(),
        QuadRule::Trapezoid => {
            h * (0.5 * (values[0] + values[n]) + values[1..n].iter().sum::<f64>())
        }
    })
}

/// Trapezoid rule on arbitrary increasing nodes.
pub fn trapezoid(t: &[f64], x: &[f64]) -> f64 {
    t.windows(2)
        .zip(x.windows(2))
        .map(|(tw, xw)| 0.5 * (tw[1] - tw[0]) * (xw[0] + xw[1]))
        .sum()
}

/// Running trapezoid integral from the first node; the result starts at 0.
pub fn cumulative_trapezoid(t: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..t.len() {
        acc += 0.5 * (t[i] - t[i - 1]) * (x[i] + x[i - 1]);
        out.push(acc);
    }
    out
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod<F: FnMut(f64) -> Result<f64>>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut k = GK_WEIGHTS[7] * fc;
    let mut g = G_WEIGHTS[3] * fc;
    for j in 0..7 {
        let x = h * GK_NODES[j];
        let s = f(c - x)? + f(c + x)?;
        k += GK_WEIGHTS[j] * s;
        if j % 2 == 1 {
            g += G_WEIGHTS[j / 2] * s;
        }
    }
    Ok((k * h, ((k - g) * h).abs()))
}

/// Adaptive Gauss–Kronrod (7/15) quadrature with absolute-or-relative
/// tolerance `tol`.
pub fn integrate<F: FnMut(f64) -> Result<f64>>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut stack = vec![(a, b, 0usize)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let (v, err) = gauss_kronrod(&mut f, lo, hi)?;
        let scale = (hi - lo).abs() / (b - a).abs();
        if err <= tol * scale.max(1e-3) || err <= tol * v.abs() * scale || depth >= 40 {
            total += v;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, depth + 1));
            stack.push((mid, hi, depth + 1));
        }
    }
    Ok(total)
}

/// Running integral of `f` at the given increasing nodes, panel by panel
/// with [`integrate`]. The first entry is 0.
pub fn cumulative_integral<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    nodes: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(nodes.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in nodes.windows(2) {
        acc += integrate(&mut f, w[0], w[1], tol)?;
        out.push(acc);
    }
    Ok(out)
}

/// Right-hand side `(t, y, dy)`.
pub type Rhs<'a> = Box<dyn Fn(f64, &[f64], &mut [f64]) -> Result<()> + 'a>;

/// First-order system `y' = f(t, y)`.
pub struct OdeSystem<'a> {
    pub dim: usize,
    pub rhs: Rhs<'a>,
    /// When set, uniform integration starts at `t0 + δ` instead of `t0`.
    pub singular_start: Option<f64>,
}

impl<'a> OdeSystem<'a> {
    pub fn new<F>(dim: usize, rhs: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) -> Result<()> + 'a,
    {
        OdeSystem {
            dim,
            rhs: Box::new(rhs),
            singular_start: None,
        }
    }

    pub fn with_singular_start(mut self, delta: f64) -> Self {
        self.singular_start = Some(delta);
        self
    }
}

/// States at the integration nodes, in integration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.y.iter().map(|s| s[i]).collect()
    }

    pub fn last_state(&self) -> &[f64] {
        self.y.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Same trajectory with nodes in increasing time.
    pub fn ascending(mut self) -> Self {
        if self.t.len() > 1 && self.t[0] > self.t[self.t.len() - 1] {
            self.t.reverse();
            self.y.reverse();
        }
        self
    }

    /// Linear interpolation of component `i` (nodes must be ascending).
    pub fn interpolate(&self, i: usize, t: f64) -> f64 {
        let n = self.t.len();
        if t <= self.t[0] {
            return self.y[0][i];
        }
        if t >= self.t[n - 1] {
            return self.y[n - 1][i];
        }
        let k = self.t.partition_point(|&s| s <= t).max(1);
        let (t0, t1) = (self.t[k - 1], self.t[k]);
        let w = (t - t0) / (t1 - t0);
        (1.0 - w) * self.y[k - 1][i] + w * self.y[k][i]
    }
}

fn rk4_step(
    sys: &OdeSystem,
    t: f64,
    h: f64,
    y: &[f64],
    work: &mut [Vec<f64>; 5],
) -> Result<Vec<f64>> {
    let n = y.len();
    let [k1, k2, k3, k4, tmp] = work;
    (sys.rhs)(t, y, k1)?;
    for j in 0..n {
        tmp[j] = y[j] + 0.5 * h * k1[j];
    }
    (sys.rhs)(t + 0.5 * h, tmp, k2)?;
    for j in 0..n {
        tmp[j] = y[j] + 0.5 * h * k2[j];
    }
    (sys.rhs)(t + 0.5 * h, tmp, k3)?;
    for j in 0..n {
        tmp[j] = y[j] + h * k3[j];
    }
    (sys.rhs)(t + h, tmp, k4)?;
    Ok((0..n)
        .map(|j| y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
        .collect())
}

fn workspace(n: usize) -> [Vec<f64>; 5] {
    std::array::from_fn(|_| vec![0.0; n])
}

fn check_finite(t: f64, y: &[f64]) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { t })
    }
}

/// Classical fixed-step RK4 on a uniform grid from `t0` (or `t0 + δ` for a
/// singular start) to `t1`. `t1 < t0` integrates backward.
///
/// ```
/// use fracvar::numerics::{rk4_solve, OdeSystem};
/// let sys = OdeSystem::new(1, |_t, y, dy| { dy[0] = y[0]; Ok(()) });
/// let tr = rk4_solve(&sys, 0.0, 1.0, &[1.0], 100).unwrap();
/// assert!((tr.last_state()[0] - std::f64::consts::E).abs() < 1e-8);
/// ```
pub fn rk4_solve(
    sys: &OdeSystem,
    t0: f64,
    t1: f64,
    y0: &[f64],
    steps: usize,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Grid("rk4 needs at least one step".into()));
    }
    if y0.len() != sys.dim {
        return Err(Error::Domain(format!(
            "initial state has {} components, system has {}",
            y0.len(),
            sys.dim
        )));
    }
    let start = match sys.singular_start {
        Some(d) => t0 + d * (t1 - t0).signum(),
        None => t0,
    };
    let h = (t1 - start) / steps as f64;
    let mut work = workspace(sys.dim);
    let mut t = Vec::with_capacity(steps + 1);
    let mut y = Vec::with_capacity(steps + 1);
    t.push(start);
    y.push(y0.to_vec());
    for i in 0..steps {
        let ti = start + i as f64 * h;
        let next = rk4_step(sys, ti, h, &y[i], &mut work)?;
        let tn = if i + 1 == steps {
            t1
        } else {
            start + (i + 1) as f64 * h
        };
        check_finite(tn, &next)?;
        t.push(tn);
        y.push(next);
    }
    Ok(Trajectory { t, y })
}

/// Node placement for [`rk4_mapped`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeMap {
    /// Uniform in t.
    Uniform,
    /// σ = ln(t − lo): geometric clustering at the lower end.
    SingularStart,
    /// σ = −ln(hi − t): clustering at the upper end.
    SingularEnd,
    /// Logistic map, clustering at both ends.
    SingularBoth,
}

/// A mesh on `[lo, hi]`; singular ends are clamped by `delta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mesh {
    pub lo: f64,
    pub hi: f64,
    pub map: TimeMap,
    pub steps: usize,
    pub delta: f64,
}

/// Default offset for singular endpoints.
pub const DEFAULT_DELTA: f64 = 1e-8;

impl Mesh {
    pub fn new(lo: f64, hi: f64, map: TimeMap, steps: usize) -> Self {
        Mesh {
            lo,
            hi,
            map,
            steps,
            delta: DEFAULT_DELTA,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    fn sigma_range(&self) -> (f64, f64) {
        let l = self.hi - self.lo;
        let d = self.delta;
        match self.map {
            TimeMap::Uniform => (self.lo, self.hi),
            TimeMap::SingularStart => (d.ln(), l.ln()),
            TimeMap::SingularEnd => (-l.ln(), -d.ln()),
            TimeMap::SingularBoth => (-((l - d) / d).ln(), ((l - d) / d).ln()),
        }
    }

    /// `(t, dt/dσ)` at σ.
    pub fn time(&self, s: f64) -> (f64, f64) {
        let l = self.hi - self.lo;
        match self.map {
            TimeMap::Uniform => (s, 1.0),
            TimeMap::SingularStart => {
                let e = s.exp();
                (self.lo + e, e)
            }
            TimeMap::SingularEnd => {
                let e = (-s).exp();
                (self.hi - e, e)
            }
            TimeMap::SingularBoth => {
                let q = 1.0 / (1.0 + (-s).exp());
                // both factors are kept separately to stay accurate near the ends
                let left = l * q;
                let right = l * (1.0 - q);
                (self.lo + left, left * right / l)
            }
        }
    }

    /// The σ nodes, ascending.
    pub fn sigma_nodes(&self) -> Vec<f64> {
        let (s0, s1) = self.sigma_range();
        let h = (s1 - s0) / self.steps as f64;
        (0..=self.steps)
            .map(|i| {
                if i == self.steps {
                    s1
                } else {
                    s0 + i as f64 * h
                }
            })
            .collect()
    }

    /// Physical nodes, ascending.
    pub fn nodes(&self) -> Vec<f64> {
        self.sigma_nodes()
            .into_iter()
            .map(|s| self.time(s).0)
            .collect()
    }
}

/// Fixed-step RK4 in the mesh variable σ. `forward = false` starts at the
/// upper end and integrates down to the lower one.
pub fn rk4_mapped(
    sys: &OdeSystem,
    mesh: &Mesh,
    y_start: &[f64],
    forward: bool,
) -> Result<Trajectory> {
    if mesh.steps == 0 || !(mesh.hi > mesh.lo) {
        return Err(Error::Grid(
            "mesh needs at least one step on a proper interval".into(),
        ));
    }
    let mut sig = mesh.sigma_nodes();
    if !forward {
        sig.reverse();
    }
    let n = sys.dim;
    let mapped = OdeSystem::new(n, |s: f64, y: &[f64], dy: &mut [f64]| {
        let (t, dt) = mesh.time(s);
        (sys.rhs)(t, y, dy)?;
        for v in dy.iter_mut() {
            *v *= dt;
        }
        Ok(())
    });
    let mut work = workspace(n);
    let mut t = Vec::with_capacity(sig.len());
    let mut y: Vec<Vec<f64>> = Vec::with_capacity(sig.len());
    t.push(mesh.time(sig[0]).0);
    y.push(y_start.to_vec());
    for i in 0..sig.len() - 1 {
        let h = sig[i + 1] - sig[i];
        let next = rk4_step(&mapped, sig[i], h, &y[i], &mut work)?;
        let tn = mesh.time(sig[i + 1]).0;
        check_finite(tn, &next)?;
        t.push(tn);
        y.push(next);
    }
    Ok(Trajectory { t, y })
}

/// What Newton does when the Jacobian is (numerically) singular.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SingularPolicy {
    Error,
    /// Take the minimum-norm least-squares step (SVD pseudo-inverse).
    MinNorm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub fd_step: f64,
    pub max_halvings: usize,
    pub singular: SingularPolicy,
    /// Scaled 1-norm condition estimate above which the Jacobian counts as
    /// singular.
    pub cond_limit: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iter: 100,
            tol: 1e-10,
            fd_step: 1e-7,
            max_halvings: 30,
            singular: SingularPolicy::Error,
            cond_limit: 1e14,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    /// ‖F‖∞ at every accepted iterate, starting with the guess.
    pub history: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Central-difference Jacobian with step `h·max(|x_j|, 1)`.
pub fn fd_jacobian<F>(f: &mut F, x: &[f64], m: usize, h: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let step = h * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        let fp = f(&xp)?;
        xp[j] = x[j] - step;
        let fm = f(&xp)?;
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    Ok(jac)
}

/// Hager's estimate of ‖A⁻¹‖₁ from an LU factorization of A and of Aᵀ.
fn inverse_norm1_estimate(
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lut: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
) -> f64 {
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0;
    for _ in 0..5 {
        let Some(y) = lu.solve(&x) else {
            return f64::INFINITY;
        };
        est = y.iter().map(|v| v.abs()).sum::<f64>();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let Some(z) = lut.solve(&xi) else {
            return f64::INFINITY;
        };
        let (jmax, zmax) =
            z.iter().enumerate().fold(
                (0, 0.0),
                |(bj, bv), (j, v)| if v.abs() > bv { (j, v.abs()) } else { (bj, bv) },
            );
        if zmax <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(n);
        x[jmax] = 1.0;
    }
    est
}

enum Step {
    Regular(DVector<f64>),
    Singular(f64),
}

fn newton_step(jac: &DMatrix<f64>, fx: &[f64], opts: &NewtonOptions) -> Step {
    let n = jac.ncols();
    let mut scaled = jac.clone();
    let mut scale = vec![1.0; n];
    for j in 0..n {
        let s = jac.column(j).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if s == 0.0 || !s.is_finite() {
            return Step::Singular(f64::INFINITY);
        }
        scale[j] = s;
        scaled.column_mut(j).unscale_mut(s);
    }
    let rhs = DVector::from_iterator(fx.len(), fx.iter().map(|v| -v));
    let norm1 = (0..n)
        .map(|j| scaled.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let lu = scaled.clone().lu();
    let lut = scaled.transpose().lu();
    let cond = norm1 * inverse_norm1_estimate(&lu, &lut, n);
    if !(cond <= opts.cond_limit) {
        return Step::Singular(cond);
    }
    match lu.solve(&rhs) {
        Some(mut dx) => {
            for j in 0..n {
                dx[j] /= scale[j];
            }
            Step::Regular(dx)
        }
        None => Step::Singular(f64::INFINITY),
    }
}

fn min_norm_step(jac: &DMatrix<f64>, fx: &[f64]) -> DVector<f64> {
    let rhs = DVector::from_iterator(fx.len(), fx.iter().map(|v| -v));
    let svd = jac.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(&rhs, smax * 1e-12)
        .unwrap_or_else(|_| DVector::zeros(jac.ncols()))
}

/// Damped Newton with finite-difference Jacobian.
///
/// Converged when ‖F‖∞ ≤ `tol`. Steps are halved until ‖F‖∞ strictly
/// decreases.
///
/// ```
/// use fracvar::numerics::{newton_solve, NewtonOptions};
/// let r = newton_solve(|x| Ok(vec![x[0] * x[0] - 2.0]), &[1.0], &NewtonOptions::default()).unwrap();
/// assert!((r.x[0] - 2f64.sqrt()).abs() < 1e-10);
/// ```
pub fn newton_solve<F>(f: F, guess: &[f64], opts: &NewtonOptions) -> Result<NewtonReport>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    newton_solve_with_jacobian(f, None::<fn(&[f64]) -> Result<DMatrix<f64>>>, guess, opts)
}

/// [`newton_solve`] with an optional analytic Jacobian.
pub fn newton_solve_with_jacobian<F, J>(
    mut f: F,
    mut jac_fn: Option<J>,
    guess: &[f64],
    opts: &NewtonOptions,
) -> Result<NewtonReport>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
    J: FnMut(&[f64]) -> Result<DMatrix<f64>>,
{
    let mut x = guess.to_vec();
    let mut fx = f(&x)?;
    if fx.len() != x.len() {
        return Err(Error::Domain(format!(
            "residual has {} components for {} unknowns",
            fx.len(),
            x.len()
        )));
    }
    let mut norm = inf_norm(&fx);
    let mut history = vec![norm];
    for iter in 0..opts.max_iter {
        if norm <= opts.tol {
            return Ok(NewtonReport {
                x,
                iterations: iter,
                residual_norm: norm,
                history,
            });
        }
        let jac = match jac_fn.as_mut() {
            Some(j) => j(&x)?,
            None => fd_jacobian(&mut f, &x, fx.len(), opts.fd_step)?,
        };
        let dx = match newton_step(&jac, &fx, opts) {
            Step::Regular(dx) => dx,
            Step::Singular(condition) => {
                match opts.singular {
                    SingularPolicy::Error => {
                        return Err(Error::SingularJacobian {
                            condition,
                            last_iterate: x,
                            history,
                        })
                    }
                    SingularPolicy::MinNorm => {
                        debug!("newton: singular Jacobian (cond {condition:.2e}), taking min-norm step");
                        min_norm_step(&jac, &fx)
                    }
                }
            }
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x
                .iter()
                .zip(dx.iter())
                .map(|(a, d)| a + lambda * d)
                .collect();
            if let Ok(ft) = f(&trial) {
                let nt = inf_norm(&ft);
                if nt < norm {
                    accepted = Some((trial, ft, nt));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((xn, fxn, nn)) = accepted else {
            return Err(Error::NoConvergence {
                reason: format!("line search failed at iteration {iter}"),
                residual: norm,
                last_iterate: x,
                history,
            });
        };
        debug!("newton iter {iter}: |F| {norm:.3e} -> {nn:.3e} (lambda {lambda})");
        x = xn;
        fx = fxn;
        norm = nn;
        history.push(norm);
    }
    if norm <= opts.tol {
        return Ok(NewtonReport {
            x,
            iterations: opts.max_iter,
            residual_norm: norm,
            history,
        });
    }
    Err(Error::NoConvergence {
        reason: format!("no convergence in {} iterations", opts.max_iter),
        residual: norm,
        last_iterate: x,
        history,
    })
}

type InitialMap<'a> = Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>;
type IntervalMap<'a> = Box<dyn Fn(&[f64]) -> (f64, f64) + 'a>;
type ParamRhs<'a> = Box<dyn Fn(f64, &[f64], &[f64], &mut [f64]) -> Result<()> + 'a>;
type ResidualMap<'a> = Box<dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>> + 'a>;

/// Two-point boundary value problem solved by shooting.
///
/// The unknown vector holds the missing start values and any free
/// parameters (such as a final time). `start` maps the unknowns to the full
/// state at the starting end, `interval` to the (lo, hi) interval, and
/// `residual` maps the state at the far end plus the unknowns to the
/// boundary residual. `forward = false` shoots from `hi` to `lo`.
pub struct BvpSpec<'a> {
    pub dim: usize,
    pub rhs: ParamRhs<'a>,
    pub interval: IntervalMap<'a>,
    pub start: InitialMap<'a>,
    pub residual: ResidualMap<'a>,
    pub map: TimeMap,
    pub steps: usize,
    pub delta: f64,
    pub forward: bool,
}

impl BvpSpec<'_> {
    fn mesh(&self, p: &[f64]) -> Mesh {
        let (lo, hi) = (self.interval)(p);
        Mesh::new(lo, hi, self.map, self.steps).with_delta(self.delta)
    }

    /// Integrates from the starting end for the given unknowns.
    pub fn integrate(&self, p: &[f64]) -> Result<Trajectory> {
        let mesh = self.mesh(p);
        let sys = OdeSystem::new(self.dim, |t, y, dy| (self.rhs)(t, y, p, dy));
        rk4_mapped(&sys, &mesh, &(self.start)(p), self.forward)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShootOptions {
    pub newton: NewtonOptions,
    /// Retry with multiple shooting when single shooting fails.
    pub multiple_shooting_fallback: bool,
    /// Number of multiple-shooting segments (split evenly in σ).
    pub segments: usize,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            newton: NewtonOptions::default(),
            multiple_shooting_fallback: true,
            segments: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ShootResult {
    /// Trajectory in integration order.
    pub trajectory: Trajectory,
    pub unknowns: Vec<f64>,
    pub report: NewtonReport,
}

/// Solves a [`BvpSpec`] by single shooting, falling back to multiple
/// shooting if enabled.
pub fn shoot_bvp(spec: &BvpSpec, guess: &[f64], opts: &ShootOptions) -> Result<ShootResult> {
    let single = newton_solve(
        |p| {
            let tr = spec.integrate(p)?;
            (spec.residual)(tr.last_state(), p)
        },
        guess,
        &opts.newton,
    );
    match single {
        Ok(report) => {
            let trajectory = spec.integrate(&report.x)?;
            Ok(ShootResult {
                trajectory,
                unknowns: report.x.clone(),
                report,
            })
        }
        Err(e) if opts.multiple_shooting_fallback => {
            debug!("single shooting failed ({e}); trying multiple shooting");
            multiple_shooting(spec, guess, &opts.newton, opts.segments).map_err(|m| {
                debug!("multiple shooting failed too ({m})");
                e
            })
        }
        Err(e) => Err(e),
    }
}

fn multiple_shooting(
    spec: &BvpSpec,
    guess: &[f64],
    opts: &NewtonOptions,
    segments: usize,
) -> Result<ShootResult> {
    let np = guess.len();
    let n = spec.dim;
    let seg_len = spec.steps.div_ceil(segments.max(1));
    if seg_len == 0 {
        return Err(Error::Grid("too few steps for multiple shooting".into()));
    }
    let segments = spec.steps.div_ceil(seg_len);
    // Segment starts along the integration direction, in σ-node indices.
    let run = |p: &[f64], starts: &[Vec<f64>]| -> Result<(Vec<Trajectory>, Vec<f64>)> {
        let mesh = spec.mesh(p);
        let mut sig = mesh.sigma_nodes();
        if !spec.forward {
            sig.reverse();
        }
        let sys = OdeSystem::new(n, |s: f64, y: &[f64], dy: &mut [f64]| {
            let (t, dt) = mesh.time(s);
            (spec.rhs)(t, y, p, dy)?;
            for v in dy.iter_mut() {
                *v *= dt;
            }
            Ok(())
        });
        let mut work = workspace(n);
        let mut pieces = Vec::new();
        let mut jumps = Vec::new();
        for (k, chunk_start) in (0..sig.len() - 1).step_by(seg_len).enumerate() {
            let chunk_end = (chunk_start + seg_len).min(sig.len() - 1);
            let y0 = if k == 0 {
                (spec.start)(p)
            } else {
                starts[k - 1].clone()
            };
            let mut t = vec![mesh.time(sig[chunk_start]).0];
            let mut y = vec![y0];
            for i in chunk_start..chunk_end {
                let next = rk4_step(
                    &sys,
                    sig[i],
                    sig[i + 1] - sig[i],
                    y.last().unwrap(),
                    &mut work,
                )?;
                check_finite(mesh.time(sig[i + 1]).0, &next)?;
                t.push(mesh.time(sig[i + 1]).0);
                y.push(next);
            }
            if k + 1 < segments && chunk_end < sig.len() - 1 {
                let end = y.last().unwrap();
                // relative jumps: states near singular ends can be very large
                jumps.extend(
                    end.iter()
                        .zip(&starts[k])
                        .map(|(a, b)| (a - b) / (1.0 + b.abs())),
                );
            }
            pieces.push(Trajectory { t, y });
        }
        Ok((pieces, jumps))
    };
    // Interior starts come from a single pass with the guess, when it stays finite.
    let mesh = spec.mesh(guess);
    let ref_traj = spec.integrate(guess).ok();
    let mut x0 = guess.to_vec();
    for k in 1..segments {
        let idx = (k * seg_len).min(mesh.steps);
        match &ref_traj {
            Some(tr) => x0.extend_from_slice(&tr.y[idx]),
            None => x0.extend_from_slice(&(spec.start)(guess)),
        }
    }
    let split = |x: &[f64]| -> (Vec<f64>, Vec<Vec<f64>>) {
        let p = x[..np].to_vec();
        let starts = (0..segments - 1)
            .map(|k| x[np + k * n..np + (k + 1) * n].to_vec())
            .collect();
        (p, starts)
    };
    let report = newton_solve(
        |x| {
            let (p, starts) = split(x);
            let (pieces, mut jumps) = run(&p, &starts)?;
            let last = pieces.last().unwrap().last_state().to_vec();
            let mut r = (spec.residual)(&last, &p)?;
            r.append(&mut jumps);
            Ok(r)
        },
        &x0,
        opts,
    )?;
    let (p, starts) = split(&report.x);
    let (pieces, _) = run(&p, &starts)?;
    let mut trajectory = Trajectory {
        t: vec![],
        y: vec![],
    };
    for (k, piece) in pieces.into_iter().enumerate() {
        let skip = usize::from(k > 0);
        trajectory.t.extend_from_slice(&piece.t[skip..]);
        trajectory.y.extend(piece.y.into_iter().skip(skip));
    }
    Ok(ShootResult {
        trajectory,
        unknowns: p,
        report,
    })
}

/// Boundary residual map of a [`CollocationSpec`].
pub type BoundaryMap<'a> = Box<dyn Fn(&[f64]) -> Result<Vec<f64>> + 'a>;

/// Two-point boundary value problem `y' = f(t, y)` on a (possibly graded)
/// mesh; `left` and `right` return the residuals at the first and last mesh
/// node and together must have `dim` components.
pub struct CollocationSpec<'a> {
    pub dim: usize,
    pub rhs: Rhs<'a>,
    pub mesh: Mesh,
    pub left: BoundaryMap<'a>,
    pub right: BoundaryMap<'a>,
}

#[derive(Clone, Debug)]
pub struct CollocationResult {
    /// Ascending nodes.
    pub trajectory: Trajectory,
    pub iterations: usize,
    /// Scaled residual norm at the returned iterate.
    pub residual_norm: f64,
}

/// Band matrix in LAPACK layout with room for the fill-in of partial
/// pivoting: entry `(i, j)` is stored when `j − (kl + ku) ≤ i ≤ j + kl`.
struct Band {
    n: usize,
    kl: usize,
    ku2: usize,
    ld: usize,
    data: Vec<f64>,
}

impl Band {
    fn new(n: usize, kl: usize, ku: usize) -> Self {
        let ku2 = kl + ku;
        let ld = 2 * kl + ku + 1;
        Band {
            n,
            kl,
            ku2,
            ld,
            data: vec![0.0; ld * n],
        }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i + self.ku2 >= j && i <= j + self.kl);
        j * self.ld + i + self.ku2 - j
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// In-place LU with partial pivoting; `None` when a pivot vanishes
    /// relative to `tiny`.
    fn factor(&mut self, tiny: f64) -> Option<Vec<usize>> {
        let n = self.n;
        let mut piv = vec![0; n];
        for c in 0..n {
            let last = (c + self.kl).min(n - 1);
            let (p, pv) = (c..=last)
                .map(|i| (i, self.get(i, c).abs()))
                .fold((c, -1.0), |b, x| if x.1 > b.1 { x } else { b });
            if !(pv > tiny) {
                return None;
            }
            piv[c] = p;
            let jmax = (c + self.ku2).min(n - 1);
            if p != c {
                for j in c..=jmax {
                    let (a, b) = (self.get(c, j), self.get(p, j));
                    self.set(c, j, b);
                    self.set(p, j, a);
                }
            }
            let d = self.get(c, c);
            for i in c + 1..=last {
                let l = self.get(i, c) / d;
                if l == 0.0 {
                    continue;
                }
                self.set(i, c, l);
                for j in c + 1..=jmax {
                    let v = self.get(c, j);
                    if v != 0.0 {
                        self.add(i, j, -l * v);
                    }
                }
            }
        }
        Some(piv)
    }

    fn solve(&self, piv: &[usize], b: &mut [f64]) {
        let n = self.n;
        for c in 0..n {
            b.swap(c, piv[c]);
            let last = (c + self.kl).min(n - 1);
            for i in c + 1..=last {
                b[i] -= self.get(i, c) * b[c];
            }
        }
        for c in (0..n).rev() {
            let jmax = (c + self.ku2).min(n - 1);
            let mut acc = b[c];
            for j in c + 1..=jmax {
                acc -= self.get(c, j) * b[j];
            }
            b[c] = acc / self.get(c, c);
        }
    }
}

/// Per-node data of the Hermite–Simpson scheme in the mesh variable σ.
struct Collocation<'s, 'a> {
    spec: &'s CollocationSpec<'a>,
    sigma: Vec<f64>,
    nl: usize,
    nr: usize,
}

impl Collocation<'_, '_> {
    /// `dy/dσ`.
    fn g(&self, s: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        let (t, dt) = self.spec.mesh.time(s);
        (self.spec.rhs)(t, y, out)?;
        for v in out.iter_mut() {
            *v *= dt;
        }
        Ok(())
    }

    /// Central-difference Jacobian of `g` at `(s, y)`, row-major.
    fn g_jac(&self, s: f64, y: &[f64], h: f64) -> Result<Vec<f64>> {
        let d = self.spec.dim;
        let mut jac = vec![0.0; d * d];
        let mut yp = y.to_vec();
        let (mut fp, mut fm) = (vec![0.0; d], vec![0.0; d]);
        for j in 0..d {
            let step = h * y[j].abs().max(1.0);
            yp[j] = y[j] + step;
            self.g(s, &yp, &mut fp)?;
            yp[j] = y[j] - step;
            self.g(s, &yp, &mut fm)?;
            yp[j] = y[j];
            for i in 0..d {
                jac[i * d + j] = (fp[i] - fm[i]) / (2.0 * step);
            }
        }
        Ok(jac)
    }

    /// Interval residuals, optionally with their Jacobian blocks
    /// `(∂R/∂y_k, ∂R/∂y_{k+1})`.
    fn interval(
        &self,
        k: usize,
        y0: &[f64],
        y1: &[f64],
        fd: Option<f64>,
    ) -> Result<(Vec<f64>, Option<(Vec<f64>, Vec<f64>)>)> {
        let d = self.spec.dim;
        let (s0, s1) = (self.sigma[k], self.sigma[k + 1]);
        let h = s1 - s0;
        let sm = 0.5 * (s0 + s1);
        let (mut f0, mut f1, mut fm) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        self.g(s0, y0, &mut f0)?;
        self.g(s1, y1, &mut f1)?;
        let ym: Vec<f64> = (0..d)
            .map(|i| 0.5 * (y0[i] + y1[i]) + h / 8.0 * (f0[i] - f1[i]))
            .collect();
        self.g(sm, &ym, &mut fm)?;
        let r: Vec<f64> = (0..d)
            .map(|i| y1[i] - y0[i] - h / 6.0 * (f0[i] + 4.0 * fm[i] + f1[i]))
            .collect();
        let Some(step) = fd else { return Ok((r, None)) };
        let j0 = self.g_jac(s0, y0, step)?;
        let j1 = self.g_jac(s1, y1, step)?;
        let jm = self.g_jac(sm, &ym, step)?;
        // ∂y_m/∂y_0 = I/2 + h/8 J0, ∂y_m/∂y_1 = I/2 − h/8 J1
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut m0 = 0.0;
                let mut m1 = 0.0;
                for l in 0..d {
                    let e = if l == j { 0.5 } else { 0.0 };
                    m0 += jm[i * d + l] * (e + h / 8.0 * j0[l * d + j]);
                    m1 += jm[i * d + l] * (e - h / 8.0 * j1[l * d + j]);
                }
                let id = if i == j { 1.0 } else { 0.0 };
                a[i * d + j] = -id - h / 6.0 * (j0[i * d + j] + 4.0 * m0);
                b[i * d + j] = id - h / 6.0 * (j1[i * d + j] + 4.0 * m1);
            }
        }
        Ok((r, Some((a, b))))
    }

    /// Residual vector (left conditions, intervals, right conditions),
    /// each row divided by its weight.
    fn residual(&self, y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let d = self.spec.dim;
        let k_last = self.sigma.len() - 1;
        let mut out = (self.spec.left)(&y[..d])?;
        for k in 0..k_last {
            let (r, _) = self.interval(
                k,
                &y[k * d..(k + 1) * d],
                &y[(k + 1) * d..(k + 2) * d],
                None,
            )?;
            out.extend(r);
        }
        out.extend((self.spec.right)(&y[k_last * d..])?);
        check_len(out.len(), y.len())?;
        for (v, s) in out.iter_mut().zip(w) {
            *v /= s;
        }
        Ok(out)
    }

    /// Row weights: interval rows are measured relative to the states they
    /// connect, so that large singular components do not dominate.
    fn weights(&self, y: &[f64]) -> Vec<f64> {
        let d = self.spec.dim;
        let k_last = self.sigma.len() - 1;
        let mut w = vec![1.0; self.nl];
        for k in 0..k_last {
            for i in 0..d {
                w.push(1.0 + y[k * d + i].abs().max(y[(k + 1) * d + i].abs()));
            }
        }
        w.extend(std::iter::repeat_n(1.0, self.nr));
        w
    }

    fn jacobian(&self, y: &[f64], w: &[f64], fd: f64) -> Result<Band> {
        let d = self.spec.dim;
        let nl = self.nl;
        let k_last = self.sigma.len() - 1;
        let n = y.len();
        let mut band = Band::new(n, nl + d - 1, 2 * d - nl - 1);
        let mut bc = |rows: std::ops::Range<usize>,
                      cols: usize,
                      f: &BoundaryMap,
                      at: &[f64]|
         -> Result<()> {
            let mut g = |v: &[f64]| f(v);
            let jac = fd_jacobian(&mut g, at, rows.len(), fd)?;
            for (r, i) in rows.enumerate() {
                for j in 0..d {
                    band.add(i, cols + j, jac[(r, j)] / w[i]);
                }
            }
            Ok(())
        };
        bc(0..nl, 0, &self.spec.left, &y[..d])?;
        bc(
            nl + k_last * d..n,
            k_last * d,
            &self.spec.right,
            &y[k_last * d..],
        )?;
        for k in 0..k_last {
            let (_, blocks) = self.interval(
                k,
                &y[k * d..(k + 1) * d],
                &y[(k + 1) * d..(k + 2) * d],
                Some(fd),
            )?;
            let (a, b) = blocks.expect("requested");
            for i in 0..d {
                let row = nl + k * d + i;
                for j in 0..d {
                    band.add(row, k * d + j, a[i * d + j] / w[row]);
                    band.add(row, (k + 1) * d + j, b[i * d + j] / w[row]);
                }
            }
        }
        Ok(band)
    }
}

fn check_len(rows: usize, unknowns: usize) -> Result<()> {
    if rows == unknowns {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "boundary conditions give {rows} equations for {unknowns} unknowns"
        )))
    }
}

/// Solves a [`CollocationSpec`] by fourth-order Hermite–Simpson collocation
/// in the mesh variable σ, with damped Newton iterations on all node values
/// at once (banded LU). `guess(t)` provides the starting profile.
///
/// Unlike shooting, the global system stays well conditioned when the ODE
/// has modes that grow in both directions (Hamiltonian systems).
///
/// ```
/// use fracvar::numerics::{collocation_bvp, CollocationSpec, Mesh, NewtonOptions, TimeMap};
/// // y'' = 400 y, y(0) = y(1) = 1
/// let spec = CollocationSpec {
///     dim: 2,
///     rhs: Box::new(|_, y, dy| { dy[0] = y[1]; dy[1] = 400.0 * y[0]; Ok(()) }),
///     mesh: Mesh::new(0.0, 1.0, TimeMap::Uniform, 400),
///     left: Box::new(|y| Ok(vec![y[0] - 1.0])),
///     right: Box::new(|y| Ok(vec![y[0] - 1.0])),
/// };
/// let r = collocation_bvp(&spec, &|_| vec![1.0, 0.0], &NewtonOptions::default()).unwrap();
/// let mid = r.trajectory.interpolate(0, 0.5);
/// assert!((mid - 1.0 / 10f64.cosh()).abs() < 1e-7);
/// ```
pub fn collocation_bvp(
    spec: &CollocationSpec,
    guess: &dyn Fn(f64) -> Vec<f64>,
    opts: &NewtonOptions,
) -> Result<CollocationResult> {
    let mesh = spec.mesh;
    if mesh.steps == 0 || !(mesh.hi > mesh.lo) {
        return Err(Error::Grid(
            "mesh needs at least one step on a proper interval".into(),
        ));
    }
    let d = spec.dim;
    let sigma = mesh.sigma_nodes();
    let times: Vec<f64> = sigma.iter().map(|&s| mesh.time(s).0).collect();
    let mut y: Vec<f64> = Vec::with_capacity(d * times.len());
    for &t in &times {
        let g = guess(t);
        if g.len() != d {
            return Err(Error::Domain(format!(
                "guess has {} components, expected {d}",
                g.len()
            )));
        }
        y.extend(g);
    }
    let nl = (spec.left)(&y[..d])?.len();
    let nr = (spec.right)(&y[y.len() - d..])?.len();
    check_len(nl + nr, d)?;
    let col = Collocation {
        spec,
        sigma,
        nl,
        nr,
    };

    let mut w = col.weights(&y);
    let mut fx = col.residual(&y, &w)?;
    let mut norm = inf_norm(&fx);
    let mut history = vec![norm];
    for iter in 0..opts.max_iter {
        if norm <= opts.tol {
            return Ok(finish(times, y, d, iter, norm));
        }
        let mut band = col.jacobian(&y, &w, opts.fd_step)?;
        let piv = band.factor(1e-300).ok_or_else(|| Error::SingularJacobian {
            condition: f64::INFINITY,
            last_iterate: vec![],
            history: history.clone(),
        })?;
        let mut dx: Vec<f64> = fx.iter().map(|v| -v).collect();
        band.solve(&piv, &mut dx);
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian {
                condition: f64::INFINITY,
                last_iterate: vec![],
                history,
            });
        }
        let rel_step = dx
            .iter()
            .zip(&y)
            .fold(0.0_f64, |m, (s, v)| m.max(s.abs() / (1.0 + v.abs())));
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = y.iter().zip(&dx).map(|(v, s)| v + lambda * s).collect();
            if let Ok(ft) = col.residual(&trial, &w) {
                let nt = inf_norm(&ft);
                if nt < norm {
                    y = trial;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            // a full step below rounding level means the iteration has converged as far as it can
            if rel_step <= 1e3 * f64::EPSILON {
                return Ok(finish(times, y, d, iter, norm));
            }
            return Err(Error::NoConvergence {
                reason: format!("line search failed at iteration {iter}"),
                residual: norm,
                last_iterate: vec![],
                history,
            });
        }
        w = col.weights(&y);
        fx = col.residual(&y, &w)?;
        norm = inf_norm(&fx);
        history.push(norm);
        debug!("collocation iteration {iter}: residual {norm:.3e}, step {rel_step:.3e}");
    }
    if norm <= opts.tol {
        return Ok(finish(times, y, d, opts.max_iter, norm));
    }
    Err(Error::NoConvergence {
        reason: format!("no convergence in {} iterations", opts.max_iter),
        residual: norm,
        last_iterate: vec![],
        history,
    })
}

fn finish(
    t: Vec<f64>,
    y: Vec<f64>,
    d: usize,
    iterations: usize,
    residual_norm: f64,
) -> CollocationResult {
    let y = y.chunks(d).map(<[f64]>::to_vec).collect();
    CollocationResult {
        trajectory: Trajectory { t, y },
        iterations,
        residual_norm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::gamma;

    #[test]
    fn quadrature_examples() {
        let t: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let ones = vec![1.0; 11];
        assert!((quad(&t, &ones, QuadRule::LeftRect).unwrap() - 1.0).abs() < 1e-15);
        assert!((quad(&t, &ones, QuadRule::Trapezoid).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            quad(&[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0], QuadRule::Trapezoid).unwrap(),
            0.5
        );
        let n = 1000;
        let t: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let sq: Vec<f64> = t.iter().map(|v| v * v).collect();
        assert!((quad(&t, &sq, QuadRule::LeftRect).unwrap() - 1.0 / 3.0).abs() < 1e-3);
        assert!(quad(&[0.0, 0.3, 1.0], &[1.0; 3], QuadRule::Trapezoid).is_err());
        assert!(quad(&[0.0], &[1.0], QuadRule::Trapezoid).is_err());
    }

    #[test]
    fn adaptive_quadrature() {
        let v = integrate(|x| Ok(x.sqrt()), 0.0, 1.0, 1e-12).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-11);
        let v = integrate(|x| Ok((3.0 * x).sin()), 0.0, 2.0, 1e-12).unwrap();
        assert!((v - (1.0 - 6f64.cos()) / 3.0).abs() < 1e-12);
        let c = cumulative_integral(|x| Ok(x * x), &[0.0, 0.5, 1.0], 1e-12).unwrap();
        assert!((c[2] - 1.0 / 3.0).abs() < 1e-15 && (c[1] - 1.0 / 24.0).abs() < 1e-15);
        let ct = cumulative_trapezoid(&[0.0, 1.0, 3.0], &[1.0, 1.0, 1.0]);
        assert_eq!(ct, vec![0.0, 1.0, 3.0]);
    }

    #[test]
    fn rk4_examples() {
        let exp = OdeSystem::new(1, |_, y, dy| {
            dy[0] = y[0];
            Ok(())
        });
        let tr = rk4_solve(&exp, 0.0, 1.0, &[1.0], 100).unwrap();
        assert!((tr.last_state()[0] - std::f64::consts::E).abs() < 1e-8);
        assert_eq!(tr.len(), 101);

        let moment = OdeSystem::new(1, |t, _, dy| {
            dy[0] = -t * t;
            Ok(())
        });
        let tr = rk4_solve(&moment, 0.0, 1.0, &[0.0], 50).unwrap();
        assert!((tr.last_state()[0] + 1.0 / 3.0).abs() < 1e-8);

        let still = OdeSystem::new(2, |_, _, dy| {
            dy.fill(0.0);
            Ok(())
        });
        let tr = rk4_solve(&still, 0.0, 1.0, &[3.0, -1.0], 10).unwrap();
        assert!(tr.y.iter().all(|s| s == &[3.0, -1.0]));
        assert!(rk4_solve(&still, 0.0, 1.0, &[3.0], 10).is_err());
    }

    #[test]
    fn rk4_order_four() {
        let exp = OdeSystem::new(1, |_, y, dy| {
            dy[0] = y[0];
            Ok(())
        });
        let err =
            |n| (rk4_solve(&exp, 0.0, 1.0, &[1.0], n).unwrap().last_state()[0] - 1f64.exp()).abs();
        let slope = (err(10) / err(40)).log2() / 2.0;
        assert!((slope - 4.0).abs() < 0.3, "{slope}");
    }

    #[test]
    fn rk4_blow_up_is_reported() {
        let sys = OdeSystem::new(1, |_, y, dy| {
            dy[0] = y[0] * y[0];
            Ok(())
        });
        assert!(matches!(
            rk4_solve(&sys, 0.0, 2.0, &[1.0], 200),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn singular_start_and_graded_meshes() {
        // x' = 1.5 √t from t = δ: exact t^{3/2}
        let sys = OdeSystem::new(1, |t, _, dy| {
            dy[0] = 1.5 * t.sqrt();
            Ok(())
        })
        .with_singular_start(1e-8);
        let tr = rk4_solve(&sys, 0.0, 1.0, &[1e-12], 2000).unwrap();
        assert!((tr.t[0] - 1e-8).abs() < 1e-20);
        assert!((tr.last_state()[0] - 1.0).abs() < 1e-6);

        let plain = OdeSystem::new(1, |t, _, dy| {
            dy[0] = 0.5 / t.sqrt();
            Ok(())
        });
        let mesh = Mesh::new(0.0, 1.0, TimeMap::SingularStart, 400);
        let tr = rk4_mapped(&plain, &mesh, &[1e-4], true).unwrap();
        assert!((tr.last_state()[0] - 1.0).abs() < 1e-9);

        // (1 − t)^{-1/2} at the upper end, integrated backward from 1 − δ
        let sys = OdeSystem::new(1, |t, _, dy| {
            dy[0] = -0.5 / (1.0 - t).sqrt();
            Ok(())
        });
        for map in [TimeMap::SingularEnd, TimeMap::SingularBoth] {
            let mesh = Mesh::new(0.0, 1.0, map, 400);
            let tr = rk4_mapped(&sys, &mesh, &[1e-4], false).unwrap();
            assert!((tr.t[0] - (1.0 - 1e-8)).abs() < 1e-12);
            assert!((tr.last_state()[0] - 1.0).abs() < 1e-8, "{map:?}");
            let asc = tr.clone().ascending();
            assert!(asc.t.windows(2).all(|w| w[1] > w[0]));
            assert!((asc.interpolate(0, 0.0) - 1.0).abs() < 1e-8);
        }
        let nodes = Mesh::new(2.0, 3.0, TimeMap::Uniform, 4).nodes();
        assert_eq!(nodes, vec![2.0, 2.25, 2.5, 2.75, 3.0]);
    }

    #[test]
    fn newton_examples() {
        let opts = NewtonOptions::default();
        let r = newton_solve(|x| Ok(vec![x[0] * x[0] - 2.0]), &[1.0], &opts).unwrap();
        assert!((r.x[0] - 2f64.sqrt()).abs() < 1e-10);

        let a = DMatrix::from_row_slice(
            5,
            5,
            &[
                4.0, 1.0, 0.0, 0.0, 0.5, 1.0, 5.0, 1.0, 0.0, 0.0, 0.0, 1.0, 6.0, 1.0, 0.0, 0.0,
                0.0, 1.0, 7.0, 1.0, 0.5, 0.0, 0.0, 1.0, 8.0,
            ],
        );
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let r = newton_solve(
            |x| {
                Ok((&a * DVector::from_column_slice(x) - &b)
                    .iter()
                    .copied()
                    .collect())
            },
            &[0.0; 5],
            &opts,
        )
        .unwrap();
        assert!(r.iterations <= 2);

        let err = newton_solve(|x| Ok(vec![x[0] * x[0] + 1.0]), &[0.0], &opts).unwrap_err();
        assert!(matches!(err, Error::SingularJacobian { .. }));
    }

    #[test]
    fn newton_damping_is_monotone() {
        // atan has a small basin for undamped Newton
        let r = newton_solve(|x| Ok(vec![x[0].atan()]), &[5.0], &NewtonOptions::default()).unwrap();
        assert!(r.x[0].abs() < 1e-10);
        assert!(r.history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn newton_min_norm_on_rank_deficient() {
        // x + y = 1 twice: a line of solutions
        let opts = NewtonOptions {
            singular: SingularPolicy::MinNorm,
            ..Default::default()
        };
        let r = newton_solve(
            |x| Ok(vec![x[0] + x[1] - 1.0, 2.0 * (x[0] + x[1] - 1.0)]),
            &[0.0, 0.0],
            &opts,
        )
        .unwrap();
        assert!((r.x[0] - 0.5).abs() < 1e-8 && (r.x[1] - 0.5).abs() < 1e-8);
        let err = newton_solve(
            |x| Ok(vec![x[0] + x[1] - 1.0, 2.0 * (x[0] + x[1] - 1.0)]),
            &[0.0, 0.0],
            &NewtonOptions::default(),
        );
        assert!(matches!(err, Err(Error::SingularJacobian { .. })));
    }

    #[test]
    fn newton_iteration_limit() {
        let opts = NewtonOptions {
            max_iter: 2,
            ..Default::default()
        };
        let err = newton_solve(|x| Ok(vec![x[0].powi(3) - 8.0]), &[50.0], &opts).unwrap_err();
        assert!(
            matches!(err, Error::NoConvergence { ref last_iterate, .. } if last_iterate.len() == 1)
        );
    }

    fn linear_bvp(steps: usize) -> BvpSpec<'static> {
        // x'' = 0, x(0) = 0, x(1) = 1 with unknown slope
        BvpSpec {
            dim: 2,
            rhs: Box::new(|_, y, _, dy| {
                dy[0] = y[1];
                dy[1] = 0.0;
                Ok(())
            }),
            interval: Box::new(|_| (0.0, 1.0)),
            start: Box::new(|p| vec![0.0, p[0]]),
            residual: Box::new(|y, _| Ok(vec![y[0] - 1.0])),
            map: TimeMap::Uniform,
            steps,
            delta: DEFAULT_DELTA,
            forward: true,
        }
    }

    #[test]
    fn shooting_linear() {
        let spec = linear_bvp(20);
        let r = shoot_bvp(&spec, &[5.0], &ShootOptions::default()).unwrap();
        assert!((r.unknowns[0] - 1.0).abs() < 1e-12);
        for (t, y) in r.trajectory.t.iter().zip(&r.trajectory.y) {
            assert!((y[0] - t).abs() < 1e-12);
        }
        let other = shoot_bvp(&spec, &[-40.0], &ShootOptions::default()).unwrap();
        assert!((other.unknowns[0] - r.unknowns[0]).abs() < 1e-9);
    }

    #[test]
    fn shooting_against_closed_form_with_end_singularity() {
        // x'' = −(1−t)^{-α} / (2Γ(1−α)), x(0) = 0, x(1) = 1
        let alpha = 0.5;
        let g = gamma(1.0 - alpha).unwrap();
        let c = 1.0 / (2.0 * gamma(3.0 - alpha).unwrap());
        let exact = |t: f64| -c * (1.0 - t).powf(2.0 - alpha) + (1.0 - c) * t + c;
        let spec = BvpSpec {
            dim: 2,
            rhs: Box::new(move |t, y, _, dy| {
                dy[0] = y[1];
                dy[1] = -(1.0 - t).powf(-alpha) / (2.0 * g);
                Ok(())
            }),
            interval: Box::new(|_| (0.0, 1.0)),
            start: Box::new(|p| vec![0.0, p[0]]),
            residual: Box::new(|y, _| Ok(vec![y[0] - 1.0])),
            map: TimeMap::SingularEnd,
            steps: 2000,
            delta: DEFAULT_DELTA,
            forward: true,
        };
        let r = shoot_bvp(&spec, &[0.0], &ShootOptions::default()).unwrap();
        let err = r
            .trajectory
            .t
            .iter()
            .zip(&r.trajectory.y)
            .map(|(&t, y)| (y[0] - exact(t)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn multiple_shooting_handles_unstable_single_shooting() {
        // y'' = 400 y on [0, 1] with y(0) = 1, y(1) = 1: single shooting from a
        // far guess overflows, multiple shooting recovers.
        let spec = BvpSpec {
            dim: 2,
            rhs: Box::new(|_, y, _, dy| {
                dy[0] = y[1];
                dy[1] = 400.0 * y[0];
                Ok(())
            }),
            interval: Box::new(|_| (0.0, 1.0)),
            start: Box::new(|p| vec![1.0, p[0]]),
            residual: Box::new(|y, _| Ok(vec![y[0] - 1.0])),
            map: TimeMap::Uniform,
            steps: 400,
            delta: DEFAULT_DELTA,
            forward: true,
        };
        let r = multiple_shooting(&spec, &[0.0], &NewtonOptions::default(), 4).unwrap();
        // exact slope: y = cosh(20(t−1/2))/cosh(10), y'(0) = −20 tanh(10)
        assert!((r.unknowns[0] + 20.0 * 10f64.tanh()).abs() < 1e-6);
        let mid = r.trajectory.clone().ascending().interpolate(0, 0.5);
        assert!((mid - 1.0 / 10f64.cosh()).abs() < 1e-6);
    }
}
