//! Direct methods: discretize the functional on a uniform grid, then solve
//! the stationarity conditions.
//!
//! The fractional derivative is replaced by the Grünwald–Letnikov sum
//! `D_i = h^{-α} Σ_{k=0}^{i} ω_k x_{i−k}`, the first derivative (when the
//! Lagrangian uses it) by the backward difference `(x_i − x_{i−1})/h`, and
//! the integral by the right-endpoint rule `h Σ_{i=1}^{n} L(t_i, x_i, ẋ_i, D_i)`.
//! Setting the gradient of that sum with respect to the interior values to
//! zero gives the Euler-like system; the same system multiplied by `h` is the
//! first-variation system for hat-function variations.

use std::time::{Duration, Instant};

use log::debug;
use nalgebra::DMatrix;

use crate::funcmodel::{diff_expr, parse_expr, simplify, Env, Expr, Var};
use crate::numerics::{newton_solve_with_jacobian, NewtonOptions, NewtonReport};
use crate::special::gl_weights;
use crate::{Error, Result};

/// Uniform grid `t_i = a + i h`, `i = 0..=n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformGrid {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

impl UniformGrid {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Grid(format!(
                "need at least 2 subintervals, got {n}"
            )));
        }
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(Error::Grid(format!("invalid interval [{a}, {b}]")));
        }
        Ok(UniformGrid { a, b, n })
    }

    pub fn h(&self) -> f64 {
        (self.b - self.a) / self.n as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        if i == self.n {
            self.b
        } else {
            self.a + i as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.t(i)).collect()
    }
}

const ARGS: [Var; 3] = [Var::X, Var::Xp, Var::Dx];

/// An integrand together with its symbolic first and second partials in
/// `(x, ẋ, Dx)`.
#[derive(Clone, Debug)]
struct Integrand {
    f: Expr,
    d1: [Expr; 3],
    d2: [[Expr; 3]; 3],
}

impl Integrand {
    fn new(f: Expr) -> Self {
        let d1 = ARGS.map(|v| simplify(&diff_expr(&f, v)));
        let d2 = [0, 1, 2].map(|a| ARGS.map(|v| simplify(&diff_expr(&d1[a], v))));
        Integrand { f, d1, d2 }
    }

    fn is_zero(e: &Expr) -> bool {
        matches!(e, Expr::Num(v) if *v == 0.0)
    }
}

fn check_vars(e: &Expr, what: &str) -> Result<()> {
    for v in e.variables() {
        if !matches!(v, Var::T | Var::X | Var::Xp | Var::Dx) {
            return Err(Error::Domain(format!(
                "{what} may only use t, x, xp and Dx"
            )));
        }
    }
    Ok(())
}

/// Basic fractional variational problem
/// `∫_a^b L(t, x, ẋ, D^α x) dt → extr`, `x(a) = x_a`, `x(b) = x_b`,
/// with the left Riemann–Liouville derivative of order `α ∈ (0,1)`.
#[derive(Clone, Debug)]
pub struct BasicFvp {
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    pub xa: f64,
    pub xb: f64,
    pub uses_xp: bool,
    lagrangian: Integrand,
}

impl BasicFvp {
    pub fn new(alpha: f64, (a, b): (f64, f64), lagrangian: Expr, xa: f64, xb: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(Error::Domain(format!("invalid interval [{a}, {b}]")));
        }
        if !(xa.is_finite() && xb.is_finite()) {
            return Err(Error::Domain("boundary values must be finite".into()));
        }
        check_vars(&lagrangian, "the Lagrangian")?;
        let uses_xp = lagrangian.depends_on(Var::Xp);
        Ok(BasicFvp {
            alpha,
            a,
            b,
            xa,
            xb,
            uses_xp,
            lagrangian: Integrand::new(lagrangian),
        })
    }

    pub fn parse(
        alpha: f64,
        interval: (f64, f64),
        lagrangian: &str,
        xa: f64,
        xb: f64,
    ) -> Result<Self> {
        Self::new(alpha, interval, parse_expr(lagrangian)?, xa, xb)
    }

    pub fn lagrangian(&self) -> &Expr {
        &self.lagrangian.f
    }

    pub fn grid(&self, n: usize) -> Result<UniformGrid> {
        UniformGrid::new(self.a, self.b, n)
    }
}

/// Isoperimetric problem: a [`BasicFvp`] plus `∫_a^b g(t, x, D^α x) dt = K`.
#[derive(Clone, Debug)]
pub struct IsoperimetricFvp {
    pub base: BasicFvp,
    pub k: f64,
    constraint: Integrand,
}

impl IsoperimetricFvp {
    pub fn new(base: BasicFvp, g: Expr, k: f64) -> Result<Self> {
        check_vars(&g, "the constraint integrand")?;
        if !k.is_finite() {
            return Err(Error::Domain("constraint value must be finite".into()));
        }
        Ok(IsoperimetricFvp {
            base,
            k,
            constraint: Integrand::new(g),
        })
    }

    pub fn constraint(&self) -> &Expr {
        &self.constraint.f
    }
}

/// Grid values of a discrete minimizer with solver diagnostics.
#[derive(Clone, Debug)]
pub struct DiscreteSolution {
    pub grid: UniformGrid,
    /// `x_0..x_n`; the end entries are the boundary values.
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub wall_time: Duration,
}

impl DiscreteSolution {
    pub fn nodes(&self) -> Vec<f64> {
        self.grid.nodes()
    }

    pub fn interior(&self) -> &[f64] {
        &self.x[1..self.grid.n]
    }

    /// `max_i |exact(t_i) − x_i|`.
    pub fn max_error<F: Fn(f64) -> f64>(&self, exact: F) -> f64 {
        self.nodes()
            .iter()
            .zip(&self.x)
            .fold(0.0, |m, (&t, &x)| m.max((exact(t) - x).abs()))
    }
}

/// Node quantities and partial derivatives of one integrand on a grid.
struct Discretization {
    grid: UniformGrid,
    h: f64,
    /// `h^{-α} ω_k`, `k = 0..=n`.
    c: Vec<f64>,
}

struct NodeValues {
    t: Vec<f64>,
    x: Vec<f64>,
    xp: Vec<f64>,
    dx: Vec<f64>,
}

impl Discretization {
    fn new(alpha: f64, grid: UniformGrid) -> Self {
        let h = grid.h();
        let scale = h.powf(-alpha);
        let c = gl_weights(alpha, grid.n)
            .weights()
            .iter()
            .map(|w| w * scale)
            .collect();
        Discretization { grid, h, c }
    }

    /// Values at nodes `1..=n` (index 0 of each vector is node 1).
    fn node_values(&self, x: &[f64]) -> NodeValues {
        let n = self.grid.n;
        let mut out = NodeValues {
            t: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            xp: Vec::with_capacity(n),
            dx: Vec::with_capacity(n),
        };
        for i in 1..=n {
            out.t.push(self.grid.t(i));
            out.x.push(x[i]);
            out.xp.push((x[i] - x[i - 1]) / self.h);
            out.dx.push((0..=i).map(|k| self.c[k] * x[i - k]).sum());
        }
        out
    }

    fn eval(e: &Expr, nv: &NodeValues, i: usize) -> Result<f64> {
        let env = Env {
            t: nv.t[i],
            x: nv.x[i],
            xp: nv.xp[i],
            dx: nv.dx[i],
            ..Default::default()
        };
        let v = e.eval(&env)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { t: nv.t[i] })
        }
    }

    fn eval_all(e: &Expr, nv: &NodeValues) -> Result<Vec<f64>> {
        (0..nv.t.len()).map(|i| Self::eval(e, nv, i)).collect()
    }

    /// `h Σ_{i=1}^{n} f(t_i, x_i, ẋ_i, D_i)`.
    fn sum(&self, f: &Integrand, x: &[f64]) -> Result<f64> {
        let nv = self.node_values(x);
        Ok(self.h * Self::eval_all(&f.f, &nv)?.iter().sum::<f64>())
    }

    /// Gradient of the discrete sum with respect to `x_1..x_{n−1}`, divided
    /// by `h`.
    fn gradient(&self, f: &Integrand, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.n;
        let nv = self.node_values(x);
        let fx = Self::eval_all(&f.d1[0], &nv)?;
        let fp = Self::eval_all(&f.d1[1], &nv)?;
        let fd = Self::eval_all(&f.d1[2], &nv)?;
        let mut r = vec![0.0; n - 1];
        for j in 1..n {
            let frac: f64 = (j..=n).map(|i| self.c[i - j] * fd[i - 1]).sum();
            r[j - 1] = fx[j - 1] + (fp[j - 1] - fp[j]) / self.h + frac;
        }
        Ok(r)
    }

    /// Jacobian of [`Discretization::gradient`].
    fn hessian(&self, f: &Integrand, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.grid.n;
        let m = n - 1;
        let nv = self.node_values(x);
        let mut second = [[None, None, None], [None, None, None], [None, None, None]];
        for a in 0..3 {
            for b in 0..3 {
                if !Integrand::is_zero(&f.d2[a][b]) {
                    second[a][b] = Some(Self::eval_all(&f.d2[a][b], &nv)?);
                }
            }
        }
        // Rows of dz/dx for z = (x_i, ẋ_i, D_i), restricted to interior columns.
        let w_row = |i: usize, out: &mut [f64]| {
            for (col, o) in out.iter_mut().enumerate() {
                let mm = col + 1;
                *o = if mm <= i { self.c[i - mm] } else { 0.0 };
            }
        };
        let mut jac = DMatrix::zeros(m, m);
        let mut md = DMatrix::zeros(n, m);
        let mut wmat = DMatrix::zeros(n, m);
        let mut rows = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        let mut need_d = false;
        for i in 1..=n {
            for r in rows.iter_mut() {
                r.iter_mut().for_each(|v| *v = 0.0);
            }
            if i < n {
                rows[0][i - 1] = 1.0;
                rows[1][i - 1] = 1.0 / self.h;
            }
            if i >= 2 {
                rows[1][i - 2] = -1.0 / self.h;
            }
            w_row(i, &mut rows[2]);
            for col in 0..m {
                wmat[(i - 1, col)] = rows[2][col];
            }
            // M_a = Σ_b H_ab row_b, then J += row_a^T M_a.
            for a in 0..3 {
                let mut ma = vec![0.0; m];
                let mut any = false;
                for b in 0..3 {
                    if let Some(hv) = &second[a][b] {
                        let hab = hv[i - 1];
                        if hab != 0.0 {
                            any = true;
                            for col in 0..m {
                                ma[col] += hab * rows[b][col];
                            }
                        }
                    }
                }
                if !any {
                    continue;
                }
                match a {
                    0 => {
                        if i < n {
                            for col in 0..m {
                                jac[(i - 1, col)] += ma[col];
                            }
                        }
                    }
                    1 => {
                        for col in 0..m {
                            if i < n {
                                jac[(i - 1, col)] += ma[col] / self.h;
                            }
                            if i >= 2 {
                                jac[(i - 2, col)] -= ma[col] / self.h;
                            }
                        }
                    }
                    _ => {
                        need_d = true;
                        for col in 0..m {
                            md[(i - 1, col)] = ma[col];
                        }
                    }
                }
            }
        }
        if need_d {
            jac += wmat.transpose() * md;
        }
        Ok(jac)
    }
}

fn full_vector(grid: &UniformGrid, xa: f64, xb: f64, interior: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(grid.n + 1);
    x.push(xa);
    x.extend_from_slice(interior);
    x.push(xb);
    x
}

fn linear_guess(grid: &UniformGrid, xa: f64, xb: f64) -> Vec<f64> {
    (1..grid.n)
        .map(|i| xa + (xb - xa) * i as f64 / grid.n as f64)
        .collect()
}

fn check_candidate(grid: &UniformGrid, x: &[f64]) -> Result<()> {
    if x.len() != grid.n + 1 {
        return Err(Error::Domain(format!(
            "candidate has {} values, grid has {} nodes",
            x.len(),
            grid.n + 1
        )));
    }
    Ok(())
}

/// Discrete functional `h Σ_{i=1}^{n} L(t_i, x_i, ẋ_i, D_i)` for grid values `x_0..x_n`.
pub fn discrete_functional(p: &BasicFvp, grid: &UniformGrid, x: &[f64]) -> Result<f64> {
    check_candidate(grid, x)?;
    Discretization::new(p.alpha, *grid).sum(&p.lagrangian, x)
}

/// Euler-like residual at the interior nodes `1..n−1`:
///
/// ```text
/// r_i = ∂L/∂x[i] + h^{-α} Σ_{k=0}^{n−i} ω_k ∂L/∂Dx[i+k] + (∂L/∂ẋ[i] − ∂L/∂ẋ[i+1]) / h
/// ```
///
/// where `[j]` means evaluation at `(t_j, x_j, ẋ_j, D_j)`. This is the gradient
/// of [`discrete_functional`] divided by `h`. `candidate` holds `x_0..x_n`.
pub fn euler_like_residual(
    p: &BasicFvp,
    grid: &UniformGrid,
    candidate: &[f64],
) -> Result<Vec<f64>> {
    check_candidate(grid, candidate)?;
    Discretization::new(p.alpha, *grid).gradient(&p.lagrangian, candidate)
}

/// First-variation system `J'[x; η_j] ≈ 0` for the hat functions `η_j`,
/// `j = 1..n−1`, with the integral and the derivative of `η_j` discretized
/// as in [`discrete_functional`]. Only for Lagrangians without `ẋ`.
pub fn first_variation_residual(
    p: &BasicFvp,
    grid: &UniformGrid,
    candidate: &[f64],
) -> Result<Vec<f64>> {
    if p.uses_xp {
        return Err(Error::Unsupported(
            "the first-variation method needs a Lagrangian without xp".into(),
        ));
    }
    let h = grid.h();
    Ok(euler_like_residual(p, grid, candidate)?
        .into_iter()
        .map(|r| h * r)
        .collect())
}

fn newton_options() -> NewtonOptions {
    NewtonOptions {
        max_iter: 60,
        ..Default::default()
    }
}

/// Residual tolerance: 1e−10, or 1e−13 relative to the largest term entering
/// the residual when that is bigger (rounding floor of the GL sums).
fn tolerance(scale: f64) -> f64 {
    (1e-12 * scale).max(1e-10)
}

fn solve_stationary(
    p: &BasicFvp,
    grid: UniformGrid,
    guess: &[f64],
    scaled: bool,
) -> Result<NewtonReport> {
    let disc = Discretization::new(p.alpha, grid);
    let factor = if scaled { grid.h() } else { 1.0 };
    let f = |y: &[f64]| -> Result<Vec<f64>> {
        let x = full_vector(&grid, p.xa, p.xb, y);
        Ok(disc
            .gradient(&p.lagrangian, &x)?
            .into_iter()
            .map(|r| factor * r)
            .collect())
    };
    let jac = |y: &[f64]| -> Result<DMatrix<f64>> {
        let x = full_vector(&grid, p.xa, p.xb, y);
        Ok(disc.hessian(&p.lagrangian, &x)? * factor)
    };
    let mut opts = newton_options();
    opts.tol = factor
        * tolerance(term_scale(
            &disc,
            &p.lagrangian,
            &full_vector(&grid, p.xa, p.xb, guess),
        )?);
    newton_solve_with_jacobian(f, Some(jac), guess, &opts)
}

/// Largest magnitude among the terms entering the gradient at the guess.
fn term_scale(disc: &Discretization, f: &Integrand, x: &[f64]) -> Result<f64> {
    let nv = disc.node_values(x);
    let mut s: f64 = 0.0;
    for d in &f.d1 {
        for v in Discretization::eval_all(d, &nv)? {
            s = s.max(v.abs());
        }
    }
    Ok(s * disc.c[0].max(1.0 / disc.h))
}

fn interpolate(from: &UniformGrid, values: &[f64], to: &UniformGrid) -> Vec<f64> {
    let h = from.h();
    (1..to.n)
        .map(|i| {
            let t = to.t(i);
            let s = ((t - from.a) / h).clamp(0.0, from.n as f64);
            let k = (s.floor() as usize).min(from.n - 1);
            let w = s - k as f64;
            values[k] * (1.0 - w) + values[k + 1] * w
        })
        .collect()
}

/// Solves with the boundary-interpolating line as the initial guess; if
/// Newton fails, solves on a grid with half the subintervals and starts
/// again from the interpolated coarse solution.
fn solve_with_continuation(
    p: &BasicFvp,
    n: usize,
    scaled: bool,
) -> Result<(Vec<f64>, NewtonReport)> {
    let grid = p.grid(n)?;
    let guess = linear_guess(&grid, p.xa, p.xb);
    match solve_stationary(p, grid, &guess, scaled) {
        Ok(rep) => Ok((full_vector(&grid, p.xa, p.xb, &rep.x), rep)),
        Err(e) if n / 2 >= 3 => {
            debug!(
                "direct: n={n} failed from the linear guess ({e}), continuing from n={}",
                n / 2
            );
            let coarse = p.grid(n / 2)?;
            let (xc, _) = solve_with_continuation(p, n / 2, scaled)?;
            let guess = interpolate(&coarse, &xc, &grid);
            let rep = solve_stationary(p, grid, &guess, scaled)?;
            Ok((full_vector(&grid, p.xa, p.xb, &rep.x), rep))
        }
        Err(e) => Err(e),
    }
}

fn finish(grid: UniformGrid, x: Vec<f64>, rep: &NewtonReport, start: Instant) -> DiscreteSolution {
    DiscreteSolution {
        grid,
        x,
        iterations: rep.iterations,
        residual_norm: rep.residual_norm,
        wall_time: start.elapsed(),
    }
}

/// Euler-like direct method: solves `euler_like_residual = 0` by Newton.
pub fn solve_euler_like(p: &BasicFvp, n: usize) -> Result<DiscreteSolution> {
    if n < 3 {
        return Err(Error::Grid(format!("need n ≥ 3, got {n}")));
    }
    let start = Instant::now();
    let (x, rep) = solve_with_continuation(p, n, false)?;
    Ok(finish(p.grid(n)?, x, &rep, start))
}

/// First-variation method with hat-function variations.
pub fn first_variation_solve(p: &BasicFvp, n: usize) -> Result<DiscreteSolution> {
    if p.uses_xp {
        return Err(Error::Unsupported(
            "the first-variation method needs a Lagrangian without xp".into(),
        ));
    }
    if n < 3 {
        return Err(Error::Grid(format!("need n ≥ 3, got {n}")));
    }
    let start = Instant::now();
    let (x, rep) = solve_with_continuation(p, n, true)?;
    Ok(finish(p.grid(n)?, x, &rep, start))
}

/// Isoperimetric problem via the auxiliary integrand `F = L + λ g`: the
/// first-variation equations of `F` and the discrete constraint
/// `h Σ_{i=1}^{n} g(t_i, x_i, D_i) = K` are solved jointly for
/// `(x_1..x_{n−1}, λ)`. Returns the solution and `λ`.
pub fn isoperimetric_solve(p: &IsoperimetricFvp, n: usize) -> Result<(DiscreteSolution, f64)> {
    let base = &p.base;
    if base.uses_xp || p.constraint.f.depends_on(Var::Xp) {
        return Err(Error::Unsupported(
            "the first-variation method needs integrands without xp".into(),
        ));
    }
    if n < 3 {
        return Err(Error::Grid(format!("need n ≥ 3, got {n}")));
    }
    let start = Instant::now();
    let grid = base.grid(n)?;
    let disc = Discretization::new(base.alpha, grid);
    let h = grid.h();
    let m = n - 1;
    let split = |y: &[f64]| (full_vector(&grid, base.xa, base.xb, &y[..m]), y[m]);
    let f = |y: &[f64]| -> Result<Vec<f64>> {
        let (x, lambda) = split(y);
        let rl = disc.gradient(&base.lagrangian, &x)?;
        let rg = disc.gradient(&p.constraint, &x)?;
        let mut out: Vec<f64> = rl
            .iter()
            .zip(&rg)
            .map(|(a, b)| h * (a + lambda * b))
            .collect();
        out.push(disc.sum(&p.constraint, &x)? - p.k);
        Ok(out)
    };
    let jac = |y: &[f64]| -> Result<DMatrix<f64>> {
        let (x, lambda) = split(y);
        let hl = disc.hessian(&base.lagrangian, &x)?;
        let hg = disc.hessian(&p.constraint, &x)?;
        let rg = disc.gradient(&p.constraint, &x)?;
        let mut j = DMatrix::zeros(m + 1, m + 1);
        j.view_mut((0, 0), (m, m))
            .copy_from(&((hl + hg * lambda) * h));
        for (i, g) in rg.iter().enumerate() {
            j[(i, m)] = h * g;
            j[(m, i)] = h * g;
        }
        Ok(j)
    };
    let mut guess = linear_guess(&grid, base.xa, base.xb);
    guess.push(0.0);
    let mut opts = newton_options();
    opts.tol = 1e-10;
    let rep = newton_solve_with_jacobian(f, Some(jac), &guess, &opts)?;
    let lambda = rep.x[m];
    let x = full_vector(&grid, base.xa, base.xb, &rep.x[..m]);
    Ok((finish(grid, x, &rep, start), lambda))
}
