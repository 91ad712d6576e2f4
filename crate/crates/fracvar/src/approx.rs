//! Approximations of fractional derivatives and integrals.
//!
//! Three families of kernels live here:
//!
//! * Grünwald–Letnikov sums and Diethelm's backward differences on uniform
//!   grids ([`frac_deriv_grid`]);
//! * expansions in integer-order derivatives: the Taylor-type series and the
//!   moment expansions, which keep finitely many derivatives and replace the
//!   rest by moments `V_p` of the function ([`frac_deriv_expansion`],
//!   [`frac_integral_expansion`]);
//! * truncation-error estimates for the expansion coefficients and for the
//!   expansions themselves.
//!
//! # Index conventions
//!
//! All moment expansions are parametrized by a *depth* `d`, the highest
//! derivative of `x` that appears explicitly. The coefficients are
//! `A_i, i = 0..=d`, and `B_p, p = d+1..=N`, and the moments are
//!
//! ```text
//! V_p(t) = (p−d) ∫_a^t (τ−a)^{p−d−1} x(τ) dτ          (RL)
//! V_p(t) = (p−d) ∫_a^t ln(τ/a)^{p−d−1} x(τ)/τ dτ       (Hadamard)
//! ```
//!
//! The `n` argument of [`moment_coeffs`] and of [`Method::Moment`] is the
//! depth for RL derivatives and for both Hadamard operators, and the number
//! of `A_i` terms (depth + 1) for RL integrals.

use crate::funcmodel::{FunctionModel, Samples, TabularFunction};
use crate::numerics::{cumulative_integral, cumulative_trapezoid};
use crate::special::{gamma, gamma_ratio, gl_weights, neumaier_sum, rgamma, stirling};
use crate::{Error, Result};

/// Local tolerance of the adaptive quadrature behind `V_p`.
pub const MOMENT_TOL: f64 = 1e-10;

/// Sampling density for the sup norms in truncation bounds.
pub const SUP_SAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentKind {
    Derivative,
    Integral,
    HadamardDerivative,
    HadamardIntegral,
}

impl MomentKind {
    fn is_integral(self) -> bool {
        matches!(self, MomentKind::Integral | MomentKind::HadamardIntegral)
    }

    fn is_hadamard(self) -> bool {
        matches!(
            self,
            MomentKind::HadamardDerivative | MomentKind::HadamardIntegral
        )
    }
}

/// Coefficients of a truncated moment expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentCoeffs {
    pub alpha: f64,
    /// The `n` the coefficients were requested with.
    pub n: usize,
    pub big_n: usize,
    pub kind: MomentKind,
    /// `A_0 ..= A_d`.
    pub a: Vec<f64>,
    /// `B_{d+1} ..= B_N`.
    pub b: Vec<f64>,
}

impl MomentCoeffs {
    /// Highest derivative kept explicitly.
    pub fn depth(&self) -> usize {
        self.a.len() - 1
    }

    /// `B_p` for `p` in `depth+1 ..= N`.
    pub fn b_p(&self, p: usize) -> f64 {
        self.b[p - self.depth() - 1]
    }

    /// `A(α,N)` of the first-order derivative expansion.
    pub fn scalar_a(&self) -> f64 {
        self.a[0]
    }

    /// `B(α,N)`, the coefficient of the first derivative.
    pub fn scalar_b(&self) -> f64 {
        self.a[1]
    }

    /// `C(α,p)`, the moment coefficient of the first-order expansion
    /// (`p = 2..=N`).
    pub fn c(&self, p: usize) -> f64 {
        self.b_p(p)
    }
}

fn check_order(alpha: f64, integral: bool) -> Result<()> {
    let ok = if integral {
        alpha > 0.0 && alpha.is_finite() && alpha.fract() != 0.0
    } else {
        alpha > 0.0 && alpha < 1.0
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "order {alpha} outside the supported range for this expansion"
        )))
    }
}

/// Coefficients `A_i(α,N)` and `B_p(α)` of the moment expansion of the
/// given kind (see the module docs for what `n` means per kind).
///
/// ```
/// use fracvar::approx::{moment_coeffs, MomentKind};
/// let c = moment_coeffs(0.5, 1, 4, MomentKind::Derivative).unwrap();
/// assert!((c.scalar_b() - 0.3085).abs() < 5e-5);
/// ```
pub fn moment_coeffs(alpha: f64, n: usize, big_n: usize, kind: MomentKind) -> Result<MomentCoeffs> {
    check_order(alpha, kind.is_integral())?;
    if n == 0 || big_n < n {
        return Err(Error::Domain(format!(
            "need 1 ≤ n ≤ N, got n = {n}, N = {big_n}"
        )));
    }
    let d = if kind == MomentKind::Integral {
        n - 1
    } else {
        n
    };
    let (s, norm) = if kind.is_integral() {
        (-alpha, 1.0 / (gamma(alpha)? * gamma(1.0 - alpha)?))
    } else {
        (alpha, 1.0 / (gamma(-alpha)? * gamma(1.0 + alpha)?))
    };
    // derivative: Γ(p−d+α), 1/Γ(i+1−α), 1/Γ(α−i); integral: α → −α
    let mut a = Vec::with_capacity(d + 1);
    for i in 0..=d {
        let lo = d + 1 - i;
        let r = rgamma(s - i as f64);
        let mut terms = vec![1.0];
        for p in lo..=big_n {
            let m = p as f64 - d as f64;
            terms.push(gamma_ratio(m + s, m + i as f64 + 1.0)? * r);
        }
        a.push(rgamma(i as f64 + 1.0 - s) * neumaier_sum(terms));
    }
    let mut b = Vec::with_capacity(big_n.saturating_sub(d));
    for p in d + 1..=big_n {
        let m = (p - d) as f64;
        b.push(gamma_ratio(m + s, m + 1.0)? * norm);
    }
    Ok(MomentCoeffs {
        alpha,
        n,
        big_n,
        kind,
        a,
        b,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoeffTail {
    /// Tail of `A(α,i,N)` in the derivative expansion.
    Derivative,
    /// Tail of `A_i(α,N)` in the integral expansion.
    Integral,
    /// Tail of the integral `B` coefficients.
    IntegralB,
}

/// Truncation error of the expansion coefficients, as a function of
/// `N − n` and `i`.
///
/// ```
/// use fracvar::approx::{coeff_truncation_error, CoeffTail};
/// let e = coeff_truncation_error(0.5, 4, 4, 1, CoeffTail::Derivative).unwrap();
/// assert!((e + 0.4231).abs() < 5e-5);
/// ```
pub fn coeff_truncation_error(
    alpha: f64,
    n: usize,
    big_n: usize,
    i: usize,
    kind: CoeffTail,
) -> Result<f64> {
    if big_n < n {
        return Err(Error::Domain(format!("N = {big_n} below n = {n}")));
    }
    let gap = big_n - n;
    let fi = i as f64;
    let v = match kind {
        CoeffTail::Derivative => {
            let r = rgamma(alpha - fi);
            let terms = (0..=gap + i + 1)
                .map(|p| gamma_ratio(p as f64 + alpha - fi, p as f64 + 1.0).map(|g| g * r))
                .collect::<Result<Vec<_>>>()?;
            -rgamma(fi + 1.0 - alpha) * neumaier_sum(terms)
        }
        CoeffTail::Integral => {
            let r = rgamma(-alpha - fi);
            let terms = (0..=gap + i + 1)
                .map(|p| gamma_ratio(p as f64 - alpha - fi, p as f64 + 1.0).map(|g| g * r))
                .collect::<Result<Vec<_>>>()?;
            -rgamma(alpha + fi + 1.0) * neumaier_sum(terms)
        }
        CoeffTail::IntegralB => {
            let terms = (0..=gap + 1)
                .map(|p| gamma_ratio(p as f64 - alpha, p as f64 + 1.0))
                .collect::<Result<Vec<_>>>()?;
            -neumaier_sum(terms) / (gamma(alpha)? * gamma(1.0 - alpha)?)
        }
    };
    Ok(v)
}

/// Finite-difference scheme for [`frac_deriv_grid`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GridScheme {
    GlLeft,
    GlRight,
    /// Left sum evaluated one node ahead; the node past the end is
    /// extrapolated linearly.
    GlShiftedLeft,
    /// Caputo derivative for `0 < α < 2, α ≠ 1`; `dx_a` is `ẋ(a)`, needed
    /// only when `α > 1`.
    DiethelmCaputo {
        dx_a: Option<f64>,
    },
}

/// Grünwald–Letnikov or Diethelm approximation at every grid node.
pub fn frac_deriv_grid(
    samples: &TabularFunction,
    alpha: f64,
    scheme: GridScheme,
) -> Result<TabularFunction> {
    let x = samples.values();
    let h = samples.h();
    let m = x.len() - 1;
    let out = match scheme {
        GridScheme::DiethelmCaputo { dx_a } => diethelm(x, h, alpha, dx_a)?,
        _ => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Domain(format!(
                    "GL order must lie in (0,1), got {alpha}"
                )));
            }
            let w = gl_weights(alpha, m + 1);
            let scale = h.powf(-alpha);
            let w = w.weights();
            (0..=m)
                .map(|i| {
                    scale
                        * match scheme {
                            GridScheme::GlLeft => neumaier_sum((0..=i).map(|k| w[k] * x[i - k])),
                            GridScheme::GlRight => {
                                neumaier_sum((0..=m - i).map(|k| w[k] * x[i + k]))
                            }
                            _ => {
                                let at =
                                    |j: usize| if j <= m { x[j] } else { 2.0 * x[m] - x[m - 1] };
                                neumaier_sum((0..=i).map(|k| w[k] * at(i + 1 - k)))
                            }
                        }
                })
                .collect()
        }
    };
    TabularFunction::new(samples.nodes().to_vec(), out)
}

fn diethelm(x: &[f64], h: f64, alpha: f64, dx_a: Option<f64>) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 2.0) || alpha == 1.0 {
        return Err(Error::Domain(format!(
            "Diethelm's scheme needs 0 < α < 2, α ≠ 1 (got {alpha})"
        )));
    }
    let slope = if alpha > 1.0 {
        dx_a.ok_or_else(|| Error::Domain("Diethelm's scheme with α > 1 needs ẋ(a)".into()))?
    } else {
        0.0
    };
    let q = 1.0 - alpha;
    let c = h.powf(-alpha) / gamma(2.0 - alpha)?;
    // finite-part convention: 0^{1−α} counts as 0 also when α > 1
    let pw = |v: f64| if v == 0.0 { 0.0 } else { v.powf(q) };
    let weight = |i: usize, j: usize| -> f64 {
        let (jf, fi) = (j as f64, i as f64);
        if j == 0 {
            1.0
        } else if j < i {
            pw(jf + 1.0) - 2.0 * pw(jf) + pw(jf - 1.0)
        } else {
            q * fi.powf(-alpha) - pw(fi) + pw(fi - 1.0)
        }
    };
    Ok((0..x.len())
        .map(|i| {
            c * neumaier_sum((0..=i).map(|j| {
                let k = i - j;
                weight(i, j) * (x[k] - x[0] - k as f64 * h * slope)
            }))
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Rl,
    Caputo,
    Hadamard,
}

/// Expansion method.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Taylor-type series with terms `k = 0..=N` (Butzer's series for the
    /// Hadamard family).
    Taylor(usize),
    /// Moment expansion with parameters `(n, N)`.
    Moment { n: usize, big_n: usize },
}

fn check_grid(grid: &[f64], base: f64, side: Side, strict: bool) -> Result<()> {
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Grid(
            "evaluation grid must be strictly increasing".into(),
        ));
    }
    let bad = grid.iter().find(|&&t| match side {
        Side::Left => t < base || (strict && t == base),
        Side::Right => t > base || (strict && t == base),
    });
    match bad {
        Some(t) => Err(Error::Domain(format!(
            "evaluation point {t} is on the wrong side of (or at) the base point {base}"
        ))),
        None => Ok(()),
    }
}

/// Fractional derivative of `f` by an expansion in integer-order
/// derivatives, evaluated at the (strictly increasing) `grid`.
///
/// `base` is the lower terminal for left operators and the upper terminal
/// for right ones; evaluation at the base point is a domain error. Caputo
/// values are the RL values minus `x(base)|t−base|^{−α}/Γ(1−α)`.
///
/// ```
/// use fracvar::approx::{frac_deriv_expansion, Family, Method, Side};
/// use fracvar::funcmodel::FunctionModel;
/// let f = FunctionModel::parse("t^4", 4, 0.0, 1.0).unwrap();
/// let d = frac_deriv_expansion(&f, 0.5, 0.0, Side::Left, Family::Rl, Method::Taylor(4), &[1.0]).unwrap();
/// let exact = 24.0 / fracvar::special::gamma(4.5).unwrap();
/// assert!((d.x[0] - exact).abs() < 1e-12);
/// ```
pub fn frac_deriv_expansion(
    f: &FunctionModel,
    alpha: f64,
    base: f64,
    side: Side,
    family: Family,
    method: Method,
    grid: &[f64],
) -> Result<Samples> {
    check_order(alpha, false)?;
    check_grid(grid, base, side, true)?;
    let mut values = match (family, method) {
        (Family::Hadamard, Method::Taylor(big_n)) => butzer(f, alpha, base, side, big_n, grid)?,
        (_, Method::Taylor(big_n)) => taylor_rl_derivative(f, alpha, base, side, big_n, grid)?,
        (Family::Hadamard, Method::Moment { n, big_n }) => {
            let c = moment_coeffs(alpha, n, big_n, MomentKind::HadamardDerivative)?;
            moment_expansion(f, &c, base, side, grid)?
        }
        (_, Method::Moment { n, big_n }) => {
            let c = moment_coeffs(alpha, n, big_n, MomentKind::Derivative)?;
            moment_expansion(f, &c, base, side, grid)?
        }
    };
    if family == Family::Caputo {
        let xb = f.eval(base)? * rgamma(1.0 - alpha);
        for (v, &t) in values.iter_mut().zip(grid) {
            *v -= xb * (t - base).abs().powf(-alpha);
        }
    }
    Samples::new(grid.to_vec(), values)
}

/// Fractional integral of `f` by an expansion in integer-order
/// derivatives. The `A_i` coefficients are used at their truncated values.
pub fn frac_integral_expansion(
    f: &FunctionModel,
    alpha: f64,
    base: f64,
    side: Side,
    family: Family,
    method: Method,
    grid: &[f64],
) -> Result<Samples> {
    check_grid(grid, base, side, true)?;
    let values = match (family, method) {
        (Family::Caputo, _) => {
            return Err(Error::Unsupported(
                "Caputo applies to derivatives only".into(),
            ))
        }
        (Family::Hadamard, Method::Taylor(big_n)) => {
            if !(alpha > 0.0) {
                return Err(Error::Domain(format!(
                    "order must be positive, got {alpha}"
                )));
            }
            butzer(f, -alpha, base, side, big_n, grid)?
        }
        (Family::Rl, Method::Taylor(big_n)) => {
            if !(alpha > 0.0) {
                return Err(Error::Domain(format!(
                    "order must be positive, got {alpha}"
                )));
            }
            taylor_rl_integral(f, alpha, base, side, big_n, grid)?
        }
        (Family::Hadamard, Method::Moment { n, big_n }) => {
            let c = moment_coeffs(alpha, n, big_n, MomentKind::HadamardIntegral)?;
            moment_expansion(f, &c, base, side, grid)?
        }
        (Family::Rl, Method::Moment { n, big_n }) => {
            let c = moment_coeffs(alpha, n, big_n, MomentKind::Integral)?;
            moment_expansion(f, &c, base, side, grid)?
        }
    };
    Samples::new(grid.to_vec(), values)
}

fn derivs_at(f: &FunctionModel, upto: usize, t: f64) -> Result<Vec<f64>> {
    (0..=upto).map(|k| f.deriv(k, t)).collect()
}

fn taylor_rl_derivative(
    f: &FunctionModel,
    alpha: f64,
    base: f64,
    side: Side,
    big_n: usize,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let r = rgamma(1.0 - alpha);
    grid.iter()
        .map(|&t| {
            let s = (t - base).abs();
            let d = derivs_at(f, big_n, t)?;
            let mut fact = 1.0;
            let mut terms = Vec::with_capacity(big_n + 1);
            for (k, dk) in d.iter().enumerate() {
                if k > 0 {
                    fact *= k as f64;
                }
                let kf = k as f64;
                let sign = match side {
                    Side::Left if k % 2 == 0 => -1.0,
                    Side::Left => 1.0,
                    Side::Right => -1.0,
                };
                terms.push(sign * alpha * dk * s.powf(kf - alpha) / (fact * (kf - alpha)));
            }
            Ok(r * neumaier_sum(terms))
        })
        .collect()
}

fn taylor_rl_integral(
    f: &FunctionModel,
    alpha: f64,
    base: f64,
    side: Side,
    big_n: usize,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let r = rgamma(alpha);
    grid.iter()
        .map(|&t| {
            let s = (t - base).abs();
            let d = derivs_at(f, big_n, t)?;
            let mut fact = 1.0;
            let mut terms = Vec::with_capacity(big_n + 1);
            for (k, dk) in d.iter().enumerate() {
                if k > 0 {
                    fact *= k as f64;
                }
                let kf = k as f64;
                let sign = if side == Side::Left && k % 2 == 1 {
                    -1.0
                } else {
                    1.0
                };
                terms.push(sign * dk * s.powf(kf + alpha) / ((kf + alpha) * fact));
            }
            Ok(r * neumaier_sum(terms))
        })
        .collect()
}

/// Butzer's series `Σ S(β,k) t^k x^(k)(t)` with base 0; `β = α` for the
/// derivative and `β = −α` for the integral.
fn butzer(
    f: &FunctionModel,
    beta: f64,
    base: f64,
    side: Side,
    big_n: usize,
    grid: &[f64],
) -> Result<Vec<f64>> {
    if side == Side::Right || base != 0.0 {
        return Err(Error::Unsupported(
            "the Hadamard Taylor-type series is available for left operators with base 0 only"
                .into(),
        ));
    }
    let s: Vec<f64> = (0..=big_n).map(|k| stirling(beta, k)).collect();
    grid.iter()
        .map(|&t| {
            let d = derivs_at(f, big_n, t)?;
            Ok(neumaier_sum(
                d.iter()
                    .enumerate()
                    .map(|(k, dk)| s[k] * t.powi(k as i32) * dk),
            ))
        })
        .collect()
}

/// Stirling numbers of the second kind `S2(k, m)`, `m = 0..=k`.
fn stirling2_row(k: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for j in 1..=k {
        let mut next = vec![0.0; j + 1];
        for m in 1..=j {
            let prev = if m < row.len() { row[m] } else { 0.0 };
            next[m] = m as f64 * prev + row[m - 1];
        }
        row = next;
    }
    row
}

/// `x_{k,0} = (t d/dt)^k x`, through `Σ_m S2(k,m) t^m x^(m)`.
pub fn hadamard_x0(f: &FunctionModel, k: usize, t: f64) -> Result<f64> {
    if k == 0 {
        return f.eval(t);
    }
    let row = stirling2_row(k);
    let mut acc = 0.0;
    for (m, c) in row.iter().enumerate().skip(1) {
        acc += c * t.powi(m as i32) * f.deriv(m, t)?;
    }
    Ok(acc)
}

/// `x_{k,1} = (d/dt ∘ t)^k ẋ = Σ_j C(k,j) (t d/dt)^j ẋ`.
pub fn hadamard_x1(f: &FunctionModel, k: usize, t: f64) -> Result<f64> {
    let mut acc = 0.0;
    let mut binom = 1.0;
    for j in 0..=k {
        if j > 0 {
            binom = binom * (k - j + 1) as f64 / j as f64;
        }
        let row = stirling2_row(j);
        let mut theta = 0.0;
        for (m, c) in row.iter().enumerate() {
            if *c != 0.0 {
                theta += c * t.powi(m as i32) * f.deriv(m + 1, t)?;
            }
        }
        acc += binom * theta;
    }
    Ok(acc)
}

/// Moment trajectories on an evaluation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentState {
    pub nodes: Vec<f64>,
    /// `v[j][k]` is `V_{d+1+j}` (or `W_{d+1+j}`) at `nodes[k]`.
    pub v: Vec<Vec<f64>>,
}

fn kernel_coordinate(hadamard: bool, side: Side, base: f64, t: f64) -> f64 {
    match (hadamard, side) {
        (false, Side::Left) => t - base,
        (false, Side::Right) => base - t,
        (true, Side::Left) => (t / base).ln(),
        (true, Side::Right) => (base / t).ln(),
    }
}

/// `V_p`/`W_p` for `p = d+1..=N` at `grid` by adaptive quadrature.
pub fn moment_states(
    f: &FunctionModel,
    c: &MomentCoeffs,
    base: f64,
    side: Side,
    grid: &[f64],
) -> Result<MomentState> {
    let d = c.depth();
    let had = c.kind.is_hadamard();
    if had && !(base > 0.0 && grid.iter().all(|&t| t > 0.0)) {
        return Err(Error::Domain(
            "Hadamard operators need positive times".into(),
        ));
    }
    let mut v = Vec::with_capacity(c.b.len());
    for p in d + 1..=c.big_n {
        let k = (p - d - 1) as i32;
        let w = (p - d) as f64;
        let integrand = |tau: f64| -> Result<f64> {
            let s = kernel_coordinate(had, side, base, tau);
            let x = f.eval(tau)?;
            Ok(w * s.powi(k) * if had { x / tau } else { x })
        };
        let vals = match side {
            Side::Left => {
                let mut nodes = Vec::with_capacity(grid.len() + 1);
                nodes.push(base);
                nodes.extend_from_slice(grid);
                let mut cum = cumulative_integral(integrand, &nodes, MOMENT_TOL)?;
                cum.remove(0);
                cum
            }
            Side::Right => {
                // integrate from the upper terminal downward
                let mut nodes: Vec<f64> = grid.iter().rev().copied().collect();
                nodes.insert(0, base);
                let neg = |tau: f64| integrand(tau).map(|y| -y);
                let mut cum = cumulative_integral(neg, &nodes, MOMENT_TOL)?;
                cum.remove(0);
                cum.reverse();
                cum
            }
        };
        v.push(vals);
    }
    Ok(MomentState {
        nodes: grid.to_vec(),
        v,
    })
}

/// Evaluates a moment expansion with explicit coefficients; this is what
/// [`frac_deriv_expansion`] and [`frac_integral_expansion`] use, exposed so
/// that modified coefficient sets can be compared.
pub fn moment_expansion(
    f: &FunctionModel,
    c: &MomentCoeffs,
    base: f64,
    side: Side,
    grid: &[f64],
) -> Result<Vec<f64>> {
    check_grid(grid, base, side, true)?;
    let d = c.depth();
    let had = c.kind.is_hadamard();
    let sgn = if c.kind.is_integral() { 1.0 } else { -1.0 };
    let alpha = c.alpha;
    let states = moment_states(f, c, base, side, grid)?;
    grid.iter()
        .enumerate()
        .map(|(k, &t)| {
            let s = kernel_coordinate(had, side, base, t);
            let mut terms = Vec::with_capacity(c.a.len() + c.b.len());
            for (i, ai) in c.a.iter().enumerate() {
                let xi = if had {
                    hadamard_x0(f, i, t)?
                } else {
                    f.deriv(i, t)?
                };
                let flip = if side == Side::Right && i % 2 == 1 {
                    -1.0
                } else {
                    1.0
                };
                terms.push(flip * ai * s.powf(i as f64 + sgn * alpha) * xi);
            }
            for (j, bp) in c.b.iter().enumerate() {
                let p = (d + 1 + j) as f64;
                terms.push(bp * s.powf(d as f64 + sgn * alpha - p) * states.v[j][k]);
            }
            Ok(neumaier_sum(terms))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    /// Taylor-type RL derivative with terms up to `N` (uses `x^(N+1)`).
    DerivTaylor,
    /// RL derivative moment expansion; `n` counts the retained `A_i`
    /// (depth + 1) and the bound uses `x^(n)`.
    DerivMoment,
    /// RL integral moment expansion, `n` as in [`MomentKind::Integral`].
    IntegralMoment,
    /// Hadamard derivative of depth `n`, bounded through `x_{n,1}`.
    HadamardDeriv,
    /// Hadamard integral of depth `n`, bounded through `x_{n,1}`.
    HadamardIntegral,
}

/// A computed truncation bound; `l_n` is the sampled sup norm over
/// `[a, t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncationBound {
    pub alpha: f64,
    pub n: usize,
    pub big_n: usize,
    pub kind: BoundKind,
    pub a: f64,
    pub t: f64,
    pub l_n: f64,
    pub value: f64,
}

impl TruncationBound {
    /// The bound at another time `s ≤ t` with the same sup norm.
    pub fn at(&self, s: f64) -> f64 {
        bound_formula(
            self.kind, self.alpha, self.n, self.big_n, self.a, s, self.l_n,
        )
    }
}

fn bound_formula(
    kind: BoundKind,
    alpha: f64,
    n: usize,
    big_n: usize,
    a: f64,
    t: f64,
    l: f64,
) -> f64 {
    if l == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    let bn = big_n as f64;
    let s = t - a;
    let tail = |e: f64| (e * e + e).exp() / (e * bn.powf(e));
    match kind {
        BoundKind::DerivTaylor => {
            let m = bn + 1.0;
            l * s.powf(m - alpha) * rgamma(1.0 - alpha) * rgamma(m + 1.0)
        }
        BoundKind::DerivMoment => {
            let e = nf - 1.0 - alpha;
            if e <= 0.0 {
                return f64::INFINITY;
            }
            l * tail(e) * rgamma(nf - alpha) * s.powf(nf - alpha)
        }
        BoundKind::IntegralMoment => {
            let e = alpha + nf - 1.0;
            l * tail(e) * rgamma(alpha + nf) * s.powf(alpha + nf)
        }
        BoundKind::HadamardDeriv => {
            let e = nf - alpha;
            l * tail(e) * rgamma(nf + 1.0 - alpha) * (t / a).ln().powf(e) * s
        }
        BoundKind::HadamardIntegral => {
            let e = alpha + nf;
            l * tail(e) * rgamma(alpha + nf + 1.0) * (t / a).ln().powf(e) * s
        }
    }
}

/// Closed-form truncation bound at `t`, with the sup norm sampled on
/// [`SUP_SAMPLES`] nodes of `[a, t]`.
///
/// ```
/// use fracvar::approx::{truncation_bound, BoundKind};
/// use fracvar::funcmodel::FunctionModel;
/// let f = FunctionModel::parse("t^4", 5, 0.0, 1.0).unwrap();
/// let b = truncation_bound(0.5, 1, 4, &f, 1.0, 0.0, BoundKind::DerivTaylor).unwrap();
/// assert_eq!(b.value, 0.0);
/// ```
pub fn truncation_bound(
    alpha: f64,
    n: usize,
    big_n: usize,
    f: &FunctionModel,
    t: f64,
    a: f64,
    kind: BoundKind,
) -> Result<TruncationBound> {
    if !(t > a) {
        return Err(Error::Domain(format!("need t > a, got t = {t}, a = {a}")));
    }
    let mut l_n = 0.0_f64;
    for j in 0..=SUP_SAMPLES {
        let tau = a + (t - a) * j as f64 / SUP_SAMPLES as f64;
        let v = match kind {
            BoundKind::DerivTaylor => f.deriv(big_n + 1, tau)?,
            BoundKind::DerivMoment | BoundKind::IntegralMoment => f.deriv(n, tau)?,
            BoundKind::HadamardDeriv | BoundKind::HadamardIntegral => hadamard_x1(f, n, tau)?,
        };
        l_n = l_n.max(v.abs());
    }
    Ok(TruncationBound {
        alpha,
        n,
        big_n,
        kind,
        a,
        t,
        l_n,
        value: bound_formula(kind, alpha, n, big_n, a, t, l_n),
    })
}

/// Result of [`tabular_frac_deriv`].
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDerivative {
    /// Values at the data nodes except the first one.
    pub values: TabularFunction,
    pub chosen_n: usize,
    pub converged: bool,
}

fn tabular_moment(
    data: &TabularFunction,
    dx: &TabularFunction,
    c: &MomentCoeffs,
) -> Result<Vec<f64>> {
    let t = data.nodes();
    let x = data.values();
    let a = t[0];
    let alpha = c.alpha;
    let mut out: Vec<Vec<f64>> = (1..t.len())
        .map(|k| {
            let s = t[k] - a;
            vec![
                c.a[0] * s.powf(-alpha) * x[k],
                c.a[1] * s.powf(1.0 - alpha) * dx.values()[k],
            ]
        })
        .collect();
    for p in 2..=c.big_n {
        let k = (p - 2) as i32;
        let w = (p - 1) as f64;
        let integrand: Vec<f64> = t
            .iter()
            .zip(x)
            .map(|(&ti, &xi)| w * (ti - a).powi(k) * xi)
            .collect();
        let v = cumulative_trapezoid(t, &integrand);
        for (j, row) in out.iter_mut().enumerate() {
            let s = t[j + 1] - a;
            row.push(c.b_p(p) * s.powf(1.0 - alpha - p as f64) * v[j + 1]);
        }
    }
    Ok(out.into_iter().map(neumaier_sum).collect())
}

/// Left RL derivative of tabular data by the first-order moment expansion,
/// increasing `N` from `n_start` until successive results differ by less
/// than `epsilon` (Euclidean norm); the accepted result is the one before
/// the small change. The search also stops, unconverged, once successive
/// changes start to grow, keeping the result with the smallest change.
pub fn tabular_frac_deriv(
    data: &TabularFunction,
    alpha: f64,
    epsilon: f64,
    n_start: usize,
    n_max: usize,
) -> Result<TabularDerivative> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be positive, got {epsilon}"
        )));
    }
    if n_start < 1 || n_max < n_start {
        return Err(Error::Domain(format!(
            "need 1 ≤ N_start ≤ N_max, got {n_start}, {n_max}"
        )));
    }
    let dx = crate::funcmodel::tabular_first_derivative(data)?;
    let nodes = data.nodes()[1..].to_vec();
    let eval = |big_n: usize| {
        tabular_moment(
            data,
            &dx,
            &moment_coeffs(alpha, 1, big_n, MomentKind::Derivative)?,
        )
    };
    let mut prev = eval(n_start)?;
    let mut chosen = n_start;
    let mut converged = false;
    let mut last_dist = f64::INFINITY;
    for big_n in n_start + 1..=n_max {
        let cur = eval(big_n)?;
        let dist = prev
            .iter()
            .zip(&cur)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        if dist < epsilon {
            converged = true;
            break;
        }
        if dist > last_dist {
            // quadrature error of the high moments now dominates
            break;
        }
        last_dist = dist;
        prev = cur;
        chosen = big_n;
    }
    Ok(TabularDerivative {
        values: TabularFunction::new(nodes, prev)?,
        chosen_n: chosen,
        converged,
    })
}
