//! Indirect methods: replace fractional operators by moment expansions, then
//! solve the resulting classical problems.
//!
//! A fractional variational or optimal-control problem becomes a classical
//! Lagrange problem once the left derivative of order `α` is replaced by
//!
//! ```text
//! D^α x(t) ≈ A s^{-α} x + B s^{1-α} ẋ − Σ_{p=2}^{N} C_p s^{1-p-α} V_p,   s = t − a,
//! V̇_p = (1 − p) s^{p-2} x,   V_p(a) = 0,
//! ```
//!
//! with `A = A(α,N)`, `B = B(α,N)`, `C_p = C(α,p)` from
//! [`moment_coeffs`](crate::approx::moment_coeffs). The classical problem is
//! solved through its Hamiltonian system `H = L + λ·f`, shooting backward
//! from the final time (costates of the moment states are singular at `a`).
//!
//! The same expansions turn fractional differential and integral equations
//! into ODE initial value problems ([`solve_fde`], [`solve_fie`]).

use log::debug;
use nalgebra::{Complex, DMatrix, DVector};

use crate::approx::{
    frac_deriv_expansion, moment_coeffs, Family, Method, MomentCoeffs, MomentKind, Side,
};
use crate::direct::BasicFvp;
use crate::funcmodel::{diff_expr, polynomial_reference, simplify, Env, Expr, FunctionModel, Var};
use crate::numerics::{
    collocation_bvp, integrate, newton_solve, rk4_mapped, trapezoid, CollocationSpec, Mesh,
    NewtonOptions, OdeSystem, SingularPolicy, TimeMap, Trajectory, DEFAULT_DELTA,
};
use crate::special::{gamma, rgamma};
use crate::{Error, Result};

fn num(v: f64) -> Expr {
    Expr::num(v)
}

fn state(i: usize) -> Expr {
    Expr::var(Var::State(i))
}

fn costate(i: usize) -> Expr {
    Expr::var(Var::Costate(i))
}

/// `(t − a)^e`, or `(a − t)^e` when `mirror` is set.
fn kernel(a: f64, e: f64, mirror: bool) -> Expr {
    if e == 0.0 {
        return num(1.0);
    }
    let t = Expr::var(Var::T);
    let base = match (mirror, a == 0.0) {
        (false, true) => t,
        (false, false) => Expr::sub(t, num(a)),
        (true, _) => Expr::sub(num(a), t),
    };
    if e == 1.0 {
        base
    } else {
        Expr::pow(base, num(e))
    }
}

fn first_order_coeffs(alpha: f64, big_n: usize) -> Result<MomentCoeffs> {
    if big_n < 2 {
        return Err(Error::Domain(format!(
            "the moment expansion needs N ≥ 2, got {big_n}"
        )));
    }
    moment_coeffs(alpha, 1, big_n, MomentKind::Derivative)
}

/// `A s^{-α} x + B s^{1-α} ẋ − Σ C_p s^{1-p-α} V_p` with the given
/// expressions for `x`, `ẋ` and `V_2..V_N`.
fn expansion_expr(c: &MomentCoeffs, a: f64, x: Expr, xp: Expr, v: &[Expr]) -> Expr {
    let alpha = c.alpha;
    let mut e = Expr::add(
        Expr::mul(num(c.scalar_a()), Expr::mul(kernel(a, -alpha, false), x)),
        Expr::mul(
            num(c.scalar_b()),
            Expr::mul(kernel(a, 1.0 - alpha, false), xp),
        ),
    );
    for (k, vp) in v.iter().enumerate() {
        let p = k + 2;
        let term = Expr::mul(
            num(c.c(p)),
            Expr::mul(kernel(a, 1.0 - p as f64 - alpha, false), vp.clone()),
        );
        e = Expr::sub(e, term);
    }
    e
}

/// `V̇_p = (1 − p) s^{p-2} x` for `p = 2..=N`.
fn moment_dynamics(a: f64, big_n: usize, x: Expr) -> Vec<Expr> {
    (2..=big_n)
        .map(|p| {
            let pf = p as f64;
            simplify(&Expr::mul(
                num(1.0 - pf),
                Expr::mul(kernel(a, pf - 2.0, false), x.clone()),
            ))
        })
        .collect()
}

/// How the control is obtained from `∂H/∂u = 0`.
#[derive(Clone, Debug, Default)]
pub enum ControlLaw {
    /// Closed form when `H` is quadratic in `u` (checked symbolically).
    #[default]
    Auto,
    /// A user expression in `t`, the states `s0, s1, …` (`x` also names
    /// `s0`) and the costates `lam0, lam1, …`.
    Supplied(Expr),
    /// Pointwise scalar Newton iteration on `∂H/∂u = 0`.
    Newton,
}

/// Terminal specification of an optimal-control problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Terminal {
    /// `T` and `x(T)` given.
    Fixed { t: f64, x: f64 },
    /// `T` given, `x(T)` free.
    FreeState { t: f64 },
    /// `x(T)` given, `T` free.
    FreeTime { x: f64 },
}

/// Fractional optimal-control problem
///
/// ```text
/// ∫_a^T L(t, x, u) dt + φ(T, x(T)) → min,
/// m_int ẋ + m_frac ᶜD^α x = f(t, x, u),   x(a) = x_a.
/// ```
///
/// `aux` lists integrands `g_j(t, x, u)` of extra states `z_j` with
/// `ż_j = g_j`, `z_j(a) = 0`, free at `T`; `L` refers to `z_j` as `s<j>`
/// (`j ≥ 1`). `φ` uses `t` for the final time and `x` for `x(T)`.
#[derive(Clone, Debug)]
pub struct OcProblem {
    pub alpha: f64,
    pub a: f64,
    pub xa: f64,
    pub cost: Expr,
    pub terminal_cost: Option<Expr>,
    pub dynamics: Expr,
    pub m_int: f64,
    pub m_frac: f64,
    pub terminal: Terminal,
    pub control: ControlLaw,
    pub aux: Vec<Expr>,
}

impl OcProblem {
    pub fn new(
        alpha: f64,
        a: f64,
        xa: f64,
        cost: Expr,
        dynamics: Expr,
        (m_int, m_frac): (f64, f64),
        terminal: Terminal,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        if m_int == 0.0 && m_frac == 0.0 {
            return Err(Error::Domain(
                "the dynamics need a nonzero derivative coefficient".into(),
            ));
        }
        if !xa.is_finite() {
            return Err(Error::Domain("initial value must be finite".into()));
        }
        match terminal {
            Terminal::Fixed { t, .. } | Terminal::FreeState { t } if !(t > a) => {
                return Err(Error::Domain(format!("final time {t} must exceed {a}")))
            }
            _ => {}
        }
        Ok(OcProblem {
            alpha,
            a,
            xa,
            cost,
            terminal_cost: None,
            dynamics,
            m_int,
            m_frac,
            terminal,
            control: ControlLaw::Auto,
            aux: Vec::new(),
        })
    }

    pub fn with_terminal_cost(mut self, phi: Expr) -> Self {
        self.terminal_cost = Some(phi);
        self
    }

    pub fn with_control(mut self, law: ControlLaw) -> Self {
        self.control = law;
        self
    }

    pub fn with_aux(mut self, aux: Vec<Expr>) -> Self {
        self.aux = aux;
        self
    }

    pub fn with_terminal(mut self, terminal: Terminal) -> Self {
        self.terminal = terminal;
        self
    }
}

/// Classical Lagrange problem obtained from a fractional one.
///
/// States are `s0 = x`, then any auxiliary integral states, then the
/// moments `V_2..V_N`. Expressions use `t`, `u` and `s<i>`.
#[derive(Clone, Debug)]
pub struct TransformedProblem {
    pub alpha: f64,
    pub big_n: usize,
    pub a: f64,
    pub initial: Vec<f64>,
    pub cost: Expr,
    pub dynamics: Vec<Expr>,
    pub terminal: Terminal,
    pub terminal_cost: Option<Expr>,
    pub control: ControlLaw,
    /// The expansion that replaced the fractional derivative, in the same
    /// variables (`u` stands for `ẋ` in problems coming from a [`BasicFvp`]).
    pub derivative: Expr,
    /// Index of `V_2` in the state vector.
    pub moment_offset: usize,
}

impl TransformedProblem {
    pub fn state_dim(&self) -> usize {
        self.dynamics.len()
    }

    pub fn costate_dim(&self) -> usize {
        self.dynamics.len()
    }
}

/// Rewrites a [`BasicFvp`] with `u = ẋ` as the control and the moment
/// expansion in place of `Dx`.
pub fn transform_fvp(p: &BasicFvp, big_n: usize) -> Result<TransformedProblem> {
    let c = first_order_coeffs(p.alpha, big_n)?;
    let v: Vec<Expr> = (1..big_n).map(state).collect();
    let derivative = expansion_expr(&c, p.a, state(0), Expr::var(Var::U), &v);
    let cost = p
        .lagrangian()
        .substitute(Var::Dx, &derivative)
        .substitute(Var::Xp, &Expr::var(Var::U))
        .substitute(Var::X, &state(0));
    let mut dynamics = vec![Expr::var(Var::U)];
    dynamics.extend(moment_dynamics(p.a, big_n, state(0)));
    let mut initial = vec![p.xa];
    initial.resize(big_n, 0.0);
    Ok(TransformedProblem {
        alpha: p.alpha,
        big_n,
        a: p.a,
        initial,
        cost: simplify(&cost),
        dynamics,
        terminal: Terminal::Fixed { t: p.b, x: p.xb },
        terminal_cost: None,
        control: ControlLaw::Auto,
        derivative: simplify(&derivative),
        moment_offset: 1,
    })
}

/// Rewrites an [`OcProblem`]: the Caputo derivative in the dynamics is
/// replaced by the moment expansion minus `x_a s^{-α}/Γ(1−α)`, and the
/// dynamics are solved for `ẋ`. Without a fractional term no moments are
/// added.
pub fn transform_oc(p: &OcProblem, big_n: usize) -> Result<TransformedProblem> {
    let naux = p.aux.len();
    let x = state(0);
    let to_states = |e: &Expr| e.substitute(Var::X, &state(0));
    let (xdot, derivative, moments) = if p.m_frac == 0.0 {
        (
            Expr::div(to_states(&p.dynamics), num(p.m_int)),
            Expr::var(Var::U),
            0,
        )
    } else {
        let c = first_order_coeffs(p.alpha, big_n)?;
        let offset = 1 + naux;
        let v: Vec<Expr> = (0..big_n - 1).map(|k| state(offset + k)).collect();
        // everything of the Caputo expansion except the ẋ term
        let rest = Expr::sub(
            expansion_expr(&c, p.a, x.clone(), num(0.0), &v),
            Expr::mul(
                num(p.xa * rgamma(1.0 - p.alpha)),
                kernel(p.a, -p.alpha, false),
            ),
        );
        let denom = Expr::add(
            num(p.m_int),
            Expr::mul(
                num(p.m_frac * c.scalar_b()),
                kernel(p.a, 1.0 - p.alpha, false),
            ),
        );
        let xdot = Expr::div(
            Expr::sub(
                to_states(&p.dynamics),
                Expr::mul(num(p.m_frac), rest.clone()),
            ),
            denom,
        );
        let xdot = simplify(&xdot);
        let derivative = Expr::add(
            rest,
            Expr::mul(
                Expr::mul(num(c.scalar_b()), kernel(p.a, 1.0 - p.alpha, false)),
                xdot.clone(),
            ),
        );
        (xdot, derivative, big_n - 1)
    };
    let mut dynamics = vec![simplify(&xdot)];
    dynamics.extend(p.aux.iter().map(|g| simplify(&to_states(g))));
    if moments > 0 {
        dynamics.extend(moment_dynamics(p.a, big_n, x));
    }
    let mut initial = vec![p.xa];
    initial.resize(dynamics.len(), 0.0);
    let control = match &p.control {
        ControlLaw::Supplied(e) => ControlLaw::Supplied(to_states(e)),
        other => other.clone(),
    };
    Ok(TransformedProblem {
        alpha: p.alpha,
        big_n,
        a: p.a,
        initial,
        cost: simplify(&to_states(&p.cost)),
        dynamics,
        terminal: p.terminal,
        terminal_cost: p.terminal_cost.as_ref().map(to_states),
        control,
        derivative: simplify(&derivative),
        moment_offset: 1 + naux,
    })
}

enum CompiledLaw {
    Closed(Expr),
    Newton,
}

/// `H = L + Σ λ_i f_i` with its partials, ready for evaluation.
struct Hamiltonian {
    m: usize,
    cost: Expr,
    h: Expr,
    dynamics: Vec<Expr>,
    h_y: Vec<Expr>,
    h_u: Expr,
    h_uu: Expr,
    law: CompiledLaw,
    phi: Option<Expr>,
    phi_x: Option<Expr>,
    phi_t: Option<Expr>,
}

impl Hamiltonian {
    fn new(cost: &Expr, dynamics: &[Expr], law: &ControlLaw, phi: Option<&Expr>) -> Result<Self> {
        let m = dynamics.len();
        let mut h = cost.clone();
        for (i, f) in dynamics.iter().enumerate() {
            h = Expr::add(h, Expr::mul(costate(i), f.clone()));
        }
        let h = simplify(&h);
        let h_y = (0..m)
            .map(|i| simplify(&diff_expr(&h, Var::State(i))))
            .collect();
        let h_u = simplify(&diff_expr(&h, Var::U));
        let h_uu = simplify(&diff_expr(&h_u, Var::U));
        let law = match law {
            ControlLaw::Supplied(e) => CompiledLaw::Closed(e.clone()),
            ControlLaw::Newton => CompiledLaw::Newton,
            ControlLaw::Auto if !h.depends_on(Var::U) => CompiledLaw::Closed(num(0.0)),
            ControlLaw::Auto if !h_uu.depends_on(Var::U) => {
                let at0 = h_u.substitute(Var::U, &num(0.0));
                CompiledLaw::Closed(simplify(&Expr::neg(Expr::div(at0, h_uu.clone()))))
            }
            ControlLaw::Auto => {
                return Err(Error::Unsupported(
                    "H is not quadratic in u; supply a control law or use the Newton fallback"
                        .into(),
                ))
            }
        };
        Ok(Hamiltonian {
            m,
            cost: cost.clone(),
            h,
            dynamics: dynamics.to_vec(),
            h_y,
            h_u,
            h_uu,
            law,
            phi: phi.cloned(),
            phi_x: phi.map(|e| simplify(&diff_expr(e, Var::State(0)))),
            phi_t: phi.map(|e| simplify(&diff_expr(e, Var::T))),
        })
    }

    fn env<'a>(t: f64, y: &'a [f64], lam: &'a [f64], u: f64) -> Env<'a> {
        Env {
            t,
            x: y[0],
            u,
            states: y,
            costates: lam,
            ..Default::default()
        }
    }

    fn control(&self, t: f64, y: &[f64], lam: &[f64]) -> Result<f64> {
        match &self.law {
            CompiledLaw::Closed(e) => e.eval(&Self::env(t, y, lam, 0.0)),
            CompiledLaw::Newton => {
                let mut u = 0.0;
                for _ in 0..50 {
                    let env = Self::env(t, y, lam, u);
                    let g = self.h_u.eval(&env)?;
                    let dg = self.h_uu.eval(&env)?;
                    if dg == 0.0 || !dg.is_finite() {
                        return Err(Error::Evaluation(format!("∂²H/∂u² vanishes at t = {t}")));
                    }
                    let step = g / dg;
                    u -= step;
                    if step.abs() <= 1e-13 * u.abs().max(1.0) {
                        return Ok(u);
                    }
                }
                Err(Error::Evaluation(format!(
                    "no stationary control found at t = {t}"
                )))
            }
        }
    }

    fn value(&self, t: f64, y: &[f64], lam: &[f64], u: f64) -> Result<f64> {
        self.h.eval(&Self::env(t, y, lam, u))
    }

    fn rhs(&self, t: f64, z: &[f64], dz: &mut [f64]) -> Result<()> {
        let (y, lam) = z.split_at(self.m);
        let u = self.control(t, y, lam)?;
        let env = Self::env(t, y, lam, u);
        for i in 0..self.m {
            dz[i] = self.dynamics[i].eval(&env)?;
            dz[self.m + i] = -self.h_y[i].eval(&env)?;
        }
        Ok(())
    }

    fn terminal(&self, e: &Option<Expr>, t: f64, y: &[f64]) -> Result<f64> {
        match e {
            Some(e) => e.eval(&Self::env(t, y, &[], 0.0)),
            None => Ok(0.0),
        }
    }
}

/// Solution of a Hamiltonian boundary value problem.
#[derive(Clone, Debug)]
pub struct IndirectSolution {
    /// Ascending nodes on `[a + δ, T]`.
    pub t: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub costates: Vec<Vec<f64>>,
    pub control: Vec<f64>,
    pub cost: f64,
    pub t_final: f64,
    pub iterations: usize,
    pub residual_norm: f64,
}

impl IndirectSolution {
    pub fn x(&self) -> Vec<f64> {
        self.states.iter().map(|s| s[0]).collect()
    }

    /// Linear interpolation of state component `i` (clamped to the ends).
    pub fn state_at(&self, i: usize, t: f64) -> f64 {
        interp(
            &self.t,
            &self.states.iter().map(|s| s[i]).collect::<Vec<_>>(),
            t,
        )
    }

    pub fn control_at(&self, t: f64) -> f64 {
        interp(&self.t, &self.control, t)
    }
}

fn interp(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    if t <= ts[0] {
        return vs[0];
    }
    let n = ts.len() - 1;
    if t >= ts[n] {
        return vs[n];
    }
    let k = ts.partition_point(|&s| s <= t).min(n) - 1;
    let w = (t - ts[k]) / (ts[k + 1] - ts[k]);
    vs[k] * (1.0 - w) + vs[k + 1] * w
}

/// Options for the Hamiltonian boundary value solvers.
#[derive(Clone, Copy, Debug)]
pub struct IndirectOptions {
    /// Mesh intervals (geometrically graded toward singular ends).
    pub steps: usize,
    /// Offset from singular ends.
    pub delta: f64,
    pub newton: NewtonOptions,
    /// Initial guess for a free final time.
    pub t_guess: f64,
}

impl IndirectOptions {
    pub fn new(steps: usize) -> Self {
        IndirectOptions {
            steps,
            delta: DEFAULT_DELTA,
            newton: NewtonOptions {
                tol: 1e-10,
                max_iter: 50,
                ..Default::default()
            },
            t_guess: 1.0,
        }
    }
}

/// Solves the Hamiltonian system `ẏ = ∂H/∂λ`, `λ̇ = −∂H/∂y`, `∂H/∂u = 0`
/// of a transformed problem by collocation on a mesh graded toward `a`.
///
/// At `a + δ` all states match the initial vector. At `T`, `x(T)` is
/// imposed when fixed, otherwise `λ_x(T) = ∂φ/∂x`; every other costate
/// vanishes at `T`. A free final time is handled by [`solve_free_time`].
pub fn solve_indirect_bvp(tp: &TransformedProblem, steps: usize) -> Result<IndirectSolution> {
    solve_indirect_with(tp, &IndirectOptions::new(steps))
}

pub fn solve_indirect_with(
    tp: &TransformedProblem,
    opts: &IndirectOptions,
) -> Result<IndirectSolution> {
    let big_t = match tp.terminal {
        Terminal::Fixed { t, .. } | Terminal::FreeState { t } => t,
        Terminal::FreeTime { .. } => {
            return Err(Error::Domain("free final time: use solve_free_time".into()));
        }
    };
    let ham = Hamiltonian::new(
        &tp.cost,
        &tp.dynamics,
        &tp.control,
        tp.terminal_cost.as_ref(),
    )?;
    fixed_time(tp, &ham, big_t, opts)
}

fn fixed_time(
    tp: &TransformedProblem,
    ham: &Hamiltonian,
    big_t: f64,
    opts: &IndirectOptions,
) -> Result<IndirectSolution> {
    let m = ham.m;
    let a = tp.a;
    if !(big_t > a) {
        return Err(Error::Domain(format!("final time {big_t} must exceed {a}")));
    }
    let x_t = match tp.terminal {
        Terminal::Fixed { x, .. } | Terminal::FreeTime { x } => Some(x),
        Terminal::FreeState { .. } => None,
    };
    let initial = tp.initial.clone();
    let spec = CollocationSpec {
        dim: 2 * m,
        rhs: Box::new(|t, z, dz| ham.rhs(t, z, dz)),
        mesh: Mesh::new(a, big_t, TimeMap::SingularStart, opts.steps).with_delta(opts.delta),
        left: Box::new(move |z| Ok((0..m).map(|i| z[i] - initial[i]).collect())),
        right: Box::new(move |z| {
            let mut r = Vec::with_capacity(m);
            match x_t {
                Some(x) => r.push(z[0] - x),
                None => r.push(z[m] - ham.terminal(&ham.phi_x, big_t, &z[..m])?),
            }
            r.extend_from_slice(&z[m + 1..]);
            Ok(r)
        }),
    };
    let x0 = tp.initial[0];
    let x1 = x_t.unwrap_or(x0);
    let guess = move |t: f64| {
        let mut z = vec![0.0; 2 * m];
        z[0] = x0 + (x1 - x0) * (t - a) / (big_t - a);
        z
    };
    let res = collocation_bvp(&spec, &guess, &opts.newton)?;
    debug!(
        "indirect: {} Newton iterations, residual {:.2e}",
        res.iterations, res.residual_norm
    );
    assemble(
        ham,
        res.trajectory,
        big_t,
        res.iterations,
        res.residual_norm,
    )
}

fn assemble(
    ham: &Hamiltonian,
    tr: Trajectory,
    t_final: f64,
    iterations: usize,
    residual_norm: f64,
) -> Result<IndirectSolution> {
    let m = ham.m;
    let mut states = Vec::with_capacity(tr.len());
    let mut costates = Vec::with_capacity(tr.len());
    let mut control = Vec::with_capacity(tr.len());
    let mut running = Vec::with_capacity(tr.len());
    for (t, z) in tr.t.iter().zip(&tr.y) {
        let (y, lam) = z.split_at(m);
        let u = ham.control(*t, y, lam)?;
        running.push(ham.cost.eval(&Hamiltonian::env(*t, y, lam, u))?);
        states.push(y.to_vec());
        costates.push(lam.to_vec());
        control.push(u);
    }
    let last = states.last().cloned().unwrap_or_default();
    let cost = trapezoid(&tr.t, &running) + ham.terminal(&ham.phi, t_final, &last)?;
    Ok(IndirectSolution {
        t: tr.t,
        states,
        costates,
        control,
        cost,
        t_final,
        iterations,
        residual_norm,
    })
}

/// `H` and `∂H/∂u` (central difference, independent of the control law) at
/// every node of a solution.
pub fn hamiltonian_diagnostics(
    tp: &TransformedProblem,
    sol: &IndirectSolution,
) -> Result<Vec<(f64, f64)>> {
    let ham = Hamiltonian::new(
        &tp.cost,
        &tp.dynamics,
        &tp.control,
        tp.terminal_cost.as_ref(),
    )?;
    sol.t
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (y, lam, u) = (&sol.states[k], &sol.costates[k], sol.control[k]);
            let h = 1e-4 * u.abs().max(1.0);
            let hp = ham.value(t, y, lam, u + h)?;
            let hm = ham.value(t, y, lam, u - h)?;
            Ok((ham.value(t, y, lam, u)?, (hp - hm) / (2.0 * h)))
        })
        .collect()
}

/// Scalar Newton iteration on the final time; `solve(T)` returns the fixed-time
/// solution and the transversality residual at `T`.
fn search_final_time<F>(a: f64, opts: &IndirectOptions, mut solve: F) -> Result<IndirectSolution>
where
    F: FnMut(f64) -> Result<(IndirectSolution, f64)>,
{
    let tol = 1e-9;
    let mut newton = NewtonOptions {
        tol,
        max_iter: 40,
        fd_step: 1e-6,
        ..Default::default()
    };
    newton.singular = SingularPolicy::MinNorm;
    let report = newton_solve(
        |p| {
            if !(p[0] > a) {
                return Err(Error::Domain(format!(
                    "final time {} is not after {a}",
                    p[0]
                )));
            }
            Ok(vec![solve(p[0])?.1])
        },
        &[opts.t_guess],
        &newton,
    )?;
    let (mut sol, _) = solve(report.x[0])?;
    sol.iterations = report.iterations;
    sol.residual_norm = report.residual_norm;
    Ok(sol)
}

/// Free-final-time problem with fixed `x(T)`: for each trial `T` the
/// fixed-time problem is solved, and `T` is adjusted until
/// `H(T) + ∂φ/∂T = 0`. When every `T` satisfies the condition (a family of
/// optimal times), the initial guess is returned.
pub fn solve_free_time(p: &OcProblem, big_n: usize, steps: usize) -> Result<IndirectSolution> {
    let mut opts = IndirectOptions::new(steps);
    opts.t_guess = p.a + 1.0;
    solve_free_time_with(p, big_n, &opts)
}

pub fn solve_free_time_with(
    p: &OcProblem,
    big_n: usize,
    opts: &IndirectOptions,
) -> Result<IndirectSolution> {
    if !matches!(p.terminal, Terminal::FreeTime { .. }) {
        return Err(Error::Domain(
            "the free-time solver needs a free final time".into(),
        ));
    }
    let tp = transform_oc(p, big_n)?;
    let ham = Hamiltonian::new(
        &tp.cost,
        &tp.dynamics,
        &tp.control,
        tp.terminal_cost.as_ref(),
    )?;
    search_final_time(p.a, opts, |big_t| {
        let sol = fixed_time(&tp, &ham, big_t, opts)?;
        let (y, lam) = (sol.states.last().unwrap(), sol.costates.last().unwrap());
        let u = ham.control(big_t, y, lam)?;
        let h = ham.value(big_t, y, lam, u)? + ham.terminal(&ham.phi_t, big_t, y)?;
        Ok((sol, h))
    })
}

/// Fractional necessary conditions solved directly: the left Caputo
/// derivative in the dynamics and the right Riemann–Liouville derivative in
/// the adjoint equation
///
/// ```text
/// m_int ẋ + m_frac ᶜD^α x = ∂H/∂λ,   −m_int λ̇ + m_frac D_T^α λ = ∂H/∂x,   ∂H/∂u = 0
/// ```
///
/// are both replaced by moment expansions (states `V_p` forward from `a`,
/// `W_p` backward from `T`). Supports fixed endpoints, and free `T` with
/// fixed `x(T)` where `T` is adjusted until `λ(T) = 0`. Auxiliary states and
/// terminal costs are not supported on this route.
pub fn solve_fractional_conditions(
    p: &OcProblem,
    big_n: usize,
    opts: &IndirectOptions,
) -> Result<IndirectSolution> {
    if !p.aux.is_empty() || p.terminal_cost.is_some() {
        return Err(Error::Unsupported(
            "the fractional-conditions route handles neither auxiliary states nor terminal costs"
                .into(),
        ));
    }
    let c = first_order_coeffs(p.alpha, big_n)?;
    let to_states = |e: &Expr| e.substitute(Var::X, &state(0));
    let control = match &p.control {
        ControlLaw::Supplied(e) => ControlLaw::Supplied(to_states(e)),
        other => other.clone(),
    };
    let ham = Hamiltonian::new(
        &to_states(&p.cost),
        &[to_states(&p.dynamics)],
        &control,
        None,
    )?;
    match p.terminal {
        Terminal::Fixed { t, x } => fnc_fixed(p, &c, &ham, t, x, opts),
        Terminal::FreeTime { x } => search_final_time(p.a, opts, |big_t| {
            let sol = fnc_fixed(p, &c, &ham, big_t, x, opts)?;
            let lam = sol.costates.last().unwrap()[0];
            Ok((sol, lam))
        }),
        Terminal::FreeState { .. } => Err(Error::Unsupported(
            "the fractional-conditions route needs a fixed x(T)".into(),
        )),
    }
}

fn fnc_fixed(
    p: &OcProblem,
    c: &MomentCoeffs,
    ham: &Hamiltonian,
    big_t: f64,
    x_t: f64,
    opts: &IndirectOptions,
) -> Result<IndirectSolution> {
    let nm = c.big_n - 1;
    let dim = 2 * (1 + nm);
    let (a, alpha, xa) = (p.a, p.alpha, p.xa);
    let (m_int, m_frac) = (p.m_int, p.m_frac);
    let caputo_shift = xa * rgamma(1.0 - alpha);
    let rhs = move |t: f64, z: &[f64], dz: &mut [f64]| -> Result<()> {
        let (s, r) = (t - a, big_t - t);
        let (x, v) = (z[0], &z[1..1 + nm]);
        let (lam, w) = (z[1 + nm], &z[2 + nm..]);
        let u = ham.control(t, &z[..1], &z[1 + nm..2 + nm])?;
        let env = Hamiltonian::env(t, &z[..1], &z[1 + nm..2 + nm], u);
        let f = ham.dynamics[0].eval(&env)?;
        let h_x = ham.h_y[0].eval(&env)?;
        let mut left = c.scalar_a() * s.powf(-alpha) * x - caputo_shift * s.powf(-alpha);
        let mut right = c.scalar_a() * r.powf(-alpha) * lam;
        for k in 0..nm {
            let pf = (k + 2) as f64;
            left -= c.c(k + 2) * s.powf(1.0 - pf - alpha) * v[k];
            right -= c.c(k + 2) * r.powf(1.0 - pf - alpha) * w[k];
            dz[1 + k] = (1.0 - pf) * s.powf(pf - 2.0) * x;
            dz[2 + nm + k] = -(1.0 - pf) * r.powf(pf - 2.0) * lam;
        }
        let den_l = m_int + m_frac * c.scalar_b() * s.powf(1.0 - alpha);
        let den_r = m_int + m_frac * c.scalar_b() * r.powf(1.0 - alpha);
        if den_l == 0.0 || den_r == 0.0 {
            return Err(Error::Evaluation(format!(
                "vanishing derivative coefficient at t = {t}"
            )));
        }
        dz[0] = (f - m_frac * left) / den_l;
        dz[1 + nm] = (m_frac * right - h_x) / den_r;
        Ok(())
    };
    let spec = CollocationSpec {
        dim,
        rhs: Box::new(rhs),
        mesh: Mesh::new(a, big_t, TimeMap::SingularBoth, opts.steps).with_delta(opts.delta),
        left: Box::new(move |z| {
            let mut r = vec![z[0] - xa];
            r.extend_from_slice(&z[1..1 + nm]);
            Ok(r)
        }),
        right: Box::new(move |z| {
            let mut r = vec![z[0] - x_t];
            r.extend_from_slice(&z[2 + nm..]);
            Ok(r)
        }),
    };
    let guess = move |t: f64| {
        let mut z = vec![0.0; dim];
        z[0] = xa + (x_t - xa) * (t - a) / (big_t - a);
        z
    };
    let res = collocation_bvp(&spec, &guess, &opts.newton)?;
    let tr = res.trajectory;
    let mut sol = IndirectSolution {
        t: Vec::with_capacity(tr.len()),
        states: Vec::with_capacity(tr.len()),
        costates: Vec::with_capacity(tr.len()),
        control: Vec::with_capacity(tr.len()),
        cost: 0.0,
        t_final: big_t,
        iterations: res.iterations,
        residual_norm: res.residual_norm,
    };
    let mut running = Vec::with_capacity(tr.len());
    for (t, z) in tr.t.iter().zip(&tr.y) {
        let u = ham.control(*t, &z[..1], &z[1 + nm..2 + nm])?;
        running.push(ham.cost.eval(&Hamiltonian::env(*t, &z[..1], &[], u))?);
        sol.t.push(*t);
        sol.states.push(z[..1 + nm].to_vec());
        sol.costates.push(z[1 + nm..].to_vec());
        sol.control.push(u);
    }
    sol.cost = trapezoid(&sol.t, &running);
    Ok(sol)
}

/// Closed-form solution of the moment-transformed problem
/// `∫_0^1 (D^α x − ẋ²) dt → min`, `x(0) = 0`, `x(1) = 1`:
///
/// ```text
/// x(t) = M t^{2-α} − Σ_p D_p t^p + (1 − M + Σ_p D_p) t,   D_p = C_p / (2p(2 − p − α)),
/// M = [B − A/(1−α) − Σ_p C_p (1−p)/((1−α)(2−p−α))] / (2(2−α)).
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Example2ClosedForm {
    pub alpha: f64,
    pub m: f64,
    /// `(p, D_p)` for `p = 2..=N`.
    pub powers: Vec<(usize, f64)>,
    pub linear: f64,
}

impl Example2ClosedForm {
    pub fn eval(&self, t: f64) -> f64 {
        let poly: f64 = self.powers.iter().map(|&(p, d)| d * t.powi(p as i32)).sum();
        self.m * t.powf(2.0 - self.alpha) - poly + self.linear * t
    }
}

pub fn closed_form_indirect_example2(alpha: f64, big_n: usize) -> Result<Example2ClosedForm> {
    let c = first_order_coeffs(alpha, big_n)?;
    let mut sum_m = 0.0;
    let mut powers = Vec::with_capacity(big_n - 1);
    for p in 2..=big_n {
        let pf = p as f64;
        let cp = c.c(p);
        sum_m += cp * (1.0 - pf) / ((1.0 - alpha) * (2.0 - pf - alpha));
        powers.push((p, cp / (2.0 * pf * (2.0 - pf - alpha))));
    }
    let m = (c.scalar_b() - c.scalar_a() / (1.0 - alpha) - sum_m) / (2.0 * (2.0 - alpha));
    let sum_d: f64 = powers.iter().map(|&(_, d)| d).sum();
    Ok(Example2ClosedForm {
        alpha,
        m,
        powers,
        linear: 1.0 - m + sum_d,
    })
}

/// Operator family of a fractional differential equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdeFamily {
    Rl,
    Hadamard,
}

/// How the fractional derivative is reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdeMethod {
    /// First-order moment expansion with `N` terms (`n = 1`).
    Moment,
    /// The first two terms of the Taylor-type series,
    /// `s^{-α}x/Γ(1−α) + α s^{1-α}ẋ/((1−α)Γ(1−α))` (Riemann–Liouville only).
    IntegerExpansion,
}

/// `D^α x + r(t, x) = s(t)` on `[a, b]` with `x(a) = x_a`; for the Hadamard
/// family `a > 0`.
#[derive(Clone, Debug)]
pub struct FdeSpec {
    pub family: FdeFamily,
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    pub r: Expr,
    pub s: Expr,
    pub xa: f64,
    pub big_n: usize,
    pub method: FdeMethod,
}

/// Integrates the ODE system obtained by expanding the derivative. The
/// trajectory starts at `a + δ` with `x = x_a` and zero moments; component 0
/// is `x`, the rest are the moments `V_2..V_N` (with weight `p − 1`).
pub fn solve_fde(spec: &FdeSpec, steps: usize) -> Result<Trajectory> {
    let alpha = spec.alpha;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    if !(spec.b > spec.a) {
        return Err(Error::Domain("the interval must have b > a".into()));
    }
    let had = spec.family == FdeFamily::Hadamard;
    if had && !(spec.a > 0.0) {
        return Err(Error::Domain("Hadamard equations need a > 0".into()));
    }
    let (a0, a1, moments) = match spec.method {
        FdeMethod::Moment => {
            if spec.big_n < 2 {
                return Err(Error::Domain(format!(
                    "the moment expansion needs N ≥ 2, got {}",
                    spec.big_n
                )));
            }
            let kind = if had {
                MomentKind::HadamardDerivative
            } else {
                MomentKind::Derivative
            };
            let c = moment_coeffs(alpha, 1, spec.big_n, kind)?;
            let b: Vec<f64> = (2..=spec.big_n).map(|p| c.c(p)).collect();
            (c.scalar_a(), c.scalar_b(), b)
        }
        FdeMethod::IntegerExpansion if had => {
            return Err(Error::Unsupported(
                "the integer-order reduction is implemented for the RL family".into(),
            ))
        }
        FdeMethod::IntegerExpansion => {
            let g = rgamma(1.0 - alpha);
            (g, alpha * g / (1.0 - alpha), Vec::new())
        }
    };
    let nm = moments.len();
    let a = spec.a;
    let (r, s) = (&spec.r, &spec.s);
    let sys = OdeSystem::new(1 + nm, |t, y, dy| {
        // kernel coordinate and the factor multiplying ẋ in the expansion
        let (sig, jac) = if had { ((t / a).ln(), t) } else { (t - a, 1.0) };
        let env = Env {
            t,
            x: y[0],
            ..Default::default()
        };
        let rhs = s.eval(&env)? - r.eval(&env)?;
        let mut known = a0 * sig.powf(-alpha) * y[0];
        for (k, bp) in moments.iter().enumerate() {
            let pf = (k + 2) as f64;
            known += bp * sig.powf(1.0 - alpha - pf) * y[1 + k];
            dy[1 + k] = (pf - 1.0) * sig.powf(pf - 2.0) * y[0] / jac;
        }
        let coef = a1 * sig.powf(1.0 - alpha) * jac;
        if coef == 0.0 || !coef.is_finite() {
            return Err(Error::Evaluation(format!(
                "vanishing ẋ coefficient at t = {t}"
            )));
        }
        dy[0] = (rhs - known) / coef;
        Ok(())
    });
    let mut y0 = vec![0.0; 1 + nm];
    y0[0] = spec.xa;
    let mesh = Mesh::new(spec.a, spec.b, TimeMap::SingularStart, steps);
    let tr = rk4_mapped(&sys, &mesh, &y0, true)?;
    check_finite(&tr)?;
    Ok(tr)
}

fn check_finite(tr: &Trajectory) -> Result<()> {
    match tr.y.iter().position(|y| y.iter().any(|v| !v.is_finite())) {
        Some(k) => Err(Error::Evaluation(format!(
            "the integration blew up near t = {}",
            tr.t[k]
        ))),
        None => Ok(()),
    }
}

/// How the fractional integral is reduced in [`solve_fie`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieMethod {
    /// Integral moment expansion with two explicit terms and `N` moments.
    Moment,
    /// `s^α x/Γ(1+α) − s^{1+α} ẋ/((1+α)Γ(α))`.
    Taylor,
}

/// `I^α x = g(t)` on `[a, b]`.
#[derive(Clone, Debug)]
pub struct FieSpec {
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    pub rhs: Expr,
    pub x0: f64,
    pub big_n: usize,
    pub method: FieMethod,
}

/// Relative start offset of [`solve_fie`].
pub const FIE_START: f64 = 1e-2;

/// Four-point Gauss–Legendre nodes and weights on `[0, 1]`.
const GL4: [(f64, f64); 4] = [
    (0.069_431_844_202_973_7, 0.173_927_422_568_726_93),
    (0.330_009_478_207_571_9, 0.326_072_577_431_273_07),
    (0.669_990_521_792_428_1, 0.326_072_577_431_273_07),
    (0.930_568_155_797_026_3, 0.173_927_422_568_726_93),
];

/// Local power exponent of `g` at offset `s` from `a`, from `g(a + s)` and
/// `g(a + s/2)`.
fn local_exponent(g: &dyn Fn(f64) -> Result<f64>, a: f64, s: f64) -> Result<Option<f64>> {
    let (g1, g2) = (g(a + s)?, g(a + s / 2.0)?);
    Ok((g1 != 0.0 && g2 != 0.0 && g1.signum() == g2.signum()).then(|| (g1 / g2).log2()))
}

/// Solves `I^α x = g` through
/// `A_0 s^α x + A_1 s^{α+1} ẋ + Σ B_p s^{α+1-p} V_p = g`,
/// `V̇_p = (p − 1) s^{p-2} x`.
///
/// With `W_p = s^{1-p} V_p` and `τ = ln s` the reduced system has constant
/// coefficients, `z' = M z + e₀ g s^{-α}/A_1`, and its homogeneous
/// solutions are powers `s^r` where `r` runs over the eigenvalues of `M`.
/// The expansion always produces modes growing much faster than the
/// solution, so marching the full system from `a` amplifies every start
/// error by orders of magnitude. Instead each mode is integrated in its
/// stable direction: modes slower than the local behaviour `s^γ` of the
/// solution near `a` forward from `a + δ` (`δ = 10⁻²(b − a)`), the others
/// backward from `b`, each starting from the local power-law particular
/// solution. For `g = k s^β` this is the exact power solution of the
/// reduced system. When `g` does not behave like a power near `a` the
/// forward modes start from `x = x0`.
pub fn solve_fie(spec: &FieSpec, steps: usize) -> Result<Trajectory> {
    let alpha = spec.alpha;
    if !(alpha > 0.0) || alpha.fract() == 0.0 {
        return Err(Error::Domain(format!(
            "alpha must be positive and non-integer, got {alpha}"
        )));
    }
    if !(spec.b > spec.a) {
        return Err(Error::Domain("the interval must have b > a".into()));
    }
    if steps == 0 {
        return Err(Error::Domain("at least one step is required".into()));
    }
    let (a0, a1, moments) = match spec.method {
        FieMethod::Moment => {
            if spec.big_n < 2 {
                return Err(Error::Domain(format!(
                    "the moment expansion needs N ≥ 2, got {}",
                    spec.big_n
                )));
            }
            let c = moment_coeffs(alpha, 2, spec.big_n, MomentKind::Integral)?;
            let b: Vec<f64> = (2..=spec.big_n).map(|p| c.b_p(p)).collect();
            (c.a[0], c.a[1], b)
        }
        FieMethod::Taylor => (
            rgamma(1.0 + alpha),
            -1.0 / ((1.0 + alpha) * gamma(alpha)?),
            Vec::new(),
        ),
    };
    if a1 == 0.0 {
        return Err(Error::Evaluation("vanishing ẋ coefficient".into()));
    }
    let dim = 1 + moments.len();
    let a = spec.a;
    let len = spec.b - spec.a;
    let g = |t: f64| {
        spec.rhs.eval(&Env {
            t,
            ..Default::default()
        })
    };
    let delta = FIE_START * len;
    // forcing in τ, divided by A_1
    let h = |tau: f64| -> Result<f64> {
        let s = tau.exp();
        Ok(g(a + s)? * s.powf(-alpha) / a1)
    };

    let mut m = DMatrix::<f64>::zeros(dim, dim);
    m[(0, 0)] = -a0 / a1;
    for (j, bp) in moments.iter().enumerate() {
        let pm1 = (j + 1) as f64;
        m[(0, 1 + j)] = -bp / a1;
        m[(1 + j, 0)] = pm1;
        m[(1 + j, 1 + j)] = -pm1;
    }
    let roots: Vec<Complex<f64>> = m.complex_eigenvalues().iter().copied().collect();
    // eigenvector of root r: x = 1, W_p = (p − 1)/(r + p − 1)
    let vec_entry = |r: Complex<f64>, i: usize| -> Complex<f64> {
        if i == 0 {
            Complex::new(1.0, 0.0)
        } else {
            let pm1 = i as f64;
            Complex::new(pm1, 0.0) / (r + pm1)
        }
    };
    let p = DMatrix::<Complex<f64>>::from_fn(dim, dim, |i, j| vec_entry(roots[j], i));
    let lu = p.clone().lu();
    let mut e0 = DVector::<Complex<f64>>::zeros(dim);
    e0[0] = Complex::new(1.0, 0.0);
    let q = lu
        .solve(&e0)
        .filter(|q| q.iter().all(|v| v.is_finite()))
        .ok_or_else(|| {
            Error::Evaluation("the reduced system has a repeated characteristic root".into())
        })?;

    let gamma_a = local_exponent(&g, a, delta)?
        .map(|beta| beta - alpha)
        .filter(|gm| *gm > -1.0);
    let gamma_b = local_exponent(&g, a, len)?.map_or(0.0, |beta| beta - alpha);
    let threshold = gamma_a.unwrap_or(0.0);
    if gamma_a.is_some_and(|gm| gm > 1e-8) && spec.x0 != 0.0 {
        log::warn!(
            "x(a) = {} is inconsistent with the equation, which forces x(a) = 0",
            spec.x0
        );
    }
    let x0_modes = match gamma_a {
        Some(_) => None,
        None => {
            let z = DVector::from_element(dim, Complex::new(spec.x0, 0.0));
            Some(
                lu.solve(&z)
                    .ok_or_else(|| Error::Evaluation("singular mode basis".into()))?,
            )
        }
    };
    // particular amplitude of mode r at τ from the tail of the forcing:
    // ∫_0^U e^{-|ρ| u} h(τ ∓ u) du with ρ = r − γ decaying along the tail
    let tail = |r: Complex<f64>, tau: f64, sign: f64, gm: f64| -> Option<Complex<f64>> {
        let rate = (sign * (r.re - gm)).max(0.5);
        let upper = (34.0 / rate).min(80.0);
        let part = |imag: bool| {
            integrate(
                |u| {
                    let w = (-sign * r * u).exp();
                    let hv = h(tau + sign * u)?;
                    Ok(if imag { w.im } else { w.re } * hv)
                },
                0.0,
                upper,
                1e-12,
            )
            .ok()
            .filter(|v| v.is_finite())
        };
        Some(Complex::new(part(false)?, part(true)?))
    };
    let mesh = Mesh::new(a, spec.b, TimeMap::SingularStart, steps).with_delta(delta);
    let taus = mesh.sigma_nodes();
    let n = taus.len();
    // ∫_0^Δ e^{r(Δ-u)} h(τ0 + u) du
    let segment = |r: Complex<f64>, tau0: f64, d: f64| -> Result<Complex<f64>> {
        let mut acc = Complex::new(0.0, 0.0);
        for (xi, w) in GL4 {
            let u = xi * d;
            acc += (r * (d - u)).exp() * (w * d * h(tau0 + u)?);
        }
        Ok(acc)
    };
    let mut amps = vec![vec![Complex::new(0.0, 0.0); dim]; n];
    for (j, &r) in roots.iter().enumerate() {
        let qj = q[j];
        if r.re < threshold {
            amps[0][j] = match &x0_modes {
                Some(c) => c[j],
                None => match tail(r, taus[0], -1.0, threshold) {
                    Some(v) => qj * v,
                    None => qj * h(taus[0])? / (threshold - r),
                },
            };
            for k in 0..n - 1 {
                let d = taus[k + 1] - taus[k];
                amps[k + 1][j] = (r * d).exp() * amps[k][j] + qj * segment(r, taus[k], d)?;
            }
        } else {
            amps[n - 1][j] = match tail(r, taus[n - 1], 1.0, gamma_b) {
                Some(v) => -qj * v,
                None => {
                    let mut gap = gamma_b - r;
                    if gap.norm() < 1e-3 {
                        gap = Complex::new(-1e-3, 0.0);
                    }
                    qj * h(taus[n - 1])? / gap
                }
            };
            for k in (0..n - 1).rev() {
                let d = taus[k + 1] - taus[k];
                // c_k = e^{-rΔ} (c_{k+1} − ∫_0^Δ e^{r(Δ-u)} h du)
                amps[k][j] = (-r * d).exp() * (amps[k + 1][j] - qj * segment(r, taus[k], d)?);
            }
        }
    }
    let mut tr = Trajectory {
        t: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
    };
    for (k, &tau) in taus.iter().enumerate() {
        let s = tau.exp();
        let state: Vec<f64> = (0..dim)
            .map(|i| {
                let w: Complex<f64> = roots
                    .iter()
                    .zip(&amps[k])
                    .map(|(&r, &c)| c * vec_entry(r, i))
                    .sum();
                if i == 0 {
                    w.re
                } else {
                    w.re * s.powi(i as i32)
                }
            })
            .collect();
        tr.t.push(mesh.time(tau).0);
        tr.y.push(state);
    }
    check_finite(&tr)?;
    Ok(tr)
}

/// Default number of moments used by [`el_residual`].
pub const EL_MOMENTS: usize = 12;

/// Resolution of the auxiliary uniform grid used by [`el_residual`].
const EL_NODES: usize = 4000;

/// Euler–Lagrange residual of a candidate for a [`BasicFvp`]:
///
/// ```text
/// ∂L/∂x + D_b^α(∂L/∂(Dx)) − d/dt ∂L/∂ẋ
/// ```
///
/// at the interior points of `grid`. The left derivative of the candidate
/// is exact for polynomial models and a moment expansion otherwise; the
/// right Riemann–Liouville derivative uses the right moment expansion on a
/// fine uniform grid, and `d/dt` uses central differences.
pub fn el_residual(p: &BasicFvp, candidate: &FunctionModel, grid: &[f64]) -> Result<Vec<f64>> {
    el_residual_with(p, candidate, grid, EL_MOMENTS)
}

pub fn el_residual_with(
    p: &BasicFvp,
    candidate: &FunctionModel,
    grid: &[f64],
    big_n: usize,
) -> Result<Vec<f64>> {
    let (a, b, alpha) = (p.a, p.b, p.alpha);
    if let Some(&t) = grid.iter().find(|&&t| !(t > a && t < b)) {
        return Err(Error::Domain(format!(
            "residual point {t} is not interior to ({a}, {b})"
        )));
    }
    let c = first_order_coeffs(alpha, big_n)?;
    let lag = p.lagrangian();
    let l_x = simplify(&diff_expr(lag, Var::X));
    let l_p = simplify(&diff_expr(lag, Var::Xp));
    let l_d = simplify(&diff_expr(lag, Var::Dx));
    let needs_dx = [&l_x, &l_p, &l_d].iter().any(|e| e.depends_on(Var::Dx));

    let h = (b - a) / EL_NODES as f64;
    // nodes a + k h, k = 1..=EL_NODES
    let nodes: Vec<f64> = (1..=EL_NODES)
        .map(|k| if k == EL_NODES { b } else { a + k as f64 * h })
        .collect();
    let dx: Vec<f64> = if !needs_dx {
        vec![0.0; nodes.len()]
    } else if candidate.vanishing_order().is_some() {
        nodes
            .iter()
            .map(|&t| polynomial_reference(candidate, alpha, a, false, false, false, t))
            .collect::<Result<_>>()?
    } else {
        frac_deriv_expansion(
            candidate,
            alpha,
            a,
            Side::Left,
            Family::Rl,
            Method::Moment { n: 1, big_n },
            &nodes,
        )?
        .x
    };
    let xp = |t: f64| -> Result<f64> {
        if candidate.n_max() >= 1 {
            candidate.deriv(1, t)
        } else {
            let e = 1e-6 * (b - a);
            Ok((candidate.eval(t + e)? - candidate.eval(t - e)?) / (2.0 * e))
        }
    };
    let mut vx = Vec::with_capacity(nodes.len());
    let mut vp = Vec::with_capacity(nodes.len());
    let mut vd = Vec::with_capacity(nodes.len());
    for (k, &t) in nodes.iter().enumerate() {
        let x = candidate.eval(t)?;
        let xdot = xp(t)?;
        let env = Env {
            t,
            x,
            xp: xdot,
            dx: dx[k],
            ..Default::default()
        };
        vx.push(l_x.eval(&env)?);
        vp.push(l_p.eval(&env)?);
        vd.push(l_d.eval(&env)?);
    }

    // W_p(t) = ∫_t^b (p−1)(b−τ)^{p−2} g(τ) dτ by the trapezoid rule from b
    let m = nodes.len();
    let mut w = vec![vec![0.0; m]; big_n - 1];
    for (j, wj) in w.iter_mut().enumerate() {
        let pm1 = (j + 1) as f64;
        let f: Vec<f64> = (0..m)
            .map(|k| pm1 * (b - nodes[k]).powi(j as i32) * vd[k])
            .collect();
        for k in (0..m - 1).rev() {
            wj[k] = wj[k + 1] + 0.5 * (nodes[k + 1] - nodes[k]) * (f[k] + f[k + 1]);
        }
    }
    let residual_at = |k: usize| -> f64 {
        let r = b - nodes[k];
        let dg = (vd[k + 1] - vd[k - 1]) / (nodes[k + 1] - nodes[k - 1]);
        let mut right =
            c.scalar_a() * r.powf(-alpha) * vd[k] - c.scalar_b() * r.powf(1.0 - alpha) * dg;
        for (j, wj) in w.iter().enumerate() {
            let pf = (j + 2) as f64;
            right += c.c(j + 2) * r.powf(1.0 - alpha - pf) * wj[k];
        }
        let dlp = (vp[k + 1] - vp[k - 1]) / (nodes[k + 1] - nodes[k - 1]);
        vx[k] + right - dlp
    };
    grid.iter()
        .map(|&t| {
            let pos = (t - a) / h - 1.0;
            let k = (pos.floor() as usize).clamp(1, m - 3);
            let wgt = (pos - k as f64).clamp(0.0, 1.0);
            Ok(residual_at(k) * (1.0 - wgt) + residual_at(k + 1) * wgt)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::direct::{solve_euler_like, BasicFvp};
    use crate::funcmodel::parse_expr;
    use crate::special;

    fn gamma(x: f64) -> f64 {
        special::gamma(x).unwrap()
    }

    fn expr(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    fn example2() -> BasicFvp {
        BasicFvp::parse(0.5, (0.0, 1.0), "Dx - xp^2", 0.0, 1.0).unwrap()
    }

    fn exact2(alpha: f64, t: f64) -> f64 {
        let c = 1.0 / (2.0 * gamma(3.0 - alpha));
        c * (1.0 - (1.0 - t).powf(2.0 - alpha)) + (1.0 - c) * t
    }

    fn exm41(alpha: f64, terminal: Terminal) -> OcProblem {
        let cost = expr(&format!("(t*u - {:?}*x)^2", alpha + 2.0));
        OcProblem::new(alpha, 0.0, 0.0, cost, expr("u + t^2"), (1.0, 1.0), terminal).unwrap()
    }

    fn exm41_x(alpha: f64, t: f64) -> f64 {
        2.0 * t.powf(alpha + 2.0) / gamma(alpha + 3.0)
    }

    /// Trapezoidal L2 distance on the solution nodes.
    fn l2(t: &[f64], x: &[f64], exact: impl Fn(f64) -> f64) -> f64 {
        let e2: Vec<f64> = t
            .iter()
            .zip(x)
            .map(|(&t, &x)| (x - exact(t)).powi(2))
            .collect();
        trapezoid(t, &e2).sqrt()
    }

    fn max_err(t: &[f64], x: &[f64], exact: impl Fn(f64) -> f64) -> f64 {
        t.iter()
            .zip(x)
            .map(|(&t, &x)| (x - exact(t)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn transformed_dimensions() {
        for (n, dim) in [(2, 2), (5, 5)] {
            let tp = transform_fvp(&example2(), n).unwrap();
            assert_eq!(tp.state_dim(), dim);
            assert_eq!(tp.costate_dim(), dim);
            assert_eq!(tp.initial, {
                let mut v = vec![0.0; dim];
                v[0] = 0.0;
                v
            });
        }
        assert!(transform_fvp(&example2(), 1).is_err());
    }

    #[test]
    fn transformed_derivative_matches_expansion() {
        let f = FunctionModel::parse("t^2", 2, 0.0, 1.0).unwrap();
        let grid = [0.1, 0.35, 0.6, 0.95];
        for n in [2, 4, 7] {
            let tp = transform_fvp(&example2(), n).unwrap();
            let reference = frac_deriv_expansion(
                &f,
                0.5,
                0.0,
                Side::Left,
                Family::Rl,
                Method::Moment { n: 1, big_n: n },
                &grid,
            )
            .unwrap();
            for (k, &t) in grid.iter().enumerate() {
                let mut y = vec![t * t];
                for p in 2..=n {
                    let pf = p as f64;
                    y.push((1.0 - pf) * t.powf(pf + 1.0) / (pf + 1.0));
                }
                let env = Env {
                    t,
                    u: 2.0 * t,
                    states: &y,
                    ..Default::default()
                };
                let v = tp.derivative.eval(&env).unwrap();
                assert!(
                    (v - reference.x[k]).abs() < 1e-12,
                    "N={n} t={t}: {v} vs {}",
                    reference.x[k]
                );
            }
        }
    }

    #[test]
    fn closed_form_example2_boundary_identities() {
        for (alpha, n) in [(0.5, 2), (0.3, 5), (0.8, 9)] {
            let cf = closed_form_indirect_example2(alpha, n).unwrap();
            assert_eq!(cf.eval(0.0), 0.0);
            assert!((cf.eval(1.0) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn example2_shooting_matches_closed_form() {
        let tp = transform_fvp(&example2(), 2).unwrap();
        let sol = solve_indirect_bvp(&tp, 400).unwrap();
        let cf = closed_form_indirect_example2(0.5, 2).unwrap();
        let dev = max_err(&sol.t, &sol.x(), |t| cf.eval(t));
        assert!(dev <= 1e-6, "deviation {dev:e}");
        // transversality of the moment costate
        let last = sol.costates.last().unwrap();
        assert!(last[1].abs() <= 1e-8);
    }

    #[test]
    fn example2_errors_decrease_with_n() {
        let mut closed = Vec::new();
        let mut shot = Vec::new();
        for n in [2, 4, 8] {
            let cf = closed_form_indirect_example2(0.5, n).unwrap();
            let t: Vec<f64> = (0..=1000).map(|k| k as f64 / 1000.0).collect();
            let x: Vec<f64> = t.iter().map(|&t| cf.eval(t)).collect();
            closed.push(l2(&t, &x, |t| exact2(0.5, t)));
            let sol = solve_indirect_bvp(&transform_fvp(&example2(), n).unwrap(), 400).unwrap();
            shot.push(l2(&sol.t, &sol.x(), |t| exact2(0.5, t)));
        }
        eprintln!("closed {closed:?} shot {shot:?}");
        assert!(closed.windows(2).all(|w| w[1] < w[0]), "{closed:?}");
        assert!(shot.windows(2).all(|w| w[1] < w[0]), "{shot:?}");
    }

    #[test]
    fn example4_approximates_power() {
        let xb = 1.0 / gamma(1.5);
        let p = BasicFvp::parse(0.5, (0.0, 1.0), "(Dx - 1)^2", 0.0, xb).unwrap();
        let sol = solve_indirect_bvp(&transform_fvp(&p, 2).unwrap(), 400).unwrap();
        let e = l2(&sol.t, &sol.x(), |t| t.sqrt() / gamma(1.5));
        eprintln!("example 4 L2 {e}");
        assert!(e <= 0.05, "{e}");
    }

    #[test]
    fn exm41_improves_with_n_and_is_stationary() {
        let p = exm41(
            0.5,
            Terminal::Fixed {
                t: 1.0,
                x: 2.0 / gamma(3.5),
            },
        );
        let mut errs = Vec::new();
        for n in [2, 3] {
            let tp = transform_oc(&p, n).unwrap();
            let sol = solve_indirect_bvp(&tp, 400).unwrap();
            errs.push(max_err(&sol.t, &sol.x(), |t| exm41_x(0.5, t)));
            for (_, hu) in hamiltonian_diagnostics(&tp, &sol).unwrap() {
                assert!(hu.abs() <= 1e-8, "H_u = {hu:e}");
            }
            let last = sol.costates.last().unwrap();
            assert!(last[1..].iter().all(|l| l.abs() <= 1e-8));
            let ue = sol
                .t
                .iter()
                .zip(&sol.control)
                .filter(|(t, _)| **t >= 0.1)
                .map(|(&t, &u)| (u - 2.0 * t.powf(1.5) / gamma(2.5)).abs())
                .fold(0.0, f64::max);
            eprintln!(
                "exm41 N={n}: x {:e} u {ue:e} cost {:e}",
                errs.last().unwrap(),
                sol.cost
            );
        }
        assert!(errs[1] <= errs[0], "{errs:?}");
    }

    #[test]
    fn free_endpoint_costate_equals_terminal_gradient() {
        let p = OcProblem::new(
            0.5,
            0.0,
            0.0,
            expr("u^2"),
            expr("u"),
            (1.0, 1.0),
            Terminal::FreeState { t: 1.0 },
        )
        .unwrap()
        .with_terminal_cost(expr("(x - 1)^2"));
        let tp = transform_oc(&p, 3).unwrap();
        let sol = solve_indirect_bvp(&tp, 300).unwrap();
        let xt = *sol.x().last().unwrap();
        let lam = sol.costates.last().unwrap();
        assert!((lam[0] - 2.0 * (xt - 1.0)).abs() <= 1e-8);
        assert!(lam[1..].iter().all(|l| l.abs() <= 1e-8));
        assert!(xt > 0.0 && xt < 1.0);
    }

    #[test]
    fn fractional_conditions_route_for_exm41() {
        let p = exm41(
            0.5,
            Terminal::Fixed {
                t: 1.0,
                x: 2.0 / gamma(3.5),
            },
        );
        let opts = IndirectOptions::new(400);
        let fnc = solve_fractional_conditions(&p, 3, &opts).unwrap();
        let e = max_err(&fnc.t, &fnc.x(), |t| exm41_x(0.5, t));
        let lam = fnc.costates.iter().map(|c| c[0].abs()).fold(0.0, f64::max);
        eprintln!("fnc exm41 E_max {e:e}, max |λ| {lam:e}");
        assert!(e <= 0.02, "{e}");
    }

    #[test]
    fn fde_moment_beats_integer_reduction() {
        let c = 2.0 / gamma(2.5);
        let spec = FdeSpec {
            family: FdeFamily::Rl,
            alpha: 0.5,
            a: 0.0,
            b: 1.0,
            r: expr("x"),
            s: expr(&format!("t^2 + {c:?}*t^1.5")),
            xa: 0.0,
            big_n: 7,
            method: FdeMethod::Moment,
        };
        let tr = solve_fde(&spec, 400).unwrap();
        let e_mom = l2(&tr.t, &tr.component(0), |t| t * t);
        let tr = solve_fde(
            &FdeSpec {
                method: FdeMethod::IntegerExpansion,
                ..spec
            },
            400,
        )
        .unwrap();
        let e_int = l2(&tr.t, &tr.component(0), |t| t * t);
        eprintln!("fde ex1 moment {e_mom:e} integer {e_int:e}");
        assert!(e_mom <= 5e-2);
        assert!(e_int > e_mom);
    }

    #[test]
    fn hadamard_fde_approximates_log() {
        let spec = FdeSpec {
            family: FdeFamily::Hadamard,
            alpha: 0.5,
            a: 1.0,
            b: std::f64::consts::E,
            r: expr(&format!("x - sqrt(x)/{:?}", gamma(1.5))),
            s: expr("ln(t)"),
            xa: 0.0,
            big_n: 2,
            method: FdeMethod::Moment,
        };
        let tr = solve_fde(&spec, 400).unwrap();
        let e = l2(&tr.t, &tr.component(0), f64::ln);
        eprintln!("fde1 L2 {e:e}");
        assert!(e <= 0.1);
        assert!(solve_fde(
            &FdeSpec {
                method: FdeMethod::IntegerExpansion,
                ..spec
            },
            10
        )
        .is_err());
    }

    fn fie(n: usize, rhs: &str) -> Trajectory {
        let spec = FieSpec {
            alpha: 0.5,
            a: 0.0,
            b: 1.0,
            rhs: expr(rhs),
            x0: 0.0,
            big_n: n,
            method: FieMethod::Moment,
        };
        solve_fie(&spec, 400).unwrap()
    }

    #[test]
    fn integral_equation_power_solution() {
        let rhs = format!("{:?}*t^4", gamma(4.5) / 24.0);
        let tr = fie(2, &rhs);
        // least-squares fit of x = c t^3.5
        let (mut num, mut den) = (0.0, 0.0);
        for (t, y) in tr.t.iter().zip(&tr.y) {
            let b = t.powf(3.5);
            num += b * y[0];
            den += b * b;
        }
        let c = num / den;
        let e2 = l2(&tr.t, &tr.component(0), |t| t.powf(3.5));
        let e3 = {
            let tr = fie(3, &rhs);
            l2(&tr.t, &tr.component(0), |t| t.powf(3.5))
        };
        eprintln!("fie c {c} L2 N=2 {e2:e} N=3 {e3:e}");
        assert!((c - 1.34).abs() <= 0.02, "{c}");
        assert!(e3 <= e2);
    }

    #[test]
    fn integral_equation_constant_solution() {
        let tr = fie(4, &format!("t^0.5/{:?}", gamma(1.5)));
        let e = max_err(&tr.t, &tr.component(0), |_| 1.0);
        eprintln!("fie const {e:e}");
        assert!(e <= 5e-2);
    }

    #[test]
    fn integral_equation_superposition() {
        // the reduced equation is linear: a sum of powers gives the sum of power solutions
        let k = gamma(4.5) / 24.0;
        let rhs = format!("t^0.5/{:?} + {k:?}*t^4", gamma(1.5));
        let tr = fie(2, &rhs);
        let c = moment_coeffs(0.5, 2, 2, MomentKind::Integral).unwrap();
        let (a0, a1, b2) = (c.a[0], c.a[1], c.b_p(2));
        let c0 = rgamma(1.5) / (a0 + b2);
        let c35 = k / (a0 + 3.5 * a1 + b2 / 4.5);
        let e = max_err(&tr.t, &tr.component(0), |t| c0 + c35 * t.powf(3.5));
        assert!(e <= 1e-6, "{e}");
    }

    #[test]
    fn exm42_free_time() {
        let p = exm41(0.5, Terminal::FreeTime { x: 1.0 });
        let sol = solve_free_time(&p, 2, 400).unwrap();
        let tp = transform_oc(&p, 2).unwrap();
        let diag = hamiltonian_diagnostics(&tp, &sol).unwrap();
        let h_t = diag.last().unwrap().0;
        let lam = sol.costates.last().unwrap();
        eprintln!(
            "exm42 T {} H(T) {h_t:e} λ(T) {:?} cost {:e}",
            sol.t_final, lam, sol.cost
        );
        assert!(sol.t_final > 0.0 && sol.t_final.is_finite());
        assert!(h_t.abs() <= 1e-6);
        assert!(lam[1..].iter().all(|l| l.abs() <= 1e-6));

        let fixed = exm41(
            0.5,
            Terminal::Fixed {
                t: sol.t_final,
                x: 1.0,
            },
        );
        let again = solve_indirect_bvp(&transform_oc(&fixed, 2).unwrap(), 400).unwrap();
        let dev = sol
            .x()
            .iter()
            .zip(again.x())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev <= 1e-6, "{dev:e}");
    }

    #[test]
    fn free_time_condition_detects_wrong_final_time() {
        // min ∫ (1 + u²), ẋ = u, x(0) = 0, x(T) = 1: optimal T = 1
        let p = OcProblem::new(
            0.5,
            0.0,
            0.0,
            expr("1 + u^2"),
            expr("u"),
            (1.0, 0.0),
            Terminal::FreeTime { x: 1.0 },
        )
        .unwrap();
        let sol = solve_free_time(&p, 2, 200).unwrap();
        assert!((sol.t_final - 1.0).abs() <= 1e-6, "{}", sol.t_final);
        let moved = p.clone().with_terminal(Terminal::Fixed {
            t: sol.t_final + 0.1,
            x: 1.0,
        });
        let tp = transform_oc(&moved, 2).unwrap();
        let other = solve_indirect_bvp(&tp, 200).unwrap();
        let h_t = hamiltonian_diagnostics(&tp, &other)
            .unwrap()
            .last()
            .unwrap()
            .0;
        assert!(h_t.abs() > 1e-3, "{h_t}");
    }

    #[test]
    fn euler_lagrange_residual_checks() {
        let grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
        let c = 2.0 / gamma(2.5);
        let p1 =
            BasicFvp::parse(0.5, (0.0, 1.0), &format!("(Dx - {c:?}*t^1.5)^2"), 0.0, 1.0).unwrap();
        let cand = FunctionModel::parse("t^2", 3, 0.0, 1.0).unwrap();
        let r = el_residual(&p1, &cand, &grid).unwrap();
        assert!(r.iter().all(|v| v.abs() <= 1e-8), "{r:?}");
        let pert = FunctionModel::parse("t^2 + 0.1*sin(pi*t)", 3, 0.0, 1.0).unwrap();
        let rp = el_residual(&p1, &pert, &grid).unwrap();
        let m1 = rp.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        eprintln!("ex1 perturbed {m1:e}");
        assert!(m1 >= 1e-7);

        let k = 1.0 / (2.0 * gamma(2.5));
        let exact = format!("{k:?}*(1 - (1 - t)^1.5) + {:?}*t", 1.0 - k);
        let cand = FunctionModel::parse(&exact, 3, 0.0, 1.0).unwrap();
        let r = el_residual(&example2(), &cand, &grid).unwrap();
        let m = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let pert = FunctionModel::parse(&format!("{exact} + 0.1*sin(pi*t)"), 3, 0.0, 1.0).unwrap();
        let rp = el_residual(&example2(), &pert, &grid).unwrap();
        let mp = rp.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        eprintln!("ex2 residual {m:e} perturbed {mp:e}");
        assert!(m <= 0.05);
        assert!(mp >= 10.0 * m);
    }

    #[test]
    fn example2_routes_agree() {
        let p = example2();
        let direct = solve_euler_like(&p, 1000).unwrap();
        let tp = transform_fvp(&p, 8).unwrap();
        let ind = solve_indirect_bvp(&tp, 400).unwrap();
        let t = direct.nodes();
        let xi: Vec<f64> = t
            .iter()
            .map(|&t| {
                if t <= ind.t[0] {
                    0.0
                } else {
                    ind.state_at(0, t)
                }
            })
            .collect();
        let d_exact = l2(&t, &direct.x, |t| exact2(0.5, t));
        let i_exact = l2(&t, &xi, |t| exact2(0.5, t));
        let d_i: Vec<f64> = direct
            .x
            .iter()
            .zip(&xi)
            .map(|(a, b)| (a - b).powi(2))
            .collect();
        let d_i = trapezoid(&t, &d_i).sqrt();
        eprintln!("routes: direct {d_exact:e} indirect {i_exact:e} mutual {d_i:e}");
        assert!(d_exact <= 0.02 && i_exact <= 0.02 && d_i <= 0.02);
    }

    #[test]
    fn near_integer_order_matches_classical_problem() {
        let p = exm41(
            0.999,
            Terminal::Fixed {
                t: 1.0,
                x: 2.0 / gamma(2.999 + 1.0),
            },
        );
        let sol = solve_indirect_bvp(&transform_oc(&p, 2).unwrap(), 400).unwrap();
        let classical = OcProblem::new(
            0.5,
            0.0,
            0.0,
            expr("(t*u - 3*x)^2"),
            expr("u + t^2"),
            (2.0, 0.0),
            Terminal::Fixed {
                t: 1.0,
                x: 1.0 / 3.0,
            },
        )
        .unwrap();
        let cl = solve_indirect_bvp(&transform_oc(&classical, 2).unwrap(), 400).unwrap();
        let xs: Vec<f64> = sol.t.iter().map(|&t| cl.state_at(0, t)).collect();
        let diff = l2(&sol.t, &sol.x(), |t| cl.state_at(0, t));
        let norm = l2(&sol.t, &xs, |_| 0.0);
        let cl_exact = max_err(&cl.t, &cl.x(), |t| t.powi(3) / 3.0);
        eprintln!(
            "α→1: relative {:e}, classical vs t³/3 {cl_exact:e}",
            diff / norm
        );
        assert!(diff <= 0.05 * norm);
        assert!(cl_exact <= 1e-6);
    }
}
