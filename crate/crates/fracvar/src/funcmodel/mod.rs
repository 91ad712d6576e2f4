//! Test functions: parsed expressions with symbolic derivatives, tabular
//! samples, and closed-form fractional operators used as oracles.
//!
//! The expression grammar, shared by the library, the CLI flags and JSON
//! problem files:
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := atom ("^" unary)?            (right-associative)
//! atom    := number | "pi" | variable | func "(" expr ")" | "(" expr ")"
//! func    := "exp" | "ln" | "sin" | "cos" | "sqrt"
//! variable:= "t" | "x" | "xp" | "Dx" | "u"
//! number  := digits ["." digits] [("e" | "E") ["+" | "-"] digits]
//! ```

mod expr;
mod reference;
mod symbolic;

use std::fmt;
use std::sync::Arc;

pub use expr::{parse_expr, parse_expr_with, Env, Expr, Func, ParseOptions, Var};
pub use reference::{
    decompose_probes, polynomial_reference, reference_for_expr, reference_frac_op, Probe, RefFamily,
};
pub use symbolic::{diff_expr, diff_n, simplify};

use crate::{Error, Result};

/// Highest derivative order probed when testing whether an expression is a
/// polynomial in `t`.
pub const POLY_PROBE_ORDER: usize = 20;

type DerivFn = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    Expr { derivs: Vec<Expr> },
    Closure(DerivFn),
}

/// A function of `t` on `[a, b]` together with its derivatives up to
/// `n_max`.
#[derive(Clone)]
pub struct FunctionModel {
    repr: Repr,
    n_max: usize,
    a: f64,
    b: f64,
}

impl fmt::Debug for FunctionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("FunctionModel");
        match &self.repr {
            Repr::Expr { derivs } => d.field("expr", &derivs[0].to_string()),
            Repr::Closure(_) => d.field("expr", &"<closure>"),
        };
        d.field("n_max", &self.n_max)
            .field("domain", &(self.a, self.b))
            .finish()
    }
}

impl FunctionModel {
    /// Builds a model from an expression in `t`, differentiating it
    /// symbolically `n_max` times.
    pub fn from_expr(e: &Expr, n_max: usize, a: f64, b: f64) -> Result<Self> {
        if let Some(v) = e.variables().into_iter().find(|v| *v != Var::T) {
            return Err(Error::Domain(format!(
                "a function model may only depend on t, found {v:?} in `{e}`"
            )));
        }
        check_domain(a, b)?;
        let mut derivs = vec![simplify(e)];
        for k in 1..=n_max {
            let next = diff_expr(&derivs[k - 1], Var::T);
            derivs.push(next);
        }
        Ok(FunctionModel {
            repr: Repr::Expr { derivs },
            n_max,
            a,
            b,
        })
    }

    pub fn parse(src: &str, n_max: usize, a: f64, b: f64) -> Result<Self> {
        FunctionModel::from_expr(&parse_expr(src)?, n_max, a, b)
    }

    /// Builds a model from a closure `(k, t) ↦ x^(k)(t)`.
    pub fn from_fn<F>(f: F, n_max: usize, a: f64, b: f64) -> Result<Self>
    where
        F: Fn(usize, f64) -> f64 + Send + Sync + 'static,
    {
        check_domain(a, b)?;
        Ok(FunctionModel {
            repr: Repr::Closure(Arc::new(f)),
            n_max,
            a,
            b,
        })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// The underlying expression, for expression-backed models.
    pub fn expr(&self) -> Option<&Expr> {
        match &self.repr {
            Repr::Expr { derivs } => Some(&derivs[0]),
            Repr::Closure(_) => None,
        }
    }

    /// Same function with derivatives available up to `n_max`.
    pub fn with_order(&self, n_max: usize) -> Result<Self> {
        match &self.repr {
            Repr::Expr { derivs } => FunctionModel::from_expr(&derivs[0], n_max, self.a, self.b),
            Repr::Closure(f) => Ok(FunctionModel {
                repr: Repr::Closure(f.clone()),
                n_max,
                a: self.a,
                b: self.b,
            }),
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        self.deriv(0, t)
    }

    pub fn deriv(&self, k: usize, t: f64) -> Result<f64> {
        if k > self.n_max {
            return Err(Error::InsufficientOrder {
                needed: k,
                available: self.n_max,
            });
        }
        match &self.repr {
            Repr::Expr { derivs } => derivs[k].eval_t(t),
            Repr::Closure(f) => {
                let v = f(k, t);
                if v.is_nan() {
                    Err(Error::Evaluation(format!(
                        "derivative {k} undefined at t = {t}"
                    )))
                } else {
                    Ok(v)
                }
            }
        }
    }

    /// Smallest `k ≤ 20` whose k-th derivative is identically zero, i.e.
    /// the degree plus one of a polynomial expression. `None` for closures
    /// and non-polynomial expressions.
    pub fn vanishing_order(&self) -> Option<usize> {
        let Repr::Expr { derivs } = &self.repr else {
            return None;
        };
        let mut d = derivs[0].clone();
        for k in 0..=POLY_PROBE_ORDER {
            if d == Expr::Num(0.0) {
                return Some(k);
            }
            d = if k < self.n_max {
                derivs[k + 1].clone()
            } else {
                diff_expr(&d, Var::T)
            };
        }
        None
    }

    /// Samples on `n + 1` uniform nodes of the model's domain.
    pub fn sample(&self, n: usize) -> Result<TabularFunction> {
        TabularFunction::from_fn(self.a, self.b, n, |t| self.eval(t))
    }
}

fn check_domain(a: f64, b: f64) -> Result<()> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!("invalid interval [{a}, {b}]")));
    }
    Ok(())
}

/// Values at arbitrary (strictly increasing) nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
}

impl Samples {
    pub fn new(t: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        if t.len() != x.len() {
            return Err(Error::Grid(format!(
                "{} nodes but {} values",
                t.len(),
                x.len()
            )));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Grid("nodes must be strictly increasing".into()));
        }
        Ok(Samples { t, x })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Samples on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularFunction {
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl TabularFunction {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Grid("tabular data needs at least two nodes".into()));
        }
        if nodes.len() != values.len() {
            return Err(Error::Grid(format!(
                "{} nodes but {} values",
                nodes.len(),
                values.len()
            )));
        }
        let h = (nodes[nodes.len() - 1] - nodes[0]) / (nodes.len() - 1) as f64;
        if !(h > 0.0) {
            return Err(Error::Grid("nodes must be strictly increasing".into()));
        }
        for (i, w) in nodes.windows(2).enumerate() {
            let hi = w[1] - w[0];
            // node rounding contributes a few ulps of |t| on top of the relative tolerance
            let tol = 1e-12 * h + 8.0 * f64::EPSILON * w[0].abs().max(w[1].abs());
            if (hi - h).abs() > tol {
                return Err(Error::Grid(format!(
                    "non-uniform spacing at node {i}: {hi} vs {h}"
                )));
            }
        }
        Ok(TabularFunction { nodes, values })
    }

    /// Samples `f` at `t_i = a + i(b−a)/n`, `i = 0..=n`.
    pub fn from_fn<F>(a: f64, b: f64, n: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        if n < 1 {
            return Err(Error::Grid("tabular data needs at least two nodes".into()));
        }
        let nodes = uniform_nodes(a, b, n);
        let values = nodes.iter().map(|&t| f(t)).collect::<Result<Vec<_>>>()?;
        TabularFunction::new(nodes, values)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn h(&self) -> f64 {
        (self.nodes[self.len() - 1] - self.nodes[0]) / (self.len() - 1) as f64
    }

    pub fn to_samples(&self) -> Samples {
        Samples {
            t: self.nodes.clone(),
            x: self.values.clone(),
        }
    }
}

/// `n + 1` uniform nodes on `[a, b]` with exact endpoints.
pub fn uniform_nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / n as f64;
    (0..=n)
        .map(|i| if i == n { b } else { a + i as f64 * h })
        .collect()
}

/// First derivative of tabular data: centered differences inside, one-sided
/// second-order stencils at both ends.
pub fn tabular_first_derivative(f: &TabularFunction) -> Result<TabularFunction> {
    let n = f.len();
    if n < 3 {
        return Err(Error::Grid(format!(
            "first derivative needs at least 3 nodes, got {n}"
        )));
    }
    let h = f.h();
    let x = f.values();
    let mut d = Vec::with_capacity(n);
    d.push((-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * h));
    for i in 1..n - 1 {
        d.push((x[i + 1] - x[i - 1]) / (2.0 * h));
    }
    d.push((3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * h));
    Ok(TabularFunction {
        nodes: f.nodes.clone(),
        values: d,
    })
}
