//! Problem registry with analytic solutions, error metrics and suites that
//! regenerate the reference tables as CSV or markdown.
//!
//! ```
//! use fracvar::bench::{lookup, solve_default, error_metrics};
//! let p = lookup("direct-example-1").unwrap();
//! let curve = solve_default(&p).unwrap();
//! let m = error_metrics(&curve.t, &curve.x, p.exact.as_ref().unwrap()).unwrap();
//! assert!(m.e_max < 0.02);
//! ```

use std::fmt::{self, Write as _};
use std::time::Instant;

use rayon::prelude::*;

use crate::approx::{moment_coeffs, MomentKind};
use crate::direct::{
    first_variation_solve, isoperimetric_solve, solve_euler_like, BasicFvp, IsoperimetricFvp,
};
use crate::funcmodel::{parse_expr, parse_expr_with, Expr, FunctionModel, ParseOptions};
use crate::indirect::{
    solve_fde, solve_fie, solve_fractional_conditions, solve_free_time, solve_indirect_bvp,
    transform_fvp, transform_oc, FdeFamily, FdeMethod, FdeSpec, FieMethod, FieSpec,
    IndirectOptions, OcProblem, Terminal,
};
use crate::numerics::trapezoid;
use crate::special::gamma;
use crate::{Error, Result};

/// What a registry entry asks to solve.
#[derive(Clone, Debug)]
pub enum Payload {
    Basic(BasicFvp),
    Isoperimetric(IsoperimetricFvp),
    OptimalControl(OcProblem),
    Fde(FdeSpec),
    Fie(FieSpec),
}

/// Solver routes available to the suites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    EulerLike,
    FirstVariation,
    Isoperimetric,
    /// Moment transformation followed by the Hamiltonian boundary value problem.
    Indirect,
    FreeTime,
    /// Approximated fractional necessary conditions.
    FractionalConditions,
    Fde,
    Fie,
}

impl SolveMethod {
    pub fn name(self) -> &'static str {
        match self {
            SolveMethod::EulerLike => "euler-like",
            SolveMethod::FirstVariation => "first-variation",
            SolveMethod::Isoperimetric => "isoperimetric",
            SolveMethod::Indirect => "indirect",
            SolveMethod::FreeTime => "free-time",
            SolveMethod::FractionalConditions => "fractional-conditions",
            SolveMethod::Fde => "fde",
            SolveMethod::Fie => "fie",
        }
    }
}

impl fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Discretization parameters; each method reads the ones it needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Params {
    /// Subintervals of the direct methods.
    pub n: usize,
    /// Expansion order.
    pub big_n: usize,
    /// Integration steps of the indirect, FDE and FIE solvers.
    pub steps: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            n: 30,
            big_n: 2,
            steps: 400,
        }
    }
}

impl Params {
    fn describe(&self, method: SolveMethod) -> String {
        match method {
            SolveMethod::EulerLike | SolveMethod::FirstVariation | SolveMethod::Isoperimetric => {
                format!("n={}", self.n)
            }
            _ => format!("N={};steps={}", self.big_n, self.steps),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkProblem {
    pub id: &'static str,
    pub payload: Payload,
    pub exact: Option<FunctionModel>,
    /// Where the reference results live (table or figure).
    pub anchor: &'static str,
    pub method: SolveMethod,
    pub params: Params,
}

/// A numerical solution sampled on its own nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorMetrics {
    pub e_l2: f64,
    pub e_max: f64,
}

/// `E_L2 = (∫ (x − x̃)²)^{1/2}` by the trapezoid rule on `t` and
/// `E_max = max_i |x(t_i) − x_i|`.
pub fn error_metrics(t: &[f64], numeric: &[f64], exact: &FunctionModel) -> Result<ErrorMetrics> {
    if t.len() != numeric.len() {
        return Err(Error::Grid(format!(
            "{} nodes but {} values",
            t.len(),
            numeric.len()
        )));
    }
    let exact: Vec<f64> = t.iter().map(|&s| exact.eval(s)).collect::<Result<_>>()?;
    metrics_against(t, numeric, &exact)
}

/// [`error_metrics`] against reference values on the same nodes.
pub fn metrics_against(t: &[f64], numeric: &[f64], reference: &[f64]) -> Result<ErrorMetrics> {
    if t.len() != numeric.len() || t.len() != reference.len() {
        return Err(Error::Grid(format!(
            "grids do not align: {} nodes, {} values, {} reference values",
            t.len(),
            numeric.len(),
            reference.len()
        )));
    }
    let d: Vec<f64> = numeric.iter().zip(reference).map(|(x, y)| x - y).collect();
    let sq: Vec<f64> = d.iter().map(|v| v * v).collect();
    let e_l2 = if t.len() > 1 {
        trapezoid(t, &sq).sqrt()
    } else {
        0.0
    };
    let e_max = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(ErrorMetrics { e_l2, e_max })
}

fn g(x: f64) -> f64 {
    gamma(x).expect("gamma at a fixed regular argument")
}

fn model(src: &str, a: f64, b: f64) -> FunctionModel {
    FunctionModel::parse(src, 0, a, b).expect("registry expressions parse")
}

fn ex(src: &str) -> Expr {
    parse_expr(src).expect("registry expressions parse")
}

fn indexed(src: &str) -> Expr {
    parse_expr_with(src, ParseOptions { indexed: true }).expect("registry expressions parse")
}

fn basic(lagrangian: &str, xb: f64) -> BasicFvp {
    BasicFvp::parse(0.5, (0.0, 1.0), lagrangian, 0.0, xb).expect("registry problems are well posed")
}

fn quartic_lagrangian() -> String {
    let c1 = 16.0 * g(6.0) / g(5.5);
    let c2 = 20.0 * g(4.0) / g(3.5);
    let c3 = 5.0 / g(1.5);
    format!("(Dx - {c1:?}*t^4.5 + {c2:?}*t^2.5 - {c3:?}*t^0.5)^4")
}

fn exm41(terminal: Terminal) -> OcProblem {
    OcProblem::new(
        0.5,
        0.0,
        0.0,
        ex("(t*u - 2.5*x)^2"),
        ex("u + t^2"),
        (1.0, 1.0),
        terminal,
    )
    .expect("registry problems are well posed")
}

/// Caputo problem with an indefinite-integral term `z`, written as a
/// control problem `ᶜD^α x = u` with `ż = (x − target)²`.
fn indefinite_integral(cost: &str, target: &str, xb: f64) -> OcProblem {
    OcProblem::new(
        0.5,
        0.0,
        0.0,
        indexed(cost),
        ex("u"),
        (0.0, 1.0),
        Terminal::Fixed { t: 1.0, x: xb },
    )
    .expect("registry problems are well posed")
    .with_aux(vec![ex(&format!("(x - {target})^2"))])
}

fn entry(
    id: &'static str,
    payload: Payload,
    exact: Option<FunctionModel>,
    anchor: &'static str,
    method: SolveMethod,
    params: Params,
) -> BenchmarkProblem {
    BenchmarkProblem {
        id,
        payload,
        exact,
        anchor,
        method,
        params,
    }
}

/// Every worked example, in a stable order.
pub fn registry() -> Vec<BenchmarkProblem> {
    let d = Params::default();
    let unit = |src: &str| Some(model(src, 0.0, 1.0));
    let c1 = 2.0 / g(2.5);
    let c2 = 1.0 / (2.0 * g(2.5));
    let power = 1.0 / g(1.5);
    let iso_xb = 16.0 / (15.0 * g(0.5));
    let fie_k = g(4.5) / 24.0;

    vec![
        entry(
            "direct-example-1",
            Payload::Basic(basic(&format!("(Dx - {c1:?}*t^1.5)^2"), 1.0)),
            unit("t^2"),
            "mesh-size error table, example 1",
            SolveMethod::EulerLike,
            d,
        ),
        entry(
            "direct-example-2",
            Payload::Basic(basic("Dx - xp^2", 1.0)),
            unit(&format!("{c2:?}*(1 - (1 - t)^1.5) + {:?}*t", 1.0 - c2)),
            "mesh-size error table, example 2",
            SolveMethod::EulerLike,
            d,
        ),
        entry(
            "direct-example-3",
            Payload::Basic(basic(&quartic_lagrangian(), 1.0)),
            unit("16*t^5 - 20*t^3 + 5*t"),
            "mesh-size error table, example 3",
            SolveMethod::EulerLike,
            Params { n: 20, ..d },
        ),
        entry(
            "fv-ex1",
            Payload::Basic(basic(&format!("(Dx - {c1:?}*t^1.5)^2"), 1.0)),
            unit("t^2"),
            "first-variation figure, quadratic functional",
            SolveMethod::FirstVariation,
            d,
        ),
        entry(
            "fv-ex2",
            Payload::Basic(basic(&quartic_lagrangian(), 1.0)),
            unit("16*t^5 - 20*t^3 + 5*t"),
            "first-variation figure, quartic functional",
            SolveMethod::FirstVariation,
            d,
        ),
        entry(
            "iso-ex3",
            Payload::Isoperimetric(
                IsoperimetricFvp::new(basic("t^4 + Dx^2", iso_xb), ex("t^2*Dx"), 0.2)
                    .expect("registry problems are well posed"),
            ),
            unit(&format!("{iso_xb:?}*t^2.5")),
            "isoperimetric figure",
            SolveMethod::Isoperimetric,
            d,
        ),
        entry(
            "indirect-example-2",
            Payload::Basic(basic("Dx - xp^2", 1.0)),
            unit(&format!("{c2:?}*(1 - (1 - t)^1.5) + {:?}*t", 1.0 - c2)),
            "transformed-problem figure, closed-form solution",
            SolveMethod::Indirect,
            d,
        ),
        entry(
            "indirect-example-4",
            Payload::Basic(basic("(Dx - 1)^2", power)),
            unit(&format!("{power:?}*t^0.5")),
            "transformed-problem figure, non-smooth minimizer",
            SolveMethod::Indirect,
            d,
        ),
        entry(
            "oc-exm41",
            Payload::OptimalControl(exm41(Terminal::Fixed {
                t: 1.0,
                x: 2.0 / g(3.5),
            })),
            unit(&format!("{:?}*t^2.5", 2.0 / g(3.5))),
            "fixed final time figure",
            SolveMethod::Indirect,
            Params { big_n: 3, ..d },
        ),
        entry(
            "oc-exm42",
            Payload::OptimalControl(exm41(Terminal::FreeTime { x: 2.0 / g(3.5) })),
            unit(&format!("{:?}*t^2.5", 2.0 / g(3.5))),
            "free final time figure",
            SolveMethod::FreeTime,
            d,
        ),
        entry(
            "fde-ex1",
            Payload::Fde(FdeSpec {
                family: FdeFamily::Rl,
                alpha: 0.5,
                a: 0.0,
                b: 1.0,
                r: ex("x"),
                s: ex(&format!("t^2 + {c1:?}*t^1.5")),
                xa: 0.0,
                big_n: 7,
                method: FdeMethod::Moment,
            }),
            unit("t^2"),
            "fractional differential equation figure",
            SolveMethod::Fde,
            Params { big_n: 7, ..d },
        ),
        entry(
            "fde-hadamard-fde1",
            Payload::Fde(FdeSpec {
                family: FdeFamily::Hadamard,
                alpha: 0.5,
                a: 1.0,
                b: std::f64::consts::E,
                r: ex(&format!("x - sqrt(x)/{:?}", g(1.5))),
                s: ex("ln(t)"),
                xa: 0.0,
                big_n: 2,
                method: FdeMethod::Moment,
            }),
            Some(model("ln(t)", 1.0, std::f64::consts::E)),
            "Hadamard differential equation figure",
            SolveMethod::Fde,
            d,
        ),
        entry(
            "fie-example-1",
            Payload::Fie(FieSpec {
                alpha: 0.5,
                a: 0.0,
                b: 1.0,
                rhs: ex(&format!("{fie_k:?}*t^4")),
                x0: 0.0,
                big_n: 2,
                method: FieMethod::Moment,
            }),
            unit("t^3.5"),
            "fractional integral equation figure",
            SolveMethod::Fie,
            d,
        ),
        entry(
            "indint-example-bra",
            Payload::OptimalControl(indefinite_integral(
                &format!("(u - {:?}*t)^2 + s1", g(2.5)),
                "t^1.5",
                1.0,
            )),
            unit("t^1.5"),
            "indefinite-integral figure, smooth minimizer",
            SolveMethod::Indirect,
            d,
        ),
        entry(
            "indint-example-1",
            Payload::OptimalControl(indefinite_integral(
                "(u - 1)^2 + s1",
                &format!("{power:?}*t^0.5"),
                power,
            )),
            unit(&format!("{power:?}*t^0.5")),
            "indefinite-integral figure, non-Lipschitz minimizer",
            SolveMethod::Indirect,
            d,
        ),
    ]
}

pub fn lookup(id: &str) -> Result<BenchmarkProblem> {
    registry()
        .into_iter()
        .find(|p| p.id == id)
        .ok_or_else(|| Error::NotFound(format!("no registry problem with id `{id}`")))
}

fn unsupported(id: &str, method: SolveMethod) -> Error {
    Error::Unsupported(format!("method {method} does not apply to `{id}`"))
}

/// Solves a registry problem with the given route.
pub fn solve(p: &BenchmarkProblem, method: SolveMethod, params: &Params) -> Result<Curve> {
    let direct = |s: crate::direct::DiscreteSolution| Curve {
        t: s.nodes(),
        x: s.x,
    };
    let indirect = |s: crate::indirect::IndirectSolution| Curve { x: s.x(), t: s.t };
    let traj = |tr: crate::numerics::Trajectory| Curve {
        x: tr.component(0),
        t: tr.t,
    };
    match (&p.payload, method) {
        (Payload::Basic(b), SolveMethod::EulerLike) => Ok(direct(solve_euler_like(b, params.n)?)),
        (Payload::Basic(b), SolveMethod::FirstVariation) => {
            Ok(direct(first_variation_solve(b, params.n)?))
        }
        (Payload::Basic(b), SolveMethod::Indirect) => Ok(indirect(solve_indirect_bvp(
            &transform_fvp(b, params.big_n)?,
            params.steps,
        )?)),
        (Payload::Isoperimetric(q), SolveMethod::Isoperimetric) => {
            Ok(direct(isoperimetric_solve(q, params.n)?.0))
        }
        (Payload::OptimalControl(o), SolveMethod::Indirect) => Ok(indirect(solve_indirect_bvp(
            &transform_oc(o, params.big_n)?,
            params.steps,
        )?)),
        (Payload::OptimalControl(o), SolveMethod::FreeTime) => {
            Ok(indirect(solve_free_time(o, params.big_n, params.steps)?))
        }
        (Payload::OptimalControl(o), SolveMethod::FractionalConditions) => {
            let mut opts = IndirectOptions::new(params.steps);
            opts.t_guess = o.a + 1.0;
            Ok(indirect(solve_fractional_conditions(
                o,
                params.big_n,
                &opts,
            )?))
        }
        (Payload::Fde(s), SolveMethod::Fde) => Ok(traj(solve_fde(
            &FdeSpec {
                big_n: params.big_n,
                ..s.clone()
            },
            params.steps,
        )?)),
        (Payload::Fie(s), SolveMethod::Fie) => Ok(traj(solve_fie(
            &FieSpec {
                big_n: params.big_n,
                ..s.clone()
            },
            params.steps,
        )?)),
        _ => Err(unsupported(p.id, method)),
    }
}

/// [`solve`] with the entry's own method and parameters.
pub fn solve_default(p: &BenchmarkProblem) -> Result<Curve> {
    solve(p, p.method, &p.params)
}

/// One requested run of a suite.
#[derive(Clone, Debug)]
pub struct SuiteItem {
    pub id: String,
    pub method: SolveMethod,
    pub params: Params,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub id: String,
    pub method: String,
    pub params: String,
    /// `None` when the run failed or no reference is known.
    pub metrics: Option<ErrorMetrics>,
    pub wall_ms: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

/// Suite switches.
#[derive(Clone, Copy, Debug, Default)]
pub struct SuiteOptions {
    /// Record wall times; when off the column is written as 0 and the CSV
    /// is reproducible byte for byte.
    pub timing: bool,
    /// Run rows on the rayon pool.
    pub parallel: bool,
}

fn run_item(item: &SuiteItem, timing: bool) -> BenchRow {
    let start = Instant::now();
    let outcome = lookup(&item.id).and_then(|p| {
        let curve = solve(&p, item.method, &item.params)?;
        p.exact
            .as_ref()
            .map(|e| error_metrics(&curve.t, &curve.x, e))
            .transpose()
    });
    let wall_ms = if timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let (metrics, error) = match outcome {
        Ok(m) => (m, None),
        Err(e) => (None, Some(e.to_string())),
    };
    BenchRow {
        id: item.id.clone(),
        method: item.method.name().to_string(),
        params: item.params.describe(item.method),
        metrics,
        wall_ms,
        error,
    }
}

/// Runs every item; failures are recorded in their row and the suite
/// continues. Rows keep the order of `items`.
pub fn run_suite(items: &[SuiteItem], opts: SuiteOptions) -> BenchReport {
    let rows = if opts.parallel {
        items
            .par_iter()
            .map(|it| run_item(it, opts.timing))
            .collect()
    } else {
        items.iter().map(|it| run_item(it, opts.timing)).collect()
    };
    BenchReport { rows }
}

/// Examples 1–3 of the direct method at the mesh sizes of the error table.
pub fn direct_suite() -> Vec<SuiteItem> {
    let mut items = Vec::new();
    for (id, sizes) in [
        ("direct-example-1", [5, 10, 30]),
        ("direct-example-2", [5, 10, 30]),
        ("direct-example-3", [5, 20, 90]),
    ] {
        for n in sizes {
            items.push(SuiteItem {
                id: id.into(),
                method: SolveMethod::EulerLike,
                params: Params {
                    n,
                    ..Params::default()
                },
            });
        }
    }
    items
}

/// Every registry entry with its default route.
pub fn registry_suite() -> Vec<SuiteItem> {
    registry()
        .into_iter()
        .map(|p| SuiteItem {
            id: p.id.into(),
            method: p.method,
            params: p.params,
        })
        .collect()
}

/// Orders of the reference table of `B(α, N)`.
pub const B_TABLE_ORDERS: [usize; 7] = [4, 7, 15, 30, 70, 120, 170];

/// Reference values of `B(α, N)` (four decimals), one row per `α`.
pub const B_TABLE: [(f64, [f64; 7]); 6] = [
    (
        0.1,
        [0.0310, 0.0188, 0.0095, 0.0051, 0.0024, 0.0015, 0.0011],
    ),
    (
        0.3,
        [0.1357, 0.0928, 0.0549, 0.0339, 0.0188, 0.0129, 0.0101],
    ),
    (
        0.5,
        [0.3085, 0.2364, 0.1630, 0.1157, 0.0760, 0.0581, 0.0488],
    ),
    (
        0.7,
        [0.5519, 0.4717, 0.3783, 0.3083, 0.2396, 0.2040, 0.1838],
    ),
    (
        0.9,
        [0.8470, 0.8046, 0.7481, 0.6990, 0.6428, 0.6092, 0.5884],
    ),
    (
        0.99,
        [0.9849, 0.9799, 0.9728, 0.9662, 0.9582, 0.9531, 0.9498],
    ),
];

/// Recomputes the `B(α, N)` table. Each row compares the computed value
/// (listed in `params`) with the tabulated one; both metrics are the
/// absolute difference.
pub fn operator_suite(opts: SuiteOptions) -> BenchReport {
    let mut rows = Vec::new();
    for (alpha, values) in B_TABLE {
        for (&n, &reference) in B_TABLE_ORDERS.iter().zip(&values) {
            let start = Instant::now();
            let computed = moment_coeffs(alpha, 1, n, MomentKind::Derivative).map(|c| c.scalar_b());
            let wall_ms = if opts.timing {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            let (params, metrics, error) = match computed {
                Ok(b) => {
                    let d = (b - reference).abs();
                    (
                        format!("alpha={alpha};N={n};B={b:.6}"),
                        Some(ErrorMetrics { e_l2: d, e_max: d }),
                        None,
                    )
                }
                Err(e) => (format!("alpha={alpha};N={n}"), None, Some(e.to_string())),
            };
            rows.push(BenchRow {
                id: "b-table".into(),
                method: "moment-coefficients".into(),
                params,
                metrics,
                wall_ms,
                error,
            });
        }
    }
    BenchReport { rows }
}

/// Suite names understood by [`named_suite`].
pub const SUITES: [&str; 3] = ["direct", "operator", "registry"];

pub fn named_suite(name: &str, opts: SuiteOptions) -> Result<BenchReport> {
    match name {
        "direct" => Ok(run_suite(&direct_suite(), opts)),
        "operator" => Ok(operator_suite(opts)),
        "registry" => Ok(run_suite(&registry_suite(), opts)),
        other => Err(Error::NotFound(format!(
            "unknown suite `{other}` (expected one of {})",
            SUITES.join(", ")
        ))),
    }
}

fn num_field(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6e}")).unwrap_or_default()
}

impl BenchReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// CSV with header `id,method,params,E_L2,E_max,wall_ms`; metrics of
    /// failed rows are empty.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let write = |w: &mut csv::Writer<Vec<u8>>| -> csv::Result<()> {
            w.write_record(["id", "method", "params", "E_L2", "E_max", "wall_ms"])?;
            for r in &self.rows {
                w.write_record([
                    r.id.clone(),
                    r.method.clone(),
                    r.params.clone(),
                    num_field(r.metrics.map(|m| m.e_l2)),
                    num_field(r.metrics.map(|m| m.e_max)),
                    format!("{:.3}", r.wall_ms),
                ])?;
            }
            Ok(())
        };
        write(&mut w).expect("writing to memory cannot fail");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from(
            "| id | method | params | E_L2 | E_max | wall_ms |\n|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            let (l2, mx) = match (r.metrics, &r.error) {
                (Some(m), _) => (format!("{:.4e}", m.e_l2), format!("{:.4e}", m.e_max)),
                (None, Some(e)) => (format!("failed: {e}"), String::new()),
                (None, None) => ("n/a".into(), "n/a".into()),
            };
            let _ = writeln!(
                s,
                "| {} | {} | {} | {l2} | {mx} | {:.3} |",
                r.id, r.method, r.params, r.wall_ms
            );
        }
        s
    }
}
