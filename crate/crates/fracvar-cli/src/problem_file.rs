//! JSON problem files.
//!
//! ```json
//! { "kind": "basic", "alpha": 0.5, "interval": [0, 1],
//!   "lagrangian": "(Dx - 1.5045*t^1.5)^2",
//!   "boundary": { "xa": 0, "xb": 1 }, "exact": "t^2" }
//! ```
//!
//! Unknown keys are rejected everywhere.

use serde::Deserialize;

use fracvar::bench::{BenchmarkProblem, Params, Payload, SolveMethod};
use fracvar::direct::{BasicFvp, IsoperimetricFvp};
use fracvar::funcmodel::{parse_expr, parse_expr_with, Expr, FunctionModel, ParseOptions};
use fracvar::indirect::{FdeFamily, FdeMethod, FdeSpec, FieMethod, FieSpec, OcProblem, Terminal};

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemFile {
    Basic {
        alpha: f64,
        interval: [f64; 2],
        lagrangian: String,
        boundary: Boundary,
        #[serde(default)]
        exact: Option<String>,
    },
    Isoperimetric {
        alpha: f64,
        interval: [f64; 2],
        lagrangian: String,
        boundary: Boundary,
        constraint: Constraint,
        #[serde(default)]
        exact: Option<String>,
    },
    OptimalControl {
        alpha: f64,
        /// `[a, T]`; `T` is only a default for the terminal block.
        interval: [f64; 2],
        /// Running cost in `t, x, u` and `s<k>` for auxiliary states.
        lagrangian: String,
        boundary: Boundary,
        dynamics: Dynamics,
        terminal: TerminalBlock,
        #[serde(default)]
        control: Option<String>,
        #[serde(rename = "N", default)]
        big_n: Option<usize>,
        #[serde(default)]
        exact: Option<String>,
    },
    Fde {
        #[serde(default)]
        family: FamilyName,
        alpha: f64,
        interval: [f64; 2],
        /// `r(t, x)` in `D^α x + r = s`.
        r: String,
        s: String,
        boundary: Boundary,
        #[serde(rename = "N", default)]
        big_n: Option<usize>,
        #[serde(default)]
        method: FdeMethodName,
        #[serde(default)]
        exact: Option<String>,
    },
    Fie {
        alpha: f64,
        interval: [f64; 2],
        rhs: String,
        #[serde(default)]
        x0: f64,
        #[serde(rename = "N", default)]
        big_n: Option<usize>,
        #[serde(default)]
        method: FieMethodName,
        #[serde(default)]
        exact: Option<String>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boundary {
    pub xa: f64,
    #[serde(default)]
    pub xb: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraint {
    pub g: String,
    #[serde(rename = "K")]
    pub k: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    /// Right-hand side `f(t, x, u)`.
    pub f: String,
    #[serde(default = "one")]
    pub m_int: f64,
    #[serde(default = "one")]
    pub m_frac: f64,
    /// Integrands of auxiliary states `s1, s2, …`.
    #[serde(default)]
    pub aux: Vec<String>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalBlock {
    Fixed {
        #[serde(default)]
        t: Option<f64>,
        x: f64,
    },
    FreeState {
        #[serde(default)]
        t: Option<f64>,
        #[serde(default)]
        phi: Option<String>,
    },
    FreeTime {
        x: f64,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    #[default]
    Rl,
    Hadamard,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdeMethodName {
    #[default]
    Moment,
    Integer,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieMethodName {
    #[default]
    Moment,
    Taylor,
}

fn expr(src: &str, what: &str) -> Result<Expr, String> {
    parse_expr(src).map_err(|e| format!("{what}: {e}"))
}

fn indexed(src: &str, what: &str) -> Result<Expr, String> {
    parse_expr_with(src, ParseOptions { indexed: true }).map_err(|e| format!("{what}: {e}"))
}

fn exact_model(src: Option<&str>, [a, b]: [f64; 2]) -> Result<Option<FunctionModel>, String> {
    src.map(|s| FunctionModel::parse(s, 0, a, b).map_err(|e| format!("exact: {e}")))
        .transpose()
}

fn lib(e: fracvar::Error) -> String {
    e.to_string()
}

fn basic(
    alpha: f64,
    [a, b]: [f64; 2],
    lagrangian: &str,
    bd: &Boundary,
) -> Result<BasicFvp, String> {
    let xb = bd.xb.ok_or("boundary.xb is required")?;
    BasicFvp::new(alpha, (a, b), expr(lagrangian, "lagrangian")?, bd.xa, xb).map_err(lib)
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("invalid problem file: {e}"))
    }

    /// Converts the file into a registry-style problem with id `spec`.
    pub fn into_problem(self) -> Result<BenchmarkProblem, String> {
        let mut params = Params::default();
        let (payload, exact, method) = match self {
            ProblemFile::Basic {
                alpha,
                interval,
                lagrangian,
                boundary,
                exact,
            } => (
                Payload::Basic(basic(alpha, interval, &lagrangian, &boundary)?),
                exact_model(exact.as_deref(), interval)?,
                SolveMethod::EulerLike,
            ),
            ProblemFile::Isoperimetric {
                alpha,
                interval,
                lagrangian,
                boundary,
                constraint,
                exact,
            } => {
                let base = basic(alpha, interval, &lagrangian, &boundary)?;
                let g = expr(&constraint.g, "constraint.g")?;
                (
                    Payload::Isoperimetric(
                        IsoperimetricFvp::new(base, g, constraint.k).map_err(lib)?,
                    ),
                    exact_model(exact.as_deref(), interval)?,
                    SolveMethod::Isoperimetric,
                )
            }
            ProblemFile::OptimalControl {
                alpha,
                interval,
                lagrangian,
                boundary,
                dynamics,
                terminal,
                control,
                big_n,
                exact,
            } => {
                let [a, b] = interval;
                let (term, phi, method) = match terminal {
                    TerminalBlock::Fixed { t, x } => (
                        Terminal::Fixed {
                            t: t.unwrap_or(b),
                            x,
                        },
                        None,
                        SolveMethod::Indirect,
                    ),
                    TerminalBlock::FreeState { t, phi } => (
                        Terminal::FreeState { t: t.unwrap_or(b) },
                        phi,
                        SolveMethod::Indirect,
                    ),
                    TerminalBlock::FreeTime { x } => {
                        (Terminal::FreeTime { x }, None, SolveMethod::FreeTime)
                    }
                };
                let mut p = OcProblem::new(
                    alpha,
                    a,
                    boundary.xa,
                    indexed(&lagrangian, "lagrangian")?,
                    indexed(&dynamics.f, "dynamics.f")?,
                    (dynamics.m_int, dynamics.m_frac),
                    term,
                )
                .map_err(lib)?;
                if let Some(phi) = phi {
                    p = p.with_terminal_cost(expr(&phi, "terminal.phi")?);
                }
                if let Some(c) = control {
                    p = p.with_control(fracvar::indirect::ControlLaw::Supplied(indexed(
                        &c, "control",
                    )?));
                }
                let aux = dynamics
                    .aux
                    .iter()
                    .map(|s| indexed(s, "dynamics.aux"))
                    .collect::<Result<Vec<_>, _>>()?;
                p = p.with_aux(aux);
                if let Some(n) = big_n {
                    params.big_n = n;
                }
                (
                    Payload::OptimalControl(p),
                    exact_model(exact.as_deref(), interval)?,
                    method,
                )
            }
            ProblemFile::Fde {
                family,
                alpha,
                interval,
                r,
                s,
                boundary,
                big_n,
                method,
                exact,
            } => {
                let big_n = big_n.unwrap_or(2);
                params.big_n = big_n;
                let spec = FdeSpec {
                    family: match family {
                        FamilyName::Rl => FdeFamily::Rl,
                        FamilyName::Hadamard => FdeFamily::Hadamard,
                    },
                    alpha,
                    a: interval[0],
                    b: interval[1],
                    r: expr(&r, "r")?,
                    s: expr(&s, "s")?,
                    xa: boundary.xa,
                    big_n,
                    method: match method {
                        FdeMethodName::Moment => FdeMethod::Moment,
                        FdeMethodName::Integer => FdeMethod::IntegerExpansion,
                    },
                };
                (
                    Payload::Fde(spec),
                    exact_model(exact.as_deref(), interval)?,
                    SolveMethod::Fde,
                )
            }
            ProblemFile::Fie {
                alpha,
                interval,
                rhs,
                x0,
                big_n,
                method,
                exact,
            } => {
                let big_n = big_n.unwrap_or(2);
                params.big_n = big_n;
                let spec = FieSpec {
                    alpha,
                    a: interval[0],
                    b: interval[1],
                    rhs: expr(&rhs, "rhs")?,
                    x0,
                    big_n,
                    method: match method {
                        FieMethodName::Moment => FieMethod::Moment,
                        FieMethodName::Taylor => FieMethod::Taylor,
                    },
                };
                (
                    Payload::Fie(spec),
                    exact_model(exact.as_deref(), interval)?,
                    SolveMethod::Fie,
                )
            }
        };
        Ok(BenchmarkProblem {
            id: "spec",
            payload,
            exact,
            anchor: "problem file",
            method,
            params,
        })
    }
}
