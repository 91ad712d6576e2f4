use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use fracvar::approx::{
    frac_deriv_expansion, frac_deriv_grid, frac_integral_expansion, Family, GridScheme, Method,
    Side,
};
use fracvar::bench::{self, BenchmarkProblem, Curve, Params, SolveMethod, SuiteOptions};
use fracvar::funcmodel::{
    parse_expr, polynomial_reference, reference_for_expr, uniform_nodes, Expr, FunctionModel,
    RefFamily, TabularFunction,
};
use fracvar::special::{gl_weights, neumaier_sum};

use crate::problem_file::ProblemFile;

pub const GRAMMAR: &str = "\
EXPR grammar (EBNF):
  expr     = term , { ( \"+\" | \"-\" ) , term } ;
  term     = unary , { ( \"*\" | \"/\" ) , unary } ;
  unary    = \"-\" , unary | power ;
  power    = atom , [ \"^\" , unary ] ;            (* right associative, binds tighter than unary minus *)
  atom     = number | variable | \"pi\" | func , \"(\" , expr , \")\" | \"(\" , expr , \")\" ;
  func     = \"exp\" | \"ln\" | \"sin\" | \"cos\" | \"sqrt\" ;
  variable = \"t\" | \"x\" | \"xp\" | \"Dx\" | \"u\" | \"s\" , digits | \"lam\" , digits ;
  number   = digits , [ \".\" , digits ] , [ ( \"e\" | \"E\" ) , [ \"+\" | \"-\" ] , digits ] ;
Functions of t (--fn, exact solutions) use t only; Lagrangians use t, x, xp, Dx;
control problems use t, x, u and s1, s2, ... for auxiliary states.";

/// Failure classes, mapped to exit codes 2 and 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Solver(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Solver(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Solver(m) => m,
        }
    }
}

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

/// Solver errors that really describe bad input are reported as usage errors.
fn classify(e: fracvar::Error) -> Failure {
    use fracvar::Error as E;
    match e {
        E::Domain(_)
        | E::Syntax { .. }
        | E::UnknownIdentifier { .. }
        | E::Unsupported(_)
        | E::NotFound(_)
        | E::Grid(_) => usage(e),
        other => Failure::Solver(other.to_string()),
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "fracvar",
    version,
    about = "Fractional operators, variational and optimal-control solvers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Evaluate a fractional operator.
    Eval {
        #[command(subcommand)]
        what: EvalWhat,
    },
    /// Solve a registry problem or a JSON problem file.
    Solve {
        #[command(subcommand)]
        route: SolveRoute,
    },
    /// Run a benchmark suite.
    Bench(BenchArgs),
}

#[derive(Subcommand, Debug)]
pub enum EvalWhat {
    /// Fractional derivative or integral of an expression on a uniform grid.
    Op(OpArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Rl,
    Caputo,
    Hadamard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OpKind {
    Deriv,
    Integral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Gl,
    ShiftedGl,
    Diethelm,
    Taylor,
    Moment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ErrAgainst {
    Exact,
}

#[derive(Args, Debug)]
pub struct OpArgs {
    #[arg(long, value_enum, default_value = "rl")]
    pub family: FamilyArg,
    #[arg(long, value_enum, default_value = "deriv")]
    pub op: OpKind,
    #[arg(long, value_enum, default_value = "left")]
    pub side: SideArg,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "moment")]
    pub method: MethodArg,
    /// Expansion depth of the moment method.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// Truncation order of the expansions.
    #[arg(long = "N", default_value_t = 4)]
    pub big_n: usize,
    /// Function of t to transform.
    #[arg(long = "fn", value_name = "EXPR")]
    pub function: String,
    #[arg(long, default_value_t = 0.0)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    /// Number of uniform subintervals of [a, b].
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    /// Output path; `-` or `csv` writes CSV to standard output.
    #[arg(long, default_value = "-")]
    pub out: String,
    #[arg(long, value_enum)]
    pub err_against: Option<ErrAgainst>,
}

#[derive(Subcommand, Debug)]
pub enum SolveRoute {
    /// Euler-like Grünwald–Letnikov discretization.
    Direct(SolveArgs),
    /// First-variation (hat function) discretization.
    FirstVariation(SolveArgs),
    /// Isoperimetric problem with a multiplier.
    Iso(SolveArgs),
    /// Moment transformation and Hamiltonian boundary value problem.
    Indirect(SolveArgs),
    /// Optimal control with free final time.
    FreeTime(SolveArgs),
    /// Fractional differential equation.
    Fde(SolveArgs),
    /// Fractional integral equation.
    Fie(SolveArgs),
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// Registry id (see `fracvar bench --suite registry`).
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    pub problem: Option<String>,
    /// JSON problem file.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Subintervals of the direct methods.
    #[arg(long)]
    pub n: Option<usize>,
    /// Expansion order.
    #[arg(long = "N")]
    pub big_n: Option<usize>,
    /// Integration steps of the indirect, FDE and FIE solvers.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Use the approximated fractional necessary conditions instead of the
    /// transformed problem (control problems only).
    #[arg(long)]
    pub fractional_conditions: bool,
    /// CSV output path; `-` writes to standard output.
    #[arg(long, default_value = "-")]
    pub out: String,
    #[arg(long, value_enum)]
    pub err_against: Option<ErrAgainst>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// One of: direct, operator, registry.
    #[arg(long)]
    pub suite: String,
    /// Output path; `.md` selects markdown. `-` writes CSV to standard output.
    #[arg(long, default_value = "-")]
    pub out: String,
    /// Worker threads; 1 runs rows sequentially.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Record wall times (the CSV is then no longer reproducible).
    #[arg(long)]
    pub timing: bool,
}

/// The clap command with the grammar appended to every help page.
pub fn command() -> clap::Command {
    fn decorate(c: clap::Command) -> clap::Command {
        let subs: Vec<String> = c
            .get_subcommands()
            .map(|s| s.get_name().to_string())
            .collect();
        let mut c = c.after_help(GRAMMAR);
        for name in subs {
            c = c.mut_subcommand(name, decorate);
        }
        c
    }
    decorate(Cli::command())
}

pub fn parse_args<I, T>(argv: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = command().try_get_matches_from(argv)?;
    Cli::from_arg_matches(&matches)
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Eval {
            what: EvalWhat::Op(args),
        } => eval_op(&args),
        Command::Solve { route } => solve(route),
        Command::Bench(args) => run_bench(&args),
    }
}

fn sink(out: &str) -> Result<Box<dyn Write>, Failure> {
    if out == "-" || out == "csv" {
        Ok(Box::new(io::stdout().lock()))
    } else {
        let f = fs::File::create(out).map_err(|e| usage(format!("cannot create {out}: {e}")))?;
        Ok(Box::new(io::BufWriter::new(f)))
    }
}

/// Writes `t,x_num,x_exact,abs_err`; the exact columns stay empty where no
/// reference value is known.
fn write_csv(
    out: &str,
    t: &[f64],
    x: &[f64],
    exact: Option<&[Option<f64>]>,
) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(sink(out)?);
    let io_err = |e: csv::Error| Failure::Solver(format!("writing {out}: {e}"));
    w.write_record(["t", "x_num", "x_exact", "abs_err"])
        .map_err(io_err)?;
    for (i, (&ti, &xi)) in t.iter().zip(x).enumerate() {
        let (ex, err) = match exact.and_then(|e| e[i]) {
            Some(e) => (format!("{e:.15e}"), format!("{:.6e}", (xi - e).abs())),
            None => (String::new(), String::new()),
        };
        w.write_record([format!("{ti:.15e}"), format!("{xi:.15e}"), ex, err])
            .map_err(io_err)?;
    }
    w.flush()
        .map_err(|e| Failure::Solver(format!("writing {out}: {e}")))
}

/// Metrics over the nodes that have a reference value.
fn report_metrics(label: &str, t: &[f64], x: &[f64], exact: &[Option<f64>]) -> Result<(), Failure> {
    let (mut tt, mut xx, mut ee) = (Vec::new(), Vec::new(), Vec::new());
    for ((&ti, &xi), e) in t.iter().zip(x).zip(exact) {
        if let Some(e) = e {
            tt.push(ti);
            xx.push(xi);
            ee.push(*e);
        }
    }
    if tt.is_empty() {
        return Ok(());
    }
    let m = bench::metrics_against(&tt, &xx, &ee).map_err(classify)?;
    eprintln!("{label}E_L2 = {:.6e}  E_max = {:.6e}", m.e_l2, m.e_max);
    Ok(())
}

fn grid_nodes(args: &OpArgs) -> Result<Vec<f64>, Failure> {
    if !(args.b > args.a) {
        return Err(usage(format!("need a < b, got [{}, {}]", args.a, args.b)));
    }
    if args.grid < 1 {
        return Err(usage("--grid must be at least 1"));
    }
    Ok(uniform_nodes(args.a, args.b, args.grid))
}

/// Grünwald–Letnikov sums with weights of order `order` (negative for
/// integrals) on uniform samples.
fn gl_sum(x: &[f64], h: f64, order: f64, side: SideArg, shifted: bool) -> Vec<f64> {
    let m = x.len() - 1;
    let w = gl_weights(order, m + 1);
    let w = w.weights();
    let scale = h.powf(-order);
    (0..=m)
        .map(|i| {
            scale
                * match (side, shifted) {
                    (SideArg::Left, false) => neumaier_sum((0..=i).map(|k| w[k] * x[i - k])),
                    (SideArg::Left, true) => {
                        let at = |j: usize| if j <= m { x[j] } else { 2.0 * x[m] - x[m - 1] };
                        neumaier_sum((0..=i).map(|k| w[k] * at(i + 1 - k)))
                    }
                    (SideArg::Right, false) => neumaier_sum((0..=m - i).map(|k| w[k] * x[i + k])),
                    (SideArg::Right, true) => {
                        let at = |j: isize| {
                            if j >= 0 {
                                x[j as usize]
                            } else {
                                2.0 * x[0] - x[1]
                            }
                        };
                        neumaier_sum(
                            (0..=m - i + 1).map(|k| w[k] * at(i as isize - 1 + k as isize)),
                        )
                    }
                }
        })
        .collect()
}

fn numeric_op(args: &OpArgs, e: &Expr, nodes: &[f64]) -> Result<(Vec<f64>, Vec<f64>), Failure> {
    let (a, b, alpha) = (args.a, args.b, args.alpha);
    let side = match args.side {
        SideArg::Left => Side::Left,
        SideArg::Right => Side::Right,
    };
    let family = match args.family {
        FamilyArg::Rl => Family::Rl,
        FamilyArg::Caputo => Family::Caputo,
        FamilyArg::Hadamard => Family::Hadamard,
    };
    let base = if side == Side::Left { a } else { b };
    let grid_method = matches!(
        args.method,
        MethodArg::Gl | MethodArg::ShiftedGl | MethodArg::Diethelm
    );
    if grid_method {
        if args.family == FamilyArg::Hadamard {
            return Err(usage(
                "grid schemes are available for the rl and caputo families only",
            ));
        }
        let f = |t: f64| e.eval_t(t);
        let samples = TabularFunction::from_fn(a, b, args.grid, f).map_err(classify)?;
        let h = samples.h();
        let x = samples.values().to_vec();
        let values = match (args.method, args.op) {
            (MethodArg::Diethelm, OpKind::Deriv) => {
                if args.family != FamilyArg::Caputo || args.side != SideArg::Left {
                    return Err(usage("diethelm approximates the left Caputo derivative"));
                }
                frac_deriv_grid(&samples, alpha, GridScheme::DiethelmCaputo { dx_a: None })
                    .map_err(classify)?
                    .values()
                    .to_vec()
            }
            (MethodArg::Diethelm, OpKind::Integral) => {
                return Err(usage("diethelm approximates derivatives only"))
            }
            (m, op) => {
                if !(alpha > 0.0 && (op == OpKind::Integral || alpha < 1.0)) {
                    return Err(usage(format!(
                        "GL derivative orders must lie in (0,1), got {alpha}"
                    )));
                }
                if op == OpKind::Integral && args.family == FamilyArg::Caputo {
                    return Err(usage("the caputo family applies to derivatives only"));
                }
                let x = if args.family == FamilyArg::Caputo {
                    let xb = if side == Side::Left {
                        x[0]
                    } else {
                        x[x.len() - 1]
                    };
                    x.iter().map(|v| v - xb).collect()
                } else {
                    x
                };
                let order = if op == OpKind::Deriv { alpha } else { -alpha };
                gl_sum(&x, h, order, args.side, m == MethodArg::ShiftedGl)
            }
        };
        return Ok((nodes.to_vec(), values));
    }
    // expansions are undefined at the base point
    let grid: Vec<f64> = nodes.iter().copied().filter(|&t| t != base).collect();
    let method = match args.method {
        MethodArg::Taylor => Method::Taylor(args.big_n),
        _ => Method::Moment {
            n: args.n,
            big_n: args.big_n,
        },
    };
    let order = args.big_n.max(args.n) + 2;
    let model = FunctionModel::from_expr(e, order, a, b).map_err(classify)?;
    let out = match args.op {
        OpKind::Deriv => frac_deriv_expansion(&model, alpha, base, side, family, method, &grid),
        OpKind::Integral => {
            frac_integral_expansion(&model, alpha, base, side, family, method, &grid)
        }
    }
    .map_err(classify)?;
    Ok((out.t, out.x))
}

fn reference_op(args: &OpArgs, e: &Expr, t: f64) -> Option<f64> {
    let base = if args.side == SideArg::Left {
        args.a
    } else {
        args.b
    };
    if t == base {
        return None;
    }
    let integral = args.op == OpKind::Integral;
    if args.side == SideArg::Left {
        let fam = match (args.family, integral) {
            (FamilyArg::Rl, false) => RefFamily::RlDeriv,
            (FamilyArg::Rl, true) => RefFamily::RlIntegral,
            (FamilyArg::Caputo, false) => RefFamily::CaputoDeriv,
            (FamilyArg::Caputo, true) => return None,
            (FamilyArg::Hadamard, false) => RefFamily::HadamardDeriv,
            (FamilyArg::Hadamard, true) => RefFamily::HadamardIntegral,
        };
        if let Ok(v) = reference_for_expr(fam, args.alpha, base, e, t) {
            return Some(v);
        }
    }
    if args.family == FamilyArg::Hadamard {
        return None;
    }
    let model = FunctionModel::from_expr(e, 0, args.a, args.b).ok()?;
    let right = args.side == SideArg::Right;
    let caputo = args.family == FamilyArg::Caputo;
    polynomial_reference(&model, args.alpha, base, right, integral, caputo, t).ok()
}

fn eval_op(args: &OpArgs) -> Result<(), Failure> {
    let e = parse_expr(&args.function).map_err(|err| usage(format!("--fn: {err}")))?;
    let nodes = grid_nodes(args)?;
    let (t, x) = numeric_op(args, &e, &nodes)?;
    if let Some(bad) = t.iter().zip(&x).find(|(_, v)| !v.is_finite()) {
        return Err(Failure::Solver(format!(
            "non-finite value at t = {}",
            bad.0
        )));
    }
    let exact: Option<Vec<Option<f64>>> = args
        .err_against
        .map(|_| t.iter().map(|&s| reference_op(args, &e, s)).collect());
    if let Some(ex) = &exact {
        if ex.iter().all(Option::is_none) {
            warn!(
                "no closed-form reference for `{}`; exact columns left empty",
                args.function
            );
        }
        report_metrics("", &t, &x, ex)?;
    }
    write_csv(&args.out, &t, &x, exact.as_deref())
}

fn load_problem(args: &SolveArgs) -> Result<BenchmarkProblem, Failure> {
    match (&args.problem, &args.spec) {
        (Some(id), _) => bench::lookup(id).map_err(classify),
        (None, Some(path)) => load_file(path),
        (None, None) => Err(usage("either --problem or --spec is required")),
    }
}

fn load_file(path: &Path) -> Result<BenchmarkProblem, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    ProblemFile::parse(&text)
        .and_then(ProblemFile::into_problem)
        .map_err(Failure::Usage)
}

fn solve(route: SolveRoute) -> Result<(), Failure> {
    let (args, method) = match route {
        SolveRoute::Direct(a) => (a, SolveMethod::EulerLike),
        SolveRoute::FirstVariation(a) => (a, SolveMethod::FirstVariation),
        SolveRoute::Iso(a) => (a, SolveMethod::Isoperimetric),
        SolveRoute::Indirect(a) => (a, SolveMethod::Indirect),
        SolveRoute::FreeTime(a) => (a, SolveMethod::FreeTime),
        SolveRoute::Fde(a) => (a, SolveMethod::Fde),
        SolveRoute::Fie(a) => (a, SolveMethod::Fie),
    };
    let method = if args.fractional_conditions {
        if !matches!(method, SolveMethod::Indirect | SolveMethod::FreeTime) {
            return Err(usage(
                "--fractional-conditions applies to `indirect` and `free-time`",
            ));
        }
        SolveMethod::FractionalConditions
    } else {
        method
    };
    let p = load_problem(&args)?;
    let params = Params {
        n: args.n.unwrap_or(p.params.n),
        big_n: args.big_n.unwrap_or(p.params.big_n),
        steps: args.steps.unwrap_or(p.params.steps),
    };
    info!("solving {} with {method} ({params:?})", p.id);
    let Curve { t, x } = bench::solve(&p, method, &params).map_err(classify)?;
    let exact: Option<Vec<Option<f64>>> = match (&p.exact, args.err_against) {
        (Some(m), _) => Some(
            t.iter()
                .map(|&s| m.eval(s).map(Some))
                .collect::<Result<_, _>>()
                .map_err(classify)?,
        ),
        (None, Some(_)) => {
            warn!(
                "`{}` has no known analytic solution; exact columns left empty",
                p.id
            );
            None
        }
        (None, None) => None,
    };
    if let Some(ex) = &exact {
        report_metrics(&format!("{}: ", p.id), &t, &x, ex)?;
    }
    let shown = if args.err_against.is_some() {
        exact.as_deref()
    } else {
        None
    };
    write_csv(&args.out, &t, &x, shown)
}

fn run_bench(args: &BenchArgs) -> Result<(), Failure> {
    if args.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let opts = SuiteOptions {
        timing: args.timing,
        parallel: args.jobs > 1,
    };
    let report = if args.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .map_err(|e| Failure::Solver(e.to_string()))?;
        pool.install(|| bench::named_suite(&args.suite, opts))
    } else {
        bench::named_suite(&args.suite, opts)
    }
    .map_err(classify)?;
    for row in &report.rows {
        if let Some(e) = &row.error {
            warn!("{} ({} {}): {e}", row.id, row.method, row.params);
        }
    }
    let text = if args.out.ends_with(".md") {
        report.to_markdown()
    } else {
        report.to_csv()
    };
    let mut w = sink(&args.out)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Failure::Solver(format!("writing {}: {e}", args.out)))
}
