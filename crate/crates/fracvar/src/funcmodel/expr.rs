use std::fmt;

use crate::{Error, Result};

/// Symbols an expression may refer to.
///
/// `Xp` is the first derivative ẋ, `Dx` the fractional derivative; both are
/// opaque inputs so that the same grammar describes Lagrangians
/// `L(t, x, ẋ, D^α x)`. `State(i)` and `Costate(i)` only appear when parsing
/// with [`ParseOptions::indexed`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    X,
    Xp,
    Dx,
    U,
    State(usize),
    Costate(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    pub fn apply(self, v: f64) -> Result<f64> {
        match self {
            Func::Exp => Ok(v.exp()),
            Func::Ln if v <= 0.0 => Err(Error::Evaluation(format!("ln of non-positive value {v}"))),
            Func::Ln => Ok(v.ln()),
            Func::Sin => Ok(v.sin()),
            Func::Cos => Ok(v.cos()),
            Func::Sqrt if v < 0.0 => Err(Error::Evaluation(format!("sqrt of negative value {v}"))),
            Func::Sqrt => Ok(v.sqrt()),
        }
    }
}

/// Expression tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Variable bindings for [`Expr::eval`].
#[derive(Clone, Copy, Debug, Default)]
pub struct Env<'a> {
    pub t: f64,
    pub x: f64,
    pub xp: f64,
    pub dx: f64,
    pub u: f64,
    pub states: &'a [f64],
    pub costates: &'a [f64],
}

impl Env<'_> {
    pub fn at(t: f64) -> Self {
        Env {
            t,
            ..Default::default()
        }
    }
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        Expr::Pow(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(a: Expr) -> Expr {
        Expr::Neg(Box::new(a))
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        Expr::Call(f, Box::new(a))
    }

    pub fn eval(&self, env: &Env) -> Result<f64> {
        let v = self.eval_raw(env)?;
        if v.is_nan() {
            return Err(Error::Evaluation(format!(
                "`{self}` is undefined at t = {}",
                env.t
            )));
        }
        Ok(v)
    }

    fn eval_raw(&self, env: &Env) -> Result<f64> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(v) => match v {
                Var::T => env.t,
                Var::X => env.x,
                Var::Xp => env.xp,
                Var::Dx => env.dx,
                Var::U => env.u,
                Var::State(i) => *env
                    .states
                    .get(*i)
                    .ok_or_else(|| Error::Evaluation(format!("state s{i} is not bound")))?,
                Var::Costate(i) => *env
                    .costates
                    .get(*i)
                    .ok_or_else(|| Error::Evaluation(format!("costate lam{i} is not bound")))?,
            },
            Expr::Neg(a) => -a.eval_raw(env)?,
            Expr::Add(a, b) => a.eval_raw(env)? + b.eval_raw(env)?,
            Expr::Sub(a, b) => a.eval_raw(env)? - b.eval_raw(env)?,
            Expr::Mul(a, b) => a.eval_raw(env)? * b.eval_raw(env)?,
            Expr::Div(a, b) => a.eval_raw(env)? / b.eval_raw(env)?,
            Expr::Pow(a, b) => {
                let base = a.eval_raw(env)?;
                let e = b.eval_raw(env)?;
                if e == 2.0 {
                    base * base
                } else if e == e.round() && e.abs() <= 64.0 {
                    base.powi(e as i32)
                } else {
                    base.powf(e)
                }
            }
            Expr::Call(f, a) => f.apply(a.eval_raw(env)?)?,
        })
    }

    /// Evaluates an expression of `t` alone.
    pub fn eval_t(&self, t: f64) -> Result<f64> {
        self.eval(&Env::at(t))
    }

    /// Whether `v` occurs anywhere in the tree.
    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Expr::Num(_) | Expr::Pi => false,
            Expr::Var(w) => *w == v,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on(v),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.depends_on(v) || b.depends_on(v),
        }
    }

    /// All distinct variables in order of first appearance.
    pub fn variables(&self) -> Vec<Var> {
        fn walk(e: &Expr, out: &mut Vec<Var>) {
            match e {
                Expr::Num(_) | Expr::Pi => {}
                Expr::Var(v) => {
                    if !out.contains(v) {
                        out.push(*v)
                    }
                }
                Expr::Neg(a) | Expr::Call(_, a) => walk(a, out),
                Expr::Add(a, b)
                | Expr::Sub(a, b)
                | Expr::Mul(a, b)
                | Expr::Div(a, b)
                | Expr::Pow(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Replaces every occurrence of `v` by `with`.
    pub fn substitute(&self, v: Var, with: &Expr) -> Expr {
        match self {
            Expr::Var(w) if *w == v => with.clone(),
            Expr::Num(_) | Expr::Pi | Expr::Var(_) => self.clone(),
            Expr::Neg(a) => Expr::neg(a.substitute(v, with)),
            Expr::Call(f, a) => Expr::call(*f, a.substitute(v, with)),
            Expr::Add(a, b) => Expr::add(a.substitute(v, with), b.substitute(v, with)),
            Expr::Sub(a, b) => Expr::sub(a.substitute(v, with), b.substitute(v, with)),
            Expr::Mul(a, b) => Expr::mul(a.substitute(v, with), b.substitute(v, with)),
            Expr::Div(a, b) => Expr::div(a.substitute(v, with), b.substitute(v, with)),
            Expr::Pow(a, b) => Expr::pow(a.substitute(v, with), b.substitute(v, with)),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if e.precedence() < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Pi => write!(f, "pi"),
            Expr::Var(v) => match v {
                Var::T => write!(f, "t"),
                Var::X => write!(f, "x"),
                Var::Xp => write!(f, "xp"),
                Var::Dx => write!(f, "Dx"),
                Var::U => write!(f, "u"),
                Var::State(i) => write!(f, "s{i}"),
                Var::Costate(i) => write!(f, "lam{i}"),
            },
            Expr::Neg(a) => {
                write!(f, "-")?;
                // a bare number after unary minus would fold into a literal
                if matches!(**a, Expr::Num(_)) {
                    write!(f, "({a})")
                } else {
                    write_child(f, a, 3)
                }
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                write_child(f, a, 1)?;
                write!(
                    f,
                    " {} ",
                    if matches!(self, Expr::Add(..)) {
                        '+'
                    } else {
                        '-'
                    }
                )?;
                write_child(f, b, 2)
            }
            Expr::Mul(a, b) | Expr::Div(a, b) => {
                write_child(f, a, 2)?;
                write!(
                    f,
                    "{}",
                    if matches!(self, Expr::Mul(..)) {
                        "*"
                    } else {
                        "/"
                    }
                )?;
                write_child(f, b, 3)
            }
            Expr::Pow(a, b) => {
                write_child(f, a, 5)?;
                write!(f, "^")?;
                write_child(f, b, 3)
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

/// Parser switches.
#[derive(Clone, Copy, Debug, Default)]
pub struct ParseOptions {
    /// Accept `s0, s1, …` (states) and `lam0, lam1, …` (costates).
    pub indexed: bool,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| Error::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else if "+-*/^".contains(c) {
            out.push((Tok::Op(c), i));
            i += 1;
        } else if c == '(' {
            out.push((Tok::LParen, i));
            i += 1;
        } else if c == ')' {
            out.push((Tok::RParen, i));
            i += 1;
        } else {
            let ch = src[i..].chars().next().unwrap_or('?');
            return Err(Error::Syntax {
                offset: i,
                message: format!("unexpected character `{ch}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
    opts: ParseOptions,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let c = *c;
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' {
                Expr::add(lhs, rhs)
            } else {
                Expr::sub(lhs, rhs)
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let c = *c;
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' {
                Expr::mul(lhs, rhs)
            } else {
                Expr::div(lhs, rhs)
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Num(v) => Expr::Num(-v),
                other => Expr::neg(other),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::pow(base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let offset = self.offset();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        Ok(e)
                    }
                    _ => self.syntax("expected `)`"),
                }
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if let Some(func) = Func::from_name(&name) {
                    if self.peek() != Some(&Tok::LParen) {
                        return self.syntax(format!("expected `(` after `{name}`"));
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek() != Some(&Tok::RParen) {
                        return self.syntax("expected `)`");
                    }
                    self.pos += 1;
                    return Ok(Expr::call(func, arg));
                }
                self.identifier(&name, offset)
            }
            Some(Tok::RParen) => self.syntax("unexpected `)`"),
            Some(Tok::Op(c)) => self.syntax(format!("unexpected operator `{c}`")),
            None => self.syntax("unexpected end of input"),
        }
    }

    fn identifier(&self, name: &str, offset: usize) -> Result<Expr> {
        let v = match name {
            "t" => Var::T,
            "x" => Var::X,
            "xp" => Var::Xp,
            "Dx" => Var::Dx,
            "u" => Var::U,
            "pi" => return Ok(Expr::Pi),
            _ => {
                let indexed = |prefix: &str| -> Option<usize> {
                    let rest = name.strip_prefix(prefix)?;
                    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
                        return None;
                    }
                    rest.parse().ok()
                };
                match (self.opts.indexed, indexed("s"), indexed("lam")) {
                    (true, Some(i), _) => Var::State(i),
                    (true, _, Some(i)) => Var::Costate(i),
                    _ => {
                        return Err(Error::UnknownIdentifier {
                            name: name.to_string(),
                            offset,
                        })
                    }
                }
            }
        };
        Ok(Expr::Var(v))
    }
}

/// Parses the expression language.
///
/// ```
/// use fracvar::funcmodel::parse_expr;
/// let e = parse_expr("16*t^5 - 20*t^3 + 5*t").unwrap();
/// assert_eq!(e.eval_t(1.0).unwrap(), 1.0);
/// ```
pub fn parse_expr(src: &str) -> Result<Expr> {
    parse_expr_with(src, ParseOptions::default())
}

pub fn parse_expr_with(src: &str, opts: ParseOptions) -> Result<Expr> {
    let toks = tokenize(src)?;
    if toks.is_empty() {
        return Err(Error::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.len(),
        opts,
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.syntax("unexpected trailing input");
    }
    Ok(e)
}

impl std::str::FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Expr> {
        parse_expr(s)
    }
}
