use super::expr::{Expr, Func, Var};

/// Exact symbolic derivative of `e` with respect to `var`, simplified.
///
/// ```
/// use fracvar::funcmodel::{diff_expr, parse_expr, Var};
/// let d = diff_expr(&parse_expr("exp(2*t)").unwrap(), Var::T);
/// assert_eq!(d.eval_t(0.0).unwrap(), 2.0);
/// ```
pub fn diff_expr(e: &Expr, var: Var) -> Expr {
    simplify(&diff_raw(e, var))
}

/// The `order`-th derivative, simplifying after each step.
pub fn diff_n(e: &Expr, var: Var, order: usize) -> Expr {
    let mut d = simplify(e);
    for _ in 0..order {
        d = diff_expr(&d, var);
    }
    d
}

fn diff_raw(e: &Expr, var: Var) -> Expr {
    use Expr::*;
    match e {
        Num(_) | Pi => Num(0.0),
        Var(v) => Num(if *v == var { 1.0 } else { 0.0 }),
        Neg(a) => Expr::neg(diff_raw(a, var)),
        Add(a, b) => Expr::add(diff_raw(a, var), diff_raw(b, var)),
        Sub(a, b) => Expr::sub(diff_raw(a, var), diff_raw(b, var)),
        Mul(a, b) => Expr::add(
            Expr::mul(diff_raw(a, var), (**b).clone()),
            Expr::mul((**a).clone(), diff_raw(b, var)),
        ),
        Div(a, b) => Expr::div(
            Expr::sub(
                Expr::mul(diff_raw(a, var), (**b).clone()),
                Expr::mul((**a).clone(), diff_raw(b, var)),
            ),
            Expr::pow((**b).clone(), Num(2.0)),
        ),
        Pow(a, b) => {
            let a_var = a.depends_on(var);
            let b_var = b.depends_on(var);
            match (a_var, b_var) {
                (false, false) => Num(0.0),
                (true, false) => Expr::mul(
                    Expr::mul(
                        (**b).clone(),
                        Expr::pow((**a).clone(), Expr::sub((**b).clone(), Num(1.0))),
                    ),
                    diff_raw(a, var),
                ),
                (false, true) => Expr::mul(
                    Expr::mul(e.clone(), Expr::call(Func::Ln, (**a).clone())),
                    diff_raw(b, var),
                ),
                (true, true) => Expr::mul(
                    e.clone(),
                    Expr::add(
                        Expr::mul(diff_raw(b, var), Expr::call(Func::Ln, (**a).clone())),
                        Expr::div(Expr::mul((**b).clone(), diff_raw(a, var)), (**a).clone()),
                    ),
                ),
            }
        }
        Call(f, a) => {
            let inner = diff_raw(a, var);
            let outer = match f {
                Func::Exp => e.clone(),
                Func::Ln => Expr::div(Num(1.0), (**a).clone()),
                Func::Sin => Expr::call(Func::Cos, (**a).clone()),
                Func::Cos => Expr::neg(Expr::call(Func::Sin, (**a).clone())),
                Func::Sqrt => Expr::div(Num(0.5), e.clone()),
            };
            Expr::mul(outer, inner)
        }
    }
}

fn as_num(e: &Expr) -> Option<f64> {
    match e {
        Expr::Num(v) => Some(*v),
        _ => None,
    }
}

/// Constant folding and the algebraic identities `0+x`, `1*x`, `0*x`,
/// `x^1`, `x^0`, `--x` and merging of numeric factors. Not a general
/// canonicalizer.
pub fn simplify(e: &Expr) -> Expr {
    use Expr::*;
    match e {
        Num(_) | Pi | Var(_) => e.clone(),
        Neg(a) => {
            let a = simplify(a);
            match a {
                Num(v) => Num(-v),
                Neg(inner) => *inner,
                Mul(l, r) if as_num(&l).is_some() => Expr::mul(Num(-as_num(&l).unwrap()), *r),
                other => Expr::neg(other),
            }
        }
        Add(a, b) => {
            let (a, b) = (simplify(a), simplify(b));
            match (as_num(&a), as_num(&b)) {
                (Some(x), Some(y)) => Num(x + y),
                (Some(x), _) if x == 0.0 => b,
                (_, Some(y)) if y == 0.0 => a,
                _ => match b {
                    Neg(nb) => Expr::sub(a, *nb),
                    Num(y) if y < 0.0 => Expr::sub(a, Num(-y)),
                    _ => Expr::add(a, b),
                },
            }
        }
        Sub(a, b) => {
            let (a, b) = (simplify(a), simplify(b));
            match (as_num(&a), as_num(&b)) {
                (Some(x), Some(y)) => Num(x - y),
                (Some(x), _) if x == 0.0 => simplify(&Expr::neg(b)),
                (_, Some(y)) if y == 0.0 => a,
                _ if a == b => Num(0.0),
                _ => match b {
                    Neg(nb) => Expr::add(a, *nb),
                    _ => Expr::sub(a, b),
                },
            }
        }
        Mul(a, b) => {
            let (a, b) = (simplify(a), simplify(b));
            match (as_num(&a), as_num(&b)) {
                (Some(x), Some(y)) => Num(x * y),
                (Some(x), _) | (_, Some(x)) if x == 0.0 => Num(0.0),
                (Some(x), _) if x == 1.0 => b,
                (_, Some(y)) if y == 1.0 => a,
                (Some(x), _) if x == -1.0 => simplify(&Expr::neg(b)),
                (_, Some(y)) if y == -1.0 => simplify(&Expr::neg(a)),
                (Some(x), None) => merge_factor(x, b),
                (None, Some(y)) => merge_factor(y, a),
                _ => match (a, b) {
                    (Neg(na), Neg(nb)) => Expr::mul(*na, *nb),
                    (Neg(na), b) => simplify(&Expr::neg(Expr::mul(*na, b))),
                    (a, Neg(nb)) => simplify(&Expr::neg(Expr::mul(a, *nb))),
                    (a, b) => Expr::mul(a, b),
                },
            }
        }
        Div(a, b) => {
            let (a, b) = (simplify(a), simplify(b));
            match (as_num(&a), as_num(&b)) {
                (Some(x), Some(y)) if y != 0.0 => Num(x / y),
                (Some(x), _) if x == 0.0 => Num(0.0),
                (_, Some(y)) if y == 1.0 => a,
                (_, Some(y)) if y != 0.0 => merge_factor(1.0 / y, a),
                _ if a == b => Num(1.0),
                _ => Expr::div(a, b),
            }
        }
        Pow(a, b) => {
            let (a, b) = (simplify(a), simplify(b));
            match (as_num(&a), as_num(&b)) {
                (Some(x), Some(y)) => {
                    let v = x.powf(y);
                    if v.is_finite() {
                        Num(v)
                    } else {
                        Expr::pow(a, b)
                    }
                }
                (_, Some(y)) if y == 0.0 => Num(1.0),
                (_, Some(y)) if y == 1.0 => a,
                (Some(x), _) if x == 1.0 => Num(1.0),
                _ => match a {
                    // (u^p)^q = u^(pq) holds wherever u^p is defined when q is an integer
                    Pow(ref base, ref p)
                        if as_num(p).is_some() && as_num(&b).is_some_and(|q| q == q.round()) =>
                    {
                        let pq = as_num(p).unwrap() * as_num(&b).unwrap();
                        simplify(&Expr::pow((**base).clone(), Num(pq)))
                    }
                    _ => Expr::pow(a, b),
                },
            }
        }
        Call(f, a) => {
            let a = simplify(a);
            if let Some(v) = as_num(&a) {
                if let Ok(r) = f.apply(v) {
                    return Num(r);
                }
            }
            Expr::call(*f, a)
        }
    }
}

fn merge_factor(c: f64, e: Expr) -> Expr {
    match e {
        Expr::Mul(l, r) => match (as_num(&l), as_num(&r)) {
            (Some(x), _) => simplify(&Expr::mul(Expr::Num(c * x), *r)),
            (_, Some(y)) => simplify(&Expr::mul(Expr::Num(c * y), *l)),
            _ => Expr::mul(Expr::Num(c), Expr::Mul(l, r)),
        },
        Expr::Neg(inner) => merge_factor(-c, *inner),
        other => Expr::mul(Expr::Num(c), other),
    }
}

#[cfg(test)]
mod tests {
    use super::super::expr::{parse_expr, Env};
    use super::*;

    fn d_at(src: &str, t: f64) -> f64 {
        diff_expr(&parse_expr(src).unwrap(), Var::T)
            .eval_t(t)
            .unwrap()
    }

    #[test]
    fn spec_examples() {
        assert_eq!(d_at("exp(2*t)", 0.0), 2.0);
        let quartic = parse_expr("t^4").unwrap();
        assert_eq!(diff_n(&quartic, Var::T, 4), Expr::Num(24.0));
        assert_eq!(diff_n(&quartic, Var::T, 5), Expr::Num(0.0));
        let poly = "16*t^5 - 20*t^3 + 5*t";
        assert_eq!(d_at(poly, 0.0), 5.0);
        let e = parse_expr(poly).unwrap();
        let h = 1e-5;
        let fd = (e.eval_t(h).unwrap() - e.eval_t(-h).unwrap()) / (2.0 * h);
        assert!((fd - 5.0).abs() < 1e-8);
    }

    #[test]
    fn elementary_rules() {
        let t = 0.7_f64;
        assert!((d_at("ln(t)", t) - 1.0 / t).abs() < 1e-15);
        assert!((d_at("sin(3*t)", t) - 3.0 * (3.0 * t).cos()).abs() < 1e-14);
        assert!((d_at("cos(t)", t) + t.sin()).abs() < 1e-15);
        assert!((d_at("sqrt(t)", t) - 0.5 / t.sqrt()).abs() < 1e-15);
        assert!((d_at("t^t", t) - t.powf(t) * (t.ln() + 1.0)).abs() < 1e-14);
        assert!((d_at("2^t", t) - 2f64.powf(t) * 2f64.ln()).abs() < 1e-14);
        assert!((d_at("1/(1+t^2)", t) + 2.0 * t / (1.0 + t * t).powi(2)).abs() < 1e-14);
        assert!((d_at("t^1.5", t) - 1.5 * t.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn partial_derivatives_of_lagrangian() {
        let l = parse_expr("(Dx - t)^2 + x*xp^2").unwrap();
        let env = Env {
            t: 0.5,
            x: 2.0,
            xp: 3.0,
            dx: 1.5,
            ..Default::default()
        };
        assert_eq!(diff_expr(&l, Var::Dx).eval(&env).unwrap(), 2.0);
        assert_eq!(diff_expr(&l, Var::X).eval(&env).unwrap(), 9.0);
        assert_eq!(diff_expr(&l, Var::Xp).eval(&env).unwrap(), 12.0);
        let ldd = diff_expr(&diff_expr(&l, Var::Dx), Var::Dx);
        assert_eq!(ldd, Expr::Num(2.0));
    }

    #[test]
    fn simplify_folds_constants() {
        let e = parse_expr("0*t + 1*x - (2 + 3) + t^1 + x^0").unwrap();
        let s = simplify(&e);
        assert_eq!(s, parse_expr("x - 5 + t + 1").unwrap());
        assert_eq!(simplify(&parse_expr("t - t").unwrap()), Expr::Num(0.0));
        assert_eq!(simplify(&parse_expr("--t").unwrap()), Expr::Var(Var::T));
        assert_eq!(
            simplify(&parse_expr("2*(3*t)").unwrap()),
            parse_expr("6*t").unwrap()
        );
        assert_eq!(simplify(&parse_expr("ln(1)").unwrap()), Expr::Num(0.0));
        // an undefined constant stays symbolic
        assert_eq!(
            simplify(&parse_expr("ln(0)").unwrap()),
            parse_expr("ln(0)").unwrap()
        );
    }

    #[test]
    fn simplification_preserves_values() {
        let srcs = [
            "t^3*exp(-t) - 2/(t+1)",
            "(x - t^2)^2 + (u - 1)^2*sqrt(t)",
            "-(2*t)*(-(3*x))",
            "(t^2)^3 - t^6",
            "cos(pi*t)/(2 - -t)",
        ];
        for src in srcs {
            let e = parse_expr(src).unwrap();
            let s = simplify(&e);
            for k in 1..8 {
                let env = Env {
                    t: 0.3 * k as f64,
                    x: 1.0 - 0.2 * k as f64,
                    u: 0.1 * k as f64,
                    ..Default::default()
                };
                let (a, b) = (e.eval(&env).unwrap(), s.eval(&env).unwrap());
                assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0), "{src}");
            }
        }
    }
}
