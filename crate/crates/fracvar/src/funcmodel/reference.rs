//! Closed-form fractional derivatives and integrals of a closed set of probe
//! functions.

use statrs::function::gamma::gamma_lr;

use super::expr::{Expr, Func, Var};
use super::symbolic::simplify;
use super::FunctionModel;
use crate::special::{gamma_ratio, mittag_leffler, rgamma};
use crate::{Error, Result};

/// Which operator the oracle evaluates. All are left-sided with base point
/// `a`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefFamily {
    RlDeriv,
    RlIntegral,
    CaputoDeriv,
    HadamardDeriv,
    HadamardIntegral,
}

impl RefFamily {
    fn is_hadamard(self) -> bool {
        matches!(self, RefFamily::HadamardDeriv | RefFamily::HadamardIntegral)
    }
}

/// Probe functions with known fractional operators.
///
/// For the Riemann–Liouville and Caputo families `Power(ν)` is `(t−a)^ν`;
/// for the Hadamard families it is `t^ν` (ν > 0) and `LogPower(ν)` is
/// `(ln(t/a))^ν`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Probe {
    Power(f64),
    Exp(f64),
    Constant(f64),
    LogPower(f64),
}

fn unsupported<T>(family: RefFamily, probe: Probe) -> Result<T> {
    Err(Error::Unsupported(format!(
        "no closed form for {probe:?} under {family:?}"
    )))
}

/// Closed-form value of the operator `family` of order `alpha` applied to
/// `probe`, at `t > base`.
///
/// ```
/// use fracvar::funcmodel::{reference_frac_op, Probe, RefFamily};
/// let v = reference_frac_op(RefFamily::RlDeriv, 0.5, 0.0, Probe::Power(2.0), 1.0).unwrap();
/// assert!((v - 1.5045).abs() < 1e-4);
/// ```
pub fn reference_frac_op(
    family: RefFamily,
    alpha: f64,
    base: f64,
    probe: Probe,
    t: f64,
) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!(
            "order must be positive, got {alpha}"
        )));
    }
    if !(t > base) {
        return Err(Error::Domain(format!(
            "oracle evaluated at t = {t}, not to the right of the base point {base}"
        )));
    }
    let sgn = match family {
        RefFamily::RlIntegral | RefFamily::HadamardIntegral => 1.0,
        _ => -1.0,
    };
    if family.is_hadamard() {
        if !(base > 0.0) {
            return Err(Error::Domain(
                "Hadamard operators need a positive base point".into(),
            ));
        }
        let l = (t / base).ln();
        return match probe {
            Probe::Constant(c) => Ok(c * l.powf(sgn * alpha) * rgamma(1.0 + sgn * alpha)),
            Probe::LogPower(nu) => {
                Ok(gamma_ratio(nu + 1.0, nu + 1.0 + sgn * alpha)? * l.powf(nu + sgn * alpha))
            }
            Probe::Power(k) if k > 0.0 => {
                let kl = k * l;
                let tk = t.powf(k);
                if family == RefFamily::HadamardIntegral {
                    Ok(tk * k.powf(-alpha) * gamma_lr(alpha, kl))
                } else {
                    if alpha >= 1.0 {
                        return unsupported(family, probe);
                    }
                    Ok(tk
                        * (k.powf(alpha) * gamma_lr(1.0 - alpha, kl)
                            + l.powf(-alpha) * (-kl).exp() * rgamma(1.0 - alpha)))
                }
            }
            _ => unsupported(family, probe),
        };
    }

    let s = t - base;
    let rl = |probe: Probe| -> Result<f64> {
        match probe {
            Probe::Constant(c) => Ok(c * s.powf(sgn * alpha) * rgamma(1.0 + sgn * alpha)),
            Probe::Power(nu) if nu > -1.0 => {
                Ok(gamma_ratio(nu + 1.0, nu + 1.0 + sgn * alpha)? * s.powf(nu + sgn * alpha))
            }
            Probe::Exp(lambda) => {
                let beta = 1.0 + sgn * alpha;
                if beta <= 0.0 {
                    return unsupported(family, probe);
                }
                Ok((lambda * base).exp()
                    * s.powf(sgn * alpha)
                    * mittag_leffler(1.0, beta, lambda * s)?)
            }
            _ => unsupported(family, probe),
        }
    };
    match family {
        RefFamily::RlDeriv | RefFamily::RlIntegral => rl(probe),
        RefFamily::CaputoDeriv => {
            if alpha >= 1.0 {
                return unsupported(family, probe);
            }
            let x_a = match probe {
                Probe::Constant(c) => c,
                Probe::Power(nu) if nu == 0.0 => 1.0,
                Probe::Power(nu) if nu > 0.0 => 0.0,
                Probe::Exp(lambda) => (lambda * base).exp(),
                _ => return unsupported(family, probe),
            };
            Ok(rl(probe)? - x_a * s.powf(-alpha) * rgamma(1.0 - alpha))
        }
        _ => unreachable!(),
    }
}

/// Writes `e` as a finite linear combination of probes, if it has one of
/// the recognised shapes (sums and numeric multiples of powers of `t` or
/// `t − a`, `exp(λt)`, constants, `ln t` and its powers).
pub fn decompose_probes(e: &Expr, family: RefFamily, base: f64) -> Option<Vec<(f64, Probe)>> {
    let e = simplify(e);
    let mut out = Vec::new();
    collect(&e, 1.0, family, base, &mut out)?;
    Some(out)
}

fn num(e: &Expr) -> Option<f64> {
    match e {
        Expr::Num(v) => Some(*v),
        Expr::Pi => Some(std::f64::consts::PI),
        _ => None,
    }
}

fn is_t(e: &Expr) -> bool {
    matches!(e, Expr::Var(Var::T))
}

fn power_of_t(
    nu: f64,
    coef: f64,
    family: RefFamily,
    base: f64,
    out: &mut Vec<(f64, Probe)>,
) -> Option<()> {
    if family.is_hadamard() || base == 0.0 {
        out.push((coef, Probe::Power(nu)));
        return Some(());
    }
    // t^m = Σ C(m,j) a^(m−j) (t−a)^j for integer m ≥ 0
    if nu < 0.0 || nu != nu.round() || nu > 30.0 {
        return None;
    }
    let m = nu as usize;
    let mut binom = 1.0;
    for j in 0..=m {
        if j > 0 {
            binom = binom * (m - j + 1) as f64 / j as f64;
        }
        out.push((
            coef * binom * base.powi((m - j) as i32),
            Probe::Power(j as f64),
        ));
    }
    Some(())
}

fn collect(
    e: &Expr,
    coef: f64,
    family: RefFamily,
    base: f64,
    out: &mut Vec<(f64, Probe)>,
) -> Option<()> {
    if let Some(c) = num(e) {
        out.push((coef * c, Probe::Constant(1.0)));
        return Some(());
    }
    match e {
        Expr::Add(a, b) => {
            collect(a, coef, family, base, out)?;
            collect(b, coef, family, base, out)
        }
        Expr::Sub(a, b) => {
            collect(a, coef, family, base, out)?;
            collect(b, -coef, family, base, out)
        }
        Expr::Neg(a) => collect(a, -coef, family, base, out),
        Expr::Mul(a, b) => match (num(a), num(b)) {
            (Some(c), _) => collect(b, coef * c, family, base, out),
            (_, Some(c)) => collect(a, coef * c, family, base, out),
            _ => None,
        },
        Expr::Div(a, b) => collect(a, coef / num(b)?, family, base, out),
        Expr::Var(Var::T) => power_of_t(1.0, coef, family, base, out),
        Expr::Pow(a, b) => {
            let nu = num(b)?;
            if is_t(a) {
                return power_of_t(nu, coef, family, base, out);
            }
            if let Expr::Sub(l, r) = &**a {
                if is_t(l) && num(r) == Some(base) && !family.is_hadamard() {
                    out.push((coef, Probe::Power(nu)));
                    return Some(());
                }
            }
            if let Expr::Call(Func::Ln, inner) = &**a {
                if is_t(inner) && family.is_hadamard() && base == 1.0 {
                    out.push((coef, Probe::LogPower(nu)));
                    return Some(());
                }
            }
            None
        }
        Expr::Call(Func::Sqrt, a) if is_t(a) => power_of_t(0.5, coef, family, base, out),
        Expr::Call(Func::Exp, a) if !family.is_hadamard() => {
            let lambda = match &**a {
                Expr::Var(Var::T) => 1.0,
                Expr::Neg(inner) if is_t(inner) => -1.0,
                Expr::Mul(l, r) if is_t(r) => num(l)?,
                Expr::Mul(l, r) if is_t(l) => num(r)?,
                _ => return None,
            };
            out.push((coef, Probe::Exp(lambda)));
            Some(())
        }
        Expr::Call(Func::Ln, a) if is_t(a) && family.is_hadamard() => {
            // ln t = ln(t/a) + ln a
            out.push((coef, Probe::LogPower(1.0)));
            out.push((coef * base.ln(), Probe::Constant(1.0)));
            Some(())
        }
        Expr::Call(Func::Sqrt, a) => match &**a {
            Expr::Call(Func::Ln, inner) if is_t(inner) && family.is_hadamard() && base == 1.0 => {
                out.push((coef, Probe::LogPower(0.5)));
                Some(())
            }
            _ => None,
        },
        _ => None,
    }
}

/// Oracle for any expression [`decompose_probes`] understands.
pub fn reference_for_expr(
    family: RefFamily,
    alpha: f64,
    base: f64,
    e: &Expr,
    t: f64,
) -> Result<f64> {
    let terms = decompose_probes(e, family, base)
        .ok_or_else(|| Error::Unsupported(format!("no closed-form oracle for `{e}`")))?;
    let mut acc = 0.0;
    for (c, p) in terms {
        acc += c * reference_frac_op(family, alpha, base, p, t)?;
    }
    Ok(acc)
}

/// Exact Riemann–Liouville (or Caputo) operators of a polynomial model,
/// from its Taylor coefficients at the relevant endpoint.
///
/// Left side (`right = false`) expands about `endpoint = a`:
/// `Σ_k x^(k)(a) (t−a)^(k∓α) / Γ(k+1∓α)`. The right side expands about
/// `endpoint = b` with an extra `(−1)^k`. `integral` selects `I^α`;
/// `caputo` drops the terms with `k < ⌈α⌉`.
pub fn polynomial_reference(
    model: &FunctionModel,
    alpha: f64,
    endpoint: f64,
    right: bool,
    integral: bool,
    caputo: bool,
    t: f64,
) -> Result<f64> {
    let order = model.vanishing_order().ok_or_else(|| {
        Error::Unsupported("polynomial oracle needs a polynomial expression model".into())
    })?;
    let model = if model.n_max() + 1 < order {
        model.with_order(order)?
    } else {
        model.clone()
    };
    let s = if right { endpoint - t } else { t - endpoint };
    if !(s > 0.0) {
        return Err(Error::Domain(format!(
            "polynomial oracle evaluated at the endpoint or outside (t = {t})"
        )));
    }
    let sgn = if integral { 1.0 } else { -1.0 };
    let skip = if caputo && !integral {
        alpha.ceil() as usize
    } else {
        0
    };
    let mut acc = 0.0;
    for k in skip..order {
        let dk = model.deriv(k, endpoint)?;
        let sign = if right && k % 2 == 1 { -1.0 } else { 1.0 };
        let kf = k as f64;
        acc += sign * dk * s.powf(kf + sgn * alpha) * rgamma(kf + 1.0 + sgn * alpha);
    }
    Ok(acc)
}
