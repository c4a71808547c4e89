//! Scalar expressions over chart coordinates `x1..xn` and velocities `v1..vn`,
//! evaluated over any [`Real`] (plain floats or nested dual numbers).

pub mod dual;
mod parse;

use std::fmt;

pub use dual::{Dual, Real};
pub use parse::parse;

use crate::error::{Error, Result};

/// A positional variable: chart coordinate `x{i+1}` or velocity `v{i+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    Position(usize),
    Velocity(usize),
}

impl Var {
    /// Slot in the packed `(x, v)` vector of a dimension-`n` system.
    pub fn slot(self, n: usize) -> usize {
        match self {
            Var::Position(i) => i,
            Var::Velocity(i) => n + i,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Expression tree. Exponents of [`ExprNode::Pow`] are real constants.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprNode {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Box<ExprNode>),
    Binary(BinaryOp, Box<ExprNode>, Box<ExprNode>),
    Pow(Box<ExprNode>, f64),
}

impl ExprNode {
    pub fn constant(c: f64) -> Self {
        ExprNode::Const(c)
    }

    pub fn sum(a: ExprNode, b: ExprNode) -> Self {
        ExprNode::Binary(BinaryOp::Add, Box::new(a), Box::new(b))
    }

    pub fn difference(a: ExprNode, b: ExprNode) -> Self {
        ExprNode::Binary(BinaryOp::Sub, Box::new(a), Box::new(b))
    }

    pub fn product(a: ExprNode, b: ExprNode) -> Self {
        ExprNode::Binary(BinaryOp::Mul, Box::new(a), Box::new(b))
    }

    /// Largest position/velocity index used, as `(max x index + 1, max v index + 1)`.
    pub fn extent(&self) -> (usize, usize) {
        match self {
            ExprNode::Const(_) => (0, 0),
            ExprNode::Var(Var::Position(i)) => (i + 1, 0),
            ExprNode::Var(Var::Velocity(i)) => (0, i + 1),
            ExprNode::Unary(_, a) | ExprNode::Pow(a, _) => a.extent(),
            ExprNode::Binary(_, a, b) => {
                let (ax, av) = a.extent();
                let (bx, bv) = b.extent();
                (ax.max(bx), av.max(bv))
            }
        }
    }

    pub fn uses_velocity(&self) -> bool {
        self.extent().1 > 0
    }

    pub fn is_constant(&self) -> bool {
        self.extent() == (0, 0)
    }

    /// Evaluate at chart point `x` and velocity `v` (either may be shorter than
    /// `n` if the expression does not reference the missing slots).
    pub fn eval<T: Real>(&self, x: &[T], v: &[T]) -> Result<T> {
        match self {
            ExprNode::Const(c) => Ok(T::cst(*c)),
            ExprNode::Var(Var::Position(i)) => x
                .get(*i)
                .copied()
                .ok_or_else(|| Error::InvalidParameter(format!("x{} not supplied", i + 1))),
            ExprNode::Var(Var::Velocity(i)) => v
                .get(*i)
                .copied()
                .ok_or_else(|| Error::InvalidParameter(format!("v{} not supplied", i + 1))),
            ExprNode::Unary(op, a) => {
                let a_val = a.eval(x, v)?;
                let av = a_val.value();
                match op {
                    UnaryOp::Neg => Ok(-a_val),
                    UnaryOp::Sin => Ok(a_val.sin()),
                    UnaryOp::Cos => Ok(a_val.cos()),
                    UnaryOp::Exp => Ok(a_val.exp()),
                    UnaryOp::Log => {
                        if av <= 0.0 || !av.is_finite() {
                            return Err(self.domain(format!("log of non-positive value {av}")));
                        }
                        Ok(a_val.ln())
                    }
                    UnaryOp::Sqrt => {
                        if av < 0.0 || !av.is_finite() {
                            return Err(self.domain(format!("sqrt of negative value {av}")));
                        }
                        if av == 0.0 && T::ORDER > 0 {
                            return Err(self.domain("sqrt is not differentiable at 0".into()));
                        }
                        Ok(a_val.sqrt())
                    }
                }
            }
            ExprNode::Binary(op, a, b) => {
                let a = a.eval(x, v)?;
                let b = b.eval(x, v)?;
                match op {
                    BinaryOp::Add => Ok(a + b),
                    BinaryOp::Sub => Ok(a - b),
                    BinaryOp::Mul => Ok(a * b),
                    BinaryOp::Div => {
                        if b.value() == 0.0 {
                            return Err(self.domain("division by zero".into()));
                        }
                        Ok(a / b)
                    }
                }
            }
            ExprNode::Pow(a, e) => {
                let a = a.eval(x, v)?;
                let av = a.value();
                let integral = e.fract() == 0.0;
                if av < 0.0 && !integral {
                    return Err(self.domain(format!("non-integer power of negative value {av}")));
                }
                if av == 0.0 && *e < 0.0 {
                    return Err(self.domain("negative power of zero".into()));
                }
                if av == 0.0 && T::ORDER > 0 && !integral && *e < T::ORDER as f64 {
                    return Err(self.domain("fractional power is not differentiable at 0".into()));
                }
                Ok(a.powf(*e))
            }
        }
    }

    /// Evaluate on a packed point `(x1..xn, v1..vn)`.
    pub fn eval_packed<T: Real>(&self, point: &[T], n: usize) -> Result<T> {
        let n = n.min(point.len());
        self.eval(&point[..n], &point[n..])
    }

    fn domain(&self, reason: String) -> Error {
        Error::Domain {
            node: self.to_string(),
            reason,
        }
    }
}

fn fmt_number(c: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if c < 0.0 || (c == 0.0 && c.is_sign_negative()) {
        write!(f, "(-{:?})", -c)
    } else {
        write!(f, "{c:?}")
    }
}

/// Fully parenthesized form that re-parses to the same tree.
impl fmt::Display for ExprNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprNode::Const(c) => fmt_number(*c, f),
            ExprNode::Var(Var::Position(i)) => write!(f, "x{}", i + 1),
            ExprNode::Var(Var::Velocity(i)) => write!(f, "v{}", i + 1),
            ExprNode::Unary(op, a) => {
                let name = match op {
                    UnaryOp::Neg => return write!(f, "(-{a})"),
                    UnaryOp::Sin => "sin",
                    UnaryOp::Cos => "cos",
                    UnaryOp::Exp => "exp",
                    UnaryOp::Log => "log",
                    UnaryOp::Sqrt => "sqrt",
                };
                write!(f, "{name}({a})")
            }
            ExprNode::Binary(op, a, b) => {
                let sym = match op {
                    BinaryOp::Add => "+",
                    BinaryOp::Sub => "-",
                    BinaryOp::Mul => "*",
                    BinaryOp::Div => "/",
                };
                write!(f, "({a} {sym} {b})")
            }
            ExprNode::Pow(a, e) => {
                write!(f, "({a}^")?;
                fmt_number(*e, f)?;
                write!(f, ")")
            }
        }
    }
}

/// Value with first (and optionally second) partial derivatives along the
/// requested directions of the packed `(x, v)` point.
#[derive(Debug, Clone, PartialEq)]
pub struct DualScalar {
    pub value: f64,
    pub first: Vec<f64>,
    pub second: Option<Vec<Vec<f64>>>,
}

/// Evaluate `e` at packed `point` (length `2n`) with exact derivatives along
/// `directions` (indices into the packed point). `order` is 1 or 2.
pub fn eval_dual(
    e: &ExprNode,
    point: &[f64],
    directions: &[usize],
    order: u8,
) -> Result<DualScalar> {
    if !point.len().is_multiple_of(2) {
        return Err(Error::InvalidParameter(
            "packed point must have even length 2n".into(),
        ));
    }
    if !(1..=2).contains(&order) {
        return Err(Error::InvalidParameter(format!(
            "order must be 1 or 2, got {order}"
        )));
    }
    if let Some(p) = point.iter().find(|p| !p.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "non-finite point component {p}"
        )));
    }
    if let Some(&d) = directions.iter().find(|&&d| d >= point.len()) {
        return Err(Error::InvalidParameter(format!(
            "direction {d} out of range for a point of length {}",
            point.len()
        )));
    }
    let n = point.len() / 2;
    let value = e.eval_packed(point, n)?;
    let mut first = Vec::with_capacity(directions.len());
    for &d in directions {
        let p = dual::seed(point, Some(d));
        first.push(e.eval_packed(&p, n)?.eps);
    }
    let second = if order == 2 {
        let k = directions.len();
        let mut h = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in a..k {
                let p: Vec<Dual<Dual<f64>>> = point
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let inner = if i == directions[b] {
                            Dual::variable(x)
                        } else {
                            Dual::constant(x)
                        };
                        let outer_eps = if i == directions[a] { 1.0 } else { 0.0 };
                        Dual::new(inner, Dual::constant(outer_eps))
                    })
                    .collect();
                let r = e.eval_packed(&p, n)?;
                h[a][b] = r.eps.eps;
                h[b][a] = r.eps.eps;
            }
        }
        Some(h)
    } else {
        None
    };
    Ok(DualScalar {
        value,
        first,
        second,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_difference(e: &ExprNode, point: &[f64], d: usize, h: f64) -> f64 {
        let n = point.len() / 2;
        let mut p = point.to_vec();
        p[d] += h;
        let fp = e.eval_packed(&p, n).unwrap();
        p[d] -= 2.0 * h;
        let fm = e.eval_packed(&p, n).unwrap();
        (fp - fm) / (2.0 * h)
    }

    #[test]
    fn half_kinetic_energy() {
        let e = parse("0.5*(v1^2+v2^2)", 2).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn sine_derivative_at_zero() {
        let e = parse("sin(x1)", 1).unwrap();
        let d = eval_dual(&e, &[0.0, 0.0], &[0], 1).unwrap();
        assert_eq!(d.value, 0.0);
        assert_eq!(d.first, vec![1.0]);
    }

    #[test]
    fn product_gradient() {
        let e = parse("x1*x2", 2).unwrap();
        let d = eval_dual(&e, &[2.0, 3.0, 0.0, 0.0], &[0, 1], 1).unwrap();
        assert_eq!(d.first, vec![3.0, 2.0]);
    }

    #[test]
    fn exp_square_matches_central_difference() {
        let e = parse("exp(x1^2)", 1).unwrap();
        let point = [0.7, 0.0];
        let d = eval_dual(&e, &point, &[0], 1).unwrap();
        let fd = central_difference(&e, &point, 0, 1e-5);
        assert!(((d.first[0] - fd) / fd).abs() < 1e-6);
        // Closed form: 2x exp(x^2).
        assert!((d.first[0] - 1.4 * 0.49_f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn hessian_is_symmetric_and_exact() {
        let e = parse("x1^2*v1 + sin(x1*v1)", 1).unwrap();
        let (x, v) = (0.4_f64, -1.3_f64);
        let d = eval_dual(&e, &[x, v], &[0, 1], 2).unwrap();
        let h = d.second.unwrap();
        // d2/dx dv = 2x + cos(xv) - xv sin(xv)
        let expected = 2.0 * x + (x * v).cos() - x * v * (x * v).sin();
        assert!((h[0][1] - expected).abs() < 1e-14);
        assert_eq!(h[0][1], h[1][0]);
        // d2/dv2 = -x^2 sin(xv)
        assert!((h[1][1] + x * x * (x * v).sin()).abs() < 1e-14);
    }

    #[test]
    fn domain_errors_name_the_node() {
        let e = parse("1 + log(x1 - 1)", 1).unwrap();
        match e.eval(&[0.5], &[]).unwrap_err() {
            Error::Domain { node, .. } => assert_eq!(node, "log((x1 - 1.0))"),
            other => panic!("unexpected {other:?}"),
        }
        let e = parse("sqrt(x1)", 1).unwrap();
        assert!(matches!(e.eval(&[-1.0], &[]), Err(Error::Domain { .. })));
        let e = parse("1/x1", 1).unwrap();
        assert!(matches!(e.eval(&[0.0], &[]), Err(Error::Domain { .. })));
        let e = parse("x1^0.5", 1).unwrap();
        assert!(matches!(e.eval(&[-1.0], &[]), Err(Error::Domain { .. })));
    }

    #[test]
    fn eval_dual_rejects_bad_directions() {
        let e = parse("x1", 1).unwrap();
        assert!(eval_dual(&e, &[0.0, 0.0], &[2], 1).is_err());
        assert!(eval_dual(&e, &[f64::NAN, 0.0], &[0], 1).is_err());
        assert!(eval_dual(&e, &[0.0, 0.0], &[0], 3).is_err());
    }

    #[test]
    fn printer_round_trips() {
        for src in [
            "x1^2 + x2^2",
            "-x1^2 - (-3.5)*v2",
            "sqrt(v1^2 + v2^2 + 0.1*(v1^4+v2^4)^0.5)",
            "x1^(-1) / 2e-7",
            "exp(-x1) * cos sin x2",
        ] {
            let a = parse(src, 2).unwrap();
            let b = parse(&a.to_string(), 2).unwrap();
            assert_eq!(a, b, "round trip of {src} via {a}");
        }
    }

    #[test]
    fn extent_reports_used_slots() {
        let e = parse("x2 * v1", 3).unwrap();
        assert_eq!(e.extent(), (2, 1));
        assert!(e.uses_velocity());
        assert!(parse("3", 1).unwrap().is_constant());
    }
}
