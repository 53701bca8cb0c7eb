use std::fmt;

use super::{BinaryOp, Expr, UnaryOp, VarList};

/// Formats an [`Expr`] in the input grammar, inserting only the parentheses
/// needed to reproduce the same tree when parsed again.
pub struct Printer<'a> {
    expr: &'a Expr,
    vars: &'a VarList,
}

const SUM: u8 = 1;
const PRODUCT: u8 = 2;
const FACTOR: u8 = 3;
const ATOM: u8 = 4;

impl<'a> Printer<'a> {
    pub(super) fn new(expr: &'a Expr, vars: &'a VarList) -> Self {
        Self { expr, vars }
    }

    fn level(e: &Expr) -> u8 {
        match e {
            Expr::Const(c) if c.is_sign_negative() => FACTOR,
            Expr::Const(_) | Expr::Var(_) | Expr::Trial(_) => ATOM,
            Expr::Unary(UnaryOp::Neg, _) => FACTOR,
            Expr::Unary(..) => ATOM,
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => SUM,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => PRODUCT,
            Expr::Binary(BinaryOp::Pow, ..) => FACTOR,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
        if Self::level(e) < min {
            write!(f, "(")?;
            self.write(f, e)?;
            write!(f, ")")
        } else {
            self.write(f, e)
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
        match e {
            Expr::Const(c) if c.is_sign_negative() => write!(f, "-{}", -c),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(v) => write!(f, "{}", self.vars.name(*v)),
            Expr::Trial(tag) => {
                let mut order = Vec::new();
                for (v, &n) in tag.counts().iter().enumerate() {
                    order.extend(std::iter::repeat_n(v, n as usize));
                }
                for _ in &order {
                    write!(f, "D(")?;
                }
                write!(f, "u")?;
                for v in order {
                    write!(f, ",{})", self.vars.name(v))?;
                }
                Ok(())
            }
            Expr::Unary(UnaryOp::Neg, a) => {
                write!(f, "-")?;
                // `-a^k` parses as the negation of the power
                let min = if matches!(**a, Expr::Binary(BinaryOp::Pow, ..)) {
                    FACTOR
                } else {
                    ATOM
                };
                self.write_at(f, a, min)
            }
            Expr::Unary(op, a) => {
                write!(f, "{}(", op.name())?;
                self.write(f, a)?;
                write!(f, ")")
            }
            Expr::Binary(op, a, b) => {
                let (sym, lmin, rmin) = match op {
                    BinaryOp::Add => (" + ", SUM, PRODUCT),
                    BinaryOp::Sub => (" - ", SUM, PRODUCT),
                    BinaryOp::Mul => ("*", PRODUCT, FACTOR),
                    BinaryOp::Div => ("/", PRODUCT, FACTOR),
                    BinaryOp::Pow => ("^", ATOM, ATOM),
                };
                self.write_at(f, a, lmin)?;
                write!(f, "{sym}")?;
                self.write_at(f, b, rmin)
            }
        }
    }
}

impl fmt::Display for Printer<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, self.expr)
    }
}
