//! Expression language for PDE forms and the functions that accompany them
//! (boundary values, initial states, source terms).
//!
//! Expressions are immutable trees. Derivative tokens `D(e, v)` are resolved
//! while parsing, so a parsed tree never contains an unevaluated derivative:
//! derivatives of the unknown appear as [`Expr::Trial`] leaves carrying a
//! [`MultiIndex`].

mod parser;
mod print;

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

pub use parser::parse;
pub use print::Printer;

/// Largest total derivative order over spatial variables.
pub const MAX_SPATIAL_ORDER: u32 = 3;
/// Largest derivative order in the time variable.
pub const MAX_TIME_ORDER: u32 = 2;
/// Name reserved for the evolution variable.
pub const TIME_VAR: &str = "t";

const RESERVED: &[&str] = &["u", "D", "pi", "sin", "cos", "exp", "log", "sqrt"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at {pos}")]
    UnknownIdent { name: String, pos: usize },
    #[error("second argument of D at {pos} must be a variable name")]
    DerivativeTarget { pos: usize },
    #[error("derivative order limit exceeded: {0}")]
    OrderLimit(String),
    #[error("invalid variable list: {0}")]
    Vars(String),
    #[error("{op} domain error (argument {arg}) at node {path}")]
    Domain { op: &'static str, arg: f64, path: String },
    #[error("variable index {0} has no value")]
    MissingVar(usize),
}

/// Ordered variable names of a problem. `t` is the evolution variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarList {
    names: Vec<String>,
}

impl VarList {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self, ExprError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(names.len());
        for n in names {
            let n = n.as_ref();
            let valid = n.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid {
                return Err(ExprError::Vars(format!("`{n}` is not an identifier")));
            }
            if RESERVED.contains(&n) {
                return Err(ExprError::Vars(format!("`{n}` is a reserved name")));
            }
            if !seen.insert(n.to_string()) {
                return Err(ExprError::Vars(format!("`{n}` declared twice")));
            }
            out.push(n.to_string());
        }
        if out.is_empty() {
            return Err(ExprError::Vars("no variables".into()));
        }
        Ok(Self { names: out })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn time_index(&self) -> Option<usize> {
        self.index_of(TIME_VAR)
    }

    pub fn is_evolution(&self) -> bool {
        self.time_index().is_some()
    }
}

/// Per-variable derivative counts. Stored as counts, so mixed partials taken
/// in different orders share one representation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u8>);

impl MultiIndex {
    pub fn zero(nvars: usize) -> Self {
        Self(vec![0; nvars])
    }

    pub fn from_counts(counts: Vec<u8>) -> Self {
        Self(counts)
    }

    pub fn unit(nvars: usize, var: usize) -> Self {
        let mut m = Self::zero(nvars);
        m.0[var] = 1;
        m
    }

    pub fn counts(&self) -> &[u8] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn order(&self) -> u32 {
        self.0.iter().map(|&c| c as u32).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn bump(&self, var: usize) -> Self {
        let mut m = self.clone();
        m.0[var] += 1;
        m
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `self <= other` componentwise.
    pub fn le(&self, other: &Self) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// α! = Π αᵢ!
    pub fn factorial(&self) -> f64 {
        self.0
            .iter()
            .map(|&c| (1..=c as u32).map(f64::from).product::<f64>())
            .product()
    }

    /// Checks the order caps, treating `time` as the evolution variable.
    pub fn check_caps(&self, time: Option<usize>) -> Result<(), ExprError> {
        let time_order = time.map_or(0, |t| self.0[t] as u32);
        let spatial = self.order() - time_order;
        if spatial > MAX_SPATIAL_ORDER {
            return Err(ExprError::OrderLimit(format!(
                "spatial order {spatial} exceeds {MAX_SPATIAL_ORDER}"
            )));
        }
        if time_order > MAX_TIME_ORDER {
            return Err(ExprError::OrderLimit(format!(
                "time order {time_order} exceeds {MAX_TIME_ORDER}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Neg,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Neg => "neg",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            _ => return None,
        })
    }

    /// Applies the op, returning `None` outside its real domain.
    pub fn apply(self, a: f64) -> Option<f64> {
        match self {
            UnaryOp::Sin => Some(a.sin()),
            UnaryOp::Cos => Some(a.cos()),
            UnaryOp::Exp => Some(a.exp()),
            UnaryOp::Log => (a > 0.0).then(|| a.ln()),
            UnaryOp::Sqrt => (a >= 0.0).then(|| a.sqrt()),
            UnaryOp::Neg => Some(-a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    /// Right operand is always a constant integer in `0..=4`.
    Pow,
}

impl BinaryOp {
    pub fn apply(self, a: f64, b: f64) -> Option<f64> {
        match self {
            BinaryOp::Add => Some(a + b),
            BinaryOp::Sub => Some(a - b),
            BinaryOp::Mul => Some(a * b),
            BinaryOp::Div => (b != 0.0).then(|| a / b),
            BinaryOp::Pow => Some(a.powi(b as i32)),
        }
    }
}

/// Largest exponent accepted by `^`.
pub const MAX_POW: u32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    /// Derivative of the unknown; the empty multi-index is the unknown itself.
    Trial(MultiIndex),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

// Folding constructors. Every rule is idempotent on its own output, which is
// what makes printing and re-parsing reproduce the same tree.
impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn var(i: usize) -> Self {
        Expr::Var(i)
    }

    pub fn trial(tag: MultiIndex) -> Self {
        Expr::Trial(tag)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn is_const(&self, v: f64) -> bool {
        self.as_const() == Some(v)
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Self {
        if let Expr::Const(c) = a {
            if let Some(v) = op.apply(c).filter(|v| v.is_finite()) {
                return Expr::Const(v);
            }
        }
        if op == UnaryOp::Neg {
            if let Expr::Unary(UnaryOp::Neg, inner) = a {
                return *inner;
            }
        }
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
            if let Some(v) = op.apply(*x, *y).filter(|v| v.is_finite()) {
                return Expr::Const(v);
            }
        }
        match op {
            BinaryOp::Add if a.is_const(0.0) => return b,
            BinaryOp::Add if a == b => return Expr::binary(BinaryOp::Mul, Expr::Const(2.0), a),
            BinaryOp::Add | BinaryOp::Sub if b.is_const(0.0) => return a,
            BinaryOp::Sub if a.is_const(0.0) => return Expr::unary(UnaryOp::Neg, b),
            BinaryOp::Mul if a.is_const(0.0) || b.is_const(0.0) => return Expr::Const(0.0),
            BinaryOp::Mul if a.is_const(1.0) => return b,
            BinaryOp::Mul | BinaryOp::Div if b.is_const(1.0) => return a,
            BinaryOp::Div if a.is_const(0.0) => return Expr::Const(0.0),
            BinaryOp::Pow if b.is_const(0.0) => return Expr::Const(1.0),
            BinaryOp::Pow if b.is_const(1.0) => return a,
            _ => {}
        }
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn powi(a: Expr, k: u32) -> Self {
        Expr::binary(BinaryOp::Pow, a, Expr::Const(k as f64))
    }

    pub fn sin(self) -> Self {
        Expr::unary(UnaryOp::Sin, self)
    }

    pub fn cos(self) -> Self {
        Expr::unary(UnaryOp::Cos, self)
    }

    pub fn exp(self) -> Self {
        Expr::unary(UnaryOp::Exp, self)
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Trial(_) => 1,
            Expr::Unary(_, a) => 1 + a.size(),
            Expr::Binary(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    /// Distinct trial tags, sorted.
    pub fn trial_tags(&self) -> BTreeSet<MultiIndex> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Trial(t) = e {
                out.insert(t.clone());
            }
        });
        out
    }

    pub fn has_trial(&self) -> bool {
        !self.trial_tags().is_empty()
    }

    pub fn uses_var(&self, var: usize) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Var(v) if *v == var));
        found
    }

    /// Highest order of `var` over all trial tags.
    pub fn max_trial_order_in(&self, var: usize) -> u32 {
        self.trial_tags()
            .iter()
            .map(|t| t.counts()[var] as u32)
            .max()
            .unwrap_or(0)
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Unary(_, a) => a.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            _ => {}
        }
    }

    /// Rebuilds the tree bottom-up with every trial leaf replaced.
    pub fn substitute_trial<E>(
        &self,
        f: &mut impl FnMut(&MultiIndex) -> Result<Expr, E>,
    ) -> Result<Expr, E> {
        Ok(match self {
            Expr::Trial(t) => f(t)?,
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Unary(op, a) => Expr::unary(*op, a.substitute_trial(f)?),
            Expr::Binary(op, a, b) => {
                Expr::binary(*op, a.substitute_trial(f)?, b.substitute_trial(f)?)
            }
        })
    }

    /// Replaces variable `var` with a constant and refolds.
    pub fn fix_var(&self, var: usize, value: f64) -> Expr {
        match self {
            Expr::Var(v) if *v == var => Expr::Const(value),
            Expr::Const(_) | Expr::Var(_) | Expr::Trial(_) => self.clone(),
            Expr::Unary(op, a) => Expr::unary(*op, a.fix_var(var, value)),
            Expr::Binary(op, a, b) => {
                Expr::binary(*op, a.fix_var(var, value), b.fix_var(var, value))
            }
        }
    }

    /// Rebuilds through the folding constructors.
    pub fn fold(&self) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Trial(_) => self.clone(),
            Expr::Unary(op, a) => Expr::unary(*op, a.fold()),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.fold(), b.fold()),
        }
    }

    /// Symbolic derivative with respect to variable `var`.
    ///
    /// `time` names the evolution variable for order-cap checks.
    pub fn differentiate(&self, var: usize, time: Option<usize>) -> Result<Expr, ExprError> {
        use BinaryOp::*;
        Ok(match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(v) => Expr::Const(if *v == var { 1.0 } else { 0.0 }),
            Expr::Trial(tag) => {
                let next = tag.bump(var);
                next.check_caps(time)?;
                Expr::Trial(next)
            }
            Expr::Unary(op, a) => {
                let da = a.differentiate(var, time)?;
                let a = (**a).clone();
                let outer = match op {
                    UnaryOp::Neg => return Ok(Expr::unary(UnaryOp::Neg, da)),
                    UnaryOp::Sin => a.cos(),
                    UnaryOp::Cos => Expr::unary(UnaryOp::Neg, a.sin()),
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Log => Expr::binary(Div, Expr::Const(1.0), a),
                    UnaryOp::Sqrt => Expr::binary(
                        Div,
                        Expr::Const(0.5),
                        Expr::unary(UnaryOp::Sqrt, a),
                    ),
                };
                Expr::binary(Mul, outer, da)
            }
            Expr::Binary(op, a, b) => {
                let da = a.differentiate(var, time)?;
                match op {
                    Add | Sub => Expr::binary(*op, da, b.differentiate(var, time)?),
                    Mul => {
                        let db = b.differentiate(var, time)?;
                        Expr::binary(
                            Add,
                            Expr::binary(Mul, da, (**b).clone()),
                            Expr::binary(Mul, (**a).clone(), db),
                        )
                    }
                    Div => {
                        // (a'b - ab') / b^2
                        let db = b.differentiate(var, time)?;
                        let num = Expr::binary(
                            Sub,
                            Expr::binary(Mul, da, (**b).clone()),
                            Expr::binary(Mul, (**a).clone(), db),
                        );
                        Expr::binary(Div, num, Expr::powi((**b).clone(), 2))
                    }
                    Pow => {
                        let k = b.as_const().expect("pow exponent is constant");
                        let inner = Expr::powi((**a).clone(), (k - 1.0).max(0.0) as u32);
                        Expr::binary(Mul, Expr::binary(Mul, Expr::Const(k), inner), da)
                    }
                }
            }
        })
    }

    /// Tree-walking evaluation. Trial leaves are delegated to `trial`.
    pub fn eval_pointwise(
        &self,
        point: &[f64],
        trial: &mut impl FnMut(&MultiIndex, &[f64]) -> f64,
    ) -> Result<f64, ExprError> {
        let mut path = Vec::new();
        self.eval_at(point, trial, &mut path)
    }

    /// Evaluates an expression that has no trial leaves.
    pub fn eval_plain(&self, point: &[f64]) -> Result<f64, ExprError> {
        self.eval_pointwise(point, &mut |_, _| f64::NAN)
    }

    fn eval_at(
        &self,
        point: &[f64],
        trial: &mut impl FnMut(&MultiIndex, &[f64]) -> f64,
        path: &mut Vec<u8>,
    ) -> Result<f64, ExprError> {
        let domain_err = |op: &'static str, arg: f64, path: &[u8]| ExprError::Domain {
            op,
            arg,
            path: format_path(path),
        };
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(v) => point.get(*v).copied().ok_or(ExprError::MissingVar(*v)),
            Expr::Trial(t) => Ok(trial(t, point)),
            Expr::Unary(op, a) => {
                path.push(0);
                let x = a.eval_at(point, trial, path)?;
                path.pop();
                op.apply(x).ok_or_else(|| domain_err(op.name(), x, path))
            }
            Expr::Binary(op, a, b) => {
                path.push(0);
                let x = a.eval_at(point, trial, path)?;
                path.pop();
                path.push(1);
                let y = b.eval_at(point, trial, path)?;
                path.pop();
                op.apply(x, y).ok_or_else(|| domain_err("division", y, path))
            }
        }
    }

    pub fn display<'a>(&'a self, vars: &'a VarList) -> Printer<'a> {
        Printer::new(self, vars)
    }
}

fn format_path(path: &[u8]) -> String {
    let mut s = String::from("root");
    for p in path {
        s.push('.');
        s.push_str(&p.to_string());
    }
    s
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::binary(BinaryOp::Add, self, rhs)
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::binary(BinaryOp::Sub, self, rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::binary(BinaryOp::Mul, self, rhs)
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::binary(BinaryOp::Div, self, rhs)
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::unary(UnaryOp::Neg, self)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "]")
    }
}
