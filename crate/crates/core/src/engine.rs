//! Residual losses and their parameter gradients.
//!
//! A [`ResidualProgram`] compiles one or more residual expressions to a flat
//! tape with shared subexpressions. For each point the tape is evaluated on
//! the network's derivative values, swept backwards to get `∂r/∂(∂^α net)`,
//! and those sensitivities are pushed through the jet backward pass of the
//! network.

use std::collections::HashMap;

use thiserror::Error;

use crate::expr::{BinaryOp, Expr, MultiIndex, UnaryOp};
use crate::network::{MonomialSet, Network, NetworkError};
use crate::points::PointSet;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("point {point}: {op} undefined at {arg}")]
    Domain { point: usize, op: &'static str, arg: f64 },
    #[error("network has {0} outputs; residuals need a scalar network")]
    Outputs(usize),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Trial(usize),
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
}

#[derive(Hash, PartialEq, Eq)]
enum Key {
    Const(u64),
    Var(usize),
    Trial(usize),
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
}

#[derive(Debug, Clone, Default)]
struct Tape {
    nodes: Vec<Node>,
}

struct Builder<'a> {
    tape: Tape,
    seen: HashMap<Key, usize>,
    tags: &'a [MultiIndex],
}

impl Builder<'_> {
    fn intern(&mut self, key: Key, node: Node) -> usize {
        *self.seen.entry(key).or_insert_with(|| {
            self.tape.nodes.push(node);
            self.tape.nodes.len() - 1
        })
    }

    fn emit(&mut self, e: &Expr) -> usize {
        match e {
            Expr::Const(c) => self.intern(Key::Const(c.to_bits()), Node::Const(*c)),
            Expr::Var(v) => self.intern(Key::Var(*v), Node::Var(*v)),
            Expr::Trial(t) => {
                let slot = self.tags.iter().position(|x| x == t).expect("tag collected");
                self.intern(Key::Trial(slot), Node::Trial(slot))
            }
            Expr::Unary(op, a) => {
                let a = self.emit(a);
                self.intern(Key::Unary(*op, a), Node::Unary(*op, a))
            }
            Expr::Binary(op, a, b) => {
                let (a, b) = (self.emit(a), self.emit(b));
                self.intern(Key::Binary(*op, a, b), Node::Binary(*op, a, b))
            }
        }
    }
}

impl Tape {
    fn forward(&self, x: &[f64], trial: &[f64], vals: &mut [f64]) -> Result<(), (&'static str, f64)> {
        for (i, node) in self.nodes.iter().enumerate() {
            vals[i] = match *node {
                Node::Const(c) => c,
                Node::Var(v) => x[v],
                Node::Trial(s) => trial[s],
                Node::Unary(op, a) => op.apply(vals[a]).ok_or((op.name(), vals[a]))?,
                Node::Binary(op, a, b) => op.apply(vals[a], vals[b]).ok_or(("division", vals[b]))?,
            };
        }
        Ok(())
    }

    /// Propagates `adj` (seeded on outputs) down to trial slots.
    fn reverse(&self, vals: &[f64], adj: &mut [f64], trial_adj: &mut [f64]) {
        for i in (0..self.nodes.len()).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match self.nodes[i] {
                Node::Const(_) | Node::Var(_) => {}
                Node::Trial(s) => trial_adj[s] += g,
                Node::Unary(op, a) => {
                    let x = vals[a];
                    adj[a] += g * match op {
                        UnaryOp::Sin => x.cos(),
                        UnaryOp::Cos => -x.sin(),
                        UnaryOp::Exp => vals[i],
                        UnaryOp::Log => 1.0 / x,
                        UnaryOp::Sqrt => 0.5 / vals[i],
                        UnaryOp::Neg => -1.0,
                    };
                }
                Node::Binary(op, a, b) => {
                    let (x, y) = (vals[a], vals[b]);
                    match op {
                        BinaryOp::Add => {
                            adj[a] += g;
                            adj[b] += g;
                        }
                        BinaryOp::Sub => {
                            adj[a] += g;
                            adj[b] -= g;
                        }
                        BinaryOp::Mul => {
                            adj[a] += g * y;
                            adj[b] += g * x;
                        }
                        BinaryOp::Div => {
                            adj[a] += g / y;
                            adj[b] -= g * x / (y * y);
                        }
                        BinaryOp::Pow => {
                            let k = y as i32;
                            if k != 0 {
                                adj[a] += g * y * x.powi(k - 1);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Residual expressions sharing one batch. The per-point value entering the
/// loss is the sum of squares of all components.
#[derive(Debug, Clone)]
pub struct ResidualProgram {
    exprs: Vec<Expr>,
    tags: Vec<MultiIndex>,
    set: MonomialSet,
    /// Position of each tag inside `set`.
    slots: Vec<usize>,
    tape: Tape,
    outputs: Vec<usize>,
}

impl ResidualProgram {
    pub fn new(exprs: Vec<Expr>, nvars: usize) -> Self {
        assert!(!exprs.is_empty(), "no residual components");
        let tags: Vec<MultiIndex> = exprs
            .iter()
            .flat_map(Expr::trial_tags)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let set = MonomialSet::closure(nvars, &tags);
        let slots = tags.iter().map(|t| set.position(t).expect("in closure")).collect();
        let mut b = Builder {
            tape: Tape::default(),
            seen: HashMap::new(),
            tags: &tags,
        };
        let outputs = exprs.iter().map(|e| b.emit(e)).collect();
        let tape = b.tape;
        Self {
            exprs,
            tags,
            set,
            slots,
            tape,
            outputs,
        }
    }

    pub fn single(expr: Expr, nvars: usize) -> Self {
        Self::new(vec![expr], nvars)
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.exprs
    }

    /// Derivative tags of the network that the residual reads.
    pub fn tags(&self) -> &[MultiIndex] {
        &self.tags
    }

    pub fn tape_len(&self) -> usize {
        self.tape.nodes.len()
    }

    /// Residual components, `[point][component]`.
    pub fn residuals(&self, net: &Network, theta: &[f64], points: &PointSet) -> Result<Vec<f64>, EngineError> {
        let mut out = Vec::with_capacity(points.len() * self.outputs.len());
        self.sweep(net, theta, points, |_, vals, _| {
            out.extend(self.outputs.iter().map(|&o| vals[o]));
        })?;
        Ok(out)
    }

    /// Runs the forward tape at every point; `visit(point, tape values, trial values)`.
    fn sweep(
        &self,
        net: &Network,
        theta: &[f64],
        points: &PointSet,
        mut visit: impl FnMut(usize, &[f64], &[f64]),
    ) -> Result<crate::network::JetTrace, EngineError> {
        if net.output_dim() != 1 {
            return Err(EngineError::Outputs(net.output_dim()));
        }
        net.check_tags(&self.tags)?;
        let trace = net.forward_jets(theta, points, &self.set)?;
        let s = self.set.len();
        let jets = trace.output();
        let mut trial = vec![0.0; self.tags.len()];
        let mut vals = vec![0.0; self.tape.nodes.len()];
        for (p, x) in points.iter().enumerate() {
            for (t, &k) in self.slots.iter().enumerate() {
                trial[t] = jets[p * s + k] * self.set.factorial(k);
            }
            self.tape
                .forward(x, &trial, &mut vals)
                .map_err(|(op, arg)| EngineError::Domain { point: p, op, arg })?;
            visit(p, &vals, &trial);
        }
        Ok(trace)
    }

    /// Adds `weight · mean_p Σ_k r_k(p)²` to `grad` and returns the mean.
    fn accumulate(
        &self,
        net: &Network,
        theta: &[f64],
        points: &PointSet,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64, EngineError> {
        let n = points.len();
        let s = self.set.len();
        let scale = 2.0 * weight / n as f64;
        let mut sum = 0.0;
        let mut adjoint = vec![0.0; n * s];
        let mut adj = vec![0.0; self.tape.nodes.len()];
        let mut trial_adj = vec![0.0; self.tags.len()];
        let trace = self.sweep(net, theta, points, |p, vals, _| {
            adj.iter_mut().for_each(|a| *a = 0.0);
            trial_adj.iter_mut().for_each(|a| *a = 0.0);
            for &o in &self.outputs {
                let r = vals[o];
                sum += r * r;
                adj[o] += scale * r;
            }
            self.tape.reverse(vals, &mut adj, &mut trial_adj);
            for (t, &k) in self.slots.iter().enumerate() {
                adjoint[p * s + k] = trial_adj[t] * self.set.factorial(k);
            }
        })?;
        net.backward_jets(theta, &trace, &self.set, &adjoint, grad);
        Ok(sum / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// Unweighted mean-square value of each term.
    pub terms: Vec<f64>,
    pub grad: Vec<f64>,
}

/// One penalty in a weighted sum of mean-square residuals.
pub struct Term<'a> {
    pub program: &'a ResidualProgram,
    pub points: &'a PointSet,
    pub weight: f64,
}

/// Mean of squared residuals over `points` and its gradient in `theta`.
pub fn loss_and_grad(
    prog: &ResidualProgram,
    net: &Network,
    theta: &[f64],
    points: &PointSet,
) -> Result<LossReport, EngineError> {
    if points.is_empty() {
        return Err(EngineError::EmptyBatch);
    }
    soft_loss_and_grad(
        &[Term {
            program: prog,
            points,
            weight: 1.0,
        }],
        net,
        theta,
    )
}

/// `Σ weight · mean-square(term)`. Terms with an empty batch contribute zero.
pub fn soft_loss_and_grad(terms: &[Term<'_>], net: &Network, theta: &[f64]) -> Result<LossReport, EngineError> {
    let mut grad = vec![0.0; net.n_params()];
    let mut values = Vec::with_capacity(terms.len());
    let mut loss = 0.0;
    for term in terms {
        let v = if term.points.is_empty() {
            0.0
        } else {
            term.program.accumulate(net, theta, term.points, term.weight, &mut grad)?
        };
        loss += term.weight * v;
        values.push(v);
    }
    Ok(LossReport {
        loss,
        terms: values,
        grad,
    })
}
