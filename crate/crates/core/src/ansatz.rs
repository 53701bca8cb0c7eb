//! Exact binding of boundary and initial data.
//!
//! The trial function is `A = m · net + d`. On rectangles we use
//!
//! ```text
//! m(x, t) = τ(t) · Π_i 4 (x_i - a_i)(b_i - x_i) / (b_i - a_i)^2
//! τ(t)    = 1, s or s^2  with s = (t - t0) / (T - t0)   (time order 0, 1, 2)
//! ```
//!
//! and `d = g` (boundary value problems), `d = u0` (first order in time) or
//! `d = u0 + (t - t0) u0'` (second order). `m` vanishes on every spatial face
//! and, with `τ(t0) = τ'(t0) = 0` as needed, at the initial time, so `A`
//! takes the prescribed values whatever the network outputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{Expr, ExprError, MultiIndex};
use crate::problem::{Domain, PdeProblem};
use crate::sampler;

/// Boundary probes used for the compatibility check.
pub const COMPATIBILITY_PROBES: usize = 256;
/// Largest admissible mismatch between initial and boundary data.
pub const COMPATIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AnsatzError {
    #[error("{key}: {message}; use soft mode to impose these conditions as penalties")]
    Incompatible { key: &'static str, message: String },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnsatzParts {
    pub multiplier: Expr,
    pub addendum: Expr,
    pub time_order: u8,
}

impl AnsatzParts {
    pub fn for_problem(problem: &PdeProblem) -> Result<Self, AnsatzError> {
        Ok(Self {
            multiplier: build_multiplier(problem.domain(), problem.time_order()),
            addendum: build_addendum(problem)?,
            time_order: problem.time_order(),
        })
    }
}

pub fn build_multiplier(domain: &Domain, time_order: u8) -> Expr {
    let mut m = Expr::Const(1.0);
    for i in domain.spatial_indices() {
        let (a, b) = domain.bounds()[i];
        let x = Expr::Var(i);
        let bump = Expr::Const(4.0 / ((b - a) * (b - a)))
            * (x.clone() - Expr::Const(a))
            * (Expr::Const(b) - x);
        m = m * bump;
    }
    if let (Some(t), Some((t0, t1))) = (domain.time_index(), domain.time_interval()) {
        let s = (Expr::Var(t) - Expr::Const(t0)) / Expr::Const(t1 - t0);
        let tau = match time_order {
            0 => Expr::Const(1.0),
            1 => s,
            _ => Expr::powi(s, 2),
        };
        m = tau * m;
    }
    m
}

pub fn build_addendum(problem: &PdeProblem) -> Result<Expr, AnsatzError> {
    let domain = problem.domain();
    let g = problem.boundary();
    if let Some(t) = domain.time_index() {
        if g.uses_var(t) {
            return Err(AnsatzError::Incompatible {
                key: "boundary_condition",
                message: "time-dependent boundary values cannot be bound exactly".into(),
            });
        }
    }
    let Some(u0) = problem.initial() else {
        return Ok(g.clone());
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let probes = sampler::sample_boundary(domain, COMPATIBILITY_PROBES, &mut rng);
    let zero = Expr::Const(0.0);
    let rate = problem.initial_rate();
    for p in probes.iter() {
        let gap = (u0.eval_plain(p)? - g.eval_plain(p)?).abs();
        if gap > COMPATIBILITY_TOL {
            return Err(AnsatzError::Incompatible {
                key: "initial_condition",
                message: format!("initial state differs from boundary value by {gap:e} at {p:?}"),
            });
        }
        if problem.time_order() == 2 {
            let r = rate.unwrap_or(&zero).eval_plain(p)?.abs();
            if r > COMPATIBILITY_TOL {
                return Err(AnsatzError::Incompatible {
                    key: "initial_rate",
                    message: format!("initial rate is {r:e} on the boundary at {p:?}, expected 0"),
                });
            }
        }
    }
    let (t, (t0, _)) = domain
        .time_index()
        .zip(domain.time_interval())
        .expect("initial data implies a time axis");
    Ok(match (problem.time_order(), rate) {
        (2, Some(r)) => u0.clone() + (Expr::Var(t) - Expr::Const(t0)) * r.clone(),
        _ => u0.clone(),
    })
}

/// `m · net + d`, with `net` as the underived trial leaf.
pub fn wrap(parts: &AnsatzParts, nvars: usize) -> Expr {
    parts.multiplier.clone() * Expr::Trial(MultiIndex::zero(nvars)) + parts.addendum.clone()
}

/// Replaces every derivative of `u` in `form` by the matching derivative of
/// the wrapped trial, so the remaining trial leaves refer to the network.
pub fn substitute(form: &Expr, parts: &AnsatzParts, nvars: usize, time: Option<usize>) -> Result<Expr, ExprError> {
    let a = wrap(parts, nvars);
    form.substitute_trial(&mut |tag| {
        let mut e = a.clone();
        for (v, &n) in tag.counts().iter().enumerate() {
            for _ in 0..n {
                e = e.differentiate(v, time)?;
            }
        }
        Ok(e)
    })
}
