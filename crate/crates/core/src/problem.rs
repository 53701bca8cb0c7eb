//! PDE problem data: variables, the operator form, a rectangular domain and
//! the boundary / initial data.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Expr, ExprError, VarList};

/// A configuration problem tied to the key that caused it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{key}: {message}")]
pub struct ProblemError {
    pub key: String,
    pub message: String,
}

impl ProblemError {
    pub fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn expr(key: &str, e: ExprError) -> Self {
        Self::new(key, e.to_string())
    }
}

/// Axis-aligned box, one interval per variable. The interval of the time
/// variable (if any) is `[t0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    bounds: Vec<(f64, f64)>,
    time: Option<usize>,
}

impl Domain {
    pub fn new(bounds: Vec<(f64, f64)>, time: Option<usize>) -> Result<Self, ProblemError> {
        if bounds.is_empty() {
            return Err(ProblemError::new("domain", "no dimensions"));
        }
        for (i, &(a, b)) in bounds.iter().enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(ProblemError::new(
                    "domain",
                    format!("interval {i} is [{a}, {b}]; need finite a < b"),
                ));
            }
        }
        if time.is_some_and(|t| t >= bounds.len()) {
            return Err(ProblemError::new("domain", "time index out of range"));
        }
        Ok(Self { bounds, time })
    }

    /// `[0, 1]^n`.
    pub fn unit(n: usize, time: Option<usize>) -> Self {
        Self::new(vec![(0.0, 1.0); n], time).expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn time_index(&self) -> Option<usize> {
        self.time
    }

    pub fn time_interval(&self) -> Option<(f64, f64)> {
        self.time.map(|t| self.bounds[t])
    }

    pub fn spatial_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| Some(i) != self.time).collect()
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.dim()
            && p
                .iter()
                .zip(&self.bounds)
                .all(|(&x, &(a, b))| x >= a - tol && x <= b + tol)
    }

    /// Whether some spatial coordinate sits exactly on its bound.
    pub fn on_spatial_boundary(&self, p: &[f64]) -> bool {
        self.spatial_indices().iter().any(|&i| {
            let (a, b) = self.bounds[i];
            p[i] == a || p[i] == b
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeProblem {
    vars: VarList,
    form: Expr,
    domain: Domain,
    boundary: Expr,
    initial: Option<Expr>,
    initial_rate: Option<Expr>,
    time_order: u8,
}

/// Text sources for a problem. `None` boundary means a zero boundary value.
#[derive(Debug, Clone, Default)]
pub struct ProblemText<'a> {
    pub form: &'a str,
    pub boundary: Option<&'a str>,
    pub initial: Option<&'a str>,
    pub initial_rate: Option<&'a str>,
}

impl PdeProblem {
    pub fn new(
        vars: VarList,
        form: Expr,
        domain: Domain,
        boundary: Expr,
        initial: Option<Expr>,
        initial_rate: Option<Expr>,
    ) -> Result<Self, ProblemError> {
        if domain.dim() != vars.len() {
            return Err(ProblemError::new(
                "domain",
                format!("{} intervals for {} variables", domain.dim(), vars.len()),
            ));
        }
        if domain.time_index() != vars.time_index() {
            return Err(ProblemError::new("domain", "time axis does not match variable `t`"));
        }
        if !form.has_trial() {
            return Err(ProblemError::new("form", "form does not involve the unknown `u`"));
        }
        for (key, e) in [
            ("boundary_condition", Some(&boundary)),
            ("initial_condition", initial.as_ref()),
            ("initial_rate", initial_rate.as_ref()),
        ] {
            if e.is_some_and(Expr::has_trial) {
                return Err(ProblemError::new(key, "must not reference `u`"));
            }
        }
        let time_order = match vars.time_index() {
            None => 0,
            Some(t) => {
                let order = form.max_trial_order_in(t) as u8;
                if order == 0 {
                    return Err(ProblemError::new(
                        "form",
                        "evolution variable `t` declared but the form has no time derivative",
                    ));
                }
                for (key, e) in [("initial_condition", &initial), ("initial_rate", &initial_rate)] {
                    if e.as_ref().is_some_and(|e| e.uses_var(t)) {
                        return Err(ProblemError::new(key, "must not depend on `t`"));
                    }
                }
                if initial.is_none() {
                    return Err(ProblemError::new(
                        "initial_condition",
                        "required for problems with a time derivative",
                    ));
                }
                if order == 2 && initial_rate.is_none() {
                    return Err(ProblemError::new(
                        "initial_rate",
                        "required when the form has a second time derivative",
                    ));
                }
                order
            }
        };
        if time_order == 0 && (initial.is_some() || initial_rate.is_some()) {
            return Err(ProblemError::new(
                "initial_condition",
                "given for a problem without the evolution variable `t`",
            ));
        }
        Ok(Self {
            vars,
            form,
            domain,
            boundary,
            initial,
            initial_rate,
            time_order,
        })
    }

    /// Parses every text field against `vars`.
    pub fn from_text(vars: VarList, domain: Domain, text: &ProblemText<'_>) -> Result<Self, ProblemError> {
        let parse = |key: &str, s: &str| expr::parse(s, &vars).map_err(|e| ProblemError::expr(key, e));
        let form = parse("form", text.form)?;
        let boundary = match text.boundary {
            Some(s) => parse("boundary_condition", s)?,
            None => Expr::Const(0.0),
        };
        let initial = text.initial.map(|s| parse("initial_condition", s)).transpose()?;
        let initial_rate = text.initial_rate.map(|s| parse("initial_rate", s)).transpose()?;
        Self::new(vars, form, domain, boundary, initial, initial_rate)
    }

    pub fn vars(&self) -> &VarList {
        &self.vars
    }

    pub fn form(&self) -> &Expr {
        &self.form
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn boundary(&self) -> &Expr {
        &self.boundary
    }

    pub fn initial(&self) -> Option<&Expr> {
        self.initial.as_ref()
    }

    pub fn initial_rate(&self) -> Option<&Expr> {
        self.initial_rate.as_ref()
    }

    /// Highest time-derivative order in the form (0 for boundary value problems).
    pub fn time_order(&self) -> u8 {
        self.time_order
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }
}

/// Default variable names: spatial `x, y, z, w, x5, ...`, with `t` appended
/// last for evolution problems.
pub fn default_vars(n_dims: usize, evolution: bool) -> Result<VarList, ProblemError> {
    const NAMES: [&str; 4] = ["x", "y", "z", "w"];
    let spatial = if evolution { n_dims.checked_sub(1) } else { Some(n_dims) }
        .filter(|&n| n > 0 || evolution)
        .ok_or_else(|| ProblemError::new("n_dims", "must be positive"))?;
    let mut names: Vec<String> = (0..spatial)
        .map(|i| NAMES.get(i).map_or_else(|| format!("x{}", i + 1), |s| s.to_string()))
        .collect();
    if evolution {
        names.push(expr::TIME_VAR.to_string());
    }
    VarList::new(&names).map_err(|e| ProblemError::new("variables", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat() -> PdeProblem {
        let vars = default_vars(3, true).unwrap();
        PdeProblem::from_text(
            vars,
            Domain::unit(3, Some(2)),
            &ProblemText {
                form: "D(u,t) - D(D(u,x),x) - D(D(u,y),y) - 5*x*y*(1-x)*(1-y)*cos(pi*(x+y))",
                initial: Some("x*y*(1-x)*(1-y)"),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn heat_problem_is_first_order_in_time() {
        let p = heat();
        assert_eq!(p.time_order(), 1);
        assert_eq!(p.vars().names(), ["x", "y", "t"]);
        assert_eq!(p.boundary(), &Expr::Const(0.0));
        assert_eq!(p.domain().spatial_indices(), vec![0, 1]);
    }

    #[test]
    fn default_names() {
        assert_eq!(default_vars(2, false).unwrap().names(), ["x", "y"]);
        assert_eq!(default_vars(2, true).unwrap().names(), ["x", "t"]);
        assert_eq!(default_vars(5, false).unwrap().names(), ["x", "y", "z", "w", "x5"]);
        assert!(default_vars(0, false).is_err());
    }

    #[test]
    fn missing_or_misplaced_conditions_name_their_key() {
        let vars = default_vars(3, true).unwrap();
        let dom = Domain::unit(3, Some(2));
        let err = PdeProblem::from_text(
            vars.clone(),
            dom.clone(),
            &ProblemText {
                form: "D(u,t) - D(D(u,x),x)",
                ..Default::default()
            },
        )
        .unwrap_err();
        assert_eq!(err.key, "initial_condition");
        let err = PdeProblem::from_text(
            vars.clone(),
            dom.clone(),
            &ProblemText {
                form: "D(D(u,t),t) - D(D(u,x),x)",
                initial: Some("0"),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert_eq!(err.key, "initial_rate");
        let err = PdeProblem::from_text(
            vars,
            dom,
            &ProblemText {
                form: "D(u,t) - D(D(u,x),x)",
                initial: Some("t*x"),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert_eq!(err.key, "initial_condition");
        let err = PdeProblem::from_text(
            default_vars(2, false).unwrap(),
            Domain::unit(2, None),
            &ProblemText {
                form: "D(D(u,x),x) + q",
                ..Default::default()
            },
        )
        .unwrap_err();
        assert_eq!(err.key, "form");
    }

    #[test]
    fn domain_validation() {
        assert!(Domain::new(vec![(1.0, 0.0)], None).is_err());
        assert!(Domain::new(vec![(0.0, f64::INFINITY)], None).is_err());
        let d = Domain::new(vec![(0.0, 1.0), (0.0, 3.0)], None).unwrap();
        assert!(d.contains(&[0.5, 2.9], 0.0));
        assert!(!d.contains(&[0.5, 3.1], 0.0));
        assert!(d.on_spatial_boundary(&[0.0, 1.0]));
        assert!(!d.on_spatial_boundary(&[0.2, 1.0]));
    }
}
