//! Finite-difference reference solutions on rectangles.
//!
//! Two shapes are supported: the 2-d Poisson problem `Δu = Q` with Dirichlet
//! data, and the 2-d heat problem `u_t = κΔu + F` with zero Dirichlet data.
//! Both use the 5-point Laplacian on a uniform `n × n` node grid; the heat
//! solver steps with Crank–Nicolson. Linear systems are symmetric positive
//! definite and banded, and are solved by a banded Cholesky factorisation.

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::expr::{BinaryOp, Expr, ExprError, MultiIndex, UnaryOp};
use crate::problem::{Domain, PdeProblem};

/// Smallest accepted grid size per axis.
pub const MIN_GRID: usize = 17;
/// Smallest accepted number of time steps.
pub const MIN_STEPS: usize = 16;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("unsupported problem shape: {0}")]
    Unsupported(String),
    #[error("grid needs at least {MIN_GRID} nodes per axis and {MIN_STEPS} time steps")]
    GridTooSmall,
    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
    #[error("grid shapes differ: {0} vs {1} values")]
    Shape(usize, usize),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// `n` equispaced nodes from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { b } else { a + h * i as f64 }).collect()
}

/// Values on a tensor grid, `u[i * y.len() + j]` at `(x[i], y[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
}

impl Grid2 {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.u[i * self.y.len() + j]
    }

    /// Every `stride`-th node along both axes.
    pub fn subsample(&self, stride: usize) -> Grid2 {
        let pick = |v: &[f64]| v.iter().step_by(stride).copied().collect::<Vec<_>>();
        let (x, y) = (pick(&self.x), pick(&self.y));
        let mut u = Vec::with_capacity(x.len() * y.len());
        for i in (0..self.x.len()).step_by(stride) {
            for j in (0..self.y.len()).step_by(stride) {
                u.push(self.at(i, j));
            }
        }
        Grid2 { x, y, u }
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        self.x.iter().flat_map(|&x| self.y.iter().map(move |&y| [x, y])).collect()
    }
}

/// Crank–Nicolson output: one [`Grid2`]-shaped slice per time level.
#[derive(Debug, Clone)]
pub struct HeatSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: Vec<f64>,
    pub u: Vec<Vec<f64>>,
}

impl HeatSolution {
    pub fn slice(&self, k: usize) -> Grid2 {
        Grid2 {
            x: self.x.clone(),
            y: self.y.clone(),
            u: self.u[k].clone(),
        }
    }

    /// Slice at `time`, interpolating linearly between levels.
    pub fn at_time(&self, time: f64) -> Grid2 {
        let last = self.t.len() - 1;
        let dt = self.t[1] - self.t[0];
        let s = ((time - self.t[0]) / dt).clamp(0.0, last as f64);
        let k = (s.floor() as usize).min(last);
        let w = s - k as f64;
        if w < 1e-9 || k == last {
            return self.slice(k);
        }
        if w > 1.0 - 1e-9 {
            return self.slice(k + 1);
        }
        let u = self.u[k]
            .iter()
            .zip(&self.u[k + 1])
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect();
        Grid2 {
            x: self.x.clone(),
            y: self.y.clone(),
            u,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridError {
    pub linf: f64,
    pub rms: f64,
}

pub fn grid_error(model: &[f64], oracle: &[f64]) -> Result<GridError, OracleError> {
    if model.len() != oracle.len() || model.is_empty() {
        return Err(OracleError::Shape(model.len(), oracle.len()));
    }
    let mut linf: f64 = 0.0;
    let mut sq = 0.0;
    for (a, b) in model.iter().zip(oracle) {
        let d = (a - b).abs();
        linf = linf.max(d);
        sq += d * d;
    }
    Ok(GridError {
        linf,
        rms: (sq / model.len() as f64).sqrt(),
    })
}

/// Writes `header` then one row per point: coordinates followed by values.
pub fn write_grid_csv(
    mut w: impl Write,
    header: &[&str],
    points: impl IntoIterator<Item = Vec<f64>>,
) -> std::io::Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in points {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Symmetric positive definite band matrix, lower band stored per row:
/// `band[i * (bw + 1) + k]` holds `A[i][i - bw + k]`.
struct BandCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandCholesky {
    fn new(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        }
    }

    /// Sets `A[i][j]` for `j <= i`, `i - j <= bw`.
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.band[i * (self.bw + 1) + self.bw + j - i] = v;
    }

    fn factor(&mut self) -> Result<(), OracleError> {
        let w = self.bw + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            for j in j0..=i {
                let mut s = self.band[i * w + self.bw + j - i];
                let k0 = j0.max(j.saturating_sub(self.bw));
                for k in k0..j {
                    s -= self.band[i * w + self.bw + k - i] * self.band[j * w + self.bw + k - j];
                }
                if j == i {
                    if s <= 0.0 {
                        return Err(OracleError::NotPositiveDefinite(i));
                    }
                    self.band[i * w + self.bw] = s.sqrt();
                } else {
                    self.band[i * w + self.bw + j - i] = s / self.band[j * w + self.bw];
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let mut s = b[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.band[i * w + self.bw + k - i] * b[k];
            }
            b[i] = s / self.band[i * w + self.bw];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + self.bw + 1).min(self.n) {
                s -= self.band[k * w + self.bw + i - k] * b[k];
            }
            b[i] = s / self.band[i * w + self.bw];
        }
    }
}

/// `c · I - d · Δ_h` on the `m × m` interior of a grid with spacings `hx, hy`.
fn shifted_laplacian(m: usize, hx: f64, hy: f64, c: f64, d: f64) -> Result<BandCholesky, OracleError> {
    let (ax, ay) = (d / (hx * hx), d / (hy * hy));
    let mut a = BandCholesky::new(m * m, m);
    for i in 0..m {
        for j in 0..m {
            let r = i * m + j;
            a.set(r, r, c + 2.0 * ax + 2.0 * ay);
            if j > 0 {
                a.set(r, r - 1, -ay);
            }
            if i > 0 {
                a.set(r, r - m, -ax);
            }
        }
    }
    a.factor()?;
    Ok(a)
}

fn rectangle(domain: &Domain) -> Result<((f64, f64), (f64, f64)), OracleError> {
    let s = domain.spatial_indices();
    if s.len() != 2 {
        return Err(OracleError::Unsupported(format!("{} spatial dimensions (need 2)", s.len())));
    }
    Ok((domain.bounds()[s[0]], domain.bounds()[s[1]]))
}

/// Solves `Δu = q` with `u = g` on the boundary of a 2-d rectangle.
pub fn solve_poisson_fd(q: &Expr, g: &Expr, domain: &Domain, n: usize) -> Result<Grid2, OracleError> {
    if n < MIN_GRID {
        return Err(OracleError::GridTooSmall);
    }
    if domain.time_index().is_some() {
        return Err(OracleError::Unsupported("Poisson oracle takes no time axis".into()));
    }
    let ((x0, x1), (y0, y1)) = rectangle(domain)?;
    let (x, y) = (linspace(x0, x1, n), linspace(y0, y1, n));
    let (hx, hy) = (x[1] - x[0], y[1] - y[0]);
    let mut u = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                u[i * n + j] = g.eval_plain(&[x[i], y[j]])?;
            }
        }
    }
    let m = n - 2;
    let mut rhs = vec![0.0; m * m];
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let mut r = -q.eval_plain(&[x[i], y[j]])?;
            if i == 1 {
                r += u[j] / (hx * hx);
            }
            if i == n - 2 {
                r += u[(n - 1) * n + j] / (hx * hx);
            }
            if j == 1 {
                r += u[i * n] / (hy * hy);
            }
            if j == n - 2 {
                r += u[i * n + n - 1] / (hy * hy);
            }
            rhs[(i - 1) * m + j - 1] = r;
        }
    }
    shifted_laplacian(m, hx, hy, 0.0, 1.0)?.solve(&mut rhs);
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            u[i * n + j] = rhs[(i - 1) * m + j - 1];
        }
    }
    Ok(Grid2 { x, y, u })
}

/// Crank–Nicolson for `u_t = κΔu + f(x, y, t)` with zero Dirichlet data.
/// `f` and `u0` are evaluated at points `[x, y, t]`.
pub fn solve_heat_fd(
    f: &Expr,
    u0: &Expr,
    kappa: f64,
    domain: &Domain,
    n: usize,
    steps: usize,
) -> Result<HeatSolution, OracleError> {
    if n < MIN_GRID || steps < MIN_STEPS {
        return Err(OracleError::GridTooSmall);
    }
    let (Some(ti), Some((t0, t1))) = (domain.time_index(), domain.time_interval()) else {
        return Err(OracleError::Unsupported("heat oracle needs a time axis".into()));
    };
    if ti != 2 {
        return Err(OracleError::Unsupported("time must be the third variable".into()));
    }
    let ((x0, x1), (y0, y1)) = rectangle(domain)?;
    let (x, y, t) = (linspace(x0, x1, n), linspace(y0, y1, n), linspace(t0, t1, steps + 1));
    let (hx, hy) = (x[1] - x[0], y[1] - y[0]);
    let dt = (t1 - t0) / steps as f64;
    let m = n - 2;
    let interior = |v: &dyn Fn(f64, f64) -> Result<f64, ExprError>| -> Result<Vec<f64>, OracleError> {
        let mut out = Vec::with_capacity(m * m);
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                out.push(v(x[i], y[j])?);
            }
        }
        Ok(out)
    };
    let embed = |w: &[f64]| {
        let mut u = vec![0.0; n * n];
        for i in 1..n - 1 {
            u[i * n + 1..i * n + n - 1].copy_from_slice(&w[(i - 1) * m..i * m]);
        }
        u
    };
    let lhs = shifted_laplacian(m, hx, hy, 1.0, 0.5 * dt * kappa)?;
    let (ax, ay) = (0.5 * dt * kappa / (hx * hx), 0.5 * dt * kappa / (hy * hy));
    let mut w = interior(&|x, y| u0.eval_plain(&[x, y, t0]))?;
    let mut levels = vec![embed(&w)];
    let mut src = interior(&|x, y| f.eval_plain(&[x, y, t[0]]))?;
    let mut rhs = vec![0.0; m * m];
    for k in 1..=steps {
        let next = interior(&|x, y| f.eval_plain(&[x, y, t[k]]))?;
        for i in 0..m {
            for j in 0..m {
                let r = i * m + j;
                let mut lap = -2.0 * (ax + ay) * w[r];
                if i > 0 {
                    lap += ax * w[r - m];
                }
                if i + 1 < m {
                    lap += ax * w[r + m];
                }
                if j > 0 {
                    lap += ay * w[r - 1];
                }
                if j + 1 < m {
                    lap += ay * w[r + 1];
                }
                rhs[r] = w[r] + lap + 0.5 * dt * (src[r] + next[r]);
            }
        }
        lhs.solve(&mut rhs);
        std::mem::swap(&mut w, &mut rhs);
        src = next;
        levels.push(embed(&w));
    }
    Ok(HeatSolution { x, y, t, u: levels })
}

/// Splits `e` into `Σ c_α ∂^α u + rest` with constant `c_α` and trial-free
/// `rest`; `None` if `e` is not of that form.
pub fn linear_parts(e: &Expr) -> Option<(BTreeMap<MultiIndex, f64>, Expr)> {
    if !e.has_trial() {
        return Some((BTreeMap::new(), e.clone()));
    }
    let scale = |(mut c, r): (BTreeMap<MultiIndex, f64>, Expr), k: f64| {
        c.values_mut().for_each(|v| *v *= k);
        (c, Expr::Const(k) * r)
    };
    match e {
        Expr::Trial(t) => Some((BTreeMap::from([(t.clone(), 1.0)]), Expr::Const(0.0))),
        Expr::Unary(UnaryOp::Neg, a) => linear_parts(a).map(|p| scale(p, -1.0)),
        Expr::Binary(op @ (BinaryOp::Add | BinaryOp::Sub), a, b) => {
            let (mut ca, ra) = linear_parts(a)?;
            let (cb, rb) = linear_parts(b)?;
            let sign = if *op == BinaryOp::Add { 1.0 } else { -1.0 };
            for (t, v) in cb {
                *ca.entry(t).or_insert(0.0) += sign * v;
            }
            Some((ca, if sign > 0.0 { ra + rb } else { ra - rb }))
        }
        Expr::Binary(BinaryOp::Mul, a, b) => match (a.as_const(), b.as_const()) {
            (Some(k), _) => linear_parts(b).map(|p| scale(p, k)),
            (_, Some(k)) => linear_parts(a).map(|p| scale(p, k)),
            _ => None,
        },
        Expr::Binary(BinaryOp::Div, a, b) => {
            let k = b.as_const().filter(|k| *k != 0.0)?;
            linear_parts(a).map(|p| scale(p, 1.0 / k))
        }
        _ => None,
    }
}

/// The problems the oracle can reproduce.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleShape {
    /// `Δu = q`, `u = g` on the boundary.
    Poisson { q: Expr, g: Expr },
    /// `u_t = κΔu + f`, zero boundary, `u = u0` at `t0`.
    Heat { f: Expr, u0: Expr, kappa: f64 },
}

pub fn classify(problem: &PdeProblem) -> Result<OracleShape, OracleError> {
    let unsupported = |m: &str| OracleError::Unsupported(m.to_string());
    let domain = problem.domain();
    rectangle(domain)?;
    let (coeffs, rest) =
        linear_parts(problem.form()).ok_or_else(|| unsupported("form is not linear with constant coefficients"))?;
    let nvars = problem.dim();
    let s = domain.spatial_indices();
    let xx = MultiIndex::unit(nvars, s[0]).bump(s[0]);
    let yy = MultiIndex::unit(nvars, s[1]).bump(s[1]);
    let c = |m: &MultiIndex| coeffs.get(m).copied().unwrap_or(0.0);
    let others = coeffs.iter().filter(|(m, v)| **v != 0.0 && **m != xx && **m != yy);
    let lap = c(&xx);
    if lap == 0.0 || c(&yy) != lap {
        return Err(unsupported("form has no isotropic Laplacian"));
    }
    match domain.time_index() {
        None => {
            if others.count() > 0 {
                return Err(unsupported("Poisson form has extra derivative terms"));
            }
            Ok(OracleShape::Poisson {
                q: (Expr::Const(-1.0 / lap) * rest).fold(),
                g: problem.boundary().clone(),
            })
        }
        Some(t) => {
            let ut = MultiIndex::unit(nvars, t);
            let a = c(&ut);
            if a == 0.0 || others.filter(|(m, _)| **m != ut).count() > 0 || problem.time_order() != 1 {
                return Err(unsupported("form is not a heat equation"));
            }
            let kappa = -lap / a;
            if kappa <= 0.0 {
                return Err(unsupported("backward heat equation"));
            }
            if problem.boundary().as_const() != Some(0.0) {
                return Err(unsupported("heat oracle needs zero boundary values"));
            }
            Ok(OracleShape::Heat {
                f: (Expr::Const(-1.0 / a) * rest).fold(),
                u0: problem.initial().expect("evolution problem").clone(),
                kappa,
            })
        }
    }
}
