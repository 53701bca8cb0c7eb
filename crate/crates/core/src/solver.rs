//! Training loop: sample a batch, evaluate the loss and its gradient, take an
//! optimizer step.
//!
//! In ansatz mode the network is wrapped so boundary and initial data hold
//! exactly and only the operator residual is penalised. In soft mode the raw
//! network is trained on three penalties: the operator residual on interior
//! points, `net - g` on the spatial boundary and `net - u0` at the initial
//! time (plus `∂t net - u0'` for second order problems).

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ansatz::{self, AnsatzError, AnsatzParts};
use crate::engine::{self, EngineError, ResidualProgram, Term};
use crate::expr::{Expr, MultiIndex};
use crate::network::{write_checkpoint, Activation, Network, NetworkError, NetworkSpec, ParameterVector};
use crate::points::PointSet;
use crate::problem::{PdeProblem, ProblemError};
use crate::sampler::{self, SamplerError, SamplerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Ansatz,
    Soft,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ansatz" => Ok(Mode::Ansatz),
            "soft" => Ok(Mode::Soft),
            _ => Err(format!("unknown mode `{s}` (expected ansatz or soft)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub batch_size: usize,
    /// Soft mode only.
    pub boundary_batch_size: usize,
    /// Soft mode only, evolution problems.
    pub initial_batch_size: usize,
    pub n_iters: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Residual, boundary and initial weights (soft mode).
    pub weights: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Ansatz,
            batch_size: 200,
            boundary_batch_size: 50,
            initial_batch_size: 50,
            n_iters: 1000,
            optimizer: Optimizer::Adam,
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            weights: [1.0; 3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProblemError> {
        let err = |key: &str, msg: &str| Err(ProblemError::new(&format!("train.{key}"), msg));
        if self.batch_size == 0 {
            return err("batch_size", "must be at least 1");
        }
        if self.n_iters == 0 {
            return err("n_iters", "must be at least 1");
        }
        if self.mode == Mode::Soft && self.boundary_batch_size == 0 {
            return err("boundary_batch_size", "must be at least 1 in soft mode");
        }
        if self.mode == Mode::Soft && self.initial_batch_size == 0 {
            return err("initial_batch_size", "must be at least 1 in soft mode");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return err("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return err("beta2", "must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return err("epsilon", "must be positive");
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return err("weights", "must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Config(#[from] ProblemError),
    #[error(transparent)]
    Ansatz(#[from] AnsatzError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("non-finite loss {loss} at iteration {iteration}")]
    NonFinite { iteration: usize, loss: f64 },
}

/// Adam moments and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One Adam step with bias correction.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..theta.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

pub fn sgd_step(theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= cfg.learning_rate * g;
    }
}

/// Loss of one iteration. `terms` is set in soft mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub loss: f64,
    pub terms: Option<[f64; 3]>,
}

enum Programs {
    Ansatz {
        parts: AnsatzParts,
        residual: ResidualProgram,
        trial: ResidualProgram,
    },
    Soft {
        residual: ResidualProgram,
        boundary: ResidualProgram,
        initial: Option<ResidualProgram>,
    },
}

pub struct TrainedModel {
    problem: PdeProblem,
    network: Network,
    theta: ParameterVector,
    mode: Mode,
    programs: Programs,
    history: Vec<LossRecord>,
}

impl TrainedModel {
    /// Fresh model with parameters drawn from `init_seed`.
    pub fn new(problem: PdeProblem, spec: NetworkSpec, mode: Mode, init_seed: u64) -> Result<Self, SolverError> {
        let network = Network::new(spec)?;
        let theta = network.init_params(init_seed);
        Self::with_params(problem, network, theta, mode)
    }

    pub fn with_params(
        problem: PdeProblem,
        network: Network,
        theta: ParameterVector,
        mode: Mode,
    ) -> Result<Self, SolverError> {
        if network.input_dim() != problem.dim() {
            return Err(ProblemError::new(
                "body",
                format!("network takes {} inputs, problem has {} variables", network.input_dim(), problem.dim()),
            )
            .into());
        }
        if network.output_dim() != 1 {
            return Err(ProblemError::new("body.units", "last layer must have one unit").into());
        }
        if theta.len() != network.n_params() {
            return Err(NetworkError::ParamLength {
                expected: network.n_params(),
                got: theta.len(),
            }
            .into());
        }
        let nvars = problem.dim();
        let time = problem.domain().time_index();
        let form_order = problem.form().trial_tags().iter().map(MultiIndex::order).max().unwrap_or(0);
        if network.has_activation(Activation::Relu) && form_order >= 2 {
            return Err(ProblemError::new(
                "body.activations",
                "relu has no second derivative; use tanh, sigmoid or sin for this form",
            )
            .into());
        }
        let programs = match mode {
            Mode::Ansatz => {
                let parts = AnsatzParts::for_problem(&problem)?;
                let r = ansatz::substitute(problem.form(), &parts, nvars, time).map_err(AnsatzError::from)?;
                Programs::Ansatz {
                    residual: ResidualProgram::single(r, nvars),
                    trial: ResidualProgram::single(ansatz::wrap(&parts, nvars), nvars),
                    parts,
                }
            }
            Mode::Soft => {
                let net = Expr::Trial(MultiIndex::zero(nvars));
                let boundary = ResidualProgram::single(net.clone() - problem.boundary().clone(), nvars);
                let initial = problem.initial().map(|u0| {
                    let mut parts = vec![net.clone() - u0.clone()];
                    if let (Some(t), Some(rate)) = (time, problem.initial_rate()) {
                        parts.push(Expr::Trial(MultiIndex::unit(nvars, t)) - rate.clone());
                    }
                    ResidualProgram::new(parts, nvars)
                });
                Programs::Soft {
                    residual: ResidualProgram::single(problem.form().clone(), nvars),
                    boundary,
                    initial,
                }
            }
        };
        Ok(Self {
            problem,
            network,
            theta,
            mode,
            programs,
            history: Vec::new(),
        })
    }

    pub fn problem(&self) -> &PdeProblem {
        &self.problem
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn theta(&self) -> &ParameterVector {
        &self.theta
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn parts(&self) -> Option<&AnsatzParts> {
        match &self.programs {
            Programs::Ansatz { parts, .. } => Some(parts),
            Programs::Soft { .. } => None,
        }
    }

    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    /// Loss and gradient on the given batches (`boundary` and `initial` are
    /// ignored in ansatz mode).
    pub fn loss_and_grad(
        &self,
        theta: &[f64],
        interior: &PointSet,
        boundary: &PointSet,
        initial: &PointSet,
        weights: [f64; 3],
    ) -> Result<engine::LossReport, EngineError> {
        match &self.programs {
            Programs::Ansatz { residual, .. } => engine::loss_and_grad(residual, &self.network, theta, interior),
            Programs::Soft {
                residual,
                boundary: bp,
                initial: ip,
            } => {
                let mut terms = vec![
                    Term { program: residual, points: interior, weight: weights[0] },
                    Term { program: bp, points: boundary, weight: weights[1] },
                ];
                if let Some(ip) = ip {
                    terms.push(Term { program: ip, points: initial, weight: weights[2] });
                }
                let mut rep = engine::soft_loss_and_grad(&terms, &self.network, theta)?;
                rep.terms.resize(3, 0.0);
                Ok(rep)
            }
        }
    }

    pub fn fit(&mut self, sampler: &SamplerSpec, cfg: &TrainConfig) -> Result<&[LossRecord], SolverError> {
        self.fit_observed(sampler, cfg, |_, _| {})
    }

    /// Like [`fit`](Self::fit); `observe(k, model)` runs after `k` steps of
    /// this call, for `k = 0..=n_iters`.
    pub fn fit_observed(
        &mut self,
        sampler: &SamplerSpec,
        cfg: &TrainConfig,
        mut observe: impl FnMut(usize, &TrainedModel),
    ) -> Result<&[LossRecord], SolverError> {
        cfg.validate()?;
        if cfg.mode != self.mode {
            return Err(ProblemError::new("train.mode", format!("model was built for {:?} mode", self.mode)).into());
        }
        let dim = sampler.validate()?;
        let domain = self.problem.domain().clone();
        if dim != domain.dim() {
            return Err(ProblemError::new("sampler", format!("draws {dim}-d points for a {}-d problem", domain.dim())).into());
        }
        let support = sampler.support();
        if support
            .iter()
            .zip(domain.bounds())
            .any(|(&(lo, hi), &(a, b))| lo < a - 1e-12 || hi > b + 1e-12)
        {
            return Err(ProblemError::new("sampler", "support extends outside the domain").into());
        }
        let mut interior_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut boundary_rng = interior_rng.clone();
        boundary_rng.set_stream(1);
        let mut initial_rng = interior_rng.clone();
        initial_rng.set_stream(2);
        let soft = self.mode == Mode::Soft;
        let evolution = self.problem.initial().is_some();
        let empty = PointSet::empty(domain.dim());
        let mut adam = AdamState::new(self.theta.len());
        let start = self.history.len();
        for k in 0..cfg.n_iters {
            observe(k, self);
            let interior = sampler::sample(sampler, cfg.batch_size, &mut interior_rng)?;
            let (boundary, initial) = if soft {
                let b = sampler::sample_boundary(&domain, cfg.boundary_batch_size, &mut boundary_rng);
                let i = if evolution {
                    sampler::sample_initial(&domain, cfg.initial_batch_size, &mut initial_rng)?
                } else {
                    empty.clone()
                };
                (b, i)
            } else {
                (empty.clone(), empty.clone())
            };
            let rep = self.loss_and_grad(&self.theta, &interior, &boundary, &initial, cfg.weights)?;
            if !rep.loss.is_finite() || rep.grad.iter().any(|g| !g.is_finite()) {
                return Err(SolverError::NonFinite {
                    iteration: start + k,
                    loss: rep.loss,
                });
            }
            log::debug!("iter {} loss {:e}", start + k, rep.loss);
            self.history.push(LossRecord {
                loss: rep.loss,
                terms: soft.then(|| [rep.terms[0], rep.terms[1], rep.terms[2]]),
            });
            match cfg.optimizer {
                Optimizer::Adam => adam_step(&mut self.theta, &rep.grad, &mut adam, cfg),
                Optimizer::Sgd => sgd_step(&mut self.theta, &rep.grad, cfg),
            }
        }
        observe(cfg.n_iters, self);
        Ok(&self.history[start..])
    }

    /// The approximate solution: the wrapped trial in ansatz mode, the raw
    /// network in soft mode.
    pub fn evaluate(&self, points: &PointSet) -> Result<Vec<f64>, EngineError> {
        let domain = self.problem.domain();
        let outside = points.iter().filter(|p| !domain.contains(p, 1e-12)).count();
        if outside > 0 {
            log::warn!("{outside} evaluation points lie outside the domain; values are extrapolated");
        }
        match &self.programs {
            Programs::Ansatz { trial, .. } => trial.residuals(&self.network, &self.theta, points),
            Programs::Soft { .. } => Ok(self.network.forward(&self.theta, points)?),
        }
    }

    pub fn write_checkpoint(&self, w: impl Write) -> Result<(), NetworkError> {
        write_checkpoint(w, self.network.spec(), &self.theta)
    }
}

/// `iter,loss` or, in soft mode, `iter,loss,residual,boundary,initial`.
pub fn write_loss_csv(mut w: impl Write, history: &[LossRecord]) -> std::io::Result<()> {
    let soft = history.first().is_some_and(|r| r.terms.is_some());
    if soft {
        writeln!(w, "iter,loss,residual,boundary,initial")?;
    } else {
        writeln!(w, "iter,loss")?;
    }
    for (i, r) in history.iter().enumerate() {
        match r.terms {
            Some([a, b, c]) => writeln!(w, "{i},{:e},{a:e},{b:e},{c:e}", r.loss)?,
            None => writeln!(w, "{i},{:e}", r.loss)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
