//! Command-line front end: JSON run configs, training runs and oracle
//! comparisons.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration,
//! 3 numeric failure during training, 4 problem shape the oracle cannot solve.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::engine::EngineError;
use crate::expr::VarList;
use crate::network::{read_checkpoint, Activation, Network, NetworkError, NetworkSpec};
use crate::oracle::{self, grid_error, linspace, GridError, OracleError, OracleShape};
use crate::points::PointSet;
use crate::problem::{default_vars, Domain, PdeProblem, ProblemError, ProblemText};
use crate::sampler::SamplerSpec;
use crate::solver::{write_loss_csv, Mode, SolverError, TrainConfig, TrainedModel};

pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_UNSUPPORTED: i32 = 4;

/// Oracle grids are this many times finer than the output grid.
pub const ORACLE_REFINE: usize = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        let code = match &e {
            SolverError::NonFinite { .. } | SolverError::Engine(EngineError::Domain { .. }) => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// A number or an expression in the DSL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExprText {
    Number(f64),
    Text(String),
}

impl ExprText {
    pub fn source(&self) -> String {
        match self {
            ExprText::Number(v) => format!("{v:?}"),
            ExprText::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    /// Spatial dimensions; `t` is added when initial data is given.
    pub n_dims: usize,
    pub form: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variables: Option<Vec<String>>,
    /// One interval per variable, spatial first; defaults to `[0, 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_condition: Option<ExprText>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_condition: Option<ExprText>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_rate: Option<ExprText>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Activations {
    Shared(Activation),
    Each(Vec<Activation>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyConfig {
    pub layout: String,
    pub units: Vec<usize>,
    #[serde(alias = "activation", default = "default_activations")]
    pub activations: Activations,
}

fn default_activations() -> Activations {
    Activations::Shared(Activation::Tanh)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub out_dir: PathBuf,
    /// Nodes per spatial axis of `solution.csv` and `compare.csv`.
    pub grid: usize,
    /// Evaluation time for evolution problems (defaults to the final time).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            grid: 51,
            time: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub pde: PdeConfig,
    pub body: BodyConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerSpec>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Everything a run needs, checked against each other.
pub struct Setup {
    pub config: RunConfig,
    pub problem: PdeProblem,
    pub spec: NetworkSpec,
    pub sampler: SamplerSpec,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(format!("{path}: {}", e.into_inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.out_dir {
            self.output.out_dir = d.clone();
        }
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if let Some(n) = o.iters {
            self.train.n_iters = n;
        }
        if let Some(b) = o.batch_size {
            self.train.batch_size = b;
        }
        if let Some(g) = o.grid {
            self.output.grid = g;
        }
        if let Some(t) = o.time {
            self.output.time = Some(t);
        }
        if let Some(m) = o.mode {
            self.train.mode = m;
        }
    }

    /// Validates and fills every default, so the serialized result
    /// reproduces the run on its own.
    pub fn resolve(mut self) -> Result<Setup, CliError> {
        let pde = &mut self.pde;
        let evolution = pde.initial_condition.is_some();
        let vars = match &pde.variables {
            Some(names) => VarList::new(names).map_err(|e| ProblemError::new("pde.variables", e.to_string())),
            None => default_vars(pde.n_dims + evolution as usize, evolution)
                .map_err(|e| ProblemError::new("pde.n_dims", e.message)),
        }
        .map_err(CliError::config)?;
        let spatial = vars.len() - vars.is_evolution() as usize;
        if spatial != pde.n_dims {
            return Err(CliError::config(ProblemError::new(
                "pde.n_dims",
                format!("{} spatial variables listed for n_dims = {}", spatial, pde.n_dims),
            )));
        }
        let bounds = pde.domain.clone().unwrap_or_else(|| vec![(0.0, 1.0); vars.len()]);
        let domain = Domain::new(bounds, vars.time_index())
            .map_err(|e| CliError::config(ProblemError::new("pde.domain", e.message)))?;
        pde.variables = Some(vars.names().to_vec());
        pde.domain = Some(domain.bounds().to_vec());
        let boundary = pde.boundary_condition.get_or_insert(ExprText::Number(0.0)).source();
        let initial = pde.initial_condition.as_ref().map(ExprText::source);
        let rate = pde.initial_rate.as_ref().map(ExprText::source);
        let problem = PdeProblem::from_text(
            vars,
            domain.clone(),
            &ProblemText {
                form: &pde.form,
                boundary: Some(&boundary),
                initial: initial.as_deref(),
                initial_rate: rate.as_deref(),
            },
        )
        .map_err(|e| CliError::config(ProblemError::new(&format!("pde.{}", e.key), e.message)))?;

        let n_act = self.body.layout.matches('a').count();
        let acts = match &self.body.activations {
            Activations::Shared(a) => vec![*a; n_act],
            Activations::Each(v) => v.clone(),
        };
        self.body.activations = Activations::Each(acts.clone());
        let spec = NetworkSpec::new(&self.body.layout, self.body.units.clone(), acts, problem.dim());
        Network::new(spec.clone()).map_err(|e| CliError::config(format!("body.{}", body_key(&e))))?;

        self.train.validate().map_err(CliError::config)?;
        let sampler = self
            .sampler
            .get_or_insert_with(|| SamplerSpec::uniform(domain.dim()).onto(&domain))
            .clone();
        let dim = sampler
            .validate()
            .map_err(|e| CliError::config(format!("sampler: {e}")))?;
        if dim != problem.dim() {
            return Err(CliError::config(format!(
                "sampler: draws {dim}-d points, problem has {} variables",
                problem.dim()
            )));
        }
        if self.output.grid < 2 {
            return Err(CliError::config("output.grid: need at least 2 nodes per axis"));
        }
        Ok(Setup {
            config: self,
            problem,
            spec,
            sampler,
        })
    }
}

fn body_key(e: &NetworkError) -> String {
    match e {
        NetworkError::Layout(m) => {
            let key = if m.contains("units") || m.contains("widths") {
                "units"
            } else if m.contains("activations") {
                "activations"
            } else {
                "layout"
            };
            format!("{key}: {m}")
        }
        e => format!("layout: {e}"),
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Nodes per spatial axis of the output grid.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Evaluation time for evolution problems.
    #[arg(long)]
    pub time: Option<f64>,
    /// ansatz | soft
    #[arg(long)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Parser)]
#[command(name = "galerkin", version, about = "Deep Galerkin PDE solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write loss.csv, solution.csv and model.ckpt.
    Solve(Overrides),
    /// Compare a trained model with the finite-difference oracle.
    Compare {
        #[command(flatten)]
        overrides: Overrides,
        /// Checkpoint to load (defaults to `<out_dir>/model.ckpt`).
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(o) => run_solve(&o).map(|_| ()),
        Command::Compare { overrides, model } => {
            let err = run_compare(&overrides, model.as_deref())?;
            println!("linf={:e} rms={:e}", err.linf, err.rms);
            Ok(())
        }
    }
}

fn load(o: &Overrides) -> Result<Setup, CliError> {
    let mut cfg = RunConfig::load(&o.config)?;
    cfg.apply(o);
    cfg.resolve()
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    Ok((path, BufWriter::new(f)))
}

fn finish(path: &Path, mut w: BufWriter<File>, r: std::io::Result<()>) -> Result<(), CliError> {
    r.and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

/// Output grid: `grid` nodes per spatial axis, time fixed at `time`.
fn output_points(problem: &PdeProblem, grid: usize, time: Option<f64>) -> PointSet {
    let domain = problem.domain();
    let axes: Vec<Vec<f64>> = (0..domain.dim())
        .map(|i| {
            if Some(i) == domain.time_index() {
                let (_, t1) = domain.bounds()[i];
                vec![time.unwrap_or(t1)]
            } else {
                let (a, b) = domain.bounds()[i];
                linspace(a, b, grid)
            }
        })
        .collect();
    let mut pts = PointSet::empty(domain.dim());
    let mut idx = vec![0usize; axes.len()];
    let mut row = vec![0.0; axes.len()];
    loop {
        for (k, &i) in idx.iter().enumerate() {
            row[k] = axes[k][i];
        }
        pts.push(&row);
        let mut k = axes.len();
        loop {
            if k == 0 {
                return pts;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

fn rows(points: &PointSet, columns: &[&[f64]]) -> Vec<Vec<f64>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut r = p.to_vec();
            r.extend(columns.iter().map(|c| c[i]));
            r
        })
        .collect()
}

fn evaluation_error(e: EngineError) -> CliError {
    CliError {
        code: EXIT_NUMERIC,
        message: e.to_string(),
    }
}

/// Trains per the config and writes the run artifacts.
pub fn run_solve(o: &Overrides) -> Result<TrainedModel, CliError> {
    let setup = load(o)?;
    let cfg = &setup.config;
    let dir = &cfg.output.out_dir;
    let (path, mut w) = create(dir, "resolved_config.json")?;
    let r = serde_json::to_writer_pretty(&mut w, cfg)
        .map_err(std::io::Error::other)
        .and_then(|_| writeln!(w));
    finish(&path, w, r)?;

    log::info!(
        "training {} parameters for {} iterations ({:?} mode)",
        Network::new(setup.spec.clone()).map(|n| n.n_params()).unwrap_or(0),
        cfg.train.n_iters,
        cfg.train.mode
    );
    let mut model = TrainedModel::new(setup.problem.clone(), setup.spec.clone(), cfg.train.mode, cfg.train.seed)?;
    let fitted = model.fit(&setup.sampler, &cfg.train).map(|_| ());
    // keep whatever history exists, even when training blew up
    let (path, w) = create(dir, "loss.csv")?;
    let mut w = w;
    let r = write_loss_csv(&mut w, model.history());
    finish(&path, w, r)?;
    fitted?;
    if let Some(last) = model.history().last() {
        log::info!("final loss {:e}", last.loss);
    }

    let pts = output_points(model.problem(), cfg.output.grid, cfg.output.time);
    let values = model.evaluate(&pts).map_err(evaluation_error)?;
    let mut header: Vec<&str> = model.problem().vars().names().iter().map(String::as_str).collect();
    header.push("u");
    let (path, mut w) = create(dir, "solution.csv")?;
    let r = oracle::write_grid_csv(&mut w, &header, rows(&pts, &[&values]));
    finish(&path, w, r)?;

    let (path, mut w) = create(dir, "model.ckpt")?;
    let r = model.write_checkpoint(&mut w).map_err(|e| std::io::Error::other(e.to_string()));
    finish(&path, w, r)?;
    Ok(model)
}

/// Oracle values on the output grid of `problem`.
pub fn oracle_values(problem: &PdeProblem, grid: usize, time: Option<f64>) -> Result<Vec<f64>, OracleError> {
    let n = ORACLE_REFINE * (grid - 1) + 1;
    match oracle::classify(problem)? {
        OracleShape::Poisson { q, g } => Ok(oracle::solve_poisson_fd(&q, &g, problem.domain(), n)?
            .subsample(ORACLE_REFINE)
            .u),
        OracleShape::Heat { f, u0, kappa } => {
            let (t0, t1) = problem.domain().time_interval().expect("heat has time");
            let steps = (ORACLE_REFINE * (grid - 1)).max(oracle::MIN_STEPS);
            let sol = oracle::solve_heat_fd(&f, &u0, kappa, problem.domain(), n, steps)?;
            let t = time.unwrap_or(t1).clamp(t0, t1);
            Ok(sol.at_time(t).subsample(ORACLE_REFINE).u)
        }
    }
}

/// Loads a checkpoint, evaluates it next to the oracle and writes `compare.csv`.
pub fn run_compare(o: &Overrides, model_path: Option<&Path>) -> Result<GridError, CliError> {
    let setup = load(o)?;
    let cfg = &setup.config;
    let unsupported = |e: OracleError| CliError {
        code: match e {
            OracleError::Unsupported(_) => EXIT_UNSUPPORTED,
            _ => EXIT_NUMERIC,
        },
        message: e.to_string(),
    };
    oracle::classify(&setup.problem).map_err(unsupported)?;
    let default_path = cfg.output.out_dir.join("model.ckpt");
    let path = model_path.unwrap_or(&default_path);
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let (spec, theta) = read_checkpoint(std::io::BufReader::new(file)).map_err(|e| match e {
        NetworkError::Io(e) => CliError::io(path, e),
        e => CliError::config(format!("{}: {e}", path.display())),
    })?;
    let net = Network::new(spec).map_err(CliError::config)?;
    let model = TrainedModel::with_params(setup.problem.clone(), net, theta, cfg.train.mode)?;

    let pts = output_points(&setup.problem, cfg.output.grid, cfg.output.time);
    let values = model.evaluate(&pts).map_err(evaluation_error)?;
    let reference = oracle_values(&setup.problem, cfg.output.grid, cfg.output.time).map_err(unsupported)?;
    let diff: Vec<f64> = values.iter().zip(&reference).map(|(a, b)| (a - b).abs()).collect();
    let err = grid_error(&values, &reference).map_err(unsupported)?;

    let mut header: Vec<&str> = setup.problem.vars().names().iter().map(String::as_str).collect();
    header.extend(["model", "oracle", "diff"]);
    let (out, mut w) = create(&cfg.output.out_dir, "compare.csv")?;
    let r = oracle::write_grid_csv(&mut w, &header, rows(&pts, &[&values, &reference, &diff]));
    finish(&out, w, r)?;
    Ok(err)
}
