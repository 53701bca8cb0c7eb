//! Dense networks described by layout strings.
//!
//! A layout is a sequence of symbols: `f` dense layer, `a` activation,
//! `R` remember the current tensor, `+` add the remembered tensor back.
//! Whitespace is ignored. `"faR fa fa+ f"` with units `[10, 25, 10, 1]` is a
//! three-hidden-layer tanh network with one skip connection around the middle
//! two layers.
//!
//! Input derivatives are propagated as truncated Taylor jets (see
//! [`taylor`]), so every order comes out exact rather than from differences.

mod activation;
mod checkpoint;
pub mod taylor;

use std::collections::BTreeSet;
use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::MultiIndex;
use crate::points::PointSet;
pub use activation::Activation;
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use taylor::MonomialSet;

/// Highest total input-derivative order the network evaluates (three spatial
/// plus two in time).
pub const MAX_INPUT_ORDER: u32 = 5;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("layout: {0}")]
    Layout(String),
    #[error("point dimension {got} does not match network input dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("parameter vector has length {got}, network needs {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("unsupported derivative tag {0}")]
    Tag(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub layout: String,
    pub units: Vec<usize>,
    pub activations: Vec<Activation>,
    pub input_dim: usize,
}

impl NetworkSpec {
    pub fn new(layout: &str, units: Vec<usize>, activations: Vec<Activation>, input_dim: usize) -> Self {
        Self {
            layout: layout.to_string(),
            units,
            activations,
            input_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Layer {
    Dense {
        input: usize,
        output: usize,
        offset: usize,
    },
    Activation(Activation),
    ResidualSave,
    ResidualAdd,
}

/// Flat trainable parameters: per dense layer, an `output × input` weight
/// matrix (row-major) followed by `output` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(pub Vec<f64>);

impl Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    plan: Vec<Layer>,
    n_params: usize,
    output_dim: usize,
}

/// Validates a spec and turns its layout into an ordered layer plan.
pub fn parse_layout(spec: &NetworkSpec) -> Result<Vec<Layer>, NetworkError> {
    let symbols: Vec<char> = spec.layout.chars().filter(|c| !c.is_whitespace()).collect();
    if let Some(bad) = symbols.iter().find(|c| !"faR+".contains(**c)) {
        return Err(NetworkError::Layout(format!("unknown symbol `{bad}`")));
    }
    let n_dense = symbols.iter().filter(|&&c| c == 'f').count();
    let n_act = symbols.iter().filter(|&&c| c == 'a').count();
    if n_dense != spec.units.len() {
        return Err(NetworkError::Layout(format!(
            "{n_dense} dense layers but {} units given",
            spec.units.len()
        )));
    }
    if n_act != spec.activations.len() {
        return Err(NetworkError::Layout(format!(
            "{n_act} activations in layout but {} given",
            spec.activations.len()
        )));
    }
    if spec.input_dim == 0 || spec.units.contains(&0) {
        return Err(NetworkError::Layout("widths must be positive".into()));
    }
    let mut plan = Vec::with_capacity(symbols.len());
    let mut width = spec.input_dim;
    let mut offset = 0;
    let (mut units, mut acts) = (spec.units.iter(), spec.activations.iter());
    let mut saved: Option<usize> = None;
    for (pos, c) in symbols.iter().enumerate() {
        match c {
            'f' => {
                let output = *units.next().expect("counted");
                plan.push(Layer::Dense {
                    input: width,
                    output,
                    offset,
                });
                offset += width * output + output;
                width = output;
            }
            'a' => plan.push(Layer::Activation(*acts.next().expect("counted"))),
            'R' => {
                if saved.is_some() {
                    return Err(NetworkError::Layout(format!(
                        "nested `R` at symbol {pos}; close the open residual with `+` first"
                    )));
                }
                saved = Some(width);
                plan.push(Layer::ResidualSave);
            }
            '+' => {
                let Some(w) = saved.take() else {
                    return Err(NetworkError::Layout(format!("`+` at symbol {pos} has no matching `R`")));
                };
                if w != width {
                    return Err(NetworkError::Layout(format!(
                        "residual width mismatch at symbol {pos}: saved {w}, current {width}"
                    )));
                }
                plan.push(Layer::ResidualAdd);
            }
            _ => unreachable!(),
        }
    }
    if saved.is_some() {
        return Err(NetworkError::Layout("unmatched `R`".into()));
    }
    Ok(plan)
}

/// Per-point input derivatives for a set of tags.
#[derive(Debug, Clone)]
pub struct DerivativeTable {
    tags: Vec<MultiIndex>,
    outputs: usize,
    /// `[point][output][tag]`
    values: Vec<f64>,
}

impl DerivativeTable {
    pub fn tags(&self) -> &[MultiIndex] {
        &self.tags
    }

    pub fn get(&self, point: usize, output: usize, tag: &MultiIndex) -> Option<f64> {
        let t = self.tags.iter().position(|x| x == tag)?;
        Some(self.values[(point * self.outputs + output) * self.tags.len() + t])
    }

    pub fn len(&self) -> usize {
        self.values.len() / (self.outputs * self.tags.len()).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Everything the backward pass needs from a jet forward pass.
pub struct JetTrace {
    points: usize,
    /// Tensor entering each layer, `[point * S + s][width]`.
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl JetTrace {
    /// Output jets, `[point * S + s][output]`.
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn points(&self) -> usize {
        self.points
    }
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self, NetworkError> {
        let plan = parse_layout(&spec)?;
        let mut n_params = 0;
        let mut output_dim = spec.input_dim;
        for layer in &plan {
            if let Layer::Dense { input, output, .. } = layer {
                n_params += input * output + output;
                output_dim = *output;
            }
        }
        Ok(Self {
            spec,
            plan,
            n_params,
            output_dim,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn plan(&self) -> &[Layer] {
        &self.plan
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn has_activation(&self, act: Activation) -> bool {
        self.spec.activations.contains(&act)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, seed: u64) -> ParameterVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; self.n_params];
        for layer in &self.plan {
            if let Layer::Dense { input, output, offset } = *layer {
                let bound = (6.0 / (input + output) as f64).sqrt();
                for w in &mut theta[offset..offset + input * output] {
                    *w = rng.random_range(-bound..bound);
                }
            }
        }
        ParameterVector(theta)
    }

    fn check(&self, theta: &[f64], points: &PointSet) -> Result<(), NetworkError> {
        if theta.len() != self.n_params {
            return Err(NetworkError::ParamLength {
                expected: self.n_params,
                got: theta.len(),
            });
        }
        if points.dim() != self.spec.input_dim {
            return Err(NetworkError::Dimension {
                expected: self.spec.input_dim,
                got: points.dim(),
            });
        }
        Ok(())
    }

    /// Plain evaluation, `[point][output]`.
    pub fn forward(&self, theta: &[f64], points: &PointSet) -> Result<Vec<f64>, NetworkError> {
        let set = MonomialSet::constant(self.spec.input_dim);
        Ok(self.forward_jets(theta, points, &set)?.output)
    }

    /// Exact input derivatives of every output for each tag.
    pub fn input_derivatives(
        &self,
        theta: &[f64],
        points: &PointSet,
        tags: &BTreeSet<MultiIndex>,
    ) -> Result<DerivativeTable, NetworkError> {
        self.check_tags(tags.iter())?;
        let set = MonomialSet::closure(self.spec.input_dim, tags);
        let trace = self.forward_jets(theta, points, &set)?;
        let tags: Vec<MultiIndex> = tags.iter().cloned().collect();
        let idx: Vec<usize> = tags.iter().map(|t| set.position(t).expect("in closure")).collect();
        let s = set.len();
        let out = self.output_dim;
        let mut values = Vec::with_capacity(points.len() * out * tags.len());
        for p in 0..points.len() {
            for o in 0..out {
                for &k in &idx {
                    values.push(trace.output[(p * s + k) * out + o] * set.factorial(k));
                }
            }
        }
        Ok(DerivativeTable {
            tags,
            outputs: out,
            values,
        })
    }

    pub fn check_tags<'a>(&self, tags: impl IntoIterator<Item = &'a MultiIndex>) -> Result<(), NetworkError> {
        for t in tags {
            if t.nvars() != self.spec.input_dim || t.order() > MAX_INPUT_ORDER {
                return Err(NetworkError::Tag(format!(
                    "{t} (network has {} inputs, max order {MAX_INPUT_ORDER})",
                    self.spec.input_dim
                )));
            }
        }
        Ok(())
    }

    /// Forward pass carrying a Taylor jet over `set` for every activation.
    pub fn forward_jets(
        &self,
        theta: &[f64],
        points: &PointSet,
        set: &MonomialSet,
    ) -> Result<JetTrace, NetworkError> {
        self.check(theta, points)?;
        let s = set.len();
        let n = points.len();
        let d = self.spec.input_dim;
        let mut cur = vec![0.0; n * s * d];
        for (p, x) in points.iter().enumerate() {
            let base = p * s * d;
            cur[base..base + d].copy_from_slice(x);
            for v in 0..d {
                if let Some(k) = set.unit(v) {
                    cur[base + k * d + v] = 1.0;
                }
            }
        }
        let order = set.max_order() as usize;
        let mut derivs = vec![0.0; order + 1];
        let mut jet = vec![0.0; s];
        let mut out_jet = vec![0.0; s];
        let mut scratch = vec![0.0; s];
        let mut width = d;
        let mut saved: Vec<f64> = Vec::new();
        let mut inputs = Vec::with_capacity(self.plan.len());
        for layer in &self.plan {
            match *layer {
                Layer::Dense { input, output, offset } => {
                    let w = &theta[offset..offset + input * output];
                    let b = &theta[offset + input * output..offset + input * output + output];
                    let rows = n * s;
                    let mut next = vec![0.0; rows * output];
                    for r in 0..rows {
                        let h = &cur[r * input..(r + 1) * input];
                        let z = &mut next[r * output..(r + 1) * output];
                        let constant_row = r % s == 0;
                        for (o, zo) in z.iter_mut().enumerate() {
                            let wr = &w[o * input..(o + 1) * input];
                            let mut acc = if constant_row { b[o] } else { 0.0 };
                            for (wi, hi) in wr.iter().zip(h) {
                                acc += wi * hi;
                            }
                            *zo = acc;
                        }
                    }
                    inputs.push(std::mem::replace(&mut cur, next));
                    width = output;
                }
                Layer::Activation(act) => {
                    let mut next = vec![0.0; cur.len()];
                    for p in 0..n {
                        for c in 0..width {
                            for k in 0..s {
                                jet[k] = cur[(p * s + k) * width + c];
                            }
                            act.taylor_coefficients(jet[0], 0, &mut derivs);
                            set.compose(&derivs, &jet, &mut out_jet, &mut scratch);
                            for k in 0..s {
                                next[(p * s + k) * width + c] = out_jet[k];
                            }
                        }
                    }
                    inputs.push(std::mem::replace(&mut cur, next));
                }
                Layer::ResidualSave => {
                    saved = cur.clone();
                    inputs.push(Vec::new());
                }
                Layer::ResidualAdd => {
                    for (c, sv) in cur.iter_mut().zip(&saved) {
                        *c += sv;
                    }
                    inputs.push(Vec::new());
                }
            }
        }
        Ok(JetTrace {
            points: n,
            inputs,
            output: cur,
        })
    }

    /// Accumulates into `grad` the parameter gradient of `Σ adjoint · output`
    /// where `adjoint` has the layout of [`JetTrace::output`].
    pub fn backward_jets(
        &self,
        theta: &[f64],
        trace: &JetTrace,
        set: &MonomialSet,
        adjoint: &[f64],
        grad: &mut [f64],
    ) {
        let s = set.len();
        let n = trace.points;
        let rows = n * s;
        assert_eq!(adjoint.len(), rows * self.output_dim);
        assert_eq!(grad.len(), self.n_params);
        let order = set.max_order() as usize;
        let mut derivs = vec![0.0; order + 1];
        let mut jet = vec![0.0; s];
        let mut q = vec![0.0; s];
        let mut adj_jet = vec![0.0; s];
        let mut back = vec![0.0; s];
        let mut scratch = vec![0.0; s];
        let mut adj = adjoint.to_vec();
        let mut skip: Vec<f64> = Vec::new();
        for (layer, input) in self.plan.iter().zip(&trace.inputs).rev() {
            match *layer {
                Layer::Dense { input: din, output, offset } => {
                    let (gw, gb) = grad[offset..offset + din * output + output].split_at_mut(din * output);
                    let w = &theta[offset..offset + din * output];
                    let mut prev = vec![0.0; rows * din];
                    for r in 0..rows {
                        let a = &adj[r * output..(r + 1) * output];
                        let h = &input[r * din..(r + 1) * din];
                        let dh = &mut prev[r * din..(r + 1) * din];
                        let constant_row = r % s == 0;
                        for (o, &ao) in a.iter().enumerate() {
                            if ao == 0.0 {
                                continue;
                            }
                            if constant_row {
                                gb[o] += ao;
                            }
                            let gwr = &mut gw[o * din..(o + 1) * din];
                            let wr = &w[o * din..(o + 1) * din];
                            for i in 0..din {
                                gwr[i] += ao * h[i];
                                dh[i] += ao * wr[i];
                            }
                        }
                    }
                    adj = prev;
                }
                Layer::Activation(act) => {
                    let width = adj.len() / rows;
                    let mut prev = vec![0.0; adj.len()];
                    for p in 0..n {
                        for c in 0..width {
                            for k in 0..s {
                                let at = (p * s + k) * width + c;
                                jet[k] = input[at];
                                adj_jet[k] = adj[at];
                            }
                            // linearisation of the jet map is multiplication by σ'(z)
                            act.taylor_coefficients(jet[0], 1, &mut derivs);
                            set.compose(&derivs, &jet, &mut q, &mut scratch);
                            set.mul_transpose(&adj_jet, &q, &mut back);
                            for k in 0..s {
                                prev[(p * s + k) * width + c] = back[k];
                            }
                        }
                    }
                    adj = prev;
                }
                Layer::ResidualAdd => skip = adj.clone(),
                Layer::ResidualSave => {
                    for (a, k) in adj.iter_mut().zip(&skip) {
                        *a += k;
                    }
                }
            }
        }
    }
}
