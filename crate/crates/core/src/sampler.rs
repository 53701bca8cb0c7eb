//! Point samplers built from a small algebra of distributions.
//!
//! Base distributions live on the unit cube; [`SamplerSpec::Affine`] maps
//! them onto a problem rectangle and [`SamplerSpec::onto`] inserts that map
//! for a [`Domain`]. Boundary and initial-slice samplers work directly in
//! domain coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::points::PointSet;
use crate::problem::Domain;

/// Rejection attempts allowed per truncated draw.
pub const REJECTION_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("invalid sampler: {0}")]
    Invalid(String),
    #[error("truncated draw rejected {REJECTION_CAP} times in a row")]
    RejectionCap,
    #[error("initial-slice sampling needs a time axis")]
    NoTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerSpec {
    Uniform {
        dim: usize,
    },
    /// Independent normals per coordinate, truncated to `[0, 1]`.
    TruncatedGaussian {
        mean: Vec<f64>,
        sd: Vec<f64>,
    },
    /// Independent exponentials per coordinate, truncated to `[0, 1]`.
    Exponential {
        rate: Vec<f64>,
    },
    /// Concatenation of independent draws.
    Product {
        factors: Vec<SamplerSpec>,
    },
    Mixture {
        components: Vec<SamplerSpec>,
        weights: Vec<f64>,
    },
    /// `x -> scale * x + shift`, per coordinate.
    Affine {
        child: Box<SamplerSpec>,
        scale: Vec<f64>,
        shift: Vec<f64>,
    },
    BoundaryFace {
        domain: Domain,
    },
    InitialSlice {
        domain: Domain,
    },
}

impl SamplerSpec {
    pub fn uniform(dim: usize) -> Self {
        SamplerSpec::Uniform { dim }
    }

    /// Maps a unit-cube sampler onto the domain rectangle.
    pub fn onto(self, domain: &Domain) -> Self {
        let (scale, shift) = domain.bounds().iter().map(|&(a, b)| (b - a, a)).unzip();
        SamplerSpec::Affine {
            child: Box::new(self),
            scale,
            shift,
        }
    }

    /// Checks the invariants and returns the point dimension.
    pub fn validate(&self) -> Result<usize, SamplerError> {
        let bad = |m: String| Err(SamplerError::Invalid(m));
        match self {
            SamplerSpec::Uniform { dim } => {
                if *dim == 0 {
                    return bad("uniform: dim must be positive".into());
                }
                Ok(*dim)
            }
            SamplerSpec::TruncatedGaussian { mean, sd } => {
                if mean.is_empty() || mean.len() != sd.len() {
                    return bad("truncated_gaussian: mean and sd need equal, positive lengths".into());
                }
                if sd.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
                    return bad("truncated_gaussian: need finite means and positive sd".into());
                }
                Ok(mean.len())
            }
            SamplerSpec::Exponential { rate } => {
                if rate.is_empty() || rate.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                    return bad("exponential: need at least one positive rate".into());
                }
                Ok(rate.len())
            }
            SamplerSpec::Product { factors } => {
                if factors.is_empty() {
                    return bad("product: no factors".into());
                }
                factors.iter().map(Self::validate).sum()
            }
            SamplerSpec::Mixture { components, weights } => {
                if components.is_empty() || components.len() != weights.len() {
                    return bad("mixture: need one weight per component".into());
                }
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return bad("mixture: weights must be positive".into());
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("mixture: weights sum to {total}, not 1"));
                }
                let dim = components[0].validate()?;
                for c in &components[1..] {
                    if c.validate()? != dim {
                        return bad("mixture: components differ in dimension".into());
                    }
                }
                Ok(dim)
            }
            SamplerSpec::Affine { child, scale, shift } => {
                let dim = child.validate()?;
                if scale.len() != dim || shift.len() != dim {
                    return bad(format!("affine: expected {dim} scales and shifts"));
                }
                if scale.iter().chain(shift).any(|v| !v.is_finite()) {
                    return bad("affine: non-finite coefficients".into());
                }
                Ok(dim)
            }
            SamplerSpec::BoundaryFace { domain } => {
                if domain.spatial_indices().is_empty() {
                    return bad("boundary_face: domain has no spatial axis".into());
                }
                Ok(domain.dim())
            }
            SamplerSpec::InitialSlice { domain } => {
                if domain.time_index().is_none() {
                    return Err(SamplerError::NoTime);
                }
                Ok(domain.dim())
            }
        }
    }

    /// Bounding box of the support.
    pub fn support(&self) -> Vec<(f64, f64)> {
        match self {
            SamplerSpec::Uniform { dim } => vec![(0.0, 1.0); *dim],
            SamplerSpec::TruncatedGaussian { mean, .. } => vec![(0.0, 1.0); mean.len()],
            SamplerSpec::Exponential { rate } => vec![(0.0, 1.0); rate.len()],
            SamplerSpec::Product { factors } => factors.iter().flat_map(Self::support).collect(),
            SamplerSpec::Mixture { components, .. } => {
                let mut acc = components[0].support();
                for c in &components[1..] {
                    for (a, b) in acc.iter_mut().zip(c.support()) {
                        a.0 = a.0.min(b.0);
                        a.1 = a.1.max(b.1);
                    }
                }
                acc
            }
            SamplerSpec::Affine { child, scale, shift } => child
                .support()
                .iter()
                .zip(scale.iter().zip(shift))
                .map(|(&(lo, hi), (&s, &c))| {
                    let (p, q) = (s * lo + c, s * hi + c);
                    (p.min(q), p.max(q))
                })
                .collect(),
            SamplerSpec::BoundaryFace { domain } | SamplerSpec::InitialSlice { domain } => {
                domain.bounds().to_vec()
            }
        }
    }

    fn draw(&self, rng: &mut impl Rng, out: &mut Vec<f64>) -> Result<(), SamplerError> {
        match self {
            SamplerSpec::Uniform { dim } => {
                for _ in 0..*dim {
                    out.push(rng.random::<f64>());
                }
            }
            SamplerSpec::TruncatedGaussian { mean, sd } => {
                for (&m, &s) in mean.iter().zip(sd) {
                    let normal = Normal::new(m, s).map_err(|e| SamplerError::Invalid(e.to_string()))?;
                    out.push(truncated(rng, |r| normal.sample(r))?);
                }
            }
            SamplerSpec::Exponential { rate } => {
                for &r in rate {
                    let exp = Exp::new(r).map_err(|e| SamplerError::Invalid(e.to_string()))?;
                    out.push(truncated(rng, |g| exp.sample(g))?);
                }
            }
            SamplerSpec::Product { factors } => {
                for f in factors {
                    f.draw(rng, out)?;
                }
            }
            SamplerSpec::Mixture { components, weights } => {
                let u = rng.random::<f64>();
                let mut acc = 0.0;
                let mut pick = components.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                components[pick].draw(rng, out)?;
            }
            SamplerSpec::Affine { child, scale, shift } => {
                let start = out.len();
                child.draw(rng, out)?;
                for (v, (s, c)) in out[start..].iter_mut().zip(scale.iter().zip(shift)) {
                    *v = s * *v + c;
                }
            }
            SamplerSpec::BoundaryFace { domain } => boundary_point(domain, rng, out),
            SamplerSpec::InitialSlice { domain } => initial_point(domain, rng, out)?,
        }
        Ok(())
    }
}

fn truncated<R: Rng>(rng: &mut R, mut draw: impl FnMut(&mut R) -> f64) -> Result<f64, SamplerError> {
    for _ in 0..REJECTION_CAP {
        let v = draw(rng);
        if (0.0..=1.0).contains(&v) {
            return Ok(v);
        }
    }
    Err(SamplerError::RejectionCap)
}

/// `n` independent draws.
pub fn sample(spec: &SamplerSpec, n: usize, rng: &mut impl Rng) -> Result<PointSet, SamplerError> {
    let dim = spec.validate()?;
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        spec.draw(rng, &mut data)?;
    }
    Ok(PointSet::new(dim, data))
}

fn boundary_point(domain: &Domain, rng: &mut impl Rng, out: &mut Vec<f64>) {
    let spatial = domain.spatial_indices();
    let bounds = domain.bounds();
    // every face of axis i has measure Π_{j != i} (b_j - a_j)
    let measures: Vec<f64> = spatial
        .iter()
        .map(|&i| {
            spatial
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| bounds[j].1 - bounds[j].0)
                .product()
        })
        .collect();
    let total: f64 = 2.0 * measures.iter().sum::<f64>();
    let mut u = rng.random::<f64>() * total;
    let mut face = (spatial[spatial.len() - 1], true);
    'pick: for (&i, &m) in spatial.iter().zip(&measures) {
        for upper in [false, true] {
            if u < m {
                face = (i, upper);
                break 'pick;
            }
            u -= m;
        }
    }
    let start = out.len();
    for &(a, b) in bounds {
        out.push(a + (b - a) * rng.random::<f64>());
    }
    let (axis, upper) = face;
    out[start + axis] = if upper { bounds[axis].1 } else { bounds[axis].0 };
}

fn initial_point(domain: &Domain, rng: &mut impl Rng, out: &mut Vec<f64>) -> Result<(), SamplerError> {
    let t = domain.time_index().ok_or(SamplerError::NoTime)?;
    let start = out.len();
    for &(a, b) in domain.bounds() {
        out.push(a + (b - a) * rng.random::<f64>());
    }
    out[start + t] = domain.bounds()[t].0;
    Ok(())
}

/// Points on the spatial boundary (times the full time interval, if any).
/// Faces are chosen in proportion to their measure.
pub fn sample_boundary(domain: &Domain, n: usize, rng: &mut impl Rng) -> PointSet {
    let mut data = Vec::with_capacity(n * domain.dim());
    for _ in 0..n {
        boundary_point(domain, rng, &mut data);
    }
    PointSet::new(domain.dim(), data)
}

/// Points on `{t0} × Ω`.
pub fn sample_initial(domain: &Domain, n: usize, rng: &mut impl Rng) -> Result<PointSet, SamplerError> {
    let mut data = Vec::with_capacity(n * domain.dim());
    for _ in 0..n {
        initial_point(domain, rng, &mut data)?;
    }
    Ok(PointSet::new(domain.dim(), data))
}

/// A spec paired with its own generator.
#[derive(Debug, Clone)]
pub struct Sampler {
    spec: SamplerSpec,
    seed: u64,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(spec: SamplerSpec, seed: u64) -> Result<Self, SamplerError> {
        spec.validate()?;
        Ok(Self {
            spec,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn spec(&self) -> &SamplerSpec {
        &self.spec
    }

    pub fn sample(&mut self, n: usize) -> Result<PointSet, SamplerError> {
        sample(&self.spec, n, &mut self.rng)
    }

    /// Independent copy on another stream of the same seed.
    pub fn fork(&self, stream: u64) -> Sampler {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        Sampler {
            spec: self.spec.clone(),
            seed: self.seed,
            rng,
        }
    }
}
