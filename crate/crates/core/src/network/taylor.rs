//! Truncated multivariate Taylor polynomials over a downward-closed set of
//! monomials.
//!
//! A jet stores Taylor coefficients `c_α = ∂^α f / α!` for every α in a
//! [`MonomialSet`]. Because the set is closed under taking smaller
//! multi-indices, truncated products are exact on the set.

use std::collections::{BTreeSet, HashMap};

use crate::expr::MultiIndex;

#[derive(Debug, Clone)]
pub struct MonomialSet {
    monomials: Vec<MultiIndex>,
    index: HashMap<MultiIndex, usize>,
    /// `(i, j, k)` with `monomials[i] + monomials[j] == monomials[k]`.
    products: Vec<(usize, usize, usize)>,
    /// Index of each unit monomial `e_v`, if present.
    units: Vec<Option<usize>>,
    factorials: Vec<f64>,
    max_order: u32,
}

impl MonomialSet {
    /// Smallest downward-closed set holding every tag.
    pub fn closure<'a>(nvars: usize, tags: impl IntoIterator<Item = &'a MultiIndex>) -> Self {
        let mut set = BTreeSet::new();
        set.insert(MultiIndex::zero(nvars));
        let mut stack: Vec<MultiIndex> = tags.into_iter().cloned().collect();
        while let Some(m) = stack.pop() {
            if !set.insert(m.clone()) {
                continue;
            }
            for v in 0..nvars {
                if m.counts()[v] > 0 {
                    let mut c = m.counts().to_vec();
                    c[v] -= 1;
                    stack.push(MultiIndex::from_counts(c));
                }
            }
        }
        let mut monomials: Vec<MultiIndex> = set.into_iter().collect();
        monomials.sort_by(|a, b| a.order().cmp(&b.order()).then_with(|| b.cmp(a)));
        let index: HashMap<_, _> = monomials
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        let mut products = Vec::new();
        for (i, a) in monomials.iter().enumerate() {
            for (j, b) in monomials.iter().enumerate() {
                if let Some(&k) = index.get(&a.add(b)) {
                    products.push((i, j, k));
                }
            }
        }
        let units = (0..nvars)
            .map(|v| index.get(&MultiIndex::unit(nvars, v)).copied())
            .collect();
        let factorials = monomials.iter().map(MultiIndex::factorial).collect();
        let max_order = monomials.iter().map(MultiIndex::order).max().unwrap_or(0);
        Self {
            monomials,
            index,
            products,
            units,
            factorials,
            max_order,
        }
    }

    /// The set holding only the constant term.
    pub fn constant(nvars: usize) -> Self {
        Self::closure(nvars, [])
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn nvars(&self) -> usize {
        self.units.len()
    }

    pub fn monomials(&self) -> &[MultiIndex] {
        &self.monomials
    }

    pub fn position(&self, m: &MultiIndex) -> Option<usize> {
        self.index.get(m).copied()
    }

    pub fn unit(&self, var: usize) -> Option<usize> {
        self.units[var]
    }

    pub fn factorial(&self, i: usize) -> f64 {
        self.factorials[i]
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    /// `out = a * b` truncated to the set.
    pub fn mul(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for &(i, j, k) in &self.products {
            out[k] += a[i] * b[j];
        }
    }

    /// Evaluates `Σ_k coeffs[k] δ^k` where `δ` is `z` with its constant
    /// term dropped. `coeffs` has one entry per power up to the max order.
    pub fn compose(&self, coeffs: &[f64], z: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let n = self.len();
        let k_max = coeffs.len() - 1;
        out.fill(0.0);
        out[0] = coeffs[k_max];
        for k in (0..k_max).rev() {
            // out <- out * δ + coeffs[k]
            scratch[..n].fill(0.0);
            for &(i, j, m) in &self.products {
                if j != 0 {
                    scratch[m] += out[i] * z[j];
                }
            }
            out.copy_from_slice(&scratch[..n]);
            out[0] += coeffs[k];
        }
    }

    /// Adjoint of multiplication by a fixed jet `q`:
    /// `out_j = Σ_{i + j = k} adj_k q_i`.
    pub fn mul_transpose(&self, adj: &[f64], q: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for &(i, j, k) in &self.products {
            out[j] += adj[k] * q[i];
        }
    }
}
