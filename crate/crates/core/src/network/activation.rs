use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    Sin,
}

/// Highest derivative order available from [`Activation::derivative`].
const MAX_DERIVATIVE: usize = 8;

// Derivatives of tanh and the logistic function are polynomials in the
// function value: d/dz P(y) = P'(y) y' with y' = 1 - y^2 (tanh) or s - s^2.
fn derivative_polys(dy: [f64; 3]) -> Vec<Vec<f64>> {
    let mut polys = vec![vec![0.0, 1.0]];
    for _ in 0..MAX_DERIVATIVE {
        let p = polys.last().unwrap();
        let dp: Vec<f64> = (1..p.len()).map(|i| i as f64 * p[i]).collect();
        let mut next = vec![0.0; dp.len() + 2];
        for (i, c) in dp.iter().enumerate() {
            for (j, d) in dy.iter().enumerate() {
                next[i + j] += c * d;
            }
        }
        polys.push(next);
    }
    polys
}

fn tanh_polys() -> &'static [Vec<f64>] {
    static P: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    P.get_or_init(|| derivative_polys([1.0, 0.0, -1.0]))
}

fn sigmoid_polys() -> &'static [Vec<f64>] {
    static P: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    P.get_or_init(|| derivative_polys([0.0, 1.0, -1.0]))
}

fn horner(p: &[f64], y: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * y + c)
}

const INV_FACTORIAL: [f64; 9] = [
    1.0,
    1.0,
    0.5,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5040.0,
    1.0 / 40320.0,
];

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Sin => "sin",
        }
    }

    pub fn apply(self, z: f64) -> f64 {
        self.derivative(z, 0)
    }

    /// `order`-th derivative at `z`.
    pub fn derivative(self, z: f64, order: usize) -> f64 {
        assert!(order <= MAX_DERIVATIVE, "activation derivative order {order}");
        match self {
            Activation::Tanh => horner(&tanh_polys()[order], z.tanh()),
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                horner(&sigmoid_polys()[order], s)
            }
            Activation::Sin => match order % 4 {
                0 => z.sin(),
                1 => z.cos(),
                2 => -z.sin(),
                _ => -z.cos(),
            },
            Activation::Relu => match order {
                0 => z.max(0.0),
                1 => f64::from(u8::from(z > 0.0)),
                _ => 0.0,
            },
        }
    }

    /// `out[k] = σ^(k + shift)(z) / k!`, the Taylor coefficients of the
    /// `shift`-th derivative around `z`.
    pub fn taylor_coefficients(self, z: f64, shift: usize, out: &mut [f64]) {
        match self {
            Activation::Tanh | Activation::Sigmoid => {
                let (y, polys) = if self == Activation::Tanh {
                    (z.tanh(), tanh_polys())
                } else {
                    (1.0 / (1.0 + (-z).exp()), sigmoid_polys())
                };
                for (k, o) in out.iter_mut().enumerate() {
                    *o = horner(&polys[k + shift], y) * INV_FACTORIAL[k];
                }
            }
            _ => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = self.derivative(z, k + shift) * INV_FACTORIAL[k];
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "relu" => Activation::Relu,
            "sin" => Activation::Sin,
            _ => return Err(format!("unknown activation `{s}`")),
        })
    }
}
