//! Checkpoint format: one ASCII header line
//!
//! ```text
//! GFDG1 <input_dim> <layout> <units csv> <activations csv>\n
//! ```
//!
//! followed by the flat parameters as little-endian `f64`. Fields are
//! separated by single spaces; the layout may itself contain spaces, so the
//! two csv fields are taken from the right.

use std::io::{Read, Write};

use super::{Activation, Network, NetworkError, NetworkSpec, ParameterVector};

const MAGIC: &str = "GFDG1";

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn write_checkpoint(
    mut w: impl Write,
    spec: &NetworkSpec,
    theta: &[f64],
) -> Result<(), NetworkError> {
    let net = Network::new(spec.clone())?;
    if theta.len() != net.n_params() {
        return Err(NetworkError::ParamLength {
            expected: net.n_params(),
            got: theta.len(),
        });
    }
    if spec.layout.contains('\n') {
        return Err(NetworkError::Checkpoint("layout contains a newline".into()));
    }
    writeln!(
        w,
        "{MAGIC} {} {} {} {}",
        spec.input_dim,
        spec.layout,
        join(&spec.units),
        join(&spec.activations)
    )?;
    let mut bytes = Vec::with_capacity(theta.len() * 8);
    for v in theta {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(NetworkSpec, ParameterVector), NetworkError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let bad = |m: &str| NetworkError::Checkpoint(m.to_string());
    let nl = buf
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line"))?;
    let header = std::str::from_utf8(&buf[..nl]).map_err(|_| bad("header is not utf-8"))?;
    let mut tail = header.rsplitn(3, ' ');
    let acts = tail.next().ok_or_else(|| bad("missing activations"))?;
    let units = tail.next().ok_or_else(|| bad("missing units"))?;
    let head = tail.next().ok_or_else(|| bad("truncated header"))?;
    let mut head = head.splitn(3, ' ');
    if head.next() != Some(MAGIC) {
        return Err(bad("bad magic"));
    }
    let input_dim = head
        .next()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| bad("bad input dimension"))?;
    let layout = head.next().ok_or_else(|| bad("missing layout"))?.to_string();
    let units = units
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad("bad units")))
        .collect::<Result<Vec<_>, _>>()?;
    let activations = acts
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Activation>().map_err(|e| bad(&e)))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = NetworkSpec {
        layout,
        units,
        activations,
        input_dim,
    };
    let net = Network::new(spec.clone())?;
    let body = &buf[nl + 1..];
    if body.len() != net.n_params() * 8 {
        return Err(NetworkError::ParamLength {
            expected: net.n_params(),
            got: body.len() / 8,
        });
    }
    let theta = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((spec, ParameterVector(theta)))
}
