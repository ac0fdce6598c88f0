//! Text container for trained networks.
//!
//! ```text
//! dense-network 1
//! layers 2
//! layer 10 64 tanh
//! w <64·10 row-major values>
//! b <64 values>
//! layer 64 4 identity
//! ...
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! reloaded network is bit-identical to the one saved.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};

use super::dense::{Activation, Dense, DenseNetwork};
use crate::error::{Error, Result};

const MAGIC: &str = "dense-network";
const VERSION: u32 = 1;

fn bad(message: impl Into<String>) -> Error {
    Error::InvalidInput(format!("network container: {}", message.into()))
}

pub(crate) fn write_values<'a, W: Write>(
    w: &mut W,
    tag: &str,
    values: impl Iterator<Item = &'a f64>,
) -> std::io::Result<()> {
    write!(w, "{tag}")?;
    for v in values {
        write!(w, " {v:?}")?;
    }
    writeln!(w)
}

/// Reads one line, splits it into whitespace tokens and checks the leading tag.
pub(crate) fn read_tagged<R: BufRead>(r: &mut R, tag: &str) -> Result<Vec<String>> {
    let mut line = String::new();
    let read = r.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
    if read == 0 {
        return Err(bad(format!("unexpected end of input, expected `{tag}`")));
    }
    let mut tokens = line.split_whitespace().map(str::to_owned);
    match tokens.next() {
        Some(t) if t == tag => Ok(tokens.collect()),
        other => Err(bad(format!("expected `{tag}`, found {other:?}"))),
    }
}

pub(crate) fn parse_values(tokens: &[String], expected: usize) -> Result<Vec<f64>> {
    if tokens.len() != expected {
        return Err(bad(format!(
            "expected {expected} values, found {}",
            tokens.len()
        )));
    }
    tokens
        .iter()
        .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad number `{t}`"))))
        .collect()
}

pub(crate) fn parse_usize(token: Option<&String>) -> Result<usize> {
    token
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("expected a non-negative integer"))
}

impl DenseNetwork {
    pub fn write_text<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{MAGIC} {VERSION}")?;
        writeln!(w, "layers {}", self.layers().len())?;
        for layer in self.layers() {
            writeln!(
                w,
                "layer {} {} {}",
                layer.input_dim(),
                layer.output_dim(),
                layer.activation.name()
            )?;
            // ndarray iterates in logical (row-major) order regardless of layout.
            write_values(w, "w", layer.weight.iter())?;
            write_values(w, "b", layer.bias.iter())?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: &mut R) -> Result<Self> {
        let header = read_tagged(r, MAGIC)?;
        if header.first().map(String::as_str) != Some("1") {
            return Err(bad(format!("unsupported version {header:?}")));
        }
        let count = parse_usize(read_tagged(r, "layers")?.first())?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let spec = read_tagged(r, "layer")?;
            let input = parse_usize(spec.first())?;
            let output = parse_usize(spec.get(1))?;
            let activation = spec
                .get(2)
                .and_then(|a| Activation::from_name(a))
                .ok_or_else(|| bad("unknown activation"))?;
            let weight = parse_values(&read_tagged(r, "w")?, input * output)?;
            let bias = parse_values(&read_tagged(r, "b")?, output)?;
            layers.push(Dense {
                weight: Array2::from_shape_vec((output, input), weight)
                    .map_err(|e| bad(e.to_string()))?,
                bias: Array1::from(bias),
                activation,
            });
        }
        DenseNetwork::new(layers)
    }
}
