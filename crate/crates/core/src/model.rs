//! Workload description: a single chain of INT8 dense layers with at most one
//! global aggregation, plus the line-oriented text format used to store it.
//!
//! ```text
//! # comments start with '#'
//! name = deepsets-32
//! input = 32x21
//! dense 32 bias relu shift=7
//! dense 32 bias relu
//! shift = 6              # applies to the layer above
//! aggregate mean shift=0
//! dense 10 bias
//! ```
//!
//! A dense line is `dense N` or `dense KxN` (the explicit form is checked
//! against the chain) followed by any of `bias`, `relu`, `shift=S`. The
//! aggregation line is `aggregate [sum|mean] [shift=S]`; the reduction
//! defaults to `mean`.

use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};

/// Largest legal requantization shift.
pub const MAX_SHIFT: u32 = 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceKind {
    Sum,
    Mean,
}

impl fmt::Display for ReduceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReduceKind::Sum => "sum",
            ReduceKind::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// Output features.
    pub n: usize,
    pub bias: bool,
    pub relu: bool,
    /// Power-of-two output scale exponent used when requantizing to INT8.
    pub shift: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationLayer {
    pub reduce: ReduceKind,
    pub shift: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Dense(DenseLayer),
    Aggregate(AggregationLayer),
}

impl Layer {
    pub fn shift(&self) -> u32 {
        match self {
            Layer::Dense(d) => d.shift,
            Layer::Aggregate(a) => a.shift,
        }
    }

    fn shift_mut(&mut self) -> &mut u32 {
        match self {
            Layer::Dense(d) => &mut d.shift,
            Layer::Aggregate(a) => &mut a.shift,
        }
    }
}

/// Effective matrix-multiply shape of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerDims {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

/// Shape of every layer after chaining.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolvedLayer {
    Dense(LayerDims),
    /// Reduction of an `m x f` activation down to `1 x f`.
    Aggregate { m: usize, f: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Input activation rows (samples / particles).
    pub input_rows: usize,
    /// Input features.
    pub input_cols: usize,
    pub layers: Vec<Layer>,
}

impl ModelSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        parse_model(&read_file(path)?)
    }

    /// Resolved shapes for all layers, in order.
    pub fn resolve(&self) -> Result<Vec<ResolvedLayer>> {
        if self.layers.is_empty() {
            return Err(Error::Model("model has no layers".into()));
        }
        if self.input_rows == 0 || self.input_cols == 0 {
            return Err(Error::Model("input shape must be at least 1x1".into()));
        }
        let mut rows = self.input_rows;
        let mut cols = self.input_cols;
        let mut seen_aggregate = false;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.shift() > MAX_SHIFT {
                return Err(Error::Model(format!(
                    "layer {i}: shift {} outside [0, {MAX_SHIFT}]",
                    layer.shift()
                )));
            }
            match layer {
                Layer::Dense(d) => {
                    if d.n == 0 {
                        return Err(Error::Model(format!("layer {i}: N must be >= 1")));
                    }
                    out.push(ResolvedLayer::Dense(LayerDims {
                        m: rows,
                        k: cols,
                        n: d.n,
                    }));
                    cols = d.n;
                }
                Layer::Aggregate(_) => {
                    if seen_aggregate {
                        return Err(Error::Model(format!(
                            "layer {i}: more than one aggregation layer"
                        )));
                    }
                    if i == 0 || !matches!(self.layers[i - 1], Layer::Dense(_)) {
                        return Err(Error::Model(format!(
                            "layer {i}: aggregation must follow a dense layer"
                        )));
                    }
                    seen_aggregate = true;
                    out.push(ResolvedLayer::Aggregate { m: rows, f: cols });
                    rows = 1;
                }
            }
        }
        Ok(out)
    }

    /// Index of the aggregation layer, if any.
    pub fn aggregate_index(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| matches!(l, Layer::Aggregate(_)))
    }

    /// Indices (into `layers`) of the dense layers, in order.
    pub fn dense_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Dense(_)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn output_shape(&self) -> Result<(usize, usize)> {
        let resolved = self.resolve()?;
        Ok(match resolved.last().expect("non-empty") {
            ResolvedLayer::Dense(d) => (d.m, d.n),
            ResolvedLayer::Aggregate { f, .. } => (1, *f),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "input = {}x{}", self.input_rows, self.input_cols);
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    let _ = write!(s, "dense {}", d.n);
                    if d.bias {
                        s.push_str(" bias");
                    }
                    if d.relu {
                        s.push_str(" relu");
                    }
                    let _ = writeln!(s, " shift={}", d.shift);
                }
                Layer::Aggregate(a) => {
                    let _ = writeln!(s, "aggregate {} shift={}", a.reduce, a.shift);
                }
            }
        }
        s
    }
}

/// Per-dense-layer `(M, K, N)` triples after shape chaining.
pub fn validate_shapes(model: &ModelSpec) -> Result<Vec<LayerDims>> {
    Ok(model
        .resolve()?
        .into_iter()
        .filter_map(|l| match l {
            ResolvedLayer::Dense(d) => Some(d),
            ResolvedLayer::Aggregate { .. } => None,
        })
        .collect())
}

fn parse_dims(s: &str) -> Option<(usize, usize)> {
    let (a, b) = s.split_once(['x', 'X'])?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn parse_shift(v: &str, line: usize) -> Result<u32> {
    let s: u32 = v.trim().parse().map_err(|_| Error::Syntax {
        line,
        msg: format!("bad shift value '{}'", v.trim()),
    })?;
    if s > MAX_SHIFT {
        return Err(Error::Syntax {
            line,
            msg: format!("shift {s} outside [0, {MAX_SHIFT}]"),
        });
    }
    Ok(s)
}

/// Parses and validates a model document.
pub fn parse_model(text: &str) -> Result<ModelSpec> {
    let mut name = None;
    let mut input = None;
    let mut layers: Vec<Layer> = Vec::new();
    // declared K of explicit `dense KxN` lines, checked after parsing
    let mut declared_k: Vec<(usize, usize, usize)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |msg: String| Error::Syntax { line: line_no, msg };

        if let Some((key, value)) = line.split_once('=') {
            let key = key.trim();
            let value = value.trim();
            // `dense 8 shift=3` also contains '=', so only treat bare keys here
            if !key.contains(char::is_whitespace) {
                match key {
                    "name" => {
                        if value.is_empty() {
                            return Err(syntax("empty name".into()));
                        }
                        name = Some(value.to_string());
                    }
                    "input" => {
                        let (m, k) = parse_dims(value)
                            .ok_or_else(|| syntax(format!("bad input shape '{value}'")))?;
                        if m == 0 || k == 0 {
                            return Err(syntax("input dims must be >= 1".into()));
                        }
                        input = Some((m, k));
                    }
                    "shift" => {
                        let s = parse_shift(value, line_no)?;
                        let last = layers
                            .last_mut()
                            .ok_or_else(|| syntax("shift before any layer".into()))?;
                        *last.shift_mut() = s;
                    }
                    other => return Err(syntax(format!("unknown key '{other}'"))),
                }
                continue;
            }
        }

        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("dense") => {
                let dim = tokens
                    .next()
                    .ok_or_else(|| syntax("dense needs a node count".into()))?;
                let n = if let Some((k, n)) = parse_dims(dim) {
                    declared_k.push((layers.len(), k, line_no));
                    n
                } else {
                    dim.parse::<usize>()
                        .map_err(|_| syntax(format!("bad node count '{dim}'")))?
                };
                if n == 0 {
                    return Err(syntax("node count must be >= 1".into()));
                }
                let mut d = DenseLayer {
                    n,
                    bias: false,
                    relu: false,
                    shift: 0,
                };
                for t in tokens {
                    match t {
                        "bias" => d.bias = true,
                        "relu" => d.relu = true,
                        _ if t.starts_with("shift=") => {
                            d.shift = parse_shift(&t["shift=".len()..], line_no)?
                        }
                        _ => return Err(syntax(format!("unknown dense option '{t}'"))),
                    }
                }
                layers.push(Layer::Dense(d));
            }
            Some("aggregate") => {
                let mut a = AggregationLayer {
                    reduce: ReduceKind::Mean,
                    shift: 0,
                };
                for t in tokens {
                    match t {
                        "sum" => a.reduce = ReduceKind::Sum,
                        "mean" => a.reduce = ReduceKind::Mean,
                        _ if t.starts_with("shift=") => {
                            a.shift = parse_shift(&t["shift=".len()..], line_no)?
                        }
                        _ => return Err(syntax(format!("unknown aggregate option '{t}'"))),
                    }
                }
                if layers.iter().any(|l| matches!(l, Layer::Aggregate(_))) {
                    return Err(syntax("more than one aggregation layer".into()));
                }
                layers.push(Layer::Aggregate(a));
            }
            Some(other) => return Err(syntax(format!("unknown directive '{other}'"))),
            None => unreachable!("empty lines are skipped"),
        }
    }

    let (input_rows, input_cols) = input.ok_or_else(|| Error::Syntax {
        line: 0,
        msg: "missing 'input = MxK'".into(),
    })?;
    let model = ModelSpec {
        name: name.unwrap_or_else(|| "model".into()),
        input_rows,
        input_cols,
        layers,
    };
    let resolved = model.resolve()?;
    for (li, k, line) in declared_k {
        if let ResolvedLayer::Dense(d) = resolved[li] {
            if d.k != k {
                let prev_desc = if li == 0 {
                    format!("input {}x{}", model.input_rows, model.input_cols)
                } else {
                    describe(&model.layers[li - 1], &resolved[li - 1])
                };
                let _ = line;
                return Err(Error::ShapeChain {
                    prev: li.saturating_sub(1),
                    prev_desc,
                    next: li,
                    next_desc: format!("dense {k}x{} declared, expects K={}", d.n, d.k),
                });
            }
        }
    }
    Ok(model)
}

fn describe(layer: &Layer, resolved: &ResolvedLayer) -> String {
    match (layer, resolved) {
        (Layer::Dense(_), ResolvedLayer::Dense(d)) => {
            format!("dense {}x{}x{} -> N={}", d.m, d.k, d.n, d.n)
        }
        (_, ResolvedLayer::Aggregate { m, f }) => format!("aggregate {m}x{f} -> 1x{f}"),
        _ => "?".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const JSC_XL: &str = "name = jsc-xl\ninput = 64x16\ndense 128 bias relu\ndense 64 bias relu\ndense 64 bias relu\ndense 64 bias relu\ndense 5 bias\n";

    #[test]
    fn jsc_xl_shapes() {
        let m = parse_model(JSC_XL).unwrap();
        let dims: Vec<_> = validate_shapes(&m)
            .unwrap()
            .into_iter()
            .map(|d| (d.m, d.k, d.n))
            .collect();
        assert_eq!(
            dims,
            vec![(64, 16, 128), (64, 128, 64), (64, 64, 64), (64, 64, 64), (64, 64, 5)]
        );
    }

    #[test]
    fn minimal_single_layer() {
        let m = parse_model("input = 8x8\ndense 8\n").unwrap();
        assert_eq!(m.layers.len(), 1);
        assert_eq!(validate_shapes(&m).unwrap()[0], LayerDims { m: 8, k: 8, n: 8 });
    }

    #[test]
    fn aggregation_resets_rows() {
        let m = parse_model(
            "input = 32x21\ndense 32 relu\naggregate sum\ndense 32\ndense 10\n",
        )
        .unwrap();
        let r = m.resolve().unwrap();
        assert_eq!(r[1], ResolvedLayer::Aggregate { m: 32, f: 32 });
        assert_eq!(r[2], ResolvedLayer::Dense(LayerDims { m: 1, k: 32, n: 32 }));
    }

    #[test]
    fn aggregate_defaults_to_mean() {
        let m = parse_model("input = 8x8\ndense 8\naggregate\n").unwrap();
        assert_eq!(
            m.layers[1],
            Layer::Aggregate(AggregationLayer {
                reduce: ReduceKind::Mean,
                shift: 0
            })
        );
    }

    #[test]
    fn standalone_shift_line() {
        let m = parse_model("input = 8x8\ndense 8 relu\nshift = 5\n").unwrap();
        assert_eq!(m.layers[0].shift(), 5);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_model("input = 8x8\n"),
            Err(Error::Model(_))
        ));
        assert!(matches!(
            parse_model("input = 8x8\ndense 8\nbogus 3\n"),
            Err(Error::Syntax { line: 3, .. })
        ));
        assert!(matches!(
            parse_model("input = 8x8\ndense 8\naggregate\ndense 4\naggregate\n"),
            Err(Error::Syntax { line: 5, .. })
        ));
        assert!(matches!(
            parse_model("input = 8x8\ndense 8 shift=40\n"),
            Err(Error::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            parse_model("input = 8x8\naggregate\ndense 4\n"),
            Err(Error::Model(_))
        ));
        match parse_model("input = 8x8\ndense 16\ndense 32x4\n") {
            Err(Error::ShapeChain { prev, next, .. }) => assert_eq!((prev, next), (0, 1)),
            other => panic!("expected chain error, got {other:?}"),
        }
    }
}
