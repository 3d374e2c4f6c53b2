//! Dense per-layer oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Layer, ModelSpec, ReduceKind, ResolvedLayer};
use crate::quant::{div_round, epilogue, requantize};

use super::{Matrix, ModelParams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardResult {
    /// INT8 output of every layer.
    pub outputs: Vec<Matrix<i8>>,
    /// Pre-bias INT32 accumulators of dense layers, and raw sums of the aggregation.
    pub accumulators: Vec<Matrix<i32>>,
}

impl ForwardResult {
    pub fn output(&self) -> &Matrix<i8> {
        self.outputs.last().expect("at least one layer")
    }
}

pub fn reference_forward(model: &ModelSpec, input: &Matrix<i8>, params: &ModelParams) -> Result<ForwardResult> {
    let resolved = model.resolve()?;
    if (input.rows, input.cols) != (model.input_rows, model.input_cols) {
        return Err(Error::Simulation(format!(
            "input is {}x{}, model expects {}x{}",
            input.rows, input.cols, model.input_rows, model.input_cols
        )));
    }
    if params.layers.len() != model.layers.len() {
        return Err(Error::Simulation("parameter count does not match the model".into()));
    }
    let mut x = input.clone();
    let mut outputs = Vec::new();
    let mut accumulators = Vec::new();
    for (i, (r, l)) in resolved.iter().zip(&model.layers).enumerate() {
        match (r, l) {
            (ResolvedLayer::Dense(d), Layer::Dense(dl)) => {
                let p = params.layers[i]
                    .as_ref()
                    .ok_or_else(|| Error::Simulation(format!("layer {i}: missing weights")))?;
                if (p.weights.rows, p.weights.cols) != (d.k, d.n) || p.bias.len() != d.n {
                    return Err(Error::Simulation(format!("layer {i}: parameter shape mismatch")));
                }
                let acc = Matrix::from_fn(d.m, d.n, |m, n| {
                    (0..d.k).fold(0i32, |s, k| {
                        s.wrapping_add(x.get(m, k) as i32 * p.weights.get(k, n) as i32)
                    })
                });
                let bias = |n: usize| if dl.bias { p.bias[n] } else { 0 };
                let out = Matrix::from_fn(d.m, d.n, |m, n| epilogue(acc.get(m, n), bias(n), dl.relu, dl.shift));
                accumulators.push(acc);
                x = out;
            }
            (ResolvedLayer::Aggregate { m, f }, Layer::Aggregate(al)) => {
                let sums = Matrix::from_fn(1, *f, |_, c| (0..*m).fold(0i32, |s, r| s.wrapping_add(x.get(r, c) as i32)));
                let out = Matrix::from_fn(1, *f, |_, c| {
                    let s = sums.get(0, c);
                    let v = match al.reduce {
                        ReduceKind::Sum => s,
                        ReduceKind::Mean => div_round(s, *m as i32),
                    };
                    requantize(v, al.shift)
                });
                accumulators.push(sums);
                x = out;
            }
            _ => unreachable!("resolve mirrors layers"),
        }
        outputs.push(x.clone());
    }
    Ok(ForwardResult { outputs, accumulators })
}

/// First differing element between two runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    pub expected: i8,
    pub got: i8,
}

pub fn first_mismatch(expected: &ForwardResult, got: &ForwardResult) -> Option<Mismatch> {
    for (layer, (e, g)) in expected.outputs.iter().zip(&got.outputs).enumerate() {
        if (e.rows, e.cols) != (g.rows, g.cols) {
            return Some(Mismatch {
                layer,
                row: e.rows.min(g.rows),
                col: e.cols.min(g.cols),
                expected: 0,
                got: 0,
            });
        }
        for r in 0..e.rows {
            for c in 0..e.cols {
                if e.get(r, c) != g.get(r, c) {
                    return Some(Mismatch {
                        layer,
                        row: r,
                        col: c,
                        expected: e.get(r, c),
                        got: g.get(r, c),
                    });
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;
    use crate::sim::DenseParams;

    #[test]
    fn zero_input_gives_requantized_bias() {
        let m = parse_model("name=t\ninput=2x3\ndense 2 bias relu shift=1\n").unwrap();
        let p = ModelParams {
            layers: vec![Some(DenseParams {
                weights: Matrix::from_fn(3, 2, |_, _| 5),
                bias: vec![7, -9],
            })],
        };
        let r = reference_forward(&m, &Matrix::zeros(2, 3), &p).unwrap();
        assert_eq!(r.output().data, vec![4, 0, 4, 0]);
    }

    #[test]
    fn identity_layer() {
        let m = parse_model("name=t\ninput=8x8\ndense 8 bias relu shift=0\n").unwrap();
        let w = Matrix::from_fn(8, 8, |r, c| (r == c) as i8);
        let p = ModelParams {
            layers: vec![Some(DenseParams { weights: w, bias: vec![3; 8] })],
        };
        let x = Matrix::from_fn(8, 8, |r, c| (r as i8 - 4) * (c as i8 + 1));
        let r = reference_forward(&m, &x, &p).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(r.output().get(i, j), (x.get(i, j) as i32 + 3).clamp(0, 127) as i8);
            }
        }
    }

    #[test]
    fn aggregation_of_ones() {
        let m = parse_model("name=t\ninput=8x8\ndense 8\naggregate sum\n").unwrap();
        let p = ModelParams {
            layers: vec![
                Some(DenseParams {
                    weights: Matrix::from_fn(8, 8, |r, c| (r == c) as i8),
                    bias: vec![0; 8],
                }),
                None,
            ],
        };
        let r = reference_forward(&m, &Matrix::from_fn(8, 8, |_, _| 1), &p).unwrap();
        assert_eq!(r.output().data, vec![8; 8]);
    }
}
