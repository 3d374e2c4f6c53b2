//! Seeded random weights, biases and inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Layer, ModelSpec, ResolvedLayer};

use super::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseParams {
    /// `K x N`.
    pub weights: Matrix<i8>,
    /// `N` entries; all zero for layers without bias.
    pub bias: Vec<i32>,
}

/// Parameters per model layer; `None` for the aggregation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<Option<DenseParams>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamOptions {
    /// Inclusive bias range; the full INT32 range when `None`.
    pub bias_range: Option<(i32, i32)>,
}

/// Weights uniform over INT8, biases uniform over `opts.bias_range`.
pub fn random_params(model: &ModelSpec, seed: u64, opts: ParamOptions) -> Result<ModelParams> {
    let resolved = model.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = opts.bias_range.unwrap_or((i32::MIN, i32::MAX));
    let layers = resolved
        .iter()
        .zip(&model.layers)
        .map(|(r, l)| match (r, l) {
            (ResolvedLayer::Dense(d), Layer::Dense(dl)) => {
                let weights = Matrix::from_fn(d.k, d.n, |_, _| rng.gen::<i8>());
                let bias = (0..d.n)
                    .map(|_| if dl.bias { rng.gen_range(lo..=hi) } else { 0 })
                    .collect();
                Some(DenseParams { weights, bias })
            }
            _ => None,
        })
        .collect();
    Ok(ModelParams { layers })
}

/// Input activation uniform over INT8, from a stream independent of the parameters.
pub fn random_input(model: &ModelSpec, seed: u64) -> Matrix<i8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    Matrix::from_fn(model.input_rows, model.input_cols, |_, _| rng.gen::<i8>())
}
