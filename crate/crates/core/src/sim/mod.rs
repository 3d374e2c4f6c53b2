//! Functional and timed execution of placed designs.

pub mod aggregation;
pub mod functional;
pub mod params;
pub mod reference;
pub mod timed;

use serde::{Deserialize, Serialize};

pub use aggregation::{simulate_aggregation, AggregationRun};
pub use functional::run_functional;
pub use params::{random_input, random_params, DenseParams, ModelParams, ParamOptions};
pub use reference::{first_mismatch, reference_forward, ForwardResult, Mismatch};
pub use timed::{run_timed, run_timed_quiet, LayerInterval, LinkStats, SimTrace, TraceEvent};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    /// Value at `(r, c)`, or the default outside the matrix.
    #[inline]
    pub fn get_or_default(&self, r: usize, c: usize) -> T {
        if r < self.rows && c < self.cols {
            self.get(r, c)
        } else {
            T::default()
        }
    }
}
