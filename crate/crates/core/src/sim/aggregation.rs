//! Standalone aggregation runs comparing the MAC and row-extract methods.

use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::calib::aggregation_tile_shape;
use crate::error::{Error, Result};
use crate::model::ReduceKind;
use crate::perf::AggMethod;
use crate::profile::CalibrationProfile;
use crate::quant::{div_round, requantize};

use super::functional::{ones_row_mac, row_extract_sum};
use super::timed::time_aggregation;
use super::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationRun {
    pub method: AggMethod,
    pub tiles: u32,
    pub cycles: f64,
    /// Column sums before reduction scaling.
    pub sums: Vec<i32>,
    pub output: Vec<i8>,
}

/// Reduces `x` (`M x F`) over `tiles` aggregation tiles with `method`.
pub fn simulate_aggregation(
    x: &Matrix<i8>,
    tiles: u32,
    reduce: ReduceKind,
    shift: u32,
    method: AggMethod,
    arch: &ArchSpec,
    p: &CalibrationProfile,
) -> Result<AggregationRun> {
    if tiles == 0 || x.rows == 0 || x.cols == 0 {
        return Err(Error::Simulation("aggregation needs rows, features and tiles".into()));
    }
    let (h1, w2) = aggregation_tile_shape(x.rows, x.cols, tiles, arch);
    if (tiles as usize - 1) * h1 >= x.rows {
        return Err(Error::Simulation(format!("{tiles} tiles leave one with no rows of {}", x.rows)));
    }
    let mut sums = vec![0i32; x.cols];
    for a in (0..tiles as usize).rev() {
        let r0 = a * h1;
        let block = Matrix::from_fn(h1, w2, |r, c| x.get_or_default(r0 + r, c));
        let valid = x.rows.saturating_sub(r0).min(h1);
        let part = match method {
            AggMethod::Mac => ones_row_mac(&block, valid, arch),
            AggMethod::RowExtract => row_extract_sum(&block, valid),
        };
        for (s, v) in sums.iter_mut().zip(part) {
            *s = s.wrapping_add(v);
        }
    }
    let output = sums
        .iter()
        .map(|&s| {
            let v = match reduce {
                ReduceKind::Sum => s,
                ReduceKind::Mean => div_round(s, x.rows as i32),
            };
            requantize(v, shift)
        })
        .collect();
    let cycles = time_aggregation(h1, w2, tiles, reduce, method, arch, p)?;
    Ok(AggregationRun {
        method,
        tiles,
        cycles,
        sums,
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::default_aie_ml;
    use crate::perf::aggregation_latency;
    use crate::profile::default_profile;

    #[test]
    fn methods_agree_and_mac_is_faster() {
        let a = default_aie_ml();
        let p = default_profile();
        let x = Matrix::from_fn(64, 32, |r, c| ((r * 7 + c * 3) % 255) as i8);
        let mac = simulate_aggregation(&x, 4, ReduceKind::Mean, 0, AggMethod::Mac, &a, &p).unwrap();
        let row = simulate_aggregation(&x, 4, ReduceKind::Mean, 0, AggMethod::RowExtract, &a, &p).unwrap();
        assert_eq!(mac.output, row.output);
        assert!(row.cycles > 2.8 * mac.cycles);
        let (h1, w2) = aggregation_tile_shape(64, 32, 4, &a);
        let model = aggregation_latency(h1, w2, 4, ReduceKind::Mean, AggMethod::Mac, &a, &p);
        assert!((mac.cycles - model).abs() < 1e-9);
    }
}
